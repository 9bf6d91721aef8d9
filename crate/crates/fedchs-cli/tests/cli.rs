//! End-to-end tests of the `fedchs` binary: config diagnostics, output
//! files, determinism, and the exit-code contract of each subcommand.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const QUAD_CFG: &str = "\
algorithm = fedchs
rounds = 10
local_steps = 5
dataset = regression
dataset_size = 60
input_dim = 2
noise = 0.3
model = quadratic
clients = 6
concentration = 1.0
clusters = 3
out_dir = out
";

const BLOBS_CFG: &str = "\
algorithm = fedchs
rounds = 8
local_steps = 4
dataset = blobs
dataset_size = 80
input_dim = 2
noise = 0.8
model = logistic
clients = 6
concentration = 1.0
clusters = 3
out_dir = out
";

fn fedchs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedchs"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("the fedchs binary runs")
}

fn write_cfg(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).expect("config written");
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read_json(path: &Path) -> Value {
    let text = fs::read_to_string(path).expect("file exists");
    serde_json::from_str(&text).expect("valid JSON")
}

#[test]
fn run_writes_one_trace_row_per_round() {
    let tmp = tempfile::tempdir().expect("tempdir");
    write_cfg(tmp.path(), "exp.cfg", QUAD_CFG);
    let out = fedchs(tmp.path(), &["run", "exp.cfg"]);
    assert!(out.status.success(), "{}", stderr_of(&out));

    let trace = fs::read_to_string(tmp.path().join("out/trace.csv")).expect("trace written");
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines.len(), 11, "header plus one row per round");
    assert!(lines[0].starts_with("t,cluster,loss"));

    let summary = read_json(&tmp.path().join("out/summary.json"));
    assert_eq!(summary["rounds"], 10);
    assert_eq!(summary["algorithm"], "fedchs");
    assert!(summary["final_gap"].is_f64(), "quadratic runs report a gap");
    assert!(
        summary["final_accuracy"].is_null(),
        "regression has no accuracy"
    );
    let ledger = read_json(&tmp.path().join("out/ledger.json"));
    assert!(ledger["events"].as_array().map_or(0, Vec::len) > 0);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().expect("tempdir");
    write_cfg(tmp.path(), "exp.cfg", QUAD_CFG);
    for dir in ["a", "b"] {
        let out = fedchs(tmp.path(), &["run", "exp.cfg", "--out-dir", dir, "--quiet"]);
        assert!(out.status.success(), "{}", stderr_of(&out));
    }
    for name in ["trace.csv", "ledger.json", "summary.json"] {
        let a = fs::read(tmp.path().join("a").join(name)).expect("first run output");
        let b = fs::read(tmp.path().join("b").join(name)).expect("second run output");
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn seed_flag_overrides_the_config() {
    let tmp = tempfile::tempdir().expect("tempdir");
    write_cfg(tmp.path(), "exp.cfg", QUAD_CFG);
    for (dir, seed) in [("s0", "0"), ("s5", "5"), ("s5b", "5")] {
        let out = fedchs(
            tmp.path(),
            &[
                "run",
                "exp.cfg",
                "--out-dir",
                dir,
                "--seed",
                seed,
                "--quiet",
            ],
        );
        assert!(out.status.success(), "{}", stderr_of(&out));
    }
    let s0 = fs::read(tmp.path().join("s0/trace.csv")).expect("seed-0 trace");
    let s5 = fs::read(tmp.path().join("s5/trace.csv")).expect("seed-5 trace");
    let s5b = fs::read(tmp.path().join("s5b/trace.csv")).expect("repeat seed-5 trace");
    assert_ne!(s0, s5, "different seeds give different runs");
    assert_eq!(s5, s5b, "equal seeds give identical runs");
}

#[test]
fn summary_totals_match_trace_and_ledger_recomputation() {
    let tmp = tempfile::tempdir().expect("tempdir");
    write_cfg(tmp.path(), "exp.cfg", QUAD_CFG);
    let out = fedchs(tmp.path(), &["run", "exp.cfg", "--quiet"]);
    assert!(out.status.success(), "{}", stderr_of(&out));

    let summary = read_json(&tmp.path().join("out/summary.json"));
    let ledger = read_json(&tmp.path().join("out/ledger.json"));
    let bits = &summary["bits"];

    // The ledger's own totals agree with the summary.
    for channel in ["client_up", "client_down", "es_es", "es_ps", "grand_total"] {
        assert_eq!(bits[channel], ledger["totals"][channel], "{channel}");
    }

    // Folding the raw event log reproduces the grand total.
    let folded: u64 = ledger["events"]
        .as_array()
        .expect("event array")
        .iter()
        .map(|e| e["bits"].as_u64().expect("bit count"))
        .sum();
    assert_eq!(Value::from(folded), bits["grand_total"]);

    // The last trace row's cumulative columns agree with the summary.
    let trace = fs::read_to_string(tmp.path().join("out/trace.csv")).expect("trace");
    let last: Vec<&str> = trace
        .lines()
        .last()
        .expect("data rows")
        .split(',')
        .collect();
    let cumulative: Vec<u64> = last[5..9]
        .iter()
        .map(|c| c.parse().expect("bit column"))
        .collect();
    for (i, channel) in ["client_up", "client_down", "es_es", "es_ps"]
        .iter()
        .enumerate()
    {
        assert_eq!(Value::from(cumulative[i]), bits[*channel], "{channel}");
    }
}

#[test]
fn unknown_key_is_rejected_naming_key_and_line() {
    let tmp = tempfile::tempdir().expect("tempdir");
    write_cfg(
        tmp.path(),
        "exp.cfg",
        &format!("{QUAD_CFG}learnign_rate = 0.1\n"),
    );
    let out = fedchs(tmp.path(), &["run", "exp.cfg"]);
    assert!(!out.status.success());
    let err = stderr_of(&out);
    assert!(err.contains("unknown key `learnign_rate`"), "{err}");
    assert!(err.contains("line 13"), "{err}");
    assert!(
        !tmp.path().join("out").exists(),
        "a rejected config writes nothing"
    );
}

#[test]
fn duplicate_key_is_rejected() {
    let tmp = tempfile::tempdir().expect("tempdir");
    write_cfg(tmp.path(), "exp.cfg", &format!("{QUAD_CFG}rounds = 11\n"));
    let out = fedchs(tmp.path(), &["run", "exp.cfg"]);
    assert!(!out.status.success());
    assert!(stderr_of(&out).contains("duplicate key `rounds`"));
}

#[test]
fn malformed_value_names_key_and_line() {
    let tmp = tempfile::tempdir().expect("tempdir");
    write_cfg(
        tmp.path(),
        "exp.cfg",
        &QUAD_CFG.replace("rounds = 10", "rounds = ten"),
    );
    let out = fedchs(tmp.path(), &["run", "exp.cfg"]);
    assert!(!out.status.success());
    let err = stderr_of(&out);
    assert!(err.contains("key `rounds`"), "{err}");
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn missing_required_key_is_rejected() {
    let tmp = tempfile::tempdir().expect("tempdir");
    write_cfg(
        tmp.path(),
        "exp.cfg",
        &QUAD_CFG.replace("rounds = 10\n", ""),
    );
    let out = fedchs(tmp.path(), &["run", "exp.cfg"]);
    assert!(!out.status.success());
    assert!(stderr_of(&out).contains("missing required key `rounds`"));
}

#[test]
fn mode_scoped_key_outside_its_mode_is_rejected() {
    let tmp = tempfile::tempdir().expect("tempdir");
    write_cfg(tmp.path(), "exp.cfg", &format!("{QUAD_CFG}ridge = 0.1\n"));
    let out = fedchs(tmp.path(), &["run", "exp.cfg"]);
    assert!(!out.status.success());
    let err = stderr_of(&out);
    assert!(err.contains("key `ridge`"), "{err}");
    assert!(err.contains("model = logistic"), "{err}");
}

#[test]
fn missing_config_file_is_an_error() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let out = fedchs(tmp.path(), &["run", "nope.cfg"]);
    assert!(!out.status.success());
    assert!(stderr_of(&out).contains("nope.cfg"));
}

#[test]
fn verify_bounds_passes_on_a_noiseless_quadratic() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg = QUAD_CFG
        .replace("noise = 0.3", "noise = 0.0")
        .replace("concentration = 1.0", "concentration = 5.0");
    write_cfg(tmp.path(), "exp.cfg", &cfg);
    let out = fedchs(tmp.path(), &["verify-bounds", "exp.cfg"]);
    assert!(out.status.success(), "{}", stderr_of(&out));

    let report = read_json(&tmp.path().join("out/bound_report.json"));
    assert_eq!(report["all_asserted_hold"], true);
    let reports = report["reports"].as_array().expect("report array");
    assert_eq!(reports.len(), 2, "gap and stationarity");
    for r in reports {
        assert_eq!(r["holds"], true);
        assert_eq!(r["asserted"], true);
    }
    assert!(stdout_of(&out).contains("all asserted bounds hold"));
}

#[test]
fn verify_bounds_rejects_the_gap_bound_for_the_mlp() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg = BLOBS_CFG.replace("model = logistic", "model = mlp\nhidden = 4") + "bound = gap\n";
    write_cfg(tmp.path(), "exp.cfg", &cfg);
    let out = fedchs(tmp.path(), &["verify-bounds", "exp.cfg"]);
    assert!(!out.status.success());
    assert!(
        stderr_of(&out).contains("unsupported model"),
        "{}",
        stderr_of(&out)
    );
}

#[test]
fn verify_bounds_mlp_stationarity_is_informational() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg =
        BLOBS_CFG.replace("model = logistic", "model = mlp\nhidden = 4") + "bound = stationarity\n";
    write_cfg(tmp.path(), "exp.cfg", &cfg);
    let out = fedchs(tmp.path(), &["verify-bounds", "exp.cfg", "--quiet"]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let report = read_json(&tmp.path().join("out/bound_report.json"));
    assert_eq!(report["reports"][0]["asserted"], false);
}

#[test]
fn verify_bounds_requires_the_sequential_algorithm() {
    let tmp = tempfile::tempdir().expect("tempdir");
    write_cfg(
        tmp.path(),
        "exp.cfg",
        &QUAD_CFG.replace("algorithm = fedchs", "algorithm = fedavg"),
    );
    let out = fedchs(tmp.path(), &["verify-bounds", "exp.cfg"]);
    assert!(!out.status.success());
    assert!(stderr_of(&out).contains("fedchs"));
}

#[test]
fn compare_with_unreachable_gamma_exits_zero_with_a_table() {
    let tmp = tempfile::tempdir().expect("tempdir");
    write_cfg(tmp.path(), "exp.cfg", BLOBS_CFG);
    let out = fedchs(
        tmp.path(),
        &[
            "compare",
            "exp.cfg",
            "--algos",
            "fedchs,fedavg",
            "--gamma",
            "1.01",
        ],
    );
    assert!(out.status.success(), "{}", stderr_of(&out));

    let csv = fs::read_to_string(tmp.path().join("out/comparison.csv")).expect("comparison");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3, "header plus one row per algorithm");
    assert!(lines[0].starts_with("algorithm,rounds_to_gamma,bits_to_gamma"));
    for line in &lines[1..] {
        assert!(line.contains("not_reached"), "{line}");
    }
    assert!(stdout_of(&out).contains("not_reached"));
}

#[test]
fn compare_with_reachable_gamma_reports_costs() {
    let tmp = tempfile::tempdir().expect("tempdir");
    write_cfg(tmp.path(), "exp.cfg", BLOBS_CFG);
    let out = fedchs(
        tmp.path(),
        &[
            "compare",
            "exp.cfg",
            "--algos",
            "fedchs,fedavg,hfl",
            "--gamma",
            "0.85",
            "--quiet",
        ],
    );
    assert!(out.status.success(), "{}", stderr_of(&out));
    let csv = fs::read_to_string(tmp.path().join("out/comparison.csv")).expect("comparison");
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        let rounds: u64 = cells[1].parse().expect("rounds-to-gamma is numeric");
        let bits: u64 = cells[2].parse().expect("bits-to-gamma is numeric");
        assert!(bits > 0);
        assert!(rounds < 8);
        let accuracy: f64 = cells[10].parse().expect("accuracy column");
        assert!((0.0..=1.0).contains(&accuracy));
    }
}

#[test]
fn compare_runs_are_deterministic() {
    let tmp = tempfile::tempdir().expect("tempdir");
    write_cfg(tmp.path(), "exp.cfg", BLOBS_CFG);
    for dir in ["a", "b"] {
        let out = fedchs(
            tmp.path(),
            &[
                "compare",
                "exp.cfg",
                "--algos",
                "fedchs,hfl",
                "--out-dir",
                dir,
                "--quiet",
            ],
        );
        assert!(out.status.success(), "{}", stderr_of(&out));
    }
    let a = fs::read(tmp.path().join("a/comparison.csv")).expect("first comparison");
    let b = fs::read(tmp.path().join("b/comparison.csv")).expect("second comparison");
    assert_eq!(a, b);
}

#[test]
fn compare_requires_two_distinct_algorithms() {
    let tmp = tempfile::tempdir().expect("tempdir");
    write_cfg(tmp.path(), "exp.cfg", BLOBS_CFG);
    for algos in ["fedchs", "fedchs,fedchs"] {
        let out = fedchs(tmp.path(), &["compare", "exp.cfg", "--algos", algos]);
        assert!(!out.status.success());
        assert!(stderr_of(&out).contains("at least two distinct"));
    }
}

#[test]
fn compare_rejects_unknown_algorithm_names() {
    let tmp = tempfile::tempdir().expect("tempdir");
    write_cfg(tmp.path(), "exp.cfg", BLOBS_CFG);
    let out = fedchs(
        tmp.path(),
        &["compare", "exp.cfg", "--algos", "fedchs,bogus"],
    );
    assert!(!out.status.success());
    assert!(stderr_of(&out).contains("unknown algorithm `bogus`"));
}

#[test]
fn compare_rejects_gamma_for_regression_models() {
    let tmp = tempfile::tempdir().expect("tempdir");
    write_cfg(tmp.path(), "exp.cfg", QUAD_CFG);
    let out = fedchs(
        tmp.path(),
        &[
            "compare",
            "exp.cfg",
            "--algos",
            "fedchs,fedavg",
            "--gamma",
            "0.9",
        ],
    );
    assert!(!out.status.success());
    assert!(stderr_of(&out).contains("--gamma"), "{}", stderr_of(&out));
}

#[test]
fn partition_stats_report_shards_and_clusters() {
    let tmp = tempfile::tempdir().expect("tempdir");
    write_cfg(tmp.path(), "exp.cfg", BLOBS_CFG);
    let out = fedchs(tmp.path(), &["partition-stats", "exp.cfg", "--quiet"]);
    assert!(out.status.success(), "{}", stderr_of(&out));

    let stats = read_json(&tmp.path().join("out/partition_stats.json"));
    assert_eq!(stats["clients"], 6);
    assert_eq!(stats["total_size"], 80);
    let sizes: u64 = stats["shard_sizes"]
        .as_array()
        .expect("shard sizes")
        .iter()
        .map(|v| v.as_u64().expect("size"))
        .sum();
    assert_eq!(sizes, 80, "shards partition the dataset");
    let masses: u64 = stats["cluster_sample_masses"]
        .as_array()
        .expect("masses")
        .iter()
        .map(|v| v.as_u64().expect("mass"))
        .sum();
    assert_eq!(masses, 80, "clusters partition the samples");
    let tv = stats["mean_label_tv_distance"]
        .as_f64()
        .expect("labeled data");
    assert!((0.0..=1.0).contains(&tv));
}

#[test]
fn quiet_suppresses_stdout_but_still_writes() {
    let tmp = tempfile::tempdir().expect("tempdir");
    write_cfg(tmp.path(), "exp.cfg", QUAD_CFG);
    let out = fedchs(tmp.path(), &["run", "exp.cfg", "--quiet"]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(stdout_of(&out).is_empty());
    assert!(tmp.path().join("out/summary.json").exists());
}

#[test]
fn out_dir_flag_redirects_every_output() {
    let tmp = tempfile::tempdir().expect("tempdir");
    write_cfg(tmp.path(), "exp.cfg", QUAD_CFG);
    let out = fedchs(
        tmp.path(),
        &["run", "exp.cfg", "--out-dir", "elsewhere", "--quiet"],
    );
    assert!(out.status.success(), "{}", stderr_of(&out));
    for name in ["trace.csv", "ledger.json", "summary.json"] {
        assert!(tmp.path().join("elsewhere").join(name).exists(), "{name}");
    }
    assert!(
        !tmp.path().join("out").exists(),
        "the config out_dir is fully overridden"
    );
}

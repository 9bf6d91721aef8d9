//! The four subcommands: `run`, `verify-bounds`, `compare`, and
//! `partition-stats`. Each writes its artifacts under the configured
//! output directory using fixed file names.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use fedchs_core::{
    bits_to_threshold, check_trace_against_bound, classification_accuracy, cumulative_bits,
    fit_linear_rate, global_loss_and_grad, mean_label_tv_distance, trace_to_csv, Algorithm,
    BitsToThreshold, BoundKind, BoundReport, ChannelTotals, DatasetKind, LossModel, RateFit,
    RunOutput, TransferEvent,
};

use crate::config::{algorithm_name, parse_algorithm, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::experiment::{DataBundle, Experiment};

/// Output directory handle: creates the directory once and joins the fixed
/// artifact names, so every output path stays inside it by construction.
struct OutDir {
    dir: PathBuf,
    quiet: bool,
}

impl OutDir {
    fn create(dir: &Path, quiet: bool) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|source| CliError::File {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            quiet,
        })
    }

    fn write(&self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|source| CliError::File {
            path: path.clone(),
            source,
        })?;
        if !self.quiet {
            println!("wrote {}", path.display());
        }
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::invalid(format!("serializing {name}: {e}")))?;
        text.push('\n');
        self.write(name, &text)
    }
}

/// Channel totals in the JSON shape shared by the summary and the ledger.
#[derive(Serialize)]
struct BitsSummary {
    client_up: u64,
    client_down: u64,
    es_es: u64,
    es_ps: u64,
    grand_total: u64,
}

impl From<ChannelTotals> for BitsSummary {
    fn from(t: ChannelTotals) -> Self {
        BitsSummary {
            client_up: t.client_up,
            client_down: t.client_down,
            es_es: t.es_es,
            es_ps: t.es_ps,
            grand_total: t.total(),
        }
    }
}

#[derive(Serialize)]
struct LedgerJson<'a> {
    totals: BitsSummary,
    events: &'a [TransferEvent],
}

#[derive(Serialize)]
struct RunSummary<'a> {
    algorithm: &'a str,
    rounds: u64,
    local_steps: usize,
    seed: u64,
    smoothness: f64,
    final_loss: f64,
    final_grad_sq_norm: f64,
    final_gap: Option<f64>,
    final_accuracy: Option<f64>,
    fitted_rate: Option<RateFit>,
    bits: BitsSummary,
}

/// Cross-checks the run's own books: the cumulative bit columns of the last
/// trace row and the fold of the event log must both equal the ledger
/// totals the summary is built from.
fn audit_run(run: &RunOutput) -> CliResult<()> {
    let totals = run.ledger.totals();
    let last = run
        .trace
        .last()
        .expect("validated configs run at least one round");
    let trace_totals = (
        last.bits_client_up,
        last.bits_client_down,
        last.bits_es_es,
        last.bits_es_ps,
    );
    if trace_totals
        != (
            totals.client_up,
            totals.client_down,
            totals.es_es,
            totals.es_ps,
        )
    {
        return Err(CliError::invalid(
            "internal: cumulative trace bits disagree with the ledger totals",
        ));
    }
    let folded: u64 = run.ledger.events().iter().map(|e| e.bits).sum();
    if folded != totals.total() {
        return Err(CliError::invalid(
            "internal: the event log does not fold to the ledger totals",
        ));
    }
    Ok(())
}

/// Final-model metrics shared by `run` and `compare`.
struct FinalMetrics {
    loss: f64,
    grad_sq_norm: f64,
    gap: Option<f64>,
    accuracy: Option<f64>,
}

fn final_metrics(
    cfg: &ExperimentConfig,
    exp: &Experiment,
    run: &RunOutput,
) -> CliResult<FinalMetrics> {
    let weights = exp.partition.global_weights();
    let (loss, grad) = global_loss_and_grad(
        &cfg.model,
        &run.final_model,
        exp.partition.shards(),
        &weights,
    )?;
    let gap = exp.optimum_loss(cfg)?.map(|f_star| loss - f_star);
    let accuracy = if cfg.is_classification() {
        Some(classification_accuracy(
            &cfg.model,
            &run.final_model,
            exp.partition.shards(),
        )?)
    } else {
        None
    };
    Ok(FinalMetrics {
        loss,
        grad_sq_norm: grad.norm_sq(),
        gap,
        accuracy,
    })
}

/// Geometric-decay fit over the recorded gap column: the positive prefix of
/// the series, when it is long enough for the five-point fit.
fn fitted_rate(run: &RunOutput) -> CliResult<Option<RateFit>> {
    let gaps: Vec<f64> = run
        .trace
        .iter()
        .filter_map(|row| row.gap)
        .take_while(|g| *g > 0.0)
        .collect();
    if gaps.len() < 5 {
        return Ok(None);
    }
    Ok(Some(fit_linear_rate(&gaps)?))
}

/// `run`: train once, then write `trace.csv`, `ledger.json`, and
/// `summary.json`.
pub fn cmd_run(cfg: &ExperimentConfig, quiet: bool) -> CliResult<()> {
    let exp = Experiment::build(cfg)?;
    let run = exp.execute(cfg, cfg.algorithm)?;
    audit_run(&run)?;

    let metrics = final_metrics(cfg, &exp, &run)?;
    let summary = RunSummary {
        algorithm: algorithm_name(cfg.algorithm),
        rounds: cfg.rounds,
        local_steps: exp.schedule.local_steps(),
        seed: cfg.seed,
        smoothness: exp.smoothness,
        final_loss: metrics.loss,
        final_grad_sq_norm: metrics.grad_sq_norm,
        final_gap: metrics.gap,
        final_accuracy: metrics.accuracy,
        fitted_rate: fitted_rate(&run)?,
        bits: run.ledger.totals().into(),
    };

    let out = OutDir::create(&cfg.out_dir, quiet)?;
    out.write("trace.csv", &trace_to_csv(&run.trace))?;
    out.write_json(
        "ledger.json",
        &LedgerJson {
            totals: run.ledger.totals().into(),
            events: run.ledger.events(),
        },
    )?;
    out.write_json("summary.json", &summary)?;

    if !quiet {
        println!(
            "run {}: rounds={} local_steps={} seed={}",
            summary.algorithm, summary.rounds, summary.local_steps, summary.seed
        );
        let gap = match summary.final_gap {
            Some(g) => format!("{g:.6e}"),
            None => "n/a".to_string(),
        };
        let accuracy = match summary.final_accuracy {
            Some(a) => format!("{a:.4}"),
            None => "n/a".to_string(),
        };
        println!(
            "final loss {:.6e} | grad² {:.3e} | gap {gap} | accuracy {accuracy}",
            summary.final_loss, summary.final_grad_sq_norm
        );
        let b = &summary.bits;
        println!(
            "bits client_up={} client_down={} es_es={} es_ps={} total={}",
            b.client_up, b.client_down, b.es_es, b.es_ps, b.grand_total
        );
    }
    Ok(())
}

fn bound_name(kind: BoundKind) -> &'static str {
    match kind {
        BoundKind::StronglyConvexGap => "strongly-convex-gap",
        BoundKind::Stationarity => "stationarity",
    }
}

#[derive(Serialize)]
struct BoundReportJson {
    all_asserted_hold: bool,
    reports: Vec<BoundReport>,
}

/// `verify-bounds`: run the sequential algorithm, evaluate the configured
/// bounds against its trace, and write `bound_report.json`. Returns whether
/// every asserted bound holds.
pub fn cmd_verify_bounds(cfg: &ExperimentConfig, quiet: bool) -> CliResult<bool> {
    if cfg.algorithm != Algorithm::FedChs {
        return Err(CliError::usage(format!(
            "verify-bounds audits the sequential algorithm; set algorithm = fedchs \
             (config has algorithm = {})",
            algorithm_name(cfg.algorithm)
        )));
    }
    let kinds = cfg.bound.kinds();
    if matches!(cfg.model, LossModel::Mlp { .. }) && kinds.contains(&BoundKind::StronglyConvexGap) {
        return Err(fedchs_core::Error::UnsupportedModel(
            "the strongly convex gap bound needs a strongly convex loss; \
             set bound = stationarity for the mlp model"
                .to_string(),
        )
        .into());
    }

    let mut exp = Experiment::build(cfg)?;
    let run = exp.execute(cfg, Algorithm::FedChs)?;
    let schedule = exp.schedule.clone();
    let estimates = exp.constants(cfg)?.clone();

    let mut reports = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let report = check_trace_against_bound(
            kind,
            &cfg.model,
            &exp.partition,
            &exp.clustering,
            &run,
            &estimates,
            &schedule,
        )?;
        if !quiet {
            let min_margin = report
                .rows
                .iter()
                .map(|r| r.margin)
                .fold(f64::INFINITY, f64::min);
            println!(
                "bound {}: {} over {} rounds ({}, min margin {:.3e})",
                bound_name(kind),
                if report.holds { "HOLDS" } else { "VIOLATED" },
                report.rows.len(),
                if report.asserted {
                    "asserted"
                } else {
                    "informational"
                },
                min_margin
            );
        }
        reports.push(report);
    }

    let all_asserted_hold = reports.iter().all(|r| !r.asserted || r.holds);
    let out = OutDir::create(&cfg.out_dir, quiet)?;
    out.write_json(
        "bound_report.json",
        &BoundReportJson {
            all_asserted_hold,
            reports,
        },
    )?;
    if !quiet {
        if all_asserted_hold {
            println!("verify-bounds: all asserted bounds hold");
        } else {
            println!("verify-bounds: an asserted bound is violated");
        }
    }
    Ok(all_asserted_hold)
}

/// Cost of reaching the accuracy threshold, when one was requested.
enum GammaCost {
    NotRequested,
    NotReached,
    Reached { round: u64, bits: u64 },
}

impl GammaCost {
    fn cells(&self) -> (String, String) {
        match self {
            GammaCost::NotRequested => (String::new(), String::new()),
            GammaCost::NotReached => ("not_reached".to_string(), "not_reached".to_string()),
            GammaCost::Reached { round, bits } => (round.to_string(), bits.to_string()),
        }
    }
}

struct CompareRow {
    algorithm: &'static str,
    gamma: GammaCost,
    totals: ChannelTotals,
    final_loss: f64,
    final_gap: Option<f64>,
    final_accuracy: Option<f64>,
}

const COMPARE_HEADER: [&str; 11] = [
    "algorithm",
    "rounds_to_gamma",
    "bits_to_gamma",
    "bits_client_up",
    "bits_client_down",
    "bits_es_es",
    "bits_es_ps",
    "bits_total",
    "final_loss",
    "final_gap",
    "final_accuracy",
];

fn compare_cells(row: &CompareRow) -> Vec<String> {
    let (rounds_cell, bits_cell) = row.gamma.cells();
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    vec![
        row.algorithm.to_string(),
        rounds_cell,
        bits_cell,
        row.totals.client_up.to_string(),
        row.totals.client_down.to_string(),
        row.totals.es_es.to_string(),
        row.totals.es_ps.to_string(),
        row.totals.total().to_string(),
        format!("{}", row.final_loss),
        opt(row.final_gap),
        opt(row.final_accuracy),
    ]
}

fn print_table(header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{:<width$}", c, width = widths[i]))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    println!("{}", line(header.to_vec()));
    for row in rows {
        println!("{}", line(row.iter().map(String::as_str).collect()));
    }
}

/// `compare`: run every requested algorithm on identical data with the same
/// seed and write `comparison.csv`.
pub fn cmd_compare(
    cfg: &ExperimentConfig,
    algo_names: &[String],
    gamma: Option<f64>,
    quiet: bool,
) -> CliResult<()> {
    let mut algorithms = Vec::new();
    for name in algo_names {
        let algorithm = parse_algorithm(name).ok_or_else(|| {
            CliError::usage(format!(
                "--algos: unknown algorithm `{name}` (expected fedchs|fedavg|hfl|sfl)"
            ))
        })?;
        if !algorithms.contains(&algorithm) {
            algorithms.push(algorithm);
        }
    }
    if algorithms.len() < 2 {
        return Err(CliError::usage(
            "compare needs at least two distinct algorithms, e.g. --algos fedchs,fedavg",
        ));
    }
    if let Some(g) = gamma {
        if !g.is_finite() {
            return Err(CliError::usage("--gamma must be finite"));
        }
        if !cfg.is_classification() {
            return Err(CliError::usage(
                "--gamma thresholds training-set classification accuracy; the configured \
                 model reports a loss gap instead — drop --gamma or switch to a \
                 classification model",
            ));
        }
    }

    let exp = Experiment::build(cfg)?;
    let mut rows = Vec::with_capacity(algorithms.len());
    for &algorithm in &algorithms {
        let run = exp.execute(cfg, algorithm)?;
        audit_run(&run)?;
        let metrics = final_metrics(cfg, &exp, &run)?;
        let gamma_cost = match gamma {
            None => GammaCost::NotRequested,
            Some(g) => {
                let accuracy = exp.accuracy_series(cfg, &run)?;
                match bits_to_threshold(&cumulative_bits(&run.trace), &accuracy, g)? {
                    BitsToThreshold::Reached { round, bits } => GammaCost::Reached { round, bits },
                    BitsToThreshold::NotReached => GammaCost::NotReached,
                }
            }
        };
        rows.push(CompareRow {
            algorithm: algorithm_name(algorithm),
            gamma: gamma_cost,
            totals: run.ledger.totals(),
            final_loss: metrics.loss,
            final_gap: metrics.gap,
            final_accuracy: metrics.accuracy,
        });
    }

    let cells: Vec<Vec<String>> = rows.iter().map(compare_cells).collect();
    let mut csv = COMPARE_HEADER.join(",");
    csv.push('\n');
    for row in &cells {
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let out = OutDir::create(&cfg.out_dir, quiet)?;
    out.write("comparison.csv", &csv)?;
    if !quiet {
        print_table(&COMPARE_HEADER, &cells);
    }
    Ok(())
}

#[derive(Serialize)]
struct PartitionStats {
    clients: usize,
    total_size: usize,
    shard_sizes: Vec<usize>,
    min_shard: usize,
    max_shard: usize,
    /// Mean total-variation distance between client label distributions and
    /// the pooled one; absent for real-valued (regression) targets.
    mean_label_tv_distance: Option<f64>,
    cluster_count: usize,
    cluster_client_counts: Vec<usize>,
    cluster_sample_masses: Vec<usize>,
    max_cluster_size: usize,
}

/// `partition-stats`: materialize the dataset, partition, and clustering,
/// then write `partition_stats.json`.
pub fn cmd_partition_stats(cfg: &ExperimentConfig, quiet: bool) -> CliResult<()> {
    let bundle = DataBundle::build(cfg)?;
    let sizes = bundle.partition.sizes();
    let tv = match cfg.dataset.kind {
        DatasetKind::GaussianBlobsBinary => Some(mean_label_tv_distance(&bundle.partition)?),
        DatasetKind::LinearRegression => None,
    };
    let stats = PartitionStats {
        clients: bundle.partition.client_count(),
        total_size: bundle.partition.total_size(),
        min_shard: sizes.iter().copied().min().unwrap_or(0),
        max_shard: sizes.iter().copied().max().unwrap_or(0),
        shard_sizes: sizes,
        mean_label_tv_distance: tv,
        cluster_count: bundle.clustering.cluster_count(),
        cluster_client_counts: bundle
            .clustering
            .clusters()
            .iter()
            .map(|c| c.client_count())
            .collect(),
        cluster_sample_masses: bundle.clustering.masses(),
        max_cluster_size: bundle.clustering.max_cluster_size(),
    };

    let out = OutDir::create(&cfg.out_dir, quiet)?;
    out.write_json("partition_stats.json", &stats)?;
    if !quiet {
        println!(
            "partition: {} clients, {} samples, shard sizes {}..{}",
            stats.clients, stats.total_size, stats.min_shard, stats.max_shard
        );
        if let Some(tv) = stats.mean_label_tv_distance {
            println!("mean label TV distance: {tv:.4}");
        }
        println!(
            "clusters: {} with client counts {:?} and sample masses {:?}",
            stats.cluster_count, stats.cluster_client_counts, stats.cluster_sample_masses
        );
    }
    Ok(())
}

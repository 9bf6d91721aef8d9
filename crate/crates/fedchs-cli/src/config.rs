//! Experiment configuration: a fail-closed `key = value` text format.
//!
//! A config file is UTF-8 text, one `key = value` pair per line. Blank
//! lines are skipped and `#` starts a comment (full-line or trailing).
//! Parsing is fail-closed: unknown keys, duplicate keys, malformed lines,
//! and keys that do not apply to the selected mode are all hard errors
//! carrying 1-based line numbers, so a typo can never silently fall back
//! to a default.
//!
//! Key reference (`*` = required):
//!
//! | key | values | default |
//! |-----|--------|---------|
//! | `algorithm`* | `fedchs` \| `fedavg` \| `hfl` \| `sfl` | — |
//! | `rounds`* | integer ≥ 1 | — |
//! | `local_steps` | integer ≥ 1; required for `schedule = sqrt`/`power`, forbidden otherwise (derived) | — |
//! | `batch_size` | `full` or integer ≥ 1 | `full` |
//! | `bits_per_vector` | integer ≥ 1 | `64` |
//! | `quantizer_levels` | integer ≥ 1 (`hfl` uploads) | unset |
//! | `seed` | integer | `0` |
//! | `dataset`* | `regression` \| `blobs` | — |
//! | `dataset_size`* | integer ≥ 1 | — |
//! | `input_dim`* | integer ≥ 1 | — |
//! | `noise` | float ≥ 0 | `1.0` |
//! | `class_count` | integer (blobs only) | `2` |
//! | `model`* | `quadratic` \| `logistic` \| `mlp` | — |
//! | `ridge` | float ≥ 0 (logistic only) | `0.0` |
//! | `hidden` | integer ≥ 1 (mlp only) | `8` |
//! | `clients`* | integer ≥ 1 | — |
//! | `concentration` | float > 0 (Dirichlet) | `0.6` |
//! | `clusters`* | integer ≥ 1 | — |
//! | `cluster_policy` | `contiguous` \| `round-robin` \| `iid` | `iid` |
//! | `graph` | `ring` \| `random` | `ring` |
//! | `graph_max_degree` | integer ≥ 2 (random graph only) | `3` |
//! | `schedule` | `sqrt` \| `power` \| `constant` \| `explicit` | `sqrt` |
//! | `power_exponent` | float ≥ 2 (power only) | `2.0` |
//! | `q1`, `q2` | floats (constant only) | `0.5`, `0.75` |
//! | `rates` | comma-separated floats (explicit only, required then) | — |
//! | `smoothness` | `auto` or float > 0 | `auto` |
//! | `probe_count` | integer ≥ 10 | `32` |
//! | `probe_draws` | integer ≥ 1 | `4` |
//! | `bound` | `gap` \| `stationarity` \| `both` | `both` |
//! | `out_dir` | path (outputs use fixed names inside it) | `out` |
//!
//! Classification models (`logistic`, `mlp`) require `dataset = blobs`;
//! the quadratic model requires `dataset = regression`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use fedchs_core::{Algorithm, BoundKind, ClusterPolicy, DatasetKind, DatasetSpec, LossModel};

use crate::error::{CliError, CliResult};

/// Spelled-out names accepted for `algorithm` and `--algos`.
pub const ALGORITHM_NAMES: &[(&str, Algorithm)] = &[
    ("fedchs", Algorithm::FedChs),
    ("fedavg", Algorithm::FedAvg),
    ("hfl", Algorithm::Hfl),
    ("sfl", Algorithm::SflRandomWalk),
];

/// Parses an algorithm name as it appears in configs and `--algos`.
pub fn parse_algorithm(name: &str) -> Option<Algorithm> {
    ALGORITHM_NAMES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, a)| *a)
}

/// The config-file spelling of an algorithm, also used in output tables.
pub fn algorithm_name(algorithm: Algorithm) -> &'static str {
    ALGORITHM_NAMES
        .iter()
        .find(|(_, a)| *a == algorithm)
        .map(|(n, _)| *n)
        .expect("every algorithm has a name")
}

/// Edge-server topology requested by the config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphSpec {
    Ring,
    Random { max_degree: usize },
}

/// Learning-rate schedule requested by the config. `Constant` derives its
/// step count from the horizon and `Explicit` from the rate list, so only
/// the first two carry `local_steps`.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleSpec {
    Sqrt { local_steps: usize },
    Power { local_steps: usize, exponent: f64 },
    Constant { q1: f64, q2: f64 },
    Explicit { rates: Vec<f64> },
}

/// Which convergence bounds `verify-bounds` evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundChoice {
    Gap,
    Stationarity,
    Both,
}

impl BoundChoice {
    pub fn kinds(self) -> &'static [BoundKind] {
        match self {
            BoundChoice::Gap => &[BoundKind::StronglyConvexGap],
            BoundChoice::Stationarity => &[BoundKind::Stationarity],
            BoundChoice::Both => &[BoundKind::StronglyConvexGap, BoundKind::Stationarity],
        }
    }
}

/// A fully validated experiment description, ready to materialize.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub rounds: u64,
    pub batch_size: Option<usize>,
    pub bits_per_vector: u64,
    pub quantizer_levels: Option<u32>,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub model: LossModel,
    pub clients: usize,
    pub concentration: f64,
    pub clusters: usize,
    pub cluster_policy: ClusterPolicy,
    pub graph: GraphSpec,
    pub schedule: ScheduleSpec,
    /// `None` means "estimate the smoothness from probes".
    pub smoothness: Option<f64>,
    pub probe_count: usize,
    pub probe_draws: usize,
    pub bound: BoundChoice,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// True when the model classifies (so accuracy and Γ thresholds apply).
    pub fn is_classification(&self) -> bool {
        matches!(
            self.model,
            LossModel::Logistic { .. } | LossModel::Mlp { .. }
        )
    }

    /// Parses and validates a config document.
    pub fn from_text(text: &str) -> CliResult<Self> {
        let mut kv = KeyValues::parse(text)?;

        // Run shape.
        let algorithm = kv.require("algorithm")?.one_of(ALGORITHM_NAMES)?;
        let rounds: u64 = kv.require("rounds")?.parse("an unsigned integer")?;
        let batch_size = match kv.take("batch_size") {
            None => None,
            Some(e) if e.value == "full" => None,
            Some(e) => Some(e.parse::<usize>("`full` or a positive integer")?),
        };
        let bits_per_vector = kv.parse_or("bits_per_vector", "an unsigned integer", 64)?;
        let quantizer_levels = kv
            .take("quantizer_levels")
            .map(|e| e.parse::<u32>("an unsigned integer"))
            .transpose()?;
        let seed = kv.parse_or("seed", "an unsigned integer", 0)?;

        // Dataset.
        let dataset_entry = kv.require("dataset")?;
        let dataset_kind = dataset_entry.one_of(&[
            ("regression", DatasetKind::LinearRegression),
            ("blobs", DatasetKind::GaussianBlobsBinary),
        ])?;
        let total_size = kv.require("dataset_size")?.parse("a positive integer")?;
        let input_dim = kv.require("input_dim")?.parse("a positive integer")?;
        let noise = kv.parse_or("noise", "a nonnegative float", 1.0)?;
        let class_count_entry = kv.take("class_count");
        let class_count = match (&dataset_kind, &class_count_entry) {
            (DatasetKind::LinearRegression, Some(e)) => {
                return Err(e.forbid("applies only to dataset = blobs"));
            }
            (_, Some(e)) => e.parse("a positive integer")?,
            (_, None) => 2,
        };
        let dataset = DatasetSpec {
            kind: dataset_kind,
            total_size,
            input_dim,
            noise,
            class_count,
        };

        // Model, with mode-scoped hyperparameters.
        let model_entry = kv.require("model")?;
        let ridge_entry = kv.take("ridge");
        let hidden_entry = kv.take("hidden");
        let model = match model_entry.value.as_str() {
            "quadratic" => {
                if let Some(e) = ridge_entry {
                    return Err(e.forbid("applies only to model = logistic"));
                }
                if let Some(e) = hidden_entry {
                    return Err(e.forbid("applies only to model = mlp"));
                }
                LossModel::Quadratic { dim: input_dim }
            }
            "logistic" => {
                if let Some(e) = hidden_entry {
                    return Err(e.forbid("applies only to model = mlp"));
                }
                let ridge = ridge_entry
                    .map(|e| e.parse("a nonnegative float"))
                    .transpose()?
                    .unwrap_or(0.0);
                LossModel::Logistic {
                    dim: input_dim,
                    ridge,
                }
            }
            "mlp" => {
                if let Some(e) = ridge_entry {
                    return Err(e.forbid("applies only to model = logistic"));
                }
                let hidden = hidden_entry
                    .map(|e| e.parse("a positive integer"))
                    .transpose()?
                    .unwrap_or(8);
                LossModel::Mlp { input_dim, hidden }
            }
            other => {
                return Err(CliError::config(
                    model_entry.line,
                    format!("key `model`: expected one of quadratic|logistic|mlp, got `{other}`"),
                ));
            }
        };
        let classification = matches!(model, LossModel::Logistic { .. } | LossModel::Mlp { .. });
        if classification && dataset_kind != DatasetKind::GaussianBlobsBinary {
            return Err(CliError::config(
                model_entry.line,
                format!(
                    "model = {} needs labeled data: set dataset = blobs",
                    model_entry.value
                ),
            ));
        }
        if !classification && dataset_kind != DatasetKind::LinearRegression {
            return Err(CliError::config(
                model_entry.line,
                "model = quadratic fits real-valued targets: set dataset = regression",
            ));
        }

        // Partition and clusters.
        let clients = kv.require("clients")?.parse("a positive integer")?;
        let concentration = kv.parse_or("concentration", "a positive float", 0.6)?;
        let clusters = kv.require("clusters")?.parse("a positive integer")?;
        let cluster_policy = match kv.take("cluster_policy") {
            None => ClusterPolicy::IidClusters,
            Some(e) => e.one_of(&[
                ("contiguous", ClusterPolicy::Contiguous),
                ("round-robin", ClusterPolicy::RoundRobin),
                ("iid", ClusterPolicy::IidClusters),
            ])?,
        };

        // Topology.
        let graph_kind = match kv.take("graph") {
            None => "ring".to_string(),
            Some(e) => {
                e.one_of(&[("ring", ()), ("random", ())])?;
                e.value
            }
        };
        let degree_entry = kv.take("graph_max_degree");
        let graph = match graph_kind.as_str() {
            "ring" => {
                if let Some(e) = degree_entry {
                    return Err(e.forbid("applies only to graph = random"));
                }
                GraphSpec::Ring
            }
            _ => GraphSpec::Random {
                max_degree: degree_entry
                    .map(|e| e.parse("an integer ≥ 2"))
                    .transpose()?
                    .unwrap_or(3),
            },
        };

        // Schedule, with mode-scoped keys.
        let schedule_kind = match kv.take("schedule") {
            None => "sqrt".to_string(),
            Some(e) => {
                e.one_of(&[
                    ("sqrt", ()),
                    ("power", ()),
                    ("constant", ()),
                    ("explicit", ()),
                ])?;
                e.value
            }
        };
        let local_steps_entry = kv.take("local_steps");
        let exponent_entry = kv.take("power_exponent");
        let q1_entry = kv.take("q1");
        let q2_entry = kv.take("q2");
        let rates_entry = kv.take("rates");
        let require_local_steps = |entry: &Option<Entry>| -> CliResult<usize> {
            entry
                .as_ref()
                .ok_or_else(|| {
                    CliError::invalid(format!(
                        "missing required key `local_steps` (schedule = {schedule_kind})"
                    ))
                })?
                .parse("a positive integer")
        };
        let forbid_all = |entries: Vec<Option<Entry>>, why: &str| -> CliResult<()> {
            match entries.into_iter().flatten().next() {
                Some(entry) => Err(entry.forbid(why)),
                None => Ok(()),
            }
        };
        let schedule = match schedule_kind.as_str() {
            "sqrt" => {
                forbid_all(
                    vec![exponent_entry, q1_entry, q2_entry, rates_entry],
                    "does not apply to schedule = sqrt",
                )?;
                ScheduleSpec::Sqrt {
                    local_steps: require_local_steps(&local_steps_entry)?,
                }
            }
            "power" => {
                forbid_all(
                    vec![q1_entry, q2_entry, rates_entry],
                    "does not apply to schedule = power",
                )?;
                ScheduleSpec::Power {
                    local_steps: require_local_steps(&local_steps_entry)?,
                    exponent: exponent_entry
                        .map(|e| e.parse("a float ≥ 2"))
                        .transpose()?
                        .unwrap_or(2.0),
                }
            }
            "constant" => {
                forbid_all(
                    vec![exponent_entry, rates_entry],
                    "does not apply to schedule = constant",
                )?;
                if let Some(e) = local_steps_entry {
                    return Err(
                        e.forbid("is derived as ⌈rounds^q1⌉ when schedule = constant; drop it")
                    );
                }
                ScheduleSpec::Constant {
                    q1: q1_entry
                        .map(|e| e.parse("a float in (0, 1)"))
                        .transpose()?
                        .unwrap_or(0.5),
                    q2: q2_entry
                        .map(|e| e.parse("a float"))
                        .transpose()?
                        .unwrap_or(0.75),
                }
            }
            _ => {
                forbid_all(
                    vec![exponent_entry, q1_entry, q2_entry],
                    "does not apply to schedule = explicit",
                )?;
                if let Some(e) = local_steps_entry {
                    return Err(
                        e.forbid("is the rate-list length when schedule = explicit; drop it")
                    );
                }
                let entry = rates_entry.ok_or_else(|| {
                    CliError::invalid("missing required key `rates` (schedule = explicit)")
                })?;
                let rates = entry
                    .value
                    .split(',')
                    .map(|s| s.trim())
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<f64>().map_err(|_| {
                            CliError::config(
                                entry.line,
                                format!("key `rates`: expected comma-separated floats, got `{s}`"),
                            )
                        })
                    })
                    .collect::<CliResult<Vec<f64>>>()?;
                if rates.is_empty() {
                    return Err(CliError::config(
                        entry.line,
                        "key `rates`: the list must not be empty",
                    ));
                }
                ScheduleSpec::Explicit { rates }
            }
        };
        let smoothness = match kv.take("smoothness") {
            None => None,
            Some(e) if e.value == "auto" => None,
            Some(e) => Some(e.parse::<f64>("`auto` or a positive float")?),
        };

        // Analysis and output.
        let probe_count = kv.parse_or("probe_count", "a positive integer", 32)?;
        let probe_draws = kv.parse_or("probe_draws", "a positive integer", 4)?;
        let bound = match kv.take("bound") {
            None => BoundChoice::Both,
            Some(e) => e.one_of(&[
                ("gap", BoundChoice::Gap),
                ("stationarity", BoundChoice::Stationarity),
                ("both", BoundChoice::Both),
            ])?,
        };
        let out_dir = kv
            .take("out_dir")
            .map(|e| PathBuf::from(e.value))
            .unwrap_or_else(|| PathBuf::from("out"));

        kv.reject_unknown()?;

        Ok(ExperimentConfig {
            algorithm,
            rounds,
            batch_size,
            bits_per_vector,
            quantizer_levels,
            seed,
            dataset,
            model,
            clients,
            concentration,
            clusters,
            cluster_policy,
            graph,
            schedule,
            smoothness,
            probe_count,
            probe_draws,
            bound,
            out_dir,
        })
    }
}

/// One parsed `key = value` line.
#[derive(Debug, Clone)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

impl Entry {
    fn parse<T: std::str::FromStr>(&self, what: &str) -> CliResult<T> {
        self.value.parse().map_err(|_| {
            CliError::config(
                self.line,
                format!("key `{}`: expected {what}, got `{}`", self.key, self.value),
            )
        })
    }

    fn one_of<T: Copy>(&self, choices: &[(&str, T)]) -> CliResult<T> {
        choices
            .iter()
            .find(|(name, _)| *name == self.value)
            .map(|(_, v)| *v)
            .ok_or_else(|| {
                let names: Vec<&str> = choices.iter().map(|(n, _)| *n).collect();
                CliError::config(
                    self.line,
                    format!(
                        "key `{}`: expected one of {}, got `{}`",
                        self.key,
                        names.join("|"),
                        self.value
                    ),
                )
            })
    }

    fn forbid(&self, why: &str) -> CliError {
        CliError::config(self.line, format!("key `{}` {why}", self.key))
    }
}

/// The raw key-value document, with duplicate detection and fail-closed
/// unknown-key rejection.
struct KeyValues {
    entries: BTreeMap<String, Entry>,
}

impl KeyValues {
    fn parse(text: &str) -> CliResult<Self> {
        let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(CliError::config(
                    line,
                    format!("expected `key = value`, got `{content}`"),
                ));
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(CliError::config(line, "empty key before `=`"));
            }
            if value.is_empty() {
                return Err(CliError::config(
                    line,
                    format!("key `{key}` has an empty value"),
                ));
            }
            if let Some(prev) = entries.get(key) {
                return Err(CliError::config(
                    line,
                    format!("duplicate key `{key}` (first set on line {})", prev.line),
                ));
            }
            entries.insert(
                key.to_string(),
                Entry {
                    key: key.to_string(),
                    value: value.to_string(),
                    line,
                },
            );
        }
        Ok(KeyValues { entries })
    }

    fn take(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    fn require(&mut self, key: &str) -> CliResult<Entry> {
        self.take(key)
            .ok_or_else(|| CliError::invalid(format!("missing required key `{key}`")))
    }

    fn parse_or<T: std::str::FromStr>(
        &mut self,
        key: &str,
        what: &str,
        default: T,
    ) -> CliResult<T> {
        match self.take(key) {
            Some(entry) => entry.parse(what),
            None => Ok(default),
        }
    }

    /// Everything still unconsumed is unknown; report the earliest by line.
    fn reject_unknown(self) -> CliResult<()> {
        match self.entries.into_values().min_by_key(|e| e.line) {
            Some(entry) => Err(CliError::config(
                entry.line,
                format!("unknown key `{}`", entry.key),
            )),
            None => Ok(()),
        }
    }
}

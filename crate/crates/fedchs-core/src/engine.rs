//! The training engine: learning-rate schedules, the sequential
//! cluster-visiting round loop, parameter-server and hierarchical baselines,
//! a client-graph random walk, and the stochastic quantizer.
//!
//! Reproducibility rules baked into everything here:
//! * all client summations run in ascending client-index order,
//!   left-to-right;
//! * every stochastic site owns a substream keyed by `(domain, …)` tags, so
//!   no site's draws can perturb another's;
//! * identical config + seed ⇒ bitwise-identical outputs.

use serde::Serialize;

use crate::accounting::{Channel, ChannelTotals, CostLedger};
use crate::data::{ClusterState, Clustering, Partition};
use crate::error::{Error, Result};
use crate::losses::{batch_grad, global_loss_and_grad, LossModel, Sample, SampleBatch};
use crate::numerics::{ModelVector, RandomStream};
use crate::topology::EsGraph;

/// Substream tag for the initial cluster (or walk start) draw.
const DOMAIN_INIT: u64 = 1;
/// Substream tag prefix for batch draws: `[DOMAIN_BATCH, client, round, step]`.
const DOMAIN_BATCH: u64 = 2;
/// Substream tag prefix for random-walk hops: `[DOMAIN_WALK, round]`.
const DOMAIN_WALK: u64 = 3;
/// Substream tag prefix for quantizer draws: `[DOMAIN_QUANT, cluster, round]`.
const DOMAIN_QUANT: u64 = 4;

/// Algorithms the engine can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Sequential cluster visiting with in-cluster aggregated steps.
    FedChs,
    /// Parameter-server averaging of per-client local steps.
    FedAvg,
    /// All clusters train in parallel; a central server averages edge
    /// results (optionally quantized).
    Hfl,
    /// The model walks client-to-client on a peer graph.
    SflRandomWalk,
}

/// Learning-rate schedule family. `k` always indexes the local step within
/// a round, so rates repeat identically every round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ScheduleMode {
    /// `η_k = 1 / (2 L K √(k+1))` — decaying within the round.
    Sqrt,
    /// `η_k = 1 / (2 L K^q)`, `q ≥ 2` — constant and conservative.
    Power { exponent: f64 },
    /// `η = 1 / (L T^{q2})` with `K = ⌈T^{q1}⌉` — horizon-matched constant
    /// rate; requires `q1 ∈ (0,1)`, `q2 ≥ q1`, `1 + q1 > q2`, and the
    /// derived pair must satisfy `η ≤ 1/(L·K)`.
    Constant { rounds: u64, q1: f64, q2: f64 },
    /// Caller-supplied rate list; bound preconditions are still enforced
    /// wherever the schedule is consumed.
    Explicit,
}

/// A fully validated learning-rate schedule for `local_steps` steps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    smoothness: f64,
    mode: ScheduleMode,
    rates: Vec<f64>,
}

impl Schedule {
    pub fn sqrt(smoothness: f64, local_steps: usize) -> Result<Self> {
        Self::validate_common(smoothness, local_steps)?;
        let k = local_steps as f64;
        let rates = (0..local_steps)
            .map(|step| 1.0 / (2.0 * smoothness * k * ((step + 1) as f64).sqrt()))
            .collect();
        Ok(Schedule {
            smoothness,
            mode: ScheduleMode::Sqrt,
            rates,
        })
    }

    pub fn power(smoothness: f64, local_steps: usize, exponent: f64) -> Result<Self> {
        Self::validate_common(smoothness, local_steps)?;
        if !(exponent.is_finite() && exponent >= 2.0) {
            return Err(Error::contract(format!(
                "schedule: power exponent must be ≥ 2, got {exponent}"
            )));
        }
        let rate = 1.0 / (2.0 * smoothness * (local_steps as f64).powf(exponent));
        Ok(Schedule {
            smoothness,
            mode: ScheduleMode::Power { exponent },
            rates: vec![rate; local_steps],
        })
    }

    /// Constant mode derives the step count from the horizon:
    /// `K = ⌈T^{q1}⌉`, `η = 1/(L T^{q2})`.
    pub fn constant(smoothness: f64, rounds: u64, q1: f64, q2: f64) -> Result<Self> {
        if rounds == 0 {
            return Err(Error::contract("schedule: constant mode needs rounds ≥ 1"));
        }
        if !(q1.is_finite() && 0.0 < q1 && q1 < 1.0) {
            return Err(Error::contract(format!(
                "schedule: q1 must lie in (0, 1), got {q1}"
            )));
        }
        if !(q2.is_finite() && q2 >= q1 && 1.0 + q1 > q2) {
            return Err(Error::contract(format!(
                "schedule: need q1 ≤ q2 < 1 + q1, got q1 = {q1}, q2 = {q2}"
            )));
        }
        if !(smoothness.is_finite() && smoothness > 0.0) {
            return Err(Error::contract(format!(
                "schedule: smoothness must be positive, got {smoothness}"
            )));
        }
        let horizon = rounds as f64;
        let local_steps = horizon.powf(q1).ceil() as usize;
        let rate = 1.0 / (smoothness * horizon.powf(q2));
        // The ceiling can push K above T^{q2} for awkward horizons; the
        // rate bound η ≤ 1/(L·K) must survive it.
        if rate > 1.0 / (smoothness * local_steps as f64) * (1.0 + 1e-12) {
            return Err(Error::precondition(format!(
                "schedule: constant mode with rounds = {rounds}, q1 = {q1}, q2 = {q2} gives \
                 K = {local_steps} and rate {rate:.3e} > 1/(L·K); raise q2"
            )));
        }
        Ok(Schedule {
            smoothness,
            mode: ScheduleMode::Constant { rounds, q1, q2 },
            rates: vec![rate; local_steps],
        })
    }

    /// Adopts a caller-supplied rate list verbatim. Every rate must be
    /// finite and positive; whether the list satisfies a bound's rate
    /// precondition is checked where the bound is evaluated.
    pub fn explicit(smoothness: f64, rates: Vec<f64>) -> Result<Self> {
        Self::validate_common(smoothness, rates.len())?;
        if let Some(bad) = rates.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::contract(format!(
                "schedule: rates must be positive and finite, got {bad}"
            )));
        }
        Ok(Schedule {
            smoothness,
            mode: ScheduleMode::Explicit,
            rates,
        })
    }

    fn validate_common(smoothness: f64, local_steps: usize) -> Result<()> {
        if !(smoothness.is_finite() && smoothness > 0.0) {
            return Err(Error::contract(format!(
                "schedule: smoothness must be positive, got {smoothness}"
            )));
        }
        if local_steps == 0 {
            return Err(Error::contract("schedule: local_steps must be ≥ 1"));
        }
        Ok(())
    }

    pub fn local_steps(&self) -> usize {
        self.rates.len()
    }

    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn mode(&self) -> ScheduleMode {
        self.mode
    }

    /// Learning rate for local step `k ∈ [0, K)`.
    pub fn rate(&self, step: usize) -> Result<f64> {
        self.rates.get(step).copied().ok_or_else(|| {
            Error::contract(format!(
                "schedule: step {step} outside 0..{}",
                self.rates.len()
            ))
        })
    }

    /// All per-step rates for one round.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }
}

/// Engine-level run parameters (the data pipeline supplies the model,
/// partition, clustering, and graph separately).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    /// Number of rounds `T`.
    pub rounds: u64,
    /// Local (in-cluster) steps per round `K`.
    pub local_steps: usize,
    /// Samples per batch draw; `None` means the full shard every step.
    pub batch_size: Option<usize>,
    /// Bits charged per transmitted vector.
    pub bits_per_vector: u64,
    /// Master seed for every stochastic site of the run.
    pub seed: u64,
    /// Stochastic quantization levels for edge-to-server uploads
    /// (hierarchical baseline only); `None` disables quantization.
    pub quantizer_levels: Option<u32>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::contract("run config: rounds must be ≥ 1"));
        }
        if self.local_steps == 0 {
            return Err(Error::contract("run config: local_steps must be ≥ 1"));
        }
        if self.bits_per_vector == 0 {
            return Err(Error::contract("run config: bits_per_vector must be ≥ 1"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::contract("run config: batch_size must be ≥ 1"));
        }
        if self.quantizer_levels == Some(0) {
            return Err(Error::contract("run config: quantizer_levels must be ≥ 1"));
        }
        Ok(())
    }
}

/// Optional knobs shared by all run entry points.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Starting model; defaults to the zero vector.
    pub initial_model: Option<ModelVector>,
    /// Known optimal objective value; enables the trace's gap column.
    pub optimum_loss: Option<f64>,
}

/// One trace row. Metrics describe the model *entering* the round; bit
/// counters are cumulative through the *end* of the round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub round: u64,
    /// Active cluster this round (walker's client for the random walk);
    /// `None` for algorithms that touch every cluster each round.
    pub cluster: Option<usize>,
    pub loss: f64,
    pub grad_sq_norm: f64,
    /// `loss − optimum_loss` when the optimum is known.
    pub gap: Option<f64>,
    pub bits_client_up: u64,
    pub bits_client_down: u64,
    pub bits_es_es: u64,
    pub bits_es_ps: u64,
}

impl TraceRecord {
    pub fn total_bits(&self) -> u64 {
        self.bits_client_up + self.bits_client_down + self.bits_es_es + self.bits_es_ps
    }
}

/// Per-step drift diagnostic: distance of the in-round iterate from the
/// round's starting point, next to its theoretical ceiling
/// `k · Σ_{j<k} η_j² ‖g_j‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftRecord {
    pub round: u64,
    /// Steps taken so far within the round (1-based).
    pub step: usize,
    pub drift_sq: f64,
    pub bound: f64,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub final_model: ModelVector,
    /// One row per round.
    pub trace: Vec<TraceRecord>,
    /// Round-start models `w^0 … w^{T−1}`, aligned with the trace.
    pub iterates: Vec<ModelVector>,
    pub ledger: CostLedger,
    pub drift: Vec<DriftRecord>,
    /// Visit sequence: active cluster per round (walker's client for the
    /// random walk); empty for the parameter-server and hierarchical
    /// baselines.
    pub cluster_sequence: Vec<usize>,
    /// How often each cluster was *selected* (the starting cluster's free
    /// visit is not counted), so the counts sum to the number of rounds.
    pub visit_counts: Vec<u64>,
}

/// Header of the trace CSV format.
pub const TRACE_CSV_HEADER: &str =
    "t,cluster,loss,grad_sq_norm,gap,bits_client_up,bits_client_down,bits_es_es,bits_es_ps";

/// Renders a trace as CSV. Floats use the shortest round-trippable decimal
/// form, so identical runs serialize to identical bytes.
pub fn trace_to_csv(trace: &[TraceRecord]) -> String {
    let mut out = String::from(TRACE_CSV_HEADER);
    out.push('\n');
    for row in trace {
        let cluster = row.cluster.map(|c| c.to_string()).unwrap_or_default();
        let gap = row.gap.map(|g| g.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.round,
            cluster,
            row.loss,
            row.grad_sq_norm,
            gap,
            row.bits_client_up,
            row.bits_client_down,
            row.bits_es_es,
            row.bits_es_ps,
        ));
    }
    out
}

/// Two-step neighbor selection: among the current cluster's neighbors,
/// keep those with the fewest visits; break ties toward the largest data
/// mass, then toward the lowest cluster index.
pub fn select_next_cluster(
    current: usize,
    graph: &EsGraph,
    visit_counts: &[u64],
    cluster_masses: &[usize],
) -> Result<usize> {
    if visit_counts.len() != graph.node_count() || cluster_masses.len() != graph.node_count() {
        return Err(Error::contract(format!(
            "select_next_cluster: {} visit counts / {} masses for {} clusters",
            visit_counts.len(),
            cluster_masses.len(),
            graph.node_count()
        )));
    }
    let neighbors = graph.neighbors(current)?;
    if neighbors.is_empty() {
        return Err(Error::contract(format!(
            "select_next_cluster: cluster {current} has no neighbors"
        )));
    }
    let min_visits = neighbors
        .iter()
        .map(|&m| visit_counts[m])
        .min()
        .expect("neighbor list is non-empty");
    let mut best: Option<usize> = None;
    for &candidate in neighbors {
        if visit_counts[candidate] != min_visits {
            continue;
        }
        best = match best {
            None => Some(candidate),
            // Strict > keeps the lowest index on mass ties, because
            // neighbor lists are sorted ascending.
            Some(incumbent) if cluster_masses[candidate] > cluster_masses[incumbent] => {
                Some(candidate)
            }
            Some(incumbent) => Some(incumbent),
        };
    }
    Ok(best.expect("at least one neighbor attains the minimum"))
}

/// Unbiased stochastic quantizer. Each coordinate is snapped to one of the
/// two nearest points of the grid `{0, 1/s, …, 1}` scaled by the vector's
/// Euclidean norm, with probabilities that preserve the expectation. The
/// zero vector passes through unchanged.
pub fn qsgd_quantize(
    vector: &ModelVector,
    levels: u32,
    stream: &mut RandomStream,
) -> Result<ModelVector> {
    if levels == 0 {
        return Err(Error::contract("qsgd_quantize: levels must be ≥ 1"));
    }
    let norm = vector.norm();
    if norm == 0.0 {
        return Ok(vector.clone());
    }
    let s = levels as f64;
    let mut out = Vec::with_capacity(vector.dim());
    for &v in vector.values() {
        let ratio = s * v.abs() / norm;
        let floor = ratio.floor();
        let fraction = ratio - floor;
        let level = if stream.next_f64() < fraction {
            floor + 1.0
        } else {
            floor
        };
        // A zero component has ratio 0, draws level 0, and stays exactly 0.
        out.push(norm * v.signum() * level / s);
    }
    ModelVector::new(out)
}

/// Draws a batch from a shard: `batch_size` distinct samples (in ascending
/// shard order) via the dedicated substream, or the whole shard — without
/// consuming any draws — when no size is set or the shard is smaller.
fn draw_batch<'a>(
    shard: &'a [Sample],
    batch_size: Option<usize>,
    stream: &RandomStream,
    tags: &[u64],
) -> Result<SampleBatch<'a>> {
    match batch_size {
        Some(size) if size < shard.len() => {
            let mut substream = stream.substream(tags);
            let indices = substream.sample_without_replacement(shard.len(), size)?;
            SampleBatch::new(indices.into_iter().map(|i| &shard[i]).collect())
        }
        _ => SampleBatch::full(shard),
    }
}

/// Runs the K aggregated in-cluster steps of one round from `start`,
/// charging per-step broadcast and upload traffic and recording drift
/// diagnostics. Returns the end-of-round model.
#[allow(clippy::too_many_arguments)]
fn cluster_training_pass(
    start: &ModelVector,
    cluster: &ClusterState,
    round: u64,
    model: &LossModel,
    partition: &Partition,
    schedule: &Schedule,
    batch_size: Option<usize>,
    bits_per_vector: u64,
    base_stream: &RandomStream,
    ledger: &mut CostLedger,
    drift: &mut Vec<DriftRecord>,
) -> Result<ModelVector> {
    let mut current = start.clone();
    let member_bits = cluster.client_count() as u64 * bits_per_vector;
    let mut step_energy = 0.0; // Σ_{j<k} η_j² ‖g_j‖²
    for k in 0..schedule.local_steps() {
        ledger.record_transfer(round, Channel::ClientDown, member_bits);
        let mut aggregated = ModelVector::zeros(model.dim());
        for (&client, &weight) in cluster.clients().iter().zip(cluster.weights()) {
            let shard = &partition.shards()[client];
            let batch = draw_batch(
                shard,
                batch_size,
                base_stream,
                &[DOMAIN_BATCH, client as u64, round, k as u64],
            )?;
            let grad = batch_grad(model, &current, &batch)?;
            aggregated.add_scaled_in_place(weight, &grad)?;
        }
        ledger.record_transfer(round, Channel::ClientUp, member_bits);
        let rate = schedule.rate(k)?;
        current = current.add_scaled(-rate, &aggregated)?;
        step_energy += rate * rate * aggregated.norm_sq();
        drift.push(DriftRecord {
            round,
            step: k + 1,
            drift_sq: current.dist_sq(start)?,
            bound: (k + 1) as f64 * step_energy,
        });
    }
    Ok(current)
}

/// Per-round global metrics at the round-start model.
fn round_metrics(
    model: &LossModel,
    partition: &Partition,
    weights: &[f64],
    at: &ModelVector,
    optimum_loss: Option<f64>,
) -> Result<(f64, f64, Option<f64>)> {
    let (loss, grad) = global_loss_and_grad(model, at, partition.shards(), weights)?;
    Ok((loss, grad.norm_sq(), optimum_loss.map(|star| loss - star)))
}

fn initial_model(model: &LossModel, options: &RunOptions) -> Result<ModelVector> {
    match &options.initial_model {
        Some(w) => {
            if w.dim() != model.dim() {
                return Err(Error::contract(format!(
                    "initial model dimension {} does not match model dimension {}",
                    w.dim(),
                    model.dim()
                )));
            }
            Ok(w.clone())
        }
        None => Ok(ModelVector::zeros(model.dim())),
    }
}

fn check_shared_inputs(
    config: &RunConfig,
    schedule: &Schedule,
    model: &LossModel,
    partition: &Partition,
) -> Result<()> {
    config.validate()?;
    model.validate()?;
    if schedule.local_steps() != config.local_steps {
        return Err(Error::contract(format!(
            "schedule has {} local steps but the run config asks for {}",
            schedule.local_steps(),
            config.local_steps
        )));
    }
    for (n, shard) in partition.shards().iter().enumerate() {
        if shard.is_empty() {
            return Err(Error::EmptyShard(n));
        }
    }
    Ok(())
}

fn check_clustering(partition: &Partition, clustering: &Clustering) -> Result<()> {
    let mut seen = vec![false; partition.client_count()];
    for cluster in clustering.clusters() {
        for &client in cluster.clients() {
            if client >= seen.len() || seen[client] {
                return Err(Error::contract(format!(
                    "clustering: client {client} missing from the partition or assigned twice"
                )));
            }
            seen[client] = true;
        }
    }
    if seen.iter().any(|&s| !s) {
        return Err(Error::contract(
            "clustering: some clients belong to no cluster",
        ));
    }
    Ok(())
}

/// Sequential cluster-visiting training: one cluster per round runs the K
/// aggregated steps, then hands the model to a neighbor chosen by the
/// two-step rule. The handoff costs one vector on the edge-to-edge channel
/// per round, so that channel totals exactly `rounds × bits_per_vector`.
pub fn run_fedchs(
    config: &RunConfig,
    schedule: &Schedule,
    model: &LossModel,
    partition: &Partition,
    clustering: &Clustering,
    graph: &EsGraph,
    options: &RunOptions,
) -> Result<RunOutput> {
    if config.algorithm != Algorithm::FedChs {
        return Err(Error::contract(
            "run_fedchs called with a different algorithm in the config",
        ));
    }
    check_shared_inputs(config, schedule, model, partition)?;
    check_clustering(partition, clustering)?;
    if graph.node_count() != clustering.cluster_count() {
        return Err(Error::contract(format!(
            "graph has {} nodes but the clustering has {} clusters",
            graph.node_count(),
            clustering.cluster_count()
        )));
    }

    let stream = RandomStream::new(config.seed);
    let global_weights = partition.global_weights();
    let cluster_masses = clustering.masses();
    let mut current_cluster = stream
        .substream(&[DOMAIN_INIT])
        .next_range(clustering.cluster_count())?;
    let mut visit_counts = vec![0u64; clustering.cluster_count()];
    let mut w = initial_model(model, options)?;
    let mut ledger = CostLedger::new();
    let mut drift = Vec::new();
    let mut trace = Vec::with_capacity(config.rounds as usize);
    let mut iterates = Vec::with_capacity(config.rounds as usize);
    let mut cluster_sequence = Vec::with_capacity(config.rounds as usize);

    for round in 0..config.rounds {
        let (loss, grad_sq_norm, gap) =
            round_metrics(model, partition, &global_weights, &w, options.optimum_loss)?;
        iterates.push(w.clone());
        cluster_sequence.push(current_cluster);

        w = cluster_training_pass(
            &w,
            clustering.cluster(current_cluster),
            round,
            model,
            partition,
            schedule,
            config.batch_size,
            config.bits_per_vector,
            &stream,
            &mut ledger,
            &mut drift,
        )?;

        // Hand the model (unchanged) to the next edge server.
        let next = select_next_cluster(current_cluster, graph, &visit_counts, &cluster_masses)?;
        ledger.record_transfer(round, Channel::EsEs, config.bits_per_vector);
        visit_counts[next] += 1;
        current_cluster = next;

        let bits = ledger.totals();
        trace.push(TraceRecord {
            round,
            cluster: Some(cluster_sequence[round as usize]),
            loss,
            grad_sq_norm,
            gap,
            bits_client_up: bits.client_up,
            bits_client_down: bits.client_down,
            bits_es_es: bits.es_es,
            bits_es_ps: bits.es_ps,
        });
    }

    Ok(RunOutput {
        final_model: w,
        trace,
        iterates,
        ledger,
        drift,
        cluster_sequence,
        visit_counts,
    })
}

/// Parameter-server baseline: every client runs K independent local steps
/// from the round-start model; the server averages the results with
/// size-proportional weights. Communication is one model up and one down
/// per client per round on the central channel.
pub fn run_fedavg(
    config: &RunConfig,
    schedule: &Schedule,
    model: &LossModel,
    partition: &Partition,
    options: &RunOptions,
) -> Result<RunOutput> {
    if config.algorithm != Algorithm::FedAvg {
        return Err(Error::contract(
            "run_fedavg called with a different algorithm in the config",
        ));
    }
    check_shared_inputs(config, schedule, model, partition)?;

    let stream = RandomStream::new(config.seed);
    let global_weights = partition.global_weights();
    let client_count = partition.client_count();
    let mut w = initial_model(model, options)?;
    let mut ledger = CostLedger::new();
    let mut trace = Vec::with_capacity(config.rounds as usize);
    let mut iterates = Vec::with_capacity(config.rounds as usize);

    for round in 0..config.rounds {
        let (loss, grad_sq_norm, gap) =
            round_metrics(model, partition, &global_weights, &w, options.optimum_loss)?;
        iterates.push(w.clone());

        let mut averaged = ModelVector::zeros(model.dim());
        for (client, (shard, &weight)) in partition.shards().iter().zip(&global_weights).enumerate()
        {
            let mut local = w.clone();
            for k in 0..schedule.local_steps() {
                let batch = draw_batch(
                    shard,
                    config.batch_size,
                    &stream,
                    &[DOMAIN_BATCH, client as u64, round, k as u64],
                )?;
                let grad = batch_grad(model, &local, &batch)?;
                local = local.add_scaled(-schedule.rate(k)?, &grad)?;
            }
            averaged.add_scaled_in_place(weight, &local)?;
        }
        w = averaged;
        let round_bits = client_count as u64 * config.bits_per_vector;
        ledger.record_transfer(round, Channel::EsPs, round_bits); // uploads
        ledger.record_transfer(round, Channel::EsPs, round_bits); // broadcasts

        let bits = ledger.totals();
        trace.push(TraceRecord {
            round,
            cluster: None,
            loss,
            grad_sq_norm,
            gap,
            bits_client_up: bits.client_up,
            bits_client_down: bits.client_down,
            bits_es_es: bits.es_es,
            bits_es_ps: bits.es_ps,
        });
    }

    Ok(RunOutput {
        final_model: w,
        trace,
        iterates,
        ledger,
        drift: Vec::new(),
        cluster_sequence: Vec::new(),
        visit_counts: Vec::new(),
    })
}

/// Bits on the wire for one quantized vector: the level index of each of
/// `dim` coordinates plus a 32-bit norm.
pub fn quantized_upload_bits(dim: usize, levels: u32) -> u64 {
    let per_coordinate = (2.0 * f64::from(levels) + 1.0).log2();
    (dim as f64 * per_coordinate).ceil() as u64 + 32
}

/// Hierarchical baseline: every cluster runs the K aggregated in-cluster
/// steps in parallel from the round-start model; a central server averages
/// the edge results with mass-proportional weights. Edge uploads may be
/// stochastically quantized.
pub fn run_hfl(
    config: &RunConfig,
    schedule: &Schedule,
    model: &LossModel,
    partition: &Partition,
    clustering: &Clustering,
    options: &RunOptions,
) -> Result<RunOutput> {
    if config.algorithm != Algorithm::Hfl {
        return Err(Error::contract(
            "run_hfl called with a different algorithm in the config",
        ));
    }
    check_shared_inputs(config, schedule, model, partition)?;
    check_clustering(partition, clustering)?;

    let stream = RandomStream::new(config.seed);
    let global_weights = partition.global_weights();
    let total_mass: usize = clustering.masses().iter().sum();
    let mut w = initial_model(model, options)?;
    let mut ledger = CostLedger::new();
    let mut drift = Vec::new();
    let mut trace = Vec::with_capacity(config.rounds as usize);
    let mut iterates = Vec::with_capacity(config.rounds as usize);

    for round in 0..config.rounds {
        let (loss, grad_sq_norm, gap) =
            round_metrics(model, partition, &global_weights, &w, options.optimum_loss)?;
        iterates.push(w.clone());

        let mut averaged = ModelVector::zeros(model.dim());
        for (m, cluster) in clustering.clusters().iter().enumerate() {
            let branch = cluster_training_pass(
                &w,
                cluster,
                round,
                model,
                partition,
                schedule,
                config.batch_size,
                config.bits_per_vector,
                &stream,
                &mut ledger,
                &mut drift,
            )?;
            let (upload, upload_bits) = match config.quantizer_levels {
                Some(levels) => {
                    let mut quant_stream = stream.substream(&[DOMAIN_QUANT, m as u64, round]);
                    (
                        qsgd_quantize(&branch, levels, &mut quant_stream)?,
                        quantized_upload_bits(model.dim(), levels),
                    )
                }
                None => (branch, config.bits_per_vector),
            };
            ledger.record_transfer(round, Channel::EsPs, upload_bits);
            let mass_weight = cluster.mass() as f64 / total_mass as f64;
            averaged.add_scaled_in_place(mass_weight, &upload)?;
        }
        // One broadcast of the averaged model back to each edge server.
        ledger.record_transfer(
            round,
            Channel::EsPs,
            clustering.cluster_count() as u64 * config.bits_per_vector,
        );
        w = averaged;

        let bits = ledger.totals();
        trace.push(TraceRecord {
            round,
            cluster: None,
            loss,
            grad_sq_norm,
            gap,
            bits_client_up: bits.client_up,
            bits_client_down: bits.client_down,
            bits_es_es: bits.es_es,
            bits_es_ps: bits.es_ps,
        });
    }

    Ok(RunOutput {
        final_model: w,
        trace,
        iterates,
        ledger,
        drift,
        cluster_sequence: Vec::new(),
        visit_counts: Vec::new(),
    })
}

/// Random-walk baseline: the model hops client-to-client on a peer graph;
/// each visited client runs K local steps on its own shard. Each hop costs
/// one vector on the peer (edge-to-edge) channel.
pub fn run_sfl_random_walk(
    config: &RunConfig,
    schedule: &Schedule,
    model: &LossModel,
    partition: &Partition,
    client_graph: &EsGraph,
    options: &RunOptions,
) -> Result<RunOutput> {
    if config.algorithm != Algorithm::SflRandomWalk {
        return Err(Error::contract(
            "run_sfl_random_walk called with a different algorithm in the config",
        ));
    }
    check_shared_inputs(config, schedule, model, partition)?;
    if client_graph.node_count() != partition.client_count() {
        return Err(Error::contract(format!(
            "client graph has {} nodes but the partition has {} clients",
            client_graph.node_count(),
            partition.client_count()
        )));
    }

    let stream = RandomStream::new(config.seed);
    let global_weights = partition.global_weights();
    let mut current = stream
        .substream(&[DOMAIN_INIT])
        .next_range(partition.client_count())?;
    let mut w = initial_model(model, options)?;
    let mut ledger = CostLedger::new();
    let mut trace = Vec::with_capacity(config.rounds as usize);
    let mut iterates = Vec::with_capacity(config.rounds as usize);
    let mut visit_sequence = Vec::with_capacity(config.rounds as usize);

    for round in 0..config.rounds {
        let (loss, grad_sq_norm, gap) =
            round_metrics(model, partition, &global_weights, &w, options.optimum_loss)?;
        iterates.push(w.clone());
        visit_sequence.push(current);

        let shard = &partition.shards()[current];
        for k in 0..schedule.local_steps() {
            let batch = draw_batch(
                shard,
                config.batch_size,
                &stream,
                &[DOMAIN_BATCH, current as u64, round, k as u64],
            )?;
            let grad = batch_grad(model, &w, &batch)?;
            w = w.add_scaled(-schedule.rate(k)?, &grad)?;
        }

        let neighbors = client_graph.neighbors(current)?;
        let pick = stream
            .substream(&[DOMAIN_WALK, round])
            .next_range(neighbors.len())?;
        current = neighbors[pick];
        ledger.record_transfer(round, Channel::EsEs, config.bits_per_vector);

        let bits = ledger.totals();
        trace.push(TraceRecord {
            round,
            cluster: Some(visit_sequence[round as usize]),
            loss,
            grad_sq_norm,
            gap,
            bits_client_up: bits.client_up,
            bits_client_down: bits.client_down,
            bits_es_es: bits.es_es,
            bits_es_ps: bits.es_ps,
        });
    }

    Ok(RunOutput {
        final_model: w,
        trace,
        iterates,
        ledger,
        drift: Vec::new(),
        cluster_sequence: visit_sequence,
        visit_counts: Vec::new(),
    })
}

/// Convenience used by comparison tooling: per-round cumulative bit totals
/// straight from a trace.
pub fn cumulative_bits(trace: &[TraceRecord]) -> Vec<u64> {
    trace.iter().map(TraceRecord::total_bits).collect()
}

/// Helper shared by the CLI and tests: totals snapshot per round as channel
/// structs rather than a flat sum.
pub fn cumulative_channel_bits(trace: &[TraceRecord]) -> Vec<ChannelTotals> {
    trace
        .iter()
        .map(|row| ChannelTotals {
            client_up: row.bits_client_up,
            client_down: row.bits_client_down,
            es_es: row.bits_es_es,
            es_ps: row.bits_es_ps,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{assign_clusters, dirichlet_partition, generate_dataset};
    use crate::data::{ClusterPolicy, DatasetKind, DatasetSpec};
    use crate::losses::client_loss_and_grad;
    use crate::topology::{random_connected_graph, ring_graph};

    fn quadratic_fixture(
        seed: u64,
        clients: usize,
        clusters: usize,
    ) -> (LossModel, Partition, Clustering) {
        let mut stream = RandomStream::new(seed);
        let spec = DatasetSpec {
            kind: DatasetKind::LinearRegression,
            total_size: clients * 10,
            input_dim: 2,
            noise: 0.3,
            class_count: 2,
        };
        let data = generate_dataset(&spec, &mut stream).unwrap();
        let partition = dirichlet_partition(&data, clients, 1.0, &mut stream).unwrap();
        let clustering =
            assign_clusters(&partition, clusters, ClusterPolicy::Contiguous, &mut stream).unwrap();
        (LossModel::Quadratic { dim: 2 }, partition, clustering)
    }

    fn base_config(algorithm: Algorithm, rounds: u64, local_steps: usize, seed: u64) -> RunConfig {
        RunConfig {
            algorithm,
            rounds,
            local_steps,
            batch_size: None,
            bits_per_vector: 64,
            seed,
            quantizer_levels: None,
        }
    }

    #[test]
    fn sqrt_schedule_matches_closed_form() {
        let schedule = Schedule::sqrt(1.0, 4).unwrap();
        // k = 0: 1/(2·1·4·1) = 0.125.
        assert_eq!(schedule.rate(0).unwrap(), 0.125);
        assert_eq!(schedule.rate(3).unwrap(), 1.0 / (2.0 * 4.0 * 2.0));
        assert!(schedule.rate(4).is_err());
    }

    #[test]
    fn power_schedule_matches_closed_form() {
        let schedule = Schedule::power(2.0, 4, 2.0).unwrap();
        // 1/(2·2·16) = 1/64 for every step.
        for k in 0..4 {
            assert_eq!(schedule.rate(k).unwrap(), 1.0 / 64.0);
        }
        assert!(Schedule::power(2.0, 4, 1.5).is_err());
    }

    #[test]
    fn constant_schedule_derives_steps_from_the_horizon() {
        let schedule = Schedule::constant(1.0, 16, 0.5, 0.5).unwrap();
        assert_eq!(schedule.local_steps(), 4);
        // η = 1/16^0.5 = 0.25 = 1/(L·K) exactly.
        assert_eq!(schedule.rate(0).unwrap(), 0.25);
        // q2 below q1, q1 outside (0,1), and rate violations are rejected.
        assert!(Schedule::constant(1.0, 16, 0.5, 0.4).is_err());
        assert!(Schedule::constant(1.0, 16, 1.0, 1.0).is_err());
        // T = 10, q1 = q2 = 0.5: K = ⌈3.16⌉ = 4 > 10^0.5 → rate too large.
        assert!(Schedule::constant(1.0, 10, 0.5, 0.5).is_err());
    }

    #[test]
    fn schedule_rejects_bad_smoothness_and_steps() {
        assert!(Schedule::sqrt(0.0, 4).is_err());
        assert!(Schedule::sqrt(f64::NAN, 4).is_err());
        assert!(Schedule::sqrt(1.0, 0).is_err());
    }

    #[test]
    fn selection_prefers_least_visited_then_largest_mass_then_lowest_index() {
        let graph = ring_graph(4).unwrap();
        // Node 0's neighbors are 1 and 3.
        let masses = vec![10, 20, 30, 40];
        // Distinct visit counts: 3 wins on visits.
        assert_eq!(
            select_next_cluster(0, &graph, &[0, 5, 0, 2], &masses).unwrap(),
            3
        );
        // Visit tie: 3 wins on mass.
        assert_eq!(
            select_next_cluster(0, &graph, &[0, 1, 0, 1], &masses).unwrap(),
            3
        );
        // Visit and mass tie: lowest index wins.
        let equal = vec![10, 10, 10, 10];
        assert_eq!(
            select_next_cluster(0, &graph, &[0, 0, 0, 0], &equal).unwrap(),
            1
        );
    }

    #[test]
    fn selection_on_the_single_node_graph_returns_the_self_loop() {
        let graph = random_connected_graph(1, 3, &mut RandomStream::new(0)).unwrap();
        assert_eq!(select_next_cluster(0, &graph, &[7], &[5]).unwrap(), 0);
    }

    #[test]
    fn ring_selection_walks_the_ring_when_counts_are_fresh() {
        // Equal masses, zero counts, starting at node 1 (whose own count is
        // never incremented, matching the round loop). Hand-traced rule:
        // 1→0 (tie, lowest index), 0→1 (1 still uncounted), 1→2, 2→3, and
        // from 3 both neighbors are tied again, so the cycle repeats.
        let graph = ring_graph(4).unwrap();
        let masses = vec![10, 10, 10, 10];
        let mut counts = vec![0u64; 4];
        let mut current = 1usize;
        let mut sequence = Vec::new();
        for _ in 0..8 {
            let next = select_next_cluster(current, &graph, &counts, &masses).unwrap();
            counts[next] += 1;
            sequence.push(next);
            current = next;
        }
        assert_eq!(sequence, vec![0, 1, 2, 3, 0, 1, 2, 3]);
    }

    #[test]
    fn fedchs_trace_has_one_row_per_round_and_conserved_visit_counts() {
        let (model, partition, clustering) = quadratic_fixture(1, 8, 4);
        let graph = ring_graph(4).unwrap();
        let config = base_config(Algorithm::FedChs, 10, 3, 42);
        let schedule = Schedule::sqrt(1.0, 3).unwrap();
        let out = run_fedchs(
            &config,
            &schedule,
            &model,
            &partition,
            &clustering,
            &graph,
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(out.trace.len(), 10);
        assert_eq!(out.iterates.len(), 10);
        assert_eq!(out.cluster_sequence.len(), 10);
        // Selection happens exactly once per round.
        assert_eq!(out.visit_counts.iter().sum::<u64>(), 10);
        // Trace rounds are 0..T in order.
        for (t, row) in out.trace.iter().enumerate() {
            assert_eq!(row.round, t as u64);
            assert_eq!(row.cluster, Some(out.cluster_sequence[t]));
        }
    }

    #[test]
    fn fedchs_reruns_are_bitwise_identical() {
        let (model, partition, clustering) = quadratic_fixture(2, 6, 3);
        let graph = ring_graph(3).unwrap();
        let config = base_config(Algorithm::FedChs, 6, 2, 99);
        let schedule = Schedule::sqrt(1.0, 2).unwrap();
        let run = || {
            run_fedchs(
                &config,
                &schedule,
                &model,
                &partition,
                &clustering,
                &graph,
                &RunOptions::default(),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(trace_to_csv(&a.trace), trace_to_csv(&b.trace));
        assert_eq!(a.final_model, b.final_model);
        assert_eq!(a.ledger, b.ledger);
    }

    #[test]
    fn single_cluster_run_equals_a_centralized_descent_loop() {
        // With one cluster holding every client, the scheme degenerates to
        // plain (mini-batch) descent on the weighted objective. The oracle
        // below re-implements that loop directly, sharing only the
        // substream convention for batch draws.
        let (model, partition, clustering) = quadratic_fixture(3, 5, 1);
        let graph = random_connected_graph(1, 3, &mut RandomStream::new(0)).unwrap();
        let config = RunConfig {
            batch_size: Some(3),
            ..base_config(Algorithm::FedChs, 7, 4, 123)
        };
        let schedule = Schedule::sqrt(1.0, 4).unwrap();
        let out = run_fedchs(
            &config,
            &schedule,
            &model,
            &partition,
            &clustering,
            &graph,
            &RunOptions::default(),
        )
        .unwrap();

        let stream = RandomStream::new(config.seed);
        let cluster = clustering.cluster(0);
        let mut w = ModelVector::zeros(model.dim());
        for round in 0..config.rounds {
            for k in 0..4usize {
                let mut aggregated = ModelVector::zeros(model.dim());
                for (&client, &weight) in cluster.clients().iter().zip(cluster.weights()) {
                    let shard = &partition.shards()[client];
                    let mut substream =
                        stream.substream(&[DOMAIN_BATCH, client as u64, round, k as u64]);
                    let indices = substream
                        .sample_without_replacement(shard.len(), 3.min(shard.len()))
                        .unwrap();
                    let batch = if 3 < shard.len() {
                        SampleBatch::new(indices.iter().map(|&i| &shard[i]).collect()).unwrap()
                    } else {
                        SampleBatch::full(shard).unwrap()
                    };
                    let grad = batch_grad(&model, &w, &batch).unwrap();
                    aggregated.add_scaled_in_place(weight, &grad).unwrap();
                }
                w = w
                    .add_scaled(-schedule.rate(k).unwrap(), &aggregated)
                    .unwrap();
            }
        }
        assert_eq!(
            out.final_model, w,
            "single-cluster run diverged from the centralized loop"
        );
    }

    #[test]
    fn two_singleton_clusters_match_a_hand_unrolled_recursion() {
        // Two clients, each its own cluster, scalar quadratic losses
        // f_m(w) = ½(w − a_m)². Four steps (T = 2, K = 2) unroll by hand.
        let shards = vec![
            vec![Sample::new(vec![1.0], 2.0)],  // minimizer a_0 = 2
            vec![Sample::new(vec![1.0], -1.0)], // minimizer a_1 = −1
        ];
        let partition = Partition::from_shards(shards).unwrap();
        let mut stream = RandomStream::new(0);
        let clustering =
            assign_clusters(&partition, 2, ClusterPolicy::Contiguous, &mut stream).unwrap();
        let graph = EsGraph::from_edges(2, &[(0, 1)]).unwrap();
        let model = LossModel::Quadratic { dim: 1 };
        let config = base_config(Algorithm::FedChs, 2, 2, 7);
        let schedule = Schedule::sqrt(1.0, 2).unwrap();
        let out = run_fedchs(
            &config,
            &schedule,
            &model,
            &partition,
            &clustering,
            &graph,
            &RunOptions::default(),
        )
        .unwrap();

        // The start cluster comes from the seeded init substream; the path
        // graph forces strict alternation afterwards.
        let m0 = RandomStream::new(config.seed)
            .substream(&[DOMAIN_INIT])
            .next_range(2)
            .unwrap();
        let targets = [2.0, -1.0];
        let eta = [schedule.rate(0).unwrap(), schedule.rate(1).unwrap()];
        let mut w = 0.0;
        for round in 0..2usize {
            let target = targets[if round == 0 { m0 } else { 1 - m0 }];
            for &rate in &eta {
                w -= rate * (w - target);
            }
        }
        assert!((out.final_model.values()[0] - w).abs() <= 1e-15);
    }

    #[test]
    fn kstep_descent_matches_scalar_recursion_exactly() {
        // One client, full batch, scalar quadratic ½(w − 3)²: the K in-round
        // steps are w ← w − η_k (w − 3).
        let partition = Partition::from_shards(vec![vec![Sample::new(vec![1.0], 3.0)]]).unwrap();
        let mut stream = RandomStream::new(0);
        let clustering =
            assign_clusters(&partition, 1, ClusterPolicy::Contiguous, &mut stream).unwrap();
        let graph = random_connected_graph(1, 2, &mut RandomStream::new(0)).unwrap();
        let model = LossModel::Quadratic { dim: 1 };
        let config = base_config(Algorithm::FedChs, 1, 5, 11);
        let schedule = Schedule::sqrt(2.0, 5).unwrap();
        let out = run_fedchs(
            &config,
            &schedule,
            &model,
            &partition,
            &clustering,
            &graph,
            &RunOptions::default(),
        )
        .unwrap();
        let mut w = 0.0f64;
        for k in 0..5 {
            w -= schedule.rate(k).unwrap() * (w - 3.0);
        }
        assert!((out.final_model.values()[0] - w).abs() <= 1e-15);
    }

    #[test]
    fn drift_diagnostics_respect_their_bound_on_every_step() {
        let (model, partition, clustering) = quadratic_fixture(4, 9, 3);
        let graph = ring_graph(3).unwrap();
        let config = RunConfig {
            batch_size: Some(2),
            ..base_config(Algorithm::FedChs, 12, 6, 5)
        };
        let schedule = Schedule::sqrt(1.5, 6).unwrap();
        let out = run_fedchs(
            &config,
            &schedule,
            &model,
            &partition,
            &clustering,
            &graph,
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(out.drift.len(), 12 * 6);
        for record in &out.drift {
            assert!(
                record.drift_sq <= record.bound + 1e-12,
                "round {} step {}: drift {} exceeds bound {}",
                record.round,
                record.step,
                record.drift_sq,
                record.bound
            );
        }
    }

    #[test]
    fn fedchs_ledger_matches_the_closed_form_for_uniform_clusters() {
        let (model, partition, clustering) = quadratic_fixture(6, 8, 4);
        let graph = ring_graph(4).unwrap();
        let config = base_config(Algorithm::FedChs, 10, 3, 2);
        let schedule = Schedule::sqrt(1.0, 3).unwrap();
        let out = run_fedchs(
            &config,
            &schedule,
            &model,
            &partition,
            &clustering,
            &graph,
            &RunOptions::default(),
        )
        .unwrap();
        // Uniform clusters (2 clients each): the upper bounds are met with
        // equality on every channel.
        let (up, down, handoff) = crate::accounting::fedchs_upper_bounds(10, 3, 64, 2);
        assert_eq!(out.ledger.total(Channel::ClientUp), up);
        assert_eq!(out.ledger.total(Channel::ClientDown), down);
        assert_eq!(out.ledger.total(Channel::EsEs), handoff);
        assert_eq!(out.ledger.total(Channel::EsPs), 0);
    }

    #[test]
    fn fedavg_single_client_single_step_is_plain_descent() {
        let partition = Partition::from_shards(vec![vec![Sample::new(vec![1.0], 4.0)]]).unwrap();
        let model = LossModel::Quadratic { dim: 1 };
        let config = base_config(Algorithm::FedAvg, 3, 1, 21);
        let schedule = Schedule::sqrt(1.0, 1).unwrap();
        let out = run_fedavg(
            &config,
            &schedule,
            &model,
            &partition,
            &RunOptions::default(),
        )
        .unwrap();
        let mut w = 0.0f64;
        let rate = schedule.rate(0).unwrap();
        for _ in 0..3 {
            w -= rate * (w - 4.0);
        }
        assert!((out.final_model.values()[0] - w).abs() <= 1e-15);
        // 2·N·Q bits per round on the central channel, nothing else.
        assert_eq!(out.ledger.total(Channel::EsPs), 3 * 2 * 64);
        assert_eq!(out.ledger.total(Channel::ClientUp), 0);
    }

    #[test]
    fn fedavg_with_identical_shards_equals_every_local_path() {
        // All clients hold the same shard, so every local trajectory is
        // identical under full batches and averaging changes nothing.
        let shard = vec![Sample::new(vec![1.0], 1.5), Sample::new(vec![1.0], 2.5)];
        let partition = Partition::from_shards(vec![shard.clone(); 4]).unwrap();
        let model = LossModel::Quadratic { dim: 1 };
        let config = base_config(Algorithm::FedAvg, 4, 3, 8);
        let schedule = Schedule::sqrt(1.0, 3).unwrap();
        let out = run_fedavg(
            &config,
            &schedule,
            &model,
            &partition,
            &RunOptions::default(),
        )
        .unwrap();
        let mut w = ModelVector::zeros(1);
        for _ in 0..4 {
            for k in 0..3 {
                let (_, grad) = client_loss_and_grad(&model, &w, &shard).unwrap();
                w = w.add_scaled(-schedule.rate(k).unwrap(), &grad).unwrap();
            }
        }
        assert!((out.final_model.values()[0] - w.values()[0]).abs() <= 1e-15);
    }

    #[test]
    fn fedavg_matches_an_independent_reference_implementation() {
        // Reference: straight-line re-implementation of weighted local-step
        // averaging, sharing only the batch-substream convention.
        let (model, partition, _) = quadratic_fixture(12, 5, 1);
        let config = RunConfig {
            batch_size: Some(2),
            ..base_config(Algorithm::FedAvg, 5, 3, 33)
        };
        let schedule = Schedule::sqrt(1.0, 3).unwrap();
        let out = run_fedavg(
            &config,
            &schedule,
            &model,
            &partition,
            &RunOptions::default(),
        )
        .unwrap();

        let stream = RandomStream::new(config.seed);
        let weights = partition.global_weights();
        let mut w = ModelVector::zeros(model.dim());
        for round in 0..config.rounds {
            let mut next = ModelVector::zeros(model.dim());
            for (client, shard) in partition.shards().iter().enumerate() {
                let mut local = w.clone();
                for k in 0..3usize {
                    let mut substream =
                        stream.substream(&[DOMAIN_BATCH, client as u64, round, k as u64]);
                    let batch = if 2 < shard.len() {
                        let idx = substream
                            .sample_without_replacement(shard.len(), 2)
                            .unwrap();
                        SampleBatch::new(idx.iter().map(|&i| &shard[i]).collect()).unwrap()
                    } else {
                        SampleBatch::full(shard).unwrap()
                    };
                    let grad = batch_grad(&model, &local, &batch).unwrap();
                    local = local.add_scaled(-schedule.rate(k).unwrap(), &grad).unwrap();
                }
                next.add_scaled_in_place(weights[client], &local).unwrap();
            }
            w = next;
        }
        let diff = out.final_model.sub(&w).unwrap().norm();
        assert!(diff <= 1e-12, "reference mismatch: {diff}");
    }

    #[test]
    fn hfl_with_one_cluster_matches_fedchs_with_one_cluster() {
        let (model, partition, clustering) = quadratic_fixture(13, 4, 1);
        let graph = random_connected_graph(1, 2, &mut RandomStream::new(0)).unwrap();
        let schedule = Schedule::sqrt(1.0, 3).unwrap();
        let chs = run_fedchs(
            &base_config(Algorithm::FedChs, 6, 3, 17),
            &schedule,
            &model,
            &partition,
            &clustering,
            &graph,
            &RunOptions::default(),
        )
        .unwrap();
        let hfl = run_hfl(
            &base_config(Algorithm::Hfl, 6, 3, 17),
            &schedule,
            &model,
            &partition,
            &clustering,
            &RunOptions::default(),
        )
        .unwrap();
        // Same updates (averaging over one branch is the identity), so the
        // model paths agree exactly even though the ledgers differ.
        assert_eq!(chs.final_model, hfl.final_model);
        for (a, b) in chs.trace.iter().zip(&hfl.trace) {
            assert_eq!(a.loss, b.loss);
        }
        assert_eq!(hfl.ledger.total(Channel::EsPs), 6 * 2 * 64);
    }

    #[test]
    fn hfl_two_equal_clusters_average_their_branches() {
        // Two singleton clusters with scalar quadratics and equal masses:
        // each branch contracts toward its own target; the server averages.
        let shards = vec![
            vec![Sample::new(vec![1.0], 2.0)],
            vec![Sample::new(vec![1.0], -2.0)],
        ];
        let partition = Partition::from_shards(shards).unwrap();
        let mut stream = RandomStream::new(0);
        let clustering =
            assign_clusters(&partition, 2, ClusterPolicy::Contiguous, &mut stream).unwrap();
        let model = LossModel::Quadratic { dim: 1 };
        let config = base_config(Algorithm::Hfl, 3, 2, 55);
        let schedule = Schedule::sqrt(1.0, 2).unwrap();
        let out = run_hfl(
            &config,
            &schedule,
            &model,
            &partition,
            &clustering,
            &RunOptions::default(),
        )
        .unwrap();
        let eta = [schedule.rate(0).unwrap(), schedule.rate(1).unwrap()];
        let mut w = 0.0f64;
        for _ in 0..3 {
            let mut branch = [w, w];
            for (b, target) in branch.iter_mut().zip([2.0, -2.0]) {
                for &rate in &eta {
                    *b -= rate * (*b - target);
                }
            }
            w = 0.5 * branch[0] + 0.5 * branch[1];
        }
        assert!((out.final_model.values()[0] - w).abs() <= 1e-12);
        // By symmetry the average never moves off zero.
        assert!(out.final_model.values()[0].abs() <= 1e-12);
    }

    #[test]
    fn hfl_quantizer_bypass_and_disabled_quantizer_agree() {
        let (model, partition, clustering) = quadratic_fixture(14, 6, 2);
        let schedule = Schedule::sqrt(1.0, 2).unwrap();
        let run = |levels: Option<u32>| {
            let config = RunConfig {
                quantizer_levels: levels,
                ..base_config(Algorithm::Hfl, 5, 2, 71)
            };
            run_hfl(
                &config,
                &schedule,
                &model,
                &partition,
                &clustering,
                &RunOptions::default(),
            )
            .unwrap()
        };
        let off = run(None);
        let off_again = run(None);
        assert_eq!(trace_to_csv(&off.trace), trace_to_csv(&off_again.trace));
        // With a twenty-bit quantizer the values barely move...
        let fine = run(Some(1 << 20));
        let drift = fine.final_model.sub(&off.final_model).unwrap().norm();
        assert!(
            drift <= 1e-4,
            "million-level quantizer drifted too far: {drift}"
        );
        // ...but each upload costs ceil(d·log2(2s+1)) + 32 bits, which at
        // this precision exceeds the 64-bit unquantized vector. Bit savings
        // only arrive at coarse levels.
        assert_eq!(quantized_upload_bits(2, 1 << 20), 75);
        assert_eq!(quantized_upload_bits(2, 1), 36);
        assert!(fine.ledger.total(Channel::EsPs) > off.ledger.total(Channel::EsPs));
        let coarse = run(Some(1));
        assert!(coarse.ledger.total(Channel::EsPs) < off.ledger.total(Channel::EsPs));
    }

    #[test]
    fn random_walk_on_a_single_client_is_centralized_descent() {
        let partition = Partition::from_shards(vec![vec![Sample::new(vec![1.0], -3.0)]]).unwrap();
        let graph = random_connected_graph(1, 3, &mut RandomStream::new(0)).unwrap();
        let model = LossModel::Quadratic { dim: 1 };
        let config = base_config(Algorithm::SflRandomWalk, 4, 2, 13);
        let schedule = Schedule::sqrt(1.0, 2).unwrap();
        let out = run_sfl_random_walk(
            &config,
            &schedule,
            &model,
            &partition,
            &graph,
            &RunOptions::default(),
        )
        .unwrap();
        let mut w = 0.0f64;
        for _ in 0..4 {
            for k in 0..2 {
                w -= schedule.rate(k).unwrap() * (w + 3.0);
            }
        }
        assert!((out.final_model.values()[0] - w).abs() <= 1e-15);
        assert_eq!(out.ledger.total(Channel::EsEs), 4 * 64);
    }

    #[test]
    fn random_walk_visits_both_of_two_identical_clients() {
        let shard = vec![Sample::new(vec![1.0], 1.0)];
        let partition = Partition::from_shards(vec![shard.clone(), shard]).unwrap();
        let graph = EsGraph::from_edges(2, &[(0, 1)]).unwrap();
        let model = LossModel::Quadratic { dim: 1 };
        let config = base_config(Algorithm::SflRandomWalk, 6, 1, 3);
        let schedule = Schedule::sqrt(1.0, 1).unwrap();
        let out = run_sfl_random_walk(
            &config,
            &schedule,
            &model,
            &partition,
            &graph,
            &RunOptions::default(),
        )
        .unwrap();
        // On a two-node path the walk strictly alternates.
        for pair in out.cluster_sequence.windows(2) {
            assert_ne!(pair[0], pair[1]);
        }
    }

    #[test]
    fn random_walk_hop_frequencies_look_uniform_on_a_ring() {
        // On a 4-ring every hop is a fair coin between two neighbors; over
        // many hops each direction should appear within 3σ of half.
        let shard = vec![Sample::new(vec![1.0], 0.0)];
        let partition =
            Partition::from_shards(vec![shard.clone(), shard.clone(), shard.clone(), shard])
                .unwrap();
        let graph = ring_graph(4).unwrap();
        let model = LossModel::Quadratic { dim: 1 };
        let hops = 10_000u64;
        let config = base_config(Algorithm::SflRandomWalk, hops, 1, 1234);
        let schedule = Schedule::sqrt(1.0, 1).unwrap();
        let out = run_sfl_random_walk(
            &config,
            &schedule,
            &model,
            &partition,
            &graph,
            &RunOptions::default(),
        )
        .unwrap();
        let mut clockwise = 0u64;
        let mut total = 0u64;
        for pair in out.cluster_sequence.windows(2) {
            total += 1;
            if pair[1] == (pair[0] + 1) % 4 {
                clockwise += 1;
            }
        }
        let mean = total as f64 * 0.5;
        let sigma = (total as f64 * 0.25).sqrt();
        assert!(
            (clockwise as f64 - mean).abs() <= 3.0 * sigma,
            "clockwise hops {clockwise} of {total} outside 3σ of fair"
        );
    }

    #[test]
    fn quantizer_is_exact_on_grid_points_and_zero() {
        let mut stream = RandomStream::new(5);
        let zero = ModelVector::zeros(3);
        assert_eq!(qsgd_quantize(&zero, 4, &mut stream).unwrap(), zero);
        // (5, 0): norm 5, ratios are exactly 1 and 0 → reproduced exactly.
        let v = ModelVector::new(vec![5.0, 0.0]).unwrap();
        assert_eq!(qsgd_quantize(&v, 1, &mut stream).unwrap(), v);
        let neg = ModelVector::new(vec![-5.0, 0.0]).unwrap();
        assert_eq!(qsgd_quantize(&neg, 1, &mut stream).unwrap(), neg);
    }

    #[test]
    fn quantizer_output_lands_on_the_scaled_grid() {
        let mut stream = RandomStream::new(6);
        let v = ModelVector::new(vec![0.3, -1.2, 0.7, 2.0]).unwrap();
        let levels = 4u32;
        let norm = v.norm();
        for _ in 0..100 {
            let q = qsgd_quantize(&v, levels, &mut stream).unwrap();
            for (original, quantized) in v.values().iter().zip(q.values()) {
                let level = quantized.abs() * levels as f64 / norm;
                assert!(
                    (level - level.round()).abs() <= 1e-9,
                    "component {quantized} is not on the grid"
                );
                if *quantized != 0.0 {
                    assert_eq!(quantized.signum(), original.signum());
                }
            }
        }
    }

    #[test]
    fn quantizer_is_unbiased_componentwise() {
        let mut stream = RandomStream::new(7);
        let v = ModelVector::new(vec![0.37, -0.91, 1.3]).unwrap();
        let levels = 2u32;
        let draws = 100_000usize;
        let mut mean = [0.0; 3];
        for _ in 0..draws {
            let q = qsgd_quantize(&v, levels, &mut stream).unwrap();
            for (m, value) in mean.iter_mut().zip(q.values()) {
                *m += value;
            }
        }
        let norm = v.norm();
        let grid = norm / levels as f64;
        for (k, m) in mean.iter_mut().enumerate() {
            *m /= draws as f64;
            // Componentwise variance is at most (grid step)²/4.
            let sigma = grid / 2.0 / (draws as f64).sqrt();
            assert!(
                (*m - v.values()[k]).abs() <= 4.0 * sigma + 1e-12,
                "component {k}: mean {m} vs true {} (σ = {sigma})",
                v.values()[k]
            );
        }
    }

    #[test]
    fn trace_csv_has_the_documented_header_and_shape() {
        let (model, partition, clustering) = quadratic_fixture(15, 4, 2);
        let graph = EsGraph::from_edges(2, &[(0, 1)]).unwrap();
        let config = base_config(Algorithm::FedChs, 3, 2, 1);
        let schedule = Schedule::sqrt(1.0, 2).unwrap();
        let out = run_fedchs(
            &config,
            &schedule,
            &model,
            &partition,
            &clustering,
            &graph,
            &RunOptions::default(),
        )
        .unwrap();
        let csv = trace_to_csv(&out.trace);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), TRACE_CSV_HEADER);
        assert_eq!(lines.count(), 3);
        // Gap column is empty without a known optimum.
        let second = csv.lines().nth(1).unwrap();
        let fields: Vec<&str> = second.split(',').collect();
        assert_eq!(fields.len(), 9);
        assert_eq!(fields[4], "");
    }

    #[test]
    fn mismatched_schedule_and_config_are_rejected() {
        let (model, partition, clustering) = quadratic_fixture(16, 4, 2);
        let graph = EsGraph::from_edges(2, &[(0, 1)]).unwrap();
        let config = base_config(Algorithm::FedChs, 3, 2, 1);
        let schedule = Schedule::sqrt(1.0, 5).unwrap();
        assert!(run_fedchs(
            &config,
            &schedule,
            &model,
            &partition,
            &clustering,
            &graph,
            &RunOptions::default(),
        )
        .is_err());
    }

    #[test]
    fn graph_cluster_count_mismatch_is_rejected() {
        let (model, partition, clustering) = quadratic_fixture(17, 6, 3);
        let graph = EsGraph::from_edges(2, &[(0, 1)]).unwrap();
        let config = base_config(Algorithm::FedChs, 3, 2, 1);
        let schedule = Schedule::sqrt(1.0, 2).unwrap();
        assert!(run_fedchs(
            &config,
            &schedule,
            &model,
            &partition,
            &clustering,
            &graph,
            &RunOptions::default(),
        )
        .is_err());
    }
}

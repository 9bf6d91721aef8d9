//! Materializes a parsed config into simulator objects and executes runs.
//!
//! Every random component (dataset, partition, clustering, graph, probes)
//! draws from its own substream of the config seed, so a config plus seed
//! pins the entire experiment byte-for-byte, and algorithms compared side
//! by side always see identical data and identical run seeds.

use fedchs_core::{
    assign_clusters, classification_accuracy, dirichlet_partition, estimate_constants,
    generate_dataset, global_loss_and_grad, quadratic_minimizer, random_connected_graph,
    ring_graph, run_fedavg, run_fedchs, run_hfl, run_sfl_random_walk, Algorithm, Clustering,
    ConstantEstimates, EsGraph, LossModel, Partition, ProbeSpec, RandomStream, RunConfig,
    RunOptions, RunOutput, Schedule,
};

use crate::config::{ExperimentConfig, GraphSpec, ScheduleSpec};
use crate::error::CliResult;

/// Namespace tag separating CLI component streams from the engine's own
/// run-internal substream domains (which are small integers).
const CLI_STREAM_NAMESPACE: u64 = 0x0F5E_DC11_57AE_A301;

const STREAM_DATA: u64 = 1;
const STREAM_PARTITION: u64 = 2;
const STREAM_CLUSTERS: u64 = 3;
const STREAM_GRAPH: u64 = 4;
const STREAM_PROBES: u64 = 5;

fn component_stream(seed: u64, tag: u64) -> RandomStream {
    RandomStream::new(seed).substream(&[CLI_STREAM_NAMESPACE, tag])
}

/// Dataset, partition, and clustering — enough for `partition-stats`.
pub struct DataBundle {
    pub partition: Partition,
    pub clustering: Clustering,
}

impl DataBundle {
    pub fn build(cfg: &ExperimentConfig) -> CliResult<Self> {
        let data = generate_dataset(&cfg.dataset, &mut component_stream(cfg.seed, STREAM_DATA))?;
        let partition = dirichlet_partition(
            &data,
            cfg.clients,
            cfg.concentration,
            &mut component_stream(cfg.seed, STREAM_PARTITION),
        )?;
        let clustering = assign_clusters(
            &partition,
            cfg.clusters,
            cfg.cluster_policy,
            &mut component_stream(cfg.seed, STREAM_CLUSTERS),
        )?;
        Ok(DataBundle {
            partition,
            clustering,
        })
    }
}

/// A materialized experiment: data plus the resolved schedule.
pub struct Experiment {
    pub partition: Partition,
    pub clustering: Clustering,
    pub schedule: Schedule,
    /// The smoothness the schedule was built with.
    pub smoothness: f64,
    /// Probe-based constant estimates, present when the smoothness was
    /// estimated rather than given.
    estimates: Option<ConstantEstimates>,
}

impl Experiment {
    pub fn build(cfg: &ExperimentConfig) -> CliResult<Self> {
        let bundle = DataBundle::build(cfg)?;
        let (smoothness, estimates) = match cfg.smoothness {
            Some(given) => (given, None),
            None => {
                let est = probe_constants(cfg, &bundle.partition, &bundle.clustering)?;
                (est.smoothness, Some(est))
            }
        };
        let schedule = match &cfg.schedule {
            ScheduleSpec::Sqrt { local_steps } => Schedule::sqrt(smoothness, *local_steps)?,
            ScheduleSpec::Power {
                local_steps,
                exponent,
            } => Schedule::power(smoothness, *local_steps, *exponent)?,
            ScheduleSpec::Constant { q1, q2 } => {
                Schedule::constant(smoothness, cfg.rounds, *q1, *q2)?
            }
            ScheduleSpec::Explicit { rates } => Schedule::explicit(smoothness, rates.clone())?,
        };
        Ok(Experiment {
            partition: bundle.partition,
            clustering: bundle.clustering,
            schedule,
            smoothness,
            estimates,
        })
    }

    /// Constant estimates for bound evaluation, probing on demand when the
    /// schedule was built from an explicit smoothness.
    pub fn constants(&mut self, cfg: &ExperimentConfig) -> CliResult<&ConstantEstimates> {
        if self.estimates.is_none() {
            self.estimates = Some(probe_constants(cfg, &self.partition, &self.clustering)?);
        }
        Ok(self.estimates.as_ref().expect("just populated"))
    }

    /// The loss at the exact minimizer, available in closed form for the
    /// quadratic model; other losses run without a recorded gap column.
    pub fn optimum_loss(&self, cfg: &ExperimentConfig) -> CliResult<Option<f64>> {
        if !matches!(cfg.model, LossModel::Quadratic { .. }) {
            return Ok(None);
        }
        let weights = self.partition.global_weights();
        let w_star = quadratic_minimizer(&cfg.model, self.partition.shards(), &weights)?;
        let (f_star, _) =
            global_loss_and_grad(&cfg.model, &w_star, self.partition.shards(), &weights)?;
        Ok(Some(f_star))
    }

    /// Runs one algorithm on this experiment's data with the config seed.
    pub fn execute(&self, cfg: &ExperimentConfig, algorithm: Algorithm) -> CliResult<RunOutput> {
        let run_config = RunConfig {
            algorithm,
            rounds: cfg.rounds,
            local_steps: self.schedule.local_steps(),
            batch_size: cfg.batch_size,
            bits_per_vector: cfg.bits_per_vector,
            seed: cfg.seed,
            quantizer_levels: cfg.quantizer_levels,
        };
        let options = RunOptions {
            initial_model: None,
            optimum_loss: self.optimum_loss(cfg)?,
        };
        let output = match algorithm {
            Algorithm::FedChs => {
                let graph = build_graph(cfg, self.clustering.cluster_count())?;
                run_fedchs(
                    &run_config,
                    &self.schedule,
                    &cfg.model,
                    &self.partition,
                    &self.clustering,
                    &graph,
                    &options,
                )?
            }
            Algorithm::FedAvg => run_fedavg(
                &run_config,
                &self.schedule,
                &cfg.model,
                &self.partition,
                &options,
            )?,
            Algorithm::Hfl => run_hfl(
                &run_config,
                &self.schedule,
                &cfg.model,
                &self.partition,
                &self.clustering,
                &options,
            )?,
            Algorithm::SflRandomWalk => {
                let graph = build_graph(cfg, self.partition.client_count())?;
                run_sfl_random_walk(
                    &run_config,
                    &self.schedule,
                    &cfg.model,
                    &self.partition,
                    &graph,
                    &options,
                )?
            }
        };
        Ok(output)
    }

    /// Training-set accuracy of the model held after each round, aligned
    /// with the per-round cumulative bit totals of the trace.
    pub fn accuracy_series(&self, cfg: &ExperimentConfig, run: &RunOutput) -> CliResult<Vec<f64>> {
        (0..run.trace.len())
            .map(|t| {
                let w = run.iterates.get(t + 1).unwrap_or(&run.final_model);
                classification_accuracy(&cfg.model, w, self.partition.shards()).map_err(Into::into)
            })
            .collect()
    }
}

fn probe_constants(
    cfg: &ExperimentConfig,
    partition: &Partition,
    clustering: &Clustering,
) -> CliResult<ConstantEstimates> {
    let probes = ProbeSpec {
        probe_count: cfg.probe_count,
        batch_size: cfg.batch_size,
        batch_draws: cfg.probe_draws,
        radius: None,
        initial: None,
    };
    estimate_constants(
        &cfg.model,
        partition,
        clustering,
        &probes,
        &mut component_stream(cfg.seed, STREAM_PROBES),
    )
    .map_err(Into::into)
}

fn build_graph(cfg: &ExperimentConfig, nodes: usize) -> CliResult<EsGraph> {
    match cfg.graph {
        GraphSpec::Ring => ring_graph(nodes).map_err(Into::into),
        GraphSpec::Random { max_degree } => random_connected_graph(
            nodes,
            max_degree,
            &mut component_stream(cfg.seed, STREAM_GRAPH),
        )
        .map_err(Into::into),
    }
}

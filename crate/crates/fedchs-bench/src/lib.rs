//! Shared fixtures for the simulator benchmarks: a small heterogeneous
//! quadratic problem that exercises the round loop, the constant
//! estimator, and the accounting paths at desk scale.

use fedchs_core::{
    assign_clusters, dirichlet_partition, generate_dataset, ring_graph, Algorithm, ClusterPolicy,
    Clustering, DatasetKind, DatasetSpec, EsGraph, LossModel, Partition, RandomStream, RunConfig,
    Schedule,
};

/// Everything a run needs, prebuilt so benchmarks time only the engine.
pub struct Fixture {
    pub model: LossModel,
    pub partition: Partition,
    pub clustering: Clustering,
    pub graph: EsGraph,
    pub schedule: Schedule,
}

impl Fixture {
    /// Quadratic regression over 8 clients in 4 clusters, full batch.
    pub fn quadratic() -> Self {
        let spec = DatasetSpec {
            kind: DatasetKind::LinearRegression,
            total_size: 120,
            input_dim: 4,
            noise: 0.4,
            class_count: 2,
        };
        let mut stream = RandomStream::new(11);
        let data = generate_dataset(&spec, &mut stream).expect("dataset");
        let partition = dirichlet_partition(&data, 8, 1.0, &mut stream).expect("partition");
        let clustering = assign_clusters(&partition, 4, ClusterPolicy::IidClusters, &mut stream)
            .expect("clustering");
        let model = LossModel::Quadratic { dim: 4 };
        // A fixed smoothness keeps the schedule, and therefore the timed
        // work, independent of the estimator.
        let schedule = Schedule::sqrt(4.0, 5).expect("schedule");
        Fixture {
            model,
            partition,
            clustering,
            graph: ring_graph(4).expect("ring"),
            schedule,
        }
    }

    /// Run config for `algorithm` over `rounds` rounds of this fixture.
    pub fn run_config(&self, algorithm: Algorithm, rounds: u64) -> RunConfig {
        RunConfig {
            algorithm,
            rounds,
            local_steps: self.schedule.local_steps(),
            batch_size: None,
            bits_per_vector: 64,
            seed: 3,
            quantizer_levels: None,
        }
    }
}

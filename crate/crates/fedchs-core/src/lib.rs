//! Deterministic simulator and verification harness for sequential
//! hierarchical federated learning.
//!
//! A model is trained by visiting one cluster of clients per round: the
//! active edge server runs a fixed number of aggregated local steps, then
//! hands the model to a neighboring edge server chosen by a visit-count /
//! data-mass rule. The crate provides the round engine, baseline algorithms
//! for comparison, communication-cost accounting, and numerical evaluation
//! of the convergence guarantees the sequential scheme satisfies.
//!
//! Modules:
//! * [`numerics`] — model vectors, seeded random streams, gradient checks.
//! * [`losses`] — loss models with closed-form gradients and aggregation.
//! * [`data`] — synthetic datasets, heterogeneous partitioning, clustering.
//! * [`topology`] — bounded-degree connected edge-server graphs.
//! * [`engine`] — the round loop, cluster selection, baselines, quantizer.
//! * [`accounting`] — per-channel communication-bit ledger.
//! * [`analysis`] — constant estimation and convergence-bound evaluation.

pub mod accounting;
pub mod analysis;
pub mod data;
pub mod engine;
pub mod error;
pub mod losses;
pub mod numerics;
pub mod topology;

pub use accounting::{
    bits_to_threshold, fedchs_upper_bounds, BitsToThreshold, Channel, ChannelTotals, CostLedger,
    TransferEvent,
};
pub use analysis::{
    check_trace_against_bound, cluster_loss_offset_series, estimate_constants, fit_linear_rate,
    stationarity_bound, strongly_convex_gap_bound, BoundKind, BoundReport, BoundRow,
    ConstantEstimates, ProbeSpec, RateFit,
};
pub use data::{
    assign_clusters, dirichlet_partition, generate_dataset, mean_label_tv_distance,
    partition_from_text, partition_to_text, ClusterPolicy, ClusterState, Clustering, DatasetKind,
    DatasetSpec, Partition,
};
pub use engine::{
    cumulative_bits, qsgd_quantize, quantized_upload_bits, run_fedavg, run_fedchs, run_hfl,
    run_sfl_random_walk, select_next_cluster, trace_to_csv, Algorithm, DriftRecord, RunConfig,
    RunOptions, RunOutput, Schedule, ScheduleMode, TraceRecord, TRACE_CSV_HEADER,
};
pub use error::{Error, Result};
pub use losses::{
    batch_grad, classification_accuracy, client_loss_and_grad, global_loss_and_grad,
    quadratic_minimizer, sample_loss_and_grad, LossModel, Sample, SampleBatch,
};
pub use numerics::{finite_diff_grad, relative_error, ModelVector, RandomStream, DEFAULT_FD_EPS};
pub use topology::{random_connected_graph, ring_graph, EsGraph};

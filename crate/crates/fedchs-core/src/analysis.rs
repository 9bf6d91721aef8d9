//! Constant estimation and convergence-bound evaluation.
//!
//! The sequential scheme's convergence guarantees are stated in terms of a
//! handful of problem constants: the smoothness modulus `L`, the
//! strong-convexity modulus `μ`, a gradient-norm bound `G²`, per-client
//! sampling variances `σ_n²` (aggregated per cluster as `θ_m²`), and a
//! cluster-versus-global heterogeneity bound `σ²`. This module estimates
//! those constants from the problem instance — exactly where a closed form
//! exists, by empirical maxima over probe points otherwise — evaluates the
//! two bound formulas, fits empirical decay rates, and audits recorded runs
//! against the theory.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::{Clustering, Partition};
use crate::engine::{RunOutput, Schedule};
use crate::error::{Error, Result};
use crate::losses::{
    batch_grad, client_loss_and_grad, global_loss_and_grad, quadratic_minimizer, LossModel, Sample,
    SampleBatch,
};
use crate::numerics::{ModelVector, RandomStream};

/// Fewest probe points accepted by [`estimate_constants`].
pub const MIN_PROBE_COUNT: usize = 10;
/// Gradient-norm tolerance for the inner minimizer solves.
pub const DESCENT_TOLERANCE: f64 = 1e-9;
/// Fewest points accepted by [`fit_linear_rate`].
pub const MIN_RATE_FIT_LEN: usize = 5;
/// Relative slack when checking a schedule against a rate precondition, so
/// rates constructed to sit exactly on the boundary are admitted.
const RATE_SLACK: f64 = 1e-12;
/// Iteration cap for the damped Newton minimizer solves.
const NEWTON_MAX_ITERS: usize = 200;
/// Iteration cap for the gradient-descent fallback minimizer.
const DESCENT_MAX_ITERS: usize = 200_000;
/// Probe ball radius never shrinks below this, so a start at the optimum
/// still yields a non-degenerate probe cloud.
const MIN_PROBE_RADIUS: f64 = 1.0;
/// Probe ball radius when no minimizer is available to anchor one.
const DEFAULT_PROBE_RADIUS: f64 = 2.0;

/// How [`estimate_constants`] probes the loss landscape.
#[derive(Debug, Clone)]
pub struct ProbeSpec {
    /// Number of probe points drawn from the probe ball (≥ 10).
    pub probe_count: usize,
    /// Batch size of the run under analysis; sampling variances describe
    /// the batches the engine would actually draw, so `None` (full batch)
    /// makes every `σ_n²` exactly zero.
    pub batch_size: Option<usize>,
    /// Batches sampled per probe point and client when `batch_size` is set.
    pub batch_draws: usize,
    /// Probe ball radius override; the default is `max(2·‖w⁰−w*‖, 1)`
    /// around the minimizer, or 2 around the start when no minimizer is
    /// computable.
    pub radius: Option<f64>,
    /// Starting model of the run under analysis (defaults to zero).
    pub initial: Option<ModelVector>,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec {
            probe_count: 32,
            batch_size: None,
            batch_draws: 4,
            radius: None,
            initial: None,
        }
    }
}

/// Problem constants the bound formulas consume. Optional fields exist
/// only for model classes where the quantity is computable: a multilayer
/// perceptron has no strong-convexity modulus and no tractable minimizer,
/// so its entries stay `None`.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantEstimates {
    /// `L`: smoothness of the global objective. Exact (extreme eigenvalue
    /// of the weighted Hessian) for quadratics; the maximum secant ratio
    /// `‖∇F(w₁)−∇F(w₂)‖/‖w₁−w₂‖` over probe pairs otherwise.
    pub smoothness: f64,
    /// `μ`: strong-convexity modulus. Smallest weighted-Hessian eigenvalue
    /// for quadratics, the ridge weight for logistic models.
    pub strong_convexity: Option<f64>,
    /// `G²`: bound on squared client-gradient norms over the probe ball.
    /// Closed-form ball maximum for quadratics, sampled maximum otherwise.
    pub grad_bound_sq: f64,
    /// `σ_n²`: per-client sampling variance — the largest observed squared
    /// deviation of a drawn-batch gradient from the full-shard gradient.
    pub client_sampling_var: Vec<f64>,
    /// `θ_m² = Σ_{n∈m} γ_n^m σ_n²`: per-cluster sampling variance.
    pub cluster_sampling_var: Vec<f64>,
    /// `σ²`: bound on the squared deviation of any cluster gradient from
    /// the global gradient over the probe ball.
    pub cluster_divergence_sq: f64,
    /// Global minimizer `w*`.
    pub w_star: Option<ModelVector>,
    /// Minimum of the global objective, `F(w*)`.
    pub f_star: Option<f64>,
    /// Per-client minimum loss values `f_n*`.
    pub client_minima: Option<Vec<f64>>,
    /// `τ_m = Σ_{n∈m} γ_n^m (f_n(w*) − f_n*)`: the residual disagreement
    /// each cluster retains at the global minimizer.
    pub cluster_suboptimality: Option<Vec<f64>>,
}

impl ConstantEstimates {
    /// Decay factor `β = (μ/2)·Σ_k η_k` of the strongly convex bound.
    pub fn beta(&self, schedule: &Schedule) -> Result<f64> {
        let mu = self.strong_convexity.ok_or_else(|| {
            Error::UnsupportedModel(
                "no strong-convexity modulus is available for this model class".into(),
            )
        })?;
        Ok(mu / 2.0 * schedule.rates().iter().sum::<f64>())
    }
}

/// Which convergence guarantee a trace is audited against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    /// Optimality-gap bound for strongly convex objectives; checked at
    /// every prefix horizon.
    StronglyConvexGap,
    /// Average-squared-gradient bound for general smooth objectives;
    /// checked at the full horizon.
    Stationarity,
}

/// One audited horizon: the measurement, the bound, and their margin
/// (`bound − measured`; negative means the bound was violated).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundRow {
    pub horizon: u64,
    pub measured: f64,
    pub bound: f64,
    pub margin: f64,
}

/// Outcome of auditing a recorded run against a bound.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub rows: Vec<BoundRow>,
    /// True when every margin is nonnegative.
    pub holds: bool,
    /// Whether a violation should be treated as a failure. Constants for a
    /// multilayer perceptron are sampled maxima that may understate the
    /// true suprema, so its reports are informational.
    pub asserted: bool,
    /// The constants the bounds were evaluated with.
    pub estimates: ConstantEstimates,
}

/// Stable sigmoid, accurate for arguments of either sign.
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Weighted objective Hessian for the models that have one in closed form.
fn weighted_hessian(
    model: &LossModel,
    at: &ModelVector,
    shards: &[Vec<Sample>],
    weights: &[f64],
) -> Result<DMatrix<f64>> {
    let dim = model.dim();
    let mut h = DMatrix::zeros(dim, dim);
    for (shard, &weight) in shards.iter().zip(weights) {
        let scale = weight / shard.len() as f64;
        for sample in shard {
            if sample.x.len() != dim {
                return Err(Error::contract(format!(
                    "hessian: sample has {} features, model expects {}",
                    sample.x.len(),
                    dim
                )));
            }
            let curvature = match model {
                LossModel::Quadratic { .. } => 1.0,
                LossModel::Logistic { .. } => {
                    let z: f64 = at.values().iter().zip(&sample.x).map(|(w, x)| w * x).sum();
                    let s = sigmoid(z);
                    s * (1.0 - s)
                }
                LossModel::Mlp { .. } => {
                    return Err(Error::UnsupportedModel(
                        "no closed-form Hessian for the multilayer perceptron".into(),
                    ))
                }
            };
            let factor = scale * curvature;
            for i in 0..dim {
                for j in 0..dim {
                    h[(i, j)] += factor * sample.x[i] * sample.x[j];
                }
            }
        }
    }
    if let LossModel::Logistic { ridge, .. } = model {
        for i in 0..dim {
            h[(i, i)] += ridge;
        }
    }
    Ok(h)
}

fn extreme_eigenvalues(matrix: DMatrix<f64>) -> (f64, f64) {
    let eigen = matrix.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &value in eigen.eigenvalues.iter() {
        lo = lo.min(value);
        hi = hi.max(value);
    }
    (lo, hi)
}

fn operator_norm(matrix: DMatrix<f64>) -> f64 {
    let (lo, hi) = extreme_eigenvalues(matrix);
    lo.abs().max(hi.abs())
}

/// One minimizer phase either reaches the gradient-norm target or hands
/// its best iterate to the next phase.
enum MinimizePhase {
    Converged(ModelVector, f64),
    Stuck(ModelVector),
}

/// Damped-Newton phase. When the certified Armijo decrease falls below
/// the floating-point resolution of the loss value — which happens near
/// the optimum on flat ridge-dominated objectives — a step is instead
/// accepted on a strict gradient-norm decrease, which Newton contracts
/// quadratically in the terminal basin.
fn newton_phase(
    model: &LossModel,
    shards: &[Vec<Sample>],
    weights: &[f64],
    start: ModelVector,
    max_iters: usize,
) -> Result<MinimizePhase> {
    let mut w = start;
    for _ in 0..max_iters {
        let (loss, grad) = global_loss_and_grad(model, &w, shards, weights)?;
        if grad.norm() <= DESCENT_TOLERANCE {
            return Ok(MinimizePhase::Converged(w, loss));
        }
        let Some(step) = weighted_hessian(model, &w, shards, weights)?
            .lu()
            .solve(&DVector::from_column_slice(grad.values()))
        else {
            return Ok(MinimizePhase::Stuck(w));
        };
        let direction = ModelVector::new(step.iter().copied().collect())?;
        let slope = grad.dot(&direction)?;
        let mut t: f64 = 1.0;
        let mut advanced = false;
        while t >= 1e-12 {
            let candidate = w.add_scaled(-t, &direction)?;
            let (candidate_loss, candidate_grad) =
                global_loss_and_grad(model, &candidate, shards, weights)?;
            let certified = candidate_loss <= loss - 0.25 * t * slope;
            let sub_ulp = 0.25 * t * slope <= 4.0 * f64::EPSILON * loss.abs()
                && candidate_grad.norm() < grad.norm();
            if certified || sub_ulp {
                w = candidate;
                advanced = true;
                break;
            }
            t *= 0.5;
        }
        if !advanced {
            return Ok(MinimizePhase::Stuck(w));
        }
    }
    Ok(MinimizePhase::Stuck(w))
}

/// Backtracking gradient-descent phase, used to cross the flat plateaus
/// of nearly-separable logistic shards where damped Newton steps crawl.
fn descent_phase(
    model: &LossModel,
    shards: &[Vec<Sample>],
    weights: &[f64],
    start: ModelVector,
) -> Result<MinimizePhase> {
    let mut w = start;
    let mut t: f64 = 1.0;
    for _ in 0..DESCENT_MAX_ITERS {
        let (loss, grad) = global_loss_and_grad(model, &w, shards, weights)?;
        if grad.norm() <= DESCENT_TOLERANCE {
            return Ok(MinimizePhase::Converged(w, loss));
        }
        let slope = grad.norm_sq();
        t = (t * 2.0).min(1e6_f64);
        loop {
            let candidate = w.add_scaled(-t, &grad)?;
            let (candidate_loss, _) = global_loss_and_grad(model, &candidate, shards, weights)?;
            if candidate_loss <= loss - 0.25 * t * slope {
                w = candidate;
                break;
            }
            t *= 0.5;
            if t < 1e-18 {
                return Ok(MinimizePhase::Stuck(w));
            }
        }
    }
    Ok(MinimizePhase::Stuck(w))
}

/// Minimizes the `weights`-weighted objective over `shards` to gradient
/// norm [`DESCENT_TOLERANCE`]: damped Newton, then a gradient-descent
/// rescue for plateaus that exhaust it, then a terminal Newton polish.
fn newton_minimize(
    model: &LossModel,
    shards: &[Vec<Sample>],
    weights: &[f64],
    start: &ModelVector,
) -> Result<(ModelVector, f64)> {
    let mut w = start.clone();
    w = match newton_phase(model, shards, weights, w, NEWTON_MAX_ITERS)? {
        MinimizePhase::Converged(w, loss) => return Ok((w, loss)),
        MinimizePhase::Stuck(w) => w,
    };
    w = match descent_phase(model, shards, weights, w)? {
        MinimizePhase::Converged(w, loss) => return Ok((w, loss)),
        MinimizePhase::Stuck(w) => w,
    };
    match newton_phase(model, shards, weights, w, NEWTON_MAX_ITERS)? {
        MinimizePhase::Converged(w, loss) => Ok((w, loss)),
        MinimizePhase::Stuck(_) => Err(Error::precondition(format!(
            "minimizer solve did not reach gradient norm {DESCENT_TOLERANCE} within \
             {NEWTON_MAX_ITERS} Newton and {DESCENT_MAX_ITERS} descent iterations"
        ))),
    }
}

/// Exact minimum of one client's quadratic loss, via a pseudo-inverse
/// solve of its normal equations so rank-deficient shards still work.
fn quadratic_client_minimum(shard: &[Sample], dim: usize) -> Result<f64> {
    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    let scale = 1.0 / shard.len() as f64;
    for sample in shard {
        for i in 0..dim {
            b[i] += scale * sample.y * sample.x[i];
            for j in 0..dim {
                a[(i, j)] += scale * sample.x[i] * sample.x[j];
            }
        }
    }
    let solution = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|detail| Error::SingularSystem(detail.into()))?;
    let minimizer = ModelVector::new(solution.iter().copied().collect())?;
    let (value, _) = client_loss_and_grad(&LossModel::Quadratic { dim }, &minimizer, shard)?;
    Ok(value)
}

/// Uniform draw from the ball of `radius` around `center`.
fn draw_probe(center: &ModelVector, radius: f64, stream: &mut RandomStream) -> Result<ModelVector> {
    let dim = center.dim();
    for _ in 0..100 {
        let direction: Vec<f64> = (0..dim).map(|_| stream.next_normal()).collect();
        let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        let r = radius * stream.next_f64().powf(1.0 / dim as f64);
        let probe: Vec<f64> = center
            .values()
            .iter()
            .zip(&direction)
            .map(|(c, d)| c + r * d / norm)
            .collect();
        return ModelVector::new(probe);
    }
    Err(Error::contract(
        "probe direction draws degenerated 100 times in a row",
    ))
}

/// Estimates the problem constants for `model` on `partition`/`clustering`.
///
/// Quadratic models get exact values: `L`, `μ` from the extreme eigenvalues
/// of the weighted Hessian, `w*` from the normal equations, per-client
/// minima from pseudo-inverse solves, and `G²`, `σ²` as closed-form maxima
/// over the probe ball. Logistic models take `μ` from the ridge weight and
/// solve minimizers by damped Newton; their `L`, `G²`, `σ²` are empirical
/// maxima over probe points, as are all of a perceptron's constants.
/// Sampling variances reflect `probes.batch_size`: full-batch analysis
/// yields exactly zero.
pub fn estimate_constants(
    model: &LossModel,
    partition: &Partition,
    clustering: &Clustering,
    probes: &ProbeSpec,
    stream: &mut RandomStream,
) -> Result<ConstantEstimates> {
    model.validate()?;
    if probes.probe_count < MIN_PROBE_COUNT {
        return Err(Error::contract(format!(
            "estimate_constants: need at least {MIN_PROBE_COUNT} probes, got {}",
            probes.probe_count
        )));
    }
    for (n, shard) in partition.shards().iter().enumerate() {
        if shard.is_empty() {
            return Err(Error::EmptyShard(n));
        }
    }
    let dim = model.dim();
    let shards = partition.shards();
    let weights = partition.global_weights();
    let initial = match &probes.initial {
        Some(w) if w.dim() != dim => {
            return Err(Error::contract(format!(
                "estimate_constants: initial model has dimension {}, expected {dim}",
                w.dim()
            )))
        }
        Some(w) => w.clone(),
        None => ModelVector::zeros(dim),
    };

    // Minimizer-dependent constants first: they anchor the probe ball.
    let (strong_convexity, exact_smoothness, w_star, f_star, client_minima) = match model {
        LossModel::Quadratic { .. } => {
            let hessian = weighted_hessian(model, &initial, shards, &weights)?;
            let (lo, hi) = extreme_eigenvalues(hessian);
            let w_star = quadratic_minimizer(model, shards, &weights)?;
            let (f_star, _) = global_loss_and_grad(model, &w_star, shards, &weights)?;
            let minima = shards
                .iter()
                .map(|shard| quadratic_client_minimum(shard, dim))
                .collect::<Result<Vec<f64>>>()?;
            (
                Some(lo.max(0.0)),
                Some(hi),
                Some(w_star),
                Some(f_star),
                Some(minima),
            )
        }
        LossModel::Logistic { ridge, .. } if *ridge > 0.0 => {
            let (w_star, f_star) = newton_minimize(model, shards, &weights, &initial)?;
            let minima = shards
                .iter()
                .map(|shard| {
                    newton_minimize(model, std::slice::from_ref(shard), &[1.0], &initial)
                        .map(|(_, value)| value)
                })
                .collect::<Result<Vec<f64>>>()?;
            (Some(*ridge), None, Some(w_star), Some(f_star), Some(minima))
        }
        // Without a ridge the logistic minimum may not be attained, so no
        // minimizer solve is attempted; the modulus is honestly zero.
        LossModel::Logistic { .. } => (Some(0.0), None, None, None, None),
        LossModel::Mlp { .. } => (None, None, None, None, None),
    };

    let center = w_star.clone().unwrap_or_else(|| initial.clone());
    let radius = match probes.radius {
        Some(r) if r.is_finite() && r > 0.0 => r,
        Some(r) => {
            return Err(Error::contract(format!(
                "estimate_constants: probe radius must be positive, got {r}"
            )))
        }
        None => match &w_star {
            Some(star) => (2.0 * initial.sub(star)?.norm()).max(MIN_PROBE_RADIUS),
            None => DEFAULT_PROBE_RADIUS,
        },
    };
    let mut probe_points = Vec::with_capacity(probes.probe_count + 1);
    for _ in 0..probes.probe_count {
        probe_points.push(draw_probe(&center, radius, stream)?);
    }
    probe_points.push(center.clone());

    // Per-client gradients at the probe points, cached for every consumer.
    let client_count = partition.client_count();
    let mut client_grads: Vec<Vec<ModelVector>> = Vec::with_capacity(probe_points.len());
    for point in &probe_points {
        let mut per_client = Vec::with_capacity(client_count);
        for shard in shards {
            let (_, grad) = client_loss_and_grad(model, point, shard)?;
            per_client.push(grad);
        }
        client_grads.push(per_client);
    }
    let global_grads: Vec<ModelVector> = client_grads
        .iter()
        .map(|per_client| {
            let mut grad = ModelVector::zeros(dim);
            for (g, &weight) in per_client.iter().zip(&weights) {
                grad.add_scaled_in_place(weight, g)?;
            }
            Ok(grad)
        })
        .collect::<Result<Vec<ModelVector>>>()?;

    // Smoothness: exact when available, otherwise the max secant ratio
    // over all probe pairs of the cached global gradients.
    let smoothness = match exact_smoothness {
        Some(l) => l,
        None => {
            let mut best = 0.0f64;
            for i in 0..probe_points.len() {
                for j in (i + 1)..probe_points.len() {
                    let dw = probe_points[i].sub(&probe_points[j])?.norm();
                    if dw < 1e-12 {
                        continue;
                    }
                    let dg = global_grads[i].sub(&global_grads[j])?.norm();
                    best = best.max(dg / dw);
                }
            }
            best
        }
    };

    // Gradient and divergence bounds.
    let (grad_bound_sq, cluster_divergence_sq) = match model {
        LossModel::Quadratic { .. } => {
            // ∇f_n(w) = H_n (w − w*) + ∇f_n(w*), so over the ball
            // ‖∇f_n‖ ≤ λ_max(H_n)·radius + ‖∇f_n(w*)‖, and the
            // cluster-vs-global deviation is bounded the same way through
            // the Hessian difference. Both are exact suprema.
            let star = w_star.as_ref().expect("quadratic minimizer was computed");
            let mut client_hessians = Vec::with_capacity(client_count);
            for shard in shards {
                client_hessians.push(weighted_hessian(
                    model,
                    star,
                    std::slice::from_ref(shard),
                    &[1.0],
                )?);
            }
            let mut grads_at_star = Vec::with_capacity(client_count);
            for shard in shards {
                let (_, grad) = client_loss_and_grad(model, star, shard)?;
                grads_at_star.push(grad);
            }
            let mut g_sq = 0.0f64;
            for (h, g) in client_hessians.iter().zip(&grads_at_star) {
                let (_, hi) = extreme_eigenvalues(h.clone());
                let reach = hi * radius + g.norm();
                g_sq = g_sq.max(reach * reach);
            }
            let mut global_hessian = DMatrix::zeros(dim, dim);
            for (h, &weight) in client_hessians.iter().zip(&weights) {
                global_hessian += h * weight;
            }
            let mut divergence_sq = 0.0f64;
            for cluster in clustering.clusters() {
                let mut cluster_hessian = DMatrix::zeros(dim, dim);
                let mut cluster_grad_at_star = ModelVector::zeros(dim);
                for (&client, &gamma) in cluster.clients().iter().zip(cluster.weights()) {
                    cluster_hessian += &client_hessians[client] * gamma;
                    cluster_grad_at_star.add_scaled_in_place(gamma, &grads_at_star[client])?;
                }
                let gap = operator_norm(&global_hessian - cluster_hessian);
                // ∇F(w*) = 0, so the offset term is the cluster's own
                // gradient at the minimizer.
                let reach = gap * radius + cluster_grad_at_star.norm();
                divergence_sq = divergence_sq.max(reach * reach);
            }
            (g_sq, divergence_sq)
        }
        _ => {
            let mut g_sq = 0.0f64;
            for per_client in &client_grads {
                for grad in per_client {
                    g_sq = g_sq.max(grad.norm_sq());
                }
            }
            let mut divergence_sq = 0.0f64;
            for (per_client, global) in client_grads.iter().zip(&global_grads) {
                for cluster in clustering.clusters() {
                    let mut cluster_grad = ModelVector::zeros(dim);
                    for (&client, &gamma) in cluster.clients().iter().zip(cluster.weights()) {
                        cluster_grad.add_scaled_in_place(gamma, &per_client[client])?;
                    }
                    divergence_sq = divergence_sq.max(global.sub(&cluster_grad)?.norm_sq());
                }
            }
            (g_sq, divergence_sq)
        }
    };

    // Sampling variance: zero under full-batch analysis, otherwise the max
    // observed squared deviation of a drawn-batch gradient from the shard
    // gradient, over probes × clients × draws.
    let mut client_sampling_var = vec![0.0f64; client_count];
    if let Some(batch_size) = probes.batch_size {
        if batch_size == 0 {
            return Err(Error::contract(
                "estimate_constants: batch_size must be ≥ 1 when set",
            ));
        }
        for (point, per_client) in probe_points.iter().zip(&client_grads) {
            for (client, shard) in shards.iter().enumerate() {
                if batch_size >= shard.len() {
                    continue;
                }
                for _ in 0..probes.batch_draws {
                    let indices = stream.sample_without_replacement(shard.len(), batch_size)?;
                    let batch = SampleBatch::new(indices.iter().map(|&i| &shard[i]).collect())?;
                    let grad = batch_grad(model, point, &batch)?;
                    let deviation = grad.sub(&per_client[client])?.norm_sq();
                    client_sampling_var[client] = client_sampling_var[client].max(deviation);
                }
            }
        }
    }
    let cluster_sampling_var: Vec<f64> = clustering
        .clusters()
        .iter()
        .map(|cluster| {
            cluster
                .clients()
                .iter()
                .zip(cluster.weights())
                .map(|(&client, &gamma)| gamma * client_sampling_var[client])
                .sum()
        })
        .collect();

    // τ_m: the cluster-weighted excess of each client's loss at the global
    // minimizer over that client's own minimum.
    let cluster_suboptimality = match (&w_star, &client_minima) {
        (Some(star), Some(minima)) => {
            let mut losses_at_star = Vec::with_capacity(client_count);
            for shard in shards {
                let (value, _) = client_loss_and_grad(model, star, shard)?;
                losses_at_star.push(value);
            }
            Some(
                clustering
                    .clusters()
                    .iter()
                    .map(|cluster| {
                        cluster
                            .clients()
                            .iter()
                            .zip(cluster.weights())
                            .map(|(&client, &gamma)| {
                                gamma * (losses_at_star[client] - minima[client])
                            })
                            .sum()
                    })
                    .collect(),
            )
        }
        _ => None,
    };

    Ok(ConstantEstimates {
        smoothness,
        strong_convexity,
        grad_bound_sq,
        client_sampling_var,
        cluster_sampling_var,
        cluster_divergence_sq,
        w_star,
        f_star,
        client_minima,
        cluster_suboptimality,
    })
}

/// Per-round series `Δ_{m(t)} = Σ_{n∈m(t)} γ_n^m (f_n(w^t) − f_n(w*))`:
/// the active cluster's weighted client-loss offset, at the round-start
/// model, relative to the global minimizer.
pub fn cluster_loss_offset_series(
    model: &LossModel,
    partition: &Partition,
    clustering: &Clustering,
    iterates: &[ModelVector],
    cluster_sequence: &[usize],
    w_star: &ModelVector,
) -> Result<Vec<f64>> {
    if iterates.len() != cluster_sequence.len() {
        return Err(Error::contract(format!(
            "cluster_loss_offset_series: {} iterates vs {} cluster picks",
            iterates.len(),
            cluster_sequence.len()
        )));
    }
    let shards = partition.shards();
    let mut losses_at_star = Vec::with_capacity(shards.len());
    for shard in shards {
        let (value, _) = client_loss_and_grad(model, w_star, shard)?;
        losses_at_star.push(value);
    }
    let mut series = Vec::with_capacity(iterates.len());
    for (point, &m) in iterates.iter().zip(cluster_sequence) {
        if m >= clustering.cluster_count() {
            return Err(Error::contract(format!(
                "cluster_loss_offset_series: cluster id {m} out of range"
            )));
        }
        let cluster = clustering.cluster(m);
        let mut offset = 0.0;
        for (&client, &gamma) in cluster.clients().iter().zip(cluster.weights()) {
            let (value, _) = client_loss_and_grad(model, point, &shards[client])?;
            offset += gamma * (value - losses_at_star[client]);
        }
        series.push(offset);
    }
    Ok(series)
}

fn check_cluster_ids(sequence: &[usize], cluster_count: usize) -> Result<()> {
    if let Some(&bad) = sequence.iter().find(|&&m| m >= cluster_count) {
        return Err(Error::contract(format!(
            "cluster sequence mentions cluster {bad}, but only {cluster_count} exist"
        )));
    }
    Ok(())
}

/// Optimality-gap upper bound for strongly convex objectives after
/// `cluster_sequence.len()` rounds.
///
/// With `β = (μ/2)·Σ_k η_k`, the bound is the five-term expression
///
/// ```text
/// (L/2)·[ (1−β)^T·‖w⁰−w*‖²
///       + Σ_k (K·η_k² + (2k/K)·Σ_{j<k} η_j²) · Σ_t (1−β)^t·θ²_{m(t)}
///       + Σ_k 2η_k(1−2LKη_k)(LKη_k−1)       · Σ_t (1−β)^t·Δ_{m(t)}
///       + Σ_k (2k/K)·Σ_{j<k} η_j²           · Σ_t (1−β)^t·G²
///       + Σ_k 6LK·η_k²                      · Σ_t (1−β)^t·τ_{m(t)} ]
/// ```
///
/// `delta_series` carries the per-round `Δ_{m(t)}` values (see
/// [`cluster_loss_offset_series`]); every other per-round quantity is
/// looked up from `est` through `cluster_sequence`. Preconditions:
/// `η_k ≤ 1/(2LK)` for every step and `0 < β < 1`.
pub fn strongly_convex_gap_bound(
    est: &ConstantEstimates,
    schedule: &Schedule,
    cluster_sequence: &[usize],
    delta_series: &[f64],
    w0_gap: f64,
) -> Result<f64> {
    let l = est.smoothness;
    if !(l.is_finite() && l > 0.0) {
        return Err(Error::contract(format!(
            "strongly convex bound: smoothness must be positive, got {l}"
        )));
    }
    if !(w0_gap.is_finite() && w0_gap >= 0.0) {
        return Err(Error::contract(format!(
            "strongly convex bound: ‖w⁰−w*‖² must be nonnegative, got {w0_gap}"
        )));
    }
    let tau = est.cluster_suboptimality.as_ref().ok_or_else(|| {
        Error::UnsupportedModel(
            "per-cluster suboptimality is unavailable for this model class".into(),
        )
    })?;
    if delta_series.len() != cluster_sequence.len() {
        return Err(Error::contract(format!(
            "strongly convex bound: {} offsets for {} rounds",
            delta_series.len(),
            cluster_sequence.len()
        )));
    }
    check_cluster_ids(
        cluster_sequence,
        est.cluster_sampling_var.len().min(tau.len()),
    )?;

    let rates = schedule.rates();
    let steps = rates.len() as f64;
    let cap = 1.0 / (2.0 * l * steps);
    if let Some(&bad) = rates.iter().find(|&&eta| eta > cap * (1.0 + RATE_SLACK)) {
        return Err(Error::precondition(format!(
            "strongly convex bound needs η_k ≤ 1/(2LK) = {cap:.6e}; got {bad:.6e}"
        )));
    }
    let beta = est.beta(schedule)?;
    if !(0.0 < beta && beta < 1.0) {
        return Err(Error::precondition(format!(
            "strongly convex bound needs beta in (0, 1); got beta = {beta}"
        )));
    }

    // Per-step coefficients.
    let mut coeff_theta = 0.0;
    let mut coeff_delta = 0.0;
    let mut coeff_g = 0.0;
    let mut coeff_tau = 0.0;
    let mut rate_sq_prefix = 0.0; // Σ_{j<k} η_j²
    for (k, &eta) in rates.iter().enumerate() {
        let ramp = 2.0 * k as f64 / steps * rate_sq_prefix;
        coeff_theta += steps * eta * eta + ramp;
        coeff_g += ramp;
        coeff_delta += 2.0 * eta * (1.0 - 2.0 * l * steps * eta) * (l * steps * eta - 1.0);
        coeff_tau += 6.0 * l * steps * eta * eta;
        rate_sq_prefix += eta * eta;
    }

    // Decay-weighted round sums.
    let mut s_theta = 0.0;
    let mut s_delta = 0.0;
    let mut s_g = 0.0;
    let mut s_tau = 0.0;
    let mut decay = 1.0; // (1−β)^t
    for (&m, &delta) in cluster_sequence.iter().zip(delta_series) {
        s_theta += decay * est.cluster_sampling_var[m];
        s_delta += decay * delta;
        s_g += decay * est.grad_bound_sq;
        s_tau += decay * tau[m];
        decay *= 1.0 - beta;
    }
    // After the loop, decay = (1−β)^T.
    Ok(l / 2.0
        * (decay * w0_gap
            + coeff_theta * s_theta
            + coeff_delta * s_delta
            + coeff_g * s_g
            + coeff_tau * s_tau))
}

/// Average-squared-gradient upper bound for smooth (possibly non-convex)
/// objectives over `cluster_sequence.len()` rounds:
///
/// ```text
/// 4·(F(w⁰)−F*) / (T·Σ_k η_k)
///   + (2LK·Σ_k η_k² / Σ_k η_k + 4) · (1/T)·Σ_t θ²_{m(t)}
///   + (2/T)·Σ_t σ²
/// ```
///
/// Precondition: `η_k ≤ 1/(LK)` for every step.
pub fn stationarity_bound(
    est: &ConstantEstimates,
    schedule: &Schedule,
    cluster_sequence: &[usize],
    initial_gap: f64,
) -> Result<f64> {
    let l = est.smoothness;
    if !(l.is_finite() && l > 0.0) {
        return Err(Error::contract(format!(
            "stationarity bound: smoothness must be positive, got {l}"
        )));
    }
    if !initial_gap.is_finite() {
        return Err(Error::contract(format!(
            "stationarity bound: initial objective gap must be finite, got {initial_gap}"
        )));
    }
    let horizon = cluster_sequence.len();
    if horizon == 0 {
        return Err(Error::contract(
            "stationarity bound: the horizon must cover at least one round",
        ));
    }
    check_cluster_ids(cluster_sequence, est.cluster_sampling_var.len())?;
    let rates = schedule.rates();
    let steps = rates.len() as f64;
    let cap = 1.0 / (l * steps);
    if let Some(&bad) = rates.iter().find(|&&eta| eta > cap * (1.0 + RATE_SLACK)) {
        return Err(Error::precondition(format!(
            "stationarity bound needs η_k ≤ 1/(LK) = {cap:.6e}; got {bad:.6e}"
        )));
    }
    let rate_sum: f64 = rates.iter().sum();
    let rate_sq_sum: f64 = rates.iter().map(|eta| eta * eta).sum();
    let t = horizon as f64;
    let theta_mean = cluster_sequence
        .iter()
        .map(|&m| est.cluster_sampling_var[m])
        .sum::<f64>()
        / t;
    Ok(4.0 * initial_gap / (t * rate_sum)
        + (2.0 * l * steps * rate_sq_sum / rate_sum + 4.0) * theta_mean
        + 2.0 * est.cluster_divergence_sq)
}

/// A fitted geometric decay `gap_t ≈ scale · rho^t`, with the root-mean-
/// square residual of the fit in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub rho: f64,
    pub scale: f64,
    pub residual: f64,
}

/// Least-squares fit of `log gap_t = log scale + t·log rho`. The series
/// must have at least [`MIN_RATE_FIT_LEN`] entries, all positive. A series
/// that decays geometrically yields `rho` in (0, 1); a flat one yields 1.
pub fn fit_linear_rate(gap_series: &[f64]) -> Result<RateFit> {
    if gap_series.len() < MIN_RATE_FIT_LEN {
        return Err(Error::contract(format!(
            "fit_linear_rate: need at least {MIN_RATE_FIT_LEN} points, got {}",
            gap_series.len()
        )));
    }
    if let Some(&bad) = gap_series.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
        return Err(Error::contract(format!(
            "fit_linear_rate: every gap must be positive and finite, got {bad}"
        )));
    }
    let n = gap_series.len() as f64;
    let mut sum_t = 0.0;
    let mut sum_y = 0.0;
    let mut sum_tt = 0.0;
    let mut sum_ty = 0.0;
    for (t, &gap) in gap_series.iter().enumerate() {
        let x = t as f64;
        let y = gap.ln();
        sum_t += x;
        sum_y += y;
        sum_tt += x * x;
        sum_ty += x * y;
    }
    let denom = n * sum_tt - sum_t * sum_t;
    let slope = (n * sum_ty - sum_t * sum_y) / denom;
    let intercept = (sum_y - slope * sum_t) / n;
    let mut residual_sq = 0.0;
    for (t, &gap) in gap_series.iter().enumerate() {
        let predicted = intercept + slope * t as f64;
        let err = gap.ln() - predicted;
        residual_sq += err * err;
    }
    Ok(RateFit {
        rho: slope.exp(),
        scale: intercept.exp(),
        residual: (residual_sq / n).sqrt(),
    })
}

/// Audits a recorded sequential run against one of the two bounds.
///
/// The strongly convex audit compares the measured optimality gap with the
/// bound at every prefix horizon `T′ ≤ T`; the stationarity audit compares
/// the run-average squared gradient norm with its bound at the full
/// horizon. Margins are `bound − measured`. For model classes whose
/// constants are sampled maxima rather than true suprema (the multilayer
/// perceptron), the report is marked unasserted: violations are findings,
/// not failures.
pub fn check_trace_against_bound(
    kind: BoundKind,
    model: &LossModel,
    partition: &Partition,
    clustering: &Clustering,
    run: &RunOutput,
    est: &ConstantEstimates,
    schedule: &Schedule,
) -> Result<BoundReport> {
    let rounds = run.trace.len();
    if run.cluster_sequence.len() != rounds {
        return Err(Error::contract(
            "bound checks need the per-round cluster sequence of the sequential algorithm",
        ));
    }
    let asserted = !matches!(model, LossModel::Mlp { .. });
    let mut rows = Vec::new();
    match kind {
        BoundKind::StronglyConvexGap => {
            let w_star = est.w_star.as_ref().ok_or_else(|| {
                Error::UnsupportedModel(
                    "the strongly convex audit needs a computed global minimizer, \
                     unavailable for this model class"
                        .into(),
                )
            })?;
            let f_star = est.f_star.ok_or_else(|| {
                Error::UnsupportedModel(
                    "the strongly convex audit needs the global minimum value".into(),
                )
            })?;
            if run.iterates.len() != rounds {
                return Err(Error::contract(
                    "bound checks need one recorded iterate per round",
                ));
            }
            let deltas = cluster_loss_offset_series(
                model,
                partition,
                clustering,
                &run.iterates,
                &run.cluster_sequence,
                w_star,
            )?;
            let w0_gap = match run.iterates.first() {
                Some(w0) => w0.dist_sq(w_star)?,
                None => run.final_model.dist_sq(w_star)?,
            };
            let weights = partition.global_weights();
            let (final_loss, _) =
                global_loss_and_grad(model, &run.final_model, partition.shards(), &weights)?;
            for horizon in 0..=rounds {
                let measured = if horizon < rounds {
                    run.trace[horizon].loss - f_star
                } else {
                    final_loss - f_star
                };
                let bound = strongly_convex_gap_bound(
                    est,
                    schedule,
                    &run.cluster_sequence[..horizon],
                    &deltas[..horizon],
                    w0_gap,
                )?;
                rows.push(BoundRow {
                    horizon: horizon as u64,
                    measured,
                    bound,
                    margin: bound - measured,
                });
            }
        }
        BoundKind::Stationarity => {
            if rounds == 0 {
                return Err(Error::contract(
                    "the stationarity audit needs at least one recorded round",
                ));
            }
            let measured =
                run.trace.iter().map(|row| row.grad_sq_norm).sum::<f64>() / rounds as f64;
            // Unknown minima are floored at zero: all supported losses are
            // nonnegative, so the resulting larger initial gap keeps the
            // bound valid.
            let initial_gap = run.trace[0].loss - est.f_star.unwrap_or(0.0);
            let bound = stationarity_bound(est, schedule, &run.cluster_sequence, initial_gap)?;
            rows.push(BoundRow {
                horizon: rounds as u64,
                measured,
                bound,
                margin: bound - measured,
            });
        }
    }
    let holds = rows.iter().all(|row| row.margin >= 0.0);
    Ok(BoundReport {
        kind,
        rows,
        holds,
        asserted,
        estimates: est.clone(),
    })
}

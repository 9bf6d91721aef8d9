//! Loss models (least squares, regularized logistic, one-hidden-layer
//! perceptron) with closed-form gradients, plus per-client / per-batch /
//! global aggregation and the exact weighted least-squares minimizer.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ModelVector;

/// One labeled example: features and a scalar target (real value for
/// regression, 0/1 class index for binary classification).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Sample { x, y }
    }
}

/// A non-empty ordered batch of samples drawn from one client's shard.
#[derive(Debug, Clone)]
pub struct SampleBatch<'a> {
    samples: Vec<&'a Sample>,
}

impl<'a> SampleBatch<'a> {
    pub fn new(samples: Vec<&'a Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::contract("SampleBatch: batch must be non-empty"));
        }
        Ok(SampleBatch { samples })
    }

    /// Batch over a whole shard, in shard order.
    pub fn full(shard: &'a [Sample]) -> Result<Self> {
        SampleBatch::new(shard.iter().collect())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[&'a Sample] {
        &self.samples
    }
}

/// The loss families the simulator understands.
///
/// * `Quadratic`: `½ (w·x − y)²` — convex, exactly solvable.
/// * `Logistic`: `log(1 + exp(−s·(w·x))) + (ridge/2)‖w‖²` with
///   `s = 2y − 1` mapping labels {0,1} to signs — strongly convex when
///   `ridge > 0`.
/// * `Mlp`: one hidden tanh layer with a squared-error scalar output —
///   smooth but non-convex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LossModel {
    Quadratic { dim: usize },
    Logistic { dim: usize, ridge: f64 },
    Mlp { input_dim: usize, hidden: usize },
}

/// `log(1 + exp(-m))` evaluated without overflow for any margin.
fn softplus_neg(margin: f64) -> f64 {
    if margin >= 0.0 {
        (-margin).exp().ln_1p()
    } else {
        -margin + margin.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LossModel {
    /// Number of trainable parameters.
    pub fn dim(&self) -> usize {
        match self {
            LossModel::Quadratic { dim } => *dim,
            LossModel::Logistic { dim, .. } => *dim,
            LossModel::Mlp { input_dim, hidden } => hidden * input_dim + 2 * hidden + 1,
        }
    }

    /// Feature dimension samples must carry.
    pub fn input_dim(&self) -> usize {
        match self {
            LossModel::Quadratic { dim } => *dim,
            LossModel::Logistic { dim, .. } => *dim,
            LossModel::Mlp { input_dim, .. } => *input_dim,
        }
    }

    /// Validates internal configuration (dimensions, ridge sign).
    pub fn validate(&self) -> Result<()> {
        match self {
            LossModel::Quadratic { dim } | LossModel::Logistic { dim, .. } if *dim == 0 => {
                Err(Error::contract("loss model: dim must be positive"))
            }
            LossModel::Logistic { ridge, .. } if !(ridge.is_finite() && *ridge >= 0.0) => Err(
                Error::contract(format!("loss model: ridge must be ≥ 0, got {ridge}")),
            ),
            LossModel::Mlp { input_dim, hidden } if *input_dim == 0 || *hidden == 0 => Err(
                Error::contract("loss model: mlp needs positive input_dim and hidden"),
            ),
            _ => Ok(()),
        }
    }

    fn check_shapes(&self, weights: &ModelVector, sample: &Sample) -> Result<()> {
        if weights.dim() != self.dim() {
            return Err(Error::contract(format!(
                "loss: weight dimension {} does not match model dimension {}",
                weights.dim(),
                self.dim()
            )));
        }
        if sample.x.len() != self.input_dim() {
            return Err(Error::contract(format!(
                "loss: sample feature dimension {} does not match model input dimension {}",
                sample.x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Raw model output for one input (the pre-threshold prediction).
    /// For the logistic model this is the class-1 probability.
    pub fn predict(&self, weights: &ModelVector, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::contract(format!(
                "predict: feature dimension {} does not match model input dimension {}",
                x.len(),
                self.input_dim()
            )));
        }
        match self {
            LossModel::Quadratic { .. } => {
                Ok(weights.values().iter().zip(x).map(|(w, xi)| w * xi).sum())
            }
            LossModel::Logistic { .. } => {
                let z: f64 = weights.values().iter().zip(x).map(|(w, xi)| w * xi).sum();
                Ok(sigmoid(z))
            }
            LossModel::Mlp { input_dim, hidden } => {
                let (out, _) = mlp_forward(*input_dim, *hidden, weights.values(), x);
                Ok(out)
            }
        }
    }
}

/// MLP parameter layout inside the flat weight vector:
/// `[W1 (hidden × input, row-major), b1 (hidden), w2 (hidden), b2 (1)]`.
fn mlp_forward(input_dim: usize, hidden: usize, w: &[f64], x: &[f64]) -> (f64, Vec<f64>) {
    let w1 = &w[0..hidden * input_dim];
    let b1 = &w[hidden * input_dim..hidden * input_dim + hidden];
    let w2 = &w[hidden * input_dim + hidden..hidden * input_dim + 2 * hidden];
    let b2 = w[hidden * input_dim + 2 * hidden];
    let mut activations = Vec::with_capacity(hidden);
    for i in 0..hidden {
        let mut pre = b1[i];
        for (j, xj) in x.iter().enumerate() {
            pre += w1[i * input_dim + j] * xj;
        }
        activations.push(pre.tanh());
    }
    let mut out = b2;
    for i in 0..hidden {
        out += w2[i] * activations[i];
    }
    (out, activations)
}

/// Loss and gradient of one sample under the given model.
pub fn sample_loss_and_grad(
    model: &LossModel,
    weights: &ModelVector,
    sample: &Sample,
) -> Result<(f64, ModelVector)> {
    model.check_shapes(weights, sample)?;
    match model {
        LossModel::Quadratic { .. } => {
            let pred: f64 = weights
                .values()
                .iter()
                .zip(&sample.x)
                .map(|(w, x)| w * x)
                .sum();
            let residual = pred - sample.y;
            let loss = 0.5 * residual * residual;
            let grad: Vec<f64> = sample.x.iter().map(|x| residual * x).collect();
            Ok((loss, ModelVector::new(grad)?))
        }
        LossModel::Logistic { ridge, .. } => {
            let sign = 2.0 * sample.y - 1.0;
            let z: f64 = weights
                .values()
                .iter()
                .zip(&sample.x)
                .map(|(w, x)| w * x)
                .sum();
            let margin = sign * z;
            let loss = softplus_neg(margin) + 0.5 * ridge * weights.norm_sq();
            // d/d margin of log(1+exp(−margin)) is −σ(−margin).
            let coeff = -sigmoid(-margin) * sign;
            let grad: Vec<f64> = sample
                .x
                .iter()
                .zip(weights.values())
                .map(|(x, w)| coeff * x + ridge * w)
                .collect();
            Ok((loss, ModelVector::new(grad)?))
        }
        LossModel::Mlp { input_dim, hidden } => {
            let (out, activations) = mlp_forward(*input_dim, *hidden, weights.values(), &sample.x);
            let err = out - sample.y;
            let loss = 0.5 * err * err;
            let w = weights.values();
            let w2 = &w[hidden * input_dim + hidden..hidden * input_dim + 2 * hidden];
            let mut grad = vec![0.0; weights.dim()];
            for i in 0..*hidden {
                let d_act = err * w2[i] * (1.0 - activations[i] * activations[i]);
                for (j, xj) in sample.x.iter().enumerate() {
                    grad[i * input_dim + j] = d_act * xj;
                }
                grad[hidden * input_dim + i] = d_act; // b1
                grad[hidden * input_dim + hidden + i] = err * activations[i]; // w2
            }
            grad[hidden * input_dim + 2 * hidden] = err; // b2
            Ok((loss, ModelVector::new(grad)?))
        }
    }
}

/// Mean loss and mean gradient over one client's full shard.
pub fn client_loss_and_grad(
    model: &LossModel,
    weights: &ModelVector,
    shard: &[Sample],
) -> Result<(f64, ModelVector)> {
    if shard.is_empty() {
        return Err(Error::EmptyShard(usize::MAX));
    }
    let mut loss_sum = 0.0;
    let mut grad_sum = ModelVector::zeros(model.dim());
    for sample in shard {
        let (loss, grad) = sample_loss_and_grad(model, weights, sample)?;
        loss_sum += loss;
        grad_sum.add_scaled_in_place(1.0, &grad)?;
    }
    let inv = 1.0 / shard.len() as f64;
    Ok((loss_sum * inv, grad_sum.scale(inv)))
}

/// Mean gradient over a drawn batch (the stochastic gradient a client
/// uploads during one local step).
pub fn batch_grad(
    model: &LossModel,
    weights: &ModelVector,
    batch: &SampleBatch<'_>,
) -> Result<ModelVector> {
    let mut grad_sum = ModelVector::zeros(model.dim());
    for sample in batch.samples() {
        let (_, grad) = sample_loss_and_grad(model, weights, sample)?;
        grad_sum.add_scaled_in_place(1.0, &grad)?;
    }
    Ok(grad_sum.scale(1.0 / batch.len() as f64))
}

fn check_weights(shards: &[Vec<Sample>], weights: &[f64]) -> Result<()> {
    if shards.len() != weights.len() {
        return Err(Error::contract(format!(
            "global loss: {} shards but {} weights",
            shards.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::contract(
            "global loss: weights must be finite and non-negative",
        ));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::contract(format!(
            "global loss: weights must sum to 1 within 1e-12, got {total}"
        )));
    }
    Ok(())
}

/// Weighted objective `Σ_n weight_n · client_loss_n(w)` and its gradient.
/// Clients are folded in ascending index order so results are bitwise
/// reproducible.
pub fn global_loss_and_grad(
    model: &LossModel,
    weights: &ModelVector,
    shards: &[Vec<Sample>],
    client_weights: &[f64],
) -> Result<(f64, ModelVector)> {
    check_weights(shards, client_weights)?;
    let mut loss = 0.0;
    let mut grad = ModelVector::zeros(model.dim());
    for (n, shard) in shards.iter().enumerate() {
        if shard.is_empty() {
            return Err(Error::EmptyShard(n));
        }
        let (client_loss, client_grad) = client_loss_and_grad(model, weights, shard)?;
        loss += client_weights[n] * client_loss;
        grad.add_scaled_in_place(client_weights[n], &client_grad)?;
    }
    Ok((loss, grad))
}

/// Fraction of samples, pooled over all shards, that the model classifies
/// correctly. Logistic predicts class 1 on a nonnegative margin; the
/// perceptron predicts class 1 when its scalar output is at least ½.
/// The quadratic model is a regressor and has no accuracy.
pub fn classification_accuracy(
    model: &LossModel,
    weights: &ModelVector,
    shards: &[Vec<Sample>],
) -> Result<f64> {
    if shards.is_empty() {
        return Err(Error::contract("classification_accuracy: no shards given"));
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (n, shard) in shards.iter().enumerate() {
        if shard.is_empty() {
            return Err(Error::EmptyShard(n));
        }
        for sample in shard {
            model.check_shapes(weights, sample)?;
            let predicts_one = match model {
                LossModel::Quadratic { .. } => {
                    return Err(Error::UnsupportedModel(
                        "the quadratic model is a regressor; accuracy is undefined".into(),
                    ))
                }
                LossModel::Logistic { .. } => {
                    let z: f64 = weights
                        .values()
                        .iter()
                        .zip(&sample.x)
                        .map(|(w, x)| w * x)
                        .sum();
                    z >= 0.0
                }
                LossModel::Mlp { input_dim, hidden } => {
                    let (out, _) = mlp_forward(*input_dim, *hidden, weights.values(), &sample.x);
                    out >= 0.5
                }
            };
            if predicts_one == (sample.y >= 0.5) {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

/// Exact minimizer of the weighted least-squares objective via the normal
/// equations `(Σ_n γ_n · X_nᵀX_n / D_n) w = Σ_n γ_n · X_nᵀy_n / D_n`.
pub fn quadratic_minimizer(
    model: &LossModel,
    shards: &[Vec<Sample>],
    client_weights: &[f64],
) -> Result<ModelVector> {
    let dim = match model {
        LossModel::Quadratic { dim } => *dim,
        other => {
            return Err(Error::UnsupportedModel(format!(
                "quadratic_minimizer requires the quadratic model, got {other:?}"
            )))
        }
    };
    check_weights(shards, client_weights)?;
    let mut lhs = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for (n, shard) in shards.iter().enumerate() {
        if shard.is_empty() {
            return Err(Error::EmptyShard(n));
        }
        let scale = client_weights[n] / shard.len() as f64;
        for sample in shard {
            if sample.x.len() != dim {
                return Err(Error::contract(format!(
                    "quadratic_minimizer: sample feature dimension {} does not match model \
                     dimension {dim}",
                    sample.x.len()
                )));
            }
            for i in 0..dim {
                for j in 0..dim {
                    lhs[(i, j)] += scale * sample.x[i] * sample.x[j];
                }
                rhs[i] += scale * sample.y * sample.x[i];
            }
        }
    }
    let solution = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("weighted normal equations".into()))?;
    ModelVector::new(solution.iter().copied().collect())
}

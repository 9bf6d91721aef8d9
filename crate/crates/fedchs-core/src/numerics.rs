//! Dense model vectors, reproducible random streams, and gradient-checking
//! helpers used by every other module.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default step used by [`finite_diff_grad`] when callers have no reason to
/// pick another one.
pub const DEFAULT_FD_EPS: f64 = 1e-5;

/// Floor used by [`relative_error`] so the denominator never vanishes.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-12;

/// A dense parameter vector. Entries are always finite; constructors reject
/// NaN and infinity so downstream arithmetic can assume clean inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVector {
    values: Vec<f64>,
}

impl ModelVector {
    /// Builds a vector after checking every entry is finite.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    component: i,
                    detail: format!("value {v} is not finite"),
                });
            }
        }
        Ok(ModelVector { values })
    }

    /// The all-zero vector of the given dimension.
    pub fn zeros(dim: usize) -> Self {
        ModelVector {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    fn check_dim(&self, other: &ModelVector, op: &str) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::contract(format!(
                "{op}: dimension mismatch ({} vs {})",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &ModelVector) -> Result<ModelVector> {
        self.check_dim(other, "add")?;
        Ok(ModelVector {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &ModelVector) -> Result<ModelVector> {
        self.check_dim(other, "sub")?;
        Ok(ModelVector {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn scale(&self, factor: f64) -> ModelVector {
        ModelVector {
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// `self + factor * other`, the workhorse of every descent step.
    pub fn add_scaled(&self, factor: f64, other: &ModelVector) -> Result<ModelVector> {
        self.check_dim(other, "add_scaled")?;
        Ok(ModelVector {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + factor * b)
                .collect(),
        })
    }

    /// In-place `self += factor * other`; used in gradient accumulation where
    /// summation order must stay fixed (ascending client index).
    pub fn add_scaled_in_place(&mut self, factor: f64, other: &ModelVector) -> Result<()> {
        self.check_dim(other, "add_scaled_in_place")?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &ModelVector) -> Result<f64> {
        self.check_dim(other, "dot")?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Squared Euclidean distance to another vector.
    pub fn dist_sq(&self, other: &ModelVector) -> Result<f64> {
        self.check_dim(other, "dist_sq")?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    /// Returns an error naming the first non-finite component, if any.
    pub fn ensure_finite(&self) -> Result<()> {
        for (i, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    component: i,
                    detail: format!("value {v} is not finite"),
                });
            }
        }
        Ok(())
    }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-12)`: scale-free disagreement between two
/// vectors, used by every gradient-oracle test.
pub fn relative_error(a: &ModelVector, b: &ModelVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::contract(format!(
            "relative_error: dimension mismatch ({} vs {})",
            a.dim(),
            b.dim()
        )));
    }
    let diff = a.sub(b)?;
    let denom = a.norm().max(b.norm()).max(RELATIVE_ERROR_FLOOR);
    Ok(diff.norm() / denom)
}

/// Central-difference gradient of a black-box loss. `eps` must lie in
/// `[1e-8, 1e-3]`; outside that range the estimate is dominated by either
/// roundoff or truncation error and the call is rejected.
pub fn finite_diff_grad<F>(loss: F, at: &ModelVector, eps: f64) -> Result<ModelVector>
where
    F: Fn(&ModelVector) -> f64,
{
    if !(1e-8..=1e-3).contains(&eps) {
        return Err(Error::contract(format!(
            "finite_diff_grad: eps {eps} outside [1e-8, 1e-3]"
        )));
    }
    let mut grad = Vec::with_capacity(at.dim());
    let mut probe = at.clone();
    for i in 0..at.dim() {
        let original = probe.values[i];
        probe.values[i] = original + eps;
        let up = loss(&probe);
        probe.values[i] = original - eps;
        let down = loss(&probe);
        probe.values[i] = original;
        let slope = (up - down) / (2.0 * eps);
        if !slope.is_finite() {
            return Err(Error::NonFinite {
                component: i,
                detail: format!("finite differences produced {slope} (loss values {up}, {down})"),
            });
        }
        grad.push(slope);
    }
    ModelVector::new(grad)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded random stream with cheap, collision-resistant substream derivation.
///
/// Every stochastic site in the simulator owns a substream derived from the
/// run seed and a tag path (for batch draws the path is
/// `[domain, client, round, step]`), so evaluation order can never perturb
/// the draws another site sees. Identical seed and draw order produce
/// identical values on every platform.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    draws: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        RandomStream {
            seed,
            draws: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Derives an independent stream from this stream's seed and a tag path.
    /// The parent stream is not consumed or advanced.
    pub fn substream(&self, tags: &[u64]) -> RandomStream {
        let mut state = splitmix64(self.seed ^ 0xA5A5_A5A5_5A5A_5A5A);
        for &tag in tags {
            state = splitmix64(state ^ tag);
        }
        RandomStream::new(state)
    }

    /// Seed this stream was built from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of draws made so far.
    pub fn position(&self) -> u64 {
        self.draws
    }

    pub fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.rng.next_u64()
    }

    /// Uniform draw from `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.draws += 1;
        self.rng.gen::<f64>()
    }

    /// Standard normal draw.
    pub fn next_normal(&mut self) -> f64 {
        self.draws += 1;
        StandardNormal.sample(&mut self.rng)
    }

    /// Gamma(shape, 1) draw; the building block for Dirichlet sampling.
    pub fn next_gamma(&mut self, shape: f64) -> Result<f64> {
        if !(shape.is_finite() && shape > 0.0) {
            return Err(Error::contract(format!(
                "next_gamma: shape must be positive and finite, got {shape}"
            )));
        }
        let gamma =
            Gamma::new(shape, 1.0).map_err(|e| Error::contract(format!("next_gamma: {e}")))?;
        self.draws += 1;
        Ok(gamma.sample(&mut self.rng))
    }

    /// Uniform draw from `0..bound`.
    pub fn next_range(&mut self, bound: usize) -> Result<usize> {
        if bound == 0 {
            return Err(Error::contract("next_range: bound must be positive"));
        }
        self.draws += 1;
        Ok(self.rng.gen_range(0..bound))
    }

    /// Draws `count` distinct indices from `0..population`, returned in
    /// ascending order so downstream summation order is fixed.
    pub fn sample_without_replacement(
        &mut self,
        population: usize,
        count: usize,
    ) -> Result<Vec<usize>> {
        if count > population {
            return Err(Error::contract(format!(
                "sample_without_replacement: count {count} exceeds population {population}"
            )));
        }
        let mut pool: Vec<usize> = (0..population).collect();
        for i in 0..count {
            let j = i + self.next_range(population - i)?;
            pool.swap(i, j);
        }
        let mut chosen: Vec<usize> = pool[..count].to_vec();
        chosen.sort_unstable();
        Ok(chosen)
    }

    /// Fisher-Yates shuffle of a slice.
    pub fn shuffle<T>(&mut self, items: &mut [T]) -> Result<()> {
        for i in (1..items.len()).rev() {
            let j = self.next_range(i + 1)?;
            items.swap(i, j);
        }
        Ok(())
    }
}

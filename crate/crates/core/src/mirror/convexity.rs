use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ConjugateAt, MirrorMapParams, MirrorMapSpec};
use crate::array::Array64;
use crate::diff;
use crate::error::Result;

const TOL: f64 = 1e-9;

/// Outcome of a sampled convexity check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub samples: usize,
    /// Pairs breaking `h(tz₁+(1−t)z₂) ≤ t·h(z₁)+(1−t)·h(z₂)`.
    pub value_violations: usize,
    /// Pairs breaking `(∇h(z₁)−∇h(z₂))ᵀ(z₁−z₂) ≥ 0`.
    pub monotonicity_violations: usize,
    /// Largest amount by which either inequality failed, 0 if none did.
    pub worst_gap: f64,
}

impl ConvexityReport {
    pub fn violations(&self) -> usize {
        self.value_violations + self.monotonicity_violations
    }
}

/// Uniform sample from the ball of radius `r` in `d` dimensions.
pub(crate) fn sample_ball(rng: &mut ChaCha8Rng, d: usize, r: f64) -> Array64 {
    let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let u: f64 = rng.random();
    let s = r * u.powf(1.0 / d as f64) / n;
    Array64::from_parts(vec![d], dir.into_iter().map(|x| x * s).collect())
}

/// Sampled convexity certificate for `h*(·; θ_h)`.
pub fn check_convexity(
    params: &MirrorMapParams,
    spec: &MirrorMapSpec,
    n_samples: usize,
    radius: f64,
    rng_seed: u64,
) -> Result<ConvexityReport> {
    params.validate(spec)?;
    let flat = params.to_flat();
    let f = ConjugateAt { spec, theta: flat.data() };
    check_convexity_with(|z| diff::value_and_grad(&f, z), spec.input_dim, n_samples, radius, rng_seed)
}

/// Same check for any function given as `z ↦ (value, gradient)`.
pub fn check_convexity_with(
    mut eval: impl FnMut(&Array64) -> Result<(f64, Array64)>,
    d: usize,
    n_samples: usize,
    radius: f64,
    rng_seed: u64,
) -> Result<ConvexityReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut report = ConvexityReport {
        samples: n_samples,
        value_violations: 0,
        monotonicity_violations: 0,
        worst_gap: 0.0,
    };
    for _ in 0..n_samples {
        let z1 = sample_ball(&mut rng, d, radius);
        let z2 = sample_ball(&mut rng, d, radius);
        let t: f64 = rng.random();
        let mid = z1.scaled(t).axpy(1.0 - t, &z2);
        let (h1, g1) = eval(&z1)?;
        let (h2, g2) = eval(&z2)?;
        let (hm, _) = eval(&mid)?;
        let excess = hm - (t * h1 + (1.0 - t) * h2);
        if excess > TOL {
            report.value_violations += 1;
        }
        let mono = g1.axpy(-1.0, &g2).dot(&z1.axpy(-1.0, &z2));
        if mono < -TOL {
            report.monotonicity_violations += 1;
        }
        report.worst_gap = report.worst_gap.max(excess).max(-mono);
    }
    Ok(report)
}

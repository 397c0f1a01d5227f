//! K-step task-level optimizers.
//!
//! `mida` runs mirror descent in the dual space of the learned conjugate:
//! `φᵏ = ∇₁h*(zᵏ)`, `zᵏ⁺¹ = zᵏ − α∇ℓ^trn(φᵏ)`. The other modes are primal
//! baselines that read `θ_z` as the primal initialization.

use std::cell::Cell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::Array64;
use crate::diff;
use crate::error::{Error, Result};
use crate::mirror::{self, effective_p, MirrorMapParams, MirrorMapSpec};
use crate::tasks::{Split, TaskFamily, TaskInstance, TaskLoss};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptationMode {
    /// Mirror descent through the learned conjugate.
    Mida,
    /// Plain gradient descent.
    Gd,
    /// Gradient descent preconditioned by the effective `P` of `θ_h`.
    Pgd,
    /// Gradient descent with an isotropic Gaussian pull toward `θ_z`.
    GdExplicitPrior,
}

fn default_mode() -> AdaptationMode {
    AdaptationMode::Mida
}

fn default_steps() -> usize {
    5
}

fn default_alpha() -> f64 {
    1e-2
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationConfig {
    /// Number of task-level steps `K`.
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_mode")]
    pub mode: AdaptationMode,
    /// `λ` of the explicit-prior mode.
    #[serde(default)]
    pub prior_strength: f64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self { steps: default_steps(), alpha: default_alpha(), mode: default_mode(), prior_strength: 0.0 }
    }
}

impl AdaptationConfig {
    pub fn mida(steps: usize, alpha: f64) -> Self {
        Self { steps, alpha, mode: AdaptationMode::Mida, prior_strength: 0.0 }
    }

    pub fn with_mode(mut self, mode: AdaptationMode) -> Self {
        self.mode = mode;
        self
    }

    /// `α = 0` is accepted: it turns every step into a no-op.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.prior_strength.is_finite() && self.prior_strength >= 0.0) {
            return Err(Error::Config(format!(
                "prior_strength must be finite and >= 0, got {}",
                self.prior_strength
            )));
        }
        Ok(())
    }
}

/// Meta-parameters `θ = {θ_z, θ_h}` with the architecture of `θ_h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaParams {
    pub theta_z: Array64,
    pub theta_h: MirrorMapParams,
    pub spec: MirrorMapSpec,
}

impl MetaParams {
    pub fn new(theta_z: Array64, theta_h: MirrorMapParams, spec: MirrorMapSpec) -> Result<Self> {
        theta_h.validate(&spec)?;
        if theta_z.shape() != [spec.input_dim] {
            return Err(Error::shape("theta_z", &[spec.input_dim], theta_z.shape()));
        }
        Ok(Self { theta_z, theta_h, spec })
    }

    /// Draws `θ_z` from the family's initializer and `θ_h` from
    /// [`mirror::init_params`], both from `seed`.
    pub fn init(family: &TaskFamily, spec: &MirrorMapSpec, seed: u64) -> Result<Self> {
        let d = family.param_dim();
        if spec.input_dim != d {
            return Err(Error::shape("mirror map input_dim vs task parameters", &[d], &[spec.input_dim]));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let theta_z = family.initial_point(&mut rng);
        let theta_h = mirror::init_params(spec, seed)?;
        Self::new(theta_z, theta_h, spec.clone())
    }

    pub fn dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn theta_h_flat(&self) -> Array64 {
        self.theta_h.to_flat()
    }

    pub(crate) fn check_task(&self, task: &TaskInstance) -> Result<()> {
        let d = task.param_dim();
        if d != self.dim() || self.theta_z.len() != d {
            return Err(Error::shape("task parameters vs meta-parameters", &[d], &[self.theta_z.len()]));
        }
        Ok(())
    }
}

/// Full K-step trajectory. In primal modes the dual states repeat the
/// primal ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationTrace {
    pub dual_states: Vec<Array64>,
    pub primal_states: Vec<Array64>,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
}

thread_local! {
    static RETAINED: Cell<usize> = const { Cell::new(0) };
}

/// Number of per-step state vectors retained by traces and unrolled
/// records on this thread since the last reset.
pub fn retained_states() -> usize {
    RETAINED.with(|c| c.get())
}

pub fn reset_retained_states() {
    RETAINED.with(|c| c.set(0));
}

pub(crate) fn note_retained(n: usize) {
    RETAINED.with(|c| c.set(c.get() + n));
}

pub(crate) fn train_value_and_grad(task: &TaskInstance, phi: &Array64) -> Result<(f64, Array64)> {
    diff::value_and_grad(&TaskLoss::new(task, Split::Train), phi)
}

pub(crate) fn val_value(task: &TaskInstance, phi: &Array64) -> Result<f64> {
    diff::evaluate(&TaskLoss::new(task, Split::Val), &[phi])
}

pub(crate) fn step(x: &Array64, alpha: f64, dir: &Array64) -> Result<Array64> {
    let data = x.data().iter().zip(dir.data()).map(|(a, b)| a - alpha * b).collect();
    Array64::checked(x.shape().to_vec(), data, "adaptation step")
}

/// Runs `K` task-level steps from `θ` and records the whole trajectory.
pub fn adapt(task: &TaskInstance, theta: &MetaParams, config: &AdaptationConfig) -> Result<AdaptationTrace> {
    config.validate()?;
    theta.check_task(task)?;
    let k_max = config.steps;
    let mut trace = AdaptationTrace {
        dual_states: Vec::with_capacity(k_max + 1),
        primal_states: Vec::with_capacity(k_max + 1),
        train_losses: Vec::with_capacity(k_max + 1),
        val_losses: Vec::with_capacity(k_max + 1),
    };
    let alpha = config.alpha;
    match config.mode {
        AdaptationMode::Mida => {
            let flat = theta.theta_h_flat();
            let mut z = theta.theta_z.clone();
            for k in 0..=k_max {
                let phi = mirror::inverse_map_flat(&z, flat.data(), &theta.spec)?;
                let (trn, g) = train_value_and_grad(task, &phi)?;
                trace.train_losses.push(trn);
                trace.val_losses.push(val_value(task, &phi)?);
                trace.primal_states.push(phi);
                let next = if k < k_max { Some(step(&z, alpha, &g)?) } else { None };
                trace.dual_states.push(z);
                match next {
                    Some(n) => z = n,
                    None => break,
                }
            }
        }
        mode => {
            let p = match mode {
                AdaptationMode::Pgd => Some(effective_p(&theta.theta_h, &theta.spec)?.ok_or_else(|| {
                    Error::Precondition("pgd mode needs a mirror map with the quadratic term".into())
                })?),
                _ => None,
            };
            let prior = &theta.theta_z;
            let mut phi = theta.theta_z.clone();
            for k in 0..=k_max {
                let (trn, g) = train_value_and_grad(task, &phi)?;
                trace.train_losses.push(trn);
                trace.val_losses.push(val_value(task, &phi)?);
                let next = if k < k_max {
                    let dir = match mode {
                        AdaptationMode::Gd => g,
                        AdaptationMode::Pgd => p.as_ref().expect("checked above").matvec(&g)?,
                        AdaptationMode::GdExplicitPrior => g.axpy(config.prior_strength, &phi.axpy(-1.0, prior)),
                        AdaptationMode::Mida => unreachable!(),
                    };
                    Some(step(&phi, alpha, &dir)?)
                } else {
                    None
                };
                trace.dual_states.push(phi.clone());
                trace.primal_states.push(phi);
                match next {
                    Some(n) => phi = n,
                    None => break,
                }
            }
        }
    }
    note_retained(trace.dual_states.len() + trace.primal_states.len());
    Ok(trace)
}

/// `z^K` of mida adaptation, overwriting a single state in place.
pub(crate) fn final_dual_state(task: &TaskInstance, theta: &MetaParams, theta_h: &[f64], config: &AdaptationConfig) -> Result<Array64> {
    let mut z = theta.theta_z.clone();
    for _ in 0..config.steps {
        let phi = mirror::inverse_map_flat(&z, theta_h, &theta.spec)?;
        let (_, g) = train_value_and_grad(task, &phi)?;
        z = step(&z, config.alpha, &g)?;
    }
    Ok(z)
}

/// Minimizer of `⟨∇ℓ^trn(φᵏ), φ − φᵏ⟩ + (1/2α)(φ − φᵏ)ᵀP⁻¹(φ − φᵏ)`,
/// obtained by forming `P⁻¹` and solving against it.
pub fn greedy_step_oracle(task: &TaskInstance, phi_k: &Array64, alpha: f64, p: &Array64) -> Result<Array64> {
    let d = task.param_dim();
    if phi_k.shape() != [d] {
        return Err(Error::shape("phi_k", &[d], phi_k.shape()));
    }
    if p.shape() != [d, d] {
        return Err(Error::shape("preconditioner", &[d, d], p.shape()));
    }
    let scale = p.data().iter().fold(1.0_f64, |a, b| a.max(b.abs()));
    if !p.is_symmetric(1e-12 * scale) {
        return Err(Error::InvalidArgument("preconditioner must be symmetric".into()));
    }
    let chol = p
        .as_dmatrix()
        .cholesky()
        .ok_or_else(|| Error::Singular("preconditioner is not positive definite".into()))?;
    let p_inv = chol.inverse();
    let (_, g) = train_value_and_grad(task, phi_k)?;
    // Stationarity: P⁻¹(φ − φᵏ)/α = −∇ℓ.
    let rhs = nalgebra::DVector::from_column_slice(g.data()) * (-alpha);
    let delta = p_inv
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("P⁻¹ is singular".into()))?;
    let out = phi_k.data().iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
    Array64::checked(vec![d], out, "greedy_step_oracle")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mirror::{identity_map, quadratic_map};

    fn scalar_task() -> TaskInstance {
        let z = Array64::zeros(&[1]);
        TaskInstance::quadratic(0, Array64::identity(1), z.clone(), z).unwrap()
    }

    fn v(xs: &[f64]) -> Array64 {
        Array64::vector(xs.to_vec()).unwrap()
    }

    #[test]
    fn scalar_contraction() {
        let (spec, params) = identity_map(1).unwrap();
        let theta = MetaParams::new(v(&[1.0]), params, spec).unwrap();
        let trace = adapt(&scalar_task(), &theta, &AdaptationConfig::mida(2, 0.1)).unwrap();
        let zs: Vec<f64> = trace.dual_states.iter().map(|z| z.data()[0]).collect();
        assert_eq!(zs.len(), 3);
        assert_eq!(zs[0], 1.0);
        assert!((zs[1] - 0.9).abs() < 1e-15 && (zs[2] - 0.81).abs() < 1e-15);
    }

    #[test]
    fn zero_steps_is_initialization_only() {
        let (spec, params) = identity_map(1).unwrap();
        let theta = MetaParams::new(v(&[2.0]), params, spec).unwrap();
        for mode in [AdaptationMode::Mida, AdaptationMode::Gd, AdaptationMode::Pgd, AdaptationMode::GdExplicitPrior] {
            let cfg = AdaptationConfig::mida(0, 0.1).with_mode(mode);
            let t = adapt(&scalar_task(), &theta, &cfg).unwrap();
            assert_eq!(t.dual_states.len(), 1);
            assert!((t.primal_states[0].data()[0] - 2.0).abs() < 1e-15);
            assert_eq!(t.train_losses.len(), 1);
            assert!((t.train_losses[0] - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn explicit_prior_step() {
        let (spec, params) = identity_map(1).unwrap();
        let theta = MetaParams::new(v(&[1.0]), params, spec).unwrap();
        let cfg = AdaptationConfig { steps: 2, alpha: 0.1, mode: AdaptationMode::GdExplicitPrior, prior_strength: 1.0 };
        let t = adapt(&scalar_task(), &theta, &cfg).unwrap();
        // Step 1: grad 1, pull 0 → 0.9. Step 2: grad 0.9, pull −0.1 → 0.9 − 0.1·0.8.
        assert!((t.primal_states[2].data()[0] - 0.82).abs() < 1e-15);
    }

    #[test]
    fn greedy_oracle_examples() {
        let p = Array64::from_rows(&[vec![2.0]]).unwrap();
        let out = greedy_step_oracle(&scalar_task(), &v(&[1.0]), 0.1, &p).unwrap();
        assert!((out.data()[0] - 0.8).abs() < 1e-15);
        let gd = greedy_step_oracle(&scalar_task(), &v(&[1.0]), 0.1, &Array64::identity(1)).unwrap();
        assert!((gd.data()[0] - 0.9).abs() < 1e-15);
        let bad = Array64::from_rows(&[vec![-1.0]]).unwrap();
        assert!(matches!(greedy_step_oracle(&scalar_task(), &v(&[1.0]), 0.1, &bad), Err(Error::Singular(_))));
    }

    #[test]
    fn pgd_requires_quadratic_term() {
        let mut spec = MirrorMapSpec::new(1, 1, vec![]);
        spec.include_quadratic = false;
        let params = mirror::init_params(&spec, 0).unwrap();
        let theta = MetaParams::new(v(&[1.0]), params, spec).unwrap();
        let cfg = AdaptationConfig::mida(1, 0.1).with_mode(AdaptationMode::Pgd);
        assert!(matches!(adapt(&scalar_task(), &theta, &cfg), Err(Error::Precondition(_))));
    }

    #[test]
    fn mida_with_quadratic_map_is_pgd() {
        let p = Array64::from_rows(&[vec![1.5, 0.2], vec![0.2, 0.7]]).unwrap();
        let (spec, params) = quadratic_map(&p).unwrap();
        let a = Array64::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let task = TaskInstance::quadratic(0, a, v(&[0.5, -0.2]), v(&[0.4, -0.1])).unwrap();
        let theta = MetaParams::new(v(&[0.3, 0.9]), params, spec).unwrap();
        let mida = adapt(&task, &theta, &AdaptationConfig::mida(5, 0.1)).unwrap();
        // In primal terms PGD starts from ∇h*(θ_z) = Pθ_z.
        let start = MetaParams { theta_z: p.matvec(&theta.theta_z).unwrap(), ..theta.clone() };
        let pgd = adapt(&task, &start, &AdaptationConfig::mida(5, 0.1).with_mode(AdaptationMode::Pgd)).unwrap();
        for (x, y) in mida.primal_states.iter().zip(&pgd.primal_states) {
            assert!(x.max_abs_diff(y) <= 1e-12);
        }
    }
}

//! Convergence constants, the batch smoothness estimator `Ĝ` and the
//! adaptive meta learning rates `β_j = 1/(C_β Ĝ_j)`.

use serde::{Deserialize, Serialize};

use crate::adaptation::{AdaptationConfig, MetaParams};
use crate::array::Array64;
use crate::error::{Error, Result};
use crate::meta_gradient;
use crate::tasks::{loss_grad, Split, TaskInstance};

/// Raw Lipschitz and problem constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryInputs {
    /// Gradient-Lipschitz constant of the task losses.
    pub g_ell: f64,
    /// Hessian-Lipschitz constant of the task losses.
    pub h_ell: f64,
    /// Smoothness of `ℓ ∘ ∇₁h*`.
    pub g_lh: f64,
    /// Gradient-Lipschitz constant of `h*`.
    pub g_h: f64,
    /// Hessian-Lipschitz constant of `h*`.
    pub h_h: f64,
    /// Bound on the task-gradient standard deviation.
    pub sigma: f64,
    /// Task population size `T`.
    pub tasks: usize,
    pub alpha: f64,
    /// Adaptation steps `K`.
    pub steps: usize,
    /// Meta batch size `B` used for `η₁` and `η₃`.
    pub batch_size: usize,
}

impl TheoryInputs {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("G_ell", self.g_ell),
            ("H_ell", self.h_ell),
            ("G_lh", self.g_lh),
            ("G_h", self.g_h),
            ("H_h", self.h_h),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Precondition(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::Precondition(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Precondition(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.tasks == 0 {
            return Err(Error::Precondition("T must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Precondition("B must be >= 1".into()));
        }
        Ok(())
    }
}

/// All derived constants. `None` marks a quantity that is infinite for
/// these inputs (for example `η₁` when `C_G1 = 0`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub inputs: TheoryInputs,
    pub c_beta: f64,
    pub gamma: f64,
    pub c_g1: f64,
    pub c_g2: f64,
    pub zeta: f64,
    pub c_l1: f64,
    pub c_l2: f64,
    pub c_b1: f64,
    pub c_b2: f64,
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
    pub eta3: Option<f64>,
    pub eta4: Option<f64>,
    pub eta5: f64,
    /// `None` when `K = 0` (no upper limit on `α`).
    pub alpha_max: Option<f64>,
    pub b_min: u64,
    pub bhat_min: u64,
}

/// `(2^{1/K} − 1)/(G_h G_ℓ)`, the largest step keeping `γ^K < 2`.
pub fn alpha_max(steps: usize, g_h: f64, g_ell: f64) -> Option<f64> {
    (steps > 0).then(|| (2f64.powf(1.0 / steps as f64) - 1.0) / (g_h * g_ell))
}

/// Step size `((1 + T^{−1/2})^{1/K} − 1)/(G_h G_ℓ)` paired with `C_β = √T`.
pub fn corollary_alpha(tasks: usize, steps: usize, g_h: f64, g_ell: f64) -> Result<f64> {
    if steps == 0 || tasks == 0 {
        return Err(Error::Precondition("needs K >= 1 and T >= 1".into()));
    }
    let t = tasks as f64;
    Ok(((1.0 + 1.0 / t.sqrt()).powf(1.0 / steps as f64) - 1.0) / (g_h * g_ell))
}

pub fn corollary_c_beta(tasks: usize) -> f64 {
    (tasks as f64).sqrt()
}

fn ceil_u64(x: f64) -> u64 {
    if x <= 0.0 {
        0
    } else {
        x.ceil() as u64
    }
}

/// Coefficients `(1/η_odd, η_even/η_odd)` of one gradient-norm term, finite
/// even when `C_G = 0`.
fn eta_ratios(c: &DerivedConstants, c_g: f64, batch_factor: f64) -> (f64, f64) {
    let gk = c.gamma.powi(c.inputs.steps as i32);
    let inv = c.c_beta * c_g / ((2.0 - gk) * batch_factor);
    let ratio = c.c_l2 * inv + gk * gk * c.inputs.g_lh * c.c_beta / batch_factor;
    (inv, ratio)
}

fn batch_factors(c: &DerivedConstants, b: f64) -> (f64, f64) {
    (1.0 - (c.c_b2 + b) / (c.c_b1 * b), 1.0 - (b + 2.0) / (c.c_b1 * b))
}

/// Evaluates every closed-form constant.
pub fn derive_constants(inputs: &TheoryInputs, c_beta: f64) -> Result<DerivedConstants> {
    inputs.validate()?;
    let t_sqrt = (inputs.tasks as f64).sqrt();
    let threshold = (t_sqrt + 1.0) / 2.0;
    if !(c_beta.is_finite() && c_beta > threshold) {
        return Err(Error::Precondition(format!(
            "C_beta must be > (sqrt(T)+1)/2 = {threshold}, got {c_beta}"
        )));
    }
    let k = inputs.steps;
    let kf = k as f64;
    let ghgl = inputs.g_h * inputs.g_ell;
    let amax = alpha_max(k, inputs.g_h, inputs.g_ell);
    if let Some(am) = amax {
        if inputs.alpha >= am {
            return Err(Error::Precondition(format!(
                "alpha must be < alpha_max = (2^(1/K)-1)/(G_h*G_ell) = {am} so that gamma^K < 2; got alpha = {}",
                inputs.alpha
            )));
        }
    }
    let alpha = inputs.alpha;
    let gamma = 1.0 + alpha * ghgl;
    let gk = gamma.powi(k as i32);
    let c = inputs.g_h * inputs.h_ell / inputs.g_ell + inputs.h_h / inputs.g_h;
    let c_g1 = gk * (gk - 1.0) * c;
    let c_g2 = gamma.powi(k as i32 - 1) * ((gamma - 1.0) * c * kf + (gk - 1.0 - alpha * kf * ghgl) * c);
    let zeta = 2.0 * alpha + (gk - gamma) * (t_sqrt + 1.0) / ghgl;
    let c_l1 = gk / (2.0 - gk);
    let c_l2 = inputs.g_lh * zeta + inputs.g_h * t_sqrt;
    let c_b1 = 2.0 * c_beta / (t_sqrt + 1.0);
    let ratio = if c_g2 > 0.0 { (c_g1 / c_g2).max(1.0) } else { 1.0 };
    let c_b2 = 2.0 * c_l1 * c_l1 - 1.0 + 3.0 * (c_l1 - 1.0).powi(2) * ratio;
    let b_min = ceil_u64(c_b2.max(2.0) / (c_b1 - 1.0));
    let sigma2 = inputs.sigma * inputs.sigma;
    let g4k = gk.powi(4);
    let bhat = |c_gj: f64| {
        2.0 * c_gj * c_gj * (inputs.g_lh * zeta + inputs.g_h * (1.0 + t_sqrt)).powi(2) * sigma2
            / (g4k * inputs.g_lh * inputs.g_lh * t_sqrt)
    };
    let bhat_min = ceil_u64(bhat(c_g1).max(bhat(c_g2)));
    let eta5 = 5.0 * c_l1 * c_l1 * c_l2 * c_l2 * sigma2 / (gk * gk * inputs.g_lh * c_b1 * c_beta);

    let mut out = DerivedConstants {
        inputs: *inputs,
        c_beta,
        gamma,
        c_g1,
        c_g2,
        zeta,
        c_l1,
        c_l2,
        c_b1,
        c_b2,
        eta1: None,
        eta2: None,
        eta3: None,
        eta4: None,
        eta5,
        alpha_max: amax,
        b_min,
        bhat_min,
    };
    let (f1, f3) = batch_factors(&out, inputs.batch_size as f64);
    let finite = |x: f64| x.is_finite().then_some(x);
    if c_g1 > 0.0 {
        out.eta1 = finite((2.0 - gk) / (c_beta * c_g1) * f1);
        out.eta2 = finite(c_l2 + gk * gk * (2.0 - gk) * inputs.g_lh / c_g1);
    }
    if c_g2 > 0.0 {
        out.eta3 = finite((2.0 - gk) / (c_beta * c_g2) * f3);
        out.eta4 = finite(c_l2 + gk * gk * (2.0 - gk) * inputs.g_lh / c_g2);
    }
    Ok(out)
}

/// The two right-hand sides bounding `E‖∇₁L(θ^ρ)‖` and `E‖∇₂L(θ^ρ)‖` for a
/// run of `R` rounds with batch size `B`, given `Δ = E[L(θ⁰) − inf L]`.
pub fn convergence_budget(delta: f64, rounds: usize, batch: usize, constants: &DerivedConstants) -> Result<(f64, f64)> {
    if rounds == 0 || batch == 0 {
        return Err(Error::Precondition("R and B must be >= 1".into()));
    }
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::Precondition(format!("Delta must be finite and >= 0, got {delta}")));
    }
    let gk = constants.gamma.powi(constants.inputs.steps as i32);
    if !(gk < 2.0) {
        return Err(Error::Precondition("constants need gamma^K < 2".into()));
    }
    let b = batch as f64;
    let (f1, f3) = batch_factors(constants, b);
    if !(f1 > 0.0 && f3 > 0.0) {
        return Err(Error::Precondition(format!(
            "B = {batch} is too small: need B >= max(C_B2, 2)/(C_B1 - 1) = {}",
            constants.b_min
        )));
    }
    let x = delta / rounds as f64 + constants.eta5 / b;
    let (inv1, ratio21) = eta_ratios(constants, constants.c_g1, f1);
    let (inv3, ratio43) = eta_ratios(constants, constants.c_g2, f3);
    let half = x * inv1 / 2.0;
    let bound_z = half + (half * half + ratio21 * x).sqrt();
    let bound_h = (bound_z * x * inv3 + ratio43 * x).sqrt();
    Ok((bound_z, bound_h))
}

/// `Ĝ_j = C_Gj · mean‖g^K‖ + γ^{2K} G_ℓh` from precomputed norms.
pub fn estimator_from_norms(g_norms: &[f64], constants: &DerivedConstants) -> Result<(f64, f64)> {
    if g_norms.is_empty() {
        return Err(Error::Precondition("estimation batch must be non-empty".into()));
    }
    let mean = g_norms.iter().sum::<f64>() / g_norms.len() as f64;
    let tail = constants.gamma.powi(2 * constants.inputs.steps as i32) * constants.inputs.g_lh;
    Ok((constants.c_g1 * mean + tail, constants.c_g2 * mean + tail))
}

/// Batch estimate of the meta-loss smoothness, using the forward-only
/// `g^K` path for each task.
pub fn estimate_smoothness(
    batch_tasks: &[TaskInstance],
    theta: &MetaParams,
    config: &AdaptationConfig,
    constants: &DerivedConstants,
) -> Result<(f64, f64)> {
    if batch_tasks.is_empty() {
        return Err(Error::Precondition("estimation batch must be non-empty".into()));
    }
    let flat = theta.theta_h_flat();
    let norms = batch_tasks
        .iter()
        .map(|t| {
            theta.check_task(t)?;
            meta_gradient::g_vector_flat(t, theta, flat.data(), config).map(|g| g.norm())
        })
        .collect::<Result<Vec<_>>>()?;
    estimator_from_norms(&norms, constants)
}

/// `β_j = 1/(C_β Ĝ_j)`.
pub fn meta_learning_rates(ghat1: f64, ghat2: f64, c_beta: f64) -> Result<(f64, f64)> {
    for (name, v) in [("Ghat1", ghat1), ("Ghat2", ghat2), ("C_beta", c_beta)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Precondition(format!("{name} must be > 0, got {v}")));
        }
    }
    Ok((1.0 / (c_beta * ghat1), 1.0 / (c_beta * ghat2)))
}

/// `max_probe mean_t ‖∇ℓ_t^val(φ) − mean_s ∇ℓ_s^val(φ)‖²` over a finite
/// task set.
pub fn estimate_sigma(tasks: &[TaskInstance], probes: &[Array64]) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::Precondition("at least one probe point is required".into()));
    }
    if tasks.is_empty() {
        return Err(Error::Precondition("at least one task is required".into()));
    }
    let mut worst = 0.0_f64;
    for phi in probes {
        let grads = tasks
            .iter()
            .map(|t| loss_grad(t, Split::Val, phi))
            .collect::<Result<Vec<_>>>()?;
        let n = grads.len() as f64;
        let mut mean = vec![0.0; phi.len()];
        for g in &grads {
            for (m, x) in mean.iter_mut().zip(g.data()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let var = grads
            .iter()
            .map(|g| g.data().iter().zip(&mean).map(|(x, m)| (x - m).powi(2)).sum::<f64>())
            .sum::<f64>()
            / n;
        worst = worst.max(var);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(alpha: f64, k: usize) -> TheoryInputs {
        TheoryInputs {
            g_ell: 5.0,
            h_ell: 1.0,
            g_lh: 3.0,
            g_h: 2.0,
            h_h: 0.5,
            sigma: 0.3,
            tasks: 16,
            alpha,
            steps: k,
            batch_size: 64,
        }
    }

    #[test]
    fn zero_step_size() {
        let c = derive_constants(&inputs(0.0, 5), 10.0).unwrap();
        assert_eq!((c.gamma, c.c_g1, c.c_g2), (1.0, 0.0, 0.0));
        assert_eq!(c.eta1, None);
        let (gz, gh) = estimator_from_norms(&[1.0, 7.0], &c).unwrap();
        assert_eq!((gz, gh), (3.0, 3.0));
    }

    #[test]
    fn single_step_plug_in() {
        let c = derive_constants(&inputs(0.01, 1), 10.0).unwrap();
        assert!((c.gamma - 1.1).abs() < 1e-15);
        let expect = 1.1 * 0.1 * (2.0 * 1.0 / 5.0 + 0.5 / 2.0);
        assert!((c.c_g1 - expect).abs() < 1e-15);
    }

    #[test]
    fn corollary_step_and_alpha_max() {
        assert_eq!(alpha_max(1, 1.0, 1.0), Some(1.0));
        assert!((corollary_alpha(4, 1, 1.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(alpha_max(0, 1.0, 1.0), None);
        let err = derive_constants(&inputs(0.1, 1), 10.0).unwrap_err();
        assert!(err.to_string().contains("alpha_max"));
    }

    #[test]
    fn c_beta_threshold() {
        assert!(derive_constants(&inputs(0.001, 2), 2.5).is_err());
        assert!(derive_constants(&inputs(0.001, 2), 2.51).is_ok());
    }

    #[test]
    fn rates() {
        assert_eq!(meta_learning_rates(2.0, 4.0, 1.0).unwrap(), (0.5, 0.25));
        assert_eq!(meta_learning_rates(2.0, 4.0, 2.0).unwrap(), (0.25, 0.125));
        assert!(meta_learning_rates(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn budget_shrinks_with_rounds() {
        let c = derive_constants(&inputs(0.001, 2), 10.0).unwrap();
        let (a, _) = convergence_budget(1.0, 100, 64, &c).unwrap();
        let (b, _) = convergence_budget(1.0, 10_000, 64, &c).unwrap();
        assert!(b < a && b >= 0.0);
    }
}

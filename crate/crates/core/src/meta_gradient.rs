//! Exact meta-gradients of `L_t(θ) = ℓ_t^val(∇₁h*(z^K; θ_h))` with respect
//! to `θ_z` and `θ_h`, computed two independent ways.
//!
//! The unrolled path runs an adjoint recursion over stored dual states
//! using only Hessian-vector products. The explicit path materializes the
//! step Jacobians `I − αGᵏ` with `Gᵏ = ∇₁²h*(zᵏ)∇²ℓ^trn(φᵏ)` and the mixed
//! terms `Hᵏ`, then assembles
//!
//! ```text
//! ∇₁L = (I − αG⁰)⋯(I − αG^{K−1}) g^K
//! ∇₂L = −α Σₖ Hᵏ g^K + h^K
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::adaptation::{
    self, note_retained, step, train_value_and_grad, AdaptationConfig, AdaptationMode, MetaParams,
};
use crate::array::Array64;
use crate::diff::{self, SecondOrder};
use crate::error::{Error, Result};
use crate::mirror::{self, MirrorMapSpec};
use crate::tasks::{Split, TaskInstance, TaskLoss};

/// Largest `d` for which the explicit path materializes `d × d` factors.
pub const DEFAULT_DIM_CAP: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaGradient {
    /// `∇₁L_t`, shaped like `θ_z`.
    pub grad_z: Array64,
    /// `∇₂L_t` over the flattened `θ_h`.
    pub grad_h: Array64,
    pub val_loss: f64,
}

/// Materialized pieces of the explicit chain-rule formulas.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainRuleIntermediates {
    pub g_k: Array64,
    /// `I − αGᵏ` for `k = 0..K`.
    pub step_jacobian_factors: Vec<Array64>,
    pub h_k: Array64,
    /// `Hᵏ` (|θ_h| × d) for `k = 0..K`.
    pub h_terms: Vec<Array64>,
}

fn require_mida(config: &AdaptationConfig) -> Result<()> {
    config.validate()?;
    if config.mode != AdaptationMode::Mida {
        return Err(Error::Precondition(
            "meta-gradients are defined for mida mode; express gd/pgd with identity_map/quadratic_map".into(),
        ));
    }
    Ok(())
}

fn loss_hvp(task: &TaskInstance, phi: &Array64, v: &Array64) -> Result<Array64> {
    diff::hessian_vector_product(&TaskLoss::new(task, Split::Train), phi, v)
}

fn val_value_and_grad(task: &TaskInstance, phi: &Array64) -> Result<(f64, Array64)> {
    diff::value_and_grad(&TaskLoss::new(task, Split::Val), phi)
}

/// Forward pass keeping every dual state `z⁰..z^K`.
fn unrolled_forward(task: &TaskInstance, theta: &MetaParams, flat: &[f64], config: &AdaptationConfig) -> Result<Vec<Array64>> {
    let mut zs = Vec::with_capacity(config.steps + 1);
    let mut z = theta.theta_z.clone();
    for _ in 0..config.steps {
        let phi = mirror::inverse_map_flat(&z, flat, &theta.spec)?;
        let (_, g) = train_value_and_grad(task, &phi)?;
        let next = step(&z, config.alpha, &g)?;
        zs.push(z);
        z = next;
    }
    zs.push(z);
    note_retained(zs.len());
    Ok(zs)
}

/// Validation loss at `z^K` with `g^K` and `h^K` from one joint
/// second-order sweep of `h*` along `∇ℓ^val(φ^K)`.
fn terminal_terms(task: &TaskInstance, z_k: &Array64, flat: &Array64, spec: &MirrorMapSpec) -> Result<(f64, Array64, Array64)> {
    let phi = mirror::inverse_map_flat(z_k, flat.data(), spec)?;
    let (val_loss, w) = val_value_and_grad(task, &phi)?;
    let SecondOrder { mut hvps, .. } = mirror::conjugate_second_order(z_k, flat, spec, &w)?;
    let h_k = hvps.pop().expect("two inputs");
    let g_k = hvps.pop().expect("two inputs");
    Ok((val_loss, g_k, h_k))
}

/// Reverse-mode meta-gradient through the unrolled adaptation.
pub fn meta_gradient_unrolled(task: &TaskInstance, theta: &MetaParams, config: &AdaptationConfig) -> Result<MetaGradient> {
    require_mida(config)?;
    theta.check_task(task)?;
    let flat = theta.theta_h_flat();
    let spec = &theta.spec;
    let zs = unrolled_forward(task, theta, flat.data(), config)?;
    let (val_loss, g_k, h_k) = terminal_terms(task, zs.last().expect("K+1 states"), &flat, spec)?;
    let mut z_bar = g_k;
    let mut theta_bar = h_k;
    let alpha = config.alpha;
    for z in zs[..config.steps].iter().rev() {
        let phi = mirror::inverse_map_flat(z, flat.data(), spec)?;
        let u = loss_hvp(task, &phi, &z_bar)?;
        let so = mirror::conjugate_second_order(z, &flat, spec, &u)?;
        z_bar = step(&z_bar, alpha, &so.hvps[0])?;
        theta_bar = step(&theta_bar, alpha, &so.hvps[1])?;
    }
    Ok(MetaGradient { grad_z: z_bar, grad_h: theta_bar, val_loss })
}

/// `g^K = ∇₁(ℓ^val ∘ ∇₁h*)(z^K; θ_h)` from a forward-only adaptation that
/// keeps a single dual state.
pub fn g_vector(task: &TaskInstance, theta: &MetaParams, config: &AdaptationConfig) -> Result<Array64> {
    require_mida(config)?;
    theta.check_task(task)?;
    let flat = theta.theta_h_flat();
    g_vector_flat(task, theta, flat.data(), config)
}

pub(crate) fn g_vector_flat(task: &TaskInstance, theta: &MetaParams, flat: &[f64], config: &AdaptationConfig) -> Result<Array64> {
    let z = adaptation::final_dual_state(task, theta, flat, config)?;
    let phi = mirror::inverse_map_flat(&z, flat, &theta.spec)?;
    let (_, w) = val_value_and_grad(task, &phi)?;
    mirror::inverse_map_hvp_flat(&z, flat, &theta.spec, &w)
}

/// Meta-gradient from the explicit product and sum formulas, with the
/// default dimension cap.
pub fn meta_gradient_explicit(
    task: &TaskInstance,
    theta: &MetaParams,
    config: &AdaptationConfig,
) -> Result<(MetaGradient, ChainRuleIntermediates)> {
    meta_gradient_explicit_capped(task, theta, config, DEFAULT_DIM_CAP)
}

struct Materialized {
    /// `∇₁²h*(z)`.
    hess_h: DMatrix<f64>,
    /// `∇₂∇₁h*(z)`, |θ_h| × d.
    mixed: DMatrix<f64>,
}

fn materialize_conjugate(z: &Array64, flat: &Array64, spec: &MirrorMapSpec) -> Result<Materialized> {
    let d = z.len();
    let p = flat.len();
    let mut hess_h = DMatrix::zeros(d, d);
    let mut mixed = DMatrix::zeros(p, d);
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        let so = mirror::conjugate_second_order(z, flat, spec, &Array64::vector(e)?)?;
        hess_h.set_column(i, &DVector::from_column_slice(so.hvps[0].data()));
        mixed.set_column(i, &DVector::from_column_slice(so.hvps[1].data()));
    }
    Ok(Materialized { hess_h, mixed })
}

fn materialize_loss_hessian(task: &TaskInstance, phi: &Array64) -> Result<DMatrix<f64>> {
    let d = phi.len();
    let mut h = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        let col = loss_hvp(task, phi, &Array64::vector(e)?)?;
        h.set_column(i, &DVector::from_column_slice(col.data()));
    }
    Ok(h)
}

fn vec_of(v: &DVector<f64>, op: &str) -> Result<Array64> {
    Array64::checked(vec![v.len()], v.as_slice().to_vec(), op)
}

/// [`meta_gradient_explicit`] with an explicit cap on `d`.
pub fn meta_gradient_explicit_capped(
    task: &TaskInstance,
    theta: &MetaParams,
    config: &AdaptationConfig,
    dim_cap: usize,
) -> Result<(MetaGradient, ChainRuleIntermediates)> {
    require_mida(config)?;
    theta.check_task(task)?;
    let d = theta.dim();
    if d > dim_cap {
        return Err(Error::DimensionAboveCap { dim: d, cap: dim_cap });
    }
    let trace = adaptation::adapt(task, theta, config)?;
    let flat = theta.theta_h_flat();
    let spec = &theta.spec;
    let alpha = config.alpha;
    let k_max = config.steps;

    let mut factors = Vec::with_capacity(k_max);
    let mut mixed_times_loss = Vec::with_capacity(k_max);
    for k in 0..k_max {
        let m = materialize_conjugate(&trace.dual_states[k], &flat, spec)?;
        let hl = materialize_loss_hessian(task, &trace.primal_states[k])?;
        factors.push(DMatrix::identity(d, d) - (&m.hess_h * &hl) * alpha);
        mixed_times_loss.push(&m.mixed * &hl);
    }

    let terminal = materialize_conjugate(&trace.dual_states[k_max], &flat, spec)?;
    let (val_loss, w) = val_value_and_grad(task, &trace.primal_states[k_max])?;
    let w = DVector::from_column_slice(w.data());
    let g_k = &terminal.hess_h * &w;
    let h_k = &terminal.mixed * &w;

    // suffix[k] = (I − αG^{k+1})⋯(I − αG^{K−1}); suffix[K−1] = I.
    let mut suffix = vec![DMatrix::identity(d, d); k_max];
    for k in (0..k_max.saturating_sub(1)).rev() {
        suffix[k] = &factors[k + 1] * &suffix[k + 1];
    }
    let h_terms: Vec<DMatrix<f64>> = (0..k_max).map(|k| &mixed_times_loss[k] * &suffix[k]).collect();

    let product = match k_max {
        0 => DMatrix::identity(d, d),
        _ => &factors[0] * &suffix[0],
    };
    let grad_z = &product * &g_k;
    let mut grad_h = h_k.clone();
    for h in &h_terms {
        grad_h -= (h * &g_k) * alpha;
    }

    let to_array = |m: &DMatrix<f64>| Array64::from_dmatrix(m);
    let inter = ChainRuleIntermediates {
        g_k: vec_of(&g_k, "g^K")?,
        step_jacobian_factors: factors.iter().map(to_array).collect(),
        h_k: vec_of(&h_k, "h^K")?,
        h_terms: h_terms.iter().map(to_array).collect(),
    };
    let mg = MetaGradient {
        grad_z: vec_of(&grad_z, "explicit grad_z")?,
        grad_h: vec_of(&grad_h, "explicit grad_h")?,
        val_loss,
    };
    Ok((mg, inter))
}

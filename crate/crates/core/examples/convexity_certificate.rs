//! Sampled convexity and smoothness checks for a learned conjugate, and a
//! counterexample once the weight constraints are bypassed (negative
//! weights on the hidden-to-hidden layers, quadratic term removed).

use miramet::mirror::{check_convexity, check_convexity_with, effective_weights, init_params, inverse_map, lipschitz_bounds, MirrorMapSpec};
use miramet::Array64;

fn main() -> anyhow::Result<()> {
    let mut spec = MirrorMapSpec::new(3, 3, vec![5, 4]);
    spec.enforce_psd_quadratic = true;
    let params = init_params(&spec, 11)?;
    let report = check_convexity(&params, &spec, 10_000, 10.0, 0)?;
    println!("constrained network: {report:?}");

    let bound = lipschitz_bounds(&spec);
    let (a, b) = (Array64::vector(vec![1.0, 2.0, -1.0])?, Array64::vector(vec![0.5, 1.5, -0.5])?);
    let ratio = inverse_map(&a, &params, &spec)?.axpy(-1.0, &inverse_map(&b, &params, &spec)?).norm() / a.axpy(-1.0, &b).norm();
    println!("gradient-Lipschitz ratio {ratio:.4} <= spec bound {:.4}", bound.g_h);

    let mut weights = effective_weights(&params, &spec)?;
    weights.p = None;
    for w in weights.w.iter_mut().skip(1) {
        *w = w.scaled(-1.0);
    }
    let broken = check_convexity_with(|z| miramet::diff::value_and_grad(&weights, z), 3, 10_000, 10.0, 0)?;
    println!("negative hidden weights: {} violations, worst gap {:.3e}", broken.violations(), broken.worst_gap);
    Ok(())
}

//! Fixed-seed invariant suites runnable from the command line.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adaptation::{adapt, reset_retained_states, retained_states, AdaptationConfig, AdaptationMode, MetaParams};
use crate::array::Array64;
use crate::diff::{finite_difference_grad, hessian_vector_product, value_and_grad};
use crate::error::{Error, Result};
use crate::meta_gradient::{meta_gradient_explicit, meta_gradient_unrolled};
use crate::mirror::{
    check_convexity, conjugate_value, identity_map, init_params, inverse_map, lipschitz_bounds, quadratic_map,
    MirrorMapParams, MirrorMapSpec,
};
use crate::smoothness::{derive_constants, estimate_smoothness, TheoryInputs};
use crate::tasks::{sample_task, sample_universe, Split, TaskFamily, TaskInstance, TaskLoss};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Gradients,
    Convexity,
    Equivalence,
    Estimator,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradients" => Ok(Suite::Gradients),
            "convexity" => Ok(Suite::Convexity),
            "equivalence" => Ok(Suite::Equivalence),
            "estimator" => Ok(Suite::Estimator),
            "all" => Ok(Suite::All),
            other => Err(Error::Config(format!(
                "unknown suite {other:?}; expected gradients|convexity|equivalence|estimator|all"
            ))),
        }
    }
}

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} - {} # {}", if self.passed { "ok" } else { "not ok" }, self.name, self.detail)
    }
}

fn check(name: &str, outcome: Result<(bool, String)>) -> Check {
    match outcome {
        Ok((passed, detail)) => Check { name: name.into(), passed, detail },
        Err(e) => Check { name: name.into(), passed: false, detail: format!("error: {e}") },
    }
}

/// Runs a suite and returns one entry per check.
pub fn run_suite(suite: Suite) -> Vec<Check> {
    match suite {
        Suite::Gradients => gradients(),
        Suite::Convexity => convexity(),
        Suite::Equivalence => equivalence(),
        Suite::Estimator => estimator(),
        Suite::All => [gradients(), convexity(), equivalence(), estimator()].concat(),
    }
}

/// TAP document for a list of checks.
pub fn tap(checks: &[Check]) -> String {
    let mut out = format!("TAP version 13\n1..{}\n", checks.len());
    for (i, c) in checks.iter().enumerate() {
        let status = if c.passed { "ok" } else { "not ok" };
        out.push_str(&format!("{status} {} - {} # {}\n", i + 1, c.name, c.detail));
    }
    out
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Array64 {
    Array64::from_parts(vec![n], (0..n).map(|_| rng.random_range(-scale..scale)).collect())
}

fn learned_map(d: usize, layers: usize, seed: u64) -> Result<(MirrorMapSpec, MirrorMapParams)> {
    let widths = vec![3; layers.saturating_sub(1)];
    let mut spec = MirrorMapSpec::new(d, layers, widths);
    spec.enforce_psd_quadratic = true;
    let params = init_params(&spec, seed)?;
    Ok((spec, params))
}

fn small_family() -> TaskFamily {
    let mut f = TaskFamily::sinusoid();
    if let crate::tasks::FamilyKind::SinusoidRegression { hidden, .. } = &mut f.kind {
        *hidden = vec![4];
    }
    f.shots = 5;
    f.val_count = 5;
    f
}

fn gradients() -> Vec<Check> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let families = [small_family(), TaskFamily::gaussian_classification(), TaskFamily::quadratic(4)];
    for fam in &families {
        let name = format!("loss gradient matches finite differences ({})", fam.metric_name());
        out.push(check(&name, (|| {
            let mut worst = 0.0_f64;
            for i in 0..5 {
                let task = sample_task(fam, i, 1)?;
                let phi = random_vec(&mut rng, task.param_dim(), 1.0);
                let f = TaskLoss::new(&task, Split::Train);
                let (_, g) = value_and_grad(&f, &phi)?;
                let fd = finite_difference_grad(|x| crate::diff::evaluate(&f, &[x]), &phi, 1e-5)?;
                worst = worst.max(g.rel_err(&fd));
            }
            Ok((worst < 1e-6, format!("max rel err {worst:.2e}")))
        })()));
    }
    out.push(check("conjugate gradient matches finite differences", (|| {
        let (spec, params) = learned_map(4, 2, 3)?;
        let mut worst = 0.0_f64;
        for _ in 0..10 {
            let z = random_vec(&mut rng, 4, 2.0);
            let g = inverse_map(&z, &params, &spec)?;
            let fd = finite_difference_grad(|x| conjugate_value(x, &params, &spec), &z, 1e-5)?;
            worst = worst.max(g.rel_err(&fd));
        }
        Ok((worst < 1e-6, format!("max rel err {worst:.2e}")))
    })()));
    out.push(check("hvp is linear and symmetric", (|| {
        let task = sample_task(&small_family(), 0, 2)?;
        let f = TaskLoss::new(&task, Split::Train);
        let d = task.param_dim();
        let x = random_vec(&mut rng, d, 1.0);
        let v1 = random_vec(&mut rng, d, 1.0);
        let v2 = random_vec(&mut rng, d, 1.0);
        let h1 = hessian_vector_product(&f, &x, &v1)?;
        let h2 = hessian_vector_product(&f, &x, &v2)?;
        let hc = hessian_vector_product(&f, &x, &v1.scaled(2.0).axpy(-3.0, &v2))?;
        let lin = hc.rel_err(&h1.scaled(2.0).axpy(-3.0, &h2));
        let a = v1.dot(&h2);
        let b = v2.dot(&h1);
        let sym = (a - b).abs() / a.abs().max(b.abs()).max(1.0);
        Ok((lin < 1e-12 && sym < 1e-10, format!("linearity {lin:.2e}, symmetry {sym:.2e}")))
    })()));
    out.push(check("meta-gradient: unrolled vs explicit vs finite differences", (|| {
        let fam = TaskFamily::quadratic(3);
        let task = sample_task(&fam, 0, 4)?;
        let (spec, params) = learned_map(3, 2, 5)?;
        let theta = MetaParams::new(random_vec(&mut rng, 3, 1.0), params, spec.clone())?;
        let cfg = AdaptationConfig::mida(3, 0.05);
        let un = meta_gradient_unrolled(&task, &theta, &cfg)?;
        let (ex, _) = meta_gradient_explicit(&task, &theta, &cfg)?;
        let loss_at = |tz: &Array64, th: &Array64| -> Result<f64> {
            let p = MirrorMapParams::from_flat(&spec, th.data())?;
            let t = MetaParams::new(tz.clone(), p, spec.clone())?;
            Ok(*adapt(&task, &t, &cfg)?.val_losses.last().expect("K+1 losses"))
        };
        let flat = theta.theta_h_flat();
        let fd_z = finite_difference_grad(|z| loss_at(z, &flat), &theta.theta_z, 1e-5)?;
        let fd_h = finite_difference_grad(|h| loss_at(&theta.theta_z, h), &flat, 1e-5)?;
        let e_fd = un.grad_z.rel_err(&fd_z).max(un.grad_h.rel_err(&fd_h));
        let e_ex = un.grad_z.rel_err(&ex.grad_z).max(un.grad_h.rel_err(&ex.grad_h));
        Ok((e_fd < 1e-5 && e_ex < 1e-8, format!("vs FD {e_fd:.2e}, vs explicit {e_ex:.2e}")))
    })()));
    out
}

fn convexity() -> Vec<Check> {
    let mut out = Vec::new();
    for seed in 0..3u64 {
        let name = format!("sampled convexity certificate (seed {seed})");
        out.push(check(&name, (|| {
            let (spec, params) = learned_map(3, 1 + seed as usize, seed)?;
            let r = check_convexity(&params, &spec, 2000, 10.0, seed)?;
            Ok((r.violations() == 0, format!("{} violations, worst gap {:.2e}", r.violations(), r.worst_gap)))
        })()));
    }
    out.push(check("gradient-Lipschitz ratio within spec bound", (|| {
        let (spec, params) = learned_map(3, 2, 7)?;
        let bound = lipschitz_bounds(&spec).g_h;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst = 0.0_f64;
        for _ in 0..500 {
            let a = random_vec(&mut rng, 3, 5.0);
            let b = random_vec(&mut rng, 3, 5.0);
            let ga = inverse_map(&a, &params, &spec)?;
            let gb = inverse_map(&b, &params, &spec)?;
            worst = worst.max(ga.axpy(-1.0, &gb).norm() / a.axpy(-1.0, &b).norm());
        }
        Ok((worst <= bound, format!("ratio {worst:.3} <= G_h {bound:.3}")))
    })()));
    out
}

fn equivalence() -> Vec<Check> {
    let mut out = Vec::new();
    let fam = small_family();
    out.push(check("mida with identity map equals gradient descent", (|| {
        let d = fam.param_dim();
        let (spec, params) = identity_map(d)?;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst = 0.0_f64;
        for i in 0..10 {
            let task = sample_task(&fam, i, 0)?;
            let theta = MetaParams::new(fam.initial_point(&mut rng), params.clone(), spec.clone())?;
            let cfg = AdaptationConfig::mida(5, 0.01);
            let a = adapt(&task, &theta, &cfg)?;
            let b = adapt(&task, &theta, &cfg.with_mode(AdaptationMode::Gd))?;
            for (x, y) in a.primal_states.iter().zip(&b.primal_states) {
                worst = worst.max(x.max_abs_diff(y));
            }
        }
        Ok((worst <= 1e-12, format!("max deviation {worst:.2e}")))
    })()));
    out.push(check("mida with quadratic map equals preconditioned descent", (|| {
        let qf = TaskFamily::quadratic(3);
        let p = Array64::from_rows(&[vec![1.2, 0.1, 0.0], vec![0.1, 0.8, 0.2], vec![0.0, 0.2, 0.5]])?;
        let (spec, params) = quadratic_map(&p)?;
        let mut worst = 0.0_f64;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for i in 0..10 {
            let task = sample_task(&qf, i, 0)?;
            let z0 = random_vec(&mut rng, 3, 1.0);
            let theta = MetaParams::new(z0.clone(), params.clone(), spec.clone())?;
            let cfg = AdaptationConfig::mida(5, 0.1);
            let a = adapt(&task, &theta, &cfg)?;
            let primal = MetaParams { theta_z: a.primal_states[0].clone(), ..theta.clone() };
            let b = adapt(&task, &primal, &cfg.with_mode(AdaptationMode::Pgd))?;
            for (x, y) in a.primal_states.iter().zip(&b.primal_states) {
                worst = worst.max(x.max_abs_diff(y));
            }
        }
        Ok((worst <= 1e-12, format!("max deviation {worst:.2e}")))
    })()));
    out
}

fn quad_constants(tasks: &[TaskInstance], spec: &MirrorMapSpec, alpha: f64, steps: usize) -> Result<crate::smoothness::DerivedConstants> {
    let (g_ell, _) = crate::tasks::lipschitz_of_tasks(tasks)?;
    let inputs = TheoryInputs {
        g_ell,
        h_ell: 1.0,
        g_lh: 1.5,
        g_h: lipschitz_bounds(spec).g_h,
        h_h: 1.0,
        sigma: 0.0,
        tasks: tasks.len(),
        alpha,
        steps,
        batch_size: 2,
    };
    derive_constants(&inputs, tasks.len() as f64)
}

fn estimator() -> Vec<Check> {
    let mut out = Vec::new();
    let fam = TaskFamily::quadratic(3).with_population(8);
    out.push(check("estimator is tight at alpha = 0 and K = 0", (|| {
        let tasks = sample_universe(&fam, 0)?;
        let (spec, params) = identity_map(3)?;
        let theta = MetaParams::new(Array64::vector(vec![0.3, -0.2, 0.5])?, params, spec.clone())?;
        let mut ok = true;
        for (alpha, k) in [(0.0, 5), (0.01, 0)] {
            let c = quad_constants(&tasks, &spec, alpha, k)?;
            let (g1, g2) = estimate_smoothness(&tasks[..2], &theta, &AdaptationConfig::mida(k, alpha), &c)?;
            ok &= g1 == c.inputs.g_lh && g2 == c.inputs.g_lh;
        }
        Ok((ok, "Ghat equals G_lh exactly".into()))
    })()));
    out.push(check("estimation path retains no per-step states", (|| {
        let tasks = sample_universe(&fam, 0)?;
        let (spec, params) = identity_map(3)?;
        let theta = MetaParams::new(Array64::vector(vec![0.3, -0.2, 0.5])?, params, spec.clone())?;
        let mut counts = Vec::new();
        for k in [1, 5, 20] {
            let c = quad_constants(&tasks, &spec, 0.001, k)?;
            reset_retained_states();
            estimate_smoothness(&tasks, &theta, &AdaptationConfig::mida(k, 0.001), &c)?;
            counts.push(retained_states());
        }
        Ok((counts.iter().all(|&c| c == 0), format!("retained states per K: {counts:?}")))
    })()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        let checks = run_suite(Suite::All);
        for c in &checks {
            assert!(c.passed, "{c}");
        }
        assert!(tap(&checks).starts_with("TAP version 13\n1.."));
    }

    #[test]
    fn suite_names_parse() {
        assert_eq!("all".parse::<Suite>().unwrap(), Suite::All);
        assert!("nope".parse::<Suite>().is_err());
    }
}

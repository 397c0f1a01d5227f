//! Command implementations behind the `miramet` binary.
//!
//! Every command returns a process exit code: 0 on success, 2 for
//! configuration or input errors, 3 for numerical aborts.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::selftest::{run_suite, tap, Suite};
use crate::smoothness::{convergence_budget, corollary_alpha, corollary_c_beta, DerivedConstants};
use crate::tasks::{family_lipschitz, FamilyKind};
use crate::trainer::{read_eval_reports, read_round_records, run_experiment, RunOutcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

fn report(e: &Error, err: &mut dyn Write) -> i32 {
    let _ = writeln!(err, "error: {e}");
    exit_code(e)
}

/// Options of `train`.
#[derive(Clone, Debug, Default)]
pub struct TrainArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match train(args, out) {
        Ok(()) => EXIT_OK,
        Err(e) => report(&e, err),
    }
}

fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    }
    let tc = cfg.train_config()?;
    if let Some(r) = &args.resume {
        if !r.exists() {
            return Err(Error::Config(format!("resume checkpoint {} does not exist", r.display())));
        }
    }
    match run_experiment(&tc, &cfg.out_dir, args.resume.as_deref(), cfg.checkpoint_every)? {
        RunOutcome::Completed { rounds_run, out_dir } => {
            writeln!(out, "trained {rounds_run} rounds; outputs in {}", out_dir.display())?;
        }
        RunOutcome::AlreadyFinished { rounds } => {
            writeln!(out, "run already finished all {rounds} rounds; nothing to do")?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ConstantsDoc {
    schema_version: u32,
    constants: DerivedConstants,
    corollary_alpha: Option<f64>,
    corollary_c_beta: f64,
    delta: f64,
    rounds: usize,
    batch_size: usize,
    /// `None` when `B` is below the admissible minimum.
    budget_grad_z: Option<f64>,
    budget_grad_h: Option<f64>,
    family_g_ell: Option<f64>,
}

/// Prints derived constants for the config's adaptive-rate inputs. `delta`
/// is the assumed initial optimality gap used by the convergence budget.
pub fn cmd_constants(config: &Path, delta: f64, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match constants(config, delta, err) {
        Ok(doc) => match serde_json::to_string_pretty(&doc) {
            Ok(s) => {
                let _ = writeln!(out, "{s}");
                EXIT_OK
            }
            Err(e) => report(&e.into(), err),
        },
        Err(e) => report(&e, err),
    }
}

fn constants(config: &Path, delta: f64, err: &mut dyn Write) -> Result<ConstantsDoc> {
    let cfg = ExperimentConfig::load(config)?;
    let tc = cfg.train_config()?;
    let c = tc.theory_constants()?.ok_or_else(|| {
        Error::Config("constants need an adaptive learning-rate section ([lr] type = \"adaptive\")".into())
    })?;
    let family_g_ell = match tc.family.kind {
        FamilyKind::Quadratic { .. } => Some(family_lipschitz(&tc.family, tc.task_seed)?.0),
        _ => None,
    };
    if let Some(g) = family_g_ell {
        if c.inputs.g_ell < g {
            writeln!(err, "warning: configured G_ell = {} is below the family's exact value {g}", c.inputs.g_ell)?;
        }
    }
    let (budget_grad_z, budget_grad_h) = match convergence_budget(delta, tc.rounds, tc.batch_size, &c) {
        Ok((z, h)) => (Some(z), Some(h)),
        Err(Error::Precondition(m)) => {
            writeln!(err, "warning: no convergence budget: {m}")?;
            (None, None)
        }
        Err(e) => return Err(e),
    };
    let i = c.inputs;
    Ok(ConstantsDoc {
        schema_version: 1,
        constants: c,
        corollary_alpha: corollary_alpha(i.tasks, i.steps, i.g_h, i.g_ell).ok(),
        corollary_c_beta: corollary_c_beta(i.tasks),
        delta,
        rounds: tc.rounds,
        batch_size: tc.batch_size,
        budget_grad_z,
        budget_grad_h,
        family_g_ell,
    })
}

pub fn cmd_selftest(suite: &str, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let suite: Suite = match suite.parse() {
        Ok(s) => s,
        Err(e) => return report(&e, err),
    };
    let checks = run_suite(suite);
    let _ = write!(out, "{}", tap(&checks));
    if checks.iter().all(|c| c.passed) {
        EXIT_OK
    } else {
        1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveKind {
    PerK,
    PerRound,
}

impl std::str::FromStr for CurveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_k" => Ok(CurveKind::PerK),
            "per_round" => Ok(CurveKind::PerRound),
            o => Err(Error::Config(format!("unknown curve {o:?}; expected per_k|per_round"))),
        }
    }
}

/// Writes `x,mean,ci_low,ci_high` rows for a finished or partial run.
/// `per_k` uses the latest evaluation report.
pub fn cmd_curve(run: &Path, what: CurveKind, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match curve(run, what, out) {
        Ok(()) => EXIT_OK,
        Err(e) => report(&e, err),
    }
}

fn curve(run: &Path, what: CurveKind, out: &mut dyn Write) -> Result<()> {
    if !run.is_dir() {
        return Err(Error::Config(format!("run directory {} does not exist", run.display())));
    }
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Schema(e.to_string());
    w.write_record(["x", "mean", "ci_low", "ci_high"]).map_err(csv_err)?;
    match what {
        CurveKind::PerK => {
            let path = run.join("eval.jsonl");
            if !path.exists() {
                return Err(Error::Config(format!("{} does not exist", path.display())));
            }
            let (_, last) = read_eval_reports(&path)?
                .pop()
                .ok_or_else(|| Error::Config(format!("{} holds no evaluations", path.display())))?;
            for s in &last.per_k {
                w.serialize((s.k, s.mean, s.ci_low, s.ci_high)).map_err(csv_err)?;
            }
        }
        CurveKind::PerRound => {
            let path = run.join("metrics.csv");
            if !path.exists() {
                return Err(Error::Config(format!("{} does not exist", path.display())));
            }
            for r in read_round_records(&path)? {
                let half = 1.96 * r.meta_loss_std / (r.batch_size as f64).sqrt();
                w.serialize((r.round, r.meta_loss, r.meta_loss - half, r.meta_loss + half)).map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

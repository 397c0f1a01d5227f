//! Meta-training: batch sampling, averaged meta-gradients, constant or
//! adaptive meta learning rates, evaluation and checkpoints.
//!
//! Randomness is split into named streams derived per round from the run
//! seed, so results do not depend on thread scheduling and a run can resume
//! from any round given only the seed.

mod checkpoint;
mod eval;
mod io;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_SCHEMA};
pub use eval::{evaluate, EvalReport, KStat};
pub use io::{read_eval_reports, read_round_records, run_experiment, RunOutcome};

use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptation::{AdaptationConfig, AdaptationMode, MetaParams};
use crate::array::Array64;
use crate::error::{Error, Result};
use crate::meta_gradient::{self, MetaGradient};
use crate::mirror::{lipschitz_bounds, MirrorMapParams, MirrorMapSpec};
use crate::smoothness::{self, DerivedConstants, TheoryInputs};
use crate::tasks::{sample_universe, TaskFamily, TaskInstance};

/// How the meta learning rates are chosen each round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrMode {
    Constant {
        beta1: f64,
        beta2: f64,
    },
    /// `β_j = 1/(C_β Ĝ_j)` from an independent estimation batch.
    Adaptive {
        c_beta: f64,
        g_ell: f64,
        h_ell: f64,
        g_lh: f64,
        h_h: f64,
        /// Defaults to the spec bound of the mirror map.
        #[serde(default)]
        g_h: Option<f64>,
        #[serde(default)]
        sigma: f64,
    },
}

impl Default for LrMode {
    fn default() -> Self {
        LrMode::Constant { beta1: 1e-3, beta2: 1e-4 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetaOptimizer {
    #[default]
    Sgd,
    /// Adam with the meta learning rates as step sizes.
    Adam {
        #[serde(default = "default_b1")]
        beta_m: f64,
        #[serde(default = "default_b2")]
        beta_v: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_b1() -> f64 {
    0.9
}

fn default_b2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub rounds: usize,
    pub batch_size: usize,
    /// Estimation batch size; must be positive exactly in adaptive mode.
    pub estimation_batch: usize,
    pub adaptation: AdaptationConfig,
    pub lr: LrMode,
    pub optimizer: MetaOptimizer,
    pub seed: u64,
    /// Seed of the training task universe.
    pub task_seed: u64,
    /// Evaluate every this many rounds (0: only after the final round).
    pub eval_every: usize,
    /// Held-out tasks per evaluation (0 disables evaluation).
    pub eval_tasks: usize,
    /// Seed of the held-out task universe.
    pub eval_seed: u64,
    pub family: TaskFamily,
    pub mirror_spec: MirrorMapSpec,
    /// When false `θ_h` stays at its initial value (e.g. a MAML baseline
    /// with the identity map).
    pub train_mirror_map: bool,
    /// Replace `θ_h` at initialization (e.g. an exact identity map).
    #[serde(default)]
    pub initial_mirror_params: Option<MirrorMapParams>,
}

impl TrainConfig {
    /// Defaults for a family and mirror spec.
    pub fn new(family: TaskFamily, mirror_spec: MirrorMapSpec) -> Self {
        Self {
            rounds: 60_000,
            batch_size: 4,
            estimation_batch: 0,
            adaptation: AdaptationConfig::default(),
            lr: LrMode::default(),
            optimizer: MetaOptimizer::Sgd,
            seed: 0,
            task_seed: 0,
            eval_every: 0,
            eval_tasks: 0,
            eval_seed: 1_000_003,
            family,
            mirror_spec,
            train_mirror_map: true,
            initial_mirror_params: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.family.validate()?;
        self.mirror_spec.validate()?;
        self.adaptation.validate()?;
        if self.adaptation.mode != AdaptationMode::Mida {
            return bad("training uses mida adaptation; express gd/pgd baselines with identity or quadratic maps".into());
        }
        if self.rounds == 0 {
            return bad("rounds must be >= 1".into());
        }
        if self.batch_size == 0 || self.batch_size > self.family.population {
            return bad(format!(
                "batch_size must be in 1..={} (task population), got {}",
                self.family.population, self.batch_size
            ));
        }
        let d = self.family.param_dim();
        if self.mirror_spec.input_dim != d {
            return bad(format!(
                "mirror map input_dim {} does not match task parameter dimension {d}",
                self.mirror_spec.input_dim
            ));
        }
        if let Some(p) = &self.initial_mirror_params {
            p.validate(&self.mirror_spec)?;
        }
        match self.lr {
            LrMode::Constant { beta1, beta2 } => {
                if !(beta1.is_finite() && beta1 >= 0.0 && beta2.is_finite() && beta2 >= 0.0) {
                    return bad("constant meta learning rates must be finite and >= 0".into());
                }
                if self.estimation_batch != 0 {
                    return bad("estimation_batch must be 0 with constant learning rates".into());
                }
            }
            LrMode::Adaptive { .. } => {
                if self.estimation_batch == 0 || self.estimation_batch > self.family.population {
                    return bad(format!(
                        "adaptive learning rates need estimation_batch in 1..={}",
                        self.family.population
                    ));
                }
                self.theory_constants()?;
            }
        }
        if let MetaOptimizer::Adam { beta_m, beta_v, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta_m) && (0.0..1.0).contains(&beta_v) && eps > 0.0) {
                return bad("adam needs 0 <= beta_m, beta_v < 1 and eps > 0".into());
            }
        }
        if self.eval_tasks == 1 {
            return bad("eval_tasks must be 0 or >= 2".into());
        }
        if self.eval_tasks > 0 && self.eval_seed == self.task_seed {
            return bad("eval_seed must differ from task_seed so evaluation tasks are held out".into());
        }
        Ok(())
    }

    /// Derived constants for adaptive mode.
    pub fn theory_constants(&self) -> Result<Option<DerivedConstants>> {
        let LrMode::Adaptive { c_beta, g_ell, h_ell, g_lh, h_h, g_h, sigma } = self.lr else {
            return Ok(None);
        };
        let inputs = TheoryInputs {
            g_ell,
            h_ell,
            g_lh,
            g_h: g_h.unwrap_or_else(|| lipschitz_bounds(&self.mirror_spec).g_h),
            h_h,
            sigma,
            tasks: self.family.population,
            alpha: self.adaptation.alpha,
            steps: self.adaptation.steps,
            batch_size: self.batch_size,
        };
        smoothness::derive_constants(&inputs, c_beta).map(Some)
    }
}

/// Metrics of one round. Estimator fields are `None` in constant mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub batch_size: usize,
    pub meta_loss: f64,
    pub meta_loss_std: f64,
    pub grad_z_norm: f64,
    pub grad_h_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub ghat1: Option<f64>,
    pub ghat2: Option<f64>,
    pub wall_time_s: f64,
}

impl RoundRecord {
    /// Equality of everything except wall time.
    pub fn same_values(&self, other: &Self) -> bool {
        Self { wall_time_s: 0.0, ..self.clone() } == Self { wall_time_s: 0.0, ..other.clone() }
    }
}

/// Uniformly drawn round with its gradient norms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoReport {
    pub round: usize,
    pub grad_z_norm: f64,
    pub grad_h_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub rounds: Vec<RoundRecord>,
    /// `(round, report)` for each evaluation.
    pub evaluations: Vec<(usize, EvalReport)>,
    pub rho: Option<RhoReport>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
enum Stream {
    Batch = 1,
    Estimate = 2,
    Rho = 3,
}

fn stream_rng(seed: u64, stream: Stream, round: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 48) | round as u64);
    rng
}

/// Task indices of round `r`'s meta batch.
pub fn batch_indices(seed: u64, round: usize, population: usize, batch: usize) -> Vec<usize> {
    index::sample(&mut stream_rng(seed, Stream::Batch, round), population, batch).into_vec()
}

/// Task indices of round `r`'s estimation batch, drawn from a stream
/// independent of the meta batch.
pub fn estimation_indices(seed: u64, round: usize, population: usize, batch: usize) -> Vec<usize> {
    index::sample(&mut stream_rng(seed, Stream::Estimate, round), population, batch).into_vec()
}

/// The reporting round `ρ ~ U{0..R−1}`.
pub fn rho_round(seed: u64, rounds: usize) -> usize {
    stream_rng(seed, Stream::Rho, 0).random_range(0..rounds)
}

/// Thread pool honouring `MIRAMET_THREADS`.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("MIRAMET_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("MIRAMET_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(Error::Config("MIRAMET_THREADS must be >= 1".into()));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))
}

/// First and second moment estimates of the Adam variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m_z: Vec<f64>,
    pub v_z: Vec<f64>,
    pub m_h: Vec<f64>,
    pub v_h: Vec<f64>,
}

/// Meta-training state that advances one round at a time.
pub struct Trainer {
    config: TrainConfig,
    universe: Vec<TaskInstance>,
    theta: MetaParams,
    theta_h_flat: Vec<f64>,
    adam: Option<AdamState>,
    next_round: usize,
    constants: Option<DerivedConstants>,
    pool: rayon::ThreadPool,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut theta = MetaParams::init(&config.family, &config.mirror_spec, config.seed)?;
        if let Some(p) = &config.initial_mirror_params {
            theta.theta_h = p.clone();
        }
        Self::from_parts(config, theta, None, 0)
    }

    fn from_parts(config: TrainConfig, theta: MetaParams, adam: Option<AdamState>, next_round: usize) -> Result<Self> {
        config.validate()?;
        let universe = sample_universe(&config.family, config.task_seed)?;
        let constants = config.theory_constants()?;
        let theta_h_flat = theta.theta_h_flat().into_data();
        let adam = match (config.optimizer, adam) {
            (MetaOptimizer::Adam { .. }, Some(s)) => Some(s),
            (MetaOptimizer::Adam { .. }, None) => Some(AdamState {
                step: 0,
                m_z: vec![0.0; theta.dim()],
                v_z: vec![0.0; theta.dim()],
                m_h: vec![0.0; theta_h_flat.len()],
                v_h: vec![0.0; theta_h_flat.len()],
            }),
            (MetaOptimizer::Sgd, _) => None,
        };
        Ok(Self { config, universe, theta, theta_h_flat, adam, next_round, constants, pool: thread_pool()? })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn theta(&self) -> &MetaParams {
        &self.theta
    }

    pub fn next_round(&self) -> usize {
        self.next_round
    }

    pub fn is_finished(&self) -> bool {
        self.next_round >= self.config.rounds
    }

    pub fn constants(&self) -> Option<&DerivedConstants> {
        self.constants.as_ref()
    }

    pub fn universe(&self) -> &[TaskInstance] {
        &self.universe
    }

    /// Runs one round and returns its record.
    pub fn step(&mut self) -> Result<RoundRecord> {
        let round = self.next_round;
        if round >= self.config.rounds {
            return Err(Error::Precondition(format!("all {} rounds are done", self.config.rounds)));
        }
        self.round_inner(round).map_err(|e| {
            if e.is_numerical() {
                Error::NumericalAbort { round, source: Box::new(e) }
            } else {
                e
            }
        })
    }

    fn round_inner(&mut self, round: usize) -> Result<RoundRecord> {
        let start = Instant::now();
        let cfg = &self.config;
        let t = cfg.family.population;
        let batch = batch_indices(cfg.seed, round, t, cfg.batch_size);
        let theta = &self.theta;
        let universe = &self.universe;
        let adaptation = cfg.adaptation;
        let grads: Vec<Result<MetaGradient>> = self.pool.install(|| {
            batch
                .par_iter()
                .map(|&i| meta_gradient::meta_gradient_unrolled(&universe[i], theta, &adaptation))
                .collect()
        });
        let grads = grads.into_iter().collect::<Result<Vec<_>>>()?;

        let n = grads.len() as f64;
        let mut mean_z = vec![0.0; theta.dim()];
        let mut mean_h = vec![0.0; self.theta_h_flat.len()];
        let mut losses = Vec::with_capacity(grads.len());
        for g in &grads {
            mean_z.iter_mut().zip(g.grad_z.data()).for_each(|(m, x)| *m += x);
            mean_h.iter_mut().zip(g.grad_h.data()).for_each(|(m, x)| *m += x);
            losses.push(g.val_loss);
        }
        mean_z.iter_mut().for_each(|m| *m /= n);
        mean_h.iter_mut().for_each(|m| *m /= n);
        let meta_loss = losses.iter().sum::<f64>() / n;
        let meta_loss_std = if losses.len() > 1 {
            (losses.iter().map(|l| (l - meta_loss).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };

        let (beta1, beta2, ghat) = match (cfg.lr, &self.constants) {
            (LrMode::Constant { beta1, beta2 }, _) => (beta1, beta2, None),
            (LrMode::Adaptive { c_beta, .. }, Some(constants)) => {
                let est = estimation_indices(cfg.seed, round, t, cfg.estimation_batch);
                let flat = &self.theta_h_flat;
                let norms: Vec<Result<f64>> = self.pool.install(|| {
                    est.par_iter()
                        .map(|&i| meta_gradient::g_vector_flat(&universe[i], theta, flat, &adaptation).map(|g| g.norm()))
                        .collect()
                });
                let norms = norms.into_iter().collect::<Result<Vec<_>>>()?;
                let (g1, g2) = smoothness::estimator_from_norms(&norms, constants)?;
                let (b1, b2) = smoothness::meta_learning_rates(g1, g2, c_beta)?;
                (b1, b2, Some((g1, g2)))
            }
            (LrMode::Adaptive { .. }, None) => unreachable!("constants are derived for adaptive mode"),
        };

        let grad_z_norm = mean_z.iter().map(|x| x * x).sum::<f64>().sqrt();
        let grad_h_norm = mean_h.iter().map(|x| x * x).sum::<f64>().sqrt();
        let train_h = cfg.train_mirror_map;
        self.apply_update(&mean_z, &mean_h, beta1, beta2, train_h)?;
        self.next_round = round + 1;
        Ok(RoundRecord {
            round,
            batch_size: grads.len(),
            meta_loss,
            meta_loss_std,
            grad_z_norm,
            grad_h_norm,
            beta1,
            beta2,
            ghat1: ghat.map(|g| g.0),
            ghat2: ghat.map(|g| g.1),
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    }

    fn apply_update(&mut self, gz: &[f64], gh: &[f64], beta1: f64, beta2: f64, train_h: bool) -> Result<()> {
        let mut z = self.theta.theta_z.data().to_vec();
        let mut h = self.theta_h_flat.clone();
        match (&mut self.adam, self.config.optimizer) {
            (Some(s), MetaOptimizer::Adam { beta_m, beta_v, eps }) => {
                s.step += 1;
                let bc1 = 1.0 - beta_m.powi(s.step as i32);
                let bc2 = 1.0 - beta_v.powi(s.step as i32);
                let adam = |x: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64| {
                    for i in 0..x.len() {
                        m[i] = beta_m * m[i] + (1.0 - beta_m) * g[i];
                        v[i] = beta_v * v[i] + (1.0 - beta_v) * g[i] * g[i];
                        x[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                    }
                };
                adam(&mut z, gz, &mut s.m_z, &mut s.v_z, beta1);
                if train_h {
                    adam(&mut h, gh, &mut s.m_h, &mut s.v_h, beta2);
                }
            }
            _ => {
                z.iter_mut().zip(gz).for_each(|(x, g)| *x -= beta1 * g);
                if train_h {
                    h.iter_mut().zip(gh).for_each(|(x, g)| *x -= beta2 * g);
                }
            }
        }
        let theta_z = Array64::checked(vec![z.len()], z, "meta update of theta_z")?;
        let hv = Array64::checked(vec![h.len()], h, "meta update of theta_h")?;
        self.theta.theta_h = MirrorMapParams::from_flat(&self.theta.spec, hv.data())?;
        self.theta.theta_z = theta_z;
        self.theta_h_flat = hv.into_data();
        Ok(())
    }

    /// Held-out evaluation of the current meta-parameters.
    pub fn evaluate(&self) -> Result<EvalReport> {
        let cfg = &self.config;
        self.pool
            .install(|| evaluate(&self.theta, &cfg.family, &cfg.adaptation, cfg.eval_tasks, cfg.eval_seed))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.config, &self.theta, self.adam.as_ref(), self.next_round)
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let (config, theta, adam, next_round) = ckpt.restore()?;
        Self::from_parts(config, theta, adam, next_round)
    }

    fn should_evaluate(&self, round: usize) -> bool {
        let cfg = &self.config;
        cfg.eval_tasks >= 2
            && ((cfg.eval_every > 0 && (round + 1) % cfg.eval_every == 0) || round + 1 == cfg.rounds)
    }

    /// Runs until `rounds` (or the end), calling `on_round` after each
    /// round with the record and, when due, the evaluation report.
    pub fn run(&mut self, mut on_round: impl FnMut(&Self, &RoundRecord, Option<&EvalReport>) -> Result<()>) -> Result<RunMetrics> {
        let mut metrics = RunMetrics::default();
        while !self.is_finished() {
            let rec = self.step()?;
            let report = if self.should_evaluate(rec.round) {
                Some(self.evaluate().map_err(|e| {
                    if e.is_numerical() {
                        Error::NumericalAbort { round: rec.round, source: Box::new(e) }
                    } else {
                        e
                    }
                })?)
            } else {
                None
            };
            on_round(self, &rec, report.as_ref())?;
            if let Some(r) = report {
                metrics.evaluations.push((rec.round, r));
            }
            metrics.rounds.push(rec);
        }
        Ok(metrics)
    }
}

/// `ρ` report for a full run's records.
pub fn rho_report(seed: u64, records: &[RoundRecord]) -> Option<RhoReport> {
    if records.is_empty() {
        return None;
    }
    let total = records.last().map(|r| r.round + 1).unwrap_or(0);
    let rho = rho_round(seed, total);
    records.iter().find(|r| r.round == rho).map(|r| RhoReport {
        round: r.round,
        grad_z_norm: r.grad_z_norm,
        grad_h_norm: r.grad_h_norm,
    })
}

/// Trains from scratch for `config.rounds` rounds.
pub fn train(config: &TrainConfig) -> Result<(MetaParams, RunMetrics)> {
    let mut trainer = Trainer::new(config.clone())?;
    let mut metrics = trainer.run(|_, _, _| Ok(()))?;
    metrics.rho = rho_report(config.seed, &metrics.rounds);
    Ok((trainer.theta, metrics))
}

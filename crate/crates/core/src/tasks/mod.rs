//! Synthetic few-shot task families over a finite, enumerable universe.
//!
//! Every task is a deterministic function of `(family, index, seed)`.
//! Data-backed tasks draw disjoint train and validation points; the
//! quadratic family has no data and its losses are
//! `½(φ − c)ᵀA(φ − c)` with exact Lipschitz constants.

mod loss;
mod model;

pub use loss::{loss_grad, loss_hvp, loss_value, metric, Split, TaskLoss};
pub use model::Mlp;

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::array::{spectral_norm, Array64};
use crate::error::{Error, Result};

fn default_population() -> usize {
    64
}

fn default_shots() -> usize {
    10
}

fn default_amplitude() -> [f64; 2] {
    [0.1, 5.0]
}

fn default_phase() -> [f64; 2] {
    [0.0, PI]
}

fn default_x_range() -> [f64; 2] {
    [-5.0, 5.0]
}

fn default_sine_hidden() -> Vec<usize> {
    vec![8, 8]
}

fn default_classes() -> usize {
    3
}

fn default_features() -> usize {
    2
}

fn default_radius() -> f64 {
    2.0
}

fn default_noise() -> f64 {
    1.0
}

fn default_class_hidden() -> usize {
    8
}

fn default_quad_dim() -> usize {
    4
}

fn default_eig_range() -> [f64; 2] {
    [0.5, 2.0]
}

fn default_one() -> f64 {
    1.0
}

fn default_gap() -> f64 {
    0.1
}

/// Family-specific generation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyKind {
    /// `y = a·sin(x + p)`, fit by an MLP under mean-squared error.
    SinusoidRegression {
        #[serde(default = "default_amplitude")]
        amplitude: [f64; 2],
        #[serde(default = "default_phase")]
        phase: [f64; 2],
        #[serde(default = "default_x_range")]
        x_range: [f64; 2],
        #[serde(default = "default_sine_hidden")]
        hidden: Vec<usize>,
    },
    /// Class means on a sphere plus isotropic noise, softmax cross-entropy.
    GaussianClassification {
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_features")]
        features: usize,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default = "default_class_hidden")]
        hidden: usize,
    },
    /// `A_t = Q diag(λ) Qᵀ` with `λ` uniform in `eigenvalues`,
    /// `c_trn ~ N(0, center_scale²I)`, `c_val = c_trn + N(0, val_gap²I)`.
    Quadratic {
        #[serde(default = "default_quad_dim")]
        dim: usize,
        #[serde(default = "default_eig_range")]
        eigenvalues: [f64; 2],
        #[serde(default = "default_one")]
        center_scale: f64,
        #[serde(default = "default_gap")]
        val_gap: f64,
    },
}

/// A finite universe of `population` tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFamily {
    pub kind: FamilyKind,
    #[serde(default = "default_population")]
    pub population: usize,
    /// Training points per task (per class for classification).
    #[serde(default = "default_shots")]
    pub shots: usize,
    /// Validation points per task (per class for classification).
    #[serde(default = "default_shots")]
    pub val_count: usize,
}

impl TaskFamily {
    pub fn sinusoid() -> Self {
        Self {
            kind: FamilyKind::SinusoidRegression {
                amplitude: default_amplitude(),
                phase: default_phase(),
                x_range: default_x_range(),
                hidden: default_sine_hidden(),
            },
            population: default_population(),
            shots: default_shots(),
            val_count: default_shots(),
        }
    }

    pub fn gaussian_classification() -> Self {
        Self {
            kind: FamilyKind::GaussianClassification {
                classes: default_classes(),
                features: default_features(),
                radius: default_radius(),
                noise: default_noise(),
                hidden: default_class_hidden(),
            },
            population: default_population(),
            shots: 5,
            val_count: 5,
        }
    }

    pub fn quadratic(dim: usize) -> Self {
        Self {
            kind: FamilyKind::Quadratic {
                dim,
                eigenvalues: default_eig_range(),
                center_scale: 1.0,
                val_gap: default_gap(),
            },
            population: default_population(),
            shots: 0,
            val_count: 0,
        }
    }

    pub fn with_population(mut self, t: usize) -> Self {
        self.population = t;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.population == 0 {
            return bad("task population must be positive");
        }
        let range_ok = |r: &[f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        match &self.kind {
            FamilyKind::SinusoidRegression { amplitude, phase, x_range, hidden } => {
                if !(range_ok(amplitude) && range_ok(phase) && range_ok(x_range)) {
                    return bad("sinusoid ranges must be finite with low <= high");
                }
                if hidden.iter().any(|&w| w == 0) {
                    return bad("hidden widths must be positive");
                }
            }
            FamilyKind::GaussianClassification { classes, features, radius, noise, hidden } => {
                if *classes < 2 || *features == 0 || *hidden == 0 {
                    return bad("classification needs >= 2 classes, features > 0, hidden > 0");
                }
                if !(radius.is_finite() && noise.is_finite() && *noise >= 0.0) {
                    return bad("classification radius/noise must be finite, noise >= 0");
                }
            }
            FamilyKind::Quadratic { dim, eigenvalues, center_scale, val_gap } => {
                if *dim == 0 {
                    return bad("quadratic dimension must be positive");
                }
                if !(range_ok(eigenvalues) && eigenvalues[0] > 0.0) {
                    return bad("quadratic eigenvalues must satisfy 0 < low <= high");
                }
                if !(center_scale.is_finite() && val_gap.is_finite()) {
                    return bad("quadratic center scales must be finite");
                }
            }
        }
        if !matches!(self.kind, FamilyKind::Quadratic { .. }) && (self.shots == 0 || self.val_count == 0) {
            return bad("data-backed tasks need shots > 0 and val_count > 0");
        }
        Ok(())
    }

    /// The shared predictor, or `None` for the quadratic family.
    pub fn model(&self) -> Option<Mlp> {
        match &self.kind {
            FamilyKind::SinusoidRegression { hidden, .. } => Some(Mlp::new(1, hidden.clone(), 1)),
            FamilyKind::GaussianClassification { classes, features, hidden, .. } => {
                Some(Mlp::new(*features, vec![*hidden], *classes))
            }
            FamilyKind::Quadratic { .. } => None,
        }
    }

    /// Dimension `d` of the task parameters `φ`.
    pub fn param_dim(&self) -> usize {
        match &self.kind {
            FamilyKind::Quadratic { dim, .. } => *dim,
            _ => self.model().map(|m| m.param_count()).unwrap_or(0),
        }
    }

    /// Lower is better for regression and quadratic losses, higher for
    /// classification accuracy.
    pub fn metric_direction(&self) -> MetricDirection {
        match self.kind {
            FamilyKind::GaussianClassification { .. } => MetricDirection::HigherIsBetter,
            _ => MetricDirection::LowerIsBetter,
        }
    }

    pub fn metric_name(&self) -> &'static str {
        match self.kind {
            FamilyKind::SinusoidRegression { .. } => "mse",
            FamilyKind::GaussianClassification { .. } => "accuracy",
            FamilyKind::Quadratic { .. } => "loss",
        }
    }

    /// A reasonable starting `φ`: Glorot init for predictors, small Gaussian
    /// for quadratics.
    pub fn initial_point(&self, rng: &mut impl Rng) -> Array64 {
        match self.model() {
            Some(m) => m.init(rng),
            None => {
                let d = self.param_dim();
                let v: Vec<f64> = (0..d).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
                Array64::from_parts(vec![d], v)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricDirection {
    LowerIsBetter,
    HigherIsBetter,
}

/// Inputs and targets of one split. Classification targets hold class
/// indices as integral floats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Array64,
    pub labels: Array64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TaskData {
    Regression { model: Mlp, train: Dataset, val: Dataset },
    Classification { model: Mlp, train: Dataset, val: Dataset },
    Quadratic { a: Array64, c_trn: Array64, c_val: Array64 },
}

/// One few-shot task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task_id: usize,
    pub data: TaskData,
}

impl TaskInstance {
    pub fn param_dim(&self) -> usize {
        match &self.data {
            TaskData::Regression { model, .. } | TaskData::Classification { model, .. } => model.param_count(),
            TaskData::Quadratic { a, .. } => a.rows(),
        }
    }

    /// Regression task with fixed amplitude, phase and input locations.
    pub fn sinusoid(
        task_id: usize,
        model: Mlp,
        amplitude: f64,
        phase: f64,
        train_x: &[f64],
        val_x: &[f64],
    ) -> Result<Self> {
        if model.input_dim != 1 || model.output_dim != 1 {
            return Err(Error::InvalidArgument("sinusoid predictor must map 1 -> 1".into()));
        }
        let set = |xs: &[f64]| -> Result<Dataset> {
            if xs.is_empty() {
                return Err(Error::InvalidArgument("sinusoid split must be non-empty".into()));
            }
            Ok(Dataset {
                inputs: Array64::new(vec![xs.len(), 1], xs.to_vec())?,
                labels: Array64::vector(xs.iter().map(|&x| amplitude * (x + phase).sin()).collect())?,
            })
        };
        Ok(Self {
            task_id,
            data: TaskData::Regression { model, train: set(train_x)?, val: set(val_x)? },
        })
    }

    /// Quadratic task from explicit `A` (symmetric positive definite) and centers.
    pub fn quadratic(task_id: usize, a: Array64, c_trn: Array64, c_val: Array64) -> Result<Self> {
        if a.shape().len() != 2 || a.rows() != a.cols() {
            return Err(Error::InvalidArgument(format!("A must be square, got {:?}", a.shape())));
        }
        let d = a.rows();
        for c in [&c_trn, &c_val] {
            if c.shape() != [d] {
                return Err(Error::shape("quadratic center", &[d], c.shape()));
            }
        }
        if !a.is_symmetric(1e-12) || a.as_dmatrix().cholesky().is_none() {
            return Err(Error::InvalidArgument("A must be symmetric positive definite".into()));
        }
        Ok(Self { task_id, data: TaskData::Quadratic { a, c_trn, c_val } })
    }
}

fn task_rng(index: usize, seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Deterministic task `task_index` of the universe defined by `(family, seed)`.
pub fn sample_task(family: &TaskFamily, task_index: usize, rng_seed: u64) -> Result<TaskInstance> {
    family.validate()?;
    if task_index >= family.population {
        return Err(Error::TaskIndex { index: task_index, population: family.population });
    }
    let mut rng = task_rng(task_index, rng_seed);
    match &family.kind {
        FamilyKind::SinusoidRegression { amplitude, phase, x_range, .. } => {
            let a = uniform(&mut rng, *amplitude);
            let p = uniform(&mut rng, *phase);
            let xs: Vec<f64> = (0..family.shots + family.val_count)
                .map(|_| uniform(&mut rng, *x_range))
                .collect();
            let (train_x, val_x) = xs.split_at(family.shots);
            let model = family.model().expect("sinusoid has a model");
            TaskInstance::sinusoid(task_index, model, a, p, train_x, val_x)
        }
        FamilyKind::GaussianClassification { classes, features, radius, noise, .. } => {
            let means: Vec<Vec<f64>> = (0..*classes)
                .map(|_| {
                    let v = normal_vec(&mut rng, *features);
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                    v.into_iter().map(|x| radius * x / n).collect()
                })
                .collect();
            let mut draw = |per_class: usize| -> Result<Dataset> {
                let mut inputs = Vec::with_capacity(per_class * classes * features);
                let mut labels = Vec::with_capacity(per_class * classes);
                for _ in 0..per_class {
                    for (c, mean) in means.iter().enumerate() {
                        for &m in mean {
                            inputs.push(m + noise * rng.sample::<f64, _>(StandardNormal));
                        }
                        labels.push(c as f64);
                    }
                }
                Ok(Dataset {
                    inputs: Array64::new(vec![labels.len(), *features], inputs)?,
                    labels: Array64::vector(labels)?,
                })
            };
            let train = draw(family.shots)?;
            let val = draw(family.val_count)?;
            let model = family.model().expect("classification has a model");
            Ok(TaskInstance { task_id: task_index, data: TaskData::Classification { model, train, val } })
        }
        FamilyKind::Quadratic { dim, eigenvalues, center_scale, val_gap } => {
            let d = *dim;
            let g = DMatrix::from_vec(d, d, normal_vec(&mut rng, d * d));
            let q = g.qr().q();
            let lambda: Vec<f64> = (0..d).map(|_| uniform(&mut rng, *eigenvalues)).collect();
            let a = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(lambda)) * q.transpose();
            let a = (&a + a.transpose()) * 0.5;
            let c_trn: Vec<f64> = normal_vec(&mut rng, d).into_iter().map(|x| center_scale * x).collect();
            let c_val: Vec<f64> = c_trn
                .iter()
                .zip(normal_vec(&mut rng, d))
                .map(|(c, n)| c + val_gap * n)
                .collect();
            TaskInstance::quadratic(task_index, Array64::from_dmatrix(&a), Array64::vector(c_trn)?, Array64::vector(c_val)?)
        }
    }
}

/// All `population` tasks of a family.
pub fn sample_universe(family: &TaskFamily, rng_seed: u64) -> Result<Vec<TaskInstance>> {
    (0..family.population).map(|i| sample_task(family, i, rng_seed)).collect()
}

/// `(G_ℓ, H_ℓ)` for families where they are known exactly.
pub fn family_lipschitz(family: &TaskFamily, rng_seed: u64) -> Result<(f64, f64)> {
    match family.kind {
        FamilyKind::Quadratic { .. } => {
            let tasks = sample_universe(family, rng_seed)?;
            lipschitz_of_tasks(&tasks)
        }
        _ => Err(Error::Unavailable(
            "loss Lipschitz constants of neural-network families are not known; configure G_ell and H_ell manually".into(),
        )),
    }
}

/// `(max_t ‖A_t‖₂, 0)` over a set of quadratic tasks.
pub fn lipschitz_of_tasks(tasks: &[TaskInstance]) -> Result<(f64, f64)> {
    let mut g = 0.0_f64;
    for t in tasks {
        match &t.data {
            TaskData::Quadratic { a, .. } => g = g.max(power_iteration(a)),
            _ => {
                return Err(Error::Unavailable(
                    "loss Lipschitz constants are only exact for quadratic tasks; configure them manually".into(),
                ))
            }
        }
    }
    Ok((g, 0.0))
}

/// Largest eigenvalue magnitude of a symmetric matrix.
pub fn power_iteration(a: &Array64) -> f64 {
    let d = a.rows();
    let m = a.as_dmatrix();
    let mut v = nalgebra::DVector::from_fn(d, |i, _| 1.0 + 0.1 * i as f64);
    v /= v.norm();
    for _ in 0..10_000 {
        let w = &m * &v;
        let n = w.norm();
        if n == 0.0 {
            return 0.0;
        }
        let next = w / n;
        let step = (&next - &v).norm();
        v = next;
        if step < 1e-13 {
            return (v.transpose() * &m * &v)[(0, 0)].abs();
        }
    }
    spectral_norm(a)
}

/// Serializable task universe for exact reuse across runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskUniverse {
    pub schema_version: u32,
    pub family: TaskFamily,
    pub seed: u64,
    pub tasks: Vec<TaskInstance>,
}

impl TaskUniverse {
    pub fn generate(family: &TaskFamily, seed: u64) -> Result<Self> {
        Ok(Self { schema_version: 1, family: family.clone(), seed, tasks: sample_universe(family, seed)? })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let u: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if u.schema_version != 1 {
            return Err(Error::Schema(format!("unsupported task universe schema {}", u.schema_version)));
        }
        Ok(u)
    }
}

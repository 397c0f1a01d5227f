//! TOML experiment configuration.
//!
//! Unknown keys are rejected. Omitted keys take the defaults documented on
//! each field; the mirror map's input dimension is taken from the task
//! family.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptation::AdaptationConfig;
use crate::error::{Error, Result};
use crate::mirror::{MapActivation, MirrorMapSpec};
use crate::trainer::{LrMode, MetaOptimizer, TrainConfig};
use crate::tasks::TaskFamily;

pub const CONFIG_SCHEMA: u32 = 1;

fn schema() -> u32 {
    CONFIG_SCHEMA
}

fn default_id() -> String {
    "experiment".into()
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/experiment")
}

fn default_rounds() -> usize {
    60_000
}

fn default_batch() -> usize {
    4
}

fn default_eval_tasks() -> usize {
    200
}

fn default_eval_seed() -> u64 {
    1_000_003
}

fn default_true() -> bool {
    true
}

fn default_family() -> TaskFamily {
    TaskFamily::sinusoid()
}

fn default_layers() -> usize {
    1
}

fn default_one() -> f64 {
    1.0
}

fn default_two() -> f64 {
    2.0
}

fn default_activation() -> MapActivation {
    MapActivation::Softplus
}

/// Mirror map architecture without the input dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MirrorConfig {
    #[serde(default = "default_layers")]
    pub num_layers: usize,
    #[serde(default)]
    pub hidden_widths: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: MapActivation,
    #[serde(default = "default_one")]
    pub weight_bound: f64,
    #[serde(default = "default_one")]
    pub skip_bound: f64,
    #[serde(default = "default_true")]
    pub include_quadratic: bool,
    #[serde(default = "default_two")]
    pub quadratic_bound: f64,
    #[serde(default)]
    pub enforce_psd_quadratic: bool,
    /// Start from the exact identity map `½‖z‖²` (requires `num_layers = 0`).
    #[serde(default)]
    pub identity_start: bool,
    #[serde(default = "default_true")]
    pub trainable: bool,
}

impl Default for MirrorConfig {
    fn default() -> Self {
        Self {
            num_layers: default_layers(),
            hidden_widths: vec![],
            activation: default_activation(),
            weight_bound: 1.0,
            skip_bound: 1.0,
            include_quadratic: true,
            quadratic_bound: 2.0,
            enforce_psd_quadratic: false,
            identity_start: false,
            trainable: true,
        }
    }
}

impl MirrorConfig {
    pub fn spec(&self, input_dim: usize) -> MirrorMapSpec {
        MirrorMapSpec {
            input_dim,
            num_layers: self.num_layers,
            hidden_widths: self.hidden_widths.clone(),
            activation: self.activation,
            weight_bound: self.weight_bound,
            skip_bound: self.skip_bound,
            include_quadratic: self.include_quadratic,
            quadratic_bound: self.quadratic_bound,
            enforce_psd_quadratic: self.enforce_psd_quadratic,
        }
    }
}

/// A complete experiment: training setup, evaluation and output location.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema")]
    pub schema_version: u32,
    #[serde(default = "default_id")]
    pub id: String,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub task_seed: u64,
    /// Meta-training rounds `R`.
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Meta batch size `B`.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Estimation batch size; 0 selects constant learning rates.
    #[serde(default)]
    pub estimation_batch: usize,
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default = "default_eval_tasks")]
    pub eval_tasks: usize,
    #[serde(default = "default_eval_seed")]
    pub eval_seed: u64,
    #[serde(default)]
    pub adaptation: AdaptationConfig,
    #[serde(default)]
    pub lr: LrMode,
    #[serde(default)]
    pub optimizer: MetaOptimizer,
    #[serde(default = "default_family")]
    pub family: TaskFamily,
    #[serde(default)]
    pub mirror: MirrorConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("every field has a default")
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA})",
                cfg.schema_version
            )));
        }
        cfg.train_config()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The validated trainer configuration.
    pub fn train_config(&self) -> Result<TrainConfig> {
        self.family.validate()?;
        let d = self.family.param_dim();
        let spec = self.mirror.spec(d);
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        let initial_mirror_params = if self.mirror.identity_start {
            if self.mirror.num_layers != 0 || !self.mirror.include_quadratic {
                return Err(Error::Config(
                    "identity_start needs num_layers = 0 and include_quadratic = true".into(),
                ));
            }
            let (id_spec, params) = crate::mirror::identity_map(d)?;
            if id_spec.quadratic_bound != spec.quadratic_bound || spec.enforce_psd_quadratic {
                return Err(Error::Config(
                    "identity_start needs quadratic_bound = 2 and enforce_psd_quadratic = false".into(),
                ));
            }
            Some(params)
        } else {
            None
        };
        let cfg = TrainConfig {
            rounds: self.rounds,
            batch_size: self.batch_size,
            estimation_batch: self.estimation_batch,
            adaptation: self.adaptation,
            lr: self.lr,
            optimizer: self.optimizer,
            seed: self.seed,
            task_seed: self.task_seed,
            eval_every: self.eval_every,
            eval_tasks: self.eval_tasks,
            eval_seed: self.eval_seed,
            family: self.family.clone(),
            mirror_spec: spec,
            train_mirror_map: self.mirror.trainable,
            initial_mirror_params,
        };
        cfg.validate().map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        })?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptation::AdaptationMode;

    #[test]
    fn defaults() {
        let c = ExperimentConfig::default();
        assert_eq!(c.adaptation.steps, 5);
        assert_eq!(c.batch_size, 4);
        assert_eq!(c.rounds, 60_000);
        assert_eq!(c.adaptation.alpha, 1e-2);
        assert_eq!(c.adaptation.mode, AdaptationMode::Mida);
        assert_eq!(c.lr, LrMode::Constant { beta1: 1e-3, beta2: 1e-4 });
        assert_eq!(c.train_config().unwrap().mirror_spec.input_dim, 97);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("roundz = 3").is_err());
        assert!(ExperimentConfig::from_toml_str("[adaptation]\nstep = 3").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            id = "quad"
            rounds = 10
            estimation_batch = 2
            [lr]
            type = "adaptive"
            c_beta = 10.0
            g_ell = 2.0
            h_ell = 1.0
            g_lh = 1.0
            h_h = 1.0
            [family]
            population = 8
            [family.kind]
            type = "quadratic"
            dim = 3
            [mirror]
            num_layers = 0
            identity_start = true
            trainable = false
        "#;
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        let again = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.train_config().unwrap(), again.train_config().unwrap());
    }
}

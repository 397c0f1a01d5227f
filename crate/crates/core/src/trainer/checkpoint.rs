use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AdamState, TrainConfig};
use crate::adaptation::MetaParams;
use crate::array::Array64;
use crate::error::{Error, Result};
use crate::mirror::{MirrorMapParams, MirrorMapSpec};

pub const CHECKPOINT_SCHEMA: u32 = 1;

/// RNG position: every stream is derived from the seed and the round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub task_seed: u64,
    pub next_round: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MirrorParamsDoc {
    pub raw_w: Vec<Value>,
    pub raw_m: Vec<Value>,
    pub bias: Vec<Value>,
    pub raw_p: Option<Value>,
}

/// JSON checkpoint document. Arrays are row-major nested lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub round: usize,
    pub mirror_spec: MirrorMapSpec,
    pub theta_z: Value,
    pub theta_h: MirrorParamsDoc,
    pub rng: RngState,
    pub optimizer: Option<AdamState>,
    pub config: TrainConfig,
}

fn nested(a: &Array64) -> Value {
    fn rec(shape: &[usize], data: &[f64]) -> Value {
        if shape.len() == 1 {
            return Value::Array(data.iter().map(|&x| Value::from(x)).collect());
        }
        let stride: usize = shape[1..].iter().product();
        Value::Array(data.chunks(stride).map(|c| rec(&shape[1..], c)).collect())
    }
    rec(a.shape(), a.data())
}

fn unnested(v: &Value, what: &str) -> Result<Array64> {
    fn rec(v: &Value, depth: usize, shape: &mut Vec<usize>, out: &mut Vec<f64>, what: &str) -> Result<()> {
        match v {
            Value::Array(items) => {
                if shape.len() == depth {
                    shape.push(items.len());
                } else if shape[depth] != items.len() {
                    return Err(Error::Schema(format!("{what}: ragged nested list")));
                }
                for item in items {
                    rec(item, depth + 1, shape, out, what)?;
                }
                Ok(())
            }
            Value::Number(n) => {
                if depth != shape.len() {
                    return Err(Error::Schema(format!("{what}: ragged nested list")));
                }
                out.push(n.as_f64().ok_or_else(|| Error::Schema(format!("{what}: bad number")))?);
                Ok(())
            }
            _ => Err(Error::Schema(format!("{what}: expected numbers in nested lists"))),
        }
    }
    let mut shape = Vec::new();
    let mut out = Vec::new();
    rec(v, 0, &mut shape, &mut out, what)?;
    Array64::new(shape, out).map_err(|e| Error::Schema(format!("{what}: {e}")))
}

impl Checkpoint {
    pub(crate) fn capture(config: &TrainConfig, theta: &MetaParams, adam: Option<&AdamState>, next_round: usize) -> Self {
        let p = &theta.theta_h;
        Self {
            schema_version: CHECKPOINT_SCHEMA,
            round: next_round,
            mirror_spec: theta.spec.clone(),
            theta_z: nested(&theta.theta_z),
            theta_h: MirrorParamsDoc {
                raw_w: p.raw_w.iter().map(nested).collect(),
                raw_m: p.raw_m.iter().map(nested).collect(),
                bias: p.bias.iter().map(nested).collect(),
                raw_p: p.raw_p.as_ref().map(nested),
            },
            rng: RngState { seed: config.seed, task_seed: config.task_seed, next_round },
            optimizer: adam.cloned(),
            config: config.clone(),
        }
    }

    /// Parameters with the spec's and config's dimensions checked.
    pub fn meta_params(&self) -> Result<MetaParams> {
        if self.schema_version != CHECKPOINT_SCHEMA {
            return Err(Error::Schema(format!(
                "checkpoint schema_version {} is not supported (expected {CHECKPOINT_SCHEMA})",
                self.schema_version
            )));
        }
        let theta_z = unnested(&self.theta_z, "theta_z")?;
        let d_spec = self.mirror_spec.input_dim;
        let d_task = self.config.family.param_dim();
        if theta_z.shape() != [d_spec] {
            return Err(Error::Schema(format!(
                "theta_z has dimension {:?} but the mirror map expects {d_spec}",
                theta_z.shape()
            )));
        }
        if d_spec != d_task {
            return Err(Error::Schema(format!(
                "mirror map dimension {d_spec} does not match task parameter dimension {d_task}"
            )));
        }
        let list = |vs: &[Value], what: &str| vs.iter().map(|v| unnested(v, what)).collect::<Result<Vec<_>>>();
        let theta_h = MirrorMapParams {
            raw_w: list(&self.theta_h.raw_w, "raw_w")?,
            raw_m: list(&self.theta_h.raw_m, "raw_m")?,
            bias: list(&self.theta_h.bias, "bias")?,
            raw_p: self.theta_h.raw_p.as_ref().map(|v| unnested(v, "raw_p")).transpose()?,
        };
        theta_h
            .validate(&self.mirror_spec)
            .map_err(|e| Error::Schema(format!("theta_h does not match mirror_spec: {e}")))?;
        Ok(MetaParams { theta_z, theta_h, spec: self.mirror_spec.clone() })
    }

    pub(crate) fn restore(self) -> Result<(TrainConfig, MetaParams, Option<AdamState>, usize)> {
        let theta = self.meta_params()?;
        if self.config.mirror_spec != self.mirror_spec {
            return Err(Error::Schema("mirror_spec differs from the stored config".into()));
        }
        if self.rng.seed != self.config.seed || self.rng.task_seed != self.config.task_seed || self.rng.next_round != self.round {
            return Err(Error::Schema("rng state disagrees with the stored config".into()));
        }
        if self.round > self.config.rounds {
            return Err(Error::Schema(format!(
                "checkpoint round {} exceeds configured rounds {}",
                self.round, self.config.rounds
            )));
        }
        Ok((self.config, theta, self.optimizer, self.round))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_string(ckpt)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("corrupt checkpoint {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_round_trip_is_bit_exact() {
        let a = Array64::new(vec![2, 3], vec![0.1, -1e-300, 3.0, 1.0 / 3.0, 7e200, -0.0]).unwrap();
        let v = nested(&a);
        let text = serde_json::to_string(&v).unwrap();
        let back = unnested(&serde_json::from_str(&text).unwrap(), "a").unwrap();
        assert_eq!(back.shape(), a.shape());
        for (x, y) in back.data().iter().zip(a.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn ragged_lists_are_rejected() {
        let v: Value = serde_json::from_str("[[1.0, 2.0], [3.0]]").unwrap();
        assert!(matches!(unnested(&v, "x"), Err(Error::Schema(_))));
    }
}

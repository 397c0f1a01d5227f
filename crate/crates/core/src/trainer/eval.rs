use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptation::{adapt, AdaptationConfig, MetaParams};
use crate::error::{Error, Result};
use crate::tasks::{metric, sample_task, MetricDirection, TaskFamily};

/// Mean and normal-approximation 95% interval of the metric after `k` steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KStat {
    pub k: usize,
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub direction: MetricDirection,
    pub per_k: Vec<KStat>,
}

impl EvalReport {
    pub fn at(&self, k: usize) -> Option<&KStat> {
        self.per_k.iter().find(|s| s.k == k)
    }
}

/// Adapts to `n_tasks` held-out tasks drawn from `(family, seed)` and
/// summarizes the validation metric at every step `k = 0..K`.
pub fn evaluate(
    theta: &MetaParams,
    family: &TaskFamily,
    adaptation: &AdaptationConfig,
    n_tasks: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n_tasks < 2 {
        return Err(Error::Precondition(format!("evaluation needs >= 2 tasks, got {n_tasks}")));
    }
    let held_out = family.clone().with_population(n_tasks);
    let rows: Vec<Result<Vec<f64>>> = (0..n_tasks)
        .into_par_iter()
        .map(|i| {
            let task = sample_task(&held_out, i, seed)?;
            let trace = adapt(&task, theta, adaptation)?;
            trace.primal_states.iter().map(|phi| metric(&task, phi)).collect()
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let per_k = (0..=adaptation.steps)
        .map(|k| {
            let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let std = var.sqrt();
            let half = 1.96 * std / n.sqrt();
            KStat { k, mean, std, ci_low: mean - half, ci_high: mean + half, n: rows.len() }
        })
        .collect();
    Ok(EvalReport {
        metric: family.metric_name().to_string(),
        direction: family.metric_direction(),
        per_k,
    })
}

//! Meta-trains a learned mirror map and a MAML baseline (identity map,
//! frozen) on few-shot sinusoid regression and compares held-out MSE per
//! adaptation step. Pass a round count as the first argument (default 300).

use miramet::mirror::{identity_map, MirrorMapSpec};
use miramet::tasks::TaskFamily;
use miramet::trainer::{train, LrMode, TrainConfig};

fn config(rounds: usize, maml: bool) -> anyhow::Result<TrainConfig> {
    let family = TaskFamily::sinusoid();
    let d = family.param_dim();
    let mut cfg = TrainConfig::new(family, MirrorMapSpec::new(d, 1, vec![]));
    cfg.rounds = rounds;
    cfg.eval_tasks = 200;
    cfg.lr = LrMode::Constant { beta1: 1e-3, beta2: 1e-3 };
    if maml {
        let (spec, params) = identity_map(d)?;
        cfg.mirror_spec = spec;
        cfg.initial_mirror_params = Some(params);
        cfg.train_mirror_map = false;
    }
    Ok(cfg)
}

fn main() -> anyhow::Result<()> {
    let rounds = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(300);
    for (name, maml) in [("learned map", false), ("MAML", true)] {
        let (_, metrics) = train(&config(rounds, maml)?)?;
        let (_, report) = metrics.evaluations.last().expect("final evaluation");
        println!("{name} after {rounds} rounds, held-out {}:", report.metric);
        for s in &report.per_k {
            println!("  k={}  {:.4}  [{:.4}, {:.4}]", s.k, s.mean, s.ci_low, s.ci_high);
        }
    }
    Ok(())
}

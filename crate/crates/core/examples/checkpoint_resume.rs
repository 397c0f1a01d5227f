//! Trains for 10 rounds, extends the finished run to 20 rounds from its
//! checkpoint and checks the metrics match a straight 20-round run.

use miramet::mirror::MirrorMapSpec;
use miramet::tasks::TaskFamily;
use miramet::trainer::{read_round_records, run_experiment, TrainConfig};

fn main() -> anyhow::Result<()> {
    let family = TaskFamily::quadratic(4).with_population(16);
    let mut cfg = TrainConfig::new(family, MirrorMapSpec::new(4, 1, vec![]));
    cfg.rounds = 20;
    cfg.eval_tasks = 10;

    let root = std::env::temp_dir().join(format!("miramet-resume-{}", std::process::id()));
    let (whole, split) = (root.join("whole"), root.join("split"));
    run_experiment(&cfg, &whole, None, 0)?;

    let mut half = cfg.clone();
    half.rounds = 10;
    run_experiment(&half, &split, None, 10)?;
    let mut ckpt = miramet::trainer::load_checkpoint(&split.join("checkpoint.json"))?;
    ckpt.config.rounds = cfg.rounds;
    miramet::trainer::save_checkpoint(&ckpt, &split.join("checkpoint.json"))?;
    let outcome = run_experiment(&cfg, &split, Some(&split.join("checkpoint.json")), 5)?;
    println!("{outcome:?}");

    let a = read_round_records(&whole.join("metrics.csv"))?;
    let b = read_round_records(&split.join("metrics.csv"))?;
    let same = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.same_values(y));
    println!("{} rounds each; identical metrics: {same}", a.len());
    std::fs::remove_dir_all(&root)?;
    Ok(())
}

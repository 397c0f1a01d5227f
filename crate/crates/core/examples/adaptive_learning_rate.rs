//! Meta learning rates set each round from the batch smoothness estimate,
//! on quadratic tasks whose loss constants are known exactly.

use miramet::mirror::MirrorMapSpec;
use miramet::tasks::{family_lipschitz, TaskFamily};
use miramet::trainer::{LrMode, Trainer, TrainConfig};

fn main() -> anyhow::Result<()> {
    let family = TaskFamily::quadratic(3).with_population(16);
    let (g_ell, _) = family_lipschitz(&family, 0)?;
    let mut spec = MirrorMapSpec::new(3, 0, vec![]);
    spec.enforce_psd_quadratic = true;
    let mut cfg = TrainConfig::new(family, spec);
    cfg.rounds = 40;
    cfg.estimation_batch = 2;
    cfg.eval_tasks = 0;
    cfg.adaptation.alpha = 0.001;
    cfg.lr = LrMode::Adaptive { c_beta: 5.0, g_ell, h_ell: 1e-3, g_lh: 2.0 * g_ell, h_h: 1e-3, g_h: None, sigma: 0.0 };

    let mut trainer = Trainer::new(cfg)?;
    let c = trainer.constants().expect("adaptive mode").clone();
    println!("gamma = {:.4}, C_G1 = {:.4e}, C_G2 = {:.4e}", c.gamma, c.c_g1, c.c_g2);
    while !trainer.is_finished() {
        let r = trainer.step()?;
        if r.round % 5 == 0 {
            println!(
                "round {:>2}: loss {:.4}  Ghat = ({:.4}, {:.4})  beta = ({:.4}, {:.4})",
                r.round,
                r.meta_loss,
                r.ghat1.unwrap_or(f64::NAN),
                r.ghat2.unwrap_or(f64::NAN),
                r.beta1,
                r.beta2
            );
        }
    }
    Ok(())
}

//! Task adaptation under three mirror maps on one quadratic task:
//! the identity map (plain gradient descent), a fixed quadratic map
//! (preconditioned descent) and a small learned conjugate network.

use miramet::adaptation::{adapt, AdaptationConfig, MetaParams};
use miramet::mirror::{identity_map, init_params, quadratic_map, MirrorMapSpec};
use miramet::tasks::{sample_task, TaskFamily};
use miramet::Array64;

fn main() -> anyhow::Result<()> {
    let family = TaskFamily::quadratic(3);
    let task = sample_task(&family, 0, 42)?;
    let start = Array64::vector(vec![1.0, -1.0, 0.5])?;
    let cfg = AdaptationConfig::mida(5, 0.2);

    let p = Array64::from_rows(&[vec![1.5, 0.2, 0.0], vec![0.2, 1.0, 0.1], vec![0.0, 0.1, 0.7]])?;
    let learned_spec = MirrorMapSpec::new(3, 2, vec![4]);
    let maps = [
        ("identity", identity_map(3)?),
        ("quadratic", quadratic_map(&p)?),
        ("learned", (learned_spec.clone(), init_params(&learned_spec, 7)?)),
    ];
    for (name, (spec, params)) in maps {
        let theta = MetaParams::new(start.clone(), params, spec)?;
        let trace = adapt(&task, &theta, &cfg)?;
        let losses: Vec<String> = trace.val_losses.iter().map(|l| format!("{l:.4}")).collect();
        println!("{name:>9}: validation loss per step [{}]", losses.join(", "));
    }
    Ok(())
}

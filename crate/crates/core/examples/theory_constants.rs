//! Convergence constants, the admissible step size and batch size, and the
//! gradient-norm budget for a given number of rounds.

use miramet::smoothness::{alpha_max, convergence_budget, corollary_alpha, corollary_c_beta, derive_constants, TheoryInputs};

fn main() -> anyhow::Result<()> {
    let tasks = 64;
    let (g_h, g_ell) = (2.0, 4.0);
    let steps = 3;
    let alpha = corollary_alpha(tasks, steps, g_h, g_ell)?;
    let c_beta = corollary_c_beta(tasks) * 4.0;
    let inputs = TheoryInputs {
        g_ell,
        h_ell: 1.0,
        g_lh: 3.0,
        g_h,
        h_h: 0.5,
        sigma: 0.2,
        tasks,
        alpha,
        steps,
        batch_size: 16,
    };
    println!("alpha_max = {:?}, corollary alpha = {alpha:.5}", alpha_max(steps, g_h, g_ell));
    let c = derive_constants(&inputs, c_beta)?;
    println!("{}", serde_json::to_string_pretty(&c)?);
    let b_min = c.b_min.max(1) as usize;
    for (rounds, batch) in [(100, b_min), (10_000, b_min), (10_000, 100 * b_min), (1_000_000, 10_000 * b_min)] {
        let (z, h) = convergence_budget(1.0, rounds, batch, &c)?;
        println!("R = {rounds:>8}, B = {batch:>5}: E|grad_1 L| <= {z:.4}, E|grad_2 L| <= {h:.4}");
    }
    match derive_constants(&TheoryInputs { alpha: 1.0, ..inputs }, c_beta) {
        Ok(_) => println!("unexpected: large step accepted"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}

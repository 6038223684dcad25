//! Solves a small hand-built QBD and prints its level marginals and drift.

use aloha_stability::qbd::{self, QbdChain, SolverOptions};
use nalgebra::DMatrix;

fn main() -> aloha_stability::Result<()> {
    // Two phases; phase 1 serves faster than phase 0.
    let a0 = DMatrix::from_row_slice(2, 2, &[0.10, 0.05, 0.05, 0.10]);
    let a1 = DMatrix::from_row_slice(2, 2, &[0.45, 0.10, 0.10, 0.25]);
    let a2 = DMatrix::from_row_slice(2, 2, &[0.20, 0.10, 0.10, 0.40]);
    let b0 = DMatrix::from_row_slice(2, 2, &[0.10, 0.05, 0.05, 0.10]);
    let b1 = DMatrix::from_row_slice(2, 2, &[0.75, 0.10, 0.10, 0.75]);
    let chain = QbdChain::new(a0, a1, a2.clone(), b0, b1, a2)?;

    let d = qbd::drift(&chain)?;
    println!("drift {:.6} ({:?})", d.mu, d.classify());

    for (name, opts) in [
        ("successive substitution", SolverOptions::default()),
        ("logarithmic reduction", SolverOptions::logarithmic_reduction()),
    ] {
        let sol = qbd::solve(&chain, &opts)?;
        println!(
            "{name}: {} iterations, sp(R) = {:.6}, residual {:.1e}",
            sol.iterations,
            qbd::spectral_radius(&sol.r_matrix),
            qbd::r_residual(&chain, &sol.r_matrix)
        );
        let m = qbd::level_marginals(&sol, 6);
        for (l, v) in m.iter().enumerate() {
            println!("  P(level {l}) = {v:.8}");
        }
    }
    Ok(())
}

#![allow(dead_code)]

use aloha_stability::qbd::QbdChain;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

/// Dense transition matrix of the chain cut at `levels` levels above 0.
/// Up-moves out of the top level are folded back onto it.
pub fn truncated_matrix(chain: &QbdChain, levels: usize) -> DMatrix<f64> {
    let m0 = chain.b1.nrows();
    let m = chain.a1.nrows();
    let size = m0 + levels * m;
    let off = |l: usize| if l == 0 { 0 } else { m0 + (l - 1) * m };
    let mut p = DMatrix::<f64>::zeros(size, size);
    p.view_mut((0, 0), (m0, m0)).copy_from(&chain.b1);
    p.view_mut((0, off(1)), (m0, m)).copy_from(&chain.b0);
    for l in 1..=levels {
        let o = off(l);
        if l == 1 {
            p.view_mut((o, 0), (m, m0)).copy_from(&chain.b2);
        } else {
            p.view_mut((o, off(l - 1)), (m, m)).copy_from(&chain.a2);
        }
        if l == levels {
            p.view_mut((o, o), (m, m)).copy_from(&(&chain.a1 + &chain.a0));
        } else {
            p.view_mut((o, o), (m, m)).copy_from(&chain.a1);
            p.view_mut((o, off(l + 1)), (m, m)).copy_from(&chain.a0);
        }
    }
    p
}

/// Stationary vector of a finite stochastic matrix by one LU solve, with the
/// first balance equation swapped for normalisation.
pub fn dense_stationary(p: &DMatrix<f64>) -> DVector<f64> {
    let n = p.nrows();
    let mut sys = (p - DMatrix::<f64>::identity(n, n)).transpose();
    for c in 0..n {
        sys[(0, c)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[0] = 1.0;
    sys.lu().solve(&rhs).expect("singular truncated chain")
}

/// Level marginals of the truncated chain.
pub fn truncated_marginals(chain: &QbdChain, levels: usize) -> Vec<f64> {
    let m0 = chain.b1.nrows();
    let m = chain.a1.nrows();
    let x = dense_stationary(&truncated_matrix(chain, levels));
    let mut out = vec![x.rows(0, m0).sum()];
    for l in 1..=levels {
        out.push(x.rows(m0 + (l - 1) * m, m).sum());
    }
    out
}

/// Two-node, no-backoff boundary of node `i` at a feasible peer rate.
pub fn two_node_sr(p_i: f64, lambda_j: f64) -> f64 {
    p_i * (1.0 - lambda_j / (1.0 - p_i))
}

/// Exact area of the symmetric-or-not two-node, no-backoff region by
/// midpoint quadrature of the largest admissible `lambda_2` over `lambda_1`.
pub fn two_node_area(p1: f64, p2: f64, steps: usize) -> f64 {
    let h = p1 / steps as f64;
    let mut area = 0.0;
    for k in 0..steps {
        let l1 = (k as f64 + 0.5) * h;
        // Node 2's own constraint, floored once node 1's rate is infeasible.
        let g2 = if l1 < p1 * (1.0 - p2) {
            p2 * (1.0 - l1 / (1.0 - p2))
        } else {
            p2 * (1.0 - p1)
        };
        let sup = if l1 < p1 * (1.0 - p2) {
            g2
        } else {
            g2.min((1.0 - l1 / p1) * (1.0 - p1))
        };
        area += sup.max(0.0) * h;
    }
    area
}

/// `n p (1 - p)^(n - 1)`.
pub fn aloha_throughput(n: usize, p: f64) -> f64 {
    n as f64 * p * (1.0 - p).powi(n as i32 - 1)
}

/// Prints one acceptance line, uncaptured so it shows in plain `cargo test`
/// output. Criteria listed as known gaps only fail the test when
/// `ACCEPTANCE_STRICT` is set.
pub fn report(criterion: u32, pass: bool, detail: &str, known_gap: bool) {
    let line = format!(
        "criterion {criterion:>2}: {} {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    let strict = std::env::var_os("ACCEPTANCE_STRICT").is_some();
    if !known_gap || strict {
        assert!(pass, "criterion {criterion} failed: {detail}");
    }
}

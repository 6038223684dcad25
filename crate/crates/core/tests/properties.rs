mod common;

use aloha_stability::io::RunConfig;
use aloha_stability::model::{self, CouplingOptions, CouplingState, NetworkConfig, PhaseSpace};
use aloha_stability::qbd::{self, QbdChain, SolverOptions};
use aloha_stability::region;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn split_row(weights: &[f64]) -> Vec<f64> {
    let s: f64 = weights.iter().sum();
    weights.iter().map(|w| w / s).collect()
}

/// Random QBD with `m0 = m` phases, rows drawn from positive weights.
fn random_qbd(m: usize, w: &[f64], down_bias: f64) -> QbdChain {
    let mut blocks = vec![DMatrix::<f64>::zeros(m, m); 6];
    for row in 0..m {
        let base = &w[row * 3 * m..(row + 1) * 3 * m];
        let mut rw: Vec<f64> = base.to_vec();
        for v in rw[..m].iter_mut() {
            *v *= down_bias;
        }
        let rw = split_row(&rw);
        for c in 0..m {
            blocks[2][(row, c)] = rw[c];
            blocks[1][(row, c)] = rw[m + c];
            blocks[0][(row, c)] = rw[2 * m + c];
        }
        let lw = split_row(&base[m..]);
        for c in 0..m {
            blocks[4][(row, c)] = lw[c];
            blocks[3][(row, c)] = lw[m + c];
        }
    }
    let b2 = blocks[2].clone();
    QbdChain::new(
        blocks[0].clone(),
        blocks[1].clone(),
        blocks[2].clone(),
        blocks[3].clone(),
        blocks[4].clone(),
        b2,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn generic_qbd_matches_truncated_chain(
        m in 1usize..=6,
        w in prop::collection::vec(0.05f64..1.0, 108),
        bias in 1.5f64..4.0,
    ) {
        let chain = random_qbd(m, &w, bias);
        let d = qbd::drift(&chain).unwrap();
        prop_assume!(d.mu < -1e-3);
        let sol = qbd::solve(&chain, &SolverOptions::default()).unwrap();
        let rho = qbd::spectral_radius(&sol.r_matrix);
        prop_assume!(rho < 0.95);
        let levels = (((1e-13f64).ln() / rho.max(1e-3).ln()).ceil() as usize + 2).max(12);
        prop_assume!(levels * m <= 3000);
        let dense = common::truncated_marginals(&chain, levels);
        let analytic = qbd::level_marginals(&sol, 10);
        for l in 0..=10 {
            prop_assert!((dense[l] - analytic[l]).abs() < 1e-8, "level {l}: {} vs {}", dense[l], analytic[l]);
        }
        let lr = qbd::solve(&chain, &SolverOptions::logarithmic_reduction()).unwrap();
        prop_assert!((&lr.r_matrix - &sol.r_matrix).amax() < 1e-9);
    }

    #[test]
    fn assembled_rows_are_stochastic(
        n in 2usize..=3,
        k in 0usize..=2,
        p in prop::collection::vec(0.05f64..=1.0, 3),
        lam in prop::collection::vec(0.0f64..=1.0, 3),
        z in prop::collection::vec(0.0f64..=1.0, 3),
        r in 1.0f64..6.0,
        i in 0usize..3,
    ) {
        let i = i % n;
        let cfg = NetworkConfig::new(p[..n].to_vec(), r, k, lam[..n].to_vec()).unwrap();
        let mut coupling = CouplingState::unsaturated(n);
        coupling.z.copy_from_slice(&z[..n]);
        let chain = model::assemble_chain(i, &cfg, &coupling).unwrap();
        chain.validate().unwrap();
        prop_assert_eq!(chain.m0(), (k + 2).pow(n as u32 - 1));
        prop_assert_eq!(chain.m(), (k + 1) * (k + 2).pow(n as u32 - 1));
    }

    #[test]
    fn no_backoff_blocks_ignore_r(
        p in prop::collection::vec(0.05f64..=1.0, 3),
        lam in prop::collection::vec(0.0f64..=0.3, 3),
        r1 in 1.0f64..8.0,
        r2 in 1.0f64..8.0,
    ) {
        let a = NetworkConfig::new(p.clone(), r1, 0, lam.clone()).unwrap();
        let b = a.with_r(r2);
        let c = CouplingState::unsaturated(3);
        prop_assert_eq!(model::assemble_chain(0, &a, &c).unwrap(), model::assemble_chain(0, &b, &c).unwrap());
    }

    #[test]
    fn unit_backoff_factor_ignores_cutoff(
        p in prop::collection::vec(0.2f64..=0.9, 2),
        lj in 0.0f64..0.1,
        k in 1usize..=3,
    ) {
        let base = NetworkConfig::new(p.clone(), 1.0, 0, vec![0.0, 0.0]).unwrap();
        let deep = NetworkConfig::new(p, 1.0, k, vec![0.0, 0.0]).unwrap();
        let a = region::lambda_sr(0, &[lj], &base).unwrap();
        let b = region::lambda_sr(0, &[lj], &deep).unwrap();
        prop_assert!((a.value - b.value).abs() < 1e-9, "{} vs {}", a.value, b.value);
    }

    #[test]
    fn saturated_peer_matches_closed_form(
        pi in 0.05f64..0.95,
        pj in 0.05f64..=1.0,
        frac in 0.01f64..0.95,
    ) {
        let lj = frac * pj * (1.0 - pi);
        let cfg = NetworkConfig::new(vec![pi, pj], 2.0, 0, vec![0.0, lj]).unwrap();
        let sol = model::solve_coupled(&cfg, Some(0)).unwrap();
        let want = (pj * (1.0 - pi) - lj) / ((1.0 - lj) * pj * (1.0 - pi));
        prop_assert!((sol.coupling.z[1] - want).abs() < 1e-12);
    }

    #[test]
    fn boundary_decreases_in_peer_rate(
        p in 0.3f64..=1.0,
        k in 0usize..=2,
        a in 0.0f64..0.25,
        b in 0.0f64..0.25,
    ) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let cfg = NetworkConfig::symmetric(2, p, 2.0, k).unwrap();
        let x = region::lambda_sr(0, &[lo], &cfg).unwrap().value;
        let y = region::lambda_sr(0, &[hi], &cfg).unwrap().value;
        prop_assert!(y <= x + 1e-9, "{y} > {x}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn coupled_solution_ignores_start(
        n in 2usize..=3,
        k in 0usize..=2,
        p in 0.3f64..0.9,
        frac in 0.05f64..0.5,
    ) {
        let lam = frac * p * (1.0 - p).powi(n as i32 - 1);
        let cfg = NetworkConfig::new(vec![p; n], 2.0, k, vec![lam; n]).unwrap();
        let zero = CouplingOptions { z_init: 0.0, ..CouplingOptions::default() };
        let one = CouplingOptions::default();
        let a = model::solve_coupled_with(&cfg, &[], &zero).unwrap();
        let b = model::solve_coupled_with(&cfg, &[], &one).unwrap();
        for (x, y) in a.coupling.z.iter().zip(&b.coupling.z) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn config_round_trip(
        n in 2usize..=4,
        k in 0usize..=3,
        p in prop::collection::vec(0.01f64..=1.0, 4),
        lam in prop::collection::vec(0.0f64..=1.0, 4),
        r in 1.0f64..10.0,
    ) {
        let arrivals: Vec<String> = lam[..n].iter().map(|l| format!("{{\"bernoulli\": {l:?}}}")).collect();
        let ps: Vec<String> = p[..n].iter().map(|x| format!("{x:?}")).collect();
        let text = format!(
            "{{\"network\": {{\"n\": {n}, \"p\": [{}], \"r\": {r:?}, \"K\": {k}}}, \"arrivals\": [{}]}}",
            ps.join(", "),
            arrivals.join(", ")
        );
        let cfg = RunConfig::from_json(&text).unwrap();
        let again = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        prop_assert_eq!(&cfg, &again);
        prop_assert_eq!(cfg.network_config().unwrap(), again.network_config().unwrap());
    }
}

#[test]
fn phase_count_law() {
    for n in 2..=4 {
        for k in 0..=3 {
            let s = PhaseSpace::new(0, n, k);
            assert_eq!(s.m0(), (k + 2).pow(n as u32 - 1));
            assert_eq!(s.m(), (k + 1) * (k + 2).pow(n as u32 - 1));
        }
    }
}

#[test]
fn sweeps_are_deterministic() {
    let cfg = NetworkConfig::symmetric(3, 0.6, 2.0, 1).unwrap();
    let a = region::sweep_region(&cfg, 0.05).unwrap();
    let b = region::sweep_region(&cfg, 0.05).unwrap();
    assert_eq!(a.surfaces, b.surfaces);
    assert_eq!(region::region_volume(&a), region::region_volume(&b));
}

#[test]
fn scalar_chain_matches_hand_solution() {
    // One phase: up 0.2 from 0, down 0.5 from 1, up 0.2 above.
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    let chain = QbdChain::new(one(0.2), one(0.3), one(0.5), one(0.2), one(0.8), one(0.5)).unwrap();
    let sol = qbd::solve(&chain, &SolverOptions::default()).unwrap();
    // pi(l+1) = 0.4 pi(l) for l >= 0 since 0.2 pi(0) = 0.5 pi(1).
    let rho: f64 = 0.4;
    let pi0 = 1.0 - rho;
    let m = qbd::level_marginals(&sol, 5);
    for (l, v) in m.iter().enumerate() {
        assert!((v - pi0 * rho.powi(l as i32)).abs() < 1e-10, "level {l}: {v} vs {}", pi0 * rho.powi(l as i32));
    }
}

#[test]
fn two_node_blocks_match_dense_truncation() {
    let cfg = NetworkConfig::new(vec![0.5, 0.5], 2.0, 0, vec![0.1, 0.1]).unwrap();
    let sol = model::solve_coupled(&cfg, None).unwrap();
    let chain = model::assemble_chain(0, &cfg, &sol.coupling).unwrap();
    let q = qbd::solve(&chain, &SolverOptions::default()).unwrap();
    let dense = common::truncated_marginals(&chain, 200);
    let analytic = qbd::level_marginals(&q, 20);
    for l in 0..=20 {
        assert!((dense[l] - analytic[l]).abs() < 1e-8);
    }
}

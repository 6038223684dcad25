//! Empirical boundary of node 2 against the analytic one.

use aloha_stability::model::NetworkConfig;
use aloha_stability::region;
use aloha_stability::sim::{self, SimConfig};

fn main() -> aloha_stability::Result<()> {
    let cfg = NetworkConfig::symmetric(2, 0.8, 2.0, 1)?;
    let sc = SimConfig::new(cfg.clone(), 1).with_horizon(1_000_000, 50_000);
    println!("lambda_1,analytic,empirical,lower,upper");
    for l1 in [0.1, 0.2, 0.3, 0.4] {
        let a = region::max_stable_rate(1, &[l1], &cfg, 1e-9)?;
        let e = sim::estimate_boundary(1, &[l1], &sc, 0.004)?;
        println!("{l1},{a:.5},{:.5},{:.5},{:.5}", e.lambda_max, e.lower, e.upper);
    }
    Ok(())
}

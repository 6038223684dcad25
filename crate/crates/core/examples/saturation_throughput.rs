//! Sum saturation throughput of four nodes, analytic and simulated.

use aloha_stability::model::NetworkConfig;
use aloha_stability::region;
use aloha_stability::sim::{self, SimConfig};

fn main() -> aloha_stability::Result<()> {
    println!("no backoff:");
    for k in 1..=9 {
        let p = k as f64 / 10.0;
        let s = region::saturation_throughput(&NetworkConfig::symmetric(4, p, 2.0, 0)?)?;
        println!("  p = {p}: {s:.5}");
    }
    println!("K = 1, p = 1:");
    for r in [1.5, 2.0, 4.0, 10.0, 50.0, 200.0] {
        let cfg = NetworkConfig::symmetric(4, 1.0, r, 1)?;
        let s = region::saturation_throughput(&cfg)?;
        let est = sim::saturated_run(&SimConfig::new(cfg, 7).with_horizon(500_000, 10_000))?;
        println!("  r = {r}: {s:.5} (simulated {:.5} +- {:.5})", est.throughput, est.half_width);
    }
    Ok(())
}

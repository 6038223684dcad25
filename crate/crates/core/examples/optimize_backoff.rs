//! Backoff factor maximizing the region volume of three nodes.
//!
//! `cargo run --release --example optimize_backoff -- 0.02`

use aloha_stability::model::NetworkConfig;
use aloha_stability::region::{self, Metric};

fn main() -> aloha_stability::Result<()> {
    let delta: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let rs = region::r_range(1.0, 8.0, 0.5)?;
    for p in [0.2, 1.0 / 3.0, 0.5, 0.8, 1.0] {
        let template = NetworkConfig::symmetric(3, p, 1.0, 1)?;
        let best = region::optimize_backoff(&template, Metric::Volume, &rs, delta)?;
        println!("p = {p:.3}: r_opt = {}, V = {:.5}", best.r_opt, best.value);
    }
    Ok(())
}

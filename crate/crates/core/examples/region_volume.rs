//! Region volume with and without backoff for two nodes.

use aloha_stability::model::NetworkConfig;
use aloha_stability::region;

fn main() -> aloha_stability::Result<()> {
    let delta = 0.005;
    for (label, cfg) in [
        ("no backoff, p = 2/3", NetworkConfig::symmetric(2, 2.0 / 3.0, 1.0, 0)?),
        ("K = 1, r = 2.6, p = 1", NetworkConfig::symmetric(2, 1.0, 2.6, 1)?),
    ] {
        let swept = region::sweep_region(&cfg, delta)?;
        let v = region::region_volume(&swept);
        println!(
            "{label}: V = {:.5} (inner {:.5}, outer {:.5}), {} solves",
            v.volume, v.inner, v.outer, swept.solves
        );
    }
    Ok(())
}

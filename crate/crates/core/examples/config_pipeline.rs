//! Runs the file-driven pipeline on a bundled config and lists the artifacts.

use std::path::Path;

use aloha_stability::io::{self, RunConfig, RunManifest, VerifyOptions};

fn main() -> aloha_stability::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/two_node_dmap.json");
    let cfg = RunConfig::load(&path)?;
    let out = std::env::temp_dir().join("aloha-sr-example");

    let m = RunManifest::new(&path, "region", &out);
    let s = io::cmd_region(&cfg, cfg.sweep.delta_lambda, &out, &m)?;
    println!("volume {:.5}, files {:?}", s.volume, s.files);

    let m = RunManifest::new(&path, "verify", &out);
    let report = io::cmd_verify(&cfg, &VerifyOptions::default(), &out, &m)?;
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("artifacts in {}", out.display());
    Ok(())
}

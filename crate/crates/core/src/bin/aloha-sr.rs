use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aloha_stability::io::{self, RunConfig, RunManifest, VerifyOptions};
use aloha_stability::region::{self, Metric};
use aloha_stability::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aloha-sr", version, about = "Stability regions of slotted Aloha with backoff")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the analytic stability region.
    Region {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        delta_lambda: Option<f64>,
    },
    /// Run the slot-level simulator.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long)]
        replications: Option<usize>,
        /// Estimate the empirical boundary of this node (1-based).
        #[arg(long)]
        boundary: Option<usize>,
    },
    /// Metric curve over the backoff parameter.
    Metrics {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum)]
        metric: Option<MetricArg>,
        /// `start:end:step`
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long)]
        delta_lambda: Option<f64>,
    },
    /// Cross-check the analytic pipeline.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
        /// Corrupt one entry of the extended matrix by this amount.
        #[arg(long)]
        perturb: Option<f64>,
        /// Also compare against a simulated boundary.
        #[arg(long)]
        simulate: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Volume,
    Throughput,
}

fn parse_sweep(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::Config(format!("--sweep {s:?} must look like start:end:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<f64> = parts
        .iter()
        .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    region::r_range(v[0], v[1], v[2])
}

fn manifest(config: &Path, sub: &str, out: &Path) -> RunManifest {
    RunManifest::new(config, sub, out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Region { config, out, delta_lambda } => {
            let cfg = RunConfig::load(&config)?;
            let mut m = manifest(&config, "region", &out);
            let delta = match delta_lambda {
                Some(d) => {
                    m = m.with_override("delta_lambda", d);
                    d
                }
                None => cfg.sweep.delta_lambda,
            };
            let s = io::cmd_region(&cfg, delta, &out, &m)?;
            println!("volume {} (inner {}, outer {})", s.volume, s.volume_inner, s.volume_outer);
            println!("saturation throughput {}", s.sat_throughput);
            println!("wrote {} boundary files to {}", s.files.len(), out.display());
        }
        Command::Simulate {
            config,
            out,
            seed,
            horizon,
            replications,
            boundary,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            let mut m = manifest(&config, "simulate", &out);
            if let Some(s) = seed {
                cfg.simulation.seed = s;
                m = m.with_override("seed", s);
            }
            if let Some(h) = horizon {
                cfg.simulation.horizon = h;
                m = m.with_override("horizon", h);
            }
            if let Some(r) = replications {
                cfg.simulation.replications = r;
                m = m.with_override("replications", r);
            }
            cfg.validate()?;
            let sim_cfg = cfg.sim_config()?;
            let m = m.with_seed(sim_cfg.seed);
            match boundary {
                Some(0) => return Err(Error::Config("--boundary is 1-based".into())),
                Some(node) => {
                    let m = m.with_override("boundary", node);
                    let rows = io::cmd_simulate_boundary(&cfg, &sim_cfg, node - 1, &out, &m)?;
                    for row in rows {
                        println!(
                            "lambda_others {:?}: empirical {} analytic {} relative {:+.4}",
                            row.empirical.lambda_others, row.empirical.lambda_max, row.analytic, row.relative_error
                        );
                    }
                }
                None => {
                    let res = io::cmd_simulate(&cfg, &sim_cfg, &out, &m)?;
                    println!("stability ratio {:?}", res.stability_ratio);
                    println!("queue slope {:?}", res.queue_slope);
                    println!("{}", if res.unstable { "unstable" } else { "stable" });
                }
            }
        }
        Command::Metrics {
            config,
            out,
            metric,
            sweep,
            delta_lambda,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            let mut m = manifest(&config, "metrics", &out);
            let metric = match metric {
                Some(MetricArg::Volume) => {
                    m = m.with_override("metric", "volume");
                    Metric::Volume
                }
                Some(MetricArg::Throughput) => {
                    m = m.with_override("metric", "throughput");
                    Metric::Throughput
                }
                None => cfg.sweep.metric,
            };
            if let Some(d) = delta_lambda {
                cfg.sweep.delta_lambda = d;
                m = m.with_override("delta_lambda", d);
                cfg.validate()?;
            }
            let r_values = match (&sweep, cfg.sweep.r) {
                (Some(s), _) => {
                    m = m.with_override("sweep", s);
                    parse_sweep(s)?
                }
                (None, Some(r)) => region::r_range(r.start, r.end, r.step)?,
                (None, None) => vec![cfg.network.r],
            };
            let best = io::cmd_metrics(&cfg, metric, &r_values, &out, &m)?;
            for pt in &best.curve {
                println!("r {} value {}", pt.r, pt.value);
            }
            println!("best r {} value {}", best.r_opt, best.value);
        }
        Command::Verify {
            config,
            out,
            tolerance,
            perturb,
            simulate,
        } => {
            let cfg = RunConfig::load(&config)?;
            let mut m = manifest(&config, "verify", &out).with_override("tolerance", tolerance);
            if let Some(e) = perturb {
                m = m.with_override("perturb", e);
            }
            let opts = VerifyOptions {
                tolerance,
                perturb,
                simulate,
            };
            let report = io::cmd_verify(&cfg, &opts, &out, &m)?;
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if !report.passed {
                let failed: Vec<String> = report
                    .checks
                    .iter()
                    .filter(|c| !c.passed)
                    .map(|c| format!("{} ({})", c.name, c.detail))
                    .collect();
                return Err(Error::Verification(failed.join("; ")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

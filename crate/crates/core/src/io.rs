//! Run configuration, manifests and the artifact writers behind the
//! command-line front end.
//!
//! A single JSON document drives both the analytic and the simulation
//! pipelines:
//!
//! ```json
//! {
//!   "network": { "n": 2, "p": [0.8, 0.8], "r": 2.0, "K": 1 },
//!   "arrivals": [ { "bernoulli": 0.1 },
//!                 { "dmap": { "d0": [[0.16, 0.64], [0.25, 0.25]],
//!                             "d1": [[0.04, 0.16], [0.25, 0.25]] } } ],
//!   "sweep": { "delta_lambda": 0.01, "metric": "volume",
//!              "r": { "start": 1.0, "end": 4.0, "step": 0.5 } },
//!   "simulation": { "horizon": 2000000, "warmup": 100000, "seed": 1,
//!                   "replications": 5 }
//! }
//! ```
//!
//! Every CSV artifact starts with a `# manifest: {...}` line and every JSON
//! artifact carries a `manifest` field.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::dmap::{self, DmapSpec};
use crate::error::{Error, Result};
use crate::model::{self, CouplingState, NetworkConfig};
use crate::qbd;
use crate::region::{self, Metric};
use crate::sim::{self, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub network: NetworkSection,
    /// One entry per node; empty means no arrivals.
    #[serde(default)]
    pub arrivals: Vec<ArrivalSection>,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub simulation: SimulationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub n: usize,
    pub p: Vec<f64>,
    pub r: f64,
    #[serde(rename = "K")]
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalSection {
    Bernoulli(f64),
    Dmap(DmapSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RSweep {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_delta_lambda")]
    pub delta_lambda: f64,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<RSweep>,
}

fn default_delta_lambda() -> f64 {
    0.01
}

fn default_metric() -> Metric {
    Metric::Volume
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            delta_lambda: default_delta_lambda(),
            metric: default_metric(),
            r: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default = "default_warmup")]
    pub warmup: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_slope_tol")]
    pub slope_tol: f64,
    /// Requested half-width of empirical boundary brackets.
    #[serde(default = "default_resolution")]
    pub boundary_resolution: f64,
    /// Peer-rate vectors for `--boundary`; defaults to the configured rates.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boundary_points: Vec<Vec<f64>>,
}

fn default_horizon() -> u64 {
    2_000_000
}
fn default_warmup() -> u64 {
    100_000
}
fn default_seed() -> u64 {
    1
}
fn default_replications() -> usize {
    5
}
fn default_delta() -> f64 {
    0.01
}
fn default_slope_tol() -> f64 {
    1e-3
}
fn default_resolution() -> f64 {
    0.002
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            warmup: default_warmup(),
            seed: default_seed(),
            replications: default_replications(),
            delta: default_delta(),
            slope_tol: default_slope_tol(),
            boundary_resolution: default_resolution(),
            boundary_points: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let net = &self.network;
        if net.p.len() != net.n {
            return Err(Error::Config(format!(
                "network.p has {} entries but network.n = {}",
                net.p.len(),
                net.n
            )));
        }
        if !self.arrivals.is_empty() && self.arrivals.len() != net.n {
            return Err(Error::Config(format!(
                "arrivals has {} entries but network.n = {}",
                self.arrivals.len(),
                net.n
            )));
        }
        for (k, a) in self.arrivals.iter().enumerate() {
            if let ArrivalSection::Bernoulli(l) = a {
                if !(0.0..=1.0).contains(l) {
                    return Err(Error::Config(format!("arrivals[{k}].bernoulli = {l} must lie in [0, 1]")));
                }
            }
        }
        let d = self.sweep.delta_lambda;
        if !(d > 0.0 && d <= 1.0) {
            return Err(Error::Config(format!("sweep.delta_lambda = {d} must lie in (0, 1]")));
        }
        if let Some(r) = self.sweep.r {
            region::r_range(r.start, r.end, r.step)
                .map_err(|_| Error::Config(format!("sweep.r = {}:{}:{} is not a valid range", r.start, r.end, r.step)))?;
        }
        self.network_config()?;
        self.sim_config()?.validate()?;
        for (k, pt) in self.simulation.boundary_points.iter().enumerate() {
            if pt.len() + 1 != net.n {
                return Err(Error::Config(format!(
                    "simulation.boundary_points[{k}] has {} rates, expected {}",
                    pt.len(),
                    net.n - 1
                )));
            }
        }
        Ok(())
    }

    /// Network with every node's average arrival rate.
    pub fn network_config(&self) -> Result<NetworkConfig> {
        let n = self.network.n;
        let lambda = if self.arrivals.is_empty() {
            vec![0.0; n]
        } else {
            self.arrivals
                .iter()
                .map(|a| match a {
                    ArrivalSection::Bernoulli(l) => Ok(*l),
                    ArrivalSection::Dmap(s) => Ok(dmap::stationary_and_rate(s)?.lambda_avg),
                })
                .collect::<Result<Vec<f64>>>()?
        };
        NetworkConfig::new(self.network.p.clone(), self.network.r, self.network.k, lambda)
    }

    /// Per-node arrival processes when any node uses a D-MAP.
    pub fn dmap_specs(&self) -> Result<Option<Vec<DmapSpec>>> {
        if !self.arrivals.iter().any(|a| matches!(a, ArrivalSection::Dmap(_))) {
            return Ok(None);
        }
        self.arrivals
            .iter()
            .map(|a| match a {
                ArrivalSection::Bernoulli(l) => DmapSpec::bernoulli(*l),
                ArrivalSection::Dmap(s) => Ok(s.clone()),
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let s = &self.simulation;
        let mut cfg = SimConfig::new(self.network_config()?, s.seed)
            .with_horizon(s.horizon, s.warmup)
            .with_replications(s.replications);
        cfg.delta = s.delta;
        cfg.slope_tol = s.slope_tol;
        if let Some(specs) = self.dmap_specs()? {
            cfg = cfg.with_arrivals(specs);
        }
        Ok(cfg)
    }
}

/// Run metadata attached to every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: String,
    pub subcommand: String,
    pub overrides: BTreeMap<String, String>,
    pub output_dir: String,
    pub seed: Option<u64>,
    pub tool_version: String,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` wins when set.
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(config_path: &Path, subcommand: &str, output_dir: &Path) -> Self {
        Self {
            config_path: config_path.display().to_string(),
            subcommand: subcommand.to_string(),
            overrides: BTreeMap::new(),
            output_dir: output_dir.display().to_string(),
            seed: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: timestamp(),
        }
    }

    pub fn with_override(mut self, key: &str, value: impl ToString) -> Self {
        self.overrides.insert(key.to_string(), value.to_string());
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn csv_header(&self) -> Result<String> {
        Ok(format!("# manifest: {}\n", serde_json::to_string(self)?))
    }
}

fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()) {
        return t;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Serialize)]
struct WithManifest<'a, T: Serialize> {
    manifest: &'a RunManifest,
    #[serde(flatten)]
    body: &'a T,
}

fn write_json<T: Serialize>(path: &Path, manifest: &RunManifest, body: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&WithManifest { manifest, body })?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Buffered CSV file with the manifest line and a header row.
struct CsvWriter {
    out: std::io::BufWriter<fs::File>,
}

impl CsvWriter {
    fn create(path: &Path, manifest: &RunManifest, header: &[String]) -> Result<Self> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        out.write_all(manifest.csv_header()?.as_bytes())?;
        writeln!(out, "{}", header.join(","))?;
        Ok(Self { out })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        writeln!(self.out, "{}", fields.join(","))?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Summary written to `region.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionSummary {
    pub network: NetworkConfig,
    pub delta_lambda: f64,
    pub volume: f64,
    pub volume_inner: f64,
    pub volume_outer: f64,
    /// Sum saturation throughput of the same network.
    pub sat_throughput: f64,
    pub points_per_node: Vec<usize>,
    pub infeasible_points: Vec<usize>,
    pub solves: usize,
    pub files: Vec<String>,
}

/// Sweeps the region and writes one boundary CSV per node plus `region.json`.
pub fn cmd_region(
    cfg: &RunConfig,
    delta_lambda: f64,
    out: &Path,
    manifest: &RunManifest,
) -> Result<RegionSummary> {
    let net = cfg.network_config()?;
    let swept = region::sweep_region(&net, delta_lambda)?;
    let vol = region::region_volume(&swept);
    ensure_dir(out)?;
    let n = net.n();
    let mut files = Vec::new();
    for surface in &swept.surfaces {
        let i = surface.node;
        let name = format!("boundary_node{}.csv", i + 1);
        let mut header: Vec<String> = (0..n).filter(|&j| j != i).map(|j| format!("lambda_{}", j + 1)).collect();
        header.push(format!("lambda_{}_sr", i + 1));
        header.push("feasible".into());
        let mut w = CsvWriter::create(&out.join(&name), manifest, &header)?;
        for (k, pt) in surface.peer_indices.iter().zip(&surface.points) {
            let mut row: Vec<String> = k.iter().map(|&x| swept.grid.rate(x).to_string()).collect();
            row.push(pt.value.to_string());
            row.push(pt.feasible.to_string());
            w.row(&row)?;
        }
        w.finish()?;
        files.push(name);
    }
    let summary = RegionSummary {
        sat_throughput: region::saturation_throughput(&net)?,
        network: net,
        delta_lambda,
        volume: vol.volume,
        volume_inner: vol.inner,
        volume_outer: vol.outer,
        points_per_node: (0..n).map(|i| swept.grid.points_per_axis(i)).collect(),
        infeasible_points: swept
            .surfaces
            .iter()
            .map(|s| s.points.iter().filter(|p| !p.feasible).count())
            .collect(),
        solves: swept.solves,
        files,
    };
    write_json(&out.join("region.json"), manifest, &summary)?;
    Ok(summary)
}

/// Simulation summary written to `simulation.json`.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub simulation: SimConfig,
    pub result: sim::SimResult,
}

pub fn cmd_simulate(cfg: &RunConfig, sim_cfg: &SimConfig, out: &Path, manifest: &RunManifest) -> Result<sim::SimResult> {
    let result = sim::run(sim_cfg)?;
    ensure_dir(out)?;
    let _ = cfg;
    write_json(
        &out.join("simulation.json"),
        manifest,
        &SimulationSummary {
            simulation: sim_cfg.clone(),
            result: result.clone(),
        },
    )?;
    Ok(result)
}

/// Empirical boundary row with the analytic value alongside.
#[derive(Debug, Clone, Serialize)]
pub struct BoundaryRow {
    pub empirical: sim::EmpiricalBoundary,
    pub analytic: f64,
    pub relative_error: f64,
}

/// Empirical `lambda_i^max` at each configured peer-rate vector, written to
/// `empirical_boundary_node{i}.csv`.
pub fn cmd_simulate_boundary(
    cfg: &RunConfig,
    sim_cfg: &SimConfig,
    node: usize,
    out: &Path,
    manifest: &RunManifest,
) -> Result<Vec<BoundaryRow>> {
    let net = cfg.network_config()?;
    let n = net.n();
    if node >= n {
        return Err(Error::Config(format!("--boundary node {} out of range 1..={n}", node + 1)));
    }
    let points = if cfg.simulation.boundary_points.is_empty() {
        vec![(0..n).filter(|&j| j != node).map(|j| net.lambda[j]).collect()]
    } else {
        cfg.simulation.boundary_points.clone()
    };
    let mut rows = Vec::with_capacity(points.len());
    for pt in &points {
        let empirical = sim::estimate_boundary(node, pt, sim_cfg, cfg.simulation.boundary_resolution)?;
        let analytic = region::max_stable_rate(node, pt, &net, 1e-9)?;
        let relative_error = if analytic > 0.0 {
            (empirical.lambda_max - analytic) / analytic
        } else {
            f64::NAN
        };
        rows.push(BoundaryRow {
            empirical,
            analytic,
            relative_error,
        });
    }
    ensure_dir(out)?;
    let mut header: Vec<String> = (0..n).filter(|&j| j != node).map(|j| format!("lambda_{}", j + 1)).collect();
    for h in ["lambda_max", "lower", "upper", "half_width", "widened", "analytic", "relative_error"] {
        header.push(h.into());
    }
    let name = format!("empirical_boundary_node{}.csv", node + 1);
    let mut w = CsvWriter::create(&out.join(name), manifest, &header)?;
    for row in &rows {
        let e = &row.empirical;
        let mut f: Vec<String> = e.lambda_others.iter().map(|x| x.to_string()).collect();
        f.extend([
            e.lambda_max.to_string(),
            e.lower.to_string(),
            e.upper.to_string(),
            e.half_width.to_string(),
            e.widened.to_string(),
            row.analytic.to_string(),
            row.relative_error.to_string(),
        ]);
        w.row(&f)?;
    }
    w.finish()?;
    Ok(rows)
}

/// Metric curve over `r`; writes `metrics.csv` and `metrics.json`.
pub fn cmd_metrics(
    cfg: &RunConfig,
    metric: Metric,
    r_values: &[f64],
    out: &Path,
    manifest: &RunManifest,
) -> Result<region::BackoffOptimum> {
    let net = cfg.network_config()?;
    let best = region::optimize_backoff(&net, metric, r_values, cfg.sweep.delta_lambda)?;
    ensure_dir(out)?;
    let label = match metric {
        Metric::Volume => "volume",
        Metric::Throughput => "throughput",
    };
    let mut w = CsvWriter::create(&out.join("metrics.csv"), manifest, &["r".into(), label.into()])?;
    for pt in &best.curve {
        w.row(&[pt.r.to_string(), pt.value.to_string()])?;
    }
    w.finish()?;
    write_json(&out.join("metrics.json"), manifest, &best)?;
    Ok(best)
}

/// One line of the verification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
}

/// Options for [`cmd_verify`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub tolerance: f64,
    /// Adds this to one entry of the extended matrix before the Kronecker check.
    pub perturb: Option<f64>,
    pub simulate: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            perturb: None,
            simulate: false,
        }
    }
}

/// Cross-checks on the configured network; writes `verify.json`.
pub fn cmd_verify(cfg: &RunConfig, opts: &VerifyOptions, out: &Path, manifest: &RunManifest) -> Result<VerifyReport> {
    let net = cfg.network_config()?;
    let n = net.n();
    let mut checks = Vec::new();

    // Block structure of every chain with every node saturated in turn.
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let chain = model::assemble_chain(j, &net, &CouplingState::with_saturated(n, &[i]))?;
            chain.validate()?;
            let a = chain.a_matrix();
            for r in 0..a.nrows() {
                worst = worst.max((a.row(r).sum() - 1.0).abs());
            }
        }
    }
    checks.push(CheckOutcome {
        name: "row sums".into(),
        passed: worst <= qbd::ROW_SUM_TOL,
        detail: format!("max |row sum - 1| = {worst:e}"),
    });

    if n == 2 && net.cutoff == 0 {
        let grid = region::SweepGrid::new(&net.p, cfg.sweep.delta_lambda)?;
        let mut max_err = 0.0f64;
        let mut at = (0, 0.0);
        for i in 0..2 {
            let j = 1 - i;
            for k in 0..grid.counts[j] {
                let lj = grid.rate(k);
                let pt = region::lambda_sr(i, &[lj], &net)?;
                let exact = region::two_node_boundary(net.p[i], net.p[j], lj);
                let err = (pt.value - exact).abs();
                if err > max_err {
                    max_err = err;
                    at = (i, lj);
                }
            }
        }
        checks.push(CheckOutcome {
            name: "two-node closed form".into(),
            passed: max_err <= opts.tolerance,
            detail: format!(
                "max |error| = {max_err:e} (node {}, peer rate {})",
                at.0 + 1,
                at.1
            ),
        });
    }

    // Kronecker structure for each configured D-MAP, or the reference
    // two-state family when none is configured.
    let specs: Vec<(usize, DmapSpec)> = match cfg.dmap_specs()? {
        Some(s) => s.into_iter().enumerate().filter(|(_, s)| s.states() > 1).collect(),
        None => vec![(0, DmapSpec::two_state(0.06, 0.125)?)],
    };
    for (i, spec) in specs {
        let sat = region::saturated_coupling(i, &net, &model::CouplingOptions::default())?;
        let base = model::assemble_chain(i, &net, &sat.coupling)?.a_matrix();
        let mut extended = dmap::assemble_dmap_chain(i, &net, &spec, &sat.coupling)?.a_matrix();
        if let Some(eps) = opts.perturb {
            let (r, c) = (extended.nrows() / 2, extended.ncols() / 3);
            extended[(r, c)] += eps;
        }
        let rep = dmap::verify_kronecker(&base, &extended, &spec.transition_matrix(), 1e-12);
        let loc = rep.location;
        checks.push(CheckOutcome {
            name: format!("kronecker node {}", i + 1),
            passed: rep.passed,
            detail: format!(
                "max discrepancy {:e} at extended phase ({}, {})",
                rep.max_discrepancy, loc.0, loc.1
            ),
        });
        if rep.passed {
            let alpha_d = qbd::limiting_distribution(&extended, 0)?;
            let alpha = qbd::limiting_distribution(&base, 0)?;
            let agg = dmap::aggregate_blocks(&alpha_d, spec.states());
            let diff = (agg - alpha).amax();
            checks.push(CheckOutcome {
                name: format!("block aggregation node {}", i + 1),
                passed: diff <= 1e-10,
                detail: format!("max |aggregated - base| = {diff:e}"),
            });
        }
    }

    if opts.simulate {
        let sim_cfg = cfg.sim_config()?;
        let node = n - 1;
        let peers: Vec<f64> = net.lambda[..node].to_vec();
        let analytic = region::max_stable_rate(node, &peers, &net, 1e-9)?;
        let e = sim::estimate_boundary(node, &peers, &sim_cfg, cfg.simulation.boundary_resolution)?;
        let rel = (e.lambda_max - analytic).abs() / analytic.max(f64::MIN_POSITIVE);
        checks.push(CheckOutcome {
            name: format!("simulated boundary node {}", node + 1),
            passed: rel <= 0.03,
            detail: format!("analytic {analytic}, empirical {} (relative {rel:.4})", e.lambda_max),
        });
    }

    let report = VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    };
    ensure_dir(out)?;
    write_json(&out.join("verify.json"), manifest, &report)?;
    Ok(report)
}

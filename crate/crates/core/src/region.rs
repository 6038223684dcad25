//! Stability boundaries, swept regions and the derived metrics.
//!
//! The boundary of node `i` is the service rate it gets when saturated:
//! `lambda_i^SR = sum_h alpha(h) p_suc(h)` with `alpha` the stationary vector
//! of the phase process of chain `i` while the peers are solved jointly. A peer
//! that cannot keep up with the saturated node is itself treated as saturated,
//! and the point is flagged infeasible.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dmap::{self, DmapSpec};
use crate::error::{Error, Result};
use crate::model::{self, CouplingOptions, CouplingState, NetworkConfig, MAX_NODES};
use crate::qbd;

/// Strict-inequality margin for membership tests.
pub const MEMBERSHIP_EPS: f64 = 1e-12;

/// `lambda_i^SR` at one peer-rate vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub value: f64,
    /// False when some peer could not be stabilised against the saturated node.
    pub feasible: bool,
    /// Peers that were promoted to saturated.
    pub saturated_peers: Vec<usize>,
    pub outer_iterations: usize,
}

/// Coupling with node `i` saturated, plus which peers had to follow it.
#[derive(Debug, Clone)]
pub struct SaturatedCoupling {
    pub coupling: CouplingState,
    pub promoted: Vec<usize>,
    pub outer_iterations: usize,
}

/// Solves the peers of node `i` with `i` saturated. Peers found unstable are
/// saturated in turn until the rest settles.
pub fn saturated_coupling(
    i: usize,
    cfg: &NetworkConfig,
    opts: &CouplingOptions,
) -> Result<SaturatedCoupling> {
    cfg.validate()?;
    if i >= cfg.n() {
        return Err(Error::Config(format!("node {i} out of range")));
    }
    let mut saturated = vec![i];
    let mut promoted = Vec::new();
    let mut iterations = 0;
    loop {
        match model::solve_coupled_with(cfg, &saturated, opts) {
            Ok(sol) => {
                return Ok(SaturatedCoupling {
                    coupling: sol.coupling,
                    promoted,
                    outer_iterations: iterations + sol.outer_iterations,
                })
            }
            Err(Error::Unstable { node, .. }) => {
                saturated.push(node);
                promoted.push(node);
                iterations += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// `sum_h alpha(h) p_suc(h)` for chain `i` under `coupling`.
pub fn service_rate(i: usize, cfg: &NetworkConfig, coupling: &CouplingState) -> Result<f64> {
    let chain = model::assemble_chain(i, cfg, coupling)?;
    let alpha = qbd::drift_from_phase(&chain, 0)?.alpha;
    let space = model::phase_space(i, cfg, coupling);
    let p_suc = model::success_probabilities(&space, cfg);
    Ok(alpha.iter().zip(&p_suc).map(|(a, p)| a * p).sum())
}

/// Boundary rate of node `i` given the peers' rates (in node order, `i` skipped).
pub fn lambda_sr(i: usize, lambda_others: &[f64], cfg: &NetworkConfig) -> Result<BoundaryPoint> {
    lambda_sr_with(i, lambda_others, cfg, &CouplingOptions::default())
}

pub fn lambda_sr_with(
    i: usize,
    lambda_others: &[f64],
    cfg: &NetworkConfig,
    opts: &CouplingOptions,
) -> Result<BoundaryPoint> {
    let n = cfg.n();
    if i >= n || lambda_others.len() + 1 != n {
        return Err(Error::Dimension(format!(
            "{} peer rates for node {i} of {n}",
            lambda_others.len()
        )));
    }
    let mut lambda = Vec::with_capacity(n);
    let mut rest = lambda_others.iter();
    for k in 0..n {
        lambda.push(if k == i { 0.0 } else { *rest.next().unwrap() });
    }
    let probe = cfg.with_lambda(lambda);
    probe.validate()?;
    let sat = saturated_coupling(i, &probe, opts)?;
    let value = service_rate(i, &probe, &sat.coupling)?;
    Ok(BoundaryPoint {
        value,
        feasible: sat.promoted.is_empty(),
        saturated_peers: sat.promoted,
        outer_iterations: sat.outer_iterations,
    })
}

/// Whether the full rate vector `cfg.lambda` lies strictly below every
/// node's boundary.
pub fn in_region(cfg: &NetworkConfig) -> Result<bool> {
    let n = cfg.n();
    for i in 0..n {
        let others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| cfg.lambda[j]).collect();
        if cfg.lambda[i] >= lambda_sr(i, &others, cfg)?.value - MEMBERSHIP_EPS {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Largest rate of node `i` that keeps the network stable with the peers at
/// `lambda_others`, found by bisection on region membership to `tol`.
///
/// Coincides with `lambda_sr` at feasible points, where node `i`'s own
/// boundary is the binding one.
pub fn max_stable_rate(i: usize, lambda_others: &[f64], cfg: &NetworkConfig, tol: f64) -> Result<f64> {
    let n = cfg.n();
    let sr = lambda_sr(i, lambda_others, cfg)?;
    let at = |x: f64| {
        let mut lambda = Vec::with_capacity(n);
        let mut rest = lambda_others.iter();
        for k in 0..n {
            lambda.push(if k == i { x } else { *rest.next().unwrap() });
        }
        cfg.with_lambda(lambda)
    };
    let mut lo = 0.0;
    let mut hi = sr.value;
    if sr.feasible && in_region(&at(hi - tol))? {
        return Ok(sr.value);
    }
    if !in_region(&at(0.0))? {
        return Ok(0.0);
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if in_region(&at(mid))? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Drift-based stability of node `i` at the full rate vector in `cfg`.
pub fn classify_node(i: usize, cfg: &NetworkConfig) -> Result<qbd::Recurrence> {
    let sat = saturated_coupling(i, cfg, &CouplingOptions::default())?;
    let chain = model::assemble_chain(i, cfg, &sat.coupling)?;
    Ok(qbd::drift_from_phase(&chain, 0)?.classify())
}

/// Two-node, no-backoff boundaries and membership.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoNodeRegion {
    /// Boundary of node 1 at the given `lambda2`.
    pub boundary_1: f64,
    /// Boundary of node 2 at the given `lambda1`.
    pub boundary_2: f64,
    pub inside: bool,
}

/// Exact region of a two-node network without backoff.
///
/// A peer rate beyond what it can clear against the saturated node caps the
/// boundary at `p_i (1 - p_j)`.
pub fn closed_form_two_node(p1: f64, p2: f64, lambda1: f64, lambda2: f64) -> TwoNodeRegion {
    let boundary_1 = two_node_boundary(p1, p2, lambda2);
    let boundary_2 = two_node_boundary(p2, p1, lambda1);
    TwoNodeRegion {
        boundary_1,
        boundary_2,
        inside: lambda1 < boundary_1 && lambda2 < boundary_2,
    }
}

/// `p_i (1 - lambda_j / (1 - p_i))`, floored at `p_i (1 - p_j)`.
pub fn two_node_boundary(p_i: f64, p_j: f64, lambda_j: f64) -> f64 {
    if p_i >= 1.0 {
        return if lambda_j > 0.0 { 0.0 } else { 1.0 };
    }
    (p_i * (1.0 - lambda_j / (1.0 - p_i))).max(p_i * (1.0 - p_j))
}

/// Rate grid over `[0, p_j]` per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub delta_lambda: f64,
    /// Grid points per axis, `floor(p_j / delta) + 1`.
    pub counts: Vec<usize>,
}

impl SweepGrid {
    pub fn new(p: &[f64], delta_lambda: f64) -> Result<Self> {
        if !(delta_lambda > 0.0 && delta_lambda <= 1.0) {
            return Err(Error::Config(format!(
                "delta_lambda = {delta_lambda} must lie in (0, 1]"
            )));
        }
        let counts = p
            .iter()
            .map(|pj| (pj / delta_lambda + 1e-9).floor() as usize + 1)
            .collect();
        Ok(Self {
            delta_lambda,
            counts,
        })
    }

    pub fn n(&self) -> usize {
        self.counts.len()
    }

    /// `V_i`: number of peer-rate grid points for probe node `i`.
    pub fn points_per_axis(&self, i: usize) -> usize {
        (0..self.n()).filter(|&j| j != i).map(|j| self.counts[j]).product()
    }

    pub fn rate(&self, k: usize) -> f64 {
        k as f64 * self.delta_lambda
    }

    /// Peer index vectors for node `i` in row-major order (last peer fastest).
    pub fn peer_indices(&self, i: usize) -> Vec<Vec<usize>> {
        let axes: Vec<usize> = (0..self.n()).filter(|&j| j != i).map(|j| self.counts[j]).collect();
        mixed_radix(&axes)
    }

    /// Flat offset of a peer index vector in `peer_indices(i)` order.
    pub fn peer_offset(&self, i: usize, k: &[usize]) -> Option<usize> {
        let mut off = 0;
        for (t, j) in (0..self.n()).filter(|&j| j != i).enumerate() {
            if k[t] >= self.counts[j] {
                return None;
            }
            off = off * self.counts[j] + k[t];
        }
        Some(off)
    }
}

fn mixed_radix(axes: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = axes.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut cur = vec![0; axes.len()];
    for _ in 0..total {
        out.push(cur.clone());
        for t in (0..axes.len()).rev() {
            cur[t] += 1;
            if cur[t] < axes[t] {
                break;
            }
            cur[t] = 0;
        }
    }
    out
}

/// Boundary surface of one probe node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityBoundary {
    pub node: usize,
    /// Peer grid indices, in `SweepGrid::peer_indices` order.
    pub peer_indices: Vec<Vec<usize>>,
    pub points: Vec<BoundaryPoint>,
}

/// Swept region: one surface per node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweptRegion {
    pub config: NetworkConfig,
    pub grid: SweepGrid,
    pub surfaces: Vec<StabilityBoundary>,
    /// Distinct boundary evaluations performed.
    pub solves: usize,
}

impl SweptRegion {
    /// Boundary of node `i` at the peer grid indices `k`.
    pub fn surface_value(&self, i: usize, k: &[usize]) -> Option<f64> {
        let off = self.grid.peer_offset(i, k)?;
        Some(self.surfaces[i].points[off].value)
    }

    /// Membership of a grid rate vector given by per-node indices.
    pub fn contains_grid(&self, k: &[usize]) -> bool {
        let n = self.grid.n();
        let mut peers = [0usize; MAX_NODES];
        (0..n).all(|i| {
            let mut t = 0;
            for j in (0..n).filter(|&j| j != i) {
                peers[t] = k[j];
                t += 1;
            }
            match self.surface_value(i, &peers[..n - 1]) {
                Some(v) => self.grid.rate(k[i]) < v - MEMBERSHIP_EPS,
                None => false,
            }
        })
    }

    /// Membership of an arbitrary rate vector, peers rounded down to the grid.
    pub fn contains(&self, lambda: &[f64]) -> bool {
        let n = self.grid.n();
        if lambda.len() != n {
            return false;
        }
        (0..n).all(|i| {
            let k: Vec<usize> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (lambda[j] / self.grid.delta_lambda + 1e-9).floor() as usize)
                .collect();
            match self.surface_value(i, &k) {
                Some(v) => lambda[i] < v - MEMBERSHIP_EPS,
                None => false,
            }
        })
    }
}

/// Sweeps every probe node over its peer grid.
///
/// Networks whose nodes share `p` reuse one evaluation per sorted peer tuple.
pub fn sweep_region(cfg: &NetworkConfig, delta_lambda: f64) -> Result<SweptRegion> {
    sweep_region_with(cfg, delta_lambda, &CouplingOptions::default())
}

pub fn sweep_region_with(
    cfg: &NetworkConfig,
    delta_lambda: f64,
    opts: &CouplingOptions,
) -> Result<SweptRegion> {
    cfg.validate()?;
    let n = cfg.n();
    let grid = SweepGrid::new(&cfg.p, delta_lambda)?;
    let symmetric = cfg.p.iter().all(|p| *p == cfg.p[0]);

    // (probe node, peer indices) jobs after symmetry reduction.
    let mut jobs: Vec<(usize, Vec<usize>)> = Vec::new();
    if symmetric {
        let mut seen = std::collections::BTreeSet::new();
        for k in grid.peer_indices(0) {
            let mut s = k.clone();
            s.sort_unstable();
            if seen.insert(s.clone()) {
                jobs.push((0, s));
            }
        }
    } else {
        for i in 0..n {
            for k in grid.peer_indices(i) {
                jobs.push((i, k));
            }
        }
    }

    let results: Vec<Result<BoundaryPoint>> = jobs
        .par_iter()
        .map(|(i, k)| {
            let rates: Vec<f64> = k.iter().map(|&x| grid.rate(x)).collect();
            lambda_sr_with(*i, &rates, cfg, opts)
        })
        .collect();
    let mut table: HashMap<(usize, Vec<usize>), BoundaryPoint> = HashMap::with_capacity(jobs.len());
    for (job, res) in jobs.into_iter().zip(results) {
        table.insert(job, res?);
    }
    let solves = table.len();

    let surfaces = (0..n)
        .map(|i| {
            let peer_indices = grid.peer_indices(i);
            let points = peer_indices
                .iter()
                .map(|k| {
                    if symmetric {
                        let mut s = k.clone();
                        s.sort_unstable();
                        let mut pt = table[&(0, s.clone())].clone();
                        pt.saturated_peers = remap_saturated(&pt.saturated_peers, 0, i, k, &s);
                        pt
                    } else {
                        table[&(i, k.clone())].clone()
                    }
                })
                .collect();
            StabilityBoundary {
                node: i,
                peer_indices,
                points,
            }
        })
        .collect();
    Ok(SweptRegion {
        config: cfg.clone(),
        grid,
        surfaces,
        solves,
    })
}

/// Maps saturated peers found for probe `from` with sorted peer indices back
/// to node labels for probe `to` with peer indices `k`.
fn remap_saturated(
    peers: &[usize],
    from: usize,
    to: usize,
    k: &[usize],
    sorted: &[usize],
) -> Vec<usize> {
    if peers.is_empty() {
        return Vec::new();
    }
    let n = k.len() + 1;
    let from_peers: Vec<usize> = (0..n).filter(|&j| j != from).collect();
    let to_peers: Vec<usize> = (0..n).filter(|&j| j != to).collect();
    let mut used = vec![false; k.len()];
    let mut out: Vec<usize> = peers
        .iter()
        .map(|p| {
            let slot = from_peers.iter().position(|x| x == p).unwrap();
            let level = sorted[slot];
            let t = (0..k.len()).find(|&t| !used[t] && k[t] == level).unwrap();
            used[t] = true;
            to_peers[t]
        })
        .collect();
    out.sort_unstable();
    out
}

/// Riemann estimates of the region volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    /// Cells whose lower-left corner lies in the region.
    pub outer: f64,
    /// Cells whose upper-right corner lies in the region.
    pub inner: f64,
    /// Midpoint of the two.
    pub volume: f64,
}

pub fn region_volume(region: &SweptRegion) -> VolumeEstimate {
    let grid = &region.grid;
    let n = grid.n();
    let cell = grid.delta_lambda.powi(n as i32);
    let mut outer = 0usize;
    let mut inner = 0usize;
    let mut upper = vec![0usize; n];
    for k in mixed_radix(&grid.counts) {
        if !region.contains_grid(&k) {
            continue;
        }
        outer += 1;
        for t in 0..n {
            upper[t] = k[t] + 1;
        }
        if region.contains_grid(&upper) {
            inner += 1;
        }
    }
    let outer = outer as f64 * cell;
    let inner = inner as f64 * cell;
    VolumeEstimate {
        outer,
        inner,
        volume: 0.5 * (outer + inner),
    }
}

/// Sum throughput with every node saturated.
pub fn saturation_throughput(cfg: &NetworkConfig) -> Result<f64> {
    cfg.validate()?;
    let n = cfg.n();
    let stages = cfg.cutoff + 1;
    let states = stages.pow(n as u32);
    let decode = |mut s: usize| {
        let mut b = [0usize; MAX_NODES];
        for k in (0..n).rev() {
            b[k] = s % stages;
            s /= stages;
        }
        b
    };
    let encode = |b: &[usize]| b.iter().fold(0, |acc, x| acc * stages + x);
    let mut p = DMatrix::zeros(states, states);
    let mut success = vec![0.0; states];
    let busy = vec![true; n];
    for s in 0..states {
        let b = decode(s);
        for mask in 0..(1usize << n) {
            let attempt: Vec<bool> = (0..n).map(|k| mask >> k & 1 == 1).collect();
            let w = model::attempt_prob(cfg, &b[..n], &busy, &attempt);
            if w == 0.0 {
                continue;
            }
            if mask.count_ones() == 1 {
                success[s] += w;
            }
            let next: Vec<usize> = (0..n)
                .map(|k| model::backoff_next(b[k], &attempt, k, cfg.cutoff))
                .collect();
            p[(s, encode(&next))] += w;
        }
    }
    let pi = stationary_of_closed_class(&p)?;
    Ok(pi.iter().zip(&success).map(|(a, b)| a * b).sum())
}

/// Stationary vector of a chain that may carry transient states.
fn stationary_of_closed_class(p: &DMatrix<f64>) -> Result<nalgebra::DVector<f64>> {
    qbd::stationary_vector(p)
}

/// Metric used by `optimize_backoff`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Volume,
    Throughput,
}

/// One point of a metric-versus-`r` curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub r: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackoffOptimum {
    pub r_opt: f64,
    pub value: f64,
    pub curve: Vec<MetricPoint>,
}

/// Values `start, start + step, ...` up to `end` inclusive.
pub fn r_range(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || end < start || start < 1.0 {
        return Err(Error::Config(format!(
            "invalid r range {start}:{end}:{step}"
        )));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| start + k as f64 * step).collect())
}

/// Evaluates `metric` at one configuration.
pub fn evaluate_metric(cfg: &NetworkConfig, metric: Metric, delta_lambda: f64) -> Result<f64> {
    match metric {
        Metric::Throughput => saturation_throughput(cfg),
        Metric::Volume => Ok(region_volume(&sweep_region(cfg, delta_lambda)?).volume),
    }
}

/// Grid search over `r`; ties go to the smaller `r`.
pub fn optimize_backoff(
    template: &NetworkConfig,
    metric: Metric,
    r_values: &[f64],
    delta_lambda: f64,
) -> Result<BackoffOptimum> {
    if r_values.is_empty() {
        return Err(Error::Config("empty r range".into()));
    }
    let mut curve = Vec::with_capacity(r_values.len());
    for &r in r_values {
        let value = evaluate_metric(&template.with_r(r), metric, delta_lambda)?;
        curve.push(MetricPoint { r, value });
    }
    let mut best = curve[0];
    for pt in &curve[1..] {
        if pt.value > best.value * (1.0 + 1e-9) + 1e-15 {
            best = *pt;
        }
    }
    Ok(BackoffOptimum {
        r_opt: best.r,
        value: best.value,
        curve,
    })
}

/// Result of a boundary search along a D-MAP rate direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmapBoundary {
    pub node: usize,
    /// Scale applied to the direction's per-state rates at the boundary.
    pub scale: f64,
    /// Per-state arrival probabilities at the boundary.
    pub lambda_per_state: Vec<f64>,
    /// Average rate at the boundary.
    pub lambda_avg: f64,
    /// Boundary of the rate-equivalent Bernoulli network.
    pub bernoulli_boundary: f64,
    pub feasible: bool,
}

/// Finds the scale `s` at which node `i`'s extended chain, with per-state rates
/// `s * lambda_dir(u)`, has zero drift. Peers use the average rates of their
/// own D-MAPs.
pub fn dmap_boundary(i: usize, specs: &[DmapSpec], direction: &DmapSpec, cfg: &NetworkConfig) -> Result<DmapBoundary> {
    let n = cfg.n();
    if specs.len() != n {
        return Err(Error::Dimension(format!("{} arrival specs for {n} nodes", specs.len())));
    }
    let mut lambda = Vec::with_capacity(n);
    for (k, s) in specs.iter().enumerate() {
        lambda.push(if k == i { 0.0 } else { dmap::stationary_and_rate(s)?.lambda_avg });
    }
    let probe = cfg.with_lambda(lambda);
    let sat = saturated_coupling(i, &probe, &CouplingOptions::default())?;
    let bernoulli_boundary = service_rate(i, &probe, &sat.coupling)?;
    let space = model::phase_space(i, &probe, &sat.coupling);

    let mu_at = |s: f64| -> Result<f64> {
        let spec = direction.scaled(s)?;
        let chain = dmap::assemble_dmap_chain(i, &probe, &spec, &sat.coupling)?;
        Ok(dmap::drift_dmap(&chain, &spec, &space, &probe)?.mu())
    };
    let mut lo = 0.0;
    let mut hi = max_scale(direction);
    if mu_at(hi)? < 0.0 {
        return Err(Error::Config(format!(
            "node {i} stays stable at the largest admissible scale {hi}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mu_at(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let scale = 0.5 * (lo + hi);
    let spec = direction.scaled(scale)?;
    let st = dmap::stationary_and_rate(&spec)?;
    Ok(DmapBoundary {
        node: i,
        scale,
        lambda_per_state: st.lambda_per_state.iter().copied().collect(),
        lambda_avg: st.lambda_avg,
        bernoulli_boundary,
        feasible: sat.promoted.is_empty(),
    })
}

/// Region membership with per-node D-MAP arrivals: every node's extended
/// chain, with that node saturated and the peers at their average rates, must
/// have negative drift.
pub fn in_region_dmap(specs: &[DmapSpec], cfg: &NetworkConfig) -> Result<bool> {
    let n = cfg.n();
    if specs.len() != n {
        return Err(Error::Dimension(format!("{} arrival specs for {n} nodes", specs.len())));
    }
    let lambda = specs
        .iter()
        .map(|s| Ok(dmap::stationary_and_rate(s)?.lambda_avg))
        .collect::<Result<Vec<f64>>>()?;
    let net = cfg.with_lambda(lambda);
    for i in 0..n {
        let sat = saturated_coupling(i, &net, &CouplingOptions::default())?;
        let chain = dmap::assemble_dmap_chain(i, &net, &specs[i], &sat.coupling)?;
        let space = model::phase_space(i, &net, &sat.coupling);
        if dmap::drift_dmap(&chain, &specs[i], &space, &net)?.mu() >= -MEMBERSHIP_EPS {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Average rate of node `i` at the region boundary when its per-state rates
/// are `s * lambda_dir(u)` and the other nodes keep `specs`. Bisection on `s`
/// to `tol` in the average rate.
pub fn dmap_max_stable_rate(
    i: usize,
    specs: &[DmapSpec],
    direction: &DmapSpec,
    cfg: &NetworkConfig,
    tol: f64,
) -> Result<f64> {
    let avg = dmap::stationary_and_rate(direction)?.lambda_avg;
    if avg <= 0.0 {
        return Err(Error::Config("direction has zero average rate".into()));
    }
    let at = |s: f64| -> Result<bool> {
        let mut v = specs.to_vec();
        v[i] = direction.scaled(s)?;
        in_region_dmap(&v, cfg)
    };
    let (mut lo, mut hi) = (0.0, max_scale(direction));
    if !at(lo)? {
        return Ok(0.0);
    }
    if at(hi)? {
        return Ok(hi * avg);
    }
    while (hi - lo) * avg > tol {
        let mid = 0.5 * (lo + hi);
        if at(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi) * avg)
}

/// Largest `s` keeping `s * d1 <= d0 + d1` entrywise.
fn max_scale(spec: &DmapSpec) -> f64 {
    let d = spec.transition_matrix();
    let mut s = f64::INFINITY;
    for (a, b) in d.iter().zip(spec.d1().iter()) {
        if *b > 0.0 {
            s = s.min(a / b);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_matches_two_node_formula() {
        let cfg = NetworkConfig::symmetric(2, 0.5, 2.0, 0).unwrap();
        let b = lambda_sr(0, &[0.1], &cfg).unwrap();
        assert!((b.value - 0.4).abs() < 1e-12);
        assert!(b.feasible);
        let b = lambda_sr(0, &[0.0], &cfg).unwrap();
        assert!((b.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn overloaded_peer_is_saturated() {
        let cfg = NetworkConfig::symmetric(2, 0.5, 2.0, 0).unwrap();
        let b = lambda_sr(0, &[0.3], &cfg).unwrap();
        assert!(!b.feasible);
        assert_eq!(b.saturated_peers, vec![1]);
        assert!((b.value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn closed_form_examples() {
        assert!(closed_form_two_node(0.5, 0.5, 0.2, 0.2).inside);
        assert!(!closed_form_two_node(0.5, 0.5, 0.3, 0.3).inside);
        assert!(closed_form_two_node(0.6, 0.6, 0.0, 0.59).inside);
        assert!(!closed_form_two_node(0.6, 0.6, 0.0, 0.6).inside);
    }

    #[test]
    fn grid_counts() {
        let g = SweepGrid::new(&[0.5, 0.33, 1.0], 0.01).unwrap();
        assert_eq!(g.counts, vec![51, 34, 101]);
        assert_eq!(g.points_per_axis(0), 34 * 101);
        assert_eq!(g.peer_offset(1, &[2, 3]), Some(2 * 101 + 3));
    }

    #[test]
    fn throughput_closed_forms() {
        for p in [0.1, 0.25, 0.6] {
            let cfg = NetworkConfig::symmetric(4, p, 2.0, 0).unwrap();
            let v = saturation_throughput(&cfg).unwrap();
            assert!((v - 4.0 * p * (1.0 - p).powi(3)).abs() < 1e-12);
        }
        let cfg = NetworkConfig::symmetric(2, 1.0, 2.0, 0).unwrap();
        assert_eq!(saturation_throughput(&cfg).unwrap(), 0.0);
    }

    #[test]
    fn r_range_inclusive() {
        assert_eq!(r_range(1.0, 3.0, 0.5).unwrap(), vec![1.0, 1.5, 2.0, 2.5, 3.0]);
        assert!(r_range(1.0, 3.0, 0.0).is_err());
    }

    #[test]
    fn remap_labels() {
        // Probe 0 saw peers (1, 2) at sorted levels (3, 7); peer 2 saturated.
        // Probe 1 sees peers (0, 2) at levels (7, 3), so node 0 is the heavy one.
        assert_eq!(remap_saturated(&[2], 0, 1, &[7, 3], &[3, 7]), vec![0]);
    }
}

//! Per-node QBD chains of a buffered slotted-Aloha network with K-exponential
//! backoff.
//!
//! Chain `i` tracks the queue length of node `i` as its level. The phase holds
//! the backoff stage of every node and an emptiness indicator for every peer.
//! The exact single-packet state of a peer is unknown inside the chain, so a
//! peer's departure empties its queue with probability `z_j = P(q_j = 1 | q_j >= 1)`,
//! which is in turn read off the solved chain of node `j`. The chains are
//! therefore solved jointly as a fixed point in `z`.
//!
//! Slot timing follows the early-arrival convention: departures happen just
//! before the slot boundary, arrivals just after it.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dmap::DmapSpec;
use crate::error::{Error, Result};
use crate::qbd::{self, QbdChain, QbdSolution, SolverOptions};

/// Attempt vectors are enumerated exhaustively, so the node count is capped.
pub const MAX_NODES: usize = 6;

/// Convergence threshold on `max |dz|` for the coupled fixed point.
pub const COUPLING_TOL: f64 = 1e-10;

pub const MAX_OUTER_ITERATIONS: usize = 500;

/// Peers whose drift is closer to zero than this are treated as unstable in
/// the coupled solve. Their `z` heads to 0 as the drift vanishes, which is
/// the saturated limit, while the boundary solve loses all precision.
pub const CRITICAL_BAND: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Initial transmission probability of each node.
    pub p: Vec<f64>,
    /// Backoff factor.
    pub r: f64,
    /// Cutoff stage `K`.
    #[serde(rename = "K")]
    pub cutoff: usize,
    /// Bernoulli arrival rate of each node.
    pub lambda: Vec<f64>,
}

impl NetworkConfig {
    pub fn new(p: Vec<f64>, r: f64, cutoff: usize, lambda: Vec<f64>) -> Result<Self> {
        let cfg = Self {
            p,
            r,
            cutoff,
            lambda,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Same `p` for every node, zero arrival rates.
    pub fn symmetric(n: usize, p: f64, r: f64, cutoff: usize) -> Result<Self> {
        Self::new(vec![p; n], r, cutoff, vec![0.0; n])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.p.len();
        if !(2..=MAX_NODES).contains(&n) {
            return Err(Error::Config(format!(
                "network.n = {n}; supported range is 2..={MAX_NODES}"
            )));
        }
        if self.lambda.len() != n {
            return Err(Error::Config(format!(
                "{} arrival rates given for {n} nodes",
                self.lambda.len()
            )));
        }
        for (k, p) in self.p.iter().enumerate() {
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(Error::Config(format!("network.p[{k}] = {p} must lie in (0, 1]")));
            }
        }
        if !(self.r >= 1.0 && self.r.is_finite()) {
            return Err(Error::Config(format!("network.r = {} must be >= 1", self.r)));
        }
        for (k, l) in self.lambda.iter().enumerate() {
            if !(0.0..=1.0).contains(l) {
                return Err(Error::Config(format!("arrival rate of node {k} = {l} must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.p.len()
    }

    /// Transmission probability of node `k` at backoff stage `stage`.
    pub fn stage_prob(&self, k: usize, stage: usize) -> f64 {
        self.p[k] / self.r.powi(stage as i32)
    }

    pub fn with_lambda(&self, lambda: Vec<f64>) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }

    pub fn with_r(&self, r: f64) -> Self {
        Self { r, ..self.clone() }
    }
}

/// Attempt probability `p_k / r^b_k`, zero for an empty queue.
pub fn transmit_prob(p_k: f64, r: f64, stage: usize, nonempty: bool) -> f64 {
    if nonempty {
        p_k / r.powi(stage as i32)
    } else {
        0.0
    }
}

/// Probability that the nodes realise the attempt vector `attempt`.
pub fn attempt_prob(
    cfg: &NetworkConfig,
    stages: &[usize],
    nonempty: &[bool],
    attempt: &[bool],
) -> f64 {
    (0..cfg.n())
        .map(|k| {
            let t = transmit_prob(cfg.p[k], cfg.r, stages[k], nonempty[k]);
            if attempt[k] {
                t
            } else {
                1.0 - t
            }
        })
        .product()
}

/// Next backoff stage of node `k` under attempt vector `attempt`.
pub fn backoff_next(stage: usize, attempt: &[bool], k: usize, cutoff: usize) -> usize {
    if !attempt[k] {
        stage
    } else if attempt.iter().enumerate().all(|(j, a)| j == k || !a) {
        0
    } else {
        (stage + 1).min(cutoff)
    }
}

/// Probability that the queue-length coordinates of chain `i` drop by the
/// decrement vector `d` (before arrivals) under attempt vector `attempt`.
pub fn decrement_prob(i: usize, attempt: &[bool], d: &[bool], z: &[f64]) -> f64 {
    let attempts = attempt.iter().filter(|a| **a).count();
    let dsum = d.iter().filter(|x| **x).count();
    let none = dsum == 0;
    if dsum > 1 {
        return 0.0;
    }
    if attempts != 1 {
        return if none { 1.0 } else { 0.0 };
    }
    let sender = attempt.iter().position(|a| *a).unwrap();
    if sender == i {
        return if dsum == 1 && d[i] { 1.0 } else { 0.0 };
    }
    if none {
        1.0 - z[sender]
    } else if d[sender] {
        z[sender]
    } else {
        0.0
    }
}

/// Bernoulli arrival probability of `k` packets in one slot.
pub fn arrival_prob(lambda: f64, k: i32) -> f64 {
    match k {
        0 => 1.0 - lambda,
        1 => lambda,
        _ => 0.0,
    }
}

/// Probability that a peer's emptiness indicator moves from `q_hat` to
/// `q_hat_next` when it needs `k` new packets to do so.
pub fn indicator_transition_prob(lambda: f64, q_hat: bool, q_hat_next: bool, k: i32) -> f64 {
    match (q_hat, q_hat_next) {
        (false, false) | (true, false) => {
            if k == 0 {
                1.0 - lambda
            } else {
                0.0
            }
        }
        (false, true) => {
            if k == 1 {
                lambda
            } else {
                0.0
            }
        }
        (true, true) => match k {
            0 => 1.0,
            1 => lambda,
            _ => 0.0,
        },
    }
}

/// A phase of chain `i`: the modeled node's stage plus stage and emptiness
/// indicator of each peer (peers listed in node order, skipping `i`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Phase {
    pub b_self: usize,
    pub b_others: Vec<usize>,
    pub q_hat_others: Vec<bool>,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(b={}, b_peers={:?}, q_peers=", self.b_self, self.b_others)?;
        let bits: String = self
            .q_hat_others
            .iter()
            .map(|q| if *q { '1' } else { '0' })
            .collect();
        write!(f, "{bits})")
    }
}

/// A state of chain `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainState {
    pub level: usize,
    pub phase: Phase,
}

/// Coupling between chains: `z_j` for each node and which nodes are pinned
/// as saturated (always backlogged).
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingState {
    pub z: Vec<f64>,
    pub saturated: Vec<bool>,
}

impl CouplingState {
    /// All `z_j = 1`, nothing saturated.
    pub fn unsaturated(n: usize) -> Self {
        Self {
            z: vec![1.0; n],
            saturated: vec![false; n],
        }
    }

    /// Saturates the listed nodes and sets their `z` to 0.
    pub fn with_saturated(n: usize, nodes: &[usize]) -> Self {
        let mut c = Self::unsaturated(n);
        for &s in nodes {
            c.saturated[s] = true;
            c.z[s] = 0.0;
        }
        c
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.z.len() != n || self.saturated.len() != n {
            return Err(Error::Dimension(format!(
                "coupling state sized {} for {n} nodes",
                self.z.len()
            )));
        }
        for (j, z) in self.z.iter().enumerate() {
            if !(0.0..=1.0).contains(z) {
                return Err(Error::Config(format!("z[{j}] = {z} outside [0, 1]")));
            }
            if self.saturated[j] && *z != 0.0 {
                return Err(Error::Config(format!("saturated node {j} must have z = 0")));
            }
        }
        Ok(())
    }
}

/// Enumeration and indexing of the phases of chain `node`.
///
/// Phases are ordered lexicographically by `(b_self, b_others, q_hat_others)`.
/// Level 0 fixes `b_self = 0`. Pinned peers only appear with `q_hat = 1`.
#[derive(Debug, Clone)]
pub struct PhaseSpace {
    node: usize,
    n: usize,
    cutoff: usize,
    pinned: Vec<bool>,
    level0: Vec<Phase>,
    upper: Vec<Phase>,
    lookup0: Vec<u32>,
    lookup: Vec<u32>,
}

const NO_INDEX: u32 = u32::MAX;

impl PhaseSpace {
    pub fn new(node: usize, n: usize, cutoff: usize) -> Self {
        Self::with_pinned(node, n, cutoff, &vec![false; n])
    }

    /// Phase space with the peers flagged in `pinned` held nonempty.
    pub fn with_pinned(node: usize, n: usize, cutoff: usize, pinned: &[bool]) -> Self {
        assert!(node < n && pinned.len() == n && n <= MAX_NODES);
        let peers = n - 1;
        let stages = cutoff + 1;
        let mut level0 = Vec::new();
        let mut upper = Vec::new();
        let peer_nodes: Vec<usize> = (0..n).filter(|&k| k != node).collect();
        for b_self in 0..stages {
            for b_code in 0..stages.pow(peers as u32) {
                let b_others = digits(b_code, stages, peers);
                for q_code in 0..(1usize << peers) {
                    // Most significant indicator first, matching tuple order.
                    let q_hat_others: Vec<bool> =
                        (0..peers).map(|t| q_code >> (peers - 1 - t) & 1 == 1).collect();
                    let valid = (0..peers).all(|t| {
                        (q_hat_others[t] || b_others[t] == 0)
                            && (q_hat_others[t] || !pinned[peer_nodes[t]])
                    });
                    if !valid {
                        continue;
                    }
                    let phase = Phase {
                        b_self,
                        b_others: b_others.clone(),
                        q_hat_others,
                    };
                    if b_self == 0 {
                        level0.push(phase.clone());
                    }
                    upper.push(phase);
                }
            }
        }
        let mut space = Self {
            node,
            n,
            cutoff,
            pinned: pinned.to_vec(),
            level0,
            upper,
            lookup0: Vec::new(),
            lookup: Vec::new(),
        };
        let size = stages * (cutoff + 2).pow(peers as u32);
        space.lookup0 = vec![NO_INDEX; size];
        space.lookup = vec![NO_INDEX; size];
        for (h, ph) in space.level0.iter().enumerate() {
            let c = space.code(ph);
            space.lookup0[c] = h as u32;
        }
        for (h, ph) in space.upper.iter().enumerate() {
            let c = space.code(ph);
            space.lookup[c] = h as u32;
        }
        space
    }

    pub fn node(&self) -> usize {
        self.node
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn pinned(&self) -> &[bool] {
        &self.pinned
    }

    /// Phase count at level 0.
    pub fn m0(&self) -> usize {
        self.level0.len()
    }

    /// Phase count at levels >= 1.
    pub fn m(&self) -> usize {
        self.upper.len()
    }

    pub fn phases(&self, level: usize) -> &[Phase] {
        if level == 0 {
            &self.level0
        } else {
            &self.upper
        }
    }

    pub fn phase_of(&self, level: usize, h: usize) -> &Phase {
        &self.phases(level)[h]
    }

    pub fn index_of(&self, level: usize, phase: &Phase) -> Option<usize> {
        if phase.b_others.len() != self.n - 1
            || phase.q_hat_others.len() != self.n - 1
            || phase.b_self > self.cutoff
            || phase.b_others.iter().any(|b| *b > self.cutoff)
        {
            return None;
        }
        let table = if level == 0 { &self.lookup0 } else { &self.lookup };
        match table[self.code(phase)] {
            NO_INDEX => None,
            h => Some(h as usize),
        }
    }

    /// Peers in node order.
    pub fn peers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&k| k != self.node)
    }

    fn code(&self, ph: &Phase) -> usize {
        let radix = self.cutoff + 2;
        let mut c = ph.b_self;
        for t in 0..self.n - 1 {
            let peer = if ph.q_hat_others[t] { 1 + ph.b_others[t] } else { 0 };
            c = c * radix + peer;
        }
        c
    }

    /// Full-network stage and emptiness vectors for a phase at `level`.
    fn expand(&self, level: usize, ph: &Phase) -> ([usize; MAX_NODES], [bool; MAX_NODES]) {
        let mut stages = [0usize; MAX_NODES];
        let mut nonempty = [false; MAX_NODES];
        stages[self.node] = ph.b_self;
        nonempty[self.node] = level > 0;
        for (t, k) in self.peers().enumerate() {
            stages[k] = ph.b_others[t];
            nonempty[k] = ph.q_hat_others[t];
        }
        (stages, nonempty)
    }

    fn compress(&self, stages: &[usize], nonempty: &[bool], b_self: usize) -> Phase {
        let peers: Vec<usize> = self.peers().collect();
        Phase {
            b_self,
            b_others: peers.iter().map(|&k| stages[k]).collect(),
            q_hat_others: peers.iter().map(|&k| nonempty[k]).collect(),
        }
    }
}

fn digits(mut code: usize, radix: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = code % radix;
        code /= radix;
    }
    out
}

/// One-step transition probability of chain `i` between two states, summed
/// over every attempt vector and decrement vector. Node `i` has Bernoulli
/// arrivals at `cfg.lambda[i]`.
pub fn transition_prob(
    i: usize,
    from: &ChainState,
    to: &ChainState,
    cfg: &NetworkConfig,
    z: &[f64],
) -> f64 {
    let n = cfg.n();
    if from.level.abs_diff(to.level) > 1 {
        return 0.0;
    }
    let space = PhaseSpace::new(i, n, cfg.cutoff);
    let (stages, q_hat) = space.expand(from.level, &from.phase);
    let (stages_next, q_hat_next) = space.expand(to.level, &to.phase);
    // Phases that cannot exist carry no probability.
    for k in 0..n {
        if k != i && !q_hat_next[k] && stages_next[k] != 0 {
            return 0.0;
        }
    }
    if to.level == 0 && to.phase.b_self != 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for a_code in 0..(1usize << n) {
        let attempt: Vec<bool> = (0..n).map(|k| a_code >> k & 1 == 1).collect();
        let pa = attempt_prob(cfg, &stages[..n], &q_hat[..n], &attempt);
        if pa == 0.0 {
            continue;
        }
        let consistent = (0..n).all(|k| {
            let next = backoff_next(stages[k], &attempt, k, cfg.cutoff);
            // The modeled node's stage is not stored at level 0.
            if k == i && to.level == 0 {
                true
            } else {
                next == stages_next[k]
            }
        });
        if !consistent {
            continue;
        }
        total += pa * queue_status_prob(i, from, to, &q_hat, &q_hat_next, &attempt, cfg, z);
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn queue_status_prob(
    i: usize,
    from: &ChainState,
    to: &ChainState,
    q_hat: &[bool],
    q_hat_next: &[bool],
    attempt: &[bool],
    cfg: &NetworkConfig,
    z: &[f64],
) -> f64 {
    let n = cfg.n();
    let mut total = 0.0;
    // |d| = 0 plus each single-component decrement.
    for owner in std::iter::once(None).chain((0..n).map(Some)) {
        let d: Vec<bool> = (0..n).map(|k| Some(k) == owner).collect();
        let pd = decrement_prob(i, attempt, &d, z);
        if pd == 0.0 {
            continue;
        }
        let arrivals_i = to.level as i32 - from.level as i32 + d[i] as i32;
        let mut p = pd * arrival_prob(cfg.lambda[i], arrivals_i);
        for j in (0..n).filter(|&j| j != i) {
            let needed = q_hat_next[j] as i32 - q_hat[j] as i32 + d[j] as i32;
            p *= indicator_transition_prob(cfg.lambda[j], q_hat[j], q_hat_next[j], needed);
        }
        total += p;
    }
    total
}

/// Chain of node `i` with Bernoulli arrivals at `cfg.lambda[i]`.
pub fn assemble_chain(i: usize, cfg: &NetworkConfig, coupling: &CouplingState) -> Result<QbdChain> {
    let own = DmapSpec::bernoulli(cfg.lambda[i])?;
    assemble_chain_with_arrivals(i, cfg, coupling, &own)
}

/// Chain of node `j` with node `i` pinned as saturated.
pub fn saturate(j: usize, cfg: &NetworkConfig, coupling: &CouplingState, i: usize) -> Result<QbdChain> {
    if i == j {
        return Err(Error::Config(format!("cannot saturate the modeled node {j} itself")));
    }
    let mut c = coupling.clone();
    c.saturated[i] = true;
    c.z[i] = 0.0;
    assemble_chain(j, cfg, &c)
}

/// Phase space of chain `i` under the given coupling.
pub fn phase_space(i: usize, cfg: &NetworkConfig, coupling: &CouplingState) -> PhaseSpace {
    let mut pinned = coupling.saturated.clone();
    pinned[i] = false;
    PhaseSpace::with_pinned(i, cfg.n(), cfg.cutoff, &pinned)
}

/// Builds the six blocks of chain `i` whose own arrivals follow `own`.
///
/// Phases are the base phases refined by the arrival state, which varies
/// fastest: extended index `h * c + u`.
pub fn assemble_chain_with_arrivals(
    i: usize,
    cfg: &NetworkConfig,
    coupling: &CouplingState,
    own: &DmapSpec,
) -> Result<QbdChain> {
    cfg.validate()?;
    coupling.validate(cfg.n())?;
    if i >= cfg.n() {
        return Err(Error::Config(format!("node {i} out of range")));
    }
    let space = phase_space(i, cfg, coupling);
    let c = own.states();
    let m0 = space.m0() * c;
    let m = space.m() * c;
    let mut blocks = Blocks {
        b1: DMatrix::zeros(m0, m0),
        b0: DMatrix::zeros(m0, m),
        b2: DMatrix::zeros(m, m0),
        a1: DMatrix::zeros(m, m),
        a0: DMatrix::zeros(m, m),
        a2: DMatrix::zeros(m, m),
    };
    let mut z = coupling.z.clone();
    for (k, s) in coupling.saturated.iter().enumerate() {
        if *s && k != i {
            z[k] = 0.0;
        }
    }
    // Level 1 supplies B2, A1, A0; level 2 supplies A2.
    for level in [0usize, 1, 2] {
        for (h, ph) in space.phases(level).iter().enumerate() {
            emit_transitions(i, cfg, &z, &space, own, level, h, ph, &mut blocks);
        }
    }
    let Blocks {
        b1,
        b0,
        b2,
        a1,
        a0,
        a2,
    } = blocks;
    QbdChain::new(a0, a1, a2, b0, b1, b2)
}

struct Blocks {
    b1: DMatrix<f64>,
    b0: DMatrix<f64>,
    b2: DMatrix<f64>,
    a1: DMatrix<f64>,
    a0: DMatrix<f64>,
    a2: DMatrix<f64>,
}

#[allow(clippy::too_many_arguments)]
fn emit_transitions(
    i: usize,
    cfg: &NetworkConfig,
    z: &[f64],
    space: &PhaseSpace,
    own: &DmapSpec,
    level: usize,
    h: usize,
    ph: &Phase,
    blocks: &mut Blocks,
) {
    let n = cfg.n();
    let c = own.states();
    let (stages, q_hat) = space.expand(level, ph);
    let tx: Vec<f64> = (0..n)
        .map(|k| transmit_prob(cfg.p[k], cfg.r, stages[k], q_hat[k]))
        .collect();
    let busy: usize = (0..n).filter(|&k| q_hat[k]).map(|k| 1 << k).sum();

    // Submasks of the busy set are the attempt vectors with nonzero weight.
    let mut a_mask = busy;
    loop {
        let pa: f64 = (0..n)
            .filter(|&k| q_hat[k])
            .map(|k| if a_mask >> k & 1 == 1 { tx[k] } else { 1.0 - tx[k] })
            .product();
        if pa > 0.0 {
            let attempt: [bool; MAX_NODES] = std::array::from_fn(|k| a_mask >> k & 1 == 1);
            let mut next_stages = [0usize; MAX_NODES];
            for k in 0..n {
                next_stages[k] = backoff_next(stages[k], &attempt[..n], k, cfg.cutoff);
            }
            let sender = (a_mask.count_ones() == 1).then(|| a_mask.trailing_zeros() as usize);
            let outcomes: [(Option<usize>, f64); 2] = match sender {
                None => [(None, 1.0), (None, 0.0)],
                Some(s) if s == i => [(Some(i), 1.0), (None, 0.0)],
                Some(s) => [(Some(s), z[s]), (None, 1.0 - z[s])],
            };
            for (owner, pd) in outcomes {
                if pd == 0.0 {
                    continue;
                }
                emit_queue_outcomes(
                    i,
                    cfg,
                    space,
                    own,
                    level,
                    h,
                    &q_hat,
                    &next_stages,
                    owner,
                    pa * pd,
                    c,
                    blocks,
                );
            }
        }
        if a_mask == 0 {
            break;
        }
        a_mask = (a_mask - 1) & busy;
    }
}

#[allow(clippy::too_many_arguments)]
fn emit_queue_outcomes(
    i: usize,
    cfg: &NetworkConfig,
    space: &PhaseSpace,
    own: &DmapSpec,
    level: usize,
    h: usize,
    q_hat: &[bool; MAX_NODES],
    next_stages: &[usize; MAX_NODES],
    owner: Option<usize>,
    weight: f64,
    c: usize,
    blocks: &mut Blocks,
) {
    let n = cfg.n();
    let peers: Vec<usize> = space.peers().collect();
    // Each peer has one or two indicator outcomes.
    let mut peer_outcomes: Vec<[(bool, f64); 2]> = Vec::with_capacity(peers.len());
    for &j in &peers {
        let lj = cfg.lambda[j];
        let departs = owner == Some(j);
        let o = if q_hat[j] && !departs {
            [(true, 1.0), (false, 0.0)]
        } else {
            [(false, 1.0 - lj), (true, lj)]
        };
        peer_outcomes.push(o);
    }
    let own_drop = (owner == Some(i)) as usize;
    let level_after_departure = level - own_drop;

    let combos = 1usize << peers.len();
    for combo in 0..combos {
        let mut p_peers = weight;
        let mut nonempty_next = [false; MAX_NODES];
        for (t, &j) in peers.iter().enumerate() {
            let (q, pr) = peer_outcomes[t][combo >> t & 1];
            p_peers *= pr;
            nonempty_next[j] = q;
        }
        if p_peers == 0.0 {
            continue;
        }
        // Duplicate deterministic outcomes are skipped via the zero weight of
        // their second slot.
        if peers
            .iter()
            .enumerate()
            .any(|(t, _)| peer_outcomes[t][1].1 == 0.0 && combo >> t & 1 == 1)
        {
            continue;
        }
        for arrival in [0usize, 1] {
            let level_next = level_after_departure + arrival;
            let b_self = if level_next == 0 { 0 } else { next_stages[i] };
            let phase = space.compress(&next_stages[..n], &nonempty_next[..n], b_self);
            let Some(dest) = space.index_of(level_next, &phase) else {
                // Only reachable through zero-probability branches.
                continue;
            };
            let d = if arrival == 1 { own.d1() } else { own.d0() };
            for u in 0..c {
                for v in 0..c {
                    let w = p_peers * d[(u, v)];
                    if w == 0.0 {
                        continue;
                    }
                    let (row, col) = (h * c + u, dest * c + v);
                    let target = match (level, level_next.cmp(&level)) {
                        (0, std::cmp::Ordering::Equal) => &mut blocks.b1,
                        (0, std::cmp::Ordering::Greater) => &mut blocks.b0,
                        (1, std::cmp::Ordering::Less) => &mut blocks.b2,
                        (1, std::cmp::Ordering::Equal) => &mut blocks.a1,
                        (1, std::cmp::Ordering::Greater) => &mut blocks.a0,
                        (2, std::cmp::Ordering::Less) => &mut blocks.a2,
                        _ => continue,
                    };
                    target[(row, col)] += w;
                }
            }
        }
    }
}

/// `p_suc(h)`: probability that the modeled node is the sole transmitter in
/// each phase of levels >= 1.
pub fn success_probabilities(space: &PhaseSpace, cfg: &NetworkConfig) -> Vec<f64> {
    let n = cfg.n();
    let i = space.node();
    space
        .phases(1)
        .iter()
        .map(|ph| {
            let (stages, q_hat) = space.expand(1, ph);
            let attempt: Vec<bool> = (0..n).map(|k| k == i).collect();
            attempt_prob(cfg, &stages[..n], &q_hat[..n], &attempt)
        })
        .collect()
}

/// Settings for the coupled fixed point.
#[derive(Debug, Clone, Copy)]
pub struct CouplingOptions {
    /// Starting value of `z_j` for every unsaturated node.
    pub z_init: f64,
    pub tol: f64,
    pub max_outer: usize,
    pub solver: SolverOptions,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        Self {
            z_init: 1.0,
            tol: COUPLING_TOL,
            max_outer: MAX_OUTER_ITERATIONS,
            solver: SolverOptions::logarithmic_reduction(),
        }
    }
}

/// Solved network: one chain solution per unsaturated node.
#[derive(Debug, Clone)]
pub struct CoupledSolution {
    pub solutions: Vec<Option<QbdSolution>>,
    pub coupling: CouplingState,
    pub outer_iterations: usize,
}

/// Solves all chains jointly, optionally with one node saturated.
pub fn solve_coupled(cfg: &NetworkConfig, saturated: Option<usize>) -> Result<CoupledSolution> {
    let nodes: Vec<usize> = saturated.into_iter().collect();
    solve_coupled_with(cfg, &nodes, &CouplingOptions::default())
}

pub fn solve_coupled_with(
    cfg: &NetworkConfig,
    saturated: &[usize],
    opts: &CouplingOptions,
) -> Result<CoupledSolution> {
    cfg.validate()?;
    let n = cfg.n();
    if saturated.iter().any(|&s| s >= n) {
        return Err(Error::Config("saturated node out of range".into()));
    }
    let mut coupling = CouplingState::with_saturated(n, saturated);
    let active: Vec<usize> = (0..n).filter(|&k| !coupling.saturated[k]).collect();
    for &k in &active {
        coupling.z[k] = opts.z_init;
    }
    let mut solutions: Vec<Option<QbdSolution>> = vec![None; n];
    if active.is_empty() {
        return Ok(CoupledSolution {
            solutions,
            coupling,
            outer_iterations: 0,
        });
    }

    let mut last_step = vec![0.0f64; n];
    let mut flips = vec![0usize; n];
    let mut damped = false;
    for outer in 1..=opts.max_outer {
        let mut next_z = coupling.z.clone();
        for &j in &active {
            let chain = assemble_chain(j, cfg, &coupling)?;
            let d = qbd::drift_from_phase(&chain, 0)?;
            if d.mu > -CRITICAL_BAND {
                return Err(Error::Unstable { node: j, mu: d.mu });
            }
            let sol = qbd::solve(&chain, &opts.solver)?;
            next_z[j] = sol.single_packet_ratio().unwrap_or(1.0);
            solutions[j] = Some(sol);
        }
        let mut delta = 0.0f64;
        for &j in &active {
            let step = next_z[j] - coupling.z[j];
            delta = delta.max(step.abs());
            if step * last_step[j] < 0.0 {
                flips[j] += 1;
                if flips[j] >= 2 {
                    damped = true;
                }
            }
            last_step[j] = step;
        }
        for &j in &active {
            coupling.z[j] = if damped {
                coupling.z[j] + 0.5 * (next_z[j] - coupling.z[j])
            } else {
                next_z[j]
            };
        }
        // A lone chain does not depend on its own z.
        if delta < opts.tol || active.len() == 1 {
            return Ok(CoupledSolution {
                solutions,
                coupling,
                outer_iterations: outer,
            });
        }
        if !delta.is_finite() {
            break;
        }
    }
    Err(Error::CouplingNotConverged {
        iterations: opts.max_outer,
        delta: f64::NAN,
    })
}

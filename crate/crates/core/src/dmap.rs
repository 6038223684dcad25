//! Discrete-time Markovian arrival processes.
//!
//! A D-MAP with `c` arrival states is a pair of `c x c` matrices: `d0(u, v)` is
//! the probability of moving from `u` to `v` without an arrival, `d1(u, v)`
//! the probability of doing so with one. Bernoulli arrivals are the `c = 1`
//! case `d0 = 1 - lambda`, `d1 = lambda`.
//!
//! Only the modeled node carries its D-MAP inside its chain; peers enter as
//! Bernoulli sources at their average rates. With the modeled node saturated
//! the repeating matrix factors as `A^D = A (x) D`, which is checked here
//! together with the rate-equivalence of the resulting boundary.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, CouplingState, NetworkConfig, PhaseSpace};
use crate::qbd::{self, DriftResult, QbdChain};

const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DmapRows", into = "DmapRows")]
pub struct DmapSpec {
    d0: DMatrix<f64>,
    d1: DMatrix<f64>,
}

/// Row-major wire form used in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmapRows {
    pub d0: Vec<Vec<f64>>,
    pub d1: Vec<Vec<f64>>,
}

impl TryFrom<DmapRows> for DmapSpec {
    type Error = Error;

    fn try_from(rows: DmapRows) -> Result<Self> {
        let to_matrix = |name: &str, m: &[Vec<f64>]| -> Result<DMatrix<f64>> {
            let c = m.len();
            if c == 0 || m.iter().any(|row| row.len() != c) {
                return Err(Error::Config(format!("dmap.{name} must be a non-empty square matrix")));
            }
            Ok(DMatrix::from_fn(c, c, |u, v| m[u][v]))
        };
        DmapSpec::new(to_matrix("d0", &rows.d0)?, to_matrix("d1", &rows.d1)?)
    }
}

impl From<DmapSpec> for DmapRows {
    fn from(spec: DmapSpec) -> Self {
        let rows = |m: &DMatrix<f64>| {
            (0..m.nrows())
                .map(|u| m.row(u).iter().copied().collect())
                .collect()
        };
        DmapRows {
            d0: rows(&spec.d0),
            d1: rows(&spec.d1),
        }
    }
}

impl DmapSpec {
    pub fn new(d0: DMatrix<f64>, d1: DMatrix<f64>) -> Result<Self> {
        let c = d0.nrows();
        if c == 0 || d0.shape() != (c, c) || d1.shape() != (c, c) {
            return Err(Error::Dimension(format!(
                "d0 is {:?} and d1 is {:?}; both must be the same square size",
                d0.shape(),
                d1.shape()
            )));
        }
        if d0.iter().chain(d1.iter()).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("D-MAP entries must be nonnegative".into()));
        }
        let spec = Self { d0, d1 };
        let d = spec.transition_matrix();
        for u in 0..c {
            let s = d.row(u).sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Config(format!("row {u} of d0 + d1 sums to {s}")));
            }
        }
        qbd::stationary_vector(&d)
            .map_err(|_| Error::Config("arrival chain d0 + d1 must be irreducible".into()))?;
        if c > 1 && !irreducible(&d) {
            return Err(Error::Config("arrival chain d0 + d1 must be irreducible".into()));
        }
        Ok(spec)
    }

    /// Bernoulli arrivals with rate `lambda` as a one-state D-MAP.
    pub fn bernoulli(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Config(format!("arrival rate {lambda} outside [0, 1]")));
        }
        Ok(Self {
            d0: DMatrix::from_element(1, 1, 1.0 - lambda),
            d1: DMatrix::from_element(1, 1, lambda),
        })
    }

    /// Two-state family whose underlying chain is `[[0.2, 0.8], [0.5, 0.5]]`
    /// regardless of the per-state arrival probabilities.
    pub fn two_state(lambda_1: f64, lambda_2: f64) -> Result<Self> {
        for l in [lambda_1, lambda_2] {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::Config(format!("arrival probability {l} outside [0, 1]")));
            }
        }
        let base = [[0.2, 0.8], [0.5, 0.5]];
        let rates = [lambda_1, lambda_2];
        let d0 = DMatrix::from_fn(2, 2, |u, v| base[u][v] * (1.0 - rates[u]));
        let d1 = DMatrix::from_fn(2, 2, |u, v| base[u][v] * rates[u]);
        Self::new(d0, d1)
    }

    /// Number of arrival states `c`.
    pub fn states(&self) -> usize {
        self.d0.nrows()
    }

    pub fn d0(&self) -> &DMatrix<f64> {
        &self.d0
    }

    pub fn d1(&self) -> &DMatrix<f64> {
        &self.d1
    }

    /// `D = d0 + d1`.
    pub fn transition_matrix(&self) -> DMatrix<f64> {
        &self.d0 + &self.d1
    }

    /// Arrival probability `lambda(u) = sum_v d1(u, v)` per state.
    pub fn rate_per_state(&self) -> DVector<f64> {
        DVector::from_fn(self.states(), |u, _| self.d1.row(u).sum())
    }

    /// Scales every per-state arrival probability by `s` while keeping the
    /// underlying chain `D` fixed.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s >= 0.0) {
            return Err(Error::Config(format!("rate scale {s} must be nonnegative")));
        }
        let d = self.transition_matrix();
        let d1 = &self.d1 * s;
        let d0 = &d - &d1;
        if d0.iter().any(|v| *v < -STOCHASTIC_TOL) {
            return Err(Error::Config(format!(
                "scaling by {s} pushes an arrival probability above 1"
            )));
        }
        Self::new(d0.map(|v| v.max(0.0)), d1)
    }

    /// Rescales to the requested average rate along the current direction.
    pub fn with_average_rate(&self, lambda: f64) -> Result<Self> {
        let current = stationary_and_rate(self)?.lambda_avg;
        if current <= 0.0 {
            return Err(Error::Config("cannot rescale a D-MAP with zero rate".into()));
        }
        self.scaled(lambda / current)
    }
}

fn irreducible(d: &DMatrix<f64>) -> bool {
    let c = d.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; c];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..c {
                let w = if forward { d[(u, v)] } else { d[(v, u)] };
                if w > 0.0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmapStationary {
    pub pi_a: DVector<f64>,
    pub lambda_per_state: DVector<f64>,
    pub lambda_avg: f64,
}

pub fn stationary_and_rate(spec: &DmapSpec) -> Result<DmapStationary> {
    let pi_a = qbd::stationary_vector(&spec.transition_matrix())
        .map_err(|_| Error::Config("arrival chain d0 + d1 must be irreducible".into()))?;
    let lambda_per_state = spec.rate_per_state();
    let lambda_avg = pi_a.dot(&lambda_per_state);
    Ok(DmapStationary {
        pi_a,
        lambda_per_state,
        lambda_avg,
    })
}

/// Extended chain of node `i` whose own arrivals follow `spec`; peers use the
/// Bernoulli rates in `cfg.lambda`.
pub fn assemble_dmap_chain(
    i: usize,
    cfg: &NetworkConfig,
    spec: &DmapSpec,
    coupling: &CouplingState,
) -> Result<QbdChain> {
    model::assemble_chain_with_arrivals(i, cfg, coupling, spec)
}

/// Outcome of the Kronecker comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct KroneckerReport {
    pub max_discrepancy: f64,
    /// `(row, col)` of the largest discrepancy.
    pub location: (usize, usize),
    pub passed: bool,
}

/// Compares `A^D` with `A (x) D` entrywise.
pub fn verify_kronecker(
    base_a: &DMatrix<f64>,
    extended_a: &DMatrix<f64>,
    d: &DMatrix<f64>,
    tol: f64,
) -> KroneckerReport {
    let expected = base_a.kronecker(d);
    if expected.shape() != extended_a.shape() {
        return KroneckerReport {
            max_discrepancy: f64::INFINITY,
            location: (0, 0),
            passed: false,
        };
    }
    let mut worst = (0.0, (0, 0));
    for r in 0..expected.nrows() {
        for c in 0..expected.ncols() {
            let diff = (expected[(r, c)] - extended_a[(r, c)]).abs();
            if diff > worst.0 || diff.is_nan() {
                worst = (diff, (r, c));
            }
        }
    }
    KroneckerReport {
        max_discrepancy: worst.0,
        location: worst.1,
        passed: worst.0 < tol,
    }
}

/// Sums `alpha^D` over each block of `c` consecutive phases.
pub fn aggregate_blocks(alpha_d: &DVector<f64>, c: usize) -> DVector<f64> {
    let m = alpha_d.len() / c;
    DVector::from_fn(m, |k, _| alpha_d.rows(k * c, c).sum())
}

/// Drift of the extended chain split into its arrival and service terms.
#[derive(Debug, Clone)]
pub struct DmapDrift {
    pub drift: DriftResult,
    /// `sum_h alpha^D(h) lambda_i(h)`.
    pub arrival_term: f64,
    /// `sum_h alpha^D(h) p_suc^D(h)`.
    pub service_term: f64,
}

impl DmapDrift {
    pub fn mu(&self) -> f64 {
        self.drift.mu
    }
}

/// Success probability of the modeled node per extended phase.
pub fn success_probabilities_dmap(space: &PhaseSpace, cfg: &NetworkConfig, c: usize) -> Vec<f64> {
    model::success_probabilities(space, cfg)
        .into_iter()
        .flat_map(|p| std::iter::repeat_n(p, c))
        .collect()
}

pub fn drift_dmap(
    chain: &QbdChain,
    spec: &DmapSpec,
    space: &PhaseSpace,
    cfg: &NetworkConfig,
) -> Result<DmapDrift> {
    let c = spec.states();
    if chain.m() != space.m() * c {
        return Err(Error::Dimension(format!(
            "extended chain has {} phases, expected {}",
            chain.m(),
            space.m() * c
        )));
    }
    let drift = qbd::drift(chain)?;
    let rates = spec.rate_per_state();
    let p_suc = success_probabilities_dmap(space, cfg, c);
    let arrival_term: f64 = drift
        .alpha
        .iter()
        .enumerate()
        .map(|(h, a)| a * rates[h % c])
        .sum();
    let service_term: f64 = drift.alpha.iter().zip(&p_suc).map(|(a, p)| a * p).sum();
    Ok(DmapDrift {
        drift,
        arrival_term,
        service_term,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_state_stationary_vector() {
        let st = stationary_and_rate(&DmapSpec::two_state(0.3, 0.1).unwrap()).unwrap();
        assert!((st.pi_a[0] - 5.0 / 13.0).abs() < 1e-14);
        assert!((st.pi_a[1] - 8.0 / 13.0).abs() < 1e-14);
        assert!((st.pi_a[0] - 0.385).abs() < 5e-4);
        assert!((st.lambda_avg - (5.0 * 0.3 + 8.0 * 0.1) / 13.0).abs() < 1e-14);
    }

    #[test]
    fn bernoulli_average_rate() {
        let st = stationary_and_rate(&DmapSpec::bernoulli(0.37).unwrap()).unwrap();
        assert_eq!(st.lambda_avg, 0.37);
    }

    #[test]
    fn state_independent_rate() {
        let st = stationary_and_rate(&DmapSpec::two_state(0.25, 0.25).unwrap()).unwrap();
        assert!((st.lambda_avg - 0.25).abs() < 1e-15);
    }

    #[test]
    fn reducible_chain_is_rejected() {
        let d0 = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]);
        let d1 = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]);
        assert!(matches!(DmapSpec::new(d0, d1), Err(Error::Config(_))));
    }

    #[test]
    fn non_stochastic_is_rejected() {
        let d0 = DMatrix::from_row_slice(1, 1, &[0.5]);
        let d1 = DMatrix::from_row_slice(1, 1, &[0.6]);
        assert!(DmapSpec::new(d0, d1).is_err());
    }

    #[test]
    fn rescaling_keeps_underlying_chain() {
        let spec = DmapSpec::two_state(0.2, 0.4).unwrap();
        let target = spec.with_average_rate(0.15).unwrap();
        assert!((stationary_and_rate(&target).unwrap().lambda_avg - 0.15).abs() < 1e-14);
        assert!((target.transition_matrix() - spec.transition_matrix()).amax() < 1e-15);
        assert!(spec.scaled(3.0).is_err());
    }

    #[test]
    fn row_major_round_trip() {
        let spec = DmapSpec::two_state(0.3, 0.6).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        let back: DmapSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
        assert!(json.contains("\"d0\":[["));
    }
}

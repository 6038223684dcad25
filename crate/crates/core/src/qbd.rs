//! Homogeneous discrete-time quasi-birth-death chains.
//!
//! A chain is described by six blocks. `b1`/`b0` hold the level-0 transitions
//! (stay / move up), `b2` the level-1 to level-0 transitions, and `a2`/`a1`/`a0`
//! the repeating down / local / up transitions for every level above.
//!
//! ```text
//!     | B1  B0           |
//! P = | B2  A1  A0       |
//!     |     A2  A1  A0   |
//!     |         ..  ..  ..|
//! ```
//!
//! The stationary distribution is matrix-geometric, `pi(l + 1) = pi(1) R^l`,
//! with `R` the minimal nonnegative solution of `A0 + R A1 + R^2 A2 = R`.
//! Positive recurrence is decided from the drift `alpha (A0 - A2) 1`, where
//! `alpha` is the stationary vector of `A0 + A1 + A2`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance on row sums of the assembled blocks.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Drift values with `|mu|` at or below this are reported as indeterminate.
pub const DRIFT_BAND: f64 = 1e-9;

/// Default residual tolerance for the `R` iteration.
pub const R_TOL: f64 = 1e-12;

/// Largest negative boundary mass accepted as rounding.
pub const NEGATIVE_MASS_TOL: f64 = 1e-6;

/// Default iteration cap for successive substitution.
pub const R_MAX_ITER: usize = 100_000;

/// The six blocks of a homogeneous QBD.
#[derive(Debug, Clone, PartialEq)]
pub struct QbdChain {
    pub a0: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    pub b0: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
}

impl QbdChain {
    /// Builds a chain and checks block shapes, entry ranges and row sums.
    pub fn new(
        a0: DMatrix<f64>,
        a1: DMatrix<f64>,
        a2: DMatrix<f64>,
        b0: DMatrix<f64>,
        b1: DMatrix<f64>,
        b2: DMatrix<f64>,
    ) -> Result<Self> {
        let chain = Self::from_blocks_unchecked(a0, a1, a2, b0, b1, b2);
        chain.validate()?;
        Ok(chain)
    }

    /// Builds a chain without validating it. Useful for fault injection.
    pub fn from_blocks_unchecked(
        a0: DMatrix<f64>,
        a1: DMatrix<f64>,
        a2: DMatrix<f64>,
        b0: DMatrix<f64>,
        b1: DMatrix<f64>,
        b2: DMatrix<f64>,
    ) -> Self {
        Self {
            a0,
            a1,
            a2,
            b0,
            b1,
            b2,
        }
    }

    /// Phase count at levels >= 1.
    pub fn m(&self) -> usize {
        self.a1.nrows()
    }

    /// Phase count at level 0.
    pub fn m0(&self) -> usize {
        self.b1.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.a1.nrows();
        let m0 = self.b1.nrows();
        let shapes = [
            ("A0", &self.a0, m, m),
            ("A1", &self.a1, m, m),
            ("A2", &self.a2, m, m),
            ("B0", &self.b0, m0, m),
            ("B1", &self.b1, m0, m0),
            ("B2", &self.b2, m, m0),
        ];
        for (name, block, rows, cols) in shapes {
            if block.shape() != (rows, cols) {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {rows}x{cols}",
                    block.nrows(),
                    block.ncols()
                )));
            }
            if let Some(v) = block.iter().find(|v| !(-ROW_SUM_TOL..=1.0 + ROW_SUM_TOL).contains(*v)) {
                return Err(Error::Config(format!("{name} has entry {v} outside [0, 1]")));
            }
        }
        let check = |label: &str, parts: &[&DMatrix<f64>]| -> Result<()> {
            for row in 0..parts[0].nrows() {
                let s: f64 = parts.iter().map(|b| b.row(row).sum()).sum();
                if (s - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::Config(format!(
                        "row {row} of ({label}) sums to {s:.15}"
                    )));
                }
            }
            Ok(())
        };
        check("B1|B0", &[&self.b1, &self.b0])?;
        check("B2|A1|A0", &[&self.b2, &self.a1, &self.a0])?;
        check("A2|A1|A0", &[&self.a2, &self.a1, &self.a0])?;
        Ok(())
    }

    /// `A = A0 + A1 + A2`.
    pub fn a_matrix(&self) -> DMatrix<f64> {
        &self.a0 + &self.a1 + &self.a2
    }
}

/// Algorithm used for the minimal solution `R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RMethod {
    /// `R <- A0 + R A1 + R^2 A2` starting from zero.
    #[default]
    SuccessiveSubstitution,
    /// Latouche-Ramaswami logarithmic reduction on `G`, then `R` from `G`.
    LogarithmicReduction,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub method: RMethod,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: RMethod::SuccessiveSubstitution,
            tol: R_TOL,
            max_iter: R_MAX_ITER,
        }
    }
}

impl SolverOptions {
    pub fn logarithmic_reduction() -> Self {
        Self {
            method: RMethod::LogarithmicReduction,
            tol: R_TOL,
            max_iter: 200,
        }
    }
}

/// Output of [`solve_r`]: the matrix and how it was reached.
#[derive(Debug, Clone)]
pub struct RSolution {
    pub r: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Residual `max |A0 + R A1 + R^2 A2 - R|`.
pub fn r_residual(chain: &QbdChain, r: &DMatrix<f64>) -> f64 {
    let rr = r * r;
    let res = &chain.a0 + r * &chain.a1 + rr * &chain.a2 - r;
    res.amax()
}

/// Successive substitution with the given tolerance and iteration cap.
pub fn solve_r_matrix(chain: &QbdChain, tol: f64, max_iter: usize) -> Result<DMatrix<f64>> {
    solve_r(
        chain,
        &SolverOptions {
            method: RMethod::SuccessiveSubstitution,
            tol,
            max_iter,
        },
    )
    .map(|s| s.r)
}

pub fn solve_r(chain: &QbdChain, opts: &SolverOptions) -> Result<RSolution> {
    check_square_blocks(chain)?;
    match opts.method {
        RMethod::SuccessiveSubstitution => successive_substitution(chain, opts),
        RMethod::LogarithmicReduction => logarithmic_reduction(chain, opts),
    }
}

fn check_square_blocks(chain: &QbdChain) -> Result<()> {
    let m = chain.a1.nrows();
    for (name, b) in [("A0", &chain.a0), ("A1", &chain.a1), ("A2", &chain.a2)] {
        if b.shape() != (m, m) {
            return Err(Error::Dimension(format!(
                "{name} is {}x{}, expected {m}x{m}",
                b.nrows(),
                b.ncols()
            )));
        }
    }
    Ok(())
}

fn successive_substitution(chain: &QbdChain, opts: &SolverOptions) -> Result<RSolution> {
    let m = chain.m();
    let mut r = DMatrix::<f64>::zeros(m, m);
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let next = &chain.a0 + &r * &chain.a1 + (&r * &r) * &chain.a2;
        // The update size equals the residual of the previous iterate.
        residual = (&next - &r).amax();
        r = next;
        if residual < opts.tol {
            return Ok(RSolution {
                residual: r_residual(chain, &r),
                r,
                iterations: it,
            });
        }
        if !residual.is_finite() {
            break;
        }
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        residual,
    })
}

fn logarithmic_reduction(chain: &QbdChain, opts: &SolverOptions) -> Result<RSolution> {
    let m = chain.m();
    let eye = DMatrix::<f64>::identity(m, m);
    let inv_local = invert(&(&eye - &chain.a1), "I - A1")?;
    let mut up = &inv_local * &chain.a0;
    let mut down = &inv_local * &chain.a2;
    let mut g = down.clone();
    let mut t = up.clone();
    let mut iterations = 0;
    let mut gap = f64::INFINITY;
    for it in 1..=opts.max_iter {
        iterations = it;
        let u = &down * &up + &up * &down;
        let w = invert(&(&eye - u), "I - U")?;
        let down_next = &w * (&down * &down);
        let up_next = &w * (&up * &up);
        g += &t * &down_next;
        t = &t * &up_next;
        down = down_next;
        up = up_next;
        gap = g.row_iter().map(|row| (1.0 - row.sum()).abs()).fold(0.0, f64::max);
        if gap < opts.tol || t.amax() < opts.tol {
            break;
        }
    }
    if !(gap < opts.tol || t.amax() < opts.tol) {
        return Err(Error::NotConverged {
            iterations,
            residual: gap,
        });
    }
    let denom = &eye - &chain.a1 - &chain.a0 * &g;
    let r = &chain.a0 * invert(&denom, "I - A1 - A0 G")?;
    let residual = r_residual(chain, &r);
    Ok(RSolution {
        r,
        iterations,
        residual,
    })
}

fn invert(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::DegenerateBoundary(format!("{what} is singular")))
}

/// Solved chain: `R` and the two boundary vectors.
#[derive(Debug, Clone)]
pub struct QbdSolution {
    pub r_matrix: DMatrix<f64>,
    /// Row vector over level-0 phases.
    pub pi0: DVector<f64>,
    /// Row vector over level-1 phases.
    pub pi1: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl QbdSolution {
    /// Stationary vector of level `level` (`pi(l) = pi(1) R^(l-1)` above 1).
    pub fn level_vector(&self, level: usize) -> DVector<f64> {
        match level {
            0 => self.pi0.clone(),
            _ => {
                let mut v = self.pi1.clone();
                for _ in 1..level {
                    v = self.r_matrix.tr_mul(&v);
                }
                v
            }
        }
    }

    /// Probability of the empty level.
    pub fn p_empty(&self) -> f64 {
        self.pi0.sum()
    }

    /// `P(q = 1 | q >= 1)`, or `None` when level 0 carries all mass.
    pub fn single_packet_ratio(&self) -> Option<f64> {
        let busy = 1.0 - self.pi0.sum();
        (busy > 1e-14).then(|| (self.pi1.sum() / busy).clamp(0.0, 1.0))
    }
}

/// Solves the boundary equations for a converged `R`.
pub fn solve_boundary(chain: &QbdChain, r: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let m0 = chain.m0();
    let m = chain.m();
    let n = m0 + m;
    let eye_m = DMatrix::<f64>::identity(m, m);

    // x M = 0 with x = (pi0, pi1); columns are the balance equations.
    let mut sys = DMatrix::<f64>::zeros(n, n);
    sys.view_mut((0, 0), (m0, m0))
        .copy_from(&(&chain.b1 - DMatrix::<f64>::identity(m0, m0)));
    sys.view_mut((0, m0), (m0, m)).copy_from(&chain.b0);
    sys.view_mut((m0, 0), (m, m0)).copy_from(&chain.b2);
    sys.view_mut((m0, m0), (m, m))
        .copy_from(&(&chain.a1 + r * &chain.a2 - &eye_m));

    let tail = (&eye_m - r)
        .lu()
        .solve(&DVector::from_element(m, 1.0))
        .ok_or_else(|| Error::DegenerateBoundary("I - R is singular".into()))?;

    let mut augmented = sys.clone();
    for k in 0..m0 {
        augmented[(k, 0)] = 1.0;
    }
    for k in 0..m {
        augmented[(m0 + k, 0)] = tail[k];
    }
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[0] = 1.0;
    let x = augmented
        .transpose()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::DegenerateBoundary(format!("m0={m0}, m={m}: singular system")))?;

    let residual = sys.tr_mul(&x).amax();
    if !residual.is_finite() || residual > 1e-9 {
        return Err(Error::DegenerateBoundary(format!(
            "m0={m0}, m={m}: balance residual {residual:e}"
        )));
    }
    // Near-critical chains lose accuracy through (I - R)^-1; small negative
    // masses are rounding and are clipped before renormalising.
    let worst = x.iter().fold(0.0f64, |a, v| a.min(*v));
    if worst < -NEGATIVE_MASS_TOL {
        return Err(Error::DegenerateBoundary(format!(
            "m0={m0}, m={m}: negative stationary mass {worst:e}"
        )));
    }
    let mut pi0 = DVector::from_iterator(m0, x.iter().take(m0).map(|v| v.max(0.0)));
    let mut pi1 = DVector::from_iterator(m, x.iter().skip(m0).map(|v| v.max(0.0)));
    let total = pi0.sum() + pi1.dot(&tail);
    pi0 /= total;
    pi1 /= total;
    Ok((pi0, pi1))
}

/// Full solve: `R` by the requested method, then the boundary vectors.
pub fn solve(chain: &QbdChain, opts: &SolverOptions) -> Result<QbdSolution> {
    let rs = solve_r(chain, opts)?;
    let (pi0, pi1) = solve_boundary(chain, &rs.r)?;
    Ok(QbdSolution {
        r_matrix: rs.r,
        pi0,
        pi1,
        converged: true,
        iterations: rs.iterations,
    })
}

/// Level probabilities `pi(0), ..., pi(max_level)`.
pub fn level_marginals(sol: &QbdSolution, max_level: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(max_level + 1);
    out.push(sol.pi0.sum());
    if max_level == 0 {
        return out;
    }
    let mut v = sol.pi1.clone();
    out.push(v.sum());
    for _ in 2..=max_level {
        v = sol.r_matrix.tr_mul(&v);
        out.push(v.sum());
    }
    out
}

/// Stability verdict from the sign of the drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recurrence {
    PositiveRecurrent,
    /// `|mu|` inside the numerical band around zero.
    Indeterminate,
    NotPositiveRecurrent,
}

#[derive(Debug, Clone)]
pub struct DriftResult {
    pub a_matrix: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub mu: f64,
}

impl DriftResult {
    pub fn classify(&self) -> Recurrence {
        if self.mu < -DRIFT_BAND {
            Recurrence::PositiveRecurrent
        } else if self.mu > DRIFT_BAND {
            Recurrence::NotPositiveRecurrent
        } else {
            Recurrence::Indeterminate
        }
    }

    pub fn is_stable(&self) -> bool {
        self.classify() == Recurrence::PositiveRecurrent
    }
}

/// Mean drift `alpha (A0 - A2) 1` of the repeating part.
pub fn drift(chain: &QbdChain) -> Result<DriftResult> {
    let a_matrix = chain.a_matrix();
    let alpha = stationary_vector(&a_matrix)?;
    let step = (&chain.a0 - &chain.a2) * DVector::from_element(chain.m(), 1.0);
    let mu = alpha.dot(&step);
    Ok(DriftResult { a_matrix, alpha, mu })
}

/// Stationary row vector of a stochastic matrix with a single closed class.
///
/// Solves `x (P - I) = 0` with one balance equation swapped for `x 1 = 1`.
pub fn stationary_vector(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    if p.ncols() != n {
        return Err(Error::Dimension(format!("{}x{} is not square", n, p.ncols())));
    }
    if n == 1 {
        return Ok(DVector::from_element(1, 1.0));
    }
    let mut sys = p.transpose() - DMatrix::<f64>::identity(n, n);
    for c in 0..n {
        sys[(n - 1, c)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    let x = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Reducible(format!("{n}-state matrix has no unique stationary vector")))?;
    if x.iter().any(|v| !v.is_finite() || *v < -1e-9) {
        return Err(Error::Reducible(format!(
            "{n}-state matrix has no unique stationary vector"
        )));
    }
    let balance = (p.tr_mul(&x) - &x).amax();
    if balance > 1e-9 {
        return Err(Error::Reducible(format!(
            "{n}-state matrix: stationary residual {balance:e}"
        )));
    }
    Ok(x.map(|v| v.max(0.0)))
}

/// Long-run average distribution of a chain started in state `start`.
///
/// Equals `stationary_vector(p)` when there is a single closed class. With
/// several, each class's stationary vector is weighted by its absorption
/// probability from `start`.
pub fn limiting_distribution(p: &DMatrix<f64>, start: usize) -> Result<DVector<f64>> {
    let n = p.nrows();
    if p.ncols() != n || start >= n {
        return Err(Error::Dimension(format!("start {start} for a {}x{} matrix", n, p.ncols())));
    }
    let reach = reachability(p);
    // State s is recurrent iff everything it reaches reaches it back.
    let recurrent: Vec<bool> = (0..n)
        .map(|s| (0..n).all(|t| !reach[s][t] || reach[t][s]))
        .collect();
    let mut class_of = vec![usize::MAX; n];
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for s in 0..n {
        if recurrent[s] && class_of[s] == usize::MAX {
            let members: Vec<usize> = (0..n).filter(|&t| reach[s][t]).collect();
            for &t in &members {
                class_of[t] = classes.len();
            }
            classes.push(members);
        }
    }
    let transient: Vec<usize> = (0..n).filter(|&s| !recurrent[s]).collect();
    let mut pos = vec![usize::MAX; n];
    for (k, &s) in transient.iter().enumerate() {
        pos[s] = k;
    }
    // (I - P_TT) h = P_TC 1 for every closed class C at once.
    let t = transient.len();
    let mut absorb = DMatrix::<f64>::zeros(t, classes.len());
    if t > 0 {
        let mut sys = DMatrix::<f64>::identity(t, t);
        for (a, &s) in transient.iter().enumerate() {
            for (b, &u) in transient.iter().enumerate() {
                sys[(a, b)] -= p[(s, u)];
            }
            for u in 0..n {
                if recurrent[u] {
                    absorb[(a, class_of[u])] += p[(s, u)];
                }
            }
        }
        absorb = sys
            .lu()
            .solve(&absorb)
            .ok_or_else(|| Error::Reducible("transient block is singular".into()))?;
    }
    let mut out = DVector::<f64>::zeros(n);
    for (c, members) in classes.iter().enumerate() {
        let weight = if recurrent[start] {
            if class_of[start] == c { 1.0 } else { 0.0 }
        } else {
            absorb[(pos[start], c)]
        };
        if weight == 0.0 {
            continue;
        }
        let sub = DMatrix::from_fn(members.len(), members.len(), |a, b| p[(members[a], members[b])]);
        let pi = stationary_vector(&sub)?;
        for (a, &s) in members.iter().enumerate() {
            out[s] += weight * pi[a];
        }
    }
    Ok(out)
}

fn reachability(p: &DMatrix<f64>) -> Vec<Vec<bool>> {
    let n = p.nrows();
    (0..n)
        .map(|s| {
            let mut seen = vec![false; n];
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(u) = stack.pop() {
                for v in 0..n {
                    if p[(u, v)] > 0.0 && !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            seen
        })
        .collect()
}

/// `drift` with the phase process started in `start` when `A` is reducible.
pub fn drift_from_phase(chain: &QbdChain, start: usize) -> Result<DriftResult> {
    match drift(chain) {
        Err(Error::Reducible(_)) => {
            let a_matrix = chain.a_matrix();
            let alpha = limiting_distribution(&a_matrix, start)?;
            let step = (&chain.a0 - &chain.a2) * DVector::from_element(chain.m(), 1.0);
            let mu = alpha.dot(&step);
            Ok(DriftResult { a_matrix, alpha, mu })
        }
        other => other,
    }
}

/// Spectral radius from the eigenvalues of the real Schur form.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Kronecker product `a (x) b`.
pub fn kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_chain(up: f64, local: f64, down: f64, b0: f64, b2: f64) -> QbdChain {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        QbdChain::new(s(up), s(local), s(down), s(b0), s(1.0 - b0), s(b2)).unwrap()
    }

    #[test]
    fn no_level_up_gives_zero_r() {
        let a1 = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.6, 0.4]);
        let z = DMatrix::zeros(2, 2);
        let chain = QbdChain::new(
            z.clone(),
            a1.clone(),
            z.clone(),
            z.clone(),
            a1.clone(),
            z.clone(),
        )
        .unwrap();
        let r = solve_r_matrix(&chain, R_TOL, R_MAX_ITER).unwrap();
        assert_eq!(r, DMatrix::zeros(2, 2));
    }

    #[test]
    fn scalar_r_is_ratio_of_rates() {
        let chain = scalar_chain(0.2, 0.3, 0.5, 0.2, 0.5);
        let r = solve_r_matrix(&chain, R_TOL, R_MAX_ITER).unwrap();
        assert!((r[(0, 0)] - 0.4).abs() < 1e-11);
        let lr = solve_r(&chain, &SolverOptions::logarithmic_reduction()).unwrap();
        assert!((lr.r[(0, 0)] - 0.4).abs() < 1e-13);
    }

    #[test]
    fn scalar_boundary_matches_hand_solution() {
        // Level 0: stay 0.8, up 0.2. Level 1: down 0.5, stay 0.3, up 0.2.
        // Balance at 0: 0.2 pi0 = 0.5 pi1, so pi1 = 0.4 pi0 and
        // pi0 + pi1 / (1 - 0.4) = 1 gives pi0 = 0.6, pi1 = 0.24.
        let chain = QbdChain::new(
            DMatrix::from_element(1, 1, 0.2),
            DMatrix::from_element(1, 1, 0.3),
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 0.2),
            DMatrix::from_element(1, 1, 0.8),
            DMatrix::from_element(1, 1, 0.5),
        )
        .unwrap();
        let sol = solve(&chain, &SolverOptions::default()).unwrap();
        assert!((sol.pi0[0] - 0.6).abs() < 1e-10);
        assert!((sol.pi1[0] - 0.24).abs() < 1e-10);
        let marg = level_marginals(&sol, 6);
        for l in 2..=6 {
            assert!((marg[l] / marg[l - 1] - 0.4).abs() < 1e-9);
        }
    }

    #[test]
    fn no_arrivals_concentrates_on_level_zero() {
        let z1 = DMatrix::zeros(1, 1);
        let chain = QbdChain::new(
            z1.clone(),
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 0.5),
            z1.clone(),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.5),
        )
        .unwrap();
        let sol = solve(&chain, &SolverOptions::default()).unwrap();
        assert_eq!(level_marginals(&sol, 3), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn symmetric_walk_is_indeterminate() {
        let chain = scalar_chain(0.3, 0.4, 0.3, 0.3, 0.3);
        let d = drift(&chain).unwrap();
        assert!(d.mu.abs() < 1e-15);
        assert_eq!(d.classify(), Recurrence::Indeterminate);
    }

    #[test]
    fn bad_row_sum_is_rejected() {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        let err = QbdChain::new(s(0.2), s(0.3), s(0.5), s(0.2), s(0.8), s(0.6)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        let err = QbdChain::new(
            DMatrix::zeros(2, 2),
            s(0.3),
            s(0.5),
            s(0.2),
            s(0.8),
            s(0.5),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn transient_scalar_chain_does_not_converge_to_subunit_radius() {
        let chain = scalar_chain(0.5, 0.3, 0.2, 0.5, 0.2);
        assert_eq!(drift(&chain).unwrap().classify(), Recurrence::NotPositiveRecurrent);
        // Minimal root of 0.2 R^2 - 0.7 R + 0.5 = 0 is 1.
        if let Ok(r) = solve_r_matrix(&chain, 1e-12, 100_000) {
            assert!(spectral_radius(&r) > 1.0 - 1e-4);
        }
    }

    #[test]
    fn two_closed_classes_are_reducible() {
        let p = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(stationary_vector(&p), Err(Error::Reducible(_))));
    }

    #[test]
    fn transient_states_still_have_unique_stationary_vector() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.0, 1.0]);
        let v = stationary_vector(&p).unwrap();
        assert!((v[0]).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15);
    }
}

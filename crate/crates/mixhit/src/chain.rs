//! Chain construction, validation, stationary distributions, lumped
//! projections and conditioned (h-transformed) kernels.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Entries below this are treated as structural zeros of the kernel support.
const SUPPORT_TOL: f64 = 1e-15;
/// Row-stochasticity acceptance tolerance for raw caller input.
const ROW_SUM_INPUT_TOL: f64 = 1e-9;
/// Detailed balance tolerance.
const BALANCE_TOL: f64 = 1e-12;
/// Stationarity tolerance in l1.
const STATIONARY_TOL: f64 = 1e-10;
/// Lumpability tolerance.
const LUMP_TOL: f64 = 1e-12;

/// A probability distribution over the states of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: DVector<f64>,
}

impl Distribution {
    /// Validates nonnegativity and unit mass (within 1e-12).
    pub fn new(probs: DVector<f64>) -> Result<Self> {
        for (i, &p) in probs.iter().enumerate() {
            if !(p >= 0.0) {
                return Err(Error::InvalidDistribution(format!(
                    "entry {i} is {p}, expected >= 0"
                )));
            }
        }
        let sum: f64 = probs.sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!(
                "mass sums to {sum}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Point mass at `state`.
    pub fn delta(n: usize, state: usize) -> Self {
        let mut v = DVector::zeros(n);
        v[state] = 1.0;
        Self { probs: v }
    }

    /// Uniform distribution on `n` states.
    pub fn uniform(n: usize) -> Self {
        Self {
            probs: DVector::from_element(n, 1.0 / n as f64),
        }
    }

    pub fn from_slice(probs: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(probs))
    }

    /// Clamp tiny negative entries (>= -1e-9) to zero and renormalize.
    /// Larger negatives indicate a real defect upstream and are rejected.
    pub fn from_approx(mut probs: DVector<f64>) -> Result<Self> {
        for (i, p) in probs.iter_mut().enumerate() {
            if *p < 0.0 {
                if *p < -1e-9 {
                    return Err(Error::InvalidDistribution(format!(
                        "entry {i} is {p}, below the -1e-9 clamp floor"
                    )));
                }
                *p = 0.0;
            }
        }
        let sum = probs.sum();
        if sum <= 0.0 {
            return Err(Error::InvalidDistribution("zero total mass".into()));
        }
        probs /= sum;
        Ok(Self { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.len() == 0
    }

    pub fn probs(&self) -> &DVector<f64> {
        &self.probs
    }

    pub fn mass_on(&self, states: &[usize]) -> f64 {
        states.iter().map(|&s| self.probs[s]).sum()
    }
}

/// An irreducible reversible transition kernel with its stationary law.
///
/// All matrices are dense; states carry stable string labels. Instances are
/// immutable after construction and every operation is a pure function.
#[derive(Debug, Clone)]
pub struct ReversibleChain {
    states: Vec<String>,
    kernel: DMatrix<f64>,
    pi: DVector<f64>,
    weights: Option<DMatrix<f64>>,
}

impl ReversibleChain {
    /// Build from a row-stochastic kernel; the stationary law is recovered
    /// from the detailed-balance ratios along a spanning tree of the support
    /// (deterministic), with a direct linear solve of the stationarity
    /// equations as fallback.
    pub fn from_kernel(states: Vec<String>, kernel: DMatrix<f64>) -> Result<Self> {
        let n = check_square(&kernel, states.len())?;
        check_nonnegative(&kernel)?;
        for row in 0..n {
            let sum: f64 = kernel.row(row).sum();
            if (sum - 1.0).abs() > ROW_SUM_INPUT_TOL {
                return Err(Error::NotStochastic { row, sum });
            }
        }
        let mut kernel = kernel;
        for row in 0..n {
            let sum: f64 = kernel.row(row).sum();
            for col in 0..n {
                kernel[(row, col)] /= sum;
            }
        }
        check_irreducible(&kernel)?;

        let pi = match tree_ratio_stationary(&kernel) {
            Some(pi) if stationary_l1_residual(&pi, &kernel) <= STATIONARY_TOL => pi,
            _ => {
                let pi = solve_stationary(&kernel)?;
                if stationary_l1_residual(&pi, &kernel) > STATIONARY_TOL {
                    return Err(Error::EigenFailure(
                        "stationary solve did not converge".into(),
                    ));
                }
                pi
            }
        };
        check_detailed_balance(&pi, &kernel)?;
        Ok(Self {
            states,
            kernel,
            pi,
            weights: None,
        })
    }

    /// Build from symmetric nonnegative edge weights (self-weights allowed).
    /// The kernel is the weight-normalized conductance chain and the
    /// stationary mass of a state is its total weight.
    pub fn from_weights(states: Vec<String>, weights: DMatrix<f64>) -> Result<Self> {
        let n = check_square(&weights, states.len())?;
        check_nonnegative(&weights)?;
        let mut worst = (0usize, 0usize, 0.0f64);
        for x in 0..n {
            for y in (x + 1)..n {
                let d = (weights[(x, y)] - weights[(y, x)]).abs();
                if d > worst.2 {
                    worst = (x, y, d);
                }
            }
        }
        if worst.2 > BALANCE_TOL {
            return Err(Error::NotSymmetric {
                x: worst.0,
                y: worst.1,
                magnitude: worst.2,
            });
        }
        // BFS over off-diagonal support.
        let mut seen = vec![false; n];
        let mut queue = vec![0usize];
        seen[0] = true;
        while let Some(x) = queue.pop() {
            for y in 0..n {
                if x != y && !seen[y] && weights[(x, y)] > SUPPORT_TOL {
                    seen[y] = true;
                    queue.push(y);
                }
            }
        }
        if let Some(state) = seen.iter().position(|s| !s) {
            return Err(Error::Disconnected { state });
        }

        let total: f64 = weights.sum();
        // Normalizing the fluxes first keeps pi(x) * kernel(x, y) within a
        // couple of ulps of the symmetric value w(x, y) / total.
        let flux = &weights / total;
        let pi = DVector::from_iterator(n, (0..n).map(|x| flux.row(x).sum()));
        if let Some(state) = pi.iter().position(|&p| p <= 0.0) {
            return Err(Error::ZeroStationaryMass { state });
        }
        let mut kernel = DMatrix::zeros(n, n);
        for x in 0..n {
            for y in 0..n {
                kernel[(x, y)] = flux[(x, y)] / pi[x];
            }
        }
        Ok(Self {
            states,
            kernel,
            pi,
            weights: Some(weights),
        })
    }

    /// Assemble from precomputed parts, verifying every invariant. Used by
    /// constructors that already know the stationary law exactly.
    pub(crate) fn from_parts(
        states: Vec<String>,
        kernel: DMatrix<f64>,
        pi: DVector<f64>,
        weights: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = check_square(&kernel, states.len())?;
        check_nonnegative(&kernel)?;
        for row in 0..n {
            let sum: f64 = kernel.row(row).sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::NotStochastic { row, sum });
            }
        }
        check_irreducible(&kernel)?;
        if stationary_l1_residual(&pi, &kernel) > STATIONARY_TOL {
            return Err(Error::EigenFailure(
                "supplied stationary vector is not a left fixed point".into(),
            ));
        }
        check_detailed_balance(&pi, &kernel)?;
        Ok(Self {
            states,
            kernel,
            pi,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    pub fn weights(&self) -> Option<&DMatrix<f64>> {
        self.weights.as_ref()
    }

    pub fn pi_of(&self, states: &[usize]) -> f64 {
        states.iter().map(|&s| self.pi[s]).sum()
    }

    pub fn stationary(&self) -> Distribution {
        Distribution::from_approx(self.pi.clone()).expect("stationary law is a distribution")
    }

    /// Merge states according to `lumping`. Requires the row mass into every
    /// block to be constant across each source block (within 1e-12).
    pub fn project(&self, lumping: &LumpingMap) -> Result<ReversibleChain> {
        let n = self.len();
        if lumping.assignment.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "lumping map covers {} states, chain has {n}",
                lumping.assignment.len()
            )));
        }
        let m = lumping.n_blocks;
        // Row mass of each state into each block.
        let mut mass: DMatrix<f64> = DMatrix::zeros(n, m);
        for x in 0..n {
            for y in 0..n {
                mass[(x, lumping.assignment[y])] += self.kernel[(x, y)];
            }
        }
        // Block-constancy check against the first representative.
        let mut rep = vec![usize::MAX; m];
        for x in 0..n {
            let b = lumping.assignment[x];
            if rep[b] == usize::MAX {
                rep[b] = x;
            }
        }
        let mut worst: Option<(usize, usize, f64, f64)> = None;
        let mut worst_gap = 0.0f64;
        for x in 0..n {
            let r = rep[lumping.assignment[x]];
            for j in 0..m {
                let d = (mass[(x, j)] - mass[(r, j)]).abs();
                if d > worst_gap {
                    worst_gap = d;
                    worst = Some((x, j, mass[(x, j)], mass[(r, j)]));
                }
            }
        }
        if let Some((state, block, actual, expected)) = worst {
            if (actual - expected).abs() > LUMP_TOL {
                return Err(Error::NotLumpable {
                    state,
                    block,
                    actual,
                    expected,
                });
            }
        }
        // pi-weighted block kernel keeps detailed balance exact.
        let mut pi_block = DVector::zeros(m);
        for x in 0..n {
            pi_block[lumping.assignment[x]] += self.pi[x];
        }
        let mut kernel = DMatrix::zeros(m, m);
        for x in 0..n {
            for j in 0..m {
                kernel[(lumping.assignment[x], j)] += self.pi[x] * mass[(x, j)];
            }
        }
        for i in 0..m {
            for j in 0..m {
                kernel[(i, j)] /= pi_block[i];
            }
        }
        ReversibleChain::from_parts(lumping.blocks.clone(), kernel, pi_block, None)
    }

    /// Remove holding probabilities: Q(x,y) = P(x,y) / (1 - P(x,x)).
    pub fn unlazify(&self) -> Result<ReversibleChain> {
        let n = self.len();
        let mut kernel = DMatrix::zeros(n, n);
        let mut pi = DVector::zeros(n);
        for x in 0..n {
            let hold = self.kernel[(x, x)];
            if hold >= 1.0 - 1e-14 {
                return Err(Error::AbsorbingState { state: x });
            }
            for y in 0..n {
                if y != x {
                    kernel[(x, y)] = self.kernel[(x, y)] / (1.0 - hold);
                }
            }
            pi[x] = self.pi[x] * (1.0 - hold);
        }
        let total = pi.sum();
        pi /= total;
        ReversibleChain::from_parts(self.states.clone(), kernel, pi, None)
    }

    /// Condition on hitting `target` before `avoid` (h-transform). Only
    /// states with positive conditioning probability are retained; target
    /// states become absorbing.
    pub fn doob_transform(&self, target: &[usize], avoid: &[usize]) -> Result<DoobTransform> {
        let n = self.len();
        if target.is_empty() {
            return Err(Error::EmptyTarget);
        }
        let mut role = vec![0u8; n]; // 0 free, 1 target, 2 avoid
        for &t in target {
            role[t] = 1;
        }
        for &a in avoid {
            if role[a] == 1 {
                return Err(Error::BadParams(format!(
                    "state {a} is in both target and avoid"
                )));
            }
            role[a] = 2;
        }
        let free: Vec<usize> = (0..n).filter(|&x| role[x] == 0).collect();
        // h(x) = P_x[T_target < T_avoid]: linear solve on the free states.
        let mut h = DVector::zeros(n);
        for &t in target {
            h[t] = 1.0;
        }
        if !free.is_empty() {
            let k = free.len();
            let mut a = DMatrix::zeros(k, k);
            let mut b = DVector::zeros(k);
            for (i, &x) in free.iter().enumerate() {
                for (j, &y) in free.iter().enumerate() {
                    a[(i, j)] = if i == j { 1.0 } else { 0.0 } - self.kernel[(x, y)];
                }
                b[i] = target.iter().map(|&t| self.kernel[(x, t)]).sum();
            }
            let sol = a
                .lu()
                .solve(&b)
                .ok_or_else(|| Error::EigenFailure("absorption solve singular".into()))?;
            for (i, &x) in free.iter().enumerate() {
                h[x] = sol[i].max(0.0);
            }
        }
        let kept: Vec<usize> = (0..n).filter(|&x| h[x] > 1e-14).collect();
        if kept.iter().all(|&x| role[x] == 1) && !free.is_empty() {
            return Err(Error::EmptyConditioning);
        }
        let k = kept.len();
        let mut kernel = DMatrix::zeros(k, k);
        for (i, &x) in kept.iter().enumerate() {
            if role[x] == 1 {
                kernel[(i, i)] = 1.0; // absorbing boundary
                continue;
            }
            for (j, &y) in kept.iter().enumerate() {
                kernel[(i, j)] = self.kernel[(x, y)] * h[y] / h[x];
            }
        }
        let h_kept = DVector::from_iterator(k, kept.iter().map(|&x| h[x]));
        let target_local: Vec<usize> = kept
            .iter()
            .enumerate()
            .filter(|&(_, &x)| role[x] == 1)
            .map(|(i, _)| i)
            .collect();
        Ok(DoobTransform {
            kept,
            kernel,
            h: h_kept,
            target_local,
        })
    }
}

/// A kernel conditioned on hitting one set before another, restricted to the
/// states from which the conditioning event has positive probability.
#[derive(Debug, Clone)]
pub struct DoobTransform {
    /// Original state indices retained (h > 0), in chain order.
    pub kept: Vec<usize>,
    /// Conditioned kernel over `kept`; target rows are absorbing.
    pub kernel: DMatrix<f64>,
    /// Conditioning probabilities on the retained states.
    pub h: DVector<f64>,
    /// Positions of the target states inside `kept`.
    pub target_local: Vec<usize>,
}

impl DoobTransform {
    pub fn local_index(&self, original: usize) -> Option<usize> {
        self.kept.iter().position(|&x| x == original)
    }
}

/// Assignment of every state to a block label.
#[derive(Debug, Clone)]
pub struct LumpingMap {
    /// Block index per state.
    pub assignment: Vec<usize>,
    /// Block labels in order of first appearance.
    pub blocks: Vec<String>,
    pub n_blocks: usize,
}

impl LumpingMap {
    /// Build from one block label per state (in state order).
    pub fn from_labels(labels: &[String]) -> Self {
        let mut blocks: Vec<String> = Vec::new();
        let mut assignment = Vec::with_capacity(labels.len());
        for l in labels {
            let idx = match blocks.iter().position(|b| b == l) {
                Some(i) => i,
                None => {
                    blocks.push(l.clone());
                    blocks.len() - 1
                }
            };
            assignment.push(idx);
        }
        let n_blocks = blocks.len();
        Self {
            assignment,
            blocks,
            n_blocks,
        }
    }
}

fn check_square(m: &DMatrix<f64>, n_states: usize) -> Result<usize> {
    let (r, c) = m.shape();
    if r != c {
        return Err(Error::DimensionMismatch(format!("{r} x {c} matrix")));
    }
    if r != n_states {
        return Err(Error::DimensionMismatch(format!(
            "{r} x {c} matrix with {n_states} state labels"
        )));
    }
    if r == 0 {
        return Err(Error::DimensionMismatch("empty state space".into()));
    }
    Ok(r)
}

fn check_nonnegative(m: &DMatrix<f64>) -> Result<()> {
    for row in 0..m.nrows() {
        for col in 0..m.ncols() {
            let value = m[(row, col)];
            if !(value >= 0.0) {
                return Err(Error::NegativeEntry { row, col, value });
            }
        }
    }
    Ok(())
}

/// Strong connectivity of the support graph.
fn check_irreducible(kernel: &DMatrix<f64>) -> Result<()> {
    let n = kernel.nrows();
    let reach = |transpose: bool| -> Vec<bool> {
        let mut seen = vec![false; n];
        let mut queue = vec![0usize];
        seen[0] = true;
        while let Some(x) = queue.pop() {
            for y in 0..n {
                let p = if transpose {
                    kernel[(y, x)]
                } else {
                    kernel[(x, y)]
                };
                if !seen[y] && p > SUPPORT_TOL {
                    seen[y] = true;
                    queue.push(y);
                }
            }
        }
        seen
    };
    let fwd = reach(false);
    if let Some(state) = fwd.iter().position(|s| !s) {
        return Err(Error::NotIrreducible { state });
    }
    let bwd = reach(true);
    if let Some(state) = bwd.iter().position(|s| !s) {
        return Err(Error::NotIrreducible { state });
    }
    Ok(())
}

/// Stationary candidate from detailed-balance ratios along a BFS tree of the
/// support. Exact for reversible kernels; deterministic.
fn tree_ratio_stationary(kernel: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = kernel.nrows();
    let mut log_pi = vec![f64::NAN; n];
    log_pi[0] = 0.0;
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(x) = queue.pop_front() {
        for y in 0..n {
            if x == y || !log_pi[y].is_nan() {
                continue;
            }
            let fwd = kernel[(x, y)];
            let bwd = kernel[(y, x)];
            if fwd > SUPPORT_TOL {
                if bwd <= SUPPORT_TOL {
                    return None; // asymmetric support cannot be reversible
                }
                log_pi[y] = log_pi[x] + fwd.ln() - bwd.ln();
                queue.push_back(y);
            }
        }
    }
    if log_pi.iter().any(|v| v.is_nan()) {
        return None;
    }
    let max = log_pi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut pi = DVector::from_iterator(n, log_pi.iter().map(|&l| (l - max).exp()));
    let total = pi.sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    pi /= total;
    Some(pi)
}

/// Left fixed point by LU solve of (I - P^T) with a normalization row.
fn solve_stationary(kernel: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = kernel.nrows();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = if i == j { 1.0 } else { 0.0 } - kernel[(j, i)];
        }
    }
    // Replace the last equation with sum(pi) = 1.
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::EigenFailure("stationary solve singular".into()))?;
    Ok(pi)
}

fn stationary_l1_residual(pi: &DVector<f64>, kernel: &DMatrix<f64>) -> f64 {
    let prod = kernel.transpose() * pi;
    (prod - pi).abs().sum()
}

fn check_detailed_balance(pi: &DVector<f64>, kernel: &DMatrix<f64>) -> Result<()> {
    let n = kernel.nrows();
    let mut worst = (0usize, 0usize, 0.0f64);
    for x in 0..n {
        for y in (x + 1)..n {
            let d = (pi[x] * kernel[(x, y)] - pi[y] * kernel[(y, x)]).abs();
            if d > worst.2 {
                worst = (x, y, d);
            }
        }
    }
    if worst.2 > BALANCE_TOL {
        return Err(Error::NotReversible {
            x: worst.0,
            y: worst.1,
            magnitude: worst.2,
        });
    }
    Ok(())
}

//! Constructors for the test chains: the branching interval walk with one
//! slow branch (the standard non-cutoff counterexample), plus the small
//! parametric families used throughout the suites.

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::certificate::CertificateReport;
use crate::chain::{Distribution, ReversibleChain};
use crate::error::{Error, Result};
use crate::hitting;

/// Which part of the branching walk a state belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateRole {
    /// Interior of the fast upper branch.
    ABranch,
    /// Topmost state of the upper branch.
    ATop,
    /// The three-way junction.
    Junction,
    /// Fast lower branch.
    BBranch,
    /// Slow lower branch (holding 99/100).
    CBranch,
    /// The heavy bottom state.
    Bottom,
}

/// The branching interval walk of length parameter `n` (3n + 2 states): a
/// biased path A from the top into a junction v, which splits into a fast
/// branch B and a slow branch C, both rejoining at the bottom state z.
///
/// Built in exact rational arithmetic from the printed one-step rules and
/// converted to floats once; the symmetric edge weights reproduce the kernel
/// exactly and supply the stationary law.
#[derive(Debug, Clone)]
pub struct AldousChain {
    pub n: usize,
    pub chain: ReversibleChain,
    pub roles: Vec<StateRole>,
}

impl AldousChain {
    /// Index of the top state a_{2n+1}.
    pub fn a_top(&self) -> usize {
        0
    }

    /// Index of a_j for j in [n+1, 2n+1]; a_{n+1} is the junction.
    pub fn a_state(&self, j: usize) -> usize {
        2 * self.n + 1 - j
    }

    /// Index of the junction v.
    pub fn junction(&self) -> usize {
        self.n
    }

    /// Index of b_k for k in [1, n].
    pub fn b_state(&self, k: usize) -> usize {
        2 * self.n + 1 - k
    }

    /// Index of c_k for k in [1, n].
    pub fn c_state(&self, k: usize) -> usize {
        3 * self.n + 1 - k
    }

    /// Index of the bottom state z.
    pub fn bottom(&self) -> usize {
        3 * self.n + 1
    }

    /// Exact rational kernel entries as strings, row-major over nonzeros:
    /// (row label, col label, "p/q").
    pub fn rational_kernel_table(&self) -> Vec<(String, String, String)> {
        let (rows, _, _) = aldous_rational_parts(self.n);
        let labels = aldous_labels(self.n);
        let mut out = Vec::new();
        for (x, row) in rows.iter().enumerate() {
            for (y, p) in row {
                out.push((labels[x].clone(), labels[*y].clone(), p.to_string()));
            }
        }
        out
    }
}

fn rat(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// 2^{-m} as an exact rational.
fn pow2_inv(m: usize) -> BigRational {
    BigRational::new(BigInt::one(), BigInt::one() << m)
}

fn aldous_labels(n: usize) -> Vec<String> {
    let mut labels = Vec::with_capacity(3 * n + 2);
    for j in ((n + 2)..=(2 * n + 1)).rev() {
        labels.push(format!("a{j}"));
    }
    labels.push("v".to_string());
    for k in (1..=n).rev() {
        labels.push(format!("b{k}"));
    }
    for k in (1..=n).rev() {
        labels.push(format!("c{k}"));
    }
    labels.push("z".to_string());
    labels
}

/// Sparse rational kernel rows, symmetric edge weights (off-diagonal), and
/// self-weights for the branching walk.
#[allow(clippy::type_complexity)]
fn aldous_rational_parts(
    n: usize,
) -> (
    Vec<Vec<(usize, BigRational)>>,
    Vec<(usize, usize, BigRational)>,
    Vec<BigRational>,
) {
    let size = 3 * n + 2;
    let z = 3 * n + 1;
    let idx_a = |j: usize| 2 * n + 1 - j; // j in [n+1, 2n+1]; a_{n+1} = v
    // b_0 = c_0 = z and b_{n+1} = c_{n+1} = v
    let idx_b = move |k: usize| match k {
        0 => z,
        k if k == n + 1 => n,
        k => 2 * n + 1 - k,
    };
    let idx_c = move |k: usize| match k {
        0 => z,
        k if k == n + 1 => n,
        k => 3 * n + 1 - k,
    };
    let v = idx_a(n + 1);

    let half = rat(1, 2);
    let third = rat(1, 3);
    let sixth = rat(1, 6);
    let hold_slow = rat(99, 100);

    let mut rows: Vec<Vec<(usize, BigRational)>> = vec![Vec::new(); size];
    // top state a_{2n+1}
    rows[idx_a(2 * n + 1)] = vec![
        (idx_a(2 * n + 1), half.clone()),
        (idx_a(2 * n), half.clone()),
    ];
    // interior upper branch a_j, j in [n+2, 2n]
    for j in (n + 2)..=(2 * n) {
        rows[idx_a(j)] = vec![
            (idx_a(j), half.clone()),
            (idx_a(j - 1), third.clone()),
            (idx_a(j + 1), sixth.clone()),
        ];
    }
    // junction
    rows[v] = vec![
        (v, half.clone()),
        (idx_a(n + 2), sixth.clone()),
        (idx_b(n), sixth.clone()),
        (idx_c(n), sixth.clone()),
    ];
    // fast branch b_k, k in [1, n]
    for k in 1..=n {
        rows[idx_b(k)] = vec![
            (idx_b(k), half.clone()),
            (idx_b(k - 1), third.clone()),
            (idx_b(k + 1), sixth.clone()),
        ];
    }
    // slow branch c_k, k in [1, n]
    for k in 1..=n {
        rows[idx_c(k)] = vec![
            (idx_c(k), hold_slow.clone()),
            (idx_c(k - 1), rat(1, 150)),
            (idx_c(k + 1), rat(1, 300)),
        ];
    }
    // bottom state
    rows[z] = vec![
        (z, hold_slow.clone()),
        (idx_b(1), rat(1, 200)),
        (idx_c(1), rat(1, 200)),
    ];
    for row in &mut rows {
        row.sort_by_key(|(y, _)| *y);
    }

    // Symmetric edge weights reproducing the kernel above. The two lower
    // branches carry 2^{-m} on the edge (m, m+1) counted from the bottom; the
    // upper branch continues the same geometric decay from the junction, so
    // the edge (a_j, a_{j+1}) carries 2^{-(j-1)}.
    let mut edges: Vec<(usize, usize, BigRational)> = Vec::new();
    for m in 0..=n {
        edges.push((idx_b(m), idx_b(m + 1), pow2_inv(m)));
        edges.push((idx_c(m), idx_c(m + 1), pow2_inv(m)));
    }
    for j in (n + 1)..=(2 * n) {
        edges.push((idx_a(j), idx_a(j + 1), pow2_inv(j - 1)));
    }

    // Self-weights: equal to the neighbor total on the fast part, 99x the
    // neighbor total on the slow part.
    let mut neighbor_sum: Vec<BigRational> = vec![BigRational::zero(); size];
    for (x, y, w) in &edges {
        neighbor_sum[*x] += w;
        neighbor_sum[*y] += w;
    }
    let mut self_weights: Vec<BigRational> = Vec::with_capacity(size);
    for x in 0..size {
        let slow = ((2 * n + 1)..=(3 * n)).contains(&x) || x == z;
        let factor = if slow { rat(99, 1) } else { rat(1, 1) };
        self_weights.push(&neighbor_sum[x] * factor);
    }

    (rows, edges, self_weights)
}

/// Convert an exact rational to the nearest f64 without overflowing the
/// intermediate integer-to-float conversions.
fn big_rational_to_f64(r: &BigRational) -> f64 {
    if r.is_zero() {
        return 0.0;
    }
    let negative = r.is_negative();
    let num = r.numer().abs();
    let den = r.denom().abs();
    let shift: i64 = 80 - (num.bits() as i64 - den.bits() as i64);
    let scaled_num = if shift >= 0 {
        num << shift as usize
    } else {
        num >> (-shift) as usize
    };
    let q = scaled_num / den;
    let qf = q.to_f64().expect("quotient fits in f64");
    let magnitude = qf * 2f64.powi(-shift as i32);
    if negative {
        -magnitude
    } else {
        magnitude
    }
}

/// Build the branching interval walk with branch length `n >= 2`.
pub fn aldous(n: usize) -> Result<AldousChain> {
    if n < 2 {
        return Err(Error::BadParams(format!(
            "branch length must be at least 2, got {n}"
        )));
    }
    let size = 3 * n + 2;
    let (rows, edges, self_weights) = aldous_rational_parts(n);

    // Exact validation: rows sum to one, and the conductance normalization
    // of the edge weights reproduces every kernel entry.
    let mut weight_rows: Vec<Vec<(usize, BigRational)>> = vec![Vec::new(); size];
    let mut totals: Vec<BigRational> = self_weights.clone();
    for (x, y, w) in &edges {
        weight_rows[*x].push((*y, w.clone()));
        weight_rows[*y].push((*x, w.clone()));
        totals[*x] += w;
        totals[*y] += w;
    }
    for x in 0..size {
        weight_rows[x].push((x, self_weights[x].clone()));
        weight_rows[x].sort_by_key(|(y, _)| *y);
    }
    let mut grand_total = BigRational::zero();
    for t in &totals {
        grand_total += t;
    }
    for x in 0..size {
        let row_sum: BigRational = rows[x].iter().map(|(_, p)| p.clone()).sum();
        debug_assert!(row_sum.is_one(), "row {x} sums to {row_sum}");
        if !row_sum.is_one() {
            return Err(Error::NotStochastic {
                row: x,
                sum: big_rational_to_f64(&row_sum),
            });
        }
        debug_assert_eq!(rows[x].len(), weight_rows[x].len());
        for ((y, p), (wy, w)) in rows[x].iter().zip(&weight_rows[x]) {
            debug_assert_eq!(y, wy);
            let ratio = w / &totals[x];
            if &ratio != p {
                return Err(Error::BadSpec(format!(
                    "weight normalization mismatch at ({x}, {y}): {ratio} vs {p}"
                )));
            }
        }
    }

    // Float conversion.
    let mut kernel = DMatrix::zeros(size, size);
    for (x, row) in rows.iter().enumerate() {
        for (y, p) in row {
            kernel[(x, *y)] = big_rational_to_f64(p);
        }
    }
    let mut pi = DVector::zeros(size);
    for x in 0..size {
        pi[x] = big_rational_to_f64(&(&totals[x] / &grand_total));
    }
    let mut weights = DMatrix::zeros(size, size);
    for (x, y, w) in &edges {
        let wf = big_rational_to_f64(w);
        weights[(*x, *y)] = wf;
        weights[(*y, *x)] = wf;
    }
    for x in 0..size {
        weights[(x, x)] = big_rational_to_f64(&self_weights[x]);
    }

    let chain = ReversibleChain::from_parts(aldous_labels(n), kernel, pi, Some(weights))?;
    let mut roles = Vec::with_capacity(size);
    roles.push(StateRole::ATop);
    for _ in 1..n {
        roles.push(StateRole::ABranch);
    }
    roles.push(StateRole::Junction);
    for _ in 0..n {
        roles.push(StateRole::BBranch);
    }
    for _ in 0..n {
        roles.push(StateRole::CBranch);
    }
    roles.push(StateRole::Bottom);
    Ok(AldousChain { n, chain, roles })
}

/// P[T_v < T_z] from b_l or c_l: (2^l - 1) / (2^{n+1} - 1), exact.
pub fn cb_probability_exact(n: usize, ell: usize) -> Result<f64> {
    if ell < 1 || ell > n {
        return Err(Error::BadParams(format!(
            "branch position {ell} outside [1, {n}]"
        )));
    }
    let num = (BigInt::one() << ell) - BigInt::one();
    let den = (BigInt::one() << (n + 1)) - BigInt::one();
    Ok(big_rational_to_f64(&BigRational::new(num, den)))
}

/// Named chain families for the CLI and the sweep driver.
pub fn family(name: &str, params: &[f64]) -> Result<ReversibleChain> {
    match name {
        "two_state" => {
            let [p, q] = params else {
                return Err(Error::BadParams("two_state expects (p, q)".into()));
            };
            two_state(*p, *q)
        }
        "complete" => {
            let [m] = params else {
                return Err(Error::BadParams("complete expects (m)".into()));
            };
            complete(check_size(*m)?)
        }
        "path_conductance" => {
            if params.len() < 2 {
                return Err(Error::BadParams(
                    "path_conductance expects at least 2 edge weights".into(),
                ));
            }
            path_conductance(params)
        }
        "biased_path" => {
            let [n, q_down] = params else {
                return Err(Error::BadParams("biased_path expects (n, q_down)".into()));
            };
            biased_path(check_size(*n)?, *q_down)
        }
        "random_tree" => {
            let [n, seed] = params else {
                return Err(Error::BadParams("random_tree expects (n, seed)".into()));
            };
            random_tree(check_size(*n)?, *seed as u64)
        }
        "random_path" => {
            let [n, seed] = params else {
                return Err(Error::BadParams("random_path expects (n, seed)".into()));
            };
            random_path(check_size(*n)?, *seed as u64)
        }
        "aldous" => {
            let [n] = params else {
                return Err(Error::BadParams("aldous expects (n)".into()));
            };
            Ok(aldous(check_size(*n)?)?.chain)
        }
        other => Err(Error::UnknownFamily(other.to_string())),
    }
}

fn check_size(x: f64) -> Result<usize> {
    if x.fract() != 0.0 || x < 1.0 || x > 1e6 {
        return Err(Error::BadParams(format!("size parameter {x} is not a small positive integer")));
    }
    Ok(x as usize)
}

/// Two-state chain with transition probabilities p (0 -> 1) and q (1 -> 0).
pub fn two_state(p: f64, q: f64) -> Result<ReversibleChain> {
    if !(p > 0.0 && p <= 1.0 && q > 0.0 && q <= 1.0) {
        return Err(Error::BadParams(format!(
            "two_state probabilities must lie in (0, 1], got ({p}, {q})"
        )));
    }
    let kernel = DMatrix::from_row_slice(2, 2, &[1.0 - p, p, q, 1.0 - q]);
    ReversibleChain::from_kernel(vec!["0".into(), "1".into()], kernel)
}

/// Complete graph with uniform moves, P(x, y) = 1/m for all x, y.
pub fn complete(m: usize) -> Result<ReversibleChain> {
    if m < 2 {
        return Err(Error::BadParams(format!("complete needs >= 2 states, got {m}")));
    }
    let kernel = DMatrix::from_element(m, m, 1.0 / m as f64);
    ReversibleChain::from_kernel((0..m).map(|i| i.to_string()).collect(), kernel)
}

/// Path with the given consecutive edge conductances (no self-weights).
pub fn path_conductance(edge_weights: &[f64]) -> Result<ReversibleChain> {
    let n = edge_weights.len() + 1;
    let mut w = DMatrix::zeros(n, n);
    for (i, &c) in edge_weights.iter().enumerate() {
        if !(c > 0.0) {
            return Err(Error::BadParams(format!("edge weight {i} must be positive")));
        }
        w[(i, i + 1)] = c;
        w[(i + 1, i)] = c;
    }
    ReversibleChain::from_weights((0..n).map(|i| i.to_string()).collect(), w)
}

/// Biased walk on {0, ..., n} with holding 1/2 and conditional probability
/// `q_down` of stepping toward 0; its holding-free version is the projected
/// law of the branching walk when q_down = 2/3.
pub fn biased_path(n: usize, q_down: f64) -> Result<ReversibleChain> {
    if n < 1 {
        return Err(Error::BadParams("biased_path needs n >= 1".into()));
    }
    if !(q_down > 0.0 && q_down < 1.0) {
        return Err(Error::BadParams(format!(
            "down probability must lie in (0, 1), got {q_down}"
        )));
    }
    let m = n + 1;
    let mut kernel = DMatrix::zeros(m, m);
    kernel[(0, 0)] = 0.5;
    kernel[(0, 1)] = 0.5;
    kernel[(n, n)] = 0.5;
    kernel[(n, n - 1)] = 0.5;
    for k in 1..n {
        kernel[(k, k)] = 0.5;
        kernel[(k, k - 1)] = 0.5 * q_down;
        kernel[(k, k + 1)] = 0.5 * (1.0 - q_down);
    }
    ReversibleChain::from_kernel((0..m).map(|i| i.to_string()).collect(), kernel)
}

/// Random tree with log-uniform edge conductances and uniform self-weights,
/// grown by uniform attachment from a seeded generator.
pub fn random_tree(n: usize, seed: u64) -> Result<ReversibleChain> {
    if n < 2 {
        return Err(Error::BadParams("random_tree needs n >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = DMatrix::zeros(n, n);
    for node in 1..n {
        let parent = rng.random_range(0..node);
        let c = (rng.random_range(-1.5..1.5f64)).exp();
        w[(node, parent)] = c;
        w[(parent, node)] = c;
    }
    for x in 0..n {
        let self_w = rng.random_range(0.0..1.0) * w.row(x).sum();
        w[(x, x)] = self_w;
    }
    ReversibleChain::from_weights((0..n).map(|i| i.to_string()).collect(), w)
}

/// Path with random log-uniform conductances and random self-weights.
pub fn random_path(n: usize, seed: u64) -> Result<ReversibleChain> {
    if n < 2 {
        return Err(Error::BadParams("random_path needs n >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        let c = (rng.random_range(-1.5..1.5f64)).exp();
        w[(i, i + 1)] = c;
        w[(i + 1, i)] = c;
    }
    for x in 0..n {
        let self_w = rng.random_range(0.0..1.0) * w.row(x).sum();
        w[(x, x)] = self_w;
    }
    ReversibleChain::from_weights((0..n).map(|i| i.to_string()).collect(), w)
}

/// Expectation identities of the branching walk: per-step bounds on the slow
/// branch, junction-to-bottom and top-to-bottom bounds, and the exact
/// conditioned-path mixture identity.
pub fn aldous_expectation_checks(n: usize) -> Result<Vec<CertificateReport>> {
    if n < 5 {
        return Err(Error::BadParams(format!(
            "expectation checks need n >= 5, got {n}"
        )));
    }
    let a = aldous(n)?;
    let chain = &a.chain;
    let z = a.bottom();
    let v = a.junction();
    let mut reports = Vec::new();

    // h(x) = expected steps to hit z; one solve covers every start.
    let to_z = hitting::expected_steps_to(chain.kernel(), &[z])?;
    // (b) junction-to-bottom two-sided bound; the lower constant is
    // existential so the fitted value is reported, the upper side gates.
    let e_v = to_z[v];
    reports.push(
        CertificateReport::check("slow_branch_mean_junction_to_bottom", e_v, 153.0 * (n as f64 + 1.0), "time")
            .with("n", n)
            .with("side", "upper"),
    );
    reports.push(
        CertificateReport::reported(
            "slow_branch_mean_junction_to_bottom_gap",
            153.0 * n as f64 - e_v,
            0.0,
            "time",
        )
        .with("n", n)
        .with("note", "fitted lower-side constant; existential in the source bound"),
    );
    // (c) top-to-bottom upper bound.
    let e_a = to_z[a.a_top()];
    reports.push(
        CertificateReport::check("top_to_bottom_mean", e_a, 159.0 * (n as f64 + 1.0), "time")
            .with("n", n),
    );

    // (a) one-step descents on the slow branch, E_{c_{r+1}}[T_{c_r}]. The
    // unconditioned values are checked against the printed 300 upper bound;
    // numerically the bound only holds low on the branch (escapes through
    // the junction that fall down the fast branch must climb back from the
    // bottom, which costs ~2^r), so the checks above mid-branch fail and the
    // failures are the finding. The descent-conditioned ladder stays below
    // 300 and approaches it going down; it is reported alongside.
    let down_all = chain.doob_transform(&[z], &[v])?;
    for r in 1..n {
        let step = hitting::expected_hitting(
            chain,
            &Distribution::delta(chain.len(), a.c_state(r + 1)),
            &[a.c_state(r)],
        )?;
        reports.push(
            CertificateReport::check("slow_branch_step_upper", step, 300.0, "time")
                .with("n", n)
                .with("r", r),
        );
        // conditioned on reaching the bottom before the junction; the
        // absorbing bottom is included to keep the system regular for
        // states on the fast branch
        let tgt = down_all
            .local_index(a.c_state(r))
            .ok_or(Error::EmptyConditioning)?;
        let zl = down_all.local_index(z).ok_or(Error::EmptyConditioning)?;
        let h = hitting::expected_steps_to(&down_all.kernel, &[tgt, zl])?;
        let cond = h[down_all
            .local_index(a.c_state(r + 1))
            .ok_or(Error::EmptyConditioning)?];
        reports.push(
            CertificateReport::check("slow_branch_step_conditioned_upper", cond, 300.0, "time")
                .with("n", n)
                .with("r", r),
        );
        reports.push(
            CertificateReport::reported(
                "slow_branch_step_conditioned_deficit",
                300.0 - cond,
                0.0,
                "time",
            )
            .with("n", n)
            .with("r", r)
            .with("note", "shrinks like 2^{-(n-r)}; constant existential"),
        );
    }

    // (d) mixture identity over the conditioned paths, exact to solver noise:
    // E_{c_r}[T_z] = P[T_z < T_v] E[T_z | T_z < T_v]
    //             + P[T_v < T_z] (E[T_v | T_v < T_z] + E_v[T_z]).
    let down = chain.doob_transform(&[z], &[v])?;
    let up = chain.doob_transform(&[v], &[z])?;
    let down_steps = hitting::expected_steps_to(&down.kernel, &down.target_local)?;
    let up_steps = hitting::expected_steps_to(&up.kernel, &up.target_local)?;
    for r in [1, n / 2, n - 1, n] {
        let c_r = a.c_state(r);
        let lhs = to_z[c_r];
        let p_up = cb_probability_exact(n, r)?;
        let cond_down = down
            .local_index(c_r)
            .map(|i| down_steps[i])
            .ok_or(Error::EmptyConditioning)?;
        let cond_up = up
            .local_index(c_r)
            .map(|i| up_steps[i])
            .ok_or(Error::EmptyConditioning)?;
        let rhs = (1.0 - p_up) * cond_down + p_up * (cond_up + e_v);
        let residual = (lhs - rhs).abs();
        reports.push(
            CertificateReport::check("conditioned_mixture_identity_residual", residual, 1e-9, "time")
                .with("n", n)
                .with("r", r)
                .with("lhs", lhs)
                .with("rhs", rhs),
        );
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance;
    use crate::spectral::decompose;

    #[test]
    fn aldous_structure_n3() {
        let a = aldous(3).unwrap();
        assert_eq!(a.chain.len(), 11);
        assert_eq!(a.chain.states()[a.a_top()], "a7");
        assert_eq!(a.chain.states()[a.junction()], "v");
        assert_eq!(a.chain.states()[a.b_state(1)], "b1");
        assert_eq!(a.chain.states()[a.c_state(3)], "c3");
        assert_eq!(a.chain.states()[a.bottom()], "z");
        // printed one-step rules
        let k = a.chain.kernel();
        let c2 = a.c_state(2);
        assert_eq!(k[(c2, c2)], 0.99);
        assert_eq!(k[(c2, a.c_state(1))], 1.0 / 150.0);
        assert_eq!(k[(c2, a.c_state(3))], 1.0 / 300.0);
        let v = a.junction();
        assert_eq!(k[(v, v)], 0.5);
        assert_eq!(k[(v, a.a_state(5))], 1.0 / 6.0);
        assert_eq!(k[(v, a.b_state(3))], 1.0 / 6.0);
        assert_eq!(k[(v, a.c_state(3))], 1.0 / 6.0);
        let z = a.bottom();
        assert_eq!(k[(z, z)], 0.99);
        assert_eq!(k[(z, a.b_state(1))], 1.0 / 200.0);
        assert_eq!(k[(z, a.c_state(1))], 1.0 / 200.0);
    }

    #[test]
    fn aldous_golden_rational_table_n3() {
        // Independently written from the printed one-step rules.
        let golden: Vec<(&str, &str, &str)> = vec![
            ("a7", "a7", "1/2"),
            ("a7", "a6", "1/2"),
            ("a6", "a7", "1/6"),
            ("a6", "a6", "1/2"),
            ("a6", "a5", "1/3"),
            ("a5", "a6", "1/6"),
            ("a5", "a5", "1/2"),
            ("a5", "v", "1/3"),
            ("v", "a5", "1/6"),
            ("v", "v", "1/2"),
            ("v", "b3", "1/6"),
            ("v", "c3", "1/6"),
            ("b3", "v", "1/6"),
            ("b3", "b3", "1/2"),
            ("b3", "b2", "1/3"),
            ("b2", "b3", "1/6"),
            ("b2", "b2", "1/2"),
            ("b2", "b1", "1/3"),
            ("b1", "b2", "1/6"),
            ("b1", "b1", "1/2"),
            ("b1", "z", "1/3"),
            ("c3", "v", "1/300"),
            ("c3", "c3", "99/100"),
            ("c3", "c2", "1/150"),
            ("c2", "c3", "1/300"),
            ("c2", "c2", "99/100"),
            ("c2", "c1", "1/150"),
            ("c1", "c2", "1/300"),
            ("c1", "c1", "99/100"),
            ("c1", "z", "1/150"),
            ("z", "b1", "1/200"),
            ("z", "c1", "1/200"),
            ("z", "z", "99/100"),
        ];
        let a = aldous(3).unwrap();
        let table = a.rational_kernel_table();
        assert_eq!(table.len(), golden.len());
        for (x, y, p) in &golden {
            assert!(
                table
                    .iter()
                    .any(|(tx, ty, tp)| tx == x && ty == y && tp == p),
                "missing entry ({x}, {y}) = {p}"
            );
        }
    }

    #[test]
    fn aldous_rows_and_reversibility() {
        for n in [2usize, 3, 7] {
            let a = aldous(n).unwrap();
            let k = a.chain.kernel();
            for x in 0..a.chain.len() {
                assert!((k.row(x).sum() - 1.0).abs() < 1e-15, "n={n} row {x}");
            }
            // from_parts already verified detailed balance at 1e-12.
            let mass: f64 = a.chain.pi().sum();
            assert!((mass - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn aldous_weights_match_from_weights_build() {
        let a = aldous(4).unwrap();
        let rebuilt = ReversibleChain::from_weights(
            a.chain.states().to_vec(),
            a.chain.weights().unwrap().clone(),
        )
        .unwrap();
        for x in 0..a.chain.len() {
            for y in 0..a.chain.len() {
                assert!(
                    (rebuilt.kernel()[(x, y)] - a.chain.kernel()[(x, y)]).abs() < 1e-12,
                    "({x}, {y})"
                );
            }
        }
    }

    #[test]
    fn bottom_mass_is_below_half() {
        // The printed constants put about 0.395 of the stationary mass on
        // the bottom state, not a majority.
        for n in [10usize, 50] {
            let a = aldous(n).unwrap();
            let pz = a.chain.pi()[a.bottom()];
            assert!(pz < 0.5, "n={n}: {pz}");
            assert!((pz - 200.0 / 506.0).abs() < 0.02, "n={n}: {pz}");
        }
    }

    #[test]
    fn cb_probability_matches_absorption_solve() {
        for n in [3usize, 6, 9, 12] {
            let a = aldous(n).unwrap();
            let d = a
                .chain
                .doob_transform(&[a.junction()], &[a.bottom()])
                .unwrap();
            for ell in 1..=n {
                let exact = cb_probability_exact(n, ell).unwrap();
                for state in [a.b_state(ell), a.c_state(ell)] {
                    let local = d.local_index(state).unwrap();
                    assert!(
                        (d.h[local] - exact).abs() < 1e-11,
                        "n={n} ell={ell}: {} vs {exact}",
                        d.h[local]
                    );
                }
            }
        }
    }

    #[test]
    fn cb_probability_values() {
        assert!((cb_probability_exact(4, 2).unwrap() - 3.0 / 31.0).abs() < 1e-15);
        let n = 9;
        let half_ish = cb_probability_exact(n, n).unwrap();
        assert!((half_ish - ((1u64 << n) - 1) as f64 / ((1u64 << (n + 1)) - 1) as f64).abs() < 1e-15);
        assert!(cb_probability_exact(5, 0).is_err());
        assert!(cb_probability_exact(5, 6).is_err());
    }

    #[test]
    fn projection_of_nonlazy_walk_is_biased_path() {
        let n = 4;
        let a = aldous(n).unwrap();
        let q = a.chain.unlazify().unwrap();
        // f(b_i) = i = f(c_i), f(a_{n+1+i}) = n+1+i
        let mut labels = vec![String::new(); q.len()];
        for j in (n + 1)..=(2 * n + 1) {
            labels[a.a_state(j)] = j.to_string();
        }
        for k in 1..=n {
            labels[a.b_state(k)] = k.to_string();
            labels[a.c_state(k)] = k.to_string();
        }
        labels[a.bottom()] = "0".to_string();
        let map = crate::chain::LumpingMap::from_labels(&labels);
        let projected = q.project(&map).unwrap();
        // nearest-neighbor walk with fixed down bias 2/3
        let pos_of = |lbl: &str| projected.state_index(lbl).unwrap();
        for level in 1..=(2 * n) {
            let here = pos_of(&level.to_string());
            let down = pos_of(&(level - 1).to_string());
            assert!(
                (projected.kernel()[(here, down)] - 2.0 / 3.0).abs() < 1e-12,
                "level {level}"
            );
        }
        // lazy chain is not lumpable under the same map
        let err = a.chain.project(&map).unwrap_err();
        assert!(matches!(err, Error::NotLumpable { .. }));
    }

    #[test]
    fn relaxation_time_bounded_in_n() {
        // Converges to roughly 1745, set by the slow branch's holding; the
        // point is boundedness in n, witnessed by shrinking increments.
        let mut values = Vec::new();
        for n in [10usize, 20, 40] {
            let a = aldous(n).unwrap();
            let spec = decompose(&a.chain).unwrap();
            values.push(spec.relaxation_time());
        }
        for v in &values {
            assert!(*v < 1800.0, "{values:?}");
        }
        let d1 = values[1] - values[0];
        let d2 = values[2] - values[1];
        assert!(d2 < 0.7 * d1, "{values:?}");
    }

    #[test]
    fn family_constructors() {
        let two = family("two_state", &[0.5, 0.5]).unwrap();
        assert_eq!(two.len(), 2);
        let comp = family("complete", &[4.0]).unwrap();
        let spec = decompose(&comp).unwrap();
        assert!((spec.relaxation_time() - 1.0).abs() < 1e-10);
        for x in 0..4 {
            assert!((comp.pi()[x] - 0.25).abs() < 1e-14);
        }
        assert!(matches!(
            family("nope", &[]),
            Err(Error::UnknownFamily(_))
        ));
        assert!(matches!(
            family("complete", &[]),
            Err(Error::BadParams(_))
        ));
        let tree = family("random_tree", &[12.0, 7.0]).unwrap();
        assert_eq!(tree.len(), 12);
        let tree2 = family("random_tree", &[12.0, 7.0]).unwrap();
        assert_eq!(tree.kernel(), tree2.kernel());
        let path = family("random_path", &[9.0, 3.0]).unwrap();
        assert_eq!(path.len(), 9);
    }

    #[test]
    fn biased_path_projection_consistency() {
        // The holding-free version of the lazy biased path is the projected
        // law of the branching walk: down probability 2/3 everywhere.
        let chain = biased_path(6, 2.0 / 3.0).unwrap();
        let q = chain.unlazify().unwrap();
        for k in 1..6 {
            assert!((q.kernel()[(k, k - 1)] - 2.0 / 3.0).abs() < 1e-14);
        }
        // conductance closed form against the linear solve, on the
        // holding-free chain: per-level times are 3 - 2^{1-(n-1-k)}, so
        // E_top[T_0] = 3n - 4 up to the geometric boundary correction.
        let n = 100;
        let chain = biased_path(n, 2.0 / 3.0).unwrap();
        let q = chain.unlazify().unwrap();
        let e = hitting::expected_hitting(&q, &Distribution::delta(n + 1, n), &[0]).unwrap();
        assert!((e - 3.0 * n as f64).abs() < 5.0, "{e}");
        // conductance-ratio route agrees with the solve level by level
        let pi = q.pi();
        for r in [0usize, 10, 50, 98] {
            let mut w = DMatrix::zeros(n + 1, n + 1);
            for k in 0..n {
                let c = pi[k] * q.kernel()[(k, k + 1)];
                w[(k, k + 1)] = c;
                w[(k + 1, k)] = c;
            }
            let formula = hitting::bd_expected_step(&w, r).unwrap();
            let solve =
                hitting::expected_hitting(&q, &Distribution::delta(n + 1, r + 1), &[r]).unwrap();
            assert!(
                (formula - solve).abs() < 1e-9 * solve.max(1.0),
                "r={r}: {formula} vs {solve}"
            );
        }
        // lazy version doubles the clock
        let e_lazy =
            hitting::expected_hitting(&chain, &Distribution::delta(n + 1, n), &[0]).unwrap();
        assert!((e_lazy - 6.0 * n as f64).abs() < 10.0, "{e_lazy}");
    }

    #[test]
    fn biased_path_cutoff_direction() {
        // The transition window shrinks like 1/sqrt(n) relative to the mean,
        // so the ratio decreases toward 1 along the schedule.
        let ratio_at = |n: usize| {
            let chain = biased_path(n, 2.0 / 3.0).unwrap();
            let spec = decompose(&chain).unwrap();
            let mu = Distribution::delta(n + 1, n);
            let t_hi = distance::t_mix_mu(&chain, &spec, &mu, 0.05).unwrap();
            let t_lo = distance::t_mix_mu(&chain, &spec, &mu, 0.95).unwrap();
            t_hi / t_lo
        };
        let r40 = ratio_at(40);
        let r80 = ratio_at(80);
        assert!(r80 < r40, "{r80} vs {r40}");
        assert!(r40 > 1.0 && r40 < 4.0, "{r40}");
    }
}

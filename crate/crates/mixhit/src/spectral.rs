//! Spectral decomposition of reversible kernels, relaxation time, and the
//! continuous-time heat kernel (eigenbasis evaluation plus an independent
//! truncated Poisson-series oracle).

use nalgebra::{DMatrix, DVector};

use crate::chain::{Distribution, ReversibleChain};
use crate::error::{Error, Result};

/// Eigendecomposition of a reversible kernel in the pi-weighted geometry.
///
/// `eigenvalues` are sorted descending with `eigenvalues[0] == 1` exactly and
/// the column `basis.column(0)` pinned to the all-ones function, so that
/// stationarity of the heat kernel holds to machine precision.
#[derive(Debug, Clone)]
pub struct SpectralData {
    eigenvalues: DVector<f64>,
    /// Columns are pi-orthonormal right eigenvectors of the kernel.
    basis: DMatrix<f64>,
    pi_sqrt: DVector<f64>,
    pi: DVector<f64>,
}

impl SpectralData {
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn pi_sqrt(&self) -> &DVector<f64> {
        &self.pi_sqrt
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.len() == 0
    }

    /// Second-largest eigenvalue.
    pub fn lambda2(&self) -> f64 {
        self.eigenvalues[1]
    }

    /// Inverse spectral gap 1 / (1 - lambda_2).
    pub fn relaxation_time(&self) -> f64 {
        1.0 / (1.0 - self.lambda2())
    }

    /// Evolve a distribution: mu H_t.
    pub fn heat_kernel_apply(&self, mu: &Distribution, t: f64) -> Result<Distribution> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        let n = self.len();
        if mu.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "distribution over {} states, chain has {n}",
                mu.len()
            )));
        }
        // c_k = <mu/pi, f_k>_pi = sum_x mu(x) f_k(x)
        let coeffs = self.basis.transpose() * mu.probs();
        let mut out = DVector::zeros(n);
        for k in 0..n {
            let w = (t * (self.eigenvalues[k] - 1.0)).exp() * coeffs[k];
            for y in 0..n {
                out[y] += w * self.basis[(y, k)] * self.pi[y];
            }
        }
        Distribution::from_approx(out)
    }

    /// Evolve a function: (H_t f)(x) = sum_k e^{t(lambda_k - 1)} <f, f_k>_pi f_k(x).
    pub fn apply_function(&self, f: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        let n = self.len();
        if f.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "function over {} states, chain has {n}",
                f.len()
            )));
        }
        let mut coeffs = DVector::zeros(n);
        for k in 0..n {
            let mut acc = 0.0;
            for x in 0..n {
                acc += self.pi[x] * f[x] * self.basis[(x, k)];
            }
            coeffs[k] = acc * (t * (self.eigenvalues[k] - 1.0)).exp();
        }
        Ok(&self.basis * coeffs)
    }

    /// Dense heat-kernel matrix H_t(x, y); row x is the time-t law from x.
    pub fn heat_kernel_matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        let n = self.len();
        let mut scaled = self.basis.clone();
        for k in 0..n {
            let w = (t * (self.eigenvalues[k] - 1.0)).exp();
            for x in 0..n {
                scaled[(x, k)] *= w;
            }
        }
        // H_t = scaled * basis^T * diag(pi)
        let mut right = self.basis.transpose();
        for y in 0..n {
            for k in 0..n {
                right[(k, y)] *= self.pi[y];
            }
        }
        Ok(scaled * right)
    }
}

/// Symmetrize by D^{1/2} P D^{-1/2} and run a dense symmetric
/// eigendecomposition; eigenvectors are mapped back to the pi-orthonormal
/// basis with a deterministic sign convention.
pub fn decompose(chain: &ReversibleChain) -> Result<SpectralData> {
    let n = chain.len();
    let pi = chain.pi().clone();
    let pi_sqrt = pi.map(f64::sqrt);
    let kernel = chain.kernel();
    let mut sym = DMatrix::zeros(n, n);
    for x in 0..n {
        for y in 0..n {
            sym[(x, y)] = pi_sqrt[x] * kernel[(x, y)] / pi_sqrt[y];
        }
    }
    // Roundoff symmetrization so the symmetric solver sees an exact input.
    for x in 0..n {
        for y in (x + 1)..n {
            let avg = 0.5 * (sym[(x, y)] + sym[(y, x)]);
            sym[(x, y)] = avg;
            sym[(y, x)] = avg;
        }
    }
    let eig = nalgebra::SymmetricEigen::try_new(sym, f64::EPSILON, 0)
        .ok_or_else(|| Error::EigenFailure("symmetric eigensolver did not converge".into()))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut eigenvalues = DVector::zeros(n);
    let mut basis = DMatrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        eigenvalues[k] = eig.eigenvalues[src].clamp(-1.0, 1.0);
        for x in 0..n {
            basis[(x, k)] = eig.eigenvectors[(x, src)] / pi_sqrt[x];
        }
        // Deterministic sign: largest-magnitude entry positive.
        let mut arg = 0;
        for x in 1..n {
            if basis[(x, k)].abs() > basis[(arg, k)].abs() {
                arg = x;
            }
        }
        if basis[(arg, k)] < 0.0 {
            for x in 0..n {
                basis[(x, k)] = -basis[(x, k)];
            }
        }
    }

    if (eigenvalues[0] - 1.0).abs() > 1e-10 {
        return Err(Error::EigenFailure(format!(
            "leading eigenvalue {} is not 1",
            eigenvalues[0]
        )));
    }
    if n > 1 && eigenvalues[1] >= 1.0 - 1e-14 {
        return Err(Error::EigenFailure(format!(
            "spectral gap vanished: lambda_2 = {}",
            eigenvalues[1]
        )));
    }
    // Pin the stationary eigenpair exactly.
    eigenvalues[0] = 1.0;
    for x in 0..n {
        basis[(x, 0)] = 1.0;
    }

    Ok(SpectralData {
        eigenvalues,
        basis,
        pi_sqrt,
        pi,
    })
}

/// Number of Poisson terms needed so the tail mass beyond `k_max` is below
/// `tail_tol`, computed by the pmf recurrence in log space.
fn poisson_truncation(t: f64, tail_tol: f64) -> Result<usize> {
    if t == 0.0 {
        return Ok(0);
    }
    let cap = (4.0 * (t + 10.0 * t.sqrt() + 50.0)) as usize + 64;
    let ln_t = t.ln();
    let mut log_p = -t; // log pmf at k = 0
    let mut cum = 0.0f64;
    let mut comp = 0.0f64; // Kahan compensation
    for k in 0..=cap {
        if k > 0 {
            log_p += ln_t - (k as f64).ln();
        }
        let p = log_p.exp();
        let y = p - comp;
        let s = cum + y;
        comp = (s - cum) - y;
        cum = s;
        if 1.0 - cum < tail_tol && k as f64 >= t {
            return Ok(k);
        }
    }
    Err(Error::EigenFailure(format!(
        "Poisson truncation did not reach tolerance {tail_tol} within {cap} terms"
    )))
}

/// Independent heat-kernel oracle: directly sums e^{-t} t^k / k! * mu P^k up
/// to a tail below `tail_tol`, never touching the eigenbasis.
pub fn heat_kernel_oracle(
    chain: &ReversibleChain,
    mu: &Distribution,
    t: f64,
    tail_tol: f64,
) -> Result<Distribution> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    if !(tail_tol > 0.0) {
        return Err(Error::BadParams(format!(
            "tail tolerance must be positive, got {tail_tol}"
        )));
    }
    let n = chain.len();
    if mu.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "distribution over {} states, chain has {n}",
            mu.len()
        )));
    }
    let k_max = poisson_truncation(t, tail_tol)?;
    let kernel_t = chain.kernel().transpose();
    let mut power = mu.probs().clone();
    let mut acc = DVector::zeros(n);
    let ln_t = if t > 0.0 { t.ln() } else { 0.0 };
    let mut log_p = -t;
    for k in 0..=k_max {
        if k > 0 {
            log_p += ln_t - (k as f64).ln();
            power = &kernel_t * power;
        }
        let p = log_p.exp();
        acc.axpy(p, &power, 1.0);
    }
    Distribution::from_approx(acc)
}

/// Poisson-series evolution of a (sub)probability row vector by an arbitrary
/// nonnegative matrix: sum_k pois(k; t) v M^k. Used as the series oracle for
/// substochastic restrictions.
pub fn poisson_series_row(
    matrix: &DMatrix<f64>,
    v: &DVector<f64>,
    t: f64,
    tail_tol: f64,
) -> Result<DVector<f64>> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    let k_max = poisson_truncation(t, tail_tol)?;
    let m_t = matrix.transpose();
    let mut power = v.clone();
    let mut acc = DVector::zeros(v.len());
    let ln_t = if t > 0.0 { t.ln() } else { 0.0 };
    let mut log_p = -t;
    for k in 0..=k_max {
        if k > 0 {
            log_p += ln_t - (k as f64).ln();
            power = &m_t * power;
        }
        acc.axpy(log_p.exp(), &power, 1.0);
    }
    Ok(acc)
}

/// Evolve `v0` to every time in `ts` by the uniformized (Poisson-mixture)
/// series over `matrix`. `forward` evolves a row measure (v M^k), otherwise
/// a column of per-start functionals (M^k v). One pass over the power
/// sequence serves the whole time grid; each output is within `tail_tol` of
/// the exact value in l1.
pub fn uniformized_grid(
    matrix: &DMatrix<f64>,
    v0: &DVector<f64>,
    ts: &[f64],
    tail_tol: f64,
    forward: bool,
) -> Result<Vec<DVector<f64>>> {
    if let Some(&t) = ts.iter().find(|&&t| t < 0.0) {
        return Err(Error::NegativeTime(t));
    }
    let n = v0.len();
    if matrix.nrows() != n || matrix.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} x {} matrix with vector of length {n}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    let t_max = ts.iter().cloned().fold(0.0, f64::max);
    let k_max = poisson_truncation(t_max, tail_tol)?;
    let m_t = if forward {
        Some(matrix.transpose())
    } else {
        None
    };
    let mut power = v0.clone();
    let mut acc: Vec<DVector<f64>> = vec![DVector::zeros(n); ts.len()];
    let mut log_p: Vec<f64> = ts.iter().map(|&t| -t).collect();
    let mut done: Vec<bool> = vec![false; ts.len()];
    let mut cum: Vec<f64> = vec![0.0; ts.len()];
    for k in 0..=k_max {
        if k > 0 {
            for (j, &t) in ts.iter().enumerate() {
                if t > 0.0 {
                    log_p[j] += t.ln() - (k as f64).ln();
                }
            }
            power = match &m_t {
                Some(mt) => mt * &power,
                None => matrix * &power,
            };
        }
        let mut all_done = true;
        for j in 0..ts.len() {
            if done[j] {
                continue;
            }
            let p = if ts[j] == 0.0 {
                if k == 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                log_p[j].exp()
            };
            if p > 0.0 {
                acc[j].axpy(p, &power, 1.0);
            }
            cum[j] += p;
            if 1.0 - cum[j] < tail_tol && k as f64 >= ts[j] {
                done[j] = true;
            } else {
                all_done = false;
            }
        }
        if all_done {
            break;
        }
    }
    Ok(acc)
}

/// How much the eigen route can amplify solver noise when evolving from
/// `mu`: sqrt(pi_max / pi_min) over the support of `mu`. Entries of the
/// evolved law carry absolute noise of roughly 1e-16 times this factor.
pub fn eigen_amplification(chain: &ReversibleChain, mu: &Distribution) -> f64 {
    let pi = chain.pi();
    let pi_max = pi.max();
    let mut pi_min_supp = f64::INFINITY;
    for x in 0..mu.len().min(pi.len()) {
        if mu.probs()[x] > 0.0 {
            pi_min_supp = pi_min_supp.min(pi[x]);
        }
    }
    (pi_max / pi_min_supp).sqrt()
}

/// Above this noise-amplification factor the distribution evolution switches
/// from the eigenbasis to the certified Poisson series.
pub const EIGEN_AMP_LIMIT: f64 = 1e6;
/// Series tail tolerance used by the fallback route.
pub const SERIES_TAIL_TOL: f64 = 1e-11;

/// mu H_t with automatic route selection: eigenbasis when the start is heavy
/// enough for the spectral reconstruction to be accurate, certified Poisson
/// series otherwise.
pub fn evolve_measure(
    chain: &ReversibleChain,
    spec: &SpectralData,
    mu: &Distribution,
    t: f64,
) -> Result<Distribution> {
    if eigen_amplification(chain, mu) <= EIGEN_AMP_LIMIT {
        spec.heat_kernel_apply(mu, t)
    } else {
        heat_kernel_oracle(chain, mu, t, SERIES_TAIL_TOL)
    }
}

/// Batched route-aware evolution over a time grid.
pub fn evolve_measure_grid(
    chain: &ReversibleChain,
    spec: &SpectralData,
    mu: &Distribution,
    ts: &[f64],
) -> Result<Vec<Distribution>> {
    if eigen_amplification(chain, mu) <= EIGEN_AMP_LIMIT {
        ts.iter().map(|&t| spec.heat_kernel_apply(mu, t)).collect()
    } else {
        let raw = uniformized_grid(chain.kernel(), mu.probs(), ts, SERIES_TAIL_TOL, true)?;
        raw.into_iter().map(Distribution::from_approx).collect()
    }
}

/// pi-weighted mean.
pub fn mean_pi(pi: &DVector<f64>, f: &DVector<f64>) -> f64 {
    pi.dot(f)
}

/// pi-weighted variance.
pub fn var_pi(pi: &DVector<f64>, f: &DVector<f64>) -> f64 {
    let m = mean_pi(pi, f);
    (0..f.len()).map(|x| pi[x] * (f[x] - m).powi(2)).sum()
}

/// pi-weighted L2 norm.
pub fn l2_pi(pi: &DVector<f64>, f: &DVector<f64>) -> f64 {
    (0..f.len())
        .map(|x| pi[x] * f[x] * f[x])
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    fn two_state() -> ReversibleChain {
        let kernel = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        ReversibleChain::from_kernel(labels(2), kernel).unwrap()
    }

    fn path3() -> ReversibleChain {
        let kernel = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.5, 0.0, 0.5, 0.0, 1.0, 0.0]);
        ReversibleChain::from_kernel(labels(3), kernel).unwrap()
    }

    #[test]
    fn two_state_eigenvalues() {
        let spec = decompose(&two_state()).unwrap();
        assert_eq!(spec.eigenvalues()[0], 1.0);
        assert!(spec.eigenvalues()[1].abs() < 1e-12);
        assert!((spec.relaxation_time() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn complete_graph_eigenvalues() {
        for m in [3usize, 5, 8] {
            let kernel = DMatrix::from_element(m, m, 1.0 / m as f64);
            let chain = ReversibleChain::from_kernel(labels(m), kernel).unwrap();
            let spec = decompose(&chain).unwrap();
            assert_eq!(spec.eigenvalues()[0], 1.0);
            for k in 1..m {
                assert!(spec.eigenvalues()[k].abs() < 1e-12, "m={m} k={k}");
            }
            assert!((spec.relaxation_time() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn path3_eigenvalues_match_cubic_roots() {
        // det(P - x I) = -x^3 + x has roots {1, 0, -1}.
        let spec = decompose(&path3()).unwrap();
        let expect = [1.0, 0.0, -1.0];
        for k in 0..3 {
            assert!((spec.eigenvalues()[k] - expect[k]).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn basis_is_pi_orthonormal_and_reconstructs() {
        let chain = path3();
        let spec = decompose(&chain).unwrap();
        let n = 3;
        for i in 0..n {
            for j in 0..n {
                let mut ip = 0.0;
                for x in 0..n {
                    ip += chain.pi()[x] * spec.basis()[(x, i)] * spec.basis()[(x, j)];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((ip - expect).abs() < 1e-9, "({i},{j}) -> {ip}");
            }
        }
        // sum_k lambda_k f_k(x) f_k(y) pi(y) recovers the kernel
        for x in 0..n {
            for y in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += spec.eigenvalues()[k]
                        * spec.basis()[(x, k)]
                        * spec.basis()[(y, k)]
                        * chain.pi()[y];
                }
                assert!((acc - chain.kernel()[(x, y)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn heat_kernel_identity_at_zero() {
        let chain = path3();
        let spec = decompose(&chain).unwrap();
        let mu = Distribution::delta(3, 0);
        let out = spec.heat_kernel_apply(&mu, 0.0).unwrap();
        for x in 0..3 {
            assert!((out.probs()[x] - mu.probs()[x]).abs() < 1e-12);
        }
    }

    #[test]
    fn heat_kernel_fixes_stationary_law() {
        let chain = path3();
        let spec = decompose(&chain).unwrap();
        let pi = chain.stationary();
        for t in [0.0, 0.5, 3.0, 40.0] {
            let out = spec.heat_kernel_apply(&pi, t).unwrap();
            for x in 0..3 {
                assert!((out.probs()[x] - chain.pi()[x]).abs() < 1e-12, "t={t}");
            }
        }
    }

    #[test]
    fn two_state_closed_form() {
        let spec = decompose(&two_state()).unwrap();
        let mu = Distribution::delta(2, 0);
        let t = std::f64::consts::LN_2;
        let out = spec.heat_kernel_apply(&mu, t).unwrap();
        assert!((out.probs()[0] - 0.75).abs() < 1e-12);
        assert!((out.probs()[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn oracle_matches_closed_form_and_eigen() {
        let chain = two_state();
        let spec = decompose(&chain).unwrap();
        let mu = Distribution::delta(2, 0);
        let t = std::f64::consts::LN_2;
        let oracle = heat_kernel_oracle(&chain, &mu, t, 1e-12).unwrap();
        assert!((oracle.probs()[0] - 0.75).abs() < 1e-10);
        let eigen = spec.heat_kernel_apply(&mu, t).unwrap();
        for x in 0..2 {
            assert!((oracle.probs()[x] - eigen.probs()[x]).abs() < 1e-10);
        }
    }

    #[test]
    fn oracle_at_zero_returns_mu() {
        let chain = path3();
        let mu = Distribution::from_slice(&[0.2, 0.5, 0.3]).unwrap();
        let out = heat_kernel_oracle(&chain, &mu, 0.0, 1e-12).unwrap();
        for x in 0..3 {
            assert!((out.probs()[x] - mu.probs()[x]).abs() < 1e-14);
        }
    }

    #[test]
    fn semigroup_property() {
        let chain = path3();
        let spec = decompose(&chain).unwrap();
        let mu = Distribution::delta(3, 2);
        for (s, t) in [(0.3, 1.1), (2.0, 5.0), (0.0, 4.0)] {
            let two_step = spec
                .heat_kernel_apply(&spec.heat_kernel_apply(&mu, s).unwrap(), t)
                .unwrap();
            let one_step = spec.heat_kernel_apply(&mu, s + t).unwrap();
            let l1: f64 = (two_step.probs() - one_step.probs()).abs().sum();
            assert!(l1 < 1e-10, "s={s} t={t}: {l1}");
        }
    }

    #[test]
    fn variance_contraction_spot_check() {
        let chain = path3();
        let spec = decompose(&chain).unwrap();
        let t_rel = spec.relaxation_time();
        let f = DVector::from_column_slice(&[1.0, -0.3, 2.0]);
        for t in [0.1, 1.0, 7.0] {
            let ht = spec.apply_function(&f, t).unwrap();
            let lhs = var_pi(chain.pi(), &ht);
            let rhs = (-2.0 * t / t_rel).exp() * var_pi(chain.pi(), &f);
            assert!(lhs <= rhs * (1.0 + 1e-9), "t={t}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn negative_time_rejected() {
        let chain = two_state();
        let spec = decompose(&chain).unwrap();
        let mu = Distribution::delta(2, 0);
        assert!(matches!(
            spec.heat_kernel_apply(&mu, -1.0),
            Err(Error::NegativeTime(_))
        ));
        assert!(matches!(
            heat_kernel_oracle(&chain, &mu, -0.5, 1e-10),
            Err(Error::NegativeTime(_))
        ));
    }

    #[test]
    fn heat_kernel_matrix_rows_are_laws() {
        let chain = path3();
        let spec = decompose(&chain).unwrap();
        let h = spec.heat_kernel_matrix(1.3).unwrap();
        for x in 0..3 {
            let row_law = spec
                .heat_kernel_apply(&Distribution::delta(3, x), 1.3)
                .unwrap();
            let mut sum = 0.0;
            for y in 0..3 {
                assert!((h[(x, y)] - row_law.probs()[y]).abs() < 1e-11);
                sum += h[(x, y)];
            }
            assert!((sum - 1.0).abs() < 1e-11);
        }
    }
}

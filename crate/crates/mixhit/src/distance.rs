//! Distance functionals (total variation, pi-weighted L^p, separation),
//! sampled mixing profiles, and mixing-time inversion.


use serde::{Deserialize, Serialize};

use crate::chain::{Distribution, ReversibleChain};
use crate::error::{Error, Result};
use crate::spectral::SpectralData;

/// Half the l1 distance between two distributions.
pub fn tv(mu: &Distribution, nu: &Distribution) -> Result<f64> {
    if mu.len() != nu.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} states",
            mu.len(),
            nu.len()
        )));
    }
    Ok(0.5 * (mu.probs() - nu.probs()).abs().sum())
}

/// TV distance of `mu` from the stationary law.
pub fn tv_from_pi(chain: &ReversibleChain, mu: &Distribution) -> Result<f64> {
    if mu.len() != chain.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} states",
            mu.len(),
            chain.len()
        )));
    }
    Ok(0.5 * (mu.probs() - chain.pi()).abs().sum())
}

/// pi-weighted L^p distance of `mu` from stationarity,
/// [ sum_y pi(y) |mu(y)/pi(y) - 1|^p ]^{1/p}; `p = inf` takes the max form.
pub fn lp_distance(mu: &Distribution, chain: &ReversibleChain, p: f64) -> Result<f64> {
    if mu.len() != chain.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} states",
            mu.len(),
            chain.len()
        )));
    }
    if !(p >= 1.0) {
        return Err(Error::BadParams(format!("L^p exponent {p} below 1")));
    }
    let pi = chain.pi();
    if let Some(state) = pi.iter().position(|&v| v <= 0.0) {
        return Err(Error::ZeroStationaryMass { state });
    }
    let n = chain.len();
    if p.is_infinite() {
        let mut worst = 0.0f64;
        for y in 0..n {
            worst = worst.max((mu.probs()[y] / pi[y] - 1.0).abs());
        }
        return Ok(worst);
    }
    let mut acc = 0.0;
    for y in 0..n {
        acc += pi[y] * (mu.probs()[y] / pi[y] - 1.0).abs().powf(p);
    }
    Ok(acc.powf(1.0 / p))
}

/// Separation distance max_y (1 - mu(y) / pi(y)).
pub fn separation(mu: &Distribution, chain: &ReversibleChain) -> Result<f64> {
    if mu.len() != chain.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} states",
            mu.len(),
            chain.len()
        )));
    }
    let pi = chain.pi();
    let mut worst = f64::NEG_INFINITY;
    for y in 0..chain.len() {
        worst = worst.max(1.0 - mu.probs()[y] / pi[y]);
    }
    Ok(worst)
}

/// Generation parameters recorded alongside a sampled profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileMeta {
    pub t_max: f64,
    pub base_points: usize,
    pub refinement_depth: usize,
}

/// A sampled monotone function t -> value on a strictly increasing grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Profile {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub meta: ProfileMeta,
}

impl Profile {
    /// Longest closed interval of the grid on which values stay in [lo, hi].
    pub fn longest_band_interval(&self, lo: f64, hi: f64) -> f64 {
        let mut best = 0.0f64;
        let mut start: Option<usize> = None;
        for i in 0..self.values.len() {
            let inside = self.values[i] >= lo && self.values[i] <= hi;
            match (inside, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    best = best.max(self.grid[i - 1] - self.grid[s]);
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            best = best.max(self.grid[self.grid.len() - 1] - self.grid[s]);
        }
        best
    }
}

/// Maximum refinement passes for profile sampling.
const MAX_REFINE_DEPTH: usize = 12;
/// Value jump between adjacent grid points that triggers refinement.
const REFINE_JUMP: f64 = 0.02;

/// Sample a monotone curve on [0, t_max] with bisection refinement wherever
/// adjacent values jump by more than `REFINE_JUMP`. Evaluation happens in
/// batches so series-based evolutions can share one pass per refinement
/// level.
fn sample_monotone_batched(
    t_max: f64,
    n_points: usize,
    mut eval_batch: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<Profile> {
    let n_points = n_points.max(2);
    let mut grid: Vec<f64> = (0..n_points)
        .map(|i| t_max * i as f64 / (n_points - 1) as f64)
        .collect();
    let mut values = eval_batch(&grid)?;
    let mut depth = 0;
    let min_gap = t_max * 1e-6;
    while depth < MAX_REFINE_DEPTH {
        let mut inserts: Vec<(usize, f64)> = Vec::new();
        for i in 0..grid.len() - 1 {
            if (values[i] - values[i + 1]).abs() > REFINE_JUMP && grid[i + 1] - grid[i] > min_gap {
                inserts.push((i + 1, 0.5 * (grid[i] + grid[i + 1])));
            }
        }
        if inserts.is_empty() {
            break;
        }
        let ts: Vec<f64> = inserts.iter().map(|&(_, t)| t).collect();
        let new_values = eval_batch(&ts)?;
        for (offset, ((idx, t), v)) in inserts.into_iter().zip(new_values).enumerate() {
            grid.insert(idx + offset, t);
            values.insert(idx + offset, v);
        }
        depth += 1;
    }
    Ok(Profile {
        grid,
        values,
        meta: ProfileMeta {
            t_max,
            base_points: n_points,
            refinement_depth: depth,
        },
    })
}

/// d_mu(t) sampled on [0, t_max]. Evolution is route-aware: eigenbasis for
/// heavy starts, certified Poisson series for starts whose stationary mass
/// would amplify eigensolver noise.
pub fn mixing_profile(
    chain: &ReversibleChain,
    spec: &SpectralData,
    mu: &Distribution,
    t_max: f64,
    n_points: usize,
) -> Result<Profile> {
    if !(t_max > 0.0) {
        return Err(Error::BadParams(format!("t_max must be positive, got {t_max}")));
    }
    sample_monotone_batched(t_max, n_points, |ts| {
        let laws = crate::spectral::evolve_measure_grid(chain, spec, mu, ts)?;
        laws.iter().map(|law| tv_from_pi(chain, law)).collect()
    })
}

/// Worst-case distance d(t) = max_x d_x(t) with the argmax start per point.
///
/// Evaluated through the dense eigen heat kernel; accurate when the ratio
/// pi_max/pi_min is moderate (the per-entry noise floor is about 1e-16 *
/// sqrt(pi_max/pi_min)).
pub fn worst_case_profile(
    chain: &ReversibleChain,
    spec: &SpectralData,
    t_max: f64,
    n_points: usize,
) -> Result<(Profile, Vec<usize>)> {
    if !(t_max > 0.0) {
        return Err(Error::BadParams(format!("t_max must be positive, got {t_max}")));
    }
    let mut argmax = Vec::new();
    let profile = sample_monotone_batched(t_max, n_points, |ts| {
        ts.iter()
            .map(|&t| {
                let (d, x) = worst_case_distance(chain, spec, t)?;
                argmax.push((t, x));
                Ok(d)
            })
            .collect()
    })?;
    // Refinement appends out of grid order; restore grid order.
    argmax.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let argmax = argmax.into_iter().map(|(_, x)| x).collect();
    Ok((profile, argmax))
}

/// max_x d_x(t) and the first start attaining it.
pub fn worst_case_distance(
    chain: &ReversibleChain,
    spec: &SpectralData,
    t: f64,
) -> Result<(f64, usize)> {
    let h = spec.heat_kernel_matrix(t)?;
    let n = chain.len();
    let mut best = (0.0f64, 0usize);
    for x in 0..n {
        let mut acc = 0.0;
        for y in 0..n {
            acc += (h[(x, y)] - chain.pi()[y]).abs();
        }
        let d = 0.5 * acc;
        if d > best.0 {
            best = (d, x);
        }
    }
    Ok(best)
}

/// First time a non-increasing curve drops to `eps`: geometric bracket
/// expansion from the relaxation time, then bisection to an absolute time
/// tolerance of 1e-9 * max(1, t_rel).
pub(crate) fn invert_nonincreasing(
    t_rel: f64,
    eps: f64,
    mut eval: impl FnMut(f64) -> Result<f64>,
) -> Result<f64> {
    if eval(0.0)? <= eps {
        return Ok(0.0);
    }
    let mut lo = 0.0f64;
    let mut hi = t_rel.max(1e-9);
    let mut expansions = 0;
    while eval(hi)? > eps {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 200 {
            return Err(Error::EigenFailure(
                "bracket expansion failed: curve does not drop to the target level".into(),
            ));
        }
    }
    let tol = 1e-9 * t_rel.max(1.0);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if eval(mid)? <= eps {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// epsilon-mixing time from a fixed initial distribution.
pub fn t_mix_mu(
    chain: &ReversibleChain,
    spec: &SpectralData,
    mu: &Distribution,
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::EpsOutOfRange(eps));
    }
    invert_nonincreasing(spec.relaxation_time(), eps, |t| {
        tv_from_pi(chain, &crate::spectral::evolve_measure(chain, spec, mu, t)?)
    })
}

/// Mixing times at several levels read off a sampled profile, each sharpened
/// by one local refinement batch. Suited to long time horizons where
/// per-evaluation bisection through the series route would be too costly;
/// accuracy is the refined grid resolution.
pub fn t_mix_mu_from_profile(
    chain: &ReversibleChain,
    spec: &SpectralData,
    mu: &Distribution,
    t_max: f64,
    n_points: usize,
    eps_list: &[f64],
    refine_points: usize,
) -> Result<Vec<f64>> {
    let coarse = mixing_profile(chain, spec, mu, t_max, n_points)?;
    let mut brackets = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::EpsOutOfRange(eps));
        }
        if coarse.values[0] <= eps {
            brackets.push((0.0, 0.0));
            continue;
        }
        let hit = coarse.values.iter().position(|&v| v <= eps);
        match hit {
            Some(i) => brackets.push((coarse.grid[i - 1], coarse.grid[i])),
            None => {
                return Err(Error::BadParams(format!(
                    "profile never drops to {eps} before t_max = {t_max}"
                )))
            }
        }
    }
    let mut refine_ts: Vec<f64> = Vec::new();
    for &(lo, hi) in &brackets {
        if hi > lo {
            for i in 1..=refine_points {
                refine_ts.push(lo + (hi - lo) * i as f64 / (refine_points + 1) as f64);
            }
        }
    }
    let refine_vals: Vec<f64> = if refine_ts.is_empty() {
        Vec::new()
    } else {
        crate::spectral::evolve_measure_grid(chain, spec, mu, &refine_ts)?
            .iter()
            .map(|law| tv_from_pi(chain, law))
            .collect::<Result<Vec<f64>>>()?
    };
    let mut out = Vec::with_capacity(eps_list.len());
    let mut cursor = 0;
    for (&eps, &(lo, hi)) in eps_list.iter().zip(&brackets) {
        if hi == 0.0 {
            out.push(0.0);
            continue;
        }
        let k = refine_points;
        let ts = &refine_ts[cursor..cursor + k];
        let vs = &refine_vals[cursor..cursor + k];
        cursor += k;
        let mut t_ans = hi;
        for i in 0..k {
            if vs[i] <= eps {
                t_ans = ts[i];
                break;
            }
        }
        let _ = lo;
        out.push(t_ans);
    }
    Ok(out)
}

/// Worst-case epsilon-mixing time (over all singleton starts).
pub fn t_mix(chain: &ReversibleChain, spec: &SpectralData, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::EpsOutOfRange(eps));
    }
    invert_nonincreasing(spec.relaxation_time(), eps, |t| {
        Ok(worst_case_distance(chain, spec, t)?.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::decompose;
    use nalgebra::DMatrix;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    fn two_state() -> (ReversibleChain, SpectralData) {
        let kernel = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let chain = ReversibleChain::from_kernel(labels(2), kernel).unwrap();
        let spec = decompose(&chain).unwrap();
        (chain, spec)
    }

    #[test]
    fn tv_basics() {
        let mu = Distribution::from_slice(&[0.75, 0.25]).unwrap();
        let nu = Distribution::from_slice(&[0.5, 0.5]).unwrap();
        assert_eq!(tv(&mu, &mu).unwrap(), 0.0);
        assert!((tv(&mu, &nu).unwrap() - 0.25).abs() < 1e-15);
        let d0 = Distribution::delta(2, 0);
        let d1 = Distribution::delta(2, 1);
        assert_eq!(tv(&d0, &d1).unwrap(), 1.0);
        let d3 = Distribution::delta(3, 0);
        assert!(matches!(tv(&d0, &d3), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn lp_distance_values() {
        let (chain, _) = two_state();
        let pi = chain.stationary();
        for p in [1.0, 2.0, 7.5, f64::INFINITY] {
            assert!(lp_distance(&pi, &chain, p).unwrap().abs() < 1e-12);
        }
        let mu = Distribution::from_slice(&[0.75, 0.25]).unwrap();
        let l1 = lp_distance(&mu, &chain, 1.0).unwrap();
        assert!((l1 - 2.0 * tv_from_pi(&chain, &mu).unwrap()).abs() < 1e-12);
        let delta = Distribution::delta(2, 0);
        assert!((lp_distance(&delta, &chain, f64::INFINITY).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lp_monotone_in_p() {
        let (chain, _) = two_state();
        let mu = Distribution::from_slice(&[0.9, 0.1]).unwrap();
        let ps = [1.0, 1.5, 2.0, 4.0, 16.0, f64::INFINITY];
        let mut prev = 0.0;
        for &p in &ps {
            let v = lp_distance(&mu, &chain, p).unwrap();
            assert!(v + 1e-12 >= prev, "p={p}: {v} < {prev}");
            prev = v;
        }
    }

    #[test]
    fn separation_values() {
        let (chain, _) = two_state();
        assert!(separation(&chain.stationary(), &chain).unwrap().abs() < 1e-12);
        assert!((separation(&Distribution::delta(2, 0), &chain).unwrap() - 1.0).abs() < 1e-12);
        let mu = Distribution::from_slice(&[0.75, 0.25]).unwrap();
        assert!((separation(&mu, &chain).unwrap() - 0.5).abs() < 1e-12);
        // separation dominates TV
        assert!(
            tv_from_pi(&chain, &mu).unwrap() <= separation(&mu, &chain).unwrap() + 1e-12
        );
    }

    #[test]
    fn two_state_profile_closed_form() {
        let (chain, spec) = two_state();
        let mu = Distribution::delta(2, 0);
        let profile = mixing_profile(&chain, &spec, &mu, 5.0, 21).unwrap();
        for (t, v) in profile.grid.iter().zip(&profile.values) {
            assert!((v - 0.5 * (-t).exp()).abs() < 1e-10, "t={t}");
        }
        // non-increasing
        for w in profile.values.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
        assert!((profile.values[0] - (1.0 - chain.pi()[0])).abs() < 1e-12);
    }

    #[test]
    fn profile_from_pi_is_zero() {
        let (chain, spec) = two_state();
        let profile = mixing_profile(&chain, &spec, &chain.stationary(), 3.0, 9).unwrap();
        for v in &profile.values {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn t_mix_two_state() {
        let (chain, spec) = two_state();
        let mu = Distribution::delta(2, 0);
        let t = t_mix_mu(&chain, &spec, &mu, 0.25).unwrap();
        assert!((t - std::f64::consts::LN_2).abs() < 1e-8, "{t}");
        // already mixed
        assert_eq!(t_mix_mu(&chain, &spec, &mu, 0.75).unwrap(), 0.0);
        assert!(matches!(
            t_mix_mu(&chain, &spec, &mu, 0.0),
            Err(Error::EpsOutOfRange(_))
        ));
    }

    #[test]
    fn t_mix_nonincreasing_in_eps() {
        let (chain, spec) = two_state();
        let mu = Distribution::delta(2, 0);
        let mut prev = f64::INFINITY;
        for eps in [0.05, 0.1, 0.25, 0.4, 0.49] {
            let t = t_mix_mu(&chain, &spec, &mu, eps).unwrap();
            assert!(t <= prev + 1e-9);
            prev = t;
        }
    }

    #[test]
    fn worst_case_two_state_ties_broken_by_order() {
        let (chain, spec) = two_state();
        let (profile, argmax) = worst_case_profile(&chain, &spec, 4.0, 9).unwrap();
        for ((t, v), x) in profile.grid.iter().zip(&profile.values).zip(&argmax) {
            assert!((v - 0.5 * (-t).exp()).abs() < 1e-10);
            assert_eq!(*x, 0, "tie must resolve to the first state");
        }
        assert!((profile.values[0] - (1.0 - chain.pi().min())).abs() < 1e-12);
    }

    #[test]
    fn longest_band_interval_finds_plateau() {
        let profile = Profile {
            grid: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            values: vec![1.0, 0.6, 0.55, 0.5, 0.2, 0.1],
            meta: ProfileMeta {
                t_max: 5.0,
                base_points: 6,
                refinement_depth: 0,
            },
        };
        assert!((profile.longest_band_interval(0.35, 0.65) - 2.0).abs() < 1e-12);
    }
}

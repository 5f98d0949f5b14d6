//! Grids of q-uniform posteriors and decompositions of a target posterior
//! into grid points.

use statrs::function::factorial::ln_factorial;

use crate::belief::{Posterior, PosteriorDistribution};
use crate::error::{Error, Result};
use crate::lp::{self, LinearProgram, LpStatus, Sense};

/// Default cap on the number of grid points enumerated.
pub const DEFAULT_QUNIFORM_CAP: u64 = 5_000_000;

/// All posteriors whose coordinates are multiples of `1/q`, stored as counts.
#[derive(Debug, Clone, PartialEq)]
pub struct QUniformSet {
    pub q: u32,
    pub counts: Vec<Vec<u32>>,
}

impl QUniformSet {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn posterior(&self, i: usize) -> Vec<f64> {
        to_posterior(&self.counts[i], self.q)
    }

    pub fn posteriors(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.posterior(i)).collect()
    }
}

pub fn to_posterior(counts: &[u32], q: u32) -> Vec<f64> {
    counts.iter().map(|&c| c as f64 / q as f64).collect()
}

/// `C(q + d - 1, d - 1)`, as a float so that huge grids do not overflow.
pub fn quniform_count(d: usize, q: u32) -> f64 {
    let k = d.saturating_sub(1) as u64;
    (0..k).fold(1.0, |acc, i| acc * (q as u64 + k - i) as f64 / (i + 1) as f64).round()
}

/// Smallest grid size with which the local decomposition is guaranteed.
pub fn local_grid_size(d: usize, alpha: f64) -> u32 {
    (18.0 * d as f64 / (alpha * alpha)).ceil() as u32
}

pub fn enumerate_quniform(d: usize, q: u32) -> Result<QUniformSet> {
    enumerate_quniform_capped(d, q, DEFAULT_QUNIFORM_CAP)
}

/// Enumerate in lexicographically decreasing count order, so `(1, 0)` comes
/// before `(0.5, 0.5)`.
pub fn enumerate_quniform_capped(d: usize, q: u32, cap: u64) -> Result<QUniformSet> {
    if d == 0 || q == 0 {
        return Err(Error::InvalidParameter("grid needs d >= 1 and q >= 1".into()));
    }
    let count = quniform_count(d, q);
    if count > cap as f64 {
        return Err(Error::ExplosionGuard { what: "q-uniform posteriors", count, cap: cap as f64 });
    }
    let mut counts = Vec::with_capacity(count as usize);
    let mut cur = vec![0u32; d];
    compositions(&mut cur, 0, q, &mut |c| counts.push(c.to_vec()));
    Ok(QUniformSet { q, counts })
}

fn compositions(cur: &mut [u32], i: usize, left: u32, out: &mut impl FnMut(&[u32])) {
    if i + 1 == cur.len() {
        cur[i] = left;
        out(cur);
        return;
    }
    for c in (0..=left).rev() {
        cur[i] = c;
        compositions(cur, i + 1, left - c, out);
    }
}

/// Distribution of the empirical mean of `q` independent draws from `target`.
pub fn decompose_multinomial(target: &[f64], q: u32) -> Result<PosteriorDistribution> {
    let grid = enumerate_quniform(target.len(), q)?;
    let ln_q = ln_factorial(q as u64);
    let mut logs = Vec::new();
    let mut kept = Vec::new();
    for (i, c) in grid.counts.iter().enumerate() {
        let mut l = ln_q;
        let mut possible = true;
        for (&n, &p) in c.iter().zip(target) {
            if n == 0 {
                continue;
            }
            if p <= 0.0 {
                possible = false;
                break;
            }
            l += n as f64 * p.ln() - ln_factorial(n as u64);
        }
        if possible {
            logs.push(l);
            kept.push(i);
        }
    }
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = raw.iter().sum();
    let mut support = Vec::new();
    let mut weights = Vec::new();
    for (w, &i) in raw.iter().zip(&kept) {
        let w = w / total;
        if w >= 1e-15 {
            support.push(Posterior::new(grid.posterior(i))?);
            weights.push(w);
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let dist = PosteriorDistribution { support, weights };
    let drift = dist.consistency_error(target);
    if drift > 1e-9 {
        return Err(Error::NumericalFailure(format!("multinomial mean drift {drift:e}")));
    }
    Ok(dist)
}

/// Grid points within sup-distance `radius` of `target`.
pub fn neighbourhood(target: &[f64], q: u32, radius: f64) -> Vec<Vec<u32>> {
    let qf = q as f64;
    let bounds: Vec<(u32, u32)> = target
        .iter()
        .map(|&t| {
            let lo = ((t - radius) * qf - 1e-9).ceil().max(0.0) as u32;
            let hi = ((t + radius) * qf + 1e-9).floor().min(qf) as u32;
            (lo, hi)
        })
        .collect();
    let mut out = Vec::new();
    let mut cur = vec![0u32; target.len()];
    bounded(&bounds, &mut cur, 0, q, &mut out);
    out
}

fn bounded(bounds: &[(u32, u32)], cur: &mut [u32], i: usize, left: u32, out: &mut Vec<Vec<u32>>) {
    let (lo, hi) = bounds[i];
    if i + 1 == cur.len() {
        if (lo..=hi).contains(&left) {
            cur[i] = left;
            out.push(cur.to_vec());
        }
        return;
    }
    let rest_hi: u32 = bounds[i + 1..].iter().map(|b| b.1).sum();
    let rest_lo: u32 = bounds[i + 1..].iter().map(|b| b.0).sum();
    for c in (lo..=hi.min(left)).rev() {
        if left - c > rest_hi || left - c < rest_lo {
            continue;
        }
        cur[i] = c;
        bounded(bounds, cur, i + 1, left - c, out);
    }
}

/// Write `target` as a mixture of nearby grid points, found by a feasibility LP.
pub fn decompose_local(target: &[f64], q: u32, alpha: f64) -> Result<PosteriorDistribution> {
    let d = target.len();
    let counts: Vec<f64> = target.iter().map(|t| t * q as f64).collect();
    if counts.iter().all(|c| (c - c.round()).abs() < 1e-9) {
        let xi: Vec<f64> = counts.iter().map(|c| c.round() / q as f64).collect();
        return Ok(PosteriorDistribution { support: vec![Posterior::new(xi)?], weights: vec![1.0] });
    }
    let radius = alpha * alpha / (18.0 * d as f64);
    let points = neighbourhood(target, q, radius);
    if points.is_empty() {
        return Err(Error::InfeasibleDecomposition);
    }
    let mut program = LinearProgram::new();
    let vars: Vec<usize> = points.iter().map(|_| program.add_var(0.0)).collect();
    for t in 0..d {
        let row = vars.iter().zip(&points).map(|(&v, c)| (v, c[t] as f64 / q as f64)).collect();
        program.add_constraint(row, Sense::Eq, target[t]);
    }
    program.add_constraint(vars.iter().map(|&v| (v, 1.0)).collect(), Sense::Eq, 1.0);
    let sol = lp::solve(&program)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::InfeasibleDecomposition);
    }
    let mut support = Vec::new();
    let mut weights = Vec::new();
    for (c, &w) in points.iter().zip(&sol.x) {
        if w > 1e-15 {
            support.push(Posterior::new(to_posterior(c, q))?);
            weights.push(w);
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(PosteriorDistribution { support, weights })
}

/// Prefixes fixing every coordinate but the last two; each prefix spans one
/// lattice row of the grid. For `d <= 2` there is a single empty prefix.
pub fn row_prefixes(d: usize, q: u32) -> Vec<Vec<u32>> {
    if d <= 2 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    let mut cur = vec![0u32; d - 2];
    prefixes(&mut cur, 0, q, &mut out);
    out
}

fn prefixes(cur: &mut [u32], i: usize, left: u32, out: &mut Vec<Vec<u32>>) {
    if i == cur.len() {
        out.push(cur.to_vec());
        return;
    }
    for c in (0..=left).rev() {
        cur[i] = c;
        prefixes(cur, i + 1, left - c, out);
    }
}

/// Points of one lattice row that bracket every sign change of the given
/// linear functionals, plus the row's two ends.
///
/// Along the row the last two counts are `(x, r - x)` for `x = 0..=r`. Between
/// consecutive returned points no functional changes sign, so any function
/// that is convex on each cell of the functionals' arrangement is convex on
/// each gap. Points come out sorted by decreasing `x`.
pub fn row_candidates(prefix: &[u32], d: usize, q: u32, functionals: &[Vec<f64>]) -> Vec<Vec<u32>> {
    if d == 1 {
        return vec![vec![q]];
    }
    let r = q - prefix.iter().sum::<u32>();
    let mut xs = vec![0, r];
    for c in functionals {
        let fixed: f64 = prefix.iter().zip(c).map(|(&n, w)| n as f64 * w).sum();
        let (a, b) = (c[d - 2], c[d - 1]);
        let den = a - b;
        if den.abs() < 1e-12 {
            continue;
        }
        // fixed + a x + b (r - x) = 0
        let x = -(fixed + b * r as f64) / den;
        let window = 1e-6 + q as f64 * 1e-8 / den.abs();
        if x < -window || x > r as f64 + window {
            continue;
        }
        let lo = (x - window).floor().clamp(0.0, r as f64) as u32;
        let hi = (x + window).ceil().clamp(0.0, r as f64) as u32;
        xs.push(lo);
        xs.push(hi);
        if hi > lo + 1 {
            // A wide window: keep every point inside it.
            xs.extend(lo + 1..hi);
        }
    }
    xs.sort_unstable_by(|a, b| b.cmp(a));
    xs.dedup();
    xs.into_iter()
        .map(|x| {
            let mut c = prefix.to_vec();
            c.push(x);
            c.push(r - x);
            c
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_target(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..d).map(|_| rng.random::<f64>() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|x| x / s).collect()
    }

    #[test]
    fn small_grids() {
        let g = enumerate_quniform(2, 2).unwrap();
        assert_eq!(g.posteriors(), vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0]]);
        let g = enumerate_quniform(3, 1).unwrap();
        assert_eq!(g.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        assert_eq!(enumerate_quniform(2, 4).unwrap().len(), 5);
    }

    #[test]
    fn cardinality_and_order() {
        for d in 1..=5 {
            for q in 1..=12u32 {
                let g = enumerate_quniform(d, q).unwrap();
                assert_eq!(g.len() as f64, quniform_count(d, q));
                assert!(g.counts.windows(2).all(|w| w[0] > w[1]));
                assert!(g.counts.iter().all(|c| c.iter().sum::<u32>() == q));
            }
        }
    }

    #[test]
    fn cap_is_enforced() {
        assert!(matches!(enumerate_quniform_capped(4, 50, 1000), Err(Error::ExplosionGuard { .. })));
    }

    #[test]
    fn multinomial_cases() {
        let dist = decompose_multinomial(&[0.0, 1.0, 0.0], 5).unwrap();
        assert_eq!(dist.weights, vec![1.0]);
        assert_eq!(dist.support[0].probs(), &[0.0, 1.0, 0.0]);
        let dist = decompose_multinomial(&[0.5, 0.5], 2).unwrap();
        let expect = [0.25, 0.5, 0.25];
        for (w, e) in dist.weights.iter().zip(expect) {
            assert!((w - e).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let d = rng.random_range(1..=4);
            let q = rng.random_range(1..=8);
            let t = random_target(&mut rng, d);
            let dist = decompose_multinomial(&t, q).unwrap();
            assert!(dist.is_consistent_with(&t));
            assert!((dist.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn local_cases() {
        let dist = decompose_local(&[0.3, 0.7], 10, 2.0).unwrap();
        assert_eq!(dist.support.len(), 1);
        assert!((dist.support[0].probs()[0] - 0.3).abs() < 1e-12);
        let dist = decompose_local(&[0.35, 0.65], 10, 2.0).unwrap();
        assert_eq!(dist.support.len(), 2);
        assert!(dist.weights.iter().all(|w| (w - 0.5).abs() < 1e-9));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let d = rng.random_range(1..=4);
            let q = rng.random_range(1..=10);
            let alpha = (18.0 * d as f64 / q as f64).sqrt();
            let t = random_target(&mut rng, d);
            let dist = decompose_local(&t, q, alpha).unwrap();
            assert!(dist.is_consistent_with(&t));
            assert!(dist.support.len() <= d + 1);
            let radius = alpha * alpha / (18.0 * d as f64);
            for xi in &dist.support {
                assert!(xi.probs().iter().zip(&t).all(|(a, b)| (a - b).abs() <= radius + 1e-9));
            }
        }
    }

    #[test]
    fn local_reports_empty_hull() {
        // Radius far below the grid spacing around an off-grid target.
        assert!(matches!(decompose_local(&[0.35, 0.65], 10, 0.1), Err(Error::InfeasibleDecomposition)));
    }

    #[test]
    fn rows_cover_grid() {
        for d in 1..=4 {
            let q = 6;
            let total: usize = row_prefixes(d, q).iter().map(|p| q as usize - p.iter().sum::<u32>() as usize + 1).sum();
            if d >= 2 {
                assert_eq!(total as f64, quniform_count(d, q));
            }
        }
    }

    #[test]
    fn row_candidates_bracket_crossings() {
        // x/q - 0.37 = 0 on the single d = 2 row with q = 10 crosses at x = 3.7.
        let f = vec![vec![1.0 - 0.37, -0.37]];
        let c = row_candidates(&[], 2, 10, &f);
        let xs: Vec<u32> = c.iter().map(|v| v[0]).collect();
        assert_eq!(xs, vec![10, 4, 3, 0]);
    }
}

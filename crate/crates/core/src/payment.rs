//! Payment functions inside a fixed posterior: exact optimization by vertex
//! enumeration, linear payments, and robustification against approximate
//! best responses.

use std::collections::BTreeSet;

use itertools::Itertools;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::belief::best_response_from_values;
use crate::error::{Error, Result};
use crate::instance::Instance;

/// Default cap on the number of hyperplane subsets visited.
pub const DEFAULT_VERTEX_CAP: u64 = 2_000_000;
const MAX_CONDITION: f64 = 1e10;
const FEASIBLE_TOL: f64 = 1e-9;

/// Payments in one posterior, the action each type plays, and the seller's value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorPayment {
    pub payments: Vec<f64>,
    pub actions: Vec<usize>,
    pub value: f64,
}

/// Posterior-expected utilities: `buyer[k][a]` and `seller[a]`.
pub(crate) struct Expected {
    pub buyer: Vec<Vec<f64>>,
    pub seller: Vec<f64>,
}

impl Expected {
    pub fn new(inst: &Instance, xi: &[f64]) -> Expected {
        Expected {
            buyer: (0..inst.num_types()).map(|k| inst.buyer_values(xi, k)).collect(),
            seller: inst.seller_values(xi),
        }
    }

    /// Seller value and induced actions of payment row `pay` under eps-best responses.
    fn evaluate(&self, lambda: &[f64], pay: &[f64], eps: f64, actions: &mut [usize]) -> f64 {
        let mut value = 0.0;
        for (k, bv) in self.buyer.iter().enumerate() {
            let a = best_response_from_values(bv, &self.seller, pay, eps);
            actions[k] = a;
            value += lambda[k] * (self.seller[a] - pay[a]);
        }
        value
    }
}

/// Seller value of `pay` at `xi` when every type plays a seller-favoring eps-best response.
pub fn evaluate_payment(inst: &Instance, xi: &[f64], pay: &[f64], eps: f64) -> PosteriorPayment {
    let ex = Expected::new(inst, xi);
    let mut actions = vec![0; inst.num_types()];
    let value = ex.evaluate(&inst.type_dist, pay, eps, &mut actions);
    PosteriorPayment { payments: pay.to_vec(), actions, value }
}

#[derive(Debug, Clone, Copy)]
enum Plane {
    /// pi(a) - pi(b) = xi·u^k(b) - xi·u^k(a): type k indifferent between a and b.
    Indifference { k: usize, a: usize, b: usize },
    Zero(usize),
    Cap(usize),
}

struct Vertex {
    planes: Vec<usize>,
    inverse: Vec<f64>,
}

/// Precomputed vertex enumeration for one instance.
///
/// The hyperplane normals do not depend on the posterior, so every
/// non-singular subset is factorized once and reused for every posterior.
pub struct PaymentPlan {
    m: usize,
    cap: f64,
    planes: Vec<Plane>,
    vertices: Vec<Vertex>,
}

fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl PaymentPlan {
    pub fn new(inst: &Instance, vertex_cap: u64) -> Result<PaymentPlan> {
        let m = inst.num_actions();
        let n = inst.num_types();
        let cap = m as f64;
        let mut planes = Vec::new();
        for k in 0..n {
            for (a, b) in (0..m).tuple_combinations() {
                planes.push(Plane::Indifference { k, a, b });
            }
        }
        planes.extend((0..m).map(Plane::Zero));
        planes.extend((0..m).map(Plane::Cap));
        let subsets = binomial(planes.len() as u64, m as u64);
        if subsets > vertex_cap as f64 {
            return Err(Error::ExplosionGuard { what: "payment vertices", count: subsets, cap: vertex_cap as f64 });
        }
        let normal = |p: &Plane| {
            let mut v = vec![0.0; m];
            match *p {
                Plane::Indifference { a, b, .. } => {
                    v[a] = 1.0;
                    v[b] = -1.0;
                }
                Plane::Zero(a) | Plane::Cap(a) => v[a] = 1.0,
            }
            v
        };
        let mut vertices = Vec::new();
        for subset in (0..planes.len()).combinations(m) {
            let mat = DMatrix::from_fn(m, m, |i, j| normal(&planes[subset[i]])[j]);
            let Some(inv) = mat.clone().try_inverse() else { continue };
            let cond = one_norm(&mat) * one_norm(&inv);
            if !cond.is_finite() || cond > MAX_CONDITION {
                continue;
            }
            let inverse = (0..m * m).map(|idx| inv[(idx / m, idx % m)]).collect();
            vertices.push(Vertex { planes: subset, inverse });
        }
        Ok(PaymentPlan { m, cap, planes, vertices })
    }

    fn plane_rhs(&self, p: &Plane, ex: &Expected) -> f64 {
        match *p {
            Plane::Indifference { k, a, b } => ex.buyer[k][b] - ex.buyer[k][a],
            Plane::Zero(_) => 0.0,
            Plane::Cap(_) => self.cap,
        }
    }

    /// Seller-optimal payments in posterior `xi`.
    pub fn optimize(&self, inst: &Instance, xi: &[f64]) -> PosteriorPayment {
        let ex = Expected::new(inst, xi);
        let m = self.m;
        let lambda = &inst.type_dist;
        let rhs: Vec<f64> = self.planes.iter().map(|p| self.plane_rhs(p, &ex)).collect();
        let mut actions = vec![0; inst.num_types()];
        let mut best_pay = vec![0.0; m];
        let mut best = ex.evaluate(lambda, &best_pay, 0.0, &mut actions);
        let mut pay = vec![0.0; m];
        'vertex: for v in &self.vertices {
            for (i, p) in pay.iter_mut().enumerate() {
                let row = &v.inverse[i * m..(i + 1) * m];
                let val: f64 = row.iter().zip(&v.planes).map(|(c, &h)| c * rhs[h]).sum();
                if val < -FEASIBLE_TOL {
                    continue 'vertex;
                }
                *p = val.max(0.0);
            }
            let value = ex.evaluate(lambda, &pay, 0.0, &mut actions);
            if value > best + 1e-12 {
                best = value;
                best_pay.copy_from_slice(&pay);
            }
        }
        // Payments on actions nobody plays never help; drop them.
        ex.evaluate(lambda, &best_pay, 0.0, &mut actions);
        for (a, p) in best_pay.iter_mut().enumerate() {
            if !actions.contains(&a) {
                *p = 0.0;
            }
        }
        let value = ex.evaluate(lambda, &best_pay, 0.0, &mut actions);
        debug_assert!(best_pay.iter().all(|&p| p < self.cap));
        PosteriorPayment { payments: best_pay, actions, value }
    }

    /// Linear functionals `c` (over states) whose zero sets `c·xi = 0` separate
    /// the regions on which the optimal value is a maximum of linear functions
    /// of the posterior. Normalized and deduplicated.
    pub fn breakpoint_functionals(&self, inst: &Instance) -> Vec<Vec<f64>> {
        let d = inst.num_states();
        let m = self.m;
        let column = |u: &Vec<Vec<f64>>, a: usize| -> Vec<f64> { (0..d).map(|t| u[t][a]).collect() };
        let mut keys = BTreeSet::new();
        let mut out = Vec::new();
        let mut push = |c: Vec<f64>| {
            let scale = c.iter().fold(0.0_f64, |s, x| s.max(x.abs()));
            if scale < 1e-12 {
                return;
            }
            let lead = c.iter().copied().find(|x| x.abs() >= 1e-12 * scale).unwrap_or(1.0);
            let f = lead.signum() / scale;
            let c: Vec<f64> = c.iter().map(|x| x * f).collect();
            let key: Vec<i64> = c.iter().map(|x| (x * 1e9).round() as i64).collect();
            if keys.insert(key) {
                out.push(c);
            }
        };
        for v in &self.vertices {
            // Payments at this vertex as linear functions of the posterior.
            let rows: Vec<Vec<f64>> = v
                .planes
                .iter()
                .map(|&h| match self.planes[h] {
                    Plane::Indifference { k, a, b } => {
                        let u = &inst.buyer_utility[k];
                        (0..d).map(|t| u[t][b] - u[t][a]).collect()
                    }
                    Plane::Zero(_) => vec![0.0; d],
                    Plane::Cap(_) => vec![self.cap; d],
                })
                .collect();
            let pay: Vec<Vec<f64>> = (0..m)
                .map(|a| {
                    (0..d)
                        .map(|t| (0..m).map(|i| v.inverse[a * m + i] * rows[i][t]).sum())
                        .collect()
                })
                .collect();
            for p in &pay {
                push(p.clone());
            }
            for (a, b) in (0..m).tuple_combinations() {
                for k in 0..inst.num_types() {
                    let ua = column(&inst.buyer_utility[k], a);
                    let ub = column(&inst.buyer_utility[k], b);
                    push((0..d).map(|t| ua[t] - ub[t] + pay[a][t] - pay[b][t]).collect());
                }
                let sa = column(&inst.seller_utility, a);
                let sb = column(&inst.seller_utility, b);
                push((0..d).map(|t| sa[t] - sb[t] - pay[a][t] + pay[b][t]).collect());
            }
        }
        out
    }
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols()).map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Seller-optimal payment function in posterior `xi`.
pub fn optimal_payment_in_posterior(inst: &Instance, xi: &[f64]) -> Result<PosteriorPayment> {
    Ok(PaymentPlan::new(inst, DEFAULT_VERTEX_CAP)?.optimize(inst, xi))
}

/// Pay a fixed fraction `beta` of the seller's expected utility of each action.
pub fn linear_payment(inst: &Instance, xi: &[f64], beta: f64) -> PosteriorPayment {
    let pay: Vec<f64> = inst.seller_values(xi).iter().map(|v| beta * v).collect();
    evaluate_payment(inst, xi, &pay, 0.0)
}

/// Number of grid points `floor(1/(2 rho))`.
pub fn beta_grid_size(rho: f64) -> usize {
    (1.0 / (2.0 * rho) + 1e-12).floor() as usize
}

/// Linear-payment parameters `1 - 2^-i` for `i = 1..=floor(1/(2 rho))`.
pub fn beta_grid(rho: f64) -> Vec<f64> {
    (1..=beta_grid_size(rho)).map(|i| 1.0 - 0.5_f64.powi(i as i32)).collect()
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho <= 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("rho must lie in (0, 1/2], got {rho}")))
    }
}

/// Best linear payment over the geometric grid of parameters.
pub fn best_linear_payment(inst: &Instance, xi: &[f64], rho: f64) -> Result<(f64, PosteriorPayment)> {
    check_rho(rho)?;
    let mut best: Option<(f64, PosteriorPayment)> = None;
    for beta in beta_grid(rho) {
        let p = linear_payment(inst, xi, beta);
        if best.as_ref().is_none_or(|(_, b)| p.value > b.value) {
            best = Some((beta, p));
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// Expected surplus available in `xi`: for each type, the best total of
/// seller utility plus the type's gain over its no-payment best response.
pub fn surplus_bound(inst: &Instance, xi: &[f64]) -> f64 {
    let ex = Expected::new(inst, xi);
    let zero = vec![0.0; inst.num_actions()];
    (0..inst.num_types())
        .map(|k| {
            let bv = &ex.buyer[k];
            let b = best_response_from_values(bv, &ex.seller, &zero, 0.0);
            let best = (0..bv.len()).map(|a| ex.seller[a] + bv[a] - bv[b]).fold(f64::NEG_INFINITY, f64::max);
            inst.type_dist[k] * best
        })
        .sum()
}

/// Mix `pay` with a `sqrt(eps)` share of the seller's expected utility of each
/// action; evaluated under exact best responses.
pub fn robustify(inst: &Instance, xi: &[f64], pay: &[f64], eps: f64) -> PosteriorPayment {
    let r = eps.max(0.0).sqrt();
    let seller = inst.seller_values(xi);
    let mixed: Vec<f64> = pay.iter().zip(&seller).map(|(p, s)| (1.0 - r) * p + r * s).collect();
    evaluate_payment(inst, xi, &mixed, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::best_response;
    use crate::fixtures;
    use crate::instance::random_instance;
    use proptest::prelude::*;

    fn random_posterior(seed: u64, d: usize) -> Vec<f64> {
        random_instance(d, 1, 1, seed ^ 0x9e37, true).prior
    }

    /// Exhaustive grid over payment vectors in [0, 1]^m.
    fn grid_oracle(inst: &Instance, xi: &[f64], step: f64) -> f64 {
        let m = inst.num_actions();
        let ticks = (1.0 / step).round() as usize;
        let mut best = f64::NEG_INFINITY;
        for idx in 0..(ticks + 1).pow(m as u32) {
            let pay: Vec<f64> = (0..m).map(|a| ((idx / (ticks + 1).pow(a as u32)) % (ticks + 1)) as f64 * step).collect();
            best = best.max(evaluate_payment(inst, xi, &pay, 0.0).value);
        }
        best
    }

    #[test]
    fn illustrative_optimum() {
        let inst = fixtures::illustrative_single_type();
        for xi in [[0.5, 0.5], [1.0, 0.0], [0.2, 0.8]] {
            let p = optimal_payment_in_posterior(&inst, &xi).unwrap();
            assert!((p.payments[1] - 0.5).abs() < 1e-12 && p.payments[0] == 0.0);
            assert!((p.value - 0.5).abs() < 1e-12);
            assert_eq!(p.actions, vec![1]);
        }
    }

    #[test]
    fn zero_payment_optimal_when_aligned() {
        let mut inst = random_instance(2, 3, 2, 3, true);
        inst.buyer_utility = vec![inst.seller_utility.clone(), inst.seller_utility.clone()];
        let xi = [0.3, 0.7];
        let p = optimal_payment_in_posterior(&inst, &xi).unwrap();
        assert!(p.payments.iter().all(|&x| x == 0.0));
        let base: f64 = (0..2)
            .map(|k| inst.type_dist[k] * inst.seller_value(&xi, best_response(&inst, &xi, &[0.0; 3], k, 0.0)))
            .sum();
        assert!((p.value - base).abs() < 1e-12);
    }

    #[test]
    fn conflicting_types_match_grid() {
        for seed in 0..10 {
            let inst = random_instance(2, 2, 2, 100 + seed, true);
            let xi = random_posterior(seed, 2);
            let p = optimal_payment_in_posterior(&inst, &xi).unwrap();
            let g = grid_oracle(&inst, &xi, 0.01);
            assert!(p.value >= g - 1e-9, "vertex {} < grid {}", p.value, g);
            assert!(p.value <= g + 0.02, "vertex {} far above grid {}", p.value, g);
        }
    }

    #[test]
    fn explosion_guard() {
        let inst = random_instance(2, 4, 3, 1, true);
        assert!(matches!(PaymentPlan::new(&inst, 10), Err(Error::ExplosionGuard { .. })));
    }

    #[test]
    fn linear_payment_cases() {
        let inst = fixtures::illustrative_single_type();
        let xi = [0.5, 0.5];
        assert!(linear_payment(&inst, &xi, 0.0).payments.iter().all(|&p| p == 0.0));
        assert!(linear_payment(&inst, &xi, 1.0).value.abs() < 1e-12);
        let half = linear_payment(&inst, &xi, 0.5);
        assert_eq!(half.payments, vec![0.0, 0.5]);
        assert_eq!(half.actions, vec![1]);
        assert!((half.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn beta_grids() {
        assert_eq!(beta_grid(0.25), vec![0.5, 0.75]);
        assert_eq!(beta_grid(0.5), vec![0.5]);
        assert_eq!(beta_grid(0.125).len(), 4);
        assert!(best_linear_payment(&fixtures::illustrative_single_type(), &[0.5, 0.5], 0.7).is_err());
    }

    #[test]
    fn robustify_boundaries() {
        let inst = random_instance(3, 3, 2, 8, true);
        let xi = random_posterior(8, 3);
        let pay = [0.1, 0.0, 0.3];
        assert_eq!(robustify(&inst, &xi, &pay, 0.0).payments, pay.to_vec());
        let full = robustify(&inst, &xi, &pay, 1.0);
        for (p, s) in full.payments.iter().zip(inst.seller_values(&xi)) {
            assert!((p - s).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn vertex_enumeration_vs_grid(seed in 0u64..60, m in 2usize..4, n in 1usize..3) {
            let inst = random_instance(2, m, n, seed, true);
            let xi = random_posterior(seed, 2);
            let p = optimal_payment_in_posterior(&inst, &xi).unwrap();
            let step = if m == 2 { 0.02 } else { 0.05 };
            let g = grid_oracle(&inst, &xi, step);
            prop_assert!(p.value >= g - step);
            prop_assert!(p.value <= g + 1e-6 + m as f64 * step);
            // The claimed actions are reproduced by the best-response routine.
            for k in 0..n {
                prop_assert_eq!(best_response(&inst, &xi, &p.payments, k, 0.0), p.actions[k]);
            }
            prop_assert!(p.payments.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn linear_payment_inequality(seed in 0u64..300, which in 0usize..3) {
            let rho = [0.5, 0.25, 0.125][which];
            let inst = random_instance(3, 3, 2, seed, true);
            let xi = random_posterior(seed, 3);
            let (_, p) = best_linear_payment(&inst, &xi, rho).unwrap();
            let bound = rho * surplus_bound(&inst, &xi) - 0.5_f64.powi(beta_grid_size(rho) as i32);
            prop_assert!(p.value - bound >= -1e-9);
        }

        #[test]
        fn finer_grid_never_hurts(seed in 0u64..300) {
            let inst = random_instance(3, 3, 2, seed, true);
            let xi = random_posterior(seed, 3);
            let coarse = best_linear_payment(&inst, &xi, 0.25).unwrap().1.value;
            let fine = best_linear_payment(&inst, &xi, 0.125).unwrap().1.value;
            prop_assert!(fine >= coarse);
        }

        #[test]
        fn robust_payment_guarantee(seed in 0u64..300, eps in 0.0f64..0.2) {
            let inst = random_instance(3, 3, 2, seed, true);
            let xi = random_posterior(seed, 3);
            let pay: Vec<f64> = (0..3).map(|a| ((seed * 7 + a as u64 * 13) % 10) as f64 / 20.0).collect();
            let approx = evaluate_payment(&inst, &xi, &pay, eps);
            let robust = robustify(&inst, &xi, &pay, eps);
            prop_assert!(robust.value - (approx.value - 2.0 * eps.sqrt()) >= -1e-9);
        }
    }
}

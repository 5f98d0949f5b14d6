//! Solvers for protocols without menus.
//!
//! The grid-based solvers attach a payment row to every q-uniform posterior
//! and then pick the best consistent mixture of posteriors with one LP. The
//! exact solver for few types enumerates the price and the participating set
//! and solves an LP over action-tuple signals.

use std::collections::BTreeMap;

use itertools::Itertools;
use rayon::prelude::*;
use serde::Serialize;

use crate::belief::{best_response, best_response_no_payment, eval_nomenu, nonparticipant_value, outside_option};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::lp::{self, LinearProgram, LpStatus, Sense};
use crate::payment::{best_linear_payment, robustify, PaymentPlan, PosteriorPayment, DEFAULT_VERTEX_CAP};
use crate::protocol::{NoMenuProtocol, Signal};
use crate::quniform::{
    enumerate_quniform_capped, local_grid_size, quniform_count, row_candidates, row_prefixes, to_posterior,
    DEFAULT_QUNIFORM_CAP,
};

const ZERO_MARGINAL: f64 = 1e-9;

/// Enumeration caps shared by the solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub vertex_cap: u64,
    pub quniform_cap: u64,
    /// Cap on breakpoint candidates visited by the reduced grid search.
    pub candidate_cap: u64,
    /// Cap on action-tuple signals for the exact solver.
    pub signal_cap: u64,
    /// Search only breakpoint candidates of the grid (exact) instead of the whole grid.
    pub reduce_support: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            vertex_cap: DEFAULT_VERTEX_CAP,
            quniform_cap: DEFAULT_QUNIFORM_CAP,
            candidate_cap: 20_000_000,
            signal_cap: 4096,
            reduce_support: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FixedTypes,
    Ptas,
    Qptas,
    FixedStates,
    General,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::FixedTypes => "fixed-types",
            Method::Ptas => "ptas",
            Method::Qptas => "qptas",
            Method::FixedStates => "fixed-states",
            Method::General => "general",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Params {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<u32>,
}

/// One of the three protocols compared by the general solver.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub name: String,
    pub value: f64,
    #[serde(skip)]
    pub protocol: NoMenuProtocol,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub method: Method,
    pub params: Params,
    /// Seller's utility of `protocol`, re-evaluated from scratch.
    pub value: f64,
    pub ir_set: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lp_value: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<Candidate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected: Option<String>,
    pub protocol: NoMenuProtocol,
}

impl SolveReport {
    fn new(inst: &Instance, method: Method, params: Params, protocol: NoMenuProtocol) -> SolveReport {
        let ev = eval_nomenu(inst, &protocol);
        SolveReport {
            method,
            params,
            value: ev.utility,
            ir_set: ev.ir_set,
            lp_value: None,
            candidates: Vec::new(),
            selected: None,
            protocol,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

fn check_rho(rho: f64, max: f64) -> Result<()> {
    if rho > 0.0 && rho <= max + 1e-12 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("rho must lie in (0, {max}], got {rho}")))
    }
}

fn require_limited_liability(inst: &Instance) -> Result<()> {
    if inst.is_limited_liability() {
        Ok(())
    } else {
        Err(Error::NotLimitedLiability)
    }
}

/// `ceil(2 ln(2m / alpha) / eps^2)`.
pub fn ptas_grid_size(m: usize, alpha: f64, eps: f64) -> u32 {
    (2.0 * (2.0 * m as f64 / alpha).ln() / (eps * eps)).ceil().max(1.0) as u32
}

/// A grid posterior with the payment row chosen for it.
struct Point {
    xi: Vec<f64>,
    pay: PosteriorPayment,
}

/// Keep the vertices of the upper concave hull of `(x, value)`; `pts` is
/// sorted by `x`, strictly monotone.
fn upper_hull(pts: Vec<(f64, Point)>) -> Vec<Point> {
    let mut hull: Vec<(f64, Point)> = Vec::with_capacity(pts.len());
    for p in pts {
        while hull.len() >= 2 {
            let (x1, ref a) = hull[hull.len() - 2];
            let (x2, ref b) = hull[hull.len() - 1];
            let (v1, v2, v3) = (a.pay.value, b.pay.value, p.1.pay.value);
            // Drop the middle point when it is not strictly above the chord.
            let chord = v1 + (v3 - v1) * (x2 - x1) / (p.0 - x1);
            if v2 <= chord + 1e-13 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull.into_iter().map(|(_, p)| p).collect()
}

/// Grid posteriors worth considering and their payment rows.
///
/// With `functionals`, only breakpoint candidates along each lattice row are
/// evaluated and only the row's upper concave hull is kept. This is exact
/// when `value` is convex between consecutive candidates: any mass on a
/// dropped point can be split between the two hull points around it on the
/// same row without moving the mean or lowering the objective.
fn grid_support<F>(d: usize, q: u32, value: F, functionals: Option<&[Vec<f64>]>, cfg: &SolverConfig) -> Result<Vec<Point>>
where
    F: Fn(&[f64]) -> PosteriorPayment + Sync,
{
    match functionals {
        None => {
            let grid = enumerate_quniform_capped(d, q, cfg.quniform_cap)?;
            Ok(grid
                .counts
                .par_iter()
                .map(|c| {
                    let xi = to_posterior(c, q);
                    let pay = value(&xi);
                    Point { xi, pay }
                })
                .collect())
        }
        Some(lines) => {
            let prefixes = if d <= 2 { vec![Vec::new()] } else {
                let rows = quniform_count(d - 1, q);
                if rows > cfg.quniform_cap as f64 {
                    return Err(Error::ExplosionGuard { what: "grid rows", count: rows, cap: cfg.quniform_cap as f64 });
                }
                row_prefixes(d, q)
            };
            let estimate = prefixes.len() as f64 * (2 * lines.len() + 2) as f64;
            if estimate > cfg.candidate_cap as f64 {
                return Err(Error::ExplosionGuard {
                    what: "grid breakpoint candidates",
                    count: estimate,
                    cap: cfg.candidate_cap as f64,
                });
            }
            let rows: Vec<Vec<Point>> = prefixes
                .par_iter()
                .map(|prefix| {
                    let mut pts: Vec<(f64, Point)> = row_candidates(prefix, d, q, lines)
                        .into_iter()
                        .map(|c| {
                            let x = if d >= 2 { c[d - 2] as f64 } else { 0.0 };
                            let xi = to_posterior(&c, q);
                            let pay = value(&xi);
                            (x, Point { xi, pay })
                        })
                        .collect();
                    pts.reverse();
                    upper_hull(pts)
                })
                .collect();
            Ok(rows.into_iter().flatten().collect())
        }
    }
}

/// Best consistent mixture of the given posteriors; returns the protocol and LP value.
fn mix_posteriors(inst: &Instance, points: &[Point]) -> Result<(NoMenuProtocol, f64)> {
    let mut prog = LinearProgram::new();
    for p in points {
        prog.add_var(p.pay.value);
    }
    for t in 0..inst.num_states() {
        let row = points.iter().enumerate().filter(|(_, p)| p.xi[t] != 0.0).map(|(i, p)| (i, p.xi[t])).collect();
        prog.add_constraint(row, Sense::Eq, inst.prior[t]);
    }
    let sol = lp::solve(&prog)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::NumericalFailure(format!("posterior mixture LP reported {:?}", sol.status)));
    }
    let signals = points
        .iter()
        .zip(&sol.x)
        .filter(|(_, &w)| w > 0.0)
        .map(|(p, &w)| Signal { weight: w, posterior: p.xi.clone(), payments: p.pay.payments.clone(), label: None })
        .collect();
    Ok((NoMenuProtocol { price: 0.0, signals }, sol.objective))
}

fn grid_report(
    inst: &Instance,
    method: Method,
    params: Params,
    points: Vec<Point>,
) -> Result<SolveReport> {
    let (protocol, lp_value) = mix_posteriors(inst, &points)?;
    let mut report = SolveReport::new(inst, method, params, protocol);
    report.lp_value = Some(lp_value);
    Ok(report)
}

/// Optimal payments at every posterior of a fine grid, mixed optimally.
pub fn solve_ptas(inst: &Instance, alpha: f64, eps: f64, cfg: &SolverConfig) -> Result<SolveReport> {
    require_limited_liability(inst)?;
    positive("alpha", alpha)?;
    positive("eps", eps)?;
    let q = ptas_grid_size(inst.num_actions(), alpha, eps);
    let plan = PaymentPlan::new(inst, cfg.vertex_cap)?;
    let lines = cfg.reduce_support.then(|| plan.breakpoint_functionals(inst));
    let points = grid_support(inst.num_states(), q, |xi| plan.optimize(inst, xi), lines.as_deref(), cfg)?;
    let params = Params { alpha: Some(alpha), eps: Some(eps), q: Some(q), ..Params::default() };
    grid_report(inst, Method::Ptas, params, points)
}

/// Like the PTAS, but with the best robustified linear payment at each posterior.
pub fn solve_quasipoly(inst: &Instance, alpha: f64, eps: f64, rho: f64, cfg: &SolverConfig) -> Result<SolveReport> {
    require_limited_liability(inst)?;
    positive("alpha", alpha)?;
    positive("eps", eps)?;
    check_rho(rho, 0.5)?;
    let q = ptas_grid_size(inst.num_actions(), alpha, eps);
    let value = |xi: &[f64]| {
        let (_, lin) = best_linear_payment(inst, xi, rho).expect("rho checked");
        robustify(inst, xi, &lin.payments, eps)
    };
    let points = grid_support(inst.num_states(), q, value, None, cfg)?;
    let params = Params { alpha: Some(alpha), eps: Some(eps), rho: Some(rho), q: Some(q) };
    grid_report(inst, Method::Qptas, params, points)
}

/// Best linear payment at every posterior of the `ceil(18 d / alpha^2)` grid.
pub fn solve_fixed_states(inst: &Instance, alpha: f64, rho: f64, cfg: &SolverConfig) -> Result<SolveReport> {
    require_limited_liability(inst)?;
    positive("alpha", alpha)?;
    check_rho(rho, 0.5)?;
    let q = local_grid_size(inst.num_states(), alpha);
    let value = |xi: &[f64]| best_linear_payment(inst, xi, rho).expect("rho checked").1;
    let points = grid_support(inst.num_states(), q, value, None, cfg)?;
    let params = Params { alpha: Some(alpha), rho: Some(rho), q: Some(q), ..Params::default() };
    grid_report(inst, Method::FixedStates, params, points)
}

/// Prices `2^-i` for `i = 1..=floor(1/zeta)`, then 0.
pub fn price_grid(zeta: f64) -> Vec<f64> {
    let top = (1.0 / zeta + 1e-12).floor() as i32;
    let mut out: Vec<f64> = (1..=top).map(|i| 0.5_f64.powi(i)).collect();
    out.push(0.0);
    out
}

/// A type's gain from learning the state over acting on the prior.
pub fn information_value(inst: &Instance, k: usize) -> f64 {
    let d = inst.num_states();
    let informed: f64 = (0..d)
        .map(|t| {
            let mut xi = vec![0.0; d];
            xi[t] = 1.0;
            let b = best_response_no_payment(inst, &xi, k);
            inst.prior[t] * inst.buyer_utility[k][t][b]
        })
        .sum();
    let b = best_response_no_payment(inst, &inst.prior, k);
    informed - inst.buyer_value(&inst.prior, k, b)
}

/// Full revelation at the grid price collecting the most from the types
/// whose information value (capped by budget) rounds down to it.
pub fn full_revelation_candidate(inst: &Instance, zeta: f64) -> NoMenuProtocol {
    let grid = price_grid(zeta);
    let mut revenue = vec![0.0; grid.len()];
    for k in 0..inst.num_types() {
        let cap = information_value(inst, k).min(inst.budgets[k]);
        let i = grid.iter().position(|&p| p <= cap + 1e-12).expect("grid ends at 0");
        revenue[i] += inst.type_dist[k] * grid[i];
    }
    let best = (0..grid.len()).fold(0, |b, i| if revenue[i] > revenue[b] { i } else { b });
    NoMenuProtocol::full_revelation(inst, grid[best])
}

/// Best of: no information; a limited-liability solver run with budgets
/// zeroed; full revelation at a grid price.
///
/// The user-facing `rho` is at most 1/6. The limited-liability candidate is
/// run at `3 rho` and the price grid uses `zeta = 6 rho`, so the combined
/// guarantee is `rho OPT` minus the additive terms of the two candidates.
pub fn solve_general(inst: &Instance, alpha: f64, rho: f64, cfg: &SolverConfig) -> Result<SolveReport> {
    positive("alpha", alpha)?;
    check_rho(rho, 1.0 / 6.0)?;
    let inner_rho = 3.0 * rho;
    let zeta = 6.0 * rho;
    let ll = inst.with_zero_budgets();
    let d = inst.num_states();
    let q = local_grid_size(d, alpha);
    let sub = if (q as f64).powi(d as i32) <= cfg.quniform_cap as f64 {
        solve_fixed_states(&ll, alpha, inner_rho, cfg)?
    } else {
        solve_quasipoly(&ll, alpha / 2.0, (alpha / 4.0).powi(2), inner_rho, cfg)?
    };
    let named = [
        ("no-information", NoMenuProtocol::no_information(inst)),
        ("limited-liability", sub.protocol),
        ("full-revelation", full_revelation_candidate(inst, zeta)),
    ];
    let candidates: Vec<Candidate> = named
        .into_iter()
        .map(|(name, protocol)| Candidate { name: name.into(), value: eval_nomenu(inst, &protocol).utility, protocol })
        .collect();
    let best = (0..3).fold(0, |b, i| if candidates[i].value > candidates[b].value { i } else { b });
    let params = Params { alpha: Some(alpha), rho: Some(rho), q: sub.params.q, ..Params::default() };
    let mut report = SolveReport::new(inst, Method::General, params, candidates[best].protocol.clone());
    report.selected = Some(candidates[best].name.clone());
    report.candidates = candidates;
    Ok(report)
}

/// All action tuples, one action per type, in lexicographic order.
pub fn action_tuples(m: usize, n: usize) -> Vec<Vec<usize>> {
    (0..n).map(|_| 0..m).multi_cartesian_product().collect()
}

struct TupleLayout {
    tuples: Vec<Vec<usize>>,
    /// Distinct actions of each tuple; `l` variables exist only for these.
    acts: Vec<Vec<usize>>,
    d: usize,
    l_base: usize,
    l_offset: Vec<usize>,
}

impl TupleLayout {
    fn new(inst: &Instance) -> TupleLayout {
        let tuples = action_tuples(inst.num_actions(), inst.num_types());
        let acts: Vec<Vec<usize>> = tuples.iter().map(|t| t.iter().copied().sorted().dedup().collect()).collect();
        let d = inst.num_states();
        let l_base = d * tuples.len();
        let mut l_offset = Vec::with_capacity(tuples.len());
        let mut next = l_base;
        for a in &acts {
            l_offset.push(next);
            next += a.len();
        }
        TupleLayout { tuples, acts, d, l_base, l_offset }
    }

    fn phi(&self, t: usize, s: usize) -> usize {
        t * self.tuples.len() + s
    }

    fn l(&self, s: usize, a: usize) -> Option<usize> {
        self.acts[s].iter().position(|&x| x == a).map(|i| self.l_offset[s] + i)
    }

    fn num_vars(&self) -> usize {
        self.l_offset.last().map_or(self.l_base, |o| o + self.acts.last().unwrap().len())
    }
}

/// LP for a fixed price and participating set. Payments on actions outside a
/// signal's tuple are fixed at zero, which only relaxes obedience.
/// Obedience is imposed for every type: labels of non-participants are free,
/// so labelling them with their best responses loses nothing and makes the
/// non-participation constraint exact.
fn fixed_types_lp(inst: &Instance, lay: &TupleLayout, price: f64, members: &[bool]) -> LinearProgram {
    let (d, n) = (lay.d, inst.num_types());
    let mu = &inst.prior;
    let mut prog = LinearProgram::new();
    for _ in 0..lay.num_vars() {
        prog.add_var(0.0);
    }
    for (s, tuple) in lay.tuples.iter().enumerate() {
        for k in (0..n).filter(|&k| members[k]) {
            let lam = inst.type_dist[k];
            let a = tuple[k];
            for t in 0..d {
                let v = lay.phi(t, s);
                prog.set_objective(v, prog.objective()[v] + lam * mu[t] * inst.seller_utility[t][a]);
            }
            let l = lay.l(s, a).expect("own action present");
            prog.set_objective(l, prog.objective()[l] - lam);
        }
    }
    // Type k's expected utility from participating, before the price.
    let participation = |k: usize| -> Vec<(usize, f64)> {
        let mut c = Vec::new();
        for (s, tuple) in lay.tuples.iter().enumerate() {
            let a = tuple[k];
            c.extend((0..d).map(|t| (lay.phi(t, s), mu[t] * inst.buyer_utility[k][t][a])));
            c.push((lay.l(s, a).expect("own action present"), 1.0));
        }
        c
    };
    for (s, tuple) in lay.tuples.iter().enumerate() {
        for k in 0..n {
            let a = tuple[k];
            for b in (0..inst.num_actions()).filter(|&b| b != a) {
                let mut c: Vec<(usize, f64)> = (0..d)
                    .map(|t| (lay.phi(t, s), mu[t] * (inst.buyer_utility[k][t][a] - inst.buyer_utility[k][t][b])))
                    .collect();
                c.push((lay.l(s, a).unwrap(), 1.0));
                if let Some(lb) = lay.l(s, b) {
                    c.push((lb, -1.0));
                }
                prog.add_constraint(c, Sense::Ge, 0.0);
            }
        }
    }
    for k in 0..n {
        let outside = outside_option(inst, k);
        if members[k] {
            prog.add_constraint(participation(k), Sense::Ge, price + outside);
        } else if inst.budgets[k] >= price {
            prog.add_constraint(participation(k), Sense::Le, price + outside);
        }
    }
    for t in 0..d {
        prog.add_constraint((0..lay.tuples.len()).map(|s| (lay.phi(t, s), 1.0)).collect(), Sense::Eq, 1.0);
    }
    prog
}

/// Turn an LP solution into a protocol. Payment mass on tuples that are never
/// sent is moved, uniformly over actions, onto the most likely tuple.
fn recover_fixed_types(inst: &Instance, lay: &TupleLayout, price: f64, x: &[f64]) -> NoMenuProtocol {
    let (d, m) = (lay.d, inst.num_actions());
    let mu = &inst.prior;
    let ns = lay.tuples.len();
    let mut phi: Vec<Vec<f64>> = (0..d).map(|t| (0..ns).map(|s| x[lay.phi(t, s)].max(0.0)).collect()).collect();
    for row in phi.iter_mut() {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    let mut l: Vec<Vec<f64>> = (0..ns)
        .map(|s| (0..m).map(|a| lay.l(s, a).map_or(0.0, |i| x[i].max(0.0))).collect())
        .collect();
    let marg: Vec<f64> = (0..ns).map(|s| (0..d).map(|t| mu[t] * phi[t][s]).sum()).collect();
    let target = (0..ns).fold(0, |b, s| if marg[s] > marg[b] { s } else { b });
    for s in 0..ns {
        if marg[s] <= ZERO_MARGINAL && s != target {
            let shift = l[s].iter().copied().fold(0.0, f64::max);
            if shift > 0.0 {
                l[s].iter_mut().for_each(|v| *v = 0.0);
                l[target].iter_mut().for_each(|v| *v += shift);
            }
        }
    }
    let payments: Vec<Vec<f64>> = (0..ns)
        .map(|s| {
            (0..m)
                .map(|a| if marg[s] > ZERO_MARGINAL && lay.acts[s].contains(&a) { l[s][a] / marg[s] } else { 0.0 })
                .collect()
        })
        .collect();
    NoMenuProtocol::from_signal_table(mu, &phi, price, &payments, Some(&lay.tuples))
}

/// Optimal LP value (constants included) and recovered protocol for one
/// price and participating set; `None` when the set cannot be realized.
fn fixed_types_case(
    inst: &Instance,
    lay: &TupleLayout,
    price: f64,
    members: &[bool],
) -> Result<Option<(f64, NoMenuProtocol)>> {
    let prog = fixed_types_lp(inst, lay, price, members);
    let sol = lp::solve(&prog)?;
    if sol.status != LpStatus::Optimal {
        return Ok(None);
    }
    let constant: f64 = (0..inst.num_types())
        .map(|k| inst.type_dist[k] * if members[k] { price } else { nonparticipant_value(inst, k) })
        .sum();
    Ok(Some((sol.objective + constant, recover_fixed_types(inst, lay, price, &sol.x))))
}

/// [`fixed_types_case`] for callers without a layout.
pub fn solve_fixed_types_case(inst: &Instance, price: f64, members: &[bool]) -> Result<Option<(f64, NoMenuProtocol)>> {
    fixed_types_case(inst, &TupleLayout::new(inst), price, members)
}

/// Exact optimum without menus for a small number of types.
pub fn solve_fixed_types(inst: &Instance, cfg: &SolverConfig) -> Result<SolveReport> {
    let (m, n) = (inst.num_actions(), inst.num_types());
    let signals = (m as f64).powi(n as i32);
    if signals > cfg.signal_cap as f64 {
        return Err(Error::ExplosionGuard { what: "action-tuple signals", count: signals, cap: cfg.signal_cap as f64 });
    }
    let lay = TupleLayout::new(inst);
    let prices: Vec<f64> = inst.budgets.iter().copied().sorted_by(f64::total_cmp).dedup().collect();
    let mut cases = Vec::new();
    for &p in &prices {
        let eligible: Vec<usize> = (0..n).filter(|&k| inst.budgets[k] >= p).collect();
        for r in eligible.iter().copied().powerset() {
            let mut members = vec![false; n];
            r.iter().for_each(|&k| members[k] = true);
            cases.push((p, members));
        }
    }
    let outcomes: Vec<Result<Option<(f64, NoMenuProtocol)>>> =
        cases.par_iter().map(|(p, members)| fixed_types_case(inst, &lay, *p, members)).collect();
    let mut best: Option<(f64, f64, NoMenuProtocol)> = None;
    for o in outcomes {
        if let Some((lp_value, proto)) = o? {
            let value = eval_nomenu(inst, &proto).utility;
            if best.as_ref().is_none_or(|(v, _, _)| value > *v) {
                best = Some((value, lp_value, proto));
            }
        }
    }
    let (_, lp_value, protocol) = best.ok_or_else(|| Error::NumericalFailure("no feasible price and set".into()))?;
    let mut report = SolveReport::new(inst, Method::FixedTypes, Params::default(), protocol);
    report.lp_value = Some(lp_value);
    Ok(report)
}

/// Merge signals with the same best-response profile and move the price to a
/// budget, compensating through payments so that nobody's utility changes.
pub fn normalize_generalized_direct(inst: &Instance, proto: &NoMenuProtocol) -> NoMenuProtocol {
    let n = inst.num_types();
    let mut groups: BTreeMap<Vec<usize>, Vec<&Signal>> = BTreeMap::new();
    for s in proto.signals.iter().filter(|s| s.weight > 0.0) {
        let profile: Vec<usize> = (0..n).map(|k| best_response(inst, &s.posterior, &s.payments, k, 0.0)).collect();
        groups.entry(profile).or_default().push(s);
    }
    let mut signals: Vec<Signal> = groups
        .into_iter()
        .map(|(profile, group)| {
            if let [one] = group.as_slice() {
                return Signal { label: Some(profile), ..(*one).clone() };
            }
            let weight: f64 = group.iter().map(|s| s.weight).sum();
            let avg = |f: &dyn Fn(&Signal) -> &Vec<f64>| -> Vec<f64> {
                let len = f(group[0]).len();
                (0..len).map(|i| group.iter().map(|s| s.weight * f(s)[i]).sum::<f64>() / weight).collect()
            };
            Signal { weight, posterior: avg(&|s| &s.posterior), payments: avg(&|s| &s.payments), label: Some(profile) }
        })
        .collect();
    let ir = eval_nomenu(inst, proto).ir_set;
    let anchor = if ir.is_empty() {
        inst.budgets.iter().copied().filter(|&b| b >= proto.price).min_by(f64::total_cmp)
    } else {
        ir.iter().map(|&k| inst.budgets[k]).min_by(f64::total_cmp)
    };
    match anchor {
        Some(b) => {
            let shift = b - proto.price;
            if shift != 0.0 {
                for s in signals.iter_mut() {
                    s.payments.iter_mut().for_each(|p| *p += shift);
                }
            }
            NoMenuProtocol { price: b, signals }
        }
        None => {
            // Nobody can afford the price: only the non-participation value counts.
            let top = inst.budgets.iter().copied().fold(0.0, f64::max);
            signals = vec![Signal {
                weight: 1.0,
                posterior: inst.prior.clone(),
                payments: vec![0.0; inst.num_actions()],
                label: Some((0..n).map(|k| best_response_no_payment(inst, &inst.prior, k)).collect()),
            }];
            NoMenuProtocol { price: top, signals }
        }
    }
}

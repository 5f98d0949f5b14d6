//! Brute-force reference values on small instances and an independent
//! certificate checker.
//!
//! `certify` deliberately re-derives posteriors, best responses and utilities
//! with its own code so that a bug in the shared evaluation helpers cannot
//! hide a solver bug.

use std::collections::HashMap;

use itertools::Itertools;
use serde::Serialize;

use crate::belief::{best_response_from_values, eval_menu, eval_nomenu, outside_option};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::payment::{PaymentPlan, PosteriorPayment, DEFAULT_VERTEX_CAP};
use crate::protocol::{MenuEntry, MenuProtocol, NoMenuProtocol, Signal};

const SCHEME_LADDER: [f64; 3] = [0.25, 0.5, 1.0];
const PAYMENT_LADDER: [f64; 4] = [0.05, 0.25, 0.5, 1.0];

/// Resolution and size limits of a brute-force search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    /// Scheme entries are multiples of this step.
    pub scheme_step: f64,
    /// Payments are multiples of this step in `[0, 1]`.
    pub payment_step: f64,
    /// Cap on candidate entries per type (menus) or schemes (no menus).
    pub max_per_type: u64,
    /// Cap on the product of per-type entry counts (menus).
    pub max_joint: f64,
    /// Cap on scheme-price pairs (no menus).
    pub max_schemes: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { scheme_step: 0.25, payment_step: 0.05, max_per_type: 50_000, max_joint: 1e9, max_schemes: 2e6 }
    }
}

fn ticks(step: f64) -> usize {
    (1.0 / step).round() as usize
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Number of distributions over `parts` outcomes with entries on the grid.
fn simplex_points(step: f64, parts: usize) -> f64 {
    binomial(ticks(step) + parts - 1, parts - 1)
}

impl GridSpec {
    /// Discretization error bound `m * payment_step + d m n * scheme_step`.
    pub fn slack(&self, inst: &Instance) -> f64 {
        let (d, m, n) = (inst.num_states() as f64, inst.num_actions() as f64, inst.num_types() as f64);
        m * self.payment_step + d * m * n * self.scheme_step
    }

    /// Upper bound on entries per type for the menu search: payment levels
    /// (grid plus the budget) on each recommended action of each scheme.
    pub fn menu_per_type(&self, inst: &Instance) -> f64 {
        let (d, m) = (inst.num_states(), inst.num_actions());
        let rows = simplex_points(self.scheme_step, m);
        if rows.powi(d as i32) > 1e6 {
            return f64::INFINITY;
        }
        let rows = simplex_grid(self.scheme_step, m);
        let levels = (ticks(self.payment_step) + 2) as f64;
        let mut total = 0.0;
        for_each_product(d, &rows, |scheme| {
            let support = (0..m).filter(|&a| scheme.iter().any(|r| r[a] > 0.0)).count();
            total += levels.powi(support as i32);
        });
        total
    }

    /// Scheme-price pairs for the no-menu search.
    pub fn nomenu_count(&self, inst: &Instance) -> f64 {
        let tuples = inst.num_actions().pow(inst.num_types() as u32);
        let schemes = simplex_points(self.scheme_step, tuples).powi(inst.num_states() as i32);
        schemes * (inst.budgets.len() + 1) as f64
    }

    fn menu_fits(&self, inst: &Instance) -> bool {
        let per = self.menu_per_type(inst);
        per <= self.max_per_type as f64 && per.powi(inst.num_types() as i32) <= self.max_joint
    }

    /// Finest ladder grid within the caps for the menu search.
    pub fn fit_menu(inst: &Instance) -> GridSpec {
        let base = GridSpec::default();
        let mut options: Vec<GridSpec> = SCHEME_LADDER
            .iter()
            .cartesian_product(PAYMENT_LADDER.iter())
            .map(|(&s, &p)| GridSpec { scheme_step: s, payment_step: p, ..base })
            .collect();
        options.sort_by(|a, b| a.slack(inst).total_cmp(&b.slack(inst)));
        options.into_iter().find(|g| g.menu_fits(inst)).unwrap_or(GridSpec { scheme_step: 1.0, payment_step: 1.0, ..base })
    }

    /// Finest ladder scheme step within the caps for the no-menu search.
    pub fn fit_nomenu(inst: &Instance) -> GridSpec {
        let base = GridSpec::default();
        SCHEME_LADDER
            .iter()
            .map(|&s| GridSpec { scheme_step: s, ..base })
            .find(|g| g.nomenu_count(inst) <= g.max_schemes)
            .unwrap_or(GridSpec { scheme_step: 1.0, ..base })
    }
}

/// Every distribution over `parts` outcomes with entries `k * step`.
fn simplex_grid(step: f64, parts: usize) -> Vec<Vec<f64>> {
    let total = ticks(step);
    let mut out = Vec::new();
    let mut cur = vec![0usize; parts];
    fn rec(cur: &mut [usize], i: usize, left: usize, total: usize, out: &mut Vec<Vec<f64>>) {
        if i + 1 == cur.len() {
            cur[i] = left;
            out.push(cur.iter().map(|&c| c as f64 / total as f64).collect());
            return;
        }
        for c in (0..=left).rev() {
            cur[i] = c;
            rec(cur, i + 1, left - c, total, out);
        }
    }
    rec(&mut cur, 0, total, total, &mut out);
    out
}

/// Calls `f` on every combination of one element per slot.
fn for_each_product<T>(slots: usize, options: &[T], mut f: impl FnMut(&[&T])) {
    if options.is_empty() {
        return;
    }
    let mut idx = vec![0usize; slots];
    loop {
        let pick: Vec<&T> = idx.iter().map(|&i| &options[i]).collect();
        f(&pick);
        let mut pos = slots;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < options.len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult<P> {
    pub value: f64,
    pub protocol: P,
    pub grid: GridSpec,
    pub slack: f64,
}

/// Best protocol without menus over grid schemes on action tuples, prices in
/// `budgets + {0}`, and payments that are per-posterior optimal, zero, or
/// optimal plus a refund of the price.
pub fn brute_force_nomenu(inst: &Instance, grid: &GridSpec) -> Result<OracleResult<NoMenuProtocol>> {
    let count = grid.nomenu_count(inst);
    if count > grid.max_schemes {
        return Err(Error::ExplosionGuard { what: "oracle schemes", count, cap: grid.max_schemes });
    }
    let (d, m, n) = (inst.num_states(), inst.num_actions(), inst.num_types());
    let tuples = m.pow(n as u32);
    let rows = simplex_grid(grid.scheme_step, tuples);
    let plan = PaymentPlan::new(inst, DEFAULT_VERTEX_CAP)?;
    let mut cache: HashMap<Vec<i64>, PosteriorPayment> = HashMap::new();
    let mut prices: Vec<f64> = inst.budgets.clone();
    prices.push(0.0);
    let prices: Vec<f64> = prices.into_iter().sorted_by(f64::total_cmp).dedup().collect();
    let mu = &inst.prior;
    let mut best: Option<(f64, NoMenuProtocol)> = None;
    for_each_product(d, &rows, |scheme| {
        let mut signals = Vec::new();
        for s in 0..tuples {
            let joint: Vec<f64> = (0..d).map(|t| mu[t] * scheme[t][s]).collect();
            let mass: f64 = joint.iter().sum();
            if mass <= 0.0 {
                continue;
            }
            let xi: Vec<f64> = joint.iter().map(|x| x / mass).collect();
            let key: Vec<i64> = xi.iter().map(|x| (x * 1e12).round() as i64).collect();
            let pay = cache.entry(key).or_insert_with(|| plan.optimize(inst, &xi)).payments.clone();
            signals.push(Signal { weight: mass, posterior: xi, payments: pay, label: None });
        }
        for &p in &prices {
            let optimal = NoMenuProtocol { price: p, signals: signals.clone() };
            let mut zero = optimal.clone();
            zero.signals.iter_mut().for_each(|s| s.payments = vec![0.0; m]);
            let mut refund = optimal.clone();
            refund.signals.iter_mut().for_each(|s| s.payments.iter_mut().for_each(|x| *x += p));
            for proto in [optimal, zero, refund] {
                let v = eval_nomenu(inst, &proto).utility;
                if best.as_ref().is_none_or(|(b, _)| v > *b + 1e-12) {
                    best = Some((v, proto));
                }
            }
        }
    });
    let (value, protocol) = best.expect("at least one scheme");
    Ok(OracleResult { value, protocol, grid: *grid, slack: grid.slack(inst) })
}

/// One menu entry evaluated for every type.
struct EntryCandidate {
    entry: MenuEntry,
    /// Seller's value when the owner takes it, price included.
    seller: f64,
    /// Each type's utility from taking it, net of the price.
    utility: Vec<f64>,
}

fn entry_values(inst: &Instance, entry: &MenuEntry, j: usize) -> (f64, f64) {
    let m = inst.num_actions();
    let (mut buyer, mut seller) = (0.0, 0.0);
    for a in 0..m {
        let joint: Vec<f64> = inst.prior.iter().zip(&entry.scheme).map(|(p, row)| p * row[a]).collect();
        let mass: f64 = joint.iter().sum();
        if mass <= 0.0 {
            continue;
        }
        let xi: Vec<f64> = joint.iter().map(|x| x / mass).collect();
        let mut pay = vec![0.0; m];
        pay[a] = entry.payments[a];
        let bv = inst.buyer_values(&xi, j);
        let sv = inst.seller_values(&xi);
        let b = best_response_from_values(&bv, &sv, &pay, 0.0);
        buyer += mass * (bv[b] + pay[b]);
        seller += mass * (sv[b] - pay[b]);
    }
    (buyer, seller)
}

/// Best IC and IR menu over grid schemes and grid payments (plus the type's
/// budget as a level) with prices equal to budgets, found by depth-first search with value-bound pruning.
pub fn brute_force_menu(inst: &Instance, grid: &GridSpec) -> Result<OracleResult<MenuProtocol>> {
    let per = grid.menu_per_type(inst);
    let n = inst.num_types();
    if per > grid.max_per_type as f64 || per.powi(n as i32) > grid.max_joint {
        return Err(Error::ExplosionGuard { what: "oracle menu entries", count: per.powi(n as i32), cap: grid.max_joint });
    }
    let (d, m) = (inst.num_states(), inst.num_actions());
    let rows = simplex_grid(grid.scheme_step, m);
    let grid_levels: Vec<f64> = (0..=ticks(grid.payment_step)).map(|i| i as f64 * grid.payment_step).collect();
    let outside: Vec<f64> = (0..n).map(|k| outside_option(inst, k)).collect();
    let tol = crate::belief::CONSTRAINT_TOL;
    let mut cands: Vec<Vec<EntryCandidate>> = Vec::with_capacity(n);
    for k in 0..n {
        let price = inst.budgets[k];
        // Paying back the price on the uninformed action keeps an IR entry on every grid.
        let mut levels = grid_levels.clone();
        if !levels.iter().any(|&l| (l - price).abs() < 1e-12) {
            levels.push(price);
        }
        let mut list = Vec::new();
        for_each_product(d, &rows, |scheme| {
            let scheme: Vec<Vec<f64>> = scheme.iter().map(|r| (*r).clone()).collect();
            let marg: Vec<f64> = (0..m).map(|a| (0..d).map(|t| inst.prior[t] * scheme[t][a]).sum()).collect();
            for_each_product(m, &levels, |pay| {
                // Payments on actions never recommended change nothing.
                if (0..m).any(|a| marg[a] <= 0.0 && *pay[a] != 0.0) {
                    return;
                }
                let entry = MenuEntry { scheme: scheme.clone(), price, payments: pay.iter().map(|p| **p).collect() };
                let (own, seller) = entry_values(inst, &entry, k);
                if own - price < outside[k] - tol {
                    return;
                }
                let utility = (0..n)
                    .map(|j| if j == k { own - price } else { entry_values(inst, &entry, j).0 - price })
                    .collect();
                list.push(EntryCandidate { entry, seller: seller + price, utility });
            });
        });
        list.sort_by(|a, b| b.seller.total_cmp(&a.seller));
        cands.push(list);
    }
    let best_rest: Vec<f64> = (0..=n)
        .map(|k| (k..n).map(|j| inst.type_dist[j] * cands[j].first().map_or(0.0, |c| c.seller)).sum())
        .collect();
    let mut best_value = f64::NEG_INFINITY;
    let mut best_pick: Option<Vec<usize>> = None;
    let mut pick = Vec::with_capacity(n);
    search(inst, &cands, &best_rest, tol, 0, 0.0, &mut pick, &mut best_value, &mut best_pick);
    let pick = best_pick.ok_or_else(|| Error::NumericalFailure("no IC and IR grid menu".into()))?;
    let protocol = MenuProtocol { entries: pick.iter().enumerate().map(|(k, &i)| cands[k][i].entry.clone()).collect() };
    let value = eval_menu(inst, &protocol).utility;
    Ok(OracleResult { value, protocol, grid: *grid, slack: grid.slack(inst) })
}

#[allow(clippy::too_many_arguments)]
fn search(
    inst: &Instance,
    cands: &[Vec<EntryCandidate>],
    best_rest: &[f64],
    tol: f64,
    k: usize,
    value: f64,
    pick: &mut Vec<usize>,
    best_value: &mut f64,
    best_pick: &mut Option<Vec<usize>>,
) {
    let n = cands.len();
    if k == n {
        if value > *best_value + 1e-12 {
            *best_value = value;
            *best_pick = Some(pick.clone());
        }
        return;
    }
    for (i, c) in cands[k].iter().enumerate() {
        let v = value + inst.type_dist[k] * c.seller;
        if v + best_rest[k + 1] <= *best_value + 1e-12 {
            break;
        }
        let compatible = pick.iter().enumerate().all(|(j, &pj)| {
            let other = &cands[j][pj];
            other.utility[j] >= c.utility[j] - tol && c.utility[k] >= other.utility[k] - tol
        });
        if compatible {
            pick.push(i);
            search(inst, cands, best_rest, tol, k + 1, v, pick, best_value, best_pick);
            pick.pop();
        }
    }
}

/// Pass/fail result of one family of constraints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Smallest slack over the family; negative means violated.
    pub worst_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertReport {
    pub passed: bool,
    pub checks: Vec<Check>,
    /// Seller's utility recomputed independently.
    pub utility: f64,
}

/// Tolerance for certificate checks.
pub const CERT_TOL: f64 = 1e-7;

struct Checks(Vec<Check>);

impl Checks {
    fn add(&mut self, name: &'static str, slacks: impl IntoIterator<Item = f64>, tol: f64) {
        let worst = slacks.into_iter().fold(f64::INFINITY, f64::min);
        let worst = if worst.is_finite() { worst + 0.0 } else { 0.0 };
        self.0.push(Check { name, passed: worst >= -tol, worst_slack: worst });
    }

    fn report(self, utility: f64) -> CertReport {
        CertReport { passed: self.0.iter().all(|c| c.passed), checks: self.0, utility }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn column(u: &[Vec<f64>], a: usize) -> Vec<f64> {
    u.iter().map(|row| row[a]).collect()
}

/// Independent best response: highest buyer value within 1e-9, then highest
/// seller value net of payment, then lowest index.
fn respond(buyer: &[f64], seller: &[f64]) -> usize {
    let top = buyer.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut pick = 0;
    let mut pick_val = f64::NEG_INFINITY;
    for a in 0..buyer.len() {
        if buyer[a] >= top - 1e-9 && seller[a] > pick_val {
            pick = a;
            pick_val = seller[a];
        }
    }
    pick
}

/// Unnormalized expected utilities at a signal with joint mass `joint[t]`.
fn masses(inst: &Instance, joint: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
    let m = inst.num_actions();
    let buyer = (0..m).map(|a| dot(joint, &column(&inst.buyer_utility[k], a))).collect();
    let seller = (0..m).map(|a| dot(joint, &column(&inst.seller_utility, a))).collect();
    (buyer, seller)
}

fn prior_action(inst: &Instance, k: usize) -> (f64, f64) {
    let (b, s) = masses(inst, &inst.prior, k);
    let a = respond(&b, &s);
    (b[a], s[a])
}

pub enum ProtocolRef<'a> {
    Menu(&'a MenuProtocol),
    NoMenu { protocol: &'a NoMenuProtocol, claimed_ir: Option<&'a [usize]> },
}

/// Re-check every constraint of a protocol from scratch.
pub fn certify(inst: &Instance, protocol: ProtocolRef<'_>) -> CertReport {
    match protocol {
        ProtocolRef::Menu(p) => certify_menu(inst, p),
        ProtocolRef::NoMenu { protocol, claimed_ir } => certify_nomenu(inst, protocol, claimed_ir),
    }
}

/// Utility of type `k` taking entry `e` (before price) and the seller's value.
fn menu_take(inst: &Instance, e: &MenuEntry, k: usize) -> (f64, f64) {
    let m = inst.num_actions();
    let (mut buyer, mut seller) = (0.0, 0.0);
    for a in 0..m {
        let joint: Vec<f64> = (0..inst.num_states()).map(|t| inst.prior[t] * e.scheme[t][a]).collect();
        let mass: f64 = joint.iter().sum();
        if mass <= 0.0 {
            continue;
        }
        let (mut b, mut s) = masses(inst, &joint, k);
        // Per unit of mass so that ties are judged on the posterior scale.
        b.iter_mut().for_each(|x| *x /= mass);
        s.iter_mut().for_each(|x| *x /= mass);
        b[a] += e.payments[a];
        s[a] -= e.payments[a];
        let r = respond(&b, &s);
        buyer += mass * b[r];
        seller += mass * s[r];
    }
    (buyer, seller)
}

fn certify_menu(inst: &Instance, p: &MenuProtocol) -> CertReport {
    let (d, m, n) = (inst.num_states(), inst.num_actions(), inst.num_types());
    let mut c = Checks(Vec::new());
    c.add(
        "scheme",
        p.entries.iter().flat_map(|e| {
            e.scheme.iter().flat_map(|row| {
                let s: f64 = row.iter().sum();
                row.iter().copied().chain([-(s - 1.0).abs()])
            })
        }),
        1e-9,
    );
    c.add("payments", p.entries.iter().flat_map(|e| e.payments.iter().copied().chain([e.price])), 0.0);
    c.add("budget", p.entries.iter().zip(&inst.budgets).map(|(e, b)| b - e.price), 0.0);
    let mut persuasive = Vec::new();
    for (k, e) in p.entries.iter().enumerate() {
        for a in 0..m {
            let joint: Vec<f64> = (0..d).map(|t| inst.prior[t] * e.scheme[t][a]).collect();
            let mass: f64 = joint.iter().sum();
            if mass <= 0.0 {
                continue;
            }
            let (b, _) = masses(inst, &joint, k);
            for a2 in (0..m).filter(|&x| x != a) {
                persuasive.push(b[a] + mass * e.payments[a] - b[a2]);
            }
        }
    }
    c.add("persuasiveness", persuasive, CERT_TOL);
    let own: Vec<(f64, f64)> = (0..n).map(|k| menu_take(inst, &p.entries[k], k)).collect();
    c.add("ir", (0..n).map(|k| own[k].0 - p.entries[k].price - prior_action(inst, k).0), CERT_TOL);
    let mut ic = Vec::new();
    for k in 0..n {
        for j in (0..n).filter(|&j| j != k) {
            let dev = menu_take(inst, &p.entries[j], k).0 - p.entries[j].price;
            ic.push(own[k].0 - p.entries[k].price - dev);
        }
    }
    c.add("ic", ic, CERT_TOL);
    let utility = (0..n).map(|k| inst.type_dist[k] * (own[k].1 + p.entries[k].price)).sum();
    c.report(utility)
}

fn certify_nomenu(inst: &Instance, p: &NoMenuProtocol, claimed: Option<&[usize]>) -> CertReport {
    let (d, m, n) = (inst.num_states(), inst.num_actions(), inst.num_types());
    let mut c = Checks(Vec::new());
    let total: f64 = p.signals.iter().map(|s| s.weight).sum();
    let mean: Vec<f64> = (0..d).map(|t| p.signals.iter().map(|s| s.weight * s.posterior[t]).sum()).collect();
    c.add(
        "consistency",
        p.signals
            .iter()
            .map(|s| s.weight)
            .chain([-(total - 1.0).abs()])
            .chain(mean.iter().zip(&inst.prior).map(|(a, b)| -(a - b).abs()))
            .chain(p.signals.iter().map(|s| -(s.posterior.iter().sum::<f64>() - 1.0).abs())),
        1e-9,
    );
    c.add("payments", p.signals.iter().flat_map(|s| s.payments.iter().copied()).chain([p.price]), 0.0);
    let mut persuasive = Vec::new();
    for s in &p.signals {
        let Some(label) = &s.label else { continue };
        for k in 0..n {
            let joint: Vec<f64> = s.posterior.iter().map(|x| x * s.weight).collect();
            let (b, _) = masses(inst, &joint, k);
            let a = label[k];
            for a2 in (0..m).filter(|&x| x != a) {
                persuasive.push(b[a] + s.weight * s.payments[a] - b[a2] - s.weight * s.payments[a2]);
            }
        }
    }
    c.add("persuasiveness", persuasive, CERT_TOL);
    // Participation, resolving indifference toward the seller.
    let mut utility = 0.0;
    let mut ir = Vec::new();
    let mut inside = Vec::with_capacity(n);
    for k in 0..n {
        let (mut bin, mut sin) = (-p.price, p.price);
        for s in &p.signals {
            let (mut b, mut sv) = masses(inst, &s.posterior, k);
            for a in 0..m {
                b[a] += s.payments[a];
                sv[a] -= s.payments[a];
            }
            let r = respond(&b, &sv);
            bin += s.weight * b[r];
            sin += s.weight * sv[r];
        }
        let (bout, sout) = prior_action(inst, k);
        let affordable = inst.budgets[k] >= p.price;
        let joins = affordable && (bin > bout + 1e-9 || (bin >= bout - 1e-9 && sin >= sout));
        if joins {
            ir.push(k);
        }
        utility += inst.type_dist[k] * if joins { sin } else { sout };
        inside.push((bin - bout, affordable));
    }
    if let Some(claim) = claimed {
        let mut slacks = Vec::new();
        for k in 0..n {
            let (gain, affordable) = inside[k];
            if claim.contains(&k) {
                slacks.push(gain);
                slacks.push(if affordable { 0.0 } else { inst.budgets[k] - p.price });
            } else if affordable {
                slacks.push(-gain);
            }
        }
        c.add("ir", slacks, CERT_TOL);
    }
    let _ = ir;
    c.report(utility)
}

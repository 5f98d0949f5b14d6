//! Posteriors, best responses and protocol evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::protocol::{MenuProtocol, NoMenuProtocol};

/// Slack used when comparing buyer values, so exact ties survive rounding.
pub const TIE_SLACK: f64 = 1e-9;
/// Tolerance of the IC and IR inequalities.
pub const CONSTRAINT_TOL: f64 = 1e-9;

/// A point of the probability simplex over states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    probs: Vec<f64>,
}

impl Posterior {
    /// Entries down to -1e-12 are clamped to zero; the sum must be 1 within 1e-9.
    pub fn new(mut probs: Vec<f64>) -> Result<Posterior> {
        for p in probs.iter_mut() {
            if *p < -1e-12 || !p.is_finite() {
                return Err(Error::InvalidParameter(format!("posterior entry {p} is negative")));
            }
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("posterior sums to {sum}")));
        }
        Ok(Posterior { probs })
    }

    pub fn point_mass(d: usize, state: usize) -> Posterior {
        let mut probs = vec![0.0; d];
        probs[state] = 1.0;
        Posterior { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}

/// A finite distribution over posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDistribution {
    pub support: Vec<Posterior>,
    pub weights: Vec<f64>,
}

impl PosteriorDistribution {
    pub fn mean(&self) -> Vec<f64> {
        let d = self.support.first().map_or(0, |p| p.probs.len());
        let mut out = vec![0.0; d];
        for (xi, w) in self.support.iter().zip(&self.weights) {
            for (o, p) in out.iter_mut().zip(&xi.probs) {
                *o += w * p;
            }
        }
        out
    }

    /// Largest coordinate gap between the mean and `target`.
    pub fn consistency_error(&self, target: &[f64]) -> f64 {
        self.mean().iter().zip(target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Weights are non-negative and sum to 1, and the mean matches `target`, all within 1e-9.
    pub fn is_consistent_with(&self, target: &[f64]) -> bool {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().all(|&w| w >= 0.0)
            && (total - 1.0).abs() <= 1e-9
            && self.consistency_error(target) <= 1e-9
    }
}

/// Probability of signal `s` under scheme `phi[state][signal]` and prior `mu`.
pub fn signal_marginal(phi: &[Vec<f64>], mu: &[f64], s: usize) -> f64 {
    mu.iter().zip(phi).map(|(m, row)| m * row[s]).sum()
}

/// Bayes update after observing signal `s`.
pub fn bayes_posterior(phi: &[Vec<f64>], mu: &[f64], s: usize) -> Result<Posterior> {
    let joint: Vec<f64> = mu.iter().zip(phi).map(|(m, row)| m * row[s]).collect();
    let mass: f64 = joint.iter().sum();
    if mass <= 0.0 {
        return Err(Error::ZeroMassSignal { signal: s });
    }
    Posterior::new(joint.iter().map(|x| x / mass).collect())
}

/// Distribution over posteriors induced by `phi`; zero-mass signals are dropped.
pub fn induced_distribution(phi: &[Vec<f64>], mu: &[f64]) -> PosteriorDistribution {
    let signals = phi.first().map_or(0, |r| r.len());
    let mut support = Vec::new();
    let mut weights = Vec::new();
    for s in 0..signals {
        let w = signal_marginal(phi, mu, s);
        if w > 0.0 {
            support.push(bayes_posterior(phi, mu, s).expect("positive mass"));
            weights.push(w);
        }
    }
    PosteriorDistribution { support, weights }
}

/// Seller-favoring epsilon-best response given precomputed expected values.
///
/// `buyer[a]` and `seller[a]` are posterior-expected utilities of action `a`;
/// `pay[a]` is the payment for playing `a`. Among actions within `eps` (plus
/// the tie slack) of the buyer's best value, the one maximizing the seller's
/// value net of payment is returned, lowest index first on ties.
pub fn best_response_from_values(buyer: &[f64], seller: &[f64], pay: &[f64], eps: f64) -> usize {
    let mut top = f64::NEG_INFINITY;
    for (b, p) in buyer.iter().zip(pay) {
        top = top.max(b + p);
    }
    let threshold = top - eps - TIE_SLACK;
    let mut best = usize::MAX;
    let mut best_val = f64::NEG_INFINITY;
    for a in 0..buyer.len() {
        if buyer[a] + pay[a] >= threshold {
            let v = seller[a] - pay[a];
            if v > best_val {
                best_val = v;
                best = a;
            }
        }
    }
    best
}

/// Seller-favoring epsilon-best response of type `k` at posterior `xi` with payment row `pay`.
pub fn best_response(inst: &Instance, xi: &[f64], pay: &[f64], k: usize, eps: f64) -> usize {
    best_response_from_values(&inst.buyer_values(xi, k), &inst.seller_values(xi), pay, eps)
}

/// Best response without payments.
pub fn best_response_no_payment(inst: &Instance, xi: &[f64], k: usize) -> usize {
    best_response(inst, xi, &vec![0.0; inst.num_actions()], k, 0.0)
}

/// The set of epsilon-best actions (with the tie slack), in index order.
pub fn best_response_set(inst: &Instance, xi: &[f64], pay: &[f64], k: usize, eps: f64) -> Vec<usize> {
    let vals: Vec<f64> = inst.buyer_values(xi, k).iter().zip(pay).map(|(b, p)| b + p).collect();
    let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..vals.len()).filter(|&a| vals[a] >= top - eps - TIE_SLACK).collect()
}

/// Buyer's best value at the prior without information or payments.
pub fn outside_option(inst: &Instance, k: usize) -> f64 {
    inst.buyer_values(&inst.prior, k).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Seller's value from type `k` when it does not participate.
pub fn nonparticipant_value(inst: &Instance, k: usize) -> f64 {
    let b = best_response_no_payment(inst, &inst.prior, k);
    inst.seller_value(&inst.prior, b)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoMenuEval {
    pub utility: f64,
    /// Participating types, in index order.
    pub ir_set: Vec<usize>,
}

/// Per-type participation outcome of a protocol without menus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypeOutcome {
    /// Buyer's expected utility from participating, net of the price.
    pub buyer_in: f64,
    /// Seller's expected utility from the type if it participates (price included).
    pub seller_in: f64,
    pub seller_out: f64,
    pub outside: f64,
    pub affordable: bool,
}

pub fn type_outcome(inst: &Instance, proto: &NoMenuProtocol, k: usize) -> TypeOutcome {
    let mut buyer_in = -proto.price;
    let mut seller_in = proto.price;
    for s in &proto.signals {
        let bv = inst.buyer_values(&s.posterior, k);
        let sv = inst.seller_values(&s.posterior);
        let a = best_response_from_values(&bv, &sv, &s.payments, 0.0);
        buyer_in += s.weight * (bv[a] + s.payments[a]);
        seller_in += s.weight * (sv[a] - s.payments[a]);
    }
    TypeOutcome {
        buyer_in,
        seller_in,
        seller_out: nonparticipant_value(inst, k),
        outside: outside_option(inst, k),
        affordable: inst.budgets[k] >= proto.price,
    }
}

impl TypeOutcome {
    /// Participation decision, resolving indifference in the seller's favor.
    pub fn participates(&self) -> bool {
        if !self.affordable {
            return false;
        }
        if self.buyer_in > self.outside + CONSTRAINT_TOL {
            return true;
        }
        self.buyer_in >= self.outside - CONSTRAINT_TOL && self.seller_in >= self.seller_out
    }

    pub fn seller_value(&self) -> f64 {
        if self.participates() {
            self.seller_in
        } else {
            self.seller_out
        }
    }
}

/// Seller's expected utility of a protocol without menus, and the participating types.
pub fn eval_nomenu(inst: &Instance, proto: &NoMenuProtocol) -> NoMenuEval {
    let mut utility = 0.0;
    let mut ir_set = Vec::new();
    for k in 0..inst.num_types() {
        let o = type_outcome(inst, proto, k);
        if o.participates() {
            ir_set.push(k);
        }
        utility += inst.type_dist[k] * o.seller_value();
    }
    NoMenuEval { utility, ir_set }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MenuEval {
    pub utility: f64,
    pub ic_ok: bool,
    pub ir_ok: bool,
}

/// Unnormalized joint `mu_theta * phi_theta(a)` and its mass for recommendation `a`.
fn joint_column(mu: &[f64], scheme: &[Vec<f64>], a: usize) -> (Vec<f64>, f64) {
    let joint: Vec<f64> = mu.iter().zip(scheme).map(|(m, row)| m * row[a]).collect();
    let mass = joint.iter().sum();
    (joint, mass)
}

/// Utility of type `k` for menu entry `j` when best-responding to every
/// recommendation, before the price; also the seller's resulting value.
fn menu_entry_values(inst: &Instance, proto: &MenuProtocol, k: usize, j: usize) -> (f64, f64) {
    let e = &proto.entries[j];
    let m = inst.num_actions();
    let mut buyer = 0.0;
    let mut seller = 0.0;
    for a in 0..m {
        let (joint, mass) = joint_column(&inst.prior, &e.scheme, a);
        if mass <= 0.0 {
            continue;
        }
        let xi: Vec<f64> = joint.iter().map(|x| x / mass).collect();
        let mut pay = vec![0.0; m];
        pay[a] = e.payments[a];
        let bv = inst.buyer_values(&xi, k);
        let sv = inst.seller_values(&xi);
        let b = best_response_from_values(&bv, &sv, &pay, 0.0);
        buyer += mass * (bv[b] + pay[b]);
        seller += mass * (sv[b] - pay[b]);
    }
    (buyer, seller)
}

/// Seller's expected utility of a menu protocol under truthful reporting,
/// plus whether IC and IR hold (within 1e-9). IR also requires every price to
/// be within the type's budget.
pub fn eval_menu(inst: &Instance, proto: &MenuProtocol) -> MenuEval {
    let n = inst.num_types();
    let mut utility = 0.0;
    let mut ic_ok = true;
    let mut ir_ok = true;
    for k in 0..n {
        let (own_buyer, own_seller) = menu_entry_values(inst, proto, k, k);
        let own = own_buyer - proto.entries[k].price;
        utility += inst.type_dist[k] * (own_seller + proto.entries[k].price);
        if own < outside_option(inst, k) - CONSTRAINT_TOL || proto.entries[k].price > inst.budgets[k] {
            ir_ok = false;
        }
        for j in 0..n {
            if j == k {
                continue;
            }
            let (dev, _) = menu_entry_values(inst, proto, k, j);
            if own < dev - proto.entries[j].price - CONSTRAINT_TOL {
                ic_ok = false;
            }
        }
    }
    MenuEval { utility, ic_ok, ir_ok }
}

//! Observable-action principal-agent problems and their equivalence with
//! payment design inside a single posterior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{best_response_from_values, best_response_no_payment, TIE_SLACK};
use crate::error::{Error, Result};
use crate::instance::{ids, Instance, SCHEMA_VERSION};
use crate::payment::{beta_grid, PaymentPlan, DEFAULT_VERTEX_CAP};

/// Agent types with action costs `costs[k][a]` and principal rewards `rewards[a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PAInstance {
    pub schema_version: String,
    pub types: Vec<String>,
    pub actions: Vec<String>,
    pub type_dist: Vec<f64>,
    pub costs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

/// Payment per observed action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contract {
    pub payments: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractOutcome {
    pub contract: Contract,
    /// Action each type takes.
    pub actions: Vec<usize>,
    pub value: f64,
}

impl PAInstance {
    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    /// Human-readable violations; empty when valid.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let (n, m) = (self.num_types(), self.num_actions());
        if (self.type_dist.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.type_dist.iter().any(|&x| x < 0.0) {
            out.push("type distribution not normalized".to_string());
        }
        if self.type_dist.len() != n || self.costs.len() != n || self.rewards.len() != m {
            out.push("dimension mismatch: types, costs or rewards".to_string());
        }
        if self.costs.iter().any(|row| row.len() != m) {
            out.push("dimension mismatch: cost rows".to_string());
        }
        let unit = |x: &f64| (0.0..=1.0).contains(x);
        if !self.costs.iter().flatten().all(unit) || !self.rewards.iter().all(unit) {
            out.push("cost or reward out of [0,1]".to_string());
        }
        out
    }

    pub fn from_json_str(s: &str) -> Result<PAInstance> {
        let v: serde_json::Value = serde_json::from_str(s).map_err(|e| Error::Schema(e.to_string()))?;
        if let Some(ver) = v.get("schema_version").and_then(|x| x.as_str()) {
            if ver != SCHEMA_VERSION {
                return Err(Error::Schema(format!("schema_version {ver:?}, expected {SCHEMA_VERSION:?}")));
            }
        }
        serde_json::from_value(v).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializes")
    }
}

/// Agent's choice under `contract`, breaking ties toward the principal.
pub fn agent_response(pa: &PAInstance, contract: &Contract, k: usize) -> usize {
    let utility: Vec<f64> = pa.costs[k].iter().map(|c| -c).collect();
    best_response_from_values(&utility, &pa.rewards, &contract.payments, 0.0)
}

/// Actions maximizing payment minus cost for type `k` (with the tie slack).
pub fn agent_response_set(pa: &PAInstance, contract: &Contract, k: usize) -> Vec<usize> {
    let vals: Vec<f64> = contract.payments.iter().zip(&pa.costs[k]).map(|(p, c)| p - c).collect();
    let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..vals.len()).filter(|&a| vals[a] >= top - TIE_SLACK).collect()
}

pub fn evaluate_contract(pa: &PAInstance, contract: &Contract) -> ContractOutcome {
    let actions: Vec<usize> = (0..pa.num_types()).map(|k| agent_response(pa, contract, k)).collect();
    let value = actions
        .iter()
        .enumerate()
        .map(|(k, &a)| pa.type_dist[k] * (pa.rewards[a] - contract.payments[a]))
        .sum();
    ContractOutcome { contract: contract.clone(), actions, value }
}

/// Costs are each type's regret relative to its unpaid best response at `xi`;
/// rewards are the seller's expected utilities.
pub fn to_pa(inst: &Instance, xi: &[f64]) -> PAInstance {
    let costs = (0..inst.num_types())
        .map(|k| {
            let vals = inst.buyer_values(xi, k);
            let best = vals[best_response_no_payment(inst, xi, k)];
            vals.iter().map(|v| (best - v).max(0.0)).collect()
        })
        .collect();
    PAInstance {
        schema_version: SCHEMA_VERSION.into(),
        types: inst.types.clone(),
        actions: inst.actions.clone(),
        type_dist: inst.type_dist.clone(),
        costs,
        rewards: inst.seller_values(xi),
    }
}

/// Single-state, zero-budget selling instance with buyer utility `1 - cost`.
pub fn from_pa(pa: &PAInstance) -> Instance {
    Instance {
        schema_version: SCHEMA_VERSION.into(),
        states: ids("s", 1),
        actions: pa.actions.clone(),
        types: pa.types.clone(),
        prior: vec![1.0],
        type_dist: pa.type_dist.clone(),
        seller_utility: vec![pa.rewards.clone()],
        buyer_utility: pa.costs.iter().map(|row| vec![row.iter().map(|c| 1.0 - c).collect()]).collect(),
        budgets: vec![0.0; pa.num_types()],
    }
}

/// Principal-optimal contract, computed through the selling reduction.
pub fn optimal_contract(pa: &PAInstance) -> Result<ContractOutcome> {
    optimal_contract_capped(pa, DEFAULT_VERTEX_CAP)
}

pub fn optimal_contract_capped(pa: &PAInstance, vertex_cap: u64) -> Result<ContractOutcome> {
    let inst = from_pa(pa);
    let best = PaymentPlan::new(&inst, vertex_cap)?.optimize(&inst, &[1.0]);
    Ok(evaluate_contract(pa, &Contract { payments: best.payments }))
}

/// Pay the fraction `beta` of every reward.
pub fn linear_contract(pa: &PAInstance, beta: f64) -> ContractOutcome {
    let payments = pa.rewards.iter().map(|r| beta * r).collect();
    evaluate_contract(pa, &Contract { payments })
}

/// Best linear contract on the `1 - 2^-i` grid.
pub fn best_linear_contract(pa: &PAInstance, rho: f64) -> Result<(f64, ContractOutcome)> {
    if !(rho > 0.0 && rho <= 0.5) {
        return Err(Error::InvalidParameter(format!("rho must lie in (0, 1/2], got {rho}")));
    }
    let mut best: Option<(f64, ContractOutcome)> = None;
    for beta in beta_grid(rho) {
        let c = linear_contract(pa, beta);
        if best.as_ref().is_none_or(|(_, b)| c.value > b.value) {
            best = Some((beta, c));
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// Random instance whose costs are regrets: every type has a zero-cost action.
pub fn random_pa(n: usize, m: usize, seed: u64) -> PAInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let round = |x: f64| (x * 1e6).round() / 1e6;
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    let mut type_dist: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let residue = 1.0 - type_dist.iter().sum::<f64>();
    type_dist[0] += residue;
    let costs = (0..n)
        .map(|_| {
            let free = rng.random_range(0..m);
            (0..m).map(|a| if a == free { 0.0 } else { round(rng.random::<f64>()) }).collect()
        })
        .collect();
    let rewards = (0..m).map(|_| round(rng.random::<f64>())).collect();
    PAInstance {
        schema_version: SCHEMA_VERSION.into(),
        types: ids("k", n),
        actions: ids("a", m),
        type_dist,
        costs,
        rewards,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::best_response_set;
    use crate::fixtures;
    use crate::instance::random_instance;
    use crate::payment::optimal_payment_in_posterior;
    use proptest::prelude::*;

    fn grid_contract(pa: &PAInstance, step: f64) -> f64 {
        let m = pa.num_actions();
        let ticks = (1.0 / step).round() as usize + 1;
        (0..ticks.pow(m as u32))
            .map(|idx| {
                let payments = (0..m).map(|a| ((idx / ticks.pow(a as u32)) % ticks) as f64 * step).collect();
                evaluate_contract(pa, &Contract { payments }).value
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn illustrative_reduction() {
        let inst = fixtures::illustrative_single_type();
        let pa = to_pa(&inst, &[0.5, 0.5]);
        assert_eq!(pa.costs, vec![vec![0.0, 0.5]]);
        assert_eq!(pa.rewards, vec![0.0, 1.0]);
        let best = optimal_contract(&pa).unwrap();
        assert_eq!(best.contract.payments, vec![0.0, 0.5]);
        assert!((best.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn flat_and_null_cases() {
        let mut inst = random_instance(2, 3, 2, 5, true);
        inst.buyer_utility[1] = vec![vec![0.4; 3]; 2];
        inst.seller_utility = vec![vec![0.0; 3]; 2];
        let pa = to_pa(&inst, &[0.3, 0.7]);
        assert!(pa.costs[1].iter().all(|&c| c == 0.0));
        assert!(pa.rewards.iter().all(|&r| r == 0.0));
        let best = optimal_contract(&pa).unwrap();
        assert!(best.contract.payments.iter().all(|&p| p == 0.0));
        assert_eq!(best.value, 0.0);
    }

    #[test]
    fn from_pa_shape() {
        let pa = random_pa(2, 3, 1);
        let inst = from_pa(&pa);
        assert_eq!(inst.num_states(), 1);
        assert!(inst.is_limited_liability());
        assert!(inst.validate().is_valid());
        let mut free = pa.clone();
        free.costs = vec![vec![0.0; 3]; 2];
        assert!(from_pa(&free).buyer_utility.iter().flatten().flatten().all(|&u| u == 1.0));
    }

    #[test]
    fn round_trip_is_identity() {
        for seed in 0..50 {
            let pa = random_pa(1 + seed as usize % 3, 2 + seed as usize % 3, seed);
            let back = to_pa(&from_pa(&pa), &[1.0]);
            assert_eq!(back.rewards, pa.rewards);
            for (a, b) in back.costs.iter().flatten().zip(pa.costs.iter().flatten()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn optimal_contract_vs_grid() {
        for seed in 0..5 {
            let pa = random_pa(2, 3, 100 + seed);
            let best = optimal_contract(&pa).unwrap();
            let grid = grid_contract(&pa, 0.01);
            assert!(best.value >= grid - 1e-9);
            assert!(best.value <= grid + 0.03);
        }
    }

    #[test]
    fn linear_contract_boundaries() {
        let pa = random_pa(2, 3, 7);
        assert!(linear_contract(&pa, 0.0).contract.payments.iter().all(|&p| p == 0.0));
        assert!(linear_contract(&pa, 1.0).value.abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let pa = random_pa(2, 2, 3);
        assert_eq!(PAInstance::from_json_str(&pa.to_json_string()).unwrap(), pa);
        assert!(PAInstance::from_json_str(r#"{"schema_version":"9"}"#).is_err());
    }

    proptest! {
        #[test]
        fn reduction_preserves_optimum(seed in 0u64..200, n in 1usize..3, m in 2usize..4) {
            let inst = random_instance(2, m, n, seed, true);
            let xi = random_instance(2, 1, 1, seed ^ 77, true).prior;
            let pa = to_pa(&inst, &xi);
            let contract = optimal_contract(&pa).unwrap();
            let payment = optimal_payment_in_posterior(&inst, &xi).unwrap();
            prop_assert!((contract.value - payment.value).abs() < 1e-9);
            prop_assert_eq!(&contract.actions, &payment.actions);
            for k in 0..n {
                prop_assert_eq!(
                    agent_response_set(&pa, &contract.contract, k),
                    best_response_set(&inst, &xi, &contract.contract.payments, k, 0.0)
                );
            }
        }

        #[test]
        fn linear_contract_bound(seed in 0u64..100) {
            let pa = random_pa(2, 3, seed);
            let rho = 0.25;
            let opt = optimal_contract(&pa).unwrap().value;
            let (_, lin) = best_linear_contract(&pa, rho).unwrap();
            prop_assert!(lin.value - (rho * opt - 0.5_f64.powi(2)) >= -1e-9);
        }
    }
}

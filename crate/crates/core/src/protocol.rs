//! Protocol types shared by the evaluators, solvers and the oracle.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::instance::Instance;

/// One menu entry: a direct scheme `scheme[state][action]`, an upfront price
/// and a payment for obeying each recommendation (off-recommendation payments
/// are zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MenuEntry {
    pub scheme: Vec<Vec<f64>>,
    pub price: f64,
    pub payments: Vec<f64>,
}

/// A protocol with menus: one entry per buyer type, in instance type order.
#[derive(Debug, Clone, PartialEq)]
pub struct MenuProtocol {
    pub entries: Vec<MenuEntry>,
}

impl MenuProtocol {
    /// JSON object keyed by type id.
    pub fn to_json(&self, inst: &Instance) -> Value {
        let mut map = Map::new();
        for (id, e) in inst.types.iter().zip(&self.entries) {
            map.insert(id.clone(), serde_json::to_value(e).expect("entry serializes"));
        }
        Value::Object(map)
    }

    pub fn from_json(inst: &Instance, v: &Value) -> Result<MenuProtocol> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Schema("menu protocol must be a JSON object".into()))?;
        let mut entries = Vec::with_capacity(inst.num_types());
        for id in &inst.types {
            let e = obj
                .get(id)
                .ok_or_else(|| Error::Schema(format!("menu protocol missing type {id:?}")))?;
            let e: MenuEntry =
                serde_json::from_value(e.clone()).map_err(|e| Error::Schema(e.to_string()))?;
            entries.push(e);
        }
        Ok(MenuProtocol { entries })
    }
}

/// A signal of a protocol without menus: its probability, the posterior it
/// induces, and the payment attached to each action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub weight: f64,
    pub posterior: Vec<f64>,
    pub payments: Vec<f64>,
    /// Per-type recommended actions when the signal is generalized-direct.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Vec<usize>>,
}

/// A protocol without menus, stored as a distribution over posteriors with a
/// payment row per signal and one upfront price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoMenuProtocol {
    pub price: f64,
    pub signals: Vec<Signal>,
}

impl NoMenuProtocol {
    /// The uninformative protocol with zero price and zero payments.
    pub fn no_information(inst: &Instance) -> NoMenuProtocol {
        NoMenuProtocol {
            price: 0.0,
            signals: vec![Signal {
                weight: 1.0,
                posterior: inst.prior.clone(),
                payments: vec![0.0; inst.num_actions()],
                label: None,
            }],
        }
    }

    /// Full revelation at a given price with zero payments.
    pub fn full_revelation(inst: &Instance, price: f64) -> NoMenuProtocol {
        let d = inst.num_states();
        let signals = (0..d)
            .filter(|&t| inst.prior[t] > 0.0)
            .map(|t| {
                let mut xi = vec![0.0; d];
                xi[t] = 1.0;
                Signal { weight: inst.prior[t], posterior: xi, payments: vec![0.0; inst.num_actions()], label: None }
            })
            .collect();
        NoMenuProtocol { price, signals }
    }

    /// Build from a signal table `phi[state][signal]` and per-signal payments.
    /// Zero-marginal signals are dropped.
    pub fn from_signal_table(
        mu: &[f64],
        phi: &[Vec<f64>],
        price: f64,
        payments: &[Vec<f64>],
        labels: Option<&[Vec<usize>]>,
    ) -> NoMenuProtocol {
        let num_signals = phi.first().map_or(0, |r| r.len());
        let mut signals = Vec::new();
        for s in 0..num_signals {
            let joint: Vec<f64> = mu.iter().zip(phi).map(|(m, row)| m * row[s]).collect();
            let mass: f64 = joint.iter().sum();
            if mass <= 0.0 {
                continue;
            }
            signals.push(Signal {
                weight: mass,
                posterior: joint.iter().map(|x| x / mass).collect(),
                payments: payments[s].clone(),
                label: labels.map(|l| l[s].clone()),
            });
        }
        NoMenuProtocol { price, signals }
    }

    /// Largest deviation of the signal mixture's mean from `mu`.
    pub fn consistency_error(&self, mu: &[f64]) -> f64 {
        let mut mean = vec![0.0; mu.len()];
        for s in &self.signals {
            for (m, x) in mean.iter_mut().zip(&s.posterior) {
                *m += s.weight * x;
            }
        }
        mean.iter().zip(mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

//! Small hand-built instances used by tests, docs and the CLI fixtures directory.

use crate::instance::{ids, Instance, SCHEMA_VERSION};
use crate::protocol::{NoMenuProtocol, Signal};

fn state_independent(values: &[f64], d: usize) -> Vec<Vec<f64>> {
    vec![values.to_vec(); d]
}

/// Two states, uniform prior, two actions; the seller wants `a2`, the single
/// limited-liability buyer type prefers `a1` (0.5 versus 0) in every state.
pub fn illustrative_single_type() -> Instance {
    Instance {
        schema_version: SCHEMA_VERSION.into(),
        states: ids("s", 2),
        actions: ids("a", 2),
        types: ids("k", 1),
        prior: vec![0.5, 0.5],
        type_dist: vec![1.0],
        seller_utility: state_independent(&[0.0, 1.0], 2),
        buyer_utility: vec![state_independent(&[0.5, 0.0], 2)],
        budgets: vec![0.0],
    }
}

/// The single-type example plus a second, equally likely type that values
/// `a1` at 1.
pub fn illustrative_two_type() -> Instance {
    Instance {
        schema_version: SCHEMA_VERSION.into(),
        states: ids("s", 2),
        actions: ids("a", 2),
        types: ids("k", 2),
        prior: vec![0.5, 0.5],
        type_dist: vec![0.5, 0.5],
        seller_utility: state_independent(&[0.0, 1.0], 2),
        buyer_utility: vec![
            state_independent(&[0.5, 0.0], 2),
            state_independent(&[1.0, 0.0], 2),
        ],
        budgets: vec![0.0, 0.0],
    }
}

/// Full revelation with a 0.5 payment on `a2` for the single-type example.
pub fn illustrative_protocol() -> NoMenuProtocol {
    NoMenuProtocol {
        price: 0.0,
        signals: vec![
            Signal { weight: 0.5, posterior: vec![1.0, 0.0], payments: vec![0.0, 0.5], label: None },
            Signal { weight: 0.5, posterior: vec![0.0, 1.0], payments: vec![0.0, 0.5], label: None },
        ],
    }
}

/// Instance where full information is worth 0.4 to every type, budgets are 1
/// and the seller has no stake in the action taken, so only selling
/// information at a price pays off.
pub fn full_information_premium() -> Instance {
    let buyer = vec![vec![1.0, 0.2], vec![0.2, 1.0]];
    Instance {
        schema_version: SCHEMA_VERSION.into(),
        states: ids("s", 2),
        actions: ids("a", 2),
        types: ids("k", 2),
        prior: vec![0.5, 0.5],
        type_dist: vec![0.5, 0.5],
        seller_utility: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        buyer_utility: vec![buyer.clone(), buyer],
        budgets: vec![1.0, 1.0],
    }
}

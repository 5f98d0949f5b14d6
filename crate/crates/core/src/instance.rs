//! Instance data model, validation, JSON I/O and random generation.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: &str = "1";

const NORMALIZATION_TOL: f64 = 1e-12;

/// A selling-information instance.
///
/// Utilities are indexed `[state][action]`; buyer utilities carry a leading
/// type index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub schema_version: String,
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub types: Vec<String>,
    pub prior: Vec<f64>,
    pub type_dist: Vec<f64>,
    pub seller_utility: Vec<Vec<f64>>,
    pub buyer_utility: Vec<Vec<Vec<f64>>>,
    pub budgets: Vec<f64>,
}

/// List of violated invariants; empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            write!(f, "valid")
        } else {
            write!(f, "{}", self.violations.join("; "))
        }
    }
}

impl Instance {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    /// True iff every budget is zero.
    pub fn is_limited_liability(&self) -> bool {
        self.budgets.iter().all(|&b| b == 0.0)
    }

    /// Copy of the instance with every budget set to zero.
    pub fn with_zero_budgets(&self) -> Instance {
        let mut out = self.clone();
        out.budgets = vec![0.0; self.num_types()];
        out
    }

    /// Expected seller utility of `action` under belief `xi`.
    pub fn seller_value(&self, xi: &[f64], action: usize) -> f64 {
        xi.iter().zip(&self.seller_utility).map(|(p, row)| p * row[action]).sum()
    }

    /// Expected utility of `action` for buyer type `k` under belief `xi`.
    pub fn buyer_value(&self, xi: &[f64], k: usize, action: usize) -> f64 {
        xi.iter().zip(&self.buyer_utility[k]).map(|(p, row)| p * row[action]).sum()
    }

    /// Expected seller utility of every action under `xi`.
    pub fn seller_values(&self, xi: &[f64]) -> Vec<f64> {
        (0..self.num_actions()).map(|a| self.seller_value(xi, a)).collect()
    }

    /// Expected utility of every action for type `k` under `xi`.
    pub fn buyer_values(&self, xi: &[f64], k: usize) -> Vec<f64> {
        (0..self.num_actions()).map(|a| self.buyer_value(xi, k, a)).collect()
    }

    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let d = self.states.len();
        let m = self.actions.len();
        let n = self.types.len();
        if self.schema_version != SCHEMA_VERSION {
            v.push(format!(
                "schema_version {:?} unsupported (expected {:?})",
                self.schema_version, SCHEMA_VERSION
            ));
        }
        if d == 0 {
            v.push("no states".into());
        }
        if m == 0 {
            v.push("no actions".into());
        }
        if n == 0 {
            v.push("no types".into());
        }
        check_distribution(&self.prior, d, "prior", &mut v);
        check_distribution(&self.type_dist, n, "type_dist", &mut v);

        if self.seller_utility.len() != d || self.seller_utility.iter().any(|r| r.len() != m) {
            v.push(format!("dimension mismatch: seller_utility must be {d}x{m}"));
        } else if !all_unit(self.seller_utility.iter().flatten()) {
            v.push("utility out of [0,1] in seller_utility".into());
        }

        if self.buyer_utility.len() != n {
            v.push(format!("dimension mismatch: buyer_utility must have {n} types"));
        } else {
            for (k, u) in self.buyer_utility.iter().enumerate() {
                if u.len() != d || u.iter().any(|r| r.len() != m) {
                    v.push(format!("dimension mismatch: buyer_utility[{k}] must be {d}x{m}"));
                } else if !all_unit(u.iter().flatten()) {
                    v.push(format!("utility out of [0,1] in buyer_utility[{k}]"));
                }
            }
        }

        if self.budgets.len() != n {
            v.push(format!("dimension mismatch: budgets must have {n} entries"));
        }
        if self.budgets.iter().any(|b| !b.is_finite() || *b < 0.0) {
            v.push("negative or non-finite budget".into());
        }
        ValidationReport { violations: v }
    }

    pub fn from_json_str(s: &str) -> Result<Instance> {
        let raw: serde_json::Value =
            serde_json::from_str(s).map_err(|e| Error::Schema(e.to_string()))?;
        if let Some(ver) = raw.get("schema_version") {
            if ver != SCHEMA_VERSION {
                return Err(Error::Schema(format!(
                    "schema_version mismatch: found {ver}, expected \"{SCHEMA_VERSION}\""
                )));
            }
        }
        serde_json::from_str(s).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Instance> {
        let text = std::fs::read_to_string(path)?;
        Instance::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }
}

fn all_unit<'a>(it: impl IntoIterator<Item = &'a f64>) -> bool {
    it.into_iter().all(|x| (0.0..=1.0).contains(x))
}

fn check_distribution(p: &[f64], len: usize, name: &str, v: &mut Vec<String>) {
    if p.len() != len {
        v.push(format!("dimension mismatch: {name} must have {len} entries"));
        return;
    }
    let sum: f64 = p.iter().sum();
    if p.iter().any(|x| !x.is_finite() || *x < 0.0 || *x > 1.0)
        || (sum - 1.0).abs() > NORMALIZATION_TOL
    {
        let label = if name == "prior" { "prior" } else { "type distribution" };
        v.push(format!("{label} not normalized"));
    }
}

fn simplex_point(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = draws.iter().sum();
    let mut p: Vec<f64> = draws.iter().map(|x| x / total).collect();
    // Push the rounding residue into the largest entry so the sum is 1 to within an ulp.
    let residue = 1.0 - p.iter().sum::<f64>();
    let imax = (0..len).fold(0, |b, i| if p[i] > p[b] { i } else { b });
    p[imax] += residue;
    p
}

fn unit6(rng: &mut ChaCha8Rng) -> f64 {
    (rng.random::<f64>() * 1e6).round() / 1e6
}

/// Random valid instance; deterministic in `seed`.
pub fn random_instance(d: usize, m: usize, n: usize, seed: u64, limited_liability: bool) -> Instance {
    assert!(d >= 1 && m >= 1 && n >= 1, "dimensions must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior = simplex_point(&mut rng, d);
    let type_dist = simplex_point(&mut rng, n);
    let seller_utility = (0..d).map(|_| (0..m).map(|_| unit6(&mut rng)).collect()).collect();
    let buyer_utility = (0..n)
        .map(|_| (0..d).map(|_| (0..m).map(|_| unit6(&mut rng)).collect()).collect())
        .collect();
    let budgets = (0..n)
        .map(|_| if limited_liability { 0.0 } else { rng.random::<f64>() })
        .collect();
    Instance {
        schema_version: SCHEMA_VERSION.into(),
        states: ids("s", d),
        actions: ids("a", m),
        types: ids("k", n),
        prior,
        type_dist,
        seller_utility,
        buyer_utility,
        budgets,
    }
}

pub(crate) fn ids(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn illustrative_fixture_is_valid() {
        let inst = fixtures::illustrative_single_type();
        assert!(inst.validate().is_valid());
        assert_eq!(inst.num_states(), 2);
        assert_eq!(inst.num_actions(), 2);
        assert!(inst.is_limited_liability());
    }

    #[test]
    fn unnormalized_prior_is_reported() {
        let mut inst = fixtures::illustrative_single_type();
        inst.prior = vec![0.6, 0.6];
        let r = inst.validate();
        assert!(r.violations.iter().any(|s| s == "prior not normalized"), "{r}");
    }

    #[test]
    fn utility_out_of_range_is_reported() {
        let mut inst = fixtures::illustrative_single_type();
        inst.seller_utility[0][0] = 1.5;
        let r = inst.validate();
        assert!(r.violations.iter().any(|s| s.starts_with("utility out of [0,1]")), "{r}");
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut inst = fixtures::illustrative_two_type();
        inst.budgets.pop();
        assert!(!inst.validate().is_valid());
    }

    #[test]
    fn save_load_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.json");
        for seed in 0..20 {
            let inst = random_instance(3, 3, 2, seed, seed % 2 == 0);
            inst.save(&path).unwrap();
            let back = Instance::load(&path).unwrap();
            assert_eq!(inst, back);
            for (a, b) in inst.prior.iter().zip(&back.prior) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn missing_field_is_named() {
        let inst = fixtures::illustrative_single_type();
        let mut v: serde_json::Value = serde_json::to_value(&inst).unwrap();
        v.as_object_mut().unwrap().remove("budgets");
        let err = Instance::from_json_str(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("budgets"), "{err}");
    }

    #[test]
    fn schema_version_mismatch_is_rejected() {
        let inst = fixtures::illustrative_single_type();
        let mut v: serde_json::Value = serde_json::to_value(&inst).unwrap();
        v["schema_version"] = "2".into();
        let err = Instance::from_json_str(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("schema_version"), "{err}");
    }

    #[test]
    fn random_instance_flags_and_shape() {
        let inst = random_instance(2, 2, 2, 7, true);
        assert!(inst.validate().is_valid());
        assert!(inst.budgets.iter().all(|&b| b == 0.0));
        assert_eq!(random_instance(2, 2, 2, 7, true), inst);
        let inst = random_instance(3, 4, 2, 1, false);
        assert_eq!((inst.num_states(), inst.num_actions(), inst.num_types()), (3, 4, 2));
        assert!(inst.validate().is_valid());
    }

    #[test]
    fn random_utilities_have_six_decimals() {
        let inst = random_instance(3, 3, 3, 11, false);
        for x in inst.seller_utility.iter().flatten() {
            assert!(((x * 1e6).round() / 1e6 - x).abs() < 1e-15);
        }
    }
}

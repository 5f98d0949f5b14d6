//! Acceptance suite. Runs without the libtest harness so that each criterion
//! prints exactly one PASS/FAIL line; the process exits non-zero if any fails.

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use infosell::belief::{best_response_set, eval_nomenu};
use infosell::menu::solve_menu;
use infosell::nomenu::{
    normalize_generalized_direct, solve_fixed_states, solve_fixed_types, solve_general, solve_ptas, solve_quasipoly,
    SolverConfig,
};
use infosell::oracle::{brute_force_menu, brute_force_nomenu, certify, GridSpec, ProtocolRef};
use infosell::payment::{best_linear_payment, evaluate_payment, optimal_payment_in_posterior, robustify, surplus_bound};
use infosell::principal_agent::{agent_response_set, optimal_contract, to_pa};
use infosell::quniform::{decompose_local, decompose_multinomial, enumerate_quniform};
use infosell::{fixtures, random_instance, Instance, NoMenuProtocol};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn posterior(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..d).map(|_| -rng.random_range(1e-12..1.0f64).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

fn dims(rng: &mut ChaCha8Rng, max_d: usize, max_m: usize, max_n: usize) -> (usize, usize, usize) {
    (rng.random_range(1..=max_d), rng.random_range(1..=max_m), rng.random_range(1..=max_n))
}

fn cli_value(args: &[&str]) -> Result<f64, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_infosell")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    let v: Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    v["value"].as_f64().ok_or_else(|| "report without value".into())
}

fn illustrative_example() -> Verdict {
    let inst = root().join("fixtures/illustrative.json");
    let proto = root().join("fixtures/illustrative_protocol.json");
    let inst = inst.to_str().unwrap();
    let start = Instant::now();
    let solved = cli_value(&["solve", "--method", "ptas", "--alpha", "0.05", "--eps", "0.0025", "--instance", inst]);
    let elapsed = start.elapsed();
    let evaluated = cli_value(&["eval", "--instance", inst, "--protocol", proto.to_str().unwrap()]);
    match (solved, evaluated) {
        (Ok(s), Ok(e)) => verdict(
            (s - 0.5).abs() <= 1e-9 && (e - 0.5).abs() <= 1e-9 && elapsed < Duration::from_secs(1),
            format!("ptas {s}, eval {e}, solve took {elapsed:.2?}"),
        ),
        (s, e) => verdict(false, format!("solve {s:?}, eval {e:?}")),
    }
}

fn menu_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = Vec::new();
    let mut worst_gap = f64::NEG_INFINITY;
    for i in 0..200 {
        let (d, m, n) = dims(&mut rng, 3, 3, 3);
        let seed = rng.random::<u64>();
        let inst = random_instance(d, m, n, seed, rng.random_bool(0.5));
        let sol = match solve_menu(&inst) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("#{i} solve: {e}"));
                continue;
            }
        };
        let brute = match brute_force_menu(&inst, &GridSpec::fit_menu(&inst)) {
            Ok(b) => b,
            Err(e) => {
                failures.push(format!("#{i} oracle: {e}"));
                continue;
            }
        };
        let cert = certify(&inst, ProtocolRef::Menu(&sol.protocol));
        worst_gap = worst_gap.max(brute.value - sol.value);
        if sol.value < brute.value - brute.slack {
            failures.push(format!("#{i} value {} below oracle {}", sol.value, brute.value));
        }
        if !cert.passed {
            failures.push(format!("#{i} certificate {:?}", cert.checks));
        }
        if (sol.value - sol.lp_value).abs() > 1e-6 {
            failures.push(format!("#{i} eval {} vs lp {}", sol.value, sol.lp_value));
        }
    }
    verdict(failures.is_empty(), format!("200 instances, max oracle excess {worst_gap:.2e}; {}", failures.join("; ")))
}

fn fixed_types_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = SolverConfig::default();
    let mut failures = Vec::new();
    let mut compared = 0;
    for i in 0..50 {
        let (d, m, n) = dims(&mut rng, 3, 3, 2);
        let seed = rng.random::<u64>();
        let ll = i % 2 == 0;
        let inst = random_instance(d, m, n, seed, ll);
        let exact = match solve_fixed_types(&inst, &cfg) {
            Ok(r) => r.value,
            Err(e) => {
                failures.push(format!("#{i} exact: {e}"));
                continue;
            }
        };
        match brute_force_nomenu(&inst, &GridSpec::fit_nomenu(&inst)) {
            Ok(b) if exact < b.value - b.slack => failures.push(format!("#{i} {exact} below oracle {}", b.value)),
            Ok(_) => {}
            Err(e) => failures.push(format!("#{i} oracle: {e}")),
        }
        let mut approx = vec![("general", solve_general(&inst, 1.0, 1.0 / 6.0, &cfg))];
        if ll {
            approx.push(("ptas", solve_ptas(&inst, 0.5, 0.25, &cfg)));
            approx.push(("qptas", solve_quasipoly(&inst, 0.5, 0.25, 0.25, &cfg)));
            approx.push(("fixed-states", solve_fixed_states(&inst, 0.5, 0.25, &cfg)));
        }
        for (name, r) in approx {
            match r {
                Ok(r) => {
                    compared += 1;
                    if exact < r.value - 1e-6 {
                        failures.push(format!("#{i} {exact} below {name} {}", r.value));
                    }
                }
                Err(e) => failures.push(format!("#{i} {name}: {e}")),
            }
        }
    }
    verdict(failures.is_empty(), format!("50 instances, {compared} approximate values compared; {}", failures.join("; ")))
}

fn ptas_bound() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = SolverConfig::default();
    let (alpha, eps) = (0.1, 0.01);
    let mut failures = Vec::new();
    let mut worst = f64::INFINITY;
    for i in 0..50 {
        let d = rng.random_range(1..=3);
        let n = rng.random_range(1..=3);
        let seed = rng.random::<u64>();
        let inst = random_instance(d, 2, n, seed, true);
        let (p, b) = match (solve_ptas(&inst, alpha, eps, &cfg), brute_force_nomenu(&inst, &GridSpec::fit_nomenu(&inst))) {
            (Ok(p), Ok(b)) => (p, b),
            (p, b) => {
                failures.push(format!("#{i} ptas {:?} oracle {:?}", p.err(), b.err()));
                continue;
            }
        };
        let margin = p.value - (b.value - (alpha + 2.0 * eps.sqrt()) - b.slack);
        worst = worst.min(p.value - b.value);
        if margin < 0.0 {
            failures.push(format!("#{i} ptas {} oracle {}", p.value, b.value));
        }
    }
    verdict(failures.is_empty(), format!("50 instances, min ptas - oracle {worst:.2e}; {}", failures.join("; ")))
}

fn linear_payment_bound() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = f64::INFINITY;
    let mut errors = Vec::new();
    for j in 0..20 {
        let (d, m, n) = dims(&mut rng, 3, 3, 3);
        let inst = random_instance(d, m, n, 500 + j, true);
        for _ in 0..5 {
            let xi = posterior(&mut rng, d);
            for rho in [0.5f64, 0.25, 0.125] {
                let grid = (1.0 / (2.0 * rho)).floor() as i32;
                match best_linear_payment(&inst, &xi, rho) {
                    Ok((_, p)) => worst = worst.min(p.value - (rho * surplus_bound(&inst, &xi) - 0.5f64.powi(grid))),
                    Err(e) => errors.push(e.to_string()),
                }
            }
        }
    }
    verdict(errors.is_empty() && worst >= -1e-9, format!("300 checks, worst slack {worst:.3e}; {}", errors.join("; ")))
}

fn robust_payment_bound() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = f64::INFINITY;
    for _ in 0..100 {
        let (d, m, n) = dims(&mut rng, 3, 3, 3);
        let inst = random_instance(d, m, n, rng.random(), true);
        let xi = posterior(&mut rng, d);
        let pay: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        let eps = rng.random_range(0.0..0.25);
        let approx = evaluate_payment(&inst, &xi, &pay, eps);
        let robust = robustify(&inst, &xi, &pay, eps);
        worst = worst.min(robust.value - (approx.value - 2.0 * eps.sqrt()));
    }
    verdict(worst >= -1e-9, format!("100 triples, worst slack {worst:.3e}"))
}

fn contract_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for i in 0..50 {
        let (d, m, n) = dims(&mut rng, 3, 3, 2);
        let inst = random_instance(d, m, n, rng.random(), true);
        let xi = posterior(&mut rng, d);
        let pa = to_pa(&inst, &xi);
        let (c, p) = match (optimal_contract(&pa), optimal_payment_in_posterior(&inst, &xi)) {
            (Ok(c), Ok(p)) => (c, p),
            (c, p) => {
                failures.push(format!("#{i} {:?} {:?}", c.err(), p.err()));
                continue;
            }
        };
        worst = worst.max((c.value - p.value).abs());
        if (c.value - p.value).abs() > 1e-9 {
            failures.push(format!("#{i} contract {} payment {}", c.value, p.value));
        }
        for k in 0..n {
            if agent_response_set(&pa, &c.contract, k) != best_response_set(&inst, &xi, &c.contract.payments, k, 0.0) {
                failures.push(format!("#{i} response sets differ for type {k}"));
            }
        }
    }
    verdict(failures.is_empty(), format!("50 pairs, max value gap {worst:.2e}; {}", failures.join("; ")))
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn decomposition_consistency() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for i in 0..200 {
        let d = rng.random_range(2..=4);
        let q = rng.random_range(1..=10u32);
        let target = posterior(&mut rng, d);
        let alpha = (18.0 * d as f64 / q as f64).sqrt();
        for (name, r) in [("multinomial", decompose_multinomial(&target, q)), ("local", decompose_local(&target, q, alpha))] {
            match r {
                Ok(dist) => {
                    let err = dist.consistency_error(&target);
                    worst = worst.max(err);
                    if err > 1e-9 {
                        failures.push(format!("#{i} {name} error {err:.2e}"));
                    }
                }
                Err(e) => failures.push(format!("#{i} {name}: {e}")),
            }
        }
    }
    for d in 1..=5usize {
        for q in 1..=12u32 {
            let got = enumerate_quniform(d, q).map(|s| s.len() as u64);
            let want = binomial(q as u64 + d as u64 - 1, d as u64 - 1);
            if got.as_ref().ok() != Some(&want) {
                failures.push(format!("d={d} q={q}: {got:?} vs {want}"));
            }
        }
    }
    verdict(failures.is_empty(), format!("400 decompositions, worst error {worst:.2e}; 60 grid sizes; {}", failures.join("; ")))
}

fn random_protocol(rng: &mut ChaCha8Rng, inst: &Instance) -> NoMenuProtocol {
    let (d, m) = (inst.num_states(), inst.num_actions());
    let signals = rng.random_range(1..=5);
    let phi: Vec<Vec<f64>> = (0..d).map(|_| posterior(rng, signals)).collect();
    let payments: Vec<Vec<f64>> = (0..signals).map(|_| (0..m).map(|_| rng.random_range(0.0..0.6)).collect()).collect();
    let top = inst.budgets.iter().copied().fold(0.0, f64::max);
    let price = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..=top * 1.2 + 0.1) };
    NoMenuProtocol::from_signal_table(&inst.prior, &phi, price, &payments, None)
}

fn normalization_invariance() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for i in 0..100 {
        let (d, m, n) = dims(&mut rng, 3, 3, 3);
        let inst = random_instance(d, m, n, rng.random(), rng.random_bool(0.3));
        let p = random_protocol(&mut rng, &inst);
        let q = normalize_generalized_direct(&inst, &p);
        let gap = (eval_nomenu(&inst, &p).utility - eval_nomenu(&inst, &q).utility).abs();
        worst = worst.max(gap);
        if gap > 1e-9 {
            failures.push(format!("#{i} value moved by {gap:.2e}"));
        }
        if !inst.budgets.contains(&q.price) {
            failures.push(format!("#{i} price {} not a budget", q.price));
        }
        let again = normalize_generalized_direct(&inst, &q);
        if again.signals.len() != q.signals.len() || again.price != q.price {
            failures.push(format!("#{i} not idempotent"));
        }
    }
    verdict(failures.is_empty(), format!("100 protocols, max value change {worst:.2e}; {}", failures.join("; ")))
}

fn three_candidate_dominance() -> Verdict {
    let cfg = SolverConfig::default();
    let rho = 1.0 / 12.0;
    let mut failures = Vec::new();
    let mut instances: Vec<Instance> = (0..30).map(|s| random_instance(2, 2, 2, 900 + s, s % 2 == 0)).collect();
    instances.push(fixtures::illustrative_single_type());
    instances.push(fixtures::full_information_premium());
    for (i, inst) in instances.iter().enumerate() {
        match solve_general(inst, 1.0, rho, &cfg) {
            Ok(r) => {
                let best = r.candidates.iter().map(|c| eval_nomenu(inst, &c.protocol).utility).fold(f64::NEG_INFINITY, f64::max);
                if (r.value - best).abs() > 1e-12 || r.candidates.len() != 3 {
                    failures.push(format!("#{i} value {} vs best candidate {best}", r.value));
                }
            }
            Err(e) => failures.push(format!("#{i}: {e}")),
        }
    }
    let premium = fixtures::full_information_premium();
    let detail = match solve_general(&premium, 1.0, rho, &cfg) {
        Ok(r) => {
            let chosen = r.selected.clone().unwrap_or_default();
            if chosen != "full-revelation" || r.value < 0.25 - 1e-9 {
                failures.push(format!("fixture picked {chosen} with {}", r.value));
            }
            format!("fixture picked {chosen} at {}", r.value)
        }
        Err(e) => {
            failures.push(format!("fixture: {e}"));
            String::new()
        }
    };
    verdict(failures.is_empty(), format!("{} instances, {detail}; {}", instances.len(), failures.join("; ")))
}

fn main() {
    type Criterion = (&'static str, fn() -> Verdict, Duration);
    let criteria: [Criterion; 10] = [
        ("illustrative example exactness", illustrative_example, Duration::from_secs(60)),
        ("menu LP exactness", menu_exactness, Duration::from_secs(300)),
        ("fixed-types exactness", fixed_types_exactness, Duration::from_secs(600)),
        ("ptas bound", ptas_bound, Duration::from_secs(600)),
        ("linear payment inequality", linear_payment_bound, Duration::from_secs(60)),
        ("robust payment inequality", robust_payment_bound, Duration::from_secs(60)),
        ("contract equivalence", contract_equivalence, Duration::from_secs(120)),
        ("decomposition consistency", decomposition_consistency, Duration::from_secs(60)),
        ("normalization invariance", normalization_invariance, Duration::from_secs(60)),
        ("three-candidate dominance", three_candidate_dominance, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = check();
        let elapsed = start.elapsed();
        let ok = v.passed && elapsed <= *budget;
        if !ok {
            failed += 1;
        }
        let detail = v.detail.trim_end_matches([';', ' ']);
        println!("criterion {:>2} {}: {name} ({elapsed:.2?}) {detail}", i + 1, if ok { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {}/10 passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

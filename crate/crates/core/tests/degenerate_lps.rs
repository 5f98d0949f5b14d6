//! Limited-liability menus with three actions and three types give highly
//! degenerate LPs; every one must solve, recover and certify.

use infosell::menu::solve_menu;
use infosell::oracle::{certify, ProtocolRef};
use infosell::random_instance;

#[test]
fn menus_solve_on_degenerate_lps() {
    for seed in 0..150 {
        let d = 1 + seed as usize % 3;
        let inst = random_instance(d, 3, 3, seed, true);
        let sol = solve_menu(&inst).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        assert!((sol.value - sol.lp_value).abs() < 1e-6, "seed {seed}");
        let cert = certify(&inst, ProtocolRef::Menu(&sol.protocol));
        assert!(cert.passed, "seed {seed}: {:?}", cert.checks);
    }
}

#[test]
fn backends_agree_on_menu_lps() {
    use infosell::lp::{solve_dense, solve_sparse, LpStatus};
    use infosell::menu::build_menu_lp;
    for seed in 0..40 {
        let lp = build_menu_lp(&random_instance(2, 2, 2, seed, seed % 2 == 0));
        let (a, b) = (solve_sparse(&lp).unwrap(), solve_dense(&lp).unwrap());
        assert_eq!(a.status, LpStatus::Optimal);
        assert_eq!(b.status, LpStatus::Optimal);
        assert!((a.objective - b.objective).abs() < 1e-7, "seed {seed}");
    }
}

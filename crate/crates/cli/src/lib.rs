//! Command-line plumbing: argument parsing, solver dispatch, certification
//! and report rendering. `run` returns the exit code and captured output so
//! tests can drive it without spawning a process.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use infosell::menu::solve_menu;
use infosell::nomenu::{
    solve_fixed_states, solve_fixed_types, solve_general, solve_ptas, solve_quasipoly, SolveReport, SolverConfig,
};
use infosell::oracle::{brute_force_nomenu, certify, CertReport, GridSpec, ProtocolRef};
use infosell::principal_agent::{from_pa, to_pa, PAInstance};
use infosell::{belief, instance::SCHEMA_VERSION, random_instance, Error, Instance, MenuProtocol, NoMenuProtocol};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

/// Largest share of the optimum the general solver accepts.
const GENERAL_RHO_MAX: f64 = 1.0 / 6.0;

#[derive(Parser, Debug)]
#[command(name = "infosell", version, about = "Seller-optimal protocols for selling information")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check an instance file against the schema and its invariants.
    Validate {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Generate a random instance.
    Gen(GenArgs),
    /// Compute a protocol with the chosen method.
    Solve(SolveArgs),
    /// Evaluate a protocol's seller utility.
    Eval(ProtocolArgs),
    /// Independently certify a protocol's constraints.
    Verify(VerifyArgs),
    /// Convert between an instance at a posterior and a principal-agent instance.
    Convert(ConvertArgs),
    /// Run several methods on a batch of random instances.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct Output {
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Render an aligned text table instead of JSON.
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value_t = 2)]
    pub states: usize,
    #[arg(long, default_value_t = 2)]
    pub actions: usize,
    #[arg(long, default_value_t = 2)]
    pub types: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Zero budgets.
    #[arg(long)]
    pub limited_liability: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Menu,
    FixedTypes,
    Ptas,
    Qptas,
    FixedStates,
    General,
}

impl MethodArg {
    fn name(self) -> &'static str {
        match self {
            MethodArg::Menu => "menu",
            MethodArg::FixedTypes => "fixed-types",
            MethodArg::Ptas => "ptas",
            MethodArg::Qptas => "qptas",
            MethodArg::FixedStates => "fixed-states",
            MethodArg::General => "general",
        }
    }

    fn needs_limited_liability(self) -> bool {
        matches!(self, MethodArg::Ptas | MethodArg::Qptas | MethodArg::FixedStates)
    }
}

#[derive(Args, Debug, Clone, Copy)]
pub struct SolverFlags {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Cap on payment-hyperplane subsets examined per posterior.
    #[arg(long)]
    pub vertex_cap: Option<u64>,
    /// Cap on enumerated grid posteriors.
    #[arg(long)]
    pub quniform_cap: Option<u64>,
}

impl SolverFlags {
    fn config(&self) -> SolverConfig {
        let mut cfg = SolverConfig::default();
        if let Some(v) = self.vertex_cap {
            cfg.vertex_cap = v;
        }
        if let Some(v) = self.quniform_cap {
            cfg.quniform_cap = v;
        }
        cfg
    }
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[command(flatten)]
    pub solver: SolverFlags,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Args, Debug)]
pub struct ProtocolArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub protocol: PathBuf,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub input: ProtocolArgs,
    /// Participating types the protocol claims (comma separated indices).
    #[arg(long, value_delimiter = ',')]
    pub claimed_ir: Option<Vec<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ConvertTarget {
    /// Instance plus posterior to a principal-agent instance.
    Pa,
    /// Principal-agent instance to a single-state instance.
    Instance,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub to: ConvertTarget,
    /// Posterior over states (comma separated), required with `--to pa`.
    #[arg(long, value_delimiter = ',')]
    pub posterior: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Comma separated methods.
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    pub methods: Vec<MethodArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 2)]
    pub states: usize,
    #[arg(long, default_value_t = 2)]
    pub actions: usize,
    #[arg(long, default_value_t = 2)]
    pub types: usize,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    pub eps: f64,
    #[arg(long, default_value_t = 0.125)]
    pub rho: f64,
    /// Also report the brute-force reference value.
    #[arg(long)]
    pub oracle: bool,
    /// Scheme step of the brute-force reference (fitted to size caps when omitted).
    #[arg(long)]
    pub grid_step: Option<f64>,
    /// Worker threads; rows are reported in instance order regardless.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Add wall-clock seconds per row (output is then no longer reproducible).
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub output: Output,
}

/// Exit code plus captured streams.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Outcome {
    fn ok(stdout: String) -> Outcome {
        Outcome { code: EXIT_OK, stdout, stderr: String::new() }
    }

    fn fail(code: i32, msg: impl Into<String>) -> Outcome {
        let mut stderr = msg.into();
        if !stderr.ends_with('\n') {
            stderr.push('\n');
        }
        Outcome { code, stdout: String::new(), stderr }
    }
}

pub fn run<I, T>(argv: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            return if code == EXIT_OK { Outcome::ok(text) } else { Outcome::fail(code, text) };
        }
    };
    match cli.command {
        Command::Validate { instance } => validate(&instance),
        Command::Gen(a) => gen(&a),
        Command::Solve(a) => solve(&a),
        Command::Eval(a) => eval(&a),
        Command::Verify(a) => verify(&a),
        Command::Convert(a) => convert(&a),
        Command::Bench(a) => bench(&a),
    }
}

fn usage(msg: impl std::fmt::Display) -> Outcome {
    Outcome::fail(EXIT_USAGE, format!("error: {msg}"))
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Schema(_) | Error::Io(_) => EXIT_INVALID,
        Error::InvalidParameter(_) => EXIT_USAGE,
        _ => EXIT_SOLVER,
    }
}

fn from_error(e: Error) -> Outcome {
    Outcome::fail(exit_code(&e), format!("error: {e}"))
}

fn load_instance(path: &PathBuf) -> Result<Instance, Outcome> {
    let inst = Instance::load(path).map_err(from_error)?;
    let report = inst.validate();
    if report.is_valid() {
        Ok(inst)
    } else {
        Err(Outcome::fail(EXIT_INVALID, format!("error: invalid instance {}:\n{report}", path.display())))
    }
}

fn emit(report: &Value, output: &Output, table: impl FnOnce() -> String) -> Outcome {
    let text = if output.pretty {
        table()
    } else {
        let mut s = serde_json::to_string_pretty(report).expect("report serializes");
        s.push('\n');
        s
    };
    match &output.out {
        Some(path) => match std::fs::write(path, &text) {
            Ok(()) => Outcome::ok(String::new()),
            Err(e) => Outcome::fail(EXIT_INVALID, format!("error: cannot write {}: {e}", path.display())),
        },
        None => Outcome::ok(text),
    }
}

/// Aligned text table; all-numeric columns are right-aligned.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let numeric: Vec<bool> =
        (0..header.len()).map(|i| rows.iter().all(|r| r.get(i).is_none_or(|c| c.parse::<f64>().is_ok()))).collect();
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .zip(&numeric)
            .map(|((c, &w), &num)| if num { format!("{c:>w$}") } else { format!("{c:<w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &header.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    line(&mut out, &widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>());
    for row in rows {
        line(&mut out, row);
    }
    out
}

fn key_value_table(report: &Value) -> String {
    let rows: Vec<Vec<String>> = report
        .as_object()
        .map(|o| {
            o.iter()
                .filter(|(k, _)| *k != "protocol")
                .map(|(k, v)| vec![k.clone(), summarize(k, v)])
                .collect()
        })
        .unwrap_or_default();
    render_table(&["field", "value"], &rows)
}

fn summarize(key: &str, v: &Value) -> String {
    match (key, v) {
        ("certificate", _) => {
            let failed: Vec<&str> = v["checks"]
                .as_array()
                .map(|cs| cs.iter().filter(|c| c["passed"] == false).filter_map(|c| c["name"].as_str()).collect())
                .unwrap_or_default();
            if failed.is_empty() { "pass".into() } else { format!("FAIL ({})", failed.join(", ")) }
        }
        ("candidates", Value::Array(cs)) => cs
            .iter()
            .map(|c| format!("{}={}", c["name"].as_str().unwrap_or("?"), c["value"]))
            .collect::<Vec<_>>()
            .join(" "),
        (_, Value::String(s)) => s.clone(),
        _ => v.to_string(),
    }
}

fn validate(path: &PathBuf) -> Outcome {
    let inst = match Instance::load(path) {
        Ok(i) => i,
        Err(e) => {
            let report = json!({"valid": false, "violations": [e.to_string()]});
            return Outcome { code: EXIT_INVALID, ..Outcome::ok(format!("{report:#}\n")) };
        }
    };
    let report = inst.validate();
    let out = json!({"valid": report.is_valid(), "violations": report.violations});
    Outcome { code: if report.is_valid() { EXIT_OK } else { EXIT_INVALID }, ..Outcome::ok(format!("{out:#}\n")) }
}

fn gen(a: &GenArgs) -> Outcome {
    if a.states == 0 || a.actions == 0 || a.types == 0 {
        return usage("--states, --actions and --types must be positive");
    }
    let inst = random_instance(a.states, a.actions, a.types, a.seed, a.limited_liability);
    let text = inst.to_json_string() + "\n";
    match &a.out {
        Some(p) => match std::fs::write(p, text) {
            Ok(()) => Outcome::ok(String::new()),
            Err(e) => Outcome::fail(EXIT_INVALID, format!("error: cannot write {}: {e}", p.display())),
        },
        None => Outcome::ok(text),
    }
}

fn require(flag: &str, v: Option<f64>, method: MethodArg) -> Result<f64, Outcome> {
    v.ok_or_else(|| usage(format!("method {} requires --{flag}", method.name())))
}

/// Parameters a method needs, checked before any solving.
#[derive(Debug, Clone, Copy)]
struct Checked {
    alpha: f64,
    eps: f64,
    rho: f64,
}

fn check_params(method: MethodArg, f: &SolverFlags) -> Result<Checked, Outcome> {
    let mut c = Checked { alpha: 0.0, eps: 0.0, rho: 0.0 };
    let needs = match method {
        MethodArg::Menu | MethodArg::FixedTypes => (false, false, false),
        MethodArg::Ptas => (true, true, false),
        MethodArg::Qptas => (true, true, true),
        MethodArg::FixedStates => (true, false, true),
        MethodArg::General => (true, false, true),
    };
    if needs.0 {
        c.alpha = require("alpha", f.alpha, method)?;
        if !(c.alpha > 0.0 && c.alpha.is_finite()) {
            return Err(usage("--alpha must be positive"));
        }
    }
    if needs.1 {
        c.eps = require("eps", f.eps, method)?;
        if !(c.eps > 0.0 && c.eps.is_finite()) {
            return Err(usage("--eps must be positive"));
        }
    }
    if needs.2 {
        c.rho = require("rho", f.rho, method)?;
        let max = if method == MethodArg::General { GENERAL_RHO_MAX } else { 0.5 };
        if !(c.rho > 0.0 && c.rho <= max + 1e-12) {
            let bound = if method == MethodArg::General { "1/6" } else { "1/2" };
            return Err(usage(format!("--rho must lie in (0, {bound}] for method {}, got {}", method.name(), c.rho)));
        }
    }
    Ok(c)
}

fn run_nomenu(inst: &Instance, method: MethodArg, c: Checked, cfg: &SolverConfig) -> infosell::Result<SolveReport> {
    match method {
        MethodArg::FixedTypes => solve_fixed_types(inst, cfg),
        MethodArg::Ptas => solve_ptas(inst, c.alpha, c.eps, cfg),
        MethodArg::Qptas => solve_quasipoly(inst, c.alpha, c.eps, c.rho, cfg),
        MethodArg::FixedStates => solve_fixed_states(inst, c.alpha, c.rho, cfg),
        MethodArg::General => solve_general(inst, c.alpha, c.rho, cfg),
        MethodArg::Menu => unreachable!("menus are solved separately"),
    }
}

/// Certification must pass and agree with the reported value.
fn certified(cert: &CertReport, value: f64) -> bool {
    cert.passed && (cert.utility - value).abs() <= 1e-9
}

fn solve(a: &SolveArgs) -> Outcome {
    let c = match check_params(a.method, &a.solver) {
        Ok(c) => c,
        Err(o) => return o,
    };
    let inst = match load_instance(&a.instance) {
        Ok(i) => i,
        Err(o) => return o,
    };
    if a.method.needs_limited_liability() && !inst.is_limited_liability() {
        return Outcome::fail(EXIT_INVALID, format!("error: method {} needs zero budgets", a.method.name()));
    }
    let (report, cert, value) = if a.method == MethodArg::Menu {
        let sol = match solve_menu(&inst) {
            Ok(s) => s,
            Err(e) => return from_error(e),
        };
        let cert = certify(&inst, ProtocolRef::Menu(&sol.protocol));
        let mut report = json!({"schema_version": SCHEMA_VERSION, "method": "menu"});
        merge(&mut report, sol.to_json(&inst));
        (report, cert, sol.value)
    } else {
        let sol = match run_nomenu(&inst, a.method, c, &a.solver.config()) {
            Ok(s) => s,
            Err(e) => return from_error(e),
        };
        let cert = certify(&inst, ProtocolRef::NoMenu { protocol: &sol.protocol, claimed_ir: Some(&sol.ir_set) });
        let mut report = json!({"schema_version": SCHEMA_VERSION});
        merge(&mut report, serde_json::to_value(&sol).expect("report serializes"));
        (report, cert, sol.value)
    };
    let ok = certified(&cert, value);
    let mut report = report;
    report["certificate"] = serde_json::to_value(&cert).expect("certificate serializes");
    let out = emit(&report, &a.output, || key_value_table(&report));
    if ok {
        out
    } else {
        Outcome { code: EXIT_SOLVER, stderr: "error: certification failed\n".into(), ..out }
    }
}

fn merge(into: &mut Value, from: Value) {
    if let (Some(a), Value::Object(b)) = (into.as_object_mut(), from) {
        a.extend(b);
    }
}

enum Loaded {
    Menu(MenuProtocol),
    NoMenu(NoMenuProtocol),
}

fn load_protocol(inst: &Instance, path: &PathBuf) -> Result<Loaded, Outcome> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Outcome::fail(EXIT_INVALID, format!("error: cannot read {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| Outcome::fail(EXIT_INVALID, format!("error: {}: {e}", path.display())))?;
    // Solve reports nest the protocol; accept them directly.
    let v = match v.get("protocol") {
        Some(p) if v.get("method").is_some() => p.clone(),
        _ => v,
    };
    let bad = |e: String| Outcome::fail(EXIT_INVALID, format!("error: {}: {e}", path.display()));
    if v.get("signals").is_some() {
        let p: NoMenuProtocol = serde_json::from_value(v).map_err(|e| bad(e.to_string()))?;
        let d = inst.num_states();
        let m = inst.num_actions();
        if p.signals.iter().any(|s| s.posterior.len() != d || s.payments.len() != m) {
            return Err(bad("signal dimensions do not match the instance".into()));
        }
        if p.signals.iter().any(|s| s.label.as_ref().is_some_and(|l| l.len() != inst.num_types() || l.iter().any(|&a| a >= m))) {
            return Err(bad("signal labels do not match the instance".into()));
        }
        Ok(Loaded::NoMenu(p))
    } else {
        let p = MenuProtocol::from_json(inst, &v).map_err(|e| bad(e.to_string()))?;
        let (d, m) = (inst.num_states(), inst.num_actions());
        if p.entries.iter().any(|e| e.scheme.len() != d || e.scheme.iter().any(|r| r.len() != m) || e.payments.len() != m) {
            return Err(bad("menu entry dimensions do not match the instance".into()));
        }
        Ok(Loaded::Menu(p))
    }
}

fn eval(a: &ProtocolArgs) -> Outcome {
    let inst = match load_instance(&a.instance) {
        Ok(i) => i,
        Err(o) => return o,
    };
    let report = match load_protocol(&inst, &a.protocol) {
        Err(o) => return o,
        Ok(Loaded::Menu(p)) => {
            let ev = belief::eval_menu(&inst, &p);
            json!({"kind": "menu", "value": ev.utility, "ic_ok": ev.ic_ok, "ir_ok": ev.ir_ok})
        }
        Ok(Loaded::NoMenu(p)) => {
            let ev = belief::eval_nomenu(&inst, &p);
            json!({"kind": "no-menu", "value": ev.utility, "ir_set": ev.ir_set})
        }
    };
    emit(&report, &a.output, || key_value_table(&report))
}

fn verify(a: &VerifyArgs) -> Outcome {
    let inst = match load_instance(&a.input.instance) {
        Ok(i) => i,
        Err(o) => return o,
    };
    if let Some(c) = &a.claimed_ir {
        if c.iter().any(|&k| k >= inst.num_types()) {
            return usage("--claimed-ir names a type index out of range");
        }
    }
    let cert = match load_protocol(&inst, &a.input.protocol) {
        Err(o) => return o,
        Ok(Loaded::Menu(p)) => certify(&inst, ProtocolRef::Menu(&p)),
        Ok(Loaded::NoMenu(p)) => certify(&inst, ProtocolRef::NoMenu { protocol: &p, claimed_ir: a.claimed_ir.as_deref() }),
    };
    let report = serde_json::to_value(&cert).expect("certificate serializes");
    let out = emit(&report, &a.input.output, || {
        let rows: Vec<Vec<String>> = cert
            .checks
            .iter()
            .map(|c| vec![c.name.to_string(), if c.passed { "pass" } else { "FAIL" }.into(), format!("{:.3e}", c.worst_slack)])
            .collect();
        format!("utility {}\n{}", cert.utility, render_table(&["check", "result", "worst_slack"], &rows))
    });
    if cert.passed {
        out
    } else {
        Outcome { code: EXIT_SOLVER, ..out }
    }
}

fn convert(a: &ConvertArgs) -> Outcome {
    let text = match a.to {
        ConvertTarget::Pa => {
            let inst = match load_instance(&a.input) {
                Ok(i) => i,
                Err(o) => return o,
            };
            let Some(xi) = &a.posterior else {
                return usage("--to pa requires --posterior");
            };
            let sum: f64 = xi.iter().sum();
            if xi.len() != inst.num_states() || xi.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return usage("--posterior must be a distribution over the instance's states");
            }
            to_pa(&inst, xi).to_json_string()
        }
        ConvertTarget::Instance => {
            let raw = match std::fs::read_to_string(&a.input) {
                Ok(s) => s,
                Err(e) => return Outcome::fail(EXIT_INVALID, format!("error: cannot read {}: {e}", a.input.display())),
            };
            let pa = match PAInstance::from_json_str(&raw) {
                Ok(p) => p,
                Err(e) => return from_error(e),
            };
            let problems = pa.validate();
            if !problems.is_empty() {
                return Outcome::fail(EXIT_INVALID, format!("error: invalid principal-agent instance:\n{}", problems.join("\n")));
            }
            from_pa(&pa).to_json_string()
        }
    } + "\n";
    match &a.out {
        Some(p) => match std::fs::write(p, text) {
            Ok(()) => Outcome::ok(String::new()),
            Err(e) => Outcome::fail(EXIT_INVALID, format!("error: cannot write {}: {e}", p.display())),
        },
        None => Outcome::ok(text),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub instance: usize,
    pub seed: u64,
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

fn bench_one(a: &BenchArgs, i: usize, c: Checked, cfg: &SolverConfig, ll: bool) -> Vec<BenchRow> {
    let seed = a.seed.wrapping_add(i as u64);
    let inst = random_instance(a.states, a.actions, a.types, seed, ll);
    let mut rows = Vec::new();
    let mut push = |method: &str, start: Instant, res: infosell::Result<f64>| {
        let (value, error) = match res {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let seconds = a.timing.then(|| start.elapsed().as_secs_f64());
        rows.push(BenchRow { instance: i, seed, method: method.into(), value, error, seconds });
    };
    for &m in &a.methods {
        let start = Instant::now();
        let res = if m == MethodArg::Menu {
            solve_menu(&inst).map(|s| s.value)
        } else {
            run_nomenu(&inst, m, c, cfg).map(|s| s.value)
        };
        push(m.name(), start, res);
    }
    if a.oracle {
        let start = Instant::now();
        let mut grid = GridSpec::fit_nomenu(&inst);
        if let Some(s) = a.grid_step {
            grid.scheme_step = s;
        }
        push("oracle", start, brute_force_nomenu(&inst, &grid).map(|r| r.value));
    }
    rows
}

fn bench(a: &BenchArgs) -> Outcome {
    if a.states == 0 || a.actions == 0 || a.types == 0 {
        return usage("--states, --actions and --types must be positive");
    }
    if let Some(s) = a.grid_step {
        let t = 1.0 / s;
        if !(s > 0.0 && s <= 1.0 && (t - t.round()).abs() < 1e-9) {
            return usage("--grid-step must be 1/k for a positive integer k");
        }
    }
    let flags = SolverFlags { alpha: Some(a.alpha), eps: Some(a.eps), rho: Some(a.rho), vertex_cap: None, quniform_cap: None };
    let mut c = Checked { alpha: a.alpha, eps: a.eps, rho: a.rho };
    for &m in &a.methods {
        match check_params(m, &flags) {
            Ok(x) => c = Checked { alpha: x.alpha.max(c.alpha), eps: x.eps.max(c.eps), rho: c.rho },
            Err(o) => return o,
        }
    }
    let ll = a.methods.iter().any(|m| m.needs_limited_liability());
    let cfg = SolverConfig::default();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(a.jobs.max(1)).build() {
        Ok(p) => p,
        Err(e) => return Outcome::fail(EXIT_SOLVER, format!("error: {e}")),
    };
    let rows: Vec<BenchRow> =
        pool.install(|| (0..a.count).into_par_iter().flat_map_iter(|i| bench_one(a, i, c, &cfg, ll)).collect());
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "states": a.states,
        "actions": a.actions,
        "types": a.types,
        "limited_liability": ll,
        "rows": rows,
    });
    emit(&report, &a.output, || {
        let mut header = vec!["instance", "seed", "method", "value"];
        if a.timing {
            header.push("seconds");
        }
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                let mut row = vec![
                    r.instance.to_string(),
                    r.seed.to_string(),
                    r.method.clone(),
                    r.value.map_or_else(|| r.error.clone().unwrap_or_default(), |v| format!("{v:.6}")),
                ];
                if let Some(s) = r.seconds {
                    row.push(format!("{s:.4}"));
                }
                row
            })
            .collect();
        render_table(&header, &table)
    })
}

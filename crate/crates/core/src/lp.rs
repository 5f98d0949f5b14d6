//! Linear programs with non-negative variables and a maximized objective.
//!
//! `solve` runs the sparse revised simplex of `microlp` and falls back to an
//! in-repo dense two-phase simplex when that backend gives up. Either way the
//! returned point is checked against the original rows before it is reported
//! optimal. The dense simplex uses the largest reduced profit, switches to
//! Bland's rule after a run of degenerate pivots, and re-solves its final
//! basis with an LU factorization to clean up rounding.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Constraint slack accepted on the returned solution.
pub const FEASIBILITY_TOL: f64 = 1e-7;
const OPTIMALITY_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `maximize c·x` subject to linear rows and `x ≥ 0`.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    names: Vec<String>,
    objective: Vec<f64>,
    rows: Vec<Row>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective value; NaN unless optimal.
    pub objective: f64,
    /// Variable assignment; empty unless optimal.
    pub x: Vec<f64>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add an unnamed variable with objective coefficient `obj`.
    pub fn add_var(&mut self, obj: f64) -> usize {
        self.names.push(String::new());
        self.objective.push(obj);
        self.objective.len() - 1
    }

    pub fn add_named_var(&mut self, name: impl Into<String>, obj: f64) -> usize {
        let i = self.add_var(obj);
        self.names[i] = name.into();
        i
    }

    pub fn set_objective(&mut self, var: usize, coef: f64) {
        self.objective[var] = coef;
    }

    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        debug_assert!(coeffs.iter().all(|&(j, a)| j < self.num_vars() && a.is_finite()));
        debug_assert!(rhs.is_finite());
        self.rows.push(Row { coeffs, sense, rhs });
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn name(&self, var: usize) -> &str {
        &self.names[var]
    }

    /// Index of the first variable registered under `name`.
    pub fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|s| s == name)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation over all rows and sign constraints.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().fold(0.0_f64, |w, &v| w.max(-v));
        for r in &self.rows {
            let lhs: f64 = r.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            let v = match r.sense {
                Sense::Le => lhs - r.rhs,
                Sense::Ge => r.rhs - lhs,
                Sense::Eq => (lhs - r.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }
}

struct Tableau {
    width: usize,
    data: Vec<f64>,
    z: Vec<f64>,
    basis: Vec<usize>,
    /// Original row index of each tableau row.
    origin: Vec<usize>,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.data[i * self.width + self.width - 1]
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn rows(&self) -> usize {
        self.basis.len()
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.data[r * w + c];
        let (before, rest) = self.data.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for v in prow.iter_mut() {
            *v /= p;
        }
        prow[c] = 1.0;
        let eliminate = |row: &mut [f64]| {
            let f = row[c];
            if f != 0.0 {
                for (x, y) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * y;
                }
                row[c] = 0.0;
            }
        };
        before.chunks_mut(w).for_each(eliminate);
        after.chunks_mut(w).for_each(eliminate);
        eliminate(&mut self.z);
        self.basis[r] = c;
    }

    fn remove_row(&mut self, r: usize) {
        let w = self.width;
        self.data.drain(r * w..(r + 1) * w);
        self.basis.remove(r);
        self.origin.remove(r);
    }

    /// Run simplex iterations on the current z-row; columns `>= limit` never enter.
    fn optimize(&mut self, limit: usize, max_iter: usize) -> Result<bool> {
        let mut degenerate = 0;
        let mut bland = false;
        for _ in 0..max_iter {
            let entering = if bland {
                (0..limit).find(|&j| self.z[j] > OPTIMALITY_TOL)
            } else {
                let mut best = None;
                let mut best_val = OPTIMALITY_TOL;
                for j in 0..limit {
                    if self.z[j] > best_val {
                        best_val = self.z[j];
                        best = Some(j);
                    }
                }
                best
            };
            let Some(c) = entering else { return Ok(true) };

            let mut leave: Option<(usize, f64, f64)> = None;
            for i in 0..self.rows() {
                let a = self.at(i, c);
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio, a)),
                    Some((bi, br, ba)) => {
                        let tie = (ratio - br).abs() <= 1e-12 * br.abs().max(1.0);
                        let better = if tie {
                            if bland {
                                self.basis[i] < self.basis[bi]
                            } else {
                                a > ba
                            }
                        } else {
                            ratio < br
                        };
                        if better {
                            Some((i, ratio, a))
                        } else {
                            Some((bi, br, ba))
                        }
                    }
                };
            }
            let Some((r, ratio, _)) = leave else { return Ok(false) };
            if ratio <= 1e-12 {
                degenerate += 1;
                if degenerate >= DEGENERATE_RUN {
                    bland = true;
                }
            } else {
                degenerate = 0;
            }
            self.pivot(r, c);
        }
        Err(Error::NumericalFailure("iteration limit reached".into()))
    }
}

/// Solve `lp`. Deterministic for a fixed input.
pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    match solve_sparse(lp) {
        Ok(sol) => Ok(sol),
        Err(Error::NumericalFailure(first)) => {
            solve_dense(lp).map_err(|e| Error::NumericalFailure(format!("{first}; dense fallback: {e}")))
        }
        Err(e) => Err(e),
    }
}

fn certified(lp: &LinearProgram, mut x: Vec<f64>) -> Result<LpSolution> {
    for v in x.iter_mut() {
        if *v < 0.0 && *v > -1e-9 {
            *v = 0.0;
        }
    }
    let violation = lp.max_violation(&x);
    if violation > FEASIBILITY_TOL || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure(format!("final solution violates rows by {violation:e}")));
    }
    Ok(LpSolution { status: LpStatus::Optimal, objective: lp.objective_value(&x), x })
}

/// Solve with the `microlp` backend.
pub fn solve_sparse(lp: &LinearProgram) -> Result<LpSolution> {
    use microlp::{ComparisonOp, OptimizationDirection, Problem};
    let mut p = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = lp.objective().iter().map(|&c| p.add_var(c, (0.0, f64::INFINITY))).collect();
    for r in lp.rows() {
        let op = match r.sense {
            Sense::Le => ComparisonOp::Le,
            Sense::Ge => ComparisonOp::Ge,
            Sense::Eq => ComparisonOp::Eq,
        };
        p.add_constraint(r.coeffs.iter().map(|&(j, a)| (vars[j], a)), op, r.rhs);
    }
    match p.solve() {
        Ok(microlp::SolveOutcome::Solution(sol)) => certified(lp, vars.iter().map(|&v| sol.var_value(v)).collect()),
        Ok(microlp::SolveOutcome::Interrupted(_)) => Err(Error::NumericalFailure("sparse backend interrupted".into())),
        Err(microlp::Error::Infeasible) => Ok(LpSolution { status: LpStatus::Infeasible, objective: f64::NAN, x: vec![] }),
        Err(microlp::Error::Unbounded) => Ok(LpSolution { status: LpStatus::Unbounded, objective: f64::NAN, x: vec![] }),
        Err(e) => Err(Error::NumericalFailure(format!("sparse backend: {e}"))),
    }
}

/// Solve with the dense tableau simplex.
pub fn solve_dense(lp: &LinearProgram) -> Result<LpSolution> {
    let n = lp.num_vars();
    let rows = lp.rows();
    let mrows = rows.len();
    let mut flips = Vec::with_capacity(mrows);
    let mut senses = Vec::with_capacity(mrows);
    for r in rows {
        let flip = r.rhs < 0.0;
        flips.push(if flip { -1.0 } else { 1.0 });
        senses.push(match (r.sense, flip) {
            (Sense::Le, true) => Sense::Ge,
            (Sense::Ge, true) => Sense::Le,
            (s, _) => s,
        });
    }
    let num_slack = senses.iter().filter(|s| **s != Sense::Eq).count();
    let num_art = senses.iter().filter(|s| **s != Sense::Le).count();
    let art_start = n + num_slack;
    let width = art_start + num_art + 1;

    let mut t = Tableau {
        width,
        data: vec![0.0; mrows * width],
        z: vec![0.0; width],
        basis: vec![0; mrows],
        origin: (0..mrows).collect(),
    };
    // slack_col[i] is the slack/surplus column of row i (if any).
    let mut slack_col = vec![usize::MAX; mrows];
    let mut next_slack = n;
    let mut next_art = art_start;
    for (i, r) in rows.iter().enumerate() {
        let row = &mut t.data[i * width..(i + 1) * width];
        for &(j, a) in &r.coeffs {
            row[j] += flips[i] * a;
        }
        row[width - 1] = flips[i] * r.rhs;
        match senses[i] {
            Sense::Le => {
                row[next_slack] = 1.0;
                slack_col[i] = next_slack;
                t.basis[i] = next_slack;
                next_slack += 1;
            }
            Sense::Ge => {
                row[next_slack] = -1.0;
                slack_col[i] = next_slack;
                next_slack += 1;
                row[next_art] = 1.0;
                t.basis[i] = next_art;
                next_art += 1;
            }
            Sense::Eq => {
                row[next_art] = 1.0;
                t.basis[i] = next_art;
                next_art += 1;
            }
        }
    }
    let max_iter = 50_000 + 20 * (mrows + width);

    // Phase 1: maximize minus the sum of artificials.
    if num_art > 0 {
        for i in 0..mrows {
            if t.basis[i] >= art_start {
                let row = &t.data[i * width..(i + 1) * width];
                for (zj, a) in t.z.iter_mut().zip(row) {
                    *zj += a;
                }
            }
        }
        for j in art_start..width - 1 {
            t.z[j] = 0.0;
        }
        t.optimize(width - 1, max_iter)?;
        let infeasibility = t.z[width - 1];
        let scale = 1.0 + rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
        if infeasibility > FEASIBILITY_TOL * scale {
            return Ok(LpSolution { status: LpStatus::Infeasible, objective: f64::NAN, x: vec![] });
        }
        // Drive remaining artificials out of the basis; drop redundant rows.
        let mut i = 0;
        while i < t.rows() {
            if t.basis[i] >= art_start {
                let mut best: Option<(usize, f64)> = None;
                for j in 0..art_start {
                    let a = t.at(i, j).abs();
                    if a > PIVOT_TOL && best.is_none_or(|(_, b)| a > b) {
                        best = Some((j, a));
                    }
                }
                match best {
                    Some((j, _)) => t.pivot(i, j),
                    None => {
                        t.remove_row(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
    }

    // Phase 2.
    let c = lp.objective();
    let cost = |j: usize| if j < n { c[j] } else { 0.0 };
    t.z.iter_mut().for_each(|v| *v = 0.0);
    t.z[..n].copy_from_slice(c);
    for i in 0..t.rows() {
        let cb = cost(t.basis[i]);
        if cb != 0.0 {
            let row = &t.data[i * width..(i + 1) * width];
            for (zj, a) in t.z.iter_mut().zip(row) {
                *zj -= cb * a;
            }
        }
    }
    for j in art_start..width - 1 {
        t.z[j] = 0.0;
    }
    if !t.optimize(art_start, max_iter)? {
        return Ok(LpSolution { status: LpStatus::Unbounded, objective: f64::NAN, x: vec![] });
    }

    let mut x = vec![0.0; n];
    for i in 0..t.rows() {
        if t.basis[i] < n {
            x[t.basis[i]] = t.rhs(i);
        }
    }
    if let Some(refined) = refine(lp, &t, &flips, &slack_col, n) {
        if lp.max_violation(&refined) <= lp.max_violation(&x) {
            x = refined;
        }
    }
    certified(lp, x)
}

/// Re-solve the final basis system directly.
fn refine(lp: &LinearProgram, t: &Tableau, flips: &[f64], slack_col: &[usize], n: usize) -> Option<Vec<f64>> {
    let k = t.rows();
    if k == 0 || k > 800 {
        return None;
    }
    let mut pos = vec![usize::MAX; t.width];
    for (p, &j) in t.basis.iter().enumerate() {
        pos[j] = p;
    }
    let mut b = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for (i, &orig) in t.origin.iter().enumerate() {
        let row = &lp.rows()[orig];
        for &(j, a) in &row.coeffs {
            if pos[j] != usize::MAX {
                b[(i, pos[j])] += flips[orig] * a;
            }
        }
        let s = slack_col[orig];
        if s != usize::MAX && pos[s] != usize::MAX {
            b[(i, pos[s])] = if row.sense == Sense::Eq {
                0.0
            } else if (row.sense == Sense::Le) == (flips[orig] > 0.0) {
                1.0
            } else {
                -1.0
            };
        }
        rhs[i] = flips[orig] * row.rhs;
    }
    // Artificial columns have left the basis by now; a leftover one means the
    // basis does not map onto original columns.
    if t.basis.iter().any(|&j| j >= n && !slack_col.contains(&j)) {
        return None;
    }
    let sol = b.lu().solve(&rhs)?;
    let mut x = vec![0.0; n];
    for (p, &j) in t.basis.iter().enumerate() {
        if j < n {
            x[j] = sol[p];
        }
    }
    Some(x)
}

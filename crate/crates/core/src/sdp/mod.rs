//! Semidefinite programming backend: modeling layer plus a dense
//! interior-point solver behind a small solve/verify contract.

mod ipm;
mod problem;

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

pub use problem::{AffineExpr, Constraint, LinearExpr, SdpProblem, Sense, VarBlock, VarHandle, VarKind};

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, Mat};
use ipm::{Block, IpmSettings, Row, Scaled};

/// Environment variable holding solver overrides, e.g. `feas_tol=1e-8,max_iters=300`.
pub const SOLVER_OPTS_ENV: &str = "PATHCOMPLETE_SOLVER_OPTS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Absolute bound on constraint eigenvalue violation.
    pub feas_tol: f64,
    /// Relative duality gap.
    pub gap_tol: f64,
    pub max_iters: usize,
    /// Largest accepted number of scalar decision coordinates.
    pub max_coords: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-7,
            gap_tol: 1e-8,
            max_iters: 200,
            max_coords: 6000,
        }
    }
}

impl SolverOptions {
    /// Applies `key=value` pairs separated by commas.
    pub fn with_overrides(mut self, spec: &str) -> Result<Self> {
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("solver option '{part}' is not key=value")))?;
            let bad = || Error::InvalidArgument(format!("bad value for solver option '{key}': {value}"));
            match key.trim() {
                "feas_tol" => self.feas_tol = value.trim().parse().map_err(|_| bad())?,
                "gap_tol" => self.gap_tol = value.trim().parse().map_err(|_| bad())?,
                "max_iters" => self.max_iters = value.trim().parse().map_err(|_| bad())?,
                "max_coords" => self.max_coords = value.trim().parse().map_err(|_| bad())?,
                other => return Err(Error::InvalidArgument(format!("unknown solver option '{other}'"))),
            }
        }
        if !(self.feas_tol > 0.0 && self.gap_tol > 0.0) {
            return Err(Error::InvalidArgument("solver tolerances must be positive".into()));
        }
        Ok(self)
    }

    /// Defaults with overrides from [`SOLVER_OPTS_ENV`] when set.
    pub fn from_env() -> Result<Self> {
        match std::env::var(SOLVER_OPTS_ENV) {
            Ok(spec) => Self::default().with_overrides(&spec),
            Err(_) => Ok(Self::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
    Capacity,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical_failure",
            SolveStatus::Capacity => "capacity",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveDiagnostics {
    pub status: SolveStatus,
    pub iterations: usize,
    pub num_coords: usize,
    pub num_constraints: usize,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub relative_gap: f64,
    /// Phase-1 margin `max τ` with `constraints ⪰ τI`, when that test ran.
    pub phase1_margin: Option<f64>,
    pub message: String,
}

impl fmt::Display for SolveDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} after {} iterations ({} coordinates, {} constraints; primal residual {:.2e}, dual residual {:.2e}, gap {:.2e}",
            self.status,
            self.iterations,
            self.num_coords,
            self.num_constraints,
            self.primal_infeasibility,
            self.dual_infeasibility,
            self.relative_gap
        )?;
        if let Some(m) = self.phase1_margin {
            write!(f, ", phase-1 margin {m:.3e}")?;
        }
        write!(f, "): {}", self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Matrix(Mat),
    Scalar(f64),
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SolveStatus,
    /// Flat coordinate vector; empty unless optimal.
    pub y: Vec<f64>,
    /// Variable values by name; empty unless optimal.
    pub values: BTreeMap<String, Value>,
    pub objective_value: f64,
    /// Dual matrix per constraint, in constraint order; empty unless optimal.
    pub duals: Vec<Mat>,
    /// Most negative constraint eigenvalue at the returned point.
    pub min_constraint_eig: f64,
    pub gap: f64,
    pub diagnostics: SolveDiagnostics,
}

impl SdpSolution {
    pub fn matrix(&self, var: &VarHandle) -> Mat {
        var.value(&self.y)
    }

    pub fn scalar(&self, var: &VarHandle) -> f64 {
        self.y[var.offset]
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Converts non-optimal statuses into errors carrying the diagnostics.
    pub fn into_result(self) -> Result<Self> {
        match self.status {
            SolveStatus::Optimal => Ok(self),
            SolveStatus::Infeasible | SolveStatus::Unbounded => Err(Error::Infeasible(Box::new(self.diagnostics))),
            SolveStatus::Capacity => Err(Error::Capacity {
                what: "SDP decision coordinates".into(),
                count: self.diagnostics.num_coords as u128,
                limit: 0,
            }),
            SolveStatus::NumericalFailure => Err(Error::NumericalFailure(Box::new(self.diagnostics))),
        }
    }
}

fn failed(p: &SdpProblem, status: SolveStatus, message: String) -> SdpSolution {
    SdpSolution {
        status,
        y: Vec::new(),
        values: BTreeMap::new(),
        objective_value: f64::NAN,
        duals: Vec::new(),
        min_constraint_eig: f64::NAN,
        gap: f64::NAN,
        diagnostics: SolveDiagnostics {
            status,
            iterations: 0,
            num_coords: p.num_coords(),
            num_constraints: p.constraints().len(),
            primal_infeasibility: f64::NAN,
            dual_infeasibility: f64::NAN,
            relative_gap: f64::NAN,
            phase1_margin: None,
            message,
        },
    }
}

enum Origin {
    Row(usize),
    LowerBound,
}

struct Compiled {
    scaled: Scaled,
    /// Per block/row: factor applied to the original constraint.
    block_scale: Vec<f64>,
    row_scale: Vec<f64>,
    block_origin: Vec<usize>,
    row_origin: Vec<Origin>,
    active: Vec<usize>,
    obj_scale: f64,
}

fn compile(p: &SdpProblem) -> std::result::Result<Compiled, (SolveStatus, String)> {
    let nc = p.num_coords();
    let mut used = vec![false; nc];
    for c in p.constraints() {
        for (k, f) in c.expr.terms() {
            if f.iter().any(|&v| v != 0.0) {
                used[k] = true;
            }
        }
    }
    for (k, _) in p.lower_bounds() {
        used[k] = true;
    }
    let sign = match p.sense() {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let mut b_full = vec![0.0; nc];
    for (&k, &c) in &p.objective().coeffs {
        b_full[k] = sign * c;
    }
    for k in 0..nc {
        if !used[k] && b_full[k] != 0.0 {
            return Err((SolveStatus::Unbounded, format!("coordinate {k} is unconstrained but has a cost")));
        }
    }
    let active: Vec<usize> = (0..nc).filter(|&k| used[k]).collect();
    let mut index = vec![usize::MAX; nc];
    for (i, &k) in active.iter().enumerate() {
        index[k] = i;
    }
    let bmax = active.iter().map(|&k| b_full[k].abs()).fold(0.0, f64::max);
    let obj_scale = if bmax > 0.0 { 1.0 / bmax } else { 1.0 };
    let b: Vec<f64> = active.iter().map(|&k| b_full[k] * obj_scale).collect();

    let mut blocks = Vec::new();
    let mut rows = Vec::new();
    let mut block_scale = Vec::new();
    let mut row_scale = Vec::new();
    let mut block_origin = Vec::new();
    let mut row_origin = Vec::new();

    for (ci, con) in p.constraints().iter().enumerate() {
        let terms: Vec<(usize, &Mat)> = con
            .expr
            .terms()
            .filter(|(_, f)| f.iter().any(|&v| v != 0.0))
            .map(|(k, f)| (index[k], f))
            .collect();
        let c = con.expr.constant_part();
        if terms.is_empty() {
            let lmin = if c.nrows() == 0 { 0.0 } else { min_eigenvalue(c) };
            if lmin < 0.0 {
                return Err((
                    SolveStatus::Infeasible,
                    format!("constant constraint '{}' has eigenvalue {lmin:.3e}", con.name),
                ));
            }
            continue;
        }
        let mag = terms
            .iter()
            .map(|(_, f)| f.amax())
            .fold(c.amax(), f64::max)
            .max(f64::MIN_POSITIVE);
        let scale = (1.0 / mag).clamp(1e-8, 1e8);
        if con.expr.dim() == 1 {
            rows.push(Row {
                c: c[(0, 0)] * scale,
                a: terms.iter().map(|&(j, f)| (j, f[(0, 0)] * scale)).collect(),
            });
            row_scale.push(scale);
            row_origin.push(Origin::Row(ci));
        } else {
            blocks.push(Block {
                dim: con.expr.dim(),
                c: c * scale,
                terms: terms.iter().map(|&(j, f)| (j, f * scale)).collect(),
            });
            block_scale.push(scale);
            block_origin.push(ci);
        }
    }
    for (k, lb) in p.lower_bounds() {
        let scale = 1.0 / lb.abs().max(1.0);
        rows.push(Row {
            c: -lb * scale,
            a: vec![(index[k], scale)],
        });
        row_scale.push(scale);
        row_origin.push(Origin::LowerBound);
    }
    Ok(Compiled {
        scaled: Scaled {
            blocks,
            rows,
            b,
            n: active.len(),
        },
        block_scale,
        row_scale,
        block_origin,
        row_origin,
        active,
        obj_scale,
    })
}

fn settings_for(c: &Compiled, opts: &SolverOptions) -> IpmSettings {
    // Residual targets in scaled units so that the original-unit residual stays below feas_tol/2.
    IpmSettings {
        primal_tol: c.block_scale.iter().map(|s| 0.5 * opts.feas_tol * s).collect(),
        primal_tol_rows: c.row_scale.iter().map(|s| 0.5 * opts.feas_tol * s).collect(),
        dual_tol: opts.feas_tol,
        gap_tol: opts.gap_tol,
        max_iters: opts.max_iters,
    }
}

/// Largest uniform margin `τ ≤ 1` with every scaled constraint `⪰ τI`.
fn phase1_margin(c: &Compiled, opts: &SolverOptions) -> Option<f64> {
    let n = c.scaled.n;
    let mut blocks = c.scaled.blocks.clone();
    for b in &mut blocks {
        b.terms.push((n, -Mat::identity(b.dim, b.dim)));
    }
    let mut rows = c.scaled.rows.clone();
    for r in &mut rows {
        r.a.push((n, -1.0));
    }
    rows.push(Row {
        c: 1.0,
        a: vec![(n, -1.0)],
    });
    let mut b = vec![0.0; n + 1];
    b[n] = -1.0;
    let scaled = Scaled {
        blocks,
        rows,
        b,
        n: n + 1,
    };
    let settings = IpmSettings {
        primal_tol: vec![1e-9; scaled.blocks.len()],
        primal_tol_rows: vec![1e-9; scaled.rows.len()],
        dual_tol: 1e-8,
        gap_tol: 1e-7,
        max_iters: opts.max_iters,
    };
    let out = ipm::solve(&scaled, &settings);
    (out.status == SolveStatus::Optimal).then(|| out.y[n])
}

/// Solves `p`; deterministic for fixed inputs and options.
pub fn solve(p: &SdpProblem, opts: &SolverOptions) -> SdpSolution {
    if p.num_coords() > opts.max_coords {
        return failed(
            p,
            SolveStatus::Capacity,
            format!("{} coordinates exceed the limit of {}", p.num_coords(), opts.max_coords),
        );
    }
    let compiled = match compile(p) {
        Ok(c) => c,
        Err((status, message)) => return failed(p, status, message),
    };
    let settings = settings_for(&compiled, opts);
    let out = ipm::solve(&compiled.scaled, &settings);

    let diagnostics = |status: SolveStatus, message: String, phase1_margin: Option<f64>| SolveDiagnostics {
        status,
        iterations: out.iterations,
        num_coords: p.num_coords(),
        num_constraints: p.constraints().len(),
        primal_infeasibility: out.primal_infeasibility,
        dual_infeasibility: out.dual_infeasibility,
        relative_gap: out.relative_gap,
        phase1_margin,
        message,
    };

    if out.status != SolveStatus::Optimal {
        let (status, margin, message) = match out.status {
            SolveStatus::NumericalFailure => match phase1_margin(&compiled, opts) {
                Some(t) if t < -opts.feas_tol => {
                    (SolveStatus::Infeasible, Some(t), format!("{}; no strictly feasible point", out.message))
                }
                t => (SolveStatus::NumericalFailure, t, out.message.clone()),
            },
            s => (s, None, out.message.clone()),
        };
        let mut sol = failed(p, status, String::new());
        sol.diagnostics = diagnostics(status, message, margin);
        return sol;
    }

    let mut y = vec![0.0; p.num_coords()];
    for (i, &k) in compiled.active.iter().enumerate() {
        y[k] = out.y[i];
    }
    let mut duals = vec![Mat::zeros(0, 0); p.constraints().len()];
    for (i, con) in p.constraints().iter().enumerate() {
        duals[i] = Mat::zeros(con.expr.dim(), con.expr.dim());
    }
    for (k, &ci) in compiled.block_origin.iter().enumerate() {
        duals[ci] = &out.z_blocks[k] * (compiled.block_scale[k] / compiled.obj_scale);
    }
    for (r, origin) in compiled.row_origin.iter().enumerate() {
        if let Origin::Row(ci) = origin {
            duals[*ci] = Mat::from_element(1, 1, out.z_rows[r] * compiled.row_scale[r] / compiled.obj_scale);
        }
    }
    let mut values = BTreeMap::new();
    for (id, v) in p.vars().iter().enumerate() {
        let h = p.handle(id);
        let value = match v.kind {
            VarKind::Scalar { .. } => Value::Scalar(y[h.offset]),
            _ => Value::Matrix(h.value(&y)),
        };
        values.insert(v.name.clone(), value);
    }
    let objective_value = p.objective().eval(&y);
    let min_constraint_eig = worst_violation(p, &y);
    let mut sol = SdpSolution {
        status: SolveStatus::Optimal,
        y,
        values,
        objective_value,
        duals,
        min_constraint_eig,
        gap: out.relative_gap,
        diagnostics: diagnostics(SolveStatus::Optimal, out.message.clone(), None),
    };
    if min_constraint_eig < -opts.feas_tol {
        sol.status = SolveStatus::NumericalFailure;
        sol.diagnostics.status = SolveStatus::NumericalFailure;
        sol.diagnostics.message = format!("constraint eigenvalue {min_constraint_eig:.3e} below tolerance");
        sol.y.clear();
        sol.values.clear();
        sol.duals.clear();
    }
    sol
}

fn constraint_min_eig(con: &Constraint, y: &[f64]) -> f64 {
    let m = con.expr.eval(y);
    if m.nrows() == 0 {
        0.0
    } else {
        min_eigenvalue(&m)
    }
}

fn worst_violation(p: &SdpProblem, y: &[f64]) -> f64 {
    let cons = p.constraints().iter().map(|c| constraint_min_eig(c, y));
    let bounds = p.lower_bounds().into_iter().map(|(k, lb)| y[k] - lb);
    cons.chain(bounds).fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub constraint: String,
    pub min_eig: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checked: usize,
    pub worst_min_eig: f64,
    pub violations: Vec<Violation>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Recomputes every constraint's minimum eigenvalue from the named values in `s`.
pub fn verify_solution(p: &SdpProblem, s: &SdpSolution, tol: f64) -> VerifyReport {
    let mut y = vec![0.0; p.num_coords()];
    for (id, v) in p.vars().iter().enumerate() {
        let h = p.handle(id);
        match s.values.get(&v.name) {
            Some(Value::Scalar(x)) => y[h.offset] = *x,
            Some(Value::Matrix(m)) => {
                for (k, c) in h.coordinates(m) {
                    y[k] = c;
                }
            }
            None => {}
        }
    }
    let mut violations = Vec::new();
    let mut worst = f64::INFINITY;
    for con in p.constraints() {
        let e = constraint_min_eig(con, &y);
        worst = worst.min(e);
        if e < -tol {
            violations.push(Violation {
                constraint: con.name.clone(),
                min_eig: e,
            });
        }
    }
    for (id, v) in p.vars().iter().enumerate() {
        if let VarKind::Scalar { lower: Some(lb) } = v.kind {
            let e = y[p.handle(id).offset] - lb;
            worst = worst.min(e);
            if e < -tol {
                violations.push(Violation {
                    constraint: format!("{} >= {lb}", v.name),
                    min_eig: e,
                });
            }
        }
    }
    VerifyReport {
        checked: p.constraints().len(),
        worst_min_eig: if worst.is_finite() { worst } else { 0.0 },
        violations,
    }
}

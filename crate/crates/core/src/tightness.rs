//! Relative-accuracy factors: the smallest `μ ≥ 1` such that `V/μ` satisfies
//! the lower dynamic programming inequality `V(x) ≤ μ c(x) + max_i V(A_i x)`,
//! certified by S-procedure multipliers.
//!
//! With `W_{β,j} = A_jᵀ P_β A_j`, the max case requires for every block
//! `(γ, α, i)` multipliers `t ≥ 0` with
//! `μQ + W_{α,i} + Σ_{(β,j)} t_{β,j} (W_{β,j} - W_{α,i}) - P_γ ⪰ 0`.
//! The blocks share only `μ`, and for a fixed `γ` the largest block optimum
//! equals `min_{λ ∈ Δ} λ_max(P_γ - Σ_k λ_k W_k ; Q)` over the simplex `Δ`
//! on `S × ⟨M⟩`. Choosing `t_k = λ_k` for `k ≠ (α, i)` is feasible for every
//! block of that `γ`, so one small program per node yields multipliers for
//! all `|S|²M` blocks. The reported `μ` is recomputed from the multipliers
//! by an exact eigenvalue check of every block.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{evaluate, Certificate, Combiner};
use crate::error::{Error, Result};
use crate::linalg::{congruence, max_eigenvalue, min_eigenvalue, spd_inv_sqrt, symmetrize, Mat, Vector};
use crate::oracle::{value_oracle_adaptive, AdaptiveOptions, OracleResult, TailBound};
use crate::sdp::{self, AffineExpr, LinearExpr, SdpProblem, Sense, SolverOptions};
use crate::system::{QuadCost, SwitchedSystem};

/// Largest accepted `|S|²·M·|S|^M` block count for the min case.
pub const DEFAULT_MIN_CASE_CAP: u128 = 20_000;

/// Largest accepted `|S|²·M` block count for the max case.
pub const DEFAULT_MAX_CASE_CAP: u128 = 1 << 24;

/// Column-generation rounds per node before accepting the restricted optimum.
const MAX_PRICING_ROUNDS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TightnessCase {
    Max,
    Min,
}

/// Multipliers of one min-case block `(γ, α, i, ω)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinBlock {
    pub gamma: usize,
    pub alpha: usize,
    pub mode: usize,
    pub omega: Vec<usize>,
    /// `t_j`, one per mode.
    pub t: Vec<f64>,
    /// `s_ζ`, one per node (`s_γ` multiplies zero and is kept at 0).
    pub s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Multipliers {
    /// Simplex weights per node `γ`, indexed by `β·M + (j - 1)`.
    Max { weights: Vec<Vec<f64>> },
    /// Blocks solved explicitly; omitted blocks use zero multipliers.
    Min { blocks: Vec<MinBlock> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TightnessResult {
    pub mu: f64,
    pub case: TightnessCase,
    /// Smallest eigenvalue over all block constraints at the returned `μ`.
    pub residual: f64,
    pub multipliers: Multipliers,
    pub programs_solved: usize,
    pub blocks_pruned: usize,
}

/// Result file: `mu`, `case`, `residual` and optionally the nonzero multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightnessFile {
    pub mu: f64,
    pub case: TightnessCase,
    pub residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multipliers: Option<BTreeMap<String, f64>>,
}

impl TightnessResult {
    /// Nonzero multipliers keyed `t[γ,α,i,β,j]` (max case) or
    /// `t[γ,α,i,ω,j]` and `s[γ,α,i,ω,ζ]` (min case), using node names.
    pub fn multiplier_map(&self, cert: &Certificate) -> BTreeMap<String, f64> {
        let g = cert.graph();
        let names = g.nodes();
        let m = g.num_modes();
        let mut out = BTreeMap::new();
        match &self.multipliers {
            Multipliers::Max { weights } => {
                for (gamma, w) in weights.iter().enumerate() {
                    for alpha in 0..names.len() {
                        for i in 1..=m {
                            for (k, &v) in w.iter().enumerate() {
                                let (beta, j) = (k / m, k % m + 1);
                                if v > 0.0 && (beta, j) != (alpha, i) {
                                    out.insert(
                                        format!("t[{},{},{i},{},{j}]", names[gamma], names[alpha], names[beta]),
                                        v,
                                    );
                                }
                            }
                        }
                    }
                }
            }
            Multipliers::Min { blocks } => {
                for b in blocks {
                    let omega: Vec<&str> = b.omega.iter().map(|&o| names[o].as_str()).collect();
                    let omega = format!("[{}]", omega.join(";"));
                    let head = format!("{},{},{},{omega}", names[b.gamma], names[b.alpha], b.mode);
                    for (j, &v) in b.t.iter().enumerate() {
                        if v > 0.0 {
                            out.insert(format!("t[{head},{}]", j + 1), v);
                        }
                    }
                    for (z, &v) in b.s.iter().enumerate() {
                        if v > 0.0 {
                            out.insert(format!("s[{head},{}]", names[z]), v);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn to_file(&self, cert: &Certificate, with_multipliers: bool) -> TightnessFile {
        TightnessFile {
            mu: self.mu,
            case: self.case,
            residual: self.residual,
            multipliers: with_multipliers.then(|| self.multiplier_map(cert)),
        }
    }
}

struct Data {
    q_is: Mat,
    q: Mat,
    p: Vec<Mat>,
    /// `W_{β,j}` at index `β·M + (j - 1)`.
    w: Vec<Mat>,
    m: usize,
}

impl Data {
    fn new(cert: &Certificate, sys: &SwitchedSystem, cost: &QuadCost) -> Result<Self> {
        sys.require_autonomous()?;
        cost.check_against(sys)?;
        if cert.state_dim() != sys.state_dim() || cert.graph().num_modes() != sys.num_modes() {
            return Err(Error::Dimension("certificate does not match the system".into()));
        }
        let m = sys.num_modes();
        let p = cert.p().to_vec();
        let w = p
            .iter()
            .flat_map(|pb| sys.a_all().iter().map(move |a| congruence(a, pb)))
            .collect();
        Ok(Self {
            q_is: spd_inv_sqrt(cost.q()),
            q: cost.q().clone(),
            p,
            w,
            m,
        })
    }

    /// Smallest `μ` with `μQ - E ⪰ 0`.
    fn mu_needed(&self, e: &Mat) -> f64 {
        max_eigenvalue(&symmetrize(&(&self.q_is * e * &self.q_is)))
    }

    fn k(&self, node: usize, mode: usize) -> usize {
        node * self.m + mode - 1
    }
}

/// Tightness factor of a `max` certificate.
pub fn tightness_max(cert: &Certificate, sys: &SwitchedSystem, cost: &QuadCost) -> Result<TightnessResult> {
    tightness_max_with(cert, sys, cost, &SolverOptions::default())
}

pub fn tightness_max_with(
    cert: &Certificate,
    sys: &SwitchedSystem,
    cost: &QuadCost,
    opts: &SolverOptions,
) -> Result<TightnessResult> {
    if cert.combiner() != Combiner::Max {
        return Err(Error::InvalidArgument("tightness_max needs a max certificate".into()));
    }
    let d = Data::new(cert, sys, cost)?;
    let s = d.p.len();
    let blocks = (s as u128).pow(2) * d.m as u128;
    if blocks > DEFAULT_MAX_CASE_CAP {
        return Err(Error::Capacity {
            what: "max-case tightness blocks".into(),
            count: blocks,
            limit: DEFAULT_MAX_CASE_CAP,
        });
    }
    let per_node: Vec<(Vec<f64>, usize)> = (0..s)
        .into_par_iter()
        .map(|gamma| node_weights(&d, gamma, opts))
        .collect::<Result<_>>()?;
    let programs_solved = per_node.iter().map(|(_, n)| n).sum();
    let weights: Vec<Vec<f64>> = per_node.into_iter().map(|(w, _)| w).collect();

    // Exact check of every block: μQ ⪰ P_γ - Σ_k λ_k W_k - (1 - Σλ) W_{α,i}.
    let bases: Vec<(Mat, f64)> = weights
        .iter()
        .enumerate()
        .map(|(gamma, lam)| {
            let mut b = d.p[gamma].clone();
            for (wk, &l) in d.w.iter().zip(lam) {
                b -= wk * l;
            }
            (b, 1.0 - lam.iter().sum::<f64>())
        })
        .collect();
    let mut mu: f64 = 1.0;
    for (base, slack) in &bases {
        for wk in &d.w {
            mu = mu.max(d.mu_needed(&(base - wk * *slack)));
        }
    }
    let mut residual = f64::INFINITY;
    for (base, slack) in &bases {
        for wk in &d.w {
            residual = residual.min(min_eigenvalue(&symmetrize(&(&d.q * mu - base + wk * *slack))));
        }
    }
    Ok(TightnessResult {
        mu,
        case: TightnessCase::Max,
        residual,
        multipliers: Multipliers::Max { weights },
        programs_solved,
        blocks_pruned: 0,
    })
}

/// Simplex weights minimizing `λ_max(P_γ - Σ λ_k W_k ; Q)`, by column generation.
fn node_weights(d: &Data, gamma: usize, opts: &SolverOptions) -> Result<(Vec<f64>, usize)> {
    let nk = d.w.len();
    let pg = &d.p[gamma];
    // Seed with the columns largest along the worst direction of P_γ.
    let x = top_direction(&(&d.q_is * pg * &d.q_is));
    let x = &d.q_is * x;
    let mut order: Vec<usize> = (0..nk).collect();
    let score = |k: usize| (x.transpose() * &d.w[k] * &x)[(0, 0)];
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
    let mut active: Vec<usize> = order.into_iter().take(4.min(nk)).collect();
    let mut solved = 0;
    for _ in 0..MAX_PRICING_ROUNDS {
        let (lam, z) = restricted_weights(d, gamma, &active, opts)?;
        solved += 1;
        let mut full = vec![0.0; nk];
        for (&k, &l) in active.iter().zip(&lam) {
            full[k] = l.max(0.0);
        }
        let Some(z) = z else {
            return Ok((full, solved));
        };
        let vals: Vec<f64> = d.w.iter().map(|w| w.component_mul(&z).sum()).collect();
        let thr = active.iter().map(|&k| vals[k]).fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-9 * (1.0 + thr.abs());
        let mut cand: Vec<usize> = (0..nk).filter(|k| !active.contains(k) && vals[*k] > thr + tol).collect();
        if cand.is_empty() {
            return Ok((full, solved));
        }
        cand.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
        active.extend(cand.into_iter().take(8));
        active.sort_unstable();
    }
    log::warn!("tightness: pricing for node {gamma} stopped after {MAX_PRICING_ROUNDS} rounds");
    let (lam, _) = restricted_weights(d, gamma, &active, opts)?;
    let mut full = vec![0.0; nk];
    for (&k, &l) in active.iter().zip(&lam) {
        full[k] = l.max(0.0);
    }
    Ok((full, solved + 1))
}

fn top_direction(m: &Mat) -> Vector {
    let eig = symmetrize(m).symmetric_eigen();
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    eig.eigenvectors.column(idx).into_owned()
}

/// Restricted program over the `active` columns: returns the weights and,
/// when the lower bound `μ ≥ 1` is inactive, the dual matrix of the LMI.
fn restricted_weights(
    d: &Data,
    gamma: usize,
    active: &[usize],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, Option<Mat>)> {
    let n = d.q.nrows();
    if active.len() == 1 {
        return Ok((vec![1.0], None));
    }
    let mut prob = SdpProblem::new();
    let mu = prob.scalar_var("mu", None);
    let k0 = active[0];
    let lam: Vec<_> = active[1..].iter().map(|k| prob.scalar_var(format!("lambda[{k}]"), Some(0.0))).collect();
    let mut expr = AffineExpr::new(n);
    expr.add_scalar_block(0, 0, &mu, &d.q)
        .add_constant_block(0, 0, &(&d.w[k0] - &d.p[gamma]));
    for (v, &k) in lam.iter().zip(&active[1..]) {
        expr.add_scalar_block(0, 0, v, &(&d.w[k] - &d.w[k0]));
    }
    prob.add_psd("block", expr)?;
    let mut sum = LinearExpr::constant(1.0);
    for v in &lam {
        sum.add_scalar(v, -1.0);
    }
    prob.add_linear_ge("simplex", &sum)?;
    let mut obj = LinearExpr::new();
    obj.add_scalar(&mu, 1.0);
    prob.set_objective(Sense::Minimize, obj);
    let sol = sdp::solve(&prob, opts).into_result()?;
    let rest: Vec<f64> = lam.iter().map(|v| sol.scalar(v)).collect();
    let first = 1.0 - rest.iter().sum::<f64>();
    let mut weights = vec![first];
    weights.extend(rest);
    let mu_val = sol.scalar(&mu);
    let z = (mu_val > 1.0).then(|| sol.duals[0].clone());
    Ok((weights, z))
}

/// Tightness factor of a `min` certificate.
pub fn tightness_min(cert: &Certificate, sys: &SwitchedSystem, cost: &QuadCost) -> Result<TightnessResult> {
    tightness_min_with(cert, sys, cost, &SolverOptions::default(), DEFAULT_MIN_CASE_CAP)
}

pub fn tightness_min_with(
    cert: &Certificate,
    sys: &SwitchedSystem,
    cost: &QuadCost,
    opts: &SolverOptions,
    cap: u128,
) -> Result<TightnessResult> {
    if cert.combiner() != Combiner::Min {
        return Err(Error::InvalidArgument("tightness_min needs a min certificate".into()));
    }
    let s = cert.graph().num_nodes();
    let m = sys.num_modes();
    let count = (s as u128)
        .checked_pow(m as u32)
        .and_then(|x| x.checked_mul((s as u128).pow(2) * m as u128))
        .unwrap_or(u128::MAX);
    if count > cap {
        return Err(Error::Capacity {
            what: "min-case tightness blocks |S|^2*M*|S|^M".into(),
            count,
            limit: cap,
        });
    }
    let d = Data::new(cert, sys, cost)?;

    struct Candidate {
        gamma: usize,
        alpha: usize,
        mode: usize,
        omega: Vec<usize>,
        upper: f64,
    }
    let mut cands = Vec::new();
    for gamma in 0..s {
        for alpha in 0..s {
            for mode in 1..=m {
                let upper = d.mu_needed(&(&d.p[gamma] - &d.w[d.k(alpha, mode)])).max(1.0);
                for omega in crate::graph::debruijn_sequences(m, s) {
                    let omega: Vec<usize> = omega.into_iter().map(|o| o - 1).collect();
                    cands.push(Candidate {
                        gamma,
                        alpha,
                        mode,
                        omega,
                        upper,
                    });
                }
            }
        }
    }
    cands.sort_by(|a, b| b.upper.total_cmp(&a.upper));

    let mut mu: f64 = 1.0;
    let mut blocks = Vec::new();
    let mut pruned = 0;
    for c in &cands {
        if c.upper <= mu {
            pruned += 1;
            continue;
        }
        let (t, sm) = min_block(&d, c.gamma, c.alpha, c.mode, &c.omega, opts)?;
        let e = min_block_matrix(&d, c.gamma, c.alpha, c.mode, &c.omega, &t, &sm);
        mu = mu.max(d.mu_needed(&e));
        blocks.push(MinBlock {
            gamma: c.gamma,
            alpha: c.alpha,
            mode: c.mode,
            omega: c.omega.clone(),
            t,
            s: sm,
        });
    }
    let programs_solved = blocks.len();
    let zero_t = vec![0.0; m];
    let zero_s = vec![0.0; s];
    let mut residual = f64::INFINITY;
    let mut solved = blocks.iter();
    let mut next = solved.next();
    // Blocks were solved in candidate order; walk both sequences together.
    for c in &cands {
        let (t, sm) = match next {
            Some(b) if b.gamma == c.gamma && b.alpha == c.alpha && b.mode == c.mode && b.omega == c.omega => {
                let r = (&b.t, &b.s);
                next = solved.next();
                r
            }
            _ => (&zero_t, &zero_s),
        };
        let e = min_block_matrix(&d, c.gamma, c.alpha, c.mode, &c.omega, t, sm);
        residual = residual.min(min_eigenvalue(&symmetrize(&(&d.q * mu - e))));
    }
    Ok(TightnessResult {
        mu,
        case: TightnessCase::Min,
        residual,
        multipliers: Multipliers::Min { blocks },
        programs_solved,
        blocks_pruned: pruned,
    })
}

/// `P_γ - W_{α,i} - Σ_j t_j (W_{ω_j,j} - W_{α,i}) + Σ_ζ s_ζ (P_ζ - P_γ)`; the
/// block constraint is `μQ - E ⪰ 0`.
fn min_block_matrix(d: &Data, gamma: usize, alpha: usize, mode: usize, omega: &[usize], t: &[f64], s: &[f64]) -> Mat {
    let wai = &d.w[d.k(alpha, mode)];
    let mut e = &d.p[gamma] - wai;
    for (j, &tj) in t.iter().enumerate() {
        e -= (&d.w[d.k(omega[j], j + 1)] - wai) * tj;
    }
    for (z, &sz) in s.iter().enumerate() {
        e += (&d.p[z] - &d.p[gamma]) * sz;
    }
    e
}

fn min_block(
    d: &Data,
    gamma: usize,
    alpha: usize,
    mode: usize,
    omega: &[usize],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = d.q.nrows();
    let s = d.p.len();
    let mut prob = SdpProblem::new();
    let mu = prob.scalar_var("mu", Some(1.0));
    let wai = &d.w[d.k(alpha, mode)];
    let mut expr = AffineExpr::new(n);
    expr.add_scalar_block(0, 0, &mu, &d.q)
        .add_constant_block(0, 0, &(wai - &d.p[gamma]));
    let mut t_vars = Vec::new();
    for j in 1..=d.m {
        let diff = &d.w[d.k(omega[j - 1], j)] - wai;
        if diff.iter().all(|v| *v == 0.0) {
            t_vars.push(None);
            continue;
        }
        let v = prob.scalar_var(format!("t[{j}]"), Some(0.0));
        expr.add_scalar_block(0, 0, &v, &diff);
        t_vars.push(Some(v));
    }
    let mut s_vars = Vec::new();
    for z in 0..s {
        let diff = &d.p[gamma] - &d.p[z];
        if z == gamma || diff.iter().all(|v| *v == 0.0) {
            s_vars.push(None);
            continue;
        }
        let v = prob.scalar_var(format!("s[{z}]"), Some(0.0));
        expr.add_scalar_block(0, 0, &v, &diff);
        s_vars.push(Some(v));
    }
    prob.add_psd("block", expr)?;
    let mut obj = LinearExpr::new();
    obj.add_scalar(&mu, 1.0);
    prob.set_objective(Sense::Minimize, obj);
    let sol = sdp::solve(&prob, opts).into_result()?;
    let read = |v: &Option<crate::sdp::VarHandle>| v.as_ref().map_or(0.0, |h| sol.scalar(h).max(0.0));
    Ok((t_vars.iter().map(read).collect(), s_vars.iter().map(read).collect()))
}

/// Dispatches on the certificate's combiner.
pub fn tightness(cert: &Certificate, sys: &SwitchedSystem, cost: &QuadCost) -> Result<TightnessResult> {
    match cert.combiner() {
        Combiner::Max => tightness_max(cert, sys, cost),
        Combiner::Min => tightness_min(cert, sys, cost),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichRow {
    pub v: f64,
    pub lower: f64,
    pub oracle: OracleResult,
    pub lower_ok: bool,
    pub upper_ok: bool,
    /// The lower comparison is skipped when the horizon did not stabilize.
    pub inconclusive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub mu: f64,
    pub rows: Vec<SandwichRow>,
    pub lower_violations: usize,
    pub upper_violations: usize,
    pub inconclusive: usize,
}

impl SandwichReport {
    pub fn ok(&self) -> bool {
        self.lower_violations == 0 && self.upper_violations == 0
    }
}

/// Checks `V(x)/μ ≤ J_H(x) + tol` and `J_H(x) ≤ V(x) + tol` at every sample.
pub fn sandwich_check(
    cert: &Certificate,
    mu: f64,
    sys: &SwitchedSystem,
    cost: &QuadCost,
    samples: &[Vector],
    h_max: usize,
    tol: f64,
) -> Result<SandwichReport> {
    let tail = TailBound::auto(sys, cost);
    let opts = AdaptiveOptions {
        max_horizon: h_max,
        ..AdaptiveOptions::default()
    };
    let rows: Vec<SandwichRow> = samples
        .par_iter()
        .map(|x| {
            let v = evaluate(cert, x)?;
            let oracle = value_oracle_adaptive(sys, cost, x, &tail, &opts)?;
            let lower = v / mu;
            let inconclusive = !oracle.stabilized;
            Ok(SandwichRow {
                v,
                lower,
                lower_ok: inconclusive || lower <= oracle.j_h + tol,
                upper_ok: oracle.j_h <= v + tol,
                inconclusive,
                oracle,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SandwichReport {
        mu,
        lower_violations: rows.iter().filter(|r| !r.lower_ok).count(),
        upper_violations: rows.iter().filter(|r| !r.upper_ok).count(),
        inconclusive: rows.iter().filter(|r| r.inconclusive).count(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{compute_eta, debruijn_analytic_certificate, solve_upper_bound, Objective, ObjectiveUsed};
    use crate::graph::{build_debruijn, DeBruijnSpec, LabeledGraph};
    use crate::linalg::vector;
    use crate::system::{example2_system, random_stable_system};
    use approx::assert_relative_eq;

    fn dual(order: usize, m: usize) -> LabeledGraph {
        build_debruijn(DeBruijnSpec {
            order,
            num_modes: m,
            dual: true,
        })
        .unwrap()
    }

    fn primal(order: usize, m: usize) -> LabeledGraph {
        build_debruijn(DeBruijnSpec {
            order,
            num_modes: m,
            dual: false,
        })
        .unwrap()
    }

    fn circle(k: usize) -> Vec<Vector> {
        (0..k)
            .map(|i| {
                let th = i as f64 * std::f64::consts::PI / k as f64;
                vector(&[th.cos(), th.sin()])
            })
            .collect()
    }

    fn exact_lyapunov() -> (SwitchedSystem, QuadCost, Certificate) {
        let sys = SwitchedSystem::autonomous(vec![Mat::from_element(1, 1, 0.5)]).unwrap();
        let cost = QuadCost::identity(1, None);
        let g = primal(0, 1);
        let p = vec![Mat::from_element(1, 1, 4.0 / 3.0)];
        let max = Certificate::new(g.clone(), p.clone(), Combiner::Max, ObjectiveUsed::TraceSum, 0.0).unwrap();
        (sys, cost, max)
    }

    #[test]
    fn exact_lyapunov_is_tight() {
        let (sys, cost, cert) = exact_lyapunov();
        let r = tightness_max(&cert, &sys, &cost).unwrap();
        assert_relative_eq!(r.mu, 1.0, epsilon = 1e-6);
        let min = Certificate::new(cert.graph().clone(), cert.p().to_vec(), Combiner::Min, ObjectiveUsed::TraceSum, 0.0)
            .unwrap();
        let r = tightness_min(&min, &sys, &cost).unwrap();
        assert_relative_eq!(r.mu, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn single_node_cases_agree() {
        for seed in 0..4 {
            let sys = random_stable_system(2, 2, seed);
            let cost = QuadCost::identity(2, None);
            let cert = solve_upper_bound(&sys, &cost, &primal(0, 2), &Objective::TraceSum, Some(Combiner::Max), &SolverOptions::default()).unwrap();
            let mx = tightness_max(&cert, &sys, &cost).unwrap();
            let as_min = Certificate::new(cert.graph().clone(), cert.p().to_vec(), Combiner::Min, ObjectiveUsed::TraceSum, 0.0)
                .unwrap();
            let mn = tightness_min(&as_min, &sys, &cost).unwrap();
            assert_relative_eq!(mx.mu, mn.mu, epsilon = 1e-6);
        }
    }

    #[test]
    fn example2_orders_decrease() {
        let (sys, cost) = example2_system();
        let mus: Vec<f64> = (1..=3)
            .map(|l| {
                let cert = solve_upper_bound(&sys, &cost, &dual(l, 2), &Objective::TraceSum, None, &SolverOptions::default())
                    .unwrap();
                let r = tightness_max(&cert, &sys, &cost).unwrap();
                assert!(r.residual >= -1e-9, "residual {}", r.residual);
                r.mu
            })
            .collect();
        assert!(mus[0] > mus[1] && mus[1] > mus[2] && mus[2] >= 1.0, "{mus:?}");
    }

    /// The per-node reduction agrees with solving every block separately.
    #[test]
    fn matches_blockwise_program() {
        let (sys, cost) = example2_system();
        let cert = solve_upper_bound(&sys, &cost, &dual(1, 2), &Objective::TraceSum, None, &SolverOptions::default()).unwrap();
        let reduced = tightness_max(&cert, &sys, &cost).unwrap();
        let d = Data::new(&cert, &sys, &cost).unwrap();
        let mut best: f64 = 1.0;
        for gamma in 0..d.p.len() {
            for k0 in 0..d.w.len() {
                let mut prob = SdpProblem::new();
                let mu = prob.scalar_var("mu", Some(1.0));
                let mut expr = AffineExpr::new(2);
                expr.add_scalar_block(0, 0, &mu, &d.q).add_constant_block(0, 0, &(&d.w[k0] - &d.p[gamma]));
                for k in (0..d.w.len()).filter(|&k| k != k0) {
                    let t = prob.scalar_var(format!("t{k}"), Some(0.0));
                    expr.add_scalar_block(0, 0, &t, &(&d.w[k] - &d.w[k0]));
                }
                prob.add_psd("b", expr).unwrap();
                let mut obj = LinearExpr::new();
                obj.add_scalar(&mu, 1.0);
                prob.set_objective(Sense::Minimize, obj);
                let sol = sdp::solve(&prob, &SolverOptions::default()).into_result().unwrap();
                best = best.max(sol.objective_value);
            }
        }
        assert_relative_eq!(reduced.mu, best, max_relative = 1e-6);
    }

    #[test]
    fn multipliers_are_feasible() {
        let (sys, cost) = example2_system();
        let cert = solve_upper_bound(&sys, &cost, &dual(2, 2), &Objective::TraceSum, None, &SolverOptions::default()).unwrap();
        let r = tightness_max(&cert, &sys, &cost).unwrap();
        let map = r.multiplier_map(&cert);
        assert!(map.values().all(|&v| v >= 0.0));
        // Rebuild every block from the keyed multipliers.
        let d = Data::new(&cert, &sys, &cost).unwrap();
        let names = cert.graph().nodes();
        for gamma in 0..d.p.len() {
            for alpha in 0..d.p.len() {
                for i in 1..=2 {
                    let wai = &d.w[d.k(alpha, i)];
                    let mut lhs = &d.q * r.mu + wai - &d.p[gamma];
                    for beta in 0..d.p.len() {
                        for j in 1..=2 {
                            let key = format!("t[{},{},{i},{},{j}]", names[gamma], names[alpha], names[beta]);
                            if let Some(t) = map.get(&key) {
                                lhs += (&d.w[d.k(beta, j)] - wai) * *t;
                            }
                        }
                    }
                    assert!(min_eigenvalue(&symmetrize(&lhs)) >= -1e-9);
                }
            }
        }
    }

    #[test]
    fn analytic_certificates_within_claimed_scaling() {
        let (sys, cost) = example2_system();
        for l in 1..=3 {
            let cert = debruijn_analytic_certificate(&sys, &cost, l).unwrap();
            let eta = compute_eta(&sys, &cost, l).unwrap();
            let r = tightness_max(&cert, &sys, &cost).unwrap();
            assert!(r.mu <= 1.0 / (1.0 - eta) + 1e-6, "l={l} mu={} eta={eta}", r.mu);
        }
    }

    #[test]
    fn min_case_example2_primal() {
        let (sys, cost) = example2_system();
        let g = primal(1, 2);
        let cert = solve_upper_bound(&sys, &cost, &g, &Objective::TraceSum, Some(Combiner::Min), &SolverOptions::default())
            .unwrap();
        let r = tightness_min(&cert, &sys, &cost).unwrap();
        assert!(r.mu >= 1.0);
        assert!(r.residual >= -1e-9);
        let report = sandwich_check(&cert, r.mu, &sys, &cost, &circle(100), 40, 1e-5).unwrap();
        assert_eq!(report.lower_violations, 0);
        assert_eq!(report.upper_violations, 0);
    }

    #[test]
    fn min_case_capacity() {
        let (sys, cost) = example2_system();
        let cert = solve_upper_bound(&sys, &cost, &primal(4, 2), &Objective::TraceSum, Some(Combiner::Min), &SolverOptions::default())
            .unwrap();
        let err = tightness_min(&cert, &sys, &cost).unwrap_err();
        assert!(matches!(err, Error::Capacity { count: 131072, .. }), "{err}");
    }

    #[test]
    fn sandwich_example2_order3() {
        let (sys, cost) = example2_system();
        let cert = solve_upper_bound(&sys, &cost, &dual(3, 2), &Objective::TraceSum, None, &SolverOptions::default()).unwrap();
        let r = tightness_max(&cert, &sys, &cost).unwrap();
        let report = sandwich_check(&cert, r.mu, &sys, &cost, &circle(40), 40, 1e-5).unwrap();
        assert!(report.ok(), "{report:?}");
        assert_eq!(report.inconclusive, 0);
    }

    #[test]
    fn sandwich_detects_mu_one() {
        let (sys, cost) = example2_system();
        let cert = solve_upper_bound(&sys, &cost, &dual(1, 2), &Objective::TraceSum, None, &SolverOptions::default()).unwrap();
        let report = sandwich_check(&cert, 1.0, &sys, &cost, &circle(40), 40, 1e-5).unwrap();
        assert!(report.lower_violations > 0);
        let zero = sandwich_check(&cert, 1.0, &sys, &cost, &[vector(&[0.0, 0.0])], 40, 1e-5).unwrap();
        assert!(zero.ok());
    }

    #[test]
    fn result_file_layout() {
        let (sys, cost, cert) = exact_lyapunov();
        let r = tightness_max(&cert, &sys, &cost).unwrap();
        let text = serde_json::to_string(&r.to_file(&cert, false)).unwrap();
        assert!(text.contains("\"mu\"") && text.contains("\"case\":\"max\"") && !text.contains("multipliers"));
    }
}

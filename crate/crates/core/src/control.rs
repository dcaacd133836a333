//! Piecewise-linear switching-robust controllers with certified closed-loop
//! upper bounds.
//!
//! With `S_α = P_α⁻¹` and `Y_α = K_α S_α`, the closed-loop edge inequalities
//! `P_α ⪰ Q + K_αᵀRK_α + (A_i + B_iK_α)ᵀ P_β (A_i + B_iK_α)` become the
//! linear matrix inequalities
//!
//! ```text
//! [ S_α             S_αA_iᵀ + Y_αᵀB_iᵀ   S_α    Y_αᵀ ]
//! [ A_iS_α + B_iY_α  S_β                  0      0    ]  ⪰ 0
//! [ S_α              0                    Q⁻¹    0    ]
//! [ Y_α              0                    0      R⁻¹  ]
//! ```
//!
//! on every edge of a complete graph. The policy is `u = K_{κ(x)} x` with
//! `κ(x) = argmin_α xᵀP_αx` and the bound is `V(x) = min_α xᵀP_αx`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{Certificate, CertificateFile, Combiner, ObjectiveUsed};
use crate::error::{Error, Result};
use crate::graph::{is_complete, parse_sequence_label, LabeledGraph};
use crate::linalg::{from_rows, min_eigenvalue, quad_form, spd_inverse, symmetrize, to_rows, Mat, Vector};
use crate::oracle::{closed_loop_oracle, OracleResult};
use crate::sdp::{self, AffineExpr, LinearExpr, SdpProblem, SdpSolution, Sense, SolverOptions, VarHandle};
use crate::system::{QuadCost, SwitchedSystem};

/// Lower bound `S_α ⪰ ε I` keeping every `S_α` invertible.
pub const SYNTHESIS_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum SynthesisObjective {
    /// Maximize `Σ_α trace(S_α)`.
    SurrogateVolume,
    /// Minimize `min_α x0ᵀP_αx0`, one subproblem per node.
    Pointwise(Vector),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    cert: Certificate,
    k: Vec<Mat>,
}

impl Controller {
    /// Requires a `min` certificate on a complete graph and one `m×n` gain per node.
    pub fn new(cert: Certificate, k: Vec<Mat>) -> Result<Self> {
        if cert.combiner() != Combiner::Min || !is_complete(cert.graph()) {
            return Err(Error::CombinerHypothesis {
                combiner: "min",
                required: "complete",
            });
        }
        if k.len() != cert.graph().num_nodes() {
            return Err(Error::Dimension(format!(
                "{} gains for {} nodes",
                k.len(),
                cert.graph().num_nodes()
            )));
        }
        let n = cert.state_dim();
        let m = k[0].nrows();
        if k.iter().any(|g| g.nrows() != m || g.ncols() != n) {
            return Err(Error::Dimension(format!("gains must all be {m}x{n}")));
        }
        Ok(Self { cert, k })
    }

    pub fn certificate(&self) -> &Certificate {
        &self.cert
    }

    pub fn gains(&self) -> &[Mat] {
        &self.k
    }

    pub fn input_dim(&self) -> usize {
        self.k[0].nrows()
    }

    /// `V(x) = min_α xᵀP_αx`.
    pub fn value(&self, x: &Vector) -> Result<f64> {
        crate::bounds::evaluate(&self.cert, x)
    }

    /// Minimum eigenvalue of the closed-loop edge residual
    /// `P_α - Q - K_αᵀRK_α - (A_i+B_iK_α)ᵀP_β(A_i+B_iK_α)`, per edge.
    pub fn edge_residuals(&self, sys: &SwitchedSystem, cost: &QuadCost) -> Result<Vec<f64>> {
        check_inputs(sys, cost, self.cert.graph())?;
        let r = cost.r().expect("checked");
        let p = self.cert.p();
        Ok(self
            .cert
            .graph()
            .edges()
            .iter()
            .map(|e| {
                let k = &self.k[e.source];
                let acl = sys.a(e.label) + sys.b(e.label).expect("checked") * k;
                let res = &p[e.source] - cost.q() - k.transpose() * r * k - acl.transpose() * &p[e.target] * &acl;
                min_eigenvalue(&symmetrize(&res))
            })
            .collect())
    }

    /// Fails when an edge residual is below `-tol·(1 + max_α ‖P_α‖)`.
    pub fn validate(&self, sys: &SwitchedSystem, cost: &QuadCost, tol: f64) -> Result<()> {
        let scale = 1.0 + self.cert.p().iter().map(|p| p.norm()).fold(0.0, f64::max);
        let residuals = self.edge_residuals(sys, cost)?;
        for (e, r) in self.cert.graph().edges().iter().zip(&residuals) {
            if *r < -tol * scale {
                let g = self.cert.graph();
                return Err(Error::NotPositiveDefinite {
                    what: format!(
                        "closed-loop residual on edge ({},{},{})",
                        g.nodes()[e.source],
                        g.nodes()[e.target],
                        e.label
                    ),
                    min_eig: *r,
                    threshold: -tol * scale,
                });
            }
        }
        Ok(())
    }

    pub fn to_file(&self) -> ControllerFile {
        let g = self.cert.graph();
        ControllerFile {
            certificate: self.cert.to_file(),
            k: g.nodes().iter().cloned().zip(self.k.iter().map(to_rows)).collect(),
        }
    }

    pub fn from_file(file: ControllerFile) -> Result<Self> {
        let cert = Certificate::from_file(file.certificate)?;
        let k = cert
            .graph()
            .nodes()
            .iter()
            .map(|name| {
                let rows = file
                    .k
                    .get(name)
                    .ok_or_else(|| Error::InvalidArgument(format!("no gain for node {name}")))?;
                from_rows(rows, &format!("K[{name}]"))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(cert, k)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("controller serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// Controller file: the certificate fields plus `"K"`, row-major gains per node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerFile {
    #[serde(flatten)]
    pub certificate: CertificateFile,
    #[serde(rename = "K")]
    pub k: BTreeMap<String, Vec<Vec<f64>>>,
}

fn check_inputs(sys: &SwitchedSystem, cost: &QuadCost, g: &LabeledGraph) -> Result<()> {
    if sys.is_autonomous() {
        return Err(Error::InvalidSystem("controller synthesis needs input matrices B".into()));
    }
    if cost.r().is_none() {
        return Err(Error::InvalidSystem("controller synthesis needs an input cost R".into()));
    }
    cost.check_against(sys)?;
    if g.num_modes() != sys.num_modes() {
        return Err(Error::Dimension(format!(
            "graph has {} modes, system has {}",
            g.num_modes(),
            sys.num_modes()
        )));
    }
    Ok(())
}

/// Decision variables of the synthesis program, one `(S_α, Y_α)` pair per node.
#[derive(Debug, Clone)]
pub struct SynthesisVars {
    pub s: Vec<VarHandle>,
    pub y: Vec<VarHandle>,
}

/// Edge blocks of size `3n + m` and `S_α ⪰ ε I` per node.
pub fn assemble_synthesis_lmis(
    sys: &SwitchedSystem,
    cost: &QuadCost,
    g: &LabeledGraph,
) -> Result<(SdpProblem, SynthesisVars)> {
    check_inputs(sys, cost, g)?;
    if !is_complete(g) {
        return Err(Error::CombinerHypothesis {
            combiner: "min",
            required: "complete",
        });
    }
    let n = sys.state_dim();
    let m = sys.input_dim();
    let (q_inv, q_cond) = spd_inverse(cost.q(), "Q")?;
    let (r_inv, r_cond) = spd_inverse(cost.r().expect("checked"), "R")?;
    log::debug!("synthesis: cond(Q) = {q_cond:.3e}, cond(R) = {r_cond:.3e}");

    let mut prob = SdpProblem::new();
    let s: Vec<VarHandle> = g.nodes().iter().map(|a| prob.symmetric_var(format!("S[{a}]"), n)).collect();
    let y: Vec<VarHandle> = g.nodes().iter().map(|a| prob.dense_var(format!("Y[{a}]"), m, n)).collect();
    let id_n = Mat::identity(n, n);
    let id_m = Mat::identity(m, m);
    for e in g.edges() {
        let (sa, ya, sb) = (&s[e.source], &y[e.source], &s[e.target]);
        let a = sys.a(e.label);
        let b = sys.b(e.label).expect("checked");
        let mut expr = AffineExpr::new(3 * n + m);
        expr.add_var(0, 0, sa, 1.0)
            .add_var_block(n, 0, sa, a, &id_n, 1.0)
            .add_var_block(n, 0, ya, b, &id_n, 1.0)
            .add_var_block(2 * n, 0, sa, &id_n, &id_n, 1.0)
            .add_var_block(3 * n, 0, ya, &id_m, &id_n, 1.0)
            .add_var(n, n, sb, 1.0)
            .add_constant_block(2 * n, 2 * n, &q_inv)
            .add_constant_block(3 * n, 3 * n, &r_inv);
        prob.add_psd(
            format!("edge({},{},{})", g.nodes()[e.source], g.nodes()[e.target], e.label),
            expr,
        )?;
    }
    for (name, v) in g.nodes().iter().zip(&s) {
        let mut expr = AffineExpr::new(n);
        expr.add_var(0, 0, v, 1.0).add_constant_block(0, 0, &(-SYNTHESIS_EPS * &id_n));
        prob.add_psd(format!("floor({name})"), expr)?;
    }
    Ok((prob, SynthesisVars { s, y }))
}

/// `P_α = S_α⁻¹`, `K_α = Y_α P_α`; fails when some `S_α` has an eigenvalue below `ε/2`.
pub fn recover_controller(
    sol: &SdpSolution,
    vars: &SynthesisVars,
    g: &LabeledGraph,
    objective: ObjectiveUsed,
    objective_value: f64,
) -> Result<Controller> {
    if !sol.is_optimal() {
        return Err(Error::NumericalFailure(Box::new(sol.diagnostics.clone())));
    }
    let mut p = Vec::with_capacity(vars.s.len());
    let mut k = Vec::with_capacity(vars.s.len());
    for ((name, sv), yv) in g.nodes().iter().zip(&vars.s).zip(&vars.y) {
        let s = symmetrize(&sol.matrix(sv));
        let lo = min_eigenvalue(&s);
        if lo <= SYNTHESIS_EPS / 2.0 {
            return Err(Error::IllConditioned(format!(
                "S[{name}] has minimum eigenvalue {lo:.3e}, below {:.1e}",
                SYNTHESIS_EPS / 2.0
            )));
        }
        let (pa, cond) = spd_inverse(&s, &format!("S[{name}]"))?;
        if cond > 1e12 {
            log::warn!("S[{name}] has condition number {cond:.3e}");
        }
        k.push(sol.matrix(yv) * &pa);
        p.push(symmetrize(&pa));
    }
    let cert = Certificate::new(g.clone(), p, Combiner::Min, objective, objective_value)?;
    Controller::new(cert, k)
}

/// Solves the synthesis program and returns a validated controller.
pub fn synthesize(
    sys: &SwitchedSystem,
    cost: &QuadCost,
    g: &LabeledGraph,
    objective: &SynthesisObjective,
    opts: &SolverOptions,
) -> Result<Controller> {
    let (base, vars) = assemble_synthesis_lmis(sys, cost, g)?;
    let ctrl = match objective {
        SynthesisObjective::SurrogateVolume => {
            let mut prob = base;
            let mut obj = LinearExpr::new();
            for s in &vars.s {
                obj.add_trace(s, 1.0);
            }
            prob.set_objective(Sense::Maximize, obj);
            let sol = sdp::solve(&prob, opts).into_result()?;
            recover_controller(&sol, &vars, g, ObjectiveUsed::SurrogateVolume, sol.objective_value)?
        }
        SynthesisObjective::Pointwise(x0) => {
            let n = sys.state_dim();
            if x0.len() != n {
                return Err(Error::Dimension(format!("x0 has length {}, expected {n}", x0.len())));
            }
            let used = ObjectiveUsed::Pointwise {
                x0: x0.iter().copied().collect(),
            };
            let x0_col = Mat::from_column_slice(n, 1, x0.as_slice());
            let results: Vec<Result<(f64, Controller)>> = (0..g.num_nodes())
                .into_par_iter()
                .map(|gamma| {
                    let mut prob = base.clone();
                    let t = prob.scalar_var("t", None);
                    let mut expr = AffineExpr::new(n + 1);
                    expr.add_var(0, 0, &vars.s[gamma], 1.0)
                        .add_constant_block(0, n, &x0_col)
                        .add_scalar_block(n, n, &t, &Mat::identity(1, 1));
                    prob.add_psd(format!("epigraph({})", g.nodes()[gamma]), expr)?;
                    let mut obj = LinearExpr::new();
                    obj.add_scalar(&t, 1.0);
                    prob.set_objective(Sense::Minimize, obj);
                    let sol = sdp::solve(&prob, opts).into_result()?;
                    let ctrl = recover_controller(&sol, &vars, g, used.clone(), 0.0)?;
                    let value = ctrl.value(x0)?;
                    Ok((value, ctrl))
                })
                .collect();
            let mut best: Option<(f64, Controller)> = None;
            let mut first_err = None;
            for r in results {
                match r {
                    Ok((v, c)) if best.as_ref().is_none_or(|(b, _)| v < *b) => best = Some((v, c)),
                    Ok(_) => {}
                    Err(e) => {
                        first_err.get_or_insert(e);
                    }
                }
            }
            match (best, first_err) {
                (Some((v, c)), _) => {
                    let cert = c.cert.with_objective_value(v);
                    Controller::new(cert, c.k)?
                }
                (None, Some(e)) => return Err(e),
                (None, None) => unreachable!("graphs have at least one node"),
            }
        }
    };
    ctrl.validate(sys, cost, opts.feas_tol)?;
    Ok(ctrl)
}

/// `κ(x) = argmin_α xᵀP_αx` (lowest index on ties) and `u = K_κ x`.
pub fn apply_policy(ctrl: &Controller, x: &Vector) -> Result<(Vector, usize)> {
    let (_, node) = ctrl.cert.evaluate_with_node(x)?;
    Ok((&ctrl.k[node] * x, node))
}

/// For each node `(j_1, …, j_{l+1})` of a De Bruijn graph of order `l + 1`,
/// the index of `(j_1, …, j_l)` in `lower`.
pub fn debruijn_projection(higher: &LabeledGraph, lower: &LabeledGraph) -> Result<Vec<usize>> {
    higher
        .nodes()
        .iter()
        .map(|name| {
            let seq = parse_sequence_label(name)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::InvalidGraph(format!("node {name} is not a nonempty mode sequence")))?;
            let target = crate::graph::sequence_label(&seq[..seq.len() - 1]);
            lower
                .node_index(&target)
                .ok_or_else(|| Error::InvalidGraph(format!("node {target} missing from the lower-order graph")))
        })
        .collect()
}

/// Lifts a controller to `higher` by `P_α := P_{π(α)}`, `K_α := K_{π(α)}`.
pub fn lift_controller(ctrl: &Controller, higher: &LabeledGraph, from_order: usize) -> Result<Controller> {
    let pi = debruijn_projection(higher, ctrl.cert.graph())?;
    let p = pi.iter().map(|&j| ctrl.cert.p()[j].clone()).collect();
    let k = pi.iter().map(|&j| ctrl.k[j].clone()).collect();
    let cert = Certificate::new(
        higher.clone(),
        p,
        Combiner::Min,
        ObjectiveUsed::Lifted { from_order },
        ctrl.cert.objective_value(),
    )?;
    Controller::new(cert, k)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedLoopReport {
    pub samples: usize,
    pub horizon: usize,
    /// Samples where the worst closed-loop cost exceeded `V(x)` beyond tolerance.
    pub violations: Vec<usize>,
    /// Smallest `V(x) - J^φ_H(x)` over samples.
    pub worst_margin: f64,
    pub results: Vec<OracleResult>,
}

impl ClosedLoopReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Exhaustive worst-case closed-loop cost at horizon `h_max` for every
/// sample, compared against `V(x)` with tolerance `tol·(1 + V(x))`.
pub fn closed_loop_check(
    ctrl: &Controller,
    sys: &SwitchedSystem,
    cost: &QuadCost,
    samples: &[Vector],
    h_max: usize,
    tol: f64,
) -> Result<ClosedLoopReport> {
    let results: Vec<OracleResult> = samples
        .par_iter()
        .map(|x| closed_loop_oracle(ctrl, sys, cost, x, h_max, DEFAULT_CLOSED_LOOP_TAIL * (1.0 + quad_form(cost.q(), x))))
        .collect::<Result<_>>()?;
    let mut violations = Vec::new();
    let mut worst_margin = f64::INFINITY;
    for (i, (x, r)) in samples.iter().zip(&results).enumerate() {
        let v = ctrl.value(x)?;
        let margin = v - r.j_h;
        worst_margin = worst_margin.min(margin);
        if margin < -tol * (1.0 + v) {
            violations.push(i);
        }
    }
    Ok(ClosedLoopReport {
        samples: samples.len(),
        horizon: h_max,
        violations,
        worst_margin,
        results,
    })
}

const DEFAULT_CLOSED_LOOP_TAIL: f64 = 1e-6;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_debruijn, two_node_cocomplete, DeBruijnSpec};
    use crate::linalg::vector;
    use crate::system::controlled_example_system;
    use approx::assert_relative_eq;

    fn scalar(a: f64, b: f64) -> (SwitchedSystem, QuadCost) {
        (
            SwitchedSystem::new(vec![Mat::from_element(1, 1, a)], Some(vec![Mat::from_element(1, 1, b)])).unwrap(),
            QuadCost::identity(1, Some(1)),
        )
    }

    fn debruijn(order: usize, m: usize) -> LabeledGraph {
        build_debruijn(DeBruijnSpec {
            order,
            num_modes: m,
            dual: false,
        })
        .unwrap()
    }

    #[test]
    fn block_counts() {
        let (sys, cost) = controlled_example_system();
        let g = crate::graph::dualize(&two_node_cocomplete());
        let (prob, vars) = assemble_synthesis_lmis(&sys, &cost, &g).unwrap();
        assert_eq!(vars.s.len(), 2);
        let edges: Vec<_> = prob.constraints().iter().filter(|c| c.name.starts_with("edge")).collect();
        assert_eq!(edges.len(), 4);
        assert!(edges.iter().all(|c| c.expr.dim() == 7));

        let (prob, vars) = assemble_synthesis_lmis(&sys, &cost, &debruijn(2, 2)).unwrap();
        assert_eq!(vars.y.len(), 4);
        assert_eq!(prob.constraints().iter().filter(|c| c.name.starts_with("edge")).count(), 8);
    }

    #[test]
    fn rejects_incomplete_or_autonomous() {
        let (sys, cost) = controlled_example_system();
        assert!(assemble_synthesis_lmis(&sys, &cost, &two_node_cocomplete()).is_err());
        let auto = sys.without_inputs();
        assert!(assemble_synthesis_lmis(&auto, &QuadCost::identity(2, None), &debruijn(1, 2)).is_err());
    }

    #[test]
    fn zero_dynamics_gives_zero_gain() {
        let (sys, cost) = scalar(0.0, 1.0);
        let g = debruijn(0, 1);
        let x0 = vector(&[1.0]);
        let ctrl = synthesize(&sys, &cost, &g, &SynthesisObjective::Pointwise(x0.clone()), &SolverOptions::default())
            .unwrap();
        assert_relative_eq!(ctrl.gains()[0][(0, 0)], 0.0, epsilon = 1e-5);
        assert_relative_eq!(ctrl.certificate().p()[0][(0, 0)], 1.0, epsilon = 1e-5);
        assert_relative_eq!(ctrl.value(&x0).unwrap(), 1.0, epsilon = 1e-5);
        let r = closed_loop_check(&ctrl, &sys, &cost, &[x0], 5, 1e-6).unwrap();
        assert_relative_eq!(r.results[0].j_h, 1.0, epsilon = 1e-5);
    }

    #[test]
    fn scalar_unstable_plant() {
        let (sys, cost) = scalar(2.0, 1.0);
        let g = debruijn(0, 1);
        let ctrl = synthesize(&sys, &cost, &g, &SynthesisObjective::Pointwise(vector(&[1.0])), &SolverOptions::default())
            .unwrap();
        let p = ctrl.certificate().p()[0][(0, 0)];
        let k = ctrl.gains()[0][(0, 0)];
        assert!(1.0 + k * k + (2.0 + k).powi(2) * p <= p * (1.0 + 1e-6));
        // Scalar Riccati optimum: P = (4 + sqrt(20)) / 2, K = -2P / (1 + P).
        let p_star = (4.0 + 20f64.sqrt()) / 2.0;
        assert_relative_eq!(p, p_star, max_relative = 1e-4);
        assert_relative_eq!(k, -2.0 * p_star / (1.0 + p_star), max_relative = 1e-4);
    }

    #[test]
    fn round_trip_algebra() {
        let (sys, cost) = controlled_example_system();
        let g = debruijn(1, 2);
        let (prob, vars) = assemble_synthesis_lmis(&sys, &cost, &g).unwrap();
        let mut prob = prob;
        let mut obj = LinearExpr::new();
        for s in &vars.s {
            obj.add_trace(s, 1.0);
        }
        prob.set_objective(Sense::Maximize, obj);
        let sol = sdp::solve(&prob, &SolverOptions::default());
        let ctrl = recover_controller(&sol, &vars, &g, ObjectiveUsed::SurrogateVolume, 0.0).unwrap();
        for a in 0..g.num_nodes() {
            let s = sol.matrix(&vars.s[a]);
            let (s_back, _) = spd_inverse(&ctrl.certificate().p()[a], "P").unwrap();
            let y_back = &ctrl.gains()[a] * &s_back;
            assert!((&s_back - &s).norm() <= 1e-8 * (1.0 + s.norm()));
            assert!((&y_back - sol.matrix(&vars.y[a])).norm() <= 1e-8 * (1.0 + s.norm()));
        }
        ctrl.validate(&sys, &cost, 1e-6).unwrap();
    }

    #[test]
    fn policy_ties_and_single_node() {
        let (sys, cost) = controlled_example_system();
        let g = debruijn(2, 2);
        let ctrl = synthesize(&sys, &cost, &g, &SynthesisObjective::SurrogateVolume, &SolverOptions::default()).unwrap();
        let (u, node) = apply_policy(&ctrl, &vector(&[0.0, 0.0])).unwrap();
        assert_eq!(node, 0);
        assert_eq!(u[0], 0.0);
        let x = vector(&[1.0, 0.0]);
        let (_, node) = apply_policy(&ctrl, &x).unwrap();
        let vals: Vec<f64> = ctrl.certificate().p().iter().map(|p| quad_form(p, &x)).collect();
        assert!(vals.iter().all(|&v| vals[node] <= v));
    }

    #[test]
    fn json_round_trip() {
        let (sys, cost) = controlled_example_system();
        let ctrl =
            synthesize(&sys, &cost, &debruijn(1, 2), &SynthesisObjective::SurrogateVolume, &SolverOptions::default())
                .unwrap();
        let text = ctrl.to_json();
        assert!(text.contains("\"K\""));
        let back = Controller::from_json(&text).unwrap();
        assert_eq!(back.gains(), ctrl.gains());
        assert_eq!(back.certificate().p(), ctrl.certificate().p());
    }

    #[test]
    fn zeroed_gain_is_detected() {
        let (sys, cost) = controlled_example_system();
        let g = debruijn(1, 2);
        let x0 = vector(&[0.5f64.cos(), 0.5f64.sin()]);
        let ctrl = synthesize(&sys, &cost, &g, &SynthesisObjective::Pointwise(x0), &SolverOptions::default()).unwrap();
        let mut k = ctrl.gains().to_vec();
        for g in &mut k {
            g.fill(0.0);
        }
        let broken = Controller::new(ctrl.certificate().clone(), k).unwrap();
        assert!(broken.validate(&sys, &cost, 1e-6).is_err());
        // Open-loop costs reach `H·|x|²` under the rotation mode, above every `V(x)` here.
        let samples: Vec<Vector> = (0..4)
            .map(|i| {
                let th = i as f64 * std::f64::consts::PI / 4.0;
                vector(&[th.cos(), th.sin()])
            })
            .collect();
        let report = closed_loop_check(&broken, &sys, &cost, &samples, 18, 1e-6).unwrap();
        assert!(!report.ok());
    }

    #[test]
    fn lifted_controller_is_feasible() {
        let (sys, cost) = controlled_example_system();
        let x0 = vector(&[2f64.cos(), 2f64.sin()]);
        let ctrl = synthesize(&sys, &cost, &debruijn(1, 2), &SynthesisObjective::Pointwise(x0.clone()), &SolverOptions::default())
            .unwrap();
        let lifted = lift_controller(&ctrl, &debruijn(2, 2), 1).unwrap();
        lifted.validate(&sys, &cost, 1e-6).unwrap();
        assert_relative_eq!(lifted.value(&x0).unwrap(), ctrl.value(&x0).unwrap(), max_relative = 1e-12);
    }
}

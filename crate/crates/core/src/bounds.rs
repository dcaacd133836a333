//! Quadratic path-complete upper bounds on the worst-case value function of
//! autonomous switched systems.
//!
//! A certificate assigns `P_α ⪰ 0` to every node and satisfies
//! `P_α ⪰ Q + A_iᵀ P_β A_i` on every edge `(α, β, i)`. The bound is
//! `min_α xᵀP_αx` on complete graphs and `max_α xᵀP_αx` on co-complete graphs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_debruijn, is_cocomplete, is_complete, DeBruijnSpec, GraphFile, LabeledGraph};
use crate::linalg::{
    congruence, from_rows, max_eigenvalue, min_eigenvalue, quad_form, spd_inv_sqrt, symmetrize, to_rows, Mat,
    Vector,
};
use crate::sdp::{self, AffineExpr, LinearExpr, SdpProblem, Sense, SolverOptions, VarHandle};
use crate::system::{QuadCost, SwitchedSystem};

/// Default cap on the number of mode products enumerated by [`compute_eta`].
pub const DEFAULT_PRODUCT_LIMIT: u128 = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    Min,
    Max,
}

impl Combiner {
    pub fn as_str(&self) -> &'static str {
        match self {
            Combiner::Min => "min",
            Combiner::Max => "max",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    TraceSum,
    Pointwise(Vector),
}

/// Record of how a certificate was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveUsed {
    TraceSum,
    Pointwise { x0: Vec<f64> },
    AnalyticDebruijn { order: usize, eta: f64 },
    Lifted { from_order: usize },
    /// Controller synthesis maximizing `Σ_α trace(S_α)`.
    SurrogateVolume,
}

/// Picks `max` when the graph is co-complete (also when it is both), else `min`
/// when complete. An explicit preference is checked against the graph.
pub fn select_combiner(g: &LabeledGraph, preference: Option<Combiner>) -> Result<Combiner> {
    match preference {
        Some(Combiner::Min) if !is_complete(g) => Err(Error::CombinerHypothesis {
            combiner: "min",
            required: "complete",
        }),
        Some(Combiner::Max) if !is_cocomplete(g) => Err(Error::CombinerHypothesis {
            combiner: "max",
            required: "co-complete",
        }),
        Some(c) => Ok(c),
        None if is_cocomplete(g) => Ok(Combiner::Max),
        None if is_complete(g) => Ok(Combiner::Min),
        None => Err(Error::NoValidCombiner),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    graph: LabeledGraph,
    p: Vec<Mat>,
    combiner: Combiner,
    objective: ObjectiveUsed,
    objective_value: f64,
}

impl Certificate {
    /// Checks the combiner hypothesis and matrix shapes; LMI validity is
    /// checked separately by [`Certificate::validate`].
    pub fn new(
        graph: LabeledGraph,
        p: Vec<Mat>,
        combiner: Combiner,
        objective: ObjectiveUsed,
        objective_value: f64,
    ) -> Result<Self> {
        select_combiner(&graph, Some(combiner))?;
        if p.len() != graph.num_nodes() {
            return Err(Error::Dimension(format!(
                "{} matrices for {} nodes",
                p.len(),
                graph.num_nodes()
            )));
        }
        let n = p[0].nrows();
        if p.iter().any(|m| m.nrows() != n || m.ncols() != n) {
            return Err(Error::Dimension("certificate matrices differ in shape".into()));
        }
        Ok(Self {
            graph,
            p: p.iter().map(symmetrize).collect(),
            combiner,
            objective,
            objective_value,
        })
    }

    pub fn graph(&self) -> &LabeledGraph {
        &self.graph
    }

    pub fn p(&self) -> &[Mat] {
        &self.p
    }

    pub fn combiner(&self) -> Combiner {
        self.combiner
    }

    pub fn objective(&self) -> &ObjectiveUsed {
        &self.objective
    }

    pub fn objective_value(&self) -> f64 {
        self.objective_value
    }

    pub fn state_dim(&self) -> usize {
        self.p[0].nrows()
    }

    pub fn with_objective_value(self, objective_value: f64) -> Self {
        Self { objective_value, ..self }
    }

    /// Same graph and combiner with every `P_α` multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            p: self.p.iter().map(|m| m * s).collect(),
            ..self.clone()
        }
    }

    /// `xᵀP_αx` for every node.
    pub fn node_values(&self, x: &Vector) -> Result<Vec<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::Dimension(format!(
                "state has length {}, certificate has n = {}",
                x.len(),
                self.state_dim()
            )));
        }
        Ok(self.p.iter().map(|p| quad_form(p, x)).collect())
    }

    /// Combined bound and the attaining node (lowest index on ties).
    pub fn evaluate_with_node(&self, x: &Vector) -> Result<(f64, usize)> {
        let values = self.node_values(x)?;
        let mut best = (values[0], 0);
        for (i, &v) in values.iter().enumerate().skip(1) {
            let better = match self.combiner {
                Combiner::Min => v < best.0,
                Combiner::Max => v > best.0,
            };
            if better {
                best = (v, i);
            }
        }
        Ok(best)
    }

    /// Minimum eigenvalue of `P_α - Q - A_iᵀP_βA_i` for each edge, in edge order.
    pub fn edge_residuals(&self, sys: &SwitchedSystem, cost: &QuadCost) -> Vec<f64> {
        self.graph
            .edges()
            .iter()
            .map(|e| {
                let w = congruence(sys.a(e.label), &self.p[e.target]);
                min_eigenvalue(&(&self.p[e.source] - cost.q() - w))
            })
            .collect()
    }

    /// Checks `P_α ⪰ -tol` and every edge inequality at `tol`.
    pub fn validate(&self, sys: &SwitchedSystem, cost: &QuadCost, tol: f64) -> Result<()> {
        check_compatible(sys, cost, &self.graph)?;
        for (i, p) in self.p.iter().enumerate() {
            let e = min_eigenvalue(p);
            if e < -tol {
                return Err(Error::NotPositiveDefinite {
                    what: format!("P at node {}", self.graph.nodes()[i]),
                    min_eig: e,
                    threshold: -tol,
                });
            }
        }
        for (edge, r) in self.graph.edges().iter().zip(self.edge_residuals(sys, cost)) {
            if r < -tol {
                return Err(Error::NotPositiveDefinite {
                    what: format!(
                        "edge inequality ({}, {}, {})",
                        self.graph.nodes()[edge.source],
                        self.graph.nodes()[edge.target],
                        edge.label
                    ),
                    min_eig: r,
                    threshold: -tol,
                });
            }
        }
        Ok(())
    }

    pub fn to_file(&self) -> CertificateFile {
        CertificateFile {
            graph: self.graph.to_file(),
            combiner: self.combiner,
            p: self
                .graph
                .nodes()
                .iter()
                .zip(&self.p)
                .map(|(name, m)| (name.clone(), to_rows(m)))
                .collect(),
            objective: self.objective.clone(),
            objective_value: self.objective_value,
        }
    }

    pub fn from_file(file: CertificateFile) -> Result<Self> {
        let graph = LabeledGraph::from_file(file.graph)?;
        let p = graph
            .nodes()
            .iter()
            .map(|name| {
                let rows = file
                    .p
                    .get(name)
                    .ok_or_else(|| Error::InvalidArgument(format!("no matrix for node '{name}'")))?;
                from_rows(rows, &format!("P[{name}]"))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(graph, p, file.combiner, file.objective, file.objective_value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("certificate serialization cannot fail")
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

/// On-disk certificate: `{"graph", "combiner", "P": {node: rows}, "objective", "objective_value"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateFile {
    pub graph: GraphFile,
    pub combiner: Combiner,
    #[serde(rename = "P")]
    pub p: BTreeMap<String, Vec<Vec<f64>>>,
    pub objective: ObjectiveUsed,
    #[serde(default)]
    pub objective_value: f64,
}

pub fn evaluate(cert: &Certificate, x: &Vector) -> Result<f64> {
    cert.evaluate_with_node(x).map(|(v, _)| v)
}

fn check_compatible(sys: &SwitchedSystem, cost: &QuadCost, g: &LabeledGraph) -> Result<()> {
    if g.num_modes() != sys.num_modes() {
        return Err(Error::Dimension(format!(
            "graph has {} modes, system has {}",
            g.num_modes(),
            sys.num_modes()
        )));
    }
    if cost.q().nrows() != sys.state_dim() {
        return Err(Error::Dimension(format!(
            "Q is {0}x{0}, system has n = {1}",
            cost.q().nrows(),
            sys.state_dim()
        )));
    }
    Ok(())
}

/// One symmetric variable per node, `P_α - Q - A_iᵀP_βA_i ⪰ 0` per edge and `P_α ⪰ 0` per node.
pub fn assemble_bound_lmis(
    sys: &SwitchedSystem,
    cost: &QuadCost,
    g: &LabeledGraph,
) -> Result<(SdpProblem, Vec<VarHandle>)> {
    sys.require_autonomous()?;
    check_compatible(sys, cost, g)?;
    let n = sys.state_dim();
    let mut prob = SdpProblem::new();
    let vars: Vec<VarHandle> = g.nodes().iter().map(|name| prob.symmetric_var(format!("P[{name}]"), n)).collect();
    let neg_q = -cost.q();
    for e in g.edges() {
        let mut expr = AffineExpr::new(n);
        expr.add_var(0, 0, &vars[e.source], 1.0)
            .add_congruence(0, &vars[e.target], sys.a(e.label), -1.0)
            .add_constant_block(0, 0, &neg_q);
        prob.add_psd(
            format!("edge({},{},{})", g.nodes()[e.source], g.nodes()[e.target], e.label),
            expr,
        )?;
    }
    for (name, v) in g.nodes().iter().zip(&vars) {
        let mut expr = AffineExpr::new(n);
        expr.add_var(0, 0, v, 1.0);
        prob.add_psd(format!("psd({name})"), expr)?;
    }
    Ok((prob, vars))
}

fn solved_matrices(sol: &sdp::SdpSolution, vars: &[VarHandle]) -> Vec<Mat> {
    vars.iter().map(|v| symmetrize(&sol.matrix(v))).collect()
}

/// Solves the edge LMIs under `objective`; the combiner defaults per [`select_combiner`].
pub fn solve_upper_bound(
    sys: &SwitchedSystem,
    cost: &QuadCost,
    g: &LabeledGraph,
    objective: &Objective,
    combiner: Option<Combiner>,
    opts: &SolverOptions,
) -> Result<Certificate> {
    let combiner = select_combiner(g, combiner)?;
    let (base, vars) = assemble_bound_lmis(sys, cost, g)?;
    match objective {
        Objective::TraceSum => {
            let mut prob = base;
            let mut obj = LinearExpr::new();
            for v in &vars {
                obj.add_trace(v, 1.0);
            }
            prob.set_objective(Sense::Minimize, obj);
            let sol = sdp::solve(&prob, opts).into_result()?;
            Certificate::new(
                g.clone(),
                solved_matrices(&sol, &vars),
                combiner,
                ObjectiveUsed::TraceSum,
                sol.objective_value,
            )
        }
        Objective::Pointwise(x0) => {
            if x0.len() != sys.state_dim() {
                return Err(Error::Dimension(format!("x0 has length {}, expected {}", x0.len(), sys.state_dim())));
            }
            let used = ObjectiveUsed::Pointwise {
                x0: x0.iter().copied().collect(),
            };
            match combiner {
                Combiner::Max => {
                    let mut prob = base;
                    let t = prob.scalar_var("t", None);
                    for (name, v) in g.nodes().iter().zip(&vars) {
                        let mut row = LinearExpr::new();
                        row.add_scalar(&t, 1.0).add_quad(v, x0, -1.0);
                        prob.add_linear_ge(format!("epigraph({name})"), &row)?;
                    }
                    let mut obj = LinearExpr::new();
                    obj.add_scalar(&t, 1.0);
                    prob.set_objective(Sense::Minimize, obj);
                    let sol = sdp::solve(&prob, opts).into_result()?;
                    let p = solved_matrices(&sol, &vars);
                    let value = p.iter().map(|m| quad_form(m, x0)).fold(f64::NEG_INFINITY, f64::max);
                    Certificate::new(g.clone(), p, combiner, used, value)
                }
                Combiner::Min => {
                    let results: Vec<Result<(f64, Vec<Mat>)>> = (0..vars.len())
                        .into_par_iter()
                        .map(|alpha| {
                            let mut prob = base.clone();
                            let mut obj = LinearExpr::new();
                            obj.add_quad(&vars[alpha], x0, 1.0);
                            prob.set_objective(Sense::Minimize, obj);
                            let sol = sdp::solve(&prob, opts).into_result()?;
                            let p = solved_matrices(&sol, &vars);
                            Ok((p.iter().map(|m| quad_form(m, x0)).fold(f64::INFINITY, f64::min), p))
                        })
                        .collect();
                    let mut best: Option<(f64, Vec<Mat>)> = None;
                    let mut first_err = None;
                    for r in results {
                        match r {
                            Ok((v, p)) => {
                                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                                    best = Some((v, p));
                                }
                            }
                            Err(e) => {
                                first_err.get_or_insert(e);
                            }
                        }
                    }
                    match (best, first_err) {
                        (Some((v, p)), None) => Certificate::new(g.clone(), p, combiner, used, v),
                        (_, Some(e)) => Err(e),
                        (None, None) => unreachable!("graphs have at least one node"),
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BellmanReport {
    pub samples: usize,
    pub violations: usize,
    /// `min_x V(x) - c(x) - max_i V(A_i x)` over the samples.
    pub worst_margin: f64,
    pub worst_state: Option<Vec<f64>>,
}

impl BellmanReport {
    pub fn ok(&self) -> bool {
        self.violations == 0
    }
}

/// Checks `V(x) ≥ c(x) + max_i V(A_i x) - tol` at every sample.
pub fn check_bellman_upper(
    cert: &Certificate,
    sys: &SwitchedSystem,
    cost: &QuadCost,
    samples: &[Vector],
    tol: f64,
) -> Result<BellmanReport> {
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut worst_state = None;
    for x in samples {
        let v = evaluate(cert, x)?;
        let mut next = f64::NEG_INFINITY;
        for i in 1..=sys.num_modes() {
            next = next.max(evaluate(cert, &(sys.a(i) * x))?);
        }
        let margin = v - cost.state_cost(x) - next;
        if margin < -tol {
            violations += 1;
        }
        if margin < worst {
            worst = margin;
            worst_state = Some(x.iter().copied().collect());
        }
    }
    Ok(BellmanReport {
        samples: samples.len(),
        violations,
        worst_margin: if samples.is_empty() { 0.0 } else { worst },
        worst_state,
    })
}

/// `max_Π λ_max(Q^{-1/2} ΠᵀQΠ Q^{-1/2})` over all products of `l + 1` modes.
pub fn compute_eta(sys: &SwitchedSystem, cost: &QuadCost, l: usize) -> Result<f64> {
    compute_eta_with_limit(sys, cost, l, DEFAULT_PRODUCT_LIMIT)
}

pub fn compute_eta_with_limit(sys: &SwitchedSystem, cost: &QuadCost, l: usize, limit: u128) -> Result<f64> {
    sys.require_autonomous()?;
    let m = sys.num_modes();
    let count = (m as u128).checked_pow(l as u32 + 1).unwrap_or(u128::MAX);
    if count > limit {
        return Err(Error::Capacity {
            what: format!("mode products of length {}", l + 1),
            count,
            limit,
        });
    }
    let q_is = spd_inv_sqrt(cost.q());
    let n = sys.state_dim();
    // Depth-first over left-multiplied products A_{i_l}···A_{i_0}.
    fn walk(sys: &SwitchedSystem, q: &Mat, q_is: &Mat, prod: &Mat, remaining: usize, best: &mut f64) {
        for i in 1..=sys.num_modes() {
            let next = sys.a(i) * prod;
            if remaining == 1 {
                let r = max_eigenvalue(&symmetrize(&(q_is * congruence(&next, q) * q_is)));
                *best = best.max(r);
            } else {
                walk(sys, q, q_is, &next, remaining - 1, best);
            }
        }
    }
    let mut best = 0.0f64;
    walk(sys, cost.q(), &q_is, &Mat::identity(n, n), l + 1, &mut best);
    Ok(best)
}

/// `Σ_{k=0}^{l} Π_kᵀ Q Π_k` with `Π_k = A_{s_{k-1}}···A_{s_0}` for a node sequence `s` of length `l`.
pub fn sequence_cost_matrix(sys: &SwitchedSystem, q: &Mat, seq: &[usize]) -> Mat {
    let n = sys.state_dim();
    let mut prod = Mat::identity(n, n);
    let mut acc = q.clone();
    for &mode in seq {
        prod = sys.a(mode) * prod;
        acc += congruence(&prod, q);
    }
    symmetrize(&acc)
}

/// Closed-form certificate on the dual De Bruijn graph of order `l`, scaled by `1/(1-η_l)`.
pub fn debruijn_analytic_certificate(sys: &SwitchedSystem, cost: &QuadCost, l: usize) -> Result<Certificate> {
    sys.require_autonomous()?;
    let eta = compute_eta(sys, cost, l)?;
    if eta >= 1.0 {
        return Err(Error::OrderTooSmall { order: l, eta });
    }
    let graph = build_debruijn(DeBruijnSpec {
        order: l,
        num_modes: sys.num_modes(),
        dual: true,
    })?;
    let seqs = crate::graph::debruijn_sequences(l, sys.num_modes());
    let scale = 1.0 / (1.0 - eta);
    let p: Vec<Mat> = seqs.iter().map(|s| sequence_cost_matrix(sys, cost.q(), s) * scale).collect();
    let trace: f64 = p.iter().map(|m| m.trace()).sum();
    let cert = Certificate::new(
        graph,
        p,
        Combiner::Max,
        ObjectiveUsed::AnalyticDebruijn { order: l, eta },
        trace,
    )?;
    let worst = cert.edge_residuals(sys, cost).into_iter().fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * (1.0 + cert.p().iter().map(|m| m.amax()).fold(0.0, f64::max));
    if worst < -tol {
        return Err(Error::IllConditioned(format!(
            "analytic certificate of order {l} violates an edge inequality by {worst:.3e}"
        )));
    }
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{two_node_cocomplete, two_node_incomplete};
    use crate::linalg::vector;
    use crate::system::{example2_system, random_stable_system};
    use approx::assert_relative_eq;

    fn scalar(a: f64) -> (SwitchedSystem, QuadCost) {
        (
            SwitchedSystem::autonomous(vec![Mat::from_element(1, 1, a)]).unwrap(),
            QuadCost::identity(1, None),
        )
    }

    fn self_loop() -> LabeledGraph {
        LabeledGraph::new(1, vec!["v".into()], &[("v", "v", 1)]).unwrap()
    }

    fn circle(count: usize) -> Vec<Vector> {
        (0..count)
            .map(|k| {
                let th = std::f64::consts::TAU * k as f64 / count as f64;
                vector(&[th.cos(), th.sin()])
            })
            .collect()
    }

    #[test]
    fn lmi_counts() {
        let (sys, cost) = example2_system();
        let (p, vars) = assemble_bound_lmis(&sys, &cost, &two_node_cocomplete()).unwrap();
        assert_eq!(vars.len(), 2);
        assert_eq!(p.constraints().len(), 6);
        let g = build_debruijn(DeBruijnSpec {
            order: 2,
            num_modes: 2,
            dual: true,
        })
        .unwrap();
        let (p, vars) = assemble_bound_lmis(&sys, &cost, &g).unwrap();
        assert_eq!(vars.len(), 4);
        assert_eq!(p.constraints().len(), 8 + 4);
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let (sys, cost) = scalar(0.5);
        assert!(matches!(
            assemble_bound_lmis(&sys, &cost, &two_node_cocomplete()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn example2_trace_solution() {
        let (sys, cost) = example2_system();
        let cert = solve_upper_bound(
            &sys,
            &cost,
            &two_node_cocomplete(),
            &Objective::TraceSum,
            None,
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(cert.combiner(), Combiner::Max);
        // Optimum confirmed by an independent conic solver.
        let p1 = Mat::from_row_slice(2, 2, &[3.286321, 0.109437, 0.109437, 1.155552]);
        let p2 = Mat::from_row_slice(2, 2, &[1.155552, -0.109437, -0.109437, 3.286321]);
        assert!((&cert.p()[0] - p1).amax() < 1e-4, "{}", cert.p()[0]);
        assert!((&cert.p()[1] - p2).amax() < 1e-4, "{}", cert.p()[1]);
        assert_relative_eq!(cert.objective_value(), 8.883747, epsilon = 1e-5);
        cert.validate(&sys, &cost, 1e-7).unwrap();
        assert_relative_eq!(evaluate(&cert, &vector(&[1.0, 0.0])).unwrap(), 3.286321, epsilon = 1e-4);
        assert_eq!(evaluate(&cert, &vector(&[0.0, 0.0])).unwrap(), 0.0);
        let report = check_bellman_upper(&cert, &sys, &cost, &circle(1000), 1e-6).unwrap();
        assert!(report.ok(), "{report:?}");
        let halved = check_bellman_upper(&cert.scaled(0.5), &sys, &cost, &circle(1000), 1e-6).unwrap();
        assert!(halved.violations > 0);
    }

    #[test]
    fn scalar_lyapunov_certificate() {
        let (sys, cost) = scalar(0.5);
        let cert =
            solve_upper_bound(&sys, &cost, &self_loop(), &Objective::TraceSum, None, &SolverOptions::default()).unwrap();
        assert_relative_eq!(cert.p()[0][(0, 0)], 4.0 / 3.0, epsilon = 1e-6);
    }

    #[test]
    fn zero_dynamics_certificate_is_q() {
        let sys = SwitchedSystem::autonomous(vec![Mat::zeros(2, 2), Mat::zeros(2, 2)]).unwrap();
        let q = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let cost = QuadCost::new(q.clone(), None).unwrap();
        let g = build_debruijn(DeBruijnSpec {
            order: 1,
            num_modes: 2,
            dual: false,
        })
        .unwrap();
        let cert = solve_upper_bound(&sys, &cost, &g, &Objective::TraceSum, None, &SolverOptions::default()).unwrap();
        assert_eq!(cert.combiner(), Combiner::Min);
        for p in cert.p() {
            assert!((p - &q).amax() < 1e-6);
        }
    }

    #[test]
    fn combiner_hypotheses() {
        let a = two_node_cocomplete();
        assert_eq!(select_combiner(&a, None).unwrap(), Combiner::Max);
        assert!(matches!(
            select_combiner(&a, Some(Combiner::Min)),
            Err(Error::CombinerHypothesis { .. })
        ));
        assert!(matches!(select_combiner(&two_node_incomplete(), None), Err(Error::NoValidCombiner)));
        let p = vec![Mat::identity(2, 2); 2];
        assert!(Certificate::new(a, p, Combiner::Min, ObjectiveUsed::TraceSum, 0.0).is_err());
        let single = self_loop();
        assert_eq!(select_combiner(&single, None).unwrap(), Combiner::Max);
        assert_eq!(select_combiner(&single, Some(Combiner::Min)).unwrap(), Combiner::Min);
    }

    #[test]
    fn pointwise_dominates_trace() {
        let (sys, cost) = example2_system();
        let opts = SolverOptions::default();
        for g in [
            two_node_cocomplete(),
            build_debruijn(DeBruijnSpec {
                order: 1,
                num_modes: 2,
                dual: false,
            })
            .unwrap(),
        ] {
            let trace = solve_upper_bound(&sys, &cost, &g, &Objective::TraceSum, None, &opts).unwrap();
            for x0 in circle(5) {
                let pw = solve_upper_bound(&sys, &cost, &g, &Objective::Pointwise(x0.clone()), None, &opts).unwrap();
                pw.validate(&sys, &cost, 1e-7).unwrap();
                let v = evaluate(&pw, &x0).unwrap();
                assert!(v <= evaluate(&trace, &x0).unwrap() + 1e-6);
                assert_relative_eq!(v, pw.objective_value(), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn eta_examples() {
        let (sys, cost) = scalar(0.5);
        assert_relative_eq!(compute_eta(&sys, &cost, 0).unwrap(), 0.25, epsilon = 1e-14);
        let rot = |t: f64| Mat::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]) * 0.9;
        let sys = SwitchedSystem::autonomous(vec![rot(0.3), rot(1.1)]).unwrap();
        assert_relative_eq!(compute_eta(&sys, &QuadCost::identity(2, None), 0).unwrap(), 0.81, epsilon = 1e-12);
        let sys = random_stable_system(3, 2, 4);
        let cost = QuadCost::identity(3, None);
        let direct = [1usize, 2]
            .iter()
            .flat_map(|&i| [1usize, 2].map(|j| crate::linalg::spectral_norm(&(sys.a(j) * sys.a(i))).powi(2)))
            .fold(0.0, f64::max);
        assert_relative_eq!(compute_eta(&sys, &cost, 1).unwrap(), direct, epsilon = 1e-10);
        assert!(matches!(
            compute_eta_with_limit(&sys, &cost, 5, 10),
            Err(Error::Capacity { count: 64, .. })
        ));
    }

    #[test]
    fn analytic_certificate_examples() {
        let (sys, cost) = scalar(0.5);
        let cert = debruijn_analytic_certificate(&sys, &cost, 0).unwrap();
        assert_relative_eq!(cert.p()[0][(0, 0)], 4.0 / 3.0, epsilon = 1e-14);

        let sys = SwitchedSystem::autonomous(vec![Mat::zeros(2, 2); 2]).unwrap();
        let q = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let cost = QuadCost::new(q.clone(), None).unwrap();
        for l in 0..3 {
            let cert = debruijn_analytic_certificate(&sys, &cost, l).unwrap();
            assert!(cert.p().iter().all(|p| (p - &q).amax() < 1e-14));
        }

        let unstable = SwitchedSystem::autonomous(vec![Mat::from_element(1, 1, 1.2)]).unwrap();
        assert!(matches!(
            debruijn_analytic_certificate(&unstable, &QuadCost::identity(1, None), 2),
            Err(Error::OrderTooSmall { .. })
        ));
    }

    #[test]
    fn analytic_certificates_on_example2() {
        let (sys, cost) = example2_system();
        let mut prev_eta = f64::INFINITY;
        for l in 1..=4 {
            let cert = debruijn_analytic_certificate(&sys, &cost, l).unwrap();
            cert.validate(&sys, &cost, 1e-9).unwrap();
            let ObjectiveUsed::AnalyticDebruijn { eta, .. } = *cert.objective() else {
                unreachable!()
            };
            assert!(eta < prev_eta);
            prev_eta = eta;
            assert!(check_bellman_upper(&cert, &sys, &cost, &circle(200), 1e-9).unwrap().ok());
        }
    }

    #[test]
    fn json_round_trip() {
        let (sys, cost) = example2_system();
        let cert = debruijn_analytic_certificate(&sys, &cost, 2).unwrap();
        let back = Certificate::from_json(&cert.to_json()).unwrap();
        assert_eq!(back.graph(), cert.graph());
        for (a, b) in back.p().iter().zip(cert.p()) {
            assert!((a - b).amax() < 1e-12);
        }
        assert_eq!(back.combiner(), Combiner::Max);
    }

    #[test]
    fn evaluate_tie_breaks_to_lowest_index() {
        let g = build_debruijn(DeBruijnSpec {
            order: 1,
            num_modes: 2,
            dual: false,
        })
        .unwrap();
        let cert = Certificate::new(g, vec![Mat::identity(2, 2); 2], Combiner::Min, ObjectiveUsed::TraceSum, 0.0)
            .unwrap();
        assert_eq!(cert.evaluate_with_node(&vector(&[1.0, 2.0])).unwrap(), (5.0, 0));
        assert!(evaluate(&cert, &vector(&[1.0])).is_err());
    }
}

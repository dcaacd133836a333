//! Brute-force worst-case truncated costs: the ground truth every
//! certificate is compared against.
//!
//! `J_H(x) = max_σ Σ_{k<H} c(ξ(k, x, σ))` is computed by depth-first
//! enumeration of mode sequences. A branch is cut only when its accumulated
//! cost plus a valid upper bound on the remaining cost cannot beat the
//! incumbent, so the returned maximum is exact.

use std::io::Write;

use serde::Serialize;

use crate::bounds::{debruijn_analytic_certificate, evaluate, Certificate};
use crate::control::{apply_policy, Controller};
use crate::error::{Error, Result};
use crate::linalg::{spd_inv_sqrt, spectral_norm, Mat, Vector};
use crate::system::{QuadCost, SwitchedSystem};

/// Default limit on visited search nodes per oracle call.
pub const DEFAULT_NODE_LIMIT: u64 = 200_000_000;

/// Horizons tried by the adaptive oracle, truncated at the configured cap.
pub const HORIZON_SCHEDULE: [usize; 4] = [8, 16, 32, 40];

pub const DEFAULT_MAX_HORIZON: usize = 40;

/// Relative stabilization tolerance: increments below `1e-6·(1 + J_H)` count as negligible.
pub const DEFAULT_TAIL_REL: f64 = 1e-6;

/// Closed-loop enumeration is exhaustive; refuse more than this many sequences.
pub const CLOSED_LOOP_SEQUENCE_LIMIT: u128 = 1 << 22;

/// Upper bound on the infinite-horizon worst-case cost, used for pruning.
#[derive(Debug, Clone)]
pub enum TailBound {
    None,
    /// `yᵀQy / (1 - ρ)` with `ρ = max_i ‖Q^{1/2} A_i Q^{-1/2}‖²`.
    Geometric { q: Mat, factor: f64 },
    /// A certificate bound, optionally tightened by the geometric one.
    Certificate { cert: Box<Certificate>, geometric: Option<(Mat, f64)> },
}

impl TailBound {
    /// Independent analytic bound: the closed-form dual De Bruijn
    /// certificate of the lowest order with small contraction factor,
    /// combined with the one-step geometric bound.
    pub fn auto(sys: &SwitchedSystem, cost: &QuadCost) -> Self {
        let geometric = geometric_factor(sys, cost).map(|f| (cost.q().clone(), f));
        let m = sys.num_modes();
        let mut best: Option<(f64, Certificate)> = None;
        let mut l = 0usize;
        while (m as u128).pow(l as u32) <= 64 {
            if let Ok(cert) = debruijn_analytic_certificate(sys, cost, l) {
                let crate::bounds::ObjectiveUsed::AnalyticDebruijn { eta, .. } = *cert.objective() else {
                    unreachable!("analytic certificates record their order")
                };
                best = Some((eta, cert));
                if eta <= 0.05 {
                    break;
                }
            }
            if m == 1 && l >= 6 {
                break;
            }
            l += 1;
        }
        match (best, geometric) {
            (Some((_, cert)), geometric) => TailBound::Certificate {
                cert: Box::new(cert),
                geometric,
            },
            (None, Some((q, factor))) => TailBound::Geometric { q, factor },
            (None, None) => TailBound::None,
        }
    }

    /// A caller-supplied certificate, which must be a valid upper bound.
    pub fn from_certificate(cert: Certificate) -> Self {
        TailBound::Certificate {
            cert: Box::new(cert),
            geometric: None,
        }
    }

    fn value(&self, y: &Vector) -> f64 {
        let geo = |q: &Mat, f: f64| (y.transpose() * q * y)[(0, 0)] * f;
        match self {
            TailBound::None => f64::INFINITY,
            TailBound::Geometric { q, factor } => geo(q, *factor),
            TailBound::Certificate { cert, geometric } => {
                let v = evaluate(cert, y).unwrap_or(f64::INFINITY);
                match geometric {
                    Some((q, f)) => v.min(geo(q, *f)),
                    None => v,
                }
            }
        }
    }

    fn prunes(&self) -> bool {
        !matches!(self, TailBound::None)
    }
}

fn geometric_factor(sys: &SwitchedSystem, cost: &QuadCost) -> Option<f64> {
    let q_is = spd_inv_sqrt(cost.q());
    let q_s = crate::linalg::sym_apply(cost.q(), |v| v.max(0.0).sqrt());
    let rho = sys
        .a_all()
        .iter()
        .map(|a| spectral_norm(&(&q_s * a * &q_is)).powi(2))
        .fold(0.0, f64::max);
    (rho < 1.0).then(|| 1.0 / (1.0 - rho))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub x: Vec<f64>,
    pub horizon: usize,
    pub j_h: f64,
    /// `J_{H-1}(x)`, used for the stabilization test.
    pub j_prev: f64,
    pub worst_sequence: Vec<usize>,
    pub stabilized: bool,
    pub nodes_visited: u64,
}

struct Search<'a> {
    num_modes: usize,
    step: &'a dyn Fn(&Vector, usize) -> Vector,
    stage: &'a dyn Fn(&Vector) -> f64,
    tail: &'a TailBound,
    node_limit: u64,
    nodes: u64,
    best: f64,
    best_path: Vec<usize>,
    path: Vec<usize>,
}

impl Search<'_> {
    /// Adds the cost of `x` and the `remaining - 1` following states.
    fn dfs(&mut self, x: &Vector, remaining: usize, acc: f64) -> Result<()> {
        self.nodes += 1;
        if self.nodes > self.node_limit {
            return Err(Error::Capacity {
                what: "oracle search nodes".into(),
                count: self.nodes as u128,
                limit: self.node_limit as u128,
            });
        }
        let acc = acc + (self.stage)(x);
        if remaining == 1 {
            if acc > self.best {
                self.best = acc;
                self.best_path = self.path.clone();
                self.best_path.push(1);
            }
            return Ok(());
        }
        let mut children: Vec<(f64, usize, Vector)> = (1..=self.num_modes)
            .map(|i| {
                let y = (self.step)(x, i);
                (self.tail.value(&y), i, y)
            })
            .collect();
        if self.tail.prunes() {
            children.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        }
        for (bound, i, y) in children {
            if acc + bound <= self.best {
                continue;
            }
            self.path.push(i);
            self.dfs(&y, remaining - 1, acc)?;
            self.path.pop();
        }
        Ok(())
    }

    fn greedy(&mut self, x0: &Vector, horizon: usize) {
        let mut x = x0.clone();
        let mut acc = 0.0;
        let mut path = Vec::with_capacity(horizon);
        for k in 0..horizon {
            acc += (self.stage)(&x);
            if k + 1 == horizon {
                path.push(1);
                break;
            }
            let (_, i, y) = (1..=self.num_modes)
                .map(|i| {
                    let y = (self.step)(&x, i);
                    let score = (self.stage)(&y) + if self.tail.prunes() { self.tail.value(&y) } else { 0.0 };
                    (score, i, y)
                })
                .fold(None, |best: Option<(f64, usize, Vector)>, c| match best {
                    Some(b) if b.0 >= c.0 => Some(b),
                    _ => Some(c),
                })
                .expect("at least one mode");
            path.push(i);
            x = y;
        }
        // Slightly below so the exact search re-finds ties and records their path.
        self.best = acc * (1.0 - 1e-15) - f64::MIN_POSITIVE;
        self.best_path = path;
    }
}

fn run_search(
    num_modes: usize,
    step: &dyn Fn(&Vector, usize) -> Vector,
    stage: &dyn Fn(&Vector) -> f64,
    tail: &TailBound,
    x0: &Vector,
    horizon: usize,
    node_limit: u64,
) -> Result<(f64, Vec<usize>, u64)> {
    if horizon == 0 {
        return Ok((0.0, Vec::new(), 0));
    }
    let mut s = Search {
        num_modes,
        step,
        stage,
        tail,
        node_limit,
        nodes: 0,
        best: f64::NEG_INFINITY,
        best_path: Vec::new(),
        path: Vec::with_capacity(horizon),
    };
    if tail.prunes() {
        s.greedy(x0, horizon);
    }
    s.dfs(x0, horizon, 0.0)?;
    let value = s.best.max(0.0);
    Ok((value, s.best_path, s.nodes))
}

fn finish(
    x: &Vector,
    horizon: usize,
    (j_h, seq, n1): (f64, Vec<usize>, u64),
    (j_prev, _, n2): (f64, Vec<usize>, u64),
    tail_tol: f64,
) -> OracleResult {
    OracleResult {
        x: x.iter().copied().collect(),
        horizon,
        j_h,
        j_prev,
        worst_sequence: seq,
        stabilized: j_h - j_prev < tail_tol,
        nodes_visited: n1 + n2,
    }
}

/// `J_H(x)` for an autonomous system; `stabilized` when `J_H - J_{H-1} < tail_tol`.
pub fn value_oracle(
    sys: &SwitchedSystem,
    cost: &QuadCost,
    x: &Vector,
    horizon: usize,
    tail_tol: f64,
) -> Result<OracleResult> {
    value_oracle_with(sys, cost, x, horizon, tail_tol, &TailBound::auto(sys, cost), DEFAULT_NODE_LIMIT)
}

pub fn value_oracle_with(
    sys: &SwitchedSystem,
    cost: &QuadCost,
    x: &Vector,
    horizon: usize,
    tail_tol: f64,
    tail: &TailBound,
    node_limit: u64,
) -> Result<OracleResult> {
    sys.require_autonomous()?;
    if x.len() != sys.state_dim() {
        return Err(Error::Dimension(format!("state has length {}, expected {}", x.len(), sys.state_dim())));
    }
    let step = |y: &Vector, i: usize| sys.a(i) * y;
    let stage = |y: &Vector| cost.state_cost(y);
    let a = run_search(sys.num_modes(), &step, &stage, tail, x, horizon, node_limit)?;
    let b = run_search(sys.num_modes(), &step, &stage, tail, x, horizon.saturating_sub(1), node_limit)?;
    Ok(finish(x, horizon, a, b, tail_tol))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveOptions {
    pub max_horizon: usize,
    pub tail_rel: f64,
    pub node_limit: u64,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            max_horizon: DEFAULT_MAX_HORIZON,
            tail_rel: DEFAULT_TAIL_REL,
            node_limit: DEFAULT_NODE_LIMIT,
        }
    }
}

fn horizons(max_horizon: usize) -> Vec<usize> {
    let mut hs: Vec<usize> = HORIZON_SCHEDULE.iter().copied().filter(|&h| h < max_horizon).collect();
    let mut h = *hs.last().unwrap_or(&0);
    while h * 2 < max_horizon && h > 0 {
        h *= 2;
        if h > *HORIZON_SCHEDULE.last().expect("schedule nonempty") {
            hs.push(h);
        }
    }
    hs.push(max_horizon);
    hs.dedup();
    hs
}

/// Grows `H` along the schedule until `J_H - J_{H-1} < tail_rel·(1 + J_H)` or the cap is reached.
pub fn value_oracle_adaptive(
    sys: &SwitchedSystem,
    cost: &QuadCost,
    x: &Vector,
    tail: &TailBound,
    opts: &AdaptiveOptions,
) -> Result<OracleResult> {
    let mut last = None;
    for h in horizons(opts.max_horizon) {
        let r = value_oracle_with(sys, cost, x, h, f64::INFINITY, tail, opts.node_limit)?;
        let tol = opts.tail_rel * (1.0 + r.j_h);
        let stabilized = r.j_h - r.j_prev < tol;
        let r = OracleResult { stabilized, ..r };
        if stabilized {
            return Ok(r);
        }
        last = Some(r);
    }
    Ok(last.expect("at least one horizon"))
}

/// Worst-case closed-loop cost under `u = K_{κ(x)} x` by exhaustive enumeration.
pub fn closed_loop_oracle(
    ctrl: &Controller,
    sys: &SwitchedSystem,
    cost: &QuadCost,
    x: &Vector,
    horizon: usize,
    tail_tol: f64,
) -> Result<OracleResult> {
    closed_loop_oracle_with(ctrl, sys, cost, x, horizon, tail_tol, &TailBound::None)
}

/// As [`closed_loop_oracle`], pruning with `tail` when it bounds the closed-loop cost-to-go.
pub fn closed_loop_oracle_with(
    ctrl: &Controller,
    sys: &SwitchedSystem,
    cost: &QuadCost,
    x: &Vector,
    horizon: usize,
    tail_tol: f64,
    tail: &TailBound,
) -> Result<OracleResult> {
    if sys.is_autonomous() {
        return Err(Error::InvalidSystem("closed-loop oracle needs input matrices".into()));
    }
    if x.len() != sys.state_dim() {
        return Err(Error::Dimension(format!("state has length {}, expected {}", x.len(), sys.state_dim())));
    }
    if !tail.prunes() {
        let count = (sys.num_modes() as u128).checked_pow(horizon.saturating_sub(1) as u32).unwrap_or(u128::MAX);
        if count > CLOSED_LOOP_SEQUENCE_LIMIT {
            return Err(Error::Capacity {
                what: format!("closed-loop mode sequences of length {horizon}"),
                count,
                limit: CLOSED_LOOP_SEQUENCE_LIMIT,
            });
        }
    }
    let step = |y: &Vector, i: usize| {
        let (u, _) = apply_policy(ctrl, y).expect("dimension checked");
        sys.a(i) * y + sys.b(i).expect("controlled system") * u
    };
    let stage = |y: &Vector| {
        let (u, _) = apply_policy(ctrl, y).expect("dimension checked");
        cost.stage_cost(y, Some(&u))
    };
    let limit = DEFAULT_NODE_LIMIT;
    let a = run_search(sys.num_modes(), &step, &stage, tail, x, horizon, limit)?;
    let b = run_search(sys.num_modes(), &step, &stage, tail, x, horizon.saturating_sub(1), limit)?;
    Ok(finish(x, horizon, a, b, tail_tol))
}

/// Version tag of the oracle CSV layout.
pub const ORACLE_CSV_SCHEMA: &str = "oracle-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub result: OracleResult,
    pub v: Option<f64>,
    pub v_over_mu: Option<f64>,
}

/// Columns: `x1..xn, H, J_H, stabilized, V, V_over_mu` (empty cells when unavailable).
pub fn write_oracle_csv<W: Write>(out: W, rows: &[OracleRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = rows.first().map_or(0, |r| r.result.x.len());
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.extend(["H", "J_H", "stabilized", "V", "V_over_mu"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.12e}"));
    for r in rows {
        let mut rec: Vec<String> = r.result.x.iter().map(|v| format!("{v:.12e}")).collect();
        rec.push(r.result.horizon.to_string());
        rec.push(format!("{:.12e}", r.result.j_h));
        rec.push(r.result.stabilized.to_string());
        rec.push(opt(r.v));
        rec.push(opt(r.v_over_mu));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::vector;
    use crate::system::{example2_system, random_stable_system};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scalar_two_modes() -> (SwitchedSystem, QuadCost) {
        (
            SwitchedSystem::autonomous(vec![Mat::from_element(1, 1, 0.5), Mat::from_element(1, 1, -0.6)]).unwrap(),
            QuadCost::identity(1, None),
        )
    }

    #[test]
    fn scalar_geometric_series() {
        let (sys, cost) = scalar_two_modes();
        let r = value_oracle(&sys, &cost, &vector(&[1.0]), 30, 1e-6).unwrap();
        assert_relative_eq!(r.j_h, 1.0 / (1.0 - 0.36), epsilon = 1e-6);
        assert_eq!(r.worst_sequence.len(), 30);
        assert!(r.worst_sequence[..29].iter().all(|&m| m == 2));
        assert!(r.stabilized);
    }

    #[test]
    fn zero_dynamics() {
        let sys = SwitchedSystem::autonomous(vec![Mat::zeros(2, 2); 3]).unwrap();
        let q = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let cost = QuadCost::new(q, None).unwrap();
        let x = vector(&[1.0, -2.0]);
        for h in 1..5 {
            let r = value_oracle(&sys, &cost, &x, h, 1e-9).unwrap();
            assert_relative_eq!(r.j_h, cost.state_cost(&x), epsilon = 1e-14);
        }
    }

    #[test]
    fn pruned_matches_exhaustive() {
        for seed in 0..6 {
            let sys = random_stable_system(2, 2, seed);
            let cost = QuadCost::identity(2, None);
            let tail = TailBound::auto(&sys, &cost);
            assert!(tail.prunes());
            for k in 0..4 {
                let th = k as f64 * 0.8;
                let x = vector(&[th.cos(), th.sin()]);
                let pruned = value_oracle_with(&sys, &cost, &x, 12, 0.0, &tail, DEFAULT_NODE_LIMIT).unwrap();
                let full = value_oracle_with(&sys, &cost, &x, 12, 0.0, &TailBound::None, DEFAULT_NODE_LIMIT).unwrap();
                assert_relative_eq!(pruned.j_h, full.j_h, max_relative = 1e-12);
                assert!(pruned.nodes_visited <= full.nodes_visited);
                // The reported sequence attains the value.
                let traj = crate::system::simulate(&sys, &cost, &x, &pruned.worst_sequence).unwrap();
                assert_relative_eq!(traj.cumulative_cost, pruned.j_h, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn example2_below_certificate_value() {
        let (sys, cost) = example2_system();
        let x = vector(&[1.0, 0.0]);
        let r = value_oracle_adaptive(&sys, &cost, &x, &TailBound::auto(&sys, &cost), &AdaptiveOptions::default())
            .unwrap();
        assert!(r.stabilized);
        assert!(r.j_h <= 3.32 + 0.02);
    }

    #[test]
    fn node_limit_is_reported() {
        let (sys, cost) = example2_system();
        let err = value_oracle_with(&sys, &cost, &vector(&[1.0, 0.0]), 20, 0.0, &TailBound::None, 1000).unwrap_err();
        assert!(matches!(err, Error::Capacity { .. }));
    }

    #[test]
    fn horizon_schedule() {
        assert_eq!(horizons(40), vec![8, 16, 32, 40]);
        assert_eq!(horizons(12), vec![8, 12]);
        assert_eq!(horizons(100), vec![8, 16, 32, 40, 80, 100]);
    }

    #[test]
    fn csv_layout() {
        let (sys, cost) = scalar_two_modes();
        let r = value_oracle(&sys, &cost, &vector(&[1.0]), 5, 1e-6).unwrap();
        let mut buf = Vec::new();
        write_oracle_csv(
            &mut buf,
            &[OracleRow {
                result: r,
                v: Some(2.0),
                v_over_mu: None,
            }],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x1,H,J_H,stabilized,V,V_over_mu\n"));
        assert_eq!(text.lines().count(), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn monotone_and_even(seed in 0u64..1000, th in 0.0f64..6.3) {
            let sys = random_stable_system(2, 2, seed);
            let cost = QuadCost::identity(2, None);
            let tail = TailBound::auto(&sys, &cost);
            let x = vector(&[th.cos(), th.sin()]);
            let mut prev = 0.0;
            for h in 1..10 {
                let r = value_oracle_with(&sys, &cost, &x, h, 0.0, &tail, DEFAULT_NODE_LIMIT).unwrap();
                prop_assert!(r.j_h >= prev - 1e-12);
                prev = r.j_h;
            }
            let a = value_oracle_with(&sys, &cost, &x, 9, 0.0, &tail, DEFAULT_NODE_LIMIT).unwrap();
            let b = value_oracle_with(&sys, &cost, &(-&x), 9, 0.0, &tail, DEFAULT_NODE_LIMIT).unwrap();
            prop_assert!((a.j_h - b.j_h).abs() <= 1e-12 * (1.0 + a.j_h));
        }
    }
}

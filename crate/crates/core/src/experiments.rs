//! Reproduction drivers for the numerical experiments: the two-mode
//! autonomous example, the random tightness benchmark, and the controlled
//! example, each producing rows ready for CSV output.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{evaluate, solve_upper_bound, Certificate, Objective};
use crate::control::{synthesize, Controller, SynthesisObjective};
use crate::error::{Error, Result};
use crate::graph::{build_debruijn, two_node_cocomplete, DeBruijnSpec, LabeledGraph};
use crate::linalg::{vector, Mat, Vector};
use crate::oracle::{closed_loop_oracle, csv_err, value_oracle_adaptive, AdaptiveOptions, TailBound};
use crate::sdp::SolverOptions;
use crate::system::{controlled_example_system, example2_system, random_stable_system, QuadCost};
use crate::tightness::tightness_max_with;

/// Version tag of every experiment CSV layout.
pub const EXPERIMENT_CSV_SCHEMA: &str = "experiments-v1";

/// Default number of θ samples on `[0, π]`.
pub const DEFAULT_GRID_POINTS: usize = 181;

/// Default Table-1 realizations per configuration.
pub const DEFAULT_REALIZATIONS: usize = 50;

/// Closed-loop horizon for the controlled figure.
pub const FIG4_HORIZON: usize = 12;

/// Printed matrices of the two-mode example (two decimals).
pub const PRINTED_EXAMPLE2_P1: [[f64; 2]; 2] = [[3.32, 0.14], [0.14, 1.14]];
pub const PRINTED_EXAMPLE2_P2: [[f64; 2]; 2] = [[1.14, -0.14], [-0.14, 3.32]];

/// Initial states of the controlled example, as angles.
pub const TABLE2_THETAS: [f64; 2] = [0.5, 2.0];

/// `θ_k = kπ/(points - 1)`.
pub fn theta_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points)
            .map(|k| k as f64 * std::f64::consts::PI / (points - 1) as f64)
            .collect(),
    }
}

pub fn unit(theta: f64) -> Vector {
    vector(&[theta.cos(), theta.sin()])
}

pub fn debruijn(order: usize, num_modes: usize, dual: bool) -> Result<LabeledGraph> {
    build_debruijn(DeBruijnSpec {
        order,
        num_modes,
        dual,
    })
}

/// Writes serializable rows with a header row; column order follows field order.
pub fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Example2Report {
    pub certificate: Certificate,
    /// Largest entrywise deviation from the printed matrices.
    pub max_abs_deviation: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Example2Row {
    pub node: String,
    pub p11: f64,
    pub p12: f64,
    pub p22: f64,
    pub printed_p11: f64,
    pub printed_p12: f64,
    pub printed_p22: f64,
}

impl Example2Report {
    pub fn rows(&self) -> Vec<Example2Row> {
        let printed = [PRINTED_EXAMPLE2_P1, PRINTED_EXAMPLE2_P2];
        self.certificate
            .graph()
            .nodes()
            .iter()
            .zip(self.certificate.p())
            .zip(printed)
            .map(|((node, p), q)| Example2Row {
                node: node.clone(),
                p11: p[(0, 0)],
                p12: p[(0, 1)],
                p22: p[(1, 1)],
                printed_p11: q[0][0],
                printed_p12: q[0][1],
                printed_p22: q[1][1],
            })
            .collect()
    }
}

/// Trace-objective certificate of the two-mode example on the two-node co-complete graph.
pub fn example2(opts: &SolverOptions) -> Result<Example2Report> {
    let start = Instant::now();
    let (sys, cost) = example2_system();
    let cert = solve_upper_bound(&sys, &cost, &two_node_cocomplete(), &Objective::TraceSum, None, opts)?;
    let seconds = start.elapsed().as_secs_f64();
    let printed = [PRINTED_EXAMPLE2_P1, PRINTED_EXAMPLE2_P2];
    let max_abs_deviation = cert
        .p()
        .iter()
        .zip(printed)
        .flat_map(|(p, q)| (0..2).flat_map(move |r| (0..2).map(move |c| (p[(r, c)] - q[r][c]).abs())))
        .fold(0.0, f64::max);
    Ok(Example2Report {
        certificate: cert,
        max_abs_deviation,
        seconds,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Table1Sample {
    pub n: usize,
    pub modes: usize,
    pub realization: usize,
    pub seed: u64,
    pub order: usize,
    pub mu: f64,
    pub generator: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct Table1Cell {
    pub n: usize,
    pub modes: usize,
    pub order: usize,
    pub realizations: usize,
    pub failures: usize,
    pub mean_mu: f64,
    pub min_mu: f64,
    pub max_mu: f64,
    pub generator: &'static str,
}

/// Tag of the random-system distribution written into every Table-1 row.
pub const TABLE1_GENERATOR: &str = "stand-in:gaussian-spectral-norm-0.9";

/// Seed of realization `r` of configuration `(n, M)`.
pub fn realization_seed(base: u64, n: usize, modes: usize, r: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(((n as u64) << 40) ^ ((modes as u64) << 32) ^ r as u64)
}

/// Mean tightness factor of trace-objective certificates on dual De Bruijn
/// graphs over random stable systems.
pub fn table1(
    configs: &[(usize, usize)],
    orders: &[usize],
    realizations: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<(Vec<Table1Cell>, Vec<Table1Sample>)> {
    let jobs: Vec<(usize, usize, usize)> = configs
        .iter()
        .flat_map(|&(n, m)| (0..realizations).map(move |r| (n, m, r)))
        .collect();
    let graphs: Vec<((usize, usize), LabeledGraph)> = configs
        .iter()
        .flat_map(|&(_, m)| orders.iter().map(move |&l| (m, l)))
        .map(|(m, l)| Ok(((m, l), debruijn(l, m, true)?)))
        .collect::<Result<_>>()?;
    let graph = |m: usize, l: usize| &graphs.iter().find(|(k, _)| *k == (m, l)).expect("built above").1;

    let results: Vec<Vec<(usize, std::result::Result<f64, String>)>> = jobs
        .par_iter()
        .map(|&(n, m, r)| {
            let s = realization_seed(seed, n, m, r);
            let sys = random_stable_system(n, m, s);
            let cost = QuadCost::identity(n, None);
            orders
                .iter()
                .map(|&l| {
                    let mu = solve_upper_bound(&sys, &cost, graph(m, l), &Objective::TraceSum, None, opts)
                        .and_then(|cert| tightness_max_with(&cert, &sys, &cost, opts))
                        .map(|t| t.mu)
                        .map_err(|e| e.to_string());
                    (l, mu)
                })
                .collect()
        })
        .collect();

    let mut samples = Vec::new();
    let mut cells = Vec::new();
    for &(n, m) in configs {
        for &l in orders {
            let mut mus = Vec::new();
            let mut failures = 0;
            for ((jn, jm, r), res) in jobs.iter().zip(&results) {
                if (*jn, *jm) != (n, m) {
                    continue;
                }
                for (ol, mu) in res {
                    if *ol != l {
                        continue;
                    }
                    match mu {
                        Ok(mu) => {
                            mus.push(*mu);
                            samples.push(Table1Sample {
                                n,
                                modes: m,
                                realization: *r,
                                seed: realization_seed(seed, n, m, *r),
                                order: l,
                                mu: *mu,
                                generator: TABLE1_GENERATOR,
                            });
                        }
                        Err(e) => {
                            log::warn!("table1 (n={n}, M={m}, r={r}, l={l}) failed: {e}");
                            failures += 1;
                        }
                    }
                }
            }
            let count = mus.len();
            cells.push(Table1Cell {
                n,
                modes: m,
                order: l,
                realizations: count,
                failures,
                mean_mu: if count > 0 { mus.iter().sum::<f64>() / count as f64 } else { f64::NAN },
                min_mu: mus.iter().copied().fold(f64::INFINITY, f64::min),
                max_mu: mus.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                generator: TABLE1_GENERATOR,
            });
        }
    }
    Ok((cells, samples))
}

#[derive(Debug, Clone, Serialize)]
pub struct Table2Row {
    pub order: usize,
    pub theta: f64,
    pub x1: f64,
    pub x2: f64,
    pub surrogate: f64,
    pub pointwise: f64,
}

/// Upper bounds `V^l(x0)` of the controlled example on primal De Bruijn graphs.
pub fn table2(orders: &[usize], opts: &SolverOptions) -> Result<Vec<Table2Row>> {
    let (sys, cost) = controlled_example_system();
    let jobs: Vec<(usize, Option<f64>)> = orders
        .iter()
        .flat_map(|&l| std::iter::once((l, None)).chain(TABLE2_THETAS.iter().map(move |&t| (l, Some(t)))))
        .collect();
    let ctrls: Vec<Controller> = jobs
        .par_iter()
        .map(|&(l, theta)| {
            let g = debruijn(l, 2, false)?;
            let objective = match theta {
                None => SynthesisObjective::SurrogateVolume,
                Some(t) => SynthesisObjective::Pointwise(unit(t)),
            };
            synthesize(&sys, &cost, &g, &objective, opts)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for &l in orders {
        let surrogate = &ctrls[jobs.iter().position(|j| *j == (l, None)).expect("job listed")];
        for &t in &TABLE2_THETAS {
            let x0 = unit(t);
            let pw = &ctrls[jobs.iter().position(|j| *j == (l, Some(t))).expect("job listed")];
            rows.push(Table2Row {
                order: l,
                theta: t,
                x1: x0[0],
                x2: x0[1],
                surrogate: surrogate.value(&x0)?,
                pointwise: pw.value(&x0)?,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundRow {
    pub theta: f64,
    pub order: usize,
    pub upper: f64,
    pub lower: Option<f64>,
    pub mu: Option<f64>,
    pub oracle: f64,
    pub horizon: usize,
    pub stabilized: bool,
}

fn oracle_column(
    sys: &crate::system::SwitchedSystem,
    cost: &QuadCost,
    thetas: &[f64],
) -> Result<Vec<crate::oracle::OracleResult>> {
    let tail = TailBound::auto(sys, cost);
    thetas
        .par_iter()
        .map(|&t| value_oracle_adaptive(sys, cost, &unit(t), &tail, &AdaptiveOptions::default()))
        .collect()
}

/// Two-node certificate bound against the oracle on the θ grid.
pub fn fig2(points: usize, opts: &SolverOptions) -> Result<Vec<BoundRow>> {
    let (sys, cost) = example2_system();
    let cert = solve_upper_bound(&sys, &cost, &two_node_cocomplete(), &Objective::TraceSum, None, opts)?;
    let thetas = theta_grid(points);
    let oracle = oracle_column(&sys, &cost, &thetas)?;
    thetas
        .iter()
        .zip(oracle)
        .map(|(&t, o)| {
            Ok(BoundRow {
                theta: t,
                order: 1,
                upper: evaluate(&cert, &unit(t))?,
                lower: None,
                mu: None,
                oracle: o.j_h,
                horizon: o.horizon,
                stabilized: o.stabilized,
            })
        })
        .collect()
}

/// Upper bounds `V^l`, lower bounds `V^l/μ_l` and the oracle on dual De Bruijn graphs.
pub fn fig3(orders: &[usize], points: usize, opts: &SolverOptions) -> Result<Vec<BoundRow>> {
    let (sys, cost) = example2_system();
    let thetas = theta_grid(points);
    let oracle = oracle_column(&sys, &cost, &thetas)?;
    let mut rows = Vec::new();
    for &l in orders {
        let cert = solve_upper_bound(&sys, &cost, &debruijn(l, 2, true)?, &Objective::TraceSum, None, opts)?;
        let mu = tightness_max_with(&cert, &sys, &cost, opts)?.mu;
        for (&t, o) in thetas.iter().zip(&oracle) {
            let v = evaluate(&cert, &unit(t))?;
            rows.push(BoundRow {
                theta: t,
                order: l,
                upper: v,
                lower: Some(v / mu),
                mu: Some(mu),
                oracle: o.j_h,
                horizon: o.horizon,
                stabilized: o.stabilized,
            });
        }
    }
    Ok(rows)
}

/// Surrogate-objective controller bounds and their worst closed-loop cost over `H = 12` steps.
pub fn fig4(orders: &[usize], points: usize, opts: &SolverOptions) -> Result<Vec<BoundRow>> {
    let (sys, cost) = controlled_example_system();
    let thetas = theta_grid(points);
    let mut rows = Vec::new();
    for &l in orders {
        let ctrl = synthesize(&sys, &cost, &debruijn(l, 2, false)?, &SynthesisObjective::SurrogateVolume, opts)?;
        let oracle: Vec<_> = thetas
            .par_iter()
            .map(|&t| closed_loop_oracle(&ctrl, &sys, &cost, &unit(t), FIG4_HORIZON, 0.0))
            .collect::<Result<_>>()?;
        for (&t, o) in thetas.iter().zip(oracle) {
            rows.push(BoundRow {
                theta: t,
                order: l,
                upper: ctrl.value(&unit(t))?,
                lower: None,
                mu: None,
                oracle: o.j_h,
                horizon: o.horizon,
                stabilized: o.stabilized,
            });
        }
    }
    Ok(rows)
}

/// Parses `"1,2,3"` or `"1..4"` (inclusive).
pub fn parse_orders(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidArgument(format!("cannot parse orders {text:?}"));
    if let Some((a, b)) = text.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

/// Entrywise residual `P_printed - P_solved` as matrices, for reporting.
pub fn printed_example2() -> [Mat; 2] {
    let m = |a: [[f64; 2]; 2]| Mat::from_row_slice(2, 2, &[a[0][0], a[0][1], a[1][0], a[1][1]]);
    [m(PRINTED_EXAMPLE2_P1), m(PRINTED_EXAMPLE2_P2)]
}

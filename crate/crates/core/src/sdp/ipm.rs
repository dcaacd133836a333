//! Dense primal-dual interior-point method for
//! `min bᵀy  s.t.  S_k = C_k + Σ_j y_j F_kj ⪰ 0`,
//! with dual `max -Σ<C_k, Z_k>  s.t.  Σ_k F_k*(Z_k) = b, Z_k ⪰ 0`.
//!
//! HKM search direction, infeasible start, Mehrotra predictor-corrector.
//! One-dimensional constraints are handled as linear rows.

use faer::linalg::solvers::Solve;
use nalgebra::{Cholesky, SymmetricEigen};

use crate::linalg::{symmetrize, Mat};

use super::SolveStatus;

/// Schur systems above this order are factored with faer.
const FAER_THRESHOLD: usize = 48;

#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub dim: usize,
    pub c: Mat,
    /// `(active coordinate, F)`, sorted by coordinate.
    pub terms: Vec<(usize, Mat)>,
}

#[derive(Debug, Clone)]
pub(crate) struct Row {
    pub c: f64,
    pub a: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub(crate) struct Scaled {
    pub blocks: Vec<Block>,
    pub rows: Vec<Row>,
    pub b: Vec<f64>,
    pub n: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct IpmSettings {
    /// Absolute primal residual target, per block in that block's units.
    pub primal_tol: Vec<f64>,
    pub primal_tol_rows: Vec<f64>,
    pub dual_tol: f64,
    pub gap_tol: f64,
    pub max_iters: usize,
}

impl IpmSettings {
    fn primal_ok(&self, rp_blocks: &[f64], rp_rows: &[f64]) -> bool {
        rp_blocks.iter().zip(&self.primal_tol).all(|(r, t)| r <= t)
            && rp_rows.iter().zip(&self.primal_tol_rows).all(|(r, t)| r <= t)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct IpmOutcome {
    pub status: SolveStatus,
    pub y: Vec<f64>,
    pub z_blocks: Vec<Mat>,
    pub z_rows: Vec<f64>,
    pub iterations: usize,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub relative_gap: f64,
    pub message: String,
}

enum Factor {
    Small(Cholesky<f64, nalgebra::Dyn>),
    Large(faer::linalg::solvers::Llt<f64>),
}

impl Factor {
    fn new(h: &Mat) -> Option<Self> {
        let n = h.nrows();
        if n <= FAER_THRESHOLD {
            Cholesky::new(h.clone()).map(Factor::Small)
        } else {
            let f = faer::Mat::<f64>::from_fn(n, n, |i, j| h[(i, j)]);
            f.llt(faer::Side::Lower).ok().map(Factor::Large)
        }
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match self {
            Factor::Small(c) => c.solve(&nalgebra::DVector::from_column_slice(rhs)).iter().copied().collect(),
            Factor::Large(l) => {
                let r = faer::Mat::<f64>::from_fn(rhs.len(), 1, |i, _| rhs[i]);
                let x = l.solve(&r);
                (0..rhs.len()).map(|i| x[(i, 0)]).collect()
            }
        }
    }
}

fn factor_regularized(h: &mut Mat) -> Option<Factor> {
    if let Some(f) = Factor::new(h) {
        return Some(f);
    }
    let scale = 1.0 + (0..h.nrows()).map(|i| h[(i, i)].abs()).fold(0.0, f64::max);
    let mut delta = 1e-14 * scale;
    let mut added = 0.0;
    while delta < 1e-5 * scale {
        for i in 0..h.nrows() {
            h[(i, i)] += delta - added;
        }
        added = delta;
        if let Some(f) = Factor::new(h) {
            return Some(f);
        }
        delta *= 100.0;
    }
    None
}

fn frob_dot(a: &Mat, b: &Mat) -> f64 {
    a.dot(b)
}

fn eval_block(block: &Block, y: &[f64]) -> Mat {
    let mut m = block.c.clone();
    for (j, f) in &block.terms {
        if y[*j] != 0.0 {
            m += f * y[*j];
        }
    }
    m
}

fn eval_linear_block(block: &Block, y: &[f64]) -> Mat {
    let mut m = Mat::zeros(block.dim, block.dim);
    for (j, f) in &block.terms {
        if y[*j] != 0.0 {
            m += f * y[*j];
        }
    }
    m
}

fn eval_row(row: &Row, y: &[f64]) -> f64 {
    row.c + row.a.iter().map(|&(j, v)| v * y[j]).sum::<f64>()
}

fn eval_linear_row(row: &Row, y: &[f64]) -> f64 {
    row.a.iter().map(|&(j, v)| v * y[j]).sum()
}

/// Largest step `α` such that `X + αΔX ⪰ 0`, given the Cholesky factor `L` of `X`.
fn max_step(l_inv: &Mat, dx: &Mat) -> f64 {
    let m = symmetrize(&(l_inv * dx * l_inv.transpose()));
    let lmin = SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if lmin < 0.0 {
        -1.0 / lmin
    } else {
        f64::INFINITY
    }
}

fn row_step(x: f64, dx: f64) -> f64 {
    if dx < 0.0 {
        -x / dx
    } else {
        f64::INFINITY
    }
}

fn lower_inverse(x: &Mat) -> Option<Mat> {
    let chol = Cholesky::new(x.clone())?;
    let l = chol.l();
    l.solve_lower_triangular(&Mat::identity(x.nrows(), x.nrows()))
}

struct State {
    y: Vec<f64>,
    s: Vec<Mat>,
    z: Vec<Mat>,
    sr: Vec<f64>,
    zr: Vec<f64>,
}

struct Direction {
    dy: Vec<f64>,
    ds: Vec<Mat>,
    dz: Vec<Mat>,
    dsr: Vec<f64>,
    dzr: Vec<f64>,
}

fn initial_state(p: &Scaled) -> State {
    let bmax = p.b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut s = Vec::with_capacity(p.blocks.len());
    let mut z = Vec::with_capacity(p.blocks.len());
    for blk in &p.blocks {
        let d = blk.dim as f64;
        let fmax = blk.terms.iter().map(|(_, f)| f.norm()).fold(0.0, f64::max);
        let fmin = blk
            .terms
            .iter()
            .map(|(_, f)| f.norm())
            .fold(f64::INFINITY, f64::min)
            .min(fmax.max(1.0));
        let zeta = 10f64.max(d.sqrt()).max(d * (1.0 + bmax) / (1.0 + fmin));
        let xi = 10f64.max(d.sqrt()).max(blk.c.norm()).max(fmax);
        s.push(Mat::identity(blk.dim, blk.dim) * xi);
        z.push(Mat::identity(blk.dim, blk.dim) * zeta);
    }
    let mut sr = Vec::with_capacity(p.rows.len());
    let mut zr = Vec::with_capacity(p.rows.len());
    for row in &p.rows {
        let amax = row.a.iter().fold(0.0f64, |m, &(_, v)| m.max(v.abs()));
        let amin = row.a.iter().fold(f64::INFINITY, |m, &(_, v)| m.min(v.abs())).min(amax.max(1.0));
        zr.push(10f64.max((1.0 + bmax) / (1.0 + amin)));
        sr.push(10f64.max(row.c.abs()).max(amax));
    }
    State {
        y: vec![0.0; p.n],
        s,
        z,
        sr,
        zr,
    }
}

pub(crate) fn solve(p: &Scaled, settings: &IpmSettings) -> IpmOutcome {
    let n = p.n;
    let nu = p.blocks.iter().map(|b| b.dim).sum::<usize>() + p.rows.len();
    let nu = nu.max(1) as f64;
    let mut st = initial_state(p);
    let b_norm = p.b.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut last = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut stalls = 0usize;

    for iter in 0..=settings.max_iters {
        // Residuals.
        let rp: Vec<Mat> = p
            .blocks
            .iter()
            .zip(&st.s)
            .map(|(blk, s)| eval_block(blk, &st.y) - s)
            .collect();
        let rpr: Vec<f64> = p.rows.iter().zip(&st.sr).map(|(row, s)| eval_row(row, &st.y) - s).collect();
        let mut fz = vec![0.0; n];
        for (blk, z) in p.blocks.iter().zip(&st.z) {
            for (j, f) in &blk.terms {
                fz[*j] += frob_dot(f, z);
            }
        }
        for (row, z) in p.rows.iter().zip(&st.zr) {
            for &(j, v) in &row.a {
                fz[j] += v * z;
            }
        }
        let rd: Vec<f64> = p.b.iter().zip(&fz).map(|(b, f)| b - f).collect();

        let comp: f64 = st.s.iter().zip(&st.z).map(|(s, z)| frob_dot(s, z)).sum::<f64>()
            + st.sr.iter().zip(&st.zr).map(|(s, z)| s * z).sum::<f64>();
        let mu = comp / nu;
        let pobj: f64 = p.b.iter().zip(&st.y).map(|(b, y)| b * y).sum();
        let cz: f64 = p.blocks.iter().zip(&st.z).map(|(blk, z)| frob_dot(&blk.c, z)).sum::<f64>()
            + p.rows.iter().zip(&st.zr).map(|(row, z)| row.c * z).sum::<f64>();
        let dobj = -cz;

        let rp_norms: Vec<f64> = rp.iter().map(|r| r.norm()).collect();
        let rpr_norms: Vec<f64> = rpr.iter().map(|r| r.abs()).collect();
        let pinf = rp_norms.iter().chain(&rpr_norms).fold(0.0f64, |m, &v| m.max(v));
        let dinf = rd.iter().map(|v| v * v).sum::<f64>().sqrt() / (1.0 + b_norm);
        let denom = 1.0 + pobj.abs() + dobj.abs();
        let relgap = ((pobj - dobj).abs().max(comp.abs())) / denom;

        let outcome = |status: SolveStatus, st: &State, message: String| IpmOutcome {
            status,
            y: st.y.clone(),
            z_blocks: st.z.clone(),
            z_rows: st.zr.clone(),
            iterations: iter,
            primal_infeasibility: pinf,
            dual_infeasibility: dinf,
            relative_gap: relgap,
            message,
        };

        if settings.primal_ok(&rp_norms, &rpr_norms) && dinf <= settings.dual_tol && relgap <= settings.gap_tol {
            return outcome(SolveStatus::Optimal, &st, "converged".into());
        }

        // Farkas certificate for primal infeasibility: Z ⪰ 0, F*(Z) ≈ 0, <C,Z> < 0.
        if cz < 0.0 {
            let fz_norm = fz.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if fz_norm / -cz < 1e-9 && -cz > 1e3 {
                return outcome(
                    SolveStatus::Infeasible,
                    &st,
                    format!("dual ray found: |F*(Z)|/|<C,Z>| = {:.2e}", fz_norm / -cz),
                );
            }
        }
        // Primal ray: F(y) ⪰ 0 with bᵀy → -∞.
        if pobj < -1e8 {
            let worst = p
                .blocks
                .iter()
                .map(|blk| {
                    SymmetricEigen::new(symmetrize(&eval_linear_block(blk, &st.y)))
                        .eigenvalues
                        .iter()
                        .copied()
                        .fold(f64::INFINITY, f64::min)
                })
                .chain(p.rows.iter().map(|row| eval_linear_row(row, &st.y)))
                .fold(f64::INFINITY, f64::min);
            if worst / -pobj > -1e-9 {
                return outcome(SolveStatus::Unbounded, &st, "primal ray found".into());
            }
        }

        if iter == settings.max_iters {
            return outcome(SolveStatus::NumericalFailure, &st, "iteration limit reached".into());
        }

        // Stall detection on the merit triple.
        let merit = (pinf, dinf, relgap);
        let improved = merit.0 < 0.9 * last.0 || merit.1 < 0.9 * last.1 || merit.2 < 0.9 * last.2;
        stalls = if improved { 0 } else { stalls + 1 };
        last = (last.0.min(merit.0), last.1.min(merit.1), last.2.min(merit.2));
        if stalls >= 12 {
            return outcome(SolveStatus::NumericalFailure, &st, "no progress".into());
        }

        // Schur complement.
        let mut sinv = Vec::with_capacity(p.blocks.len());
        let mut s_linv = Vec::with_capacity(p.blocks.len());
        let mut z_linv = Vec::with_capacity(p.blocks.len());
        for (s, z) in st.s.iter().zip(&st.z) {
            let (Some(ls), Some(lz)) = (lower_inverse(s), lower_inverse(z)) else {
                return outcome(SolveStatus::NumericalFailure, &st, "iterate lost definiteness".into());
            };
            sinv.push(symmetrize(&(ls.transpose() * &ls)));
            s_linv.push(ls);
            z_linv.push(lz);
        }

        let mut h = Mat::zeros(n, n);
        for ((blk, si), z) in p.blocks.iter().zip(&sinv).zip(&st.z) {
            let g: Vec<Mat> = blk.terms.iter().map(|(_, f)| si * f * z).collect();
            for (q, (cq, _)) in blk.terms.iter().enumerate() {
                for (cp, fp) in blk.terms.iter().skip(q) {
                    let v = frob_dot(fp, &g[q]);
                    let (r, c) = if cp >= cq { (*cp, *cq) } else { (*cq, *cp) };
                    h[(r, c)] += v;
                }
            }
        }
        for ((row, s), z) in p.rows.iter().zip(&st.sr).zip(&st.zr) {
            let w = z / s;
            for (q, &(cq, vq)) in row.a.iter().enumerate() {
                for &(cp, vp) in &row.a[q..] {
                    let (r, c) = if cp >= cq { (cp, cq) } else { (cq, cp) };
                    h[(r, c)] += w * vp * vq;
                }
            }
        }
        for r in 0..n {
            for c in 0..r {
                h[(c, r)] = h[(r, c)];
            }
        }
        let Some(factor) = factor_regularized(&mut h) else {
            return outcome(SolveStatus::NumericalFailure, &st, "Schur complement is singular".into());
        };

        let direction = |sigma_mu: f64, corr: Option<(&[Mat], &[f64])>| -> Direction {
            let mut rhs: Vec<f64> = rd.iter().map(|v| -v).collect();
            let mut mats = Vec::with_capacity(p.blocks.len());
            for (k, blk) in p.blocks.iter().enumerate() {
                let si = &sinv[k];
                let z = &st.z[k];
                let mut w = si * sigma_mu - z - si * &rp[k] * z;
                if let Some((cb, _)) = corr {
                    w -= si * &cb[k];
                }
                for (j, f) in &blk.terms {
                    rhs[*j] += frob_dot(f, &w);
                }
                mats.push(w);
            }
            for (r, row) in p.rows.iter().enumerate() {
                let (s, z) = (st.sr[r], st.zr[r]);
                let mut w = sigma_mu / s - z - rpr[r] * z / s;
                if let Some((_, cr)) = corr {
                    w -= cr[r] / s;
                }
                for &(j, v) in &row.a {
                    rhs[j] += v * w;
                }
            }
            let dy = factor.solve(&rhs);
            let mut ds = Vec::with_capacity(p.blocks.len());
            let mut dz = Vec::with_capacity(p.blocks.len());
            for (k, blk) in p.blocks.iter().enumerate() {
                let dsk = eval_linear_block(blk, &dy) + &rp[k];
                let si = &sinv[k];
                let mut inner = &dsk * &st.z[k];
                if let Some((cb, _)) = corr {
                    inner += &cb[k];
                }
                let dzk = symmetrize(&(si * sigma_mu - &st.z[k] - si * inner));
                ds.push(dsk);
                dz.push(dzk);
            }
            let mut dsr = Vec::with_capacity(p.rows.len());
            let mut dzr = Vec::with_capacity(p.rows.len());
            for (r, row) in p.rows.iter().enumerate() {
                let (s, z) = (st.sr[r], st.zr[r]);
                let d_s = eval_linear_row(row, &dy) + rpr[r];
                let mut inner = d_s * z;
                if let Some((_, cr)) = corr {
                    inner += cr[r];
                }
                dsr.push(d_s);
                dzr.push(sigma_mu / s - z - inner / s);
            }
            Direction { dy, ds, dz, dsr, dzr }
        };

        let steps = |d: &Direction| -> (f64, f64) {
            let mut ap = f64::INFINITY;
            let mut ad = f64::INFINITY;
            for k in 0..p.blocks.len() {
                ap = ap.min(max_step(&s_linv[k], &d.ds[k]));
                ad = ad.min(max_step(&z_linv[k], &d.dz[k]));
            }
            for r in 0..p.rows.len() {
                ap = ap.min(row_step(st.sr[r], d.dsr[r]));
                ad = ad.min(row_step(st.zr[r], d.dzr[r]));
            }
            (ap, ad)
        };

        // Predictor.
        let aff = direction(0.0, None);
        let (ap_max, ad_max) = steps(&aff);
        let (ap, ad) = (ap_max.min(1.0), ad_max.min(1.0));
        let mut comp_aff = 0.0;
        for k in 0..p.blocks.len() {
            comp_aff += frob_dot(&(&st.s[k] + &aff.ds[k] * ap), &(&st.z[k] + &aff.dz[k] * ad));
        }
        for r in 0..p.rows.len() {
            comp_aff += (st.sr[r] + ap * aff.dsr[r]) * (st.zr[r] + ad * aff.dzr[r]);
        }
        let mu_aff = (comp_aff / nu).max(0.0);
        let expon = if ap.min(ad) > 0.1 { 3.0 } else { 2.0 };
        let sigma = (mu_aff / mu).powf(expon).clamp(0.0, 1.0);

        // Corrector.
        let corr_b: Vec<Mat> = aff.ds.iter().zip(&aff.dz).map(|(ds, dz)| ds * dz).collect();
        let corr_r: Vec<f64> = aff.dsr.iter().zip(&aff.dzr).map(|(a, b)| a * b).collect();
        let dir = direction(sigma * mu, Some((&corr_b, &corr_r)));
        let (ap_max, ad_max) = steps(&dir);
        let gamma = 0.9 + 0.09 * ap.min(ad);
        let ap = (gamma * ap_max).min(1.0);
        let ad = (gamma * ad_max).min(1.0);
        if ap < 1e-12 && ad < 1e-12 {
            return outcome(SolveStatus::NumericalFailure, &st, "step length vanished".into());
        }

        for (y, d) in st.y.iter_mut().zip(&dir.dy) {
            *y += ap * d;
        }
        for k in 0..p.blocks.len() {
            st.s[k] = symmetrize(&(&st.s[k] + &dir.ds[k] * ap));
            st.z[k] = symmetrize(&(&st.z[k] + &dir.dz[k] * ad));
        }
        for r in 0..p.rows.len() {
            st.sr[r] += ap * dir.dsr[r];
            st.zr[r] += ad * dir.dzr[r];
        }
    }
    unreachable!("loop returns at the iteration limit")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(blocks: usize, rows: usize) -> IpmSettings {
        IpmSettings {
            primal_tol: vec![1e-9; blocks],
            primal_tol_rows: vec![1e-9; rows],
            dual_tol: 1e-9,
            gap_tol: 1e-9,
            max_iters: 100,
        }
    }

    #[test]
    fn scalar_lp() {
        // min y s.t. y - 2 ≥ 0
        let p = Scaled {
            blocks: vec![],
            rows: vec![Row {
                c: -2.0,
                a: vec![(0, 1.0)],
            }],
            b: vec![1.0],
            n: 1,
        };
        let out = solve(&p, &settings(0, 1));
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!((out.y[0] - 2.0).abs() < 1e-7);
        assert!((out.z_rows[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn max_eigenvalue_sdp() {
        // min t s.t. tI - A ⪰ 0 → λ_max(A)
        let a = Mat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 0.0]);
        let p = Scaled {
            blocks: vec![Block {
                dim: 2,
                c: -a.clone(),
                terms: vec![(0, Mat::identity(2, 2))],
            }],
            rows: vec![],
            b: vec![1.0],
            n: 1,
        };
        let out = solve(&p, &settings(1, 0));
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!((out.y[0] - (1.0 + 2f64.sqrt())).abs() < 1e-7);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        // y - 1 ≥ 0 and -y ≥ 0
        let p = Scaled {
            blocks: vec![],
            rows: vec![
                Row {
                    c: -1.0,
                    a: vec![(0, 1.0)],
                },
                Row {
                    c: 0.0,
                    a: vec![(0, -1.0)],
                },
            ],
            b: vec![0.0],
            n: 1,
        };
        let out = solve(&p, &settings(0, 2));
        assert_ne!(out.status, SolveStatus::Optimal);
    }
}

//! LMI modeling layer: matrix and scalar variables, affine symmetric
//! expressions, linear objectives.
//!
//! All variables are flattened into one coordinate vector `y`. A symmetric
//! `d×d` variable owns `d(d+1)/2` coordinates (`X_ab = X_ba = y_k`), a dense
//! `r×c` variable owns `r·c`, a scalar owns one.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, to_rows, Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarKind {
    Symmetric { dim: usize },
    Dense { rows: usize, cols: usize },
    Scalar { lower: Option<f64> },
}

impl VarKind {
    fn len(&self) -> usize {
        match *self {
            VarKind::Symmetric { dim } => dim * (dim + 1) / 2,
            VarKind::Dense { rows, cols } => rows * cols,
            VarKind::Scalar { .. } => 1,
        }
    }

    fn shape(&self) -> (usize, usize) {
        match *self {
            VarKind::Symmetric { dim } => (dim, dim),
            VarKind::Dense { rows, cols } => (rows, cols),
            VarKind::Scalar { .. } => (1, 1),
        }
    }
}

/// Reference to a declared variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarHandle {
    pub id: usize,
    pub offset: usize,
    pub kind: VarKind,
}

impl VarHandle {
    pub fn shape(&self) -> (usize, usize) {
        self.kind.shape()
    }

    /// `(coordinate, basis matrix entries)` pairs; each basis matrix is listed
    /// as its nonzero `(row, col)` positions with unit value.
    fn basis(&self) -> Vec<(usize, Vec<(usize, usize)>)> {
        match self.kind {
            VarKind::Symmetric { dim } => {
                let mut out = Vec::with_capacity(self.kind.len());
                let mut k = self.offset;
                for a in 0..dim {
                    for b in a..dim {
                        if a == b {
                            out.push((k, vec![(a, a)]));
                        } else {
                            out.push((k, vec![(a, b), (b, a)]));
                        }
                        k += 1;
                    }
                }
                out
            }
            VarKind::Dense { rows, cols } => (0..rows)
                .flat_map(|a| (0..cols).map(move |b| (a, b)))
                .enumerate()
                .map(|(k, (a, b))| (self.offset + k, vec![(a, b)]))
                .collect(),
            VarKind::Scalar { .. } => vec![(self.offset, vec![(0, 0)])],
        }
    }

    /// Builds this variable's value from the coordinate vector.
    pub fn value(&self, y: &[f64]) -> Mat {
        let (r, c) = self.shape();
        let mut m = Mat::zeros(r, c);
        for (k, entries) in self.basis() {
            for (a, b) in entries {
                m[(a, b)] = y[k];
            }
        }
        m
    }

    /// Coordinates representing `value` (symmetric part for symmetric variables).
    pub fn coordinates(&self, value: &Mat) -> Vec<(usize, f64)> {
        let v = match self.kind {
            VarKind::Symmetric { .. } => symmetrize(value),
            _ => value.clone(),
        };
        self.basis()
            .into_iter()
            .map(|(k, entries)| (k, v[entries[0]]))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VarBlock {
    pub name: String,
    pub kind: VarKind,
    pub offset: usize,
}

/// Linear functional `constant + Σ_k coeff_k · y_k`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearExpr {
    pub coeffs: BTreeMap<usize, f64>,
    pub constant: f64,
}

impl LinearExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            coeffs: BTreeMap::new(),
            constant: c,
        }
    }

    pub fn add_coord(&mut self, k: usize, c: f64) -> &mut Self {
        if c != 0.0 {
            *self.coeffs.entry(k).or_insert(0.0) += c;
        }
        self
    }

    /// Adds `scale · <W, X>` for a matrix variable `X` (or `scale·W_00·s` for a scalar).
    pub fn add_inner(&mut self, var: &VarHandle, w: &Mat, scale: f64) -> &mut Self {
        for (k, entries) in var.basis() {
            let c: f64 = entries.iter().map(|&(a, b)| w[(a, b)]).sum();
            self.add_coord(k, scale * c);
        }
        self
    }

    pub fn add_trace(&mut self, var: &VarHandle, scale: f64) -> &mut Self {
        let (r, _) = var.shape();
        self.add_inner(var, &Mat::identity(r, r), scale)
    }

    /// Adds `scale · xᵀXx`.
    pub fn add_quad(&mut self, var: &VarHandle, x: &Vector, scale: f64) -> &mut Self {
        self.add_inner(var, &(x * x.transpose()), scale)
    }

    pub fn add_scalar(&mut self, var: &VarHandle, scale: f64) -> &mut Self {
        self.add_coord(var.offset, scale)
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().map(|(&k, &c)| c * y[k]).sum::<f64>()
    }
}

/// Affine symmetric matrix expression `C + Σ_k y_k F_k` of fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpr {
    dim: usize,
    constant: Mat,
    coeffs: BTreeMap<usize, Mat>,
}

impl AffineExpr {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            constant: Mat::zeros(dim, dim),
            coeffs: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constant_part(&self) -> &Mat {
        &self.constant
    }

    pub fn terms(&self) -> impl Iterator<Item = (usize, &Mat)> {
        self.coeffs.iter().map(|(&k, m)| (k, m))
    }

    fn place(target: &mut Mat, r0: usize, c0: usize, block: &Mat) {
        let (p, q) = block.shape();
        if r0 == c0 {
            let s = symmetrize(block);
            let mut view = target.view_mut((r0, c0), (p, q));
            view += &s;
        } else {
            {
                let mut view = target.view_mut((r0, c0), (p, q));
                view += block;
            }
            let mut view = target.view_mut((c0, r0), (q, p));
            view += block.transpose();
        }
    }

    fn check_block(&self, r0: usize, c0: usize, p: usize, q: usize) {
        assert!(
            r0 + p <= self.dim && c0 + q <= self.dim,
            "block ({r0},{c0}) of size {p}x{q} exceeds dimension {}",
            self.dim
        );
        assert!(
            r0 == c0 && p == q || r0 + p <= c0 || c0 + q <= r0,
            "off-diagonal block overlaps its mirror"
        );
    }

    /// Adds `M` at block `(r0, c0)` and `Mᵀ` at `(c0, r0)`; a diagonal block is symmetrized.
    pub fn add_constant_block(&mut self, r0: usize, c0: usize, m: &Mat) -> &mut Self {
        self.check_block(r0, c0, m.nrows(), m.ncols());
        Self::place(&mut self.constant, r0, c0, m);
        self
    }

    /// Adds `scale · L X R` at block `(r0, c0)` with its mirrored transpose.
    pub fn add_var_block(
        &mut self,
        r0: usize,
        c0: usize,
        var: &VarHandle,
        l: &Mat,
        r: &Mat,
        scale: f64,
    ) -> &mut Self {
        let (vr, vc) = var.shape();
        assert_eq!(l.ncols(), vr, "left factor does not match variable rows");
        assert_eq!(r.nrows(), vc, "right factor does not match variable cols");
        let (p, q) = (l.nrows(), r.ncols());
        self.check_block(r0, c0, p, q);
        for (k, entries) in var.basis() {
            let mut block = Mat::zeros(p, q);
            for (a, b) in entries {
                // L e_a e_bᵀ R = L[:, a] R[b, :]
                block += l.column(a) * r.row(b);
            }
            block *= scale;
            if block.iter().all(|&v| v == 0.0) {
                continue;
            }
            let dim = self.dim;
            let target = self.coeffs.entry(k).or_insert_with(|| Mat::zeros(dim, dim));
            Self::place(target, r0, c0, &block);
        }
        self
    }

    /// Adds `scale · X` at block `(r0, c0)`.
    pub fn add_var(&mut self, r0: usize, c0: usize, var: &VarHandle, scale: f64) -> &mut Self {
        let (vr, vc) = var.shape();
        self.add_var_block(r0, c0, var, &Mat::identity(vr, vr), &Mat::identity(vc, vc), scale)
    }

    /// Adds `scale · Aᵀ X A` at diagonal block `(r0, r0)`.
    pub fn add_congruence(&mut self, r0: usize, var: &VarHandle, a: &Mat, scale: f64) -> &mut Self {
        self.add_var_block(r0, r0, var, &a.transpose(), a, scale)
    }

    /// Adds `s · M` at block `(r0, c0)` for a scalar variable `s`.
    pub fn add_scalar_block(&mut self, r0: usize, c0: usize, var: &VarHandle, m: &Mat) -> &mut Self {
        assert!(matches!(var.kind, VarKind::Scalar { .. }), "expected a scalar variable");
        self.check_block(r0, c0, m.nrows(), m.ncols());
        let dim = self.dim;
        let target = self.coeffs.entry(var.offset).or_insert_with(|| Mat::zeros(dim, dim));
        Self::place(target, r0, c0, m);
        self
    }

    pub fn eval(&self, y: &[f64]) -> Mat {
        let mut m = self.constant.clone();
        for (&k, f) in &self.coeffs {
            if y[k] != 0.0 {
                m += f * y[k];
            }
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub name: String,
    pub expr: AffineExpr,
}

/// Minimize or maximize a linear objective subject to `expr ⪰ 0` constraints.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    vars: Vec<VarBlock>,
    num_coords: usize,
    constraints: Vec<Constraint>,
    objective: LinearExpr,
    sense: Sense,
}

impl Default for SdpProblem {
    fn default() -> Self {
        Self::new()
    }
}

impl SdpProblem {
    pub fn new() -> Self {
        Self {
            vars: Vec::new(),
            num_coords: 0,
            constraints: Vec::new(),
            objective: LinearExpr::new(),
            sense: Sense::Minimize,
        }
    }

    fn declare(&mut self, name: impl Into<String>, kind: VarKind) -> VarHandle {
        let handle = VarHandle {
            id: self.vars.len(),
            offset: self.num_coords,
            kind,
        };
        self.vars.push(VarBlock {
            name: name.into(),
            kind,
            offset: self.num_coords,
        });
        self.num_coords += kind.len();
        handle
    }

    pub fn symmetric_var(&mut self, name: impl Into<String>, dim: usize) -> VarHandle {
        self.declare(name, VarKind::Symmetric { dim })
    }

    pub fn dense_var(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> VarHandle {
        self.declare(name, VarKind::Dense { rows, cols })
    }

    pub fn scalar_var(&mut self, name: impl Into<String>, lower: Option<f64>) -> VarHandle {
        self.declare(name, VarKind::Scalar { lower })
    }

    /// Requires `expr ⪰ 0`. Referenced coordinates must belong to declared variables.
    pub fn add_psd(&mut self, name: impl Into<String>, expr: AffineExpr) -> Result<usize> {
        if let Some((&k, _)) = expr.coeffs.iter().next_back() {
            if k >= self.num_coords {
                return Err(Error::InvalidArgument(format!(
                    "constraint references undeclared coordinate {k}"
                )));
            }
        }
        self.constraints.push(Constraint {
            name: name.into(),
            expr,
        });
        Ok(self.constraints.len() - 1)
    }

    /// Requires `lin ≥ 0`.
    pub fn add_linear_ge(&mut self, name: impl Into<String>, lin: &LinearExpr) -> Result<usize> {
        let mut expr = AffineExpr::new(1);
        expr.constant[(0, 0)] = lin.constant;
        for (&k, &c) in &lin.coeffs {
            expr.coeffs.insert(k, Mat::from_element(1, 1, c));
        }
        self.add_psd(name, expr)
    }

    pub fn set_objective(&mut self, sense: Sense, objective: LinearExpr) {
        self.sense = sense;
        self.objective = objective;
    }

    pub fn vars(&self) -> &[VarBlock] {
        &self.vars
    }

    pub fn handle(&self, id: usize) -> VarHandle {
        let v = &self.vars[id];
        VarHandle {
            id,
            offset: v.offset,
            kind: v.kind,
        }
    }

    pub fn num_coords(&self) -> usize {
        self.num_coords
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &LinearExpr {
        &self.objective
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    /// `(coordinate, lower bound)` for bounded scalar variables.
    pub fn lower_bounds(&self) -> Vec<(usize, f64)> {
        self.vars
            .iter()
            .filter_map(|v| match v.kind {
                VarKind::Scalar { lower: Some(lb) } => Some((v.offset, lb)),
                _ => None,
            })
            .collect()
    }

    /// Documented JSON form for cross-solver diffing.
    pub fn to_debug_json(&self) -> String {
        #[derive(Serialize)]
        struct Term {
            coord: usize,
            matrix: Vec<Vec<f64>>,
        }
        #[derive(Serialize)]
        struct Con<'a> {
            name: &'a str,
            dim: usize,
            constant: Vec<Vec<f64>>,
            terms: Vec<Term>,
        }
        #[derive(Serialize)]
        struct Dump<'a> {
            num_coords: usize,
            variables: &'a [VarBlock],
            constraints: Vec<Con<'a>>,
            objective_sense: Sense,
            objective_constant: f64,
            objective: Vec<(usize, f64)>,
        }
        let dump = Dump {
            num_coords: self.num_coords,
            variables: &self.vars,
            constraints: self
                .constraints
                .iter()
                .map(|c| Con {
                    name: &c.name,
                    dim: c.expr.dim,
                    constant: to_rows(&c.expr.constant),
                    terms: c
                        .expr
                        .terms()
                        .map(|(coord, m)| Term {
                            coord,
                            matrix: to_rows(m),
                        })
                        .collect(),
                })
                .collect(),
            objective_sense: self.sense,
            objective_constant: self.objective.constant,
            objective: self.objective.coeffs.iter().map(|(&k, &c)| (k, c)).collect(),
        };
        serde_json::to_string_pretty(&dump).expect("problem serialization cannot fail")
    }
}

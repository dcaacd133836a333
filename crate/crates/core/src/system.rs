//! Switched linear systems `x⁺ = A_σ x (+ B_σ u)` with quadratic stage costs.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    asymmetry, definiteness_threshold, from_rows, min_eigenvalue, quad_form, spectral_norm, symmetrize,
    to_rows, Mat, Vector,
};

/// Default common spectral-norm bound of [`random_stable_system`].
pub const DEFAULT_GAMMA: f64 = 0.9;

/// Asymmetry above which loading a cost matrix logs a warning.
pub const SYMMETRY_WARN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedSystem {
    a: Vec<Mat>,
    b: Option<Vec<Mat>>,
}

impl SwitchedSystem {
    pub fn new(a: Vec<Mat>, b: Option<Vec<Mat>>) -> Result<Self> {
        let first = a
            .first()
            .ok_or_else(|| Error::InvalidSystem("at least one mode is required".into()))?;
        let n = first.nrows();
        if n == 0 {
            return Err(Error::InvalidSystem("state dimension must be positive".into()));
        }
        for (i, ai) in a.iter().enumerate() {
            if ai.nrows() != n || ai.ncols() != n {
                return Err(Error::Dimension(format!(
                    "A_{} is {}x{}, expected {n}x{n}",
                    i + 1,
                    ai.nrows(),
                    ai.ncols()
                )));
            }
        }
        if let Some(b) = &b {
            if b.len() != a.len() {
                return Err(Error::Dimension(format!(
                    "{} input matrices for {} modes",
                    b.len(),
                    a.len()
                )));
            }
            let m = b[0].ncols();
            if m == 0 {
                return Err(Error::Dimension("input dimension must be positive".into()));
            }
            for (i, bi) in b.iter().enumerate() {
                if bi.nrows() != n || bi.ncols() != m {
                    return Err(Error::Dimension(format!(
                        "B_{} is {}x{}, expected {n}x{m}",
                        i + 1,
                        bi.nrows(),
                        bi.ncols()
                    )));
                }
            }
        }
        Ok(Self { a, b })
    }

    pub fn autonomous(a: Vec<Mat>) -> Result<Self> {
        Self::new(a, None)
    }

    pub fn state_dim(&self) -> usize {
        self.a[0].nrows()
    }

    /// Input dimension, 0 for autonomous systems.
    pub fn input_dim(&self) -> usize {
        self.b.as_ref().map_or(0, |b| b[0].ncols())
    }

    pub fn num_modes(&self) -> usize {
        self.a.len()
    }

    pub fn is_autonomous(&self) -> bool {
        self.b.is_none()
    }

    /// `A_mode` for a 1-based mode.
    pub fn a(&self, mode: usize) -> &Mat {
        &self.a[mode - 1]
    }

    pub fn a_all(&self) -> &[Mat] {
        &self.a
    }

    pub fn b(&self, mode: usize) -> Option<&Mat> {
        self.b.as_ref().map(|b| &b[mode - 1])
    }

    pub fn b_all(&self) -> Option<&[Mat]> {
        self.b.as_deref()
    }

    pub fn check_mode(&self, mode: usize) -> Result<()> {
        if mode == 0 || mode > self.num_modes() {
            Err(Error::UnknownMode {
                mode,
                num_modes: self.num_modes(),
            })
        } else {
            Ok(())
        }
    }

    pub fn require_autonomous(&self) -> Result<()> {
        if self.is_autonomous() {
            Ok(())
        } else {
            Err(Error::InvalidSystem("expected an autonomous system (no B matrices)".into()))
        }
    }

    /// Copy without input matrices.
    pub fn without_inputs(&self) -> Self {
        Self {
            a: self.a.clone(),
            b: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadCost {
    q: Mat,
    r: Option<Mat>,
}

fn checked_spd(m: &Mat, what: &str) -> Result<Mat> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Dimension(format!("{what} must be square and nonempty")));
    }
    let asym = asymmetry(m);
    if asym > SYMMETRY_WARN_TOL {
        log::warn!("{what} asymmetric by {asym:.3e}; symmetrizing");
    }
    let s = symmetrize(m);
    let min_eig = min_eigenvalue(&s);
    let threshold = definiteness_threshold(&s);
    if min_eig <= threshold {
        return Err(Error::NotPositiveDefinite {
            what: what.to_string(),
            min_eig,
            threshold,
        });
    }
    Ok(s)
}

impl QuadCost {
    /// Symmetrizes `Q` and `R` and checks positive definiteness.
    pub fn new(q: Mat, r: Option<Mat>) -> Result<Self> {
        let q = checked_spd(&q, "Q")?;
        let r = r.map(|r| checked_spd(&r, "R")).transpose()?;
        Ok(Self { q, r })
    }

    pub fn identity(n: usize, m: Option<usize>) -> Self {
        Self {
            q: Mat::identity(n, n),
            r: m.map(|m| Mat::identity(m, m)),
        }
    }

    pub fn q(&self) -> &Mat {
        &self.q
    }

    pub fn r(&self) -> Option<&Mat> {
        self.r.as_ref()
    }

    pub fn state_cost(&self, x: &Vector) -> f64 {
        quad_form(&self.q, x)
    }

    /// `xᵀQx + uᵀRu`; the input term is dropped without `R`.
    pub fn stage_cost(&self, x: &Vector, u: Option<&Vector>) -> f64 {
        let mut c = self.state_cost(x);
        if let (Some(r), Some(u)) = (&self.r, u) {
            c += quad_form(r, u);
        }
        c
    }

    pub fn check_against(&self, sys: &SwitchedSystem) -> Result<()> {
        let n = sys.state_dim();
        if self.q.nrows() != n {
            return Err(Error::Dimension(format!("Q is {0}x{0} but n = {n}", self.q.nrows())));
        }
        if let Some(r) = &self.r {
            if r.nrows() != sys.input_dim() {
                return Err(Error::Dimension(format!(
                    "R is {0}x{0} but m = {1}",
                    r.nrows(),
                    sys.input_dim()
                )));
            }
        }
        Ok(())
    }
}

/// `A_mode·x (+ B_mode·u)`.
pub fn step(sys: &SwitchedSystem, x: &Vector, mode: usize, u: Option<&Vector>) -> Result<Vector> {
    sys.check_mode(mode)?;
    let n = sys.state_dim();
    if x.len() != n {
        return Err(Error::Dimension(format!("state has length {}, expected {n}", x.len())));
    }
    let mut next = sys.a(mode) * x;
    match (sys.b(mode), u) {
        (Some(b), Some(u)) => {
            if u.len() != b.ncols() {
                return Err(Error::Dimension(format!(
                    "input has length {}, expected {}",
                    u.len(),
                    b.ncols()
                )));
            }
            next += b * u;
        }
        (None, None) => {}
        (Some(_), None) => return Err(Error::Dimension("system has inputs but none given".into())),
        (None, Some(_)) => return Err(Error::Dimension("input given to an autonomous system".into())),
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `x_0..x_H`.
    pub states: Vec<Vector>,
    /// `σ(0)..σ(H-1)`, 1-based.
    pub modes: Vec<usize>,
    pub inputs: Vec<Vector>,
    pub cumulative_cost: f64,
}

/// Open-loop trajectory of an autonomous system under a fixed mode sequence.
pub fn simulate(sys: &SwitchedSystem, cost: &QuadCost, x0: &Vector, modes: &[usize]) -> Result<Trajectory> {
    simulate_feedback(sys, cost, x0, modes, |_| None)
}

/// Trajectory under `u_k = policy(x_k)`.
pub fn simulate_feedback(
    sys: &SwitchedSystem,
    cost: &QuadCost,
    x0: &Vector,
    modes: &[usize],
    policy: impl Fn(&Vector) -> Option<Vector>,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(modes.len() + 1);
    let mut inputs = Vec::new();
    let mut total = 0.0;
    let mut x = x0.clone();
    for &mode in modes {
        let u = policy(&x);
        total += cost.stage_cost(&x, u.as_ref());
        let next = step(sys, &x, mode, u.as_ref())?;
        states.push(x);
        if let Some(u) = u {
            inputs.push(u);
        }
        x = next;
    }
    states.push(x);
    Ok(Trajectory {
        states,
        modes: modes.to_vec(),
        inputs,
        cumulative_cost: total,
    })
}

/// On-disk form; matrices are arrays of rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemFile {
    pub n: usize,
    #[serde(default)]
    pub m: usize,
    #[serde(rename = "M")]
    pub num_modes: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
}

impl SystemFile {
    pub fn from_parts(sys: &SwitchedSystem, cost: &QuadCost) -> Self {
        Self {
            n: sys.state_dim(),
            m: sys.input_dim(),
            num_modes: sys.num_modes(),
            a: sys.a_all().iter().map(to_rows).collect(),
            b: sys.b_all().map(|b| b.iter().map(to_rows).collect()),
            q: to_rows(cost.q()),
            r: cost.r().map(to_rows),
        }
    }

    pub fn into_parts(self) -> Result<(SwitchedSystem, QuadCost)> {
        if self.a.len() != self.num_modes {
            return Err(Error::Dimension(format!(
                "M = {} but {} A matrices given",
                self.num_modes,
                self.a.len()
            )));
        }
        let a = self
            .a
            .iter()
            .enumerate()
            .map(|(i, rows)| from_rows(rows, &format!("A_{}", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        let b = self
            .b
            .as_ref()
            .map(|bs| {
                bs.iter()
                    .enumerate()
                    .map(|(i, rows)| from_rows(rows, &format!("B_{}", i + 1)))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        let sys = SwitchedSystem::new(a, b)?;
        if sys.state_dim() != self.n {
            return Err(Error::Dimension(format!("n = {} but A is {1}x{1}", self.n, sys.state_dim())));
        }
        if sys.input_dim() != self.m {
            return Err(Error::Dimension(format!(
                "m = {} but B has {} columns",
                self.m,
                sys.input_dim()
            )));
        }
        let q = from_rows(&self.q, "Q")?;
        let r = self.r.as_ref().map(|r| from_rows(r, "R")).transpose()?;
        let cost = QuadCost::new(q, r)?;
        cost.check_against(&sys)?;
        Ok((sys, cost))
    }
}

pub fn system_to_json(sys: &SwitchedSystem, cost: &QuadCost) -> String {
    serde_json::to_string_pretty(&SystemFile::from_parts(sys, cost)).expect("system serialization cannot fail")
}

pub fn system_from_json(text: &str) -> Result<(SwitchedSystem, QuadCost)> {
    serde_json::from_str::<SystemFile>(text)?.into_parts()
}

pub fn load_system(path: impl AsRef<Path>) -> Result<(SwitchedSystem, QuadCost)> {
    system_from_json(&fs::read_to_string(path)?)
}

pub fn save_system(path: impl AsRef<Path>, sys: &SwitchedSystem, cost: &QuadCost) -> Result<()> {
    fs::write(path, system_to_json(sys, cost))?;
    Ok(())
}

/// Random system with i.i.d. standard normal entries, scaled so that the
/// largest spectral norm over modes equals `gamma`. This distribution is a
/// stand-in benchmark generator.
pub fn random_stable_system(n: usize, num_modes: usize, seed: u64) -> SwitchedSystem {
    random_stable_system_with_gamma(n, num_modes, seed, DEFAULT_GAMMA)
}

pub fn random_stable_system_with_gamma(n: usize, num_modes: usize, seed: u64, gamma: f64) -> SwitchedSystem {
    assert!(n >= 1 && num_modes >= 1, "n and M must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let a: Vec<Mat> = (0..num_modes)
            .map(|_| Mat::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        let worst = a.iter().map(spectral_norm).fold(0.0, f64::max);
        if worst > 1e-12 {
            let scaled = a.into_iter().map(|m| m * (gamma / worst)).collect();
            return SwitchedSystem::autonomous(scaled).expect("generated dimensions are consistent");
        }
    }
}

/// The two-mode example system with `A_1 = [[1.3,0],[1,0.3]]/1.75`,
/// `A_2 = [[-0.3,1],[0,-1.3]]/1.75` and `Q = I`.
pub fn example2_system() -> (SwitchedSystem, QuadCost) {
    let a1 = Mat::from_row_slice(2, 2, &[1.3, 0.0, 1.0, 0.3]) / 1.75;
    let a2 = Mat::from_row_slice(2, 2, &[-0.3, 1.0, 0.0, -1.3]) / 1.75;
    (
        SwitchedSystem::autonomous(vec![a1, a2]).expect("static system"),
        QuadCost::identity(2, None),
    )
}

/// The two-mode controlled example with `A_1` a rotation, `A_2 = diag(-1,-0.95)`,
/// `B_1 = B_2 = e_1` and `Q = R = I`.
pub fn controlled_example_system() -> (SwitchedSystem, QuadCost) {
    let a1 = Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
    let a2 = Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -0.95]);
    let b = Mat::from_row_slice(2, 1, &[1.0, 0.0]);
    (
        SwitchedSystem::new(vec![a1, a2], Some(vec![b.clone(), b])).expect("static system"),
        QuadCost::identity(2, Some(1)),
    )
}

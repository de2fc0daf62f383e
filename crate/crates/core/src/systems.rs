//! Ground-truth chaotic systems with analytic Jacobians, and the
//! per-dimension affine normalization applied to their dynamics.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::linalg::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemName {
    Lorenz63,
    ChenHyper,
    Lorenz96,
}

impl SystemName {
    pub fn as_str(&self) -> &'static str {
        match self {
            SystemName::Lorenz63 => "lorenz63",
            SystemName::ChenHyper => "chen_hyper",
            SystemName::Lorenz96 => "lorenz96",
        }
    }
}

impl fmt::Display for SystemName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SystemName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lorenz63" => Ok(SystemName::Lorenz63),
            "chen_hyper" => Ok(SystemName::ChenHyper),
            "lorenz96" => Ok(SystemName::Lorenz96),
            other => Err(Error::arg(format!(
                "unknown system '{other}' (expected lorenz63, chen_hyper or lorenz96)"
            ))),
        }
    }
}

/// Equation family with its constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dynamics {
    Lorenz63 { sigma: f64, rho: f64, beta: f64 },
    ChenHyper { a: f64, b: f64, c: f64, d: f64, r: f64 },
    Lorenz96 { forcing: f64 },
}

/// A ground-truth system together with the settings used to put samples on
/// its attractor.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemSpec {
    pub dynamics: Dynamics,
    pub dim: usize,
    pub init_mean: Vec<f64>,
    pub init_std: Vec<f64>,
    pub burn_in: f64,
}

impl SystemSpec {
    pub fn lorenz63() -> Self {
        SystemSpec {
            dynamics: Dynamics::Lorenz63 {
                sigma: 10.0,
                rho: 28.0,
                beta: 8.0 / 3.0,
            },
            dim: 3,
            init_mean: vec![0.0; 3],
            init_std: vec![1.0; 3],
            burn_in: 50.0,
        }
    }

    pub fn chen_hyper() -> Self {
        SystemSpec {
            dynamics: Dynamics::ChenHyper {
                a: 35.0,
                b: 3.0,
                c: 12.0,
                d: 7.0,
                r: 0.58,
            },
            dim: 4,
            init_mean: vec![0.0, 0.0, 20.0, 0.0],
            init_std: vec![1.0; 4],
            burn_in: 100.0,
        }
    }

    /// Lorenz96 on a periodic lattice of `dim` nodes (`dim >= 4`).
    pub fn lorenz96(dim: usize, forcing: f64) -> Self {
        assert!(dim >= 4, "lorenz96 needs at least 4 nodes");
        SystemSpec {
            dynamics: Dynamics::Lorenz96 { forcing },
            dim,
            init_mean: vec![0.0; dim],
            init_std: vec![1.0; dim],
            burn_in: 1000.0,
        }
    }

    /// Experiment defaults for each family (Lorenz96 with 6 nodes, F = 10).
    pub fn by_name(name: SystemName) -> Self {
        match name {
            SystemName::Lorenz63 => Self::lorenz63(),
            SystemName::ChenHyper => Self::chen_hyper(),
            SystemName::Lorenz96 => Self::lorenz96(6, 10.0),
        }
    }

    /// Rebuilds a spec from recorded metadata; missing constants fall back
    /// to the defaults of the family.
    pub fn from_params(name: SystemName, dim: usize, params: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |k: &str, default: f64| params.get(k).copied().unwrap_or(default);
        let spec = match name {
            SystemName::Lorenz63 => {
                let mut s = Self::lorenz63();
                s.dynamics = Dynamics::Lorenz63 {
                    sigma: get("sigma", 10.0),
                    rho: get("rho", 28.0),
                    beta: get("beta", 8.0 / 3.0),
                };
                s
            }
            SystemName::ChenHyper => {
                let mut s = Self::chen_hyper();
                s.dynamics = Dynamics::ChenHyper {
                    a: get("a", 35.0),
                    b: get("b", 3.0),
                    c: get("c", 12.0),
                    d: get("d", 7.0),
                    r: get("r", 0.58),
                };
                s
            }
            SystemName::Lorenz96 => {
                if dim < 4 {
                    return Err(Error::arg("lorenz96 needs at least 4 nodes"));
                }
                Self::lorenz96(dim, get("F", 10.0))
            }
        };
        if spec.dim != dim {
            return Err(Error::arg(format!("dimension {dim} does not match {name}")));
        }
        Ok(spec)
    }

    pub fn name(&self) -> SystemName {
        match self.dynamics {
            Dynamics::Lorenz63 { .. } => SystemName::Lorenz63,
            Dynamics::ChenHyper { .. } => SystemName::ChenHyper,
            Dynamics::Lorenz96 { .. } => SystemName::Lorenz96,
        }
    }

    /// Named constants, as recorded in dataset metadata.
    pub fn params(&self) -> BTreeMap<String, f64> {
        let pairs: Vec<(&str, f64)> = match self.dynamics {
            Dynamics::Lorenz63 { sigma, rho, beta } => {
                vec![("sigma", sigma), ("rho", rho), ("beta", beta)]
            }
            Dynamics::ChenHyper { a, b, c, d, r } => {
                vec![("a", a), ("b", b), ("c", c), ("d", d), ("r", r)]
            }
            Dynamics::Lorenz96 { forcing } => vec![("F", forcing)],
        };
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let expected = match self.dynamics {
            Dynamics::Lorenz63 { .. } => Some(3),
            Dynamics::ChenHyper { .. } => Some(4),
            Dynamics::Lorenz96 { .. } => None,
        };
        if expected.is_some_and(|e| e != self.dim) || self.dim < 3 {
            return Err(Error::arg(format!(
                "dimension {} does not match {}",
                self.dim,
                self.name()
            )));
        }
        if self.init_mean.len() != self.dim || self.init_std.len() != self.dim {
            return Err(Error::arg("initial distribution has wrong length"));
        }
        if !(self.burn_in > 0.0) || self.init_std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::arg("burn-in and initial std must be positive"));
        }
        Ok(())
    }

    fn check_dim(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.dim {
            return Err(Error::arg(format!(
                "state has length {}, {} has dimension {}",
                u.len(),
                self.name(),
                self.dim
            )));
        }
        Ok(())
    }

    /// `f(u)`.
    pub fn eval_vector_field(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(u)?;
        let mut out = vec![0.0; self.dim];
        self.rhs(u, &mut out);
        Ok(out)
    }

    /// Analytic `df(u)`, row `i` holding the partials of component `i`.
    pub fn eval_jacobian(&self, u: &[f64]) -> Result<Mat> {
        self.check_dim(u)?;
        let mut j = Mat::zeros(self.dim, self.dim);
        self.jac(u, &mut j);
        Ok(j)
    }

    /// Unchecked right-hand side, for integrator inner loops.
    pub fn rhs(&self, u: &[f64], out: &mut [f64]) {
        match self.dynamics {
            Dynamics::Lorenz63 { sigma, rho, beta } => {
                let (x, y, z) = (u[0], u[1], u[2]);
                out[0] = sigma * (y - x);
                out[1] = x * (rho - z) - y;
                out[2] = x * y - beta * z;
            }
            Dynamics::ChenHyper { a, b, c, d, r } => {
                let (x, y, z, w) = (u[0], u[1], u[2], u[3]);
                out[0] = a * (y - x) + w;
                out[1] = x * (d - z) + c * y;
                out[2] = x * y - b * z;
                out[3] = y * z + r * w;
            }
            Dynamics::Lorenz96 { forcing } => {
                let n = u.len();
                for i in 0..n {
                    let ip1 = u[(i + 1) % n];
                    let im1 = u[(i + n - 1) % n];
                    let im2 = u[(i + n - 2) % n];
                    out[i] = (ip1 - im2) * im1 - u[i] + forcing;
                }
            }
        }
    }

    fn jac(&self, u: &[f64], j: &mut Mat) {
        match self.dynamics {
            Dynamics::Lorenz63 { sigma, rho, beta } => {
                let (x, y, z) = (u[0], u[1], u[2]);
                let rows = [
                    [-sigma, sigma, 0.0],
                    [rho - z, -1.0, -x],
                    [y, x, -beta],
                ];
                for (i, r) in rows.iter().enumerate() {
                    j.row_mut(i).copy_from_slice(r);
                }
            }
            Dynamics::ChenHyper { a, b, c, d, r } => {
                let (x, y, z, _) = (u[0], u[1], u[2], u[3]);
                let rows = [
                    [-a, a, 0.0, 1.0],
                    [d - z, c, -x, 0.0],
                    [y, x, -b, 0.0],
                    [0.0, z, y, r],
                ];
                for (i, row) in rows.iter().enumerate() {
                    j.row_mut(i).copy_from_slice(row);
                }
            }
            Dynamics::Lorenz96 { .. } => {
                let n = u.len();
                for v in j.as_mut_slice() {
                    *v = 0.0;
                }
                for i in 0..n {
                    let ip1 = (i + 1) % n;
                    let im1 = (i + n - 1) % n;
                    let im2 = (i + n - 2) % n;
                    j[(i, ip1)] += u[im1];
                    j[(i, im2)] -= u[im1];
                    j[(i, im1)] += u[ip1] - u[im2];
                    j[(i, i)] -= 1.0;
                }
            }
        }
    }

    /// Field of the normalized state `v = (u - shift) / scale`.
    pub fn transform_field(&self, t: &AffineTransform, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v)?;
        t.check(self.dim)?;
        let u = t.inverse(v);
        let mut f = vec![0.0; self.dim];
        self.rhs(&u, &mut f);
        Ok(f.iter().zip(&t.scale).map(|(fi, si)| fi / si).collect())
    }

    /// Jacobian of [`transform_field`](Self::transform_field):
    /// `diag(1/s) df diag(s)` evaluated at the de-normalized state.
    pub fn transform_jacobian(&self, t: &AffineTransform, v: &[f64]) -> Result<Mat> {
        self.check_dim(v)?;
        t.check(self.dim)?;
        let u = t.inverse(v);
        let mut j = Mat::zeros(self.dim, self.dim);
        self.jac(&u, &mut j);
        for r in 0..self.dim {
            for c in 0..self.dim {
                j[(r, c)] *= t.scale[c] / t.scale[r];
            }
        }
        Ok(j)
    }
}

/// Componentwise affine map `v = (u - shift) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl AffineTransform {
    pub fn identity(dim: usize) -> Self {
        AffineTransform {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn new(shift: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        let t = AffineTransform { shift, scale };
        t.check(t.shift.len())?;
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn is_identity(&self) -> bool {
        self.shift.iter().all(|&m| m == 0.0) && self.scale.iter().all(|&s| s == 1.0)
    }

    fn check(&self, dim: usize) -> Result<()> {
        if self.shift.len() != dim || self.scale.len() != dim {
            return Err(Error::arg(format!(
                "transform has dimension {}, expected {dim}",
                self.shift.len()
            )));
        }
        if self.scale.iter().any(|&s| s == 0.0 || !s.is_finite()) {
            return Err(Error::arg("transform scale must be finite and nonzero"));
        }
        Ok(())
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn inverse(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(x, (m, s))| s * x + m)
            .collect()
    }
}

/// A ground-truth system viewed in normalized coordinates.
#[derive(Clone, Debug)]
pub struct SystemField {
    pub spec: SystemSpec,
    pub transform: AffineTransform,
}

impl SystemField {
    pub fn new(spec: SystemSpec, transform: AffineTransform) -> Self {
        assert_eq!(spec.dim, transform.dim(), "transform dimension");
        SystemField { spec, transform }
    }

    pub fn raw(spec: SystemSpec) -> Self {
        let t = AffineTransform::identity(spec.dim);
        SystemField::new(spec, t)
    }

    fn eval_one(&self, v: &[f64], out: &mut [f64]) {
        if self.transform.is_identity() {
            self.spec.rhs(v, out);
            return;
        }
        let u = self.transform.inverse(v);
        self.spec.rhs(&u, out);
        for (o, s) in out.iter_mut().zip(&self.transform.scale) {
            *o /= s;
        }
    }

    fn jac_one(&self, v: &[f64]) -> Mat {
        if self.transform.is_identity() {
            let mut j = Mat::zeros(self.spec.dim, self.spec.dim);
            self.spec.jac(v, &mut j);
            return j;
        }
        self.spec
            .transform_jacobian(&self.transform, v)
            .expect("dimensions checked at construction")
    }
}

impl VectorField for SystemField {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn eval_batch(&self, states: &Mat) -> Mat {
        let d = self.spec.dim;
        assert_eq!(states.cols(), d);
        let mut out = Mat::zeros(states.rows(), d);
        for r in 0..states.rows() {
            self.eval_one(states.row(r), out.row_mut(r));
        }
        out
    }

    fn jvp_batch(&self, states: &Mat, dirs: &Mat) -> (Mat, Mat) {
        let d = self.spec.dim;
        let f = self.eval_batch(states);
        let k = dirs.rows() / states.rows().max(1);
        let mut jv = Mat::zeros(dirs.rows(), d);
        for r in 0..states.rows() {
            let j = self.jac_one(states.row(r));
            for q in 0..k {
                let src = dirs.row(r * k + q);
                let dst = jv.row_mut(r * k + q);
                for (i, o) in dst.iter_mut().enumerate() {
                    *o = j.row(i).iter().zip(src).map(|(a, b)| a * b).sum();
                }
            }
        }
        (f, jv)
    }

    fn jacobian(&self, u: &[f64]) -> Mat {
        self.jac_one(u)
    }
}

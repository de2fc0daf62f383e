//! The learned vector field and its differentiable rollouts.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual, Tensor};
use crate::dataset::rng;
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::integrate::rk4_step;
use crate::io;
use crate::linalg::Mat;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

/// Fully connected network `R^d -> R^d`, tanh on hidden layers and identity
/// on the output.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpVectorField {
    pub dims: Vec<usize>,
    /// `out x in` per layer.
    pub weights: Vec<Mat>,
    /// `1 x out` per layer.
    pub biases: Vec<Mat>,
    pub activation: Activation,
    pub seed: u64,
}

/// Standard layer sizes `[d, 64, 64, d]`.
pub fn default_dims(d: usize) -> Vec<usize> {
    vec![d, 64, 64, d]
}

pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::arg("layer sizes must be positive, at least input and output"));
    }
    if dims[0] != dims[dims.len() - 1] {
        return Err(Error::arg("a vector field maps R^d to R^d"));
    }
    Ok(())
}

/// Forward pass written against the primitive set, so it can be evaluated,
/// differentiated forward, or recorded on a tape.
pub fn mlp_forward<T: Tensor>(x: &T, layers: &[(T::Param, T::Param)]) -> T {
    let last = layers.len() - 1;
    let mut h = x.clone();
    for (l, (w, b)) in layers.iter().enumerate() {
        h = h.matmul_t(w).add_bias(b);
        if l < last {
            h = h.tanh();
        }
    }
    h
}

impl MlpVectorField {
    /// Weights uniform in `±sqrt(1/fan_in)`, biases zero.
    pub fn init(seed: u64, dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let mut r = rng(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            let (fan_in, out) = (w[0], w[1]);
            let bound = (1.0 / fan_in as f64).sqrt();
            let data = (0..fan_in * out).map(|_| r.gen_range(-bound..=bound)).collect();
            weights.push(Mat::from_vec(out, fan_in, data));
            biases.push(Mat::zeros(1, out));
        }
        Ok(MlpVectorField {
            dims: dims.to_vec(),
            weights,
            biases,
            activation: Activation::Tanh,
            seed,
        })
    }

    pub fn from_flat(dims: &[usize], flat: &[f64], seed: u64) -> Result<Self> {
        check_dims(dims)?;
        if flat.len() != param_count(dims) {
            return Err(Error::arg(format!(
                "expected {} parameters, got {}",
                param_count(dims),
                flat.len()
            )));
        }
        let mut m = MlpVectorField {
            dims: dims.to_vec(),
            weights: Vec::new(),
            biases: Vec::new(),
            activation: Activation::Tanh,
            seed,
        };
        let mut o = 0;
        for w in dims.windows(2) {
            let (fan_in, out) = (w[0], w[1]);
            m.weights
                .push(Mat::from_vec(out, fan_in, flat[o..o + fan_in * out].to_vec()));
            o += fan_in * out;
            m.biases.push(Mat::from_vec(1, out, flat[o..o + out].to_vec()));
            o += out;
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dims[0]
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.dims)
    }

    /// Layer-major: each layer's weights (row-major) then its biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "parameter count");
        let mut o = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.as_slice().len();
            w.as_mut_slice().copy_from_slice(&flat[o..o + n]);
            o += n;
            let n = b.as_slice().len();
            b.as_mut_slice().copy_from_slice(&flat[o..o + n]);
            o += n;
        }
    }

    pub fn layers(&self) -> Vec<(Mat, Mat)> {
        self.weights
            .iter()
            .cloned()
            .zip(self.biases.iter().cloned())
            .collect()
    }

    fn check_state(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.dim() {
            return Err(Error::arg(format!(
                "state has length {}, model has dimension {}",
                u.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn model_field(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_state(u)?;
        Ok(VectorField::eval(self, u))
    }

    /// Assembled from `d` forward-mode products with the basis directions.
    pub fn model_jacobian(&self, u: &[f64]) -> Result<Mat> {
        self.check_state(u)?;
        Ok(VectorField::jacobian(self, u))
    }

    /// RK4 rollout from one state: `s_steps x d`, row `s-1` at time `s*dt`.
    pub fn rollout_center(&self, u0: &[f64], s_steps: usize, dt: f64, n_sub: usize) -> Result<Mat> {
        self.check_state(u0)?;
        let traj = rollout_center(&self.layers(), &Mat::row_vector(u0), s_steps, dt, n_sub)?;
        Ok(Mat::vstack(&traj))
    }

    /// Center trajectory (`s_steps x d`) and reconstructed neighbors, one
    /// `K x d` matrix per step.
    pub fn rollout_neighborhood(
        &self,
        batch: &PerturbationBatch,
        dt: f64,
        taylor_order: usize,
    ) -> Result<(Mat, Vec<Mat>)> {
        batch.validate(self.dim())?;
        let (center, nbrs) = rollout_neighborhood(
            &self.layers(),
            &Mat::row_vector(&batch.center),
            &batch.offsets,
            batch.horizon,
            dt,
            batch.n_sub,
            taylor_order,
        )?;
        Ok((Mat::vstack(&center), nbrs))
    }

    pub fn save(&self, dir: &Path, info: &CheckpointInfo) -> Result<()> {
        io::ensure_dir(dir)?;
        let meta = ModelMeta {
            dims: self.dims.clone(),
            activation: self.activation,
            seed: self.seed,
            param_count: self.param_count(),
            step: info.step,
            val_loss: info.val_loss,
        };
        io::write_json(&dir.join("model.json"), &meta)?;
        io::write_f64_le(&dir.join("params.bin"), &self.flat_params())
    }

    pub fn load(dir: &Path) -> Result<(Self, CheckpointInfo)> {
        let meta: ModelMeta = io::read_json(&dir.join("model.json"))?;
        let flat = io::read_f64_le(&dir.join("params.bin"), Some(param_count(&meta.dims)))?;
        let mut m = MlpVectorField::from_flat(&meta.dims, &flat, meta.seed)?;
        m.activation = meta.activation;
        Ok((
            m,
            CheckpointInfo {
                step: meta.step,
                val_loss: meta.val_loss,
            },
        ))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub step: usize,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    dims: Vec<usize>,
    activation: Activation,
    seed: u64,
    param_count: usize,
    step: usize,
    val_loss: Option<f64>,
}

impl VectorField for MlpVectorField {
    fn dim(&self) -> usize {
        self.dims[0]
    }

    fn eval_batch(&self, states: &Mat) -> Mat {
        mlp_forward(states, &self.layers())
    }

    fn jvp_batch(&self, states: &Mat, dirs: &Mat) -> (Mat, Mat) {
        let y = mlp_forward(&Dual::new(states.clone(), dirs.clone()), &self.layers());
        (y.primal, y.tangent)
    }
}

/// A center state with `K` offsets to its neighbors.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationBatch {
    pub center: Vec<f64>,
    /// `K x d`.
    pub offsets: Mat,
    pub horizon: usize,
    pub n_sub: usize,
}

impl PerturbationBatch {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.center.len() != d || self.offsets.cols() != d {
            return Err(Error::arg("perturbation batch dimension mismatch"));
        }
        if self.offsets.rows() < 2 {
            return Err(Error::arg("need at least two neighbors"));
        }
        if self.horizon == 0 || self.n_sub == 0 {
            return Err(Error::arg("horizon and substeps must be positive"));
        }
        if !self.offsets.is_finite() {
            return Err(Error::arg("offsets must be finite"));
        }
        Ok(())
    }
}

fn check_rollout(s_steps: usize, dt: f64, n_sub: usize) {
    assert!(s_steps > 0 && n_sub > 0 && dt > 0.0, "rollout settings");
}

/// RK4 rollout of a batch of states (one per row); element `s-1` holds the
/// states at time `s*dt`.
pub fn rollout_center<T: Tensor>(
    layers: &[(T::Param, T::Param)],
    u0: &T,
    s_steps: usize,
    dt: f64,
    n_sub: usize,
) -> Result<Vec<T>> {
    check_rollout(s_steps, dt, n_sub);
    let h = dt / n_sub as f64;
    let mut rhs = |s: &[T]| vec![mlp_forward(&s[0], layers)];
    let mut u = vec![u0.clone()];
    let mut out = Vec::with_capacity(s_steps);
    for step in 0..s_steps {
        for sub in 0..n_sub {
            let t = (step * n_sub + sub) as f64 * h;
            u = rk4_step(&mut rhs, &u, h, t).map_err(|_| Error::Rollout { step: step + 1 })?;
        }
        out.push(u[0].clone());
    }
    Ok(out)
}

/// Right-hand side of the coupled center/perturbation system: the center
/// follows the field; each perturbation follows the first (and optionally
/// second) order Taylor expansion of the field around the center.
fn coupled_rhs<T: Tensor>(
    layers: &[(T::Param, T::Param)],
    center: &T,
    omega: &T,
    taylor_order: usize,
) -> (T, T) {
    if taylor_order >= 2 {
        let zeros = omega.zeros_like();
        let x = Dual::new(
            Dual::new(center.clone(), omega.clone()),
            Dual::new(omega.clone(), zeros),
        );
        let y = mlp_forward(&x, layers);
        let d_omega = y.primal.tangent.add(&y.tangent.tangent.scale(0.5));
        (y.primal.primal, d_omega)
    } else {
        let y = mlp_forward(&Dual::new(center.clone(), omega.clone()), layers);
        (y.primal, y.tangent)
    }
}

/// Advances `B` centers together with `K` perturbations each (offsets laid
/// out center-major, row `b*K + k`). Returns the center states and the
/// reconstructed neighbors `center + omega` for steps `1..=s_steps`.
pub fn rollout_neighborhood<T: Tensor>(
    layers: &[(T::Param, T::Param)],
    center: &T,
    offsets: &T,
    s_steps: usize,
    dt: f64,
    n_sub: usize,
    taylor_order: usize,
) -> Result<(Vec<T>, Vec<T>)> {
    check_rollout(s_steps, dt, n_sub);
    assert!(
        offsets.rows().is_multiple_of(center.rows().max(1)),
        "offsets must hold K rows per center"
    );
    let h = dt / n_sub as f64;
    let mut rhs = |s: &[T]| {
        let (dc, dw) = coupled_rhs(layers, &s[0], &s[1], taylor_order);
        vec![dc, dw]
    };
    let mut u = vec![center.clone(), offsets.clone()];
    let mut centers = Vec::with_capacity(s_steps);
    let mut nbrs = Vec::with_capacity(s_steps);
    for step in 0..s_steps {
        for sub in 0..n_sub {
            let t = (step * n_sub + sub) as f64 * h;
            u = rk4_step(&mut rhs, &u, h, t).map_err(|_| Error::Rollout { step: step + 1 })?;
        }
        nbrs.push(u[1].add(&u[0]));
        centers.push(u[0].clone());
    }
    Ok((centers, nbrs))
}

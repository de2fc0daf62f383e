//! A small nested differentiation engine.
//!
//! Forward mode ([`Dual`]) supplies directional derivatives of the vector
//! field; reverse mode ([`Tape`]/[`Var`]) supplies parameter gradients of
//! losses that themselves contain forward-mode derivatives. Both run over the
//! same primitive set, [`Tensor`], so nesting is reverse-over-forward by
//! construction: `Dual<Dual<Var>>` is a second-order forward jet recorded on
//! a tape.

mod dual;
mod tape;
mod tensor;

pub use dual::Dual;
pub use tape::{BlockObjective, BlockReduce, Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// A map `R^p -> R^q` written against the engine's primitives. Inputs and
/// outputs are row vectors (`1 x p`, `1 x q`).
pub trait DiffMap {
    fn apply<T: Tensor>(&self, x: &T) -> T;
}

/// Forward-mode directional derivative `df(x)[v]`.
pub fn jvp<F: DiffMap>(f: &F, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if x.len() != v.len() {
        return Err(Error::arg(format!(
            "direction has length {}, point has length {}",
            v.len(),
            x.len()
        )));
    }
    let d = Dual::new(Mat::row_vector(x), Mat::row_vector(v));
    Ok(f.apply(&d).tangent.into_vec())
}

/// Second directional derivative `d^2 f(x)[v, v]` by tangent-of-tangent.
pub fn bilinear_hvp<F: DiffMap>(f: &F, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if x.len() != v.len() {
        return Err(Error::arg(format!(
            "direction has length {}, point has length {}",
            v.len(),
            x.len()
        )));
    }
    let xv = Mat::row_vector(x);
    let vv = Mat::row_vector(v);
    let seed = Dual::new(
        Dual::new(xv, vv.clone()),
        Dual::new(vv, Mat::zeros(1, x.len())),
    );
    Ok(f.apply(&seed).tangent.tangent.into_vec())
}

/// Reverse-mode gradient of a scalar-valued map.
pub fn grad<F: DiffMap>(f: &F, x: &[f64]) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let xv = tape.variable(Mat::row_vector(x));
    let y = f.apply(&xv);
    if (y.rows(), y.cols()) != (1, 1) {
        return Err(Error::arg(format!(
            "gradient needs a scalar output, got {}x{}",
            y.rows(),
            y.cols()
        )));
    }
    Ok(tape.gradients(&y).wrt(&xv).into_vec())
}

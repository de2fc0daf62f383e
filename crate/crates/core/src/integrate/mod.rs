//! ODE integration: fixed-step RK4 for differentiable rollouts, an adaptive
//! Tsitouras 5(4) pair for data generation and evaluation, and Lyapunov
//! spectra via the variational equation.

mod lyapunov;
mod rk4;
mod tsit5;

pub use lyapunov::{lyapunov_spectra, lyapunov_spectrum, mean_spectrum, LyapunovResult};
pub use rk4::rk4_step;
pub use tsit5::{integrate_adaptive, StepControl, Tsit5};

use crate::error::Result;
use crate::field::{batch_rhs, VectorField};
use crate::linalg::Mat;

/// Integrates a batch of states (one per row) as one stacked system and
/// returns one `n x d` matrix per save time.
pub fn integrate_batch(
    field: &dyn VectorField,
    states: &Mat,
    t_span: (f64, f64),
    ctrl: StepControl,
    save_at: &[f64],
) -> Result<Vec<Mat>> {
    let (n, d) = states.shape();
    let traj = integrate_adaptive(batch_rhs(field), states.as_slice(), t_span, ctrl, save_at)?;
    Ok(traj.into_iter().map(|v| Mat::from_vec(n, d, v)).collect())
}

/// Integrates a single state, returning `save_at.len()` rows.
pub fn integrate_field(
    field: &dyn VectorField,
    u0: &[f64],
    t_span: (f64, f64),
    ctrl: StepControl,
    save_at: &[f64],
) -> Result<Vec<Vec<f64>>> {
    integrate_adaptive(batch_rhs(field), u0, t_span, ctrl, save_at)
}

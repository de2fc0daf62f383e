use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tsit5::{StepControl, Tsit5};
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::linalg::{modified_gram_schmidt, norm2, Mat};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovResult {
    /// Sorted descending, in units of 1/time.
    pub exponents: Vec<f64>,
    pub horizon: f64,
    pub reorth_interval: f64,
}

impl LyapunovResult {
    pub fn max_exponent(&self) -> f64 {
        self.exponents[0]
    }
}

/// Benettin-style spectrum: the state and an orthonormal frame are advanced
/// together along the variational equation, and the frame is
/// reorthonormalized every `reorth_dt` time units.
pub fn lyapunov_spectrum(
    field: &dyn VectorField,
    u0: &[f64],
    horizon: f64,
    reorth_dt: f64,
    ctrl: StepControl,
) -> Result<LyapunovResult> {
    let d = field.dim();
    if u0.len() != d {
        return Err(Error::arg(format!(
            "initial state has length {}, field has dimension {d}",
            u0.len()
        )));
    }
    if !(reorth_dt > 0.0 && horizon >= reorth_dt) {
        return Err(Error::arg("need horizon >= reorth_dt > 0"));
    }
    let windows = (horizon / reorth_dt).round() as usize;

    // Layout: state, then the d frame vectors one after another.
    let rhs = |y: &[f64], out: &mut [f64]| {
        let states = Mat::from_vec(1, d, y[..d].to_vec());
        let dirs = Mat::from_vec(d, d, y[d..].to_vec());
        let (f, jv) = field.jvp_batch(&states, &dirs);
        out[..d].copy_from_slice(f.as_slice());
        out[d..].copy_from_slice(jv.as_slice());
    };
    let mut y0 = u0.to_vec();
    y0.extend_from_slice(Mat::identity(d).as_slice());
    let total = windows as f64 * reorth_dt;
    let mut solver = Tsit5::new(rhs, &y0, 0.0, total, ctrl)?;

    let mut sums = vec![0.0; d];
    for w in 1..=windows {
        advance_window(&mut solver, d, w as f64 * reorth_dt, 0, &mut sums)?;
    }
    let mut exponents: Vec<f64> = sums.iter().map(|s| s / total).collect();
    if exponents.iter().any(|e| !e.is_finite()) {
        return Err(Error::DegenerateFrame { t: total });
    }
    exponents.sort_by(|a, b| b.total_cmp(a));
    Ok(LyapunovResult {
        exponents,
        horizon: total,
        reorth_interval: reorth_dt,
    })
}

const MAX_SPLITS: usize = 12;
const MIN_RESIDUAL: f64 = 1e-6;

/// Advances the frame to `t_end` and reorthonormalizes. When a frame vector
/// shrinks out of the resolvable range, the window is rewound and split in two.
fn advance_window(
    solver: &mut Tsit5<'_>,
    d: usize,
    t_end: f64,
    depth: usize,
    sums: &mut [f64],
) -> Result<()> {
    let t0 = solver.time();
    let start = solver.state().to_vec();
    let mut sink = Vec::new();
    solver.advance(t_end, &[], &mut sink)?;
    let y = solver.state();
    // Columns of `frame` are the frame vectors.
    let frame = Mat::from_vec(d, d, y[d..].to_vec()).transpose();
    let scale = (0..d)
        .map(|j| norm2(&y[d + j * d..d + (j + 1) * d]))
        .fold(1.0, f64::max);
    let qr = modified_gram_schmidt(&frame)
        .filter(|(_, r)| r.iter().all(|&rii| rii > MIN_RESIDUAL * scale));
    match qr {
        Some((q, r)) => {
            for (acc, rii) in sums.iter_mut().zip(&r) {
                *acc += rii.ln();
            }
            let mut next = y[..d].to_vec();
            next.extend_from_slice(q.transpose().as_slice());
            solver.set_state(&next);
            Ok(())
        }
        None if depth < MAX_SPLITS => {
            solver.restart(t0, &start);
            let mid = 0.5 * (t0 + t_end);
            advance_window(solver, d, mid, depth + 1, sums)?;
            advance_window(solver, d, t_end, depth + 1, sums)
        }
        None => Err(Error::DegenerateFrame { t: t_end }),
    }
}

/// Spectra from several initial conditions, in input order.
pub fn lyapunov_spectra(
    field: &dyn VectorField,
    ics: &[Vec<f64>],
    horizon: f64,
    reorth_dt: f64,
    ctrl: StepControl,
) -> Result<Vec<LyapunovResult>> {
    ics.par_iter()
        .map(|u0| lyapunov_spectrum(field, u0, horizon, reorth_dt, ctrl))
        .collect()
}

/// Componentwise mean of several spectra.
pub fn mean_spectrum(results: &[LyapunovResult]) -> Vec<f64> {
    let d = results.first().map_or(0, |r| r.exponents.len());
    let mut mean = vec![0.0; d];
    for r in results {
        for (m, e) in mean.iter_mut().zip(&r.exponents) {
            *m += e / results.len() as f64;
        }
    }
    mean
}

//! Short-term accuracy, long-horizon statistics, vector-field and Jacobian
//! errors, Lyapunov spectra and the transport-based selection score.

mod sinkhorn;
mod sweep;

pub use sinkhorn::{sinkhorn_divergence, SinkhornResult};
pub use sweep::{hyperparam_sweep, select_cell, SweepCell, SweepResult, SWEEP_KS, SWEEP_LAMBDAS};

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{derive_seed, sample_on_attractor, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::field::{batch_rhs, VectorField};
use crate::integrate::{lyapunov_spectra, mean_spectrum, StepControl, Tsit5};
use crate::io;
use crate::linalg::Mat;
use crate::systems::{AffineTransform, SystemSpec};
use crate::train::{mmd2_biased, KernelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub vpt_threshold: f64,
    pub attractor_samples: usize,
    /// Length of the long-horizon run in Lyapunov times.
    pub lyapunov_times: f64,
    pub curve_points: usize,
    /// The plateau is the mean of the curve from here to the end.
    pub plateau_start: f64,
    /// Largest ground-truth exponent; estimated from the test split if unset.
    pub lambda_max: Option<f64>,
    pub kernel: KernelConfig,
    /// Absolute entropic regularization; unset uses 5% of the mean cost.
    pub sinkhorn_epsilon: Option<f64>,
    pub sinkhorn_max_iter: usize,
    pub sinkhorn_tol: f64,
    pub sinkhorn_pieces: usize,
    pub lyap_horizon: f64,
    pub lyap_reorth: f64,
    pub lyap_ics: usize,
    pub rel_error_points: usize,
    pub rtol: f64,
    pub atol: f64,
    pub attractor_rtol: f64,
    pub attractor_atol: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            vpt_threshold: 0.3,
            attractor_samples: 5000,
            lyapunov_times: 100.0,
            curve_points: 101,
            plateau_start: 50.0,
            lambda_max: None,
            kernel: KernelConfig::default(),
            sinkhorn_epsilon: None,
            sinkhorn_max_iter: 2000,
            sinkhorn_tol: 1e-6,
            sinkhorn_pieces: 10,
            lyap_horizon: 1000.0,
            lyap_reorth: 1.0,
            lyap_ics: 5,
            rel_error_points: 5000,
            rtol: 1e-8,
            atol: 1e-10,
            attractor_rtol: 1e-6,
            attractor_atol: 1e-8,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.vpt_threshold > 0.0) {
            return Err(Error::arg("VPT threshold must be positive"));
        }
        if let Some(l) = self.lambda_max {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::arg("largest Lyapunov exponent must be positive"));
            }
        }
        if self.attractor_samples < 2 || self.curve_points < 2 || !(self.lyapunov_times > 0.0) {
            return Err(Error::arg("attractor curve needs >= 2 samples and >= 2 times"));
        }
        if !(self.plateau_start >= 0.0 && self.plateau_start <= self.lyapunov_times) {
            return Err(Error::arg("plateau window must lie inside the curve"));
        }
        if self.sinkhorn_pieces == 0 || self.lyap_ics == 0 || self.rel_error_points == 0 {
            return Err(Error::arg("sample counts must be positive"));
        }
        self.kernel.validate()?;
        self.ctrl().validate()?;
        self.attractor_ctrl().validate()
    }

    pub fn ctrl(&self) -> StepControl {
        StepControl::with_tolerances(self.rtol, self.atol)
    }

    pub fn attractor_ctrl(&self) -> StepControl {
        StepControl::with_tolerances(self.attractor_rtol, self.attractor_atol)
    }
}

/// Integrates a batch until `save_at.last()`, returning the states saved
/// before any failure and the failure time. A save time of 0 returns the
/// initial states.
pub fn integrate_until_failure(
    field: &dyn VectorField,
    states: &Mat,
    save_at: &[f64],
    ctrl: StepControl,
) -> Result<(Vec<Mat>, Option<f64>)> {
    let (n, d) = states.shape();
    let mut out: Vec<Mat> = Vec::with_capacity(save_at.len());
    let rest: Vec<f64> = save_at.iter().copied().filter(|&t| t > 0.0).collect();
    out.extend(save_at.iter().filter(|&&t| t <= 0.0).map(|_| states.clone()));
    let Some(&t_end) = rest.last() else {
        return Ok((out, None));
    };
    let mut solver = Tsit5::new(batch_rhs(field), states.as_slice(), 0.0, t_end, ctrl)?;
    let mut raw = Vec::new();
    let failure = match solver.advance(t_end, &rest, &mut raw) {
        Ok(()) => None,
        Err(Error::Divergence { t, .. })
        | Err(Error::Stiffness { t, .. })
        | Err(Error::NonFinite { t }) => Some(t),
        Err(e) => return Err(e),
    };
    out.extend(raw.into_iter().map(|v| Mat::from_vec(n, d, v)));
    Ok((out, failure))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VptResult {
    /// Times `dt, 2dt, ...` of the curve points.
    pub times: Vec<f64>,
    /// Per trajectory; infinite after a model divergence.
    pub nrmse: Vec<Vec<f64>>,
    pub mean_curve: Vec<f64>,
    /// In Lyapunov times.
    pub vpt: Vec<f64>,
    pub vpt_mean: f64,
    pub diverged: Vec<bool>,
}

/// Largest `T` (in Lyapunov times) such that every error up to `T` is within
/// the threshold; `curve[j]` is the error at time `(j+1) dt`.
pub fn vpt_from_curve(curve: &[f64], dt: f64, lambda_max: f64, threshold: f64) -> f64 {
    let ok = curve.iter().take_while(|&&e| e <= threshold).count();
    lambda_max * ok as f64 * dt
}

fn require_clean(ds: &TrajectoryDataset) -> Result<&[f64]> {
    ds.clean_states()
}

/// NRMSE curves and valid prediction times of the model started from each
/// trajectory's first clean state.
pub fn nrmse_vpt(
    model: &dyn VectorField,
    test: &TrajectoryDataset,
    lambda_max: f64,
    threshold: f64,
    ctrl: StepControl,
) -> Result<VptResult> {
    let clean = require_clean(test)?;
    let (n, m, d) = (test.n, test.m, test.d);
    if model.dim() != d {
        return Err(Error::arg("model and dataset dimensions differ"));
    }
    if m < 2 {
        return Err(Error::arg("trajectories need at least two points"));
    }
    let times: Vec<f64> = (1..m).map(|j| j as f64 * test.dt).collect();
    let per: Vec<Result<(Vec<f64>, bool)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let at = |j: usize| &clean[(i * m + j) * d..(i * m + j + 1) * d];
            let (saved, fail) =
                integrate_until_failure(model, &Mat::row_vector(at(0)), &times, ctrl)?;
            let mut curve: Vec<f64> = saved
                .iter()
                .enumerate()
                .map(|(q, s)| {
                    let e: f64 = s.row(0).iter().zip(at(q + 1)).map(|(a, b)| (a - b) * (a - b)).sum();
                    (e / d as f64).sqrt()
                })
                .collect();
            curve.resize(times.len(), f64::INFINITY);
            Ok((curve, fail.is_some()))
        })
        .collect();
    let mut nrmse = Vec::with_capacity(n);
    let mut diverged = Vec::with_capacity(n);
    for p in per {
        let (c, dv) = p?;
        nrmse.push(c);
        diverged.push(dv);
    }
    let mean_curve = (0..times.len())
        .map(|j| nrmse.iter().map(|c| c[j]).sum::<f64>() / n as f64)
        .collect();
    let vpt: Vec<f64> = nrmse
        .iter()
        .map(|c| vpt_from_curve(c, test.dt, lambda_max, threshold))
        .collect();
    let vpt_mean = vpt.iter().sum::<f64>() / n as f64;
    Ok(VptResult {
        times,
        nrmse,
        mean_curve,
        vpt,
        vpt_mean,
        diverged,
    })
}

/// `n` on-attractor states of `spec`, mapped through `transform`.
pub fn sample_attractor(spec: &SystemSpec, transform: &AffineTransform, n: usize, seed: u64) -> Result<Mat> {
    let raw = sample_on_attractor(spec, n, seed)?;
    Ok(Mat::from_rows(&raw.iter().map(|u| transform.apply(u)).collect::<Vec<_>>()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmdCurve {
    /// Full grid, in Lyapunov times.
    pub lyapunov_times: Vec<f64>,
    /// Truncated at a divergence.
    pub values: Vec<f64>,
    /// Mean over the plateau window; infinite if the run diverged.
    pub plateau: f64,
    pub diverged: bool,
}

fn curve_grid(cfg: &EvalConfig) -> Vec<f64> {
    let q = cfg.curve_points - 1;
    (0..=q).map(|i| cfg.lyapunov_times * i as f64 / q as f64).collect()
}

fn plateau_mean(grid: &[f64], values: &[f64], start: f64) -> f64 {
    let w: Vec<f64> = grid
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= start)
        .map(|(_, v)| *v)
        .collect();
    w.iter().sum::<f64>() / w.len() as f64
}

/// Squared MMD (V-statistic, so identical sets give exactly zero) between a
/// cloud evolved by the model and the same cloud evolved by the truth, on a
/// uniform grid in Lyapunov time.
pub fn attractor_mmd_curve(
    model: &dyn VectorField,
    truth: &dyn VectorField,
    initial: &Mat,
    lambda_max: f64,
    cfg: &EvalConfig,
) -> Result<MmdCurve> {
    let grid = curve_grid(cfg);
    let save: Vec<f64> = grid.iter().map(|t| t / lambda_max).collect();
    let ctrl = cfg.attractor_ctrl();
    let (truth_states, tf) = integrate_until_failure(truth, initial, &save, ctrl)?;
    if let Some(t) = tf {
        return Err(Error::Divergence {
            t,
            last_state: Vec::new(),
        });
    }
    let (model_states, mf) = integrate_until_failure(model, initial, &save, ctrl)?;
    let values: Vec<f64> = model_states
        .par_iter()
        .zip(&truth_states[..model_states.len()])
        .map(|(a, b)| mmd2_biased(a, b, &cfg.kernel))
        .collect();
    let diverged = mf.is_some() || values.iter().any(|v| !v.is_finite());
    let plateau = if diverged {
        f64::INFINITY
    } else {
        plateau_mean(&grid, &values, cfg.plateau_start)
    };
    Ok(MmdCurve {
        lyapunov_times: grid,
        values,
        plateau,
        diverged,
    })
}

/// Plateau-window mean of the squared MMD between two independent samples,
/// both evolved by the truth.
pub fn baseline_mmd(
    truth: &dyn VectorField,
    a: &Mat,
    b: &Mat,
    lambda_max: f64,
    cfg: &EvalConfig,
) -> Result<f64> {
    let grid = curve_grid(cfg);
    let save: Vec<f64> = grid.iter().map(|t| t / lambda_max).collect();
    let stacked = Mat::vstack(&[a.clone(), b.clone()]);
    let (states, fail) = integrate_until_failure(truth, &stacked, &save, cfg.attractor_ctrl())?;
    if let Some(t) = fail {
        return Err(Error::Divergence {
            t,
            last_state: Vec::new(),
        });
    }
    let na = a.rows();
    let d = a.cols();
    let values: Vec<f64> = states
        .par_iter()
        .map(|s| {
            let x = Mat::from_vec(na, d, s.as_slice()[..na * d].to_vec());
            let y = Mat::from_vec(s.rows() - na, d, s.as_slice()[na * d..].to_vec());
            mmd2_biased(&x, &y, &cfg.kernel)
        })
        .collect();
    Ok(plateau_mean(&grid, &values, cfg.plateau_start))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelErrors {
    /// Point indices (into the input) that were scored.
    pub points: Vec<usize>,
    pub vf: Vec<f64>,
    pub jac: Vec<f64>,
    /// Points where the true field vanishes.
    pub skipped: usize,
}

/// Relative field error `|f - g| / |g|` and relative Jacobian error in the
/// Frobenius norm at each point, `g` being the truth.
pub fn relative_errors(model: &dyn VectorField, truth: &dyn VectorField, points: &Mat) -> Result<RelErrors> {
    if model.dim() != truth.dim() || points.cols() != truth.dim() {
        return Err(Error::arg("model, truth and points must share a dimension"));
    }
    let per: Vec<Option<(usize, f64, f64)>> = (0..points.rows())
        .into_par_iter()
        .map(|p| {
            let u = points.row(p);
            let g = truth.eval(u);
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gn == 0.0 {
                return None;
            }
            let f = model.eval(u);
            let vf = f.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / gn;
            let jt = truth.jacobian(u);
            let jm = model.jacobian(u);
            let jac = jm.sub(&jt).frobenius_norm() / jt.frobenius_norm();
            Some((p, vf, jac))
        })
        .collect();
    let skipped = per.iter().filter(|p| p.is_none()).count();
    if skipped > 0 {
        log::warn!("{skipped} points with a vanishing true field were skipped");
    }
    let kept: Vec<_> = per.into_iter().flatten().collect();
    Ok(RelErrors {
        points: kept.iter().map(|k| k.0).collect(),
        vf: kept.iter().map(|k| k.1).collect(),
        jac: kept.iter().map(|k| k.2).collect(),
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovComparison {
    /// Empty if the model diverged.
    pub model: Vec<f64>,
    pub truth: Vec<f64>,
    /// Infinite if the model diverged.
    pub mae: f64,
}

/// Mean spectra over `ics` for both fields and their mean absolute
/// difference.
pub fn lyapunov_mae(
    model: &dyn VectorField,
    truth: &dyn VectorField,
    ics: &[Vec<f64>],
    horizon: f64,
    reorth_dt: f64,
    ctrl: StepControl,
) -> Result<LyapunovComparison> {
    let truth_spec = mean_spectrum(&lyapunov_spectra(truth, ics, horizon, reorth_dt, ctrl)?);
    compare_spectra(model, truth_spec, ics, horizon, reorth_dt, ctrl)
}

fn compare_spectra(
    model: &dyn VectorField,
    truth: Vec<f64>,
    ics: &[Vec<f64>],
    horizon: f64,
    reorth_dt: f64,
    ctrl: StepControl,
) -> Result<LyapunovComparison> {
    match lyapunov_spectra(model, ics, horizon, reorth_dt, ctrl) {
        Ok(r) => {
            let model = mean_spectrum(&r);
            let mae = model.iter().zip(&truth).map(|(a, b)| (a - b).abs()).sum::<f64>()
                / truth.len() as f64;
            Ok(LyapunovComparison { model, truth, mae })
        }
        Err(Error::Argument(e)) => Err(Error::Argument(e)),
        Err(e) => {
            log::warn!("model spectrum failed: {e}");
            Ok(LyapunovComparison {
                model: Vec::new(),
                truth,
                mae: f64::INFINITY,
            })
        }
    }
}

/// Cuts each clean validation trajectory into `pieces` segments of one
/// timescale (the last piece ends at the final sample), evolves each
/// segment's first state with the model and compares endpoint clouds.
pub fn sinkhorn_score(model: &dyn VectorField, val: &TrajectoryDataset, cfg: &EvalConfig) -> Result<SinkhornResult> {
    let clean = require_clean(val)?;
    let (n, m, d) = (val.n, val.m, val.d);
    let len = ((val.tau / val.dt).round() as usize).max(1);
    let mut groups: std::collections::BTreeMap<usize, (Vec<f64>, Vec<f64>)> = Default::default();
    for i in 0..n {
        for q in 0..cfg.sinkhorn_pieces {
            let j0 = q * len;
            if j0 >= m - 1 {
                break;
            }
            let j1 = (j0 + len).min(m - 1);
            let g = groups.entry(j1 - j0).or_default();
            g.0.extend_from_slice(&clean[(i * m + j0) * d..(i * m + j0 + 1) * d]);
            g.1.extend_from_slice(&clean[(i * m + j1) * d..(i * m + j1 + 1) * d]);
        }
    }
    let mut data = Vec::new();
    let mut pred = Vec::new();
    for (steps, (starts, ends)) in groups {
        let rows = starts.len() / d;
        let s = Mat::from_vec(rows, d, starts);
        let (out, fail) = integrate_until_failure(model, &s, &[steps as f64 * val.dt], cfg.ctrl())?;
        if fail.is_some() {
            return Ok(SinkhornResult {
                value: f64::INFINITY,
                epsilon: f64::NAN,
                converged: false,
            });
        }
        data.extend(ends);
        pred.extend(out[0].as_slice());
    }
    let rows = data.len() / d;
    sinkhorn_divergence(
        &Mat::from_vec(rows, d, data),
        &Mat::from_vec(rows, d, pred),
        cfg.sinkhorn_epsilon,
        cfg.sinkhorn_max_iter,
        cfg.sinkhorn_tol,
    )
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let h = s.len() / 2;
    if s.len() % 2 == 1 {
        s[h]
    } else {
        0.5 * (s[h - 1] + s[h])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Scalar summary written to `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub lambda_max: f64,
    pub vpt_mean: f64,
    pub vpt_std: f64,
    pub vpt_diverged: usize,
    pub mmd_plateau: Option<f64>,
    pub mmd_diverged: bool,
    pub baseline_mmd2: f64,
    pub rel_vf_median: f64,
    pub rel_vf_mean: f64,
    pub rel_jac_median: f64,
    pub rel_jac_mean: f64,
    pub rel_skipped: usize,
    pub lyapunov_model: Vec<f64>,
    pub lyapunov_truth: Vec<f64>,
    pub lyapunov_mae: Option<f64>,
    pub sinkhorn_score: Option<f64>,
    pub sinkhorn_converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub vpt: VptResult,
    pub mmd: MmdCurve,
    pub rel: RelErrors,
    pub lyapunov: LyapunovComparison,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn spaced<T: Copy>(all: &[T], max: usize) -> Vec<T> {
    if all.len() <= max {
        return all.to_vec();
    }
    (0..max).map(|q| all[q * all.len() / max]).collect()
}

/// The full suite against the clean test split (and clean validation split
/// for the transport score).
pub fn evaluate(
    model: &dyn VectorField,
    test: &TrajectoryDataset,
    val: &TrajectoryDataset,
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    cfg.validate()?;
    let clean = require_clean(test)?.to_vec();
    require_clean(val)?;
    let truth = test.ground_truth()?;
    let spec = test.spec()?;
    let d = test.d;
    let clock = std::time::Instant::now();
    let lap = |phase: &str| log::info!("eval {phase}: {:.1} s", clock.elapsed().as_secs_f64());

    let ics: Vec<Vec<f64>> = (0..test.n.min(cfg.lyap_ics))
        .map(|i| clean[i * test.m * d..(i * test.m + 1) * d].to_vec())
        .collect();
    let truth_runs = lyapunov_spectra(&truth, &ics, cfg.lyap_horizon, cfg.lyap_reorth, cfg.ctrl())?;
    let truth_spec = mean_spectrum(&truth_runs);
    let lambda_max = match cfg.lambda_max {
        Some(l) => l,
        None => truth_spec[0],
    };
    if !(lambda_max > 0.0) {
        return Err(Error::Estimation(format!(
            "largest Lyapunov exponent {lambda_max} is not positive"
        )));
    }
    let lyapunov = compare_spectra(model, truth_spec, &ics, cfg.lyap_horizon, cfg.lyap_reorth, cfg.ctrl())?;
    lap("lyapunov");

    let vpt = nrmse_vpt(model, test, lambda_max, cfg.vpt_threshold, cfg.ctrl())?;
    lap("valid prediction time");

    let sample = sample_attractor(&spec, &test.transform, cfg.attractor_samples, derive_seed(cfg.seed, "eval/attractor"))?;
    let mmd = attractor_mmd_curve(model, &truth, &sample, lambda_max, cfg)?;
    let other = sample_attractor(&spec, &test.transform, cfg.attractor_samples, derive_seed(cfg.seed, "eval/baseline"))?;
    let baseline = baseline_mmd(&truth, &sample, &other, lambda_max, cfg)?;
    lap("attractor");

    let all: Vec<usize> = (0..test.n * test.m).collect();
    let idx = spaced(&all, cfg.rel_error_points);
    let pts = Mat::from_rows(&idx.iter().map(|&g| &clean[g * d..(g + 1) * d]).collect::<Vec<_>>());
    let mut rel = relative_errors(model, &truth, &pts)?;
    rel.points = rel.points.iter().map(|&p| idx[p]).collect();
    lap("relative errors");

    let sk = sinkhorn_score(model, val, cfg)?;
    lap("sinkhorn");

    let vpt_std = {
        let mu = vpt.vpt_mean;
        (vpt.vpt.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / vpt.vpt.len() as f64).sqrt()
    };
    let report = EvalReport {
        lambda_max,
        vpt_mean: vpt.vpt_mean,
        vpt_std,
        vpt_diverged: vpt.diverged.iter().filter(|&&x| x).count(),
        mmd_plateau: finite(mmd.plateau),
        mmd_diverged: mmd.diverged,
        baseline_mmd2: baseline,
        rel_vf_median: median(&rel.vf),
        rel_vf_mean: mean(&rel.vf),
        rel_jac_median: median(&rel.jac),
        rel_jac_mean: mean(&rel.jac),
        rel_skipped: rel.skipped,
        lyapunov_model: lyapunov.model.clone(),
        lyapunov_truth: lyapunov.truth.clone(),
        lyapunov_mae: finite(lyapunov.mae),
        sinkhorn_score: finite(sk.value),
        sinkhorn_converged: sk.converged,
    };
    Ok(Evaluation {
        report,
        vpt,
        mmd,
        rel,
        lyapunov,
    })
}

impl Evaluation {
    /// Writes `report.json`, `nrmse.csv`, `mmd_curve.csv`, `rel_errors.csv`
    /// and `lyapunov.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        io::ensure_dir(dir)?;
        io::write_json(&dir.join("report.json"), &self.report)?;
        let lam = self.report.lambda_max;
        let mut s = String::from("time,lyapunov_time,mean_nrmse\n");
        for (t, v) in self.vpt.times.iter().zip(&self.vpt.mean_curve) {
            let _ = writeln!(s, "{t:e},{:e},{v:e}", t * lam);
        }
        io::write_text(&dir.join("nrmse.csv"), &s)?;
        let mut s = String::from("lyapunov_time,mmd2\n");
        for (t, v) in self.mmd.lyapunov_times.iter().zip(&self.mmd.values) {
            let _ = writeln!(s, "{t:e},{v:e}");
        }
        io::write_text(&dir.join("mmd_curve.csv"), &s)?;
        let mut s = String::from("point,vf_error,jac_error\n");
        for ((p, a), b) in self.rel.points.iter().zip(&self.rel.vf).zip(&self.rel.jac) {
            let _ = writeln!(s, "{p},{a:e},{b:e}");
        }
        io::write_text(&dir.join("rel_errors.csv"), &s)?;
        let mut s = String::from("index,model,truth\n");
        for (r, t) in self.lyapunov.truth.iter().enumerate() {
            let m = self.lyapunov.model.get(r).map(|v| format!("{v:e}")).unwrap_or_default();
            let _ = writeln!(s, "{r},{m},{t:e}");
        }
        io::write_text(&dir.join("lyapunov.csv"), &s)
    }
}

//! Tsitouras 5(4) embedded pair with PI step-size control and cubic Hermite
//! dense output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const A21: f64 = 0.161;
const A31: f64 = -0.008480655492356989;
const A32: f64 = 0.335480655492357;
const A41: f64 = 2.897153057105493;
const A42: f64 = -6.359448489975075;
const A43: f64 = 4.3622954328695815;
const A51: f64 = 5.325864828439257;
const A52: f64 = -11.748883564062828;
const A53: f64 = 7.4955393428898365;
const A54: f64 = -0.09249506636175525;
const A61: f64 = 5.86145544294642;
const A62: f64 = -12.92096931784711;
const A63: f64 = 8.159367898576159;
const A64: f64 = -0.071584973281401;
const A65: f64 = -0.028269050394068383;
// Fifth-order weights (FSAL: last stage is evaluated at the new state).
const B1: f64 = 0.09646076681806523;
const B2: f64 = 0.01;
const B3: f64 = 0.4798896504144996;
const B4: f64 = 1.379008574103742;
const B5: f64 = -3.290069515436081;
const B6: f64 = 2.324710524099774;
// Difference between the fifth- and fourth-order weights.
const E1: f64 = -0.001_780_011_052_225_777;
const E2: f64 = -0.0008164344596567469;
const E3: f64 = 0.007880878010261995;
const E4: f64 = -0.1447110071732629;
const E5: f64 = 0.5823571654525552;
const E6: f64 = -0.45808210592918697;
const E7: f64 = 1.0 / 66.0;

const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;
const SHRINK_MIN: f64 = 0.2;
const GROW_MAX: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub dt_init: f64,
    pub dt_max: f64,
    pub safety: f64,
}

impl StepControl {
    /// Tolerances for data generation and ground-truth evaluation.
    pub fn generation() -> Self {
        StepControl::with_tolerances(1e-8, 1e-10)
    }

    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        StepControl {
            rtol,
            atol,
            dt_init: 1e-3,
            dt_max: f64::INFINITY,
            safety: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::arg("tolerances must be positive"));
        }
        if !(self.dt_init > 0.0 && self.dt_init <= self.dt_max) {
            return Err(Error::arg("need 0 < dt_init <= dt_max"));
        }
        if !(self.safety > 0.0 && self.safety < 1.0) {
            return Err(Error::arg("safety factor must lie in (0, 1)"));
        }
        Ok(())
    }
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl::generation()
    }
}

/// A stateful adaptive integrator that can be advanced in pieces, keeping
/// its step size between calls.
pub struct Tsit5<'f> {
    field: Box<dyn FnMut(&[f64], &mut [f64]) + 'f>,
    ctrl: StepControl,
    t: f64,
    u: Vec<f64>,
    f: Vec<f64>,
    dt: f64,
    err_prev: f64,
    min_dt: f64,
    stages: [Vec<f64>; 7],
    tmp: Vec<f64>,
    steps: usize,
}

impl<'f> Tsit5<'f> {
    /// `span` is the total integration length, used for the step-size
    /// underflow threshold.
    pub fn new(
        field: impl FnMut(&[f64], &mut [f64]) + 'f,
        u0: &[f64],
        t0: f64,
        span: f64,
        ctrl: StepControl,
    ) -> Result<Self> {
        ctrl.validate()?;
        let n = u0.len();
        let mut s = Tsit5 {
            field: Box::new(field),
            ctrl,
            t: t0,
            u: u0.to_vec(),
            f: vec![0.0; n],
            dt: ctrl.dt_init.min(ctrl.dt_max),
            err_prev: 1e-4,
            min_dt: 1e-14 * span.abs(),
            stages: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            steps: 0,
        };
        if !u0.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { t: t0 });
        }
        s.refresh();
        Ok(s)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> &[f64] {
        &self.u
    }

    pub fn accepted_steps(&self) -> usize {
        self.steps
    }

    /// Replaces the current state (e.g. after reorthonormalization).
    pub fn set_state(&mut self, u: &[f64]) {
        self.u.copy_from_slice(u);
        self.refresh();
    }

    /// Rewinds to time `t` with state `u`, keeping the step-size history.
    pub fn restart(&mut self, t: f64, u: &[f64]) {
        self.t = t;
        self.set_state(u);
    }

    fn refresh(&mut self) {
        let mut f = std::mem::take(&mut self.f);
        (self.field)(&self.u, &mut f);
        self.f = f;
    }

    /// Advances to exactly `t_end`, writing states at the (ascending)
    /// `save_at` times lying in `(t, t_end]` through dense output.
    pub fn advance(&mut self, t_end: f64, save_at: &[f64], out: &mut Vec<Vec<f64>>) -> Result<()> {
        let mut next_save = save_at.iter().position(|&s| s > self.t).unwrap_or(save_at.len());
        while self.t < t_end {
            let remaining = t_end - self.t;
            let last = self.dt >= remaining;
            let h = if last { remaining } else { self.dt };
            let (err, u_new) = self.try_step(h);
            if !u_new.iter().all(|v| v.is_finite()) || !err.is_finite() {
                if h <= self.min_dt {
                    return Err(Error::Divergence {
                        t: self.t,
                        last_state: self.u.clone(),
                    });
                }
                self.dt = h * SHRINK_MIN;
                continue;
            }
            if err <= 1.0 {
                let mut f_new = vec![0.0; self.u.len()];
                (self.field)(&u_new, &mut f_new);
                if !f_new.iter().all(|v| v.is_finite()) {
                    return Err(Error::Divergence {
                        t: self.t,
                        last_state: self.u.clone(),
                    });
                }
                let t_new = if last { t_end } else { self.t + h };
                while next_save < save_at.len() && save_at[next_save] <= t_new {
                    let ts = save_at[next_save];
                    out.push(hermite(&self.u, &self.f, &u_new, &f_new, self.t, t_new, ts));
                    next_save += 1;
                }
                let fac11 = err.max(1e-10).powf(EXPO1);
                let fac = (fac11 / self.err_prev.powf(BETA) / self.ctrl.safety)
                    .clamp(1.0 / GROW_MAX, 1.0 / SHRINK_MIN);
                if !last || h == self.dt {
                    self.dt = (h / fac).min(self.ctrl.dt_max);
                }
                self.err_prev = err.max(1e-4);
                self.t = t_new;
                self.u = u_new;
                self.f = f_new;
                self.steps += 1;
            } else {
                let fac11 = err.powf(EXPO1);
                self.dt = h / (fac11 / self.ctrl.safety).min(1.0 / SHRINK_MIN);
                if self.dt < self.min_dt {
                    return Err(Error::Stiffness {
                        t: self.t,
                        dt: self.dt,
                    });
                }
            }
        }
        Ok(())
    }

    fn try_step(&mut self, h: f64) -> (f64, Vec<f64>) {
        let n = self.u.len();
        let u = &self.u;
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.stages;
        k1.copy_from_slice(&self.f);
        let tmp = &mut self.tmp;
        let field = &mut self.field;

        for i in 0..n {
            tmp[i] = u[i] + h * A21 * k1[i];
        }
        field(tmp, k2);
        for i in 0..n {
            tmp[i] = u[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        field(tmp, k3);
        for i in 0..n {
            tmp[i] = u[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        field(tmp, k4);
        for i in 0..n {
            tmp[i] = u[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        field(tmp, k5);
        for i in 0..n {
            tmp[i] = u[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        field(tmp, k6);
        let u_new: Vec<f64> = (0..n)
            .map(|i| {
                u[i] + h
                    * (B1 * k1[i] + B2 * k2[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i])
            })
            .collect();
        field(&u_new, k7);
        let mut acc = 0.0;
        for i in 0..n {
            let e = h
                * (E1 * k1[i]
                    + E2 * k2[i]
                    + E3 * k3[i]
                    + E4 * k4[i]
                    + E5 * k5[i]
                    + E6 * k6[i]
                    + E7 * k7[i]);
            let sc = self.ctrl.atol + self.ctrl.rtol * u[i].abs().max(u_new[i].abs());
            acc += (e / sc) * (e / sc);
        }
        let err = (acc / n.max(1) as f64).sqrt();
        (err, u_new)
    }
}

fn hermite(u0: &[f64], f0: &[f64], u1: &[f64], f1: &[f64], t0: f64, t1: f64, t: f64) -> Vec<f64> {
    let h = t1 - t0;
    let th = ((t - t0) / h).clamp(0.0, 1.0);
    let th2 = th * th;
    let th3 = th2 * th;
    let h01 = -2.0 * th3 + 3.0 * th2;
    let h10 = th3 - 2.0 * th2 + th;
    let h11 = th3 - th2;
    (0..u0.len())
        .map(|i| u0[i] + h01 * (u1[i] - u0[i]) + h * (h10 * f0[i] + h11 * f1[i]))
        .collect()
}

/// Integrates `du/dt = field(u)` over `t_span`, returning the states at the
/// ascending `save_at` times (which must lie in `[t0, t1]`).
pub fn integrate_adaptive(
    field: impl FnMut(&[f64], &mut [f64]),
    u0: &[f64],
    t_span: (f64, f64),
    ctrl: StepControl,
    save_at: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let (t0, t1) = t_span;
    if !(t1 > t0) {
        return Err(Error::arg("need t1 > t0"));
    }
    if save_at.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::arg("save_at must be ascending"));
    }
    if save_at.iter().any(|&s| s < t0 || s > t1) {
        return Err(Error::arg("save_at must lie inside the time span"));
    }
    let mut out = Vec::with_capacity(save_at.len());
    let mut start = 0;
    while start < save_at.len() && save_at[start] == t0 {
        out.push(u0.to_vec());
        start += 1;
    }
    let mut solver = Tsit5::new(field, u0, t0, t1 - t0, ctrl)?;
    solver.advance(t1, &save_at[start..], &mut out)?;
    Ok(out)
}

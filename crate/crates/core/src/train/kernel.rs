use serde::{Deserialize, Serialize};

use crate::autodiff::BlockObjective;
use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Mixture of rational quadratic kernels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub bandwidths: Vec<f64>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            bandwidths: vec![0.2, 0.5, 0.9, 1.3],
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bandwidths.is_empty() || self.bandwidths.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::arg("kernel bandwidths must be positive"));
        }
        Ok(())
    }

    #[inline]
    fn eval_d2(&self, d2: f64) -> f64 {
        self.bandwidths
            .iter()
            .map(|s| {
                let s2 = s * s;
                s2 / (s2 + d2)
            })
            .sum()
    }

    /// Kernel value and its derivative with respect to the squared distance.
    #[inline]
    fn eval_d2_with_slope(&self, d2: f64) -> (f64, f64) {
        let mut k = 0.0;
        let mut dk = 0.0;
        for s in &self.bandwidths {
            let s2 = s * s;
            let q = 1.0 / (s2 + d2);
            k += s2 * q;
            dk -= s2 * q * q;
        }
        (k, dk)
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn rq_kernel(u: &[f64], v: &[f64], cfg: &KernelConfig) -> f64 {
    cfg.eval_d2(sq_dist(u, v))
}

fn cross_sum(x: &Mat, y: &Mat, cfg: &KernelConfig) -> f64 {
    let mut s = 0.0;
    for i in 0..x.rows() {
        for j in 0..y.rows() {
            s += cfg.eval_d2(sq_dist(x.row(i), y.row(j)));
        }
    }
    s
}

fn within_offdiag_sum(x: &Mat, cfg: &KernelConfig) -> f64 {
    let mut s = 0.0;
    for i in 0..x.rows() {
        for j in i + 1..x.rows() {
            s += cfg.eval_d2(sq_dist(x.row(i), x.row(j)));
        }
    }
    2.0 * s
}

/// Paired estimator: within-sample sums exclude the diagonal and are
/// normalized by `K(K-1)`; the cross sum is normalized by `K^2`. It can be
/// negative.
pub fn mmd2(x: &Mat, y: &Mat, cfg: &KernelConfig) -> Result<f64> {
    check_samples(x, y)?;
    Ok(mmd2_unchecked(x, y, cfg))
}

fn check_samples(x: &Mat, y: &Mat) -> Result<()> {
    if x.rows() < 2 || y.rows() < 2 {
        return Err(Error::arg("MMD needs at least two samples per set"));
    }
    if x.rows() != y.rows() || x.cols() != y.cols() {
        return Err(Error::arg("MMD sample sets must have equal shapes"));
    }
    Ok(())
}

fn mmd2_unchecked(x: &Mat, y: &Mat, cfg: &KernelConfig) -> f64 {
    let k = x.rows() as f64;
    let within = 1.0 / (k * (k - 1.0));
    within * within_offdiag_sum(x, cfg) + within * within_offdiag_sum(y, cfg)
        - 2.0 / (k * k) * cross_sum(x, y, cfg)
}

/// V-statistic: diagonals included, every sum normalized by the squared
/// sample count. Non-negative.
pub fn mmd2_biased(x: &Mat, y: &Mat, cfg: &KernelConfig) -> f64 {
    let (n, m) = (x.rows() as f64, y.rows() as f64);
    cross_sum(x, x, cfg) / (n * n) + cross_sum(y, y, cfg) / (m * m)
        - 2.0 * cross_sum(x, y, cfg) / (n * m)
}

/// The paired estimator as a fused block reduction.
#[derive(Clone, Debug)]
pub struct Mmd2Objective {
    pub kernel: KernelConfig,
}

impl BlockObjective for Mmd2Objective {
    fn value(&self, x: &Mat, y: &Mat) -> f64 {
        mmd2_unchecked(x, y, &self.kernel)
    }

    fn value_and_grad(&self, x: &Mat, y: &Mat) -> (f64, Mat, Mat) {
        let k = x.rows();
        let d = x.cols();
        let kf = k as f64;
        let w_in = 1.0 / (kf * (kf - 1.0));
        let w_x = -2.0 / (kf * kf);
        let mut gx = Mat::zeros(k, d);
        let mut gy = Mat::zeros(k, d);
        let mut value = 0.0;
        // Pair (a, b) with weight w contributes w * k(|a-b|^2); its gradient
        // with respect to a is w * k' * 2 (a - b).
        let pair = |a: &[f64], b: &[f64], w: f64| -> (f64, f64) {
            let (kv, dk) = self.kernel.eval_d2_with_slope(sq_dist(a, b));
            (w * kv, 2.0 * w * dk)
        };
        for i in 0..k {
            for j in i + 1..k {
                for (m, g, w) in [(x, &mut gx, w_in), (y, &mut gy, w_in)] {
                    let (v, c) = pair(m.row(i), m.row(j), 2.0 * w);
                    value += v;
                    for c_ in 0..d {
                        let diff = m[(i, c_)] - m[(j, c_)];
                        g[(i, c_)] += c * diff;
                        g[(j, c_)] -= c * diff;
                    }
                }
            }
        }
        for i in 0..k {
            for j in 0..k {
                let (v, c) = pair(x.row(i), y.row(j), w_x);
                value += v;
                for c_ in 0..d {
                    let diff = x[(i, c_)] - y[(j, c_)];
                    gx[(i, c_)] += c * diff;
                    gy[(j, c_)] -= c * diff;
                }
            }
        }
        (value, gx, gy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_examples() {
        let cfg = KernelConfig::default();
        assert_eq!(rq_kernel(&[1.0, 2.0], &[1.0, 2.0], &cfg), 4.0);
        let v = rq_kernel(&[0.0, 0.0], &[1.0, 0.0], &cfg);
        assert!((v - 1.314229).abs() < 1e-6, "{v}");
        let (a, b) = ([0.3, -1.0], [2.0, 0.7]);
        assert_eq!(rq_kernel(&a, &b, &cfg), rq_kernel(&b, &a, &cfg));
    }

    #[test]
    fn two_point_expansion() {
        let cfg = KernelConfig::default();
        let x = Mat::from_rows(&[[0.0, 0.0], [1.0, 0.0]]);
        let v = mmd2(&x, &x, &cfg).unwrap();
        assert!((v + 2.685771).abs() < 1e-6, "{v}");
        let a = Mat::from_rows(&[[0.5, 0.5], [0.5, 0.5]]);
        assert!(mmd2(&a, &a, &cfg).unwrap().abs() < 1e-15);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let cfg = KernelConfig::default();
        let x = Mat::from_rows(&[[0.0, 0.0]]);
        assert!(mmd2(&x, &x, &cfg).is_err());
    }

    #[test]
    fn biased_estimator_vanishes_on_equal_sets() {
        let cfg = KernelConfig::default();
        let x = Mat::from_rows(&[[0.0, 1.0], [2.0, 0.5], [1.0, 1.0]]);
        assert!(mmd2_biased(&x, &x, &cfg).abs() < 1e-14);
        let y = Mat::from_rows(&[[3.0, 1.0], [2.0, -0.5], [0.0, 0.0]]);
        assert!(mmd2_biased(&x, &y, &cfg) > 0.0);
    }

    #[test]
    fn fused_gradient_matches_finite_differences() {
        let obj = Mmd2Objective {
            kernel: KernelConfig::default(),
        };
        let x = Mat::from_rows(&[[0.1, 0.4], [0.9, -0.3], [0.2, 0.2]]);
        let y = Mat::from_rows(&[[0.0, 0.5], [1.1, -0.1], [-0.4, 0.3]]);
        let (v, gx, gy) = obj.value_and_grad(&x, &y);
        assert!((v - obj.value(&x, &y)).abs() < 1e-14);
        let h = 1e-6;
        for (which, g) in [(0, &gx), (1, &gy)] {
            for i in 0..3 {
                for c in 0..2 {
                    let (mut xp, mut yp) = (x.clone(), y.clone());
                    let (mut xm, mut ym) = (x.clone(), y.clone());
                    if which == 0 {
                        xp[(i, c)] += h;
                        xm[(i, c)] -= h;
                    } else {
                        yp[(i, c)] += h;
                        ym[(i, c)] -= h;
                    }
                    let fd = (obj.value(&xp, &yp) - obj.value(&xm, &ym)) / (2.0 * h);
                    assert!((fd - g[(i, c)]).abs() < 1e-8, "{fd} vs {}", g[(i, c)]);
                }
            }
        }
    }
}

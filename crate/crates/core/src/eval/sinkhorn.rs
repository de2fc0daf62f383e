use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornResult {
    pub value: f64,
    pub epsilon: f64,
    /// False if any of the three transport problems hit the iteration cap.
    pub converged: bool,
}

fn cost(x: &Mat, y: &Mat) -> Mat {
    let mut c = Mat::zeros(x.rows(), y.rows());
    for i in 0..x.rows() {
        for j in 0..y.rows() {
            c[(i, j)] = x.row(i).iter().zip(y.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    }
    c
}

fn log_sum_exp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Entropic transport cost `<a, f> + <b, g>` at the dual optimum, uniform
/// weights, log-domain updates.
fn entropic_ot(c: &Mat, eps: f64, max_iter: usize, tol: f64) -> (f64, bool) {
    let (n, m) = c.shape();
    let (la, lb) = (-(n as f64).ln(), -(m as f64).ln());
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut converged = false;
    for it in 0..max_iter {
        for i in 0..n {
            let row = c.row(i);
            f[i] = -eps * log_sum_exp((0..m).map(|j| lb + (g[j] - row[j]) / eps));
        }
        for j in 0..m {
            g[j] = -eps * log_sum_exp((0..n).map(|i| la + (f[i] - c[(i, j)]) / eps));
        }
        if it % 5 == 4 || it + 1 == max_iter {
            let mut err = 0.0;
            for i in 0..n {
                let row = c.row(i);
                let r: f64 = (0..m)
                    .map(|j| (la + lb + (f[i] + g[j] - row[j]) / eps).exp())
                    .sum();
                err += (r - 1.0 / n as f64).abs();
            }
            if err <= tol {
                converged = true;
                break;
            }
        }
    }
    let value = f.iter().sum::<f64>() / n as f64 + g.iter().sum::<f64>() / m as f64;
    (value, converged)
}

/// Debiased divergence `OT(X,Y) - OT(X,X)/2 - OT(Y,Y)/2` with squared
/// Euclidean cost. `eps = None` uses 5% of the mean cross cost.
pub fn sinkhorn_divergence(
    x: &Mat,
    y: &Mat,
    eps: Option<f64>,
    max_iter: usize,
    tol: f64,
) -> Result<SinkhornResult> {
    if x.rows() == 0 || y.rows() == 0 || x.cols() != y.cols() {
        return Err(Error::arg("sinkhorn needs two non-empty point sets of equal dimension"));
    }
    let cxy = cost(x, y);
    let eps = match eps {
        Some(e) => e,
        None => 0.05 * cxy.sum() / (cxy.rows() * cxy.cols()) as f64,
    };
    if !(eps > 0.0 && eps.is_finite()) {
        // Every point coincides; transport is free.
        if cxy.sum() == 0.0 {
            return Ok(SinkhornResult {
                value: 0.0,
                epsilon: eps,
                converged: true,
            });
        }
        return Err(Error::arg("sinkhorn epsilon must be positive"));
    }
    let (xy, c1) = entropic_ot(&cxy, eps, max_iter, tol);
    let (xx, c2) = entropic_ot(&cost(x, x), eps, max_iter, tol);
    let (yy, c3) = entropic_ot(&cost(y, y), eps, max_iter, tol);
    let converged = c1 && c2 && c3;
    if !converged {
        log::warn!("sinkhorn iterations stopped at the cap of {max_iter}");
    }
    Ok(SinkhornResult {
        value: xy - 0.5 * xx - 0.5 * yy,
        epsilon: eps,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_sets_give_zero() {
        let x = Mat::from_rows(&[[0.0, 1.0], [2.0, 0.5], [1.0, -1.0], [0.3, 0.3]]);
        let r = sinkhorn_divergence(&x, &x, None, 2000, 1e-6).unwrap();
        assert!(r.value.abs() < 1e-8, "{}", r.value);
        assert!(r.converged);
    }

    #[test]
    fn singletons_give_the_cost() {
        let a = Mat::from_rows(&[[1.0, 2.0, -1.0]]);
        let b = Mat::from_rows(&[[0.5, 0.0, 1.0]]);
        let r = sinkhorn_divergence(&a, &b, Some(0.1), 100, 1e-10).unwrap();
        assert!((r.value - (0.25 + 4.0 + 4.0)).abs() < 1e-12, "{}", r.value);
    }

    #[test]
    fn separated_clouds_score_higher() {
        let x = Mat::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let near = x.map(|v| v + 0.1);
        let far = x.map(|v| v + 2.0);
        let a = sinkhorn_divergence(&x, &near, None, 2000, 1e-6).unwrap().value;
        let b = sinkhorn_divergence(&x, &far, None, 2000, 1e-6).unwrap().value;
        assert!(a > 0.0 && b > a, "{a} {b}");
    }
}

//! Dense row-major matrices and the handful of kernels the engine needs.
//!
//! Rows index batch elements (states, directions), columns index features.
//! Binary elementwise kernels accept three shape combinations:
//!
//! * identical shapes;
//! * equal column counts where one row count divides the other. Row `r` of
//!   the larger operand pairs with row `r / k` of the smaller one, `k` being
//!   the ratio. This is how a batch of centers is paired with `k` directions
//!   per center;
//! * a `1 x 1` operand, broadcast everywhere.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mat[{}x{}]", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data)?;
        }
        Ok(())
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Mat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn scalar(value: f64) -> Self {
        Mat::filled(1, 1, value)
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "buffer of {} does not fit {}x{}",
            data.len(),
            rows,
            cols
        );
        Mat { rows, cols, data }
    }

    pub fn row_vector(data: &[f64]) -> Self {
        Mat::from_vec(1, data.len(), data.to_vec())
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Mat {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Elementwise combination under the broadcasting rules described in the
    /// module docs.
    pub fn zip(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        if self.shape() == other.shape() {
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Mat::from_vec(self.rows, self.cols, data);
        }
        if other.shape() == (1, 1) {
            let b = other.data[0];
            return self.map(|a| f(a, b));
        }
        if self.shape() == (1, 1) {
            let a = self.data[0];
            return other.map(|b| f(a, b));
        }
        assert_eq!(
            self.cols, other.cols,
            "column mismatch {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
        let (big_rows, small_rows) = (self.rows.max(other.rows), self.rows.min(other.rows));
        assert!(
            small_rows > 0 && big_rows % small_rows == 0,
            "cannot broadcast {:?} with {:?}",
            self.shape(),
            other.shape()
        );
        let k = big_rows / small_rows;
        let cols = self.cols;
        let mut out = Mat::zeros(big_rows, cols);
        for r in 0..big_rows {
            let (ra, rb) = if self.rows == big_rows {
                (r, r / k)
            } else {
                (r / k, r)
            };
            let a = self.row(ra);
            let b = other.row(rb);
            for ((o, &x), &y) in out.row_mut(r).iter_mut().zip(a).zip(b) {
                *o = f(x, y);
            }
        }
        out
    }

    /// Sums this matrix down to `shape`, the adjoint of broadcasting a
    /// `shape`-sized operand up to `self.shape()`.
    pub fn reduce_to(&self, rows: usize, cols: usize) -> Mat {
        if self.shape() == (rows, cols) {
            return self.clone();
        }
        if (rows, cols) == (1, 1) {
            return Mat::scalar(self.sum());
        }
        assert_eq!(cols, self.cols, "column mismatch in reduction");
        assert!(rows > 0 && self.rows.is_multiple_of(rows), "bad reduction");
        let k = self.rows / rows;
        let mut out = Mat::zeros(rows, cols);
        for r in 0..self.rows {
            let src = self.row(r);
            for (o, &v) in out.row_mut(r / k).iter_mut().zip(src) {
                *o += v;
            }
        }
        out
    }

    pub fn add(&self, other: &Mat) -> Mat {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        self.zip(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Mat) -> Mat {
        self.zip(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Mat {
        self.map(|a| a * c)
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self * w^T` for `self: n x k`, `w: m x k`.
    pub fn matmul_t(&self, w: &Mat) -> Mat {
        assert_eq!(
            self.cols,
            w.cols,
            "matmul_t inner dimension {:?} vs {:?}",
            self.shape(),
            w.shape()
        );
        let (n, k, m) = (self.rows, self.cols, w.rows);
        let mut out = Mat::zeros(n, m);
        if n == 0 || m == 0 || k == 0 {
            return out;
        }
        unsafe {
            matrixmultiply::dgemm(
                n,
                k,
                m,
                1.0,
                self.data.as_ptr(),
                k as isize,
                1,
                w.data.as_ptr(),
                1,
                k as isize,
                0.0,
                out.data.as_mut_ptr(),
                m as isize,
                1,
            );
        }
        out
    }

    /// Plain product `self * other`.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Mat::zeros(n, m);
        if n == 0 || m == 0 || k == 0 {
            return out;
        }
        unsafe {
            matrixmultiply::dgemm(
                n,
                k,
                m,
                1.0,
                self.data.as_ptr(),
                k as isize,
                1,
                other.data.as_ptr(),
                m as isize,
                1,
                0.0,
                out.data.as_mut_ptr(),
                m as isize,
                1,
            );
        }
        out
    }

    /// `self^T * other` for `self: n x k`, `other: n x m`.
    pub fn t_matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "t_matmul row mismatch");
        let (n, k, m) = (self.cols, self.rows, other.cols);
        let mut out = Mat::zeros(n, m);
        if n == 0 || m == 0 || k == 0 {
            return out;
        }
        unsafe {
            matrixmultiply::dgemm(
                n,
                k,
                m,
                1.0,
                self.data.as_ptr(),
                1,
                self.cols as isize,
                other.data.as_ptr(),
                m as isize,
                1,
                0.0,
                out.data.as_mut_ptr(),
                m as isize,
                1,
            );
        }
        out
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn vstack(parts: &[Mat]) -> Mat {
        let cols = parts.first().map_or(0, |p| p.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            assert_eq!(p.cols, cols, "vstack column mismatch");
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Mat { rows, cols, data }
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Modified Gram-Schmidt on the columns of `frame` (square, `d x d`).
///
/// Returns the orthonormal factor and the absolute diagonal of `R`, or
/// `None` if a column collapses.
pub fn modified_gram_schmidt(frame: &Mat) -> Option<(Mat, Vec<f64>)> {
    let (n, d) = frame.shape();
    let mut q = frame.clone();
    let mut diag = Vec::with_capacity(d);
    for j in 0..d {
        let mut orig = 0.0;
        for r in 0..n {
            orig += q[(r, j)] * q[(r, j)];
        }
        let orig = orig.sqrt();
        for i in 0..j {
            let mut dot = 0.0;
            for r in 0..n {
                dot += q[(r, i)] * q[(r, j)];
            }
            for r in 0..n {
                let qi = q[(r, i)];
                q[(r, j)] -= dot * qi;
            }
        }
        let mut nrm = 0.0;
        for r in 0..n {
            nrm += q[(r, j)] * q[(r, j)];
        }
        let nrm = nrm.sqrt();
        if !(nrm.is_finite() && nrm > f64::MIN_POSITIVE && nrm > 1e-13 * orig) {
            return None;
        }
        for r in 0..n {
            q[(r, j)] /= nrm;
        }
        diag.push(nrm);
    }
    Some((q, diag))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_blocks_pair_rows() {
        let small = Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let big = Mat::from_rows(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]]);
        let s = big.add(&small);
        assert_eq!(s.row(1), &[3.0, 4.0]);
        assert_eq!(s.row(2), &[6.0, 7.0]);
        let back = s.reduce_to(2, 2);
        assert_eq!(back.row(0), &[5.0, 7.0]);
    }

    #[test]
    fn gemm_variants_agree_with_naive() {
        let a = Mat::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let w = Mat::from_rows(&[[1.0, 0.0, -1.0], [2.0, 1.0, 0.5]]);
        let c = a.matmul_t(&w);
        assert_eq!(c.as_slice(), &[-2.0, 5.5, -2.0, 16.0]);
        assert_eq!(a.matmul(&w.transpose()), c);
        let g = a.t_matmul(&c);
        assert_eq!(g, a.transpose().matmul(&c));
    }

    #[test]
    fn mgs_reconstructs_frame() {
        let m = Mat::from_rows(&[[2.0, 1.0, 0.0], [0.0, 1.0, 1.0], [1.0, 0.0, 3.0]]);
        let (q, diag) = modified_gram_schmidt(&m).unwrap();
        let qtq = q.t_matmul(&q);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((qtq[(i, j)] - e).abs() < 1e-14);
            }
        }
        let det: f64 = diag.iter().product();
        assert!((det - 7.0).abs() < 1e-12);
    }

    #[test]
    fn mgs_rejects_rank_deficient() {
        let m = Mat::from_rows(&[[1.0, 2.0], [2.0, 4.0]]);
        assert!(modified_gram_schmidt(&m).is_none());
    }
}

use crate::linalg::Mat;

/// The closed primitive set every differentiable computation is written in.
///
/// Implemented by plain matrices (evaluation), by [`Dual`](super::Dual)
/// (forward mode, nestable) and by [`Var`](super::Var) (reverse mode). A
/// function written once against this trait can be evaluated, pushed forward
/// along directions, and pulled back to its parameters.
///
/// Binary operations follow the broadcasting rules of [`Mat::zip`].
/// Shape violations panic; they are programming errors, not data errors.
pub trait Tensor: Clone {
    /// Weight/bias type used by affine layers. Forward-mode wrappers keep the
    /// parameter type of what they wrap: parameters are constant along
    /// tangent directions.
    type Param: Clone;

    fn rows(&self) -> usize;
    fn cols(&self) -> usize;

    fn add(&self, rhs: &Self) -> Self;
    fn sub(&self, rhs: &Self) -> Self;
    fn mul(&self, rhs: &Self) -> Self;
    fn scale(&self, c: f64) -> Self;
    /// Adds a constant to every entry.
    fn offset(&self, c: f64) -> Self;
    fn tanh(&self) -> Self;
    fn exp(&self) -> Self;
    fn recip(&self) -> Self;
    /// `self * w^T`, with `w` stored `out x in`.
    fn matmul_t(&self, w: &Self::Param) -> Self;
    /// Adds a `1 x cols` bias to every row.
    fn add_bias(&self, b: &Self::Param) -> Self;
    /// Sum of all entries, as a `1 x 1` value.
    fn sum(&self) -> Self;

    /// A constant of the same kind as `self` (same tape, zero tangents).
    fn constant_like(&self, m: Mat) -> Self;
    fn param_like(&self, m: Mat) -> Self::Param;

    /// Primal values, dropping any derivative information.
    fn value(&self) -> Mat;
    fn is_finite(&self) -> bool;

    fn div(&self, rhs: &Self) -> Self {
        self.mul(&rhs.recip())
    }

    fn square(&self) -> Self {
        self.mul(self)
    }

    fn zeros_like(&self) -> Self {
        self.constant_like(Mat::zeros(self.rows(), self.cols()))
    }
}

impl Tensor for Mat {
    type Param = Mat;

    fn rows(&self) -> usize {
        Mat::rows(self)
    }
    fn cols(&self) -> usize {
        Mat::cols(self)
    }
    fn add(&self, rhs: &Self) -> Self {
        Mat::add(self, rhs)
    }
    fn sub(&self, rhs: &Self) -> Self {
        Mat::sub(self, rhs)
    }
    fn mul(&self, rhs: &Self) -> Self {
        Mat::mul(self, rhs)
    }
    fn scale(&self, c: f64) -> Self {
        Mat::scale(self, c)
    }
    fn offset(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }
    fn tanh(&self) -> Self {
        self.map(f64::tanh)
    }
    fn exp(&self) -> Self {
        self.map(f64::exp)
    }
    fn recip(&self) -> Self {
        self.map(|v| 1.0 / v)
    }
    fn matmul_t(&self, w: &Mat) -> Self {
        Mat::matmul_t(self, w)
    }
    fn add_bias(&self, b: &Mat) -> Self {
        assert_eq!(b.rows(), 1, "bias must be a row vector");
        Mat::add(self, b)
    }
    fn sum(&self) -> Self {
        Mat::scalar(Mat::sum(self))
    }
    fn constant_like(&self, m: Mat) -> Self {
        m
    }
    fn param_like(&self, m: Mat) -> Mat {
        m
    }
    fn value(&self) -> Mat {
        self.clone()
    }
    fn is_finite(&self) -> bool {
        Mat::is_finite(self)
    }
}

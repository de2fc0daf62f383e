use super::Tensor;
use crate::linalg::Mat;

/// Forward-mode dual number over any [`Tensor`].
///
/// The tangent may carry `k` rows per primal row, i.e. `k` directions pushed
/// forward at once. Nesting (`Dual<Dual<T>>`) yields second directional
/// derivatives in the tangent-of-tangent slot.
#[derive(Clone, Debug)]
pub struct Dual<T> {
    pub primal: T,
    pub tangent: T,
}

impl<T: Tensor> Dual<T> {
    pub fn new(primal: T, tangent: T) -> Self {
        Dual { primal, tangent }
    }

    /// A value with zero tangent.
    pub fn constant(primal: T) -> Self {
        let tangent = primal.zeros_like();
        Dual { primal, tangent }
    }
}

impl<T: Tensor> Tensor for Dual<T> {
    type Param = T::Param;

    fn rows(&self) -> usize {
        self.primal.rows()
    }
    fn cols(&self) -> usize {
        self.primal.cols()
    }

    fn add(&self, rhs: &Self) -> Self {
        Dual::new(
            self.primal.add(&rhs.primal),
            self.tangent.add(&rhs.tangent),
        )
    }

    fn sub(&self, rhs: &Self) -> Self {
        Dual::new(
            self.primal.sub(&rhs.primal),
            self.tangent.sub(&rhs.tangent),
        )
    }

    fn mul(&self, rhs: &Self) -> Self {
        let t = self
            .tangent
            .mul(&rhs.primal)
            .add(&self.primal.mul(&rhs.tangent));
        Dual::new(self.primal.mul(&rhs.primal), t)
    }

    fn scale(&self, c: f64) -> Self {
        Dual::new(self.primal.scale(c), self.tangent.scale(c))
    }

    fn offset(&self, c: f64) -> Self {
        Dual::new(self.primal.offset(c), self.tangent.clone())
    }

    fn tanh(&self) -> Self {
        let y = self.primal.tanh();
        // d tanh = (1 - tanh^2)
        let slope = y.square().scale(-1.0).offset(1.0);
        let t = self.tangent.mul(&slope);
        Dual::new(y, t)
    }

    fn exp(&self) -> Self {
        let y = self.primal.exp();
        let t = self.tangent.mul(&y);
        Dual::new(y, t)
    }

    fn recip(&self) -> Self {
        let r = self.primal.recip();
        let t = self.tangent.mul(&r.square()).scale(-1.0);
        Dual::new(r, t)
    }

    fn matmul_t(&self, w: &T::Param) -> Self {
        Dual::new(self.primal.matmul_t(w), self.tangent.matmul_t(w))
    }

    fn add_bias(&self, b: &T::Param) -> Self {
        Dual::new(self.primal.add_bias(b), self.tangent.clone())
    }

    /// Panics when the tangent carries several directions per row, since a
    /// full reduction would mix them.
    fn sum(&self) -> Self {
        assert_eq!(
            self.primal.rows(),
            self.tangent.rows(),
            "sum over a multi-direction dual"
        );
        Dual::new(self.primal.sum(), self.tangent.sum())
    }

    fn constant_like(&self, m: Mat) -> Self {
        let zeros = Mat::zeros(m.rows(), m.cols());
        Dual::new(
            self.primal.constant_like(m),
            self.tangent.constant_like(zeros),
        )
    }

    fn param_like(&self, m: Mat) -> T::Param {
        self.primal.param_like(m)
    }

    fn value(&self) -> Mat {
        self.primal.value()
    }

    fn is_finite(&self) -> bool {
        self.primal.is_finite() && self.tangent.is_finite()
    }
}

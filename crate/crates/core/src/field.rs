use crate::linalg::Mat;

/// An autonomous vector field evaluated on batches of states (one per row).
///
/// Implemented by ground-truth systems and learned models, so integrators and
/// evaluation metrics can treat both alike.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;

    fn eval_batch(&self, states: &Mat) -> Mat;

    /// Field values and Jacobian-direction products. `dirs` holds `k` rows
    /// per state row; the returned products are laid out the same way.
    fn jvp_batch(&self, states: &Mat, dirs: &Mat) -> (Mat, Mat);

    /// Jacobian at a single state, row `i` holding the partials of component
    /// `i`.
    fn jacobian(&self, u: &[f64]) -> Mat {
        let d = self.dim();
        let (_, cols) = self.jvp_batch(&Mat::row_vector(u), &Mat::identity(d));
        // Row k of `cols` is J e_k.
        cols.transpose()
    }

    fn eval(&self, u: &[f64]) -> Vec<f64> {
        self.eval_batch(&Mat::row_vector(u)).into_vec()
    }
}

/// Flat-slice adapter for the integrators: the state holds `n` stacked
/// `d`-vectors.
pub fn batch_rhs<'a>(field: &'a dyn VectorField) -> impl FnMut(&[f64], &mut [f64]) + 'a {
    let d = field.dim();
    move |u: &[f64], out: &mut [f64]| {
        let states = Mat::from_vec(u.len() / d, d, u.to_vec());
        out.copy_from_slice(field.eval_batch(&states).as_slice());
    }
}

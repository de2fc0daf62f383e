use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// One classical RK4 step of a system whose state is split into components
/// (e.g. a center and its perturbations). `t` only labels errors.
///
/// The combination order is fixed, so any two callers evaluating the same
/// primal operations obtain bit-identical states.
pub fn rk4_step<T, F>(field: &mut F, u: &[T], dt: f64, t: f64) -> Result<Vec<T>>
where
    T: Tensor,
    F: FnMut(&[T]) -> Vec<T>,
{
    let stage = |base: &[T], k: &[T], c: f64| -> Vec<T> {
        base.iter().zip(k).map(|(b, k)| b.add(&k.scale(c))).collect()
    };
    let check = |k: &[T], frac: f64| -> Result<()> {
        if k.iter().all(Tensor::is_finite) {
            Ok(())
        } else {
            Err(Error::NonFinite { t: t + frac * dt })
        }
    };
    let k1 = field(u);
    check(&k1, 0.0)?;
    let k2 = field(&stage(u, &k1, 0.5 * dt));
    check(&k2, 0.5)?;
    let k3 = field(&stage(u, &k2, 0.5 * dt));
    check(&k3, 0.5)?;
    let k4 = field(&stage(u, &k3, dt));
    check(&k4, 1.0)?;
    let next: Vec<T> = (0..u.len())
        .map(|i| {
            let incr = k1[i]
                .add(&k2[i].scale(2.0))
                .add(&k3[i].scale(2.0))
                .add(&k4[i]);
            u[i].add(&incr.scale(dt / 6.0))
        })
        .collect();
    check(&next, 1.0)?;
    Ok(next)
}

use nbode::integrate::{integrate_adaptive, lyapunov_spectrum, StepControl};
use nbode::systems::{AffineTransform, SystemField, SystemSpec};

fn lorenz_rhs() -> impl FnMut(&[f64], &mut [f64]) {
    let spec = SystemSpec::lorenz63();
    move |u: &[f64], out: &mut [f64]| spec.rhs(u, out)
}

fn on_attractor() -> Vec<f64> {
    let traj = integrate_adaptive(
        lorenz_rhs(),
        &[1.0, 1.0, 1.0],
        (0.0, 50.0),
        StepControl::generation(),
        &[50.0],
    )
    .unwrap();
    traj[0].clone()
}

fn endpoint(rtol: f64, atol: f64) -> Vec<f64> {
    let ctrl = StepControl::with_tolerances(rtol, atol);
    integrate_adaptive(lorenz_rhs(), &[1.0, 1.0, 1.0], (0.0, 1.0), ctrl, &[1.0])
        .unwrap()
        .remove(0)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn lorenz_endpoint_converges_under_tighter_tolerance() {
    let reference = endpoint(1e-12, 1e-14);
    let loose = endpoint(1e-8, 1e-10);
    let err = dist(&loose, &reference);
    assert!(err < 1e-5, "error {err}");
    let halved = endpoint(0.5e-8, 0.5e-10);
    assert!(dist(&halved, &loose) < err.max(1e-12) * 2.0);
    assert!(dist(&halved, &reference) < err);
}

#[test]
fn adaptive_integration_is_deterministic() {
    assert_eq!(endpoint(1e-8, 1e-10), endpoint(1e-8, 1e-10));
}

#[test]
fn lorenz_spectrum_sum_and_zero_exponent() {
    let field = SystemField::raw(SystemSpec::lorenz63());
    let u0 = on_attractor();
    let res = lyapunov_spectrum(&field, &u0, 1000.0, 1.0, StepControl::generation()).unwrap();
    let sum: f64 = res.exponents.iter().sum();
    assert!((sum + 41.0 / 3.0).abs() < 0.05, "{:?}", res.exponents);
    assert!(res.exponents[1].abs() < 0.02, "{:?}", res.exponents);
    assert!(res.exponents[0] > 0.8 && res.exponents[0] < 1.0);
}

#[test]
fn spectrum_insensitive_to_reorthonormalization_interval() {
    let field = SystemField::raw(SystemSpec::lorenz63());
    let u0 = on_attractor();
    let ctrl = StepControl::generation();
    let base = lyapunov_spectrum(&field, &u0, 500.0, 1.0, ctrl).unwrap();
    for dt in [0.1, 0.5] {
        let other = lyapunov_spectrum(&field, &u0, 500.0, dt, ctrl).unwrap();
        for (a, b) in base.exponents.iter().zip(&other.exponents) {
            assert!((a - b).abs() < 0.02, "{:?} vs {:?}", base.exponents, other.exponents);
        }
    }
}

#[test]
fn spectrum_invariant_under_normalization() {
    let spec = SystemSpec::lorenz63();
    let transform = AffineTransform::new(vec![-0.5, 0.3, 23.5], vec![7.9, 9.0, 8.6]).unwrap();
    let u0 = on_attractor();
    let ctrl = StepControl::generation();
    let raw = lyapunov_spectrum(&SystemField::raw(spec.clone()), &u0, 500.0, 1.0, ctrl).unwrap();
    let moved = SystemField::new(spec, transform.clone());
    let scaled = lyapunov_spectrum(&moved, &transform.apply(&u0), 500.0, 1.0, ctrl).unwrap();
    for (a, b) in raw.exponents.iter().zip(&scaled.exponents) {
        assert!((a - b).abs() < 0.02, "{:?} vs {:?}", raw.exponents, scaled.exponents);
    }
}

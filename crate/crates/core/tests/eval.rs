use nbode::dataset::{generate_dataset, GenerationConfig, Split, TrajectoryDataset};
use nbode::eval::*;
use nbode::field::VectorField;
use nbode::integrate::StepControl;
use nbode::model::{CheckpointInfo, MlpVectorField};
use nbode::systems::{AffineTransform, SystemSpec};
use nbode::{Error, Mat};

fn splits(n: usize, m: usize) -> (TrajectoryDataset, TrajectoryDataset) {
    let cfg = GenerationConfig {
        n_traj: n,
        n_points: m,
        ..Default::default()
    };
    let spec = SystemSpec::lorenz63();
    let train = generate_dataset(&spec, Split::Train, 0.1, 4, 0.76, &cfg, None).unwrap();
    let t = train.transform.clone();
    let val = generate_dataset(&spec, Split::Val, 0.1, 4, 0.76, &cfg, Some(&t)).unwrap();
    let test = generate_dataset(&spec, Split::Test, 0.0, 4, 0.76, &cfg, Some(&t)).unwrap();
    (val, test)
}

fn zero_model(d: usize) -> MlpVectorField {
    let mut m = MlpVectorField::init(0, &[d, 8, d]).unwrap();
    m.set_flat(&vec![0.0; m.param_count()]);
    m
}

fn small_eval() -> EvalConfig {
    EvalConfig {
        attractor_samples: 300,
        lyapunov_times: 20.0,
        curve_points: 21,
        plateau_start: 10.0,
        lyap_horizon: 100.0,
        lyap_ics: 2,
        rel_error_points: 200,
        sinkhorn_pieces: 3,
        ..Default::default()
    }
}

#[test]
fn ground_truth_as_model_is_perfect() {
    let (val, test) = splits(3, 300);
    let truth = test.ground_truth().unwrap();
    let cfg = small_eval();
    let ev = evaluate(&truth, &test, &val, &cfg).unwrap();
    let full = ev.report.lambda_max * (test.m - 1) as f64 * test.dt;
    assert!((ev.report.vpt_mean - full).abs() < 1e-12, "{} vs {full}", ev.report.vpt_mean);
    assert!(ev.vpt.mean_curve.iter().all(|&e| e < 1e-5));
    assert!(ev.rel.vf.iter().all(|&e| e == 0.0));
    assert!(ev.rel.jac.iter().all(|&e| e == 0.0));
    assert!(ev.report.lyapunov_mae.unwrap() <= 0.02);
    assert!(ev.mmd.values.iter().all(|&v| v == 0.0));
    assert_eq!(ev.mmd.values.len(), 21);
    assert!(ev.report.baseline_mmd2 > 0.0);
    assert!(ev.report.sinkhorn_score.unwrap() < 1e-6);

    let zero = zero_model(3);
    let worse = sinkhorn_score(&zero, &val, &cfg).unwrap();
    assert!(worse.value > ev.report.sinkhorn_score.unwrap());

    let dir = tempfile::tempdir().unwrap();
    ev.save(dir.path()).unwrap();
    for f in ["report.json", "nrmse.csv", "mmd_curve.csv", "rel_errors.csv", "lyapunov.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn zero_model_errors() {
    let (_, test) = splits(2, 50);
    let truth = test.ground_truth().unwrap();
    let zero = zero_model(3);
    let pts = Mat::from_vec(20, 3, test.clean_states().unwrap()[..60].to_vec());
    let rel = relative_errors(&zero, &truth, &pts).unwrap();
    assert!(rel.vf.iter().all(|&e| e == 1.0));
    assert!(rel.jac.iter().all(|&e| e == 1.0));

    let v = nrmse_vpt(&zero, &test, 0.9, 0.3, StepControl::generation()).unwrap();
    let clean = test.clean_states().unwrap();
    let u0 = &clean[..3];
    for (j, e) in v.nrmse[0].iter().enumerate() {
        let u = &clean[(j + 1) * 3..(j + 2) * 3];
        let expect = (u.iter().zip(u0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 3.0).sqrt();
        assert!((e - expect).abs() < 1e-12);
    }
}

fn fd_jacobian(f: &dyn VectorField, u: &[f64]) -> Mat {
    let d = u.len();
    let h = 1e-6;
    let mut j = Mat::zeros(d, d);
    for c in 0..d {
        let mut up = u.to_vec();
        let mut dn = u.to_vec();
        up[c] += h;
        dn[c] -= h;
        let (a, b) = (f.eval(&up), f.eval(&dn));
        for r in 0..d {
            j[(r, c)] = (a[r] - b[r]) / (2.0 * h);
        }
    }
    j
}

#[test]
fn jacobian_error_agrees_with_finite_differences() {
    let (_, test) = splits(2, 50);
    let truth = test.ground_truth().unwrap();
    let model = MlpVectorField::init(3, &[3, 16, 16, 3]).unwrap();
    let pts = Mat::from_vec(10, 3, test.clean_states().unwrap()[..30].to_vec());
    let rel = relative_errors(&model, &truth, &pts).unwrap();
    for p in 0..10 {
        let u = pts.row(p);
        let jt = truth.jacobian(u);
        let e = fd_jacobian(&model, u).sub(&jt).frobenius_norm() / jt.frobenius_norm();
        assert!((e - rel.jac[p]).abs() < 1e-5, "{e} vs {}", rel.jac[p]);
    }
}

#[test]
fn relative_errors_survive_checkpoint_round_trip() {
    let (_, test) = splits(2, 50);
    let truth = test.ground_truth().unwrap();
    let model = MlpVectorField::init(5, &[3, 16, 3]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path(), &CheckpointInfo::default()).unwrap();
    let (back, _) = MlpVectorField::load(dir.path()).unwrap();
    let pts = Mat::from_vec(15, 3, test.clean_states().unwrap()[..45].to_vec());
    assert_eq!(
        relative_errors(&model, &truth, &pts).unwrap(),
        relative_errors(&back, &truth, &pts).unwrap()
    );
}

struct Linear1(f64);

impl VectorField for Linear1 {
    fn dim(&self) -> usize {
        1
    }
    fn eval_batch(&self, s: &Mat) -> Mat {
        s.scale(self.0)
    }
    fn jvp_batch(&self, s: &Mat, d: &Mat) -> (Mat, Mat) {
        (s.scale(self.0), d.scale(self.0))
    }
}

#[test]
fn linear_exponents_differ_by_the_rate_gap() {
    let mut model = MlpVectorField::init(0, &[1, 1]).unwrap();
    model.set_flat(&[-0.4, 0.0]);
    let cmp = lyapunov_mae(&model, &Linear1(-1.5), &[vec![1.0]], 50.0, 1.0, StepControl::generation()).unwrap();
    assert!((cmp.mae - 1.1).abs() < 1e-6, "{}", cmp.mae);
}

#[test]
fn attractor_curve_starts_at_zero_and_baseline_is_stable() {
    let (_, test) = splits(2, 50);
    let truth = test.ground_truth().unwrap();
    let spec = test.spec().unwrap();
    let cfg = small_eval();
    let model = MlpVectorField::init(1, &[3, 16, 3]).unwrap();
    let x = sample_attractor(&spec, &test.transform, 300, 1).unwrap();
    let c = attractor_mmd_curve(&model, &truth, &x, 0.9, &cfg).unwrap();
    assert_eq!(c.values[0], 0.0);

    let mut base = Vec::new();
    for seed in [10u64, 20] {
        let a = sample_attractor(&spec, &test.transform, 300, seed).unwrap();
        let b = sample_attractor(&spec, &test.transform, 300, seed + 1).unwrap();
        base.push(baseline_mmd(&truth, &a, &b, 0.9, &cfg).unwrap());
    }
    assert!(base.iter().all(|&b| b > 0.0));
    assert!((base[0] - base[1]).abs() <= 0.2 * base[0].max(base[1]), "{base:?}");
}

#[test]
fn evaluation_needs_clean_states() {
    let (mut val, test) = splits(2, 50);
    val.clean = None;
    let truth = test.ground_truth().unwrap();
    assert!(matches!(sinkhorn_score(&truth, &val, &small_eval()), Err(Error::MissingClean(_))));
    assert!(matches!(
        evaluate(&truth, &test, &val, &small_eval()),
        Err(Error::MissingClean(_))
    ));
    let _ = AffineTransform::identity(3);
}

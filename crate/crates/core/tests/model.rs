use nbode::linalg::Mat;
use nbode::model::{CheckpointInfo, MlpVectorField, PerturbationBatch};
use proptest::prelude::*;

const DT: f64 = 0.1;

fn net() -> MlpVectorField {
    MlpVectorField::init(9, &[3, 16, 16, 3]).unwrap()
}

fn batch(center: &[f64], offsets: Mat, horizon: usize) -> PerturbationBatch {
    PerturbationBatch {
        center: center.to_vec(),
        offsets,
        horizon,
        n_sub: 2,
    }
}

fn reconstruction_error(m: &MlpVectorField, center: &[f64], dir: &[f64], scale: f64) -> f64 {
    let rows: Vec<Vec<f64>> = [1.0, -1.0]
        .iter()
        .map(|s| dir.iter().map(|v| s * scale * v).collect())
        .collect();
    let (_, nbrs) = m
        .rollout_neighborhood(&batch(center, Mat::from_rows(&rows), 1), DT, 2)
        .unwrap();
    rows.iter()
        .enumerate()
        .map(|(k, w)| {
            let start: Vec<f64> = center.iter().zip(w).map(|(c, o)| c + o).collect();
            let direct = m.rollout_center(&start, 1, DT, 2).unwrap();
            nbrs[0]
                .row(k)
                .iter()
                .zip(direct.row(0))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

#[test]
fn second_order_reconstruction_error_is_cubic() {
    let m = net();
    let center = [0.3, -0.8, 0.5];
    let dir = [0.6, 0.0, -0.8];
    let scales = [1e-1, 1e-2, 1e-3];
    let errs: Vec<f64> = scales.iter().map(|&s| reconstruction_error(&m, &center, &dir, s)).collect();
    let slope = loglog_slope(&scales, &errs);
    assert!(slope >= 2.7, "slope {slope}, errors {errs:?}");
}

#[test]
fn first_order_reconstruction_error_is_quadratic() {
    let m = net();
    let center = [0.3, -0.8, 0.5];
    let scales = [1e-1, 1e-2, 1e-3];
    let errs: Vec<f64> = scales
        .iter()
        .map(|&s| {
            let offsets = Mat::from_rows(&[[0.6 * s, 0.0, -0.8 * s], [-0.6 * s, 0.0, 0.8 * s]]);
            let (_, nbrs) = m.rollout_neighborhood(&batch(&center, offsets, 1), DT, 1).unwrap();
            let direct = m.rollout_center(&[0.3 + 0.6 * s, -0.8, 0.5 - 0.8 * s], 1, DT, 2).unwrap();
            nbrs[0].row(0).iter().zip(direct.row(0)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        })
        .collect();
    let slope = loglog_slope(&scales, &errs);
    assert!((1.7..2.5).contains(&slope), "slope {slope}");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let m = net();
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path(), &CheckpointInfo { step: 7, val_loss: Some(0.25) }).unwrap();
    let (back, info) = MlpVectorField::load(dir.path()).unwrap();
    assert_eq!(info.step, 7);
    assert_eq!(info.val_loss, Some(0.25));
    for u in [[0.0, 0.0, 0.0], [1.5, -2.25, 0.125], [1e3, -7.0, 3.3]] {
        let a = m.model_field(&u).unwrap();
        let b = back.model_field(&u).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(m.model_jacobian(&u).unwrap(), back.model_jacobian(&u).unwrap());
    }
}

#[test]
fn linear_model_taylor_reconstruction_is_exact_in_the_perturbation() {
    let mut m = MlpVectorField::init(1, &[2, 2]).unwrap();
    m.set_flat(&[-0.3, 1.0, -1.0, -0.3, 0.0, 0.0]);
    let offsets = Mat::from_rows(&[[0.5, 0.0], [0.0, -0.25]]);
    let (_, nbrs) = m.rollout_neighborhood(&batch(&[1.0, 1.0], offsets, 3), DT, 2).unwrap();
    let direct = m.rollout_center(&[1.5, 1.0], 3, DT, 2).unwrap();
    for s in 0..3 {
        for (a, b) in nbrs[s].row(0).iter().zip(direct.row(s)) {
            assert!((a - b).abs() <= 1e-14, "{a} vs {b}");
        }
    }
}

fn offsets_strategy() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-0.3f64..0.3), 2..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn center_ignores_perturbations(center in prop::array::uniform3(-1.5f64..1.5), offs in offsets_strategy(), order in 1usize..3) {
        let m = net();
        let (c, _) = m.rollout_neighborhood(&batch(&center, Mat::from_rows(&offs), 4), DT, order).unwrap();
        let alone = m.rollout_center(&center, 4, DT, 2).unwrap();
        prop_assert!(c.as_slice().iter().zip(alone.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn neighbors_are_permutation_equivariant(center in prop::array::uniform3(-1.5f64..1.5), offs in offsets_strategy(), shift in 0usize..6) {
        let m = net();
        let k = offs.len();
        let perm: Vec<usize> = (0..k).map(|i| (i + shift) % k).collect();
        let permuted: Vec<[f64; 3]> = perm.iter().map(|&i| offs[i]).collect();
        let (_, a) = m.rollout_neighborhood(&batch(&center, Mat::from_rows(&offs), 3), DT, 2).unwrap();
        let (_, b) = m.rollout_neighborhood(&batch(&center, Mat::from_rows(&permuted), 3), DT, 2).unwrap();
        for s in 0..3 {
            for (row, &src) in perm.iter().enumerate() {
                prop_assert_eq!(b[s].row(row), a[s].row(src));
            }
        }
    }
}

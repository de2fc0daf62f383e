use nbode::cover::{build_cover, build_cover_from_points, calibrate_radii, in_annulus, CalibrationConfig};
use nbode::dataset::{generate_dataset, rng, GenerationConfig, Split, TrajectoryDataset};
use nbode::linalg::{dist2, Mat};
use nbode::systems::SystemSpec;
use proptest::prelude::*;

fn lorenz_train(noise: f64) -> TrajectoryDataset {
    let cfg = GenerationConfig {
        n_traj: 10,
        n_points: 1000,
        ..Default::default()
    };
    generate_dataset(&SystemSpec::lorenz63(), Split::Train, noise, 4, 0.76, &cfg, None).unwrap()
}

/// First `m` states of every trajectory.
fn head(ds: &TrajectoryDataset, m: usize) -> Mat {
    let rows: Vec<Vec<f64>> = (0..ds.n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| ds.state(i, j).to_vec())
        .collect();
    Mat::from_rows(&rows)
}

fn brute_force(points: &Mat, n_traj: usize, m: usize, radii: (f64, f64), horizon: usize) -> Vec<Vec<u32>> {
    let eligible: Vec<usize> = (0..n_traj)
        .flat_map(|i| (0..m - horizon).map(move |j| i * m + j))
        .collect();
    eligible
        .iter()
        .map(|&c| {
            eligible
                .iter()
                .filter(|&&g| g != c && in_annulus(dist2(points.row(c), points.row(g)), radii.0, radii.1))
                .map(|&g| g as u32)
                .collect()
        })
        .collect()
}

#[test]
fn cover_equals_brute_force_scan() {
    let ds = lorenz_train(0.1);
    let pts = head(&ds, 100);
    let radii = calibrate_radii(&pts, 0.1, &CalibrationConfig::default()).unwrap();
    let cover = build_cover_from_points(&pts, 10, 100, radii, 10).unwrap();
    let mut got = cover.members.clone();
    for g in &mut got {
        g.sort_unstable();
    }
    assert_eq!(got, brute_force(&pts, 10, 100, radii, 10));
}

#[test]
fn cover_is_deterministic_and_futures_are_valid() {
    let ds = lorenz_train(0.1);
    let radii = calibrate_radii(&ds.points(), 0.1, &CalibrationConfig::default()).unwrap();
    let a = build_cover(&ds, radii, 10).unwrap();
    let b = build_cover(&ds, radii, 10).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    for g in a.centers.iter().chain(a.members.iter().flatten()) {
        let (i, j) = a.split_index(*g);
        assert!(i < ds.n && j + 10 < ds.m, "{i} {j}");
    }
    for (c, members) in a.centers.iter().zip(&a.members) {
        for g in members {
            let ((ci, cj), (gi, gj)) = (a.split_index(*c), a.split_index(*g));
            let d2 = dist2(ds.state(ci, cj), ds.state(gi, gj));
            assert!(in_annulus(d2, a.r_min, a.r_max));
        }
    }
}

#[test]
fn calibrated_occupancy_is_five_percent() {
    for noise in [0.0, 0.01, 0.1] {
        let ds = lorenz_train(noise);
        let radii = calibrate_radii(&ds.points(), noise, &CalibrationConfig::default()).unwrap();
        let frac = build_cover(&ds, radii, 10).unwrap().stats().mean_frac;
        assert!((frac - 0.05).abs() <= 0.005, "noise {noise}: {frac}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_clouds_match_brute_force(
        seed in any::<u64>(),
        r_min in 0.0f64..0.3,
        width in 0.05f64..0.8,
    ) {
        use rand::Rng;
        let mut r = rng(seed);
        let (n_traj, m, horizon) = (4, 40, 3);
        let rows: Vec<[f64; 2]> = (0..n_traj * m).map(|_| [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]).collect();
        let pts = Mat::from_rows(&rows);
        let radii = (r_min, r_min + width);
        let expect = brute_force(&pts, n_traj, m, radii, horizon);
        match build_cover_from_points(&pts, n_traj, m, radii, horizon) {
            Ok(cover) => {
                let mut got = cover.members.clone();
                for g in &mut got {
                    g.sort_unstable();
                }
                prop_assert_eq!(got, expect);
            }
            Err(_) => prop_assert!(expect.iter().all(Vec::is_empty)),
        }
    }
}

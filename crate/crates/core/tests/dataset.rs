use nbode::dataset::{
    estimate_timescale, estimate_timescale_with, generate_dataset, generate_splits,
    sample_on_attractor, GenerationConfig, PeriodAggregate, SpectrumConfig, Split,
    TrajectoryDataset,
};
use nbode::systems::SystemSpec;

fn small_cfg() -> GenerationConfig {
    GenerationConfig {
        n_traj: 10,
        n_points: 1000,
        pilot_traj: 4,
        ..Default::default()
    }
}

#[test]
fn lorenz_samples_lie_in_reference_box() {
    let spec = SystemSpec::lorenz63();
    let a = sample_on_attractor(&spec, 20, 11).unwrap();
    let b = sample_on_attractor(&spec, 20, 11).unwrap();
    assert_eq!(a, b);
    for u in &a {
        assert!(u[0].abs() <= 25.0 && u[1].abs() <= 25.0, "{u:?}");
        assert!(u[2] >= 0.0 && u[2] <= 50.0, "{u:?}");
    }
}

#[test]
fn lorenz_timescale_is_stable_under_more_trajectories() {
    let spec = SystemSpec::lorenz63();
    let bin = 1.0 / 100.0;
    for aggregate in [PeriodAggregate::Shortest, PeriodAggregate::Median] {
        let cfg = SpectrumConfig {
            aggregate,
            ..Default::default()
        };
        let few = estimate_timescale_with(&spec, 10, 5, &cfg).unwrap();
        let many = estimate_timescale_with(&spec, 20, 5, &cfg).unwrap();
        assert!((1.0 / few - 1.0 / many).abs() <= bin + 1e-12, "{few} vs {many}");
    }
    // The fastest oscillation of the Lorenz attractor has a period near 0.76.
    let tau = estimate_timescale(&spec, 10, 100.0, 5).unwrap();
    assert!((1.0 / tau - 1.32).abs() <= 2.0 * bin, "{tau}");
}

#[test]
fn splits_are_normalized_by_train_statistics() {
    let spec = SystemSpec::lorenz63();
    let splits = generate_splits(&spec, 0.1, 3, &small_cfg()).unwrap();
    let train = &splits.train;
    let clean = train.clean_states().unwrap();
    for c in 0..3 {
        let col: Vec<f64> = clean.iter().skip(c).step_by(3).copied().collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
        assert!(mean.abs() <= 1e-9, "mean {mean}");
        assert!((std - 1.0).abs() <= 1e-9, "std {std}");
    }
    assert_eq!(splits.val.transform, train.transform);
    assert_eq!(splits.test.transform, train.transform);
    // Val uses other trajectories, so its own statistics are not exactly 0/1.
    let val_clean = splits.val.clean_states().unwrap();
    let val_mean = val_clean.iter().step_by(3).sum::<f64>() / (val_clean.len() / 3) as f64;
    assert!(val_mean.abs() > 1e-6);

    assert_eq!(train.m, 1000);
    assert!((train.dt - 0.01 * train.tau).abs() < 1e-15);
    let resid: Vec<f64> = train.states.iter().zip(clean).map(|(a, b)| a - b).collect();
    let std = (resid.iter().map(|v| v * v).sum::<f64>() / resid.len() as f64).sqrt();
    assert!((std / 0.1 - 1.0).abs() < 0.03, "noise std {std}");
    assert_eq!(splits.test.states, splits.test.clean_states().unwrap());
}

#[test]
fn zero_noise_states_equal_clean() {
    let spec = SystemSpec::lorenz63();
    let cfg = GenerationConfig {
        n_traj: 2,
        n_points: 50,
        ..Default::default()
    };
    let ds = generate_dataset(&spec, Split::Train, 0.0, 4, 0.8, &cfg, None).unwrap();
    assert_eq!(&ds.states[..], ds.clean_states().unwrap());
}

#[test]
fn disk_round_trip_and_regeneration_are_byte_identical() {
    let spec = SystemSpec::chen_hyper();
    let cfg = GenerationConfig {
        n_traj: 3,
        n_points: 200,
        ..Default::default()
    };
    let a = generate_dataset(&spec, Split::Train, 0.05, 9, 0.5, &cfg, None).unwrap();
    let b = generate_dataset(&spec, Split::Train, 0.05, 9, 0.5, &cfg, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    a.save(&dir.path().join("a")).unwrap();
    b.save(&dir.path().join("b")).unwrap();
    for f in ["meta.json", "states.bin", "clean.bin"] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    let back = TrajectoryDataset::load(&dir.path().join("a")).unwrap();
    assert_eq!(back, a);
    assert_eq!(back.spec().unwrap(), spec);
}

#[test]
fn missing_clean_file_is_reported() {
    let spec = SystemSpec::lorenz63();
    let cfg = GenerationConfig {
        n_traj: 1,
        n_points: 20,
        ..Default::default()
    };
    let mut ds = generate_dataset(&spec, Split::Train, 0.0, 1, 0.8, &cfg, None).unwrap();
    ds.clean = None;
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    let back = TrajectoryDataset::load(dir.path()).unwrap();
    assert!(back.clean_states().is_err());
}

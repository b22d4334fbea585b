mod common;

use common::{mean, rel_rms, variance};
use panco::dynamics::DriveTimeline;
use panco::model::{units, CellConfig, Vec3};
use panco::protocol::{
    generate_signatures, initial_state, run_protocol, settle, symmetry_map, PulseSchedule,
    RunOptions, Settle, SignatureOptions,
};
use panco::scenarios::balanced;

/// Rb–Xe bench cell with spin exchange balanced so that it settles in 10 s.
fn fast() -> (CellConfig, PulseSchedule, Settle) {
    let sched = PulseSchedule::rb_xe_experiment();
    (
        balanced(&CellConfig::rb_xe_experiment(), &sched).unwrap(),
        sched,
        Settle {
            time: 10.0,
            threshold: 1e-8,
        },
    )
}

#[test]
fn symmetry_map_matches_direct_y_drive() {
    let (cfg, sched, s) = fast();
    let eps_b = units::pt(0.1);
    let eps_w = 1e-4;
    let last = |b: Vec3, w: Vec3| {
        settle(&cfg, &sched, &DriveTimeline::dc(b, w), &s)
            .unwrap()
            .last_cycle
    };
    let bx = last(Vec3::x() * eps_b, Vec3::zeros());
    let by = last(Vec3::y() * eps_b, Vec3::zeros());
    assert!(rel_rms(&symmetry_map(&bx.clean_y), &by.clean_x) < 1e-6);
    let wx = last(Vec3::zeros(), Vec3::x() * eps_w);
    let wy = last(Vec3::zeros(), Vec3::y() * eps_w);
    assert!(rel_rms(&symmetry_map(&wx.clean_y), &wy.clean_x) < 1e-6);
}

#[test]
fn response_is_linear_in_small_drives() {
    let (cfg, sched, s) = fast();
    let trace = |k: f64| {
        let d = DriveTimeline::dc(Vec3::x() * units::pt(k), Vec3::y() * (1e-5 * k));
        settle(&cfg, &sched, &d, &s).unwrap().last_cycle.clean_x
    };
    let zero = trace(0.0);
    let one = trace(1.0);
    let two = trace(2.0);
    let d1: Vec<f64> = one.iter().zip(&zero).map(|(a, b)| 2.0 * (a - b)).collect();
    let d2: Vec<f64> = two.iter().zip(&zero).map(|(a, b)| a - b).collect();
    assert!(rel_rms(&d1, &d2) < 1e-3);
}

#[test]
fn undriven_cell_gives_flat_zero_signal() {
    let (cfg, sched, s) = fast();
    let m = settle(&cfg, &sched, &DriveTimeline::none(), &s)
        .unwrap()
        .last_cycle;
    assert!(m.clean_x.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn signature_columns_are_distinguishable() {
    let (cfg, sched, s) = fast();
    let opts = SignatureOptions {
        settle: s,
        ..SignatureOptions::default()
    };
    let sig = generate_signatures(&cfg, &sched, &opts).unwrap();
    assert_eq!(sig.len(), sched.samples_per_cycle());
    sig.check_distinguishable().unwrap();
    assert!(sig.gram_eigenvalues().iter().all(|e| *e > 0.0));
}

#[test]
fn measurement_noise_has_requested_statistics() {
    let (cfg, sched, _) = fast();
    let sigma = 1e-3;
    let opts = RunOptions {
        noise_sigma: sigma,
        seed: Some(11),
        ..RunOptions::default()
    };
    let run = run_protocol(
        &cfg,
        &sched,
        &DriveTimeline::none(),
        40.0 * sched.cycle_duration(),
        &initial_state(&cfg),
        &opts,
    )
    .unwrap();
    let noise: Vec<f64> = run
        .cycles
        .iter()
        .flat_map(|m| m.samples.iter().zip(&m.clean_x).map(|(a, b)| a - b))
        .collect();
    let n = noise.len() as f64;
    assert!(mean(&noise).abs() < 4.0 * sigma / n.sqrt());
    assert!((variance(&noise).sqrt() / sigma - 1.0).abs() < 4.0 / (2.0 * n).sqrt());
}

#[test]
fn seeded_noise_is_reproducible() {
    let (cfg, sched, _) = fast();
    let run = |seed: u64| {
        let opts = RunOptions {
            noise_sigma: 1e-3,
            seed: Some(seed),
            ..RunOptions::default()
        };
        run_protocol(
            &cfg,
            &sched,
            &DriveTimeline::none(),
            3.0 * sched.cycle_duration(),
            &initial_state(&cfg),
            &opts,
        )
        .unwrap()
        .cycles
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5)[0].samples, run(6)[0].samples);
}

#[test]
fn noisy_run_without_seed_is_rejected() {
    let (cfg, sched, _) = fast();
    let opts = RunOptions {
        noise_sigma: 1e-3,
        ..RunOptions::default()
    };
    let r = run_protocol(
        &cfg,
        &sched,
        &DriveTimeline::none(),
        sched.cycle_duration(),
        &initial_state(&cfg),
        &opts,
    );
    assert!(r.is_err());
}

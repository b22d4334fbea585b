mod common;

use std::sync::OnceLock;

use common::{mean, variance};
use panco::error::Error;
use panco::estimation::{
    fisher_information, fit_trace, golden_section, sensitivities, suppression_factor, LinearFitter,
};
use panco::model::{CellConfig, GAMMA_HE3};
use panco::protocol::{generate_signatures, PulseSchedule, Settle, SignatureOptions, SignatureSet};
use panco::scenarios::balanced;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn signatures() -> &'static SignatureSet {
    static SIG: OnceLock<SignatureSet> = OnceLock::new();
    SIG.get_or_init(|| {
        let sched = PulseSchedule::rb_xe_experiment();
        let cfg = balanced(&CellConfig::rb_xe_experiment(), &sched).unwrap();
        let opts = SignatureOptions {
            settle: Settle {
                time: 10.0,
                threshold: 1e-8,
            },
            ..SignatureOptions::default()
        };
        generate_signatures(&cfg, &sched, &opts).unwrap()
    })
}

fn synthesise(sig: &SignatureSet, beta: [f64; 4]) -> Vec<f64> {
    let cols = sig.columns();
    (0..sig.len())
        .map(|i| (0..4).map(|k| beta[k] * cols[k][i]).sum())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn noiseless_fit_recovers_drives(
        bx in -1e-10f64..1e-10, by in -1e-10f64..1e-10, wx in -1e-3f64..1e-3, wy in -1e-3f64..1e-3,
        offsets in (-1e-3f64..1e-3, -1e-3f64..1e-3),
    ) {
        let sig = signatures();
        let beta = [bx, by, wx, wy];
        let mut y = synthesise(sig, beta);
        let half = sig.meta.samples_per_window;
        for (i, v) in y.iter_mut().enumerate() {
            *v += if i < half { offsets.0 } else { offsets.1 };
        }
        let fit = LinearFitter::new(sig, true).unwrap().fit(&y, 0.0).unwrap();
        let scale = [1e-10, 1e-10, 1e-3, 1e-3];
        for k in 0..4 {
            prop_assert!((fit.coefficients()[k] - beta[k]).abs() < 1e-9 * scale[k]);
        }
        let b = fit.baseline.unwrap();
        prop_assert!((b[0] - offsets.0).abs() < 1e-12 && (b[1] - offsets.1).abs() < 1e-12);
    }

    #[test]
    fn sensitivities_scale_with_noise(sigma in 1e-6f64..1.0, k in 0.1f64..10.0) {
        let sig = signatures();
        let a = sensitivities(&fisher_information(sig, sigma).unwrap()).unwrap();
        let b = sensitivities(&fisher_information(sig, sigma * k).unwrap()).unwrap();
        for i in 0..4 {
            prop_assert!((b[i] / a[i] / k - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn suppression_is_inverse_in_crosstalk(x in 1e-3f64..1e6) {
        let s = suppression_factor(x, GAMMA_HE3).unwrap();
        prop_assert!((s * x / 32.43e6 - 1.0).abs() < 1e-12);
    }
}

#[test]
fn fitted_covariance_matches_monte_carlo() {
    let sig = signatures();
    let fitter = LinearFitter::new(sig, false).unwrap();
    let sigma = 1e-4;
    let beta = [2e-12, -1e-12, 1e-4, 3e-5];
    let clean = synthesise(sig, beta);
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let fits: Vec<[f64; 4]> = (0..1000)
        .map(|_| {
            let y: Vec<f64> = clean.iter().map(|v| v + normal.sample(&mut rng)).collect();
            fitter.fit(&y, sigma).unwrap().coefficients()
        })
        .collect();
    let predicted = fitter.unit_covariance() * (sigma * sigma);
    for k in 0..4 {
        let col: Vec<f64> = fits.iter().map(|f| f[k]).collect();
        let sd = predicted[(k, k)].sqrt();
        assert!(
            (variance(&col) / predicted[(k, k)] - 1.0).abs() < 0.15,
            "variance {k}"
        );
        assert!(
            (mean(&col) - beta[k]).abs() < 4.0 * sd / 1000f64.sqrt(),
            "bias {k}"
        );
    }
}

#[test]
fn fit_trace_splits_into_cycles() {
    let sig = signatures();
    let fitter = LinearFitter::new(sig, false).unwrap();
    let one = synthesise(sig, [1e-12, 0.0, 0.0, 2e-5]);
    let trace: Vec<f64> = one.iter().chain(&one).chain(&one).copied().collect();
    let ch = fit_trace(&fitter, &trace, sig.meta.tau).unwrap();
    assert_eq!(ch.len(), 3);
    assert_eq!(ch.t, vec![0.0, 2.0 * sig.meta.tau, 4.0 * sig.meta.tau]);
    assert!(ch.values.iter().all(|v| (v[3] - 2e-5).abs() < 1e-15));
    assert!(matches!(
        fit_trace(&fitter, &trace[1..], sig.meta.tau),
        Err(Error::GridMismatch(_))
    ));
    assert!(fit_trace(&fitter, &[], sig.meta.tau).is_err());
}

#[test]
fn signature_files_round_trip_exactly() {
    let sig = signatures();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sig.csv");
    sig.write(&path).unwrap();
    let back = SignatureSet::read(&path).unwrap();
    assert_eq!(&back, sig);
}

#[test]
fn golden_section_on_asymmetric_bowl() {
    let (x, _) = golden_section(-2.0, 5.0, 1e-8, |x| Ok((x - 0.7f64).abs().powf(1.5))).unwrap();
    assert!((x - 0.7).abs() < 1e-7);
}

use panco::model::{compensation_point, slowing_down_factor, units, CellConfig, QModel, Vec3};
use proptest::prelude::*;

proptest! {
    #[test]
    fn unit_conversions_round_trip(x in -1e6f64..1e6) {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1e-300);
        prop_assert!(close(units::to_nt(units::nt(x)), x));
        prop_assert!(close(units::to_pt(units::pt(x)), x));
        prop_assert!(close(units::to_ms(units::ms(x)), x));
        prop_assert!(close(units::rad_s_to_hz(units::hz_to_rad_s(x)), x));
        prop_assert!(close(units::rad_s_to_uhz(units::uhz_to_rad_s(x)), x));
        prop_assert!(close(units::gamma_to_mhz_per_t(units::mhz_per_t_to_gamma(x)), x));
        prop_assert!(close(units::uhz_per_pt_to_hz_per_t(units::hz_per_t_to_uhz_per_pt(x)), x));
    }

    #[test]
    fn slowing_factor_is_bounded_and_decreasing(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let q = |p: f64| slowing_down_factor(&(Vec3::new(0.3, -0.4, 0.866) * p), QModel::PolarisationDependent);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(q(lo) >= q(hi));
        prop_assert!((4.0..=6.0).contains(&q(a)));
    }

    #[test]
    fn compensation_point_is_linear(pe in 0.0f64..1.0, pn in 0.0f64..1.0) {
        let cfg = CellConfig::k_he3();
        let direct = cfg.noble.lambda_m * pn + cfg.alkali.lambda_m * pe;
        prop_assert!((compensation_point(&cfg, pe, pn) - direct).abs() < 1e-20);
    }

    #[test]
    fn balance_matches_loss_rate(mean_pe in 0.01f64..1.0, r_sd in 0.0f64..2.0, r_se in 0.0f64..2.0) {
        let mut cfg = CellConfig::rb_xe_simulation();
        cfg.noble.r_sd = r_sd;
        cfg.r_se_ne = r_se;
        cfg.balance_spin_exchange(mean_pe);
        prop_assert!((cfg.r_se_en * mean_pe - cfg.noble_loss_rate()).abs() < 1e-12);
    }
}

#[test]
fn magnetic_conversions_hand_values() {
    assert_eq!(units::nt(106.3), 106.3e-9);
    assert!((units::hz_per_t_to_uhz_per_pt(2e5) - 0.2).abs() < 1e-15);
    assert!((units::gamma_to_mhz_per_t(panco::model::GAMMA_HE3) - 32.43).abs() < 1e-12);
}

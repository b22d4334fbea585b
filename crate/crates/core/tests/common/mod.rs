//! Closed-form references shared by the integration tests. Nothing here
//! calls the integrator.

#![allow(dead_code)]

use nalgebra::{Rotation3, Unit};
use panco::dynamics::Tolerance;
use panco::model::{CellConfig, QModel, SlowingScope, Vec3};

/// Tolerance tight enough for 1e-8 relative oracle checks.
pub const TIGHT: Tolerance = Tolerance {
    rtol: 1e-12,
    atol: 1e-15,
};

/// K–³He cell with every rate and both couplings switched off, constant q.
pub fn bare_cell(q: f64) -> CellConfig {
    let mut cfg = CellConfig::k_he3();
    cfg.alkali.r_sd = 0.0;
    cfg.noble.r_sd = 0.0;
    cfg.r_se_en = 0.0;
    cfg.r_se_ne = 0.0;
    cfg.alkali.lambda_m = 0.0;
    cfg.noble.lambda_m = 0.0;
    cfg.bias_z = 0.0;
    cfg.q_model = QModel::Constant(q);
    cfg.slowing = SlowingScope::PrecessionOnly;
    cfg
}

/// dP/dt = ω × P with constant ω, evaluated in closed form.
pub fn precess(p0: &Vec3, omega: &Vec3, t: f64) -> Vec3 {
    match Unit::try_new(*omega, 1e-300) {
        Some(axis) => Rotation3::from_axis_angle(&axis, omega.norm() * t) * p0,
        None => *p0,
    }
}

/// |a − b| / |b|.
pub fn rel_err(a: &Vec3, b: &Vec3) -> f64 {
    (a - b).norm() / b.norm()
}

/// RMS of a − b relative to the RMS of b.
pub fn rel_rms(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

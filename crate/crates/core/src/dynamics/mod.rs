//! Coupled alkali/noble-gas Bloch equations and their time integration.

pub mod drive;
pub mod integrator;

use std::io::Write;
use std::path::Path;

use nalgebra::Rotation3;

use crate::error::{Error, Result};
use crate::model::{slowing_down_factor, CellConfig, SlowingScope, Vec3};

pub use drive::{DriveTimeline, Program, Waveform};
pub use integrator::{Dopri5, State, Tolerance};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpinState {
    pub pe: Vec3,
    pub pn: Vec3,
    pub t: f64,
}

impl SpinState {
    pub fn new(pe: Vec3, pn: Vec3, t: f64) -> Self {
        SpinState { pe, pn, t }
    }

    /// Both species fully polarised along z at t = 0.
    pub fn polarised_z() -> Self {
        SpinState::new(Vec3::z(), Vec3::z(), 0.0)
    }

    pub fn to_array(&self) -> State {
        [
            self.pe.x, self.pe.y, self.pe.z, self.pn.x, self.pn.y, self.pn.z,
        ]
    }

    pub fn from_array(y: &State, t: f64) -> Self {
        SpinState {
            pe: Vec3::new(y[0], y[1], y[2]),
            pn: Vec3::new(y[3], y[4], y[5]),
            t,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Non-drive conditions held constant over a segment.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Conditions {
    /// Optical pump rate, 1/s.
    pub pump_rate: f64,
    /// Extra field along z from a finite magnetic pulse, tesla.
    pub pulse_bz: f64,
    /// Alkali polarisation pinned (saturating pump); only Pⁿ evolves.
    pub hold_alkali: bool,
}

impl Conditions {
    pub fn free() -> Self {
        Conditions::default()
    }

    pub fn pumped(rate: f64) -> Self {
        Conditions {
            pump_rate: rate,
            ..Conditions::default()
        }
    }

    pub fn held() -> Self {
        Conditions {
            hold_alkali: true,
            ..Conditions::default()
        }
    }
}

/// Right-hand side for explicit applied field `b` and rotation `omega`.
pub fn rhs_with(
    pe: &Vec3,
    pn: &Vec3,
    b: &Vec3,
    omega: &Vec3,
    cfg: &CellConfig,
    cond: &Conditions,
) -> (Vec3, Vec3) {
    let rot = cfg.rotation_sense.sign();
    let b_common = b + Vec3::new(0.0, 0.0, cfg.bias_z + cond.pulse_bz);

    let dpe = if cond.hold_alkali {
        Vec3::zeros()
    } else {
        let q = slowing_down_factor(pe, cfg.q_model);
        let b_e = b_common + pn * cfg.noble.lambda_m;
        let precession = b_e.cross(pe) * cfg.alkali.gamma;
        let rates =
            pn * cfg.r_se_ne + (cfg.pump_axis - pe) * cond.pump_rate - pe * cfg.alkali_loss_rate();
        let bracket = match cfg.slowing {
            SlowingScope::Full => (precession + rates) / q,
            SlowingScope::PrecessionOnly => precession / q + rates,
        };
        bracket + omega.cross(pe) * rot
    };

    let b_n = b_common + pe * cfg.alkali.lambda_m;
    let dpn = b_n.cross(pn) * cfg.noble.gamma + omega.cross(pn) * rot + pe * cfg.r_se_en
        - pn * cfg.noble_loss_rate();
    (dpe, dpn)
}

/// dPᵉ/dt and dPⁿ/dt at `s`. `pump_on` applies the pump at `cfg.r_p_on`.
pub fn bloch_rhs(
    s: &SpinState,
    drive: &DriveTimeline,
    cfg: &CellConfig,
    pump_on: bool,
) -> (Vec3, Vec3) {
    let cond = Conditions {
        pump_rate: if pump_on { cfg.r_p_on } else { 0.0 },
        ..Conditions::default()
    };
    let (dpe, dpn) = rhs_with(
        &s.pe,
        &s.pn,
        &drive.field_at(s.t),
        &drive.rotation_at(s.t),
        cfg,
        &cond,
    );
    assert!(
        dpe.iter().chain(dpn.iter()).all(|v| v.is_finite()),
        "non-finite Bloch derivative at t = {}",
        s.t
    );
    (dpe, dpn)
}

/// Integrates from `s0` to `t1` under fixed `cond`, splitting at every drive
/// discontinuity. Each `samples` time (sorted, inside `[s0.t, t1]`) is passed
/// to `emit` with the interpolated state.
#[allow(clippy::too_many_arguments)]
pub fn integrate_with<E>(
    s0: &SpinState,
    t1: f64,
    drive: &DriveTimeline,
    cfg: &CellConfig,
    cond: &Conditions,
    tol: Tolerance,
    samples: &[f64],
    mut emit: E,
) -> Result<SpinState>
where
    E: FnMut(&SpinState),
{
    if !(t1 >= s0.t) {
        return Err(Error::InvalidConfig(format!(
            "integration end {t1} precedes start {}",
            s0.t
        )));
    }
    let mut edges = vec![s0.t];
    edges.extend(drive.discontinuities(s0.t, t1));
    edges.push(t1);

    let mut ig = Dopri5::new(tol);
    let mut y = s0.to_array();
    let held_pe = s0.pe;
    let mut k = 0usize;
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let branch = 0.5 * (a + b);
        let start = k;
        if b == t1 {
            k = samples.len();
        }
        while k < samples.len() && samples[k] < b {
            k += 1;
        }
        let f = |t: f64, y: &State| -> State {
            let pe = if cond.hold_alkali {
                held_pe
            } else {
                Vec3::new(y[0], y[1], y[2])
            };
            let pn = Vec3::new(y[3], y[4], y[5]);
            let (dpe, dpn) = rhs_with(
                &pe,
                &pn,
                &drive.field.eval_on(t, branch),
                &drive.rotation.eval_on(t, branch),
                cfg,
                cond,
            );
            [dpe.x, dpe.y, dpe.z, dpn.x, dpn.y, dpn.z]
        };
        y = ig.integrate_segment(f, a, b, y, &samples[start..k], |t, s| {
            emit(&SpinState::from_array(s, t))
        })?;
    }
    let out = SpinState::from_array(&y, t1);
    if !out.is_finite() {
        return Err(Error::NonFinite { t: t1 });
    }
    Ok(out)
}

/// A sampled trajectory plus the end state.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub samples: Vec<SpinState>,
}

impl Trajectory {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "t,Pe_x,Pe_y,Pe_z,Pn_x,Pn_y,Pn_z").map_err(io)?;
        for s in &self.samples {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                s.t, s.pe.x, s.pe.y, s.pe.z, s.pn.x, s.pn.y, s.pn.z
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Free evolution (pump off) from `s0` to `t1`, sampled on `grid`.
pub fn integrate(
    s0: &SpinState,
    drive: &DriveTimeline,
    cfg: &CellConfig,
    t1: f64,
    tol: Tolerance,
    grid: &[f64],
) -> Result<(Trajectory, SpinState)> {
    if !(t1 > s0.t) {
        return Err(Error::InvalidConfig(format!(
            "integration end {t1} must follow start {}",
            s0.t
        )));
    }
    let mut traj = Trajectory::default();
    let end = integrate_with(s0, t1, drive, cfg, &Conditions::free(), tol, grid, |s| {
        traj.samples.push(*s)
    })?;
    Ok((traj, end))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PulseMode {
    /// Instantaneous rotation.
    Impulse,
    /// Square field pulse of the given length along z, pump on.
    Finite { duration: f64 },
}

/// Rotates Pⁿ about z by `area`.
///
/// Impulse mode also pins Pᵉ to `p_sat` along the pump axis, since the pulse
/// coincides with saturating optical pumping. Finite mode integrates the full
/// equations with B_z = area/(γₙ·duration) added and the pump on at `R_p_on`.
pub fn apply_magnetic_pulse(
    s: &SpinState,
    area: f64,
    mode: PulseMode,
    cfg: &CellConfig,
    drive: &DriveTimeline,
    p_sat: f64,
    tol: Tolerance,
) -> Result<SpinState> {
    if !area.is_finite() || area.abs() > std::f64::consts::PI + 1e-12 {
        return Err(Error::InvalidConfig(format!(
            "pulse area {area} rad outside [-pi, pi]"
        )));
    }
    match mode {
        PulseMode::Impulse => {
            let r = Rotation3::from_axis_angle(&Vec3::z_axis(), area);
            Ok(SpinState {
                pe: cfg.pump_axis * p_sat,
                pn: r * s.pn,
                t: s.t,
            })
        }
        PulseMode::Finite { duration } => {
            if !(duration > 0.0 && duration.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "finite pulse duration must be > 0, got {duration}"
                )));
            }
            let cond = Conditions {
                pump_rate: cfg.r_p_on,
                pulse_bz: pulse_field(area, duration, cfg),
                hold_alkali: false,
            };
            integrate_with(s, s.t + duration, drive, cfg, &cond, tol, &[], |_| {})
        }
    }
}

/// Square-pulse amplitude giving a z-rotation `area` of the noble spin.
pub fn pulse_field(area: f64, duration: f64, cfg: &CellConfig) -> f64 {
    area / (cfg.noble.gamma * duration)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{units, QModel};
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, TAU};

    fn quiet() -> CellConfig {
        let mut cfg = CellConfig::k_he3();
        cfg.alkali.r_sd = 0.0;
        cfg.alkali.lambda_m = 0.0;
        cfg.noble.lambda_m = 0.0;
        cfg.bias_z = 0.0;
        cfg.q_model = QModel::Constant(4.0);
        cfg
    }

    #[test]
    fn collinear_state_only_decays() {
        let mut cfg = CellConfig::k_he3();
        cfg.slowing = SlowingScope::Full;
        cfg.noble.r_sd = 0.2;
        let s = SpinState::polarised_z();
        let (dpe, dpn) = bloch_rhs(&s, &DriveTimeline::none(), &cfg, false);
        assert_relative_eq!(dpe, Vec3::new(0.0, 0.0, -50.0 / 4.0), epsilon = 1e-12);
        assert_relative_eq!(dpn, Vec3::new(0.0, 0.0, -0.2), epsilon = 1e-12);
    }

    #[test]
    fn larmor_rate_hand_value() {
        let mut cfg = quiet();
        cfg.bias_z = units::nt(1.0);
        let s = SpinState::new(Vec3::x(), Vec3::z(), 0.0);
        let (dpe, _) = bloch_rhs(&s, &DriveTimeline::none(), &cfg, false);
        assert_relative_eq!(dpe.y, TAU * 28.0 / 4.0, epsilon = 1e-12);
        assert_relative_eq!(dpe.y, 43.982297150257104, epsilon = 1e-12);
        assert!(dpe.x.abs() < 1e-15 && dpe.z.abs() < 1e-15);
    }

    #[test]
    fn pump_balance_fixed_point() {
        let mut cfg = quiet();
        cfg.alkali.r_sd = 50.0;
        let s = SpinState::new(Vec3::z() * 0.5, Vec3::z(), 0.0);
        let cond = Conditions::pumped(50.0);
        for scope in [SlowingScope::Full, SlowingScope::PrecessionOnly] {
            cfg.slowing = scope;
            let (dpe, _) = rhs_with(&s.pe, &s.pn, &Vec3::zeros(), &Vec3::zeros(), &cfg, &cond);
            assert!(dpe.norm() < 1e-12);
        }
    }

    #[test]
    fn impulse_pulse_rotates_noble_and_pins_alkali() {
        let cfg = CellConfig::k_he3();
        let s = SpinState::new(Vec3::new(0.3, 0.1, 0.2), Vec3::new(0.1, 0.0, 0.99), 0.0);
        let d = DriveTimeline::none();
        let out = apply_magnetic_pulse(
            &s,
            FRAC_PI_2,
            PulseMode::Impulse,
            &cfg,
            &d,
            0.99,
            Tolerance::default(),
        )
        .unwrap();
        assert_relative_eq!(out.pn, Vec3::new(0.0, 0.1, 0.99), epsilon = 1e-15);
        assert_relative_eq!(out.pe, Vec3::z() * 0.99, epsilon = 1e-15);
        let zero = apply_magnetic_pulse(
            &s,
            0.0,
            PulseMode::Impulse,
            &cfg,
            &d,
            0.99,
            Tolerance::default(),
        )
        .unwrap();
        assert_eq!(zero.pn, s.pn);
    }

    #[test]
    fn pulse_amplitude_for_helium() {
        let cfg = CellConfig::k_he3();
        let b = pulse_field(FRAC_PI_2, 1e-3, &cfg);
        assert_relative_eq!(b, 7.709e-6, max_relative = 1e-3);
    }

    #[test]
    fn finite_pulse_rejects_bad_duration() {
        let cfg = CellConfig::k_he3();
        let s = SpinState::polarised_z();
        let r = apply_magnetic_pulse(
            &s,
            1.0,
            PulseMode::Finite { duration: 0.0 },
            &cfg,
            &DriveTimeline::none(),
            1.0,
            Tolerance::default(),
        );
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn samples_are_emitted_in_order() {
        let cfg = quiet();
        let grid: Vec<f64> = (0..10).map(|i| i as f64 * 1e-3).collect();
        let (traj, end) = integrate(
            &SpinState::polarised_z(),
            &DriveTimeline::none(),
            &cfg,
            9e-3,
            Tolerance::default(),
            &grid,
        )
        .unwrap();
        assert_eq!(traj.samples.len(), 10);
        assert!(traj.samples.windows(2).all(|w| w[0].t < w[1].t));
        assert_eq!(end.t, 9e-3);
    }
}

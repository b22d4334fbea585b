//! Continuously pumped reference schemes: the self-compensated
//! comagnetometer (CW-SCC) and the alkali-only SERF magnetometer.

use nalgebra::{Matrix4, Vector4};

use super::schedule::{Settle, RESPONSE_TOLERANCE};
use crate::dynamics::{
    integrate_with, rhs_with, Conditions, DriveTimeline, SpinState, Tolerance, Waveform,
};
use crate::error::{Error, Result};
use crate::model::{slowing_down_factor, units, CellConfig, SlowingScope, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CwOptions {
    /// Continuous pump rate; `None` uses the alkali spin-destruction rate,
    /// which gives Pᵉ_z = 1/2.
    pub pump_rate: Option<f64>,
    pub settle: Settle,
    pub eps_b: f64,
    pub eps_omega: f64,
    pub tol: Tolerance,
}

impl Default for CwOptions {
    fn default() -> Self {
        CwOptions {
            pump_rate: None,
            settle: Settle::default(),
            eps_b: units::nt(1e-4),
            eps_omega: units::hz_to_rad_s(1e-4),
            tol: RESPONSE_TOLERANCE,
        }
    }
}

impl CwOptions {
    pub fn rate(&self, cfg: &CellConfig) -> f64 {
        self.pump_rate.unwrap_or(cfg.alkali.r_sd)
    }
}

/// Steady longitudinal alkali polarisation under continuous pumping.
pub fn cw_polarisation(cfg: &CellConfig, pump_rate: f64) -> f64 {
    pump_rate / (pump_rate + cfg.alkali_loss_rate())
}

/// Steady Pᵉ under continuous pumping with a DC `drive`.
///
/// The cell is integrated for `opts.settle.time`, then the transverse
/// components are polished to the exact fixed point with Newton steps (the
/// noble-gas mode far from compensation is damped only through the alkali
/// and can take minutes to decay). The fixed point must be stable.
pub fn run_cw_scc(cfg: &CellConfig, drive: &DriveTimeline, opts: &CwOptions) -> Result<Vec3> {
    cfg.validate()?;
    if !drive.discontinuities(0.0, f64::MAX).is_empty()
        || drive
            .field
            .0
            .iter()
            .chain(&drive.rotation.0)
            .any(|w| !matches!(w, Waveform::Constant { .. }))
    {
        return Err(Error::InvalidConfig("CW reference needs a DC drive".into()));
    }
    let rate = opts.rate(cfg);
    let t_end = opts.settle.time;
    if !(t_end > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "CW settle time must be > 0, got {t_end}"
        )));
    }
    let start = SpinState::new(cfg.pump_axis * cw_polarisation(cfg, rate), Vec3::z(), 0.0);
    let cond = Conditions::pumped(rate);
    let settled = integrate_with(&start, t_end, drive, cfg, &cond, opts.tol, &[], |_| {})?;

    let b = drive.field_at(0.0);
    let w = drive.rotation_at(0.0);
    let (pe_z, pn_z) = (settled.pe.z, settled.pn.z);
    let f = |u: &Vector4<f64>| -> Vector4<f64> {
        let pe = Vec3::new(u[0], u[1], pe_z);
        let pn = Vec3::new(u[2], u[3], pn_z);
        let (dpe, dpn) = rhs_with(&pe, &pn, &b, &w, cfg, &cond);
        Vector4::new(dpe.x, dpe.y, dpn.x, dpn.y)
    };
    let mut u = Vector4::new(settled.pe.x, settled.pe.y, settled.pn.x, settled.pn.y);
    let mut discrepancy = f64::INFINITY;
    for _ in 0..NEWTON_ITERATIONS {
        let scale = u.amax().max(1e-12);
        let h = 1e-3 * scale;
        let f0 = f(&u);
        let mut jac = Matrix4::zeros();
        for k in 0..4 {
            let mut up = u;
            up[k] += h;
            let mut um = u;
            um[k] -= h;
            jac.set_column(k, &((f(&up) - f(&um)) / (2.0 * h)));
        }
        // undamped modes (a decoupled noble gas) are tolerated, growing ones are not
        let eig = jac.complex_eigenvalues();
        let size = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let stable = eig.iter().all(|z| z.re <= 1e-9 * size);
        if !stable {
            return Err(Error::NotConverged {
                discrepancy: f64::INFINITY,
                threshold: opts.settle.threshold,
                elapsed: t_end,
            });
        }
        let step = jac.lu().solve(&(-f0)).ok_or(Error::NotConverged {
            discrepancy: f64::INFINITY,
            threshold: opts.settle.threshold,
            elapsed: t_end,
        })?;
        u += step;
        discrepancy = if u.amax() == 0.0 {
            0.0
        } else {
            step.amax() / u.amax()
        };
        if discrepancy <= 1e-3 * opts.settle.threshold {
            break;
        }
    }
    if !(discrepancy <= opts.settle.threshold) {
        return Err(Error::NotConverged {
            discrepancy,
            threshold: opts.settle.threshold,
            elapsed: t_end,
        });
    }
    Ok(Vec3::new(u[0], u[1], pe_z))
}

const NEWTON_ITERATIONS: usize = 6;

/// Steady transverse alkali response per unit drive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CwResponses {
    /// Pᵉ per tesla of B_x.
    pub bx: Vec3,
    /// Pᵉ per rad/s of Ω_x.
    pub omx: Vec3,
}

impl CwResponses {
    /// Pᵉ_x per rad/s of Ω_y, the rotation axis the x probe is sensitive to.
    pub fn rotation(&self) -> f64 {
        -self.omx.y
    }

    /// Pᵉ_x per tesla of B_y.
    pub fn magnetic(&self) -> f64 {
        -self.bx.y
    }
}

pub fn cw_responses(cfg: &CellConfig, opts: &CwOptions) -> Result<CwResponses> {
    let b = DriveTimeline::dc(Vec3::x() * opts.eps_b, Vec3::zeros());
    let w = DriveTimeline::dc(Vec3::zeros(), Vec3::x() * opts.eps_omega);
    let (rb, rw) = rayon::join(|| run_cw_scc(cfg, &b, opts), || run_cw_scc(cfg, &w, opts));
    let strip = |p: Vec3| Vec3::new(p.x, p.y, 0.0);
    Ok(CwResponses {
        bx: strip(rb?) / opts.eps_b,
        omx: strip(rw?) / opts.eps_omega,
    })
}

/// The alkali-only magnetometer: no noble-gas field, no spin exchange,
/// zero bias.
pub fn serf_cell(cfg: &CellConfig) -> CellConfig {
    let mut c = cfg.clone();
    c.noble.lambda_m = 0.0;
    c.r_se_en = 0.0;
    c.r_se_ne = 0.0;
    c.bias_z = 0.0;
    c
}

/// Steady Pᵉ_x per tesla of B_y for the SERF reference, by simulation.
pub fn run_serf_reference(cfg: &CellConfig, opts: &CwOptions) -> Result<f64> {
    let serf = serf_cell(cfg);
    let drive = DriveTimeline::dc(Vec3::y() * opts.eps_b, Vec3::zeros());
    Ok(run_cw_scc(&serf, &drive, opts)?.x / opts.eps_b)
}

/// Closed-form small-signal Pᵉ_x per tesla of B_y for the SERF reference:
/// γₑ·P_z/(q·R) with R the total alkali rate, or γₑ·P_z/R when every term
/// is slowed.
pub fn serf_closed_form(cfg: &CellConfig, pump_rate: f64) -> f64 {
    let serf = serf_cell(cfg);
    let pz = cw_polarisation(&serf, pump_rate);
    let total = pump_rate + serf.alkali_loss_rate();
    match serf.slowing {
        SlowingScope::PrecessionOnly => {
            let q = slowing_down_factor(&(Vec3::z() * pz), serf.q_model);
            serf.alkali.gamma * pz / (q * total)
        }
        SlowingScope::Full => serf.alkali.gamma * pz / total,
    }
}

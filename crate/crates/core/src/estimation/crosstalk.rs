use serde::Serialize;

use super::fit::LinearFitter;
use crate::dynamics::DriveTimeline;
use crate::error::{Error, Result};
use crate::model::{units, CellConfig, Vec3};
use crate::protocol::{settle, PulseSchedule, Settle, SignatureSet};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrosstalkOptions {
    /// DC field applied along x, tesla.
    pub b_probe: f64,
    pub settle: Settle,
    /// Repeat with half the probe and require the same answer.
    pub check_linearity: bool,
}

impl Default for CrosstalkOptions {
    fn default() -> Self {
        CrosstalkOptions {
            b_probe: units::pt(1.0),
            settle: Settle::default(),
            check_linearity: true,
        }
    }
}

/// Apparent rotation per applied field, µHz/pT.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Crosstalk {
    pub omega_x: f64,
    pub omega_y: f64,
}

impl Crosstalk {
    /// Ω_x cross-talk in Hz per tesla.
    pub fn omega_x_hz_per_t(&self) -> f64 {
        units::uhz_per_pt_to_hz_per_t(self.omega_x)
    }
}

fn probe(
    cfg: &CellConfig,
    sched: &PulseSchedule,
    fitter: &LinearFitter,
    b: f64,
    s: &Settle,
) -> Result<Crosstalk> {
    let run = settle(
        cfg,
        sched,
        &DriveTimeline::dc(Vec3::x() * b, Vec3::zeros()),
        s,
    )?;
    let fit = fitter.fit(&run.last_cycle.clean_x, 0.0)?;
    let per = |om: f64| units::rad_s_to_uhz(om) / units::to_pt(b);
    Ok(Crosstalk {
        omega_x: per(fit.om_x),
        omega_y: per(fit.om_y),
    })
}

/// Runs the protocol with the bias at `bias_actual` (signed, tesla) and a DC
/// B_x probe, and fits the settled cycle with `sig_nominal`.
pub fn crosstalk(
    cfg: &CellConfig,
    sched: &PulseSchedule,
    sig_nominal: &SignatureSet,
    bias_actual: f64,
    opts: &CrosstalkOptions,
) -> Result<Crosstalk> {
    if !(opts.b_probe != 0.0 && opts.b_probe.is_finite()) {
        return Err(Error::InvalidConfig(
            "cross-talk probe must be non-zero".into(),
        ));
    }
    let fitter = LinearFitter::new(sig_nominal, false)?;
    let actual = cfg.clone().with_bias(bias_actual);
    let full = || probe(&actual, sched, &fitter, opts.b_probe, &opts.settle);
    if !opts.check_linearity {
        return full();
    }
    let half = || probe(&actual, sched, &fitter, 0.5 * opts.b_probe, &opts.settle);
    let (a, b) = rayon::join(full, half);
    let (a, b) = (a?, b?);
    for (what, x, y) in [
        ("cross-talk Omega_x", a.omega_x, b.omega_x),
        ("cross-talk Omega_y", a.omega_y, b.omega_y),
    ] {
        let diff = (x - y).abs();
        if diff > 0.01 * x.abs() + 1e-4 {
            return Err(Error::Linearity {
                what: what.into(),
                relative: diff / x.abs().max(f64::MIN_POSITIVE),
                limit: 0.01,
            });
        }
    }
    Ok(a)
}

/// (γₙ/2π)/cross-talk: how far the field-equivalent rotation response is
/// reduced relative to a bare nuclear spin. Cross-talk in Hz/T.
pub fn suppression_factor(crosstalk_hz_per_t: f64, gamma_n: f64) -> Result<f64> {
    if !(crosstalk_hz_per_t > 0.0 && crosstalk_hz_per_t.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "cross-talk must be positive and finite, got {crosstalk_hz_per_t}"
        )));
    }
    Ok(units::rad_s_to_hz(gamma_n.abs()) / crosstalk_hz_per_t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GAMMA_HE3;
    use approx::assert_relative_eq;

    #[test]
    fn unit_suppression_when_crosstalk_equals_gyromagnetic_ratio() {
        assert_relative_eq!(
            suppression_factor(32.43e6, GAMMA_HE3).unwrap(),
            1.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn halving_crosstalk_doubles_suppression() {
        let a = suppression_factor(2e5, GAMMA_HE3).unwrap();
        let b = suppression_factor(1e5, GAMMA_HE3).unwrap();
        assert_relative_eq!(b, 2.0 * a, max_relative = 1e-14);
    }

    #[test]
    fn non_positive_crosstalk_is_rejected() {
        assert!(suppression_factor(0.0, GAMMA_HE3).is_err());
        assert!(suppression_factor(-1.0, GAMMA_HE3).is_err());
    }
}

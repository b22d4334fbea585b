use std::path::Path;

use super::fit::{FitResult, LinearFitter};
use crate::error::{Error, Result};
use crate::io;
use crate::model::units;

pub const CHANNEL_HEADER: [&str; 6] = [
    "t",
    "B_x_pT",
    "B_y_pT",
    "Om_x_uHz",
    "Om_y_uHz",
    "residual_rms",
];

/// Per-cycle fitted drives, SI units.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChannelSeries {
    /// Cycle start times.
    pub t: Vec<f64>,
    /// Bx, By (tesla), Ωx, Ωy (rad/s).
    pub values: Vec<[f64; 4]>,
    pub residual_rms: Vec<f64>,
}

impl ChannelSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn push(&mut self, t: f64, fit: &FitResult) {
        self.t.push(t);
        self.values.push(fit.coefficients());
        self.residual_rms.push(fit.residual_rms);
    }

    pub fn channel(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[k]).collect()
    }

    /// Rows in display units (pT, µHz).
    pub fn rows(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        self.t
            .iter()
            .zip(&self.values)
            .zip(&self.residual_rms)
            .map(|((t, v), r)| {
                vec![
                    *t,
                    units::to_pt(v[0]),
                    units::to_pt(v[1]),
                    units::rad_s_to_uhz(v[2]),
                    units::rad_s_to_uhz(v[3]),
                    *r,
                ]
            })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::write_csv(path, &CHANNEL_HEADER, self.rows())
    }
}

/// Start time of cycle `c` of a run that began at t = 0.
pub fn cycle_start(c: usize, tau: f64) -> f64 {
    2.0 * c as f64 * tau
}

/// Fits a concatenation of whole cycles, one fit per cycle.
pub fn fit_trace(fitter: &LinearFitter, samples: &[f64], tau: f64) -> Result<ChannelSeries> {
    if samples.is_empty() {
        return Err(Error::Usage("trace is empty".into()));
    }
    let n = fitter.len();
    if !samples.len().is_multiple_of(n) {
        return Err(Error::GridMismatch(format!(
            "trace has {} samples, not a whole number of {n}-sample cycles",
            samples.len()
        )));
    }
    let mut out = ChannelSeries::default();
    for (c, chunk) in samples.chunks(n).enumerate() {
        out.push(cycle_start(c, tau), &fitter.fit(chunk, 0.0)?);
    }
    Ok(out)
}

use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{balanced, TraceRecord};
use crate::dynamics::{DriveTimeline, Program, Waveform};
use crate::error::{Error, Result};
use crate::estimation::{
    crosstalk, suppression_factor, ChannelSeries, Crosstalk, CrosstalkOptions, LinearFitter,
};
use crate::model::{units, CellConfig, Vec3};
use crate::protocol::{
    cycles_in, generate_signatures, initial_state, run_cycles, PulseSchedule, RunOptions, Settle,
    SignatureOptions, SignatureSet,
};

#[derive(Clone, Debug)]
pub struct WobbleParams {
    pub cfg: CellConfig,
    pub sched: PulseSchedule,
    /// Peak Ω_y, rad/s.
    pub omega_peak: f64,
    pub wobble_frequency: f64,
    /// Peak of the sinusoidal B_x drift, tesla.
    pub drift_amp: f64,
    pub drift_period: f64,
    pub duration: f64,
    /// Start-up interval left out of the regressions.
    pub discard: f64,
    /// Bias error of the second signature set, tesla.
    pub mis_set: f64,
    pub noise_sigma: f64,
    pub seed: Option<u64>,
    pub signature: SignatureOptions,
    pub crosstalk: CrosstalkOptions,
    pub balance: bool,
    pub keep_trace: bool,
}

impl Default for WobbleParams {
    fn default() -> Self {
        let settle = Settle {
            time: 20.0,
            threshold: 1e-8,
        };
        WobbleParams {
            cfg: CellConfig::rb_xe_experiment(),
            sched: PulseSchedule::rb_xe_experiment(),
            omega_peak: units::uhz_to_rad_s(100.0),
            wobble_frequency: 0.1,
            drift_amp: units::pt(25.0),
            drift_period: 200.0,
            duration: 100.0,
            discard: 2.0,
            mis_set: units::nt(0.2),
            noise_sigma: 0.0,
            seed: None,
            signature: SignatureOptions {
                settle,
                ..SignatureOptions::default()
            },
            crosstalk: CrosstalkOptions {
                settle,
                ..CrosstalkOptions::default()
            },
            balance: true,
            keep_trace: true,
        }
    }
}

/// Regression of one rotation channel on the drift, its rate of change and
/// the wobble. The noble gas lags a changing field, which shows up as a
/// term in dB/dt; the static leakage is the coefficient of B itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChannelRegression {
    /// µHz per pT of B_x drift.
    pub leakage: f64,
    /// µHz per pT/s of drift rate.
    pub lag: f64,
    /// µHz.
    pub wobble_amplitude: f64,
    pub offset_uhz: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct WobbleSummary {
    pub exact: [ChannelRegression; 2],
    pub mis_set: [ChannelRegression; 2],
    pub omega_y_amplitude_error: f64,
    /// |leakage| over the two rotation channels, µHz/pT.
    pub leakage_exact: f64,
    pub leakage_mis_set: f64,
    pub crosstalk_predicted: Crosstalk,
    /// |leakage with mis-set signatures| / |predicted cross-talk|.
    pub leakage_ratio: f64,
    pub suppression: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct WobbleOutput {
    pub signatures: SignatureSet,
    pub signatures_mis_set: SignatureSet,
    pub channels: ChannelSeries,
    pub channels_mis_set: ChannelSeries,
    pub trace: Option<TraceRecord>,
    pub summary: WobbleSummary,
}

fn regress(
    ch: &ChannelSeries,
    k: usize,
    p: &WobbleParams,
    drift: &Program,
    half: f64,
) -> Result<ChannelRegression> {
    let rows: Vec<(f64, f64)> =
        ch.t.iter()
            .zip(&ch.values)
            .filter(|(t, _)| **t >= p.discard)
            .map(|(t, v)| (t + half, v[k]))
            .collect();
    if rows.len() < 8 {
        return Err(Error::InvalidConfig(
            "too few cycles after the discard interval".into(),
        ));
    }
    let h = 1e-3 * p.drift_period;
    let with_drift = !drift.is_zero();
    let cols = if with_drift { 5 } else { 3 };
    let x = DMatrix::from_fn(rows.len(), cols, |i, j| {
        let t = rows[i].0;
        match (j, with_drift) {
            (0, _) => 1.0,
            (1, _) => (TAU * p.wobble_frequency * t).sin(),
            (2, _) => (TAU * p.wobble_frequency * t).cos(),
            (3, _) => drift.eval(t).x,
            _ => (drift.eval(t + h).x - drift.eval(t - h).x) / (2.0 * h),
        }
    });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    // unit-scale the columns so the solve is well conditioned
    let scale: Vec<f64> = (0..cols)
        .map(|j| x.column(j).amax().max(f64::MIN_POSITIVE))
        .collect();
    let mut xs = x.clone();
    for (j, s) in scale.iter().enumerate() {
        xs.column_mut(j).scale_mut(1.0 / s);
    }
    let beta = xs
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::InvalidConfig(format!("wobble regression: {e}")))?;
    let coef = |j: usize| if j < cols { beta[j] / scale[j] } else { 0.0 };
    let to_uhz_per_pt = |c: f64| units::rad_s_to_uhz(c) * units::PICOTESLA;
    Ok(ChannelRegression {
        leakage: to_uhz_per_pt(coef(3)),
        lag: to_uhz_per_pt(coef(4)),
        wobble_amplitude: units::rad_s_to_uhz(coef(1).hypot(coef(2))),
        offset_uhz: units::rad_s_to_uhz(coef(0)),
    })
}

/// Sinusoidal Ω_y with a slow B_x drift, fitted with signatures at the true
/// bias and with signatures at a mis-set bias.
pub fn scenario_wobble(p: &WobbleParams) -> Result<WobbleOutput> {
    if !(p.drift_period > 0.0 && p.wobble_frequency > 0.0) {
        return Err(Error::InvalidConfig(
            "wobble frequency and drift period must be > 0".into(),
        ));
    }
    let cfg = if p.balance {
        balanced(&p.cfg, &p.sched)?
    } else {
        p.cfg.clone()
    };
    let mis = cfg.clone().with_bias(cfg.bias_z + p.mis_set);
    let (sigs, sigs_mis) = rayon::join(
        || generate_signatures(&cfg, &p.sched, &p.signature),
        || generate_signatures(&mis, &p.sched, &p.signature),
    );
    let (signatures, signatures_mis_set) = (sigs?, sigs_mis?);
    let exact = LinearFitter::new(&signatures, false)?;
    let off = LinearFitter::new(&signatures_mis_set, false)?;

    let drift = if p.drift_amp == 0.0 {
        Program::zero()
    } else {
        Program(vec![Waveform::Sinusoid {
            amplitude: p.drift_amp,
            frequency: 1.0 / p.drift_period,
            phase: 0.0,
            axis: Vec3::x(),
        }])
    };
    let drive = DriveTimeline {
        field: drift.clone(),
        rotation: Program(vec![Waveform::Sinusoid {
            amplitude: p.omega_peak,
            frequency: p.wobble_frequency,
            phase: 0.0,
            axis: Vec3::y(),
        }]),
    };
    let opts = RunOptions {
        noise_sigma: p.noise_sigma,
        seed: p.seed,
        ..RunOptions::default()
    };
    let n = cycles_in(&p.sched, p.duration)?;
    let grid = p.sched.cycle_grid();
    let (mut channels, mut channels_mis_set) = (ChannelSeries::default(), ChannelSeries::default());
    let mut trace = p.keep_trace.then(TraceRecord::default);
    run_cycles(
        &cfg,
        &p.sched,
        &drive,
        &initial_state(&cfg),
        n,
        &opts,
        None,
        |m| {
            channels.push(m.t_start, &exact.fit(&m.samples, m.noise_sigma)?);
            channels_mis_set.push(m.t_start, &off.fit(&m.samples, m.noise_sigma)?);
            if let Some(tr) = trace.as_mut() {
                tr.t.extend(grid.iter().map(|g| m.t_start + g));
                tr.pe_x.extend_from_slice(&m.samples);
            }
            Ok(())
        },
    )?;

    let half = 0.5 * p.sched.cycle_duration();
    let reg = |ch: &ChannelSeries| -> Result<[ChannelRegression; 2]> {
        Ok([
            regress(ch, 2, p, &drift, half)?,
            regress(ch, 3, p, &drift, half)?,
        ])
    };
    let (r_exact, r_mis) = (reg(&channels)?, reg(&channels_mis_set)?);
    let predicted = crosstalk(
        &cfg,
        &p.sched,
        &signatures_mis_set,
        cfg.bias_z,
        &p.crosstalk,
    )?;
    let magnitude = |r: &[ChannelRegression; 2]| r[0].leakage.hypot(r[1].leakage);
    let predicted_mag = predicted.omega_x.hypot(predicted.omega_y);
    let applied = units::rad_s_to_uhz(p.omega_peak);
    let summary = WobbleSummary {
        exact: r_exact,
        mis_set: r_mis,
        omega_y_amplitude_error: if applied == 0.0 {
            0.0
        } else {
            (r_exact[1].wobble_amplitude - applied).abs() / applied
        },
        leakage_exact: magnitude(&r_exact),
        leakage_mis_set: magnitude(&r_mis),
        leakage_ratio: magnitude(&r_mis) / predicted_mag,
        suppression: suppression_factor(
            units::uhz_per_pt_to_hz_per_t(predicted_mag),
            cfg.noble.gamma,
        )
        .ok(),
        crosstalk_predicted: predicted,
    };
    Ok(WobbleOutput {
        signatures,
        signatures_mis_set,
        channels,
        channels_mis_set,
        trace,
        summary,
    })
}

impl WobbleOutput {
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.channels.write_csv(&dir.join("channels.csv"))?;
        self.channels_mis_set
            .write_csv(&dir.join("channels_mis_set.csv"))?;
        self.signatures.write(&dir.join("signatures.csv"))?;
        self.signatures_mis_set
            .write(&dir.join("signatures_mis_set.csv"))?;
        match &self.trace {
            Some(t) => t.write(&dir.join("traces.csv")),
            None => Ok(()),
        }
    }
}

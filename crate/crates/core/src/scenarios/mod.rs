//! Ready-made emulations: response patterns of the Rb–Xe cell, the K–³He
//! sensitivity scan, square-wave and step field drives, rotation wobble
//! under field drift, and user-defined drives.

mod fig2;
mod square_wave;
mod steps;
mod wobble;

use std::path::Path;

pub use fig2::{scenario_fig2, Fig2Case, Fig2Output, Fig2Params, Fig2Summary, CASES as FIG2_CASES};
pub use square_wave::{
    scenario_square_wave, EdgeResponse, SquareWaveOutput, SquareWaveParams, SquareWaveSummary,
};
pub use steps::{scenario_step_decomposition, StepOutput, StepParams, StepSummary, STEP_HEADER};
pub use wobble::{scenario_wobble, WobbleOutput, WobbleParams, WobbleSummary};

use serde::Serialize;

use crate::dynamics::DriveTimeline;
use crate::error::Result;
use crate::estimation::{bias_scan, BiasScan, ChannelSeries, LinearFitter, ScanOptions};
use crate::io;
use crate::model::CellConfig;
use crate::protocol::{
    balance_spin_exchange, cycles_in, generate_signatures, initial_state, run_cycles,
    PulseSchedule, RunOptions, SignatureOptions, SignatureSet,
};

pub const SCENARIOS: [&str; 6] = [
    "fig2",
    "fig7",
    "square_wave",
    "step_decomposition",
    "wobble",
    "custom",
];

/// Copy of `cfg` with the alkali → noble exchange rate balanced against the
/// noble decay under `sched`.
pub fn balanced(cfg: &CellConfig, sched: &PulseSchedule) -> Result<CellConfig> {
    let mut c = cfg.clone();
    if c.noble.r_sd + c.r_se_ne > 0.0 {
        balance_spin_exchange(&mut c, sched)?;
    }
    Ok(c)
}

pub const TRACE_HEADER: [&str; 2] = ["t", "Pe_x"];

/// Measured polarimeter output of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceRecord {
    pub t: Vec<f64>,
    pub pe_x: Vec<f64>,
}

impl TraceRecord {
    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_columns(path, &TRACE_HEADER, &[&self.t, &self.pe_x])
    }
}

/// Runs from the initial state for `duration` and fits every cycle.
pub(crate) fn fit_run(
    cfg: &CellConfig,
    sched: &PulseSchedule,
    drive: &DriveTimeline,
    duration: f64,
    fitter: &LinearFitter,
    opts: &RunOptions,
    keep_trace: bool,
) -> Result<(ChannelSeries, Option<TraceRecord>)> {
    let n = cycles_in(sched, duration)?;
    let grid = sched.cycle_grid();
    let mut channels = ChannelSeries::default();
    let mut trace = keep_trace.then(TraceRecord::default);
    run_cycles(cfg, sched, drive, &initial_state(cfg), n, opts, None, |m| {
        channels.push(m.t_start, &fitter.fit(&m.samples, m.noise_sigma)?);
        if let Some(tr) = trace.as_mut() {
            tr.t.extend(grid.iter().map(|g| m.t_start + g));
            tr.pe_x.extend_from_slice(&m.samples);
        }
        Ok(())
    })?;
    Ok((channels, trace))
}

#[derive(Clone, Debug)]
pub struct Fig7Params {
    pub cfg: CellConfig,
    pub sched: PulseSchedule,
    /// Bias magnitudes, nT.
    pub biases_nt: Vec<f64>,
    pub scan: ScanOptions,
}

impl Default for Fig7Params {
    fn default() -> Self {
        Fig7Params {
            cfg: CellConfig::k_he3(),
            sched: PulseSchedule::k_he3(),
            biases_nt: (0..=40).map(|i| 95.0 + 0.5 * f64::from(i)).collect(),
            scan: ScanOptions::default(),
        }
    }
}

/// Sensitivity against bias for the pulsed scheme and the two
/// continuously pumped references.
pub fn scenario_fig7(p: &Fig7Params) -> Result<BiasScan> {
    bias_scan(&p.cfg, &p.sched, &p.biases_nt, &p.scan)
}

pub const SENSITIVITY_HEADER: [&str; 7] = [
    "bias_nT",
    "B_x_T",
    "B_y_T",
    "Om_x_rad_s",
    "Om_y_rad_s",
    "CW_rotation_rad_s",
    "SERF_magnetic_T",
];

/// channels.csv: raw per-cycle sensitivities with both references;
/// traces.csv: the curves normalised to the reference optima.
pub fn write_fig7(scan: &BiasScan, dir: &Path) -> Result<()> {
    let rows = scan.points.iter().map(|p| {
        let b = p.sens_b.unwrap_or([f64::NAN; 2]);
        let om = p.sens_om.unwrap_or([f64::NAN; 2]);
        vec![
            p.bias_nt,
            b[0],
            b[1],
            om[0],
            om[1],
            p.cw_rotation.unwrap_or(f64::NAN),
            scan.serf_magnetic,
        ]
    });
    io::write_csv(&dir.join("channels.csv"), &SENSITIVITY_HEADER, rows)?;
    io::write_csv(
        &dir.join("traces.csv"),
        &crate::estimation::NORMALISED_HEADER,
        scan.normalised_rows(),
    )
}

#[derive(Clone, Debug)]
pub struct CustomParams {
    pub cfg: CellConfig,
    pub sched: PulseSchedule,
    pub drive: DriveTimeline,
    pub duration: f64,
    pub noise_sigma: f64,
    pub seed: Option<u64>,
    pub signature: SignatureOptions,
    pub balance: bool,
    pub with_baseline: bool,
    pub keep_trace: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CustomSummary {
    pub cycles: usize,
    pub condition: f64,
    pub mean: [f64; 4],
}

#[derive(Clone, Debug)]
pub struct CustomOutput {
    pub signatures: SignatureSet,
    pub channels: ChannelSeries,
    pub trace: Option<TraceRecord>,
    pub summary: CustomSummary,
}

/// Any drive program on any cell, fitted cycle by cycle.
pub fn scenario_custom(p: &CustomParams) -> Result<CustomOutput> {
    let cfg = if p.balance {
        balanced(&p.cfg, &p.sched)?
    } else {
        p.cfg.clone()
    };
    let signatures = generate_signatures(&cfg, &p.sched, &p.signature)?;
    let fitter = LinearFitter::new(&signatures, p.with_baseline)?;
    let opts = RunOptions {
        noise_sigma: p.noise_sigma,
        seed: p.seed,
        ..RunOptions::default()
    };
    let (channels, trace) = fit_run(
        &cfg,
        &p.sched,
        &p.drive,
        p.duration,
        &fitter,
        &opts,
        p.keep_trace,
    )?;
    let n = channels.len() as f64;
    let mean = std::array::from_fn(|k| channels.values.iter().map(|v| v[k]).sum::<f64>() / n);
    Ok(CustomOutput {
        summary: CustomSummary {
            cycles: channels.len(),
            condition: fitter.condition,
            mean,
        },
        signatures,
        channels,
        trace,
    })
}

impl CustomOutput {
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.channels.write_csv(&dir.join("channels.csv"))?;
        self.signatures.write(&dir.join("signatures.csv"))?;
        match &self.trace {
            Some(t) => t.write(&dir.join("traces.csv")),
            None => Ok(()),
        }
    }
}

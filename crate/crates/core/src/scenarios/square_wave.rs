use std::path::Path;

use serde::Serialize;

use super::{balanced, fit_run, TraceRecord};
use crate::dynamics::{DriveTimeline, Program, Waveform};
use crate::error::{Error, Result};
use crate::estimation::{ChannelSeries, LinearFitter};
use crate::model::{units, CellConfig, Vec3};
use crate::protocol::{
    generate_signatures, PulseSchedule, RunOptions, Settle, SignatureOptions, SignatureSet,
};

#[derive(Clone, Debug)]
pub struct SquareWaveParams {
    pub cfg: CellConfig,
    pub sched: PulseSchedule,
    /// Tesla.
    pub amp_x: f64,
    pub amp_y: f64,
    pub period_x: f64,
    pub period_y: f64,
    pub duration: f64,
    pub noise_sigma: f64,
    pub seed: Option<u64>,
    pub signature: SignatureOptions,
    pub balance: bool,
    /// Time after an edge at which the rotation channels are compared with
    /// their post-edge peak.
    pub response_window: f64,
    pub keep_trace: bool,
}

impl Default for SquareWaveParams {
    fn default() -> Self {
        SquareWaveParams {
            cfg: CellConfig::rb_xe_experiment(),
            sched: PulseSchedule::rb_xe_experiment(),
            amp_x: units::pt(70.0),
            amp_y: units::pt(100.0),
            period_x: 10.0,
            period_y: 14.0,
            duration: 42.0,
            noise_sigma: 0.0,
            seed: None,
            signature: SignatureOptions {
                settle: Settle {
                    time: 20.0,
                    threshold: 1e-8,
                },
                ..SignatureOptions::default()
            },
            balance: true,
            response_window: 4.0,
            keep_trace: true,
        }
    }
}

/// Rotation-channel response around one field edge, µHz.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeResponse {
    pub t: f64,
    /// Largest |Ω| in the second after the edge.
    pub peak: f64,
    /// Largest |Ω| in the half second from `response_window` on.
    pub late: f64,
    pub suppression: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SquareWaveSummary {
    pub bx_amplitude_pt: f64,
    pub by_amplitude_pt: f64,
    pub bx_amplitude_error: f64,
    pub edges: Vec<EdgeResponse>,
    /// Smallest peak/late ratio over the evaluated edges.
    pub min_suppression: Option<f64>,
    pub max_omega_uhz: f64,
}

#[derive(Clone, Debug)]
pub struct SquareWaveOutput {
    pub signatures: SignatureSet,
    pub channels: ChannelSeries,
    pub trace: Option<TraceRecord>,
    pub summary: SquareWaveSummary,
}

fn wave(amplitude: f64, period: f64, axis: Vec3) -> Waveform {
    Waveform::Square {
        amplitude,
        period,
        phase: 0.0,
        axis,
    }
}

/// Edges of both waves in [0, duration), including the switch-on at 0.
fn edges(p: &SquareWaveParams) -> Vec<f64> {
    let mut e = vec![0.0];
    for (amp, period) in [(p.amp_x, p.period_x), (p.amp_y, p.period_y)] {
        if amp != 0.0 {
            Program(vec![wave(amp, period, Vec3::x())]).breakpoints(0.0, p.duration, &mut e);
        }
    }
    e.sort_by(f64::total_cmp);
    e.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    e
}

/// Applies square waves on B_x and B_y and fits every cycle with the
/// signatures of the same cell.
pub fn scenario_square_wave(p: &SquareWaveParams) -> Result<SquareWaveOutput> {
    if !(p.period_x > 0.0 && p.period_y > 0.0 && p.response_window > 0.0) {
        return Err(Error::InvalidConfig(
            "square-wave periods and response window must be > 0".into(),
        ));
    }
    let cfg = if p.balance {
        balanced(&p.cfg, &p.sched)?
    } else {
        p.cfg.clone()
    };
    let signatures = generate_signatures(&cfg, &p.sched, &p.signature)?;
    let fitter = LinearFitter::new(&signatures, false)?;
    let field = Program(vec![
        wave(p.amp_x, p.period_x, Vec3::x()),
        wave(p.amp_y, p.period_y, Vec3::y()),
    ]);
    let drive = DriveTimeline {
        field: field.clone(),
        rotation: Program::zero(),
    };
    let opts = RunOptions {
        noise_sigma: p.noise_sigma,
        seed: p.seed,
        ..RunOptions::default()
    };
    let (channels, trace) = fit_run(
        &cfg,
        &p.sched,
        &drive,
        p.duration,
        &fitter,
        &opts,
        p.keep_trace,
    )?;

    let edges = edges(p);
    let since_edge = |t: f64| {
        edges
            .iter()
            .filter(|e| **e <= t + 1e-9)
            .map(|e| t - e)
            .fold(f64::INFINITY, f64::min)
    };
    let half = p.sched.cycle_duration() / 2.0;
    let amplitude = |k: usize, amp: f64, axis: Vec3| {
        let sel: Vec<f64> = channels
            .t
            .iter()
            .zip(&channels.values)
            .filter(|(t, _)| since_edge(**t) >= 1.0)
            .map(|(t, v)| v[k] * field.eval_on(t + half, t + half).dot(&axis).signum())
            .collect();
        if amp == 0.0 || sel.is_empty() {
            0.0
        } else {
            sel.iter().sum::<f64>() / sel.len() as f64
        }
    };
    let bx = amplitude(0, p.amp_x, Vec3::x());
    let by = amplitude(1, p.amp_y, Vec3::y());

    let omega: Vec<f64> = channels
        .values
        .iter()
        .map(|v| units::rad_s_to_uhz(v[2].hypot(v[3])))
        .collect();
    let max_in = |a: f64, b: f64| {
        channels
            .t
            .iter()
            .zip(&omega)
            .filter(|(t, _)| **t >= a - 1e-9 && **t < b - 1e-9)
            .map(|(_, w)| *w)
            .fold(0.0, f64::max)
    };
    let late_span = 0.5;
    let mut responses = Vec::new();
    for (i, &te) in edges.iter().enumerate() {
        let next = edges.get(i + 1).copied().unwrap_or(f64::INFINITY);
        let end = te + p.response_window + late_span;
        if end > next + 1e-9 || end > p.duration + 1e-9 {
            continue;
        }
        let peak = max_in(te, te + 1.0);
        if peak == 0.0 {
            continue;
        }
        let late = max_in(te + p.response_window, end);
        responses.push(EdgeResponse {
            t: te,
            peak,
            late,
            suppression: if late == 0.0 {
                f64::INFINITY
            } else {
                peak / late
            },
        });
    }
    let summary = SquareWaveSummary {
        bx_amplitude_pt: units::to_pt(bx),
        by_amplitude_pt: units::to_pt(by),
        bx_amplitude_error: if p.amp_x == 0.0 {
            0.0
        } else {
            (bx - p.amp_x.abs()).abs() / p.amp_x.abs()
        },
        min_suppression: responses.iter().map(|r| r.suppression).reduce(f64::min),
        edges: responses,
        max_omega_uhz: omega.iter().copied().fold(0.0, f64::max),
    };
    Ok(SquareWaveOutput {
        signatures,
        channels,
        trace,
        summary,
    })
}

impl SquareWaveOutput {
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.channels.write_csv(&dir.join("channels.csv"))?;
        self.signatures.write(&dir.join("signatures.csv"))?;
        match &self.trace {
            Some(t) => t.write(&dir.join("traces.csv")),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_edges_merge_both_waves() {
        let e = edges(&SquareWaveParams::default());
        assert_eq!(
            e,
            vec![0.0, 5.0, 7.0, 10.0, 14.0, 15.0, 20.0, 21.0, 25.0, 28.0, 30.0, 35.0, 40.0]
        );
    }
}

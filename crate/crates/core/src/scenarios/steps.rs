use std::path::Path;

use nalgebra::{Matrix2, Vector2};
use serde::Serialize;

use super::balanced;
use crate::dynamics::{DriveTimeline, Program, Waveform};
use crate::error::{Error, Result};
use crate::io;
use crate::model::{units, CellConfig, Vec3};
use crate::protocol::{
    generate_signatures, initial_state, run_cycles, MeasuredCycle, PulseSchedule, RunOptions,
    Settle, SignatureOptions, SignatureSet,
};

#[derive(Clone, Debug)]
pub struct StepParams {
    pub cfg: CellConfig,
    pub sched: PulseSchedule,
    /// Size of each B_x step, tesla. Steps alternate in sign.
    pub step_amp: f64,
    pub n_steps: usize,
    /// Time between steps; a whole number of cycles.
    pub spacing: f64,
    pub noise_sigma: f64,
    pub seed: Option<u64>,
    pub signature: SignatureOptions,
    pub balance: bool,
    /// Largest allowed change over the last cycle before the next step,
    /// relative to the step response.
    pub settled_limit: f64,
}

impl Default for StepParams {
    fn default() -> Self {
        StepParams {
            cfg: CellConfig::rb_xe_experiment(),
            sched: PulseSchedule::rb_xe_experiment(),
            step_amp: units::pt(70.0),
            n_steps: 70,
            spacing: 5.0,
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
            settled_limit: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StepSummary {
    pub n_steps: usize,
    /// Pearson correlation of S_Bn with the best combination of the true
    /// Ω_x and Ω_y signatures.
    pub proxy_correlation: f64,
    /// Direction of that combination in the x–y plane, rad, and its scale
    /// (rad/s per tesla).
    pub proxy_axis: f64,
    pub proxy_scale: f64,
    /// Correlation with the Ω_x signature alone.
    pub proxy_correlation_x: f64,
    /// Noise std of S_B_direct from one step and from the average.
    pub noise_single: Option<f64>,
    pub noise_averaged: Option<f64>,
    pub noise_reduction: Option<f64>,
    /// Worst relative change over the last cycle before a step.
    pub worst_unsettled: f64,
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub t: Vec<f64>,
    /// Per tesla of step (raw differences when the step is zero).
    pub s_b: Vec<f64>,
    pub s_b_direct: Vec<f64>,
    pub s_bn: Vec<f64>,
    pub signatures: SignatureSet,
    /// (step time, step size, settling discrepancy).
    pub steps: Vec<[f64; 3]>,
    pub summary: StepSummary,
}

pub const STEP_HEADER: [&str; 6] = ["t", "S_B", "S_B_direct", "S_Bn", "S_Omx", "S_Omy"];

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Least-squares fit of `y` by a·x₁ + b·x₂.
fn two_column_fit(y: &[f64], x1: &[f64], x2: &[f64]) -> (f64, f64) {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let g = Matrix2::new(dot(x1, x1), dot(x1, x2), dot(x1, x2), dot(x2, x2));
    let r = Vector2::new(dot(x1, y), dot(x2, y));
    match g.try_inverse() {
        Some(inv) => {
            let c = inv * r;
            (c[0], c[1])
        }
        None => (0.0, 0.0),
    }
}

#[derive(Default)]
struct Accumulator {
    s_b: Vec<f64>,
    s_b_direct: Vec<f64>,
    noise_direct: Vec<f64>,
    noise_first: Option<Vec<f64>>,
}

fn add(acc: &mut Vec<f64>, v: &[f64], k: f64) {
    if acc.is_empty() {
        acc.resize(v.len(), 0.0);
    }
    for (a, x) in acc.iter_mut().zip(v) {
        *a += k * x;
    }
}

fn noise(m: &MeasuredCycle) -> Vec<f64> {
    sub(&m.samples, &m.clean_x)
}

/// Emulates the signature calibration by field steps: the first cycle
/// after a step shows the alkali's direct response, the last cycle before
/// the next step the full response, and their difference the part carried
/// by the noble gas.
pub fn scenario_step_decomposition(p: &StepParams) -> Result<StepOutput> {
    let cycle = p.sched.cycle_duration();
    let m = (p.spacing / cycle).round() as usize;
    if p.n_steps == 0 || m < 3 || (m as f64 * cycle - p.spacing).abs() > 1e-9 * p.spacing {
        return Err(Error::InvalidConfig(format!(
            "step spacing {} s must be at least three whole cycles of {cycle} s and n_steps >= 1",
            p.spacing
        )));
    }
    let cfg = if p.balance {
        balanced(&p.cfg, &p.sched)?
    } else {
        p.cfg.clone()
    };
    let signatures = generate_signatures(&cfg, &p.sched, &p.signature)?;

    let half = 0.5 * p.step_amp;
    let drive = DriveTimeline {
        field: Program(vec![Waveform::Square {
            amplitude: half,
            period: 2.0 * p.spacing,
            phase: 0.5,
            axis: Vec3::x(),
        }]),
        rotation: Program::zero(),
    };
    let opts = RunOptions {
        noise_sigma: p.noise_sigma,
        seed: p.seed,
        ..RunOptions::default()
    };
    let scale = |k: usize| {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        if p.step_amp == 0.0 {
            1.0
        } else {
            1.0 / (sign * p.step_amp)
        }
    };

    let mut acc = Accumulator::default();
    let mut pre: Option<MeasuredCycle> = None;
    let mut before_last: Option<MeasuredCycle> = None;
    let mut steps = Vec::new();
    let mut worst = 0.0f64;
    let total = (p.n_steps + 1) * m;
    run_cycles(
        &cfg,
        &p.sched,
        &drive,
        &initial_state(&cfg),
        total,
        &opts,
        None,
        |c| {
            let (k, pos) = (c.index / m, c.index % m);
            if pos == 0 && k >= 1 {
                let pre = pre.as_ref().expect("cycle before the step is recorded");
                let s = scale(k);
                add(&mut acc.s_b_direct, &sub(&c.samples, &pre.samples), s);
                let nd: Vec<f64> = sub(&noise(&c), &noise(pre)).iter().map(|v| v * s).collect();
                add(&mut acc.noise_direct, &nd, 1.0);
                if k == 1 {
                    acc.noise_first = Some(nd);
                }
            }
            if pos + 2 == m {
                before_last = Some(c);
                return Ok(());
            }
            if pos + 1 == m {
                if k >= 1 {
                    let start = pre.as_ref().expect("cycle before the step is recorded");
                    let prev = before_last
                        .as_ref()
                        .expect("second-to-last cycle is recorded");
                    add(&mut acc.s_b, &sub(&c.samples, &start.samples), scale(k));
                    let response = rms(&sub(&c.clean_x, &start.clean_x));
                    let drift = rms(&sub(&c.clean_x, &prev.clean_x));
                    let discrepancy = if response > 0.0 {
                        drift / response
                    } else {
                        drift
                    };
                    worst = worst.max(discrepancy);
                    steps.push([
                        k as f64 * p.spacing,
                        p.step_amp * scale(k).signum(),
                        discrepancy,
                    ]);
                }
                pre = Some(c);
            }
            Ok(())
        },
    )?;
    if worst > p.settled_limit {
        return Err(Error::NotConverged {
            discrepancy: worst,
            threshold: p.settled_limit,
            elapsed: p.spacing,
        });
    }

    let n = p.n_steps as f64;
    let s_b: Vec<f64> = acc.s_b.iter().map(|v| v / n).collect();
    let s_b_direct: Vec<f64> = acc.s_b_direct.iter().map(|v| v / n).collect();
    let s_bn = sub(&s_b, &s_b_direct);
    let (a, b) = two_column_fit(&s_bn, &signatures.s_omx, &signatures.s_omy);
    let combo: Vec<f64> = signatures
        .s_omx
        .iter()
        .zip(&signatures.s_omy)
        .map(|(x, y)| a * x + b * y)
        .collect();

    let averaged_noise: Vec<f64> = acc.noise_direct.iter().map(|v| v / n).collect();
    let (noise_single, noise_averaged) = if p.noise_sigma > 0.0 {
        (
            acc.noise_first.as_deref().map(std_dev),
            Some(std_dev(&averaged_noise)),
        )
    } else {
        (None, None)
    };
    let summary = StepSummary {
        n_steps: p.n_steps,
        proxy_correlation: pearson(&s_bn, &combo),
        proxy_axis: b.atan2(a),
        proxy_scale: a.hypot(b),
        proxy_correlation_x: pearson(&s_bn, &signatures.s_omx),
        noise_reduction: noise_single.zip(noise_averaged).map(|(s, a)| s / a),
        noise_single,
        noise_averaged,
        worst_unsettled: worst,
    };
    Ok(StepOutput {
        t: p.sched.cycle_grid(),
        s_b,
        s_b_direct,
        s_bn,
        signatures,
        steps,
        summary,
    })
}

impl StepOutput {
    /// traces.csv: the three step-derived traces next to the true rotation
    /// signatures; channels.csv: one row per step.
    pub fn write(&self, dir: &Path) -> Result<()> {
        io::write_columns(
            &dir.join("traces.csv"),
            &STEP_HEADER,
            &[
                &self.t,
                &self.s_b,
                &self.s_b_direct,
                &self.s_bn,
                &self.signatures.s_omx,
                &self.signatures.s_omy,
            ],
        )?;
        io::write_csv(
            &dir.join("channels.csv"),
            &["t", "step_T", "unsettled"],
            self.steps.iter().map(|s| s.to_vec()),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_ignores_offset_and_scale() {
        let a = [1.0, 2.0, 4.0, 3.0];
        let b: Vec<f64> = a.iter().map(|x| -3.0 * x + 7.0).collect();
        assert!((pearson(&a, &b) + 1.0).abs() < 1e-14);
    }

    #[test]
    fn two_column_fit_recovers_combination() {
        let x1 = [1.0, 0.0, 1.0, 2.0];
        let x2 = [0.0, 1.0, 1.0, -1.0];
        let y: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| 0.5 * a - 2.0 * b).collect();
        let (a, b) = two_column_fit(&y, &x1, &x2);
        assert!((a - 0.5).abs() < 1e-12 && (b + 2.0).abs() < 1e-12);
    }
}

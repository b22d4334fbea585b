use std::path::Path;

use serde::Serialize;

use super::balanced;
use crate::dynamics::{DriveTimeline, Trajectory};
use crate::error::Result;
use crate::io;
use crate::model::{units, CellConfig, Vec3};
use crate::protocol::{run_protocol, settle, PulseSchedule, RunOptions, Settle};

pub const CASES: [&str; 4] = ["B_x", "B_y", "Om_x", "Om_y"];

#[derive(Clone, Debug)]
pub struct Fig2Params {
    pub cfg: CellConfig,
    pub sched: PulseSchedule,
    /// Bx, By in tesla, Ωx, Ωy in rad/s. Each case applies one of them.
    pub drive: [f64; 4],
    pub settle: Settle,
    /// Balance alkali → noble exchange against the noble decay first.
    pub balance: bool,
}

impl Default for Fig2Params {
    fn default() -> Self {
        Fig2Params {
            cfg: CellConfig::rb_xe_simulation(),
            sched: PulseSchedule::rb_xe_simulation(),
            drive: [units::pt(1.43), units::pt(1.43), 269e-6, 269e-6],
            settle: Settle {
                time: 80.0,
                threshold: 1e-8,
            },
            balance: true,
        }
    }
}

/// One single-drive case over one settled cycle.
#[derive(Clone, Debug)]
pub struct Fig2Case {
    pub name: &'static str,
    pub trajectory: Trajectory,
    /// Pⁿ right after each pulse.
    pub set_points: [Vec3; 2],
    /// Angle from the first window's mean transverse Pⁿ to the second's, rad.
    pub set_point_angle: Option<f64>,
    /// Same, measured right after the pulses.
    pub post_pulse_angle: Option<f64>,
    pub peak_pe_transverse: f64,
    pub pe_x: Vec<f64>,
    pub discrepancy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Fig2Summary {
    pub r_se_en: f64,
    pub set_point_angle_deg: Vec<Option<f64>>,
    pub post_pulse_angle_deg: Vec<Option<f64>>,
    pub peak_pe_transverse: Vec<f64>,
    /// Peak |Pᵉ_⊥| of the B_x case over the Ω_x case.
    pub b_to_omega_peak_ratio: f64,
    /// Eigenvalues of the column-normalised Gram matrix of the four Pᵉ_x
    /// traces; NaN columns (zero drives) give zero rows.
    pub gram_eigenvalues: [f64; 4],
    pub discrepancy: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Fig2Output {
    pub cfg: CellConfig,
    pub cases: Vec<Fig2Case>,
    pub summary: Fig2Summary,
}

fn transverse_angle(a: &Vec3, b: &Vec3) -> Option<f64> {
    if a.xy().norm() == 0.0 || b.xy().norm() == 0.0 {
        return None;
    }
    let d = b.y.atan2(b.x) - a.y.atan2(a.x);
    Some((d + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI)
}

fn normalised_gram_eigenvalues(cols: &[&[f64]]) -> [f64; 4] {
    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let g = nalgebra::Matrix4::from_fn(|i, j| {
        if norms[i] == 0.0 || norms[j] == 0.0 {
            return 0.0;
        }
        cols[i].iter().zip(cols[j]).map(|(a, b)| a * b).sum::<f64>() / (norms[i] * norms[j])
    });
    let mut e: Vec<f64> = g.symmetric_eigenvalues().iter().copied().collect();
    e.sort_by(f64::total_cmp);
    [e[0], e[1], e[2], e[3]]
}

fn run_case(cfg: &CellConfig, p: &Fig2Params, k: usize) -> Result<Fig2Case> {
    let mut v = [Vec3::zeros(); 4];
    v[k] = [Vec3::x(), Vec3::y(), Vec3::x(), Vec3::y()][k] * p.drive[k];
    let drive = DriveTimeline::dc(v[0] + v[1], v[2] + v[3]);
    let settled = settle(cfg, &p.sched, &drive, &p.settle)?;
    let opts = RunOptions {
        keep_trajectory: true,
        ..RunOptions::default()
    };
    let run = run_protocol(
        cfg,
        &p.sched,
        &drive,
        p.sched.cycle_duration(),
        &settled.state,
        &opts,
    )?;
    let trajectory = run.trajectory.unwrap_or_default();
    let cycle = &run.cycles[0];
    let n = p.sched.samples_per_window();
    let mean = |s: &[crate::dynamics::SpinState]| {
        s.iter().map(|x| x.pn).sum::<Vec3>() / s.len().max(1) as f64
    };
    let (first, second) = trajectory.samples.split_at(n.min(trajectory.samples.len()));
    let peak = trajectory
        .samples
        .iter()
        .map(|s| s.pe.xy().norm())
        .fold(0.0, f64::max);
    Ok(Fig2Case {
        name: CASES[k],
        set_points: cycle.pn_set_points,
        set_point_angle: transverse_angle(&mean(first), &mean(second)),
        post_pulse_angle: transverse_angle(&cycle.pn_set_points[0], &cycle.pn_set_points[1]),
        peak_pe_transverse: peak,
        pe_x: cycle.clean_x.clone(),
        discrepancy: settled.discrepancy,
        trajectory,
    })
}

/// Runs the four single-drive cases to their periodic state and records
/// one cycle of each.
pub fn scenario_fig2(p: &Fig2Params) -> Result<Fig2Output> {
    let cfg = if p.balance {
        balanced(&p.cfg, &p.sched)?
    } else {
        p.cfg.clone()
    };
    let cases = (0..4)
        .map(|k| run_case(&cfg, p, k))
        .collect::<Result<Vec<_>>>()?;
    let cols: Vec<&[f64]> = cases.iter().map(|c| c.pe_x.as_slice()).collect();
    let deg = |a: Option<f64>| a.map(f64::to_degrees);
    let summary = Fig2Summary {
        r_se_en: cfg.r_se_en,
        set_point_angle_deg: cases.iter().map(|c| deg(c.set_point_angle)).collect(),
        post_pulse_angle_deg: cases.iter().map(|c| deg(c.post_pulse_angle)).collect(),
        peak_pe_transverse: cases.iter().map(|c| c.peak_pe_transverse).collect(),
        b_to_omega_peak_ratio: cases[0].peak_pe_transverse / cases[2].peak_pe_transverse,
        gram_eigenvalues: normalised_gram_eigenvalues(&cols),
        discrepancy: cases.iter().map(|c| c.discrepancy).collect(),
    };
    Ok(Fig2Output {
        cfg,
        cases,
        summary,
    })
}

impl Fig2Output {
    /// traces.csv: x–y trajectories of both species per case;
    /// channels.csv: the Pᵉ_x cycle trace of each case.
    pub fn write(&self, dir: &Path, sched: &PulseSchedule) -> Result<()> {
        let mut header = vec!["t".to_string()];
        for c in &self.cases {
            for q in ["Pe_x", "Pe_y", "Pn_x", "Pn_y"] {
                header.push(format!("{}:{q}", c.name));
            }
        }
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        let n = self.cases[0].trajectory.samples.len();
        let grid = sched.cycle_grid();
        io::write_csv(
            &dir.join("traces.csv"),
            &h,
            (0..n).map(|i| {
                let mut row = vec![grid[i]];
                for c in &self.cases {
                    let s = &c.trajectory.samples[i];
                    row.extend([s.pe.x, s.pe.y, s.pn.x, s.pn.y]);
                }
                row
            }),
        )?;
        let mut cols: Vec<&[f64]> = vec![&grid];
        cols.extend(self.cases.iter().map(|c| c.pe_x.as_slice()));
        io::write_columns(
            &dir.join("channels.csv"),
            &["t", "B_x", "B_y", "Om_x", "Om_y"],
            &cols,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_wraps_into_half_turn() {
        let a = transverse_angle(&Vec3::new(-1.0, 0.1, 0.0), &Vec3::new(-1.0, -0.1, 0.0)).unwrap();
        assert!((a - 2.0 * 0.1f64.atan()).abs() < 1e-12);
        assert!(transverse_angle(&Vec3::z(), &Vec3::x()).is_none());
    }

    #[test]
    fn orthonormal_traces_have_unit_eigenvalues() {
        let c: [Vec<f64>; 4] =
            std::array::from_fn(|k| (0..4).map(|i| f64::from(u8::from(i == k))).collect());
        let cols: Vec<&[f64]> = c.iter().map(Vec::as_slice).collect();
        for e in normalised_gram_eigenvalues(&cols) {
            assert!((e - 1.0).abs() < 1e-12);
        }
    }
}

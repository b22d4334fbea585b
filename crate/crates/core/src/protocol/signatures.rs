use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::run::{relative_rms_change, settle, MeasuredCycle};
use super::schedule::{PulseSchedule, Settle};
use crate::dynamics::DriveTimeline;
use crate::error::{Error, Result};
use crate::io;
use crate::model::{units, CellConfig, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureMeta {
    pub config_hash: String,
    /// Bias field, tesla.
    pub bias_z: f64,
    /// Drives used to generate the traces, tesla and rad/s.
    pub eps_b: f64,
    pub eps_omega: f64,
    pub settle_time: f64,
    pub tau: f64,
    pub sample_rate: f64,
    pub samples_per_window: usize,
    /// Consecutive-cycle discrepancy of the worse of the two runs.
    pub discrepancy: f64,
}

/// Unit-drive responses of Pᵉ_x over one cycle: per tesla for the field
/// columns, per rad/s for the rotation columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SignatureSet {
    /// Offsets from the cycle start, seconds.
    pub t: Vec<f64>,
    pub s_bx: Vec<f64>,
    pub s_by: Vec<f64>,
    pub s_omx: Vec<f64>,
    pub s_omy: Vec<f64>,
    pub meta: SignatureMeta,
}

pub const SIGNATURE_HEADER: [&str; 5] = ["t", "S_Bx", "S_By", "S_Omx", "S_Omy"];

/// Spread between the largest and smallest eigenvalue beyond which the
/// signatures are treated as indistinguishable.
pub const DEGENERACY_THRESHOLD: f64 = 1e8;

impl SignatureSet {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn columns(&self) -> [&[f64]; 4] {
        [&self.s_bx, &self.s_by, &self.s_omx, &self.s_omy]
    }

    /// Raw Gram matrix SᵀS.
    pub fn gram(&self) -> Matrix4<f64> {
        let c = self.columns();
        Matrix4::from_fn(|i, j| c[i].iter().zip(c[j]).map(|(a, b)| a * b).sum())
    }

    /// Gram matrix of the unit-norm columns (a correlation matrix).
    pub fn normalised_gram(&self) -> Matrix4<f64> {
        let g = self.gram();
        let d: Vec<f64> = (0..4).map(|i| g[(i, i)].sqrt()).collect();
        Matrix4::from_fn(|i, j| {
            if d[i] == 0.0 || d[j] == 0.0 {
                0.0
            } else {
                g[(i, j)] / (d[i] * d[j])
            }
        })
    }

    pub fn gram_eigenvalues(&self) -> [f64; 4] {
        let e = SymmetricEigen::new(self.gram()).eigenvalues;
        let mut v = [e[0], e[1], e[2], e[3]];
        v.sort_by(f64::total_cmp);
        v
    }

    /// Condition number of the normalised Gram matrix.
    pub fn condition_number(&self) -> f64 {
        let e = SymmetricEigen::new(self.normalised_gram()).eigenvalues;
        let max = e.max();
        let min = e.min();
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    pub fn check_distinguishable(&self) -> Result<()> {
        let condition = self.condition_number();
        if !(condition <= DEGENERACY_THRESHOLD) {
            return Err(Error::Degenerate {
                condition,
                threshold: DEGENERACY_THRESHOLD,
            });
        }
        Ok(())
    }

    pub fn sidecar_path(csv: &Path) -> PathBuf {
        csv.with_extension("json")
    }

    /// Writes `path` (CSV) and the metadata sidecar next to it.
    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_columns(
            path,
            &SIGNATURE_HEADER,
            &[&self.t, &self.s_bx, &self.s_by, &self.s_omx, &self.s_omy],
        )?;
        io::write_json(&Self::sidecar_path(path), &self.meta)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let table = io::read_csv(path)?;
        if table.header != SIGNATURE_HEADER {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 1,
                message: format!("expected header {}", SIGNATURE_HEADER.join(",")),
            });
        }
        if table.rows.is_empty() {
            return Err(Error::Usage(format!(
                "{}: no signature samples",
                path.display()
            )));
        }
        let col = |i: usize| table.rows.iter().map(|r| r[i]).collect::<Vec<_>>();
        let meta = io::read_json(&Self::sidecar_path(path))?;
        Ok(SignatureSet {
            t: col(0),
            s_bx: col(1),
            s_by: col(2),
            s_omx: col(3),
            s_omy: col(4),
            meta,
        })
    }
}

/// The y-drive trace equivalent to an x-drive run's Pᵉ_y trace.
///
/// A 90° rotation about z maps an x drive onto a y drive and leaves the
/// pulses and pump unchanged, so Pᵉ_x under the y drive equals −Pᵉ_y under
/// the x drive.
pub fn symmetry_map(pe_y_of_x_run: &[f64]) -> Vec<f64> {
    pe_y_of_x_run.iter().map(|v| -v).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignatureOptions {
    pub eps_b: f64,
    pub eps_omega: f64,
    pub settle: Settle,
    /// Repeat both runs at half drive and require the unit responses to
    /// agree within 1%.
    pub check_linearity: bool,
}

impl Default for SignatureOptions {
    fn default() -> Self {
        SignatureOptions {
            eps_b: units::nt(1e-4),
            eps_omega: units::hz_to_rad_s(1e-4),
            settle: Settle::default(),
            check_linearity: true,
        }
    }
}

pub const LINEARITY_LIMIT: f64 = 0.01;

pub fn config_hash(cfg: &CellConfig, sched: &PulseSchedule) -> String {
    format!(
        "{:016x}",
        io::fnv1a(format!("{cfg:?}|{sched:?}").as_bytes())
    )
}

fn unit_traces(
    cfg: &CellConfig,
    sched: &PulseSchedule,
    field: Vec3,
    rotation: Vec3,
    scale: f64,
    s: &Settle,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let run = settle(cfg, sched, &DriveTimeline::dc(field, rotation), s)?;
    let m: MeasuredCycle = run.last_cycle;
    let x = m.clean_x.iter().map(|v| v / scale).collect();
    let y = m.clean_y.iter().map(|v| v / scale).collect();
    Ok((x, y, run.discrepancy))
}

/// Settles with a small DC B_x and with a small DC Ω_x and takes the last
/// cycle of each. The y columns come from [`symmetry_map`].
pub fn generate_signatures(
    cfg: &CellConfig,
    sched: &PulseSchedule,
    opts: &SignatureOptions,
) -> Result<SignatureSet> {
    if !(opts.eps_b > 0.0 && opts.eps_omega > 0.0) {
        return Err(Error::InvalidConfig("signature drives must be > 0".into()));
    }
    let b_run = |k: f64| {
        unit_traces(
            cfg,
            sched,
            Vec3::x() * opts.eps_b * k,
            Vec3::zeros(),
            opts.eps_b * k,
            &opts.settle,
        )
    };
    let w_run = |k: f64| {
        unit_traces(
            cfg,
            sched,
            Vec3::zeros(),
            Vec3::x() * opts.eps_omega * k,
            opts.eps_omega * k,
            &opts.settle,
        )
    };
    let (b, w) = rayon::join(|| b_run(1.0), || w_run(1.0));
    let (bx, by, db) = b?;
    let (wx, wy, dw) = w?;

    if opts.check_linearity {
        let (b2, w2) = rayon::join(|| b_run(0.5), || w_run(0.5));
        let (bx2, _, _) = b2?;
        let (wx2, _, _) = w2?;
        for (what, half, full) in [("S_Bx", &bx2, &bx), ("S_Omx", &wx2, &wx)] {
            let relative = relative_rms_change(half, full);
            if relative > LINEARITY_LIMIT {
                return Err(Error::Linearity {
                    what: what.into(),
                    relative,
                    limit: LINEARITY_LIMIT,
                });
            }
        }
    }

    Ok(SignatureSet {
        t: sched.cycle_grid(),
        s_by: symmetry_map(&by),
        s_bx: bx,
        s_omy: symmetry_map(&wy),
        s_omx: wx,
        meta: SignatureMeta {
            config_hash: config_hash(cfg, sched),
            bias_z: cfg.bias_z,
            eps_b: opts.eps_b,
            eps_omega: opts.eps_omega,
            settle_time: opts.settle.time,
            tau: sched.tau,
            sample_rate: sched.sample_rate,
            samples_per_window: sched.samples_per_window(),
            discrepancy: db.max(dw),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(cols: [Vec<f64>; 4]) -> SignatureSet {
        let [a, b, c, d] = cols;
        SignatureSet {
            t: (0..a.len()).map(|i| i as f64).collect(),
            s_bx: a,
            s_by: b,
            s_omx: c,
            s_omy: d,
            meta: SignatureMeta {
                config_hash: String::new(),
                bias_z: 0.0,
                eps_b: 1.0,
                eps_omega: 1.0,
                settle_time: 0.0,
                tau: 1.0,
                sample_rate: 1.0,
                samples_per_window: 2,
                discrepancy: 0.0,
            },
        }
    }

    #[test]
    fn symmetry_map_negates() {
        assert_eq!(symmetry_map(&[1.0, -2.0, 0.0]), vec![-1.0, 2.0, -0.0]);
        assert!(symmetry_map(&[0.0; 3]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn orthogonal_columns_are_well_conditioned() {
        let s = toy([
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0, 0.0],
            vec![0.0, 0.0, 3.0, 0.0],
            vec![0.0, 0.0, 0.0, 4.0],
        ]);
        assert!((s.condition_number() - 1.0).abs() < 1e-12);
        s.check_distinguishable().unwrap();
        assert_eq!(s.gram_eigenvalues(), [1.0, 4.0, 9.0, 16.0]);
    }

    #[test]
    fn repeated_column_is_degenerate() {
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let s = toy([
            a.clone(),
            a,
            vec![0.0, 1.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0, 0.0],
        ]);
        assert!(matches!(
            s.check_distinguishable(),
            Err(Error::Degenerate { .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sig.csv");
        let s = toy([
            vec![0.1, 0.2],
            vec![1.0 / 3.0, 0.5],
            vec![-7e-9, 1e12],
            vec![0.0, 2.0],
        ]);
        s.write(&p).unwrap();
        assert_eq!(SignatureSet::read(&p).unwrap(), s);
    }
}

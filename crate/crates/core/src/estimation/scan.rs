use rayon::prelude::*;
use serde::Serialize;

use super::fit::{dc_sensitivity, fisher_information, sensitivities};
use crate::error::{Error, Result};
use crate::model::{units, CellConfig};
use crate::protocol::{
    cw_responses, generate_signatures, run_serf_reference, CwOptions, PulseSchedule,
    SignatureOptions,
};

#[derive(Clone, Debug)]
pub struct ScanOptions {
    pub signature: SignatureOptions,
    pub cw: CwOptions,
    /// Per-sample noise. Normalised curves do not depend on it.
    pub noise_sigma: f64,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
    /// Refine the PANCo optimum between the neighbouring grid points.
    pub refine: bool,
    /// Bracket width at which refinement stops, tesla.
    pub refine_tol: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            signature: SignatureOptions {
                check_linearity: false,
                ..SignatureOptions::default()
            },
            cw: CwOptions::default(),
            noise_sigma: 1.0,
            workers: 0,
            refine: true,
            refine_tol: units::nt(0.01),
        }
    }
}

/// Sensitivities at one bias, per cycle and in units of the per-sample noise.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityReport {
    /// Bias magnitude (opposing the magnetisation), nT.
    pub bias_nt: f64,
    /// Tesla per cycle for B_x, B_y.
    pub sens_b: Option<[f64; 2]>,
    /// rad/s per cycle for Ω_x, Ω_y.
    pub sens_om: Option<[f64; 2]>,
    pub condition: Option<f64>,
    /// CW-SCC rotation sensitivity at this bias, rad/s per cycle-length record.
    pub cw_rotation: Option<f64>,
    pub error: Option<String>,
}

fn rms2(v: [f64; 2]) -> f64 {
    ((v[0] * v[0] + v[1] * v[1]) / 2.0).sqrt()
}

impl SensitivityReport {
    /// RMS over the two rotation axes.
    pub fn rotation(&self) -> Option<f64> {
        self.sens_om.map(rms2)
    }

    /// RMS over the two field axes.
    pub fn magnetic(&self) -> Option<f64> {
        self.sens_b.map(rms2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Optimum {
    pub bias_nt: f64,
    pub rotation: f64,
    pub magnetic: f64,
    pub sens_om: [f64; 2],
    pub sens_b: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiasScan {
    pub points: Vec<SensitivityReport>,
    pub samples_per_cycle: usize,
    pub noise_sigma: f64,
    /// SERF magnetic sensitivity over the same record, tesla.
    pub serf_magnetic: f64,
    /// Best CW-SCC rotation sensitivity on the grid and where it occurs.
    pub cw_best_bias_nt: f64,
    pub cw_best: f64,
    pub panco_best: Option<Optimum>,
}

impl BiasScan {
    /// PANCo rotation sensitivity at its optimum relative to the CW-SCC
    /// optimum.
    pub fn rotation_ratio(&self) -> Option<f64> {
        self.panco_best.as_ref().map(|o| o.rotation / self.cw_best)
    }

    /// PANCo field sensitivity at the rotation optimum relative to SERF.
    pub fn magnetic_ratio(&self) -> Option<f64> {
        self.panco_best
            .as_ref()
            .map(|o| o.magnetic / self.serf_magnetic)
    }

    /// Rows of (bias nT, PANCo Ω_x, Ω_y, B_x, B_y, CW rotation) with the
    /// rotation columns divided by the CW optimum and the field columns by
    /// the SERF sensitivity. Failed points are NaN.
    pub fn normalised_rows(&self) -> Vec<Vec<f64>> {
        self.points
            .iter()
            .map(|p| {
                let om = p.sens_om.unwrap_or([f64::NAN; 2]);
                let b = p.sens_b.unwrap_or([f64::NAN; 2]);
                vec![
                    p.bias_nt,
                    om[0] / self.cw_best,
                    om[1] / self.cw_best,
                    b[0] / self.serf_magnetic,
                    b[1] / self.serf_magnetic,
                    p.cw_rotation.unwrap_or(f64::NAN) / self.cw_best,
                ]
            })
            .collect()
    }
}

pub const NORMALISED_HEADER: [&str; 6] = ["bias_nT", "Om_x", "Om_y", "B_x", "B_y", "CW_rotation"];

struct PancoPoint {
    sens: [f64; 4],
    condition: f64,
}

fn panco_point(
    cfg: &CellConfig,
    sched: &PulseSchedule,
    bias_nt: f64,
    opts: &ScanOptions,
) -> Result<PancoPoint> {
    let c = cfg.clone().with_bias(-units::nt(bias_nt));
    let sig = generate_signatures(&c, sched, &opts.signature)?;
    let sens = sensitivities(&fisher_information(&sig, opts.noise_sigma)?)?;
    Ok(PancoPoint {
        sens,
        condition: sig.condition_number(),
    })
}

fn scan_point(
    cfg: &CellConfig,
    sched: &PulseSchedule,
    bias_nt: f64,
    opts: &ScanOptions,
) -> SensitivityReport {
    let n = sched.samples_per_cycle();
    let c = cfg.clone().with_bias(-units::nt(bias_nt));
    let (panco, cw) = rayon::join(
        || panco_point(cfg, sched, bias_nt, opts),
        || {
            cw_responses(&c, &opts.cw)
                .and_then(|r| dc_sensitivity(r.rotation(), opts.noise_sigma, n))
        },
    );
    let mut errors = Vec::new();
    let cw_rotation = cw.map_err(|e| errors.push(format!("cw: {e}"))).ok();
    let (sens_b, sens_om, condition) = match panco {
        Ok(p) => (
            Some([p.sens[0], p.sens[1]]),
            Some([p.sens[2], p.sens[3]]),
            Some(p.condition),
        ),
        Err(e) => {
            errors.push(format!("{}: {e}", e.kind()));
            (None, None, None)
        }
    };
    SensitivityReport {
        bias_nt,
        sens_b,
        sens_om,
        condition,
        cw_rotation,
        error: (!errors.is_empty()).then(|| errors.join("; ")),
    }
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Sensitivities over a list of bias magnitudes (nT), with the CW-SCC and
/// SERF references computed on the same record length. Points that fail
/// are reported with their error and skipped when locating optima.
pub fn bias_scan(
    cfg: &CellConfig,
    sched: &PulseSchedule,
    biases_nt: &[f64],
    opts: &ScanOptions,
) -> Result<BiasScan> {
    if biases_nt.is_empty() {
        return Err(Error::InvalidConfig("bias list is empty".into()));
    }
    if biases_nt.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidConfig(
            "bias list has non-finite entries".into(),
        ));
    }
    cfg.validate()?;
    sched.validate()?;
    let n = sched.samples_per_cycle();
    in_pool(opts.workers, || {
        let points: Vec<SensitivityReport> = biases_nt
            .par_iter()
            .map(|&b| scan_point(cfg, sched, b, opts))
            .collect();
        for p in &points {
            if let Some(e) = &p.error {
                log::warn!("bias {:.3} nT: {e}", p.bias_nt);
            }
        }
        let serf = run_serf_reference(cfg, &opts.cw)?;
        let serf_magnetic = dc_sensitivity(serf, opts.noise_sigma, n)?;

        let (cw_best_bias_nt, cw_best) = points
            .iter()
            .filter_map(|p| p.cw_rotation.map(|s| (p.bias_nt, s)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| Error::InvalidConfig("no CW reference point succeeded".into()))?;

        let panco_best = best_panco(cfg, sched, &points, opts);
        Ok(BiasScan {
            points,
            samples_per_cycle: n,
            noise_sigma: opts.noise_sigma,
            serf_magnetic,
            cw_best_bias_nt,
            cw_best,
            panco_best,
        })
    })?
}

fn optimum_at(bias_nt: f64, sens: [f64; 4]) -> Optimum {
    Optimum {
        bias_nt,
        rotation: rms2([sens[2], sens[3]]),
        magnetic: rms2([sens[0], sens[1]]),
        sens_om: [sens[2], sens[3]],
        sens_b: [sens[0], sens[1]],
    }
}

fn best_panco(
    cfg: &CellConfig,
    sched: &PulseSchedule,
    points: &[SensitivityReport],
    opts: &ScanOptions,
) -> Option<Optimum> {
    let (i, p) = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.rotation().is_some())
        .min_by(|a, b| a.1.rotation().unwrap().total_cmp(&b.1.rotation().unwrap()))?;
    let grid = optimum_at(
        p.bias_nt,
        [p.sens_b?[0], p.sens_b?[1], p.sens_om?[0], p.sens_om?[1]],
    );
    if !opts.refine || i == 0 || i + 1 == points.len() {
        return Some(grid);
    }
    let lo = points[i - 1].bias_nt.min(points[i + 1].bias_nt);
    let hi = points[i - 1].bias_nt.max(points[i + 1].bias_nt);
    match golden_section(lo, hi, units::to_nt(opts.refine_tol), |b| {
        panco_point(cfg, sched, b, opts).map(|p| rms2([p.sens[2], p.sens[3]]))
    }) {
        Ok((b, _)) => match panco_point(cfg, sched, b, opts) {
            Ok(pp) if rms2([pp.sens[2], pp.sens[3]]) <= grid.rotation => {
                Some(optimum_at(b, pp.sens))
            }
            _ => Some(grid),
        },
        Err(e) => {
            log::warn!("optimum refinement failed: {e}");
            Some(grid)
        }
    }
}

/// Minimises a unimodal `f` on [a, b] to a bracket narrower than `tol`.
pub fn golden_section(
    mut a: f64,
    mut b: f64,
    tol: f64,
    mut f: impl FnMut(f64) -> Result<f64>,
) -> Result<(f64, f64)> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc < fd { (c, fc) } else { (d, fd) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let (x, fx) = golden_section(0.0, 3.0, 1e-6, |x| Ok((x - 1.234).powi(2) + 2.0)).unwrap();
        assert!((x - 1.234).abs() < 1e-6);
        assert!((fx - 2.0).abs() < 1e-11);
    }

    #[test]
    fn empty_scan_is_rejected() {
        let r = bias_scan(
            &CellConfig::k_he3(),
            &PulseSchedule::k_he3(),
            &[],
            &ScanOptions::default(),
        );
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }
}

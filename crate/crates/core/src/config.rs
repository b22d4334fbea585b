//! Run configuration files. Every physical quantity is stored in the
//! display unit named by its key suffix and converted on load:
//! `_nt`/`_pt` tesla, `_uhz` µHz (cyclic), `_ms` milliseconds, `_s`
//! seconds, `_ks` kS/s, `_deg` degrees, `_mhz_per_t` γ/2π in MHz/T; bare
//! rates are 1/s.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dynamics::{DriveTimeline, Program, PulseMode, Tolerance, Waveform};
use crate::error::{Error, Result};
use crate::estimation::{CrosstalkOptions, ScanOptions};
use crate::model::{units, CellConfig, QModel, RotationSense, SlowingScope, SpeciesParams, Vec3};
use crate::protocol::{CwOptions, PulseSchedule, PumpMode, Settle, SignatureOptions};
use crate::scenarios::{
    CustomParams, Fig2Params, Fig7Params, SquareWaveParams, StepParams, WobbleParams, SCENARIOS,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSpec {
    pub name: String,
    pub gamma_mhz_per_t: f64,
    pub lambda_m_nt: f64,
    pub r_sd: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlowingSpec {
    Full,
    PrecessionOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SenseSpec {
    Positive,
    Negative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub alkali: SpeciesSpec,
    pub noble: SpeciesSpec,
    pub r_se_en: f64,
    pub r_se_ne: f64,
    pub r_p_on: f64,
    pub pump_axis: [f64; 3],
    /// Constant slowing-down factor; null selects the polarisation-dependent form.
    pub q_constant: Option<f64>,
    pub slowing: SlowingSpec,
    pub rotation_convention: SenseSpec,
    pub bias_nt: f64,
    /// Replace r_se_en by the value that keeps the noble polarisation at unity.
    pub balance_spin_exchange: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSpec {
    Impulse,
    Finite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub tau_ms: f64,
    pub pump_ms: f64,
    pub pulse_area_deg: f64,
    pub pulse: ModeSpec,
    /// Used when `pulse` is finite.
    pub pulse_duration_ms: f64,
    pub pump: ModeSpec,
    /// Alkali polarisation after an impulse pump.
    pub p_sat: f64,
    pub sample_rate_ks: f64,
    pub guard_start_ms: f64,
    pub guard_end_ms: f64,
    pub rtol: f64,
    pub atol: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    B,
    Om,
}

/// Amplitudes in pT for fields and µHz for rotations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WaveSpec {
    Step {
        quantity: Quantity,
        axis: [f64; 3],
        amplitude: f64,
        t0_s: f64,
    },
    Square {
        quantity: Quantity,
        axis: [f64; 3],
        amplitude: f64,
        period_s: f64,
        phase: f64,
    },
    Sinusoid {
        quantity: Quantity,
        axis: [f64; 3],
        amplitude: f64,
        frequency_hz: f64,
        phase_rad: f64,
    },
}

/// DC drives (pT, µHz) plus optional waveforms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSpec {
    #[serde(rename = "B_x")]
    pub b_x: f64,
    #[serde(rename = "B_y")]
    pub b_y: f64,
    #[serde(rename = "Om_x")]
    pub om_x: f64,
    #[serde(rename = "Om_y")]
    pub om_y: f64,
    pub waveforms: Vec<WaveSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettleSpec {
    pub time_s: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignatureSpec {
    pub eps_b_pt: f64,
    pub eps_om_uhz: f64,
    pub check_linearity: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fig7Spec {
    pub start_nt: f64,
    pub stop_nt: f64,
    pub step_nt: f64,
    pub refine: bool,
    pub refine_tol_nt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquareWaveSpec {
    pub amp_x_pt: f64,
    pub amp_y_pt: f64,
    pub period_x_s: f64,
    pub period_y_s: f64,
    pub duration_s: f64,
    pub response_window_s: f64,
    pub write_traces: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    pub step_amp_pt: f64,
    pub n_steps: usize,
    pub spacing_s: f64,
    pub settled_limit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WobbleSpec {
    pub omega_peak_uhz: f64,
    pub frequency_hz: f64,
    pub drift_pt: f64,
    pub drift_period_s: f64,
    pub duration_s: f64,
    pub discard_s: f64,
    pub mis_set_nt: f64,
    pub write_traces: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrosstalkSpec {
    /// Added to the bias magnitude for the true cell.
    pub offset_nt: f64,
    pub probe_pt: f64,
    pub check_linearity: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSpec {
    pub duration_s: f64,
    pub with_baseline: bool,
    pub write_traces: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,
    pub seed: Option<u64>,
    /// Per-sample polarimeter noise, in units of Pᵉ_x.
    pub noise_sigma: f64,
    /// Worker threads for scans; 0 uses every core.
    pub workers: usize,
    pub cell: CellSpec,
    pub schedule: ScheduleSpec,
    pub drive: DriveSpec,
    pub settle: SettleSpec,
    pub signature: SignatureSpec,
    pub fig7: Fig7Spec,
    pub square_wave: SquareWaveSpec,
    pub step: StepSpec,
    pub wobble: WobbleSpec,
    pub crosstalk: CrosstalkSpec,
    pub custom: CustomSpec,
}

fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl SpeciesSpec {
    fn from_params(p: &SpeciesParams) -> Self {
        SpeciesSpec {
            name: p.name.clone(),
            gamma_mhz_per_t: units::gamma_to_mhz_per_t(p.gamma),
            lambda_m_nt: units::to_nt(p.lambda_m),
            r_sd: p.r_sd,
        }
    }

    fn to_params(&self) -> SpeciesParams {
        SpeciesParams::new(
            self.name.clone(),
            units::mhz_per_t_to_gamma(self.gamma_mhz_per_t),
            units::nt(self.lambda_m_nt),
            self.r_sd,
        )
    }
}

impl CellSpec {
    pub fn from_cell(c: &CellConfig, balance: bool) -> Self {
        CellSpec {
            alkali: SpeciesSpec::from_params(&c.alkali),
            noble: SpeciesSpec::from_params(&c.noble),
            r_se_en: c.r_se_en,
            r_se_ne: c.r_se_ne,
            r_p_on: c.r_p_on,
            pump_axis: [c.pump_axis.x, c.pump_axis.y, c.pump_axis.z],
            q_constant: match c.q_model {
                QModel::Constant(q) => Some(q),
                QModel::PolarisationDependent => None,
            },
            slowing: match c.slowing {
                SlowingScope::Full => SlowingSpec::Full,
                SlowingScope::PrecessionOnly => SlowingSpec::PrecessionOnly,
            },
            rotation_convention: match c.rotation_sense {
                RotationSense::Positive => SenseSpec::Positive,
                RotationSense::Negative => SenseSpec::Negative,
            },
            bias_nt: units::to_nt(c.bias_z),
            balance_spin_exchange: balance,
        }
    }

    pub fn to_cell(&self) -> Result<CellConfig> {
        let c = CellConfig {
            alkali: self.alkali.to_params(),
            noble: self.noble.to_params(),
            r_se_en: self.r_se_en,
            r_se_ne: self.r_se_ne,
            r_p_on: self.r_p_on,
            pump_axis: vec3(self.pump_axis),
            q_model: self
                .q_constant
                .map_or(QModel::PolarisationDependent, QModel::Constant),
            slowing: match self.slowing {
                SlowingSpec::Full => SlowingScope::Full,
                SlowingSpec::PrecessionOnly => SlowingScope::PrecessionOnly,
            },
            rotation_sense: match self.rotation_convention {
                SenseSpec::Positive => RotationSense::Positive,
                SenseSpec::Negative => RotationSense::Negative,
            },
            bias_z: units::nt(self.bias_nt),
        };
        c.validate()?;
        Ok(c)
    }
}

impl ScheduleSpec {
    pub fn from_schedule(s: &PulseSchedule) -> Self {
        let (pulse, pulse_duration_ms) = match s.pulse_mode {
            PulseMode::Impulse => (ModeSpec::Impulse, 0.3),
            PulseMode::Finite { duration } => (ModeSpec::Finite, units::to_ms(duration)),
        };
        let (pump, p_sat) = match s.pump_mode {
            PumpMode::Impulse { p_sat } => (ModeSpec::Impulse, p_sat),
            PumpMode::Finite => (ModeSpec::Finite, 1.0),
        };
        ScheduleSpec {
            tau_ms: units::to_ms(s.tau),
            pump_ms: units::to_ms(s.pump_duration),
            pulse_area_deg: s.pulse_area.to_degrees(),
            pulse,
            pulse_duration_ms,
            pump,
            p_sat,
            sample_rate_ks: s.sample_rate / units::KILOSAMPLES,
            guard_start_ms: units::to_ms(s.guard_start),
            guard_end_ms: units::to_ms(s.guard_end),
            rtol: s.tol.rtol,
            atol: s.tol.atol,
        }
    }

    pub fn to_schedule(&self) -> Result<PulseSchedule> {
        let s = PulseSchedule {
            tau: units::ms(self.tau_ms),
            pump_duration: units::ms(self.pump_ms),
            pulse_area: self.pulse_area_deg.to_radians(),
            pulse_mode: match self.pulse {
                ModeSpec::Impulse => PulseMode::Impulse,
                ModeSpec::Finite => PulseMode::Finite {
                    duration: units::ms(self.pulse_duration_ms),
                },
            },
            pump_mode: match self.pump {
                ModeSpec::Impulse => PumpMode::Impulse { p_sat: self.p_sat },
                ModeSpec::Finite => PumpMode::Finite,
            },
            sample_rate: self.sample_rate_ks * units::KILOSAMPLES,
            guard_start: units::ms(self.guard_start_ms),
            guard_end: units::ms(self.guard_end_ms),
            tol: Tolerance::new(self.rtol, self.atol)?,
        };
        s.validate()?;
        Ok(s)
    }
}

impl WaveSpec {
    fn to_waveform(&self) -> (Quantity, Waveform) {
        let scale = |q: Quantity, a: f64| match q {
            Quantity::B => units::pt(a),
            Quantity::Om => units::uhz_to_rad_s(a),
        };
        match *self {
            WaveSpec::Step {
                quantity,
                axis,
                amplitude,
                t0_s,
            } => (
                quantity,
                Waveform::Step {
                    t0: t0_s,
                    value: vec3(axis) * scale(quantity, amplitude),
                },
            ),
            WaveSpec::Square {
                quantity,
                axis,
                amplitude,
                period_s,
                phase,
            } => (
                quantity,
                Waveform::Square {
                    amplitude: scale(quantity, amplitude),
                    period: period_s,
                    phase,
                    axis: vec3(axis),
                },
            ),
            WaveSpec::Sinusoid {
                quantity,
                axis,
                amplitude,
                frequency_hz,
                phase_rad,
            } => (
                quantity,
                Waveform::Sinusoid {
                    amplitude: scale(quantity, amplitude),
                    frequency: frequency_hz,
                    phase: phase_rad,
                    axis: vec3(axis),
                },
            ),
        }
    }
}

impl DriveSpec {
    pub fn zero() -> Self {
        DriveSpec {
            b_x: 0.0,
            b_y: 0.0,
            om_x: 0.0,
            om_y: 0.0,
            waveforms: Vec::new(),
        }
    }

    /// Bx, By in tesla and Ωx, Ωy in rad/s.
    pub fn dc_si(&self) -> [f64; 4] {
        [
            units::pt(self.b_x),
            units::pt(self.b_y),
            units::uhz_to_rad_s(self.om_x),
            units::uhz_to_rad_s(self.om_y),
        ]
    }

    pub fn to_timeline(&self) -> DriveTimeline {
        let [bx, by, wx, wy] = self.dc_si();
        let dc = |v: Vec3| {
            if v == Vec3::zeros() {
                Program::zero()
            } else {
                Program::constant(v)
            }
        };
        let mut field = dc(Vec3::new(bx, by, 0.0));
        let mut rotation = dc(Vec3::new(wx, wy, 0.0));
        for w in &self.waveforms {
            match w.to_waveform() {
                (Quantity::B, wf) => field = field.with(wf),
                (Quantity::Om, wf) => rotation = rotation.with(wf),
            }
        }
        DriveTimeline { field, rotation }
    }
}

impl SettleSpec {
    fn from_settle(s: &Settle) -> Self {
        SettleSpec {
            time_s: s.time,
            threshold: s.threshold,
        }
    }

    pub fn to_settle(&self) -> Result<Settle> {
        if !(self.time_s > 0.0 && self.threshold > 0.0) {
            return Err(Error::InvalidConfig(
                "settle time and threshold must be > 0".into(),
            ));
        }
        Ok(Settle {
            time: self.time_s,
            threshold: self.threshold,
        })
    }
}

impl RunConfig {
    /// Registered scenario with its default parameters.
    pub fn preset(name: &str) -> Result<Self> {
        if !SCENARIOS.contains(&name) {
            return Err(Error::Usage(format!(
                "unknown scenario `{name}` (known: {})",
                SCENARIOS.join(", ")
            )));
        }
        let fig2 = Fig2Params::default();
        let fig7 = Fig7Params::default();
        let sq = SquareWaveParams::default();
        let st = StepParams::default();
        let wb = WobbleParams::default();
        let (cell, schedule, settle, balance) = match name {
            "fig2" => (&fig2.cfg, &fig2.sched, fig2.settle, true),
            "fig7" => (&fig7.cfg, &fig7.sched, Settle::default(), false),
            _ => (&sq.cfg, &sq.sched, sq.signature.settle, true),
        };
        let drive = if name == "fig2" {
            DriveSpec {
                b_x: units::to_pt(fig2.drive[0]),
                b_y: units::to_pt(fig2.drive[1]),
                om_x: units::rad_s_to_uhz(fig2.drive[2]),
                om_y: units::rad_s_to_uhz(fig2.drive[3]),
                waveforms: Vec::new(),
            }
        } else {
            DriveSpec::zero()
        };
        let sig = SignatureOptions::default();
        let grid = &fig7.biases_nt;
        let xt = CrosstalkOptions::default();
        Ok(RunConfig {
            scenario: name.to_string(),
            seed: None,
            noise_sigma: 0.0,
            workers: 0,
            cell: CellSpec::from_cell(cell, balance),
            schedule: ScheduleSpec::from_schedule(schedule),
            drive,
            settle: SettleSpec::from_settle(&settle),
            signature: SignatureSpec {
                eps_b_pt: units::to_pt(sig.eps_b),
                eps_om_uhz: units::rad_s_to_uhz(sig.eps_omega),
                check_linearity: name != "fig7",
            },
            fig7: Fig7Spec {
                start_nt: grid[0],
                stop_nt: grid[grid.len() - 1],
                step_nt: grid[1] - grid[0],
                refine: fig7.scan.refine,
                refine_tol_nt: units::to_nt(fig7.scan.refine_tol),
            },
            square_wave: SquareWaveSpec {
                amp_x_pt: units::to_pt(sq.amp_x),
                amp_y_pt: units::to_pt(sq.amp_y),
                period_x_s: sq.period_x,
                period_y_s: sq.period_y,
                duration_s: sq.duration,
                response_window_s: sq.response_window,
                write_traces: true,
            },
            step: StepSpec {
                step_amp_pt: units::to_pt(st.step_amp),
                n_steps: st.n_steps,
                spacing_s: st.spacing,
                settled_limit: st.settled_limit,
            },
            wobble: WobbleSpec {
                omega_peak_uhz: units::rad_s_to_uhz(wb.omega_peak),
                frequency_hz: wb.wobble_frequency,
                drift_pt: units::to_pt(wb.drift_amp),
                drift_period_s: wb.drift_period,
                duration_s: wb.duration,
                discard_s: wb.discard,
                mis_set_nt: units::to_nt(wb.mis_set),
                write_traces: true,
            },
            crosstalk: CrosstalkSpec {
                offset_nt: 0.2,
                probe_pt: units::to_pt(xt.b_probe),
                check_linearity: xt.check_linearity,
            },
            custom: CustomSpec {
                duration_s: 1.0,
                with_baseline: false,
                write_traces: true,
            },
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// A registered scenario name or a path to a config file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if SCENARIOS.contains(&name_or_path) {
            Self::preset(name_or_path)
        } else if Path::new(name_or_path).is_file() {
            Self::load(Path::new(name_or_path))
        } else {
            Err(Error::Usage(format!(
                "`{name_or_path}` is neither a scenario ({}) nor a config file",
                SCENARIOS.join(", ")
            )))
        }
    }

    /// Applies `key=value` overrides. Keys are dotted paths into the config
    /// and must already exist; values are JSON, or plain strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("override `{o}` is not key=value")))?;
            let value: Value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut v, key.trim(), value)?;
        }
        let out: RunConfig = serde_json::from_value(v)?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if !SCENARIOS.contains(&self.scenario.as_str()) {
            return Err(Error::InvalidConfig(format!(
                "unknown scenario `{}`",
                self.scenario
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig(
                "noise_sigma must be finite and >= 0".into(),
            ));
        }
        if self.noise_sigma > 0.0 && self.seed.is_none() {
            return Err(Error::InvalidConfig(
                "a seed is required for noisy runs".into(),
            ));
        }
        self.cell.to_cell()?;
        self.schedule.to_schedule()?;
        self.settle.to_settle()?;
        Ok(())
    }

    pub fn cell_config(&self) -> Result<CellConfig> {
        self.cell.to_cell()
    }

    pub fn pulse_schedule(&self) -> Result<PulseSchedule> {
        self.schedule.to_schedule()
    }

    pub fn signature_options(&self) -> Result<SignatureOptions> {
        Ok(SignatureOptions {
            eps_b: units::pt(self.signature.eps_b_pt),
            eps_omega: units::uhz_to_rad_s(self.signature.eps_om_uhz),
            settle: self.settle.to_settle()?,
            check_linearity: self.signature.check_linearity,
        })
    }

    pub fn fig2(&self) -> Result<Fig2Params> {
        Ok(Fig2Params {
            cfg: self.cell_config()?,
            sched: self.pulse_schedule()?,
            drive: self.drive.dc_si(),
            settle: self.settle.to_settle()?,
            balance: self.cell.balance_spin_exchange,
        })
    }

    pub fn fig7(&self) -> Result<Fig7Params> {
        let f = &self.fig7;
        if !(f.step_nt > 0.0 && f.stop_nt >= f.start_nt) {
            return Err(Error::InvalidConfig(
                "fig7 grid needs step_nt > 0 and stop_nt >= start_nt".into(),
            ));
        }
        let n = ((f.stop_nt - f.start_nt) / f.step_nt + 1e-9).floor() as usize;
        let settle = self.settle.to_settle()?;
        let sig = self.signature_options()?;
        Ok(Fig7Params {
            cfg: self.cell_config()?,
            sched: self.pulse_schedule()?,
            biases_nt: (0..=n).map(|i| f.start_nt + i as f64 * f.step_nt).collect(),
            scan: ScanOptions {
                signature: sig,
                cw: CwOptions {
                    settle,
                    ..CwOptions::default()
                },
                noise_sigma: 1.0,
                workers: self.workers,
                refine: f.refine,
                refine_tol: units::nt(f.refine_tol_nt),
            },
        })
    }

    pub fn square_wave(&self) -> Result<SquareWaveParams> {
        let s = &self.square_wave;
        Ok(SquareWaveParams {
            cfg: self.cell_config()?,
            sched: self.pulse_schedule()?,
            amp_x: units::pt(s.amp_x_pt),
            amp_y: units::pt(s.amp_y_pt),
            period_x: s.period_x_s,
            period_y: s.period_y_s,
            duration: s.duration_s,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
            signature: self.signature_options()?,
            balance: self.cell.balance_spin_exchange,
            response_window: s.response_window_s,
            keep_trace: s.write_traces,
        })
    }

    pub fn step(&self) -> Result<StepParams> {
        let s = &self.step;
        Ok(StepParams {
            cfg: self.cell_config()?,
            sched: self.pulse_schedule()?,
            step_amp: units::pt(s.step_amp_pt),
            n_steps: s.n_steps,
            spacing: s.spacing_s,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
            signature: self.signature_options()?,
            balance: self.cell.balance_spin_exchange,
            settled_limit: s.settled_limit,
        })
    }

    pub fn crosstalk_options(&self) -> Result<CrosstalkOptions> {
        Ok(CrosstalkOptions {
            b_probe: units::pt(self.crosstalk.probe_pt),
            settle: self.settle.to_settle()?,
            check_linearity: self.crosstalk.check_linearity,
        })
    }

    pub fn wobble(&self) -> Result<WobbleParams> {
        let w = &self.wobble;
        Ok(WobbleParams {
            cfg: self.cell_config()?,
            sched: self.pulse_schedule()?,
            omega_peak: units::uhz_to_rad_s(w.omega_peak_uhz),
            wobble_frequency: w.frequency_hz,
            drift_amp: units::pt(w.drift_pt),
            drift_period: w.drift_period_s,
            duration: w.duration_s,
            discard: w.discard_s,
            mis_set: units::nt(w.mis_set_nt),
            noise_sigma: self.noise_sigma,
            seed: self.seed,
            signature: self.signature_options()?,
            crosstalk: self.crosstalk_options()?,
            balance: self.cell.balance_spin_exchange,
            keep_trace: w.write_traces,
        })
    }

    pub fn custom(&self) -> Result<CustomParams> {
        let c = &self.custom;
        Ok(CustomParams {
            cfg: self.cell_config()?,
            sched: self.pulse_schedule()?,
            drive: self.drive.to_timeline(),
            duration: c.duration_s,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
            signature: self.signature_options()?,
            balance: self.cell.balance_spin_exchange,
            with_baseline: c.with_baseline,
            keep_trace: c.write_traces,
        })
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let unknown = || Error::UnknownKey(key.to_string());
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let slot = match cur {
            Value::Object(map) => map.get_mut(*part).ok_or_else(unknown)?,
            Value::Array(items) => part
                .parse::<usize>()
                .ok()
                .and_then(|j| items.get_mut(j))
                .ok_or_else(unknown)?,
            _ => return Err(unknown()),
        };
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        cur = slot;
    }
    Err(unknown())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_json() {
        for name in SCENARIOS {
            let c = RunConfig::preset(name).unwrap();
            let text = serde_json::to_string(&c).unwrap();
            let back: RunConfig = serde_json::from_str(&text).unwrap();
            assert_eq!(back, c);
            c.validate().unwrap();
        }
    }

    #[test]
    fn presets_reproduce_library_defaults() {
        let c = RunConfig::preset("fig7").unwrap();
        let p = c.fig7().unwrap();
        let d = Fig7Params::default();
        assert_eq!(p.biases_nt.len(), d.biases_nt.len());
        for (a, b) in p.biases_nt.iter().zip(&d.biases_nt) {
            assert!((a - b).abs() < 1e-12);
        }
        let cell = p.cfg;
        assert!((cell.bias_z - d.cfg.bias_z).abs() < 1e-24);
        assert!((cell.alkali.gamma - d.cfg.alkali.gamma).abs() < 1e-6 * d.cfg.alkali.gamma);
    }

    #[test]
    fn override_sets_nested_value() {
        let c = RunConfig::preset("fig2")
            .unwrap()
            .with_overrides(&["drive.B_x=0", "seed=7"])
            .unwrap();
        assert_eq!(c.drive.b_x, 0.0);
        assert_eq!(c.seed, Some(7));
    }

    #[test]
    fn unknown_override_names_the_path() {
        let e = RunConfig::preset("fig2")
            .unwrap()
            .with_overrides(&["drive.Bx_typo=1"])
            .unwrap_err();
        assert!(matches!(&e, Error::UnknownKey(k) if k == "drive.Bx_typo"));
        assert!(e.to_string().contains("drive.Bx_typo"));
    }

    #[test]
    fn unknown_file_field_is_rejected() {
        let mut v = serde_json::to_value(RunConfig::preset("custom").unwrap()).unwrap();
        v["cell"]["extra"] = Value::from(1.0);
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }

    #[test]
    fn noisy_config_needs_seed() {
        let c = RunConfig::preset("custom")
            .unwrap()
            .with_overrides(&["noise_sigma=1e-6"])
            .unwrap();
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let c = c.with_overrides(&["seed=1"]).unwrap();
        c.validate().unwrap();
    }

    #[test]
    fn waveforms_convert_display_units() {
        let mut d = DriveSpec::zero();
        d.waveforms.push(WaveSpec::Step {
            quantity: Quantity::Om,
            axis: [0.0, 1.0, 0.0],
            amplitude: 1e6,
            t0_s: 0.5,
        });
        let t = d.to_timeline();
        assert!((t.rotation_at(1.0).y - std::f64::consts::TAU).abs() < 1e-12);
        assert_eq!(t.rotation_at(0.0), Vec3::zeros());
    }
}

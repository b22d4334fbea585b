use crate::dynamics::{PulseMode, Tolerance};
use crate::error::{Error, Result};
use crate::model::units;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PumpMode {
    /// Alkali pinned at `p_sat` along the pump axis for the whole pump
    /// interval.
    Impulse { p_sat: f64 },
    /// Pump integrated at the cell's `R_p_on`.
    Finite,
}

/// Timing of one measurement window and the probe sampling grid.
///
/// A window is: magnetic pulse at its start, pump for `pump_duration`,
/// free precession until `tau`. Probe samples cover the free part minus the
/// two guard delays. A cycle is two windows, the first opened by a
/// −`pulse_area` pulse and the second by +`pulse_area`.
#[derive(Clone, Debug, PartialEq)]
pub struct PulseSchedule {
    pub tau: f64,
    pub pump_duration: f64,
    pub pulse_area: f64,
    pub pulse_mode: PulseMode,
    pub pump_mode: PumpMode,
    /// Samples per second.
    pub sample_rate: f64,
    pub guard_start: f64,
    pub guard_end: f64,
    pub tol: Tolerance,
}

/// Integration tolerance used for linear-response runs, where transverse
/// components are many orders below unity.
pub const RESPONSE_TOLERANCE: Tolerance = Tolerance {
    rtol: 1e-10,
    atol: 1e-15,
};

pub const DEFAULT_SAMPLE_RATE: f64 = 125.0 * units::KILOSAMPLES;

impl PulseSchedule {
    /// 20 ms windows, 1 ms finite pump, impulse ±π/2 pulses.
    pub fn k_he3() -> Self {
        PulseSchedule {
            tau: units::ms(20.0),
            pump_duration: units::ms(1.0),
            pulse_area: std::f64::consts::FRAC_PI_2,
            pulse_mode: PulseMode::Impulse,
            pump_mode: PumpMode::Finite,
            sample_rate: DEFAULT_SAMPLE_RATE,
            guard_start: 0.0,
            guard_end: 0.0,
            tol: RESPONSE_TOLERANCE,
        }
    }

    /// 10 ms windows with a 0.3 ms saturating pump and impulse pulses.
    pub fn rb_xe_simulation() -> Self {
        PulseSchedule {
            tau: units::ms(10.0),
            pump_duration: units::ms(0.3),
            pulse_area: std::f64::consts::FRAC_PI_2,
            pulse_mode: PulseMode::Impulse,
            pump_mode: PumpMode::Impulse { p_sat: 1.0 },
            sample_rate: DEFAULT_SAMPLE_RATE,
            guard_start: 0.0,
            guard_end: 0.0,
            tol: RESPONSE_TOLERANCE,
        }
    }

    /// 2 ms windows, 0.3 ms pump, 1.7 ms free window.
    pub fn rb_xe_experiment() -> Self {
        PulseSchedule {
            tau: units::ms(2.0),
            pump_duration: units::ms(0.3),
            pulse_area: std::f64::consts::FRAC_PI_2,
            pulse_mode: PulseMode::Impulse,
            pump_mode: PumpMode::Impulse { p_sat: 1.0 },
            sample_rate: DEFAULT_SAMPLE_RATE,
            guard_start: 0.0,
            guard_end: 0.0,
            tol: RESPONSE_TOLERANCE,
        }
    }

    pub fn cycle_duration(&self) -> f64 {
        2.0 * self.tau
    }

    pub fn samples_per_window(&self) -> usize {
        let span = self.tau - self.pump_duration - self.guard_start - self.guard_end;
        (span * self.sample_rate).round().max(0.0) as usize
    }

    pub fn samples_per_cycle(&self) -> usize {
        2 * self.samples_per_window()
    }

    /// Sample offsets from the start of a window.
    pub fn window_grid(&self) -> Vec<f64> {
        let t0 = self.pump_duration + self.guard_start;
        (0..self.samples_per_window())
            .map(|i| t0 + i as f64 / self.sample_rate)
            .collect()
    }

    /// Sample offsets from the start of a cycle.
    pub fn cycle_grid(&self) -> Vec<f64> {
        let w = self.window_grid();
        w.iter()
            .copied()
            .chain(w.iter().map(|t| t + self.tau))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let finite = [
            self.tau,
            self.pump_duration,
            self.pulse_area,
            self.sample_rate,
            self.guard_start,
            self.guard_end,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return bad("schedule values must be finite".into());
        }
        if self.tau <= 0.0 || self.pump_duration < 0.0 || self.pump_duration >= self.tau {
            return bad(format!(
                "need 0 <= pump_duration < tau (pump {} s, tau {} s)",
                self.pump_duration, self.tau
            ));
        }
        if self.guard_start < 0.0 || self.guard_end < 0.0 {
            return bad("guard delays must be >= 0".into());
        }
        if self.pulse_area.abs() > std::f64::consts::PI {
            return bad(format!(
                "pulse area {} rad outside [-pi, pi]",
                self.pulse_area
            ));
        }
        if self.sample_rate <= 0.0 {
            return bad("sample rate must be > 0".into());
        }
        if self.samples_per_window() < 16 {
            return bad(format!(
                "only {} samples per window; at least 16 required",
                self.samples_per_window()
            ));
        }
        if let PulseMode::Finite { duration } = self.pulse_mode {
            if !(duration > 0.0) || duration > self.pump_duration {
                return bad(format!(
                    "finite pulse duration {duration} s must lie in (0, pump_duration]"
                ));
            }
        }
        if let PumpMode::Impulse { p_sat } = self.pump_mode {
            if !(0.0..=1.0).contains(&p_sat) {
                return bad(format!("saturation polarisation {p_sat} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// How long to run before a steady state is declared, and how close two
/// consecutive cycles must be.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Settle {
    pub time: f64,
    /// Consecutive-cycle RMS difference relative to the cycle RMS.
    pub threshold: f64,
}

impl Default for Settle {
    fn default() -> Self {
        Settle {
            time: 40.0,
            threshold: 1e-8,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let s = PulseSchedule::k_he3();
        assert_eq!(s.samples_per_window(), 2375);
        let g = s.cycle_grid();
        assert_eq!(g.len(), 4750);
        assert!((g[0] - 1e-3).abs() < 1e-15);
        assert!((g[2375] - 21e-3).abs() < 1e-15);
        assert_eq!(PulseSchedule::rb_xe_experiment().samples_per_window(), 213);
    }

    #[test]
    fn presets_validate() {
        PulseSchedule::k_he3().validate().unwrap();
        PulseSchedule::rb_xe_simulation().validate().unwrap();
        PulseSchedule::rb_xe_experiment().validate().unwrap();
    }

    #[test]
    fn rejects_inconsistent_timing() {
        let mut s = PulseSchedule::k_he3();
        s.pump_duration = s.tau;
        assert!(s.validate().is_err());
        let mut s = PulseSchedule::k_he3();
        s.sample_rate = 500.0;
        assert!(s.validate().is_err());
        let mut s = PulseSchedule::k_he3();
        s.pulse_mode = PulseMode::Finite { duration: 2e-3 };
        assert!(s.validate().is_err());
    }
}

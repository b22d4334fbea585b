//! Physical parameters of the two-species cell and closed-form quantities.
//!
//! Everything in this module is strict SI: tesla, rad/s, seconds. Display
//! units (nT, pT, µHz, ms) only appear at the configuration boundary, see
//! [`units`].

use std::f64::consts::TAU;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Slack allowed on |P| ≤ 1 for integrated polarisations.
pub const POLARISATION_SLACK: f64 = 1e-9;

/// Electron gyromagnetic ratio used for the alkali species, rad/(s·T).
pub const GAMMA_ELECTRON: f64 = TAU * 28.0e9;
/// ³He nuclear gyromagnetic ratio, rad/(s·T).
pub const GAMMA_HE3: f64 = TAU * 32.43e6;
/// ¹²⁹Xe nuclear gyromagnetic ratio (magnitude), rad/(s·T).
pub const GAMMA_XE129: f64 = TAU * 11.8e6;

pub mod units {
    use std::f64::consts::TAU;

    pub const NANOTESLA: f64 = 1e-9;
    pub const PICOTESLA: f64 = 1e-12;
    pub const MILLISECOND: f64 = 1e-3;
    pub const MICROSECOND: f64 = 1e-6;
    pub const KILOSAMPLES: f64 = 1e3;

    pub fn nt(x: f64) -> f64 {
        x * NANOTESLA
    }

    pub fn pt(x: f64) -> f64 {
        x * PICOTESLA
    }

    pub fn ms(x: f64) -> f64 {
        x * MILLISECOND
    }

    pub fn to_nt(b: f64) -> f64 {
        b / NANOTESLA
    }

    pub fn to_pt(b: f64) -> f64 {
        b / PICOTESLA
    }

    pub fn to_ms(t: f64) -> f64 {
        t / MILLISECOND
    }

    /// Rotation rate quoted in Hz (Ω/2π) to rad/s.
    pub fn hz_to_rad_s(f: f64) -> f64 {
        TAU * f
    }

    pub fn rad_s_to_hz(w: f64) -> f64 {
        w / TAU
    }

    pub fn uhz_to_rad_s(f: f64) -> f64 {
        TAU * f * 1e-6
    }

    pub fn rad_s_to_uhz(w: f64) -> f64 {
        w / TAU * 1e6
    }

    /// Gyromagnetic ratio quoted as γ/2π in MHz/T to rad/(s·T).
    pub fn mhz_per_t_to_gamma(f: f64) -> f64 {
        TAU * f * 1e6
    }

    pub fn gamma_to_mhz_per_t(g: f64) -> f64 {
        g / TAU * 1e-6
    }

    /// Cross-talk in Hz/T expressed in µHz/pT.
    pub fn hz_per_t_to_uhz_per_pt(x: f64) -> f64 {
        x * 1e-6
    }

    pub fn uhz_per_pt_to_hz_per_t(x: f64) -> f64 {
        x * 1e6
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeciesParams {
    pub name: String,
    /// Gyromagnetic ratio, rad/(s·T).
    pub gamma: f64,
    /// Coupled magnetisation λM in tesla, i.e. the field this species
    /// exerts on the other one at unit polarisation.
    pub lambda_m: f64,
    /// Spin-destruction rate, 1/s.
    pub r_sd: f64,
}

impl SpeciesParams {
    pub fn new(name: impl Into<String>, gamma: f64, lambda_m: f64, r_sd: f64) -> Self {
        SpeciesParams {
            name: name.into(),
            gamma,
            lambda_m,
            r_sd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| {
            Err(Error::InvalidConfig(format!(
                "species `{}`: {what}",
                self.name
            )))
        };
        if !self.gamma.is_finite() || self.gamma == 0.0 {
            return bad("gamma must be finite and non-zero");
        }
        if !self.lambda_m.is_finite() || self.lambda_m < 0.0 {
            return bad("lambda_M must be finite and >= 0");
        }
        if !self.r_sd.is_finite() || self.r_sd < 0.0 {
            return bad("R_sd must be finite and >= 0");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QModel {
    /// q = 4 / (2 − 4/(3 + |Pᵉ|²)), nuclear spin 3/2.
    PolarisationDependent,
    Constant(f64),
}

/// Which alkali terms the slowing-down factor divides.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlowingScope {
    /// Precession, spin exchange, pumping and relaxation all divided by q.
    Full,
    /// Only the magnetic precession term is divided by q; the rates are
    /// the observed (already slowed) rates.
    PrecessionOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RotationSense {
    /// +Ω × P on both species.
    Positive,
    /// −Ω × P on both species.
    Negative,
}

impl RotationSense {
    pub fn sign(self) -> f64 {
        match self {
            RotationSense::Positive => 1.0,
            RotationSense::Negative => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellConfig {
    pub alkali: SpeciesParams,
    pub noble: SpeciesParams,
    /// Alkali → noble spin-exchange rate, 1/s.
    pub r_se_en: f64,
    /// Noble → alkali spin-exchange rate, 1/s.
    pub r_se_ne: f64,
    /// Pump rate while the pump is on, 1/s.
    pub r_p_on: f64,
    pub pump_axis: Vec3,
    pub q_model: QModel,
    pub slowing: SlowingScope,
    pub rotation_sense: RotationSense,
    /// Bias field along z, tesla. Negative values oppose the magnetisation.
    pub bias_z: f64,
}

impl CellConfig {
    /// Hypothetical K–³He cell with a pre-polarised, non-relaxing ³He
    /// magnetisation of 100 nT and 9 nT peak alkali magnetisation.
    pub fn k_he3() -> Self {
        CellConfig {
            alkali: SpeciesParams::new("K", GAMMA_ELECTRON, units::nt(9.0), 50.0),
            noble: SpeciesParams::new("3He", GAMMA_HE3, units::nt(100.0), 0.0),
            r_se_en: 0.0,
            r_se_ne: 0.0,
            // Reaches Pᵉ_z = 0.99 at the end of a 1 ms pump in the periodic state.
            r_p_on: 6000.0,
            pump_axis: Vec3::z(),
            q_model: QModel::Constant(4.0),
            slowing: SlowingScope::PrecessionOnly,
            rotation_sense: RotationSense::Positive,
            bias_z: units::nt(-106.3),
        }
    }

    /// ⁸⁷Rb–¹²⁹Xe parameters of the response simulation (Xe 58 nT, Rb 54 nT,
    /// bias −41 nT, Rb decay 3.3 ms, Xe decay 10 s). The alkali → noble
    /// spin-exchange rate is left at zero; see [`CellConfig::balance_spin_exchange`].
    pub fn rb_xe_simulation() -> Self {
        CellConfig {
            alkali: SpeciesParams::new("87Rb", GAMMA_ELECTRON, units::nt(54.0), 1.0 / 3.3e-3),
            noble: SpeciesParams::new("129Xe", GAMMA_XE129, units::nt(58.0), 0.1),
            r_se_en: 0.0,
            r_se_ne: 0.0,
            r_p_on: 1.0e5,
            pump_axis: Vec3::z(),
            q_model: QModel::PolarisationDependent,
            slowing: SlowingScope::PrecessionOnly,
            rotation_sense: RotationSense::Positive,
            bias_z: units::nt(-41.0),
        }
    }

    /// ⁸⁷Rb–¹²⁹Xe cell resembling the bench experiment: ~100 nT Xe field on
    /// the alkali, Rb T2 2 ms, Xe T2 3 s, bias giving about half a Larmor
    /// period in the 1.7 ms free window.
    pub fn rb_xe_experiment() -> Self {
        CellConfig {
            alkali: SpeciesParams::new("87Rb", GAMMA_ELECTRON, units::nt(54.0), 500.0),
            noble: SpeciesParams::new("129Xe", GAMMA_XE129, units::nt(100.0), 1.0 / 3.0),
            r_se_en: 0.0,
            r_se_ne: 0.0,
            r_p_on: 1.0e5,
            pump_axis: Vec3::z(),
            q_model: QModel::PolarisationDependent,
            slowing: SlowingScope::PrecessionOnly,
            rotation_sense: RotationSense::Positive,
            bias_z: units::nt(-50.0),
        }
    }

    /// Chooses R_se^en so that alkali → noble transfer balances the noble
    /// gas decay at unit polarisation along z for the given mean Pᵉ_z.
    pub fn balance_spin_exchange(&mut self, mean_pe_z: f64) {
        if mean_pe_z > 0.0 {
            self.r_se_en = (self.r_se_ne + self.noble.r_sd) / mean_pe_z;
        }
    }

    pub fn with_bias(mut self, bias_z: f64) -> Self {
        self.bias_z = bias_z;
        self
    }

    /// Total alkali relaxation rate (spin destruction plus exchange loss).
    pub fn alkali_loss_rate(&self) -> f64 {
        self.alkali.r_sd + self.r_se_en
    }

    pub fn noble_loss_rate(&self) -> f64 {
        self.noble.r_sd + self.r_se_ne
    }

    pub fn validate(&self) -> Result<()> {
        self.alkali.validate()?;
        self.noble.validate()?;
        for (name, v) in [
            ("R_se_en", self.r_se_en),
            ("R_se_ne", self.r_se_ne),
            ("R_p_on", self.r_p_on),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and >= 0"
                )));
            }
        }
        if !self.bias_z.is_finite() {
            return Err(Error::InvalidConfig("bias must be finite".into()));
        }
        let n = self.pump_axis.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "pump axis must be a unit vector (|s| = {n})"
            )));
        }
        if let QModel::Constant(q0) = self.q_model {
            if !(1.0..=10.0).contains(&q0) {
                return Err(Error::InvalidConfig(format!(
                    "constant q must lie in [1, 10], got {q0}"
                )));
            }
        }
        Ok(())
    }
}

/// Slowing-down factor q for the alkali polarisation `pe`.
pub fn slowing_down_factor(pe: &Vec3, model: QModel) -> f64 {
    match model {
        QModel::Constant(q0) => q0,
        QModel::PolarisationDependent => {
            let p2 = pe.norm_squared().clamp(0.0, 1.0);
            4.0 / (2.0 - 4.0 / (3.0 + p2))
        }
    }
}

/// Bias magnitude that cancels the combined magnetisation seen along z:
/// λMⁿ·Pⁿ_z + λMᵉ·⟨Pᵉ_z⟩. Apply it opposing the magnetisation.
pub fn compensation_point(cfg: &CellConfig, mean_pe_z: f64, pn_z: f64) -> f64 {
    cfg.noble.lambda_m * pn_z + cfg.alkali.lambda_m * mean_pe_z
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn q_at_limits() {
        let q = |p: f64| slowing_down_factor(&(Vec3::z() * p), QModel::PolarisationDependent);
        assert_relative_eq!(q(0.0), 6.0, epsilon = 1e-15);
        assert_relative_eq!(q(1.0), 4.0, epsilon = 1e-15);
        assert_relative_eq!(q(0.5), 5.2, epsilon = 1e-12);
        // overshoot is clamped
        assert_relative_eq!(q(1.0 + 1e-9), 4.0, epsilon = 1e-15);
    }

    #[test]
    fn constant_q_ignores_polarisation() {
        for p in [0.0, 0.3, 1.0] {
            assert_eq!(
                slowing_down_factor(&(Vec3::x() * p), QModel::Constant(4.0)),
                4.0
            );
        }
    }

    #[test]
    fn compensation_examples() {
        let cfg = CellConfig::k_he3();
        assert_relative_eq!(
            units::to_nt(compensation_point(&cfg, 0.5, 1.0)),
            104.5,
            epsilon = 1e-9
        );
        let b = units::to_nt(compensation_point(&cfg, 0.66, 1.0));
        assert_relative_eq!(b, 105.94, epsilon = 1e-9);
        assert!((b - 106.3).abs() < 0.4);

        let mut single = cfg.clone();
        single.alkali.lambda_m = 0.0;
        for pe in [0.0, 0.4, 0.9] {
            assert_relative_eq!(
                units::to_nt(compensation_point(&single, pe, 1.0)),
                100.0,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn presets_validate() {
        CellConfig::k_he3().validate().unwrap();
        CellConfig::rb_xe_simulation().validate().unwrap();
        CellConfig::rb_xe_experiment().validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut cfg = CellConfig::k_he3();
        cfg.q_model = QModel::Constant(0.5);
        assert!(cfg.validate().is_err());

        let mut cfg = CellConfig::k_he3();
        cfg.pump_axis = Vec3::new(0.0, 0.0, 2.0);
        assert!(cfg.validate().is_err());

        let mut cfg = CellConfig::k_he3();
        cfg.alkali.gamma = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = CellConfig::k_he3();
        cfg.r_se_en = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn balance_sets_transfer_rate() {
        let mut cfg = CellConfig::rb_xe_simulation();
        cfg.balance_spin_exchange(0.4);
        assert_relative_eq!(cfg.r_se_en, 0.25, epsilon = 1e-12);
    }
}

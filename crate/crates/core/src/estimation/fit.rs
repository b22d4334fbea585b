use nalgebra::{DMatrix, DVector, Matrix4, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::units;
use crate::protocol::{MeasuredCycle, SignatureSet, DEGENERACY_THRESHOLD};

/// Least-squares estimate of the four drives for one cycle.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    /// Tesla.
    pub bx: f64,
    pub by: f64,
    /// rad/s.
    pub om_x: f64,
    pub om_y: f64,
    /// Per-window offsets when baseline columns are fitted.
    pub baseline: Option<[f64; 2]>,
    pub residual_rms: f64,
    /// σ²(GᵀG)⁻¹ in the column order Bx, By, Ωx, Ωy[, b₁, b₂].
    #[serde(skip)]
    pub covariance: DMatrix<f64>,
}

impl FitResult {
    pub fn om_x_hz(&self) -> f64 {
        units::rad_s_to_hz(self.om_x)
    }

    pub fn om_y_hz(&self) -> f64 {
        units::rad_s_to_hz(self.om_y)
    }

    pub fn coefficients(&self) -> [f64; 4] {
        [self.bx, self.by, self.om_x, self.om_y]
    }
}

/// Condition number of the Gram matrix of `g` after scaling every column
/// to unit norm. Zero columns make it infinite.
pub fn normalised_condition(gram: &DMatrix<f64>) -> f64 {
    let n = gram.nrows();
    let d: Vec<f64> = (0..n).map(|i| gram[(i, i)].sqrt()).collect();
    if d.iter().any(|v| !(*v > 0.0)) {
        return f64::INFINITY;
    }
    let c = DMatrix::from_fn(n, n, |i, j| gram[(i, j)] / (d[i] * d[j]));
    let e = SymmetricEigen::new(c).eigenvalues;
    let (min, max) = (e.min(), e.max());
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Precomputed OLS solver for one signature set.
#[derive(Clone, Debug)]
pub struct LinearFitter {
    design: DMatrix<f64>,
    /// (GᵀG)⁻¹Gᵀ
    pinv: DMatrix<f64>,
    gram_inv: DMatrix<f64>,
    with_baseline: bool,
    pub condition: f64,
}

impl LinearFitter {
    pub fn new(sig: &SignatureSet, with_baseline: bool) -> Result<Self> {
        let n = sig.len();
        if n == 0 {
            return Err(Error::Usage("signature set is empty".into()));
        }
        let half = sig.meta.samples_per_window;
        if with_baseline && 2 * half != n {
            return Err(Error::GridMismatch(format!(
                "{n} signature samples is not two windows of {half}"
            )));
        }
        let p = if with_baseline { 6 } else { 4 };
        let cols = sig.columns();
        let design = DMatrix::from_fn(n, p, |i, j| match j {
            0..=3 => cols[j][i],
            4 => f64::from(u8::from(i < half)),
            _ => f64::from(u8::from(i >= half)),
        });
        let gram = design.tr_mul(&design);
        let condition = normalised_condition(&gram);
        if !(condition <= DEGENERACY_THRESHOLD) {
            return Err(Error::Degenerate {
                condition,
                threshold: DEGENERACY_THRESHOLD,
            });
        }
        // Invert in the column-normalised basis, then undo the scaling.
        let d = DVector::from_fn(p, |i, _| gram[(i, i)].sqrt());
        let scaled = DMatrix::from_fn(p, p, |i, j| gram[(i, j)] / (d[i] * d[j]));
        let inv_scaled = scaled
            .cholesky()
            .ok_or(Error::Degenerate {
                condition,
                threshold: DEGENERACY_THRESHOLD,
            })?
            .inverse();
        let gram_inv = DMatrix::from_fn(p, p, |i, j| inv_scaled[(i, j)] / (d[i] * d[j]));
        let pinv = &gram_inv * design.transpose();
        Ok(LinearFitter {
            design,
            pinv,
            gram_inv,
            with_baseline,
            condition,
        })
    }

    pub fn len(&self) -> usize {
        self.design.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.design.nrows() == 0
    }

    /// (GᵀG)⁻¹, the covariance for unit noise.
    pub fn unit_covariance(&self) -> &DMatrix<f64> {
        &self.gram_inv
    }

    pub fn fit(&self, samples: &[f64], noise_sigma: f64) -> Result<FitResult> {
        if samples.len() != self.len() {
            return Err(Error::GridMismatch(format!(
                "trace has {} samples, signatures have {}",
                samples.len(),
                self.len()
            )));
        }
        let y = DVector::from_column_slice(samples);
        let beta = &self.pinv * &y;
        let resid = &y - &self.design * &beta;
        let residual_rms = (resid.norm_squared() / samples.len() as f64).sqrt();
        Ok(FitResult {
            bx: beta[0],
            by: beta[1],
            om_x: beta[2],
            om_y: beta[3],
            baseline: self.with_baseline.then(|| [beta[4], beta[5]]),
            residual_rms,
            covariance: &self.gram_inv * (noise_sigma * noise_sigma),
        })
    }
}

pub fn fit_cycle(m: &MeasuredCycle, sig: &SignatureSet, with_baseline: bool) -> Result<FitResult> {
    LinearFitter::new(sig, with_baseline)?.fit(&m.samples, m.noise_sigma)
}

/// F = SᵀS/σ² over the cycle grid.
pub fn fisher_information(sig: &SignatureSet, noise_sigma: f64) -> Result<Matrix4<f64>> {
    if !(noise_sigma > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "noise sigma must be > 0, got {noise_sigma}"
        )));
    }
    Ok(sig.gram() / (noise_sigma * noise_sigma))
}

/// √diag(F⁻¹) per cycle, in the column order Bx, By, Ωx, Ωy.
pub fn sensitivities(f: &Matrix4<f64>) -> Result<[f64; 4]> {
    let dynamic = DMatrix::from_fn(4, 4, |i, j| f[(i, j)]);
    let condition = normalised_condition(&dynamic);
    if !(condition <= DEGENERACY_THRESHOLD) {
        return Err(Error::Degenerate {
            condition,
            threshold: DEGENERACY_THRESHOLD,
        });
    }
    let d: Vec<f64> = (0..4).map(|i| f[(i, i)].sqrt()).collect();
    let scaled = Matrix4::from_fn(|i, j| f[(i, j)] / (d[i] * d[j]));
    let inv = scaled
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::Degenerate {
            condition,
            threshold: DEGENERACY_THRESHOLD,
        })?;
    Ok([0, 1, 2, 3].map(|i| inv[(i, i)].sqrt() / d[i]))
}

/// Per-cycle sensitivity expressed per √Hz: multiplied by √(cycle duration).
pub fn per_root_hz(per_cycle: f64, cycle_duration: f64) -> f64 {
    per_cycle * cycle_duration.sqrt()
}

/// Sensitivity of a scheme whose whole response is a constant offset `r`
/// per unit drive, observed over `n_samples` samples of noise σ.
pub fn dc_sensitivity(response: f64, noise_sigma: f64, n_samples: usize) -> Result<f64> {
    if response == 0.0 || !response.is_finite() {
        return Err(Error::Degenerate {
            condition: f64::INFINITY,
            threshold: DEGENERACY_THRESHOLD,
        });
    }
    Ok(noise_sigma / (response.abs() * (n_samples as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::SignatureMeta;
    use approx::assert_relative_eq;

    pub(crate) fn toy_signatures(n: usize) -> SignatureSet {
        let t: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let col = |f: &dyn Fn(f64) -> f64| t.iter().map(|&x| f(x)).collect::<Vec<_>>();
        SignatureSet {
            s_bx: col(&|x| (6.0 * x).sin()),
            s_by: col(&|x| (6.0 * x).cos() * x),
            s_omx: col(&|x| 1.0 - x * x),
            s_omy: col(&|x| (17.0 * x).sin() + 0.2),
            t,
            meta: SignatureMeta {
                config_hash: String::new(),
                bias_z: 0.0,
                eps_b: 1.0,
                eps_omega: 1.0,
                settle_time: 0.0,
                tau: 0.5,
                sample_rate: n as f64,
                samples_per_window: n / 2,
                discrepancy: 0.0,
            },
        }
    }

    #[test]
    fn zero_trace_fits_zero() {
        let sig = toy_signatures(64);
        let f = LinearFitter::new(&sig, false).unwrap();
        let r = f.fit(&[0.0; 64], 1.0).unwrap();
        assert_eq!(r.coefficients(), [0.0; 4]);
        assert_eq!(r.residual_rms, 0.0);
    }

    #[test]
    fn constructed_trace_is_recovered() {
        let sig = toy_signatures(200);
        let truth = [2.0, -0.5, 0.0, 3.0];
        let y: Vec<f64> = (0..200)
            .map(|i| {
                (0..4).map(|k| truth[k] * sig.columns()[k][i]).sum::<f64>()
                    + if i < 100 { 0.7 } else { -0.1 }
            })
            .collect();
        let r = LinearFitter::new(&sig, true).unwrap().fit(&y, 0.0).unwrap();
        for (a, b) in r.coefficients().iter().zip(truth) {
            assert!((a - b).abs() < 1e-10);
        }
        let base = r.baseline.unwrap();
        assert_relative_eq!(base[0], 0.7, epsilon = 1e-10);
        assert_relative_eq!(base[1], -0.1, epsilon = 1e-10);
        assert!(r.residual_rms < 1e-12);
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let sig = toy_signatures(64);
        let f = LinearFitter::new(&sig, false).unwrap();
        assert!(matches!(
            f.fit(&[0.0; 63], 1.0),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn identity_fisher_gives_unit_sensitivity() {
        assert_eq!(sensitivities(&Matrix4::identity()).unwrap(), [1.0; 4]);
    }

    #[test]
    fn sensitivity_scales_with_sigma() {
        let sig = toy_signatures(100);
        let a = sensitivities(&fisher_information(&sig, 1.0).unwrap()).unwrap();
        let b = sensitivities(&fisher_information(&sig, 2.0).unwrap()).unwrap();
        for (x, y) in a.iter().zip(b) {
            assert_relative_eq!(2.0 * x, y, max_relative = 1e-12);
        }
    }

    #[test]
    fn duplicate_columns_are_degenerate() {
        let mut sig = toy_signatures(100);
        sig.s_by = sig.s_bx.clone();
        let f = fisher_information(&sig, 1.0).unwrap();
        assert!(matches!(sensitivities(&f), Err(Error::Degenerate { .. })));
        assert!(matches!(
            LinearFitter::new(&sig, false),
            Err(Error::Degenerate { .. })
        ));
    }

    #[test]
    fn dc_reference() {
        assert_relative_eq!(dc_sensitivity(2.0, 1.0, 4).unwrap(), 0.25);
        assert!(dc_sensitivity(0.0, 1.0, 4).is_err());
        assert_relative_eq!(per_root_hz(1.0, 0.04), 0.2);
    }
}

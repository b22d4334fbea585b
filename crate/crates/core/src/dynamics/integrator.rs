//! Dormand–Prince 5(4) with step-size control and quartic dense output.
//!
//! The integrator only knows about a state of six reals and a right-hand
//! side. Callers split time into smooth segments and call
//! [`Dopri5::integrate_segment`] once per segment, so no step ever crosses a
//! discontinuity.

use crate::error::{Error, Result};

pub type State = [f64; 6];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            rtol: 1e-9,
            atol: 1e-12,
        }
    }
}

impl Tolerance {
    pub fn new(rtol: f64, atol: f64) -> Result<Self> {
        if !(rtol > 0.0 && rtol.is_finite() && atol > 0.0 && atol.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "tolerances must be positive and finite (rtol {rtol}, atol {atol})"
            )));
        }
        Ok(Tolerance { rtol, atol })
    }

    /// Both tolerances scaled by `k`.
    pub fn scaled(self, k: f64) -> Self {
        Tolerance {
            rtol: self.rtol * k,
            atol: self.atol * k,
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const MAX_STEPS_PER_SEGMENT: usize = 10_000_000;

fn axpy(y: &State, terms: &[(f64, &State)]) -> State {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..6 {
            out[i] += c * k[i];
        }
    }
    out
}

/// Continuous extension over one accepted step.
struct Dense {
    t0: f64,
    h: f64,
    r: [State; 5],
}

impl Dense {
    fn eval(&self, t: f64) -> State {
        let s = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let s1 = 1.0 - s;
        let r = &self.r;
        std::array::from_fn(|i| {
            r[0][i] + s * (r[1][i] + s1 * (r[2][i] + s * (r[3][i] + s1 * r[4][i])))
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

#[derive(Clone, Debug)]
pub struct Dopri5 {
    pub tol: Tolerance,
    /// Smallest step accepted before giving up, relative to |t|.
    pub min_step_rel: f64,
    pub stats: Stats,
}

impl Dopri5 {
    pub fn new(tol: Tolerance) -> Self {
        Dopri5 {
            tol,
            min_step_rel: 1e-14,
            stats: Stats::default(),
        }
    }

    fn error_norm(&self, y0: &State, y1: &State, err: &State) -> f64 {
        let mut acc = 0.0;
        for i in 0..6 {
            let sc = self.tol.atol + self.tol.rtol * y0[i].abs().max(y1[i].abs());
            let e = err[i] / sc;
            acc += e * e;
        }
        (acc / 6.0).sqrt()
    }

    fn initial_step<F>(&mut self, f: &mut F, t0: f64, y0: &State, f0: &State, span: f64) -> f64
    where
        F: FnMut(f64, &State) -> State,
    {
        // Hairer & Wanner, II.4 starting step heuristic.
        let sc = |y: f64| self.tol.atol + self.tol.rtol * y.abs();
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..6 {
            d0 += (y0[i] / sc(y0[i])).powi(2);
            d1 += (f0[i] / sc(y0[i])).powi(2);
        }
        let (d0, d1) = ((d0 / 6.0).sqrt(), (d1 / 6.0).sqrt());
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let h0 = h0.min(span);
        let y1 = axpy(y0, &[(h0, f0)]);
        let f1 = f(t0 + h0, &y1);
        self.stats.evaluations += 1;
        let mut d2 = 0.0;
        for i in 0..6 {
            d2 += ((f1[i] - f0[i]) / sc(y0[i])).powi(2);
        }
        let d2 = (d2 / 6.0).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(span)
    }

    /// Integrates a smooth segment from `t0` to `t1`. `samples` must be
    /// sorted and lie in `[t0, t1]`; `emit` receives each sample time and
    /// the interpolated state. Returns the state at `t1`.
    ///
    /// The initial step is chosen afresh from the segment's own start state,
    /// so the result depends only on `(t0, t1, y0, f)`.
    pub fn integrate_segment<F, E>(
        &mut self,
        mut f: F,
        t0: f64,
        t1: f64,
        y0: State,
        samples: &[f64],
        mut emit: E,
    ) -> Result<State>
    where
        F: FnMut(f64, &State) -> State,
        E: FnMut(f64, &State),
    {
        if t1 <= t0 {
            for &ts in samples {
                emit(ts, &y0);
            }
            return Ok(y0);
        }
        let span = t1 - t0;
        let mut t = t0;
        let mut y = y0;
        let mut k1 = f(t, &y);
        self.stats.evaluations += 1;
        let mut h = self.initial_step(&mut f, t, &y, &k1, span);
        let mut next_sample = 0usize;
        while next_sample < samples.len() && samples[next_sample] <= t0 {
            emit(samples[next_sample], &y);
            next_sample += 1;
        }
        let mut steps = 0usize;
        loop {
            steps += 1;
            if steps > MAX_STEPS_PER_SEGMENT {
                return Err(Error::StepSizeUnderflow { t, h, state: y });
            }
            let remaining = t1 - t;
            let last = h >= remaining * (1.0 - 1e-12);
            if last {
                h = remaining;
            }
            let min_h = self.min_step_rel * t.abs().max(span);
            if h < min_h {
                return Err(Error::StepSizeUnderflow { t, h, state: y });
            }

            let k2 = f(t + C2 * h, &axpy(&y, &[(h * A21, &k1)]));
            let k3 = f(t + C3 * h, &axpy(&y, &[(h * A31, &k1), (h * A32, &k2)]));
            let k4 = f(
                t + C4 * h,
                &axpy(&y, &[(h * A41, &k1), (h * A42, &k2), (h * A43, &k3)]),
            );
            let k5 = f(
                t + C5 * h,
                &axpy(
                    &y,
                    &[
                        (h * A51, &k1),
                        (h * A52, &k2),
                        (h * A53, &k3),
                        (h * A54, &k4),
                    ],
                ),
            );
            let t_new = if last { t1 } else { t + h };
            let k6 = f(
                t_new,
                &axpy(
                    &y,
                    &[
                        (h * A61, &k1),
                        (h * A62, &k2),
                        (h * A63, &k3),
                        (h * A64, &k4),
                        (h * A65, &k5),
                    ],
                ),
            );
            let y_new = axpy(
                &y,
                &[
                    (h * A71, &k1),
                    (h * A73, &k3),
                    (h * A74, &k4),
                    (h * A75, &k5),
                    (h * A76, &k6),
                ],
            );
            let k7 = f(t_new, &y_new);
            self.stats.evaluations += 6;

            let mut err = [0.0; 6];
            for i in 0..6 {
                err[i] = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            }
            let en = self.error_norm(&y, &y_new, &err);
            if !en.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
                if h <= min_h * 2.0 {
                    return Err(Error::NonFinite { t });
                }
                h *= FAC_MIN;
                self.stats.rejected += 1;
                continue;
            }

            if en <= 1.0 {
                self.stats.accepted += 1;
                if next_sample < samples.len() && samples[next_sample] <= t_new {
                    let mut r = [[0.0; 6]; 5];
                    for i in 0..6 {
                        let dy = y_new[i] - y[i];
                        let bspl = h * k1[i] - dy;
                        r[0][i] = y[i];
                        r[1][i] = dy;
                        r[2][i] = bspl;
                        r[3][i] = dy - h * k7[i] - bspl;
                        r[4][i] = h
                            * (D1 * k1[i]
                                + D3 * k3[i]
                                + D4 * k4[i]
                                + D5 * k5[i]
                                + D6 * k6[i]
                                + D7 * k7[i]);
                    }
                    let dense = Dense { t0: t, h, r };
                    while next_sample < samples.len() && samples[next_sample] <= t_new {
                        let ts = samples[next_sample];
                        if last && ts >= t1 {
                            emit(ts, &y_new);
                        } else {
                            emit(ts, &dense.eval(ts));
                        }
                        next_sample += 1;
                    }
                }
                t = t_new;
                y = y_new;
                k1 = k7;
                if last {
                    break;
                }
                let fac = (SAFETY * en.max(1e-10).powf(-0.2)).clamp(FAC_MIN, FAC_MAX);
                h *= fac;
            } else {
                self.stats.rejected += 1;
                let fac = (SAFETY * en.powf(-0.2)).clamp(FAC_MIN, 1.0);
                h *= fac;
            }
        }
        // samples beyond t1 (rounding) get the end state
        while next_sample < samples.len() {
            emit(samples[next_sample], &y);
            next_sample += 1;
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic(_t: f64, y: &State) -> State {
        [y[1], -y[0], 0.0, 0.0, 0.0, 0.0]
    }

    #[test]
    fn harmonic_oscillator_matches_closed_form() {
        let mut ig = Dopri5::new(Tolerance::new(1e-11, 1e-13).unwrap());
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 * 0.1).collect();
        let mut max_err: f64 = 0.0;
        let y = ig
            .integrate_segment(
                harmonic,
                0.0,
                10.0,
                [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                &grid,
                |t, s| {
                    max_err = max_err.max((s[0] - t.cos()).abs());
                },
            )
            .unwrap();
        assert!((y[0] - 10f64.cos()).abs() < 1e-9);
        assert!((y[1] + 10f64.sin()).abs() < 1e-9);
        // dense output is accurate to well under the step error budget
        assert!(max_err < 1e-8, "{max_err}");
    }

    #[test]
    fn exponential_decay() {
        let mut ig = Dopri5::new(Tolerance::default());
        let y = ig
            .integrate_segment(
                |_t, y| {
                    let mut d = [0.0; 6];
                    for i in 0..6 {
                        d[i] = -(i as f64 + 1.0) * y[i];
                    }
                    d
                },
                0.0,
                1.0,
                [1.0; 6],
                &[],
                |_, _| {},
            )
            .unwrap();
        for (i, v) in y.iter().enumerate() {
            let exact = (-(i as f64 + 1.0)).exp();
            assert!(((v - exact) / exact).abs() < 1e-8);
        }
    }

    #[test]
    fn empty_segment_returns_input() {
        let mut ig = Dopri5::new(Tolerance::default());
        let y0 = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = ig
            .integrate_segment(harmonic, 1.0, 1.0, y0, &[], |_, _| {})
            .unwrap();
        assert_eq!(y, y0);
    }

    #[test]
    fn rejects_bad_tolerance() {
        assert!(Tolerance::new(0.0, 1e-12).is_err());
        assert!(Tolerance::new(1e-9, f64::NAN).is_err());
    }

    #[test]
    fn blow_up_is_reported() {
        let mut ig = Dopri5::new(Tolerance::default());
        let r = ig.integrate_segment(
            |_t, y| [y[0] * y[0], 0.0, 0.0, 0.0, 0.0, 0.0],
            0.0,
            2.0,
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            &[],
            |_, _| {},
        );
        assert!(r.is_err());
    }
}

//! Time-dependent applied field and rotation programs.

use std::f64::consts::TAU;

use crate::model::Vec3;

#[derive(Clone, Debug, PartialEq)]
pub enum Waveform {
    Constant {
        value: Vec3,
    },
    /// Zero before `t0`, `value` from `t0` on.
    Step {
        t0: f64,
        value: Vec3,
    },
    /// +amplitude for the first half of each period, −amplitude for the
    /// second. `phase` is a fraction of a period.
    Square {
        amplitude: f64,
        period: f64,
        phase: f64,
        axis: Vec3,
    },
    /// amplitude·sin(2π f t + phase)·axis, phase in radians.
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        phase: f64,
        axis: Vec3,
    },
}

impl Waveform {
    fn value(&self, t: f64, branch: f64) -> Vec3 {
        match *self {
            Waveform::Constant { value } => value,
            Waveform::Step { t0, value } => {
                if branch >= t0 {
                    value
                } else {
                    Vec3::zeros()
                }
            }
            Waveform::Square {
                amplitude,
                period,
                phase,
                axis,
            } => {
                let u = (branch / period + phase).rem_euclid(1.0);
                let sign = if u < 0.5 { 1.0 } else { -1.0 };
                axis * (sign * amplitude)
            }
            Waveform::Sinusoid {
                amplitude,
                frequency,
                phase,
                axis,
            } => axis * (amplitude * (TAU * frequency * t + phase).sin()),
        }
    }

    fn push_breakpoints(&self, t0: f64, t1: f64, out: &mut Vec<f64>) {
        match *self {
            Waveform::Step { t0: ts, .. } => {
                if ts > t0 && ts < t1 {
                    out.push(ts);
                }
            }
            Waveform::Square { period, phase, .. } => {
                // edges where t/period + phase is a multiple of 1/2
                let half = 0.5 * period;
                let offset = phase * period;
                let mut k = ((t0 + offset) / half).floor() as i64;
                loop {
                    let edge = k as f64 * half - offset;
                    if edge >= t1 {
                        break;
                    }
                    if edge > t0 {
                        out.push(edge);
                    }
                    k += 1;
                }
            }
            Waveform::Constant { .. } | Waveform::Sinusoid { .. } => {}
        }
    }

    pub fn is_finite(&self) -> bool {
        let v = |x: &Vec3| x.iter().all(|c| c.is_finite());
        match self {
            Waveform::Constant { value } => v(value),
            Waveform::Step { t0, value } => t0.is_finite() && v(value),
            Waveform::Square {
                amplitude,
                period,
                phase,
                axis,
            } => {
                amplitude.is_finite()
                    && period.is_finite()
                    && *period > 0.0
                    && phase.is_finite()
                    && v(axis)
            }
            Waveform::Sinusoid {
                amplitude,
                frequency,
                phase,
                axis,
            } => amplitude.is_finite() && frequency.is_finite() && phase.is_finite() && v(axis),
        }
    }
}

/// Relative time resolution for discontinuities.
const EDGE_SLACK: f64 = 1e-12;

/// A sum of waveform primitives.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Program(pub Vec<Waveform>);

impl Program {
    pub fn zero() -> Self {
        Program(Vec::new())
    }

    pub fn constant(value: Vec3) -> Self {
        Program(vec![Waveform::Constant { value }])
    }

    pub fn with(mut self, w: Waveform) -> Self {
        self.0.push(w);
        self
    }

    pub fn eval(&self, t: f64) -> Vec3 {
        self.eval_on(t, t)
    }

    /// Evaluates with piecewise-constant parts taken on the branch that
    /// contains `branch`. Integrators pass a point strictly inside the
    /// current segment so stages at a segment end never see the next branch.
    pub fn eval_on(&self, t: f64, branch: f64) -> Vec3 {
        self.0
            .iter()
            .fold(Vec3::zeros(), |acc, w| acc + w.value(t, branch))
    }

    pub fn breakpoints(&self, t0: f64, t1: f64, out: &mut Vec<f64>) {
        for w in &self.0 {
            w.push_breakpoints(t0, t1, out);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }
}

/// Applied magnetic field (tesla) and rotation rate (rad/s) programs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DriveTimeline {
    pub field: Program,
    pub rotation: Program,
}

impl DriveTimeline {
    pub fn none() -> Self {
        DriveTimeline::default()
    }

    pub fn dc(field: Vec3, rotation: Vec3) -> Self {
        let mut d = DriveTimeline::default();
        if field != Vec3::zeros() {
            d.field = Program::constant(field);
        }
        if rotation != Vec3::zeros() {
            d.rotation = Program::constant(rotation);
        }
        d
    }

    pub fn field_at(&self, t: f64) -> Vec3 {
        self.field.eval(t)
    }

    pub fn rotation_at(&self, t: f64) -> Vec3 {
        self.rotation.eval(t)
    }

    /// Sorted, de-duplicated discontinuity times inside (t0, t1). Edges
    /// within rounding distance of either end are dropped so that no
    /// segment is shorter than the time resolution.
    pub fn discontinuities(&self, t0: f64, t1: f64) -> Vec<f64> {
        let slack = EDGE_SLACK * t0.abs().max(t1.abs()).max(1.0);
        let mut out = Vec::new();
        self.field.breakpoints(t0, t1, &mut out);
        self.rotation.breakpoints(t0, t1, &mut out);
        out.retain(|e| *e > t0 + slack && *e < t1 - slack);
        out.sort_by(f64::total_cmp);
        out.dedup_by(|a, b| (*a - *b).abs() <= slack);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.field
            .0
            .iter()
            .chain(&self.rotation.0)
            .all(Waveform::is_finite)
    }

    pub fn scaled(&self, k: f64) -> Self {
        let scale = |p: &Program| {
            Program(
                p.0.iter()
                    .map(|w| match *w {
                        Waveform::Constant { value } => Waveform::Constant { value: value * k },
                        Waveform::Step { t0, value } => Waveform::Step {
                            t0,
                            value: value * k,
                        },
                        Waveform::Square {
                            amplitude,
                            period,
                            phase,
                            axis,
                        } => Waveform::Square {
                            amplitude: amplitude * k,
                            period,
                            phase,
                            axis,
                        },
                        Waveform::Sinusoid {
                            amplitude,
                            frequency,
                            phase,
                            axis,
                        } => Waveform::Sinusoid {
                            amplitude: amplitude * k,
                            frequency,
                            phase,
                            axis,
                        },
                    })
                    .collect(),
            )
        };
        DriveTimeline {
            field: scale(&self.field),
            rotation: scale(&self.rotation),
        }
    }
}

use nalgebra::Rotation3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::schedule::{PulseSchedule, PumpMode, Settle};
use crate::dynamics::{
    integrate_with, pulse_field, Conditions, DriveTimeline, PulseMode, SpinState, Trajectory,
};
use crate::error::{Error, Result};
use crate::model::{CellConfig, SlowingScope, Vec3};

/// One two-window measurement cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasuredCycle {
    pub index: usize,
    pub t_start: f64,
    /// Polarimeter output: Pᵉ_x plus measurement noise.
    pub samples: Vec<f64>,
    pub clean_x: Vec<f64>,
    pub clean_y: Vec<f64>,
    /// Sample indices where the windows start, and the total length.
    pub window_boundaries: [usize; 3],
    /// Pⁿ right after each of the two pulses.
    pub pn_set_points: [Vec3; 2],
    pub noise_sigma: f64,
    pub seed: Option<u64>,
}

impl MeasuredCycle {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub noise_sigma: f64,
    pub seed: Option<u64>,
    /// First cycle index that is sampled and reported.
    pub record_from: usize,
    /// Keep every sampled state of the recorded cycles.
    pub keep_trajectory: bool,
}

impl RunOptions {
    pub fn noiseless() -> Self {
        RunOptions::default()
    }

    pub fn last_cycles(total: usize, n: usize) -> Self {
        RunOptions {
            record_from: total.saturating_sub(n),
            ..RunOptions::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProtocolRun {
    pub cycles: Vec<MeasuredCycle>,
    pub trajectory: Option<Trajectory>,
    pub final_state: SpinState,
}

/// Start state used by protocol runs: alkali half-polarised along the pump
/// axis, noble gas fully polarised along z.
pub fn initial_state(cfg: &CellConfig) -> SpinState {
    SpinState::new(cfg.pump_axis * 0.5, Vec3::z(), 0.0)
}

fn check_inputs(cfg: &CellConfig, sched: &PulseSchedule, drive: &DriveTimeline) -> Result<()> {
    cfg.validate()?;
    sched.validate()?;
    if !drive.is_finite() {
        return Err(Error::InvalidConfig(
            "drive program has non-finite parameters".into(),
        ));
    }
    if let PumpMode::Finite = sched.pump_mode {
        // e-folds of the pump within one pump interval
        let slow = match (cfg.slowing, cfg.q_model) {
            (SlowingScope::PrecessionOnly, _) => 1.0,
            (SlowingScope::Full, crate::model::QModel::Constant(q)) => q,
            (SlowingScope::Full, crate::model::QModel::PolarisationDependent) => 6.0,
        };
        let efolds = (cfg.r_p_on + cfg.alkali_loss_rate()) * sched.pump_duration / slow;
        if efolds < 3.0 {
            return Err(Error::InvalidConfig(format!(
                "pump too weak to saturate: {efolds:.2} e-folds in the pump interval (need >= 3)"
            )));
        }
    }
    Ok(())
}

struct WindowOut<'a> {
    x: &'a mut Vec<f64>,
    y: &'a mut Vec<f64>,
    traj: Option<&'a mut Trajectory>,
}

/// Runs one window starting at `s.t`, opened by a pulse of `area`.
/// Returns the end state and Pⁿ right after the pulse.
fn run_window(
    s: &SpinState,
    area: f64,
    cfg: &CellConfig,
    sched: &PulseSchedule,
    drive: &DriveTimeline,
    grid: &[f64],
    mut out: Option<WindowOut<'_>>,
) -> Result<(SpinState, Vec3)> {
    let t_w = s.t;
    let mut state = *s;
    let mut pn_after = state.pn;

    let mut pump = Conditions::default();
    match sched.pump_mode {
        PumpMode::Impulse { p_sat } => {
            state.pe = cfg.pump_axis * p_sat;
            pump.hold_alkali = true;
        }
        PumpMode::Finite => pump.pump_rate = cfg.r_p_on,
    }

    let mut segments: Vec<(f64, Conditions)> = Vec::with_capacity(3);
    match sched.pulse_mode {
        PulseMode::Impulse => {
            state.pn = Rotation3::from_axis_angle(&Vec3::z_axis(), area) * state.pn;
            pn_after = state.pn;
        }
        PulseMode::Finite { duration } => {
            let mut c = pump;
            c.pulse_bz = pulse_field(area, duration, cfg);
            segments.push((t_w + duration, c));
        }
    }
    segments.push((t_w + sched.pump_duration, pump));
    segments.push((t_w + sched.tau, Conditions::free()));

    let abs_grid: Vec<f64> = match out {
        Some(_) => grid.iter().map(|g| t_w + g).collect(),
        None => Vec::new(),
    };
    let mut k = 0usize;
    for (i, (t_end, cond)) in segments.iter().enumerate() {
        if *t_end <= state.t {
            continue;
        }
        let last = i + 1 == segments.len();
        let start = k;
        if last {
            k = abs_grid.len();
        } else {
            while k < abs_grid.len() && abs_grid[k] < *t_end {
                k += 1;
            }
        }
        let samples = &abs_grid[start..k];
        state = match out.as_mut() {
            Some(o) => integrate_with(&state, *t_end, drive, cfg, cond, sched.tol, samples, |p| {
                o.x.push(p.pe.x);
                o.y.push(p.pe.y);
                if let Some(tr) = o.traj.as_mut() {
                    tr.samples.push(*p);
                }
            })?,
            None => integrate_with(&state, *t_end, drive, cfg, cond, sched.tol, &[], |_| {})?,
        };
        if matches!(sched.pulse_mode, PulseMode::Finite { .. }) && i == 0 {
            pn_after = state.pn;
        }
    }
    Ok((state, pn_after))
}

/// Runs `n_cycles` cycles from `start` and hands each recorded cycle to
/// `on_cycle` as soon as it is complete.
#[allow(clippy::too_many_arguments)]
pub fn run_cycles<F>(
    cfg: &CellConfig,
    sched: &PulseSchedule,
    drive: &DriveTimeline,
    start: &SpinState,
    n_cycles: usize,
    opts: &RunOptions,
    mut traj: Option<&mut Trajectory>,
    mut on_cycle: F,
) -> Result<SpinState>
where
    F: FnMut(MeasuredCycle) -> Result<()>,
{
    check_inputs(cfg, sched, drive)?;
    let sigma = opts.noise_sigma;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "noise sigma {sigma} must be finite and >= 0"
        )));
    }
    let mut rng = match (sigma > 0.0, opts.seed) {
        (true, None) => {
            return Err(Error::InvalidConfig(
                "a seed is required for noisy runs".into(),
            ));
        }
        (_, seed) => ChaCha8Rng::seed_from_u64(seed.unwrap_or(0)),
    };
    let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidConfig(format!("noise distribution: {e}")))?;

    let grid = sched.window_grid();
    let n_win = grid.len();
    let t0 = start.t;
    let mut state = *start;
    for c in 0..n_cycles {
        let record = c >= opts.record_from;
        let mut x = Vec::with_capacity(if record { 2 * n_win } else { 0 });
        let mut y = Vec::with_capacity(if record { 2 * n_win } else { 0 });
        let mut set_points = [Vec3::zeros(); 2];
        for (j, sign) in [-1.0, 1.0].into_iter().enumerate() {
            state.t = t0 + (2 * c + j) as f64 * sched.tau;
            let out = if record {
                Some(WindowOut {
                    x: &mut x,
                    y: &mut y,
                    traj: traj.as_deref_mut(),
                })
            } else {
                None
            };
            let (next, pn) = run_window(
                &state,
                sign * sched.pulse_area,
                cfg,
                sched,
                drive,
                &grid,
                out,
            )?;
            state = next;
            set_points[j] = pn;
        }
        if record {
            if x.len() != 2 * n_win {
                return Err(Error::GridMismatch(format!(
                    "cycle {c}: {} samples, expected {}",
                    x.len(),
                    2 * n_win
                )));
            }
            let samples = if sigma > 0.0 {
                x.iter().map(|v| v + normal.sample(&mut rng)).collect()
            } else {
                x.clone()
            };
            on_cycle(MeasuredCycle {
                index: c,
                t_start: t0 + 2.0 * c as f64 * sched.tau,
                samples,
                clean_x: x,
                clean_y: y,
                window_boundaries: [0, n_win, 2 * n_win],
                pn_set_points: set_points,
                noise_sigma: sigma,
                seed: opts.seed,
            })?;
        }
    }
    state.t = t0 + 2.0 * n_cycles as f64 * sched.tau;
    Ok(state)
}

/// Runs the protocol for `duration` (whole cycles only) and collects the
/// recorded cycles.
pub fn run_protocol(
    cfg: &CellConfig,
    sched: &PulseSchedule,
    drive: &DriveTimeline,
    duration: f64,
    start: &SpinState,
    opts: &RunOptions,
) -> Result<ProtocolRun> {
    let n_cycles = cycles_in(sched, duration)?;
    let mut cycles = Vec::new();
    let mut traj = opts.keep_trajectory.then(Trajectory::default);
    let final_state = run_cycles(
        cfg,
        sched,
        drive,
        start,
        n_cycles,
        opts,
        traj.as_mut(),
        |m| {
            cycles.push(m);
            Ok(())
        },
    )?;
    Ok(ProtocolRun {
        cycles,
        trajectory: traj,
        final_state,
    })
}

pub fn cycles_in(sched: &PulseSchedule, duration: f64) -> Result<usize> {
    let n = (duration / sched.cycle_duration() * (1.0 + 1e-12)).floor();
    if !(n >= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "duration {duration} s is shorter than one cycle ({} s)",
            sched.cycle_duration()
        )));
    }
    Ok(n as usize)
}

/// Time-averaged Pᵉ_z over a window with no transverse drive, once the
/// longitudinal alkali polarisation repeats from window to window.
pub fn mean_alkali_polarisation(cfg: &CellConfig, sched: &PulseSchedule) -> Result<f64> {
    check_inputs(cfg, sched, &DriveTimeline::none())?;
    const WARM_UP: usize = 20;
    const POINTS: usize = 4000;
    let mut state = initial_state(cfg);
    for k in 0..WARM_UP {
        state.t = k as f64 * sched.tau;
        state = run_window(&state, 0.0, cfg, sched, &DriveTimeline::none(), &[], None)?.0;
    }
    state.t = WARM_UP as f64 * sched.tau;
    let grid: Vec<f64> = (0..=POINTS)
        .map(|i| sched.tau * i as f64 / POINTS as f64)
        .collect();
    let (mut x, mut y, mut traj) = (Vec::new(), Vec::new(), Trajectory::default());
    run_window(
        &state,
        0.0,
        cfg,
        sched,
        &DriveTimeline::none(),
        &grid,
        Some(WindowOut {
            x: &mut x,
            y: &mut y,
            traj: Some(&mut traj),
        }),
    )?;
    let z: Vec<f64> = traj.samples.iter().map(|s| s.pe.z).collect();
    let trapezoid: f64 = z.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum::<f64>() / POINTS as f64;
    Ok(trapezoid)
}

/// Sets the alkali → noble exchange rate so that the noble polarisation
/// along z is stationary at unity under the schedule's pumping.
pub fn balance_spin_exchange(cfg: &mut CellConfig, sched: &PulseSchedule) -> Result<f64> {
    let mut mean = 0.0;
    // the mean depends weakly on R_se_en through the alkali loss rate
    for _ in 0..4 {
        mean = mean_alkali_polarisation(cfg, sched)?;
        cfg.balance_spin_exchange(mean);
    }
    Ok(mean)
}

/// RMS of the difference between two traces relative to the RMS of `b`.
pub fn relative_rms_change(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let norm: f64 = b.iter().map(|y| y * y).sum();
    if diff == 0.0 {
        0.0
    } else if norm == 0.0 {
        f64::INFINITY
    } else {
        (diff / norm).sqrt()
    }
}

/// Result of a settled run: the state at the final cycle boundary and the
/// last cycle.
#[derive(Clone, Debug)]
pub struct Settled {
    pub state: SpinState,
    pub last_cycle: MeasuredCycle,
    pub discrepancy: f64,
}

/// Runs for `settle.time` and checks that the last two cycles agree to
/// `settle.threshold` (relative RMS over both Pᵉ_x and Pᵉ_y).
pub fn settle(
    cfg: &CellConfig,
    sched: &PulseSchedule,
    drive: &DriveTimeline,
    settle: &Settle,
) -> Result<Settled> {
    settle_from(cfg, sched, drive, settle, &initial_state(cfg))
}

pub fn settle_from(
    cfg: &CellConfig,
    sched: &PulseSchedule,
    drive: &DriveTimeline,
    settle: &Settle,
    start: &SpinState,
) -> Result<Settled> {
    let n = cycles_in(sched, settle.time)?.max(2);
    let run = run_protocol(
        cfg,
        sched,
        drive,
        n as f64 * sched.cycle_duration(),
        start,
        &RunOptions::last_cycles(n, 2),
    )?;
    let [prev, last]: [MeasuredCycle; 2] = run
        .cycles
        .try_into()
        .map_err(|_| Error::GridMismatch("settle run did not return two cycles".into()))?;
    let joined =
        |m: &MeasuredCycle| -> Vec<f64> { m.clean_x.iter().chain(&m.clean_y).copied().collect() };
    let discrepancy = relative_rms_change(&joined(&prev), &joined(&last));
    log::debug!("settled after {n} cycles, discrepancy {discrepancy:.3e}");
    if discrepancy > settle.threshold {
        return Err(Error::NotConverged {
            discrepancy,
            threshold: settle.threshold,
            elapsed: n as f64 * sched.cycle_duration(),
        });
    }
    Ok(Settled {
        state: run.final_state,
        last_cycle: last,
        discrepancy,
    })
}

//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::estimation::{crosstalk, fit_trace, suppression_factor, LinearFitter};
use crate::io;
use crate::model::units;
use crate::protocol::{generate_signatures, SignatureSet};
use crate::scenarios::{self, balanced, TRACE_HEADER};

#[derive(Debug, Parser)]
#[command(
    name = "panco",
    version,
    about = "Pulsed alkali-noble comagnetometer simulator"
)]
pub struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Overrides {
    /// Override a config value by dotted path, e.g. `drive.B_x=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Noise seed; required whenever noise_sigma > 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for scans (results do not depend on it).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Integrator relative tolerance; the absolute tolerance keeps its ratio.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario by name or from a config file.
    Run {
        scenario: String,
        #[command(flatten)]
        overrides: Overrides,
        /// Run directory (default runs/<scenario>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a recorded Pe_x trace cycle by cycle.
    Fit {
        #[arg(long)]
        signatures: PathBuf,
        /// CSV with a `Pe_x` column holding whole cycles.
        #[arg(long)]
        trace: PathBuf,
        /// Channel CSV; a JSON summary is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Also fit a constant offset per window.
        #[arg(long)]
        baseline: bool,
    },
    /// Generate and export the signature set of a configuration.
    Signatures {
        #[arg(default_value = "custom")]
        config: String,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sensitivity against bias (the fig7 scenario with any cell).
    ScanBias {
        #[arg(default_value = "fig7")]
        config: String,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apparent rotation per field when the bias is off by `offset_nt`.
    Crosstalk {
        #[arg(default_value = "fig7")]
        config: String,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, allow_negative_numbers = true)]
        offset_nt: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    status: &'a str,
    kind: &'a str,
    message: String,
}

fn configure(name: &str, o: &Overrides) -> Result<RunConfig> {
    let mut c = RunConfig::resolve(name)?.with_overrides(&o.set)?;
    if let Some(s) = o.seed {
        c.seed = Some(s);
    }
    if let Some(w) = o.workers {
        if w == 0 {
            return Err(Error::Usage("--workers must be >= 1".into()));
        }
        c.workers = w;
    }
    if let Some(t) = o.tol {
        let ratio = c.schedule.atol / c.schedule.rtol;
        c.schedule.rtol = t;
        c.schedule.atol = t * ratio;
    }
    c.validate()?;
    Ok(c)
}

fn report_ok(dir: &Path, scenario: &str, metrics: Value) -> Result<()> {
    io::write_json(
        &dir.join("report.json"),
        &json!({ "status": "ok", "scenario": scenario, "metrics": metrics }),
    )
}

fn in_workers<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if workers == 0 {
        return f();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?
        .install(f)
}

/// Runs the configured scenario, writing every output into `dir`.
pub fn execute(c: &RunConfig, dir: &Path) -> Result<Value> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_json(&dir.join("config.json"), c)?;
    let metrics = in_workers(c.workers, || -> Result<Value> {
        match c.scenario.as_str() {
            "fig2" => {
                let p = c.fig2()?;
                let out = scenarios::scenario_fig2(&p)?;
                out.write(dir, &p.sched)?;
                Ok(serde_json::to_value(&out.summary)?)
            }
            "fig7" => {
                let scan = scenarios::scenario_fig7(&c.fig7()?)?;
                scenarios::write_fig7(&scan, dir)?;
                let failures: Vec<Value> = scan
                    .points
                    .iter()
                    .filter_map(|p| {
                        p.error
                            .as_ref()
                            .map(|e| json!({ "bias_nt": p.bias_nt, "error": e }))
                    })
                    .collect();
                Ok(json!({
                    "cw_best_bias_nt": scan.cw_best_bias_nt,
                    "cw_best_rotation_rad_s": scan.cw_best,
                    "serf_magnetic_t": scan.serf_magnetic,
                    "panco_best": scan.panco_best,
                    "rotation_ratio": scan.rotation_ratio(),
                    "magnetic_ratio": scan.magnetic_ratio(),
                    "samples_per_cycle": scan.samples_per_cycle,
                    "max_condition": scan.points.iter().filter_map(|p| p.condition).fold(0.0, f64::max),
                    "failures": failures,
                }))
            }
            "square_wave" => {
                let out = scenarios::scenario_square_wave(&c.square_wave()?)?;
                out.write(dir)?;
                Ok(serde_json::to_value(&out.summary)?)
            }
            "step_decomposition" => {
                let out = scenarios::scenario_step_decomposition(&c.step()?)?;
                out.write(dir)?;
                Ok(serde_json::to_value(&out.summary)?)
            }
            "wobble" => {
                let out = scenarios::scenario_wobble(&c.wobble()?)?;
                out.write(dir)?;
                Ok(serde_json::to_value(&out.summary)?)
            }
            "custom" => {
                let out = scenarios::scenario_custom(&c.custom()?)?;
                out.write(dir)?;
                Ok(serde_json::to_value(&out.summary)?)
            }
            other => Err(Error::Usage(format!("unknown scenario `{other}`"))),
        }
    })?;
    report_ok(dir, &c.scenario, metrics.clone())?;
    Ok(metrics)
}

fn cmd_crosstalk(c: &RunConfig, dir: &Path, offset_nt: f64) -> Result<Value> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_json(&dir.join("config.json"), c)?;
    let cell = c.cell_config()?;
    let cell = if c.cell.balance_spin_exchange {
        balanced(&cell, &c.pulse_schedule()?)?
    } else {
        cell
    };
    let sched = c.pulse_schedule()?;
    let sig = generate_signatures(&cell, &sched, &c.signature_options()?)?;
    sig.write(&dir.join("signatures.csv"))?;
    let sign = if cell.bias_z < 0.0 { -1.0 } else { 1.0 };
    let actual = cell.bias_z + sign * units::nt(offset_nt);
    let xt = crosstalk(&cell, &sched, &sig, actual, &c.crosstalk_options()?)?;
    let hz_per_t = xt.omega_x_hz_per_t().abs();
    let metrics = json!({
        "nominal_bias_nt": units::to_nt(cell.bias_z),
        "actual_bias_nt": units::to_nt(actual),
        "crosstalk_uhz_per_pt": xt,
        "crosstalk_x_hz_per_t": hz_per_t,
        "suppression": suppression_factor(hz_per_t, cell.noble.gamma).ok(),
    });
    report_ok(dir, "crosstalk", metrics.clone())?;
    Ok(metrics)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(parent) => std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e)),
        None => Ok(()),
    }
}

fn cmd_signatures(c: &RunConfig, out: &Path) -> Result<Value> {
    let sched = c.pulse_schedule()?;
    let cell = c.cell_config()?;
    let cell = if c.cell.balance_spin_exchange {
        balanced(&cell, &sched)?
    } else {
        cell
    };
    let sig = generate_signatures(&cell, &sched, &c.signature_options()?)?;
    ensure_parent(out)?;
    sig.write(out)?;
    Ok(json!({
        "samples": sig.len(),
        "condition": sig.condition_number(),
        "gram_eigenvalues": sig.gram_eigenvalues(),
        "meta": sig.meta,
    }))
}

#[derive(Serialize)]
struct ChannelStats {
    mean: f64,
    std: f64,
}

fn stats(v: &[f64]) -> ChannelStats {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    ChannelStats {
        mean,
        std: var.sqrt(),
    }
}

/// Fits a `Pe_x` trace with a stored signature set.
pub fn cmd_fit(signatures: &Path, trace: &Path, out: &Path, baseline: bool) -> Result<Value> {
    let empty = std::fs::metadata(trace)
        .map_err(|e| Error::io(trace, e))?
        .len()
        == 0;
    if empty {
        return Err(Error::Usage(format!("{}: trace is empty", trace.display())));
    }
    let sig = SignatureSet::read(signatures)?;
    let samples = io::read_column(trace, TRACE_HEADER[1])?;
    if samples.is_empty() {
        return Err(Error::Usage(format!(
            "{}: trace has no samples",
            trace.display()
        )));
    }
    let fitter = LinearFitter::new(&sig, baseline)?;
    let ch = fit_trace(&fitter, &samples, sig.meta.tau)?;
    ensure_parent(out)?;
    ch.write_csv(out)?;
    let display: Vec<Vec<f64>> = ch.rows().collect();
    let col = |k: usize| -> Vec<f64> { display.iter().map(|r| r[k]).collect() };
    let summary = json!({
        "cycles": ch.len(),
        "condition": fitter.condition,
        "B_x_pT": stats(&col(1)),
        "B_y_pT": stats(&col(2)),
        "Om_x_uHz": stats(&col(3)),
        "Om_y_uHz": stats(&col(4)),
        "residual_rms": stats(&col(5)),
    });
    io::write_json(&out.with_extension("json"), &summary)?;
    Ok(summary)
}

fn write_error(dir: &Path, e: &Error) {
    let report = ErrorReport {
        status: "error",
        kind: e.kind(),
        message: e.to_string(),
    };
    let written = std::fs::create_dir_all(dir)
        .map_err(|err| Error::io(dir, err))
        .and_then(|_| io::write_json(&dir.join("report.json"), &report));
    if let Err(w) = written {
        log::error!("could not write error report: {w}");
    }
}

fn default_dir(name: &str) -> PathBuf {
    let stem = Path::new(name)
        .file_stem()
        .map_or(name.into(), |s| s.to_string_lossy().into_owned());
    PathBuf::from("runs").join(stem)
}

/// Runs one parsed command. Returns the process exit code.
pub fn dispatch(cli: Cli) -> i32 {
    let (dir, result) = match cli.command {
        Command::Run {
            scenario,
            overrides,
            out,
        } => {
            let dir = out.unwrap_or_else(|| default_dir(&scenario));
            let r = configure(&scenario, &overrides).and_then(|c| execute(&c, &dir));
            (Some(dir), r)
        }
        Command::ScanBias {
            config,
            overrides,
            out,
        } => {
            let dir = out.unwrap_or_else(|| default_dir("scan-bias"));
            let r = configure(&config, &overrides).and_then(|mut c| {
                c.scenario = "fig7".into();
                execute(&c, &dir)
            });
            (Some(dir), r)
        }
        Command::Crosstalk {
            config,
            overrides,
            offset_nt,
            out,
        } => {
            let dir = out.unwrap_or_else(|| default_dir("crosstalk"));
            let r = configure(&config, &overrides)
                .and_then(|c| cmd_crosstalk(&c, &dir, offset_nt.unwrap_or(c.crosstalk.offset_nt)));
            (Some(dir), r)
        }
        Command::Signatures {
            config,
            overrides,
            out,
        } => (
            None,
            configure(&config, &overrides).and_then(|c| cmd_signatures(&c, &out)),
        ),
        Command::Fit {
            signatures,
            trace,
            out,
            baseline,
        } => (None, cmd_fit(&signatures, &trace, &out, baseline)),
    };
    match result {
        Ok(summary) => {
            use std::io::Write;
            let text = serde_json::to_string_pretty(&summary).unwrap_or_default();
            // A closed stdout (e.g. piped into head) is not a failure.
            let _ = writeln!(std::io::stdout(), "{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(d) = dir {
                write_error(&d, &e);
            }
            match e {
                Error::Usage(_) => 2,
                _ => 1,
            }
        }
    }
}

/// Entry point of the `panco` binary.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    dispatch(cli)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_run_with_overrides() {
        let cli = Cli::try_parse_from([
            "panco",
            "run",
            "fig2",
            "--set",
            "drive.B_x=0",
            "--seed",
            "3",
        ])
        .unwrap();
        match cli.command {
            Command::Run {
                scenario,
                overrides,
                ..
            } => {
                assert_eq!(scenario, "fig2");
                assert_eq!(overrides.set, vec!["drive.B_x=0"]);
                assert_eq!(overrides.seed, Some(3));
            }
            _ => panic!("wrong subcommand"),
        }
    }

    #[test]
    fn tol_flag_keeps_tolerance_ratio() {
        let o = Overrides {
            set: vec![],
            seed: None,
            workers: None,
            tol: Some(1e-8),
        };
        let c = configure("custom", &o).unwrap();
        assert_eq!(c.schedule.rtol, 1e-8);
        assert!((c.schedule.atol - 1e-13).abs() < 1e-25);
    }

    #[test]
    fn default_run_dir_uses_file_stem() {
        assert_eq!(default_dir("cfg/my_run.json"), PathBuf::from("runs/my_run"));
        assert_eq!(default_dir("fig7"), PathBuf::from("runs/fig7"));
    }
}

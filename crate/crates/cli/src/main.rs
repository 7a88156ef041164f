//! `schmidt-probe`: generate states, simulate measurement records, reconstruct, and run
//! round-trip and invariant suites.
//!
//! Exit codes: 0 success, 1 input or usage error, 2 solver or protocol failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde_json::{json, Map, Value};

use schmidt_probe::forward::{apply_noise, oracle_record, simulate_record};
use schmidt_probe::harness::{
    run_roundtrip, run_verify, CommandInfo, MethodChoice, RoundtripConfig, RunReport,
};
use schmidt_probe::io;
use schmidt_probe::reconstruction::{EquationSelection, NumericOptions};
use schmidt_probe::{random_ensemble, Error, PrimeDim};

#[derive(Parser)]
#[command(name = "schmidt-probe", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a random state and write it as JSON.
    Generate {
        #[arg(long)]
        p: usize,
        /// Real inner products.
        #[arg(long)]
        real: bool,
        #[arg(long, env = "SCHMIDT_PROBE_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the measurement record of a state.
    Simulate {
        #[arg(long)]
        state: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
        #[arg(long, env = "SCHMIDT_PROBE_SEED")]
        seed: Option<u64>,
        /// Use explicit vectors on the tensor-product space instead of the closed formula.
        #[arg(long)]
        oracle: bool,
        /// Dimension of the realized inaccessible-subsystem vectors (oracle only).
        #[arg(long)]
        ambient_dim: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover the state parameters from a measurement record.
    Reconstruct {
        #[arg(long)]
        meas: PathBuf,
        /// real-general, p2, p3 or complex-ls
        #[arg(long)]
        method: MethodChoice,
        /// Residual acceptance threshold for complex-ls.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 300)]
        max_iter: usize,
        #[arg(long, default_value_t = 7)]
        multistarts: usize,
        /// Use every overlap equation in complex-ls instead of the non-redundant subset.
        #[arg(long)]
        all_equations: bool,
        #[arg(long, env = "SCHMIDT_PROBE_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate, simulate, reconstruct and compare over many random trials.
    Roundtrip {
        #[arg(long)]
        p: usize,
        #[arg(long)]
        real: bool,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
        /// auto, real-general, p2, p3 or complex-ls
        #[arg(long, default_value_t = MethodChoice::Auto)]
        method: MethodChoice,
        #[arg(long, env = "SCHMIDT_PROBE_SEED")]
        seed: Option<u64>,
        /// Largest acceptable parameter error (defaults: 1e-8, 1e-6 for complex-ls, none with noise).
        #[arg(long)]
        gate: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suite on fresh random instances.
    Verify {
        #[arg(long)]
        p: usize,
        #[arg(long, env = "SCHMIDT_PROBE_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Input(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Solver(e.to_string())
        }
    }
}

type CmdResult = Result<(), Failure>;

fn prime(p: usize) -> Result<PrimeDim, Failure> {
    Ok(PrimeDim::new(p)?)
}

fn write(path: &Path, text: &str) -> CmdResult {
    std::fs::write(path, text)
        .map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))
}

fn command_info(name: &str, seed: Option<u64>, flags: Value) -> CommandInfo {
    let flags = match flags {
        Value::Object(m) => m,
        _ => Map::new(),
    };
    CommandInfo {
        name: name.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        flags,
    }
}

fn emit_report(report: &RunReport, out: Option<&Path>) -> CmdResult {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    match out {
        Some(path) => write(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn now() -> Option<u64> {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .ok()
        .map(|d| d.as_secs())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Generate { p, real, seed, out } => {
            let p = prime(p)?;
            let e = random_ensemble(p, real, seed.unwrap_or(0));
            write(&out, &io::state_to_json(&e))
        }
        Command::Simulate {
            state,
            noise_sigma,
            seed,
            oracle,
            ambient_dim,
            out,
        } => {
            if !noise_sigma.is_finite() || noise_sigma < 0.0 {
                return Err(Failure::Input("--noise-sigma must be non-negative".into()));
            }
            let e = io::read_state(&state)?;
            let n = e.p().get();
            let record = if oracle {
                let d = ambient_dim.unwrap_or(n);
                if d < n {
                    return Err(Failure::Input(format!("--ambient-dim must be at least {n}")));
                }
                oracle_record(&e, d)?
            } else {
                simulate_record(&e)?
            };
            let record = apply_noise(&record, noise_sigma, seed.unwrap_or(0));
            write(&out, &io::record_to_json(&record))
        }
        Command::Reconstruct {
            meas,
            method,
            tol,
            max_iter,
            multistarts,
            all_equations,
            seed,
            out,
        } => {
            if method == MethodChoice::Auto {
                return Err(Failure::Input(
                    "--method must be real-general, p2, p3 or complex-ls".into(),
                ));
            }
            let record = io::read_record(&meas)?;
            let opts = NumericOptions {
                max_iter,
                tol,
                multistarts,
                seed: seed.unwrap_or(0),
                equations: if all_equations {
                    EquationSelection::Full
                } else {
                    EquationSelection::Auto
                },
            };
            match method.run(&record, &opts) {
                Ok(res) => {
                    eprintln!(
                        "method {} residual {:e} measurements used {}",
                        res.method.as_str(),
                        res.residual,
                        res.measurements_used
                    );
                    write(&out, &io::reconstruction_to_json(&res))
                }
                Err(Error::SolverFailure {
                    residual,
                    best: Some(best),
                }) => {
                    write(&out, &io::reconstruction_to_json(&best))?;
                    Err(Failure::Solver(format!(
                        "solver did not converge (residual {residual:e}); best effort written"
                    )))
                }
                Err(e) => Err(e.into()),
            }
        }
        Command::Roundtrip {
            p,
            real,
            trials,
            noise_sigma,
            method,
            seed,
            gate,
            out,
        } => {
            let p = prime(p)?;
            if trials == 0 {
                return Err(Failure::Input("--trials must be at least 1".into()));
            }
            if !noise_sigma.is_finite() || noise_sigma < 0.0 {
                return Err(Failure::Input("--noise-sigma must be non-negative".into()));
            }
            let resolved = method.resolve(p, real);
            let incompatible = match resolved {
                MethodChoice::P2 => p.get() != 2,
                MethodChoice::P3 => p.get() != 3,
                MethodChoice::RealGeneral => p.get() == 2,
                _ => false,
            };
            if incompatible {
                return Err(Failure::Input(format!(
                    "method {resolved} cannot be used for p = {p}"
                )));
            }
            let seed_value = seed.unwrap_or(0);
            let mut cfg = RoundtripConfig {
                noise_sigma,
                method,
                ..RoundtripConfig::new(p, real, trials, seed_value)
            }
            .with_default_gate();
            if gate.is_some() {
                cfg.gate = gate;
            }
            let (trial_results, agg) = run_roundtrip(&cfg);
            let info = command_info(
                "roundtrip",
                Some(seed_value),
                json!({
                    "p": p.get(),
                    "real": real,
                    "trials": trials,
                    "noise_sigma": noise_sigma,
                    "method": resolved.as_str(),
                    "gate": cfg.gate,
                }),
            );
            let report = RunReport {
                command: info,
                timestamp: now(),
                trials: trial_results,
                aggregates: Some(agg.clone()),
                invariants: Vec::new(),
            };
            emit_report(&report, out.as_deref())?;
            eprintln!(
                "{} trials, {} failures, median error {}, max error {}",
                agg.trials,
                agg.failures,
                fmt_opt(agg.median_error),
                fmt_opt(agg.max_error)
            );
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Solver(format!("{} of {} trials failed", agg.failures, agg.trials)))
            }
        }
        Command::Verify { p, seed, out } => {
            let p = prime(p)?;
            let seed_value = seed.unwrap_or(0);
            let outcomes = run_verify(p, seed_value);
            for o in &outcomes {
                let tag = match (o.passed, o.informational) {
                    (_, true) => "INFO",
                    (true, false) => "PASS",
                    (false, false) => "FAIL",
                };
                eprintln!(
                    "{tag} {:<34} max deviation {:.3e} (tolerance {:.0e}){}",
                    o.name,
                    o.max_deviation,
                    o.tolerance,
                    o.detail.as_ref().map(|d| format!("  {d}")).unwrap_or_default()
                );
            }
            let report = RunReport {
                command: command_info("verify", Some(seed_value), json!({ "p": p.get() })),
                timestamp: now(),
                trials: Vec::new(),
                aggregates: None,
                invariants: outcomes,
            };
            emit_report(&report, out.as_deref())?;
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Solver("invariant suite failed".into()))
            }
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3e}")).unwrap_or_else(|| "n/a".into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

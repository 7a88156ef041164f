//! Round-trip trials and invariant suites, collected into a serializable run report.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::random_ensemble;
use crate::error::{Error, Result};
use crate::forward::{self, apply_noise, oracle_record, simulate_record, MeasurementRecord};
use crate::mub::{build_family, check_unbiasedness};
use crate::phase::{gauss_sum, PrimeDim};
use crate::reconstruction::{
    compute_n00, reconstruct_complex_numeric, reconstruct_p2, reconstruct_p3, reconstruct_real,
    solve_z_block, NumericOptions, ReconstructionResult,
};

/// Reconstruction method as chosen on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodChoice {
    /// `p2` for `p = 2`, `real-general` for real states, `complex-ls` otherwise.
    Auto,
    RealGeneral,
    P2,
    P3,
    ComplexLs,
}

impl MethodChoice {
    pub fn resolve(self, p: PrimeDim, real: bool) -> MethodChoice {
        match self {
            MethodChoice::Auto if p.get() == 2 => MethodChoice::P2,
            MethodChoice::Auto if real => MethodChoice::RealGeneral,
            MethodChoice::Auto => MethodChoice::ComplexLs,
            other => other,
        }
    }

    /// Runs the method on a record. `Auto` assumes a real state for odd `p`.
    pub fn run(self, r: &MeasurementRecord, opts: &NumericOptions) -> Result<ReconstructionResult> {
        match self.resolve(r.p, true) {
            MethodChoice::RealGeneral => reconstruct_real(r),
            MethodChoice::P2 => reconstruct_p2(r),
            MethodChoice::P3 => reconstruct_p3(r),
            MethodChoice::ComplexLs | MethodChoice::Auto => reconstruct_complex_numeric(r, opts),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MethodChoice::Auto => "auto",
            MethodChoice::RealGeneral => "real-general",
            MethodChoice::P2 => "p2",
            MethodChoice::P3 => "p3",
            MethodChoice::ComplexLs => "complex-ls",
        }
    }
}

impl fmt::Display for MethodChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "auto" => Ok(MethodChoice::Auto),
            "real-general" => Ok(MethodChoice::RealGeneral),
            "p2" => Ok(MethodChoice::P2),
            "p3" => Ok(MethodChoice::P3),
            "complex-ls" => Ok(MethodChoice::ComplexLs),
            _ => Err(format!(
                "unknown method {s:?} (expected auto, real-general, p2, p3 or complex-ls)"
            )),
        }
    }
}

/// Mixes a base seed with an index; distinct indices give unrelated streams.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandInfo {
    pub name: String,
    pub version: String,
    pub seed: Option<u64>,
    pub flags: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialStatus {
    Ok,
    /// Solved, but outside the error gate or flagged non-converged.
    Failed,
    /// The solver or simulator returned an error.
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub index: usize,
    pub seed: u64,
    pub status: TrialStatus,
    pub lambda_error: Option<f64>,
    pub x_error: Option<f64>,
    pub residual: Option<f64>,
    pub measurements_used: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl TrialResult {
    pub fn parameter_error(&self) -> Option<f64> {
        Some(self.lambda_error?.max(self.x_error?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub trials: usize,
    pub failures: usize,
    pub median_error: Option<f64>,
    pub max_error: Option<f64>,
    pub median_residual: Option<f64>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

impl Aggregates {
    pub fn from_trials(trials: &[TrialResult]) -> Self {
        let errors: Vec<f64> = trials.iter().filter_map(TrialResult::parameter_error).collect();
        let residuals: Vec<f64> = trials.iter().filter_map(|t| t.residual).collect();
        Self {
            trials: trials.len(),
            failures: trials.iter().filter(|t| t.status != TrialStatus::Ok).count(),
            max_error: errors.iter().cloned().reduce(f64::max),
            median_error: median(errors),
            median_residual: median(residuals),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantOutcome {
    pub name: String,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Reported for comparison only; does not affect the exit status.
    #[serde(default)]
    pub informational: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl InvariantOutcome {
    fn new(name: &str, max_deviation: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            max_deviation,
            tolerance,
            passed: max_deviation <= tolerance,
            informational: false,
            detail: None,
        }
    }

    fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = Some(d.into());
        self
    }

    fn informational(mut self) -> Self {
        self.informational = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: CommandInfo,
    /// Seconds since the Unix epoch; the only field that differs between identical runs.
    pub timestamp: Option<u64>,
    #[serde(default)]
    pub trials: Vec<TrialResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregates: Option<Aggregates>,
    #[serde(default)]
    pub invariants: Vec<InvariantOutcome>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.trials.iter().all(|t| t.status == TrialStatus::Ok)
            && self.invariants.iter().all(|i| i.passed || i.informational)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundtripConfig {
    pub p: PrimeDim,
    pub real: bool,
    pub trials: usize,
    pub noise_sigma: f64,
    pub method: MethodChoice,
    pub seed: u64,
    /// Largest acceptable parameter error; `None` makes the error informational.
    pub gate: Option<f64>,
    pub numeric: NumericOptions,
}

impl RoundtripConfig {
    pub fn new(p: PrimeDim, real: bool, trials: usize, seed: u64) -> Self {
        Self {
            p,
            real,
            trials,
            noise_sigma: 0.0,
            method: MethodChoice::Auto,
            seed,
            gate: None,
            numeric: NumericOptions::default(),
        }
        .with_default_gate()
    }

    /// Noiseless runs are gated at `1e-8`, or `1e-6` for the numerical solver; noisy runs
    /// only report.
    pub fn with_default_gate(mut self) -> Self {
        self.gate = if self.noise_sigma > 0.0 {
            None
        } else if self.method.resolve(self.p, self.real) == MethodChoice::ComplexLs {
            Some(1e-6)
        } else {
            Some(1e-8)
        };
        self
    }
}

fn run_trial(cfg: &RoundtripConfig, index: usize) -> TrialResult {
    let seed = derive_seed(cfg.seed, index as u64);
    let mut trial = TrialResult {
        index,
        seed,
        status: TrialStatus::Error,
        lambda_error: None,
        x_error: None,
        residual: None,
        measurements_used: None,
        message: None,
    };
    let e = random_ensemble(cfg.p, cfg.real, derive_seed(seed, 0));
    let record = match simulate_record(&e) {
        Ok(r) => apply_noise(&r, cfg.noise_sigma, derive_seed(seed, 1)),
        Err(err) => {
            trial.message = Some(err.to_string());
            return trial;
        }
    };
    let opts = NumericOptions {
        seed: derive_seed(seed, 2),
        ..cfg.numeric
    };
    let (result, message) = match cfg.method.resolve(cfg.p, cfg.real).run(&record, &opts) {
        Ok(res) => (res, None),
        Err(Error::SolverFailure { best: Some(best), residual }) => {
            (*best, Some(format!("solver did not converge (residual {residual:e})")))
        }
        Err(err) => {
            trial.message = Some(err.to_string());
            return trial;
        }
    };
    let (dl, dx) = result.parameters().max_error(&e.parameters());
    trial.lambda_error = Some(dl);
    trial.x_error = Some(dx);
    trial.residual = Some(result.residual);
    trial.measurements_used = Some(result.measurements_used);
    let within = cfg.gate.is_none_or(|g| dl.max(dx) <= g);
    trial.status = if message.is_none() && within {
        TrialStatus::Ok
    } else {
        TrialStatus::Failed
    };
    trial.message = message.or_else(|| {
        (!within).then(|| format!("parameter error {:e} above gate", dl.max(dx)))
    });
    trial
}

/// Generate, simulate, perturb, reconstruct and compare, for each trial. Trials run in
/// parallel; the output order is the trial index.
pub fn run_roundtrip(cfg: &RoundtripConfig) -> (Vec<TrialResult>, Aggregates) {
    let trials: Vec<TrialResult> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| run_trial(cfg, i))
        .collect();
    let agg = Aggregates::from_trials(&trials);
    (trials, agg)
}

/// Random instances per kind (real and complex Gram) used by the invariant suite.
pub const VERIFY_INSTANCES: usize = 10;

/// Invariant suite on fresh random instances. For `p = 2` the Gauss-sum, conjugation and
/// symmetry checks are vacuous, and the `N_00` independence check needs `p ≥ 5`.
pub fn run_verify(p: PrimeDim, seed: u64) -> Vec<InvariantOutcome> {
    let n = p.get();
    let family = build_family(p);
    let mut out = vec![
        InvariantOutcome::new("unitarity", family.max_unitarity_defect(), 1e-12),
        InvariantOutcome::new("unbiasedness", check_unbiasedness(&family), 1e-12)
            .detail(format!("{} bases", family.basis_count())),
    ];
    if n > 2 {
        let root = (n as f64).sqrt();
        let dev = (1..n as i64)
            .flat_map(|s| (0..n as i64).map(move |k| (s, k)))
            .map(|(s, k)| (gauss_sum(p, s, k).norm() - root).abs())
            .fold(0.0, f64::max);
        out.push(InvariantOutcome::new("gauss-sum-magnitude", dev, 1e-10));
    }

    let instances: Vec<_> = (0..VERIFY_INSTANCES as u64)
        .flat_map(|i| {
            [true, false].map(|real| random_ensemble(p, real, derive_seed(seed, 2 * i + real as u64)))
        })
        .collect();

    let mut sum_dev: f64 = 0.0;
    let mut imag_dev: f64 = 0.0;
    let mut conj_dev: f64 = 0.0;
    let mut sym_dev: f64 = 0.0;
    let mut printed_sym_dev: f64 = 0.0;
    let mut oracle_dev: f64 = 0.0;
    let mut n00_dev: f64 = 0.0;
    let mut failures = Vec::new();
    for e in &instances {
        let params = e.parameters();
        let table: Vec<Vec<num_complex::Complex64>> = (0..n)
            .map(|s| {
                (0..n)
                    .map(|k| forward::normalization_complex(p, &params, k, s))
                    .collect()
            })
            .collect();
        for row in &table {
            let total: f64 = row.iter().map(|z| z.re).sum();
            sum_dev = sum_dev.max((total - n as f64).abs());
            imag_dev = row.iter().map(|z| z.im.abs()).fold(imag_dev, f64::max);
        }
        let (formula, oracle) = match (simulate_record(e), oracle_record(e, n)) {
            (Ok(f), Ok(o)) => (f, o),
            (Err(err), _) | (_, Err(err)) => {
                failures.push(err.to_string());
                continue;
            }
        };
        oracle_dev = oracle_dev.max(formula.max_deviation(&oracle.a));
        // the p = 2 quadratic phase is not periodic mod 2, so the index pairing has no analogue
        if !e.is_real() || n == 2 {
            continue;
        }
        for s in 0..n {
            for k in 0..n {
                let (ms, mk) = ((n - s) % n, (n - k) % n);
                conj_dev = conj_dev.max((formula.get(ms, mk) - formula.get(s, k).conj()).norm());
                sym_dev = sym_dev.max((table[s][k].re - table[ms][mk].re).abs());
                let printed_s = (s + n - k) % n;
                printed_sym_dev =
                    printed_sym_dev.max((table[s][k].re - table[printed_s][mk].re).abs());
            }
        }
        if n >= 5 {
            let values: Vec<f64> = (1..=p.half())
                .filter_map(|s| {
                    let block = solve_z_block(&formula, s).ok()?;
                    compute_n00(&formula, &block).ok()
                })
                .collect();
            if values.len() < p.half() {
                failures.push("an s-block could not be solved".into());
            }
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if values.len() > 1 {
                n00_dev = n00_dev.max(hi - lo);
            }
        }
    }

    out.push(InvariantOutcome::new("normalization-sum", sum_dev, 1e-12));
    out.push(InvariantOutcome::new("normalization-imaginary-part", imag_dev, 1e-12));
    out.push(InvariantOutcome::new("conjugation-redundancy", conj_dev, 1e-12));
    out.push(InvariantOutcome::new("normalization-symmetry", sym_dev, 1e-12).detail("N_ks = N_{p-k, p-s}"));
    out.push(
        InvariantOutcome::new("normalization-symmetry-alt-index", printed_sym_dev, 1e-12)
            .detail("N_ks = N_{p-k, s-k}")
            .informational(),
    );
    let mut oracle = InvariantOutcome::new("oracle-equivalence", oracle_dev, 1e-10);
    if !failures.is_empty() {
        oracle.passed = false;
        oracle.detail = Some(failures.join("; "));
    }
    out.push(oracle);
    if n >= 5 {
        out.push(InvariantOutcome::new("n00-s-independence", n00_dev, 1e-9));
    }
    out
}

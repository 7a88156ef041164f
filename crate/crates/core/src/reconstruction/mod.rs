//! Recovery of `λ_l` and `λ_{l'l}` from a measurement record.
//!
//! * [`reconstruct_real`]: the quasilinear route for real inner products and odd `p`.
//! * [`reconstruct_p2`]: qubit ancilla with a complex inner product.
//! * [`reconstruct_p3`]: closed forms for `p = 3`, real inner products.
//! * [`reconstruct_complex_numeric`]: damped least squares on the overlap equations, any prime.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ensemble::ProtocolParameters;
use crate::forward::{self, MeasurementRecord, DEGENERATE_NORM};
use crate::phase::PrimeDim;

mod numeric;
mod p2;
mod p3;
mod real;

pub use numeric::{
    equation_jacobian, reconstruct_complex_numeric, EquationSelection, NumericOptions,
    OverlapEquation, Part,
};
pub use p2::reconstruct_p2;
pub use p3::{p3_z_closed_form, reconstruct_p3};
pub use real::{
    compute_n00, compute_y, invert_linear_system, reconstruct_real, solve_z_block, solve_z_zero,
    LinearInversion, NormalizationTable, ZBlock,
};

/// Weights below this make `x_{l'l} / √(λ_{l'} λ_l)` meaningless.
pub const LAMBDA_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    RealGeneral,
    P2Closed,
    P3Closed,
    ComplexNumeric,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::RealGeneral => "real-general",
            Method::P2Closed => "p2-closed",
            Method::P3Closed => "p3-closed",
            Method::ComplexNumeric => "complex-numeric",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub values: BTreeMap<String, f64>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl Diagnostics {
    pub(crate) fn set(&mut self, key: &str, value: f64) {
        self.values.insert(key.to_string(), value);
    }

    pub(crate) fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }
}

/// Recovered inner products `λ_{l'l}`, with entries flagged where a weight is too small.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerProducts {
    pub values: DMatrix<Complex64>,
    pub undefined: DMatrix<bool>,
}

impl InnerProducts {
    pub fn get(&self, i: usize, j: usize) -> Option<Complex64> {
        (!self.undefined[(i, j)]).then(|| self.values[(i, j)])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub p: PrimeDim,
    pub lambdas: Vec<f64>,
    pub inner: InnerProducts,
    pub x: DMatrix<Complex64>,
    /// Max `|a_ks(recovered) - a_ks(record)|` over the whole table.
    pub residual: f64,
    pub method: Method,
    /// Distinct real numbers read from the record (`a_00 = 1` is not a measurement).
    pub measurements_used: usize,
    pub diagnostics: Diagnostics,
}

impl ReconstructionResult {
    pub fn parameters(&self) -> ProtocolParameters {
        ProtocolParameters {
            lambdas: self.lambdas.clone(),
            x: self.x.clone(),
        }
    }
}

pub fn x_to_inner_products(lambdas: &[f64], x: &DMatrix<Complex64>) -> InnerProducts {
    let n = lambdas.len();
    let mut values = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let mut undefined = DMatrix::from_element(n, n, false);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                values[(i, j)] = Complex64::new(1.0, 0.0);
            } else if lambdas[i] > LAMBDA_THRESHOLD && lambdas[j] > LAMBDA_THRESHOLD {
                values[(i, j)] = x[(i, j)] / (lambdas[i] * lambdas[j]).sqrt();
            } else {
                undefined[(i, j)] = true;
            }
        }
    }
    InnerProducts { values, undefined }
}

/// Re-simulates the overlap table from recovered parameters and returns the largest deviation
/// from the record, with the number of entries skipped because the model projection vanished.
pub(crate) fn resimulation_residual(
    record: &MeasurementRecord,
    params: &ProtocolParameters,
) -> (f64, usize) {
    let p = record.p;
    let n = p.get();
    let n00 = forward::normalization(p, params, 0, 0);
    if n00 <= DEGENERATE_NORM {
        return (f64::MAX, n * n);
    }
    let y = params.y();
    let mut worst: f64 = (record.get(0, 0) - 1.0).norm();
    let mut skipped = 0;
    for s in 0..n {
        for k in 0..n {
            if s == 0 && k == 0 {
                continue;
            }
            let nks = forward::normalization(p, params, k, s);
            if nks <= DEGENERATE_NORM {
                skipped += 1;
                continue;
            }
            let model = forward::unnormalized_overlap(p, &y, k, s) / (n00 * nks).sqrt();
            worst = worst.max((model - record.get(s, k)).norm());
        }
    }
    (worst, skipped)
}

/// Assembles a result: inner products, residual by re-simulation, and the skipped-entry count.
pub(crate) fn finish(
    record: &MeasurementRecord,
    params: ProtocolParameters,
    method: Method,
    measurements_used: usize,
    mut diagnostics: Diagnostics,
) -> ReconstructionResult {
    let inner = x_to_inner_products(&params.lambdas, &params.x);
    let (residual, skipped) = resimulation_residual(record, &params);
    if skipped > 0 {
        diagnostics.set("residual_skipped_entries", skipped as f64);
        diagnostics.note(format!(
            "{skipped} entries skipped in the residual: recovered projection has zero norm"
        ));
    }
    ReconstructionResult {
        p: record.p,
        lambdas: params.lambdas,
        inner,
        x: params.x,
        residual,
        method,
        measurements_used,
        diagnostics,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Component {
    Re,
    Im,
}

/// Record accessor that remembers which real numbers a solver actually read.
pub(crate) struct ReadLog<'a> {
    record: &'a MeasurementRecord,
    seen: RefCell<BTreeSet<(usize, usize, Component)>>,
}

impl<'a> ReadLog<'a> {
    pub(crate) fn new(record: &'a MeasurementRecord) -> Self {
        Self {
            record,
            seen: RefCell::new(BTreeSet::new()),
        }
    }

    pub(crate) fn re(&self, s: usize, k: usize) -> f64 {
        self.seen.borrow_mut().insert((s, k, Component::Re));
        self.record.get(s, k).re
    }

    pub(crate) fn im(&self, s: usize, k: usize) -> f64 {
        self.seen.borrow_mut().insert((s, k, Component::Im));
        self.record.get(s, k).im
    }

    pub(crate) fn get(&self, s: usize, k: usize) -> Complex64 {
        Complex64::new(self.re(s, k), self.im(s, k))
    }

    pub(crate) fn count(&self) -> usize {
        self.seen
            .borrow()
            .iter()
            .filter(|(s, k, _)| !(*s == 0 && *k == 0))
            .count()
    }
}

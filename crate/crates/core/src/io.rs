//! JSON interchange for states, measurement records and reconstructions. Complex matrices are
//! stored as separate real and imaginary arrays of rows.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ensemble::SchmidtEnsemble;
use crate::error::{Error, Result};
use crate::forward::{MeasurementRecord, RecordSource};
use crate::phase::PrimeDim;
use crate::reconstruction::{Diagnostics, InnerProducts, Method, ReconstructionResult};

/// Largest `|G - G†|` entry a state file may carry.
pub const HERMITICITY_TOL: f64 = 1e-9;

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateFile {
    p: usize,
    real: bool,
    lambdas: Vec<f64>,
    gram_re: Rows,
    gram_im: Rows,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasurementFile {
    p: usize,
    a_re: Rows,
    a_im: Rows,
    noise_sigma: f64,
    seed: Option<u64>,
    source: RecordSource,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReconstructionFile {
    p: usize,
    method: Method,
    lambdas: Vec<f64>,
    inner_re: Rows,
    inner_im: Rows,
    undefined_mask: Vec<Vec<bool>>,
    x_re: Rows,
    x_im: Rows,
    residual: f64,
    measurements_used: usize,
    diagnostics: Diagnostics,
}

fn split(m: &DMatrix<Complex64>) -> (Rows, Rows) {
    let rows = |f: fn(&Complex64) -> f64| -> Rows {
        m.row_iter().map(|r| r.iter().map(f).collect()).collect()
    };
    (rows(|z| z.re), rows(|z| z.im))
}

fn check_rows<T>(rows: &[Vec<T>], n: usize, name: &str) -> Result<()> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidFile(format!("{name} must be a {n}x{n} array")));
    }
    Ok(())
}

fn check_finite(values: impl IntoIterator<Item = f64>, name: &str) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::InvalidFile(format!("{name} contains non-finite values")))
    }
}

fn join(re: &Rows, im: &Rows, n: usize, name: &str) -> Result<DMatrix<Complex64>> {
    check_rows(re, n, &format!("{name}_re"))?;
    check_rows(im, n, &format!("{name}_im"))?;
    check_finite(re.iter().chain(im).flatten().cloned(), name)?;
    Ok(DMatrix::from_fn(n, n, |i, j| Complex64::new(re[i][j], im[i][j])))
}

fn dim(p: usize) -> Result<PrimeDim> {
    PrimeDim::new(p)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn state_to_json(e: &SchmidtEnsemble) -> String {
    let (gram_re, gram_im) = split(e.gram());
    to_json(&StateFile {
        p: e.p().get(),
        real: e.is_real(),
        lambdas: e.lambdas().to_vec(),
        gram_re,
        gram_im,
    })
}

pub fn parse_state(text: &str) -> Result<SchmidtEnsemble> {
    let f: StateFile = serde_json::from_str(text)?;
    let p = dim(f.p)?;
    let n = p.get();
    if f.lambdas.len() != n {
        return Err(Error::InvalidFile(format!("lambdas must have {n} entries")));
    }
    check_finite(f.lambdas.iter().cloned(), "lambdas")?;
    let gram = join(&f.gram_re, &f.gram_im, n, "gram")?;
    let defect = (&gram - gram.adjoint())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if defect > HERMITICITY_TOL {
        return Err(Error::InvalidFile(format!(
            "gram is not Hermitian (defect {defect:e})"
        )));
    }
    if f.real && f.gram_im.iter().flatten().any(|v| v.abs() > HERMITICITY_TOL) {
        return Err(Error::InvalidFile(
            "real state has nonzero gram_im entries".into(),
        ));
    }
    SchmidtEnsemble::new(p, f.lambdas, gram)
}

pub fn record_to_json(r: &MeasurementRecord) -> String {
    let (a_re, a_im) = split(&r.a);
    to_json(&MeasurementFile {
        p: r.p.get(),
        a_re,
        a_im,
        noise_sigma: r.noise_sigma,
        seed: r.seed,
        source: r.source,
    })
}

pub fn parse_record(text: &str) -> Result<MeasurementRecord> {
    let f: MeasurementFile = serde_json::from_str(text)?;
    let p = dim(f.p)?;
    let a = join(&f.a_re, &f.a_im, p.get(), "a")?;
    if !f.noise_sigma.is_finite() || f.noise_sigma < 0.0 {
        return Err(Error::InvalidFile(
            "noise_sigma must be finite and non-negative".into(),
        ));
    }
    Ok(MeasurementRecord {
        p,
        a,
        noise_sigma: f.noise_sigma,
        seed: f.seed,
        source: f.source,
    })
}

pub fn reconstruction_to_json(res: &ReconstructionResult) -> String {
    let (x_re, x_im) = split(&res.x);
    let (inner_re, inner_im) = split(&res.inner.values);
    let undefined_mask = res
        .inner
        .undefined
        .row_iter()
        .map(|r| r.iter().cloned().collect())
        .collect();
    // JSON has no NaN or infinity; an unbounded residual is written as the largest double
    let residual = if res.residual.is_finite() { res.residual } else { f64::MAX };
    to_json(&ReconstructionFile {
        p: res.p.get(),
        method: res.method,
        lambdas: res.lambdas.clone(),
        inner_re,
        inner_im,
        undefined_mask,
        x_re,
        x_im,
        residual,
        measurements_used: res.measurements_used,
        diagnostics: res.diagnostics.clone(),
    })
}

pub fn parse_reconstruction(text: &str) -> Result<ReconstructionResult> {
    let f: ReconstructionFile = serde_json::from_str(text)?;
    let p = dim(f.p)?;
    let n = p.get();
    if f.lambdas.len() != n {
        return Err(Error::InvalidFile(format!("lambdas must have {n} entries")));
    }
    check_finite(f.lambdas.iter().cloned(), "lambdas")?;
    let x = join(&f.x_re, &f.x_im, n, "x")?;
    let values = join(&f.inner_re, &f.inner_im, n, "inner")?;
    check_rows(&f.undefined_mask, n, "undefined_mask")?;
    let undefined = DMatrix::from_fn(n, n, |i, j| f.undefined_mask[i][j]);
    Ok(ReconstructionResult {
        p,
        lambdas: f.lambdas,
        inner: InnerProducts { values, undefined },
        x,
        residual: f.residual,
        method: f.method,
        measurements_used: f.measurements_used,
        diagnostics: f.diagnostics,
    })
}

fn read(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

pub fn read_state(path: impl AsRef<Path>) -> Result<SchmidtEnsemble> {
    parse_state(&read(path.as_ref())?)
}

pub fn read_record(path: impl AsRef<Path>) -> Result<MeasurementRecord> {
    parse_record(&read(path.as_ref())?)
}

pub fn read_reconstruction(path: impl AsRef<Path>) -> Result<ReconstructionResult> {
    parse_reconstruction(&read(path.as_ref())?)
}

pub fn write_state(path: impl AsRef<Path>, e: &SchmidtEnsemble) -> Result<()> {
    Ok(std::fs::write(path, state_to_json(e))?)
}

pub fn write_record(path: impl AsRef<Path>, r: &MeasurementRecord) -> Result<()> {
    Ok(std::fs::write(path, record_to_json(r))?)
}

pub fn write_reconstruction(path: impl AsRef<Path>, res: &ReconstructionResult) -> Result<()> {
    Ok(std::fs::write(path, reconstruction_to_json(res))?)
}

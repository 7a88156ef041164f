//! Closed-form reconstruction for `p = 3` with real inner products.
//!
//! Only the `s = 1` row of the record is read: `a_j1 = α_j + iβ_j`, `j = 0, 1, 2`.

use num_complex::Complex64;

use super::{finish, Diagnostics, Method, ReadLog, ReconstructionResult};
use crate::ensemble::ProtocolParameters;
use crate::error::{Error, Result};
use crate::forward::MeasurementRecord;
use crate::phase;

const DENOMINATOR_TOL: f64 = 1e-12;
const SIGN_TOL: f64 = 1e-8;

fn require_p3(r: &MeasurementRecord) -> Result<()> {
    if r.p.get() == 3 {
        Ok(())
    } else {
        Err(Error::MethodMismatch {
            method: "p3",
            p: r.p.get() as u64,
        })
    }
}

/// `z_01, z_11, z_21` from the `s = 1` overlaps.
pub fn p3_z_closed_form(r: &MeasurementRecord) -> Result<[f64; 3]> {
    require_p3(r)?;
    z_closed_form(&ReadLog::new(r)).map(|(z, _, _)| z)
}

/// Null vector of the `l = 0, 1` rows of the imaginary-part system, as a cross product.
/// The closed form above equals this up to a factor that vanishes with `Re a_01`.
fn row_cross_product(log: &ReadLog<'_>) -> [f64; 3] {
    let p = log.record.p;
    let row = |l: usize| -> [f64; 3] {
        std::array::from_fn(|k| {
            (phase::amplitude(p, k, 1, l).conj().to_complex() * log.get(1, k)).im
        })
    };
    let (u, v) = (row(0), row(1));
    [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ]
}

fn z_closed_form(log: &ReadLog<'_>) -> Result<([f64; 3], f64, bool)> {
    let sqrt3 = 3f64.sqrt();
    let (a0, a1, a2) = (log.re(1, 0), log.re(1, 1), log.re(1, 2));
    let (b1, b2) = (log.im(1, 1), log.im(1, 2));

    let t0 = a1 * a2 - 3.0 * b1 * b2;
    let t1 = a0 * (a2 - sqrt3 * b2);
    let t2 = a0 * (a1 - sqrt3 * b1);
    let denom = (t0 * t0 + a0 * a0 * ((a1 - sqrt3 * b1).powi(2) + (a2 - sqrt3 * b2).powi(2))).sqrt();
    let (t, norm, fallback) = if denom >= DENOMINATOR_TOL {
        ([t0, t1, t2], denom, false)
    } else {
        let c = row_cross_product(log);
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < DENOMINATOR_TOL {
            return Err(Error::DegenerateSystem(format!(
                "closed-form denominator vanishes ({denom:e})"
            )));
        }
        (c, norm, true)
    };
    let mut z = t.map(|t| sqrt3 * t / norm);
    // the formulas fix z up to a common sign; norms are non-negative
    if z.iter().sum::<f64>() < 0.0 {
        z = z.map(|v| -v);
    }
    let tol = SIGN_TOL * log.record.gate_scale();
    let min = z.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -tol {
        return Err(Error::InconsistentRecord(format!(
            "closed-form norms have mixed signs (min {min:e})"
        )));
    }
    Ok((z.map(|v| v.max(0.0)), denom, fallback))
}

pub fn reconstruct_p3(r: &MeasurementRecord) -> Result<ReconstructionResult> {
    require_p3(r)?;
    let log = ReadLog::new(r);
    let sqrt3 = 3f64.sqrt();
    let ([z0, z1, z2], denom, fallback) = z_closed_form(&log)?;

    let (a1, a2) = (log.re(1, 1), log.re(1, 2));
    let (b0, b1, b2) = (log.im(1, 0), log.im(1, 1), log.im(1, 2));
    // bracket = 2√3·√N₀₀
    let bracket = 2.0 * b0 * z0 + (sqrt3 * a1 - b1) * z1 + (sqrt3 * a2 - b2) * z2;
    let n00 = bracket * bracket / 12.0;

    let w = Complex64::from_polar(1.0, std::f64::consts::TAU / 3.0);
    let w2 = w * w;
    let za = [log.get(1, 0) * z0, log.get(1, 1) * z1, log.get(1, 2) * z2];
    let root = n00.sqrt();
    let y0 = root * (za[0] + za[1] + za[2]).re / 3.0;
    let y1 = root * (w2 * za[0] + za[1] + w * za[2]).re / 3.0;
    let y2 = root * (w2 * za[0] + w * za[1] + za[2]).re / 3.0;

    let (n01, n11, n21) = (z0 * z0, z1 * z1, z2 * z2);
    let n10 = (3.0 - n00) / 2.0;

    let lambdas = vec![
        y0 + (n01 - n00) / 3.0,
        y1 + (n21 - n00) / 3.0,
        y2 + (n11 - n00) / 3.0,
    ];
    let x01 = (n00 + n11 - n01 - n21) / 6.0;
    let x02 = (n00 + n21 - n01 - n11) / 6.0;
    let x12 = (n00 + n01 - n11 - n21) / 6.0;
    let mut x = nalgebra::DMatrix::from_element(3, 3, Complex64::new(0.0, 0.0));
    for (i, j, v) in [(0, 1, x01), (0, 2, x02), (1, 2, x12)] {
        x[(i, j)] = Complex64::new(v, 0.0);
        x[(j, i)] = Complex64::new(v, 0.0);
    }

    let mut diag = Diagnostics {
        converged: true,
        ..Default::default()
    };
    diag.set("denominator", denom);
    if fallback {
        diag.note("closed-form denominator vanishes (Re a_01 = 0); norms taken from the row cross product");
    }
    diag.set("n00", n00);
    diag.set("n10", n10);
    diag.set("z01", z0);
    diag.set("z11", z1);
    diag.set("z21", z2);
    let used = log.count();
    Ok(finish(
        r,
        ProtocolParameters { lambdas, x },
        Method::P3Closed,
        used,
        diag,
    ))
}

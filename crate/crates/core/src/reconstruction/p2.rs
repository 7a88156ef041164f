//! Qubit ancilla (`p = 2`) with a complex inner product `λ_01`.
//!
//! Unknowns are `λ_0, λ_1` and `x_01 = x_R + i·x_I`. With `D = diag(1, -i)` the setting
//! `s = 1, k = 1` applies the phases `(1, i)`, and its overlap `α + iβ` satisfies
//!
//! ```text
//! √((1+2x_R)(1-2x_I))·α = λ_0 + x_R - x_I
//! √((1+2x_R)(1-2x_I))·β = λ_1 + x_R - x_I
//! ```
//!
//! while the imaginary part `β_0` of the `s = 0, k = 1` overlap gives `√(1-4x_R²)·β_0 = -2x_I`.
//! With `λ_0 + λ_1 = 1` the last equation eliminates `x_I`, the sum of the first two leaves one
//! equation in `x_R` alone, and its root is bracketed on `(-1/2, 1/2)` and refined by bisection.
//! Where several roots exist the physically admissible one (`λ ≥ 0`, `|x_01|² ≤ λ_0 λ_1`) is kept.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{finish, Diagnostics, Method, ReadLog, ReconstructionResult};
use crate::ensemble::ProtocolParameters;
use crate::error::{Error, Result};
use crate::forward::MeasurementRecord;

const GRID_POINTS: usize = 4000;
const EDGE: f64 = 1e-12;
const MAX_BISECTIONS: usize = 200;

struct Reduced {
    alpha: f64,
    beta: f64,
    beta0: f64,
}

struct Candidate {
    xr: f64,
    xi: f64,
    l0: f64,
    l1: f64,
}

impl Reduced {
    fn x_imag(&self, xr: f64) -> f64 {
        -self.beta0 * (1.0 - 4.0 * xr * xr).max(0.0).sqrt() / 2.0
    }

    fn residual(&self, xr: f64) -> f64 {
        let u = 1.0 + 2.0 * xr;
        let v = 1.0 - 2.0 * self.x_imag(xr);
        let uv = u * v;
        if uv < 0.0 {
            return f64::NAN;
        }
        u + v - 1.0 - uv.sqrt() * (self.alpha + self.beta)
    }

    fn candidate(&self, xr: f64) -> Candidate {
        let xi = self.x_imag(xr);
        let m = ((1.0 + 2.0 * xr) * (1.0 - 2.0 * xi)).max(0.0).sqrt();
        Candidate {
            xr,
            xi,
            l0: m * self.alpha - xr + xi,
            l1: m * self.beta - xr + xi,
        }
    }
}

impl Candidate {
    fn infeasibility(&self) -> f64 {
        (-self.l0).max(0.0)
            + (-self.l1).max(0.0)
            + (self.xr * self.xr + self.xi * self.xi - self.l0.max(0.0) * self.l1.max(0.0)).max(0.0)
    }
}

fn bisect(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, steps: &mut usize) -> f64 {
    let mut flo = f(lo);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        *steps += 1;
        let fmid = f(mid);
        if fmid == 0.0 {
            return mid;
        }
        if (fmid < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn reconstruct_p2(r: &MeasurementRecord) -> Result<ReconstructionResult> {
    if r.p.get() != 2 {
        return Err(Error::MethodMismatch {
            method: "p2",
            p: r.p.get() as u64,
        });
    }
    let log = ReadLog::new(r);
    let reduced = Reduced {
        alpha: log.re(1, 1),
        beta: log.im(1, 1),
        beta0: log.im(0, 1),
    };
    let f = |xr: f64| reduced.residual(xr);

    let lo = -0.5 + EDGE;
    let hi = 0.5 - EDGE;
    let grid: Vec<f64> = (0..=GRID_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / GRID_POINTS as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();

    let mut steps = 0;
    let mut roots = Vec::new();
    for i in 0..GRID_POINTS {
        let (fa, fb) = (values[i], values[i + 1]);
        if fa.is_nan() || fb.is_nan() {
            continue;
        }
        if fa == 0.0 {
            roots.push(grid[i]);
        } else if (fa < 0.0) != (fb < 0.0) && fb != 0.0 {
            roots.push(bisect(&f, grid[i], grid[i + 1], &mut steps));
        }
    }
    if values[GRID_POINTS] == 0.0 {
        roots.push(grid[GRID_POINTS]);
    }
    if roots.is_empty() {
        return Err(Error::DomainViolation(
            "no solution with |x_R| < 1/2".into(),
        ));
    }

    let candidates: Vec<Candidate> = roots.iter().map(|&xr| reduced.candidate(xr)).collect();
    let feasible = candidates.iter().filter(|c| c.infeasibility() <= 1e-9).count();
    let best = candidates
        .iter()
        .min_by(|a, b| a.infeasibility().total_cmp(&b.infeasibility()))
        .expect("at least one root");

    let mut diag = Diagnostics {
        converged: true,
        iterations: Some(steps),
        ..Default::default()
    };
    diag.set("roots_found", roots.len() as f64);
    diag.set("feasible_roots", feasible as f64);
    diag.set("infeasibility", best.infeasibility());
    if feasible == 0 {
        diag.note("no root satisfies λ ≥ 0 and |x_01|² ≤ λ_0λ_1; least infeasible root kept");
    } else if feasible > 1 {
        diag.note("several admissible roots; least infeasible root kept");
    }

    let x01 = Complex64::new(best.xr, best.xi);
    let mut x = DMatrix::from_element(2, 2, Complex64::new(0.0, 0.0));
    x[(0, 1)] = x01;
    x[(1, 0)] = x01.conj();
    let params = ProtocolParameters {
        lambdas: vec![best.l0, best.l1],
        x,
    };
    let used = log.count();
    Ok(finish(r, params, Method::P2Closed, used, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{random_ensemble, SchmidtEnsemble};
    use crate::forward::simulate_record;
    use crate::phase::PrimeDim;

    fn qubit(l0: f64, overlap: Complex64) -> SchmidtEnsemble {
        let mut g = DMatrix::identity(2, 2);
        g[(0, 1)] = overlap;
        g[(1, 0)] = overlap.conj();
        SchmidtEnsemble::new(PrimeDim::new(2).unwrap(), vec![l0, 1.0 - l0], g).unwrap()
    }

    #[test]
    fn orthogonal_uniform() {
        let r = simulate_record(&qubit(0.5, Complex64::new(0.0, 0.0))).unwrap();
        let res = reconstruct_p2(&r).unwrap();
        assert!((res.lambdas[0] - 0.5).abs() < 1e-12);
        assert!(res.x[(0, 1)].norm() < 1e-12);
        assert_eq!(res.measurements_used, 3);
    }

    #[test]
    fn complex_overlap_round_trip() {
        let e = qubit(0.7, Complex64::new(0.5, 0.2));
        let r = simulate_record(&e).unwrap();
        let res = reconstruct_p2(&r).unwrap();
        let g = 0.21f64.sqrt();
        assert!((res.x[(0, 1)].re - g * 0.5).abs() < 1e-9);
        assert!((res.x[(0, 1)].im - g * 0.2).abs() < 1e-9);
        assert!((res.inner.get(0, 1).unwrap() - Complex64::new(0.5, 0.2)).norm() < 1e-9);
        assert!((res.lambdas[0] - 0.7).abs() < 1e-9);
        assert!(res.residual < 1e-9);
    }

    #[test]
    fn real_overlap_gives_zero_imaginary_part() {
        let e = qubit(0.35, Complex64::new(-0.6, 0.0));
        let r = simulate_record(&e).unwrap();
        assert_eq!(r.get(0, 1).im, 0.0);
        let res = reconstruct_p2(&r).unwrap();
        assert_eq!(res.x[(0, 1)].im, 0.0);
    }

    #[test]
    fn random_round_trips() {
        let p = PrimeDim::new(2).unwrap();
        for seed in 0..200 {
            let e = random_ensemble(p, false, seed);
            if e.gram()[(0, 1)].norm() > 0.9 {
                continue;
            }
            let r = simulate_record(&e).unwrap();
            let res = reconstruct_p2(&r).unwrap();
            let (dl, dx) = res.parameters().max_error(&e.parameters());
            assert!(dl < 1e-8 && dx < 1e-8, "seed={seed} dl={dl:e} dx={dx:e}");
        }
    }

    #[test]
    fn wrong_dimension() {
        let r = simulate_record(&SchmidtEnsemble::uniform_orthogonal(PrimeDim::new(3).unwrap()))
            .unwrap();
        assert!(matches!(reconstruct_p2(&r), Err(Error::MethodMismatch { .. })));
    }

    #[test]
    fn impossible_record_is_a_domain_violation() {
        let mut r = simulate_record(&qubit(0.5, Complex64::new(0.0, 0.0))).unwrap();
        // α + β far too large for any |x_R| < 1/2
        r.a[(1, 1)] = Complex64::new(5.0, 5.0);
        assert!(matches!(reconstruct_p2(&r), Err(Error::DomainViolation(_))));
    }
}

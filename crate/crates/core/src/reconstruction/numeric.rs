//! Damped least squares directly on the overlap equations, for any prime and complex inner
//! products.
//!
//! Unknowns are packed as `[λ_0 .. λ_{p-1}, Re x_01, Im x_01, Re x_02, Im x_02, ..]` with the
//! pairs `a < b` in row-major order, `p²` reals in total.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{finish, Diagnostics, Method, ReadLog, ReconstructionResult};
use crate::ensemble::{random_ensemble, ProtocolParameters, SchmidtEnsemble};
use crate::error::{Error, Result};
use crate::forward::{MeasurementRecord, DEGENERATE_NORM};
use crate::linalg::{numerical_rank, sorted_svd};
use crate::phase::{self, PrimeDim};

const DIFF_STEP: f64 = 1e-7;
const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Part {
    Re,
    Im,
}

/// One real equation `part(a_ks(model)) = part(a_ks(record))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapEquation {
    pub s: usize,
    pub k: usize,
    pub part: Part,
}

/// Which overlap equations enter the fit. Normalization is always appended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquationSelection {
    /// `p² - 1` overlap equations: complete `s = 1..(p-1)/2` rows and `k = 1..(p-1)/2` of the
    /// `s = 0` row. For `p = 2`, `a_11` and `Im a_01`.
    NonRedundant,
    /// Real and imaginary parts of every `a_ks` except `a_00`.
    Full,
    /// `NonRedundant` for `p ≤ 3`, where it has full rank for complex inner products, and
    /// `Full` otherwise.
    #[default]
    Auto,
}

impl EquationSelection {
    pub fn equations(self, p: PrimeDim) -> Vec<OverlapEquation> {
        let n = p.get();
        let both = |s, k| {
            [Part::Re, Part::Im]
                .into_iter()
                .map(move |part| OverlapEquation { s, k, part })
        };
        match self {
            EquationSelection::Auto if n <= 3 => EquationSelection::NonRedundant.equations(p),
            EquationSelection::Auto | EquationSelection::Full => (0..n)
                .flat_map(|s| (0..n).map(move |k| (s, k)))
                .filter(|&sk| sk != (0, 0))
                .flat_map(|(s, k)| both(s, k))
                .collect(),
            EquationSelection::NonRedundant if n == 2 => {
                let mut eqs: Vec<_> = both(1, 1).collect();
                eqs.push(OverlapEquation { s: 0, k: 1, part: Part::Im });
                eqs
            }
            EquationSelection::NonRedundant => {
                let h = p.half();
                let mut eqs: Vec<_> = (1..=h)
                    .flat_map(|s| (0..n).flat_map(move |k| both(s, k)))
                    .collect();
                eqs.extend((1..=h).flat_map(|k| both(0, k)));
                eqs
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericOptions {
    pub max_iter: usize,
    /// Acceptance threshold on the re-simulation residual, widened for noisy records.
    pub tol: f64,
    /// Random starting points in addition to the uniform orthogonal one.
    pub multistarts: usize,
    pub seed: u64,
    pub equations: EquationSelection,
}

impl Default for NumericOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-8,
            multistarts: 7,
            seed: 0,
            equations: EquationSelection::Auto,
        }
    }
}

/// Overlap model with the amplitude phases tabulated once.
struct Model {
    p: usize,
    /// `amp[s·p + k][l] = ω^{-2⁻¹s·l² - k·l}`
    amp: Vec<Vec<Complex64>>,
    equations: Vec<OverlapEquation>,
}

impl Model {
    fn new(p: PrimeDim, equations: Vec<OverlapEquation>) -> Self {
        let n = p.get();
        let amp = (0..n * n)
            .map(|sk| {
                let (s, k) = (sk / n, sk % n);
                (0..n)
                    .map(|l| phase::amplitude(p, k, s, l).to_complex())
                    .collect()
            })
            .collect();
        Self { p: n, amp, equations }
    }

    fn unknowns(&self) -> usize {
        self.p * self.p
    }

    fn unpack(&self, theta: &[f64]) -> ProtocolParameters {
        let n = self.p;
        let mut x = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        let mut i = n;
        for a in 0..n {
            for b in a + 1..n {
                let v = Complex64::new(theta[i], theta[i + 1]);
                x[(a, b)] = v;
                x[(b, a)] = v.conj();
                i += 2;
            }
        }
        ProtocolParameters {
            lambdas: theta[..n].to_vec(),
            x,
        }
    }

    fn pack(&self, params: &ProtocolParameters) -> Vec<f64> {
        let n = self.p;
        let mut theta = params.lambdas.clone();
        for a in 0..n {
            for b in a + 1..n {
                theta.push(params.x[(a, b)].re);
                theta.push(params.x[(a, b)].im);
            }
        }
        theta
    }

    fn norm(&self, params: &ProtocolParameters, s: usize, k: usize) -> f64 {
        let c = &self.amp[s * self.p + k];
        let mut off = 0.0;
        for a in 0..self.p {
            for b in a + 1..self.p {
                off += (c[a].conj() * c[b] * params.x[(a, b)]).re;
            }
        }
        params.lambdas.iter().sum::<f64>() + 2.0 * off
    }

    fn overlap(&self, params: &ProtocolParameters, y: &[Complex64], n00: f64, s: usize, k: usize) -> Complex64 {
        let c = &self.amp[s * self.p + k];
        let num: Complex64 = c.iter().zip(y).map(|(c, y)| c * y).sum();
        let nks = self.norm(params, s, k).max(DEGENERATE_NORM);
        num / (n00 * nks).sqrt()
    }

    fn residuals(&self, theta: &[f64], target: &[f64]) -> DVector<f64> {
        let params = self.unpack(theta);
        let y = params.y();
        let n00 = self.norm(&params, 0, 0).max(DEGENERATE_NORM);
        let mut r = DVector::zeros(self.equations.len() + 1);
        for (i, eq) in self.equations.iter().enumerate() {
            let a = self.overlap(&params, &y, n00, eq.s, eq.k);
            let v = match eq.part {
                Part::Re => a.re,
                Part::Im => a.im,
            };
            r[i] = v - target[i];
        }
        r[self.equations.len()] = params.lambdas.iter().sum::<f64>() - 1.0;
        r
    }

    fn jacobian(&self, theta: &[f64], target: &[f64]) -> DMatrix<f64> {
        let m = self.equations.len() + 1;
        let mut j = DMatrix::zeros(m, theta.len());
        let mut t = theta.to_vec();
        for c in 0..theta.len() {
            let h = DIFF_STEP * theta[c].abs().max(1.0);
            t[c] = theta[c] + h;
            let plus = self.residuals(&t, target);
            t[c] = theta[c] - h;
            let minus = self.residuals(&t, target);
            t[c] = theta[c];
            j.set_column(c, &((plus - minus) / (2.0 * h)));
        }
        j
    }

    /// `λ ≥ 0` and `|x_ab| ≤ √(λ_a λ_b)`.
    fn project(&self, theta: &mut [f64]) {
        let n = self.p;
        for l in theta[..n].iter_mut() {
            *l = l.max(0.0);
        }
        let mut i = n;
        for a in 0..n {
            for b in a + 1..n {
                let bound = (theta[a] * theta[b]).sqrt();
                let mag = theta[i].hypot(theta[i + 1]);
                if mag > bound {
                    let f = if mag > 0.0 { bound / mag } else { 0.0 };
                    theta[i] *= f;
                    theta[i + 1] *= f;
                }
                i += 2;
            }
        }
    }
}

struct Run {
    theta: Vec<f64>,
    cost: f64,
    iterations: usize,
}

fn levenberg_marquardt(model: &Model, target: &[f64], start: Vec<f64>, max_iter: usize) -> Run {
    let mut theta = start;
    model.project(&mut theta);
    let mut r = model.residuals(&theta, target);
    let mut cost = r.norm_squared();
    let mut mu = 1e-3;
    let mut iterations = 0;
    let n = theta.len();
    while iterations < max_iter && cost > 1e-30 && mu < 1e16 {
        iterations += 1;
        let j = model.jacobian(&theta, target);
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * &r;
        let mut accepted = false;
        while mu < 1e16 {
            let mut a = jtj.clone();
            for d in 0..n {
                a[(d, d)] += mu * (1.0 + jtj[(d, d)]);
            }
            let Some(chol) = a.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            let mut trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, d)| t + d).collect();
            model.project(&mut trial);
            let tr = model.residuals(&trial, target);
            let tc = tr.norm_squared();
            if tc.is_finite() && tc < cost {
                let moved = theta
                    .iter()
                    .zip(&trial)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                theta = trial;
                r = tr;
                cost = tc;
                mu = (mu / 3.0).max(1e-15);
                accepted = moved > 1e-17;
                break;
            }
            mu *= 4.0;
        }
        if !accepted {
            break;
        }
    }
    Run {
        theta,
        cost,
        iterations,
    }
}

fn targets(log: &ReadLog<'_>, equations: &[OverlapEquation]) -> Vec<f64> {
    equations
        .iter()
        .map(|eq| match eq.part {
            Part::Re => log.re(eq.s, eq.k),
            Part::Im => log.im(eq.s, eq.k),
        })
        .collect()
}

/// Sensitivity matrix of the selected equations plus normalization with respect to the `p²`
/// packed unknowns, evaluated at `params`.
pub fn equation_jacobian(
    p: PrimeDim,
    params: &ProtocolParameters,
    selection: EquationSelection,
) -> DMatrix<f64> {
    let model = Model::new(p, selection.equations(p));
    let theta = model.pack(params);
    let zeros = vec![0.0; model.equations.len()];
    model.jacobian(&theta, &zeros)
}

fn start_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index as u64)
        .rotate_left(17)
}

pub fn reconstruct_complex_numeric(
    r: &MeasurementRecord,
    opts: &NumericOptions,
) -> Result<ReconstructionResult> {
    let p = r.p;
    let equations = opts.equations.equations(p);
    let model = Model::new(p, equations);
    let log = ReadLog::new(r);
    let target = targets(&log, &model.equations);

    let mut starts = vec![model.pack(&SchmidtEnsemble::uniform_orthogonal(p).parameters())];
    for i in 0..opts.multistarts {
        let e = random_ensemble(p, false, start_seed(opts.seed, i));
        starts.push(model.pack(&e.parameters()));
    }
    let runs: Vec<Run> = starts
        .into_par_iter()
        .map(|s| levenberg_marquardt(&model, &target, s, opts.max_iter))
        .collect();

    let scored: Vec<(usize, ReconstructionResult, usize)> = runs
        .iter()
        .enumerate()
        .map(|(i, run)| {
            let res = finish(
                r,
                model.unpack(&run.theta),
                Method::ComplexNumeric,
                0,
                Diagnostics::default(),
            );
            (i, res, run.iterations)
        })
        .collect();
    let gate = opts.tol * r.gate_scale();
    let converged_starts = scored.iter().filter(|(_, res, _)| res.residual <= gate).count();
    let (best_index, best, iterations) = scored
        .into_iter()
        .min_by(|a, b| a.1.residual.total_cmp(&b.1.residual).then(a.0.cmp(&b.0)))
        .expect("at least the uniform start");

    let jac = model.jacobian(&runs[best_index].theta, &target);
    let svd = sorted_svd(&jac);
    let mut diag = best.diagnostics;
    diag.converged = best.residual <= gate;
    diag.iterations = Some(iterations);
    diag.set("starts", runs.len() as f64);
    diag.set("starts_converged", converged_starts as f64);
    diag.set("best_start", best_index as f64);
    diag.set("cost", runs[best_index].cost);
    diag.set("equations", (model.equations.len() + 1) as f64);
    diag.set("unknowns", model.unknowns() as f64);
    diag.set("jacobian_rank", numerical_rank(&svd.values, RANK_TOL) as f64);
    if !diag.converged {
        diag.note(format!("best residual {:e} exceeds {gate:e}", best.residual));
    }
    let result = ReconstructionResult {
        measurements_used: log.count(),
        diagnostics: diag,
        ..best
    };
    if result.diagnostics.converged {
        Ok(result)
    } else {
        Err(Error::SolverFailure {
            residual: result.residual,
            best: Some(Box::new(result)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::simulate_record;
    use crate::reconstruction::reconstruct_p2;

    fn dim(p: usize) -> PrimeDim {
        PrimeDim::new(p).unwrap()
    }

    #[test]
    fn equation_counts() {
        for p in [2, 3, 5, 7] {
            let eqs = EquationSelection::NonRedundant.equations(dim(p));
            assert_eq!(eqs.len() + 1, p * p);
            assert_eq!(EquationSelection::Full.equations(dim(p)).len(), 2 * (p * p - 1));
        }
        assert_eq!(EquationSelection::Auto.equations(dim(3)).len(), 8);
        assert_eq!(EquationSelection::Auto.equations(dim(5)).len(), 48);
    }

    #[test]
    fn pack_unpack_round_trip() {
        let e = random_ensemble(dim(5), false, 3);
        let model = Model::new(dim(5), vec![]);
        let params = e.parameters();
        let back = model.unpack(&model.pack(&params));
        let (dl, dx) = back.max_error(&params);
        assert_eq!((dl, dx), (0.0, 0.0));
    }

    #[test]
    fn tabulated_model_matches_forward() {
        let p = dim(5);
        let e = random_ensemble(p, false, 9);
        let model = Model::new(p, EquationSelection::Full.equations(p));
        let r = simulate_record(&e).unwrap();
        let target: Vec<f64> = model
            .equations
            .iter()
            .map(|eq| match eq.part {
                Part::Re => r.get(eq.s, eq.k).re,
                Part::Im => r.get(eq.s, eq.k).im,
            })
            .collect();
        let res = model.residuals(&model.pack(&e.parameters()), &target);
        assert!(res.amax() < 1e-13);
    }

    #[test]
    fn non_redundant_rank_for_small_p() {
        for p in [2, 3] {
            for seed in 0..5 {
                let e = random_ensemble(dim(p), false, seed);
                let j = equation_jacobian(dim(p), &e.parameters(), EquationSelection::NonRedundant);
                let svd = sorted_svd(&j);
                assert_eq!(numerical_rank(&svd.values, RANK_TOL), p * p, "p={p} seed={seed}");
            }
        }
    }

    #[test]
    fn full_selection_has_full_rank_at_p5() {
        let e = random_ensemble(dim(5), false, 1);
        let j = equation_jacobian(dim(5), &e.parameters(), EquationSelection::Full);
        assert_eq!(numerical_rank(&sorted_svd(&j).values, RANK_TOL), 25);
    }

    #[test]
    fn uniform_orthogonal_converges_at_start() {
        for p in [2, 3, 5] {
            let r = simulate_record(&SchmidtEnsemble::uniform_orthogonal(dim(p))).unwrap();
            let res = reconstruct_complex_numeric(&r, &NumericOptions::default()).unwrap();
            assert!(res.residual <= 1e-10);
            for l in &res.lambdas {
                assert!((l - 1.0 / p as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn complex_p3_round_trip() {
        let mut ok = 0;
        for seed in 0..10 {
            let e = random_ensemble(dim(3), false, 100 + seed);
            let r = simulate_record(&e).unwrap();
            if let Ok(res) = reconstruct_complex_numeric(&r, &NumericOptions::default()) {
                let (dl, dx) = res.parameters().max_error(&e.parameters());
                assert!(dl < 1e-6 && dx < 1e-6, "seed={seed}");
                assert_eq!(res.measurements_used, 8);
                ok += 1;
            }
        }
        assert!(ok >= 9);
    }

    #[test]
    fn agrees_with_qubit_solver() {
        for seed in 0..10 {
            let e = random_ensemble(dim(2), false, seed);
            let r = simulate_record(&e).unwrap();
            let closed = reconstruct_p2(&r).unwrap();
            let numeric = reconstruct_complex_numeric(&r, &NumericOptions::default()).unwrap();
            let (dl, dx) = closed.parameters().max_error(&numeric.parameters());
            assert!(dl < 1e-7 && dx < 1e-7, "seed={seed}");
        }
    }

    #[test]
    fn failure_carries_best_effort() {
        let mut r = simulate_record(&random_ensemble(dim(3), false, 4)).unwrap();
        r.a[(1, 1)] += Complex64::new(0.5, -0.4);
        r.a[(2, 2)] += Complex64::new(0.3, 0.3);
        let opts = NumericOptions {
            equations: EquationSelection::Full,
            ..Default::default()
        };
        match reconstruct_complex_numeric(&r, &opts) {
            Err(Error::SolverFailure { residual, best: Some(best) }) => {
                assert!(!best.diagnostics.converged);
                assert_eq!(best.residual, residual);
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn deterministic() {
        let r = simulate_record(&random_ensemble(dim(3), false, 21)).unwrap();
        let a = reconstruct_complex_numeric(&r, &NumericOptions::default()).unwrap();
        let b = reconstruct_complex_numeric(&r, &NumericOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}

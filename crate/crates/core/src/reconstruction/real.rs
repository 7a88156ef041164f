//! Quasilinear reconstruction for real inner products, odd `p`.
//!
//! With `z_ks = √N_ks` and `y_l = λ_l + Σ_{l'≠l} x_{l'l}` the overlap equations of setting
//! `s` become, after an inverse Fourier transform over `k`,
//!
//! ```text
//! √N_00 · ω^{2⁻¹s·l²} Σ_k ω^{k·l} a_ks z_ks = p·y_l ,   l = 0..p
//! ```
//!
//! The `y_l` are real, so the imaginary parts give a homogeneous linear system for the `z_ks`
//! of each `s = 1..=(p-1)/2`, fixed in scale by `Σ_k z_ks² = p`. Summing over `l` gives `N_00`
//! through a Gauss sum, the real parts give `y_l`, and the `s = 0` block then follows linearly.
//! A final overdetermined linear system recovers `λ` and `x` from the `y_l` and all `N_ks`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{finish, Diagnostics, Method, ReadLog, ReconstructionResult};
use crate::ensemble::ProtocolParameters;
use crate::error::{Error, Result};
use crate::forward::MeasurementRecord;
use crate::linalg::{least_squares, numerical_rank, sorted_svd};
use crate::phase::{self, gauss_sum, mod_inverse, PrimeDim};

const NULL_SPACE_TOL: f64 = 1e-8;
const SIGN_TOL: f64 = 1e-8;
const BRACKET_IMAG_TOL: f64 = 1e-6;
const RANK_TOL: f64 = 1e-8;
/// Absolute floor on `s = 0` singular values: below it the `a_k0` carry no information.
const S0_FLOOR: f64 = 1e-10;

/// `N_ks` entries indexed `[s][k]`; `None` where not determined.
pub type NormalizationTable = DMatrix<Option<f64>>;

/// Solution of one `s`-block: `z_ks = √N_ks` for `k = 0..p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZBlock {
    pub s: usize,
    pub z: Vec<f64>,
    /// Smallest over largest singular value of the homogeneous system.
    pub null_ratio: f64,
    /// Second-smallest over largest singular value.
    pub gap_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearInversion {
    pub params: ProtocolParameters,
    pub rank: usize,
    pub unknowns: usize,
    pub equations: usize,
    pub residual: f64,
    pub singular_values: Vec<f64>,
}

fn require_real_general(p: PrimeDim) -> Result<()> {
    if p.get() > 2 {
        Ok(())
    } else {
        Err(Error::MethodMismatch {
            method: "real-general",
            p: p.get() as u64,
        })
    }
}

/// `ω^{2⁻¹s·l² + k·l}`, the phase multiplying `a_ks` in row `l` of block `s`.
fn block_phase(p: PrimeDim, s: usize, k: usize, l: usize) -> Complex64 {
    phase::amplitude(p, k, s, l).conj().to_complex()
}

pub fn solve_z_block(r: &MeasurementRecord, s: usize) -> Result<ZBlock> {
    solve_z_block_logged(&ReadLog::new(r), s)
}

pub(crate) fn solve_z_block_logged(log: &ReadLog<'_>, s: usize) -> Result<ZBlock> {
    let r = log.record;
    let p = r.p;
    require_real_general(p)?;
    let n = p.get();
    if s == 0 || s > p.half() {
        return Err(Error::InvalidResidue {
            value: s as i64,
            modulus: n as u64,
        });
    }
    let a: Vec<Complex64> = (0..n).map(|k| log.get(s, k)).collect();
    let m = DMatrix::from_fn(n, n, |l, k| (block_phase(p, s, k, l) * a[k]).im);
    let svd = sorted_svd(&m);
    let top = svd.values[0];
    let null_ratio = svd.values[n - 1] / top;
    let gap_ratio = svd.values[n - 2] / top;
    if gap_ratio < NULL_SPACE_TOL {
        return Err(Error::DegenerateSystem(format!(
            "block s={s} has a null space of dimension > 1 (second-smallest singular ratio {gap_ratio:e})"
        )));
    }
    let scale = r.gate_scale();
    if null_ratio > NULL_SPACE_TOL * scale {
        return Err(Error::InconsistentRecord(format!(
            "block s={s} imaginary-part system has no null space (singular ratio {null_ratio:e})"
        )));
    }
    let v: Vec<f64> = svd.right.column(n - 1).iter().cloned().collect();
    let z = normalize_norms(v, n as f64, SIGN_TOL * scale)
        .map_err(|min| {
            Error::InconsistentRecord(format!("block s={s} null vector has mixed signs (min {min:e})"))
        })?;
    Ok(ZBlock {
        s,
        z,
        null_ratio,
        gap_ratio,
    })
}

/// Scales `v` so `Σ v² = target`, fixes the sign so the largest entry is positive and clamps
/// small negatives. Returns the most negative entry when it exceeds `tol`.
fn normalize_norms(mut v: Vec<f64>, target: f64, tol: f64) -> std::result::Result<Vec<f64>, f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let pivot = v.iter().cloned().fold(0.0, |m: f64, x| if x.abs() > m.abs() { x } else { m });
    let factor = target.sqrt() / norm * pivot.signum();
    for x in &mut v {
        *x *= factor;
    }
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -tol {
        return Err(min);
    }
    for x in &mut v {
        *x = x.max(0.0);
    }
    Ok(v)
}

/// `N_00 = (1/p²)·[Σ_k a_ks z_ks G(2⁻¹s, k)]²`. The bracket must be real and positive.
pub fn compute_n00(r: &MeasurementRecord, z: &ZBlock) -> Result<f64> {
    compute_n00_logged(&ReadLog::new(r), z)
}

pub(crate) fn compute_n00_logged(log: &ReadLog<'_>, z: &ZBlock) -> Result<f64> {
    let r = log.record;
    let p = r.p;
    let n = p.get();
    let s = z.s;
    let half_s = (mod_inverse(2, p)? * s) as i64;
    let bracket: Complex64 = (0..n)
        .map(|k| log.get(s, k) * z.z[k] * gauss_sum(p, half_s, k as i64))
        .sum();
    let tol = BRACKET_IMAG_TOL * r.gate_scale();
    if bracket.im.abs() > tol {
        return Err(Error::InconsistentRecord(format!(
            "Gauss-sum bracket for s={s} has imaginary part {:e}",
            bracket.im
        )));
    }
    if bracket.re <= 0.0 {
        return Err(Error::InconsistentRecord(format!(
            "Gauss-sum bracket for s={s} is not positive ({:e})",
            bracket.re
        )));
    }
    let root = bracket.re / n as f64;
    Ok(root * root)
}

/// `y_l = (√N_00 / p)·Re(ω^{2⁻¹s·l²} Σ_k ω^{k·l} a_ks z_ks)`.
pub fn compute_y(r: &MeasurementRecord, z: &ZBlock, n00: f64) -> Vec<f64> {
    compute_y_logged(&ReadLog::new(r), z, n00)
}

pub(crate) fn compute_y_logged(log: &ReadLog<'_>, z: &ZBlock, n00: f64) -> Vec<f64> {
    let p = log.record.p;
    let n = p.get();
    let s = z.s;
    let a: Vec<Complex64> = (0..n).map(|k| log.get(s, k)).collect();
    (0..n)
        .map(|l| {
            let sum: Complex64 = (0..n).map(|k| block_phase(p, s, k, l) * a[k] * z.z[k]).sum();
            n00.sqrt() / n as f64 * sum.re
        })
        .collect()
}

/// `z_k0 = √N_k0` for `k = 1..=(p-1)/2`.
///
/// For `s = 0` the paired terms `k` and `p-k` are complex conjugates, so the block equations
/// are real: `√N_00·(√N_00 + 2 Σ_k Re(ω^{k·l} a_k0) z_k0) = p·y_l`. With `y` and `N_00` known
/// this is an overdetermined linear system, solved by least squares. Empty for `p = 3`, where
/// `N_10 = N_20 = (3 - N_00)/2` already follows from `Σ_k N_k0 = p`.
pub fn solve_z_zero(r: &MeasurementRecord, n00: f64, y: &[f64]) -> Result<Vec<f64>> {
    solve_z_zero_logged(&ReadLog::new(r), n00, y)
}

pub(crate) fn solve_z_zero_logged(log: &ReadLog<'_>, n00: f64, y: &[f64]) -> Result<Vec<f64>> {
    let r = log.record;
    let p = r.p;
    require_real_general(p)?;
    let n = p.get();
    let half = p.half();
    if n == 3 {
        return Ok(Vec::new());
    }
    let a: Vec<Complex64> = (1..=half).map(|k| log.get(0, k)).collect();
    let root = n00.sqrt();
    let m = DMatrix::from_fn(n, half, |l, j| {
        let k = j + 1;
        2.0 * (phase::omega(p, (k * l) as i64).to_complex() * a[j]).re
    });
    let b = DVector::from_fn(n, |l, _| n as f64 * y[l] / root - root);
    let (z, values) = least_squares(&m, &b);
    let floor = S0_FLOOR * r.gate_scale();
    let rank = values
        .iter()
        .filter(|&&v| v > floor && v > NULL_SPACE_TOL * values[0])
        .count();
    if rank < half {
        return Err(Error::DegenerateSystem(
            "s=0 block does not determine every z_k0".into(),
        ));
    }
    let tol = SIGN_TOL * r.gate_scale();
    let min = z.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -tol {
        return Err(Error::InconsistentRecord(format!(
            "s=0 block gives a negative norm ({min:e})"
        )));
    }
    Ok(z.iter().map(|v| v.max(0.0)).collect())
}

fn pair_index(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .collect()
}

/// Solves for `λ` and real `x` from `y_l = λ_l + Σ_{l'≠l} x_{l'l}`, the real form of every
/// known `N_ks`, and `Σ λ_l = 1`, by least squares over `p(p+1)/2` unknowns.
pub fn invert_linear_system(
    p: PrimeDim,
    y: &[f64],
    table: &NormalizationTable,
) -> Result<LinearInversion> {
    let inv = solve_min_norm(p, y, table);
    if inv.rank < inv.unknowns {
        return Err(Error::RankDeficient {
            rank: inv.rank,
            required: inv.unknowns,
        });
    }
    Ok(inv)
}

/// Minimum-norm least-squares solution, whatever the rank.
fn solve_min_norm(p: PrimeDim, y: &[f64], table: &NormalizationTable) -> LinearInversion {
    let n = p.get();
    let pairs = pair_index(n);
    let unknowns = n + pairs.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();

    for (l, &yl) in y.iter().enumerate() {
        let mut row = vec![0.0; unknowns];
        row[l] = 1.0;
        for (j, &(a, b)) in pairs.iter().enumerate() {
            if a == l || b == l {
                row[n + j] = 1.0;
            }
        }
        rows.push(row);
        rhs.push(yl);
    }
    for s in 0..n {
        for k in 0..n {
            let Some(value) = table[(s, k)] else { continue };
            let mut row = vec![1.0; n];
            row.extend(pairs.iter().map(|&(a, b)| {
                let ph = phase::amplitude(p, k, s, a).conj() * phase::amplitude(p, k, s, b);
                2.0 * ph.to_complex().re
            }));
            rows.push(row);
            rhs.push(value);
        }
    }
    let mut norm_row = vec![1.0; n];
    norm_row.extend(std::iter::repeat(0.0).take(pairs.len()));
    rows.push(norm_row);
    rhs.push(1.0);

    let equations = rows.len();
    let m = DMatrix::from_fn(equations, unknowns, |i, j| rows[i][j]);
    let b = DVector::from_vec(rhs);
    let (sol, singular_values) = least_squares(&m, &b);
    let rank = numerical_rank(&singular_values, RANK_TOL);
    let residual = (&m * &sol - &b).amax();
    let mut x = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (j, &(a, bb)) in pairs.iter().enumerate() {
        x[(a, bb)] = Complex64::new(sol[n + j], 0.0);
        x[(bb, a)] = Complex64::new(sol[n + j], 0.0);
    }
    LinearInversion {
        params: ProtocolParameters {
            lambdas: sol.iter().take(n).cloned().collect(),
            x,
        },
        rank,
        unknowns,
        equations,
        residual,
        singular_values,
    }
}

pub fn reconstruct_real(r: &MeasurementRecord) -> Result<ReconstructionResult> {
    let p = r.p;
    require_real_general(p)?;
    let n = p.get();
    let half = p.half();
    let log = ReadLog::new(r);
    let mut diag = Diagnostics::default();

    let blocks = (1..=half)
        .map(|s| solve_z_block_logged(&log, s))
        .collect::<Result<Vec<_>>>()?;
    let n00 = compute_n00_logged(&log, &blocks[0])?;
    let y = compute_y_logged(&log, &blocks[0], n00);

    // the same N_00 from every block; only s = 1 feeds the solution
    let mut n00_spread: f64 = 0.0;
    for block in &blocks[1..] {
        let other = compute_n00(r, block)?;
        n00_spread = n00_spread.max((other - n00).abs());
    }

    let mut table: NormalizationTable = DMatrix::from_element(n, n, None);
    table[(0, 0)] = Some(n00);
    for block in &blocks {
        let s = block.s;
        for (k, &z) in block.z.iter().enumerate() {
            table[(s, k)] = Some(z * z);
            table[((n - s) % n, (n - k) % n)] = Some(z * z);
        }
    }
    let mut s0_blind = false;
    if n == 3 {
        let n10 = (3.0 - n00) / 2.0;
        table[(0, 1)] = Some(n10);
        table[(0, 2)] = Some(n10);
    } else {
        match solve_z_zero_logged(&log, n00, &y) {
            Ok(z0) => {
                for (j, &z) in z0.iter().enumerate() {
                    let k = j + 1;
                    table[(0, k)] = Some(z * z);
                    table[(0, n - k)] = Some(z * z);
                }
                let sum_defect = n00 + 2.0 * z0.iter().map(|z| z * z).sum::<f64>() - n as f64;
                diag.set("s0_norm_sum_defect", sum_defect.abs());
            }
            // vanishing a_k0 (constant y_l) leave N_k0 free
            Err(Error::DegenerateSystem(_)) => s0_blind = true,
            Err(e) => return Err(e),
        }
    }

    let inversion = if s0_blind {
        let inv = solve_min_norm(p, &y, &table);
        let deficiency = inv.unknowns - inv.rank;
        if deficiency > half - 1 {
            return Err(Error::RankDeficient {
                rank: inv.rank,
                required: inv.unknowns,
            });
        }
        diag.set("rank_deficiency", deficiency as f64);
        diag.note(format!(
            "s=0 overlaps vanish, so N_k0 is not determined; minimum-norm solution of a \
             {deficiency}-dimensional family"
        ));
        inv
    } else {
        invert_linear_system(p, &y, &table)?
    };
    diag.converged = true;
    diag.set("n00", n00);
    diag.set("n00_spread", n00_spread);
    diag.set("y_sum_minus_n00", (y.iter().sum::<f64>() - n00).abs());
    diag.set(
        "max_null_ratio",
        blocks.iter().map(|b| b.null_ratio).fold(0.0, f64::max),
    );
    diag.set(
        "min_gap_ratio",
        blocks.iter().map(|b| b.gap_ratio).fold(f64::INFINITY, f64::min),
    );
    diag.set("inversion_rank", inversion.rank as f64);
    diag.set("inversion_unknowns", inversion.unknowns as f64);
    diag.set("inversion_residual", inversion.residual);
    let (n_rank, y_rank) = structural_ranks(p);
    diag.set("independent_n_ks", n_rank as f64);
    diag.set("independent_y_l", y_rank as f64);

    let used = log.count();
    Ok(finish(r, inversion.params, Method::RealGeneral, used, diag))
}

/// Ranks of the `N_ks` equations and of the `y_l` equations as linear forms in the
/// off-diagonal `x` (the weights enter both only through `Σ λ = 1` and `λ_l`).
fn structural_ranks(p: PrimeDim) -> (usize, usize) {
    let n = p.get();
    let pairs = pair_index(n);
    let n_rows = DMatrix::from_fn(n * n, pairs.len(), |i, j| {
        let (s, k) = (i / n, i % n);
        let (a, b) = pairs[j];
        2.0 * (phase::amplitude(p, k, s, a).conj() * phase::amplitude(p, k, s, b))
            .to_complex()
            .re
    });
    let y_rows = DMatrix::from_fn(n, n + pairs.len(), |l, j| {
        if j < n {
            f64::from(j == l)
        } else {
            let (a, b) = pairs[j - n];
            f64::from(a == l || b == l)
        }
    });
    (
        numerical_rank(&sorted_svd(&n_rows).values, RANK_TOL),
        numerical_rank(&sorted_svd(&y_rows).values, RANK_TOL),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{random_ensemble, SchmidtEnsemble};
    use crate::forward::{normalization, simulate_record};

    fn pd(p: usize) -> PrimeDim {
        PrimeDim::new(p).unwrap()
    }

    #[test]
    fn orthogonal_blocks_are_all_ones() {
        for p in [3, 5, 7] {
            let r = simulate_record(&SchmidtEnsemble::uniform_orthogonal(pd(p))).unwrap();
            for s in 1..=pd(p).half() {
                let block = solve_z_block(&r, s).unwrap();
                for z in &block.z {
                    assert!((z - 1.0).abs() < 1e-12, "p={p} s={s} z={z}");
                }
                let n00 = compute_n00(&r, &block).unwrap();
                assert!((n00 - 1.0).abs() < 1e-12);
                let y = compute_y(&r, &block, n00);
                for v in y {
                    assert!((v - 1.0 / p as f64).abs() < 1e-12);
                }
            }
            // a_k0 = 0 for k ≠ 0 says nothing about N_k0
            let z0 = solve_z_zero(&r, 1.0, &vec![1.0 / p as f64; p]);
            if p == 3 {
                assert!(z0.unwrap().is_empty());
            } else {
                assert!(matches!(z0, Err(Error::DegenerateSystem(_))));
            }
        }
    }

    #[test]
    fn blocks_reproduce_forward_norms() {
        for p in [3, 5, 7] {
            for seed in 0..10 {
                let e = random_ensemble(pd(p), true, seed);
                let params = e.parameters();
                let r = simulate_record(&e).unwrap();
                let n00_true = normalization(pd(p), &params, 0, 0);
                for s in 1..=pd(p).half() {
                    let block = solve_z_block(&r, s).unwrap();
                    for (k, z) in block.z.iter().enumerate() {
                        let truth = normalization(pd(p), &params, k, s);
                        assert!((z * z - truth).abs() < 1e-9, "p={p} s={s} k={k}");
                    }
                    let n00 = compute_n00(&r, &block).unwrap();
                    assert!((n00 - n00_true).abs() < 1e-9);
                }
                let block = solve_z_block(&r, 1).unwrap();
                let y = compute_y(&r, &block, n00_true);
                let y_true = params.y();
                for l in 0..p {
                    assert!((y[l] - y_true[l].re).abs() < 1e-9);
                }
                assert!((y.iter().sum::<f64>() - n00_true).abs() < 1e-9);
                let z0 = solve_z_zero(&r, n00_true, &y).unwrap();
                for (j, z) in z0.iter().enumerate() {
                    let truth = normalization(pd(p), &params, j + 1, 0);
                    assert!((z * z - truth).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn trivial_inversion() {
        let p = pd(5);
        let lambdas = [0.1, 0.2, 0.3, 0.15, 0.25];
        let table = DMatrix::from_element(5, 5, Some(1.0));
        let inv = invert_linear_system(p, &lambdas, &table).unwrap();
        for (a, b) in inv.params.lambdas.iter().zip(lambdas) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(inv.params.x.iter().all(|z| z.norm() < 1e-12));
        assert_eq!(inv.rank, 15);
    }

    #[test]
    fn inversion_without_s0_is_rank_deficient_for_p5() {
        let p = pd(5);
        let mut table = DMatrix::from_element(5, 5, Some(1.0));
        for k in 1..5 {
            table[(0, k)] = None;
        }
        match invert_linear_system(p, &[0.2; 5], &table) {
            Err(Error::RankDeficient { rank, required }) => {
                assert_eq!(required, 15);
                assert_eq!(rank, 14);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn p3_inversion_matches_display_formulas() {
        let p = pd(3);
        let e = random_ensemble(p, true, 11);
        let params = e.parameters();
        let n = |k, s| normalization(p, &params, k, s);
        let mut table: NormalizationTable = DMatrix::from_element(3, 3, None);
        for s in 0..3 {
            for k in 0..3 {
                table[(s, k)] = Some(n(k, s));
            }
        }
        let y: Vec<f64> = params.y().iter().map(|v| v.re).collect();
        let inv = invert_linear_system(p, &y, &table).unwrap();
        let x01 = (n(0, 0) + n(1, 1) - n(0, 1) - n(2, 1)) / 6.0;
        let x02 = (n(0, 0) + n(2, 1) - n(0, 1) - n(1, 1)) / 6.0;
        let x12 = (n(0, 0) + n(0, 1) - n(1, 1) - n(2, 1)) / 6.0;
        assert!((inv.params.x[(0, 1)].re - x01).abs() < 1e-12);
        assert!((inv.params.x[(0, 2)].re - x02).abs() < 1e-12);
        assert!((inv.params.x[(1, 2)].re - x12).abs() < 1e-12);
    }

    #[test]
    fn round_trip_recovers_truth() {
        for p in [3, 5, 7] {
            for seed in 0..10 {
                let e = random_ensemble(pd(p), true, 500 + seed);
                let r = simulate_record(&e).unwrap();
                let res = reconstruct_real(&r).unwrap();
                let (dl, dx) = res.parameters().max_error(&e.parameters());
                assert!(dl < 1e-8 && dx < 1e-8, "p={p} seed={seed} dl={dl:e} dx={dx:e}");
                assert!(res.residual < 1e-7);
                assert_eq!(res.method, Method::RealGeneral);
            }
        }
    }

    #[test]
    fn orthogonal_round_trip() {
        let r = simulate_record(&SchmidtEnsemble::uniform_orthogonal(pd(5))).unwrap();
        let res = reconstruct_real(&r).unwrap();
        for l in &res.lambdas {
            assert!((l - 0.2).abs() < 1e-12);
        }
        assert!(res.residual <= 1e-10);
        for i in 0..5 {
            for j in 0..5 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((res.inner.get(i, j).unwrap().re - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn complex_gram_is_rejected() {
        let mut rejected = 0;
        for seed in 0..20 {
            let r = simulate_record(&random_ensemble(pd(3), false, seed)).unwrap();
            if let Err(Error::InconsistentRecord(_)) = reconstruct_real(&r) {
                rejected += 1;
            }
        }
        assert_eq!(rejected, 20);
    }

    #[test]
    fn measurement_count() {
        for (p, expected) in [(3usize, 6usize), (5, 24), (7, 48)] {
            let r = simulate_record(&random_ensemble(pd(p), true, 1)).unwrap();
            assert_eq!(reconstruct_real(&r).unwrap().measurements_used, expected);
        }
    }

    #[test]
    fn qubit_is_not_supported() {
        let r = simulate_record(&SchmidtEnsemble::uniform_orthogonal(pd(2))).unwrap();
        assert!(matches!(reconstruct_real(&r), Err(Error::MethodMismatch { .. })));
    }
}

//! The Hadamard family `H_s = H₀ D^s`, `s = 0..p`, applied to the controllable subsystem.
//!
//! Entry convention: `(H_s)_{k,l} = e^{-iφ·s·l²} ω^{-k·l} / √p`, so that projecting `⟨u_k|`
//! after `I ⊗ H_s` leaves the amplitude `ω^{-2⁻¹s·l² - k·l} √λ_l` on `|λ_l⟩`. Together with the
//! computational basis the vectors `H_s†|u_k⟩` form `p + 1` mutually unbiased bases.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::phase::{self, PrimeDim};

#[derive(Debug, Clone)]
pub struct HadamardFamily {
    pub p: PrimeDim,
    /// `H_0, …, H_{p-1}`.
    pub matrices: Vec<DMatrix<Complex64>>,
    /// The finite Fourier transform `H₀`.
    pub fourier: DMatrix<Complex64>,
    /// The quadratic-phase diagonal `D`.
    pub diagonal: DMatrix<Complex64>,
}

pub fn build_family(p: PrimeDim) -> HadamardFamily {
    let n = p.get();
    let scale = 1.0 / (n as f64).sqrt();
    let matrices = (0..n)
        .map(|s| {
            DMatrix::from_fn(n, n, |k, l| phase::amplitude(p, k, s, l).to_complex() * scale)
        })
        .collect::<Vec<_>>();
    let fourier = matrices[0].clone();
    let diagonal = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            phase::quadratic(p, 1, i).to_complex()
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    HadamardFamily {
        p,
        matrices,
        fourier,
        diagonal,
    }
}

/// Max-entry defect of `H†H - I`.
pub fn unitarity_defect(h: &DMatrix<Complex64>) -> f64 {
    let n = h.nrows();
    let prod = h.adjoint() * h;
    (prod - DMatrix::<Complex64>::identity(n, n))
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

impl HadamardFamily {
    pub fn max_unitarity_defect(&self) -> f64 {
        self.matrices.iter().map(unitarity_defect).fold(0.0, f64::max)
    }

    /// Number of bases checked for mutual unbiasedness: the `p` Hadamard bases plus the
    /// computational basis.
    pub fn basis_count(&self) -> usize {
        self.matrices.len() + 1
    }
}

/// Max over pairs of distinct bases of `|p·|⟨b_i, b'_j⟩|² - 1|`, including every basis against
/// the computational one.
///
/// The basis measured under setting `s` is `H_s†|u_k⟩`, the conjugated rows of `H_s`. Columns
/// of different `H_s` are not unbiased: `H_s†H_t = D^{t-s}` is diagonal.
pub fn check_unbiasedness(f: &HadamardFamily) -> f64 {
    let p = f.p.get() as f64;
    let mut worst: f64 = 0.0;
    for (s, hs) in f.matrices.iter().enumerate() {
        // against the computational basis: every entry has magnitude 1/√p
        for z in hs.iter() {
            worst = worst.max((p * z.norm_sqr() - 1.0).abs());
        }
        for ht in &f.matrices[s + 1..] {
            let overlaps = hs * ht.adjoint();
            for z in overlaps.iter() {
                worst = worst.max((p * z.norm_sqr() - 1.0).abs());
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pd(p: usize) -> PrimeDim {
        PrimeDim::new(p).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn max_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn qubit_family() {
        let f = build_family(pd(2));
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let h0 = DMatrix::from_row_slice(2, 2, &[c(r, 0.0), c(r, 0.0), c(r, 0.0), c(-r, 0.0)]);
        assert!(max_diff(&f.fourier, &h0) < 1e-15);
        let d = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, -1.0)]);
        assert_eq!(f.diagonal, d);
        let h1 = DMatrix::from_row_slice(2, 2, &[c(r, 0.0), c(0.0, -r), c(r, 0.0), c(0.0, r)]);
        assert!(max_diff(&f.matrices[1], &h1) < 1e-15);
        assert!(check_unbiasedness(&f) <= 1e-14);
        assert_eq!(f.basis_count(), 3);
    }

    #[test]
    fn family_is_fourier_times_diagonal_powers() {
        for p in [2, 3, 5, 7] {
            let f = build_family(pd(p));
            let mut dpow = DMatrix::<Complex64>::identity(p, p);
            for s in 0..p {
                assert!(max_diff(&f.matrices[s], &(&f.fourier * &dpow)) < 1e-13, "p={p} s={s}");
                dpow = &dpow * &f.diagonal;
            }
        }
    }

    #[test]
    fn unitary_and_unbiased() {
        for p in [2, 3, 5, 7, 11] {
            let f = build_family(pd(p));
            assert!(f.max_unitarity_defect() <= 1e-12, "p={p}");
            assert!(check_unbiasedness(&f) <= 1e-12, "p={p}");
        }
    }

    #[test]
    fn repeated_basis_is_detected() {
        for p in [3, 5] {
            let mut f = build_family(pd(p));
            f.matrices[1] = f.matrices[0].clone();
            let dev = check_unbiasedness(&f);
            assert!((dev - (p as f64 - 1.0)).abs() < 1e-12, "p={p} dev={dev}");
        }
    }
}

//! Ground-truth bipartite states `Σ_l √λ_l |λ_l⟩|u_l⟩`.
//!
//! The state is held as the Schmidt weights `λ_l` together with the Gram matrix
//! `λ_{l'l} = ⟨λ_{l'}|λ_l⟩` of the inaccessible states. Every measurable quantity depends on
//! the state only through these numbers; explicit vectors are produced on demand by
//! [`SchmidtEnsemble::realize_vectors`] for the brute-force oracle.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::phase::PrimeDim;

const NORMALIZATION_TOL: f64 = 1e-12;
const DIAGONAL_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
const ENTRY_BOUND_TOL: f64 = 1e-12;
const REALIZATION_TOL: f64 = 1e-10;
const EIGEN_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SchmidtEnsemble {
    p: PrimeDim,
    lambdas: Vec<f64>,
    gram: DMatrix<Complex64>,
    real: bool,
}

/// A violated ensemble invariant, with the size of the defect.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NegativeProbability { index: usize, value: f64 },
    Normalization { defect: f64 },
    DiagonalNotUnit { index: usize, defect: f64 },
    NotHermitian { defect: f64 },
    NotPositiveSemidefinite { min_eigenvalue: f64 },
    EntryExceedsUnit { row: usize, col: usize, magnitude: f64 },
    NonFinite,
}

/// The unknowns the protocol equations are written in: `λ_l` and the weighted overlaps
/// `x_{l'l} = λ_{l'l} √(λ_{l'} λ_l)` (zero diagonal).
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolParameters {
    pub lambdas: Vec<f64>,
    pub x: DMatrix<Complex64>,
}

impl ProtocolParameters {
    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    /// `y_l = λ_l + Σ_{l'≠l} x_{l'l}`.
    pub fn y(&self) -> Vec<Complex64> {
        let p = self.dim();
        (0..p)
            .map(|l| {
                let off: Complex64 = (0..p).filter(|&lp| lp != l).map(|lp| self.x[(lp, l)]).sum();
                Complex64::new(self.lambdas[l], 0.0) + off
            })
            .collect()
    }

    /// Largest absolute difference in `λ` and in `x` against another parameter set.
    pub fn max_error(&self, other: &ProtocolParameters) -> (f64, f64) {
        let dl = self
            .lambdas
            .iter()
            .zip(&other.lambdas)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let dx = self
            .x
            .iter()
            .zip(other.x.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        (dl, dx)
    }
}

/// Explicit unit vectors `|λ_l⟩ ∈ ℂ^d` whose inner products reproduce a Gram matrix.
#[derive(Debug, Clone)]
pub struct VectorRealization {
    pub ambient_dim: usize,
    pub vectors: Vec<DVector<Complex64>>,
}

impl VectorRealization {
    pub fn gram(&self) -> DMatrix<Complex64> {
        let n = self.vectors.len();
        DMatrix::from_fn(n, n, |i, j| self.vectors[i].dotc(&self.vectors[j]))
    }
}

impl SchmidtEnsemble {
    /// Builds an ensemble. The Gram matrix is replaced by its Hermitian part so that
    /// `gram[l'][l] = conj(gram[l][l'])` holds exactly; all other invariants are left to
    /// [`SchmidtEnsemble::validate`].
    pub fn new(p: PrimeDim, lambdas: Vec<f64>, gram: DMatrix<Complex64>) -> Result<Self> {
        let n = p.get();
        if lambdas.len() != n || gram.nrows() != n || gram.ncols() != n {
            return Err(Error::InvalidFile(format!(
                "expected {n} weights and a {n}x{n} Gram matrix, got {} and {}x{}",
                lambdas.len(),
                gram.nrows(),
                gram.ncols()
            )));
        }
        let gram = DMatrix::from_fn(n, n, |i, j| (gram[(i, j)] + gram[(j, i)].conj()) * 0.5);
        let real = (0..n).all(|i| (0..n).all(|j| i == j || gram[(i, j)].im == 0.0));
        Ok(Self {
            p,
            lambdas,
            gram,
            real,
        })
    }

    pub fn p(&self) -> PrimeDim {
        self.p
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn gram(&self) -> &DMatrix<Complex64> {
        &self.gram
    }

    /// True iff every off-diagonal Gram entry has zero imaginary part.
    pub fn is_real(&self) -> bool {
        self.real
    }

    /// Orthonormal `|λ_l⟩` with uniform weights.
    pub fn uniform_orthogonal(p: PrimeDim) -> Self {
        let n = p.get();
        Self::new(p, vec![1.0 / n as f64; n], DMatrix::identity(n, n))
            .expect("shapes are consistent")
    }

    pub fn validate(&self) -> Vec<Violation> {
        let n = self.p.get();
        let mut out = Vec::new();
        if self.lambdas.iter().any(|v| !v.is_finite()) || self.gram.iter().any(|z| !z.is_finite())
        {
            out.push(Violation::NonFinite);
            return out;
        }
        for (index, &value) in self.lambdas.iter().enumerate() {
            if value < 0.0 {
                out.push(Violation::NegativeProbability { index, value });
            }
        }
        let defect = (self.lambdas.iter().sum::<f64>() - 1.0).abs();
        if defect > NORMALIZATION_TOL {
            out.push(Violation::Normalization { defect });
        }
        for i in 0..n {
            let defect = (self.gram[(i, i)] - 1.0).norm();
            if defect > DIAGONAL_TOL {
                out.push(Violation::DiagonalNotUnit { index: i, defect });
            }
        }
        let herm = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (self.gram[(i, j)] - self.gram[(j, i)].conj()).norm())
            .fold(0.0, f64::max);
        if herm > 0.0 {
            out.push(Violation::NotHermitian { defect: herm });
        }
        let min_eigenvalue = min_eigenvalue(&self.gram);
        if min_eigenvalue < -PSD_TOL {
            out.push(Violation::NotPositiveSemidefinite { min_eigenvalue });
        }
        for i in 0..n {
            for j in 0..n {
                let magnitude = self.gram[(i, j)].norm();
                if magnitude > 1.0 + ENTRY_BOUND_TOL {
                    out.push(Violation::EntryExceedsUnit {
                        row: i,
                        col: j,
                        magnitude,
                    });
                }
            }
        }
        out
    }

    /// `x_{l'l} = λ_{l'l} √(λ_{l'} λ_l)` with a zero diagonal.
    pub fn x_matrix(&self) -> DMatrix<Complex64> {
        let n = self.p.get();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(0.0, 0.0)
            } else {
                self.gram[(i, j)] * (self.lambdas[i] * self.lambdas[j]).sqrt()
            }
        })
    }

    pub fn parameters(&self) -> ProtocolParameters {
        ProtocolParameters {
            lambdas: self.lambdas.clone(),
            x: self.x_matrix(),
        }
    }

    /// Factors `gram = V†V` through its eigendecomposition and returns the columns of `V`,
    /// zero-padded to `ambient_dim`.
    pub fn realize_vectors(&self, ambient_dim: usize) -> Result<VectorRealization> {
        let n = self.p.get();
        if ambient_dim < n {
            return Err(Error::RealizationFailure(format!(
                "ambient dimension {ambient_dim} is smaller than p = {n}"
            )));
        }
        let eig = self.gram.clone().symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -PSD_TOL {
            return Err(Error::RealizationFailure(format!(
                "Gram matrix has eigenvalue {min:e}"
            )));
        }
        let roots = eig
            .eigenvalues
            .map(|w| if w < EIGEN_CLAMP { 0.0 } else { w.sqrt() });
        // V = diag(√w) U†
        let v = DMatrix::from_fn(n, n, |j, l| eig.eigenvectors[(l, j)].conj() * roots[j]);
        let vectors = (0..n)
            .map(|l| DVector::from_fn(ambient_dim, |i, _| if i < n { v[(i, l)] } else { Complex64::new(0.0, 0.0) }))
            .collect();
        let realization = VectorRealization {
            ambient_dim,
            vectors,
        };
        let defect = (realization.gram() - &self.gram)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if defect > REALIZATION_TOL {
            return Err(Error::RealizationFailure(format!(
                "realized Gram deviates by {defect:e}"
            )));
        }
        Ok(realization)
    }
}

fn min_eigenvalue(m: &DMatrix<Complex64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Samples an ensemble: weights uniform on the simplex, Gram matrix of `p` random unit
/// vectors in `ℝ^p` (when `real`) or `ℂ^p`.
pub fn random_ensemble(p: PrimeDim, real: bool, seed: u64) -> SchmidtEnsemble {
    let n = p.get();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exps: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut rng)).collect();
    let total: f64 = exps.iter().sum();
    let lambdas = exps.iter().map(|e| e / total).collect();

    let vectors: Vec<DVector<Complex64>> = (0..n)
        .map(|_| {
            let v = DVector::from_fn(n, |_, _| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = if real {
                    0.0
                } else {
                    StandardNormal.sample(&mut rng)
                };
                Complex64::new(re, im)
            });
            let norm = v.norm();
            v / Complex64::new(norm, 0.0)
        })
        .collect();
    let mut gram = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for i in 0..n {
        gram[(i, i)] = Complex64::new(1.0, 0.0);
        for j in i + 1..n {
            let mut g = vectors[i].dotc(&vectors[j]);
            if real {
                g.im = 0.0;
            }
            gram[(i, j)] = g;
            gram[(j, i)] = g.conj();
        }
    }
    SchmidtEnsemble::new(p, lambdas, gram).expect("shapes are consistent")
}

//! Forward model of the interference protocol.
//!
//! For setting `s` the ancilla is rotated by `H_s` and projected on `|u_k⟩`, leaving the
//! inaccessible subsystem in
//!
//! ```text
//! |ψ_k^s⟩ ∝ Σ_l ω^{-2⁻¹s·l² - k·l} √λ_l |λ_l⟩
//! ```
//!
//! with squared norm `N_ks / p`. The measured quantity is the overlap `a_ks = ⟨ψ_0^0|ψ_k^s⟩`.
//! Two independent routes produce the record: a closed formula in `λ` and `x`
//! ([`simulate_record`]) and a literal tensor-product computation on explicit vectors
//! ([`oracle_record`]).

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ensemble::{ProtocolParameters, SchmidtEnsemble};
use crate::error::{Error, Result};
use crate::mub::build_family;
use crate::phase::{self, PrimeDim};

/// Projections with `N` at or below this are treated as having zero norm.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordSource {
    GramFormula,
    VectorOracle,
}

impl RecordSource {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordSource::GramFormula => "gram-formula",
            RecordSource::VectorOracle => "vector-oracle",
        }
    }
}

/// The table of measured overlaps `a_ks`, stored with row index `s` and column index `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub p: PrimeDim,
    pub a: DMatrix<Complex64>,
    pub noise_sigma: f64,
    pub seed: Option<u64>,
    pub source: RecordSource,
}

impl MeasurementRecord {
    /// `a_ks`.
    #[inline]
    pub fn get(&self, s: usize, k: usize) -> Complex64 {
        self.a[(s, k)]
    }

    /// Factor by which solver consistency gates are widened for noisy records.
    pub fn gate_scale(&self) -> f64 {
        (self.noise_sigma / 1e-12).max(1.0)
    }

    pub fn max_deviation(&self, other: &DMatrix<Complex64>) -> f64 {
        (&self.a - other).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// `N_ks` as the Hermitian form `Σ_{l',l} conj(c_{l'}) c_l (λ_l δ_{l'l} + x_{l'l})`. The
/// imaginary part vanishes for Hermitian `x` and is returned for diagnostics.
pub fn normalization_complex(
    p: PrimeDim,
    params: &ProtocolParameters,
    k: usize,
    s: usize,
) -> Complex64 {
    let n = p.get();
    let mut acc = Complex64::new(params.lambdas.iter().sum(), 0.0);
    for lp in 0..n {
        let cp = phase::amplitude(p, k, s, lp).conj();
        for l in 0..n {
            if l != lp {
                let phase = cp * phase::amplitude(p, k, s, l);
                acc += phase.to_complex() * params.x[(lp, l)];
            }
        }
    }
    acc
}

pub fn normalization(p: PrimeDim, params: &ProtocolParameters, k: usize, s: usize) -> f64 {
    normalization_complex(p, params, k, s).re
}

/// Unnormalized overlap `Σ_l ω^{-2⁻¹s·l² - k·l} y_l = √(N_00 N_ks) a_ks`.
pub fn unnormalized_overlap(
    p: PrimeDim,
    y: &[Complex64],
    k: usize,
    s: usize,
) -> Complex64 {
    y.iter()
        .enumerate()
        .map(|(l, &yl)| phase::amplitude(p, k, s, l).to_complex() * yl)
        .sum()
}

/// `a_ks` from protocol parameters.
pub fn overlap(p: PrimeDim, params: &ProtocolParameters, k: usize, s: usize) -> Result<Complex64> {
    let n00 = normalization(p, params, 0, 0);
    if n00 <= DEGENERATE_NORM {
        return Err(Error::DegenerateProjection { k: 0, s: 0, norm: n00 });
    }
    if k == 0 && s == 0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let nks = normalization(p, params, k, s);
    if nks <= DEGENERATE_NORM {
        return Err(Error::DegenerateProjection { k, s, norm: nks });
    }
    let y = params.y();
    Ok(unnormalized_overlap(p, &y, k, s) / (n00 * nks).sqrt())
}

/// Full `p × p` overlap table (rows `s`, columns `k`) from protocol parameters.
pub fn simulate_parameters(p: PrimeDim, params: &ProtocolParameters) -> Result<DMatrix<Complex64>> {
    let n = p.get();
    let n00 = normalization(p, params, 0, 0);
    if n00 <= DEGENERATE_NORM {
        return Err(Error::DegenerateProjection { k: 0, s: 0, norm: n00 });
    }
    let y = params.y();
    let mut a = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for s in 0..n {
        for k in 0..n {
            if s == 0 && k == 0 {
                a[(0, 0)] = Complex64::new(1.0, 0.0);
                continue;
            }
            let nks = normalization(p, params, k, s);
            if nks <= DEGENERATE_NORM {
                return Err(Error::DegenerateProjection { k, s, norm: nks });
            }
            a[(s, k)] = unnormalized_overlap(p, &y, k, s) / (n00 * nks).sqrt();
        }
    }
    Ok(a)
}

pub fn normalization_factor(e: &SchmidtEnsemble, k: usize, s: usize) -> f64 {
    normalization(e.p(), &e.parameters(), k, s)
}

/// Probability of ancilla outcome `k` under setting `s`: `N_ks / p`.
pub fn outcome_probability(e: &SchmidtEnsemble, k: usize, s: usize) -> f64 {
    normalization_factor(e, k, s) / e.p().get() as f64
}

pub fn compute_a(e: &SchmidtEnsemble, k: usize, s: usize) -> Result<Complex64> {
    overlap(e.p(), &e.parameters(), k, s)
}

pub fn simulate_record(e: &SchmidtEnsemble) -> Result<MeasurementRecord> {
    Ok(MeasurementRecord {
        p: e.p(),
        a: simulate_parameters(e.p(), &e.parameters())?,
        noise_sigma: 0.0,
        seed: None,
        source: RecordSource::GramFormula,
    })
}

/// Builds `|Ψ₀⟩ = Σ_l √λ_l |λ_l⟩ ⊗ |u_l⟩` on explicit vectors, applies `I ⊗ H_s`, projects
/// each `⟨u_k|` and takes overlaps of the normalized results with `|ψ_0^0⟩`.
pub fn oracle_record(e: &SchmidtEnsemble, ambient_dim: usize) -> Result<MeasurementRecord> {
    let p = e.p();
    let n = p.get();
    let realization = e.realize_vectors(ambient_dim)?;
    // Ψ as a (system × ancilla) coefficient matrix
    let psi = DMatrix::from_fn(ambient_dim, n, |i, l| {
        realization.vectors[l][i] * e.lambdas()[l].max(0.0).sqrt()
    });
    let family = build_family(p);

    let projected = |s: usize| -> Result<Vec<nalgebra::DVector<Complex64>>> {
        // (I ⊗ H)|Ψ⟩ has coefficients Ψ · Hᵀ
        let rotated = &psi * family.matrices[s].transpose();
        (0..n)
            .map(|k| {
                let col = rotated.column(k).into_owned();
                let norm_sqr = col.norm_squared();
                if norm_sqr * n as f64 <= DEGENERATE_NORM {
                    return Err(Error::DegenerateProjection {
                        k,
                        s,
                        norm: norm_sqr * n as f64,
                    });
                }
                Ok(col / Complex64::new(norm_sqr.sqrt(), 0.0))
            })
            .collect()
    };

    let reference = projected(0)?.swap_remove(0);
    let mut a = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for s in 0..n {
        let states = projected(s)?;
        for (k, state) in states.iter().enumerate() {
            a[(s, k)] = reference.dotc(state);
        }
    }
    a[(0, 0)] = Complex64::new(1.0, 0.0);
    Ok(MeasurementRecord {
        p,
        a,
        noise_sigma: 0.0,
        seed: None,
        source: RecordSource::VectorOracle,
    })
}

/// Adds independent `N(0, σ²)` noise to the real and imaginary part of every entry except the
/// reference `a_00`.
pub fn apply_noise(r: &MeasurementRecord, sigma: f64, seed: u64) -> MeasurementRecord {
    if sigma == 0.0 {
        return r.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma must be finite and non-negative");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = r.clone();
    let n = r.p.get();
    for s in 0..n {
        for k in 0..n {
            if s == 0 && k == 0 {
                continue;
            }
            let dre = normal.sample(&mut rng);
            let dim = normal.sample(&mut rng);
            out.a[(s, k)] += Complex64::new(dre, dim);
        }
    }
    out.noise_sigma = sigma;
    out.seed = Some(seed);
    out
}

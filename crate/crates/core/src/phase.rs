//! Modular arithmetic modulo a prime dimension and the roots-of-unity phases built from it.
//!
//! Every phase is carried as an exact integer exponent of a root of unity and turned into a
//! complex number once, at the point of use. For odd primes the root is `ω = e^{2πi/p}`. For
//! `p = 2` the quadratic phase `e^{-iφ} = -i` is a fourth root of unity, so all `p = 2` phases
//! live on the order-4 circle and `ω = -1` is written as `i²`.

use std::fmt;
use std::ops::Mul;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A prime dimension `p`, the Schmidt rank of the state being characterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct PrimeDim(usize);

impl PrimeDim {
    pub fn new(p: usize) -> Result<Self> {
        if is_prime(p as u64) {
            Ok(Self(p))
        } else {
            Err(Error::InvalidDimension(p))
        }
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0
    }

    /// Number of non-redundant settings, `(p - 1) / 2`. Zero for `p = 2`.
    #[inline]
    pub fn half(self) -> usize {
        (self.0 - 1) / 2
    }

    /// Order of the root of unity on which every phase of this dimension lives.
    #[inline]
    pub fn phase_order(self) -> usize {
        if self.0 == 2 {
            4
        } else {
            self.0
        }
    }

    /// Reduces an arbitrary integer to its residue in `0..p`.
    #[inline]
    pub fn reduce(self, n: i64) -> usize {
        n.rem_euclid(self.0 as i64) as usize
    }

    fn check_residue(self, r: usize) -> Result<()> {
        if r < self.0 {
            Ok(())
        } else {
            Err(Error::InvalidResidue {
                value: r as i64,
                modulus: self.0 as u64,
            })
        }
    }
}

impl TryFrom<usize> for PrimeDim {
    type Error = Error;

    fn try_from(p: usize) -> Result<Self> {
        Self::new(p)
    }
}

impl From<PrimeDim> for usize {
    fn from(p: PrimeDim) -> usize {
        p.0
    }
}

impl fmt::Display for PrimeDim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Trial division. Dimensions here are at most a few hundred.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n < 4 {
        return true;
    }
    if n % 2 == 0 {
        return false;
    }
    let mut d = 3;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 2;
    }
    true
}

/// Multiplicative inverse of `a` modulo `p`, in `1..p`.
pub fn mod_inverse(a: i64, p: PrimeDim) -> Result<usize> {
    let m = p.get() as i64;
    let a = a.rem_euclid(m);
    if a == 0 {
        return Err(Error::InvalidResidue {
            value: a,
            modulus: m as u64,
        });
    }
    // extended Euclid on (a, m)
    let (mut r0, mut r1) = (m, a);
    let (mut t0, mut t1) = (0i64, 1i64);
    while r1 != 0 {
        let q = r0 / r1;
        (r0, r1) = (r1, r0 - q * r1);
        (t0, t1) = (t1, t0 - q * t1);
    }
    debug_assert_eq!(r0, 1);
    Ok(t0.rem_euclid(m) as usize)
}

/// An exact root of unity `e^{2πi·exponent/order}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RootOfUnity {
    order: usize,
    exponent: usize,
}

impl RootOfUnity {
    pub fn new(order: usize, exponent: i64) -> Self {
        assert!(order > 0, "root of unity needs a positive order");
        Self {
            order,
            exponent: exponent.rem_euclid(order as i64) as usize,
        }
    }

    pub fn one(order: usize) -> Self {
        Self { order, exponent: 0 }
    }

    pub fn order(self) -> usize {
        self.order
    }

    pub fn exponent(self) -> usize {
        self.exponent
    }

    pub fn conj(self) -> Self {
        Self::new(self.order, -(self.exponent as i64))
    }

    pub fn pow(self, n: i64) -> Self {
        let e = (self.exponent as i128 * n as i128).rem_euclid(self.order as i128);
        Self {
            order: self.order,
            exponent: e as usize,
        }
    }

    /// Evaluates the phase. Quarter turns are returned exactly.
    pub fn to_complex(self) -> Complex64 {
        let (n, e) = (self.order, self.exponent);
        if (4 * e) % n == 0 {
            return match (4 * e) / n {
                0 => Complex64::new(1.0, 0.0),
                1 => Complex64::new(0.0, 1.0),
                2 => Complex64::new(-1.0, 0.0),
                _ => Complex64::new(0.0, -1.0),
            };
        }
        // shortest signed angle keeps the argument small
        let signed = if 2 * e > n { e as f64 - n as f64 } else { e as f64 };
        let (sin, cos) = (std::f64::consts::TAU * signed / n as f64).sin_cos();
        Complex64::new(cos, sin)
    }
}

impl Mul for RootOfUnity {
    type Output = RootOfUnity;

    fn mul(self, rhs: Self) -> Self {
        assert_eq!(self.order, rhs.order, "mixing roots of unity of different order");
        Self {
            order: self.order,
            exponent: (self.exponent + rhs.exponent) % self.order,
        }
    }
}

/// `ω^n` as an exact phase on the dimension's phase circle.
pub fn omega(p: PrimeDim, n: i64) -> RootOfUnity {
    let order = p.phase_order();
    let scale = (order / p.get()) as i64;
    RootOfUnity::new(order, p.reduce(n) as i64 * scale)
}

/// `(e^{-iφ})^{s·l²}`: `ω^{-2⁻¹·s·l²}` for odd `p`, `(-i)^{s·l²}` for `p = 2`.
pub fn quadratic(p: PrimeDim, s: usize, l: usize) -> RootOfUnity {
    let sl2 = (s * l * l) as i64;
    if p.get() == 2 {
        // -i = i³
        RootOfUnity::new(4, 3 * sl2)
    } else {
        let inv2 = mod_inverse(2, p).expect("2 is invertible modulo an odd prime") as i64;
        RootOfUnity::new(p.get(), -(inv2 * (sl2 % p.get() as i64)))
    }
}

/// Coefficient `ω^{-2⁻¹·s·l² - k·l}` multiplying `√λ_l |λ_l⟩` in the projected state for
/// setting `s` and ancilla outcome `k`.
pub fn amplitude(p: PrimeDim, k: usize, s: usize, l: usize) -> RootOfUnity {
    quadratic(p, s, l) * omega(p, -((k * l) as i64))
}

/// `e^{2πi·(n mod p)/p}`.
pub fn omega_pow(p: PrimeDim, n: i64) -> Complex64 {
    omega(p, n).to_complex()
}

/// The diagonal phase of `D^s` at position `l`.
pub fn quadratic_phase(p: PrimeDim, s: usize, l: usize) -> Result<Complex64> {
    p.check_residue(s)?;
    p.check_residue(l)?;
    Ok(quadratic(p, s, l).to_complex())
}

/// Quadratic Gauss sum `G(s, k) = Σ_l ω^{s·l² + k·l}` by direct summation.
pub fn gauss_sum(p: PrimeDim, s: i64, k: i64) -> Complex64 {
    let (s, k) = (p.reduce(s) as i64, p.reduce(k) as i64);
    (0..p.get() as i64)
        .map(|l| omega(p, s * l * l + k * l).to_complex())
        .sum()
}

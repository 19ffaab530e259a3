use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Once;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

use super::{is_prime, Rational};
use crate::error::{Error, Result};

const FLOAT_ZERO_TOL: f64 = 1e-12;

static COMPOSITE_WARNING: Once = Once::new();

fn warn_composite(dim: u32) {
    COMPOSITE_WARNING.call_once(|| {
        log::warn!(
            "dimension {dim} is composite: cyclotomic elements are not canonical, \
             zero tests and equality fall back to floating point at {FLOAT_ZERO_TOL:e}"
        );
    });
}

/// An element of the cyclotomic field `Q(ζ_d)`, stored as rational
/// coefficients of `1, ζ, …, ζ^{d-1}`.
///
/// For prime `d` every value is kept in canonical form: the coefficient of
/// `ζ^{d-1}` is zero, which makes the representation unique because the
/// minimal polynomial of `ζ` is then `1 + x + … + x^{d-1}`. For composite `d`
/// the representation is not unique and equality is decided numerically.
#[derive(Clone, Debug)]
pub struct CycloElem {
    dim: u32,
    coeffs: Vec<Rational>,
}

impl CycloElem {
    /// Builds an element from its coefficient vector and reduces it.
    pub fn new(dim: u32, coeffs: Vec<Rational>) -> Result<Self> {
        check_dim(dim)?;
        if coeffs.len() != dim as usize {
            return Err(Error::InvalidConfig(format!(
                "expected {dim} coefficients, got {}",
                coeffs.len()
            )));
        }
        Ok(Self { dim, coeffs }.canonical_reduce())
    }

    /// Builds an element from integer coefficients.
    pub fn from_ints(dim: u32, coeffs: &[i64]) -> Result<Self> {
        Self::new(
            dim,
            coeffs.iter().map(|&c| Rational::from_integer(BigInt::from(c))).collect(),
        )
    }

    pub fn zero(dim: u32) -> Self {
        assert!(dim >= 2, "dimension must be at least 2");
        Self {
            dim,
            coeffs: vec![Rational::zero(); dim as usize],
        }
    }

    pub fn one(dim: u32) -> Self {
        Self::from_rational(dim, Rational::one())
    }

    pub fn from_rational(dim: u32, value: Rational) -> Self {
        let mut out = Self::zero(dim);
        out.coeffs[0] = value;
        out
    }

    /// `ζ^e` for a primitive `d`-th root of unity; the exponent is taken mod `d`.
    pub fn zeta_pow(dim: u32, exp: i64) -> Result<Self> {
        check_dim(dim)?;
        let mut out = Self::zero(dim);
        out.coeffs[exp.rem_euclid(dim as i64) as usize] = Rational::one();
        Ok(out.canonical_reduce())
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn coeffs(&self) -> &[Rational] {
        &self.coeffs
    }

    /// Whether equality on this element's dimension is exact.
    pub fn is_canonical(&self) -> bool {
        is_prime(self.dim)
    }

    /// Reduces modulo `1 + ζ + … + ζ^{d-1}` for prime `d` by subtracting the
    /// top coefficient from every coefficient. Composite dimensions are
    /// returned unchanged.
    pub fn canonical_reduce(mut self) -> Self {
        if !is_prime(self.dim) {
            return self;
        }
        let top = self.coeffs[self.dim as usize - 1].clone();
        if !top.is_zero() {
            for c in &mut self.coeffs {
                *c -= &top;
            }
        }
        self
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self> {
        self.same_dim(other)?;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self { dim: self.dim, coeffs }.canonical_reduce())
    }

    pub fn checked_mul(&self, other: &Self) -> Result<Self> {
        self.same_dim(other)?;
        let d = self.dim as usize;
        let mut coeffs = vec![Rational::zero(); d];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in other.coeffs.iter().enumerate() {
                if !b.is_zero() {
                    coeffs[(i + j) % d] += a * b;
                }
            }
        }
        Ok(Self { dim: self.dim, coeffs }.canonical_reduce())
    }

    /// Multiplies by `ζ^e`, a cyclic rotation of the coefficients.
    pub fn mul_zeta(&self, exp: i64) -> Self {
        let d = self.dim as usize;
        let shift = exp.rem_euclid(d as i64) as usize;
        if shift == 0 {
            return self.clone();
        }
        let mut coeffs = vec![Rational::zero(); d];
        for (i, c) in self.coeffs.iter().enumerate() {
            coeffs[(i + shift) % d] = c.clone();
        }
        Self { dim: self.dim, coeffs }.canonical_reduce()
    }

    pub fn scale(&self, factor: &Rational) -> Self {
        Self {
            dim: self.dim,
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
        }
    }

    /// Complex conjugate: `ζ^t ↦ ζ^{-t}`.
    pub fn conj(&self) -> Self {
        let d = self.dim as usize;
        let mut coeffs = vec![Rational::zero(); d];
        for (t, c) in self.coeffs.iter().enumerate() {
            coeffs[(d - t) % d] = c.clone();
        }
        Self { dim: self.dim, coeffs }.canonical_reduce()
    }

    pub fn is_zero(&self) -> bool {
        if is_prime(self.dim) {
            self.coeffs.iter().all(Zero::is_zero)
        } else {
            if self.coeffs.iter().all(Zero::is_zero) {
                return true;
            }
            warn_composite(self.dim);
            self.to_complex().norm() < FLOAT_ZERO_TOL
        }
    }

    /// Evaluates `Σ c_t e^{2πi t/d}`.
    pub fn to_complex(&self) -> Complex64 {
        let d = self.dim as f64;
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(t, c)| {
                let angle = 2.0 * PI * t as f64 / d;
                Complex64::from_polar(rational_to_f64(c), angle)
            })
            .sum()
    }

    /// The rational value of the element, when it lies in `Q`.
    pub fn as_rational(&self) -> Option<Rational> {
        // for composite dimensions this can miss constants hidden behind a
        // non-canonical representation
        self.coeffs[1..]
            .iter()
            .all(Zero::is_zero)
            .then(|| self.coeffs[0].clone())
    }

    /// Whether every coefficient's numerator is divisible by `n`.
    pub fn numerators_divisible_by(&self, n: u32) -> bool {
        let n = BigInt::from(n);
        self.coeffs.iter().all(|c| c.numer().is_multiple_of(&n))
    }

    fn same_dim(&self, other: &Self) -> Result<()> {
        if self.dim == other.dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            })
        }
    }
}

fn check_dim(dim: u32) -> Result<()> {
    if dim < 2 {
        Err(Error::InvalidDimension(dim))
    } else {
        Ok(())
    }
}

pub fn rational_to_f64(r: &Rational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or_else(|| {
        // huge numerator/denominator: shift to a representable range
        let n = r.numer().to_f64().unwrap_or(f64::MAX);
        let d = r.denom().to_f64().unwrap_or(f64::MAX);
        n / d
    })
}

impl PartialEq for CycloElem {
    fn eq(&self, other: &Self) -> bool {
        if self.dim != other.dim {
            return false;
        }
        if is_prime(self.dim) {
            self.coeffs == other.coeffs
        } else {
            self.coeffs == other.coeffs
                || (self.to_complex() - other.to_complex()).norm() < FLOAT_ZERO_TOL
        }
    }
}

impl fmt::Display for CycloElem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (t, c) in self.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let (sign, mag) = if c.is_negative() {
                ("-", -c.clone())
            } else {
                ("+", c.clone())
            };
            if first {
                if sign == "-" {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            first = false;
            match (t, mag.is_one()) {
                (0, _) => write!(f, "{mag}")?,
                (_, true) => write!(f, "ζ^{t}")?,
                (_, false) => write!(f, "{mag}·ζ^{t}")?,
            }
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

impl Add for &CycloElem {
    type Output = CycloElem;

    fn add(self, rhs: &CycloElem) -> CycloElem {
        self.checked_add(rhs).expect("cyclotomic dimension mismatch")
    }
}

impl Sub for &CycloElem {
    type Output = CycloElem;

    fn sub(self, rhs: &CycloElem) -> CycloElem {
        self.checked_add(&-rhs).expect("cyclotomic dimension mismatch")
    }
}

impl Mul for &CycloElem {
    type Output = CycloElem;

    fn mul(self, rhs: &CycloElem) -> CycloElem {
        self.checked_mul(rhs).expect("cyclotomic dimension mismatch")
    }
}

impl Neg for &CycloElem {
    type Output = CycloElem;

    fn neg(self) -> CycloElem {
        CycloElem {
            dim: self.dim,
            coeffs: self.coeffs.iter().map(|c| -c).collect(),
        }
    }
}

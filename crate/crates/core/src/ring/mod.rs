//! Coefficient arithmetic for qudit amplitudes.
//!
//! Two backends implement [`Amplitude`]: [`CycloElem`], exact elements of the
//! cyclotomic field `Q(ζ_d)`, and [`ComplexF`], plain double precision
//! complex numbers. Global `1/√d` factors never enter either backend; they
//! are carried by the state (see `register`).

mod cyclo;

use std::fmt;
use std::ops::{Add, Mul};

use num_bigint::BigInt;
pub use num_complex::Complex64 as ComplexF;
use num_traits::Zero;
use serde_json::Value;

pub use cyclo::CycloElem;
pub use cyclo::rational_to_f64;

/// Arbitrary precision rational number, always in lowest terms.
pub type Rational = num_rational::BigRational;

/// Absolute tolerance of the floating backend.
pub const FLOAT_TOL: f64 = 1e-12;

pub fn is_prime(n: u32) -> bool {
    n >= 2 && (2..).take_while(|p| p * p <= n).all(|p| !n.is_multiple_of(p))
}

pub fn rational(numer: i64, denom: i64) -> Rational {
    Rational::new(BigInt::from(numer), BigInt::from(denom))
}

/// `n/d` rendering used by every serialized artifact, including `d = 1`.
pub fn rational_string(r: &Rational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// A probability or squared norm, exact whenever the backend allows it.
#[derive(Clone, Debug, PartialEq)]
pub enum Probability {
    Exact(Rational),
    Approx(f64),
}

impl Probability {
    pub fn zero() -> Self {
        Probability::Exact(Rational::zero())
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Probability::Exact(r) => rational_to_f64(r),
            Probability::Approx(x) => *x,
        }
    }

    pub fn exact(&self) -> Option<&Rational> {
        match self {
            Probability::Exact(r) => Some(r),
            Probability::Approx(_) => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Probability::Exact(r) => r.is_zero(),
            Probability::Approx(x) => x.abs() < FLOAT_TOL,
        }
    }

    pub fn scale(&self, factor: &Rational) -> Self {
        match self {
            Probability::Exact(r) => Probability::Exact(r * factor),
            Probability::Approx(x) => Probability::Approx(x * rational_to_f64(factor)),
        }
    }

    pub fn div(&self, other: &Probability) -> Self {
        match (self, other) {
            (Probability::Exact(a), Probability::Exact(b)) => Probability::Exact(a / b),
            _ => Probability::Approx(self.to_f64() / other.to_f64()),
        }
    }
}

impl Add for &Probability {
    type Output = Probability;

    fn add(self, rhs: &Probability) -> Probability {
        match (self, rhs) {
            (Probability::Exact(a), Probability::Exact(b)) => Probability::Exact(a + b),
            _ => Probability::Approx(self.to_f64() + rhs.to_f64()),
        }
    }
}

impl Mul for &Probability {
    type Output = Probability;

    fn mul(self, rhs: &Probability) -> Probability {
        match (self, rhs) {
            (Probability::Exact(a), Probability::Exact(b)) => Probability::Exact(a * b),
            _ => Probability::Approx(self.to_f64() * rhs.to_f64()),
        }
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Probability::Exact(r) => write!(f, "{r}"),
            Probability::Approx(x) => write!(f, "{x:.12}"),
        }
    }
}

/// Scalar type of a qudit state: either exact cyclotomic or floating complex.
///
/// Every method that needs the qudit dimension receives it explicitly so the
/// floating backend can stay a bare complex number.
pub trait Amplitude: Clone + fmt::Debug + Send + Sync + 'static {
    /// `true` when equality and zero tests are exact (for prime dimensions).
    const EXACT: bool;
    const MODE: &'static str;

    fn zero(dim: u32) -> Self;
    fn from_rational(dim: u32, value: &Rational) -> Self;
    /// `ζ^exp` with `ζ = e^{2πi/d}`.
    fn root_of_unity(dim: u32, exp: i64) -> Self;

    fn add(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn mul_root(&self, dim: u32, exp: i64) -> Self;
    fn scale(&self, factor: &Rational) -> Self;
    fn conj(&self) -> Self;

    fn is_zero(&self) -> bool;
    fn to_complex(&self) -> ComplexF;
    fn abs_sqr(&self) -> Probability;
    /// Value as a rational if it is real and rational (floating values never are).
    fn as_rational(&self) -> Option<Rational>;
    /// Whether the amplitude can absorb a factor `1/n` without leaving the
    /// integers; drives the scale normalisation of states.
    fn divisible_by(&self, n: u32) -> bool;
    fn same_as(&self, other: &Self) -> bool;
    fn to_json(&self) -> Value;
}

impl Amplitude for CycloElem {
    const EXACT: bool = true;
    const MODE: &'static str = "exact";

    fn zero(dim: u32) -> Self {
        CycloElem::zero(dim)
    }

    fn from_rational(dim: u32, value: &Rational) -> Self {
        CycloElem::from_rational(dim, value.clone())
    }

    fn root_of_unity(dim: u32, exp: i64) -> Self {
        CycloElem::zeta_pow(dim, exp).expect("dimension validated by caller")
    }

    fn add(&self, other: &Self) -> Self {
        self + other
    }

    fn mul(&self, other: &Self) -> Self {
        self * other
    }

    fn mul_root(&self, _dim: u32, exp: i64) -> Self {
        self.mul_zeta(exp)
    }

    fn scale(&self, factor: &Rational) -> Self {
        CycloElem::scale(self, factor)
    }

    fn conj(&self) -> Self {
        CycloElem::conj(self)
    }

    fn is_zero(&self) -> bool {
        CycloElem::is_zero(self)
    }

    fn to_complex(&self) -> ComplexF {
        CycloElem::to_complex(self)
    }

    fn abs_sqr(&self) -> Probability {
        let sq = self * &CycloElem::conj(self);
        match sq.as_rational() {
            Some(r) if self.is_canonical() => Probability::Exact(r),
            _ => Probability::Approx(self.to_complex().norm_sqr()),
        }
    }

    fn as_rational(&self) -> Option<Rational> {
        CycloElem::as_rational(self)
    }

    fn divisible_by(&self, n: u32) -> bool {
        self.numerators_divisible_by(n)
    }

    fn same_as(&self, other: &Self) -> bool {
        self == other
    }

    fn to_json(&self) -> Value {
        Value::Array(
            self.coeffs()
                .iter()
                .map(|c| Value::String(rational_string(c)))
                .collect(),
        )
    }
}

impl Amplitude for ComplexF {
    const EXACT: bool = false;
    const MODE: &'static str = "float";

    fn zero(_dim: u32) -> Self {
        ComplexF::new(0.0, 0.0)
    }

    fn from_rational(_dim: u32, value: &Rational) -> Self {
        ComplexF::new(rational_to_f64(value), 0.0)
    }

    fn root_of_unity(dim: u32, exp: i64) -> Self {
        let t = exp.rem_euclid(dim as i64);
        // exact values for the real axis keep float traces free of 1e-16 noise
        if t == 0 {
            return ComplexF::new(1.0, 0.0);
        }
        if 2 * t == dim as i64 {
            return ComplexF::new(-1.0, 0.0);
        }
        ComplexF::from_polar(1.0, 2.0 * std::f64::consts::PI * t as f64 / dim as f64)
    }

    fn add(&self, other: &Self) -> Self {
        self + other
    }

    fn mul(&self, other: &Self) -> Self {
        self * other
    }

    fn mul_root(&self, dim: u32, exp: i64) -> Self {
        self * Self::root_of_unity(dim, exp)
    }

    fn scale(&self, factor: &Rational) -> Self {
        self * rational_to_f64(factor)
    }

    fn conj(&self) -> Self {
        ComplexF::conj(self)
    }

    fn is_zero(&self) -> bool {
        self.norm() < FLOAT_TOL
    }

    fn to_complex(&self) -> ComplexF {
        *self
    }

    fn abs_sqr(&self) -> Probability {
        Probability::Approx(self.norm_sqr())
    }

    fn as_rational(&self) -> Option<Rational> {
        None
    }

    fn divisible_by(&self, _n: u32) -> bool {
        true
    }

    fn same_as(&self, other: &Self) -> bool {
        (self - other).norm() < FLOAT_TOL
    }

    fn to_json(&self) -> Value {
        let num = |x: f64| {
            serde_json::Number::from_f64(x)
                .map(Value::Number)
                .unwrap_or(Value::Null)
        };
        Value::Array(vec![num(self.re), num(self.im)])
    }
}

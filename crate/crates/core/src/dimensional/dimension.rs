use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_rational::Rational64;
use num_traits::{Signed, Zero};

/// Exponents of the fundamental dimensions, one entry per declared
/// dimension (e.g. `[M, L, T]`).
///
/// Adding two vectors corresponds to multiplying the underlying quantities.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DimensionVector(Vec<Rational64>);

impl DimensionVector {
    pub fn new(exponents: Vec<Rational64>) -> Self {
        Self(exponents)
    }

    pub fn from_integers(exponents: &[i64]) -> Self {
        Self(exponents.iter().map(|&e| Rational64::from_integer(e)).collect())
    }

    pub fn dimensionless(len: usize) -> Self {
        Self(vec![Rational64::zero(); len])
    }

    /// Shorthand for the default `[M, L, T]` basis.
    pub fn mlt(mass: i64, length: i64, time: i64) -> Self {
        Self::from_integers(&[mass, length, time])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn exponents(&self) -> &[Rational64] {
        &self.0
    }

    pub fn is_dimensionless(&self) -> bool {
        self.0.iter().all(Zero::is_zero)
    }

    pub fn pow(&self, exponent: Rational64) -> Self {
        Self(self.0.iter().map(|e| e * exponent).collect())
    }

    /// Formats the vector with the supplied dimension symbols, e.g. `M L T^-2`.
    pub fn display_with(&self, symbols: &[String]) -> String {
        let parts: Vec<String> = self
            .0
            .iter()
            .zip(symbols)
            .filter(|(e, _)| !e.is_zero())
            .map(|(e, s)| {
                if *e == Rational64::from_integer(1) {
                    s.clone()
                } else {
                    format!("{}^{}", s, format_rational(e))
                }
            })
            .collect();
        if parts.is_empty() {
            "1".to_string()
        } else {
            parts.join(" ")
        }
    }
}

impl fmt::Display for DimensionVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(format_rational).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

/// `3`, `-1`, `1/2`, `-3/2`.
pub fn format_rational(r: &Rational64) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parses `"3"`, `"-1/2"` or `" 1 / 2 "`.
pub fn parse_rational(s: &str) -> Option<Rational64> {
    let s = s.trim();
    match s.split_once('/') {
        Some((n, d)) => {
            let n: i64 = n.trim().parse().ok()?;
            let d: i64 = d.trim().parse().ok()?;
            if d == 0 {
                return None;
            }
            Some(Rational64::new(n, d))
        }
        None => s.parse::<i64>().ok().map(Rational64::from_integer),
    }
}

/// Exponent as `f64`, used when evaluating monomials numerically.
pub fn rational_to_f64(r: &Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// `base^exponent` with an exact path for integer exponents.
pub fn rational_pow(base: f64, exponent: &Rational64) -> f64 {
    if exponent.is_integer() {
        let e = *exponent.numer();
        if e.abs() <= i32::MAX as i64 {
            return base.powi(e as i32);
        }
    }
    if *exponent.denom() == 2 && exponent.numer().abs() == 1 {
        let root = base.sqrt();
        return if exponent.is_positive() { root } else { 1.0 / root };
    }
    base.powf(rational_to_f64(exponent))
}

impl Add for &DimensionVector {
    type Output = DimensionVector;
    fn add(self, rhs: &DimensionVector) -> DimensionVector {
        assert_eq!(self.len(), rhs.len(), "dimension basis mismatch");
        DimensionVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Add for DimensionVector {
    type Output = DimensionVector;
    fn add(self, rhs: DimensionVector) -> DimensionVector {
        &self + &rhs
    }
}

impl Sub for &DimensionVector {
    type Output = DimensionVector;
    fn sub(self, rhs: &DimensionVector) -> DimensionVector {
        assert_eq!(self.len(), rhs.len(), "dimension basis mismatch");
        DimensionVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Sub for DimensionVector {
    type Output = DimensionVector;
    fn sub(self, rhs: DimensionVector) -> DimensionVector {
        &self - &rhs
    }
}

impl Neg for &DimensionVector {
    type Output = DimensionVector;
    fn neg(self) -> DimensionVector {
        DimensionVector(self.0.iter().map(|e| -e).collect())
    }
}

impl Mul<Rational64> for &DimensionVector {
    type Output = DimensionVector;
    fn mul(self, rhs: Rational64) -> DimensionVector {
        self.pow(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn addition_is_quantity_multiplication() {
        let velocity = DimensionVector::mlt(0, 1, -1);
        let time = DimensionVector::mlt(0, 0, 1);
        assert_eq!(&velocity + &time, DimensionVector::mlt(0, 1, 0));
        assert!((&velocity - &velocity).is_dimensionless());
    }

    #[test]
    fn rational_text_round_trip() {
        for s in ["1", "-2", "1/2", "-3/2"] {
            assert_eq!(format_rational(&parse_rational(s).unwrap()), s);
        }
        assert_eq!(parse_rational("2/4"), Some(Rational64::new(1, 2)));
        assert_eq!(parse_rational("1/0"), None);
        assert_eq!(parse_rational("x"), None);
    }

    #[test]
    fn half_powers_use_square_roots() {
        assert_eq!(rational_pow(9.81 * 0.8, &Rational64::new(1, 2)), (9.81f64 * 0.8).sqrt());
        assert_eq!(rational_pow(4.0, &Rational64::new(-1, 2)), 0.5);
        assert_eq!(rational_pow(3.0, &Rational64::from_integer(-2)), 1.0 / 9.0);
    }

    #[test]
    fn display_uses_symbols() {
        let symbols: Vec<String> = ["M", "L", "T"].iter().map(|s| s.to_string()).collect();
        assert_eq!(DimensionVector::mlt(1, 1, -2).display_with(&symbols), "M L T^-2");
        assert_eq!(DimensionVector::mlt(0, 0, 0).display_with(&symbols), "1");
    }
}

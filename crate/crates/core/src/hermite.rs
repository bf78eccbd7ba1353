//! Exact polynomial calculus against the standard Gaussian weight.
//!
//! Polynomials are carried in both the power basis and the basis of
//! probabilists' Hermite polynomials `g_n`, with all arithmetic done over
//! arbitrary-precision rationals.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Rational;

/// Default cap on polynomial degree accepted from configuration.
pub const DEFAULT_MAX_DEGREE: usize = 15;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolynomialError {
    #[error("degree {degree} exceeds the configured maximum {max}")]
    DegreeTooLarge { degree: usize, max: usize },
    #[error("cannot parse rational coefficient {0:?}")]
    BadCoefficient(String),
    #[error("unknown basis {0:?}, expected \"power\" or \"hermite\"")]
    UnknownBasis(String),
}

/// A univariate polynomial with exact rational coefficients.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Polynomial {
    power: Vec<Rational>,
    hermite: Vec<Rational>,
}

fn trim(mut v: Vec<Rational>) -> Vec<Rational> {
    while v.last().is_some_and(Zero::is_zero) {
        v.pop();
    }
    v
}

fn rat(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

fn factorial(n: usize) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

/// E[ξⁿ] for a standard Gaussian ξ: `(n-1)!!` for even n, zero for odd n.
pub fn gaussian_moment(n: usize) -> Rational {
    if n % 2 == 1 {
        return Rational::zero();
    }
    let mut acc = BigInt::one();
    let mut k = n;
    while k > 1 {
        acc *= BigInt::from(k - 1);
        k -= 2;
    }
    Rational::from_integer(acc)
}

/// Precomputed table of Gaussian moments up to a fixed order.
///
/// The table is filled once at construction and never mutated, so a shared
/// instance can be read from any thread.
#[derive(Clone, Debug)]
pub struct GaussianMoments {
    table: Vec<Rational>,
}

impl GaussianMoments {
    pub fn new(max_order: usize) -> Self {
        Self { table: (0..=max_order).map(gaussian_moment).collect() }
    }

    pub fn max_order(&self) -> usize {
        self.table.len() - 1
    }

    /// Returns E[ξⁿ], computing it directly when beyond the table.
    pub fn get(&self, n: usize) -> Rational {
        self.table.get(n).cloned().unwrap_or_else(|| gaussian_moment(n))
    }
}

impl Default for GaussianMoments {
    fn default() -> Self {
        Self::new(2 * DEFAULT_MAX_DEGREE)
    }
}

/// Power-basis coefficients of `g_0, ..., g_n`.
fn hermite_table(n: usize) -> Vec<Vec<Rational>> {
    let mut table: Vec<Vec<Rational>> = Vec::with_capacity(n + 1);
    table.push(vec![Rational::one()]);
    if n >= 1 {
        table.push(vec![Rational::zero(), Rational::one()]);
    }
    for k in 1..n {
        let mut next = vec![Rational::zero(); k + 2];
        for (i, c) in table[k].iter().enumerate() {
            next[i + 1] += c;
        }
        let scale = rat(k as i64);
        for (i, c) in table[k - 1].iter().enumerate() {
            next[i] -= c * &scale;
        }
        table.push(next);
    }
    table
}

fn mul_coeffs(a: &[Rational], b: &[Rational]) -> Vec<Rational> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![Rational::zero(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if x.is_zero() {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn expectation(coeffs: &[Rational]) -> Rational {
    coeffs
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.is_zero())
        .map(|(k, c)| c * gaussian_moment(k))
        .fold(Rational::zero(), |a, b| a + b)
}

/// Converts power-basis coefficients to Hermite-basis coefficients via
/// `c_n = E[p(ξ) g_n(ξ)] / n!`.
pub fn to_hermite(power: &[Rational]) -> Vec<Rational> {
    let power = trim(power.to_vec());
    if power.is_empty() {
        return Vec::new();
    }
    let table = hermite_table(power.len() - 1);
    let out = table
        .iter()
        .enumerate()
        .map(|(n, g)| expectation(&mul_coeffs(&power, g)) / Rational::from_integer(factorial(n)))
        .collect();
    trim(out)
}

/// Converts Hermite-basis coefficients back to the power basis.
pub fn from_hermite(hermite: &[Rational]) -> Vec<Rational> {
    let hermite = trim(hermite.to_vec());
    if hermite.is_empty() {
        return Vec::new();
    }
    let table = hermite_table(hermite.len() - 1);
    let mut out = vec![Rational::zero(); hermite.len()];
    for (c, g) in hermite.iter().zip(&table) {
        if c.is_zero() {
            continue;
        }
        for (i, a) in g.iter().enumerate() {
            out[i] += c * a;
        }
    }
    trim(out)
}

impl Polynomial {
    pub fn zero() -> Self {
        Self { power: Vec::new(), hermite: Vec::new() }
    }

    pub fn from_power(coeffs: Vec<Rational>) -> Self {
        let power = trim(coeffs);
        let hermite = to_hermite(&power);
        Self { power, hermite }
    }

    pub fn from_hermite(coeffs: Vec<Rational>) -> Self {
        let power = from_hermite(&coeffs);
        Self { power, hermite: trim(coeffs) }
    }

    pub fn from_power_i64(coeffs: &[i64]) -> Self {
        Self::from_power(coeffs.iter().map(|&c| rat(c)).collect())
    }

    /// The monomial `x ↦ xⁿ`.
    pub fn monomial(n: usize) -> Self {
        let mut c = vec![Rational::zero(); n + 1];
        c[n] = Rational::one();
        Self::from_power(c)
    }

    pub fn power_coeffs(&self) -> &[Rational] {
        &self.power
    }

    pub fn hermite_coeffs(&self) -> &[Rational] {
        &self.hermite
    }

    /// Coefficient of `xᵏ`, zero beyond the degree.
    pub fn coeff(&self, k: usize) -> Rational {
        self.power.get(k).cloned().unwrap_or_else(Rational::zero)
    }

    /// Coefficient of `g_k`, zero beyond the degree.
    pub fn hermite_coeff(&self, k: usize) -> Rational {
        self.hermite.get(k).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn degree(&self) -> usize {
        self.power.len().saturating_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.power.is_empty()
    }

    /// True when every even-degree coefficient vanishes.
    pub fn is_odd(&self) -> bool {
        self.power.iter().step_by(2).all(Zero::is_zero)
    }

    pub fn check_degree(&self, max: usize) -> Result<(), PolynomialError> {
        if self.degree() > max {
            return Err(PolynomialError::DegreeTooLarge { degree: self.degree(), max });
        }
        Ok(())
    }

    pub fn derivative(&self) -> Self {
        let coeffs = self
            .power
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| c * rat(k as i64))
            .collect();
        Self::from_power(coeffs)
    }

    pub fn nth_derivative(&self, m: usize) -> Self {
        (0..m).fold(self.clone(), |p, _| p.derivative())
    }

    pub fn scale(&self, s: &Rational) -> Self {
        Self::from_power(self.power.iter().map(|c| c * s).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        let len = self.power.len().max(other.power.len());
        Self::from_power((0..len).map(|k| self.coeff(k) + other.coeff(k)).collect())
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self::from_power(mul_coeffs(&self.power, &other.power))
    }

    pub fn eval(&self, x: &Rational) -> Rational {
        self.power.iter().rev().fold(Rational::zero(), |acc, c| acc * x + c)
    }

    /// Power-basis coefficients rounded to double precision.
    pub fn power_coeffs_f64(&self) -> Vec<f64> {
        self.power.iter().map(|c| c.to_f64().unwrap_or(f64::NAN)).collect()
    }

    pub fn eval_f64(&self, x: f64) -> f64 {
        horner(&self.power_coeffs_f64(), x)
    }

    /// Nonzero power-basis terms as `(degree, coefficient)`.
    pub fn terms(&self) -> impl Iterator<Item = (usize, &Rational)> {
        self.power.iter().enumerate().filter(|(_, c)| !c.is_zero())
    }
}

/// Horner evaluation of power-basis coefficients.
pub fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Polynomial({self})")
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (k, c) in self.power.iter().enumerate().rev() {
            if c.is_zero() {
                continue;
            }
            let sign = if c.is_negative() { "-" } else { "+" };
            let abs = c.abs();
            if first {
                if c.is_negative() {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            first = false;
            let show_coeff = k == 0 || !abs.is_one();
            if show_coeff {
                write!(f, "{abs}")?;
            }
            match k {
                0 => {}
                1 => write!(f, "x")?,
                _ => write!(f, "x^{k}")?,
            }
        }
        Ok(())
    }
}

/// The probabilists' Hermite polynomial `g_n`.
pub fn hermite(n: usize) -> Polynomial {
    let power = hermite_table(n).pop().expect("table has n + 1 rows");
    let mut hermite = vec![Rational::zero(); n + 1];
    hermite[n] = Rational::one();
    Polynomial { power, hermite }
}

/// E[p(ξ) q(ξ)].
pub fn expect_product(p: &Polynomial, q: &Polynomial) -> Rational {
    expectation(&mul_coeffs(&p.power, &q.power))
}

/// E[p(ξ)].
pub fn expect(p: &Polynomial) -> Rational {
    expectation(&p.power)
}

/// E[p⁽ᵐ⁾(ξ)].
pub fn expect_derivative(p: &Polynomial, m: usize) -> Rational {
    expect(&p.nth_derivative(m))
}

/// `μ ↦ E[p⁽ᵐ⁾(ξμ)]` as an exact polynomial in `μ`.
pub fn expect_derivative_scaled(p: &Polynomial, m: usize) -> Polynomial {
    let d = p.nth_derivative(m);
    Polynomial::from_power(
        d.power.iter().enumerate().map(|(k, c)| c * gaussian_moment(k)).collect(),
    )
}

/// `f(p, q) = E[pq] − E[p']E[q']`.
pub fn f_kernel(p: &Polynomial, q: &Polynomial) -> Rational {
    expect_product(p, q) - expect_derivative(p, 1) * expect_derivative(q, 1)
}

/// `(E[p²], E[p']²)`.
pub fn theta_coefficients(p: &Polynomial) -> (Rational, Rational) {
    let d = expect_derivative(p, 1);
    (expect_product(p, p), &d * &d)
}

/// Parses an exact rational such as `"3"`, `"-3/2"` or `"0.25"`.
pub fn parse_rational(s: &str) -> Result<Rational, PolynomialError> {
    let t = s.trim();
    if let Ok(r) = Rational::from_str(t) {
        return Ok(r);
    }
    let bad = || PolynomialError::BadCoefficient(s.to_string());
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let (int, frac) = body.split_once('.').ok_or_else(bad)?;
    if frac.is_empty() && int.is_empty() {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    if !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let num = BigInt::from_str(&digits).map_err(|_| bad())?;
    let den = num_traits::pow(BigInt::from(10), frac.len());
    let r = Rational::new(num, den);
    Ok(if neg { -r } else { r })
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Power,
    Hermite,
}

/// Serialized form of a polynomial.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct PolynomialSpec {
    pub basis: Basis,
    pub coeffs: Vec<String>,
}

impl PolynomialSpec {
    pub fn to_polynomial(&self) -> Result<Polynomial, PolynomialError> {
        let coeffs = self.coeffs.iter().map(|c| parse_rational(c)).collect::<Result<Vec<_>, _>>()?;
        Ok(match self.basis {
            Basis::Power => Polynomial::from_power(coeffs),
            Basis::Hermite => Polynomial::from_hermite(coeffs),
        })
    }

    pub fn from_polynomial(p: &Polynomial, basis: Basis) -> Self {
        let coeffs = match basis {
            Basis::Power => p.power_coeffs(),
            Basis::Hermite => p.hermite_coeffs(),
        };
        Self { basis, coeffs: coeffs.iter().map(|c| c.to_string()).collect() }
    }
}

impl Serialize for Polynomial {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PolynomialSpec::from_polynomial(self, Basis::Power).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Polynomial {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        PolynomialSpec::deserialize(d)?.to_polynomial().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(n: i64) -> Rational {
        rat(n)
    }

    #[test]
    fn moments() {
        assert_eq!(gaussian_moment(0), r(1));
        assert_eq!(gaussian_moment(3), r(0));
        assert_eq!(gaussian_moment(6), r(15));
        let table = GaussianMoments::new(8);
        assert_eq!(table.get(8), r(105));
        assert_eq!(table.get(10), r(945));
    }

    #[test]
    fn hermite_values() {
        assert_eq!(hermite(1), Polynomial::from_power_i64(&[0, 1]));
        assert_eq!(hermite(3), Polynomial::from_power_i64(&[0, -3, 0, 1]));
        assert_eq!(hermite(5), Polynomial::from_power_i64(&[0, 15, 0, -10, 0, 1]));
    }

    #[test]
    fn hermite_expansions() {
        let h3 = Polynomial::monomial(3);
        assert_eq!(h3.hermite_coeffs(), &[r(0), r(3), r(0), r(1)]);
        let h5 = Polynomial::monomial(5);
        assert_eq!(h5.hermite_coeffs(), &[r(0), r(15), r(0), r(10), r(0), r(1)]);
        assert_eq!(Polynomial::monomial(1).hermite_coeffs(), &[r(0), r(1)]);
    }

    #[test]
    fn hermite_derivative_identity() {
        for n in 1..=12 {
            assert_eq!(hermite(n).derivative(), hermite(n - 1).scale(&r(n as i64)), "n = {n}");
        }
    }

    #[test]
    fn orthogonality() {
        for n in 0..=8 {
            for m in 0..=8 {
                let expected = if n == m { Rational::from_integer(factorial(n)) } else { r(0) };
                assert_eq!(expect_product(&hermite(n), &hermite(m)), expected);
            }
        }
        assert_eq!(expect_product(&Polynomial::monomial(3), &Polynomial::monomial(3)), r(15));
    }

    #[test]
    fn derivative_expectations() {
        assert_eq!(expect_derivative(&hermite(3), 3), r(6));
        assert_eq!(expect_derivative(&Polynomial::monomial(3), 3), r(6));
        assert_eq!(expect_derivative(&Polynomial::monomial(5), 1), r(15));
    }

    #[test]
    fn kernel_and_theta() {
        let h1 = Polynomial::monomial(1);
        let h3 = Polynomial::monomial(3);
        assert_eq!(f_kernel(&h1, &h1), r(0));
        assert_eq!(f_kernel(&h3, &h3), r(6));
        for n in 0..=6 {
            for m in 0..=6 {
                let mut expected = if n == m { Rational::from_integer(factorial(n)) } else { r(0) };
                if n == 1 && m == 1 {
                    expected -= r(1);
                }
                assert_eq!(f_kernel(&hermite(n), &hermite(m)), expected);
            }
        }
        assert_eq!(theta_coefficients(&h1), (r(1), r(1)));
        assert_eq!(theta_coefficients(&h3), (r(15), r(9)));
        assert_eq!(theta_coefficients(&hermite(3)), (r(6), r(0)));
    }

    #[test]
    fn kernel_bilinear_and_symmetric_on_basis() {
        for n in 0..=9 {
            for m in 0..=9 {
                let (p, q) = (Polynomial::monomial(n), Polynomial::monomial(m));
                assert_eq!(f_kernel(&p, &q), f_kernel(&q, &p));
                let s = Polynomial::monomial(n).add(&hermite(m).scale(&r(3)));
                let lhs = f_kernel(&s, &q);
                let rhs = f_kernel(&p, &q) + r(3) * f_kernel(&hermite(m), &q);
                assert_eq!(lhs, rhs);
            }
        }
    }

    #[test]
    fn scaled_derivative_expectation() {
        // E[g3'(ξμ)] = 3μ² − 3, so μ² = 1/3 gives −2.
        let poly = expect_derivative_scaled(&hermite(3), 1);
        assert_eq!(poly, Polynomial::from_power_i64(&[-3, 0, 3]));
        let mu2 = Rational::new(1.into(), 3.into());
        assert_eq!(r(3) * mu2 - r(3), r(-2));
        let third = expect_derivative_scaled(&hermite(3), 3);
        assert_eq!(third, Polynomial::from_power_i64(&[6]));
    }

    #[test]
    fn json_round_trip() {
        let p = Polynomial::from_power(vec![r(0), Rational::new(3.into(), 2.into()), r(0), r(-1)]);
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"basis":"power","coeffs":["0","3/2","0","-1"]}"#);
        let back: Polynomial = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        let herm: Polynomial =
            serde_json::from_str(r#"{"basis":"hermite","coeffs":["0","3","0","1"]}"#).unwrap();
        assert_eq!(herm, Polynomial::monomial(3));
    }

    #[test]
    fn decimal_parsing() {
        assert_eq!(parse_rational("0.25").unwrap(), Rational::new(1.into(), 4.into()));
        assert_eq!(parse_rational("-1.5").unwrap(), Rational::new((-3).into(), 2.into()));
        assert!(parse_rational("abc").is_err());
    }

    #[test]
    fn display() {
        assert_eq!(hermite(3).to_string(), "x^3 - 3x");
        assert_eq!(Polynomial::zero().to_string(), "0");
    }

    proptest! {
        #[test]
        fn round_trip(coeffs in proptest::collection::vec(-20i64..20, 0..13)) {
            let p = Polynomial::from_power_i64(&coeffs);
            prop_assert_eq!(from_hermite(&to_hermite(p.power_coeffs())), p.power_coeffs().to_vec());
            let q = Polynomial::from_hermite(p.hermite_coeffs().to_vec());
            prop_assert_eq!(q, p);
        }

        #[test]
        fn expectation_linear(a in proptest::collection::vec(-9i64..9, 0..8),
                              b in proptest::collection::vec(-9i64..9, 0..8)) {
            let p = Polynomial::from_power_i64(&a);
            let q = Polynomial::from_power_i64(&b);
            prop_assert_eq!(expect(&p.add(&q)), expect(&p) + expect(&q));
            prop_assert_eq!(expect_product(&p, &q), expect(&p.mul(&q)));
        }
    }
}

//! Exact fixed-point arithmetic, vectors, matrices and permutations.
//!
//! Every real value in the schemes is a [`Scaled`]: an arbitrary-precision
//! integer mantissa with a power-of-ten scale. Products add scales, sums align
//! to the larger scale, and nothing is ever rounded. Matrix inverses are in
//! general not finite decimals, so they are carried as a [`FracMat`]: a
//! `Scaled` numerator matrix over one positive integer denominator.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::iter::Sum;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Default fixed-point scale for data and query coordinates (six decimals).
pub const DEFAULT_DATA_SCALE: u32 = 6;

/// Entry bound for randomly generated key matrices and blinding vectors.
pub const DEFAULT_ENTRY_BOUND: i64 = 1000;

const INVERTIBLE_RETRY_CAP: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NumericsError {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is singular")]
    SingularMatrix,
    #[error("all entries are zero")]
    AllZero,
    #[error("no invertible matrix found after {0} draws")]
    RetryCapExceeded(usize),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("cannot parse {0:?} as a decimal")]
    Parse(String),
    #[error("value is not representable at the requested scale")]
    NotRepresentable,
}

pub type Result<T, E = NumericsError> = std::result::Result<T, E>;

fn pow10(exp: u32) -> BigInt {
    num_traits::pow(BigInt::from(10u8), exp as usize)
}

/// Exact decimal fixed-point number: `mantissa * 10^-scale`.
///
/// Equality, ordering and hashing are by value, so `1.50 == 1.5`. The stored
/// scale is preserved through arithmetic and text encoding; use
/// [`Scaled::canonical`] to strip trailing zeros.
#[derive(Clone, Debug, Default)]
pub struct Scaled {
    mantissa: BigInt,
    scale: u32,
}

impl Scaled {
    pub fn new(mantissa: impl Into<BigInt>, scale: u32) -> Self {
        Self {
            mantissa: mantissa.into(),
            scale,
        }
    }

    pub fn from_int(value: impl Into<BigInt>) -> Self {
        Self::new(value, 0)
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn one() -> Self {
        Self::from_int(1)
    }

    pub fn mantissa(&self) -> &BigInt {
        &self.mantissa
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa.is_zero()
    }

    pub fn signum(&self) -> i32 {
        match self.mantissa.sign() {
            Sign::Minus => -1,
            Sign::NoSign => 0,
            Sign::Plus => 1,
        }
    }

    pub fn abs(&self) -> Self {
        Self::new(self.mantissa.abs(), self.scale)
    }

    /// Mantissa of this value expressed at `scale`, which must not be below
    /// the stored scale unless the trailing digits are zero.
    pub fn mantissa_at(&self, scale: u32) -> Option<BigInt> {
        match scale.cmp(&self.scale) {
            Ordering::Equal => Some(self.mantissa.clone()),
            Ordering::Greater => Some(&self.mantissa * pow10(scale - self.scale)),
            Ordering::Less => {
                let (q, r) = self.mantissa.div_rem(&pow10(self.scale - scale));
                r.is_zero().then_some(q)
            }
        }
    }

    /// Same value at another scale; `None` if digits would be dropped.
    pub fn rescale(&self, scale: u32) -> Option<Self> {
        self.mantissa_at(scale).map(|m| Self::new(m, scale))
    }

    /// Strips trailing zeros, never going below scale `min_scale`.
    pub fn normalized(&self, min_scale: u32) -> Self {
        if self.mantissa.is_zero() {
            return Self::new(0, min_scale.min(self.scale));
        }
        let ten = BigInt::from(10u8);
        let mut m = self.mantissa.clone();
        let mut s = self.scale;
        while s > min_scale {
            let (q, r) = m.div_rem(&ten);
            if !r.is_zero() {
                break;
            }
            m = q;
            s -= 1;
        }
        Self::new(m, s)
    }

    /// Canonical form: no removable trailing zero, zero at scale 0.
    pub fn canonical(&self) -> Self {
        self.normalized(0)
    }

    /// Exact quotient by a nonzero integer, provided the result is a finite
    /// decimal. The scale grows by the minimum needed.
    pub fn div_int_exact(&self, divisor: &BigInt) -> Option<Self> {
        if divisor.is_zero() {
            return None;
        }
        let g = self.mantissa.gcd(divisor);
        let mut rest = divisor / &g;
        let (mut twos, mut fives) = (0u32, 0u32);
        let two = BigInt::from(2u8);
        let five = BigInt::from(5u8);
        while rest.is_even() && !rest.is_zero() {
            rest /= &two;
            twos += 1;
        }
        while (&rest % &five).is_zero() && !rest.is_zero() {
            rest /= &five;
            fives += 1;
        }
        if !rest.abs().is_one() {
            return None;
        }
        let extra = twos.max(fives);
        let numer = &self.mantissa * pow10(extra);
        debug_assert!((&numer % divisor).is_zero());
        Some(Self::new(numer / divisor, self.scale + extra))
    }

    /// Exact quotient of two `Scaled` values if it is a finite decimal.
    pub fn checked_div(&self, other: &Scaled) -> Option<Self> {
        if other.is_zero() {
            return None;
        }
        // (a / 10^sa) / (b / 10^sb) = (a * 10^sb / b) / 10^sa
        let numer = Self::new(&self.mantissa * pow10(other.scale), self.scale);
        numer.div_int_exact(&other.mantissa)
    }

    pub fn to_f64(&self) -> f64 {
        self.to_string().parse().unwrap_or(f64::NAN)
    }

    fn aligned(a: &Scaled, b: &Scaled) -> (BigInt, BigInt, u32) {
        let s = a.scale.max(b.scale);
        let am = a.mantissa_at(s).expect("scaling up is exact");
        let bm = b.mantissa_at(s).expect("scaling up is exact");
        (am, bm, s)
    }
}

impl From<i64> for Scaled {
    fn from(v: i64) -> Self {
        Self::from_int(v)
    }
}

impl From<BigInt> for Scaled {
    fn from(v: BigInt) -> Self {
        Self::from_int(v)
    }
}

impl PartialEq for Scaled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scaled {}

impl PartialOrd for Scaled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scaled {
    fn cmp(&self, other: &Self) -> Ordering {
        if self.scale == other.scale {
            return self.mantissa.cmp(&other.mantissa);
        }
        let (a, b, _) = Self::aligned(self, other);
        a.cmp(&b)
    }
}

impl Hash for Scaled {
    fn hash<H: Hasher>(&self, state: &mut H) {
        let c = self.canonical();
        c.mantissa.hash(state);
        c.scale.hash(state);
    }
}

impl<'a> Add<&'a Scaled> for &'a Scaled {
    type Output = Scaled;
    fn add(self, rhs: &'a Scaled) -> Scaled {
        if self.scale == rhs.scale {
            return Scaled::new(&self.mantissa + &rhs.mantissa, self.scale);
        }
        let (a, b, s) = Scaled::aligned(self, rhs);
        Scaled::new(a + b, s)
    }
}

impl<'a> Sub<&'a Scaled> for &'a Scaled {
    type Output = Scaled;
    fn sub(self, rhs: &'a Scaled) -> Scaled {
        if self.scale == rhs.scale {
            return Scaled::new(&self.mantissa - &rhs.mantissa, self.scale);
        }
        let (a, b, s) = Scaled::aligned(self, rhs);
        Scaled::new(a - b, s)
    }
}

impl<'a> Mul<&'a Scaled> for &'a Scaled {
    type Output = Scaled;
    fn mul(self, rhs: &'a Scaled) -> Scaled {
        Scaled::new(&self.mantissa * &rhs.mantissa, self.scale + rhs.scale)
    }
}

impl Neg for &Scaled {
    type Output = Scaled;
    fn neg(self) -> Scaled {
        Scaled::new(-&self.mantissa, self.scale)
    }
}

impl Neg for Scaled {
    type Output = Scaled;
    fn neg(self) -> Scaled {
        Scaled::new(-self.mantissa, self.scale)
    }
}

macro_rules! forward_owned_binop {
    ($tr:ident, $method:ident) => {
        impl $tr<Scaled> for Scaled {
            type Output = Scaled;
            fn $method(self, rhs: Scaled) -> Scaled {
                (&self).$method(&rhs)
            }
        }
        impl<'a> $tr<&'a Scaled> for Scaled {
            type Output = Scaled;
            fn $method(self, rhs: &'a Scaled) -> Scaled {
                (&self).$method(rhs)
            }
        }
    };
}

forward_owned_binop!(Add, add);
forward_owned_binop!(Sub, sub);
forward_owned_binop!(Mul, mul);

impl Sum for Scaled {
    fn sum<I: Iterator<Item = Scaled>>(iter: I) -> Self {
        iter.fold(Scaled::zero(), |acc, x| acc + x)
    }
}

impl<'a> Sum<&'a Scaled> for Scaled {
    fn sum<I: Iterator<Item = &'a Scaled>>(iter: I) -> Self {
        iter.fold(Scaled::zero(), |acc, x| acc + x)
    }
}

impl fmt::Display for Scaled {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let digits = self.mantissa.abs().to_string();
        let sign = if self.mantissa.is_negative() { "-" } else { "" };
        let scale = self.scale as usize;
        if scale == 0 {
            return write!(f, "{sign}{digits}");
        }
        let padded = if digits.len() <= scale {
            format!("{}{}", "0".repeat(scale + 1 - digits.len()), digits)
        } else {
            digits
        };
        let (int, frac) = padded.split_at(padded.len() - scale);
        write!(f, "{sign}{int}.{frac}")
    }
}

impl FromStr for Scaled {
    type Err = NumericsError;

    /// Parses plain decimal notation (`-87455.6`, `13`, `.5`). The scale is
    /// the number of fractional digits written.
    fn from_str(s: &str) -> Result<Self> {
        let err = || NumericsError::Parse(s.to_string());
        let t = s.trim();
        let (neg, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() && frac.is_empty() {
            return Err(err());
        }
        if !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let digits = format!("{int}{frac}");
        let mut mantissa: BigInt = if digits.is_empty() {
            BigInt::zero()
        } else {
            digits.parse().map_err(|_| err())?
        };
        if neg {
            mantissa = -mantissa;
        }
        Ok(Scaled::new(mantissa, frac.len() as u32))
    }
}

impl Serialize for Scaled {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scaled {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses a vector of decimals.
pub fn parse_vec<S: AsRef<str>>(items: &[S]) -> Result<Vec<Scaled>> {
    items.iter().map(|s| s.as_ref().parse()).collect()
}

/// Integer vector helper, mostly for fixtures and tests.
pub fn int_vec(items: &[i64]) -> Vec<Scaled> {
    items.iter().map(|&v| Scaled::from_int(v)).collect()
}

pub fn max_scale(v: &[Scaled]) -> u32 {
    v.iter().map(Scaled::scale).max().unwrap_or(0)
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(NumericsError::LengthMismatch { expected, got })
    }
}

/// Exact dot product; the result scale is the sum of the operand scales.
pub fn dot(a: &[Scaled], b: &[Scaled]) -> Result<Scaled> {
    check_len(a.len(), b.len())?;
    if a.is_empty() {
        return Ok(Scaled::zero());
    }
    let sa = max_scale(a);
    let sb = max_scale(b);
    let mut acc = BigInt::zero();
    for (x, y) in a.iter().zip(b) {
        let xm = x.mantissa_at(sa).expect("scaling up is exact");
        let ym = y.mantissa_at(sb).expect("scaling up is exact");
        acc += xm * ym;
    }
    Ok(Scaled::new(acc, sa + sb))
}

pub fn squared_norm(v: &[Scaled]) -> Scaled {
    dot(v, v).expect("same length")
}

pub fn vec_add(a: &[Scaled], b: &[Scaled]) -> Result<Vec<Scaled>> {
    check_len(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x + y).collect())
}

pub fn vec_scale(v: &[Scaled], f: &Scaled) -> Vec<Scaled> {
    v.iter().map(|x| x * f).collect()
}

/// GCD of a vector's values.
///
/// All entries are brought to the largest stored scale and the integer GCD
/// of those mantissas is returned as an integer (scale 0). For an encrypted
/// query that is the blinding factor times the content of the underlying
/// integer vector.
pub fn vec_gcd(v: &[Scaled]) -> Result<Scaled> {
    gcd_at_scale(v, max_scale(v))
}

/// GCD of the mantissas of `v` expressed at `scale` (>= every entry scale).
pub fn gcd_at_scale(v: &[Scaled], scale: u32) -> Result<Scaled> {
    let mut g = BigInt::zero();
    for x in v {
        let m = x.mantissa_at(scale).ok_or(NumericsError::NotRepresentable)?;
        g = g.gcd(&m);
    }
    if g.is_zero() {
        return Err(NumericsError::AllZero);
    }
    Ok(Scaled::from_int(g))
}

/// Dense row-major matrix of exact decimals.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Scaled>>", into = "Vec<Vec<Scaled>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<Scaled>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Scaled>) -> Result<Self> {
        check_len(rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<Scaled>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            check_len(c, row.len())?;
            data.extend(row);
        }
        Self::new(r, c, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![Scaled::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = Scaled::one();
        }
        Self {
            rows: n,
            cols: n,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &Scaled {
        &self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[Scaled] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<Scaled>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn max_scale(&self) -> u32 {
        max_scale(&self.data)
    }

    /// Integer mantissas of every entry at the matrix's common scale.
    pub fn integer_rows(&self) -> (Vec<Vec<BigInt>>, u32) {
        let s = self.max_scale();
        let rows = (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .map(|x| x.mantissa_at(s).expect("scaling up is exact"))
                    .collect()
            })
            .collect();
        (rows, s)
    }

    pub fn transpose(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, j).clone());
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// Column product `M * v`.
    pub fn mul_vec(&self, v: &[Scaled]) -> Result<Vec<Scaled>> {
        check_len(self.cols, v.len())?;
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// Row product `v * M`.
    pub fn vec_mul(&self, v: &[Scaled]) -> Result<Vec<Scaled>> {
        self.transpose().mul_vec(v)
    }

    pub fn mul(&self, other: &Matrix) -> Result<Matrix> {
        check_len(self.cols, other.rows)?;
        let t = other.transpose();
        let mut data = Vec::with_capacity(self.rows * other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                data.push(dot(self.row(i), t.row(j))?);
            }
        }
        Matrix::new(self.rows, other.cols, data)
    }

    fn require_square(&self) -> Result<()> {
        if self.rows == self.cols {
            Ok(())
        } else {
            Err(NumericsError::NotSquare {
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    /// Exact determinant via fraction-free elimination.
    pub fn determinant(&self) -> Result<Scaled> {
        self.require_square()?;
        let (rows, s) = self.integer_rows();
        Ok(Scaled::new(bareiss_determinant(rows), s * self.rows as u32))
    }

    pub fn is_invertible(&self) -> bool {
        self.determinant().is_ok_and(|d| !d.is_zero())
    }
}

impl TryFrom<Vec<Vec<Scaled>>> for Matrix {
    type Error = NumericsError;
    fn try_from(rows: Vec<Vec<Scaled>>) -> Result<Self> {
        Matrix::from_rows(rows)
    }
}

impl From<Matrix> for Vec<Vec<Scaled>> {
    fn from(m: Matrix) -> Self {
        m.to_rows()
    }
}

/// Draws a random invertible `n x n` matrix with integer entries in
/// `[lo, hi]`, placed at decimal scale `scale`.
pub fn mat_random_invertible<R: Rng + ?Sized>(
    n: usize,
    lo: i64,
    hi: i64,
    scale: u32,
    rng: &mut R,
) -> Result<Matrix> {
    assert!(n >= 1, "matrix dimension must be positive");
    for _ in 0..INVERTIBLE_RETRY_CAP {
        let data: Vec<Scaled> = (0..n * n)
            .map(|_| Scaled::new(rng.gen_range(lo..=hi), scale))
            .collect();
        let m = Matrix::new(n, n, data)?;
        if m.is_invertible() {
            return Ok(m);
        }
    }
    Err(NumericsError::RetryCapExceeded(INVERTIBLE_RETRY_CAP))
}

/// Exact inverse of a square matrix.
pub fn mat_invert(m: &Matrix) -> Result<FracMat> {
    m.require_square()?;
    let n = m.rows;
    let (rows, s) = m.integer_rows();
    // M = A / 10^s, so M^-1 = 10^s * A^-1 = 10^s * X / det with X integral.
    let (x, mut det) = bareiss_inverse(rows).ok_or(NumericsError::SingularMatrix)?;
    let mut numer: Vec<BigInt> = x.into_iter().flatten().collect();
    let shift = pow10(s);
    for e in numer.iter_mut() {
        *e *= &shift;
    }
    if det.is_negative() {
        det = -det;
        for e in numer.iter_mut() {
            *e = -std::mem::take(e);
        }
    }
    let mut g = det.clone();
    for e in &numer {
        if g.is_one() {
            break;
        }
        g = g.gcd(e);
    }
    if !g.is_one() {
        det /= &g;
        for e in numer.iter_mut() {
            *e /= &g;
        }
    }
    let data = numer.into_iter().map(Scaled::from_int).collect();
    Ok(FracMat {
        numer: Matrix::new(n, n, data)?,
        denom: det,
    })
}

fn bareiss_determinant(mut a: Vec<Vec<BigInt>>) -> BigInt {
    let n = a.len();
    let mut sign = BigInt::one();
    let mut prev = BigInt::one();
    for k in 0..n {
        if a[k][k].is_zero() {
            match (k + 1..n).find(|&i| !a[i][k].is_zero()) {
                Some(i) => {
                    a.swap(k, i);
                    sign = -sign;
                }
                None => return BigInt::zero(),
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                let v = &a[i][j] * &a[k][k] - &a[i][k] * &a[k][j];
                a[i][j] = v / &prev;
            }
        }
        prev = a[k][k].clone();
    }
    sign * &a[n - 1][n - 1]
}

/// Returns `(X, d)` with `A * X = d * I`, `d = ±det(A)`, or `None` if `A`
/// is singular.
fn bareiss_inverse(a: Vec<Vec<BigInt>>) -> Option<(Vec<Vec<BigInt>>, BigInt)> {
    let n = a.len();
    let width = 2 * n;
    let mut aug: Vec<Vec<BigInt>> = a
        .into_iter()
        .enumerate()
        .map(|(i, mut row)| {
            row.extend((0..n).map(|j| if i == j { BigInt::one() } else { BigInt::zero() }));
            row
        })
        .collect();
    let mut prev = BigInt::one();
    for k in 0..n {
        if aug[k][k].is_zero() {
            let i = (k + 1..n).find(|&i| !aug[i][k].is_zero())?;
            aug.swap(k, i);
        }
        let (head, tail) = aug.split_at_mut(k + 1);
        let pivot_row = &head[k];
        for row in tail.iter_mut() {
            for j in k + 1..width {
                let v = &row[j] * &pivot_row[k] - &row[k] * &pivot_row[j];
                row[j] = v / &prev;
            }
            row[k] = BigInt::zero();
        }
        prev = aug[k][k].clone();
    }
    let d = prev;
    // Fraction-free back substitution, one right-hand column at a time.
    let mut x = vec![vec![BigInt::zero(); n]; n];
    for col in 0..n {
        for i in (0..n).rev() {
            let mut acc = &d * &aug[i][n + col];
            for j in i + 1..n {
                acc -= &aug[i][j] * &x[j][col];
            }
            let (q, r) = acc.div_rem(&aug[i][i]);
            debug_assert!(r.is_zero(), "fraction-free back substitution is exact");
            x[i][col] = q;
        }
    }
    Some((x, d))
}

/// Rational matrix `numer / denom` with a single positive denominator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FracMat {
    pub numer: Matrix,
    pub denom: BigInt,
}

impl FracMat {
    pub fn mul_vec(&self, v: &[Scaled]) -> Result<FracVec> {
        Ok(FracVec {
            numer: self.numer.mul_vec(v)?,
            denom: self.denom.clone(),
        })
    }

    pub fn vec_mul(&self, v: &[Scaled]) -> Result<FracVec> {
        Ok(FracVec {
            numer: self.numer.vec_mul(v)?,
            denom: self.denom.clone(),
        })
    }

    /// The inverse as a plain decimal matrix, when every entry is a finite
    /// decimal.
    pub fn to_matrix(&self) -> Option<Matrix> {
        let data = self
            .numer
            .data
            .iter()
            .map(|x| x.div_int_exact(&self.denom))
            .collect::<Option<Vec<_>>>()?;
        Matrix::new(self.numer.rows, self.numer.cols, data).ok()
    }

    /// `m * self == I`, checked exactly.
    pub fn is_inverse_of(&self, m: &Matrix) -> bool {
        let Ok(prod) = m.mul(&self.numer) else {
            return false;
        };
        let d = Scaled::from_int(self.denom.clone());
        let n = m.rows;
        prod.rows == n
            && prod.cols == n
            && (0..n).all(|i| {
                (0..n).all(|j| {
                    let want = if i == j { d.clone() } else { Scaled::zero() };
                    *prod.get(i, j) == want
                })
            })
    }
}

/// Rational vector `numer / denom` with a positive denominator.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FracVec {
    pub numer: Vec<Scaled>,
    pub denom: BigInt,
}

impl FracVec {
    pub fn from_scaled(v: Vec<Scaled>) -> Self {
        Self {
            numer: v,
            denom: BigInt::one(),
        }
    }

    pub fn len(&self) -> usize {
        self.numer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.numer.is_empty()
    }

    pub fn dot(&self, other: &[Scaled]) -> Result<Frac> {
        Ok(Frac {
            numer: dot(&self.numer, other)?,
            denom: self.denom.clone(),
        })
    }

    /// Row product `self * M`.
    pub fn mul_mat(&self, m: &Matrix) -> Result<FracVec> {
        Ok(FracVec {
            numer: m.vec_mul(&self.numer)?,
            denom: self.denom.clone(),
        })
    }

    /// Exact decimal entries, or `None` if any entry is not a finite decimal.
    pub fn to_scaled(&self) -> Option<Vec<Scaled>> {
        self.numer
            .iter()
            .map(|x| x.div_int_exact(&self.denom))
            .collect()
    }
}

/// Exact rational `numer / denom`, `denom > 0`.
#[derive(Clone, Debug)]
pub struct Frac {
    pub numer: Scaled,
    pub denom: BigInt,
}

impl PartialEq for Frac {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Frac {}

impl PartialOrd for Frac {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frac {
    fn cmp(&self, other: &Self) -> Ordering {
        if self.denom == other.denom {
            return self.numer.cmp(&other.numer);
        }
        let lhs = &self.numer * &Scaled::from_int(other.denom.clone());
        let rhs = &other.numer * &Scaled::from_int(self.denom.clone());
        lhs.cmp(&rhs)
    }
}

/// Permutation with `apply(v)[i] = v[map[i]]`.
///
/// Stored zero-based; the text form is one-based, e.g. `{3,1,4,5,2}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Perm {
    map: Vec<usize>,
}

impl Perm {
    pub fn identity(n: usize) -> Self {
        Self {
            map: (0..n).collect(),
        }
    }

    pub fn from_zero_based(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &i in &map {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(NumericsError::InvalidPermutation(format!("{map:?}")));
            }
        }
        Ok(Self { map })
    }

    pub fn from_one_based(map: &[usize]) -> Result<Self> {
        let zero = map
            .iter()
            .map(|&i| {
                i.checked_sub(1)
                    .ok_or_else(|| NumericsError::InvalidPermutation(format!("{map:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_zero_based(zero)
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Self { map }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.map.iter().map(|i| i + 1).collect()
    }

    pub fn inverse(&self) -> Perm {
        let mut inv = vec![0; self.map.len()];
        for (i, &j) in self.map.iter().enumerate() {
            inv[j] = i;
        }
        Perm { map: inv }
    }

    pub fn apply<T: Clone>(&self, v: &[T]) -> Result<Vec<T>> {
        check_len(self.map.len(), v.len())?;
        Ok(self.map.iter().map(|&i| v[i].clone()).collect())
    }
}

impl TryFrom<Vec<usize>> for Perm {
    type Error = NumericsError;
    fn try_from(one_based: Vec<usize>) -> Result<Self> {
        Perm::from_one_based(&one_based)
    }
}

impl From<Perm> for Vec<usize> {
    fn from(p: Perm) -> Self {
        p.one_based()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn s(x: &str) -> Scaled {
        x.parse().unwrap()
    }

    pub(crate) fn worked_example_m() -> Matrix {
        let rows = [
            ["6.7", "1.2", "2.6", "3.3", "5.5"],
            ["9.2", "45", "11", "3.2", "19"],
            ["17", "1.5", "8.3", "2.1", "14"],
            ["30", "2.9", "16", "20", "6.2"],
            ["11", "28", "3.6", "23", "13"],
        ];
        Matrix::from_rows(rows.iter().map(|r| parse_vec(r).unwrap()).collect()).unwrap()
    }

    // Cofactor expansion over exact rationals: independent of Bareiss.
    fn det_by_cofactors(m: &Matrix) -> Scaled {
        let n = m.rows();
        if n == 1 {
            return m.get(0, 0).clone();
        }
        let mut acc = Scaled::zero();
        for j in 0..n {
            let minor_rows: Vec<Vec<Scaled>> = (1..n)
                .map(|i| (0..n).filter(|&c| c != j).map(|c| m.get(i, c).clone()).collect())
                .collect();
            let minor = Matrix::from_rows(minor_rows).unwrap();
            let term = m.get(0, j) * &det_by_cofactors(&minor);
            acc = if j % 2 == 0 { acc + term } else { acc - term };
        }
        acc
    }

    #[test]
    fn display_and_parse() {
        assert_eq!(s("87455.6").to_string(), "87455.6");
        assert_eq!(s("-0.05").to_string(), "-0.05");
        assert_eq!(Scaled::new(-5, 3).to_string(), "-0.005");
        assert_eq!(s("11046.0").to_string(), "11046.0");
        assert_eq!(s("11046.0"), s("11046"));
        assert_eq!(s(".5"), Scaled::new(5, 1));
        assert!("1.2.3".parse::<Scaled>().is_err());
        assert!("".parse::<Scaled>().is_err());
        assert!("1e3".parse::<Scaled>().is_err());
    }

    #[test]
    fn canonical_strips_trailing_zeros() {
        assert_eq!(Scaled::new(1200, 3).canonical(), Scaled::new(12, 1));
        assert_eq!(Scaled::new(1200, 3).canonical().scale(), 1);
        assert_eq!(Scaled::new(0, 4).canonical().scale(), 0);
        assert_eq!(Scaled::new(1200, 3).normalized(2).scale(), 2);
    }

    #[test]
    fn exact_division() {
        assert_eq!(s("1").div_int_exact(&BigInt::from(8)), Some(s("0.125")));
        assert_eq!(s("1").div_int_exact(&BigInt::from(3)), None);
        assert_eq!(s("87455.6").checked_div(&s("131")), Some(s("667.6")));
        assert_eq!(s("-12.5").checked_div(&s("-0.5")), Some(s("25")));
    }

    #[test]
    fn dot_matches_worked_example_first_entry() {
        let row: Vec<Scaled> = worked_example_m().row(0).to_vec();
        let q = int_vec(&[131, 1703, 5633, 0, 12707]);
        let r = dot(&row, &q).unwrap();
        assert_eq!(r, s("87455.6"));
        assert_eq!(r.scale(), 1);
    }

    #[test]
    fn dot_with_zero_and_length_mismatch() {
        let a = parse_vec(&["1.5", "-2", "3.25"]).unwrap();
        assert!(dot(&a, &int_vec(&[0, 0, 0])).unwrap().is_zero());
        assert_eq!(
            dot(&a, &int_vec(&[1, 2])),
            Err(NumericsError::LengthMismatch { expected: 3, got: 2 })
        );
    }

    #[test]
    fn dot_against_reverse_order_summation() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a: Vec<Scaled> = (0..3).map(|_| Scaled::new(rng.gen_range(-9999..9999), 2)).collect();
            let b: Vec<Scaled> = (0..3).map(|_| Scaled::new(rng.gen_range(-9999..9999), 3)).collect();
            let schoolbook: Scaled = (0..3).rev().map(|i| &a[i] * &b[i]).sum();
            assert_eq!(dot(&a, &b).unwrap(), schoolbook);
        }
    }

    #[test]
    fn invert_identity_and_diagonal() {
        let id = Matrix::identity(5);
        assert_eq!(mat_invert(&id).unwrap().to_matrix().unwrap(), id);
        let m = Matrix::from_rows(vec![int_vec(&[2, 0]), int_vec(&[0, 4])]).unwrap();
        let inv = mat_invert(&m).unwrap().to_matrix().unwrap();
        assert_eq!(inv.to_rows(), vec![parse_vec(&["0.5", "0"]).unwrap(), parse_vec(&["0", "0.25"]).unwrap()]);
    }

    #[test]
    fn worked_example_matrix_is_invertible_and_inverse_is_exact() {
        let m = worked_example_m();
        assert!(m.is_invertible());
        let inv = mat_invert(&m).unwrap();
        assert!(inv.is_inverse_of(&m));
        assert_eq!(m.determinant().unwrap(), det_by_cofactors(&m));
    }

    #[test]
    fn singular_matrix_rejected() {
        let m = Matrix::from_rows(vec![int_vec(&[1, 2]), int_vec(&[2, 4])]).unwrap();
        assert_eq!(mat_invert(&m), Err(NumericsError::SingularMatrix));
        assert!(!m.is_invertible());
        let rect = Matrix::from_rows(vec![int_vec(&[1, 2, 3])]).unwrap();
        assert!(matches!(mat_invert(&rect), Err(NumericsError::NotSquare { .. })));
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        let m = Matrix::from_rows(vec![int_vec(&[0, 1, 2]), int_vec(&[1, 0, 3]), int_vec(&[4, -3, 8])]).unwrap();
        let inv = mat_invert(&m).unwrap();
        assert!(inv.is_inverse_of(&m));
        assert_eq!(m.determinant().unwrap(), det_by_cofactors(&m));
    }

    #[test]
    fn random_invertible_one_by_one_and_five() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let m1 = mat_random_invertible(1, 1, 9, 0, &mut rng).unwrap();
        assert!(!m1.get(0, 0).is_zero());
        let m5 = mat_random_invertible(5, -1000, 1000, 0, &mut rng).unwrap();
        let det = det_by_cofactors(&m5);
        assert!(!det.is_zero());
        assert_eq!(m5.determinant().unwrap(), det);
    }

    #[test]
    fn random_inverses_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for n in 1..=12 {
            let m = mat_random_invertible(n, -1000, 1000, 1, &mut rng).unwrap();
            assert!(mat_invert(&m).unwrap().is_inverse_of(&m), "n={n}");
        }
    }

    #[test]
    fn perm_matches_worked_example() {
        let pi = Perm::from_one_based(&[3, 1, 4, 5, 2]).unwrap();
        let input = ["X", "Y", "131", "5633", "0"];
        assert_eq!(pi.apply(&input).unwrap(), vec!["131", "X", "5633", "0", "Y"]);
        assert_eq!(pi.inverse().apply(&pi.apply(&input).unwrap()).unwrap(), input);
        assert_eq!(Perm::identity(5).apply(&input).unwrap(), input);
        assert!(pi.apply(&input[..4]).is_err());
        assert!(Perm::from_one_based(&[1, 1, 2]).is_err());
        assert!(Perm::from_one_based(&[0, 1]).is_err());
    }

    #[test]
    fn gcd_examples() {
        let q = parse_vec(&["87455.6", "381236.2", "229433.4", "177780.1", "234594.8"]).unwrap();
        assert_eq!(vec_gcd(&q).unwrap(), Scaled::from_int(131));
        assert_eq!(vec_gcd(&int_vec(&[6, 10, 15])).unwrap(), Scaled::one());
        assert_eq!(vec_gcd(&int_vec(&[0, 0])), Err(NumericsError::AllZero));
        assert_eq!(vec_gcd(&int_vec(&[0, -12, 18])).unwrap(), Scaled::from_int(6));
    }

    #[test]
    fn gcd_recovers_planted_factor() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut found = 0;
        for _ in 0..200 {
            let beta: i64 = rng.gen_range(2..=65536);
            let v: Vec<i64> = (0..6).map(|_| rng.gen_range(-1000..=1000)).collect();
            let scaled: Vec<Scaled> = v.iter().map(|&x| Scaled::from_int(x * beta)).collect();
            let g = vec_gcd(&scaled).unwrap();
            // brute-force divisibility check
            assert!(scaled.iter().all(|x| (x.mantissa() % g.mantissa()).is_zero()));
            assert!((g.mantissa() % beta).is_zero());
            let content = v.iter().fold(0i64, |acc, &x| num_integer::gcd(acc, x));
            if content == 1 {
                assert_eq!(g, Scaled::from_int(beta));
                found += 1;
            }
        }
        assert!(found > 150);
    }

    #[test]
    fn serde_round_trip() {
        let m = worked_example_m();
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"6.7\""));
        let back: Matrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        let pi = Perm::from_one_based(&[3, 1, 4, 5, 2]).unwrap();
        assert_eq!(serde_json::to_string(&pi).unwrap(), "[3,1,4,5,2]");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn scaled() -> impl Strategy<Value = Scaled> {
            (any::<i64>(), 0u32..8).prop_map(|(m, s)| Scaled::new(m, s))
        }

        proptest! {
            #[test]
            fn add_mul_associative_commutative(a in scaled(), b in scaled(), c in scaled()) {
                prop_assert_eq!(&a + &b, &b + &a);
                prop_assert_eq!(&a * &b, &b * &a);
                prop_assert_eq!(&(&a + &b) + &c, &a + &(&b + &c));
                prop_assert_eq!(&(&a * &b) * &c, &a * &(&b * &c));
                prop_assert_eq!(&(&a + &b) * &c, &(&a * &c) + &(&b * &c));
            }

            #[test]
            fn text_round_trip(a in scaled()) {
                let back: Scaled = a.to_string().parse().unwrap();
                prop_assert_eq!(back.scale(), a.scale());
                prop_assert_eq!(back, a);
            }

            #[test]
            fn perm_inverse_round_trip(seed in any::<u64>(), n in 1usize..30) {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                let p = Perm::random(n, &mut rng);
                let v: Vec<u64> = (0..n as u64).map(|i| i * 7 + 1).collect();
                prop_assert_eq!(p.inverse().apply(&p.apply(&v).unwrap()).unwrap(), v);
            }

            #[test]
            fn gcd_divisible_by_multiplier(beta in 1i64..100_000, v in prop::collection::vec(-10_000i64..10_000, 1..8)) {
                prop_assume!(v.iter().any(|&x| x != 0));
                let scaled: Vec<Scaled> = v.iter().map(|&x| Scaled::from_int(x * beta)).collect();
                let g = vec_gcd(&scaled).unwrap();
                prop_assert!((g.mantissa() % beta).is_zero());
            }
        }
    }
}

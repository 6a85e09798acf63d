//! Angular-momentum algebra.
//!
//! Clebsch–Gordan coefficients and 6j symbols are evaluated with the Racah
//! sums in exact big-integer arithmetic and only converted to `f64` at the
//! end, so there is no cancellation loss for moderate `j`. The 9j symbol is
//! a float sum over exact 6j products. Phases follow Condon–Shortley.

use std::fmt;
use std::sync::OnceLock;

use nalgebra::{Complex, Matrix3};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// An integer or half-integer stored as twice its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HalfInt {
    pub twice_value: i32,
}

impl HalfInt {
    pub const ZERO: HalfInt = HalfInt { twice_value: 0 };
    pub const HALF: HalfInt = HalfInt { twice_value: 1 };
    pub const ONE: HalfInt = HalfInt { twice_value: 2 };

    pub const fn from_twice(twice_value: i32) -> Self {
        HalfInt { twice_value }
    }

    pub const fn int(n: i32) -> Self {
        HalfInt { twice_value: 2 * n }
    }

    /// Nearest half-integer to `x`.
    pub fn from_f64(x: f64) -> Self {
        HalfInt { twice_value: (2.0 * x).round() as i32 }
    }

    pub fn value(self) -> f64 {
        self.twice_value as f64 / 2.0
    }

    pub fn is_integer(self) -> bool {
        self.twice_value % 2 == 0
    }

    /// Multiplicity 2j+1.
    pub fn dim(self) -> i32 {
        self.twice_value + 1
    }

    /// Projections -j, -j+1, ..., j.
    pub fn projections(self) -> impl Iterator<Item = HalfInt> {
        let tj = self.twice_value;
        (0..=tj).map(move |k| HalfInt::from_twice(-tj + 2 * k))
    }

    /// Checks that `m` is a valid projection of `self`.
    pub fn admits(self, m: HalfInt) -> bool {
        self.twice_value >= 0
            && m.twice_value.abs() <= self.twice_value
            && (self.twice_value - m.twice_value).rem_euclid(2) == 0
    }
}

impl std::ops::Add for HalfInt {
    type Output = HalfInt;
    fn add(self, o: HalfInt) -> HalfInt {
        HalfInt::from_twice(self.twice_value + o.twice_value)
    }
}

impl std::ops::Sub for HalfInt {
    type Output = HalfInt;
    fn sub(self, o: HalfInt) -> HalfInt {
        HalfInt::from_twice(self.twice_value - o.twice_value)
    }
}

impl std::ops::Neg for HalfInt {
    type Output = HalfInt;
    fn neg(self) -> HalfInt {
        HalfInt::from_twice(-self.twice_value)
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.twice_value / 2)
        } else {
            write!(f, "{}/2", self.twice_value)
        }
    }
}

/// (-1)^k for an integer exponent given as twice its value.
pub(crate) fn phase_twice(twice_exp: i32) -> f64 {
    debug_assert!(twice_exp % 2 == 0, "non-integer phase exponent");
    if (twice_exp / 2).rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

const FACT_CACHE: usize = 160;

fn factorials() -> &'static [BigInt] {
    static TABLE: OnceLock<Vec<BigInt>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut v = Vec::with_capacity(FACT_CACHE);
        let mut acc = BigInt::one();
        v.push(acc.clone());
        for k in 1..FACT_CACHE {
            acc *= k;
            v.push(acc.clone());
        }
        v
    })
}

/// n! for an integer given as twice its value; `None` if negative.
fn fact2(twice_n: i32) -> Option<BigInt> {
    if twice_n < 0 || twice_n % 2 != 0 {
        return None;
    }
    let n = (twice_n / 2) as usize;
    if n < FACT_CACHE {
        Some(factorials()[n].clone())
    } else {
        let mut acc = factorials()[FACT_CACHE - 1].clone();
        for k in FACT_CACHE..=n {
            acc *= k;
        }
        Some(acc)
    }
}

fn fact(n: i32) -> BigInt {
    fact2(2 * n).expect("negative factorial")
}

/// Value sign(s)·sqrt(p·s²) as f64 for exact rationals `p >= 0`, `s`.
fn signed_sqrt(p: &BigRational, s: &BigRational) -> f64 {
    if s.is_zero() || p.is_zero() {
        return 0.0;
    }
    let mag = (p * s * s).to_f64().unwrap_or(f64::NAN).sqrt();
    if s.is_negative() {
        -mag
    } else {
        mag
    }
}

fn triangle(a: HalfInt, b: HalfInt, c: HalfInt) -> bool {
    let (a, b, c) = (a.twice_value, b.twice_value, c.twice_value);
    a >= 0 && b >= 0 && c >= 0 && c <= a + b && c >= (a - b).abs() && (a + b + c) % 2 == 0
}

/// Triangle coefficient Δ(abc) as an exact rational.
fn delta(a: HalfInt, b: HalfInt, c: HalfInt) -> BigRational {
    let (a, b, c) = (a.twice_value, b.twice_value, c.twice_value);
    let num = fact2(a + b - c).unwrap() * fact2(a - b + c).unwrap() * fact2(-a + b + c).unwrap();
    let den = fact2(a + b + c + 2).unwrap();
    BigRational::new(num, den)
}

fn check_projection(j: HalfInt, m: HalfInt) -> Result<()> {
    if j.admits(m) {
        Ok(())
    } else {
        Err(Error::Domain(format!("projection {m} invalid for j = {j}")))
    }
}

/// ⟨j1 m1; j2 m2 | j3 m3⟩ (Condon–Shortley).
pub fn clebsch_gordan(
    j1: HalfInt,
    m1: HalfInt,
    j2: HalfInt,
    m2: HalfInt,
    j3: HalfInt,
    m3: HalfInt,
) -> Result<f64> {
    check_projection(j1, m1)?;
    check_projection(j2, m2)?;
    check_projection(j3, m3)?;
    if m1 + m2 != m3 || !triangle(j1, j2, j3) {
        return Ok(0.0);
    }
    let (tj1, tj2, tj3) = (j1.twice_value, j2.twice_value, j3.twice_value);
    let (tm1, tm2, tm3) = (m1.twice_value, m2.twice_value, m3.twice_value);

    let pre = BigRational::from_integer(BigInt::from(tj3 + 1)) * delta(j1, j2, j3)
        * BigRational::from_integer(
            fact2(tj3 + tm3).unwrap()
                * fact2(tj3 - tm3).unwrap()
                * fact2(tj1 - tm1).unwrap()
                * fact2(tj1 + tm1).unwrap()
                * fact2(tj2 - tm2).unwrap()
                * fact2(tj2 + tm2).unwrap(),
        );

    // integer bounds of the Racah sum (all in units of 1, not 1/2)
    let a = (tj1 + tj2 - tj3) / 2;
    let b = (tj1 - tm1) / 2;
    let c = (tj2 + tm2) / 2;
    let d = (tj3 - tj2 + tm1) / 2;
    let e = (tj3 - tj1 - tm2) / 2;
    let kmin = 0.max(-d).max(-e);
    let kmax = a.min(b).min(c);
    let mut sum = BigRational::zero();
    for k in kmin..=kmax {
        let den = fact(k) * fact(a - k) * fact(b - k) * fact(c - k) * fact(d + k) * fact(e + k);
        let term = BigRational::new(BigInt::one(), den);
        if k % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    Ok(signed_sqrt(&pre, &sum))
}

/// Wigner 3j symbol, via the CG coefficient.
pub fn wigner_3j(
    j1: HalfInt,
    m1: HalfInt,
    j2: HalfInt,
    m2: HalfInt,
    j3: HalfInt,
    m3: HalfInt,
) -> Result<f64> {
    let cg = clebsch_gordan(j1, m1, j2, m2, j3, -m3)?;
    let ph = phase_twice(j1.twice_value - j2.twice_value - m3.twice_value);
    Ok(ph * cg / ((j3.twice_value + 1) as f64).sqrt())
}

/// Wigner 6j symbol {j1 j2 j3; j4 j5 j6}.
pub fn wigner_6j(
    j1: HalfInt,
    j2: HalfInt,
    j3: HalfInt,
    j4: HalfInt,
    j5: HalfInt,
    j6: HalfInt,
) -> Result<f64> {
    for j in [j1, j2, j3, j4, j5, j6] {
        if j.twice_value < 0 {
            return Err(Error::Domain(format!("negative angular momentum {j}")));
        }
    }
    let triads = [(j1, j2, j3), (j1, j5, j6), (j4, j2, j6), (j4, j5, j3)];
    if triads.iter().any(|&(a, b, c)| !triangle(a, b, c)) {
        return Ok(0.0);
    }
    let pre = triads
        .iter()
        .fold(BigRational::one(), |acc, &(a, b, c)| acc * delta(a, b, c));

    let t = |x: HalfInt| x.twice_value;
    let sums = [
        t(j1) + t(j2) + t(j3),
        t(j1) + t(j5) + t(j6),
        t(j4) + t(j2) + t(j6),
        t(j4) + t(j5) + t(j3),
    ];
    let diffs = [
        t(j1) + t(j2) + t(j4) + t(j5),
        t(j2) + t(j3) + t(j5) + t(j6),
        t(j3) + t(j1) + t(j6) + t(j4),
    ];
    let tmin = *sums.iter().max().unwrap() / 2;
    let tmax = *diffs.iter().min().unwrap() / 2;
    let mut sum = BigRational::zero();
    for k in tmin..=tmax {
        let mut den = BigInt::one();
        for s in sums {
            den *= fact(k - s / 2);
        }
        for d in diffs {
            den *= fact(d / 2 - k);
        }
        let term = BigRational::new(fact(k + 1), den);
        if k % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    Ok(signed_sqrt(&pre, &sum))
}

/// Wigner 9j symbol {a b c; d e f; g h i} as a sum over 6j products.
#[allow(clippy::too_many_arguments)]
pub fn wigner_9j(
    a: HalfInt,
    b: HalfInt,
    c: HalfInt,
    d: HalfInt,
    e: HalfInt,
    f: HalfInt,
    g: HalfInt,
    h: HalfInt,
    i: HalfInt,
) -> Result<f64> {
    let rows = [(a, b, c), (d, e, f), (g, h, i)];
    let cols = [(a, d, g), (b, e, h), (c, f, i)];
    if rows.iter().chain(cols.iter()).any(|&(x, y, z)| !triangle(x, y, z)) {
        return Ok(0.0);
    }
    let t = |x: HalfInt| x.twice_value;
    let lo = (t(a) - t(i)).abs().max((t(d) - t(h)).abs()).max((t(b) - t(f)).abs());
    let hi = (t(a) + t(i)).min(t(d) + t(h)).min(t(b) + t(f));
    let mut total = 0.0;
    let mut tx = lo;
    while tx <= hi {
        let x = HalfInt::from_twice(tx);
        let w = phase_twice(2 * tx) * (tx + 1) as f64;
        total += w
            * wigner_6j(a, b, c, f, i, x)?
            * wigner_6j(d, e, f, b, x, h)?
            * wigner_6j(g, h, i, x, a, d)?;
        tx += 2;
    }
    Ok(total)
}

/// z-y-z Euler angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EulerAngles {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
}

impl EulerAngles {
    pub fn new(beta1: f64, beta2: f64, beta3: f64) -> Self {
        EulerAngles { beta1, beta2, beta3 }
    }
}

/// Spin-1 rotation matrix D¹(β₁,β₂,β₃) = e^{-iβ₁Jz} e^{-iβ₂Jy} e^{-iβ₃Jz}
/// in the basis (|+1⟩, |0⟩, |−1⟩).
pub fn wigner_d1(angles: EulerAngles) -> Matrix3<Complex<f64>> {
    let (c, s) = (angles.beta2.cos(), angles.beta2.sin());
    let r2 = std::f64::consts::SQRT_2;
    let d = Matrix3::new(
        (1.0 + c) / 2.0,
        -s / r2,
        (1.0 - c) / 2.0,
        s / r2,
        c,
        -s / r2,
        (1.0 - c) / 2.0,
        s / r2,
        (1.0 + c) / 2.0,
    );
    let ms = [1.0, 0.0, -1.0];
    Matrix3::from_fn(|r, k| {
        let ph = -(ms[r] * angles.beta1 + ms[k] * angles.beta3);
        Complex::from_polar(d[(r, k)], ph)
    })
}

//! Double-double arithmetic: an unevaluated sum `hi + lo` of two `f64`s with
//! `|lo| <= ulp(hi) / 2`, carrying about 32 significant digits.
//!
//! Used as the evaluation type of finite-difference checks, where `f64`
//! rounding in the loss would otherwise swamp small or vanishing gradients.
//! Arithmetic, `sqrt`, `exp`, `exp_m1`, `ln`, `ln_1p`, the hyperbolic
//! functions and integer powers are carried to full width; trigonometric
//! functions and `cbrt` go through `f64`.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::num::FpCategory;
use std::ops::{Add, Div, Mul, Neg, Rem, Sub};

use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

const LN2: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::LN_2,
    lo: 2.3190468138462996e-17,
};
/// `exp` reduces its argument by `2^EXP_HALVINGS` before the series.
const EXP_HALVINGS: i32 = 10;

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DoubleDouble {
    pub const fn new(hi: f64, lo: f64) -> Self {
        DoubleDouble { hi, lo }
    }

    /// The exact double-double value of `x`.
    pub const fn lift(x: f64) -> Self {
        DoubleDouble { hi: x, lo: 0.0 }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    fn from_parts(a: f64, b: f64) -> Self {
        let (hi, lo) = quick_two_sum(a, b);
        DoubleDouble { hi, lo }
    }

    /// Falls back to the plain `f64` result once it is no longer finite,
    /// where the error terms would turn into NaN.
    fn guarded(plain: f64, exact: impl FnOnce() -> Self) -> Self {
        if plain.is_finite() {
            exact()
        } else {
            DoubleDouble::lift(plain)
        }
    }

    fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        Self::from_parts(p, e + self.lo * b)
    }

    /// Multiplies by `2^k` exactly.
    fn scale(self, k: i32) -> Self {
        let half = k / 2;
        let (f1, f2) = (2f64.powi(half), 2f64.powi(k - half));
        DoubleDouble {
            hi: self.hi * f1 * f2,
            lo: self.lo * f1 * f2,
        }
    }

    /// `exp(r) - 1` for `|r| <= 0.5`: Taylor series on `r / 2^10`, then
    /// `s -> 2s + s^2` back up, which never forms `1 + s`.
    fn expm1_small(r: Self) -> Self {
        let r = r.scale(-EXP_HALVINGS);
        let mut sum = DoubleDouble::zero();
        let mut term = r;
        let mut n = 1.0;
        while term.hi.abs() > 1e-36 * sum.hi.abs().max(f64::MIN_POSITIVE) && n < 40.0 {
            sum = sum + term;
            n += 1.0;
            term = term * r / DoubleDouble::lift(n);
        }
        for _ in 0..EXP_HALVINGS {
            sum = sum.scale(1) + sum * sum;
        }
        sum
    }
}

impl From<f64> for DoubleDouble {
    fn from(x: f64) -> Self {
        DoubleDouble::lift(x)
    }
}

impl fmt::Display for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&(self.hi + self.lo), f)
    }
}

impl PartialOrd for DoubleDouble {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            o => Some(o),
        }
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        DoubleDouble {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, b: Self) -> Self {
        Self::guarded(self.hi + b.hi, || {
            let (s, e) = two_sum(self.hi, b.hi);
            let (t, f) = two_sum(self.lo, b.lo);
            let (s, e) = quick_two_sum(s, e + t);
            Self::from_parts(s, e + f)
        })
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, b: Self) -> Self {
        self + -b
    }
}

#[allow(clippy::suspicious_arithmetic_impl)]
impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, b: Self) -> Self {
        Self::guarded(self.hi * b.hi, || {
            let (p, e) = two_prod(self.hi, b.hi);
            Self::from_parts(p, e + (self.hi * b.lo + self.lo * b.hi))
        })
    }
}

#[allow(clippy::suspicious_arithmetic_impl)]
impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, b: Self) -> Self {
        Self::guarded(self.hi / b.hi, || {
            let q1 = self.hi / b.hi;
            let r = self - b.mul_f64(q1);
            let q2 = r.hi / b.hi;
            let r = r - b.mul_f64(q2);
            let q3 = r.hi / b.hi;
            Self::from_parts(q1, q2) + DoubleDouble::lift(q3)
        })
    }
}

impl Rem for DoubleDouble {
    type Output = Self;
    fn rem(self, b: Self) -> Self {
        self - (self / b).trunc() * b
    }
}

impl Sum for DoubleDouble {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(DoubleDouble::zero(), |a, b| a + b)
    }
}

impl Zero for DoubleDouble {
    fn zero() -> Self {
        DoubleDouble::lift(0.0)
    }
    fn is_zero(&self) -> bool {
        self.hi == 0.0
    }
}

impl One for DoubleDouble {
    fn one() -> Self {
        DoubleDouble::lift(1.0)
    }
}

impl Num for DoubleDouble {
    type FromStrRadixErr = <f64 as Num>::FromStrRadixErr;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(DoubleDouble::lift)
    }
}

impl ToPrimitive for DoubleDouble {
    fn to_i64(&self) -> Option<i64> {
        (self.hi + self.lo).to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        (self.hi + self.lo).to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.hi + self.lo)
    }
}

impl FromPrimitive for DoubleDouble {
    fn from_i64(n: i64) -> Option<Self> {
        let hi = n as f64;
        Some(Self::from_parts(hi, (n as i128 - hi as i128) as f64))
    }
    fn from_u64(n: u64) -> Option<Self> {
        let hi = n as f64;
        Some(Self::from_parts(hi, (n as i128 - hi as i128) as f64))
    }
    fn from_f64(x: f64) -> Option<Self> {
        Some(DoubleDouble::lift(x))
    }
}

impl NumCast for DoubleDouble {
    fn from<T: ToPrimitive>(n: T) -> Option<Self> {
        n.to_f64().map(DoubleDouble::lift)
    }
}

impl Float for DoubleDouble {
    fn nan() -> Self {
        DoubleDouble::lift(f64::NAN)
    }
    fn infinity() -> Self {
        DoubleDouble::lift(f64::INFINITY)
    }
    fn neg_infinity() -> Self {
        DoubleDouble::lift(f64::NEG_INFINITY)
    }
    fn neg_zero() -> Self {
        DoubleDouble::lift(-0.0)
    }
    fn min_value() -> Self {
        DoubleDouble::lift(f64::MIN)
    }
    fn min_positive_value() -> Self {
        DoubleDouble::lift(f64::MIN_POSITIVE)
    }
    fn epsilon() -> Self {
        DoubleDouble::lift(f64::EPSILON * f64::EPSILON)
    }
    fn max_value() -> Self {
        DoubleDouble::lift(f64::MAX)
    }
    fn is_nan(self) -> bool {
        self.hi.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.hi.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.hi.is_finite()
    }
    fn is_normal(self) -> bool {
        self.hi.is_normal()
    }
    fn classify(self) -> FpCategory {
        self.hi.classify()
    }
    fn floor(self) -> Self {
        let hi = self.hi.floor();
        if hi == self.hi {
            Self::from_parts(hi, self.lo.floor())
        } else {
            DoubleDouble::lift(hi)
        }
    }
    fn ceil(self) -> Self {
        -(-self).floor()
    }
    fn round(self) -> Self {
        let half = DoubleDouble::lift(0.5);
        if self.hi >= 0.0 {
            (self + half).floor()
        } else {
            -(-self + half).floor()
        }
    }
    fn trunc(self) -> Self {
        if self.hi >= 0.0 {
            self.floor()
        } else {
            self.ceil()
        }
    }
    fn fract(self) -> Self {
        self - self.trunc()
    }
    fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }
    fn signum(self) -> Self {
        DoubleDouble::lift(self.hi.signum())
    }
    fn is_sign_positive(self) -> bool {
        self.hi.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.hi.is_sign_negative()
    }
    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }
    fn recip(self) -> Self {
        DoubleDouble::one() / self
    }
    fn powi(self, n: i32) -> Self {
        let mut base = self;
        let mut e = n.unsigned_abs();
        let mut acc = DoubleDouble::one();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            e >>= 1;
        }
        if n < 0 {
            acc.recip()
        } else {
            acc
        }
    }
    fn powf(self, n: Self) -> Self {
        (n * self.ln()).exp()
    }
    fn sqrt(self) -> Self {
        if self.hi <= 0.0 || !self.hi.is_finite() {
            return DoubleDouble::lift(self.hi.sqrt());
        }
        let y = DoubleDouble::lift(self.hi.sqrt());
        y + (self - y * y) / y.scale(1)
    }
    fn exp(self) -> Self {
        if self.hi > 709.8 {
            return DoubleDouble::infinity();
        }
        if self.hi < -745.2 {
            return DoubleDouble::zero();
        }
        let k = (self.hi / LN2.hi).round();
        let r = self - LN2.mul_f64(k);
        (DoubleDouble::expm1_small(r) + DoubleDouble::one()).scale(k as i32)
    }
    fn exp2(self) -> Self {
        (self * LN2).exp()
    }
    fn ln(self) -> Self {
        if self.hi <= 0.0 || !self.hi.is_finite() {
            return DoubleDouble::lift(self.hi.ln());
        }
        // Newton on exp(y) = x; each step doubles the correct digits.
        let mut y = DoubleDouble::lift(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - DoubleDouble::one();
        }
        y
    }
    fn log(self, base: Self) -> Self {
        self.ln() / base.ln()
    }
    fn log2(self) -> Self {
        self.ln() / LN2
    }
    fn log10(self) -> Self {
        self.ln() / DoubleDouble::lift(10.0).ln()
    }
    fn max(self, other: Self) -> Self {
        if self.is_nan() || other > self {
            other
        } else {
            self
        }
    }
    fn min(self, other: Self) -> Self {
        if self.is_nan() || other < self {
            other
        } else {
            self
        }
    }
    fn abs_sub(self, other: Self) -> Self {
        if self > other {
            self - other
        } else {
            DoubleDouble::zero()
        }
    }
    fn cbrt(self) -> Self {
        DoubleDouble::lift(self.hi.cbrt())
    }
    fn hypot(self, other: Self) -> Self {
        (self * self + other * other).sqrt()
    }
    fn sin(self) -> Self {
        DoubleDouble::lift(self.hi.sin())
    }
    fn cos(self) -> Self {
        DoubleDouble::lift(self.hi.cos())
    }
    fn tan(self) -> Self {
        DoubleDouble::lift(self.hi.tan())
    }
    fn asin(self) -> Self {
        DoubleDouble::lift(self.hi.asin())
    }
    fn acos(self) -> Self {
        DoubleDouble::lift(self.hi.acos())
    }
    fn atan(self) -> Self {
        DoubleDouble::lift(self.hi.atan())
    }
    fn atan2(self, other: Self) -> Self {
        DoubleDouble::lift(self.hi.atan2(other.hi))
    }
    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }
    fn exp_m1(self) -> Self {
        if self.hi.abs() <= 0.5 {
            DoubleDouble::expm1_small(self)
        } else {
            self.exp() - DoubleDouble::one()
        }
    }
    fn ln_1p(self) -> Self {
        if self.hi <= -1.0 || !self.hi.is_finite() {
            return DoubleDouble::lift(self.hi.ln_1p());
        }
        // Newton on exp_m1(y) = x, which stays accurate for tiny x.
        let mut y = DoubleDouble::lift(self.hi.ln_1p());
        for _ in 0..2 {
            let e = y.exp_m1();
            y = y - (e - self) / (e + DoubleDouble::one());
        }
        y
    }
    fn sinh(self) -> Self {
        let e = self.exp_m1();
        // (e^x - e^-x) / 2 with e^x = 1 + e.
        (e + e / (e + DoubleDouble::one())).scale(-1)
    }
    fn cosh(self) -> Self {
        let e = self.exp();
        (e + e.recip()).scale(-1)
    }
    fn tanh(self) -> Self {
        if self.hi.abs() > 40.0 {
            return self.signum();
        }
        let e = self.scale(1).exp_m1();
        e / (e + DoubleDouble::lift(2.0))
    }
    fn asinh(self) -> Self {
        let a = self.abs();
        let y = (a + (a * a + DoubleDouble::one()).sqrt()).ln();
        if self.hi < 0.0 {
            -y
        } else {
            y
        }
    }
    fn acosh(self) -> Self {
        (self + (self * self - DoubleDouble::one()).sqrt()).ln()
    }
    fn atanh(self) -> Self {
        let one = DoubleDouble::one();
        ((one + self) / (one - self)).ln().scale(-1)
    }
    fn integer_decode(self) -> (u64, i16, i8) {
        self.hi.integer_decode()
    }
}

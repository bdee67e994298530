//! Comparison functions: class-K∞ maps, their time-indexed families and the
//! exponential KL shape `λ₁·λ₂^k·s` (optionally times `λ₃^τ`).
//!
//! Inverses use closed forms for linear and pure-power maps and a bracketed
//! bisection otherwise.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::{Scalar, INVERSE_TOL};
use crate::weights::{powi_u64, TimeWeight};

pub type ScalarFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;
pub type TimeScalarFn<T> = Arc<dyn Fn(T, u64) -> T + Send + Sync>;

/// A class-K∞ function `ℝ≥0 → ℝ≥0`.
#[derive(Clone)]
pub enum KInf<T> {
    /// `c·s`
    Linear(T),
    /// `c·s^p`
    Power { coef: T, exp: T },
    Custom { name: String, f: ScalarFn<T> },
}

impl<T: Scalar> fmt::Debug for KInf<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KInf::Linear(c) => write!(f, "Linear({c})"),
            KInf::Power { coef, exp } => write!(f, "Power({coef}·s^{exp})"),
            KInf::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl<T: Scalar> KInf<T> {
    pub fn identity() -> Self {
        KInf::Linear(T::one())
    }

    pub fn custom(name: impl Into<String>, f: impl Fn(T) -> T + Send + Sync + 'static) -> Self {
        KInf::Custom {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn eval(&self, s: T) -> T {
        match self {
            KInf::Linear(c) => *c * s,
            KInf::Power { coef, exp } => *coef * s.powf(*exp),
            KInf::Custom { f, .. } => f(s),
        }
    }

    pub fn linear_coefficient(&self) -> Option<T> {
        match self {
            KInf::Linear(c) => Some(*c),
            KInf::Power { coef, exp } if *exp == T::one() => Some(*coef),
            _ => None,
        }
    }

    pub fn inverse(&self, y: T) -> Result<T> {
        if y <= T::zero() {
            return Ok(T::zero());
        }
        match self {
            KInf::Linear(c) => Ok(y / *c),
            KInf::Power { coef, exp } => Ok((y / *coef).powf(T::one() / *exp)),
            KInf::Custom { f, name } => bisect_inverse(|s| f(s), y)
                .map_err(|e| Error::Numeric(format!("inverting {name}: {e}"))),
        }
    }

    /// Sampled class-K∞ check on a logarithmic grid `s_min..s_max`: zero at
    /// zero and strictly increasing. Unboundedness is checked by requiring the
    /// last sample to exceed every earlier one.
    pub fn check_samples(&self, s_min: T, s_max: T, n: usize) -> bool {
        if self.eval(T::zero()) != T::zero() {
            return false;
        }
        let mut prev = T::zero();
        for s in log_grid(s_min, s_max, n) {
            let v = self.eval(s);
            if !(v > prev) || !v.is_finite() {
                return false;
            }
            prev = v;
        }
        true
    }
}

/// A family `s ↦ α(s, τ)` of class-K∞ functions indexed by the clock.
#[derive(Clone)]
pub enum TimeKInf<T> {
    /// Identically zero; allowed for `w̄`, which only has to be nondecreasing.
    Zero,
    Uniform(KInf<T>),
    /// `base(s)·ℓ₂(τ)`
    Weighted { base: KInf<T>, weight: TimeWeight<T> },
    Scaled(T, Box<TimeKInf<T>>),
    Sum(Box<TimeKInf<T>>, Box<TimeKInf<T>>),
    Custom { name: String, f: TimeScalarFn<T> },
}

impl<T: Scalar> fmt::Debug for TimeKInf<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeKInf::Zero => write!(f, "Zero"),
            TimeKInf::Uniform(k) => write!(f, "Uniform({k:?})"),
            TimeKInf::Weighted { base, weight } => {
                write!(f, "Weighted({base:?} × {})", weight.name())
            }
            TimeKInf::Scaled(c, inner) => write!(f, "{c} × {inner:?}"),
            TimeKInf::Sum(a, b) => write!(f, "({a:?} + {b:?})"),
            TimeKInf::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl<T: Scalar> TimeKInf<T> {
    pub fn linear(c: T) -> Self {
        TimeKInf::Uniform(KInf::Linear(c))
    }

    /// `c·s·ℓ₂(τ)`
    pub fn linear_weighted(c: T, weight: TimeWeight<T>) -> Self {
        TimeKInf::Weighted {
            base: KInf::Linear(c),
            weight,
        }
    }

    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(T, u64) -> T + Send + Sync + 'static,
    ) -> Self {
        TimeKInf::Custom {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn plus(self, other: TimeKInf<T>) -> Self {
        match (self, other) {
            (TimeKInf::Zero, b) => b,
            (a, TimeKInf::Zero) => a,
            (a, b) => TimeKInf::Sum(Box::new(a), Box::new(b)),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, TimeKInf::Zero)
    }

    pub fn eval(&self, s: T, tau: u64) -> T {
        match self {
            TimeKInf::Zero => T::zero(),
            TimeKInf::Uniform(k) => k.eval(s),
            TimeKInf::Weighted { base, weight } => base.eval(s) * weight.eval(tau),
            TimeKInf::Scaled(c, inner) => *c * inner.eval(s, tau),
            TimeKInf::Sum(a, b) => a.eval(s, tau) + b.eval(s, tau),
            TimeKInf::Custom { f, .. } => f(s, tau),
        }
    }

    /// `Some(c)` when `α(·, τ)` is `s ↦ c·s`.
    pub fn linear_coefficient(&self, tau: u64) -> Option<T> {
        match self {
            TimeKInf::Zero => Some(T::zero()),
            TimeKInf::Uniform(k) => k.linear_coefficient(),
            TimeKInf::Weighted { base, weight } => {
                base.linear_coefficient().map(|c| c * weight.eval(tau))
            }
            TimeKInf::Scaled(c, inner) => inner.linear_coefficient(tau).map(|k| *c * k),
            TimeKInf::Sum(a, b) => Some(a.linear_coefficient(tau)? + b.linear_coefficient(tau)?),
            TimeKInf::Custom { .. } => None,
        }
    }

    /// Inverse of `α(·, τ)`.
    pub fn inverse(&self, y: T, tau: u64) -> Result<T> {
        if y <= T::zero() {
            return Ok(T::zero());
        }
        if let Some(c) = self.linear_coefficient(tau) {
            if c > T::zero() {
                return Ok(y / c);
            }
            return Err(Error::Numeric(format!(
                "cannot invert {self:?} at tau {tau}: coefficient {c} is not positive"
            )));
        }
        match self {
            TimeKInf::Uniform(k) => k.inverse(y),
            TimeKInf::Weighted { base, weight } => base.inverse(y / weight.eval(tau)),
            TimeKInf::Scaled(c, inner) => inner.inverse(y / *c, tau),
            _ => bisect_inverse(|s| self.eval(s, tau), y)
                .map_err(|e| Error::Numeric(format!("inverting {self:?} at tau {tau}: {e}"))),
        }
    }

    /// Sampled check that `α(·, τ)` is zero at zero and nondecreasing (strictly
    /// increasing when `strict`).
    pub fn check_samples(&self, tau: u64, s_min: T, s_max: T, n: usize, strict: bool) -> bool {
        if self.eval(T::zero(), tau) != T::zero() {
            return false;
        }
        let mut prev = T::zero();
        for s in log_grid(s_min, s_max, n) {
            let v = self.eval(s, tau);
            let ok = if strict { v > prev } else { v >= prev };
            if !ok || !v.is_finite() {
                return false;
            }
            prev = v;
        }
        true
    }
}

/// `β(s, k, τ) = λ₁·s·λ₂^k·λ₃^τ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpKl<T> {
    pub lambda1: T,
    pub lambda2: T,
    pub lambda3: T,
}

impl<T: Scalar> ExpKl<T> {
    pub fn new(lambda1: T, lambda2: T) -> Result<Self> {
        Self::with_clock(lambda1, lambda2, T::one())
    }

    pub fn with_clock(lambda1: T, lambda2: T, lambda3: T) -> Result<Self> {
        if !(lambda1 >= T::one()) {
            return Err(Error::param("exp-KL shape", format!("lambda1 = {lambda1} < 1")));
        }
        if !(lambda2 >= T::zero() && lambda2 < T::one()) {
            return Err(Error::param(
                "exp-KL shape",
                format!("lambda2 = {lambda2} outside [0, 1)"),
            ));
        }
        if !(lambda3 > T::zero()) {
            return Err(Error::param("exp-KL shape", format!("lambda3 = {lambda3} <= 0")));
        }
        Ok(Self {
            lambda1,
            lambda2,
            lambda3,
        })
    }

    pub fn eval(&self, s: T, k: u64, tau: u64) -> T {
        let mut v = self.lambda1 * s * powi_u64(self.lambda2, k);
        if self.lambda3 != T::one() {
            v = v * powi_u64(self.lambda3, tau);
        }
        v
    }
}

/// Logarithmically spaced points on `[lo, hi]` (both ends included).
pub fn log_grid<T: Scalar>(lo: T, hi: T, n: usize) -> Vec<T> {
    assert!(lo > T::zero() && hi >= lo && n >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    let step = (b - a) / T::from_count(n as u64 - 1);
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                (a + step * T::from_count(i as u64)).exp()
            }
        })
        .collect()
}

/// Solves `f(s) = y` for nondecreasing `f` with `f(0) = 0`, to absolute
/// tolerance [`INVERSE_TOL`] in `s`.
pub fn bisect_inverse<T: Scalar>(f: impl Fn(T) -> T, y: T) -> Result<T> {
    if y <= T::zero() {
        return Ok(T::zero());
    }
    let mut hi = T::one();
    let mut expansions = 0;
    while f(hi) < y {
        hi = hi * T::lit(2.0);
        expansions += 1;
        if expansions > 1100 || !hi.is_finite() {
            return Err(Error::Numeric(format!(
                "no bracket for target {y}: f({hi}) still below after {expansions} doublings"
            )));
        }
    }
    let mut lo = T::zero();
    let tol = T::lit(INVERSE_TOL);
    for _ in 0..2000 {
        if hi - lo <= tol {
            break;
        }
        let mid = lo + (hi - lo) / T::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

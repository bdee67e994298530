//! Time weights `ℓ₂(k)` for separable stage costs `ℓ₁(x,u)·ℓ₂(τ)` and their
//! exponential envelopes `c₁·γ_lo^k ≤ ℓ₂(k) ≤ c₂·γ_hi^k`.
//!
//! Envelope checks run in the log domain. Strongly decaying weights such as
//! `0.8^k` underflow `f64` long before `k = 10⁴`, while their logarithms stay
//! perfectly representable.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub enum WeightKind<T> {
    /// Any sequence with values in `[lo, hi]`. Without a profile the weight is
    /// the constant `lo`; a profile is repeated periodically.
    Band {
        lo: T,
        hi: T,
        profile: Option<Arc<[T]>>,
    },
    /// `γ^k`, evaluated with `powi` so that it matches its own envelope
    /// bit for bit.
    Geometric { gamma: T },
    /// `1/(k^h + 1)`.
    PolyDecay { h: T },
    /// `exp(-|k-μ|/(2m))`.
    Laplacian { m: T, mu: u64 },
}

/// Exponential envelope of a time weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Envelope<T> {
    pub c1: T,
    pub gamma_lo: T,
    pub c2: T,
    pub gamma_hi: T,
}

/// An open interval `(lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OpenInterval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> OpenInterval<T> {
    pub fn contains(&self, v: T) -> bool {
        v > self.lo && v < self.hi
    }
}

#[derive(Clone, Debug)]
pub struct TimeWeight<T> {
    kind: WeightKind<T>,
    envelope_override: Option<Envelope<T>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnvelopeViolation {
    pub k: u64,
    pub side: &'static str,
    pub bound: f64,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnvelopeReport {
    pub weight: String,
    pub k_max: u64,
    pub pass: bool,
    /// Smallest log-domain margin over both sides and all `k`; zero means the
    /// envelope is tight somewhere.
    pub worst_log_slack: f64,
    pub first_violation: Option<EnvelopeViolation>,
    pub violations: u64,
    pub envelope: Envelope<f64>,
}

impl<T: Scalar> TimeWeight<T> {
    pub fn band(lo: T, hi: T) -> Result<Self> {
        Self::check_band(lo, hi)?;
        Ok(Self::from_kind(WeightKind::Band {
            lo,
            hi,
            profile: None,
        }))
    }

    /// A band weight following `profile` periodically. Every entry must lie in
    /// `[lo, hi]`.
    pub fn band_with_profile(lo: T, hi: T, profile: Vec<T>) -> Result<Self> {
        Self::check_band(lo, hi)?;
        if profile.is_empty() {
            return Err(Error::param("band profile", "profile must be non-empty"));
        }
        if let Some((i, v)) = profile
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= lo && **v <= hi))
        {
            return Err(Error::param(
                "band profile",
                format!("entry {i} = {v} outside [{lo}, {hi}]"),
            ));
        }
        Ok(Self::from_kind(WeightKind::Band {
            lo,
            hi,
            profile: Some(profile.into()),
        }))
    }

    pub fn geometric(gamma: T) -> Result<Self> {
        if !(gamma > T::zero() && gamma.is_finite()) {
            return Err(Error::param("geometric rate", format!("gamma = {gamma} must be > 0")));
        }
        Ok(Self::from_kind(WeightKind::Geometric { gamma }))
    }

    pub fn poly_decay(h: T) -> Result<Self> {
        if !(h > T::zero() && h.is_finite()) {
            return Err(Error::param("polynomial decay", format!("h = {h} must be > 0")));
        }
        Ok(Self::from_kind(WeightKind::PolyDecay { h }))
    }

    pub fn laplacian(m: T, mu: u64) -> Result<Self> {
        if !(m > T::zero() && m.is_finite()) {
            return Err(Error::param("laplacian width", format!("m = {m} must be > 0")));
        }
        Ok(Self::from_kind(WeightKind::Laplacian { m, mu }))
    }

    /// Replaces the catalog envelope. The catalog constants are one valid
    /// choice among many; `check_envelope` decides whether an override holds.
    pub fn with_envelope(mut self, env: Envelope<T>) -> Self {
        self.envelope_override = Some(env);
        self
    }

    fn from_kind(kind: WeightKind<T>) -> Self {
        Self {
            kind,
            envelope_override: None,
        }
    }

    fn check_band(lo: T, hi: T) -> Result<()> {
        if !(lo > T::zero() && lo <= hi && hi.is_finite()) {
            return Err(Error::param(
                "band bounds",
                format!("need 0 < a <= b < inf, got a = {lo}, b = {hi}"),
            ));
        }
        Ok(())
    }

    pub fn kind(&self) -> &WeightKind<T> {
        &self.kind
    }

    pub fn name(&self) -> String {
        match &self.kind {
            WeightKind::Band { lo, hi, profile } => match profile {
                Some(p) => format!("band({lo},{hi};profile[{}])", p.len()),
                None => format!("band({lo},{hi})"),
            },
            WeightKind::Geometric { gamma } => format!("geometric({gamma})"),
            WeightKind::PolyDecay { h } => format!("poly_decay({h})"),
            WeightKind::Laplacian { m, mu } => format!("laplacian({m},{mu})"),
        }
    }

    pub fn eval(&self, k: u64) -> T {
        match &self.kind {
            WeightKind::Band { lo, profile, .. } => match profile {
                Some(p) => p[(k % p.len() as u64) as usize],
                None => *lo,
            },
            WeightKind::Geometric { gamma } => powi_u64(*gamma, k),
            WeightKind::PolyDecay { h } => {
                T::one() / (T::from_count(k).powf(*h) + T::one())
            }
            WeightKind::Laplacian { m, mu } => {
                let d = T::from_count(k.abs_diff(*mu));
                (-d / (T::lit(2.0) * *m)).exp()
            }
        }
    }

    /// `ln ℓ₂(k)`, finite for every `k` even where `eval` underflows.
    pub fn ln_eval(&self, k: u64) -> T {
        match &self.kind {
            WeightKind::Band { .. } => self.eval(k).ln(),
            WeightKind::Geometric { gamma } => T::from_count(k) * gamma.ln(),
            WeightKind::PolyDecay { h } => -(T::from_count(k).powf(*h)).ln_1p(),
            WeightKind::Laplacian { m, mu } => {
                -T::from_count(k.abs_diff(*mu)) * laplace_rate(*m)
            }
        }
    }

    /// Logarithms `(ln c₁, ln γ_lo, ln c₂, ln γ_hi)` of the envelope, in closed
    /// form for the catalog constants.
    pub fn ln_envelope(&self) -> [T; 4] {
        if let Some(env) = self.envelope_override {
            return [env.c1.ln(), env.gamma_lo.ln(), env.c2.ln(), env.gamma_hi.ln()];
        }
        let zero = T::zero();
        match &self.kind {
            WeightKind::Band { lo, hi, .. } => [lo.ln(), zero, hi.ln(), zero],
            WeightKind::Geometric { gamma } => [zero, gamma.ln(), zero, gamma.ln()],
            WeightKind::PolyDecay { h } => [zero, -h.exp().ln_1p(), zero, zero],
            WeightKind::Laplacian { m, mu } => {
                let r = laplace_rate(*m);
                [-T::from_count(*mu) * r, -r, zero, zero]
            }
        }
    }

    pub fn envelope(&self) -> Envelope<T> {
        if let Some(env) = self.envelope_override {
            return env;
        }
        let one = T::one();
        match &self.kind {
            WeightKind::Band { lo, hi, .. } => Envelope {
                c1: *lo,
                gamma_lo: one,
                c2: *hi,
                gamma_hi: one,
            },
            WeightKind::Geometric { gamma } => Envelope {
                c1: one,
                gamma_lo: *gamma,
                c2: one,
                gamma_hi: *gamma,
            },
            WeightKind::PolyDecay { h } => Envelope {
                c1: one,
                gamma_lo: one / (one + h.exp()),
                c2: one,
                gamma_hi: one,
            },
            WeightKind::Laplacian { m, mu } => {
                let two_m = T::lit(2.0) * *m;
                Envelope {
                    c1: (-T::from_count(*mu) / two_m).exp(),
                    gamma_lo: (-one / two_m).exp(),
                    c2: one,
                    gamma_hi: one,
                }
            }
        }
    }

    /// Values of `L` for which both envelope rates exceed `1 - L`.
    pub fn admissible_l_range(&self) -> OpenInterval<T> {
        let (zero, one) = (T::zero(), T::one());
        match &self.kind {
            WeightKind::Band { .. } => OpenInterval { lo: zero, hi: one },
            WeightKind::Geometric { gamma } => OpenInterval {
                lo: (one - *gamma).max(zero),
                hi: one,
            },
            WeightKind::PolyDecay { h } => {
                let r = one / (one + h.exp());
                OpenInterval {
                    lo: one - r * r,
                    hi: one,
                }
            }
            WeightKind::Laplacian { m, .. } => OpenInterval {
                lo: one - (-one / *m).exp(),
                hi: one,
            },
        }
    }

    /// Checks `c₁γ_lo^k ≤ ℓ₂(k) ≤ c₂γ_hi^k` for every `k` in `0..=k_max`.
    pub fn check_envelope(&self, k_max: u64) -> EnvelopeReport {
        let env = self.envelope();
        let [ln_c1, ln_glo, ln_c2, ln_ghi] = self.ln_envelope();
        let mut worst = f64::INFINITY;
        let mut first = None;
        let mut violations = 0u64;
        for k in 0..=k_max {
            let kk = T::from_count(k);
            let v = self.ln_eval(k);
            let lower = ln_c1 + kk * ln_glo;
            let upper = ln_c2 + kk * ln_ghi;
            let lo_slack = (v - lower).as_f64();
            let hi_slack = (upper - v).as_f64();
            worst = worst.min(lo_slack).min(hi_slack);
            for (slack, side, bound) in [(lo_slack, "lower", lower), (hi_slack, "upper", upper)] {
                if slack < 0.0 || slack.is_nan() {
                    violations += 1;
                    if first.is_none() {
                        first = Some(EnvelopeViolation {
                            k,
                            side,
                            bound: bound.as_f64().exp(),
                            value: v.as_f64().exp(),
                        });
                    }
                }
            }
        }
        EnvelopeReport {
            weight: self.name(),
            k_max,
            pass: violations == 0,
            worst_log_slack: worst,
            first_violation: first,
            violations,
            envelope: Envelope {
                c1: env.c1.as_f64(),
                gamma_lo: env.gamma_lo.as_f64(),
                c2: env.c2.as_f64(),
                gamma_hi: env.gamma_hi.as_f64(),
            },
        }
    }
}

fn laplace_rate<T: Scalar>(m: T) -> T {
    T::one() / (T::lit(2.0) * m)
}

pub(crate) fn powi_u64<T: Scalar>(base: T, k: u64) -> T {
    match i32::try_from(k) {
        Ok(k) => base.powi(k),
        Err(_) => base.powf(T::from_count(k)),
    }
}

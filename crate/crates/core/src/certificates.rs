//! Stability certificates for the optimally controlled closed loop.
//!
//! A [`CertificateBundle`] collects a state measure `σ`, a storage function
//! `W` and comparison bounds `w ≤ …`, `W ≤ w̄`, `V* ≤ v̄`. The checkers here
//! evaluate the detectability and stabilizability inequalities on samples;
//! `Y = V* + W` then decreases along optimal trajectories and the `θ`/`ϑ`
//! maps and the β constructors turn that decrease into explicit bounds
//! `σ(x_k) ≤ β(σ(x₀), k, τ₀)`.
//!
//! Which β applies depends on the optional [`Margins`]:
//!
//! | margins            | route                  | β                                   |
//! |--------------------|------------------------|-------------------------------------|
//! | `Uniform`          | [`Route::UniformKl`]   | none in closed form; decrease check |
//! | `UniformLinear`    | [`Route::UniformExpKl`]| `λ₁λ₂^k s`                          |
//! | `Separable`        | [`Route::SeparableKl`] | [`beta_separable`]                  |
//! | `SeparableLinear`  | [`Route::SeparableExpKl`] | `λ₁λ₂^kλ₃^τ s`                   |

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::comparison::{log_grid, ExpKl, KInf, TimeKInf};
use crate::dp::{Approximation, ValueFunction};
use crate::error::{Error, Result};
use crate::model::{AugmentedDynamics, StateFn};
use crate::report::{CheckReport, DEFAULT_VIOLATOR_CAP};
use crate::scalar::{Scalar, DEFAULT_SLACK};
use crate::weights::{Envelope, TimeWeight};

/// `W(x, τ)`.
pub type StorageFn<T> = Arc<dyn Fn(&[T], u64) -> T + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Clock-free K∞ margins: KL stability, verified through the decrease of `Y`.
    UniformKl,
    /// Linear clock-free margins: exponential bound `λ₁λ₂^k s`.
    UniformExpKl,
    /// Separable cost with exponential envelopes on `ℓ₂`: explicit KL bound.
    SeparableKl,
    /// Separable cost, linear margins: `λ₁λ₂^kλ₃^τ s`.
    SeparableExpKl,
}

impl Route {
    pub fn name(self) -> &'static str {
        match self {
            Route::UniformKl => "uniform_kl",
            Route::UniformExpKl => "uniform_exp_kl",
            Route::SeparableKl => "separable_kl",
            Route::SeparableExpKl => "separable_exp_kl",
        }
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Optional bounds of `w` from below and `v̄ + w̄` from above.
#[derive(Clone)]
pub enum Margins<T> {
    /// `w(s, τ) ≥ a̲(s)` and `v̄ + w̄ ≤ ā(s)`.
    Uniform { lower: KInf<T>, upper: KInf<T> },
    /// `w(s, τ) ≥ a̲_ℓ·s` and `v̄ + w̄ ≤ ā_V·s`.
    UniformLinear { a_ell: T, a_v: T },
    /// `w ≥ a̲(s)·ℓ₂(τ)`, `v̄ + w̄ ≤ ā(s)·ℓ₂(τ)` and `L·ā ≤ a̲`.
    Separable {
        lower: KInf<T>,
        upper: KInf<T>,
        l: T,
        weight: TimeWeight<T>,
    },
    /// `w ≥ a̲_ℓ·s·ℓ₂(τ)` and `v̄ + w̄ ≤ ā_V·s·ℓ₂(τ)`.
    SeparableLinear { a_ell: T, a_v: T, weight: TimeWeight<T> },
}

impl<T: Scalar> fmt::Debug for Margins<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Margins::Uniform { lower, upper } => write!(f, "Uniform({lower:?}, {upper:?})"),
            Margins::UniformLinear { a_ell, a_v } => write!(f, "UniformLinear({a_ell}, {a_v})"),
            Margins::Separable { lower, upper, l, weight } => {
                write!(f, "Separable({lower:?}, {upper:?}, L={l}, {})", weight.name())
            }
            Margins::SeparableLinear { a_ell, a_v, weight } => {
                write!(f, "SeparableLinear({a_ell}, {a_v}, {})", weight.name())
            }
        }
    }
}

impl<T: Scalar> Margins<T> {
    pub fn route(&self) -> Route {
        match self {
            Margins::Uniform { .. } => Route::UniformKl,
            Margins::UniformLinear { .. } => Route::UniformExpKl,
            Margins::Separable { .. } => Route::SeparableKl,
            Margins::SeparableLinear { .. } => Route::SeparableExpKl,
        }
    }

    /// The pair (lower, upper) as clock-free functions plus the `ℓ₂` factor.
    fn parts(&self) -> (KInf<T>, KInf<T>, Option<&TimeWeight<T>>) {
        match self {
            Margins::Uniform { lower, upper } => (lower.clone(), upper.clone(), None),
            Margins::UniformLinear { a_ell, a_v } => (KInf::Linear(*a_ell), KInf::Linear(*a_v), None),
            Margins::Separable { lower, upper, weight, .. } => (lower.clone(), upper.clone(), Some(weight)),
            Margins::SeparableLinear { a_ell, a_v, weight } => {
                (KInf::Linear(*a_ell), KInf::Linear(*a_v), Some(weight))
            }
        }
    }

    /// The contraction constant `L` with `L·ā ≤ a̲`.
    pub fn l(&self) -> Option<T> {
        match self {
            Margins::Separable { l, .. } => Some(*l),
            Margins::UniformLinear { a_ell, a_v } | Margins::SeparableLinear { a_ell, a_v, .. } => {
                Some(*a_ell / *a_v)
            }
            Margins::Uniform { .. } => None,
        }
    }
}

#[derive(Clone)]
pub struct CertificateBundle<T> {
    pub sigma: StateFn<T>,
    /// `None` means `W ≡ 0`.
    pub storage: Option<StorageFn<T>>,
    pub w_lower: TimeKInf<T>,
    pub w_upper: TimeKInf<T>,
    pub v_upper: TimeKInf<T>,
    pub margins: Option<Margins<T>>,
}

impl<T: Scalar> fmt::Debug for CertificateBundle<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CertificateBundle")
            .field("storage", &self.storage.as_ref().map(|_| "W"))
            .field("w_lower", &self.w_lower)
            .field("w_upper", &self.w_upper)
            .field("v_upper", &self.v_upper)
            .field("margins", &self.margins)
            .finish()
    }
}

/// Slack and violator cap shared by the sampled checks.
#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub slack: f64,
    pub violator_cap: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            slack: DEFAULT_SLACK,
            violator_cap: DEFAULT_VIOLATOR_CAP,
        }
    }
}

impl<T: Scalar> CertificateBundle<T> {
    /// `W ≡ 0`, `w̄ ≡ 0`: the common case where the cost itself detects `σ`.
    pub fn zero_storage(sigma: StateFn<T>, w_lower: TimeKInf<T>, v_upper: TimeKInf<T>) -> Self {
        Self {
            sigma,
            storage: None,
            w_lower,
            w_upper: TimeKInf::Zero,
            v_upper,
            margins: None,
        }
    }

    pub fn with_margins(mut self, margins: Margins<T>) -> Self {
        self.margins = Some(margins);
        self
    }

    pub fn with_storage(mut self, w: StorageFn<T>, w_upper: TimeKInf<T>) -> Self {
        self.storage = Some(w);
        self.w_upper = w_upper;
        self
    }

    pub fn route(&self) -> Option<Route> {
        self.margins.as_ref().map(|m| m.route())
    }

    pub fn sigma(&self, x: &[T]) -> T {
        (self.sigma)(x)
    }

    pub fn storage(&self, x: &[T], tau: u64) -> T {
        self.storage.as_ref().map_or(T::zero(), |w| w(x, tau))
    }

    /// `α̲ = w`.
    pub fn alpha_lower(&self) -> &TimeKInf<T> {
        &self.w_lower
    }

    /// `ᾱ = v̄ + w̄`.
    pub fn alpha_upper(&self) -> TimeKInf<T> {
        self.v_upper.clone().plus(self.w_upper.clone())
    }

    /// True when every comparison function ignores the clock.
    pub fn is_clock_free(&self) -> bool {
        fn free<T: Scalar>(f: &TimeKInf<T>) -> bool {
            match f {
                TimeKInf::Zero | TimeKInf::Uniform(_) => true,
                TimeKInf::Scaled(_, inner) => free(inner),
                TimeKInf::Sum(a, b) => free(a) && free(b),
                TimeKInf::Weighted { weight, .. } => {
                    matches!(weight.kind(), crate::weights::WeightKind::Band { profile: None, .. })
                }
                TimeKInf::Custom { .. } => false,
            }
        }
        free(&self.w_lower) && free(&self.w_upper) && free(&self.v_upper)
    }
}

fn to_f64<T: Scalar>(x: &[T]) -> Vec<f64> {
    x.iter().map(|v| v.as_f64()).collect()
}

/// One detectability sample `(x, τ, u)`.
pub type DetectabilitySample<T> = (Vec<T>, u64, Vec<T>);

/// Checks `W(q) ≤ w̄(σ(x), τ)` and
/// `W(F(q, u)) − W(q) ≤ −w(σ(x), τ) + ℓ(q, u)` at every sample.
pub fn check_detectability<T: Scalar>(
    bundle: &CertificateBundle<T>,
    aug: &AugmentedDynamics<T>,
    samples: &[DetectabilitySample<T>],
    opts: &CheckOptions,
) -> CheckReport {
    let mut report = CheckReport::new("detectability", opts.slack);
    let rows: Vec<Option<(f64, f64, f64, f64)>> = samples
        .par_iter()
        .map(|(x, tau, u)| {
            if !aug.base.is_admissible(x, u, *tau) {
                return None;
            }
            let s = bundle.sigma(x);
            let w_now = bundle.storage(x, *tau);
            let xn = aug.base.step(x, u, *tau);
            let w_next = bundle.storage(&xn, tau + 1);
            let ell = aug.cost.eval(x, *tau, u);
            Some((
                w_now.as_f64(),
                bundle.w_upper.eval(s, *tau).as_f64(),
                (w_next - w_now).as_f64(),
                (ell - bundle.w_lower.eval(s, *tau)).as_f64(),
            ))
        })
        .collect();
    for (i, row) in rows.into_iter().enumerate() {
        let (x, tau, _) = &samples[i];
        let Some((w, wbar, dw, rhs)) = row else {
            report.skipped += 1;
            continue;
        };
        report.samples += 1;
        let xf = to_f64(x);
        report.record(opts.violator_cap, i, "W <= wbar(sigma)", &xf, *tau, w, wbar);
        report.record(opts.violator_cap, i, "W(F) - W <= -w(sigma) + l", &xf, *tau, dw, rhs);
    }
    if report.skipped > 0 {
        report.note(format!("{} inadmissible samples skipped", report.skipped));
    }
    report.param("w_lower", format!("{:?}", bundle.w_lower));
    report.param("w_upper", format!("{:?}", bundle.w_upper));
    report.param("storage", if bundle.storage.is_some() { "user" } else { "zero" });
    report.finish()
}

/// Checks `V(q) ≤ v̄(σ(x), τ)` at every sample where `value` is defined and
/// not boundary-contaminated.
pub fn check_stabilizability<T: Scalar>(
    bundle: &CertificateBundle<T>,
    value: &dyn ValueFunction<T>,
    samples: &[(Vec<T>, u64)],
    opts: &CheckOptions,
) -> CheckReport {
    let mut report = CheckReport::new("stabilizability", opts.slack);
    let rows: Vec<Option<(f64, f64)>> = samples
        .par_iter()
        .map(|(x, tau)| {
            if value.contaminated(x, *tau) {
                return None;
            }
            let v = value.value(x, *tau).ok()?;
            Some((v.as_f64(), bundle.v_upper.eval(bundle.sigma(x), *tau).as_f64()))
        })
        .collect();
    for (i, row) in rows.into_iter().enumerate() {
        let (x, tau) = &samples[i];
        match row {
            Some((v, vbar)) => {
                report.samples += 1;
                report.record(opts.violator_cap, i, "V <= vbar(sigma)", &to_f64(x), *tau, v, vbar);
            }
            None => report.skipped += 1,
        }
    }
    match value.approximation() {
        Approximation::Lower => report.note(
            "lower-approximation only: the value source underestimates V*, so a pass is necessary but not sufficient",
        ),
        Approximation::Upper => report.note("value source is an upper bound on V*: a pass is conclusive on the samples"),
        Approximation::Exact => {}
    }
    if report.skipped > 0 {
        report.note(format!(
            "{} samples skipped (off-grid or boundary-contaminated)",
            report.skipped
        ));
    }
    if report.samples == 0 {
        report.fail("no usable samples");
    }
    report.param("v_upper", format!("{:?}", bundle.v_upper));
    report.param("value_source", value.approximation());
    report.finish()
}

/// Checks the margin inequalities of the bundle's [`Margins`] on samples
/// `(s, τ)`; fails when the bundle has none.
pub fn check_uniform_margins<T: Scalar>(
    bundle: &CertificateBundle<T>,
    samples: &[(T, u64)],
    opts: &CheckOptions,
) -> CheckReport {
    let mut report = CheckReport::new("margins", opts.slack);
    let Some(margins) = &bundle.margins else {
        report.fail("bundle declares no margins");
        return report.finish();
    };
    report.param("route", margins.route());
    match margins {
        Margins::UniformLinear { a_ell, a_v } | Margins::SeparableLinear { a_ell, a_v, .. } => {
            report.param("a_ell", a_ell.as_f64());
            report.param("a_v", a_v.as_f64());
            if !(*a_ell > T::zero() && *a_ell <= *a_v) {
                report.fail(format!("need 0 < a_ell <= a_v, got a_ell = {a_ell}, a_v = {a_v}"));
            }
        }
        Margins::Separable { l, .. } => {
            report.param("l", l.as_f64());
            if !(*l > T::zero() && *l < T::one()) {
                report.fail(format!("L = {l} outside (0, 1)"));
            }
        }
        Margins::Uniform { .. } => {}
    }
    let (lower, upper, weight) = margins.parts();
    let l = margins.l();
    let alpha_upper = bundle.alpha_upper();
    for (i, (s, tau)) in samples.iter().enumerate() {
        let scale = weight.map_or(T::one(), |w| w.eval(*tau));
        let lo = lower.eval(*s) * scale;
        let hi = upper.eval(*s) * scale;
        let sf = [s.as_f64()];
        report.samples += 1;
        report.record(opts.violator_cap, i, "lower margin <= w", &sf, *tau, lo.as_f64(), bundle.w_lower.eval(*s, *tau).as_f64());
        report.record(opts.violator_cap, i, "vbar + wbar <= upper margin", &sf, *tau, alpha_upper.eval(*s, *tau).as_f64(), hi.as_f64());
        if let Some(l) = l {
            report.record(
                opts.violator_cap,
                i,
                "L * upper <= lower",
                &sf,
                *tau,
                (l * upper.eval(*s)).as_f64(),
                lower.eval(*s).as_f64(),
            );
        }
    }
    report.finish()
}

/// `v̄(s, τ) = α(s, τ)/(1 − e^{−λ})`: the cost bound produced by an input
/// sequence whose stage costs decay like `α·e^{−λk}`.
pub fn vbar_from_exponential_sequence<T: Scalar>(alpha: TimeKInf<T>, lambda: T) -> Result<TimeKInf<T>> {
    if !(lambda > T::zero()) {
        return Err(Error::param("exponential sequence", format!("lambda = {lambda} must be positive")));
    }
    let factor = T::one() / (-(-lambda).exp_m1());
    Ok(TimeKInf::Scaled(factor, Box::new(alpha)))
}

/// `Y = V* + W` for a given value source.
pub struct YFunction<'a, T> {
    pub value: &'a dyn ValueFunction<T>,
    pub bundle: &'a CertificateBundle<T>,
}

impl<'a, T: Scalar> YFunction<'a, T> {
    pub fn new(value: &'a dyn ValueFunction<T>, bundle: &'a CertificateBundle<T>) -> Self {
        Self { value, bundle }
    }

    pub fn eval(&self, x: &[T], tau: u64) -> Result<T> {
        Ok(self.value.value(x, tau)? + self.bundle.storage(x, tau))
    }

    /// `(w(σ(x), τ), v̄(σ(x), τ) + w̄(σ(x), τ))`.
    pub fn bounds(&self, x: &[T], tau: u64) -> (T, T) {
        y_bounds(self.bundle, x, tau)
    }
}

pub fn y_eval<T: Scalar>(yf: &YFunction<'_, T>, x: &[T], tau: u64) -> Result<T> {
    yf.eval(x, tau)
}

pub fn y_bounds<T: Scalar>(bundle: &CertificateBundle<T>, x: &[T], tau: u64) -> (T, T) {
    let s = bundle.sigma(x);
    (
        bundle.w_lower.eval(s, tau),
        bundle.v_upper.eval(s, tau) + bundle.w_upper.eval(s, tau),
    )
}

/// The one-step contraction `θ(s, τ) = s − w_τ(ᾱ_τ⁻¹(s))` and its iterates.
///
/// Non-linear bundles are checked for monotonicity of `θ(·, τ)` on a log
/// grid of `[s_min, s_max]`; where that fails the map is replaced by its
/// running maximum over the grid (a monotone upper bound) and
/// [`ThetaMap::enveloped`] reports it.
pub struct ThetaMap<'a, T> {
    bundle: &'a CertificateBundle<T>,
    alpha_upper: TimeKInf<T>,
    grid: Vec<T>,
    clock_free: bool,
    cache: Mutex<BTreeMap<u64, Option<Arc<Vec<T>>>>>,
}

impl<'a, T: Scalar> ThetaMap<'a, T> {
    pub fn new(bundle: &'a CertificateBundle<T>) -> Self {
        Self::with_range(bundle, T::lit(1e-6), T::lit(1e3), 200)
    }

    pub fn with_range(bundle: &'a CertificateBundle<T>, s_min: T, s_max: T, n: usize) -> Self {
        Self {
            bundle,
            alpha_upper: bundle.alpha_upper(),
            grid: log_grid(s_min, s_max, n),
            clock_free: bundle.is_clock_free(),
            cache: Mutex::new(BTreeMap::new()),
        }
    }

    /// `θ` without the monotone envelope, clamped at zero.
    pub fn raw(&self, s: T, tau: u64) -> Result<T> {
        if s <= T::zero() {
            return Ok(T::zero());
        }
        let lower = self.bundle.alpha_lower();
        if let (Some(a), Some(b)) = (lower.linear_coefficient(tau), self.alpha_upper.linear_coefficient(tau)) {
            if b > T::zero() {
                return Ok((s - a * (s / b)).max(T::zero()));
            }
        }
        let inv = self.alpha_upper.inverse(s, tau)?;
        Ok((s - lower.eval(inv, tau)).max(T::zero()))
    }

    fn is_linear(&self, tau: u64) -> bool {
        self.bundle.alpha_lower().linear_coefficient(tau).is_some()
            && self.alpha_upper.linear_coefficient(tau).is_some()
    }

    /// Running maximum of `θ(·, τ)` over the grid when the raw map is not
    /// monotone there; `None` when it is.
    fn envelope(&self, tau: u64) -> Result<Option<Arc<Vec<T>>>> {
        if self.is_linear(tau) {
            return Ok(None);
        }
        let key = if self.clock_free { 0 } else { tau };
        if let Some(hit) = self.cache.lock().expect("theta cache").get(&key) {
            return Ok(hit.clone());
        }
        let mut raw = Vec::with_capacity(self.grid.len());
        for s in &self.grid {
            raw.push(self.raw(*s, tau)?);
        }
        let monotone = raw.windows(2).all(|w| w[1] >= w[0]);
        let env = if monotone {
            None
        } else {
            let mut run = T::zero();
            Some(Arc::new(
                raw.into_iter()
                    .map(|v| {
                        run = run.max(v);
                        run
                    })
                    .collect(),
            ))
        };
        self.cache.lock().expect("theta cache").insert(key, env.clone());
        Ok(env)
    }

    /// Whether the monotone envelope replaced the raw map at clock `tau`.
    pub fn enveloped(&self, tau: u64) -> Result<bool> {
        Ok(self.envelope(tau)?.is_some())
    }

    pub fn eval(&self, s: T, tau: u64) -> Result<T> {
        let raw = self.raw(s, tau)?;
        match self.envelope(tau)? {
            None => Ok(raw),
            Some(env) => {
                let below = self.grid.partition_point(|g| *g <= s);
                Ok(if below == 0 { raw } else { raw.max(env[below - 1]) })
            }
        }
    }

    /// `ϑ^(k)(s, τ_f)`: `θ` applied at clocks `τ_f − k, …, τ_f − 1`.
    pub fn vartheta(&self, s: T, k: u64, tau_final: u64) -> Result<T> {
        if tau_final < k {
            return Err(Error::Config(format!("vartheta needs tau_final >= k, got {tau_final} < {k}")));
        }
        let start = tau_final - k;
        let mut v = s;
        for j in 0..k {
            v = self.eval(v, start + j)?;
        }
        Ok(v)
    }
}

pub fn theta<T: Scalar>(s1: T, s2: u64, bundle: &CertificateBundle<T>) -> Result<T> {
    ThetaMap::new(bundle).eval(s1, s2)
}

pub fn vartheta_k<T: Scalar>(s1: T, k: u64, tau_final: u64, bundle: &CertificateBundle<T>) -> Result<T> {
    ThetaMap::new(bundle).vartheta(s1, k, tau_final)
}

/// Shape of a trajectory bound `σ(x_k) ≤ β(σ(x₀), k, τ₀)`.
#[derive(Clone)]
pub enum BetaForm<T> {
    /// `a̲⁻¹((c₂γ̄^τ/(c₁γ̲^τ))·((1−L)/γ̲)^k·ā(s))`.
    Separable {
        lower: KInf<T>,
        upper: KInf<T>,
        envelope: Envelope<T>,
        l: T,
    },
    ExpKl(ExpKl<T>),
    Custom {
        name: String,
        f: Arc<dyn Fn(T, u64, u64) -> T + Send + Sync>,
    },
}

#[derive(Clone)]
pub struct BetaBound<T> {
    pub form: BetaForm<T>,
    pub route: Option<Route>,
    /// Multiplies every value; 1 for the constructed bounds.
    pub scale: T,
}

impl<T: Scalar> fmt::Debug for BetaBound<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.form {
            BetaForm::Separable { envelope, l, .. } => write!(f, "Separable(L={l}, {envelope:?})")?,
            BetaForm::ExpKl(e) => write!(f, "ExpKl({}, {}, {})", e.lambda1, e.lambda2, e.lambda3)?,
            BetaForm::Custom { name, .. } => write!(f, "Custom({name})")?,
        }
        if self.scale != T::one() {
            write!(f, " x {}", self.scale)?;
        }
        Ok(())
    }
}

impl<T: Scalar> BetaBound<T> {
    pub fn custom(name: impl Into<String>, f: impl Fn(T, u64, u64) -> T + Send + Sync + 'static) -> Self {
        Self {
            form: BetaForm::Custom {
                name: name.into(),
                f: Arc::new(f),
            },
            route: None,
            scale: T::one(),
        }
    }

    pub fn scaled(mut self, c: T) -> Self {
        self.scale = self.scale * c;
        self
    }

    pub fn exp_kl(&self) -> Option<&ExpKl<T>> {
        match &self.form {
            BetaForm::ExpKl(e) => Some(e),
            _ => None,
        }
    }

    pub fn eval(&self, s: T, k: u64, tau: u64) -> Result<T> {
        if s <= T::zero() {
            return Ok(T::zero());
        }
        let v = match &self.form {
            BetaForm::ExpKl(e) => e.eval(s, k, tau),
            BetaForm::Custom { f, .. } => f(s, k, tau),
            BetaForm::Separable { lower, upper, envelope, l } => {
                let t = T::from_count(tau);
                let kk = T::from_count(k);
                let ln_factor = envelope.c2.ln() - envelope.c1.ln()
                    + t * (envelope.gamma_hi.ln() - envelope.gamma_lo.ln())
                    + kk * ((T::one() - *l).ln() - envelope.gamma_lo.ln());
                let arg = ln_factor.exp() * upper.eval(s);
                if arg.is_infinite() {
                    T::infinity()
                } else {
                    lower.inverse(arg)?
                }
            }
        };
        Ok(self.scale * v)
    }
}

fn check_envelope_params<T: Scalar>(env: &Envelope<T>, floor: T, what: &'static str) -> Result<()> {
    if !(env.c1 > T::zero() && env.c2 > T::zero()) {
        return Err(Error::param(what, format!("need c1, c2 > 0, got c1 = {}, c2 = {}", env.c1, env.c2)));
    }
    for (name, g) in [("gamma_lo", env.gamma_lo), ("gamma_hi", env.gamma_hi)] {
        if !(g > floor) {
            return Err(Error::param(
                what,
                format!("{name} = {g} must exceed {floor}"),
            ));
        }
    }
    Ok(())
}

/// Explicit KL bound for separable costs whose weight lies between the
/// exponentials `c₁γ̲^k` and `c₂γ̄^k`, given `L·ā ≤ a̲` with `L ∈ (0, 1)`
/// and `γ̲, γ̄ > 1 − L`.
pub fn beta_separable<T: Scalar>(lower: KInf<T>, upper: KInf<T>, envelope: Envelope<T>, l: T) -> Result<BetaBound<T>> {
    if !(l > T::zero() && l < T::one()) {
        return Err(Error::param("contraction constant", format!("L = {l} outside (0, 1)")));
    }
    check_envelope_params(&envelope, T::one() - l, "envelope rate gate")?;
    Ok(BetaBound {
        form: BetaForm::Separable { lower, upper, envelope, l },
        route: Some(Route::SeparableKl),
        scale: T::one(),
    })
}

fn check_linear_margins<T: Scalar>(a_ell: T, a_v: T) -> Result<()> {
    if !(a_ell > T::zero()) {
        return Err(Error::param("linear margins", format!("a_ell = {a_ell} must be positive")));
    }
    if !(a_ell <= a_v) {
        return Err(Error::param(
            "linear margins",
            format!("a_ell = {a_ell} exceeds a_v = {a_v}; w <= vbar + wbar would fail"),
        ));
    }
    Ok(())
}

/// `λ₁ = ā_V/a̲_ℓ`, `λ₂ = 1 − a̲_ℓ/ā_V`.
pub fn beta_uniform_exp<T: Scalar>(a_ell: T, a_v: T) -> Result<BetaBound<T>> {
    check_linear_margins(a_ell, a_v)?;
    Ok(BetaBound {
        form: BetaForm::ExpKl(ExpKl::new(a_v / a_ell, T::one() - a_ell / a_v)?),
        route: Some(Route::UniformExpKl),
        scale: T::one(),
    })
}

/// `λ₁ = ā_V·c₂/(a̲_ℓ·c₁)`, `λ₂ = (1 − a̲_ℓ/ā_V)/γ̲`, `λ₃ = γ̄/γ̲`, valid when
/// `γ̲, γ̄ > 1 − a̲_ℓ/ā_V`.
pub fn beta_separable_exp<T: Scalar>(a_ell: T, a_v: T, envelope: Envelope<T>) -> Result<BetaBound<T>> {
    check_linear_margins(a_ell, a_v)?;
    let rho = T::one() - a_ell / a_v;
    check_envelope_params(&envelope, rho, "envelope rate gate")?;
    let lambda1 = a_v * envelope.c2 / (a_ell * envelope.c1);
    let lambda2 = rho / envelope.gamma_lo;
    let lambda3 = envelope.gamma_hi / envelope.gamma_lo;
    // λ₁ < 1 is possible when c₂ < c₁; the bound stays valid but is not exp-KL
    let lambda1 = lambda1.max(T::one());
    Ok(BetaBound {
        form: BetaForm::ExpKl(ExpKl::with_clock(lambda1, lambda2, lambda3)?),
        route: Some(Route::SeparableExpKl),
        scale: T::one(),
    })
}

/// The β bound implied by the bundle's margins; `None` for the uniform KL
/// route, which has no closed form.
pub fn beta_for_bundle<T: Scalar>(bundle: &CertificateBundle<T>) -> Result<Option<BetaBound<T>>> {
    let Some(m) = &bundle.margins else {
        return Err(Error::Config("bundle declares no margins; no bound route applies".into()));
    };
    Ok(match m {
        Margins::Uniform { .. } => None,
        Margins::UniformLinear { a_ell, a_v } => Some(beta_uniform_exp(*a_ell, *a_v)?),
        Margins::Separable { lower, upper, l, weight } => {
            Some(beta_separable(lower.clone(), upper.clone(), weight.envelope(), *l)?)
        }
        Margins::SeparableLinear { a_ell, a_v, weight } => {
            Some(beta_separable_exp(*a_ell, *a_v, weight.envelope())?)
        }
    })
}

/// Seeded uniform points in the box `[lo, hi]`.
pub fn uniform_samples<T: Scalar>(seed: u64, lo: &[T], hi: &[T], n: usize) -> Vec<Vec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            lo.iter()
                .zip(hi)
                .map(|(a, b)| {
                    let t: f64 = rng.gen();
                    *a + (*b - *a) * T::lit(t)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::AnalyticValue;
    use crate::model::{augment, Dynamics, InputBox, StageCost};

    fn linear_bundle(a_ell: f64, a_v: f64) -> CertificateBundle<f64> {
        CertificateBundle::zero_storage(
            Arc::new(|x: &[f64]| x[0].abs()),
            TimeKInf::linear(a_ell),
            TimeKInf::linear(a_v),
        )
        .with_margins(Margins::UniformLinear { a_ell, a_v })
    }

    #[test]
    fn vbar_from_sequence() {
        let v = vbar_from_exponential_sequence(TimeKInf::<f64>::linear(1.0), 2f64.ln()).unwrap();
        assert!((v.eval(3.0, 0) - 6.0).abs() < 1e-12);
        let sq = TimeKInf::Uniform(KInf::Power { coef: 1.0, exp: 2.0 });
        let v = vbar_from_exponential_sequence(sq.clone(), 1.0).unwrap();
        assert!((v.eval(1.0, 4) - 1.0 / (1.0 - (-1f64).exp())).abs() < 1e-12);
        assert!((v.eval(1.0, 0) - 1.5820).abs() < 1e-4);
        let v = vbar_from_exponential_sequence(sq, 50.0).unwrap();
        assert!((v.eval(1.0, 0) - 1.0).abs() < 1e-12);
        assert!(vbar_from_exponential_sequence(TimeKInf::<f64>::linear(1.0), 0.0).is_err());
    }

    #[test]
    fn theta_linear_and_degenerate() {
        let b = linear_bundle(1.0, 4.0);
        assert!((theta(2.0, 0, &b).unwrap() - 1.5).abs() < 1e-15);
        assert_eq!(theta(0.0, 0, &b).unwrap(), 0.0);
        let b = linear_bundle(3.0, 3.0);
        assert_eq!(theta(5.0, 7, &b).unwrap(), 0.0);
        assert_eq!(vartheta_k(5.0, 0, 0, &b).unwrap(), 5.0);
    }

    #[test]
    fn theta_nonlinear_matches_hand_value() {
        // w = s², ᾱ = 2s² ⇒ θ(s) = s − s/2
        let b = CertificateBundle::zero_storage(
            Arc::new(|x: &[f64]| x[0].abs()),
            TimeKInf::Uniform(KInf::Power { coef: 1.0, exp: 2.0 }),
            TimeKInf::Uniform(KInf::custom("2s^2", |s: f64| 2.0 * s * s)),
        );
        let map = ThetaMap::new(&b);
        assert!((map.eval(3.0, 0).unwrap() - 1.5).abs() < 1e-9);
        assert!(!map.enveloped(0).unwrap());
    }

    #[test]
    fn theta_envelope_kicks_in_for_nonmonotone_maps() {
        // ᾱ(s) = s, w(s) = s − 0.5·s·sin²(s)-ish: θ = 0.5 s sin²(s) is not monotone
        let b = CertificateBundle::zero_storage(
            Arc::new(|x: &[f64]| x[0].abs()),
            TimeKInf::Uniform(KInf::custom("w", |s: f64| s - 0.5 * s * s.sin().powi(2))),
            TimeKInf::linear(1.0),
        );
        let map = ThetaMap::with_range(&b, 1e-3, 20.0, 400);
        assert!(map.enveloped(0).unwrap());
        let a = map.eval(2.0, 0).unwrap();
        let c = map.eval(3.1, 0).unwrap();
        assert!(c >= a - 1e-12);
        assert!(c >= map.raw(3.1, 0).unwrap());
    }

    #[test]
    fn beta_constructors() {
        let b = beta_uniform_exp(1.0f64, 22.0 / 5.0).unwrap();
        let e = b.exp_kl().unwrap();
        assert!((e.lambda1 - 4.4).abs() < 1e-15);
        assert!((e.lambda2 - 17.0 / 22.0).abs() < 1e-15);
        let env = Envelope { c1: 1.0, gamma_lo: 0.8, c2: 1.0, gamma_hi: 0.8 };
        let b = beta_separable_exp(1.0f64, 4.4, env).unwrap();
        let e = b.exp_kl().unwrap();
        assert!((e.lambda2 - 17.0 / 17.6).abs() < 1e-14);
        assert_eq!(e.lambda3, 1.0);
        let env7 = Envelope { c1: 1.0, gamma_lo: 0.7, c2: 1.0, gamma_hi: 0.7 };
        assert!(matches!(beta_separable_exp(1.0, 4.4, env7), Err(Error::Parameter { .. })));
        assert!(beta_uniform_exp(2.0, 1.0).is_err());
        let b = beta_uniform_exp(2.0, 2.0).unwrap();
        assert_eq!(b.eval(1.0, 1, 0).unwrap(), 0.0);
    }

    #[test]
    fn beta_separable_plug_in() {
        let env = Envelope { c1: 1.0, gamma_lo: 1.0, c2: 1.0, gamma_hi: 1.0 };
        let b = beta_separable(KInf::identity(), KInf::identity(), env, 0.5).unwrap();
        for k in 0..10 {
            assert!((b.eval(3.0, k, 7).unwrap() - 3.0 * 0.5f64.powi(k as i32)).abs() < 1e-12);
        }
        assert_eq!(b.eval(0.0, 3, 2).unwrap(), 0.0);
        let env = Envelope { c1: 0.5, gamma_lo: 0.9, c2: 0.5, gamma_hi: 0.9 };
        let b = beta_separable(KInf::identity(), KInf::Linear(2.0), env, 0.4).unwrap();
        assert_eq!(b.eval(1.0, 4, 0).unwrap(), b.eval(1.0, 4, 30).unwrap());
        let bad = Envelope { c1: 1.0, gamma_lo: 0.5, c2: 1.0, gamma_hi: 1.0 };
        assert!(beta_separable(KInf::<f64>::identity(), KInf::identity(), bad, 0.4).is_err());
    }

    #[test]
    fn margins_check() {
        let b = CertificateBundle::zero_storage(
            Arc::new(|x: &[f64]| x[0].abs()),
            TimeKInf::linear(1.0),
            TimeKInf::linear(2.0),
        );
        let samples: Vec<(f64, u64)> = log_grid(1e-3, 1e3, 50).into_iter().map(|s| (s, 0)).collect();
        let good = b.clone().with_margins(Margins::Separable {
            lower: KInf::identity(),
            upper: KInf::Linear(2.0),
            l: 0.5,
            weight: TimeWeight::band(1.0, 1.0).unwrap(),
        });
        let r = check_uniform_margins(&good, &samples, &CheckOptions::default());
        assert!(r.passed(), "{r:?}");
        assert!(r.worst_slack.abs() < 1e-9);
        let bad = b.with_margins(Margins::Separable {
            lower: KInf::identity(),
            upper: KInf::Linear(2.0),
            l: 0.99,
            weight: TimeWeight::band(1.0, 1.0).unwrap(),
        });
        assert!(!check_uniform_margins(&bad, &samples, &CheckOptions::default()).passed());
    }

    #[test]
    fn detectability_catches_oversized_w() {
        let dynamics = Dynamics::new(1, InputBox::new(vec![-1.0], vec![1.0]).unwrap(), |x, u, _t, out| {
            out[0] = x[0] + u[0];
        });
        let aug = augment(dynamics, StageCost::general(1, 1, |x, _t, u| x[0] * x[0] + u[0] * u[0])).unwrap();
        let sigma: StateFn<f64> = Arc::new(|x| x[0] * x[0]);
        let ok = CertificateBundle::zero_storage(sigma.clone(), TimeKInf::linear(1.0), TimeKInf::linear(5.0));
        let samples: Vec<_> = uniform_samples(7, &[-2.0, -1.0], &[2.0, 1.0], 64)
            .into_iter()
            .map(|p| (vec![p[0]], 3, vec![p[1]]))
            .collect();
        assert!(check_detectability(&ok, &aug, &samples, &CheckOptions::default()).passed());
        let bad = CertificateBundle::zero_storage(sigma, TimeKInf::linear(2.0), TimeKInf::linear(5.0));
        let r = check_detectability(&bad, &aug, &samples, &CheckOptions::default());
        assert!(r.violations > 0 && !r.violators.is_empty());
    }

    #[test]
    fn stabilizability_notes_value_kind() {
        let b = linear_bundle(1.0, 2.0);
        let v = AnalyticValue {
            f: Arc::new(|x: &[f64], _| x[0].abs()),
            approximation: Approximation::Upper,
        };
        let samples: Vec<_> = (0..10).map(|i| (vec![i as f64], 0)).collect();
        let r = check_stabilizability(&b, &v, &samples, &CheckOptions::default());
        assert!(r.passed());
        assert!(r.notes[0].contains("conclusive"));
        let zero = CertificateBundle::zero_storage(b.sigma.clone(), TimeKInf::linear(1.0), TimeKInf::Zero);
        assert!(!check_stabilizability(&zero, &v, &samples, &CheckOptions::default()).passed());
    }
}

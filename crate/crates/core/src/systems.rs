//! Worked example problems with their analytic ingredients.
//!
//! * [`slow_scalar`]: `x⁺ = x/(1+x)`, `ℓ = x²`. Converges to the origin,
//!   but not exponentially; `V*` is a trigamma-type series.
//! * [`nonholonomic_integrator`]: the three-state integrator with a time
//!   weight `ℓ₂`; its bundle uses `v̄ = (22/5)·s·ℓ₂(τ)`, so geometric weights
//!   need `γ > 17/22` for the exponential bound.
//! * [`pendulum_tracking`]: tracking-error dynamics of an Euler-discretized
//!   pendulum, with a two-step deadbeat controller.
//! * [`quadratic_detectability_example`]: the `σ = xᵀQx`, `W = 0` bundle for
//!   costs `(xᵀQx + uᵀGu)·ℓ₂(τ)`.

use std::sync::Arc;

use crate::certificates::{CertificateBundle, Margins};
use crate::comparison::{KInf, TimeKInf};
use crate::dp::{AnalyticValue, Approximation};
use crate::error::{Error, Result};
use crate::grid::StateGrid;
use crate::model::{augment, AugmentedDynamics, Dynamics, InputBox, InputGrid, StageCost, StateFn, StateInputFn};
use crate::scalar::Scalar;
use crate::simulate::ControlLaw;
use crate::weights::TimeWeight;

#[derive(Clone)]
pub struct ExampleProblem<T> {
    pub name: &'static str,
    pub aug: AugmentedDynamics<T>,
    /// `ℓ₁` when the cost is separable.
    pub ell1: Option<StateInputFn<T>>,
    pub sigma: StateFn<T>,
    pub bundle: CertificateBundle<T>,
    pub analytic_value: Option<AnalyticValue<T>>,
    pub analytic_controller: Option<ControlLaw<T>>,
    pub grid: StateGrid<T>,
    pub inputs: InputGrid<T>,
    pub notes: Vec<String>,
}

/// Default truncation tolerance of the slow-scalar value series.
pub const SLOW_SCALAR_SERIES_TOL: f64 = 1e-9;

/// `V*(x) = Σ_{k≥0} (z + k)⁻²` with `z = 1/x` for `x > 0`, `x²` for `x ≤ 0`.
///
/// Sums `K = ⌈(2·tol)^{-1/2}⌉` terms and adds the midpoint of the tail
/// bracket `[1/(z+K), 1/(z+K) + 1/(z+K)²]`, so the error is at most
/// `1/(2K²) ≤ tol`.
pub fn slow_scalar_value<T: Scalar>(x: T, tol: T) -> T {
    if x <= T::zero() {
        return x * x;
    }
    let z = x.recip();
    let k_terms = (T::one() / (T::lit(2.0) * tol)).sqrt().ceil().to_u64().unwrap_or(1).max(1);
    let mut sum = T::zero();
    // smallest terms first
    for k in (0..k_terms).rev() {
        let d = z + T::from_count(k);
        sum = sum + (d * d).recip();
    }
    let t = (z + T::from_count(k_terms)).recip();
    sum + t + T::lit(0.5) * t * t
}

/// Scalar system `x⁺ = x/(1+x)` (`0` for `x ≤ 0`) with `ℓ = x²`, `σ = |x|`.
pub fn slow_scalar<T: Scalar>() -> ExampleProblem<T> {
    let dynamics = Dynamics::new(1, InputBox::new(vec![T::zero()], vec![T::zero()]).expect("valid box"), |x: &[T], _u, _t, out: &mut [T]| {
        out[0] = if x[0] <= T::zero() { T::zero() } else { x[0] / (T::one() + x[0]) };
    });
    let ell1: StateInputFn<T> = Arc::new(|x: &[T], _u: &[T]| x[0] * x[0]);
    let weight = TimeWeight::band(T::one(), T::one()).expect("valid band");
    let aug = augment(dynamics, StageCost::separable_shared(1, 1, ell1.clone(), weight)).expect("dimensions agree");
    let sigma: StateFn<T> = Arc::new(|x: &[T]| x[0].abs());
    let tol = T::lit(SLOW_SCALAR_SERIES_TOL);
    let vstar = KInf::custom("slow scalar series", move |s: T| slow_scalar_value(s, tol));
    let square = KInf::Power {
        coef: T::one(),
        exp: T::lit(2.0),
    };
    let bundle = CertificateBundle::zero_storage(
        sigma.clone(),
        TimeKInf::Uniform(square.clone()),
        TimeKInf::Uniform(vstar.clone()),
    )
    .with_margins(Margins::Uniform {
        lower: square,
        upper: vstar,
    });
    ExampleProblem {
        name: "slow_scalar",
        aug,
        ell1: Some(ell1),
        sigma,
        bundle,
        analytic_value: Some(AnalyticValue {
            f: Arc::new(move |x: &[T], _tau| slow_scalar_value(x[0], tol)),
            approximation: Approximation::Exact,
        }),
        analytic_controller: Some(Arc::new(|_x: &[T], _tau| vec![T::zero()])),
        grid: StateGrid::new(vec![T::zero()], vec![T::lit(5.0)], vec![2001]).expect("valid grid"),
        inputs: InputGrid::singleton(vec![T::zero()]).expect("valid input"),
        notes: vec!["V*(0) = 0 is the limit value; the series form is 0·∞ there".into()],
    }
}

/// `a̲_ℓ` and `ā_V` of the integrator bundle.
pub const INTEGRATOR_A_ELL: f64 = 1.0;
pub const INTEGRATOR_A_V: f64 = 22.0 / 5.0;

/// Non-holonomic integrator with stage cost
/// `(x₁² + x₂² + 10|x₃| + |u|²)·ℓ₂(τ)` and `σ = x₁² + x₂² + 10|x₃|`.
///
/// The recommended grid is a lattice (`1/8` in `x₁, x₂`, `1/64` in `x₃`,
/// inputs on `1/8` steps) on which every successor of a node is again a node,
/// so closed-loop rollouts never interpolate.
pub fn nonholonomic_integrator<T: Scalar>(weight: TimeWeight<T>) -> ExampleProblem<T> {
    let one = T::one();
    let ubox = InputBox::new(vec![-one, -one], vec![one, one]).expect("valid box");
    let dynamics = Dynamics::new(3, ubox, |x: &[T], u: &[T], _t, out: &mut [T]| {
        out[0] = x[0] + u[0];
        out[1] = x[1] + u[1];
        out[2] = x[2] + x[0] * u[1] - x[1] * u[0];
    });
    let ten = T::lit(10.0);
    let ell1: StateInputFn<T> =
        Arc::new(move |x: &[T], u: &[T]| x[0] * x[0] + x[1] * x[1] + ten * x[2].abs() + u[0] * u[0] + u[1] * u[1]);
    let sigma: StateFn<T> = Arc::new(move |x: &[T]| x[0] * x[0] + x[1] * x[1] + ten * x[2].abs());
    let aug = augment(dynamics, StageCost::separable_shared(3, 2, ell1.clone(), weight.clone())).expect("dimensions agree");
    let a_ell = T::lit(INTEGRATOR_A_ELL);
    let a_v = T::lit(INTEGRATOR_A_V);
    let bundle = CertificateBundle::zero_storage(
        sigma.clone(),
        TimeKInf::linear_weighted(a_ell, weight.clone()),
        TimeKInf::linear_weighted(a_v, weight.clone()),
    )
    .with_margins(Margins::SeparableLinear { a_ell, a_v, weight });
    let half = T::lit(0.5);
    ExampleProblem {
        name: "integrator",
        aug,
        ell1: Some(ell1),
        sigma,
        bundle,
        analytic_value: None,
        analytic_controller: None,
        grid: StateGrid::new(vec![-one, -one, -half], vec![one, one, half], vec![17, 17, 65]).expect("valid grid"),
        inputs: InputGrid::new(InputBox::new(vec![-half, -half], vec![half, half]).expect("valid box"), vec![9, 9])
            .expect("valid inputs"),
        notes: vec![
            "the stabilizability bound vbar = (22/5)·s·l2(tau) is taken as given; it is checked against the DP lower approximation only".into(),
            "geometric weights need gamma > 17/22 for the exponential bound".into(),
        ],
    }
}

/// The `γ` threshold `1 − a̲_ℓ/ā_V = 17/22` of the integrator bundle.
pub fn integrator_gamma_threshold() -> f64 {
    1.0 - INTEGRATOR_A_ELL / INTEGRATOR_A_V
}

/// Reference input `v(k)`.
pub type ReferenceFn<T> = Arc<dyn Fn(u64) -> T + Send + Sync>;

#[derive(Clone)]
pub struct PendulumParams<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    /// Sampling period.
    pub t: T,
    /// Input penalty weight.
    pub r: T,
    /// `ℓ̲(τ) ∈ [m̲, m̄]`; must be a band weight.
    pub weight: TimeWeight<T>,
    pub reference: ReferenceFn<T>,
    /// Half-width of the declared input box around `v(τ)`.
    pub input_bound: T,
}

impl<T: Scalar> Default for PendulumParams<T> {
    fn default() -> Self {
        let profile = [0.5, 1.0, 2.0, 1.0].map(T::lit).to_vec();
        Self {
            a: T::one(),
            b: T::one(),
            c: T::one(),
            t: T::lit(0.1),
            r: T::lit(0.1),
            weight: TimeWeight::band_with_profile(T::lit(0.5), T::lit(2.0), profile).expect("valid profile"),
            reference: Arc::new(default_reference),
            input_bound: T::lit(1e3),
        }
    }
}

/// `v(k) = 0.2·(−1)^{⌊k/20⌋}`.
pub fn default_reference<T: Scalar>(k: u64) -> T {
    if (k / 20) % 2 == 0 {
        T::lit(0.2)
    } else {
        T::lit(-0.2)
    }
}

impl<T: Scalar> PendulumParams<T> {
    pub fn band(&self) -> Result<(T, T)> {
        match self.weight.kind() {
            crate::weights::WeightKind::Band { lo, hi, .. } => Ok((*lo, *hi)),
            _ => Err(Error::Config("pendulum weight must be a band weight".into())),
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("a", self.a), ("b", self.b), ("c", self.c), ("T", self.t), ("r", self.r)] {
            if !(v > T::zero() && v.is_finite()) {
                return Err(Error::Config(format!("pendulum parameter {name} = {v} must be positive")));
            }
        }
        self.band()?;
        Ok(())
    }

    /// Deadbeat feedback: the input that zeroes `e₂⁺ + e₁⁺/T`, i.e. drives
    /// the error to zero in two steps and keeps it there.
    pub fn deadbeat_input(&self, x: &[T], tau: u64) -> T {
        let (e1, e2, z1) = (x[0], x[1], x[2]);
        let dsin = (e1 + z1).sin() - z1.sin();
        let t = self.t;
        (self.reference)(tau) + (self.b * e2 - self.a * dsin - e2 / t - (e1 + t * e2) / (t * t)) / self.c
    }

    /// Cost of the deadbeat sequence from `(x, τ)`; exact because the error,
    /// and with it every later stage cost, vanishes after two steps.
    pub fn deadbeat_cost(&self, aug: &AugmentedDynamics<T>, x: &[T], tau: u64) -> T {
        let mut total = T::zero();
        let mut state = x.to_vec();
        for k in 0..2 {
            let u = [self.deadbeat_input(&state, tau + k)];
            total = total + aug.cost.eval(&state, tau + k, &u);
            state = aug.base.step(&state, &u, tau + k);
        }
        total
    }

    /// `θ` with `J(q, deadbeat) ≤ θ·σ(x)` for every `q`, from the triangle
    /// inequality and `|sin(a) − sin(b)| ≤ |a − b|`.
    pub fn theta_bound(&self) -> Result<T> {
        let (_, m_hi) = self.band()?;
        let (a, b, c, t, r) = (self.a, self.b, self.c, self.t, self.r);
        let one = T::one();
        let k1 = one + one / t + r / c * (a + b / t + one / (t * t));
        let coef_e1 = one + r / c * (a + one / (t * t)) + k1;
        let coef_e2 = one + r / c * (b + T::lit(2.0) / t) + t * k1;
        Ok(m_hi * coef_e1.max(coef_e2))
    }
}

/// Pendulum tracking problem on `x = (e₁, e₂, z_ref₁, z_ref₂)` with
/// `ℓ = ℓ̲(τ)(σ(x) + r|u − v(τ)|)`, `σ = |e₁| + |e₂|`.
///
/// The bundle uses `w = m̲·s` and `v̄ = θ·s` with `θ` from
/// [`PendulumParams::theta_bound`]; the analytic value is the deadbeat cost,
/// an upper bound on `V*`.
pub fn pendulum_tracking<T: Scalar>(params: PendulumParams<T>) -> Result<ExampleProblem<T>> {
    params.validate()?;
    let (m_lo, _) = params.band()?;
    let p = Arc::new(params);
    let ib = p.input_bound;
    let dyn_p = p.clone();
    let dynamics = Dynamics::new(4, InputBox::new(vec![-ib], vec![ib])?, move |x: &[T], u: &[T], tau, out: &mut [T]| {
        let p = &dyn_p;
        let (e1, e2, z1, z2) = (x[0], x[1], x[2], x[3]);
        let v = (p.reference)(tau);
        out[0] = e1 + p.t * e2;
        out[1] = e2 + p.t * (p.a * ((e1 + z1).sin() - z1.sin()) - p.b * e2 + p.c * (u[0] - v));
        out[2] = z1 + p.t * z2;
        out[3] = z2 + p.t * (p.a * z1.sin() - p.b * z2 + p.c * v);
    })
    .time_varying();
    let cost_p = p.clone();
    let cost = StageCost::general(4, 1, move |x: &[T], tau, u: &[T]| {
        let p = &cost_p;
        p.weight.eval(tau) * (x[0].abs() + x[1].abs() + p.r * (u[0] - (p.reference)(tau)).abs())
    });
    let aug = augment(dynamics, cost)?;
    let sigma: StateFn<T> = Arc::new(|x: &[T]| x[0].abs() + x[1].abs());
    let theta = p.theta_bound()?;
    let bundle = CertificateBundle::zero_storage(sigma.clone(), TimeKInf::linear(m_lo), TimeKInf::linear(theta))
        .with_margins(Margins::UniformLinear { a_ell: m_lo, a_v: theta });
    let value_p = p.clone();
    let value_aug = aug.clone();
    let ctrl_p = p.clone();
    let two = T::lit(2.0);
    Ok(ExampleProblem {
        name: "pendulum",
        aug,
        ell1: None,
        sigma,
        bundle,
        analytic_value: Some(AnalyticValue {
            f: Arc::new(move |x: &[T], tau| value_p.deadbeat_cost(&value_aug, x, tau)),
            approximation: Approximation::Upper,
        }),
        analytic_controller: Some(Arc::new(move |x: &[T], tau| vec![ctrl_p.deadbeat_input(x, tau)])),
        grid: StateGrid::new(vec![-two, -two, -two, -two], vec![two, two, two, two], vec![5, 5, 5, 5])?,
        inputs: InputGrid::new(InputBox::new(vec![T::lit(-5.0)], vec![T::lit(5.0)])?, vec![21])?,
        notes: vec![
            "vbar uses a single constant theta bounding the two-step deadbeat cost; it stands in for the max of two unnamed constants".into(),
            "theta is an analytic upper bound; the sampled max of J/sigma is reported alongside".into(),
        ],
    })
}

/// Sampled maximum of `J(q, deadbeat)/σ(x)` over seeded tuples
/// `(e ∈ [−2,2]², z_ref ∈ [−2,2]², τ ∈ [0, 200))`, skipping `σ < 10⁻⁶`.
pub fn pendulum_sampled_theta<T: Scalar>(problem: &ExampleProblem<T>, params: &PendulumParams<T>, seed: u64, n: usize) -> T {
    let pts = crate::certificates::uniform_samples(seed, &[T::lit(-2.0); 5], &[T::lit(2.0); 5], n);
    let mut best = T::zero();
    for p in pts {
        let tau = ((p[4] + T::lit(2.0)) * T::lit(50.0)).floor().to_u64().unwrap_or(0);
        let x = &p[..4];
        let s = (problem.sigma)(x);
        if s < T::lit(1e-6) {
            continue;
        }
        best = best.max(params.deadbeat_cost(&problem.aug, x, tau) / s);
    }
    best
}

/// Symmetric matrix check plus an `LDLᵀ` factorization: `Ok(d)` with the
/// pivots, or an error when the matrix is not symmetric.
fn ldl_pivots<T: Scalar>(m: &[Vec<T>]) -> Result<Vec<T>> {
    let n = m.len();
    if m.iter().any(|r| r.len() != n) {
        return Err(Error::param("matrix shape", "matrix must be square"));
    }
    let tol = T::lit(1e-12);
    for i in 0..n {
        for j in 0..i {
            if (m[i][j] - m[j][i]).abs() > tol * (T::one() + m[i][j].abs()) {
                return Err(Error::param("matrix symmetry", format!("entry ({i},{j}) differs from ({j},{i})")));
            }
        }
    }
    let mut l = vec![vec![T::zero(); n]; n];
    let mut d = vec![T::zero(); n];
    for j in 0..n {
        let mut dj = m[j][j];
        for k in 0..j {
            dj = dj - l[j][k] * l[j][k] * d[k];
        }
        d[j] = dj;
        for i in j + 1..n {
            let mut v = m[i][j];
            for k in 0..j {
                v = v - l[i][k] * l[j][k] * d[k];
            }
            l[i][j] = if dj.abs() > tol { v / dj } else if v.abs() > tol { T::nan() } else { T::zero() };
        }
    }
    if l.iter().flatten().any(|v| v.is_nan()) {
        // a zero pivot with a nonzero column below it: indefinite
        return Err(Error::param("matrix definiteness", "matrix is not positive semidefinite"));
    }
    Ok(d)
}

/// `σ = xᵀQx`, `W = 0`, `w̄ = 0`, `w(s, τ) = ℓ₂(τ)·s`: detectability for the
/// cost `(xᵀQx + uᵀGu)·ℓ₂(τ)` holds with equality when `u = 0`.
///
/// `v_upper` is left at zero; pair the bundle with a stabilizability bound
/// before checking stabilizability.
pub fn quadratic_detectability_example<T: Scalar>(q: Vec<Vec<T>>, g: Vec<Vec<T>>, weight: TimeWeight<T>) -> Result<CertificateBundle<T>> {
    let dq = ldl_pivots(&q)?;
    if dq.iter().any(|p| !(*p > T::zero())) {
        return Err(Error::param("state weight", "Q must be positive definite"));
    }
    let dg = ldl_pivots(&g)?;
    if dg.iter().any(|p| *p < -T::lit(1e-12)) {
        return Err(Error::param("input weight", "G must be positive semidefinite"));
    }
    Ok(CertificateBundle::zero_storage(
        quadratic_form(q),
        TimeKInf::linear_weighted(T::one(), weight),
        TimeKInf::Zero,
    ))
}

/// `x ↦ xᵀMx`.
pub fn quadratic_form<T: Scalar>(m: Vec<Vec<T>>) -> StateFn<T> {
    Arc::new(move |x: &[T]| {
        let mut acc = T::zero();
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                acc = acc + x[i] * *v * x[j];
            }
        }
        acc
    })
}

//! TOML run configuration and its translation into library objects.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use tvstab::certificates::{CertificateBundle, Margins};
use tvstab::comparison::TimeKInf;
use tvstab::model::{augment, Dynamics, InputBox, InputGrid, StageCost, StateInputFn};
use tvstab::systems::{self, ExampleProblem, PendulumParams};
use tvstab::weights::{TimeWeight, WeightKind};
use tvstab::StateGrid64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<WeightConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<BoxConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<BoxConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub certification: CertificationConfig,
    #[serde(default)]
    pub rollout: RolloutConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// `slow_scalar`, `integrator`, `pendulum` or `linear`.
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pendulum: Option<PendulumConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear: Option<LinearConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumConfig {
    #[serde(default = "one")]
    pub a: f64,
    #[serde(default = "one")]
    pub b: f64,
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default = "default_period")]
    pub t: f64,
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default = "default_reference_amplitude")]
    pub reference_amplitude: f64,
    /// The reference flips sign every `reference_period` steps.
    #[serde(default = "default_reference_period")]
    pub reference_period: u64,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 1.0,
            c: 1.0,
            t: default_period(),
            r: default_r(),
            reference_amplitude: default_reference_amplitude(),
            reference_period: default_reference_period(),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn default_period() -> f64 {
    0.1
}
fn default_r() -> f64 {
    0.1
}
fn default_reference_amplitude() -> f64 {
    0.2
}
fn default_reference_period() -> u64 {
    20
}

/// `x⁺ = Ax + Bu`, stage cost `(xᵀQx + uᵀRu)·ℓ₂(τ)`, `σ = xᵀQx`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    /// `v̄(s, τ) = vbar·s·ℓ₂(τ)`; without it stabilizability is not checked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vbar: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightConfig {
    Band {
        lo: f64,
        hi: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        profile: Option<Vec<f64>>,
    },
    Geometric {
        gamma: f64,
    },
    PolyDecay {
        h: f64,
    },
    Laplacian {
        m: f64,
        mu: u64,
    },
}

impl WeightConfig {
    pub fn build(&self) -> Result<TimeWeight<f64>> {
        Ok(match self {
            WeightConfig::Band { lo, hi, profile: None } => TimeWeight::band(*lo, *hi)?,
            WeightConfig::Band { lo, hi, profile: Some(p) } => TimeWeight::band_with_profile(*lo, *hi, p.clone())?,
            WeightConfig::Geometric { gamma } => TimeWeight::geometric(*gamma)?,
            WeightConfig::PolyDecay { h } => TimeWeight::poly_decay(*h)?,
            WeightConfig::Laplacian { m, mu } => TimeWeight::laplacian(*m, *mu)?,
        })
    }
}

/// Box bounds with a point count per dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    /// Stationary discounted iteration when the weight allows it, else the
    /// clock-horizon sweep.
    Auto,
    Discounted,
    TimeVarying,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Zero,
    Upper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub mode: SolverMode,
    pub tol: f64,
    pub max_iterations: usize,
    pub clock_horizon: u64,
    pub terminal: Terminal,
    pub clamp: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mode: SolverMode::Auto,
            tol: 1e-8,
            max_iterations: 100_000,
            clock_horizon: 50,
            terminal: Terminal::Zero,
            clamp: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSource {
    /// The closed-form value when the problem has one, else the DP table.
    Auto,
    Analytic,
    Dp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificationConfig {
    pub samples: usize,
    pub seed: u64,
    pub slack: f64,
    /// Clocks are sampled from `0..=tau_max`.
    pub tau_max: u64,
    pub envelope_k_max: u64,
    pub value_source: ValueSource,
}

impl Default for CertificationConfig {
    fn default() -> Self {
        Self {
            samples: 2000,
            seed: 1,
            slack: 1e-9,
            tau_max: 100,
            envelope_k_max: 10_000,
            value_source: ValueSource::Auto,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// The solved policy when `policy.csv` is expected, the analytic law for
    /// problems that have one and no solve step.
    Policy,
    Analytic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub initial_states: Vec<Vec<f64>>,
    pub tau0: u64,
    /// Steps per rollout; defaults to the bound-derived horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    pub controller: ControllerKind,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            initial_states: Vec::new(),
            tau0: 0,
            horizon: None,
            controller: ControllerKind::Policy,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("tvstab-out") }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| anyhow!("{e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    fn validate(&self) -> Result<()> {
        let s = &self.solver;
        if !(s.tol > 0.0 && s.tol.is_finite()) {
            bail!("solver.tol must be positive, got {}", s.tol);
        }
        if s.max_iterations == 0 {
            bail!("solver.max_iterations must be at least 1");
        }
        if s.clock_horizon == 0 {
            bail!("solver.clock_horizon must be at least 1");
        }
        if !(self.certification.slack >= 0.0) {
            bail!("certification.slack must be non-negative");
        }
        Ok(())
    }
}

/// A configured problem, ready for the pipeline.
pub struct Setup {
    pub problem: ExampleProblem<f64>,
    pub weight: TimeWeight<f64>,
    pub grid: StateGrid64,
    pub inputs: InputGrid<f64>,
}

fn build_box(cfg: &BoxConfig, what: &str) -> Result<InputGrid<f64>> {
    InputGrid::new(InputBox::new(cfg.lo.clone(), cfg.hi.clone())?, cfg.counts.clone()).with_context(|| format!("[{what}]"))
}

fn matrix(m: &[Vec<f64>], rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        bail!("problem.linear.{what} must be {rows}x{cols}");
    }
    Ok(())
}

fn linear_problem(cfg: &LinearConfig, weight: TimeWeight<f64>) -> Result<ExampleProblem<f64>> {
    let n = cfg.a.len();
    if n == 0 {
        bail!("problem.linear.a must be non-empty");
    }
    let m = cfg.b.first().map_or(0, |r| r.len());
    if m == 0 {
        bail!("problem.linear.b must have at least one column");
    }
    matrix(&cfg.a, n, n, "a")?;
    matrix(&cfg.b, n, m, "b")?;
    matrix(&cfg.q, n, n, "q")?;
    matrix(&cfg.r, m, m, "r")?;
    let (a, b) = (cfg.a.clone(), cfg.b.clone());
    let big = f64::MAX.sqrt();
    let dynamics = Dynamics::new(n, InputBox::new(vec![-big; m], vec![big; m])?, move |x: &[f64], u: &[f64], _t, out: &mut [f64]| {
        for i in 0..n {
            out[i] = a[i].iter().zip(x).map(|(p, v)| p * v).sum::<f64>() + b[i].iter().zip(u).map(|(p, v)| p * v).sum::<f64>();
        }
    });
    let qf = systems::quadratic_form(cfg.q.clone());
    let rf = systems::quadratic_form(cfg.r.clone());
    let ell1: StateInputFn<f64> = Arc::new(move |x: &[f64], u: &[f64]| qf(x) + rf(u));
    let aug = augment(dynamics, StageCost::separable_shared(n, m, ell1.clone(), weight.clone()))?;
    let mut bundle = systems::quadratic_detectability_example(cfg.q.clone(), cfg.r.clone(), weight.clone())?;
    if let Some(vbar) = cfg.vbar {
        bundle.v_upper = TimeKInf::linear_weighted(vbar, weight.clone());
        bundle = bundle.with_margins(Margins::SeparableLinear { a_ell: 1.0, a_v: vbar, weight });
    }
    let sigma = bundle.sigma.clone();
    Ok(ExampleProblem {
        name: "linear",
        aug,
        ell1: Some(ell1),
        sigma,
        bundle,
        analytic_value: None,
        analytic_controller: None,
        grid: StateGrid64::cube(n, -1.0, 1.0, 11)?,
        inputs: InputGrid::new(InputBox::new(vec![-1.0; m], vec![1.0; m])?, vec![5; m])?,
        notes: vec!["inline linear problem; sigma = x'Qx with W = 0".into()],
    })
}

fn pendulum_params(cfg: &PendulumConfig, weight: TimeWeight<f64>) -> PendulumParams<f64> {
    let (amp, period) = (cfg.reference_amplitude, cfg.reference_period.max(1));
    PendulumParams {
        a: cfg.a,
        b: cfg.b,
        c: cfg.c,
        t: cfg.t,
        r: cfg.r,
        weight,
        reference: Arc::new(move |k| if (k / period) % 2 == 0 { amp } else { -amp }),
        ..PendulumParams::default()
    }
}

impl Setup {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let weight = match &cfg.weight {
            Some(w) => w.build().context("[weight]")?,
            None => match cfg.problem.name.as_str() {
                "integrator" => TimeWeight::geometric(0.8)?,
                "pendulum" => PendulumParams::<f64>::default().weight,
                _ => TimeWeight::band(1.0, 1.0)?,
            },
        };
        let problem = match cfg.problem.name.as_str() {
            "slow_scalar" => {
                if cfg.weight.is_some() {
                    bail!("problem slow_scalar has a fixed unit weight; remove [weight]");
                }
                systems::slow_scalar()
            }
            "integrator" => systems::nonholonomic_integrator(weight.clone()),
            "pendulum" => {
                let p = cfg.problem.pendulum.clone().unwrap_or_default();
                systems::pendulum_tracking(pendulum_params(&p, weight.clone())).context("[problem.pendulum]")?
            }
            "linear" => {
                let l = cfg.problem.linear.as_ref().ok_or_else(|| anyhow!("problem linear needs a [problem.linear] table"))?;
                linear_problem(l, weight.clone()).context("[problem.linear]")?
            }
            other => bail!("unknown problem {other:?} (expected slow_scalar, integrator, pendulum or linear)"),
        };
        let grid = match &cfg.grid {
            Some(g) => StateGrid64::new(g.lo.clone(), g.hi.clone(), g.counts.clone()).context("[grid]")?,
            None => problem.grid.clone(),
        };
        if grid.dim() != problem.aug.n_x() {
            bail!("[grid] has {} dimensions, problem {} has {} states", grid.dim(), problem.name, problem.aug.n_x());
        }
        let inputs = match &cfg.inputs {
            Some(b) => build_box(b, "inputs")?,
            None => problem.inputs.clone(),
        };
        if inputs.dim() != problem.aug.n_u() {
            bail!("[inputs] has {} dimensions, problem {} has {} inputs", inputs.dim(), problem.name, problem.aug.n_u());
        }
        Ok(Self { problem, weight, grid, inputs })
    }

    /// `γ` for the stationary solver: the geometric rate, or 1 for a constant
    /// band weight (the constant then scales `ℓ₁`). `None` otherwise.
    pub fn stationary_gamma(&self) -> Option<(f64, f64)> {
        if !self.problem.aug.base.is_time_invariant() || self.problem.ell1.is_none() {
            return None;
        }
        match self.weight.kind() {
            WeightKind::Geometric { gamma } if *gamma <= 1.0 => Some((*gamma, 1.0)),
            WeightKind::Band { lo, profile: None, .. } => Some((1.0, *lo)),
            _ => None,
        }
    }

    pub fn bundle(&self) -> &CertificateBundle<f64> {
        &self.problem.bundle
    }
}

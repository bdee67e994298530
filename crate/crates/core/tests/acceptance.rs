//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p tvstab --test acceptance`.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tvstab::certificates::{
    beta_for_bundle, check_detectability, check_stabilizability, check_uniform_margins, uniform_samples,
    CertificateBundle, CheckOptions, Margins, Route, ThetaMap, YFunction,
};
use tvstab::comparison::{log_grid, KInf, TimeKInf};
use tvstab::dp::{solve_discounted, solve_time_varying, DiscountedValue, DpOptions, Solution, TerminalRule};
use tvstab::model::{augment, AugmentedState, Dynamics, InputBox, InputGrid, StageCost, StateFn};
use tvstab::simulate::{annotate_y, default_horizon, rollout, verify_bound, verify_decrease, Controller, Trajectory};
use tvstab::systems::{
    nonholonomic_integrator, pendulum_sampled_theta, pendulum_tracking, slow_scalar, slow_scalar_value, ExampleProblem,
    PendulumParams, SLOW_SCALAR_SERIES_TOL,
};
use tvstab::weights::TimeWeight;
use tvstab::StateGrid64;

type Outcome = Result<String, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Solutions reused by several criteria.
struct Shared {
    scalar: ExampleProblem<f64>,
    scalar_sol: Solution<f64>,
    lattice: ExampleProblem<f64>,
    lattice_sol: Solution<f64>,
    lattice_rollouts: Vec<Trajectory<f64>>,
}

const SCALAR_TOL: f64 = 1e-8;
const LATTICE_TOL: f64 = 1e-8;
const GAMMA: f64 = 0.8;

fn solve_scalar() -> Result<(ExampleProblem<f64>, Solution<f64>), String> {
    let p = slow_scalar::<f64>();
    let opts = DpOptions { tol: SCALAR_TOL, ..Default::default() };
    let ell1 = p.ell1.clone().expect("separable cost");
    let sol = solve_discounted(&p.aug.base, &ell1, 1.0, &p.grid, &p.inputs, &opts)
        .and_then(|s| s.ensure_converged())
        .map_err(err)?;
    Ok((p, sol))
}

/// The integrator on its lattice grid, where every successor of a node is a
/// node, plus closed-loop rollouts from 10 seeded clean interior nodes.
fn solve_lattice() -> Result<(ExampleProblem<f64>, Solution<f64>, Vec<Trajectory<f64>>), String> {
    let p = nonholonomic_integrator(TimeWeight::geometric(GAMMA).map_err(err)?);
    let opts = DpOptions { tol: LATTICE_TOL, ..Default::default() };
    let ell1 = p.ell1.clone().expect("separable cost");
    let sol = solve_discounted(&p.aug.base, &ell1, GAMMA, &p.grid, &p.inputs, &opts)
        .and_then(|s| s.ensure_converged())
        .map_err(err)?;
    let beta = beta_for_bundle(&p.bundle).map_err(err)?.ok_or("no exponential bound for the integrator")?;
    let mask = sol.policy.contamination(0).map_err(err)?;
    let mut candidates: Vec<usize> = (0..p.grid.len())
        .filter(|&i| {
            let x = p.grid.node(i);
            !mask[i] && x[0].abs() <= 0.5 && x[1].abs() <= 0.5 && x[2].abs() <= 0.25 && (p.sigma)(&x) > 0.0
        })
        .collect();
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(7));
    let mut rollouts = Vec::new();
    for &node in candidates.iter().take(10) {
        let q0 = AugmentedState::new(p.grid.node(node), 0);
        let k_max = default_horizon(&beta, (p.sigma)(&q0.x), 0).map_err(err)?;
        let traj = rollout(&p.aug, &Controller::Policy(&sol.policy), &q0, k_max, &p.sigma).map_err(err)?;
        rollouts.push(traj);
    }
    ensure(rollouts.len() == 10, || format!("only {} clean interior nodes", rollouts.len()))?;
    Ok((p, sol, rollouts))
}

fn slow_scalar_oracle(sh: &Shared) -> Outcome {
    let values = sh.scalar_sol.value.values(0).map_err(err)?;
    let grid = &sh.scalar.grid;
    let mut sup: f64 = 0.0;
    for (i, v) in values.iter().enumerate() {
        let x = grid.node(i)[0];
        sup = sup.max((v - slow_scalar_value(x, SLOW_SCALAR_SERIES_TOL)).abs());
    }
    let spot = slow_scalar_value(1.0, SLOW_SCALAR_SERIES_TOL);
    let spot_err = (spot - PI * PI / 6.0).abs();
    let detail = format!(
        "{} nodes, {} iterations, residual {:.1e}; sup |V_dp - V_series| = {sup:.2e} (<= 1e-4); |V(1) - pi^2/6| = {spot_err:.1e} (<= 1e-6)",
        grid.len(),
        sh.scalar_sol.report.iterations,
        sh.scalar_sol.report.residual
    );
    ensure(sh.scalar_sol.report.residual <= SCALAR_TOL, || format!("residual above tol: {detail}"))?;
    ensure(sup <= 1e-4 && spot_err <= 1e-6, || detail.clone())?;
    Ok(detail)
}

fn discounted_equivalence() -> Outcome {
    let p = nonholonomic_integrator(TimeWeight::geometric(GAMMA).map_err(err)?);
    let grid = StateGrid64::cube(3, -1.0, 1.0, 21).map_err(err)?;
    let inputs = InputGrid::new(InputBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).map_err(err)?, vec![9, 9]).map_err(err)?;
    let opts = DpOptions { tol: 1e-6, ..Default::default() };
    let ell1 = p.ell1.clone().expect("separable cost");
    let stationary = solve_discounted(&p.aug.base, &ell1, GAMMA, &grid, &inputs, &opts)
        .and_then(|s| s.ensure_converged())
        .map_err(err)?;
    let bound = stationary.report.error_bound.ok_or("stationary solve reported no error bound")?;
    let horizon = 10 + stationary.report.iterations as u64 + 20;
    let tv = solve_time_varying(&p.aug, &grid, &inputs, horizon, &TerminalRule::Zero, &opts).map_err(err)?;
    let vhat = stationary.value.values(0).map_err(err)?;
    let mut sup: f64 = 0.0;
    for tau in 0..=10u64 {
        let v = tv.value.values(tau).map_err(err)?;
        let g = GAMMA.powi(tau as i32);
        for (a, b) in v.iter().zip(vhat) {
            sup = sup.max((a - g * b).abs());
        }
    }
    let detail = format!(
        "21^3 grid, {} stationary iterations, horizon {horizon}; sup |V - 0.8^tau V_hat| = {sup:.2e} <= 10 x {bound:.2e}",
        stationary.report.iterations
    );
    ensure(sup <= 10.0 * bound, || detail.clone())?;
    Ok(detail)
}

fn integrator_exp_bound(sh: &Shared) -> Outcome {
    let beta = beta_for_bundle(&sh.lattice.bundle).map_err(err)?.ok_or("no bound")?;
    ensure(beta.route == Some(Route::SeparableExpKl), || format!("route {:?}", beta.route))?;
    let e = beta.exp_kl().ok_or("bound is not exponential")?;
    let lambda2 = 17.0 / 17.6;
    ensure(
        (e.lambda1 - 22.0 / 5.0).abs() <= 1e-12 && (e.lambda2 - lambda2).abs() <= 1e-12 && (e.lambda3 - 1.0).abs() <= 1e-12,
        || format!("lambda = ({}, {}, {})", e.lambda1, e.lambda2, e.lambda3),
    )?;
    let mut violations = 0;
    let mut steps = 0;
    let mut max_ratio: f64 = 0.0;
    for traj in &sh.lattice_rollouts {
        let report = verify_bound(traj, &beta, 1e-9, 20).map_err(err)?;
        violations += report.violations;
        steps += report.samples;
        if !report.passed() {
            return Err(format!("bound check failed: {:?}", report.notes));
        }
        max_ratio = max_ratio.max(report.parameters["max_ratio"].as_f64().unwrap_or(f64::INFINITY));
    }
    let gate = nonholonomic_integrator(TimeWeight::geometric(0.7).map_err(err)?);
    let rejected = match beta_for_bundle(&gate.bundle) {
        Err(e) => e.to_string(),
        Ok(_) => return Err("gamma = 0.7 was not rejected".into()),
    };
    ensure(violations == 0, || format!("{violations} violations"))?;
    Ok(format!(
        "lambda = (22/5, 17/17.6, 1); 10 rollouts, {steps} steps, 0 violations, max sigma/beta = {max_ratio:.3}; gamma = 0.7 rejected ({rejected})"
    ))
}

fn pendulum_certification() -> Outcome {
    let params = PendulumParams::<f64>::default();
    let p = pendulum_tracking(params.clone()).map_err(err)?;
    let law = p.analytic_controller.clone().ok_or("no deadbeat controller")?;
    let controller = Controller::Analytic(law);
    let beta = beta_for_bundle(&p.bundle).map_err(err)?.ok_or("no bound")?;
    let starts = uniform_samples::<f64>(11, &[-2.0; 4], &[2.0; 4], 50);
    let mut worst_tail: f64 = 0.0;
    let mut bound_violations = 0;
    for (i, x0) in starts.iter().enumerate() {
        let q0 = AugmentedState::new(x0.clone(), (i as u64 * 7) % 60);
        let traj = rollout(&p.aug, &controller, &q0, 60, &p.sigma).map_err(err)?;
        ensure(traj.truncated.is_none(), || format!("rollout {i} truncated: {:?}", traj.truncated))?;
        for r in traj.records.iter().skip(2) {
            worst_tail = worst_tail.max(r.x[0].abs()).max(r.x[1].abs());
        }
        bound_violations += verify_bound(&traj, &beta, 1e-9, 5).map_err(err)?.violations;
    }
    ensure(worst_tail <= 1e-9, || format!("max |e(k)|, k >= 2 = {worst_tail:.2e}"))?;
    ensure(bound_violations == 0, || format!("{bound_violations} trajectory-bound violations"))?;

    let theta = params.theta_bound().map_err(err)?;
    let fresh = uniform_samples::<f64>(20_261, &[-2.0; 5], &[2.0; 5], 10_000);
    let mut theta_violations = 0;
    for s in &fresh {
        let tau = ((s[4] + 2.0) * 50.0).floor() as u64;
        let x = &s[..4];
        if params.deadbeat_cost(&p.aug, x, tau) > theta * (p.sigma)(x) + 1e-12 {
            theta_violations += 1;
        }
    }
    ensure(theta_violations == 0, || format!("{theta_violations} samples with J > theta sigma"))?;
    let sampled = pendulum_sampled_theta(&p, &params, 3, 10_000);

    ensure(p.bundle.route() == Some(Route::UniformExpKl), || format!("route {:?}", p.bundle.route()))?;
    let (m_lo, _) = params.band().map_err(err)?;
    match &p.bundle.margins {
        Some(Margins::UniformLinear { a_ell, a_v }) if *a_ell == m_lo && *a_v == theta => {}
        m => return Err(format!("unexpected margins {m:?}")),
    }
    let opts = CheckOptions::default();
    let pts = uniform_samples::<f64>(5, &[-2.0, -2.0, -2.0, -2.0, -5.0, 0.0], &[2.0, 2.0, 2.0, 2.0, 5.0, 200.0], 2000);
    let det_samples: Vec<_> = pts.iter().map(|s| (s[..4].to_vec(), s[5] as u64, vec![s[4]])).collect();
    let stab_samples: Vec<_> = pts.iter().map(|s| (s[..4].to_vec(), s[5] as u64)).collect();
    let margin_samples: Vec<_> = pts.iter().map(|s| ((s[0].abs() + s[1].abs()), s[5] as u64)).collect();
    let value = p.analytic_value.clone().ok_or("no analytic value")?;
    let det = check_detectability(&p.bundle, &p.aug, &det_samples, &opts);
    let stab = check_stabilizability(&p.bundle, &value, &stab_samples, &opts);
    let marg = check_uniform_margins(&p.bundle, &margin_samples, &opts);
    for r in [&det, &stab, &marg] {
        ensure(r.passed(), || format!("{} failed: {} violations, {:?}", r.check, r.violations, r.notes))?;
    }
    Ok(format!(
        "50 deadbeat rollouts, max |e(k)|, k >= 2 = {worst_tail:.1e}; theta = {theta:.2} (sampled max {sampled:.2}), 0/10^4 violations; route uniform_exp_kl passes (a_ell = {m_lo}, a_v = theta)"
    ))
}

fn weight_envelopes() -> Outcome {
    let variants: Vec<(&str, Vec<tvstab::Result<TimeWeight<f64>>>)> = vec![
        (
            "band",
            vec![
                TimeWeight::band(0.5, 2.0),
                TimeWeight::band(1.0, 1.0),
                TimeWeight::band_with_profile(0.5, 2.0, vec![0.5, 1.0, 2.0, 1.0]),
                TimeWeight::band_with_profile(0.1, 10.0, vec![10.0, 0.1, 3.0]),
                TimeWeight::band(1e-3, 1e3),
            ],
        ),
        ("geometric", [0.5, 0.8, 0.95, 1.0, 1.2].iter().map(|g| TimeWeight::geometric(*g)).collect()),
        ("poly_decay", [0.5, 1.0, 2.0, 3.0, 5.0].iter().map(|h| TimeWeight::poly_decay(*h)).collect()),
        (
            "laplacian",
            [(0.5, 0), (1.0, 3), (2.0, 3), (5.0, 10), (10.0, 100)]
                .iter()
                .map(|(m, mu)| TimeWeight::laplacian(*m, *mu))
                .collect(),
        ),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for (name, weights) in variants {
        let weights: Vec<_> = weights.into_iter().collect::<Result<_, _>>().map_err(err)?;
        for w in &weights {
            let report = w.check_envelope(10_000);
            ensure(report.pass, || format!("{}: envelope fails at {:?}", w.name(), report.first_violation))?;
        }
        // 10 sampled L per variant, spread over its parameter settings
        for i in 0..10 {
            let w = &weights[i % weights.len()];
            let range = w.admissible_l_range();
            let env = w.envelope();
            let floor = 1.0 - env.gamma_lo.min(env.gamma_hi);
            ensure(range.lo >= floor - 1e-15, || format!("{}: range starts at {} below {floor}", w.name(), range.lo))?;
            let t: f64 = rand::Rng::gen_range(&mut rng, 0.0..1.0);
            let l = range.lo + (range.hi - range.lo) * t;
            ensure(range.contains(l) || l == range.lo, || format!("{}: sample {l} outside range", w.name()))?;
            ensure(env.gamma_lo > 1.0 - l && env.gamma_hi > 1.0 - l, || {
                format!("{}: L = {l} but rates ({}, {})", w.name(), env.gamma_lo, env.gamma_hi)
            })?;
            checked += 1;
        }
        let _ = name;
    }
    Ok(format!("4 variants x 5 settings pass to k = 10^4; {checked} sampled L consistent with the envelope rates"))
}

fn linear_bundle(a_ell: f64, a_v: f64) -> CertificateBundle<f64> {
    let sigma: StateFn<f64> = Arc::new(|x: &[f64]| x[0].abs());
    CertificateBundle::zero_storage(sigma, TimeKInf::linear(a_ell), TimeKInf::linear(a_v))
        .with_margins(Margins::UniformLinear { a_ell, a_v })
}

fn vartheta_closed_forms() -> Outcome {
    let grid = log_grid(1e-6, 1.0, 25);
    let mut cases: Vec<(String, CertificateBundle<f64>, f64)> = [(1.0, 4.4), (0.5, 66.4), (1.0, 2.0), (1.0, 1.0)]
        .iter()
        .map(|&(a, b)| (format!("linear({a},{b})"), linear_bundle(a, b), 1.0 - a / b))
        .collect();
    let integrator = nonholonomic_integrator(TimeWeight::geometric(GAMMA).map_err(err)?);
    cases.push(("integrator".into(), integrator.bundle.clone(), 17.0 / 22.0));
    let mut worst: f64 = 0.0;
    for (name, bundle, rho) in &cases {
        let theta = ThetaMap::new(bundle);
        for &s in &grid {
            for k in 0..=100u64 {
                let v = theta.vartheta(s, k, k).map_err(err)?;
                let d = (v - rho.powi(k as i32) * s).abs();
                worst = worst.max(d);
                ensure(d <= 1e-12, || format!("{name}: s = {s}, k = {k}: {v} vs {}", rho.powi(k as i32) * s))?;
            }
        }
    }

    // lower/upper ratio ranges over (1/3, 1/2], so L = 1/3
    let l = 1.0 / 3.0;
    let weight = TimeWeight::geometric(0.9).map_err(err)?;
    let lower = KInf::Power { coef: 1.0, exp: 2.0 };
    let upper = KInf::custom("2s^2 + s^3/(1+s)", |s: f64| 2.0 * s * s + s * s * s / (1.0 + s));
    let sigma: StateFn<f64> = Arc::new(|x: &[f64]| x[0].abs());
    let bundle = CertificateBundle::zero_storage(
        sigma,
        TimeKInf::Weighted { base: lower.clone(), weight: weight.clone() },
        TimeKInf::Weighted { base: upper.clone(), weight: weight.clone() },
    )
    .with_margins(Margins::Separable { lower, upper, l, weight });
    let theta = ThetaMap::new(&bundle);
    let mut checks = 0;
    for &s in &log_grid(1e-6, 1e2, 20) {
        for k in [0u64, 1, 2, 5, 10, 25, 50, 100] {
            for tau_f in [k, k + 17] {
                let v = theta.vartheta(s, k, tau_f).map_err(err)?;
                let cap = (1.0 - l).powi(k as i32) * s + 1e-12;
                ensure(v <= cap, || format!("separable: s = {s}, k = {k}, tau = {tau_f}: {v} > {cap}"))?;
                checks += 1;
            }
        }
    }
    Ok(format!(
        "linear cases match (1 - a_ell/a_v)^k s to {worst:.1e} for k <= 100; separable case below (1 - L)^k s at {checks} points"
    ))
}

fn lyapunov_decrease(sh: &Shared) -> Outcome {
    let cap = 20;
    // slow scalar: DP table at every node, one optimal step each
    let p = &sh.scalar;
    let theta = ThetaMap::new(&p.bundle);
    let table = &sh.scalar_sol.value;
    let yf = YFunction::new(table, &p.bundle);
    let controller = Controller::Policy(&sh.scalar_sol.policy);
    let (mut steps, mut skipped) = (0, 0);
    for i in 0..p.grid.len() {
        let q0 = AugmentedState::new(p.grid.node(i), 0);
        let mut traj = rollout(&p.aug, &controller, &q0, 1, &p.sigma).map_err(err)?;
        annotate_y(&mut traj, &yf, &theta).map_err(err)?;
        let r = verify_decrease(&traj, &p.bundle, 2.0 * SCALAR_TOL, cap);
        ensure(r.passed(), || format!("slow scalar node {i}: {:?}", r.violators))?;
        steps += r.samples;
        skipped += r.skipped;
    }
    // slow scalar: analytic value along DP-policy rollouts
    let exact = p.analytic_value.clone().ok_or("no analytic value")?;
    let yf_exact = YFunction::new(&exact, &p.bundle);
    for x0 in [0.5, 1.0, 2.0, 4.9] {
        let mut traj = rollout(&p.aug, &controller, &AugmentedState::new(vec![x0], 0), 300, &p.sigma).map_err(err)?;
        annotate_y(&mut traj, &yf_exact, &theta).map_err(err)?;
        let r = verify_decrease(&traj, &p.bundle, 2.0 * SCALAR_TOL, cap);
        ensure(r.passed() && r.samples > 0, || format!("slow scalar from {x0}: {:?}", r.violators))?;
        steps += r.samples;
        skipped += r.skipped;
    }
    // integrator lattice: V(x, tau) = 0.8^tau V_hat(x)
    let lp = &sh.lattice;
    let value = DiscountedValue { table: sh.lattice_sol.value.clone(), gamma: GAMMA };
    let yf = YFunction::new(&value, &lp.bundle);
    let theta = ThetaMap::new(&lp.bundle);
    let mut lattice_steps = 0;
    for traj in &sh.lattice_rollouts {
        let mut traj = traj.clone();
        annotate_y(&mut traj, &yf, &theta).map_err(err)?;
        let r = verify_decrease(&traj, &lp.bundle, 2.0 * LATTICE_TOL, cap);
        ensure(r.passed(), || format!("integrator: {:?}", r.violators))?;
        lattice_steps += r.samples;
        skipped += r.skipped;
    }
    ensure(lattice_steps > 0, || "no clean integrator steps".into())?;
    Ok(format!(
        "{} slow-scalar and {lattice_steps} integrator clean steps decrease by at least w - 2 tol; {skipped} contaminated steps skipped",
        steps
    ))
}

fn negative_controls(sh: &Shared) -> Outcome {
    let opts = CheckOptions::default();
    // w inflated by 2 on the integrator
    let p = &sh.lattice;
    let pts = uniform_samples::<f64>(9, &[-1.0, -1.0, -1.0, -1.0, -1.0, 0.0], &[1.0, 1.0, 1.0, 1.0, 1.0, 50.0], 1000);
    let samples: Vec<_> = pts.iter().map(|s| (s[..3].to_vec(), s[5] as u64, s[3..5].to_vec())).collect();
    let clean = check_detectability(&p.bundle, &p.aug, &samples, &opts);
    ensure(clean.passed(), || format!("uncorrupted integrator bundle fails: {:?}", clean.violators))?;
    let mut inflated = p.bundle.clone();
    inflated.w_lower = TimeKInf::Scaled(2.0, Box::new(inflated.w_lower));
    let a = check_detectability(&inflated, &p.aug, &samples, &opts);
    ensure(a.violations > 0, || "inflated w went undetected".into())?;

    // w̄ zeroed for a bundle with W = x²
    let dynamics = Dynamics::new(1, InputBox::new(vec![0.0], vec![0.0]).map_err(err)?, |x: &[f64], _u: &[f64], _t, out: &mut [f64]| {
        out[0] = 0.5 * x[0];
    });
    let cost = StageCost::general(1, 1, |x: &[f64], _t, _u: &[f64]| x[0] * x[0]);
    let aug = augment(dynamics, cost).map_err(err)?;
    let sigma: StateFn<f64> = Arc::new(|x: &[f64]| x[0].abs());
    let square = |c: f64| TimeKInf::Uniform(KInf::Power { coef: c, exp: 2.0 });
    let with_storage = CertificateBundle::zero_storage(sigma, square(1.0), square(1.0))
        .with_storage(Arc::new(|x: &[f64], _t| x[0] * x[0]), square(2.0));
    let samples: Vec<_> = uniform_samples::<f64>(4, &[-3.0], &[3.0], 200).into_iter().map(|x| (x, 0, vec![0.0])).collect();
    let valid = check_detectability(&with_storage, &aug, &samples, &opts);
    ensure(valid.passed(), || format!("valid storage bundle fails: {:?}", valid.violators))?;
    let mut zeroed = with_storage.clone();
    zeroed.w_upper = TimeKInf::Zero;
    let b = check_detectability(&zeroed, &aug, &samples, &opts);
    ensure(b.violations > 0, || "zeroed wbar went undetected".into())?;

    // β scaled by 1e-3 on an integrator rollout
    let beta = beta_for_bundle(&p.bundle).map_err(err)?.ok_or("no bound")?.scaled(1e-3);
    let c = verify_bound(&sh.lattice_rollouts[0], &beta, 1e-9, 20).map_err(err)?;
    let first = c.parameters["first_violation"].as_u64();
    ensure(c.violations > 0 && first == Some(0), || format!("scaled beta: {} violations, first {first:?}", c.violations))?;
    Ok(format!(
        "inflated w: {} violations; zeroed wbar: {} violations; beta x 1e-3: {} violations, first at k = 0",
        a.violations, b.violations, c.violations
    ))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let shared = match (solve_scalar(), solve_lattice()) {
        (Ok((scalar, scalar_sol)), Ok((lattice, lattice_sol, lattice_rollouts))) => Shared {
            scalar,
            scalar_sol,
            lattice,
            lattice_sol,
            lattice_rollouts,
        },
        (a, b) => {
            eprintln!("setup failed: {:?} / {:?}", a.err(), b.err());
            return ExitCode::FAILURE;
        }
    };
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("slow-scalar value oracle", Box::new(|| slow_scalar_oracle(&shared))),
        ("discounted-reduction equivalence", Box::new(discounted_equivalence)),
        ("integrator threshold and exponential bound", Box::new(|| integrator_exp_bound(&shared))),
        ("pendulum deadbeat and certification", Box::new(pendulum_certification)),
        ("time-weight envelope suite", Box::new(weight_envelopes)),
        ("vartheta recursion closed forms", Box::new(vartheta_closed_forms)),
        ("Lyapunov decrease along DP rollouts", Box::new(|| lyapunov_decrease(&shared))),
        ("violation detection on corrupted inputs", Box::new(|| negative_controls(&shared))),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = run();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {}. {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failures += 1;
                println!("[FAIL] {}. {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!(
        "acceptance: {}/{} passed in {:.1}s",
        criteria.len() - failures,
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

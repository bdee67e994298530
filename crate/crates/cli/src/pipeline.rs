//! The solve / certify / simulate / verify / report stages.

use std::fs::File;
use std::io::BufReader;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use tvstab::certificates::{
    beta_for_bundle, check_detectability, check_stabilizability, check_uniform_margins, uniform_samples, BetaBound,
    BetaForm, CheckOptions, Margins, ThetaMap, YFunction,
};
use tvstab::dp::{
    solve_discounted, solve_time_varying, Approximation, DiscountedValue, DpOptions, Policy, Solution, SolveReport,
    TerminalRule, ValueFunction, ValueTable,
};
use tvstab::model::{AugmentedState, StateInputFn};
use tvstab::report::{CheckReport, Verdict};
use tvstab::simulate::{annotate_y, default_horizon, rollout, verify_bound, verify_decrease, verify_vartheta, Controller};

use crate::config::{ControllerKind, RunConfig, Setup, SolverMode, Terminal, ValueSource};
use crate::output::OutDir;

/// Horizon used when no bound is available to derive one.
const FALLBACK_HORIZON: u64 = 200;

pub const SOLVE_REPORT: &str = "solve_report.json";
pub const VALUE_CSV: &str = "value.csv";
pub const MASK_CSV: &str = "value_mask.csv";
pub const POLICY_CSV: &str = "policy.csv";

/// How a stored value table maps to `V(x, τ)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct ValueLayout {
    mode: String,
    /// `V(x, τ) = γ^τ·table(x)` for stationary tables.
    gamma: Option<f64>,
    approximation: Approximation,
}

#[derive(Serialize)]
struct SolveFile<'a> {
    problem: &'a str,
    weight: String,
    layout: ValueLayout,
    report: &'a SolveReport,
    files: [&'static str; 3],
}

fn solve(cfg: &RunConfig, setup: &Setup) -> Result<(Solution<f64>, ValueLayout)> {
    let s = &cfg.solver;
    let opts = DpOptions {
        tol: s.tol,
        max_iterations: s.max_iterations,
        clamp: s.clamp,
    };
    let p = &setup.problem;
    let stationary = match s.mode {
        SolverMode::TimeVarying => None,
        SolverMode::Auto => setup.stationary_gamma(),
        SolverMode::Discounted => Some(setup.stationary_gamma().ok_or_else(|| {
            anyhow!("solver.mode = \"discounted\" needs time-invariant dynamics and a geometric or constant band weight")
        })?),
    };
    if let Some((gamma, scale)) = stationary {
        let ell1 = p.ell1.clone().expect("stationary mode requires a separable cost");
        let ell1: StateInputFn<f64> = if scale == 1.0 { ell1 } else { Arc::new(move |x: &[f64], u: &[f64]| scale * ell1(x, u)) };
        info!("stationary value iteration, gamma = {gamma}");
        let sol = solve_discounted(&p.aug.base, &ell1, gamma, &setup.grid, &setup.inputs, &opts)?;
        let layout = ValueLayout {
            mode: "discounted".into(),
            gamma: Some(gamma),
            approximation: sol.report.approximation,
        };
        Ok((sol, layout))
    } else {
        let terminal = match s.terminal {
            Terminal::Zero => TerminalRule::Zero,
            Terminal::Upper => TerminalRule::Upper {
                sigma: p.sigma.clone(),
                vbar: p.bundle.v_upper.clone(),
            },
        };
        info!("backward sweep over clock horizon {}", s.clock_horizon);
        let sol = solve_time_varying(&p.aug, &setup.grid, &setup.inputs, s.clock_horizon, &terminal, &opts)?;
        let layout = ValueLayout {
            mode: "time_varying".into(),
            gamma: None,
            approximation: sol.report.approximation,
        };
        Ok((sol, layout))
    }
}

fn value_of(table: ValueTable<f64>, layout: &ValueLayout) -> Box<dyn ValueFunction<f64>> {
    match layout.gamma {
        Some(gamma) => Box::new(DiscountedValue { table, gamma }),
        None => Box::new(table),
    }
}

pub fn run_solve(cfg: &RunConfig, setup: &Setup, out: &OutDir) -> Result<Verdict> {
    let (sol, layout) = solve(cfg, setup)?;
    sol.value.write_csv(out.create(VALUE_CSV)?)?;
    sol.value.write_mask_csv(out.create(MASK_CSV)?)?;
    sol.policy.write_csv(out.create(POLICY_CSV)?)?;
    out.write_json(
        SOLVE_REPORT,
        &SolveFile {
            problem: setup.problem.name,
            weight: setup.weight.name(),
            layout,
            report: &sol.report,
            files: [VALUE_CSV, MASK_CSV, POLICY_CSV],
        },
    )?;
    let r = &sol.report;
    println!(
        "solve: {} iterations, residual {:e}, converged = {}, contaminated {:.1}%",
        r.iterations,
        r.residual,
        r.converged,
        100.0 * r.contaminated_fraction
    );
    if !r.converged {
        bail!(
            "value iteration did not converge in {} iterations (residual {:e}); report written to {}",
            r.iterations,
            r.residual,
            out.file(SOLVE_REPORT).display()
        );
    }
    Ok(Verdict::Pass)
}

/// The stored DP solution, if `solve` has been run into this directory.
fn load_solution(setup: &Setup, out: &OutDir) -> Result<Option<(ValueTable<f64>, ValueLayout)>> {
    let report = out.file(SOLVE_REPORT);
    if !report.exists() {
        return Ok(None);
    }
    let meta: Value = serde_json::from_reader(BufReader::new(File::open(&report)?))?;
    let layout: ValueLayout = serde_json::from_value(meta["layout"].clone()).context("reading solve layout")?;
    let open = |name: &str| -> Result<BufReader<File>> {
        let p = out.file(name);
        Ok(BufReader::new(File::open(&p).with_context(|| format!("opening {}", p.display()))?))
    };
    let mut table = ValueTable::read_csv(setup.grid.clone(), open(VALUE_CSV)?, layout.approximation)
        .context("value table does not match the configured grid")?;
    table.load_mask_csv(open(MASK_CSV)?)?;
    Ok(Some((table, layout)))
}

fn value_source(cfg: &RunConfig, setup: &Setup, out: &OutDir, inline_solve: bool) -> Result<Option<Box<dyn ValueFunction<f64>>>> {
    let analytic = setup.problem.analytic_value.clone();
    let want_dp = match cfg.certification.value_source {
        ValueSource::Analytic => {
            return analytic
                .map(|a| Some(Box::new(a) as Box<dyn ValueFunction<f64>>))
                .ok_or_else(|| anyhow!("problem {} has no analytic value", setup.problem.name));
        }
        ValueSource::Dp => true,
        ValueSource::Auto => analytic.is_none(),
    };
    if !want_dp {
        return Ok(analytic.map(|a| Box::new(a) as Box<dyn ValueFunction<f64>>));
    }
    if let Some((table, layout)) = load_solution(setup, out)? {
        return Ok(Some(value_of(table, &layout)));
    }
    if !inline_solve {
        return Ok(None);
    }
    info!("no stored solution in {}; solving", out.path().display());
    let (sol, layout) = solve(cfg, setup)?;
    let sol = sol.ensure_converged()?;
    Ok(Some(value_of(sol.value, &layout)))
}

fn bound_json(beta: &BetaBound<f64>) -> Value {
    let mut v = json!({ "route": beta.route, "form": format!("{beta:?}") });
    if let BetaForm::ExpKl(e) = &beta.form {
        v["lambda1"] = json!(e.lambda1);
        v["lambda2"] = json!(e.lambda2);
        v["lambda3"] = json!(e.lambda3);
    }
    v
}

pub fn run_certify(cfg: &RunConfig, setup: &Setup, out: &OutDir) -> Result<Verdict> {
    let c = &cfg.certification;
    let p = &setup.problem;
    let bundle = setup.bundle();
    let opts = CheckOptions {
        slack: c.slack,
        violator_cap: tvstab::report::DEFAULT_VIOLATOR_CAP,
    };
    let (n_x, n_u) = (p.aug.n_x(), p.aug.n_u());
    let mut lo = setup.grid.lo().to_vec();
    let mut hi = setup.grid.hi().to_vec();
    lo.extend_from_slice(&setup.inputs.bounds().lo);
    hi.extend_from_slice(&setup.inputs.bounds().hi);
    lo.push(0.0);
    hi.push(c.tau_max as f64 + 1.0);
    let pts = uniform_samples(c.seed, &lo, &hi, c.samples);
    let tau_of = |s: &[f64]| (s[n_x + n_u].floor() as u64).min(c.tau_max);
    let det_samples: Vec<_> = pts.iter().map(|s| (s[..n_x].to_vec(), tau_of(s), s[n_x..n_x + n_u].to_vec())).collect();
    let state_samples: Vec<_> = pts.iter().map(|s| (s[..n_x].to_vec(), tau_of(s))).collect();

    let mut checks = serde_json::Map::new();
    let mut verdict = Verdict::Pass;
    let mut record = |checks: &mut serde_json::Map<String, Value>, name: &str, r: &CheckReport| -> Result<()> {
        verdict = verdict.and(r.verdict);
        println!("certify: {name}: {:?} ({} samples, {} violations)", r.verdict, r.samples, r.violations);
        checks.insert(name.into(), serde_json::to_value(r)?);
        Ok(())
    };
    record(&mut checks, "detectability", &check_detectability(bundle, &p.aug, &det_samples, &opts))?;
    if bundle.v_upper.is_zero() {
        checks.insert("stabilizability".into(), json!({ "skipped": "the bundle declares no stabilizability bound" }));
    } else {
        let value = value_source(cfg, setup, out, true)?.expect("inline solve always yields a value");
        record(&mut checks, "stabilizability", &check_stabilizability(bundle, value.as_ref(), &state_samples, &opts))?;
    }
    if bundle.margins.is_some() {
        let s_samples: Vec<_> = state_samples.iter().map(|(x, t)| ((p.sigma)(x), *t)).collect();
        record(&mut checks, "margins", &check_uniform_margins(bundle, &s_samples, &opts))?;
    }
    let env = setup.weight.check_envelope(c.envelope_k_max);
    verdict = verdict.and(Verdict::from_pass(env.pass));
    println!("certify: envelope {}: {}", env.weight, if env.pass { "pass" } else { "fail" });

    let mut margins = json!({});
    if let Some(m) = &bundle.margins {
        margins["l"] = json!(m.l());
        if let Margins::UniformLinear { a_ell, a_v } | Margins::SeparableLinear { a_ell, a_v, .. } = m {
            margins["a_ell"] = json!(a_ell);
            margins["a_v"] = json!(a_v);
            margins["gamma_threshold"] = json!(1.0 - a_ell / a_v);
        }
        if let Some(l) = m.l() {
            let range = setup.weight.admissible_l_range();
            margins["admissible_l_range"] = json!([range.lo, range.hi]);
            margins["l_admissible"] = json!(range.contains(l));
        }
    }
    let bound = match beta_for_bundle(bundle) {
        Ok(Some(beta)) => bound_json(&beta),
        Ok(None) => json!({ "route": bundle.route(), "form": "none: stability follows from the decrease of Y" }),
        Err(e) => {
            verdict = Verdict::Fail;
            println!("certify: bound rejected: {e}");
            json!({ "route": bundle.route(), "rejected": e.to_string() })
        }
    };
    let doc = json!({
        "problem": p.name,
        "weight": setup.weight.name(),
        "route": bundle.route(),
        "verdict": verdict,
        "checks": checks,
        "envelope": env,
        "margins": margins,
        "bound": bound,
        "notes": p.notes,
        "sampling": { "samples": c.samples, "seed": c.seed, "slack": c.slack, "tau_max": c.tau_max },
    });
    out.write_json("certification.json", &doc)?;
    println!("certify: route {}, verdict {verdict:?}", bundle.route().map_or("none", |r| r.name()));
    Ok(verdict)
}

fn controller_policy(setup: &Setup, out: &OutDir) -> Result<Policy<f64>> {
    let path = out.file(POLICY_CSV);
    if !path.exists() {
        bail!("missing policy file {}; run `tvstab solve` first or set rollout.controller = \"analytic\"", path.display());
    }
    let policy = Policy::read_csv(setup.grid.clone(), setup.inputs.clone(), BufReader::new(File::open(&path)?))
        .context("policy does not match the configured grid and inputs")?;
    Ok(match load_solution(setup, out)? {
        Some((table, _)) => policy.with_mask_from(&table),
        None => policy,
    })
}

/// Rolls out every configured initial state; with `deep` also checks the
/// decrease of `Y` and the `ϑ` bound.
pub fn run_simulate(cfg: &RunConfig, setup: &Setup, out: &OutDir, deep: bool) -> Result<Verdict> {
    let stage = if deep { "verify" } else { "simulate" };
    let r = &cfg.rollout;
    let p = &setup.problem;
    let doc_name = format!("{stage}.json");
    if r.initial_states.is_empty() {
        warn!("rollout.initial_states is empty; nothing to {stage}");
        out.write_json(&doc_name, &json!({ "problem": p.name, "verdict": Verdict::Pass, "trajectories": [] }))?;
        return Ok(Verdict::Pass);
    }
    let policy;
    let controller = match r.controller {
        ControllerKind::Policy => {
            policy = controller_policy(setup, out)?;
            Controller::Policy(&policy)
        }
        ControllerKind::Analytic => Controller::Analytic(
            p.analytic_controller
                .clone()
                .ok_or_else(|| anyhow!("problem {} has no analytic controller", p.name))?,
        ),
    };
    let beta = match beta_for_bundle(&p.bundle) {
        Ok(b) => b,
        Err(e) => {
            warn!("no trajectory bound: {e}");
            None
        }
    };
    let value = value_source(cfg, setup, out, deep)?;
    if deep && value.is_none() {
        bail!("verify needs a value function");
    }
    let theta = ThetaMap::new(&p.bundle);
    let slack = cfg.certification.slack;
    let cap = tvstab::report::DEFAULT_VIOLATOR_CAP;
    let mut verdict = Verdict::Pass;
    let mut entries = Vec::new();
    for (i, x0) in r.initial_states.iter().enumerate() {
        if x0.len() != p.aug.n_x() {
            bail!("rollout.initial_states[{i}] has {} entries, expected {}", x0.len(), p.aug.n_x());
        }
        let q0 = AugmentedState::new(x0.clone(), r.tau0);
        let horizon = match (r.horizon, &beta) {
            (Some(h), _) => h,
            (None, Some(b)) => default_horizon(b, (p.sigma)(x0), r.tau0)?,
            (None, None) => FALLBACK_HORIZON,
        };
        let mut traj = rollout(&p.aug, &controller, &q0, horizon, &p.sigma)?;
        if let Some(b) = &beta {
            traj.annotate_beta(b)?;
        }
        if let Some(v) = &value {
            annotate_y(&mut traj, &YFunction::new(v.as_ref(), &p.bundle), &theta)?;
        }
        let csv = format!("trajectory_{i:03}.csv");
        traj.write_csv(out.create(&csv)?, p.aug.n_u())?;
        let mut entry = json!({
            "index": i,
            "x0": x0,
            "tau0": r.tau0,
            "steps": traj.records.len() - 1,
            "csv": csv,
            "truncated": traj.truncated,
            "boundary_contaminated": traj.boundary_contaminated,
        });
        if let Some(reason) = &traj.truncated {
            warn!("trajectory {i} truncated: {reason}");
            verdict = Verdict::Fail;
        }
        let mut reports = vec![];
        if let Some(b) = &beta {
            reports.push(verify_bound(&traj, b, slack, cap)?);
        }
        if deep {
            reports.push(verify_decrease(&traj, &p.bundle, 2.0 * cfg.solver.tol + slack, cap));
            reports.push(verify_vartheta(&traj, 2.0 * cfg.solver.tol + slack, cap));
        }
        for rep in reports {
            verdict = verdict.and(rep.verdict);
            entry[rep.check.clone()] = serde_json::to_value(&rep)?;
        }
        println!("{stage}: trajectory {i}: {} steps -> {csv}", traj.records.len() - 1);
        entries.push(entry);
    }
    let doc = json!({
        "problem": p.name,
        "verdict": verdict,
        "bound": beta.as_ref().map(bound_json),
        "trajectories": entries,
    });
    out.write_json(&doc_name, &doc)?;
    println!("{stage}: verdict {verdict:?}");
    Ok(verdict)
}

/// Collects the verdicts of the reports present in the output directory.
pub fn run_report(out: &OutDir) -> Result<Verdict> {
    let mut summary = serde_json::Map::new();
    let mut verdict = Verdict::Pass;
    for name in [SOLVE_REPORT, "certification.json", "simulate.json", "verify.json"] {
        let path = out.file(name);
        if !path.exists() {
            continue;
        }
        let doc: Value = serde_json::from_reader(BufReader::new(File::open(&path)?))
            .with_context(|| format!("reading {}", path.display()))?;
        let v = match name {
            SOLVE_REPORT => {
                if doc["report"]["converged"].as_bool() == Some(true) {
                    "pass"
                } else {
                    "fail"
                }
            }
            _ => doc["verdict"].as_str().unwrap_or("fail"),
        };
        if v != "pass" {
            verdict = Verdict::Fail;
        }
        println!("report: {name}: {v}");
        summary.insert(name.into(), json!(v));
    }
    if summary.is_empty() {
        bail!("no reports found in {}", out.path().display());
    }
    out.write_json("report.json", &json!({ "verdict": verdict, "stages": summary }))?;
    Ok(verdict)
}

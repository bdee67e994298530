//! End-to-end use of the library: solve, persist, reload, roll out, certify.

use std::f64::consts::PI;
use std::io::Cursor;

use tvstab::certificates::{beta_for_bundle, ThetaMap, YFunction};
use tvstab::dp::{solve_discounted, solve_time_varying, Approximation, DpOptions, Policy, TerminalRule, ValueTable};
use tvstab::model::{AugmentedState, InputBox, InputGrid};
use tvstab::simulate::{annotate_y, rollout, verify_bound, verify_vartheta, Controller};
use tvstab::systems::{nonholonomic_integrator, slow_scalar};
use tvstab::weights::TimeWeight;
use tvstab::StateGrid64;

#[test]
fn slow_scalar_round_trip_and_rollout() {
    let p = slow_scalar::<f64>();
    let opts = DpOptions { tol: 1e-8, ..Default::default() };
    let sol = solve_discounted(&p.aug.base, p.ell1.as_ref().unwrap(), 1.0, &p.grid, &p.inputs, &opts)
        .unwrap()
        .ensure_converged()
        .unwrap();
    assert_eq!(sol.report.error_bound, None);

    let mut value_csv = Vec::new();
    sol.value.write_csv(&mut value_csv).unwrap();
    let mut mask_csv = Vec::new();
    sol.value.write_mask_csv(&mut mask_csv).unwrap();
    let mut policy_csv = Vec::new();
    sol.policy.write_csv(&mut policy_csv).unwrap();

    let mut table = ValueTable::read_csv(p.grid.clone(), Cursor::new(value_csv), Approximation::Lower).unwrap();
    table.load_mask_csv(Cursor::new(mask_csv)).unwrap();
    assert_eq!(table.values(0).unwrap(), sol.value.values(0).unwrap());
    let policy = Policy::read_csv(p.grid.clone(), p.inputs.clone(), Cursor::new(policy_csv)).unwrap().with_mask_from(&table);
    assert_eq!(policy.choices(0).unwrap(), sol.policy.choices(0).unwrap());

    let mut traj = rollout(&p.aug, &Controller::Policy(&policy), &AugmentedState::new(vec![1.0], 0), 50, &p.sigma).unwrap();
    assert!((traj.records[3].x[0] - 0.25).abs() < 1e-15);

    let exact = p.analytic_value.clone().unwrap();
    let yf = YFunction::new(&exact, &p.bundle);
    let theta = ThetaMap::new(&p.bundle);
    annotate_y(&mut traj, &yf, &theta).unwrap();
    let y: Vec<f64> = traj.records.iter().map(|r| r.y.unwrap()).collect();
    assert!((y[0] - PI * PI / 6.0).abs() < 1e-8);
    assert!(y.windows(2).all(|w| w[1] <= w[0]));
    assert!(verify_vartheta(&traj, 1e-9, 5).passed());

    let mut csv = Vec::new();
    traj.write_csv(&mut csv, 1).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "k,tau,x0,u0,stage_cost,sigma,y,vartheta,beta");
    assert_eq!(text.lines().count(), 52);
}

#[test]
fn upper_terminal_dominates_zero_terminal() {
    let weight = TimeWeight::geometric(0.8).unwrap();
    let p = nonholonomic_integrator(weight);
    let grid = StateGrid64::cube(3, -1.0, 1.0, 7).unwrap();
    let inputs = InputGrid::new(InputBox::new(vec![-1.0; 2], vec![1.0; 2]).unwrap(), vec![5, 5]).unwrap();
    let opts = DpOptions::default();
    let lower = solve_time_varying(&p.aug, &grid, &inputs, 12, &TerminalRule::Zero, &opts).unwrap();
    let upper_rule = TerminalRule::Upper { sigma: p.sigma.clone(), vbar: p.bundle.v_upper.clone() };
    let upper = solve_time_varying(&p.aug, &grid, &inputs, 12, &upper_rule, &opts).unwrap();
    assert_eq!(lower.report.approximation, Approximation::Lower);
    assert_eq!(upper.report.approximation, Approximation::Upper);
    for tau in 0..=12 {
        let (a, b) = (lower.value.values(tau).unwrap(), upper.value.values(tau).unwrap());
        assert!(a.iter().zip(b).all(|(a, b)| a <= b));
    }
}

#[test]
fn lattice_rollouts_respect_exponential_bound() {
    let p = nonholonomic_integrator(TimeWeight::geometric(0.9).unwrap());
    let sol = solve_discounted(&p.aug.base, p.ell1.as_ref().unwrap(), 0.9, &p.grid, &p.inputs, &DpOptions::default())
        .unwrap()
        .ensure_converged()
        .unwrap();
    let beta = beta_for_bundle(&p.bundle).unwrap().unwrap();
    for x0 in [[0.25, -0.125, 0.0625], [-0.5, 0.5, 0.0], [0.0, 0.0, 0.125]] {
        let traj = rollout(&p.aug, &Controller::Policy(&sol.policy), &AugmentedState::new(x0.to_vec(), 0), 200, &p.sigma).unwrap();
        let report = verify_bound(&traj, &beta, 1e-9, 5).unwrap();
        assert!(report.passed(), "{x0:?}: {:?}", report.violators);
        assert_eq!(traj.records.last().unwrap().sigma, 0.0);
    }
}

//! Closed-loop rollouts and checks of trajectory bounds along them.

use std::io::Write;
use std::sync::Arc;

use crate::certificates::{BetaBound, CertificateBundle, ThetaMap, YFunction};
use crate::comparison::KInf;
use crate::dp::Policy;
use crate::error::{Error, Result};
use crate::model::{AugmentedDynamics, AugmentedState, StateFn};
use crate::report::CheckReport;
use crate::scalar::Scalar;

/// Horizon cap for [`default_horizon`].
pub const MAX_DEFAULT_HORIZON: u64 = 10_000;

/// Input law `(x, τ) ↦ u`.
pub type ControlLaw<T> = Arc<dyn Fn(&[T], u64) -> Vec<T> + Send + Sync>;

pub enum Controller<'a, T> {
    /// Gridded policy, looked up at the node nearest to `x`.
    Policy(&'a Policy<T>),
    Analytic(ControlLaw<T>),
    /// Open-loop inputs `u_0, u_1, …`; the rollout stops when they run out.
    Sequence(Vec<Vec<T>>),
}

struct Decision<T> {
    u: Vec<T>,
    contaminated: bool,
}

impl<T: Scalar> Controller<'_, T> {
    fn decide(&self, x: &[T], tau: u64, k: usize) -> std::result::Result<Decision<T>, String> {
        match self {
            Controller::Policy(p) => {
                let (node, outside) = p.grid().nearest(x);
                if outside {
                    return Err(format!("state {x:?} left the policy grid at tau {tau}"));
                }
                let j = p.choice(node, tau).map_err(|e| e.to_string())?;
                let dirty = p.contamination(tau).map(|m| m[node]).unwrap_or(true);
                Ok(Decision {
                    u: p.inputs().get(j).to_vec(),
                    contaminated: dirty,
                })
            }
            Controller::Analytic(f) => Ok(Decision {
                u: f(x, tau),
                contaminated: false,
            }),
            Controller::Sequence(us) => us
                .get(k)
                .map(|u| Decision {
                    u: u.clone(),
                    contaminated: false,
                })
                .ok_or_else(|| format!("input sequence exhausted at step {k}")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Record<T> {
    pub k: u64,
    pub x: Vec<T>,
    /// Absent on the final state.
    pub u: Option<Vec<T>>,
    pub stage_cost: Option<T>,
    pub sigma: T,
    pub y: Option<T>,
    pub vartheta: Option<T>,
    pub beta: Option<T>,
    /// The policy node used here (or the value queried here) was
    /// boundary-contaminated.
    pub contaminated: bool,
}

#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub start: AugmentedState<T>,
    pub records: Vec<Record<T>>,
    pub boundary_contaminated: bool,
    pub truncated: Option<String>,
}

/// Runs `k_max` steps of the closed loop from `q0`. Leaving the policy grid,
/// an inadmissible input or an exhausted sequence ends the trajectory early
/// and sets [`Trajectory::truncated`].
pub fn rollout<T: Scalar>(
    aug: &AugmentedDynamics<T>,
    controller: &Controller<'_, T>,
    q0: &AugmentedState<T>,
    k_max: u64,
    sigma: &StateFn<T>,
) -> Result<Trajectory<T>> {
    if k_max < 1 {
        return Err(Error::Config("rollout horizon must be at least 1".into()));
    }
    if q0.x.len() != aug.n_x() {
        return Err(Error::Dimension {
            what: "initial state",
            expected: aug.n_x(),
            got: q0.x.len(),
        });
    }
    let mut traj = Trajectory {
        start: q0.clone(),
        records: Vec::with_capacity(k_max as usize + 1),
        boundary_contaminated: false,
        truncated: None,
    };
    let mut q = q0.clone();
    for k in 0..k_max {
        let decision = match controller.decide(&q.x, q.tau, k as usize) {
            Ok(d) => d,
            Err(reason) => {
                traj.truncated = Some(reason);
                break;
            }
        };
        if decision.u.len() != aug.n_u() || !aug.base.is_admissible(&q.x, &decision.u, q.tau) {
            traj.truncated = Some(format!("inadmissible input {:?} at step {k}", decision.u));
            break;
        }
        let cost = aug.stage_cost(&q, &decision.u);
        let next = aug.step(&q, &decision.u);
        traj.boundary_contaminated |= decision.contaminated;
        traj.records.push(Record {
            k,
            x: q.x.clone(),
            u: Some(decision.u),
            stage_cost: Some(cost),
            sigma: sigma(&q.x),
            y: None,
            vartheta: None,
            beta: None,
            contaminated: decision.contaminated,
        });
        q = next;
    }
    traj.records.push(Record {
        k: traj.records.len() as u64,
        sigma: sigma(&q.x),
        x: q.x,
        u: None,
        stage_cost: None,
        y: None,
        vartheta: None,
        beta: None,
        contaminated: false,
    });
    Ok(traj)
}

impl<T: Scalar> Trajectory<T> {
    pub fn tau(&self, k: u64) -> u64 {
        self.start.tau + k
    }

    pub fn inputs(&self) -> Vec<Vec<T>> {
        self.records.iter().filter_map(|r| r.u.clone()).collect()
    }

    /// Sum of the recorded stage costs, accumulated in step order.
    pub fn total_cost(&self) -> T {
        let mut total = T::zero();
        for r in &self.records {
            if let Some(c) = r.stage_cost {
                total = total + c;
            }
        }
        total
    }

    pub fn sigma0(&self) -> T {
        self.records[0].sigma
    }

    /// Fills the `beta` column with `β(σ(x₀), k, τ₀)`.
    pub fn annotate_beta(&mut self, beta: &BetaBound<T>) -> Result<()> {
        let s0 = self.sigma0();
        let tau0 = self.start.tau;
        for r in &mut self.records {
            r.beta = Some(beta.eval(s0, r.k, tau0)?);
        }
        Ok(())
    }

    /// CSV `k,tau,x0..,u0..,stage_cost,sigma,y,vartheta,beta`; absent
    /// annotations are empty fields.
    pub fn write_csv<W: Write>(&self, mut w: W, n_u: usize) -> Result<()> {
        let n_x = self.start.x.len();
        let mut header = vec!["k".to_string(), "tau".to_string()];
        header.extend((0..n_x).map(|i| format!("x{i}")));
        header.extend((0..n_u).map(|i| format!("u{i}")));
        header.extend(["stage_cost", "sigma", "y", "vartheta", "beta"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        let opt = |v: Option<T>| v.map(|v| v.as_f64().to_string()).unwrap_or_default();
        for r in &self.records {
            let mut row = vec![r.k.to_string(), self.tau(r.k).to_string()];
            row.extend(r.x.iter().map(|v| v.as_f64().to_string()));
            match &r.u {
                Some(u) => row.extend(u.iter().map(|v| v.as_f64().to_string())),
                None => row.extend(std::iter::repeat(String::new()).take(n_u)),
            }
            row.push(opt(r.stage_cost));
            row.push(r.sigma.as_f64().to_string());
            row.push(opt(r.y));
            row.push(opt(r.vartheta));
            row.push(opt(r.beta));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Fills `y = V + W` per record and the paired `ϑ^(k)(Y(q₀), τ₀ + k)`.
/// Records whose value query fails (off-grid) or hits a contaminated node are
/// flagged contaminated and left without `y`.
pub fn annotate_y<T: Scalar>(traj: &mut Trajectory<T>, yf: &YFunction<'_, T>, theta: &ThetaMap<'_, T>) -> Result<()> {
    let tau0 = traj.start.tau;
    let mut vt: Option<T> = None;
    for r in traj.records.iter_mut() {
        let tau = tau0 + r.k;
        if yf.value.contaminated(&r.x, tau) {
            r.contaminated = true;
        }
        match yf.eval(&r.x, tau) {
            Ok(y) => r.y = Some(y),
            Err(_) => r.contaminated = true,
        }
        vt = match (r.k, vt) {
            (0, _) => r.y,
            (_, Some(prev)) => Some(theta.eval(prev, tau - 1)?),
            (_, None) => None,
        };
        r.vartheta = vt;
    }
    Ok(())
}

/// Checks `σ(x_k) ≤ β(σ(x₀), k, τ₀) + η` along the trajectory.
pub fn verify_bound<T: Scalar>(traj: &Trajectory<T>, beta: &BetaBound<T>, slack: f64, cap: usize) -> Result<CheckReport> {
    let mut report = CheckReport::new("trajectory_bound", slack);
    let s0 = traj.sigma0();
    let tau0 = traj.start.tau;
    let mut max_ratio: f64 = 0.0;
    let mut first_violation = None;
    for r in &traj.records {
        let b = beta.eval(s0, r.k, tau0)?;
        let (s, bf) = (r.sigma.as_f64(), b.as_f64());
        if bf > 0.0 {
            max_ratio = max_ratio.max(s / bf);
        } else if s > 0.0 {
            max_ratio = f64::INFINITY;
        }
        report.samples += 1;
        if !report.record(cap, r.k as usize, "sigma(x_k) <= beta(sigma(x_0), k, tau_0)", &[], tau0 + r.k, s, bf) {
            first_violation.get_or_insert(r.k);
        }
    }
    report.param("beta", format!("{beta:?}"));
    report.param("sigma0", s0.as_f64());
    report.param("max_ratio", if max_ratio.is_finite() { max_ratio } else { f64::MAX });
    report.param("first_violation", first_violation);
    report.param("steps", traj.records.len() - 1);
    if traj.boundary_contaminated {
        report.note("trajectory visited boundary-contaminated policy nodes");
    }
    if let Some(reason) = &traj.truncated {
        report.fail(format!("trajectory truncated: {reason}"));
    }
    Ok(report.finish())
}

/// Checks `Y(q_{k+1}) − Y(q_k) ≤ −w(σ(x_k), τ_k) + η` on every step whose
/// endpoints are both clean and annotated.
pub fn verify_decrease<T: Scalar>(traj: &Trajectory<T>, bundle: &CertificateBundle<T>, slack: f64, cap: usize) -> CheckReport {
    let mut report = CheckReport::new("lyapunov_decrease", slack);
    let tau0 = traj.start.tau;
    for pair in traj.records.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        match (a.y, b.y, a.contaminated || b.contaminated) {
            (Some(ya), Some(yb), false) => {
                report.samples += 1;
                let w = bundle.w_lower.eval(a.sigma, tau0 + a.k);
                report.record(cap, a.k as usize, "Y(q+) - Y(q) <= -w(sigma, tau)", &[], tau0 + a.k, (yb - ya).as_f64(), (-w).as_f64());
            }
            _ => report.skipped += 1,
        }
    }
    report.finish()
}

/// The KL-route decrease `Y(q_{k+1}) − Y(q_k) ≤ −a̲(ā⁻¹(Y(q_k))) + η`.
pub fn verify_uniform_decrease<T: Scalar>(
    traj: &Trajectory<T>,
    lower: &KInf<T>,
    upper: &KInf<T>,
    slack: f64,
    cap: usize,
) -> Result<CheckReport> {
    let mut report = CheckReport::new("uniform_decrease", slack);
    let tau0 = traj.start.tau;
    for pair in traj.records.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        match (a.y, b.y, a.contaminated || b.contaminated) {
            (Some(ya), Some(yb), false) => {
                report.samples += 1;
                let rhs = -lower.eval(upper.inverse(ya)?);
                report.record(cap, a.k as usize, "Y(q+) - Y(q) <= -lower(upper^-1(Y))", &[], tau0 + a.k, (yb - ya).as_f64(), rhs.as_f64());
            }
            _ => report.skipped += 1,
        }
    }
    Ok(report.finish())
}

/// Checks `Y(q_k) ≤ ϑ^(k)(Y(q₀), τ₀ + k) + η` on annotated records.
pub fn verify_vartheta<T: Scalar>(traj: &Trajectory<T>, slack: f64, cap: usize) -> CheckReport {
    let mut report = CheckReport::new("vartheta_bound", slack);
    let tau0 = traj.start.tau;
    for r in &traj.records {
        match (r.y, r.vartheta, r.contaminated) {
            (Some(y), Some(v), false) => {
                report.samples += 1;
                report.record(cap, r.k as usize, "Y(q_k) <= vartheta_k", &[], tau0 + r.k, y.as_f64(), v.as_f64());
            }
            _ => report.skipped += 1,
        }
    }
    report.finish()
}

/// Smallest `k` with `β(σ₀, k, τ₀) < 10⁻⁶·σ₀`, capped at
/// [`MAX_DEFAULT_HORIZON`]. Zero `σ₀` gives horizon 1.
pub fn default_horizon<T: Scalar>(beta: &BetaBound<T>, sigma0: T, tau0: u64) -> Result<u64> {
    if sigma0 <= T::zero() {
        return Ok(1);
    }
    let target = T::lit(1e-6) * sigma0;
    if let Some(e) = beta.exp_kl() {
        if e.lambda3 == T::one() && e.lambda2 > T::zero() {
            // λ₁λ₂^k·scale < 1e-6 ⇔ k > ln(1e-6/(λ₁·scale))/ln λ₂
            let bound = (T::lit(1e-6) / (e.lambda1 * beta.scale)).ln() / e.lambda2.ln();
            let mut k = bound.floor().max(T::zero()).to_u64().unwrap_or(MAX_DEFAULT_HORIZON);
            k = k.min(MAX_DEFAULT_HORIZON);
            while k > 0 && beta.eval(sigma0, k - 1, tau0)? < target {
                k -= 1;
            }
            while k < MAX_DEFAULT_HORIZON && beta.eval(sigma0, k, tau0)? >= target {
                k += 1;
            }
            return Ok(k.max(1));
        }
    }
    for k in 0..MAX_DEFAULT_HORIZON {
        if beta.eval(sigma0, k, tau0)? < target {
            return Ok(k.max(1));
        }
    }
    Ok(MAX_DEFAULT_HORIZON)
}

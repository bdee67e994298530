//! Grid value iteration for the clock-augmented problem.
//!
//! Successors that leave the grid are clamped onto its boundary. A node is
//! marked *boundary-contaminated* when its minimizing successor was clamped
//! or interpolates from a contaminated node of the next table; the mask is
//! propagated sweep by sweep and certification skips flagged nodes.
//!
//! Within a sweep every node backup is independent and runs on the rayon
//! pool. Results are collected in node order, so tables are bit-identical
//! for any number of workers.

use std::io::{BufRead, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comparison::TimeKInf;
use crate::error::{Error, Result};
use crate::grid::StateGrid;
use crate::model::{AugmentedDynamics, Dynamics, InputGrid, StateFn, StateInputFn};
use crate::scalar::Scalar;

/// How a table relates to the true optimal value function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approximation {
    /// Built upward from zero: never above the value of the gridded problem.
    Lower,
    /// Built from an upper-bound terminal condition.
    Upper,
    /// Exact up to series truncation (analytic values).
    Exact,
}

#[derive(Clone, Debug)]
pub struct ValueTable<T> {
    grid: StateGrid<T>,
    clock_start: Option<u64>,
    slices: Vec<Vec<T>>,
    contaminated: Vec<Vec<bool>>,
    approximation: Approximation,
}

#[derive(Clone, Debug)]
pub struct Policy<T> {
    grid: StateGrid<T>,
    inputs: InputGrid<T>,
    clock_start: Option<u64>,
    choices: Vec<Vec<usize>>,
    contaminated: Vec<Vec<bool>>,
}

#[derive(Clone, Copy, Debug)]
pub struct DpOptions<T> {
    /// Stop when the sup-norm change between sweeps is at most `tol`.
    pub tol: T,
    pub max_iterations: usize,
    /// Clamp off-grid successors (and flag them) instead of failing.
    pub clamp: bool,
}

impl<T: Scalar> Default for DpOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-8),
            max_iterations: 100_000,
            clamp: true,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub mode: &'static str,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    pub tol: f64,
    /// `tol·γ/(1−γ)`; absent when `γ = 1` or for finite-horizon sweeps.
    pub error_bound: Option<f64>,
    pub monotone: bool,
    pub contaminated_fraction: f64,
    pub nodes: usize,
    pub inputs: usize,
    pub approximation: Approximation,
    pub clock_horizon: Option<u64>,
}

pub struct Solution<T> {
    pub value: ValueTable<T>,
    pub policy: Policy<T>,
    pub report: SolveReport,
}

impl<T> Solution<T> {
    pub fn ensure_converged(self) -> Result<Self> {
        if self.report.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence {
                iterations: self.report.iterations,
                residual: self.report.residual,
            })
        }
    }
}

/// Terminal condition for the finite clock horizon.
#[derive(Clone)]
pub enum TerminalRule<T> {
    /// `V(·, T) = 0`: the result underestimates the infinite-horizon value.
    Zero,
    /// `V(x, T) = v̄(σ(x), T)`: overestimates when `v̄` is a valid bound.
    Upper { sigma: StateFn<T>, vbar: TimeKInf<T> },
}

struct Sweep<T> {
    values: Vec<T>,
    choices: Vec<usize>,
    contaminated: Vec<bool>,
}

/// One Bellman backup of every node against `next` (values at the following
/// clock). `cost(x, u)` and `step(x, u, out)` already carry the clock.
fn sweep<T, C, F>(
    grid: &StateGrid<T>,
    inputs: &InputGrid<T>,
    next: &[T],
    next_mask: &[bool],
    discount: T,
    clamp: bool,
    tau: u64,
    admissible: impl Fn(&[T], &[T]) -> bool + Sync,
    cost: C,
    step: F,
) -> Result<Sweep<T>>
where
    T: Scalar,
    C: Fn(&[T], &[T]) -> T + Sync,
    F: Fn(&[T], &[T], &mut [T]) + Sync,
{
    let n_x = grid.dim();
    let per_node: Vec<(T, usize, bool)> = (0..grid.len())
        .into_par_iter()
        .map(|node| {
            let mut x = vec![T::zero(); n_x];
            let mut xn = vec![T::zero(); n_x];
            grid.node_into(node, &mut x);
            let mut best: Option<(T, usize, bool)> = None;
            for (j, u) in inputs.iter().enumerate() {
                if !admissible(&x, u) {
                    continue;
                }
                step(&x, u, &mut xn);
                let st = grid.stencil(&xn, clamp)?;
                let q = cost(&x, u) + discount * st.apply(next);
                if best.map_or(true, |(b, _, _)| q < b) {
                    let dirty = st.clamped || st.iter().any(|(i, _)| next_mask[i]);
                    best = Some((q, j, dirty));
                }
            }
            best.ok_or_else(|| Error::EmptyInputs {
                node,
                state: x.iter().map(|v| v.as_f64()).collect(),
                tau,
            })
        })
        .collect::<Result<_>>()?;
    let mut out = Sweep {
        values: Vec::with_capacity(per_node.len()),
        choices: Vec::with_capacity(per_node.len()),
        contaminated: Vec::with_capacity(per_node.len()),
    };
    for (v, j, dirty) in per_node {
        out.values.push(v);
        out.choices.push(j);
        out.contaminated.push(dirty);
    }
    Ok(out)
}

fn augmented_sweep<T: Scalar>(
    aug: &AugmentedDynamics<T>,
    grid: &StateGrid<T>,
    inputs: &InputGrid<T>,
    next: &[T],
    next_mask: &[bool],
    tau: u64,
    clamp: bool,
) -> Result<Sweep<T>> {
    check_dims(aug.n_x(), aug.n_u(), grid, inputs)?;
    sweep(
        grid,
        inputs,
        next,
        next_mask,
        T::one(),
        clamp,
        tau,
        |x, u| aug.base.is_admissible(x, u, tau),
        |x, u| aug.cost.eval(x, tau, u),
        |x, u, out| aug.base.step_into(x, u, tau, out),
    )
}

fn check_dims<T: Scalar>(n_x: usize, n_u: usize, grid: &StateGrid<T>, inputs: &InputGrid<T>) -> Result<()> {
    if grid.dim() != n_x {
        return Err(Error::Dimension {
            what: "state grid",
            expected: n_x,
            got: grid.dim(),
        });
    }
    if inputs.dim() != n_u {
        return Err(Error::Dimension {
            what: "input grid",
            expected: n_u,
            got: inputs.dim(),
        });
    }
    Ok(())
}

/// `out(x) = min_u [ℓ(x, τ, u) + V_next(f(x, u, τ))]` over the discrete
/// inputs. `next` is read at clock `τ + 1` (or its only slice if stationary).
pub fn bellman_backup<T: Scalar>(
    next: &ValueTable<T>,
    aug: &AugmentedDynamics<T>,
    tau: u64,
    inputs: &InputGrid<T>,
    clamp: bool,
) -> Result<ValueTable<T>> {
    let (vals, mask) = next.slice_and_mask(tau + 1)?;
    let s = augmented_sweep(aug, &next.grid, inputs, vals, mask, tau, clamp)?;
    Ok(ValueTable {
        grid: next.grid.clone(),
        clock_start: Some(tau),
        slices: vec![s.values],
        contaminated: vec![s.contaminated],
        approximation: next.approximation,
    })
}

/// Bellman argmin at every node against `value` read at `τ + 1`; ties go to
/// the lowest input index.
pub fn extract_policy<T: Scalar>(
    value: &ValueTable<T>,
    aug: &AugmentedDynamics<T>,
    tau: u64,
    inputs: &InputGrid<T>,
    clamp: bool,
) -> Result<Policy<T>> {
    let (vals, mask) = value.slice_and_mask(tau + 1)?;
    let s = augmented_sweep(aug, &value.grid, inputs, vals, mask, tau, clamp)?;
    Ok(Policy {
        grid: value.grid.clone(),
        inputs: inputs.clone(),
        clock_start: Some(tau),
        choices: vec![s.choices],
        contaminated: vec![s.contaminated],
    })
}

/// Stationary value iteration for `ℓ₁(x,u)·γ^τ` costs on time-invariant
/// dynamics. Returns `V̂` with `V(x, τ) = γ^τ·V̂(x)`.
///
/// `γ = 1` is accepted for problems whose cost is summable along the
/// dynamics; no a-posteriori error bound is reported then.
pub fn solve_discounted<T: Scalar>(
    dynamics: &Dynamics<T>,
    ell1: &StateInputFn<T>,
    gamma: T,
    grid: &StateGrid<T>,
    inputs: &InputGrid<T>,
    opts: &DpOptions<T>,
) -> Result<Solution<T>> {
    if !dynamics.is_time_invariant() {
        return Err(Error::Config(
            "the stationary discounted solver needs time-invariant dynamics".into(),
        ));
    }
    if !(gamma > T::zero() && gamma <= T::one()) {
        return Err(Error::param("discount factor", format!("gamma = {gamma} outside (0, 1]")));
    }
    check_dims(dynamics.n_x(), dynamics.n_u(), grid, inputs)?;
    let run = |v: &[T], mask: &[bool]| {
        sweep(
            grid,
            inputs,
            v,
            mask,
            gamma,
            opts.clamp,
            0,
            |x, u| dynamics.is_admissible(x, u, 0),
            |x, u| ell1(x, u),
            |x, u, out| dynamics.step_into(x, u, 0, out),
        )
    };

    let n = grid.len();
    let mut values = vec![T::zero(); n];
    let mut mask = vec![false; n];
    let mut residual = T::infinity();
    let mut iterations = 0;
    let mut monotone = true;
    let slack = T::lit(1e-12);
    while iterations < opts.max_iterations {
        let s = run(&values, &mask)?;
        iterations += 1;
        residual = T::zero();
        for (new, old) in s.values.iter().zip(&values) {
            let d = *new - *old;
            residual = residual.max(d.abs());
            if d < -slack * (T::one() + old.abs()) {
                monotone = false;
            }
        }
        values = s.values;
        mask = s.contaminated;
        if residual <= opts.tol {
            break;
        }
    }
    let converged = residual <= opts.tol;
    let last = run(&values, &mask)?;
    let policy = Policy {
        grid: grid.clone(),
        inputs: inputs.clone(),
        clock_start: None,
        choices: vec![last.choices],
        contaminated: vec![last.contaminated.clone()],
    };
    let report = SolveReport {
        mode: "discounted",
        converged,
        iterations,
        residual: residual.as_f64(),
        tol: opts.tol.as_f64(),
        error_bound: (converged && gamma < T::one())
            .then(|| (opts.tol * gamma / (T::one() - gamma)).as_f64()),
        monotone,
        contaminated_fraction: fraction(&last.contaminated),
        nodes: n,
        inputs: inputs.len(),
        approximation: Approximation::Lower,
        clock_horizon: None,
    };
    Ok(Solution {
        value: ValueTable {
            grid: grid.clone(),
            clock_start: None,
            slices: vec![values],
            contaminated: vec![last.contaminated],
            approximation: Approximation::Lower,
        },
        policy,
        report,
    })
}

/// Backward sweep `τ = T−1, …, 0` of the augmented Bellman equation from the
/// terminal rule at `τ = T`. The table holds slices for `τ ∈ [0, T]`.
pub fn solve_time_varying<T: Scalar>(
    aug: &AugmentedDynamics<T>,
    grid: &StateGrid<T>,
    inputs: &InputGrid<T>,
    horizon: u64,
    terminal: &TerminalRule<T>,
    opts: &DpOptions<T>,
) -> Result<Solution<T>> {
    if horizon < 1 {
        return Err(Error::Config("clock horizon must be at least 1".into()));
    }
    check_dims(aug.n_x(), aug.n_u(), grid, inputs)?;
    let n = grid.len();
    let (terminal_values, approximation) = match terminal {
        TerminalRule::Zero => (vec![T::zero(); n], Approximation::Lower),
        TerminalRule::Upper { sigma, vbar } => (
            (0..n).map(|i| vbar.eval(sigma(&grid.node(i)), horizon)).collect(),
            Approximation::Upper,
        ),
    };
    let steps = horizon as usize;
    let mut slices = vec![Vec::new(); steps + 1];
    let mut masks = vec![Vec::new(); steps + 1];
    let mut choices = vec![Vec::new(); steps];
    let mut policy_masks = vec![Vec::new(); steps];
    slices[steps] = terminal_values;
    masks[steps] = vec![false; n];
    for tau in (0..horizon).rev() {
        let t = tau as usize;
        let s = augmented_sweep(aug, grid, inputs, &slices[t + 1], &masks[t + 1], tau, opts.clamp)?;
        slices[t] = s.values;
        masks[t] = s.contaminated.clone();
        choices[t] = s.choices;
        policy_masks[t] = s.contaminated;
    }
    let contaminated_fraction = fraction(&masks[0]);
    Ok(Solution {
        value: ValueTable {
            grid: grid.clone(),
            clock_start: Some(0),
            slices,
            contaminated: masks,
            approximation,
        },
        policy: Policy {
            grid: grid.clone(),
            inputs: inputs.clone(),
            clock_start: Some(0),
            choices,
            contaminated: policy_masks,
        },
        report: SolveReport {
            mode: "time_varying",
            converged: true,
            iterations: steps,
            residual: 0.0,
            tol: opts.tol.as_f64(),
            error_bound: None,
            monotone: true,
            contaminated_fraction,
            nodes: n,
            inputs: inputs.len(),
            approximation,
            clock_horizon: Some(horizon),
        },
    })
}

fn fraction(mask: &[bool]) -> f64 {
    if mask.is_empty() {
        0.0
    } else {
        mask.iter().filter(|m| **m).count() as f64 / mask.len() as f64
    }
}

fn slice_index(clock_start: Option<u64>, len: usize, tau: u64) -> Result<usize> {
    match clock_start {
        None => Ok(0),
        Some(start) => {
            let i = tau.checked_sub(start).map(|d| d as usize);
            match i {
                Some(i) if i < len => Ok(i),
                _ if len == 1 => Ok(0),
                _ => Err(Error::Config(format!(
                    "clock {tau} outside table range [{start}, {}]",
                    start + len as u64 - 1
                ))),
            }
        }
    }
}

impl<T: Scalar> ValueTable<T> {
    /// A stationary table from explicit nodal values.
    pub fn stationary(grid: StateGrid<T>, values: Vec<T>, approximation: Approximation) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension {
                what: "value table",
                expected: grid.len(),
                got: values.len(),
            });
        }
        let n = values.len();
        Ok(Self {
            grid,
            clock_start: None,
            slices: vec![values],
            contaminated: vec![vec![false; n]],
            approximation,
        })
    }

    /// A stationary table sampling `f` at every node.
    pub fn from_fn(grid: StateGrid<T>, f: impl Fn(&[T]) -> T, approximation: Approximation) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.node(i))).collect();
        Self::stationary(grid, values, approximation).expect("sizes agree by construction")
    }

    pub fn grid(&self) -> &StateGrid<T> {
        &self.grid
    }

    pub fn approximation(&self) -> Approximation {
        self.approximation
    }

    pub fn is_stationary(&self) -> bool {
        self.clock_start.is_none()
    }

    /// Clock range `[start, end]` for time-indexed tables.
    pub fn clock_range(&self) -> Option<(u64, u64)> {
        self.clock_start
            .map(|s| (s, s + self.slices.len() as u64 - 1))
    }

    fn slice_and_mask(&self, tau: u64) -> Result<(&[T], &[bool])> {
        let i = slice_index(self.clock_start, self.slices.len(), tau)?;
        Ok((&self.slices[i], &self.contaminated[i]))
    }

    pub fn values(&self, tau: u64) -> Result<&[T]> {
        Ok(self.slice_and_mask(tau)?.0)
    }

    pub fn contamination(&self, tau: u64) -> Result<&[bool]> {
        Ok(self.slice_and_mask(tau)?.1)
    }

    pub fn interpolate(&self, x: &[T], tau: u64, clamp: bool) -> Result<T> {
        let (vals, _) = self.slice_and_mask(tau)?;
        self.grid.interpolate(vals, x, clamp)
    }

    /// Whether any node used to interpolate at `x` is contaminated.
    pub fn is_contaminated(&self, x: &[T], tau: u64) -> bool {
        match (self.slice_and_mask(tau), self.grid.stencil(x, true)) {
            (Ok((_, mask)), Ok(st)) => st.clamped || st.iter().any(|(i, _)| mask[i]),
            _ => true,
        }
    }

    /// CSV with header `dim0,…,dim{n-1},tau,value`; `tau` is empty for
    /// stationary tables.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.grid.dim();
        let header: Vec<String> = (0..n).map(|d| format!("dim{d}")).chain(["tau".into(), "value".into()]).collect();
        writeln!(w, "{}", header.join(","))?;
        for (k, slice) in self.slices.iter().enumerate() {
            let tau = self.clock_start.map(|s| (s + k as u64).to_string()).unwrap_or_default();
            write_rows(&mut w, &self.grid, &tau, slice.iter().map(|v| v.as_f64().to_string()))?;
        }
        Ok(())
    }

    /// Contamination mask as CSV `dim0,…,tau,contaminated` (0/1).
    pub fn write_mask_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.grid.dim();
        let header: Vec<String> = (0..n).map(|d| format!("dim{d}")).chain(["tau".into(), "contaminated".into()]).collect();
        writeln!(w, "{}", header.join(","))?;
        for (k, mask) in self.contaminated.iter().enumerate() {
            let tau = self.clock_start.map(|s| (s + k as u64).to_string()).unwrap_or_default();
            write_rows(&mut w, &self.grid, &tau, mask.iter().map(|m| u8::from(*m).to_string()))?;
        }
        Ok(())
    }

    /// Reads a table written by [`ValueTable::write_csv`] onto `grid`. Rows
    /// must appear in node order per clock slice.
    pub fn read_csv<R: BufRead>(grid: StateGrid<T>, reader: R, approximation: Approximation) -> Result<Self> {
        let (clock_start, columns) = read_rows(&grid, reader, "value")?;
        let slices: Vec<Vec<T>> = columns
            .into_iter()
            .map(|c| c.into_iter().map(T::lit).collect())
            .collect();
        let contaminated = slices.iter().map(|s| vec![false; s.len()]).collect();
        Ok(Self {
            grid,
            clock_start,
            slices,
            contaminated,
            approximation,
        })
    }

    /// Replaces the contamination mask with one read from
    /// [`ValueTable::write_mask_csv`] output.
    pub fn load_mask_csv<R: BufRead>(&mut self, reader: R) -> Result<()> {
        let (_, columns) = read_rows(&self.grid, reader, "contaminated")?;
        if columns.len() != self.slices.len() {
            return Err(Error::Parse("mask slice count differs from table".into()));
        }
        self.contaminated = columns
            .into_iter()
            .map(|c| c.into_iter().map(|v| v != 0.0).collect())
            .collect();
        Ok(())
    }
}

impl<T: Scalar> Policy<T> {
    pub fn grid(&self) -> &StateGrid<T> {
        &self.grid
    }

    pub fn inputs(&self) -> &InputGrid<T> {
        &self.inputs
    }

    pub fn is_stationary(&self) -> bool {
        self.clock_start.is_none()
    }

    pub fn choices(&self, tau: u64) -> Result<&[usize]> {
        let i = slice_index(self.clock_start, self.choices.len(), tau)?;
        Ok(&self.choices[i])
    }

    pub fn contamination(&self, tau: u64) -> Result<&[bool]> {
        let i = slice_index(self.clock_start, self.contaminated.len(), tau)?;
        Ok(&self.contaminated[i])
    }

    /// Input index chosen at `node` for clock `tau`.
    pub fn choice(&self, node: usize, tau: u64) -> Result<usize> {
        Ok(self.choices(tau)?[node])
    }

    pub fn input(&self, node: usize, tau: u64) -> Result<&[T]> {
        Ok(self.inputs.get(self.choice(node, tau)?))
    }

    /// CSV with header `dim0,…,dim{n-1},tau,u_index`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.grid.dim();
        let header: Vec<String> = (0..n).map(|d| format!("dim{d}")).chain(["tau".into(), "u_index".into()]).collect();
        writeln!(w, "{}", header.join(","))?;
        for (k, slice) in self.choices.iter().enumerate() {
            let tau = self.clock_start.map(|s| (s + k as u64).to_string()).unwrap_or_default();
            write_rows(&mut w, &self.grid, &tau, slice.iter().map(|j| j.to_string()))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(grid: StateGrid<T>, inputs: InputGrid<T>, reader: R) -> Result<Self> {
        let (clock_start, columns) = read_rows(&grid, reader, "u_index")?;
        let mut choices = Vec::with_capacity(columns.len());
        for c in columns {
            let mut slice = Vec::with_capacity(c.len());
            for v in c {
                if v < 0.0 || v.fract() != 0.0 || v as usize >= inputs.len() {
                    return Err(Error::Parse(format!("invalid input index {v}")));
                }
                slice.push(v as usize);
            }
            choices.push(slice);
        }
        let contaminated = choices.iter().map(|s| vec![false; s.len()]).collect();
        Ok(Self {
            grid,
            inputs,
            clock_start,
            choices,
            contaminated,
        })
    }

    /// Takes the contamination mask of the value table the policy was
    /// extracted from.
    pub fn with_mask_from(mut self, value: &ValueTable<T>) -> Self {
        if value.contaminated.len() >= self.choices.len() {
            self.contaminated = value.contaminated[..self.choices.len()].to_vec();
        }
        self
    }
}

fn write_rows<T: Scalar, W: Write>(
    w: &mut W,
    grid: &StateGrid<T>,
    tau: &str,
    cells: impl Iterator<Item = String>,
) -> Result<()> {
    let mut x = vec![T::zero(); grid.dim()];
    for (node, cell) in cells.enumerate() {
        grid.node_into(node, &mut x);
        for v in &x {
            write!(w, "{},", v.as_f64())?;
        }
        writeln!(w, "{tau},{cell}")?;
    }
    Ok(())
}

type Columns = (Option<u64>, Vec<Vec<f64>>);

fn read_rows<T: Scalar, R: BufRead>(grid: &StateGrid<T>, reader: R, last: &str) -> Result<Columns> {
    let n = grid.dim();
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty file".into()))??;
    let expected: Vec<String> = (0..n).map(|d| format!("dim{d}")).chain(["tau".into(), last.into()]).collect();
    if header.trim() != expected.join(",") {
        return Err(Error::Parse(format!(
            "unexpected header '{header}', expected '{}'",
            expected.join(",")
        )));
    }
    let mut clock_start: Option<u64> = None;
    let mut stationary = None;
    let mut slices: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n + 2 {
            return Err(Error::Parse(format!("line {}: expected {} fields", lineno + 2, n + 2)));
        }
        let tau_field = fields[n].trim();
        let is_stationary = tau_field.is_empty();
        if *stationary.get_or_insert(is_stationary) != is_stationary {
            return Err(Error::Parse(format!("line {}: mixed stationary and clocked rows", lineno + 2)));
        }
        let slice = if is_stationary {
            0
        } else {
            let tau: u64 = tau_field
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad tau '{tau_field}'", lineno + 2)))?;
            let start = *clock_start.get_or_insert(tau);
            tau.checked_sub(start)
                .ok_or_else(|| Error::Parse(format!("line {}: tau below first slice", lineno + 2)))?
                as usize
        };
        let v: f64 = fields[n + 1]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad {last} '{}'", lineno + 2, fields[n + 1])))?;
        if slices.len() <= slice {
            slices.resize(slice + 1, Vec::new());
        }
        slices[slice].push(v);
    }
    if slices.is_empty() || slices.iter().any(|s| s.len() != grid.len()) {
        return Err(Error::Parse(format!(
            "every slice must hold {} rows",
            grid.len()
        )));
    }
    Ok((clock_start, slices))
}

/// Access to a value function `V(x, τ)`, gridded or analytic.
pub trait ValueFunction<T>: Send + Sync {
    fn value(&self, x: &[T], tau: u64) -> Result<T>;

    fn contaminated(&self, _x: &[T], _tau: u64) -> bool {
        false
    }

    fn approximation(&self) -> Approximation;
}

impl<T: Scalar> ValueFunction<T> for ValueTable<T> {
    fn value(&self, x: &[T], tau: u64) -> Result<T> {
        self.interpolate(x, tau, false)
    }

    fn contaminated(&self, x: &[T], tau: u64) -> bool {
        self.is_contaminated(x, tau)
    }

    fn approximation(&self) -> Approximation {
        self.approximation
    }
}

/// `V(x, τ) = γ^τ·V̂(x)` from a stationary discounted table.
#[derive(Clone, Debug)]
pub struct DiscountedValue<T> {
    pub table: ValueTable<T>,
    pub gamma: T,
}

impl<T: Scalar> ValueFunction<T> for DiscountedValue<T> {
    fn value(&self, x: &[T], tau: u64) -> Result<T> {
        Ok(crate::weights::powi_u64(self.gamma, tau) * self.table.interpolate(x, 0, false)?)
    }

    fn contaminated(&self, x: &[T], tau: u64) -> bool {
        let _ = tau;
        self.table.is_contaminated(x, 0)
    }

    fn approximation(&self) -> Approximation {
        self.table.approximation
    }
}

/// A closed-form value function.
#[derive(Clone)]
pub struct AnalyticValue<T> {
    pub f: Arc<dyn Fn(&[T], u64) -> T + Send + Sync>,
    pub approximation: Approximation,
}

impl<T: Scalar> ValueFunction<T> for AnalyticValue<T> {
    fn value(&self, x: &[T], tau: u64) -> Result<T> {
        Ok((self.f)(x, tau))
    }

    fn approximation(&self) -> Approximation {
        self.approximation
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{augment, InputBox, StageCost};
    use crate::weights::TimeWeight;

    fn scalar_linear(a: f64, ulo: f64, uhi: f64) -> Dynamics<f64> {
        Dynamics::new(1, InputBox::new(vec![ulo], vec![uhi]).unwrap(), move |x, u, _t, out| {
            out[0] = a * x[0] + u[0];
        })
    }

    #[test]
    fn one_step_backup_from_zero() {
        let grid = StateGrid::new(vec![-1.0], vec![1.0], vec![11]).unwrap();
        let dynamics = scalar_linear(1.0, 0.0, 0.0);
        let aug = augment(dynamics, StageCost::general(1, 1, |x, _t, _u| x[0] * x[0])).unwrap();
        let inputs = InputGrid::singleton(vec![0.0]).unwrap();
        let next = ValueTable::from_fn(grid.clone(), |_| 0.0, Approximation::Lower);
        let out = bellman_backup(&next, &aug, 0, &inputs, true).unwrap();
        for (i, v) in out.values(0).unwrap().iter().enumerate() {
            let x = grid.node(i)[0];
            assert!((v - x * x).abs() < 1e-15);
        }
    }

    #[test]
    fn discounted_geometric_series() {
        // x⁺ = x/2, ℓ₁ = x², γ = 0.9: V̂ = x²/(1 − 0.225). Successors fall
        // between nodes, so the grid value carries interpolation error of
        // order h²; the error bound below is h²/4 · Σ γ^k.
        let grid = StateGrid::new(vec![-2.0], vec![2.0], vec![401]).unwrap();
        let dynamics = scalar_linear(0.5, 0.0, 0.0);
        let inputs = InputGrid::singleton(vec![0.0]).unwrap();
        let ell1: StateInputFn<f64> = Arc::new(|x, _u| x[0] * x[0]);
        let opts = DpOptions { tol: 1e-12, ..Default::default() };
        let sol = solve_discounted(&dynamics, &ell1, 0.9, &grid, &inputs, &opts).unwrap();
        assert!(sol.report.converged && sol.report.monotone);
        let bound = 0.01f64.powi(2) / 4.0 * 10.0;
        for x in [-2.0f64, -1.0, 0.0, 0.5, 2.0] {
            let exact = x * x / (1.0 - 0.225);
            let v = sol.value.interpolate(&[x], 0, false).unwrap();
            assert!(v >= exact - 1e-9 && v - exact <= bound, "x = {x}: {v} vs {exact}");
        }
        // ℓ₁ = |x| is piecewise linear with its kink on a node: exact
        let ell1: StateInputFn<f64> = Arc::new(|x, _u| x[0].abs());
        let sol = solve_discounted(&dynamics, &ell1, 0.9, &grid, &inputs, &opts).unwrap();
        for (i, v) in sol.value.values(0).unwrap().iter().enumerate() {
            let x = grid.node(i)[0];
            assert!((v - x.abs() / (1.0 - 0.45)).abs() < 1e-9);
        }
        assert!((sol.report.error_bound.unwrap() - 9e-12).abs() < 1e-20);
    }

    #[test]
    fn zero_cost_gives_zero_table_in_one_iteration() {
        let grid = StateGrid::new(vec![-1.0], vec![1.0], vec![5]).unwrap();
        let dynamics = scalar_linear(1.0, -1.0, 1.0);
        let inputs = InputGrid::new(dynamics.input_box().clone(), vec![3]).unwrap();
        let ell1: StateInputFn<f64> = Arc::new(|_, _| 0.0);
        let sol = solve_discounted(&dynamics, &ell1, 0.5, &grid, &inputs, &DpOptions::default()).unwrap();
        assert_eq!(sol.report.iterations, 1);
        assert!(sol.value.values(0).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scalar_lq_riccati_fixed_point() {
        // x⁺ = x + u, ℓ = x² + u²: P = (1 + √5)/2 solves P = 1 + P − P²/(1+P).
        let p = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((p - (1.0 + p - p * p / (1.0 + p))).abs() < 1e-12);
        let grid = StateGrid::new(vec![-1.0], vec![1.0], vec![201]).unwrap();
        let dynamics = scalar_linear(1.0, -1.0, 1.0);
        let aug = augment(
            dynamics,
            StageCost::separable(1, 1, |x, u| x[0] * x[0] + u[0] * u[0], TimeWeight::band(1.0, 1.0).unwrap()),
        )
        .unwrap();
        let inputs = InputGrid::new(aug.base.input_box().clone(), vec![401]).unwrap();
        let next = ValueTable::from_fn(grid.clone(), |x| p * x[0] * x[0], Approximation::Exact);
        let out = bellman_backup(&next, &aug, 0, &inputs, true).unwrap();
        for (i, v) in out.values(0).unwrap().iter().enumerate() {
            let x = grid.node(i)[0];
            // input grid spacing 0.005 and state spacing 0.01 bound the error
            assert!((v - p * x * x).abs() < 2e-4, "x = {x}: {v} vs {}", p * x * x);
        }
    }

    #[test]
    fn policy_ties_go_to_lowest_index_and_symmetry() {
        // x⁺ = u, ℓ = x² + u²: optimal u = 0 everywhere; the argmin is odd in x.
        let grid = StateGrid::new(vec![-1.0], vec![1.0], vec![21]).unwrap();
        let dynamics = Dynamics::new(1, InputBox::new(vec![-1.0], vec![1.0]).unwrap(), |_x, u, _t, out| {
            out[0] = u[0];
        });
        let aug = augment(dynamics, StageCost::general(1, 1, |x, _t, u| x[0] * x[0] + u[0] * u[0])).unwrap();
        let inputs = InputGrid::new(aug.base.input_box().clone(), vec![21]).unwrap();
        let next = ValueTable::from_fn(grid.clone(), |x: &[f64]| 100.0 * x[0].abs(), Approximation::Exact);
        let pol = extract_policy(&next, &aug, 0, &inputs, true).unwrap();
        for node in 0..grid.len() {
            // brute-force argmin
            let x = grid.node(node)[0];
            let mut best = (f64::INFINITY, 0);
            for (j, u) in inputs.iter().enumerate() {
                let q = x * x + u[0] * u[0] + next.interpolate(&[u[0]], 1, true).unwrap();
                if q < best.0 {
                    best = (q, j);
                }
            }
            assert_eq!(pol.choice(node, 0).unwrap(), best.1);
            assert_eq!(pol.input(node, 0).unwrap()[0], 0.0);
        }
        // two inputs with equal cost: lowest index wins
        let tie = InputGrid::new(InputBox::new(vec![-0.5], vec![0.5]).unwrap(), vec![2]).unwrap();
        let flat = ValueTable::from_fn(grid.clone(), |_| 0.0, Approximation::Exact);
        let pol = extract_policy(&flat, &aug, 0, &tie, true).unwrap();
        assert!(pol.choices(0).unwrap().iter().all(|j| *j == 0));
    }

    #[test]
    fn empty_admissible_set_is_reported() {
        let grid = StateGrid::new(vec![-1.0], vec![1.0], vec![3]).unwrap();
        let dynamics = scalar_linear(1.0, 0.0, 0.0).with_admissible(|x, _u, _t| x[0] < 0.5);
        let aug = augment(dynamics, StageCost::general(1, 1, |_, _, _| 0.0)).unwrap();
        let inputs = InputGrid::singleton(vec![0.0]).unwrap();
        let next = ValueTable::from_fn(grid, |_| 0.0, Approximation::Lower);
        match bellman_backup(&next, &aug, 3, &inputs, true) {
            Err(Error::EmptyInputs { node, tau, .. }) => assert_eq!((node, tau), (2, 3)),
            other => panic!("expected empty-input error, got {:?}", other.err()),
        }
    }

    #[test]
    fn clamped_successors_are_flagged() {
        let grid = StateGrid::new(vec![-1.0], vec![1.0], vec![5]).unwrap();
        let dynamics = scalar_linear(2.0, 0.0, 0.0);
        let ell1: StateInputFn<f64> = Arc::new(|x, _| x[0] * x[0]);
        let inputs = InputGrid::singleton(vec![0.0]).unwrap();
        let sol = solve_discounted(&dynamics, &ell1, 0.5, &grid, &inputs, &DpOptions::default()).unwrap();
        let mask = sol.value.contamination(0).unwrap();
        assert_eq!(mask, &[true, true, false, true, true]);
        let strict = DpOptions { clamp: false, ..DpOptions::default() };
        assert!(matches!(
            solve_discounted(&dynamics, &ell1, 0.5, &grid, &inputs, &strict),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn csv_roundtrip() {
        let grid = StateGrid::new(vec![0.0, -1.0], vec![1.0, 1.0], vec![3, 4]).unwrap();
        let table = ValueTable::from_fn(grid.clone(), |x| x[0] + 0.1 * x[1] * x[1], Approximation::Lower);
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("dim0,dim1,tau,value\n"));
        let back = ValueTable::read_csv(grid, buf.as_slice(), Approximation::Lower).unwrap();
        assert_eq!(back.values(0).unwrap(), table.values(0).unwrap());
    }
}

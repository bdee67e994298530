//! Plant dynamics, stage costs and the clock augmentation `q = (x, τ)`.
//!
//! The augmented map is `F((x, τ), u) = (f(x, u, τ), τ + 1)`; the stage cost
//! is always read at the pre-step clock.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::weights::TimeWeight;

pub type StepFn<T> = Arc<dyn Fn(&[T], &[T], u64, &mut [T]) + Send + Sync>;
pub type AdmissibleFn<T> = Arc<dyn Fn(&[T], &[T], u64) -> bool + Send + Sync>;
pub type StateFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;
pub type StateInputFn<T> = Arc<dyn Fn(&[T], &[T]) -> T + Send + Sync>;
pub type GeneralCostFn<T> = Arc<dyn Fn(&[T], u64, &[T]) -> T + Send + Sync>;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedState<T> {
    pub x: Vec<T>,
    pub tau: u64,
}

impl<T: Scalar> AugmentedState<T> {
    pub fn new(x: Vec<T>, tau: u64) -> Self {
        Self { x, tau }
    }
}

/// Axis-aligned box of inputs. Unbounded input sets must be given declared
/// bounds before they can be discretized.
#[derive(Clone, Debug, PartialEq)]
pub struct InputBox<T> {
    pub lo: Vec<T>,
    pub hi: Vec<T>,
}

impl<T: Scalar> InputBox<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Dimension {
                what: "input box bounds",
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if let Some(d) = (0..lo.len()).find(|&d| !(lo[d] <= hi[d])) {
            return Err(Error::Config(format!(
                "input box dimension {d}: lo {} > hi {}",
                lo[d], hi[d]
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, u: &[T]) -> bool {
        u.len() == self.dim() && u.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| v >= l && v <= h)
    }
}

/// Uniform discretization of an [`InputBox`], enumerated row-major with the
/// last dimension varying fastest. Index order is the tie-break order.
#[derive(Clone, Debug, PartialEq)]
pub struct InputGrid<T> {
    bounds: InputBox<T>,
    counts: Vec<usize>,
    points: Vec<T>,
}

impl<T: Scalar> InputGrid<T> {
    pub fn new(bounds: InputBox<T>, counts: Vec<usize>) -> Result<Self> {
        if counts.len() != bounds.dim() {
            return Err(Error::Dimension {
                what: "input grid counts",
                expected: bounds.dim(),
                got: counts.len(),
            });
        }
        for (d, &c) in counts.iter().enumerate() {
            if c == 0 {
                return Err(Error::Config(format!("input grid dimension {d} has no points")));
            }
            if c == 1 && bounds.lo[d] != bounds.hi[d] {
                return Err(Error::Config(format!(
                    "input grid dimension {d}: a single point needs lo == hi"
                )));
            }
        }
        let n_u = bounds.dim();
        let total: usize = counts.iter().product();
        let mut points = Vec::with_capacity(total * n_u);
        let mut idx = vec![0usize; n_u];
        for _ in 0..total {
            for d in 0..n_u {
                let v = if counts[d] == 1 {
                    bounds.lo[d]
                } else {
                    let t = T::from_count(idx[d] as u64) / T::from_count(counts[d] as u64 - 1);
                    if idx[d] == counts[d] - 1 {
                        bounds.hi[d]
                    } else {
                        bounds.lo[d] + (bounds.hi[d] - bounds.lo[d]) * t
                    }
                };
                points.push(v);
            }
            for d in (0..n_u).rev() {
                idx[d] += 1;
                if idx[d] < counts[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Self {
            bounds,
            counts,
            points,
        })
    }

    /// The single input `u` (used for systems whose input is irrelevant).
    pub fn singleton(u: Vec<T>) -> Result<Self> {
        let n = u.len();
        Self::new(InputBox::new(u.clone(), u)?, vec![1; n])
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn bounds(&self) -> &InputBox<T> {
        &self.bounds
    }

    pub fn get(&self, i: usize) -> &[T] {
        let n = self.dim();
        &self.points[i * n..(i + 1) * n]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[T]> {
        self.points.chunks(self.dim().max(1))
    }
}

#[derive(Clone)]
pub struct Dynamics<T> {
    n_x: usize,
    n_u: usize,
    step: StepFn<T>,
    input_box: InputBox<T>,
    admissible: Option<AdmissibleFn<T>>,
    time_invariant: bool,
}

impl<T: Scalar> fmt::Debug for Dynamics<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dynamics")
            .field("n_x", &self.n_x)
            .field("n_u", &self.n_u)
            .field("input_box", &self.input_box)
            .field("time_invariant", &self.time_invariant)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> Dynamics<T> {
    /// Time-invariant dynamics `x⁺ = f(x, u)`; `step` writes `x⁺` into its
    /// last argument.
    pub fn new(
        n_x: usize,
        input_box: InputBox<T>,
        step: impl Fn(&[T], &[T], u64, &mut [T]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            n_x,
            n_u: input_box.dim(),
            step: Arc::new(step),
            input_box,
            admissible: None,
            time_invariant: true,
        }
    }

    /// Marks the dynamics as depending on the clock.
    pub fn time_varying(mut self) -> Self {
        self.time_invariant = false;
        self
    }

    /// Restricts the admissible set beyond the input box.
    pub fn with_admissible(
        mut self,
        pred: impl Fn(&[T], &[T], u64) -> bool + Send + Sync + 'static,
    ) -> Self {
        self.admissible = Some(Arc::new(pred));
        self
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn is_time_invariant(&self) -> bool {
        self.time_invariant
    }

    pub fn input_box(&self) -> &InputBox<T> {
        &self.input_box
    }

    pub fn is_admissible(&self, x: &[T], u: &[T], tau: u64) -> bool {
        self.input_box.contains(u) && self.admissible.as_ref().map_or(true, |p| p(x, u, tau))
    }

    #[inline]
    pub fn step_into(&self, x: &[T], u: &[T], tau: u64, out: &mut [T]) {
        (self.step)(x, u, tau, out)
    }

    pub fn step(&self, x: &[T], u: &[T], tau: u64) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_x];
        self.step_into(x, u, tau, &mut out);
        out
    }
}

#[derive(Clone)]
pub enum CostForm<T> {
    General(GeneralCostFn<T>),
    /// `ℓ₁(x, u)·ℓ₂(τ)`
    Separable {
        ell1: StateInputFn<T>,
        ell2: TimeWeight<T>,
    },
}

#[derive(Clone)]
pub struct StageCost<T> {
    n_x: usize,
    n_u: usize,
    form: CostForm<T>,
}

impl<T: Scalar> fmt::Debug for StageCost<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let form = match &self.form {
            CostForm::General(_) => "general".to_string(),
            CostForm::Separable { ell2, .. } => format!("separable × {}", ell2.name()),
        };
        f.debug_struct("StageCost")
            .field("n_x", &self.n_x)
            .field("n_u", &self.n_u)
            .field("form", &form)
            .finish()
    }
}

impl<T: Scalar> StageCost<T> {
    pub fn general(
        n_x: usize,
        n_u: usize,
        f: impl Fn(&[T], u64, &[T]) -> T + Send + Sync + 'static,
    ) -> Self {
        Self {
            n_x,
            n_u,
            form: CostForm::General(Arc::new(f)),
        }
    }

    pub fn separable(
        n_x: usize,
        n_u: usize,
        ell1: impl Fn(&[T], &[T]) -> T + Send + Sync + 'static,
        ell2: TimeWeight<T>,
    ) -> Self {
        Self::separable_shared(n_x, n_u, Arc::new(ell1), ell2)
    }

    pub fn separable_shared(n_x: usize, n_u: usize, ell1: StateInputFn<T>, ell2: TimeWeight<T>) -> Self {
        Self {
            n_x,
            n_u,
            form: CostForm::Separable { ell1, ell2 },
        }
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn form(&self) -> &CostForm<T> {
        &self.form
    }

    pub fn weight(&self) -> Option<&TimeWeight<T>> {
        match &self.form {
            CostForm::Separable { ell2, .. } => Some(ell2),
            CostForm::General(_) => None,
        }
    }

    #[inline]
    pub fn eval(&self, x: &[T], tau: u64, u: &[T]) -> T {
        match &self.form {
            CostForm::General(f) => f(x, tau, u),
            CostForm::Separable { ell1, ell2 } => ell1(x, u) * ell2.eval(tau),
        }
    }
}

/// The clock-augmented system together with its stage cost.
#[derive(Clone)]
pub struct AugmentedDynamics<T> {
    pub base: Dynamics<T>,
    pub cost: StageCost<T>,
}

/// Pairs dynamics with a stage cost after checking that their dimensions
/// agree.
pub fn augment<T: Scalar>(dynamics: Dynamics<T>, cost: StageCost<T>) -> Result<AugmentedDynamics<T>> {
    if dynamics.n_x() != cost.n_x() {
        return Err(Error::Dimension {
            what: "stage cost state dimension",
            expected: dynamics.n_x(),
            got: cost.n_x(),
        });
    }
    if dynamics.n_u() != cost.n_u() {
        return Err(Error::Dimension {
            what: "stage cost input dimension",
            expected: dynamics.n_u(),
            got: cost.n_u(),
        });
    }
    Ok(AugmentedDynamics {
        base: dynamics,
        cost,
    })
}

impl<T: Scalar> fmt::Debug for AugmentedDynamics<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AugmentedDynamics")
            .field("base", &self.base)
            .field("cost", &self.cost)
            .finish()
    }
}

impl<T: Scalar> AugmentedDynamics<T> {
    pub fn n_x(&self) -> usize {
        self.base.n_x()
    }

    pub fn n_u(&self) -> usize {
        self.base.n_u()
    }

    pub fn step(&self, q: &AugmentedState<T>, u: &[T]) -> AugmentedState<T> {
        AugmentedState {
            x: self.base.step(&q.x, u, q.tau),
            tau: q.tau + 1,
        }
    }

    pub fn stage_cost(&self, q: &AugmentedState<T>, u: &[T]) -> T {
        self.cost.eval(&q.x, q.tau, u)
    }

    /// Sum of the first `inputs.len()` stage costs of the trajectory started
    /// at `q`.
    pub fn truncated_cost(&self, q: &AugmentedState<T>, inputs: &[Vec<T>]) -> Result<T> {
        let mut total = T::zero();
        let mut state = q.clone();
        for (step, u) in inputs.iter().enumerate() {
            if u.len() != self.n_u() {
                return Err(Error::Dimension {
                    what: "input vector",
                    expected: self.n_u(),
                    got: u.len(),
                });
            }
            if !self.base.is_admissible(&state.x, u, state.tau) {
                return Err(Error::Admissibility {
                    step,
                    detail: format!("u = {u:?} at x = {:?}, tau = {}", state.x, state.tau),
                });
            }
            total = total + self.stage_cost(&state, u);
            state = self.step(&state, u);
        }
        Ok(total)
    }
}

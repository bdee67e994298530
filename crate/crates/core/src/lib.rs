//! Grid value iteration for discrete-time optimal control problems whose
//! stage cost depends on time, together with numerical stability
//! certificates for the optimally controlled closed loop.
//!
//! Time-varying problems are made stationary by appending a clock `tau` to
//! the state. The [`dp`] module solves the resulting Bellman equation on a
//! grid, [`certificates`] checks the detectability and stabilizability
//! inequalities and builds explicit KL / exp-KL trajectory bounds, and
//! [`simulate`] rolls out the closed loop and checks those bounds.
//!
//! Everything numeric is generic over a [`Scalar`] (`f32` or `f64`). The
//! `*64` aliases below fix the scalar to `f64`, which is what the command
//! line tool and the acceptance suite use.

pub mod certificates;
pub mod comparison;
pub mod dp;
pub mod error;
pub mod grid;
pub mod model;
pub mod report;
pub mod scalar;
pub mod simulate;
pub mod systems;
pub mod weights;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type AugmentedState64 = model::AugmentedState<f64>;
pub type Dynamics64 = model::Dynamics<f64>;
pub type StageCost64 = model::StageCost<f64>;
pub type AugmentedDynamics64 = model::AugmentedDynamics<f64>;
pub type InputGrid64 = model::InputGrid<f64>;
pub type TimeWeight64 = weights::TimeWeight<f64>;
pub type Envelope64 = weights::Envelope<f64>;
pub type KInf64 = comparison::KInf<f64>;
pub type TimeKInf64 = comparison::TimeKInf<f64>;
pub type ExpKl64 = comparison::ExpKl<f64>;
pub type StateGrid64 = grid::StateGrid<f64>;
pub type ValueTable64 = dp::ValueTable<f64>;
pub type Policy64 = dp::Policy<f64>;
pub type CertificateBundle64 = certificates::CertificateBundle<f64>;
pub type BetaBound64 = certificates::BetaBound<f64>;
pub type Trajectory64 = simulate::Trajectory<f64>;
pub type ExampleProblem64 = systems::ExampleProblem<f64>;

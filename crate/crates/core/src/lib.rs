//! Continuous regularized Newton flow for nonlinear operator equations
//! `F(u) = f` whose derivative may not be boundedly invertible.
//!
//! The flow
//!
//! ```text
//! u̇ = −(F′(u) + a(t) I)^{-1} [F(u) + a(t) u − f]
//! ```
//!
//! is driven by a shift schedule `a(t) = r(t) e^{iθ}` whose decay rate is
//! derived from the operator's constants, so that the distance from `u(t)`
//! to the regularized solution `w_{a(t)}` stays under an explicit envelope.
//!
//! ```
//! use dsm_core::{LinearMap, OperatorProblem, Schedule, ScheduleInputs};
//! use nalgebra::{DMatrix, DVector};
//!
//! let problem = OperatorProblem::new(
//!     LinearMap::new(DMatrix::identity(1, 1)).unwrap(),
//!     DVector::from_element(1, 1.0),
//! )
//! .unwrap();
//! let schedule = Schedule::derive(ScheduleInputs {
//!     b: 1.0,
//!     kappa: 1.0,
//!     c0: 0.0,
//!     c1: 1.0,
//!     c2: 1.0,
//!     g0: 0.25,
//!     r0: 0.5,
//!     theta: 0.0,
//!     eps0: 1.0,
//! })
//! .unwrap();
//! assert!(schedule.validate().passed);
//! ```

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod comparison;
pub mod error;
pub mod linalg;
pub mod ode;
pub mod operator;
pub mod path;
pub mod schedule;
pub mod solver;

pub use comparison::{CertConfig, Certificate, InequalityInstance};
pub use error::{DsmError, Result};
pub use operator::{
    FnMap, LinearMap, NonlinearMap, NormKind, OperatorProblem, Provenance, ResolventParams,
    SmoothnessParams, VectorSpace,
};
pub use path::{normal_solution, solve_regularized, track_path, RegularizedPath};
pub use schedule::{Gate, GateKind, GateReport, Schedule, ScheduleInputs};
pub use solver::{envelope_check, solve, IntegratorConfig, Oracles, Status, Trajectory};

//! Mean curvature flow with obstacles through the penalized vanishing-viscosity
//! level-set equation
//!
//! ```text
//! u_t = (I - grad u (x) grad u / |grad u|_eps^2) : D^2 u + |grad u|_eps f_eps(u)
//! ```
//!
//! on the periodic unit torus, with `|p|_eps = sqrt(eps^2 + |p|^2)` and
//! `f_eps = -V_eps'` the force of the penalty
//! `V_eps(u) = ((phi - u)_+^4 + (u - psi)_+^4) / eps`.
//!
//! Besides the explicit solver the crate carries the diagnostics and
//! verification harnesses used to check the flow numerically: energy
//! dissipation, the L1 bound on `-H_eps + f_eps`, maximum principles, the
//! inequalities satisfied by level sets of the limit (via a mollified coarea
//! formula), comparison and relabeling behaviour, and sphere oracles.
//!
//! Everything numerical is generic over [`Real`] (`f32` or `f64`); the
//! aliases at the crate root fix `f64`, which is what the CLI uses.

pub mod bvcheck;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod library;
pub mod model;
pub mod properties;
pub mod scalar;
pub mod scenario;
pub mod solver;

pub use error::{Error, Result};
pub use grid::TorusGrid;
pub use scalar::Real;

pub type Field = grid::ScalarField<f64>;
pub type Vector = grid::VectorField<f64>;
pub type Obstacles = model::ObstaclePair<f64>;
pub type State = solver::FlowState<f64>;
pub type Config = solver::SolverConfig<f64>;
pub type Run = solver::Trajectory<f64>;
pub type Trace = diagnostics::DiagnosticsTrace<f64>;

pub type Field32 = grid::ScalarField<f32>;
pub type Obstacles32 = model::ObstaclePair<f32>;
pub type State32 = solver::FlowState<f32>;

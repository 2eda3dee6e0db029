//! Solvers for differential quasivariational inequalities
//!
//! ```text
//! ẋ(t) = F(t, x(t), u(t)),   x(0) = x₀,
//! u(t) ∈ K,  ⟨A(x,u), v − u⟩ + j(x,u,v) − j(x,u,u) ≥ (f(t), πv − πu)_Z   ∀ v ∈ K,
//! ```
//!
//! on finite-dimensional inner-product spaces, together with a 1D viscoelastic
//! contact rod instance, perturbation-convergence harnesses, an optimal-control
//! driver and brute-force reference solvers.

pub mod control;
pub mod dvi;
pub mod error;
pub mod format;
pub mod operators;
pub mod oracle;
pub mod perturbation;
pub mod rod;
pub mod space;
pub mod verify;
pub mod vi;

pub use control::{ControlProblem, ControlResult, ControlSpec, Evaluation, LscVerdict};
pub use dvi::{integrate, observed_order, uniform_grid, DviProblem, Order, ProblemConstants, Scheme, Theta, Trajectory};
pub use error::{Error, Result};
pub use operators::{
    AffineOperator, FrozenTerm, LinearStateMap, MonotoneOperator, NonsmoothTerm, OperatorConstants, SeparableYield,
    StateMap, YieldConstants, ZeroTerm,
};
pub use perturbation::{ConvergenceReport, PerturbationSpec};
pub use rod::{ContactDiagnostics, RodConfig, RodProblem};
pub use space::{mosco_scale, ConvexSet, LinearMap, Matrix, SetKind, Space, Vector};
pub use vi::{certify_qvi, equilibrium_residual, solve_qvi, solve_vi, Certificate, Qvi, QviConfig, QviSolution, VariationalInequality, ViSolution};

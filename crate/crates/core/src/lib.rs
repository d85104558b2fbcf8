//! Observability analysis of nonlinear dynamical systems through a finite
//! truncation of their Koopman-operator representation.
//!
//! The crate is organised around a small pipeline:
//!
//! * [`exprlang`] — the expression language in which vector fields,
//!   measurements, and Koopman eigenfunctions are written (AST, parser,
//!   evaluator, exact symbolic differentiation).
//! * [`dynamics`] — nonlinear systems and fixed-step RK4 trajectory
//!   integration.
//! * [`koopman`] — Koopman eigenpairs, generator validation, and the
//!   canonical transform (Λ, V, C).
//! * [`observability`] — the three observability tests: the Koopman rank
//!   condition, the Lie-derivative rank test, and the empirical Gramian.
//! * [`symmetry`] — discrete permutation symmetries, rotational/reflectional
//!   eigenfunction classification, and the induced Koopman-space symmetry.
//! * [`models`] — built-in systems: consensus networks, a polynomial
//!   three-state system, and a ring of coupled amplitude–phase oscillators.
//!
//! The numeric core (`exprlang`, `dynamics`) is generic over the scalar type
//! through [`scalar::Scalar`]; analysis layers work in `f64`/`Complex64`.
//! The aliases below fix the default scalar used throughout the toolkit.

pub mod dynamics;
pub mod exprlang;
pub mod koopman;
pub mod linalg;
pub mod models;
pub mod observability;
pub mod sampling;
pub mod scalar;
pub mod symmetry;

/// Expression over the default `f64` scalar.
pub type Expr = exprlang::Expr<f64>;
/// Expression vector over the default `f64` scalar.
pub type ExprVector = exprlang::ExprVector<f64>;
/// Nonlinear system over the default `f64` scalar.
pub type NonlinearSystem = dynamics::NonlinearSystem<f64>;
/// Trajectory over the default `f64` scalar.
pub type Trajectory = dynamics::Trajectory<f64>;

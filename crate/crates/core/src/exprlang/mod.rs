//! A small expression language for vector fields, measurements, and Koopman
//! eigenfunctions.
//!
//! Grammar (whitespace insignificant, numbers decimal with optional exponent):
//!
//! ```text
//! expr   := term (("+"|"-") term)* ;
//! term   := factor (("*"|"/") factor)* ;
//! factor := atom ("^" integer)? | "-" factor ;
//! atom   := number | "x" integer | func "(" expr ")" | "(" expr ")" ;
//! func   := "sin" | "cos" | "sqrt" | "abs" ;
//! ```
//!
//! Variables are 1-based state coordinates (`x1`, `x2`, …). Simplification is
//! limited to constant folding and zero/one elimination; expression equality
//! throughout the toolkit is tested pointwise on sampled points, not
//! symbolically.

mod ast;
mod calculus;
mod eval;
pub mod gen;
mod parse;

pub use ast::{Expr, ExprVector};
pub use calculus::{gradient, lie_derivative};
pub use eval::EvalError;
pub use parse::{parse, ParseError};

use thiserror::Error;

/// Structural errors for expression vectors and calculus operations.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("variable x{index} out of range (state dimension {dim})")]
    VarOutOfRange { index: usize, dim: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

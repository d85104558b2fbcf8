//! Expression evaluation.

use thiserror::Error;

use crate::scalar::Scalar;

use super::{Expr, ExprVector};

/// Runtime fault while evaluating an expression; carries the offending
/// subtree rendered back to source form.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero in '{expr}'")]
    DivisionByZero { expr: String },
    #[error("square root of negative value {value} in '{expr}'")]
    SqrtOfNegative { expr: String, value: f64 },
    #[error("zero raised to negative power in '{expr}'")]
    ZeroToNegativePower { expr: String },
    #[error("point has {len} coordinates but expression references x{index}")]
    PointTooShort { index: usize, len: usize },
}

impl<T: Scalar> Expr<T> {
    /// Evaluates the expression at point `x` (`x[0]` is `x1`).
    ///
    /// Deterministic: the same tree at the same point yields a bit-identical
    /// result. Faults (division by zero, square root of a negative, zero to a
    /// negative power) are reported with the offending subtree.
    pub fn evaluate(&self, x: &[T]) -> Result<T, EvalError> {
        match self {
            Expr::Constant(c) => Ok(*c),
            Expr::Var(i) => x
                .get(i - 1)
                .copied()
                .ok_or(EvalError::PointTooShort { index: *i, len: x.len() }),
            Expr::Add(a, b) => Ok(a.evaluate(x)? + b.evaluate(x)?),
            Expr::Sub(a, b) => Ok(a.evaluate(x)? - b.evaluate(x)?),
            Expr::Mul(a, b) => Ok(a.evaluate(x)? * b.evaluate(x)?),
            Expr::Div(a, b) => {
                let num = a.evaluate(x)?;
                let den = b.evaluate(x)?;
                if den == T::zero() {
                    return Err(EvalError::DivisionByZero { expr: self.to_string() });
                }
                Ok(num / den)
            }
            Expr::Pow(a, k) => {
                let base = a.evaluate(x)?;
                if base == T::zero() && *k < 0 {
                    return Err(EvalError::ZeroToNegativePower { expr: self.to_string() });
                }
                Ok(base.powi(*k))
            }
            Expr::Neg(a) => Ok(-a.evaluate(x)?),
            Expr::Sin(a) => Ok(a.evaluate(x)?.sin()),
            Expr::Cos(a) => Ok(a.evaluate(x)?.cos()),
            Expr::Sqrt(a) => {
                let arg = a.evaluate(x)?;
                if arg < T::zero() {
                    return Err(EvalError::SqrtOfNegative {
                        expr: self.to_string(),
                        value: arg.to_f64().unwrap_or(f64::NAN),
                    });
                }
                Ok(arg.sqrt())
            }
            Expr::Abs(a) => Ok(a.evaluate(x)?.abs()),
        }
    }
}

impl<T: Scalar> ExprVector<T> {
    /// Evaluates every component at `x`, in order.
    pub fn evaluate(&self, x: &[T]) -> Result<Vec<T>, EvalError> {
        self.components().iter().map(|c| c.evaluate(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    #[test]
    fn arithmetic() {
        let e = parse::<f64>("x1^2 + x2^2 + x3", 3).unwrap();
        assert_eq!(e.evaluate(&[1.0, 2.0, 1.0]).unwrap(), 6.0);
    }

    #[test]
    fn cosine_of_zero() {
        let e = parse::<f64>("cos(x1 - x2)", 2).unwrap();
        assert_eq!(e.evaluate(&[0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn division_by_zero_reports_the_subtree() {
        let e = parse::<f64>("1/x1", 1).unwrap();
        match e.evaluate(&[0.0]) {
            Err(EvalError::DivisionByZero { expr }) => assert_eq!(expr, "1 / x1"),
            other => panic!("expected division fault, got {other:?}"),
        }
    }

    #[test]
    fn sqrt_of_negative_faults() {
        let e = parse::<f64>("sqrt(x1)", 1).unwrap();
        assert!(matches!(
            e.evaluate(&[-1.0]),
            Err(EvalError::SqrtOfNegative { .. })
        ));
        assert_eq!(e.evaluate(&[4.0]).unwrap(), 2.0);
    }

    #[test]
    fn zero_to_negative_power_faults() {
        let e = parse::<f64>("x1^-1", 1).unwrap();
        assert!(matches!(
            e.evaluate(&[0.0]),
            Err(EvalError::ZeroToNegativePower { .. })
        ));
        assert_eq!(e.evaluate(&[2.0]).unwrap(), 0.5);
    }

    #[test]
    fn short_point_is_rejected() {
        let e = parse::<f64>("x3", 3).unwrap();
        assert!(matches!(
            e.evaluate(&[1.0, 2.0]),
            Err(EvalError::PointTooShort { index: 3, len: 2 })
        ));
    }
}

//! Expression trees and their printer.

use std::fmt;

use crate::scalar::Scalar;

use super::ExprError;

/// An expression tree over scalar type `T`.
///
/// Variables are 1-based: `Var(1)` is the first state coordinate `x1`.
/// Values are immutable after construction and safe to share across threads;
/// evaluation of the same tree at the same point is bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr<T> {
    Constant(T),
    /// 1-based state coordinate index.
    Var(usize),
    Add(Box<Expr<T>>, Box<Expr<T>>),
    Sub(Box<Expr<T>>, Box<Expr<T>>),
    Mul(Box<Expr<T>>, Box<Expr<T>>),
    Div(Box<Expr<T>>, Box<Expr<T>>),
    /// Integer power, positive or negative.
    Pow(Box<Expr<T>>, i32),
    Neg(Box<Expr<T>>),
    Sin(Box<Expr<T>>),
    Cos(Box<Expr<T>>),
    Sqrt(Box<Expr<T>>),
    Abs(Box<Expr<T>>),
}

impl<T: Scalar> Expr<T> {
    pub fn constant(c: T) -> Self {
        Expr::Constant(c)
    }

    /// 1-based state coordinate.
    pub fn var(index: usize) -> Self {
        assert!(index >= 1, "variable indices are 1-based");
        Expr::Var(index)
    }

    pub fn powi(self, exponent: i32) -> Self {
        Expr::Pow(Box::new(self), exponent)
    }

    pub fn sin(self) -> Self {
        Expr::Sin(Box::new(self))
    }

    pub fn cos(self) -> Self {
        Expr::Cos(Box::new(self))
    }

    pub fn sqrt(self) -> Self {
        Expr::Sqrt(Box::new(self))
    }

    pub fn abs(self) -> Self {
        Expr::Abs(Box::new(self))
    }

    /// Largest variable index referenced, 0 if the expression is constant.
    pub fn max_var_index(&self) -> usize {
        match self {
            Expr::Constant(_) => 0,
            Expr::Var(i) => *i,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.max_var_index().max(b.max_var_index())
            }
            Expr::Pow(a, _) => a.max_var_index(),
            Expr::Neg(a) | Expr::Sin(a) | Expr::Cos(a) | Expr::Sqrt(a) | Expr::Abs(a) => {
                a.max_var_index()
            }
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Constant(_) | Expr::Var(_) => 1,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                1 + a.node_count() + b.node_count()
            }
            Expr::Pow(a, _)
            | Expr::Neg(a)
            | Expr::Sin(a)
            | Expr::Cos(a)
            | Expr::Sqrt(a)
            | Expr::Abs(a) => 1 + a.node_count(),
        }
    }

    /// Rewrites every variable index through `map` (1-based in, 1-based out).
    ///
    /// Composing an expression with a permutation `P` of the state, where
    /// `(Px)_j = x_{sigma(j)}`, is `relabel_vars(|j| sigma(j))`.
    pub fn relabel_vars(&self, map: &impl Fn(usize) -> usize) -> Self {
        match self {
            Expr::Constant(c) => Expr::Constant(*c),
            Expr::Var(i) => Expr::Var(map(*i)),
            Expr::Add(a, b) => Expr::Add(
                Box::new(a.relabel_vars(map)),
                Box::new(b.relabel_vars(map)),
            ),
            Expr::Sub(a, b) => Expr::Sub(
                Box::new(a.relabel_vars(map)),
                Box::new(b.relabel_vars(map)),
            ),
            Expr::Mul(a, b) => Expr::Mul(
                Box::new(a.relabel_vars(map)),
                Box::new(b.relabel_vars(map)),
            ),
            Expr::Div(a, b) => Expr::Div(
                Box::new(a.relabel_vars(map)),
                Box::new(b.relabel_vars(map)),
            ),
            Expr::Pow(a, k) => Expr::Pow(Box::new(a.relabel_vars(map)), *k),
            Expr::Neg(a) => Expr::Neg(Box::new(a.relabel_vars(map))),
            Expr::Sin(a) => Expr::Sin(Box::new(a.relabel_vars(map))),
            Expr::Cos(a) => Expr::Cos(Box::new(a.relabel_vars(map))),
            Expr::Sqrt(a) => Expr::Sqrt(Box::new(a.relabel_vars(map))),
            Expr::Abs(a) => Expr::Abs(Box::new(a.relabel_vars(map))),
        }
    }

    pub(super) fn is_zero(&self) -> bool {
        matches!(self, Expr::Constant(c) if *c == T::zero())
    }

    pub(super) fn is_one(&self) -> bool {
        matches!(self, Expr::Constant(c) if *c == T::one())
    }
}

// Binding strength used by the printer; higher binds tighter.
const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_NEG: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

impl<T: Scalar> Expr<T> {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => PREC_ADD,
            Expr::Mul(..) | Expr::Div(..) => PREC_MUL,
            Expr::Neg(..) => PREC_NEG,
            Expr::Pow(..) => PREC_POW,
            // Negative constants print with a leading sign, like Neg.
            Expr::Constant(c) if *c < T::zero() => PREC_NEG,
            _ => PREC_ATOM,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let parens = self.precedence() < min;
        if parens {
            write!(f, "(")?;
        }
        match self {
            Expr::Constant(c) => write!(f, "{c}")?,
            Expr::Var(i) => write!(f, "x{i}")?,
            Expr::Add(a, b) => {
                a.fmt_prec(f, PREC_ADD)?;
                write!(f, " + ")?;
                b.fmt_prec(f, PREC_ADD + 1)?;
            }
            Expr::Sub(a, b) => {
                a.fmt_prec(f, PREC_ADD)?;
                write!(f, " - ")?;
                b.fmt_prec(f, PREC_ADD + 1)?;
            }
            Expr::Mul(a, b) => {
                a.fmt_prec(f, PREC_MUL)?;
                write!(f, " * ")?;
                b.fmt_prec(f, PREC_MUL + 1)?;
            }
            Expr::Div(a, b) => {
                a.fmt_prec(f, PREC_MUL)?;
                write!(f, " / ")?;
                b.fmt_prec(f, PREC_MUL + 1)?;
            }
            Expr::Pow(a, k) => {
                a.fmt_prec(f, PREC_ATOM)?;
                write!(f, "^{k}")?;
            }
            Expr::Neg(a) => {
                write!(f, "-")?;
                a.fmt_prec(f, PREC_NEG)?;
            }
            Expr::Sin(a) => {
                write!(f, "sin(")?;
                a.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
            Expr::Cos(a) => {
                write!(f, "cos(")?;
                a.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
            Expr::Sqrt(a) => {
                write!(f, "sqrt(")?;
                a.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
            Expr::Abs(a) => {
                write!(f, "abs(")?;
                a.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
        }
        if parens {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl<T: Scalar> fmt::Display for Expr<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

impl<T: Scalar> std::ops::Add for Expr<T> {
    type Output = Expr<T>;
    fn add(self, rhs: Expr<T>) -> Expr<T> {
        Expr::Add(Box::new(self), Box::new(rhs))
    }
}

impl<T: Scalar> std::ops::Sub for Expr<T> {
    type Output = Expr<T>;
    fn sub(self, rhs: Expr<T>) -> Expr<T> {
        Expr::Sub(Box::new(self), Box::new(rhs))
    }
}

impl<T: Scalar> std::ops::Mul for Expr<T> {
    type Output = Expr<T>;
    fn mul(self, rhs: Expr<T>) -> Expr<T> {
        Expr::Mul(Box::new(self), Box::new(rhs))
    }
}

impl<T: Scalar> std::ops::Div for Expr<T> {
    type Output = Expr<T>;
    fn div(self, rhs: Expr<T>) -> Expr<T> {
        Expr::Div(Box::new(self), Box::new(rhs))
    }
}

impl<T: Scalar> std::ops::Neg for Expr<T> {
    type Output = Expr<T>;
    fn neg(self) -> Expr<T> {
        Expr::Neg(Box::new(self))
    }
}

/// An ordered list of expressions over a common state dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprVector<T> {
    components: Vec<Expr<T>>,
    dim: usize,
}

impl<T: Scalar> ExprVector<T> {
    /// `dim` is the state dimension every component must respect.
    pub fn new(components: Vec<Expr<T>>, dim: usize) -> Result<Self, ExprError> {
        for c in &components {
            let max = c.max_var_index();
            if max > dim {
                return Err(ExprError::VarOutOfRange { index: max, dim });
            }
        }
        Ok(ExprVector { components, dim })
    }

    pub fn components(&self) -> &[Expr<T>] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// State dimension the components are written over.
    pub fn dim(&self) -> usize {
        self.dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type E = Expr<f64>;

    #[test]
    fn display_uses_minimal_parentheses() {
        let e = E::var(1) - (E::var(2) + E::var(3));
        assert_eq!(e.to_string(), "x1 - (x2 + x3)");

        let e = (E::var(1) + E::var(2)) + E::var(3);
        assert_eq!(e.to_string(), "x1 + x2 + x3");

        let e = (E::var(1) * E::var(2)).powi(2);
        assert_eq!(e.to_string(), "(x1 * x2)^2");

        let e = -E::var(1).powi(2);
        assert_eq!(e.to_string(), "-x1^2");
    }

    #[test]
    fn max_var_index_walks_the_tree() {
        let e = (E::var(1).powi(2) + E::var(4).sin()) / E::var(2);
        assert_eq!(e.max_var_index(), 4);
        assert_eq!(E::constant(3.0).max_var_index(), 0);
    }

    #[test]
    fn expr_vector_rejects_out_of_range_vars() {
        let err = ExprVector::new(vec![E::var(5)], 3).unwrap_err();
        assert_eq!(err, ExprError::VarOutOfRange { index: 5, dim: 3 });
        assert!(ExprVector::new(vec![E::var(3)], 3).is_ok());
    }

    #[test]
    fn relabel_vars_applies_the_map() {
        let e = E::var(1) + E::var(2);
        let swapped = e.relabel_vars(&|i| if i == 1 { 2 } else if i == 2 { 1 } else { i });
        assert_eq!(swapped, E::var(2) + E::var(1));
    }
}

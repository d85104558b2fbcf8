//! Exact symbolic differentiation and Lie derivatives.
//!
//! Derivatives are built through smart constructors that fold constants and
//! eliminate zero/one terms; no further canonicalization is attempted.

use crate::scalar::Scalar;

use super::{Expr, ExprError, ExprVector};

fn add<T: Scalar>(a: Expr<T>, b: Expr<T>) -> Expr<T> {
    if a.is_zero() {
        return b;
    }
    if b.is_zero() {
        return a;
    }
    if let (Expr::Constant(x), Expr::Constant(y)) = (&a, &b) {
        return Expr::Constant(*x + *y);
    }
    a + b
}

fn sub<T: Scalar>(a: Expr<T>, b: Expr<T>) -> Expr<T> {
    if b.is_zero() {
        return a;
    }
    if a.is_zero() {
        return neg(b);
    }
    if let (Expr::Constant(x), Expr::Constant(y)) = (&a, &b) {
        return Expr::Constant(*x - *y);
    }
    a - b
}

fn mul<T: Scalar>(a: Expr<T>, b: Expr<T>) -> Expr<T> {
    if a.is_zero() || b.is_zero() {
        return Expr::Constant(T::zero());
    }
    if a.is_one() {
        return b;
    }
    if b.is_one() {
        return a;
    }
    if let (Expr::Constant(x), Expr::Constant(y)) = (&a, &b) {
        return Expr::Constant(*x * *y);
    }
    a * b
}

fn div<T: Scalar>(a: Expr<T>, b: Expr<T>) -> Expr<T> {
    if a.is_zero() {
        return Expr::Constant(T::zero());
    }
    if b.is_one() {
        return a;
    }
    if let (Expr::Constant(x), Expr::Constant(y)) = (&a, &b) {
        if *y != T::zero() {
            return Expr::Constant(*x / *y);
        }
    }
    a / b
}

fn neg<T: Scalar>(a: Expr<T>) -> Expr<T> {
    match a {
        Expr::Constant(c) => Expr::Constant(-c),
        Expr::Neg(inner) => *inner,
        other => -other,
    }
}

fn pow<T: Scalar>(a: Expr<T>, k: i32) -> Expr<T> {
    match k {
        0 => Expr::Constant(T::one()),
        1 => a,
        _ => {
            if let Expr::Constant(c) = &a {
                if !(*c == T::zero() && k < 0) {
                    return Expr::Constant(c.powi(k));
                }
            }
            a.powi(k)
        }
    }
}

impl<T: Scalar> Expr<T> {
    /// Exact partial derivative with respect to the 1-based coordinate `var`.
    ///
    /// `abs` differentiates to `u/abs(u) * u'`, which faults at `u = 0` only
    /// when evaluated there.
    pub fn differentiate(&self, var: usize) -> Expr<T> {
        match self {
            Expr::Constant(_) => Expr::Constant(T::zero()),
            Expr::Var(i) => {
                if *i == var {
                    Expr::Constant(T::one())
                } else {
                    Expr::Constant(T::zero())
                }
            }
            Expr::Add(a, b) => add(a.differentiate(var), b.differentiate(var)),
            Expr::Sub(a, b) => sub(a.differentiate(var), b.differentiate(var)),
            Expr::Mul(a, b) => add(
                mul(a.differentiate(var), (**b).clone()),
                mul((**a).clone(), b.differentiate(var)),
            ),
            Expr::Div(a, b) => {
                // (a'b - ab') / b^2
                let num = sub(
                    mul(a.differentiate(var), (**b).clone()),
                    mul((**a).clone(), b.differentiate(var)),
                );
                div(num, pow((**b).clone(), 2))
            }
            Expr::Pow(a, k) => {
                // k * a^(k-1) * a'
                let coeff = Expr::Constant(T::from_i32(*k).expect("small integer"));
                mul(
                    mul(coeff, pow((**a).clone(), *k - 1)),
                    a.differentiate(var),
                )
            }
            Expr::Neg(a) => neg(a.differentiate(var)),
            Expr::Sin(a) => mul((**a).clone().cos(), a.differentiate(var)),
            Expr::Cos(a) => neg(mul((**a).clone().sin(), a.differentiate(var))),
            Expr::Sqrt(a) => {
                // a' / (2 sqrt(a))
                let two = Expr::Constant(T::from_f64(2.0).expect("2"));
                div(a.differentiate(var), mul(two, (**a).clone().sqrt()))
            }
            Expr::Abs(a) => {
                // sign(a) * a', written as a/abs(a) * a'
                let sign = div((**a).clone(), (**a).clone().abs());
                mul(sign, a.differentiate(var))
            }
        }
    }
}

/// Gradient of `e` with respect to coordinates `1..=n`.
pub fn gradient<T: Scalar>(e: &Expr<T>, n: usize) -> Vec<Expr<T>> {
    (1..=n).map(|i| e.differentiate(i)).collect()
}

/// Lie derivative of `h` along the vector field `f`: the inner product of
/// the gradient of `h` with `f`.
pub fn lie_derivative<T: Scalar>(h: &Expr<T>, f: &ExprVector<T>) -> Result<Expr<T>, ExprError> {
    let max = h.max_var_index();
    if max > f.len() {
        return Err(ExprError::DimensionMismatch(format!(
            "observable references x{max} but the field has {} components",
            f.len()
        )));
    }
    let mut acc = Expr::Constant(T::zero());
    for (i, fi) in f.components().iter().enumerate() {
        let term = mul(h.differentiate(i + 1), fi.clone());
        acc = add(acc, term);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    type E = Expr<f64>;

    fn p(src: &str, n: usize) -> E {
        parse(src, n).unwrap()
    }

    fn example2_field() -> ExprVector<f64> {
        ExprVector::new(
            vec![
                p("x1", 3),
                p("x2", 3),
                p("-2*x1^2 - 2*x2^2 + 4*x3", 3),
            ],
            3,
        )
        .unwrap()
    }

    #[test]
    fn power_rule() {
        let d = p("x1^2", 1).differentiate(1);
        assert_eq!(d, E::constant(2.0) * E::var(1));
    }

    #[test]
    fn derivative_of_linear_term_is_one() {
        let d = p("x1^2 + x2^2 + x3", 3).differentiate(3);
        assert_eq!(d, E::constant(1.0));
    }

    #[test]
    fn gradient_matches_central_difference() {
        let e = p("sin(x1*x2)", 2).differentiate(1);
        let x = [0.7, -1.3];
        let h = 1e-6;
        let f = p("sin(x1*x2)", 2);
        let plus = f.evaluate(&[x[0] + h, x[1]]).unwrap();
        let minus = f.evaluate(&[x[0] - h, x[1]]).unwrap();
        let fd = (plus - minus) / (2.0 * h);
        let sym = e.evaluate(&x).unwrap();
        assert!((sym - fd).abs() <= 1e-8, "sym {sym} vs fd {fd}");
    }

    #[test]
    fn lie_derivative_of_symmetric_measurement() {
        // <grad h, f> collapses pointwise to 4*x3 for the three-state system.
        let h = p("x1^2 + x2^2 + x3", 3);
        let lf = lie_derivative(&h, &example2_field()).unwrap();
        for x in [[1.0, 2.0, 1.0], [0.3, -0.7, 1.1], [-1.5, 0.2, -0.4]] {
            let got = lf.evaluate(&x).unwrap();
            assert!((got - 4.0 * x[2]).abs() < 1e-12, "{got} at {x:?}");
        }
    }

    #[test]
    fn lie_derivative_eigen_relation() {
        let h = p("x1", 1);
        let f = ExprVector::new(vec![p("x1", 1)], 1).unwrap();
        assert_eq!(lie_derivative(&h, &f).unwrap(), E::var(1));
    }

    #[test]
    fn lie_derivative_of_eigenfunction_scales_by_eigenvalue() {
        // psi5 = -x1^2 - x2^2 + x3 has L_f psi5 = 4 psi5.
        let psi5 = p("-x1^2 - x2^2 + x3", 3);
        let lf = lie_derivative(&psi5, &example2_field()).unwrap();
        for x in [[1.0, 2.0, 1.0], [0.5, 0.5, -2.0], [-1.0, 1.5, 0.25]] {
            let got = lf.evaluate(&x).unwrap();
            let want = 4.0 * psi5.evaluate(&x).unwrap();
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn lie_derivative_dimension_mismatch() {
        let h = p("x3", 3);
        let f = ExprVector::new(vec![p("x1", 2), p("x2", 2)], 2).unwrap();
        assert!(matches!(
            lie_derivative(&h, &f),
            Err(ExprError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn abs_derivative_faults_only_at_zero() {
        let d = p("abs(x1)", 1).differentiate(1);
        assert_eq!(d.evaluate(&[2.0]).unwrap(), 1.0);
        assert_eq!(d.evaluate(&[-2.0]).unwrap(), -1.0);
        assert!(d.evaluate(&[0.0]).is_err());
    }
}

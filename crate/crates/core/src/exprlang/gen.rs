//! Seeded random expression sampler, used by fuzz-style self-checks.

use rand::Rng;

use super::Expr;

/// Draws a random expression over `n` variables with at most `depth` levels
/// of nesting. Constants are quantized to tenths in `[-4, 4]`; negative
/// literals appear as plain constants (the parser folds a literal's unary
/// minus), so generated trees stay in the parser's image and print/parse
/// round-trips structurally.
pub fn random_expr<R: Rng>(rng: &mut R, n: usize, depth: usize) -> Expr<f64> {
    if depth == 0 || rng.gen_bool(0.3) {
        if rng.gen_bool(0.5) {
            return Expr::Var(rng.gen_range(1..=n));
        }
        return Expr::Constant(rng.gen_range(-40i32..=40) as f64 / 10.0);
    }
    match rng.gen_range(0..10) {
        0 | 1 => {
            random_expr(rng, n, depth - 1) + random_expr(rng, n, depth - 1)
        }
        2 => random_expr(rng, n, depth - 1) - random_expr(rng, n, depth - 1),
        3 | 4 => random_expr(rng, n, depth - 1) * random_expr(rng, n, depth - 1),
        5 => random_expr(rng, n, depth - 1) / random_expr(rng, n, depth - 1),
        6 => random_expr(rng, n, depth - 1).powi(rng.gen_range(-2..=3)),
        7 => {
            let inner = random_expr(rng, n, depth - 1);
            // Neg(Constant) folds away in the parser; keep the tree in its image.
            if matches!(inner, Expr::Constant(_)) {
                inner
            } else {
                -inner
            }
        }
        8 => {
            let inner = random_expr(rng, n, depth - 1);
            if rng.gen_bool(0.5) {
                inner.sin()
            } else {
                inner.cos()
            }
        }
        _ => {
            let inner = random_expr(rng, n, depth - 1);
            if rng.gen_bool(0.5) {
                inner.sqrt()
            } else {
                inner.abs()
            }
        }
    }
}

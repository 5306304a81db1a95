//! Second-order cone encodings of a few scalar nonlinear constraints.

use super::problem::{ConicProblem, ConstraintId, LinExpr};
use super::ConicError;
use crate::scalar::Real;

/// Add `e >= c2 p² + c1 p + c0` with `c2 >= 0`.
///
/// For `c2 > 0` this is the rotated cone `u >= c2 p²` with `u = e - c1 p - c0`,
/// written as `(u + 1, u - 1, 2 √c2 p) ∈ SOC`. For `c2 == 0` a single linear
/// row is emitted.
pub fn quadratic_epigraph<T: Real>(
    problem: &mut ConicProblem<T>,
    e: &LinExpr<T>,
    p: &LinExpr<T>,
    c2: T,
    c1: T,
    c0: T,
) -> Result<ConstraintId, ConicError> {
    if !(c2 >= T::zero()) || !c1.is_finite() || !c0.is_finite() {
        return Err(ConicError::InvalidArgument(format!(
            "quadratic epigraph needs finite coefficients with c2 >= 0, got ({c2}, {c1}, {c0})"
        )));
    }
    let mut u = e.clone();
    u.add_expr(p, -c1);
    u.constant -= c0;
    if c2 == T::zero() {
        return Ok(problem.add_nonneg(u));
    }
    let hi = u.clone().offset(T::one());
    let lo = u.offset(-T::one());
    let lin = p.scaled(T::two() * c2.sqrt());
    Ok(problem.add_soc(vec![hi, lo, lin]))
}

/// Add `a · b >= 1` (which forces `a, b > 0`) as `(a + b, a - b, 2) ∈ SOC`.
pub fn hyperbolic<T: Real>(
    problem: &mut ConicProblem<T>,
    a: &LinExpr<T>,
    b: &LinExpr<T>,
) -> ConstraintId {
    let mut sum = a.clone();
    sum.add_expr(b, T::one());
    let mut diff = a.clone();
    diff.add_expr(b, -T::one());
    problem.add_soc(vec![sum, diff, LinExpr::constant(T::two())])
}

//! Concave binariness penalty on charging decisions and its linear minorant.
//!
//! With `g(τ) = Σ τ^L` and `L > 1`, every `τ ∈ [0,1]` has `τ^L ≤ τ`, with equality only at
//! 0 and 1. Under `Σ τ = τ̄` the constraint `g(τ) ≥ τ̄` therefore forces binary entries.

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum PenaltyError {
    #[error("g(tau) is zero, 1/g undefined")]
    ZeroG,
    #[error("required slot count must be positive")]
    NoDemand,
}

// Solver output may sit a rounding error outside the box.
fn clip<T: Real>(t: T) -> T {
    t.max(T::zero()).min(T::one())
}

/// `g(τ) = Σ τ^L`.
pub fn g_value<T: Real>(tau: &[T], l: T) -> T {
    tau.iter().map(|&t| clip(t).powf(l)).sum()
}

/// `1/g(τ) - 1/τ̄`, zero at binary points that meet the demand exactly.
pub fn g1_value<T: Real>(tau: &[T], l: T, tau_bar: T) -> Result<T, PenaltyError> {
    if !(tau_bar > T::zero()) {
        return Err(PenaltyError::NoDemand);
    }
    let g = g_value(tau, l);
    if g == T::zero() {
        return Err(PenaltyError::ZeroG);
    }
    Ok(g.recip() - tau_bar.recip())
}

/// `Σ (τ - τ^L)`, nonnegative on the box and zero exactly at binary points.
pub fn binary_gap<T: Real>(tau: &[T], l: T) -> T {
    tau.iter()
        .map(|&t| {
            let t = clip(t);
            t - t.powf(l)
        })
        .sum()
}

/// Affine function `constant + Σ coeffs[i] τ_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T> {
    pub constant: T,
    pub coeffs: Vec<T>,
}

impl<T: Real> Affine<T> {
    pub fn eval(&self, tau: &[T]) -> T {
        self.coeffs.iter().zip(tau).fold(self.constant, |acc, (&c, &t)| acc + c * t)
    }
}

/// Tangent of `g` at `τ_prev`: `-(L-1) Σ τ_prev^L + L Σ τ_prev^(L-1) τ`.
/// Since `g` is convex this is a global minorant touching at `τ_prev`.
pub fn surrogate<T: Real>(tau_prev: &[T], l: T) -> Affine<T> {
    let constant = -(l - T::one()) * g_value(tau_prev, l);
    let coeffs = tau_prev.iter().map(|&t| l * clip(t).powf(l - T::one())).collect();
    Affine { constant, coeffs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn g_examples() {
        assert_eq!(g_value(&[1.0, 0.0, 1.0, 1.0], 1.5), 3.0);
        assert_eq!(g1_value(&[1.0, 0.0, 1.0, 1.0], 1.5, 3.0), Ok(0.0));
        assert_relative_eq!(g_value(&[0.5, 0.5], 2.0), 0.5);
        assert_relative_eq!(g1_value(&[0.5, 0.5], 2.0, 1.0).unwrap(), 1.0);
        assert_relative_eq!(g_value(&[0.5, 0.5], 1.5), 0.7071067811865476, epsilon = 1e-12);
        assert_eq!(g1_value(&[0.0, 0.0], 1.5, 1.0), Err(PenaltyError::ZeroG));
    }

    #[test]
    fn gap_examples() {
        assert_eq!(binary_gap(&[0.0, 1.0, 1.0], 1.5), 0.0);
        assert_relative_eq!(binary_gap(&[0.5], 2.0), 0.25);
        assert_relative_eq!(binary_gap(&[0.5], 1.5), 0.5 - 0.5f64.powf(1.5), epsilon = 1e-15);
        assert_relative_eq!(binary_gap(&[0.5f32], 2.0), 0.25);
    }

    #[test]
    fn surrogate_touches() {
        let prev = [0.3, 0.9, 0.0, 1.0];
        let s = surrogate(&prev, 1.5);
        assert_relative_eq!(s.eval(&prev), g_value(&prev, 1.5), epsilon = 1e-14);
    }
}

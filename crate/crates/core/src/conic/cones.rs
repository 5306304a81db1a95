//! Cone kernels for the interior-point method: Nesterov–Todd scaling, Jordan
//! products and step-to-boundary computations for the zero, nonnegative,
//! second-order and positive semidefinite cones.
//!
//! PSD blocks are handled in `svec` coordinates: the lower triangle stored
//! row by row with off-diagonal entries scaled by √2, so that the Euclidean
//! inner product of two `svec` vectors equals the trace inner product.

use crate::linalg::{cholesky, invert_lower, svd_jacobi, sym_eigen, Matrix};
use crate::scalar::{dot, Real};

/// Position of entry `(i, j)`, `i >= j`, in row-major lower-triangular order.
#[inline]
pub fn tri_index(i: usize, j: usize) -> usize {
    let (i, j) = if i >= j { (i, j) } else { (j, i) };
    i * (i + 1) / 2 + j
}

#[inline]
pub fn tri_len(order: usize) -> usize {
    order * (order + 1) / 2
}

/// Symmetric matrix from its `svec` representation.
pub fn smat<T: Real>(v: &[T], order: usize) -> Matrix<T> {
    let mut m = Matrix::zeros(order, order);
    let inv_sqrt2 = T::sqrt2().recip();
    for i in 0..order {
        for j in 0..=i {
            let x = v[tri_index(i, j)];
            if i == j {
                m[(i, i)] = x;
            } else {
                m[(i, j)] = x * inv_sqrt2;
                m[(j, i)] = x * inv_sqrt2;
            }
        }
    }
    m
}

/// `svec` of a symmetric matrix (only the lower triangle is read).
pub fn svec<T: Real>(m: &Matrix<T>) -> Vec<T> {
    let n = m.rows();
    let mut v = vec![T::zero(); tri_len(n)];
    for i in 0..n {
        for j in 0..=i {
            v[tri_index(i, j)] = if i == j { m[(i, i)] } else { m[(i, j)] * T::sqrt2() };
        }
    }
    v
}

/// Cone tags shared by the problem description and the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConeKind {
    /// `{0}ⁿ`: equality rows.
    Zero,
    NonNeg,
    SecondOrder,
    /// Real symmetric PSD matrices of the given order.
    Psd { order: usize },
}

impl ConeKind {
    pub fn degree(&self, dim: usize) -> usize {
        match self {
            ConeKind::Zero => 0,
            ConeKind::NonNeg => dim,
            ConeKind::SecondOrder => 1,
            ConeKind::Psd { order } => *order,
        }
    }
}

/// Scaling state of one cone.
#[derive(Debug, Clone)]
pub(crate) enum Scaling<T> {
    Zero,
    NonNeg {
        /// diagonal of W, `sqrt(s/z)`
        w: Vec<T>,
        lambda: Vec<T>,
    },
    Soc {
        w: Matrix<T>,
        winv: Matrix<T>,
        lambda: Vec<T>,
    },
    Psd {
        order: usize,
        r: Matrix<T>,
        rinv: Matrix<T>,
        /// eigenvalues of the scaled point Λ
        lambda_diag: Vec<T>,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Cone<T> {
    pub kind: ConeKind,
    pub offset: usize,
    pub dim: usize,
    pub scaling: Scaling<T>,
}

impl<T: Real> Cone<T> {
    pub fn new(kind: ConeKind, offset: usize, dim: usize) -> Self {
        let scaling = match kind {
            ConeKind::Zero => Scaling::Zero,
            ConeKind::NonNeg => Scaling::NonNeg {
                w: vec![T::one(); dim],
                lambda: vec![T::one(); dim],
            },
            ConeKind::SecondOrder => Scaling::Soc {
                w: Matrix::identity(dim),
                winv: Matrix::identity(dim),
                lambda: unit_soc(dim),
            },
            ConeKind::Psd { order } => Scaling::Psd {
                order,
                r: Matrix::identity(order),
                rinv: Matrix::identity(order),
                lambda_diag: vec![T::one(); order],
            },
        };
        Self {
            kind,
            offset,
            dim,
            scaling,
        }
    }

    #[inline]
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.dim
    }

    #[inline]
    pub fn is_zero(&self) -> bool {
        matches!(self.kind, ConeKind::Zero)
    }

    pub fn degree(&self) -> usize {
        self.kind.degree(self.dim)
    }

    /// Identity element `e` of the cone's Jordan algebra.
    pub fn unit(&self) -> Vec<T> {
        match self.kind {
            ConeKind::Zero => vec![T::zero(); self.dim],
            ConeKind::NonNeg => vec![T::one(); self.dim],
            ConeKind::SecondOrder => unit_soc(self.dim),
            ConeKind::Psd { order } => {
                let mut e = vec![T::zero(); self.dim];
                for i in 0..order {
                    e[tri_index(i, i)] = T::one();
                }
                e
            }
        }
    }

    /// Largest `α` with `u - α e` in the cone (the "minimum eigenvalue").
    pub fn margin(&self, u: &[T]) -> T {
        match self.kind {
            ConeKind::Zero => T::infinity(),
            ConeKind::NonNeg => u.iter().fold(T::infinity(), |a, &b| a.min(b)),
            ConeKind::SecondOrder => u[0] - dot(&u[1..], &u[1..]).sqrt(),
            ConeKind::Psd { order } => {
                let (vals, _) = sym_eigen(&smat(u, order));
                vals[0]
            }
        }
    }

    /// Compute the Nesterov–Todd scaling for the interior pair `(s, z)`.
    /// Returns `false` if either point has left the cone interior.
    pub fn update_scaling(&mut self, s: &[T], z: &[T]) -> bool {
        match &mut self.scaling {
            Scaling::Zero => true,
            Scaling::NonNeg { w, lambda } => {
                for i in 0..s.len() {
                    if !(s[i] > T::zero() && z[i] > T::zero()) {
                        return false;
                    }
                    w[i] = (s[i] / z[i]).sqrt();
                    lambda[i] = (s[i] * z[i]).sqrt();
                }
                true
            }
            Scaling::Soc { w, winv, lambda } => match soc_nt_scaling(s, z) {
                Some((wm, wi)) => {
                    *lambda = wm.matvec(z);
                    *w = wm;
                    *winv = wi;
                    true
                }
                None => false,
            },
            Scaling::Psd {
                order,
                r,
                rinv,
                lambda_diag,
            } => match psd_nt_scaling(s, z, *order) {
                Some((rm, ri, lam)) => {
                    *r = rm;
                    *rinv = ri;
                    *lambda_diag = lam;
                    true
                }
                None => false,
            },
        }
    }

    /// Scaled point `λ = W z = W⁻ᵀ s`.
    pub fn lambda(&self) -> Vec<T> {
        match &self.scaling {
            Scaling::Zero => vec![T::zero(); self.dim],
            Scaling::NonNeg { lambda, .. } | Scaling::Soc { lambda, .. } => lambda.clone(),
            Scaling::Psd {
                order, lambda_diag, ..
            } => {
                let mut v = vec![T::zero(); self.dim];
                for i in 0..*order {
                    v[tri_index(i, i)] = lambda_diag[i];
                }
                v
            }
        }
    }

    /// `W v`.
    pub fn apply_w(&self, v: &[T]) -> Vec<T> {
        match &self.scaling {
            Scaling::Zero => vec![T::zero(); self.dim],
            Scaling::NonNeg { w, .. } => v.iter().zip(w).map(|(&a, &b)| a * b).collect(),
            Scaling::Soc { w, .. } => w.matvec(v),
            Scaling::Psd { order, r, .. } => {
                let m = smat(v, *order);
                svec(&r.transpose().matmul(&m).matmul(r))
            }
        }
    }

    /// `Wᵀ v`.
    pub fn apply_wt(&self, v: &[T]) -> Vec<T> {
        match &self.scaling {
            Scaling::Psd { order, r, .. } => {
                let m = smat(v, *order);
                svec(&r.matmul(&m).matmul(&r.transpose()))
            }
            _ => self.apply_w(v),
        }
    }

    /// `W⁻ᵀ v`.
    pub fn apply_winv_t(&self, v: &[T]) -> Vec<T> {
        match &self.scaling {
            Scaling::Zero => vec![T::zero(); self.dim],
            Scaling::NonNeg { w, .. } => v.iter().zip(w).map(|(&a, &b)| a / b).collect(),
            Scaling::Soc { winv, .. } => winv.matvec(v),
            Scaling::Psd { order, rinv, .. } => {
                let m = smat(v, *order);
                svec(&rinv.matmul(&m).matmul(&rinv.transpose()))
            }
        }
    }

    /// Jordan product `u ∘ v`.
    pub fn circ(&self, u: &[T], v: &[T]) -> Vec<T> {
        match self.kind {
            ConeKind::Zero => vec![T::zero(); self.dim],
            ConeKind::NonNeg => u.iter().zip(v).map(|(&a, &b)| a * b).collect(),
            ConeKind::SecondOrder => {
                let mut out = vec![T::zero(); self.dim];
                out[0] = dot(u, v);
                for i in 1..self.dim {
                    out[i] = u[0] * v[i] + v[0] * u[i];
                }
                out
            }
            ConeKind::Psd { order } => {
                let a = smat(u, order);
                let b = smat(v, order);
                svec(&a.matmul(&b).add(&b.matmul(&a)).scale(T::half()))
            }
        }
    }

    /// Solve `λ ∘ x = v` for `x`, with `λ` the current scaled point.
    pub fn lambda_inv_circ(&self, v: &[T]) -> Vec<T> {
        match &self.scaling {
            Scaling::Zero => vec![T::zero(); self.dim],
            Scaling::NonNeg { lambda, .. } => {
                v.iter().zip(lambda).map(|(&a, &b)| a / b).collect()
            }
            Scaling::Soc { lambda, .. } => {
                let l0 = lambda[0];
                let l1 = &lambda[1..];
                let det = l0 * l0 - dot(l1, l1);
                let x0 = (l0 * v[0] - dot(l1, &v[1..])) / det;
                let mut out = vec![x0; self.dim];
                for i in 1..self.dim {
                    out[i] = (v[i] - x0 * lambda[i]) / l0;
                }
                out
            }
            Scaling::Psd {
                order, lambda_diag, ..
            } => {
                let mut out = vec![T::zero(); self.dim];
                for i in 0..*order {
                    for j in 0..=i {
                        let k = tri_index(i, j);
                        out[k] = v[k] * T::two() / (lambda_diag[i] + lambda_diag[j]);
                    }
                }
                out
            }
        }
    }

    /// Largest `α ≥ 0` keeping `u + α du` in the cone (may be `+∞`).
    pub fn step_length(&self, u: &[T], du: &[T]) -> T {
        match self.kind {
            ConeKind::Zero => T::infinity(),
            ConeKind::NonNeg => u.iter().zip(du).fold(T::infinity(), |acc, (&x, &d)| {
                if d < T::zero() {
                    acc.min(-x / d)
                } else {
                    acc
                }
            }),
            ConeKind::SecondOrder => soc_step(u, du),
            ConeKind::Psd { order } => psd_step(u, du, order),
        }
    }
}

fn unit_soc<T: Real>(dim: usize) -> Vec<T> {
    let mut e = vec![T::zero(); dim];
    e[0] = T::one();
    e
}

/// NT scaling matrix `W = β (2 v vᵀ - J)` and its inverse for a second-order cone.
pub(crate) fn soc_nt_scaling<T: Real>(s: &[T], z: &[T]) -> Option<(Matrix<T>, Matrix<T>)> {
    let n = s.len();
    let jnorm = |u: &[T]| {
        let r = dot(&u[1..], &u[1..]).sqrt();
        (u[0] - r) * (u[0] + r)
    };
    let s_det = jnorm(s);
    let z_det = jnorm(z);
    if !(s_det > T::zero() && z_det > T::zero() && s[0] > T::zero() && z[0] > T::zero()) {
        return None;
    }
    let sn = s_det.sqrt();
    let zn = z_det.sqrt();
    let sbar: Vec<T> = s.iter().map(|&x| x / sn).collect();
    let zbar: Vec<T> = z.iter().map(|&x| x / zn).collect();
    let gamma = ((T::one() + dot(&sbar, &zbar)) * T::half()).sqrt();
    let mut wbar = vec![T::zero(); n];
    wbar[0] = (sbar[0] + zbar[0]) / (T::two() * gamma);
    for i in 1..n {
        wbar[i] = (sbar[i] - zbar[i]) / (T::two() * gamma);
    }
    let denom = (T::two() * (wbar[0] + T::one())).sqrt();
    let mut v = wbar.clone();
    v[0] += T::one();
    for x in &mut v {
        *x /= denom;
    }
    let beta = (sn / zn).sqrt();
    let mut w = Matrix::zeros(n, n);
    let mut winv = Matrix::zeros(n, n);
    let sign = |i: usize| if i == 0 { T::one() } else { -T::one() };
    for i in 0..n {
        for j in 0..n {
            let jij = if i == j { sign(i) } else { T::zero() };
            w[(i, j)] = beta * (T::two() * v[i] * v[j] - jij);
            winv[(i, j)] = (T::two() * sign(i) * v[i] * sign(j) * v[j] - jij) / beta;
        }
    }
    Some((w, winv))
}

/// NT scaling `R` for a PSD block: `Rᵀ Z R = R⁻¹ S R⁻ᵀ = Λ`.
fn psd_nt_scaling<T: Real>(
    s: &[T],
    z: &[T],
    order: usize,
) -> Option<(Matrix<T>, Matrix<T>, Vec<T>)> {
    let ls = cholesky(&smat(s, order))?;
    let lz = cholesky(&smat(z, order))?;
    let (u, sigma, v) = svd_jacobi(&lz.transpose().matmul(&ls));
    if sigma.iter().any(|&x| !(x > T::zero())) {
        return None;
    }
    let inv_sqrt: Vec<T> = sigma.iter().map(|&x| x.sqrt().recip()).collect();
    let r = ls.matmul(&v).matmul(&Matrix::diag(&inv_sqrt));
    let rinv = Matrix::diag(&inv_sqrt)
        .matmul(&u.transpose())
        .matmul(&lz.transpose());
    Some((r, rinv, sigma))
}

fn soc_step<T: Real>(u: &[T], du: &[T]) -> T {
    let a = du[0] * du[0] - dot(&du[1..], &du[1..]);
    let b = u[0] * du[0] - dot(&u[1..], &du[1..]);
    let c = (u[0] * u[0] - dot(&u[1..], &u[1..])).max(T::zero());
    let mut alpha = T::infinity();
    if du[0] < T::zero() {
        alpha = -u[0] / du[0];
    }
    // smallest positive root of a α² + 2 b α + c
    let eps = T::epsilon();
    if a.abs() <= eps * (du[0] * du[0]).max(T::min_positive_value()) {
        if b < T::zero() {
            alpha = alpha.min(-c / (T::two() * b));
        }
    } else {
        let disc = b * b - a * c;
        if disc >= T::zero() {
            let sq = disc.sqrt();
            // numerically stable pair of roots
            let q = -(b + b.signum() * sq);
            let roots = [q / a, if q != T::zero() { c / q } else { T::infinity() }];
            for r in roots {
                if r > T::zero() && r.is_finite() {
                    alpha = alpha.min(r);
                }
            }
        }
    }
    alpha.max(T::zero())
}

fn psd_step<T: Real>(u: &[T], du: &[T], order: usize) -> T {
    let Some(l) = cholesky(&smat(u, order)) else {
        return T::zero();
    };
    let linv = invert_lower(&l);
    let m = linv.matmul(&smat(du, order)).matmul(&linv.transpose());
    let (vals, _) = sym_eigen(&m);
    if vals[0] >= T::zero() {
        T::infinity()
    } else {
        -vals[0].recip()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn soc_point(v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }

    #[test]
    fn soc_scaling_maps_s_and_z_to_same_point() {
        let s = soc_point(&[3.0, 1.0, -0.5, 0.7]);
        let z = soc_point(&[2.0, -0.3, 0.9, 0.1]);
        let mut cone = Cone::<f64>::new(ConeKind::SecondOrder, 0, 4);
        assert!(cone.update_scaling(&s, &z));
        let wz = cone.apply_w(&z);
        let winv_s = cone.apply_winv_t(&s);
        for (a, b) in wz.iter().zip(&winv_s) {
            assert!((a - b).abs() < 1e-12, "{wz:?} vs {winv_s:?}");
        }
        // W W⁻¹ = I
        if let Scaling::Soc { w, winv, .. } = &cone.scaling {
            assert!(w.matmul(winv).sub(&Matrix::identity(4)).max_abs() < 1e-12);
        }
    }

    #[test]
    fn psd_scaling_maps_s_and_z_to_same_point() {
        let smat_ = Matrix::from_rows(&[
            vec![2.0, 0.3, 0.1],
            vec![0.3, 1.5, -0.2],
            vec![0.1, -0.2, 1.0],
        ]);
        let zmat = Matrix::from_rows(&[
            vec![1.0, -0.4, 0.0],
            vec![-0.4, 2.0, 0.5],
            vec![0.0, 0.5, 0.8],
        ]);
        let s = svec(&smat_);
        let z = svec(&zmat);
        let mut cone = Cone::<f64>::new(ConeKind::Psd { order: 3 }, 0, 6);
        assert!(cone.update_scaling(&s, &z));
        let lam = cone.lambda();
        let wz = cone.apply_w(&z);
        let ws = cone.apply_winv_t(&s);
        for i in 0..6 {
            assert!((wz[i] - lam[i]).abs() < 1e-12);
            assert!((ws[i] - lam[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_inverse_circ_roundtrip() {
        let s = [3.0, 1.0, -0.5];
        let z = [2.0, -0.3, 0.9];
        let mut cone = Cone::<f64>::new(ConeKind::SecondOrder, 0, 3);
        cone.update_scaling(&s, &z);
        let v = [0.4, -1.2, 0.8];
        let x = cone.lambda_inv_circ(&v);
        let back = cone.circ(&cone.lambda(), &x);
        for i in 0..3 {
            assert!((back[i] - v[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn soc_step_hits_boundary() {
        let u = [2.0_f64, 0.0];
        let du = [-1.0, 1.0];
        // (2-α)^2 = α^2 -> α = 1
        let a = soc_step(&u, &du);
        assert!((a - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psd_step_hits_boundary() {
        let u = svec(&Matrix::<f64>::identity(2));
        let du = svec(&Matrix::diag(&[-0.5, 1.0]));
        assert!((psd_step(&u, &du, 2) - 2.0).abs() < 1e-12);
    }
}

//! Complex Hermitian PSD variables through the real symmetric embedding
//!
//! ```text
//! W = A + jB  ↦  X = [[A, -B], [B, A]]
//! ```
//!
//! `X` has order `2n`, is PSD iff `W` is, and every eigenvalue of `W` appears
//! twice in `X`. Only `n²` real variables are created: `Re W_kk`, and
//! `Re W_km`, `Im W_km` for `k > m`.

use num_complex::Complex;

use super::problem::{BlockKind, ConicProblem, ConstraintId, LinExpr, VarBlock, VarId};
use super::ConicError;
use crate::linalg::{sym_eigen, Matrix};
use crate::scalar::Real;

/// Dense complex `n × n` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HermMatrix<T> {
    n: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> HermMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![Complex::new(T::zero(), T::zero()); n * n],
        }
    }

    /// Build from row-major entries; fails unless the input is Hermitian to
    /// within `tol` (absolute).
    pub fn from_entries(n: usize, data: Vec<Complex<T>>, tol: T) -> Result<Self, ConicError> {
        if data.len() != n * n {
            return Err(ConicError::Shape(format!(
                "{} entries for a {n}x{n} matrix",
                data.len()
            )));
        }
        let m = Self { n, data };
        let dev = m.hermitian_deviation();
        if !(dev <= tol) {
            return Err(ConicError::NotHermitian {
                deviation: dev.to_f64_lossy(),
            });
        }
        Ok(m)
    }

    /// `v vᴴ`.
    pub fn outer(v: &[Complex<T>]) -> Self {
        let n = v.len();
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = v[i] * v[j].conj();
            }
        }
        m
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Complex<T> {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Complex<T>) {
        self.data[i * self.n + j] = v;
    }

    pub fn trace(&self) -> T {
        (0..self.n).map(|i| self.get(i, i).re).sum()
    }

    pub fn hermitian_deviation(&self) -> T {
        let mut dev = T::zero();
        for i in 0..self.n {
            for j in 0..=i {
                dev = dev.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        dev
    }

    /// Real symmetric embedding `[[Re, -Im], [Im, Re]]`.
    pub fn embed(&self) -> Matrix<T> {
        let n = self.n;
        Matrix::from_fn(2 * n, 2 * n, |i, j| {
            let w = self.get(i % n, j % n);
            match (i < n, j < n) {
                (true, true) | (false, false) => w.re,
                (true, false) => -w.im,
                (false, true) => w.im,
            }
        })
    }

    /// Inverse of [`embed`](Self::embed); averages the redundant blocks.
    pub fn from_embedding(x: &Matrix<T>) -> Result<Self, ConicError> {
        if !x.is_square() || x.rows() % 2 != 0 {
            return Err(ConicError::Shape(format!(
                "embedding must be square of even order, got {}x{}",
                x.rows(),
                x.cols()
            )));
        }
        let n = x.rows() / 2;
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let re = (x[(i, j)] + x[(n + i, n + j)]) * T::half();
                let im = (x[(n + i, j)] - x[(i, n + j)]) * T::half();
                m.set(i, j, Complex::new(re, im));
            }
        }
        Ok(m)
    }

    pub fn matvec(&self, v: &[Complex<T>]) -> Vec<Complex<T>> {
        (0..self.n)
            .map(|i| {
                (0..self.n).fold(Complex::new(T::zero(), T::zero()), |acc, j| {
                    acc + self.get(i, j) * v[j]
                })
            })
            .collect()
    }

    /// Frobenius norm of `self - other`.
    pub fn distance(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<T>()
            .sqrt()
    }
}

/// What a real-embedding entry holds in terms of the complex matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddedEntry {
    /// `sign · Re W_km`
    Re { k: usize, m: usize, sign: i8 },
    /// `sign · Im W_km` with `k > m`
    Im { k: usize, m: usize, sign: i8 },
    Zero,
}

/// Index map between a complex Hermitian matrix of order `n` and its real
/// symmetric embedding of order `2n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HermitianEmbedding {
    n: usize,
}

pub fn embed_hermitian(n: usize) -> Result<HermitianEmbedding, ConicError> {
    if n == 0 {
        return Err(ConicError::InvalidArgument("embedding of order 0".into()));
    }
    Ok(HermitianEmbedding { n })
}

impl HermitianEmbedding {
    pub fn complex_order(&self) -> usize {
        self.n
    }

    pub fn real_order(&self) -> usize {
        2 * self.n
    }

    /// Source of real entry `(i, j)`.
    pub fn entry(&self, i: usize, j: usize) -> EmbeddedEntry {
        let n = self.n;
        let (bi, bj) = (i % n, j % n);
        let re = |k: usize, m: usize| EmbeddedEntry::Re { k, m, sign: 1 };
        let im = |k: usize, m: usize, sign: i8| match k.cmp(&m) {
            std::cmp::Ordering::Equal => EmbeddedEntry::Zero,
            std::cmp::Ordering::Greater => EmbeddedEntry::Im { k, m, sign },
            std::cmp::Ordering::Less => EmbeddedEntry::Im { k: m, m: k, sign: -sign },
        };
        match (i < n, j < n) {
            (true, true) | (false, false) => re(bi, bj),
            (false, true) => im(bi, bj, 1),
            (true, false) => im(bi, bj, -1),
        }
    }

    /// Real embedding of `w`; rejects matrices that are not Hermitian.
    pub fn expand<T: Real>(&self, w: &HermMatrix<T>) -> Result<Matrix<T>, ConicError> {
        if w.order() != self.n {
            return Err(ConicError::Shape(format!(
                "expected order {}, got {}",
                self.n,
                w.order()
            )));
        }
        let scale = w.data.iter().fold(T::one(), |a, z| a.max(z.norm()));
        let dev = w.hermitian_deviation();
        if !(dev <= T::epsilon() * T::lit(16.0) * scale) {
            return Err(ConicError::NotHermitian {
                deviation: dev.to_f64_lossy(),
            });
        }
        Ok(w.embed())
    }

    pub fn collapse<T: Real>(&self, x: &Matrix<T>) -> Result<HermMatrix<T>, ConicError> {
        if x.rows() != 2 * self.n {
            return Err(ConicError::Shape(format!(
                "expected order {}, got {}",
                2 * self.n,
                x.rows()
            )));
        }
        HermMatrix::from_embedding(x)
    }
}

/// Largest eigenvalue of a Hermitian matrix and a unit eigenvector whose
/// first non-negligible component is real and positive.
pub fn max_eigpair<T: Real>(w: &HermMatrix<T>) -> Result<(T, Vec<Complex<T>>), ConicError> {
    let scale = w.data.iter().fold(T::one(), |a, z| a.max(z.norm()));
    let dev = w.hermitian_deviation();
    if !(dev <= T::lit(1e-6) * scale) {
        return Err(ConicError::NotHermitian {
            deviation: dev.to_f64_lossy(),
        });
    }
    let n = w.n;
    let (vals, vecs) = sym_eigen(&w.embed().symmetrize());
    let top = 2 * n - 1;
    let mut v: Vec<Complex<T>> = (0..n)
        .map(|k| Complex::new(vecs[(k, top)], vecs[(n + k, top)]))
        .collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt();
    for z in &mut v {
        *z = *z / norm;
    }
    fix_phase(&mut v);
    Ok((vals[top], v))
}

/// Rotate `v` so its first component with modulus above `1e-8 · max` is real positive.
pub fn fix_phase<T: Real>(v: &mut [Complex<T>]) {
    let vmax = v.iter().fold(T::zero(), |a, z| a.max(z.norm()));
    if vmax == T::zero() {
        return;
    }
    if let Some(p) = v.iter().find(|z| z.norm() > T::lit(1e-8) * vmax) {
        let rot = p.conj() / p.norm();
        for z in v.iter_mut() {
            *z = *z * rot;
        }
    }
}

/// Hermitian matrix variable of order `n` inside a [`ConicProblem`].
#[derive(Debug, Clone)]
pub struct HermitianVars {
    n: usize,
    block: VarBlock,
    psd: Option<ConstraintId>,
}

impl HermitianVars {
    /// Create the `n²` real variables without any cone constraint.
    pub fn new<T: Real>(problem: &mut ConicProblem<T>, n: usize) -> Self {
        let block = problem.add_variable_block(BlockKind::Free(n * n));
        Self {
            n,
            block,
            psd: None,
        }
    }

    /// Create the variables and constrain `W ⪰ 0` through the embedding.
    pub fn new_psd<T: Real>(problem: &mut ConicProblem<T>, n: usize) -> Self {
        let mut h = Self::new(problem, n);
        let rows = h.embedding_rows::<T>();
        h.psd = Some(problem.add_psd(2 * n, rows));
        h
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn psd_constraint(&self) -> Option<ConstraintId> {
        self.psd
    }

    fn off_index(&self, k: usize, m: usize) -> usize {
        debug_assert!(k > m);
        k * (k - 1) / 2 + m
    }

    fn n_off(&self) -> usize {
        self.n * (self.n - 1) / 2
    }

    pub fn re_diag(&self, k: usize) -> VarId {
        self.block.var(k)
    }

    /// Variable for `Re W_km`, `k != m`.
    pub fn re_off(&self, k: usize, m: usize) -> VarId {
        let (k, m) = if k > m { (k, m) } else { (m, k) };
        self.block.var(self.n + self.off_index(k, m))
    }

    /// Variable for `Im W_km` with `k > m`.
    pub fn im_lower(&self, k: usize, m: usize) -> VarId {
        assert!(k > m);
        self.block.var(self.n + self.n_off() + self.off_index(k, m))
    }

    /// `Re W_km` as an expression.
    pub fn re<T: Real>(&self, k: usize, m: usize) -> LinExpr<T> {
        if k == m {
            LinExpr::var(self.re_diag(k))
        } else {
            LinExpr::var(self.re_off(k, m))
        }
    }

    /// `Im W_km` as an expression (zero on the diagonal).
    pub fn im<T: Real>(&self, k: usize, m: usize) -> LinExpr<T> {
        match k.cmp(&m) {
            std::cmp::Ordering::Equal => LinExpr::zero(),
            std::cmp::Ordering::Greater => LinExpr::var(self.im_lower(k, m)),
            std::cmp::Ordering::Less => LinExpr::zero().plus(self.im_lower(m, k), -T::one()),
        }
    }

    /// Lower-triangular rows of the order-`2n` real embedding.
    pub fn embedding_rows<T: Real>(&self) -> Vec<LinExpr<T>> {
        let n = self.n;
        let mut rows = Vec::with_capacity(n * (2 * n + 1));
        for i in 0..2 * n {
            for j in 0..=i {
                let expr = match (i < n, j < n) {
                    (true, true) => self.re(i, j),
                    (false, false) => self.re(i - n, j - n),
                    (false, true) => self.im(i - n, j),
                    (true, false) => unreachable!("lower triangle"),
                };
                rows.push(expr);
            }
        }
        rows
    }

    /// Trace `Σ Re W_kk` as an expression.
    pub fn trace<T: Real>(&self) -> LinExpr<T> {
        let mut e = LinExpr::zero();
        for k in 0..self.n {
            e.add_term(self.re_diag(k), T::one());
        }
        e
    }

    /// Read the matrix back from a primal solution vector.
    pub fn extract<T: Real>(&self, x: &[T]) -> HermMatrix<T> {
        let n = self.n;
        let mut m = HermMatrix::zeros(n);
        for k in 0..n {
            for j in 0..n {
                let re = self.re::<T>(k, j).eval(x);
                let im = self.im::<T>(k, j).eval(x);
                m.set(k, j, Complex::new(re, im));
            }
        }
        m
    }

    /// Write `w` into a primal vector; inverse of [`Self::extract`].
    pub fn assign<T: Real>(&self, w: &HermMatrix<T>, x: &mut [T]) {
        for k in 0..self.n {
            x[self.re_diag(k).0] = w.get(k, k).re;
            for m in 0..k {
                x[self.re_off(k, m).0] = w.get(k, m).re;
                x[self.im_lower(k, m).0] = w.get(k, m).im;
            }
        }
    }

    /// Linear functional `Re Tr(C W)` for Hermitian `C`, in the real variables.
    pub fn trace_with<T: Real>(&self, c: &HermMatrix<T>) -> LinExpr<T> {
        // Tr(CW) = Σ_k C_kk W_kk + Σ_{k>m} 2 Re(C_mk W_km)
        let mut e = LinExpr::zero();
        for k in 0..self.n {
            e.add_term(self.re_diag(k), c.get(k, k).re);
            for m in 0..k {
                let cmk = c.get(m, k);
                e.add_term(self.re_off(k, m), T::two() * cmk.re);
                e.add_term(self.im_lower(k, m), -T::two() * cmk.im);
            }
        }
        e
    }
}

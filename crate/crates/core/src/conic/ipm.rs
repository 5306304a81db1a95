//! Primal-dual interior-point method on the homogeneous self-dual embedding.
//!
//! Internally the problem is put in the form
//!
//! ```text
//! minimize cᵀx   s.t.  A x + s = b,  s ∈ K
//! maximize -bᵀz  s.t.  Aᵀz + c = 0,  z ∈ K*
//! ```
//!
//! and the embedding variables `(x, s, z, τ, κ)` are driven to a solution of
//! `Aᵀz + cτ = 0, Ax + s = bτ, cᵀx + bᵀz + κ = 0` with Mehrotra
//! predictor-corrector steps under Nesterov–Todd scaling. The Newton systems
//! are solved through a reduced dense quasidefinite system in which all
//! non-equality rows have been eliminated.

use serde::{Deserialize, Serialize};

use super::cones::{Cone, ConeKind};
use super::problem::ConicProblem;
use super::ConicError;
use crate::linalg::{Ldl, Matrix};
use crate::scalar::{axpy, dot, norm_inf, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// Primal infeasible; `duals` hold a certificate.
    Infeasible,
    /// Dual infeasible; `x` holds an unbounded direction.
    Unbounded,
    /// Stopped early, but the best iterate meets `SolverSettings::reduced_tol`.
    AlmostOptimal,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings<T> {
    /// Relative duality gap `|p - d| / max(1, |p|)`.
    pub gap_tol: T,
    /// Relative primal and dual residuals.
    pub feas_tol: T,
    pub infeas_tol: T,
    pub max_iters: usize,
    pub static_reg: T,
    pub refine_steps: usize,
    pub step_fraction: T,
    /// Residual and gap level accepted as `AlmostOptimal` when progress stops.
    pub reduced_tol: T,
}

impl<T: Real> Default for SolverSettings<T> {
    fn default() -> Self {
        Self {
            gap_tol: T::lit(1e-8),
            feas_tol: T::lit(1e-8),
            infeas_tol: T::lit(1e-8),
            max_iters: 200,
            static_reg: T::lit(1e-9),
            refine_steps: 10,
            step_fraction: T::lit(0.99),
            reduced_tol: T::lit(1e-6),
        }
    }
}

/// Per-iteration progress record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord<T> {
    pub iter: usize,
    pub primal_objective: T,
    pub dual_objective: T,
    /// `(sᵀz + τκ) / τ²`; nonnegative on every iterate.
    pub complementarity: T,
    pub primal_residual: T,
    pub dual_residual: T,
    pub mu: T,
    pub step: T,
}

#[derive(Debug, Clone)]
pub struct ConicSolution<T> {
    pub status: SolveStatus,
    /// Primal variable values.
    pub x: Vec<T>,
    /// Cone slack values per constraint block, in the block's natural
    /// coordinates (PSD entries unscaled).
    pub slacks: Vec<Vec<T>>,
    /// Dual values per constraint block (natural coordinates).
    pub duals: Vec<Vec<T>>,
    pub objective: T,
    pub dual_objective: T,
    pub duality_gap: T,
    pub primal_residual: T,
    pub dual_residual: T,
    pub iterations: usize,
    pub log: Vec<IterationRecord<T>>,
}

impl<T: Real> ConicSolution<T> {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Optimal, or stopped at an iterate within the reduced tolerance.
    pub fn is_usable(&self) -> bool {
        matches!(self.status, SolveStatus::Optimal | SolveStatus::AlmostOptimal)
    }

    pub fn value(&self, v: super::VarId) -> T {
        self.x[v.0]
    }

    pub fn eval(&self, e: &super::LinExpr<T>) -> T {
        e.eval(&self.x)
    }
}

/// Solve a cone program.
pub fn solve<T: Real>(
    problem: &ConicProblem<T>,
    settings: &SolverSettings<T>,
) -> Result<ConicSolution<T>, ConicError> {
    problem.validate()?;
    let data = Data::compile(problem);
    Ok(Engine::new(data, *settings).run())
}

struct Data<T> {
    n: usize,
    m: usize,
    rows: Vec<Vec<(usize, T)>>,
    b: Vec<T>,
    c: Vec<T>,
    c0: T,
    /// `svec` scaling of each row (1 or √2).
    row_scale: Vec<T>,
    cones: Vec<Cone<T>>,
    eq_rows: Vec<usize>,
}

impl<T: Real> Data<T> {
    fn compile(p: &ConicProblem<T>) -> Self {
        let n = p.num_vars();
        let mut rows = Vec::new();
        let mut b = Vec::new();
        let mut row_scale = Vec::new();
        let mut cones = Vec::new();
        let mut eq_rows = Vec::new();
        for con in p.constraints() {
            let offset = rows.len();
            for (k, expr) in con.rows.iter().enumerate() {
                let scale = match con.kind {
                    ConeKind::Psd { .. } if !is_diag_tri(k) => T::sqrt2(),
                    _ => T::one(),
                };
                let e = expr.compact();
                rows.push(e.terms.iter().map(|&(v, a)| (v.0, -a * scale)).collect());
                b.push(e.constant * scale);
                row_scale.push(scale);
                if con.kind == ConeKind::Zero {
                    eq_rows.push(offset + k);
                }
            }
            cones.push(Cone::new(con.kind, offset, con.rows.len()));
        }
        let mut c = vec![T::zero(); n];
        for &(v, a) in &p.objective().terms {
            c[v.0] += a;
        }
        Self {
            n,
            m: rows.len(),
            rows,
            b,
            c,
            c0: p.objective().constant,
            row_scale,
            cones,
            eq_rows,
        }
    }

    fn a_mul(&self, x: &[T]) -> Vec<T> {
        self.rows
            .iter()
            .map(|r| r.iter().fold(T::zero(), |acc, &(j, a)| acc + a * x[j]))
            .collect()
    }

    fn at_mul(&self, z: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n];
        for (r, &zi) in self.rows.iter().zip(z) {
            if zi == T::zero() {
                continue;
            }
            for &(j, a) in r {
                out[j] += a * zi;
            }
        }
        out
    }
}

fn is_diag_tri(k: usize) -> bool {
    // k = i(i+1)/2 + j is diagonal iff j == i
    let mut i = 0;
    while (i + 1) * (i + 2) / 2 <= k {
        i += 1;
    }
    k - i * (i + 1) / 2 == i
}

/// Scaled constraint block `Ã = W⁻ᵀ A` of one cone, restricted to the
/// variables that appear in it.
struct ScaledBlock<T> {
    cols: Vec<usize>,
    /// `dim × cols.len()`
    at: Matrix<T>,
    /// dense `W⁻ᵀ` (`dim × dim`)
    winv_t: Matrix<T>,
}

/// Factored reduced Newton system for the current scaling.
struct Kkt<T> {
    blocks: Vec<Option<ScaledBlock<T>>>,
    /// `Σ Ãᵀ Ã`
    m_mat: Matrix<T>,
    ldl: Ldl<T>,
}

struct Engine<T> {
    d: Data<T>,
    st: SolverSettings<T>,
    x: Vec<T>,
    s: Vec<T>,
    z: Vec<T>,
    tau: T,
    kappa: T,
    degree: usize,
}

struct Direction<T> {
    dx: Vec<T>,
    ds: Vec<T>,
    dz: Vec<T>,
    dtau: T,
    dkappa: T,
}

impl<T: Real> Engine<T> {
    fn new(d: Data<T>, st: SolverSettings<T>) -> Self {
        let degree = d.cones.iter().map(|c| c.degree()).sum();
        Self {
            x: vec![T::zero(); d.n],
            s: vec![T::zero(); d.m],
            z: vec![T::zero(); d.m],
            tau: T::one(),
            kappa: T::one(),
            degree,
            d,
            st,
        }
    }

    fn scaled_block(&self, cone: &Cone<T>) -> ScaledBlock<T> {
        let mut cols: Vec<usize> = cone
            .range()
            .flat_map(|r| self.d.rows[r].iter().map(|&(j, _)| j))
            .collect();
        cols.sort_unstable();
        cols.dedup();
        let d = cone.dim;
        let mut winv_t = Matrix::zeros(d, d);
        let mut e = vec![T::zero(); d];
        for q in 0..d {
            e[q] = T::one();
            let col = cone.apply_winv_t(&e);
            for p in 0..d {
                winv_t[(p, q)] = col[p];
            }
            e[q] = T::zero();
        }
        let mut a = Matrix::zeros(d, cols.len());
        for p in 0..d {
            for &(j, v) in &self.d.rows[cone.offset + p] {
                let c = cols.binary_search(&j).expect("column collected above");
                a[(p, c)] += v;
            }
        }
        let at = if cone.kind == ConeKind::NonNeg {
            let mut at = a;
            for p in 0..d {
                let w = winv_t[(p, p)];
                for v in at.row_mut(p) {
                    *v *= w;
                }
            }
            at
        } else {
            winv_t.matmul(&a)
        };
        ScaledBlock { cols, at, winv_t }
    }

    fn factor(&self) -> Option<Kkt<T>> {
        let n = self.d.n;
        let me = self.d.eq_rows.len();
        let blocks: Vec<Option<ScaledBlock<T>>> = self
            .d
            .cones
            .iter()
            .map(|c| (!c.is_zero()).then(|| self.scaled_block(c)))
            .collect();
        let mut m_mat = Matrix::<T>::zeros(n, n);
        for blk in blocks.iter().flatten() {
            let k = blk.cols.len();
            for a in 0..k {
                for b in 0..=a {
                    let mut acc = T::zero();
                    for p in 0..blk.at.rows() {
                        acc += blk.at[(p, a)] * blk.at[(p, b)];
                    }
                    let (i, j) = (blk.cols[a], blk.cols[b]);
                    m_mat[(i, j)] += acc;
                    if i != j {
                        m_mat[(j, i)] += acc;
                    }
                }
            }
        }
        let size = n + me;
        let mut k = Matrix::zeros(size, size);
        let mut scale = T::one();
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = m_mat[(i, j)];
            }
            scale = scale.max(m_mat[(i, i)].abs());
        }
        for (p, &r) in self.d.eq_rows.iter().enumerate() {
            for &(j, a) in &self.d.rows[r] {
                k[(n + p, j)] += a;
                k[(j, n + p)] += a;
            }
        }
        let reg = self.st.static_reg * scale.max(T::one()).min(T::lit(1e6));
        for i in 0..n {
            k[(i, i)] += reg;
        }
        for p in 0..me {
            k[(n + p, n + p)] -= reg;
        }
        let threshold = T::epsilon() * scale;
        let ldl = Ldl::factor_signed(&k, n, threshold, reg.max(threshold))?;
        Some(Kkt {
            blocks,
            m_mat,
            ldl,
        })
    }

    /// Solve `[[0, Aᵀ], [A, -H]] [dx; dz] = [ra; rb]`.
    ///
    /// The reduced solve is refined against the full system, which uses
    /// `H = WᵀW` rather than its (badly conditioned near optimality) inverse.
    fn solve_kkt(&self, kkt: &Kkt<T>, ra: &[T], rb: &[T]) -> (Vec<T>, Vec<T>) {
        let (mut dx, mut dz) = self.reduced_solve(kkt, ra, rb);
        let (mut r1, mut r2) = self.full_residual(&dx, &dz, ra, rb);
        let mut rnorm = norm_inf(&r1).max(norm_inf(&r2));
        let tol = T::epsilon() * (T::one() + norm_inf(ra).max(norm_inf(rb)));
        for _ in 0..self.st.refine_steps {
            if rnorm <= tol {
                break;
            }
            let (cx, cz) = self.reduced_solve(kkt, &r1, &r2);
            let nx: Vec<T> = dx.iter().zip(&cx).map(|(&a, &b)| a + b).collect();
            let nz: Vec<T> = dz.iter().zip(&cz).map(|(&a, &b)| a + b).collect();
            let (n1, n2) = self.full_residual(&nx, &nz, ra, rb);
            let nn = norm_inf(&n1).max(norm_inf(&n2));
            if !(nn < rnorm) {
                break;
            }
            dx = nx;
            dz = nz;
            r1 = n1;
            r2 = n2;
            rnorm = nn;
        }
        (dx, dz)
    }

    /// Residual of `[[0, Aᵀ], [A, -H]] [dx; dz] = [ra; rb]`.
    fn full_residual(&self, dx: &[T], dz: &[T], ra: &[T], rb: &[T]) -> (Vec<T>, Vec<T>) {
        let atz = self.d.at_mul(dz);
        let r1: Vec<T> = ra.iter().zip(&atz).map(|(&a, &b)| a - b).collect();
        let adx = self.d.a_mul(dx);
        let mut r2: Vec<T> = rb.iter().zip(&adx).map(|(&a, &b)| a - b).collect();
        for cone in self.d.cones.iter().filter(|c| !c.is_zero()) {
            let r = cone.range();
            let hz = cone.apply_wt(&cone.apply_w(&dz[r.clone()]));
            for (k, i) in r.enumerate() {
                r2[i] += hz[k];
            }
        }
        (r1, r2)
    }

    fn reduced_solve(&self, kkt: &Kkt<T>, ra: &[T], rb: &[T]) -> (Vec<T>, Vec<T>) {
        let n = self.d.n;
        let me = self.d.eq_rows.len();
        let mut rhs = vec![T::zero(); n + me];
        rhs[..n].copy_from_slice(ra);
        // W⁻ᵀ rb per cone, reused below
        let mut wrb: Vec<Vec<T>> = Vec::with_capacity(self.d.cones.len());
        for (cone, blk) in self.d.cones.iter().zip(&kkt.blocks) {
            let Some(blk) = blk else {
                wrb.push(Vec::new());
                continue;
            };
            let t = blk.winv_t.matvec(&rb[cone.range()]);
            for (c, &j) in blk.cols.iter().enumerate() {
                let mut acc = T::zero();
                for p in 0..cone.dim {
                    acc += blk.at[(p, c)] * t[p];
                }
                rhs[j] += acc;
            }
            wrb.push(t);
        }
        for (p, &r) in self.d.eq_rows.iter().enumerate() {
            rhs[n + p] = rb[r];
        }

        let mut sol = kkt.ldl.solve(&rhs);
        let mut best = self.reduced_residual(kkt, &sol, &rhs);
        let mut best_norm = norm_inf(&best);
        for _ in 0..3 {
            if best_norm <= T::epsilon() * (T::one() + norm_inf(&rhs)) {
                break;
            }
            let corr = kkt.ldl.solve(&best);
            let cand: Vec<T> = sol.iter().zip(&corr).map(|(&a, &b)| a + b).collect();
            let r = self.reduced_residual(kkt, &cand, &rhs);
            let rn = norm_inf(&r);
            if rn < best_norm {
                sol = cand;
                best = r;
                best_norm = rn;
            } else {
                break;
            }
        }

        let dx = sol[..n].to_vec();
        let mut dz = vec![T::zero(); self.d.m];
        for (p, &r) in self.d.eq_rows.iter().enumerate() {
            dz[r] = sol[n + p];
        }
        // y = Ã dx - W⁻ᵀ rb,  dz = W⁻¹ y
        for ((cone, blk), t) in self.d.cones.iter().zip(&kkt.blocks).zip(&wrb) {
            let Some(blk) = blk else { continue };
            let mut y = vec![T::zero(); cone.dim];
            for p in 0..cone.dim {
                let mut acc = -t[p];
                for (c, &j) in blk.cols.iter().enumerate() {
                    acc += blk.at[(p, c)] * dx[j];
                }
                y[p] = acc;
            }
            for q in 0..cone.dim {
                let mut acc = T::zero();
                for p in 0..cone.dim {
                    acc += blk.winv_t[(p, q)] * y[p];
                }
                dz[cone.offset + q] = acc;
            }
        }
        (dx, dz)
    }

    fn reduced_residual(&self, kkt: &Kkt<T>, sol: &[T], rhs: &[T]) -> Vec<T> {
        let n = self.d.n;
        let mut r = rhs.to_vec();
        let mx = kkt.m_mat.matvec(&sol[..n]);
        for i in 0..n {
            r[i] -= mx[i];
        }
        for (p, &row) in self.d.eq_rows.iter().enumerate() {
            let y = sol[n + p];
            let mut ax = T::zero();
            for &(j, a) in &self.d.rows[row] {
                r[j] -= a * y;
                ax += a * sol[j];
            }
            r[n + p] -= ax;
        }
        r
    }

    fn shift_into_cones(&self, v: &mut [T]) {
        let mut alpha = T::infinity();
        for cone in self.d.cones.iter().filter(|c| !c.is_zero()) {
            alpha = alpha.min(cone.margin(&v[cone.range()]));
        }
        if !alpha.is_finite() {
            return;
        }
        if alpha < T::epsilon().sqrt() {
            let shift = T::one() - alpha;
            for cone in self.d.cones.iter().filter(|c| !c.is_zero()) {
                let e = cone.unit();
                axpy(shift, &e, &mut v[cone.range()]);
            }
        }
    }

    fn initialize(&mut self) -> bool {
        // identity scaling for the initial least-squares solves
        let m = self.d.m;
        for cone in self.d.cones.iter_mut() {
            *cone = Cone::new(cone.kind, cone.offset, cone.dim);
        }
        let Some(kkt) = self.factor() else {
            return false;
        };
        let zero_n = vec![T::zero(); self.d.n];
        let (xp, zp) = self.solve_kkt(&kkt, &zero_n, &self.d.b);
        let neg_c: Vec<T> = self.d.c.iter().map(|&v| -v).collect();
        let (_, zd) = self.solve_kkt(&kkt, &neg_c, &vec![T::zero(); m]);
        self.x = xp;
        let mut s = vec![T::zero(); m];
        let mut z = zd;
        for cone in &self.d.cones {
            for r in cone.range() {
                if cone.is_zero() {
                    s[r] = T::zero();
                } else {
                    s[r] = -zp[r];
                }
            }
        }
        self.shift_into_cones(&mut s);
        self.shift_into_cones(&mut z);
        self.s = s;
        self.z = z;
        self.tau = T::one();
        self.kappa = T::one();
        true
    }

    fn max_step(&self, dir: &Direction<T>) -> T {
        let mut alpha = T::infinity();
        for cone in self.d.cones.iter().filter(|c| !c.is_zero()) {
            let r = cone.range();
            alpha = alpha.min(cone.step_length(&self.s[r.clone()], &dir.ds[r.clone()]));
            alpha = alpha.min(cone.step_length(&self.z[r.clone()], &dir.dz[r.clone()]));
        }
        if dir.dtau < T::zero() {
            alpha = alpha.min(-self.tau / dir.dtau);
        }
        if dir.dkappa < T::zero() {
            alpha = alpha.min(-self.kappa / dir.dkappa);
        }
        alpha
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        kkt: &Kkt<T>,
        base: &(Vec<T>, Vec<T>, T),
        res: &(Vec<T>, Vec<T>, T),
        eta: T,
        ds_rhs: &[T],
        dk_rhs: T,
    ) -> Direction<T> {
        let (x1, z1, denom) = base;
        let (rx, rz, rtau) = res;
        let ra: Vec<T> = rx.iter().map(|&v| -eta * v).collect();
        let mut rb: Vec<T> = rz.iter().map(|&v| -eta * v).collect();
        let mut lam_inv = vec![T::zero(); self.d.m];
        for cone in self.d.cones.iter().filter(|c| !c.is_zero()) {
            let r = cone.range();
            let li = cone.lambda_inv_circ(&ds_rhs[r.clone()]);
            let wt = cone.apply_wt(&li);
            for (k, idx) in r.clone().enumerate() {
                rb[idx] -= wt[k];
            }
            lam_inv[r].copy_from_slice(&li);
        }
        let (x2, z2) = self.solve_kkt(kkt, &ra, &rb);
        let num = -eta * *rtau - dk_rhs / self.tau - dot(&self.d.c, &x2) - dot(&self.d.b, &z2);
        let dtau = num / *denom;
        let mut dx = x2;
        axpy(dtau, x1, &mut dx);
        let mut dz = z2;
        axpy(dtau, z1, &mut dz);
        // ds from the primal row of the Newton system; for ill-conditioned
        // scalings this is more accurate than Wᵀ(λ \ d - W dz).
        let adx = self.d.a_mul(&dx);
        let mut ds = vec![T::zero(); self.d.m];
        for cone in self.d.cones.iter().filter(|c| !c.is_zero()) {
            for i in cone.range() {
                ds[i] = self.d.b[i] * dtau - eta * rz[i] - adx[i];
            }
        }
        let dkappa = (dk_rhs - self.kappa * dtau) / self.tau;
        Direction {
            dx,
            ds,
            dz,
            dtau,
            dkappa,
        }
    }

    fn run(mut self) -> ConicSolution<T> {
        let mut log = Vec::new();
        let norm_b = norm_inf(&self.d.b).max(T::one());
        let norm_c = norm_inf(&self.d.c).max(T::one());
        if !self.initialize() {
            return self.finish(SolveStatus::NumericalFailure, 0, log, None);
        }
        let mut small_steps = 0usize;
        let mut last_metrics = None;
        let mut best: Option<Snapshot<T>> = None;
        for iter in 0..=self.st.max_iters {
            // residuals of the embedding
            let atz = self.d.at_mul(&self.z);
            let rx: Vec<T> = atz
                .iter()
                .zip(&self.d.c)
                .map(|(&a, &c)| a + c * self.tau)
                .collect();
            let ax = self.d.a_mul(&self.x);
            let rz: Vec<T> = (0..self.d.m)
                .map(|i| ax[i] + self.s[i] - self.d.b[i] * self.tau)
                .collect();
            let cx = dot(&self.d.c, &self.x);
            let bz = dot(&self.d.b, &self.z);
            let rtau = cx + bz + self.kappa;

            let sz = self.complementarity();
            let pobj = cx / self.tau + self.d.c0;
            let dobj = -bz / self.tau + self.d.c0;
            let pres = norm_inf(&rz) / self.tau / norm_b;
            let dres = norm_inf(&rx) / self.tau / norm_c;
            let gap = (pobj - dobj).abs() / pobj.abs().max(T::one());
            let metrics = Metrics {
                pobj,
                dobj,
                gap,
                pres,
                dres,
            };
            last_metrics = Some(metrics);
            let score = pres.max(dres).max(gap);
            if score.is_finite() && best.as_ref().is_none_or(|b| score < b.score) {
                best = Some(Snapshot {
                    score,
                    x: self.x.clone(),
                    s: self.s.clone(),
                    z: self.z.clone(),
                    tau: self.tau,
                    kappa: self.kappa,
                    metrics,
                });
            }
            let mu = (sz + self.tau * self.kappa) / T::lit((self.degree + 1) as f64);

            if !(pobj.is_finite() && dobj.is_finite() && mu.is_finite()) {
                return self.bail(SolveStatus::NumericalFailure, iter, log, last_metrics, best);
            }
            if pres <= self.st.feas_tol && dres <= self.st.feas_tol && gap <= self.st.gap_tol {
                return self.finish(SolveStatus::Optimal, iter, log, last_metrics);
            }
            if self.tau < self.kappa {
                let atz_norm = norm_inf(&atz);
                if bz < T::zero() && atz_norm <= self.st.infeas_tol * (-bz) {
                    return self.finish(SolveStatus::Infeasible, iter, log, last_metrics);
                }
                let axs: Vec<T> = (0..self.d.m).map(|i| ax[i] + self.s[i]).collect();
                if cx < T::zero() && norm_inf(&axs) <= self.st.infeas_tol * (-cx) {
                    return self.finish(SolveStatus::Unbounded, iter, log, last_metrics);
                }
            }
            if iter == self.st.max_iters {
                return self.bail(SolveStatus::MaxIterations, iter, log, last_metrics, best);
            }

            // scaling
            for idx in 0..self.d.cones.len() {
                let r = self.d.cones[idx].range();
                let (s, z) = (self.s[r.clone()].to_vec(), self.z[r].to_vec());
                if !self.d.cones[idx].update_scaling(&s, &z) {
                    return self.bail(SolveStatus::NumericalFailure, iter, log, last_metrics, best);
                }
            }
            let Some(kkt) = self.factor() else {
                return self.bail(SolveStatus::NumericalFailure, iter, log, last_metrics, best);
            };
            let neg_c: Vec<T> = self.d.c.iter().map(|&v| -v).collect();
            let (x1, z1) = self.solve_kkt(&kkt, &neg_c, &self.d.b);
            let mut wz1 = T::zero();
            for cone in self.d.cones.iter().filter(|c| !c.is_zero()) {
                let w = cone.apply_w(&z1[cone.range()]);
                wz1 += dot(&w, &w);
            }
            let denom = -(wz1 + self.kappa / self.tau);
            let base = (x1, z1, denom);
            let res = (rx, rz, rtau);

            // predictor
            let mut ds_aff = vec![T::zero(); self.d.m];
            for cone in self.d.cones.iter().filter(|c| !c.is_zero()) {
                let lam = cone.lambda();
                let ll = cone.circ(&lam, &lam);
                for (k, r) in cone.range().enumerate() {
                    ds_aff[r] = -ll[k];
                }
            }
            let aff = self.direction(&kkt, &base, &res, T::one(), &ds_aff, -self.tau * self.kappa);
            let alpha_aff = self.max_step(&aff).min(T::one());
            let sigma = (T::one() - alpha_aff).powi(3);

            // corrector
            let mut ds_cc = ds_aff.clone();
            for cone in self.d.cones.iter().filter(|c| !c.is_zero()) {
                let r = cone.range();
                let a = cone.apply_winv_t(&aff.ds[r.clone()]);
                let b = cone.apply_w(&aff.dz[r.clone()]);
                let corr = cone.circ(&a, &b);
                let e = cone.unit();
                for (k, idx) in r.enumerate() {
                    ds_cc[idx] += sigma * mu * e[k] - corr[k];
                }
            }
            let dk_cc = -self.tau * self.kappa + sigma * mu - aff.dtau * aff.dkappa;
            let dir = self.direction(&kkt, &base, &res, T::one() - sigma, &ds_cc, dk_cc);
            let alpha = (self.st.step_fraction * self.max_step(&dir)).min(T::one());

            log.push(IterationRecord {
                iter,
                primal_objective: pobj,
                dual_objective: dobj,
                complementarity: (sz + self.tau * self.kappa) / (self.tau * self.tau),
                primal_residual: pres,
                dual_residual: dres,
                mu,
                step: alpha,
            });

            if !(alpha > T::lit(1e-10)) || !alpha.is_finite() {
                small_steps += 1;
                if small_steps >= 3 || !alpha.is_finite() {
                    return self.bail(SolveStatus::NumericalFailure, iter, log, last_metrics, best);
                }
                continue;
            }
            small_steps = 0;
            axpy(alpha, &dir.dx, &mut self.x);
            axpy(alpha, &dir.ds, &mut self.s);
            axpy(alpha, &dir.dz, &mut self.z);
            self.tau += alpha * dir.dtau;
            self.kappa += alpha * dir.dkappa;
        }
        let iters = self.st.max_iters;
        self.bail(SolveStatus::MaxIterations, iters, log, last_metrics, best)
    }

    fn complementarity(&self) -> T {
        let mut acc = T::zero();
        for cone in self.d.cones.iter().filter(|c| !c.is_zero()) {
            let r = cone.range();
            acc += dot(&self.s[r.clone()], &self.z[r]);
        }
        acc
    }

    /// Give up, falling back to the best iterate seen when it is accurate enough.
    fn bail(
        mut self,
        status: SolveStatus,
        iterations: usize,
        log: Vec<IterationRecord<T>>,
        metrics: Option<Metrics<T>>,
        best: Option<Snapshot<T>>,
    ) -> ConicSolution<T> {
        match best {
            Some(b) if b.score <= self.st.reduced_tol => {
                self.x = b.x;
                self.s = b.s;
                self.z = b.z;
                self.tau = b.tau;
                self.kappa = b.kappa;
                self.finish(SolveStatus::AlmostOptimal, iterations, log, Some(b.metrics))
            }
            _ => self.finish(status, iterations, log, metrics),
        }
    }

    fn finish(
        self,
        status: SolveStatus,
        iterations: usize,
        log: Vec<IterationRecord<T>>,
        metrics: Option<Metrics<T>>,
    ) -> ConicSolution<T> {
        let certificate = matches!(status, SolveStatus::Infeasible | SolveStatus::Unbounded);
        let scale = if certificate || self.tau <= T::zero() {
            T::one()
        } else {
            self.tau.recip()
        };
        let x: Vec<T> = self.x.iter().map(|&v| v * scale).collect();
        let mut slacks = Vec::with_capacity(self.d.cones.len());
        let mut duals = Vec::with_capacity(self.d.cones.len());
        for cone in &self.d.cones {
            let r = cone.range();
            slacks.push(
                r.clone()
                    .map(|i| self.s[i] * scale / self.d.row_scale[i])
                    .collect(),
            );
            duals.push(r.map(|i| self.z[i] * scale / self.d.row_scale[i]).collect());
        }
        let m = metrics.unwrap_or(Metrics {
            pobj: T::nan(),
            dobj: T::nan(),
            gap: T::nan(),
            pres: T::nan(),
            dres: T::nan(),
        });
        ConicSolution {
            status,
            x,
            slacks,
            duals,
            objective: m.pobj,
            dual_objective: m.dobj,
            duality_gap: m.gap,
            primal_residual: m.pres,
            dual_residual: m.dres,
            iterations,
            log,
        }
    }
}

struct Snapshot<T> {
    score: T,
    x: Vec<T>,
    s: Vec<T>,
    z: Vec<T>,
    tau: T,
    kappa: T,
    metrics: Metrics<T>,
}

#[derive(Debug, Clone, Copy)]
struct Metrics<T> {
    pobj: T,
    dobj: T,
    gap: T,
    pres: T,
    dres: T,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{BlockKind, LinExpr};

    #[test]
    fn diag_tri_detection() {
        let diag: Vec<bool> = (0..6).map(is_diag_tri).collect();
        assert_eq!(diag, vec![true, false, true, false, false, true]);
    }

    #[test]
    fn small_lp() {
        // min x + y s.t. x + 2y >= 2, x >= 0, y >= 0  -> x=0,y=1, obj 1
        let mut p = ConicProblem::<f64>::new();
        let v = p.add_variable_block(BlockKind::NonNeg(2));
        let (x, y) = (v.var(0), v.var(1));
        p.set_objective(LinExpr::var(x).plus(y, 1.0));
        p.add_nonneg(LinExpr::var(x).plus(y, 2.0).offset(-2.0));
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-7, "{}", sol.objective);
    }
}

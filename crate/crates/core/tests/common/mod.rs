//! Problems and oracles shared by the integration tests.
#![allow(dead_code)]

use evgrid::conic::{hyperbolic, quadratic_epigraph, BlockKind, ConicProblem, HermMatrix, HermitianVars, LinExpr};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type P = ConicProblem<f64>;

pub fn v(p: &mut P) -> LinExpr<f64> {
    LinExpr::var(p.add_var())
}

pub fn sum(a: &LinExpr<f64>, b: &LinExpr<f64>, sb: f64) -> LinExpr<f64> {
    let mut e = a.clone();
    e.add_expr(b, sb);
    e
}

fn psd_rows(rows: &[&[f64]], scale: f64, mut f: impl FnMut(usize, usize) -> LinExpr<f64>) -> Vec<LinExpr<f64>> {
    let mut out = Vec::new();
    for i in 0..rows.len() {
        for j in 0..=i {
            out.push(f(i, j).offset(scale * rows[i][j]));
        }
    }
    out
}

/// Every problem in the battery with its known optimum.
pub fn battery() -> Vec<(&'static str, P, f64)> {
    let mut out = Vec::new();

    // x >= 1 held as a 1x1 PSD block
    let mut p = P::new();
    let b = p.add_variable_block(BlockKind::Psd(1));
    let x = LinExpr::var(b.var(0));
    p.add_nonneg(x.clone().offset(-1.0));
    p.set_objective(x);
    out.push(("psd1x1_lower_bound", p, 1.0));

    let mut p = P::new();
    let b = p.add_variable_block(BlockKind::NonNeg(2));
    let (x, y) = (LinExpr::var(b.var(0)), LinExpr::var(b.var(1)));
    p.add_nonneg(sum(&x, &y, 2.0).offset(-2.0));
    p.set_objective(sum(&x, &y, 1.0));
    out.push(("lp_cover", p, 1.0));

    let mut p = P::new();
    let b = p.add_variable_block(BlockKind::NonNeg(2));
    let (x, y) = (LinExpr::var(b.var(0)), LinExpr::var(b.var(1)));
    p.add_nonneg(sum(&x, &y, 1.0).scaled(-1.0).offset(4.0));
    p.add_nonneg(x.scaled(-1.0).offset(3.0));
    p.set_objective(sum(&x, &y, 1.0).scaled(-1.0));
    out.push(("lp_packing", p, -4.0));

    let mut p = P::new();
    let b = p.add_variable_block(BlockKind::NonNeg(2));
    let (x, y) = (LinExpr::var(b.var(0)), LinExpr::var(b.var(1)));
    p.add_equality(sum(&x, &y, 1.0).offset(-1.0));
    p.set_objective(sum(&x.scaled(2.0), &y, 3.0));
    out.push(("lp_simplex", p, 2.0));

    let mut p = P::new();
    let (x, y) = (v(&mut p), v(&mut p));
    p.add_nonneg(x.clone().offset(5.0));
    p.add_nonneg(sum(&x, &y, -2.0));
    p.add_equality(y.offset(-1.0));
    p.set_objective(x);
    out.push(("lp_free_vars", p, 2.0));

    let mut p = P::new();
    let c = [1.0, -2.0, 3.0, -4.0, 5.0];
    let mut obj = LinExpr::zero();
    for &ci in &c {
        let x = v(&mut p);
        p.add_nonneg(x.clone().offset(1.0));
        p.add_nonneg(x.scaled(-1.0).offset(1.0));
        obj.add_expr(&x, ci);
    }
    p.set_objective(obj);
    out.push(("lp_box", p, -15.0));

    let mut p = P::new();
    let b = p.add_variable_block(BlockKind::NonNeg(2));
    let (a, bb) = (LinExpr::var(b.var(0)), LinExpr::var(b.var(1)));
    p.add_nonneg(sum(&a, &bb, 1.0).offset(-4.0));
    p.add_nonneg(sum(&a, &bb, 3.0).offset(-6.0));
    p.set_objective(sum(&a.scaled(3.0), &bb, 2.0));
    out.push(("lp_diet", p, 8.0));

    let mut p = P::new();
    let x = v(&mut p);
    p.add_soc(vec![LinExpr::constant(1.0), x.clone()]);
    p.set_objective(x);
    out.push(("soc_interval", p, -1.0));

    let mut p = P::new();
    let (x, y) = (v(&mut p), v(&mut p));
    p.add_soc(vec![LinExpr::constant(1.0), x.clone(), y.clone()]);
    p.set_objective(sum(&x, &y, 1.0));
    out.push(("soc_disc", p, -std::f64::consts::SQRT_2));

    let mut p = P::new();
    let (t, x1, x2) = (v(&mut p), v(&mut p), v(&mut p));
    p.add_soc(vec![t.clone(), x1.clone().offset(-2.0), x2.clone().offset(-2.0)]);
    p.add_equality(sum(&x1, &x2, 1.0).offset(-1.0));
    p.set_objective(t);
    out.push(("soc_distance_to_line", p, 3.0 / std::f64::consts::SQRT_2));

    let mut p = P::new();
    let (e, q) = (v(&mut p), v(&mut p));
    quadratic_epigraph(&mut p, &e, &q, 2.0, -4.0, 1.0).unwrap();
    p.set_objective(e);
    out.push(("epigraph_parabola", p, -1.0));

    for (name, c, pval, opt) in [
        ("epigraph_square", (1.0, 0.0, 0.0), 3.0, 9.0),
        ("epigraph_linear", (0.0, 2.0, 1.0), 3.0, 7.0),
        ("epigraph_cost_curve", (0.04, 20.0, 0.0), 15.0, 309.0),
    ] {
        let mut p = P::new();
        let (e, q) = (v(&mut p), v(&mut p));
        quadratic_epigraph(&mut p, &e, &q, c.0, c.1, c.2).unwrap();
        p.add_equality(q.offset(-pval));
        p.set_objective(e);
        out.push((name, p, opt));
    }

    let mut p = P::new();
    let s = v(&mut p);
    hyperbolic(&mut p, &s, &LinExpr::constant(4.0));
    p.set_objective(s);
    out.push(("soc_hyperbolic", p, 0.25));

    let mut p = P::new();
    let x = v(&mut p);
    p.add_soc(vec![
        x.clone(),
        LinExpr::constant(1.0),
        LinExpr::constant(2.0),
        LinExpr::constant(2.0),
    ]);
    p.set_objective(x);
    out.push(("soc_constant_norm", p, 3.0));

    let mut p = P::new();
    let t = v(&mut p);
    let xs: Vec<_> = (0..3).map(|_| v(&mut p)).collect();
    let mut rows = vec![t.clone()];
    rows.extend(xs.iter().cloned());
    p.add_soc(rows);
    let mut lin = LinExpr::constant(-1.0);
    for (x, a) in xs.iter().zip([1.0, 2.0, 2.0]) {
        lin.add_expr(x, a);
    }
    p.add_equality(lin);
    p.set_objective(t);
    out.push(("soc_least_norm", p, 1.0 / 3.0));

    let mut p = P::new();
    let b = p.add_variable_block(BlockKind::Psd(2));
    p.add_equality(LinExpr::var(b.entry(0, 0)).offset(-1.0));
    p.set_objective(LinExpr::var(b.entry(0, 0)).plus(b.entry(1, 1), 1.0));
    out.push(("psd_trace_fixed_corner", p, 1.0));

    let c2 = [[2.0, 1.0], [1.0, 2.0]];
    let c3 = [[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]];
    let mut p = P::new();
    let b = p.add_variable_block(BlockKind::Psd(2));
    p.add_equality(LinExpr::var(b.entry(0, 0)).plus(b.entry(1, 1), 1.0).offset(-1.0));
    let mut obj = LinExpr::zero();
    for i in 0..2 {
        for j in 0..2 {
            obj.add_term(b.entry(i, j), c2[i][j]);
        }
    }
    p.set_objective(obj);
    out.push(("psd_min_eig_2", p, 1.0));

    let mut p = P::new();
    let b = p.add_variable_block(BlockKind::Psd(3));
    let mut tr = LinExpr::constant(-1.0);
    let mut obj = LinExpr::zero();
    for i in 0..3 {
        tr.add_term(b.entry(i, i), 1.0);
        for j in 0..3 {
            obj.add_term(b.entry(i, j), c3[i][j]);
        }
    }
    p.add_equality(tr);
    p.set_objective(obj);
    out.push(("psd_min_eig_3", p, 2.0 - std::f64::consts::SQRT_2));

    // λmax(C) = min t s.t. tI - C ⪰ 0
    let mut p = P::new();
    let t = p.add_var();
    let rows: Vec<&[f64]> = c3.iter().map(|r| &r[..]).collect();
    let lmi = psd_rows(&rows, -1.0, |i, j| {
        if i == j {
            LinExpr::var(t)
        } else {
            LinExpr::zero()
        }
    });
    p.add_psd(3, lmi);
    p.set_objective(LinExpr::var(t));
    out.push(("psd_max_eig_lmi", p, 2.0 + std::f64::consts::SQRT_2));

    // Hermitian: min Re Tr(C W), Tr W = 1, C = [[2, j], [-j, 2]] -> λmin = 1
    let mut p = P::new();
    let h = HermitianVars::new_psd(&mut p, 2);
    let cm = HermMatrix::from_entries(
        2,
        vec![
            Complex64::new(2.0, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(0.0, -1.0),
            Complex64::new(2.0, 0.0),
        ],
        0.0,
    )
    .unwrap();
    p.add_equality(h.trace().offset(-1.0));
    p.set_objective(h.trace_with(&cm));
    out.push(("hermitian_min_eig", p, 1.0));

    // max-cut relaxation on a single edge
    let mut p = P::new();
    let b = p.add_variable_block(BlockKind::Psd(2));
    p.add_equality(LinExpr::var(b.entry(0, 0)).offset(-1.0));
    p.add_equality(LinExpr::var(b.entry(1, 1)).offset(-1.0));
    p.set_objective(LinExpr::zero().plus(b.entry(1, 0), 2.0));
    out.push(("psd_maxcut_edge", p, -2.0));

    // min ‖(X11, X22)‖ with X ⪰ 0, X12 = 1
    let mut p = P::new();
    let b = p.add_variable_block(BlockKind::Psd(2));
    let t = v(&mut p);
    p.add_equality(LinExpr::var(b.entry(1, 0)).offset(-1.0));
    p.add_soc(vec![t.clone(), LinExpr::var(b.entry(0, 0)), LinExpr::var(b.entry(1, 1))]);
    p.set_objective(t);
    out.push(("mixed_soc_psd", p, std::f64::consts::SQRT_2));

    // min a + b, a >= 0, b >= 1 (SOC), [[a, 1], [1, b]] ⪰ 0
    let mut p = P::new();
    let (a, bb) = (v(&mut p), v(&mut p));
    p.add_nonneg(a.clone());
    p.add_soc(vec![bb.clone(), LinExpr::constant(1.0)]);
    p.add_psd(2, vec![a.clone(), LinExpr::constant(1.0), bb.clone()]);
    p.set_objective(sum(&a, &bb, 1.0));
    out.push(("mixed_lp_soc_psd", p, 2.0));

    out
}

pub fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> HermMatrix<f64> {
    let mut m = HermMatrix::zeros(n);
    for i in 0..n {
        m.set(i, i, Complex64::new(rng.random_range(-2.0..2.0), 0.0));
        for j in 0..i {
            let z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            m.set(i, j, z);
            m.set(j, i, z.conj());
        }
    }
    m
}

pub fn oracle_eigenvalues(m: &HermMatrix<f64>) -> Vec<f64> {
    let n = m.order();
    let dm = DMatrix::from_fn(n, n, |i, j| m.get(i, j));
    let mut ev: Vec<f64> = SymmetricEigen::new(dm).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

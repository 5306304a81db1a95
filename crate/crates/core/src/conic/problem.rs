//! Cone program description.
//!
//! A [`ConicProblem`] minimizes a linear objective over free scalar variables
//! subject to blocks of affine expressions constrained to lie in a cone:
//!
//! ```text
//! minimize    cᵀx + c₀
//! subject to  (a_iᵀx + b_i)_{i ∈ block} ∈ K_block   for every block
//! ```
//!
//! Typed variable blocks (nonnegative, second-order, PSD) are declared with
//! [`ConicProblem::add_variable_block`], which creates the variables together
//! with the identity cone constraint on them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::cones::{tri_index, tri_len, ConeKind};
use super::ConicError;
use crate::scalar::Real;

/// Handle to a scalar decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub usize);

/// Affine expression `Σ coef·x + constant`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinExpr<T> {
    pub terms: Vec<(VarId, T)>,
    pub constant: T,
}

impl<T: Real> LinExpr<T> {
    pub fn zero() -> Self {
        Self {
            terms: Vec::new(),
            constant: T::zero(),
        }
    }

    pub fn constant(c: T) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: VarId) -> Self {
        Self::zero().plus(v, T::one())
    }

    /// Builder-style `self + coef·v`.
    pub fn plus(mut self, v: VarId, coef: T) -> Self {
        self.add_term(v, coef);
        self
    }

    /// Builder-style `self + c`.
    pub fn offset(mut self, c: T) -> Self {
        self.constant += c;
        self
    }

    pub fn add_term(&mut self, v: VarId, coef: T) {
        if coef != T::zero() {
            self.terms.push((v, coef));
        }
    }

    pub fn add_expr(&mut self, other: &LinExpr<T>, scale: T) {
        for &(v, c) in &other.terms {
            self.add_term(v, c * scale);
        }
        self.constant += other.constant * scale;
    }

    pub fn scaled(&self, s: T) -> Self {
        let mut out = Self::zero();
        out.add_expr(self, s);
        out
    }

    pub fn negated(&self) -> Self {
        self.scaled(-T::one())
    }

    pub fn eval(&self, x: &[T]) -> T {
        self.terms
            .iter()
            .fold(self.constant, |acc, &(v, c)| acc + c * x[v.0])
    }

    /// Merge repeated variables and drop zero coefficients; terms end up sorted.
    pub fn compact(&self) -> Self {
        let mut terms = self.terms.clone();
        terms.sort_by_key(|t| t.0);
        let mut out: Vec<(VarId, T)> = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|t| t.1 != T::zero());
        Self {
            terms: out,
            constant: self.constant,
        }
    }
}

/// One cone constraint: the listed affine rows must lie in `kind`.
///
/// For `Psd { order }` the rows are the lower-triangular entries of the
/// symmetric matrix, row by row: `(0,0), (1,0), (1,1), (2,0), ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeConstraint<T> {
    pub kind: ConeKind,
    pub rows: Vec<LinExpr<T>>,
}

/// Shape of a typed variable block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Free(usize),
    NonNeg(usize),
    SecondOrder(usize),
    /// Symmetric PSD matrix of the given order; one variable per
    /// lower-triangular entry.
    Psd(usize),
}

/// A group of variables created together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarBlock {
    pub kind: BlockKind,
    pub first: usize,
    pub len: usize,
    /// Index of the cone constraint created for the block, if any.
    pub constraint: Option<ConstraintId>,
}

impl VarBlock {
    pub fn var(&self, k: usize) -> VarId {
        assert!(k < self.len, "variable index {k} outside block of {}", self.len);
        VarId(self.first + k)
    }

    /// Variable holding matrix entry `(i, j)` of a PSD block (symmetric access).
    pub fn entry(&self, i: usize, j: usize) -> VarId {
        match self.kind {
            BlockKind::Psd(order) => {
                assert!(i < order && j < order);
                self.var(tri_index(i, j))
            }
            _ => panic!("entry() on a non-PSD block"),
        }
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> + '_ {
        (self.first..self.first + self.len).map(VarId)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConstraintId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProblem<T> {
    n_vars: usize,
    blocks: Vec<VarBlock>,
    objective: LinExpr<T>,
    constraints: Vec<ConeConstraint<T>>,
}

impl<T: Real> Default for ConicProblem<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ConicProblem<T> {
    pub fn new() -> Self {
        Self {
            n_vars: 0,
            blocks: Vec::new(),
            objective: LinExpr::zero(),
            constraints: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n_vars
    }

    pub fn objective(&self) -> &LinExpr<T> {
        &self.objective
    }

    pub fn constraints(&self) -> &[ConeConstraint<T>] {
        &self.constraints
    }

    pub fn blocks(&self) -> &[VarBlock] {
        &self.blocks
    }

    /// Add a single free variable.
    pub fn add_var(&mut self) -> VarId {
        self.add_variable_block(BlockKind::Free(1)).var(0)
    }

    pub fn add_variable_block(&mut self, kind: BlockKind) -> VarBlock {
        let len = match kind {
            BlockKind::Free(n) | BlockKind::NonNeg(n) | BlockKind::SecondOrder(n) => n,
            BlockKind::Psd(order) => tri_len(order),
        };
        let first = self.n_vars;
        self.n_vars += len;
        let rows: Vec<LinExpr<T>> = (first..first + len).map(|i| LinExpr::var(VarId(i))).collect();
        let constraint = match kind {
            BlockKind::Free(_) => None,
            BlockKind::NonNeg(_) => Some(self.push(ConeKind::NonNeg, rows)),
            BlockKind::SecondOrder(_) => Some(self.push(ConeKind::SecondOrder, rows)),
            BlockKind::Psd(order) => Some(self.push(ConeKind::Psd { order }, rows)),
        };
        let block = VarBlock {
            kind,
            first,
            len,
            constraint,
        };
        self.blocks.push(block);
        block
    }

    fn push(&mut self, kind: ConeKind, rows: Vec<LinExpr<T>>) -> ConstraintId {
        self.constraints.push(ConeConstraint { kind, rows });
        ConstraintId(self.constraints.len() - 1)
    }

    /// `expr = 0`.
    pub fn add_equality(&mut self, expr: LinExpr<T>) -> ConstraintId {
        self.push(ConeKind::Zero, vec![expr])
    }

    /// `expr ≥ 0`.
    pub fn add_nonneg(&mut self, expr: LinExpr<T>) -> ConstraintId {
        self.push(ConeKind::NonNeg, vec![expr])
    }

    /// `rows[0] ≥ ‖rows[1..]‖₂`.
    pub fn add_soc(&mut self, rows: Vec<LinExpr<T>>) -> ConstraintId {
        self.push(ConeKind::SecondOrder, rows)
    }

    /// Lower-triangular rows of a symmetric matrix that must be PSD.
    pub fn add_psd(&mut self, order: usize, rows: Vec<LinExpr<T>>) -> ConstraintId {
        self.push(ConeKind::Psd { order }, rows)
    }

    pub fn add_constraint(&mut self, constraint: ConeConstraint<T>) -> ConstraintId {
        self.constraints.push(constraint);
        ConstraintId(self.constraints.len() - 1)
    }

    pub fn set_objective(&mut self, objective: LinExpr<T>) {
        self.objective = objective;
    }

    pub fn add_objective(&mut self, expr: &LinExpr<T>) {
        self.objective.add_expr(expr, T::one());
    }

    pub fn validate(&self) -> Result<(), ConicError> {
        let check_expr = |e: &LinExpr<T>, what: &str| -> Result<(), ConicError> {
            for &(v, c) in &e.terms {
                if v.0 >= self.n_vars {
                    return Err(ConicError::UnknownVariable {
                        var: v.0,
                        n_vars: self.n_vars,
                        location: what.to_string(),
                    });
                }
                if !c.is_finite() {
                    return Err(ConicError::NonFinite(what.to_string()));
                }
            }
            if !e.constant.is_finite() {
                return Err(ConicError::NonFinite(what.to_string()));
            }
            Ok(())
        };
        check_expr(&self.objective, "objective")?;
        for (k, con) in self.constraints.iter().enumerate() {
            let expected = match con.kind {
                ConeKind::Zero | ConeKind::NonNeg => None,
                ConeKind::SecondOrder => {
                    if con.rows.len() < 2 {
                        return Err(ConicError::BadDimension {
                            constraint: k,
                            reason: format!(
                                "second-order cone needs dimension >= 2, got {}",
                                con.rows.len()
                            ),
                        });
                    }
                    None
                }
                ConeKind::Psd { order } => {
                    if order == 0 {
                        return Err(ConicError::BadDimension {
                            constraint: k,
                            reason: "PSD block of order 0".into(),
                        });
                    }
                    Some(tri_len(order))
                }
            };
            if let Some(len) = expected {
                if con.rows.len() != len {
                    return Err(ConicError::BadDimension {
                        constraint: k,
                        reason: format!("expected {len} rows, got {}", con.rows.len()),
                    });
                }
            }
            if con.rows.is_empty() {
                return Err(ConicError::BadDimension {
                    constraint: k,
                    reason: "empty constraint".into(),
                });
            }
            for (r, row) in con.rows.iter().enumerate() {
                check_expr(row, &format!("constraint {k} row {r}"))?;
            }
        }
        Ok(())
    }

    /// Deterministic text rendering: one constraint per line.
    pub fn dump(&self) -> String {
        let fmt_expr = |e: &LinExpr<T>| -> String {
            let c = e.compact();
            let mut s = String::new();
            for (v, coef) in &c.terms {
                let _ = write!(s, "{:+e}*x{} ", coef.to_f64_lossy(), v.0);
            }
            let _ = write!(s, "{:+e}", c.constant.to_f64_lossy());
            s
        };
        let mut out = String::new();
        let _ = writeln!(out, "vars {}", self.n_vars);
        let _ = writeln!(out, "minimize {}", fmt_expr(&self.objective));
        for (k, con) in self.constraints.iter().enumerate() {
            let tag = match con.kind {
                ConeKind::Zero => "zero".to_string(),
                ConeKind::NonNeg => "nonneg".to_string(),
                ConeKind::SecondOrder => format!("soc{}", con.rows.len()),
                ConeKind::Psd { order } => format!("psd{order}"),
            };
            let rows: Vec<String> = con.rows.iter().map(fmt_expr).collect();
            let _ = writeln!(out, "c{k} {tag} [{}]", rows.join(" ; "));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_block_entries_are_symmetric() {
        let mut p = ConicProblem::<f64>::new();
        let b = p.add_variable_block(BlockKind::Psd(3));
        assert_eq!(b.len, 6);
        assert_eq!(b.entry(2, 1), b.entry(1, 2));
        assert_eq!(p.constraints().len(), 1);
        p.validate().unwrap();
    }

    #[test]
    fn validate_rejects_unknown_variable() {
        let mut p = ConicProblem::<f64>::new();
        p.add_var();
        p.add_nonneg(LinExpr::var(VarId(3)));
        assert!(matches!(p.validate(), Err(ConicError::UnknownVariable { .. })));
    }

    #[test]
    fn validate_rejects_short_soc() {
        let mut p = ConicProblem::<f64>::new();
        let x = p.add_var();
        p.add_soc(vec![LinExpr::var(x)]);
        assert!(matches!(p.validate(), Err(ConicError::BadDimension { .. })));
    }

    #[test]
    fn dump_is_deterministic() {
        let mut p = ConicProblem::<f64>::new();
        let x = p.add_var();
        let y = p.add_var();
        p.set_objective(LinExpr::var(x).plus(y, 2.0));
        p.add_nonneg(LinExpr::var(x).offset(-1.0));
        let a = p.dump();
        assert_eq!(a, p.clone().dump());
        assert!(a.contains("c0 nonneg"));
    }

    #[test]
    fn compact_merges_terms() {
        let e = LinExpr::<f64>::var(VarId(2)).plus(VarId(1), 1.0).plus(VarId(2), -1.0);
        let c = e.compact();
        assert_eq!(c.terms, vec![(VarId(1), 1.0)]);
    }
}

//! Rank-one recovery of the slot voltage by iterated eigenvector penalties.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::{build_slot_problem, generation_cost, slot_violation, BuildError};
use crate::conic::{max_eigpair, solve, ConicError, HermMatrix, SolveStatus, SolverSettings};
use crate::grid::{GridCase, ScenarioProfiles};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rank1Config {
    pub lambda: f64,
    /// Relative residual threshold `(Tr - λ_max) / max(1, Tr)`.
    pub eps: f64,
    pub max_iters: usize,
    /// `λ` may grow to `2^max_doublings` times its initial value.
    pub max_doublings: u32,
    /// Tolerance on the slot constraints evaluated at the extracted voltage.
    pub verify_tol: f64,
    pub solver: SolverSettings<f64>,
}

impl Default for Rank1Config {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            eps: 1e-4,
            max_iters: 50,
            max_doublings: 6,
            verify_tol: 1e-5,
            solver: SolverSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rank1Iterate {
    pub kappa: usize,
    /// Relative residual `(Tr - λ_max) / max(1, Tr)`.
    pub rank_residual: f64,
    /// Generation cost of the slot.
    pub objective: f64,
    /// `objective + λ (Tr - λ_max)` with the `λ` of this iteration.
    pub penalized: f64,
    pub lambda_used: f64,
}

/// A slot operating point: matrix variable and dispatch.
#[derive(Debug, Clone)]
pub struct SlotPoint {
    pub w: HermMatrix<f64>,
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Rank1Outcome {
    pub v: Vec<Complex64>,
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    pub objective: f64,
    /// Largest slot-constraint violation at `v`.
    pub violation: f64,
    pub iterates: Vec<Rank1Iterate>,
}

#[derive(Debug, Error)]
pub enum Rank1Error {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Conic(#[from] ConicError),
    #[error("rank-one subproblem {kappa} ended with status {status:?}")]
    Solver { kappa: usize, status: SolveStatus },
    #[error("rank residual {residual:.3e} above tolerance {eps:.1e}")]
    NotRankOne { residual: f64, eps: f64 },
    #[error("no rank-one point after {iters} iterations (best residual {best_residual:.3e})")]
    NonConvergence {
        iters: usize,
        best_residual: f64,
        best: Box<SlotPoint>,
        iterates: Vec<Rank1Iterate>,
    },
}

/// `(Tr - λ_max, λ_max, unit top eigenvector)`; the residual is clamped at zero.
pub fn rank_residual(w: &HermMatrix<f64>) -> Result<(f64, f64, Vec<Complex64>), ConicError> {
    let (lmax, vec) = max_eigpair(w)?;
    Ok(((w.trace() - lmax).max(0.0), lmax, vec))
}

pub fn relative_residual(w: &HermMatrix<f64>) -> Result<f64, ConicError> {
    let (r, _, _) = rank_residual(w)?;
    Ok(r / w.trace().max(1.0))
}

/// Pass/fail of the relative rank test for each matrix.
pub fn rank_check(blocks: &[HermMatrix<f64>], eps: f64) -> Result<Vec<bool>, ConicError> {
    blocks
        .iter()
        .map(|w| relative_residual(w).map(|r| r <= eps))
        .collect()
}

/// `V = √λ_max w_max`, refused when the relative rank residual exceeds `eps`.
pub fn extract_voltage(w: &HermMatrix<f64>, eps: f64) -> Result<Vec<Complex64>, Rank1Error> {
    let (r, lmax, vec) = rank_residual(w)?;
    let residual = r / w.trace().max(1.0);
    if residual > eps {
        return Err(Rank1Error::NotRankOne { residual, eps });
    }
    let scale = lmax.max(0.0).sqrt();
    Ok(vec.into_iter().map(|c| c * scale).collect())
}

/// Iterate the eigenvector-penalized slot problem from `init` until `W` is rank one and its
/// factor satisfies the slot constraints.
pub fn solve_rank1(
    grid: &GridCase,
    profiles: &ScenarioProfiles,
    slot: usize,
    station_load: &[f64],
    init: &SlotPoint,
    config: &Rank1Config,
) -> Result<Rank1Outcome, Rank1Error> {
    let verify = |point: &SlotPoint| -> Result<Option<(Vec<Complex64>, f64)>, Rank1Error> {
        match extract_voltage(&point.w, config.eps) {
            Ok(v) => {
                let viol = slot_violation(grid, profiles, slot, station_load, &v, &point.pg, &point.qg)?;
                Ok((viol <= config.verify_tol).then_some((v, viol)))
            }
            Err(Rank1Error::NotRankOne { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let finish = |point: SlotPoint, v: Vec<Complex64>, violation: f64, iterates: Vec<Rank1Iterate>| Rank1Outcome {
        objective: generation_cost(grid, &point.pg),
        v,
        pg: point.pg,
        qg: point.qg,
        violation,
        iterates,
    };

    let mut lambda = config.lambda;
    let lambda_cap = config.lambda * 2f64.powi(config.max_doublings as i32);
    let mut point = init.clone();
    let mut iterates = Vec::new();
    if let Some((v, viol)) = verify(&point)? {
        return Ok(finish(point, v, viol, iterates));
    }
    let (r0, _, _) = rank_residual(&point.w)?;
    let mut prev_residual = r0 / point.w.trace().max(1.0);
    let mut best = (prev_residual, point.clone());
    let objective = generation_cost(grid, &point.pg);
    iterates.push(Rank1Iterate {
        kappa: 0,
        rank_residual: prev_residual,
        objective,
        penalized: objective + lambda * r0,
        lambda_used: lambda,
    });

    for kappa in 1..=config.max_iters {
        let (_, _, w_top) = rank_residual(&point.w)?;
        let (problem, vars) = build_slot_problem(grid, profiles, slot, station_load, Some((lambda, &w_top)))?;
        let sol = solve(&problem, &config.solver)?;
        if !sol.is_usable() {
            return Err(Rank1Error::Solver { kappa, status: sol.status });
        }
        point = SlotPoint {
            w: vars.w.extract(&sol.x),
            pg: vars.pg.iter().map(|v| sol.x[v.0]).collect(),
            qg: vars.qg.iter().map(|v| sol.x[v.0]).collect(),
        };
        let (r, _, _) = rank_residual(&point.w)?;
        let residual = r / point.w.trace().max(1.0);
        let objective = generation_cost(grid, &point.pg);
        iterates.push(Rank1Iterate {
            kappa,
            rank_residual: residual,
            objective,
            penalized: objective + lambda * r,
            lambda_used: lambda,
        });
        log::debug!("rank1 slot={slot} kappa={kappa}: residual {residual:.3e} objective {objective:.9}");
        if residual < best.0 {
            best = (residual, point.clone());
        }
        if let Some((v, viol)) = verify(&point)? {
            return Ok(finish(point, v, viol, iterates));
        }
        if residual > 0.5 * prev_residual && lambda < lambda_cap {
            lambda = (2.0 * lambda).min(lambda_cap);
        }
        prev_residual = residual;
    }
    Err(Rank1Error::NonConvergence {
        iters: config.max_iters,
        best_residual: best.0,
        best: Box::new(best.1),
        iterates,
    })
}

/// Whether the penalized objective is nonincreasing over stretches of equal `λ`.
pub fn penalized_descent_holds(iterates: &[Rank1Iterate], rel_tol: f64) -> bool {
    iterates
        .windows(2)
        .filter(|w| w[0].lambda_used == w[1].lambda_used)
        .all(|w| w[1].penalized <= w[0].penalized + rel_tol * w[0].penalized.abs().max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::load_case;
    use crate::mpc::{relaxed_slot, MpcConfig};

    fn diag(values: &[f64]) -> HermMatrix<f64> {
        let mut w = HermMatrix::zeros(values.len());
        for (k, &v) in values.iter().enumerate() {
            w.set(k, k, Complex64::new(v, 0.0));
        }
        w
    }

    #[test]
    fn recovers_factor_up_to_phase() {
        let v = [Complex64::new(1.0, 0.0), Complex64::from_polar(0.9, -0.1)];
        let got = extract_voltage(&HermMatrix::outer(&v), 1e-4).unwrap();
        for (a, b) in got.iter().zip(&v) {
            assert!((a - b).norm() < 1e-12);
        }
        // A rotated factor comes back with the first entry real positive.
        let rot = Complex64::from_polar(1.0, 0.7);
        let w: Vec<_> = v.iter().map(|z| z * rot).collect();
        let got = extract_voltage(&HermMatrix::outer(&w), 1e-4).unwrap();
        assert!(got[0].im.abs() < 1e-12 && got[0].re > 0.0);
    }

    #[test]
    fn identity_is_refused() {
        match extract_voltage(&diag(&[1.0, 1.0]), 1e-4) {
            Err(Rank1Error::NotRankOne { residual, .. }) => assert!((residual - 0.5).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn residual_of_diagonal() {
        let (r, lmax, _) = rank_residual(&diag(&[2.0, 1.0])).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        assert!((lmax - 2.0).abs() < 1e-12);
        assert_eq!(rank_check(&[diag(&[1.0, 0.0]), diag(&[1.0, 1.0])], 1e-4).unwrap(), vec![true, false]);
    }

    #[test]
    fn already_rank_one_needs_no_iteration() {
        let (grid, profiles) = load_case(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/case4_demo.json")).unwrap();
        let load = vec![0.0; grid.bus_count()];
        let init = relaxed_slot(&grid, &profiles, 1, &load, &MpcConfig::default()).unwrap();
        let out = solve_rank1(&grid, &profiles, 1, &load, &init, &Rank1Config::default()).unwrap();
        assert!(out.iterates.is_empty());
        let vv = HermMatrix::outer(&out.v);
        assert!(vv.distance(&init.w) <= 1e-8 * init.w.trace().max(1.0), "{}", vv.distance(&init.w));
    }

    #[test]
    fn mesh_slot_converges_with_descent() {
        let (grid, profiles) = load_case(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/case4_meshgap.json")).unwrap();
        let load = vec![0.0; grid.bus_count()];
        let init = relaxed_slot(&grid, &profiles, 1, &load, &MpcConfig::default()).unwrap();
        assert!(relative_residual(&init.w).unwrap() > 1e-4);
        let config = Rank1Config::default();
        let out = solve_rank1(&grid, &profiles, 1, &load, &init, &config).unwrap();
        assert!(out.iterates.len() <= config.max_iters + 1);
        assert!(out.violation <= config.verify_tol);
        assert!(penalized_descent_holds(&out.iterates, 1e-9));
        let lower = generation_cost(&grid, &init.pg);
        assert!(out.objective >= lower - 1e-6 && out.objective <= lower * 1.002);
        for (b, v) in grid.buses.iter().zip(&out.v) {
            assert!(v.norm() >= b.v_min - 1e-6 && v.norm() <= b.v_max + 1e-6);
        }
    }
}

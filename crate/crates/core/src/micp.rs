//! Penalty path-following for the binary charging decisions over the MPC horizon.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::{build_horizon, generation_cost, BuildError, HorizonIndex, PenaltyConfig, TauMode};
use crate::conic::{solve, ConicError, ConicProblem, ConicSolution, SolveStatus, SolverSettings};
use crate::fleet::FleetState;
use crate::grid::{GridCase, ScenarioProfiles};
use crate::penalty::{binary_gap, g1_value, g_value};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicpConfig {
    pub penalty: PenaltyConfig,
    pub max_iters: usize,
    /// Factor applied to `μ` when the penalized objective stops decreasing.
    pub mu_growth: f64,
    pub max_escalations: usize,
    pub solver: SolverSettings<f64>,
}

impl Default for MicpConfig {
    fn default() -> Self {
        Self {
            penalty: PenaltyConfig::default(),
            max_iters: 100,
            mu_growth: 5.0,
            max_escalations: 4,
            solver: SolverSettings::default(),
        }
    }
}

/// One outer iteration. `kappa = 0` is the relaxed starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicpIterate {
    pub kappa: usize,
    pub mu: f64,
    /// Penalized objective `F + μ (1/g(τ) - 1/τ̄)` at the iterate.
    pub phi: f64,
    /// Value of the convex surrogate problem that produced the iterate.
    pub phi_model: Option<f64>,
    pub binary_gap: f64,
    pub solver_status: SolveStatus,
    #[serde(skip)]
    pub tau: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum MicpError {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Conic(#[from] ConicError),
    #[error("relaxed problem is infeasible")]
    Infeasible,
    #[error("subproblem at iteration {kappa} ended with status {status:?}")]
    Solver { kappa: usize, status: SolveStatus },
    #[error("penalized objective stalled at iteration {kappa} with binary gap {binary_gap:.3e} (mu = {mu}); try a larger mu")]
    Stall { kappa: usize, binary_gap: f64, mu: f64 },
    #[error("no binary point after {iters} iterations, binary gap {binary_gap:.3e}")]
    MaxIterations { iters: usize, binary_gap: f64 },
    #[error("rounded decisions of PEV {id} sum to {got}, expected {expected}")]
    Rounding { id: usize, got: usize, expected: usize },
}

#[derive(Debug, Clone)]
pub struct MicpOutcome {
    pub index: HorizonIndex,
    /// Rounded decisions, ordered as `index.taus`.
    pub tau: Vec<f64>,
    /// Binary gap of the last iterate before rounding.
    pub final_gap: f64,
    /// Solution of the horizon problem with the rounded decisions pinned.
    pub solution: ConicSolution<f64>,
    /// Generation plus charging cost of the rounded point.
    pub objective: f64,
    pub iterates: Vec<MicpIterate>,
}

impl MicpOutcome {
    /// Slot-`t` decisions `(record index, τ)`.
    pub fn first_slot(&self) -> Vec<(usize, f64)> {
        self.index.first_slot_taus(&self.tau)
    }
}

fn clip(tau: Vec<f64>) -> Vec<f64> {
    tau.into_iter().map(|t| t.clamp(0.0, 1.0)).collect()
}

/// Generation plus charging cost evaluated directly from a primal point.
pub fn horizon_cost(grid: &GridCase, index: &HorizonIndex, x: &[f64]) -> f64 {
    let gen: f64 = index
        .slots
        .iter()
        .map(|s| generation_cost(grid, &s.pg.iter().map(|v| x[v.0]).collect::<Vec<_>>()))
        .sum();
    gen + index.charge_cost.eval(x)
}

fn penalized(cost: f64, tau: &[f64], l: f64, mu: f64, tau_bar: usize) -> f64 {
    if tau_bar == 0 {
        return cost;
    }
    match g1_value(tau, l, tau_bar as f64) {
        Ok(g1) => cost + mu * g1,
        Err(_) => f64::INFINITY,
    }
}

fn solve_checked(
    problem: &ConicProblem<f64>,
    settings: &SolverSettings<f64>,
    kappa: usize,
) -> Result<ConicSolution<f64>, MicpError> {
    let sol = solve(problem, settings)?;
    match sol.status {
        _ if sol.is_usable() => Ok(sol),
        SolveStatus::Infeasible if kappa == 0 => Err(MicpError::Infeasible),
        status => Err(MicpError::Solver { kappa, status }),
    }
}

/// Drive the horizon decisions of the fleet at its clock to a binary point.
pub fn solve_micp(
    grid: &GridCase,
    profiles: &ScenarioProfiles,
    state: &FleetState,
    config: &MicpConfig,
) -> Result<MicpOutcome, MicpError> {
    config.penalty.validate()?;
    let l = config.penalty.l;
    let eps = config.penalty.eps;
    let mut mu = config.penalty.mu;

    let (problem, index) = build_horizon(grid, profiles, state, TauMode::Relaxed)?;
    let sol = solve_checked(&problem, &config.solver, 0)?;
    let tau_bar = index.tau_bar_total();
    let mut tau = clip(index.tau_values(&sol.x));
    let mut cost = horizon_cost(grid, &index, &sol.x);
    let mut phi = penalized(cost, &tau, l, mu, tau_bar);
    let mut gap = binary_gap(&tau, l);
    let mut iterates = vec![MicpIterate {
        kappa: 0,
        mu,
        phi,
        phi_model: None,
        binary_gap: gap,
        solver_status: sol.status,
        tau: tau.clone(),
    }];
    log::debug!("micp t={} start: cost {cost:.6} gap {gap:.3e}", state.clock);

    let mut escalations = 0;
    let mut kappa = 0;
    while gap > eps {
        if kappa == config.max_iters {
            return Err(MicpError::MaxIterations { iters: kappa, binary_gap: gap });
        }
        kappa += 1;
        let cfg = PenaltyConfig { mu, ..config.penalty };
        let (problem, idx) = build_horizon(
            grid,
            profiles,
            state,
            TauMode::Penalized { tau_prev: &tau, config: cfg },
        )?;
        let sol = solve_checked(&problem, &config.solver, kappa)?;
        let next = clip(idx.tau_values(&sol.x));
        cost = horizon_cost(grid, &idx, &sol.x);
        let phi_next = penalized(cost, &next, l, mu, tau_bar);
        gap = binary_gap(&next, l);
        iterates.push(MicpIterate {
            kappa,
            mu,
            phi: phi_next,
            phi_model: Some(sol.objective),
            binary_gap: gap,
            solver_status: sol.status,
            tau: next.clone(),
        });
        log::debug!("micp t={} kappa={kappa}: phi {phi_next:.9} gap {gap:.3e}", state.clock);
        tau = next;
        if gap <= eps {
            break;
        }
        if phi - phi_next < 1e-9 * phi.abs().max(1.0) {
            if escalations == config.max_escalations {
                return Err(MicpError::Stall { kappa, binary_gap: gap, mu });
            }
            escalations += 1;
            mu *= config.mu_growth;
            log::info!("micp t={}: stalled, raising mu to {mu}", state.clock);
            phi = penalized(cost, &tau, l, mu, tau_bar);
        } else {
            phi = phi_next;
        }
    }

    let rounded: Vec<f64> = tau.iter().map(|&t| if t >= 0.5 { 1.0 } else { 0.0 }).collect();
    for &(i, needed) in &index.demands {
        let got = index
            .taus
            .iter()
            .zip(&rounded)
            .filter(|(tv, &v)| tv.pev == i && v == 1.0)
            .count();
        if got != needed {
            return Err(MicpError::Rounding {
                id: state.records[i].id,
                got,
                expected: needed,
            });
        }
    }
    debug_assert_eq!(g_value(&rounded, l), tau_bar as f64);

    let (problem, index) = build_horizon(grid, profiles, state, TauMode::Fixed(&rounded))?;
    let solution = solve_checked(&problem, &config.solver, kappa + 1)?;
    let objective = horizon_cost(grid, &index, &solution.x);
    Ok(MicpOutcome {
        index,
        tau: rounded,
        final_gap: gap,
        solution,
        objective,
        iterates,
    })
}

/// Whether `phi` is nonincreasing within each fixed-`μ` stretch of the iterates.
pub fn descent_holds(iterates: &[MicpIterate], rel_tol: f64) -> bool {
    iterates
        .windows(2)
        .filter(|w| w[0].mu == w[1].mu)
        .all(|w| w[1].phi <= w[0].phi + rel_tol * w[0].phi.abs().max(1.0))
}

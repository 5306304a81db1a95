//! Assembly of the horizon and snapshot cone programs from the grid, profiles and fleet.

use num_complex::Complex64;
use thiserror::Error;

use crate::conic::{
    hyperbolic, quadratic_epigraph, ConicError, ConicProblem, HermMatrix, HermitianVars, LinExpr, VarId,
};
use crate::fleet::FleetState;
use crate::grid::{to_per_unit, GridCase, GridError, ScenarioProfiles};
use crate::penalty::surrogate;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("PEV {id} needs {needed} more slots but only {available} remain before departure")]
    InfeasibleDemand { id: usize, needed: usize, available: usize },
    #[error("PEV {id} is at bus {bus} which is not a charging station")]
    NotAStation { id: usize, bus: usize },
    #[error("slot {slot} is outside the profile horizon 1..={count}")]
    Slot { slot: usize, count: usize },
    #[error("penalty configuration: {0}")]
    Config(String),
    #[error("previous iterate has {got} charging entries, expected {expected}")]
    TauLength { got: usize, expected: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Conic(#[from] ConicError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    pub mu: f64,
    /// Exponent of the binariness penalty, `L > 1`.
    pub l: f64,
    pub lambda: f64,
    pub eps: f64,
    pub trust_floor: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            mu: 10.0,
            l: 1.5,
            lambda: 1.0,
            eps: 1e-4,
            trust_floor: 1e-6,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<(), BuildError> {
        let checks = [
            (self.mu > 0.0, "mu must be positive"),
            (self.l > 1.0, "L must exceed 1"),
            (self.lambda > 0.0, "lambda must be positive"),
            (self.eps > 0.0, "eps must be positive"),
            (self.trust_floor > 0.0, "trust_floor must be positive"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(BuildError::Config(msg.to_string())),
            None => Ok(()),
        }
    }
}

/// Variables of one slot.
#[derive(Debug, Clone)]
pub struct SlotVars {
    pub slot: usize,
    pub w: HermitianVars,
    /// Per generator, in `GridCase::generators` order.
    pub pg: Vec<VarId>,
    pub qg: Vec<VarId>,
    /// Generation cost of the slot (epigraph variables plus linear parts).
    pub gen_cost: LinExpr<f64>,
}

/// A charging decision variable.
#[derive(Debug, Clone, Copy)]
pub struct TauVar {
    /// Record index in the fleet.
    pub pev: usize,
    pub slot: usize,
    pub var: VarId,
}

#[derive(Debug, Clone)]
pub struct HorizonIndex {
    pub t: usize,
    /// Last slot of the horizon.
    pub end: usize,
    pub slots: Vec<SlotVars>,
    /// Charging variables ordered by PEV, then slot.
    pub taus: Vec<TauVar>,
    /// `(record index, τ̄(t))` for each active PEV.
    pub demands: Vec<(usize, usize)>,
    pub charge_cost: LinExpr<f64>,
    /// Penalty epigraph `s` when the problem is penalized.
    pub penalty_s: Option<VarId>,
}

impl HorizonIndex {
    pub fn tau_bar_total(&self) -> usize {
        self.demands.iter().map(|d| d.1).sum()
    }

    pub fn tau_values(&self, x: &[f64]) -> Vec<f64> {
        self.taus.iter().map(|tv| x[tv.var.0]).collect()
    }

    pub fn slot(&self, slot: usize) -> &SlotVars {
        &self.slots[slot - self.t]
    }

    /// Decisions for slot `t` as `(record index, value)`.
    pub fn first_slot_taus(&self, tau: &[f64]) -> Vec<(usize, f64)> {
        self.taus
            .iter()
            .zip(tau)
            .filter(|(tv, _)| tv.slot == self.t)
            .map(|(tv, &v)| (tv.pev, v))
            .collect()
    }

    /// Generation plus charging cost read from the conic variables.
    pub fn cost_expr(&self) -> LinExpr<f64> {
        let mut e = self.charge_cost.clone();
        for s in &self.slots {
            e.add_expr(&s.gen_cost, 1.0);
        }
        e
    }
}

/// Station load of each bus in per-unit as an affine expression.
pub type BusLoad = Vec<LinExpr<f64>>;

/// The two balance rows (real, reactive) per bus; each expression must vanish.
///
/// `ev_load[k]` is the charging demand at bus `k`. Generator terms are added only where a
/// generator exists.
pub fn balance_rows(
    grid: &GridCase,
    profiles: &ScenarioProfiles,
    slot: usize,
    w: &HermitianVars,
    pg: &[VarId],
    qg: &[VarId],
    ev_load: &BusLoad,
) -> Result<Vec<(LinExpr<f64>, LinExpr<f64>)>, BuildError> {
    let n = grid.bus_count();
    let mut rows = Vec::with_capacity(n);
    for k in 0..n {
        let mut p = LinExpr::zero();
        let mut q = LinExpr::zero();
        for &(m, y) in grid.neighbors(k) {
            // (W_kk - W_km) y*
            p.add_term(w.re_diag(k), y.re);
            p.add_expr(&w.re(k, m), -y.re);
            p.add_expr(&w.im(k, m), -y.im);
            q.add_term(w.re_diag(k), -y.im);
            q.add_expr(&w.re(k, m), y.im);
            q.add_expr(&w.im(k, m), -y.re);
        }
        let (pl, ql) = profiles.scaled_load(k, slot)?;
        p.constant += pl;
        q.constant += ql;
        p.add_expr(&ev_load[k], 1.0);
        if let Some(g) = grid.generator_at(k) {
            p.add_term(pg[g], -1.0);
            q.add_term(qg[g], -1.0);
        }
        rows.push((p, q));
    }
    Ok(rows)
}

/// Voltage, angle and generation limit rows, all of the form `expr >= 0`.
pub fn static_rows(grid: &GridCase, w: &HermitianVars, pg: &[VarId], qg: &[VarId]) -> Vec<LinExpr<f64>> {
    let mut rows = Vec::new();
    for (k, b) in grid.buses.iter().enumerate() {
        rows.push(LinExpr::var(w.re_diag(k)).offset(-b.v_min * b.v_min));
        rows.push(LinExpr::constant(b.v_max * b.v_max).plus(w.re_diag(k), -1.0));
    }
    for l in &grid.lines {
        let tan = l.theta_max.tan();
        let re = w.re::<f64>(l.from, l.to).scaled(tan);
        let im = w.im::<f64>(l.from, l.to);
        let mut lo = re.clone();
        lo.add_expr(&im, -1.0);
        let mut hi = re;
        hi.add_expr(&im, 1.0);
        rows.push(lo);
        rows.push(hi);
    }
    for (g, spec) in grid.generators.iter().enumerate() {
        rows.push(LinExpr::var(pg[g]).offset(-spec.p_min));
        rows.push(LinExpr::constant(spec.p_max).plus(pg[g], -1.0));
        rows.push(LinExpr::var(qg[g]).offset(-spec.q_min));
        rows.push(LinExpr::constant(spec.q_max).plus(qg[g], -1.0));
    }
    rows
}

/// Declare one slot: PSD `W`, generator outputs, cost epigraphs and all network rows.
fn add_slot(
    problem: &mut ConicProblem<f64>,
    grid: &GridCase,
    profiles: &ScenarioProfiles,
    slot: usize,
    ev_load: &BusLoad,
) -> Result<SlotVars, BuildError> {
    let n = grid.bus_count();
    let w = HermitianVars::new_psd(problem, n);
    let ng = grid.generators.len();
    let pg: Vec<VarId> = (0..ng).map(|_| problem.add_var()).collect();
    let qg: Vec<VarId> = (0..ng).map(|_| problem.add_var()).collect();
    for (p, q) in balance_rows(grid, profiles, slot, &w, &pg, &qg, ev_load)? {
        problem.add_equality(p);
        problem.add_equality(q);
    }
    for row in static_rows(grid, &w, &pg, &qg) {
        problem.add_nonneg(row);
    }
    let mut gen_cost = LinExpr::zero();
    for (g, spec) in grid.generators.iter().enumerate() {
        let [c2, c1, c0] = spec.cost;
        let p_mw = LinExpr::zero().plus(pg[g], grid.base_mva);
        if c2 > 0.0 {
            let e = problem.add_var();
            quadratic_epigraph(problem, &LinExpr::var(e), &p_mw, c2, c1, c0)?;
            gen_cost.add_term(e, 1.0);
        } else {
            gen_cost.add_expr(&p_mw, c1);
            gen_cost.constant += c0;
        }
    }
    Ok(SlotVars {
        slot,
        w,
        pg,
        qg,
        gen_cost,
    })
}

fn check_slot(profiles: &ScenarioProfiles, slot: usize) -> Result<(), BuildError> {
    if slot == 0 || slot > profiles.slot_count() {
        return Err(BuildError::Slot {
            slot,
            count: profiles.slot_count(),
        });
    }
    Ok(())
}

fn station_index(grid: &GridCase, state: &FleetState, i: usize) -> Result<usize, BuildError> {
    let r = &state.records[i];
    grid.bus_index(r.station)
        .filter(|&k| grid.generator_at(k).is_some_and(|g| grid.generators[g].is_station))
        .ok_or(BuildError::NotAStation { id: r.id, bus: r.station })
}

/// How the charging decisions enter a horizon problem.
#[derive(Debug, Clone)]
pub enum TauMode<'a> {
    /// Boxes and demand rows only.
    Relaxed,
    /// Boxes, demand rows and the concave penalty linearized at the given point.
    Penalized { tau_prev: &'a [f64], config: PenaltyConfig },
    /// Each decision pinned to a value (same ordering as `HorizonIndex::taus`).
    Fixed(&'a [f64]),
}

/// Horizon problem over `[t, Ψ(t)]` for the fleet state at its clock `t`.
pub fn build_horizon(
    grid: &GridCase,
    profiles: &ScenarioProfiles,
    state: &FleetState,
    mode: TauMode<'_>,
) -> Result<(ConicProblem<f64>, HorizonIndex), BuildError> {
    let t = state.clock;
    check_slot(profiles, t)?;
    let active = state.active_set();
    let end = state.horizon().unwrap_or(t).min(profiles.slot_count());
    let mut problem = ConicProblem::new();

    let mut taus = Vec::new();
    let mut demands = Vec::with_capacity(active.len());
    let mut charge_cost = LinExpr::zero();
    let mut ev_loads: Vec<BusLoad> = vec![vec![LinExpr::zero(); grid.bus_count()]; end - t + 1];
    for &i in &active {
        let r = &state.records[i];
        let needed = state.required_slots(i);
        let available = r.departure_slot + 1 - t;
        if needed > available {
            return Err(BuildError::InfeasibleDemand {
                id: r.id,
                needed,
                available,
            });
        }
        let bus = station_index(grid, state, i)?;
        let rate = to_per_unit(r.max_rate_kw, grid.base_mva)?;
        let energy = state.energy_per_slot(i);
        let mut sum = LinExpr::zero();
        for slot in t..=r.departure_slot {
            let var = problem.add_var();
            taus.push(TauVar { pev: i, slot, var });
            problem.add_nonneg(LinExpr::var(var));
            problem.add_nonneg(LinExpr::constant(1.0).plus(var, -1.0));
            sum.add_term(var, 1.0);
            ev_loads[slot - t][bus].add_term(var, rate);
            charge_cost.add_term(var, profiles.price(slot) * energy);
        }
        problem.add_equality(sum.offset(-(needed as f64)));
        demands.push((i, needed));
    }

    let mut slots = Vec::with_capacity(end - t + 1);
    for slot in t..=end {
        slots.push(add_slot(&mut problem, grid, profiles, slot, &ev_loads[slot - t])?);
    }

    let mut index = HorizonIndex {
        t,
        end,
        slots,
        taus,
        demands,
        charge_cost,
        penalty_s: None,
    };
    let mut objective = index.cost_expr();

    match mode {
        TauMode::Relaxed => {}
        TauMode::Fixed(values) => {
            if values.len() != index.taus.len() {
                return Err(BuildError::TauLength {
                    got: values.len(),
                    expected: index.taus.len(),
                });
            }
            for (tv, &v) in index.taus.iter().zip(values) {
                problem.add_equality(LinExpr::var(tv.var).offset(-v));
            }
        }
        TauMode::Penalized { tau_prev, config } => {
            config.validate()?;
            if tau_prev.len() != index.taus.len() {
                return Err(BuildError::TauLength {
                    got: tau_prev.len(),
                    expected: index.taus.len(),
                });
            }
            let tau_bar = index.tau_bar_total();
            if tau_bar > 0 {
                let sur = surrogate(tau_prev, config.l);
                let mut g = LinExpr::constant(sur.constant);
                for (tv, &c) in index.taus.iter().zip(&sur.coeffs) {
                    g.add_term(tv.var, c);
                }
                let s = problem.add_var();
                hyperbolic(&mut problem, &LinExpr::var(s), &g);
                problem.add_nonneg(g.offset(-config.trust_floor));
                objective.add_term(s, config.mu);
                objective.constant -= config.mu / tau_bar as f64;
                index.penalty_s = Some(s);
            }
        }
    }
    problem.set_objective(objective);
    Ok((problem, index))
}

/// Per-bus charging load from fixed slot decisions `(record index, τ)`.
pub fn fixed_station_load(
    grid: &GridCase,
    state: &FleetState,
    decisions: &[(usize, f64)],
) -> Result<Vec<f64>, BuildError> {
    let mut load = vec![0.0; grid.bus_count()];
    for &(i, tau) in decisions {
        let bus = station_index(grid, state, i)?;
        load[bus] += to_per_unit(state.records[i].max_rate_kw, grid.base_mva)? * tau;
    }
    Ok(load)
}

/// Single-slot problem with a fixed charging load (per-unit, per bus).
///
/// With `rank_penalty = Some((λ, w))` the objective gains `λ (Tr W - wᴴ W w)`.
pub fn build_slot_problem(
    grid: &GridCase,
    profiles: &ScenarioProfiles,
    slot: usize,
    station_load: &[f64],
    rank_penalty: Option<(f64, &[Complex64])>,
) -> Result<(ConicProblem<f64>, SlotVars), BuildError> {
    check_slot(profiles, slot)?;
    let mut problem = ConicProblem::new();
    let loads: BusLoad = station_load.iter().map(|&l| LinExpr::constant(l)).collect();
    let vars = add_slot(&mut problem, grid, profiles, slot, &loads)?;
    let mut objective = vars.gen_cost.clone();
    if let Some((lambda, w)) = rank_penalty {
        objective.add_expr(&rank_penalty_expr(&vars.w, w), lambda);
    }
    problem.set_objective(objective);
    Ok((problem, vars))
}

/// `Tr W - wᴴ W w` as a linear expression in `W`.
pub fn rank_penalty_expr(w_vars: &HermitianVars, w: &[Complex64]) -> LinExpr<f64> {
    let mut e = w_vars.trace::<f64>();
    e.add_expr(&w_vars.trace_with(&HermMatrix::outer(w)), -1.0);
    e
}

/// Snapshot problem at the fleet clock with binary decisions `τ̂(t)` and the
/// linearized rank penalty around `w_prev`'s top eigenvector.
pub fn build_snapshot_problem(
    grid: &GridCase,
    profiles: &ScenarioProfiles,
    state: &FleetState,
    tau_fixed: &[(usize, f64)],
    w_prev: &HermMatrix<f64>,
    lambda: f64,
) -> Result<(ConicProblem<f64>, SlotVars), BuildError> {
    let load = fixed_station_load(grid, state, tau_fixed)?;
    let (_, w) = crate::conic::max_eigpair(w_prev)?;
    build_slot_problem(grid, profiles, state.clock, &load, Some((lambda, &w)))
}

/// Direct evaluation of the generation cost of a slot from generator outputs.
pub fn generation_cost(grid: &GridCase, pg: &[f64]) -> f64 {
    grid.generators
        .iter()
        .zip(pg)
        .map(|(g, &p)| g.cost_pu(p, grid.base_mva))
        .sum()
}

/// Maximum violation of the slot constraints by a voltage vector and generator dispatch.
///
/// Covers power balance, voltage magnitude, angle difference and generation limits; the result
/// is in per-unit (radians for angles).
pub fn slot_violation(
    grid: &GridCase,
    profiles: &ScenarioProfiles,
    slot: usize,
    station_load: &[f64],
    v: &[Complex64],
    pg: &[f64],
    qg: &[f64],
) -> Result<f64, BuildError> {
    let inj = grid.injections(v);
    let mut worst: f64 = 0.0;
    for (k, &(p, q)) in inj.iter().enumerate() {
        let (pl, ql) = profiles.scaled_load(k, slot)?;
        let (mut gp, mut gq) = (0.0, 0.0);
        if let Some(g) = grid.generator_at(k) {
            gp = pg[g];
            gq = qg[g];
        }
        worst = worst
            .max((p - (gp - pl - station_load[k])).abs())
            .max((q - (gq - ql)).abs());
        let b = &grid.buses[k];
        let mag = v[k].norm();
        worst = worst.max(b.v_min - mag).max(mag - b.v_max);
    }
    worst = worst.max(grid.angle_violation(v));
    for (g, spec) in grid.generators.iter().enumerate() {
        worst = worst
            .max(spec.p_min - pg[g])
            .max(pg[g] - spec.p_max)
            .max(spec.q_min - qg[g])
            .max(qg[g] - spec.q_max);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{solve, ConeKind, SolverSettings};
    use crate::fleet::PevRecord;
    use crate::grid::{load_case, Bus, GeneratorSpec, Line};
    use std::f64::consts::FRAC_PI_4;

    fn bus(id: usize, lo: f64, hi: f64) -> Bus {
        Bus { id, v_min: lo, v_max: hi }
    }

    fn station(bus: usize) -> GeneratorSpec {
        GeneratorSpec {
            bus,
            p_min: 0.0,
            p_max: 5.0,
            q_min: -5.0,
            q_max: 5.0,
            cost: [10.0, 20.0, 1.0],
            is_station: true,
        }
    }

    fn two_bus(loads: Vec<(f64, f64)>, prices: Vec<f64>) -> (GridCase, ScenarioProfiles) {
        let z = Complex64::new(1.0, 0.0) / Complex64::new(1.0, -10.0);
        let grid = GridCase::new(
            1.0,
            vec![bus(1, 0.9, 1.1), bus(2, 0.9, 1.1)],
            vec![Line { from: 0, to: 1, impedance: z, theta_max: 0.5 }],
            vec![station(0)],
        )
        .unwrap();
        let shape = vec![1.0; prices.len()];
        (grid, ScenarioProfiles::new(0.5, shape, prices, loads).unwrap())
    }

    fn pev(id: usize, station: usize, a: usize, d: usize, capacity: f64) -> PevRecord {
        PevRecord {
            id,
            station,
            arrival_slot: a,
            departure_slot: d,
            capacity_kwh: capacity,
            initial_soc: 0.0,
            max_rate_kw: 20.0,
            efficiency: 1.0,
        }
    }

    fn demo() -> (GridCase, ScenarioProfiles) {
        load_case(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/case4_demo.json")).unwrap()
    }

    #[test]
    fn balance_rows_vanish_at_power_flow_solution() {
        let v = [Complex64::new(1.0, 0.0), Complex64::from_polar(0.98, -0.02)];
        // Direct power flow: S_k = V_k conj(Σ_m y (V_k - V_m)).
        let y = Complex64::new(1.0, -10.0);
        let s0 = v[0] * (y * (v[0] - v[1])).conj();
        let s1 = v[1] * (y * (v[1] - v[0])).conj();
        let (grid, profiles) = two_bus(vec![(0.0, 0.0), (-s1.re, -s1.im)], vec![0.1]);

        let mut problem = ConicProblem::<f64>::new();
        let w = HermitianVars::new(&mut problem, 2);
        let pg = vec![problem.add_var()];
        let qg = vec![problem.add_var()];
        let ev = vec![LinExpr::zero(); 2];
        let rows = balance_rows(&grid, &profiles, 1, &w, &pg, &qg, &ev).unwrap();
        let mut x = vec![0.0; problem.num_vars()];
        w.assign(&HermMatrix::outer(&v), &mut x);
        x[pg[0].0] = s0.re;
        x[qg[0].0] = s0.im;
        for (p, q) in rows {
            assert!(p.eval(&x).abs() < 1e-12, "{}", p.eval(&x));
            assert!(q.eval(&x).abs() < 1e-12, "{}", q.eval(&x));
        }
    }

    #[test]
    fn isolated_bus_with_no_load_balances_at_zero_output() {
        let grid = GridCase::new(1.0, vec![bus(1, 0.9, 1.1)], vec![], vec![station(0)]).unwrap();
        let profiles = ScenarioProfiles::new(0.5, vec![1.0], vec![0.1], vec![(0.0, 0.0)]).unwrap();
        let mut problem = ConicProblem::<f64>::new();
        let w = HermitianVars::new(&mut problem, 1);
        let (pg, qg) = (vec![problem.add_var()], vec![problem.add_var()]);
        let rows = balance_rows(&grid, &profiles, 1, &w, &pg, &qg, &vec![LinExpr::zero()]).unwrap();
        let mut x = vec![0.0; problem.num_vars()];
        w.assign(&HermMatrix::outer(&[Complex64::new(1.0, 0.0)]), &mut x);
        assert_eq!(rows[0].0.eval(&x), 0.0);
        assert_eq!(rows[0].1.eval(&x), 0.0);
    }

    #[test]
    fn active_pev_adds_rate_to_station_row() {
        let (grid, profiles) = two_bus(vec![(0.0, 0.0), (0.1, 0.0)], vec![0.1, 0.1]);
        let state = FleetState::new(vec![pev(0, 1, 1, 2, 10.0)], 0.5);
        let (problem, index) = build_horizon(&grid, &profiles, &state, TauMode::Relaxed).unwrap();
        let tau = index.taus[0].var;
        let p_row = index.slots[0].pg[0];
        let found = problem.constraints().iter().any(|c| {
            c.kind == ConeKind::Zero
                && c.rows[0].terms.contains(&(tau, 0.02))
                && c.rows[0].terms.contains(&(p_row, -1.0))
        });
        assert!(found, "no balance row carrying the charging rate");
    }

    #[test]
    fn static_row_examples() {
        let grid = GridCase::new(
            1.0,
            vec![bus(1, 0.95, 1.05), bus(2, 0.95, 1.05)],
            vec![Line { from: 0, to: 1, impedance: Complex64::new(0.01, 0.1), theta_max: FRAC_PI_4 }],
            vec![station(0)],
        )
        .unwrap();
        let mut problem = ConicProblem::<f64>::new();
        let w = HermitianVars::new(&mut problem, 2);
        let (pg, qg) = (vec![problem.add_var()], vec![problem.add_var()]);
        let rows = static_rows(&grid, &w, &pg, &qg);
        assert!((rows[0].constant + 0.9025).abs() < 1e-12);
        assert!((rows[1].constant - 1.1025).abs() < 1e-12);

        let eval_at = |v: &[Complex64]| -> Vec<f64> {
            let mut x = vec![0.0; problem.num_vars()];
            w.assign(&HermMatrix::outer(v), &mut x);
            x[pg[0].0] = 1.0;
            rows.iter().map(|r| r.eval(&x)).collect()
        };
        // tan(π/4) = 1: the angle rows are Re W ± Im W.
        let inside = eval_at(&[Complex64::new(1.0, 0.0), Complex64::from_polar(1.0, -0.7)]);
        assert!(inside.iter().all(|&r| r >= -1e-12), "{inside:?}");
        let outside = eval_at(&[Complex64::new(1.0, 0.0), Complex64::from_polar(1.0, -0.9)]);
        assert!(outside[4] < 0.0 || outside[5] < 0.0, "{outside:?}");
    }

    #[test]
    fn tau_rows() {
        let (grid, profiles) = two_bus(vec![(0.0, 0.0), (0.1, 0.0)], vec![0.1, 0.2, 0.3]);
        // τ̄ = 2 over a window of three slots.
        let state = FleetState::new(vec![pev(0, 1, 1, 3, 20.0)], 0.5);
        let (problem, index) = build_horizon(&grid, &profiles, &state, TauMode::Relaxed).unwrap();
        let vars: Vec<VarId> = index.taus.iter().map(|t| t.var).collect();
        let row = problem
            .constraints()
            .iter()
            .find(|c| c.kind == ConeKind::Zero && c.rows[0].terms.iter().all(|t| vars.contains(&t.0)))
            .expect("demand row");
        assert_eq!(row.rows[0].terms.len(), 3);
        assert!(row.rows[0].terms.iter().all(|t| t.1 == 1.0));
        assert_eq!(row.rows[0].constant, -2.0);

        // A window of one slot and τ̄ = 1 leaves one feasible point.
        let state = FleetState::new(vec![pev(0, 1, 1, 1, 10.0)], 0.5);
        let (problem, index) = build_horizon(&grid, &profiles, &state, TauMode::Relaxed).unwrap();
        let sol = solve(&problem, &SolverSettings::default()).unwrap();
        assert!(sol.is_usable());
        assert!((index.tau_values(&sol.x)[0] - 1.0).abs() < 1e-7);

        // Two slots of demand in a one-slot window.
        let state = FleetState::new(vec![pev(0, 1, 1, 1, 20.0)], 0.5);
        assert!(matches!(
            build_horizon(&grid, &profiles, &state, TauMode::Relaxed),
            Err(BuildError::InfeasibleDemand { needed: 2, available: 1, .. })
        ));
    }

    #[test]
    fn charging_cost_is_price_times_energy() {
        let (grid, profiles) = two_bus(vec![(0.0, 0.0), (0.1, 0.0)], vec![0.2]);
        // 20 kW over half an hour at unit efficiency: 10 kWh.
        let state = FleetState::new(vec![pev(0, 1, 1, 1, 10.0)], 0.5);
        let (_, index) = build_horizon(&grid, &profiles, &state, TauMode::Relaxed).unwrap();
        assert_eq!(index.charge_cost.terms.len(), 1);
        assert!((index.charge_cost.terms[0].1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_direct_cost() {
        let (grid, profiles) = demo();
        let state = FleetState::new(vec![pev(0, 1, 1, 4, 20.0), pev(1, 3, 2, 6, 30.0)], profiles.slot_hours);
        let (problem, index) = build_horizon(&grid, &profiles, &state, TauMode::Relaxed).unwrap();

        let mut rng_state = 7u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..20 {
            let mut x = vec![0.0; problem.num_vars()];
            let tau: Vec<f64> = index.taus.iter().map(|_| next()).collect();
            for (tv, &v) in index.taus.iter().zip(&tau) {
                x[tv.var.0] = v;
            }
            let mut direct = 0.0;
            for s in &index.slots {
                let pg: Vec<f64> = s.pg.iter().map(|_| 2.0 * next()).collect();
                for (v, &p) in s.pg.iter().zip(&pg) {
                    x[v.0] = p;
                }
                // Each epigraph variable sits at its quadratic cost.
                for (term, (g, &p)) in s.gen_cost.terms.iter().zip(grid.generators.iter().zip(&pg)) {
                    x[term.0 .0] = g.cost_pu(p, grid.base_mva);
                }
                direct += generation_cost(&grid, &pg);
            }
            for (tv, &v) in index.taus.iter().zip(&tau) {
                direct += profiles.price(tv.slot) * state.energy_per_slot(tv.pev) * v;
            }
            let conic = problem.objective().eval(&x);
            assert!((conic - direct).abs() <= 1e-9 * direct.abs().max(1.0), "{conic} vs {direct}");
        }
    }

    #[test]
    fn relaxed_demo_problem_solves() {
        let (grid, profiles) = demo();
        let state = FleetState::new(vec![pev(0, 1, 1, 5, 40.0), pev(1, 3, 1, 3, 20.0)], profiles.slot_hours);
        let (problem, _) = build_horizon(&grid, &profiles, &state, TauMode::Relaxed).unwrap();
        let sol = solve(&problem, &SolverSettings::default()).unwrap();
        assert!(sol.is_optimal(), "{:?}", sol.status);
    }

    #[test]
    fn overloaded_network_is_infeasible() {
        let (grid, profiles) = two_bus(vec![(0.0, 0.0), (20.0, 0.0)], vec![0.1]);
        let state = FleetState::new(vec![], 0.5);
        let (problem, _) = build_horizon(&grid, &profiles, &state, TauMode::Relaxed).unwrap();
        let sol = solve(&problem, &SolverSettings::default()).unwrap();
        assert!(!sol.is_usable(), "{:?}", sol.status);
    }

    #[test]
    fn penalty_vanishes_at_binary_point() {
        let (grid, profiles) = two_bus(vec![(0.0, 0.0), (0.1, 0.0)], vec![0.1, 0.3, 0.2]);
        let state = FleetState::new(vec![pev(0, 1, 1, 3, 20.0)], 0.5);
        let tau_prev = [1.0, 0.0, 1.0];
        let config = PenaltyConfig::default();
        let mode = TauMode::Penalized { tau_prev: &tau_prev, config };
        let (problem, index) = build_horizon(&grid, &profiles, &state, mode).unwrap();
        let sol = solve(&problem, &SolverSettings::default()).unwrap();
        assert!(sol.is_usable(), "{:?}", sol.status);
        let s = sol.x[index.penalty_s.unwrap().0];
        assert!((s - 0.5).abs() < 1e-6, "s = {s}");
        let cost = index.cost_expr().eval(&sol.x);
        assert!((sol.objective - cost).abs() < 1e-5, "{} vs {cost}", sol.objective);
    }

    #[test]
    fn snapshot_penalty_values() {
        let mut problem = ConicProblem::<f64>::new();
        let w = HermitianVars::new(&mut problem, 2);
        let mut x = vec![0.0; problem.num_vars()];

        let v = [Complex64::new(1.0, 0.0), Complex64::from_polar(0.9, -0.1)];
        let rank_one = HermMatrix::outer(&v);
        let (_, top) = crate::conic::max_eigpair(&rank_one).unwrap();
        w.assign(&rank_one, &mut x);
        assert!(rank_penalty_expr(&w, &top).eval(&x).abs() < 1e-12);

        let mut scaled = HermMatrix::zeros(2);
        scaled.set(0, 0, Complex64::new(3.0, 0.0));
        scaled.set(1, 1, Complex64::new(3.0, 0.0));
        let (_, top) = crate::conic::max_eigpair(&scaled).unwrap();
        w.assign(&scaled, &mut x);
        assert!((rank_penalty_expr(&w, &top).eval(&x) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn penalty_config_ranges() {
        assert!(PenaltyConfig::default().validate().is_ok());
        assert!(PenaltyConfig { l: 1.0, ..Default::default() }.validate().is_err());
        assert!(PenaltyConfig { mu: 0.0, ..Default::default() }.validate().is_err());
        assert!(PenaltyConfig { trust_floor: 0.0, ..Default::default() }.validate().is_err());
    }
}

//! Offline exhaustive reference: enumerate every full-horizon charging schedule.
//!
//! Slots are coupled only through the charging decisions, so each schedule costs the sum of
//! per-slot relaxed OPFs, which are cached by station load.

use std::collections::HashMap;

use thiserror::Error;

use crate::builder::generation_cost;
use crate::fleet::{FleetState, PevRecord};
use crate::grid::{to_per_unit, GridCase, GridError, ScenarioProfiles};
use crate::mpc::{binary_variable_count, relaxed_slot, MpcConfig, MpcError};
use crate::rank1::{solve_rank1, Rank1Error, SlotPoint};

pub const ORACLE_GUARD: usize = 20;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{count} binary variables exceed the enumeration guard of {ORACLE_GUARD}")]
    TooLarge { count: usize },
    #[error("PEV {0} is not at a charging station")]
    Station(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Slot(#[from] MpcError),
    #[error("slot {t}: {source}")]
    Rank1 { t: usize, source: Rank1Error },
    #[error("no feasible schedule")]
    NoSchedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Best generation plus charging cost after rank-one recovery.
    pub objective: f64,
    /// Relaxed cost of the same schedule.
    pub relaxed_objective: f64,
    /// Charging slots per vehicle (1-based), in fleet order.
    pub schedule: Vec<Vec<usize>>,
    pub candidates: usize,
}

/// All `k`-subsets of `items`, in lexicographic order.
pub fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn rec(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            if items.len() - i < k - cur.len() {
                break;
            }
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(items, k, 0, &mut Vec::new(), &mut out);
    out
}

/// Every schedule meeting each vehicle's full demand inside its window.
pub fn enumerate_schedules(fleet: &[PevRecord], slot_hours: f64) -> Result<Vec<Vec<Vec<usize>>>, OracleError> {
    let count = binary_variable_count(fleet);
    if count > ORACLE_GUARD {
        return Err(OracleError::TooLarge { count });
    }
    let mut schedules: Vec<Vec<Vec<usize>>> = vec![Vec::new()];
    for r in fleet {
        let needed = r.required_slots(slot_hours).map_err(|_| OracleError::NoSchedule)?;
        let window: Vec<usize> = (r.arrival_slot..=r.departure_slot).collect();
        let options = combinations(&window, needed);
        schedules = schedules
            .into_iter()
            .flat_map(|s| {
                options.iter().map(move |o| {
                    let mut s = s.clone();
                    s.push(o.clone());
                    s
                })
            })
            .collect();
    }
    Ok(schedules)
}

/// How many of the cheapest relaxed schedules get rank-one recovery.
const RECOVERED_CANDIDATES: usize = 5;

pub fn brute_force_oracle(
    grid: &GridCase,
    profiles: &ScenarioProfiles,
    fleet: &[PevRecord],
    config: &MpcConfig,
) -> Result<OracleResult, OracleError> {
    let schedules = enumerate_schedules(fleet, profiles.slot_hours)?;
    let state = FleetState::new(fleet.to_vec(), profiles.slot_hours);
    let mut buses = Vec::with_capacity(fleet.len());
    let mut rates = Vec::with_capacity(fleet.len());
    for r in fleet {
        buses.push(grid.bus_index(r.station).ok_or(OracleError::Station(r.id))?);
        rates.push(to_per_unit(r.max_rate_kw, grid.base_mva)?);
    }

    type Key = (usize, Vec<u64>);
    let mut relaxed: HashMap<Key, SlotPoint> = HashMap::new();
    let slot_loads = |schedule: &[Vec<usize>]| -> Vec<Vec<f64>> {
        (1..=profiles.slot_count())
            .map(|t| {
                let mut load = vec![0.0; grid.bus_count()];
                for (i, slots) in schedule.iter().enumerate() {
                    if slots.contains(&t) {
                        load[buses[i]] += rates[i];
                    }
                }
                load
            })
            .collect()
    };
    let key = |t: usize, load: &[f64]| (t, load.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    let charging = |schedule: &[Vec<usize>]| -> f64 {
        schedule
            .iter()
            .enumerate()
            .flat_map(|(i, slots)| {
                let state = &state;
                slots.iter().map(move |&t| profiles.price(t) * state.energy_per_slot(i))
            })
            .sum()
    };

    let mut scored = Vec::with_capacity(schedules.len());
    for schedule in &schedules {
        let mut cost = charging(schedule);
        for (t0, load) in slot_loads(schedule).iter().enumerate() {
            let k = key(t0 + 1, load);
            if !relaxed.contains_key(&k) {
                let point = relaxed_slot(grid, profiles, t0 + 1, load, config)?;
                relaxed.insert(k.clone(), point);
            }
            cost += generation_cost(grid, &relaxed[&k].pg);
        }
        scored.push(cost);
    }
    let mut order: Vec<usize> = (0..schedules.len()).collect();
    order.sort_by(|&a, &b| scored[a].total_cmp(&scored[b]));

    let mut recovered: HashMap<Key, f64> = HashMap::new();
    let mut best: Option<OracleResult> = None;
    for &c in order.iter().take(RECOVERED_CANDIDATES) {
        let schedule = &schedules[c];
        let mut cost = charging(schedule);
        for (t0, load) in slot_loads(schedule).iter().enumerate() {
            let k = key(t0 + 1, load);
            let gen = match recovered.get(&k) {
                Some(&g) => g,
                None => {
                    let out = solve_rank1(grid, profiles, t0 + 1, load, &relaxed[&k], &config.rank1)
                        .map_err(|source| OracleError::Rank1 { t: t0 + 1, source })?;
                    recovered.insert(k, out.objective);
                    out.objective
                }
            };
            cost += gen;
        }
        if best.as_ref().is_none_or(|b| cost < b.objective) {
            best = Some(OracleResult {
                objective: cost,
                relaxed_objective: scored[c],
                schedule: schedule.clone(),
                candidates: schedules.len(),
            });
        }
    }
    best.ok_or(OracleError::NoSchedule)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pev(id: usize, a: usize, d: usize, capacity: f64) -> PevRecord {
        PevRecord {
            id,
            station: 1,
            arrival_slot: a,
            departure_slot: d,
            capacity_kwh: capacity,
            initial_soc: 0.0,
            max_rate_kw: 20.0,
            efficiency: 1.0,
        }
    }

    #[test]
    fn candidate_counts() {
        assert_eq!(enumerate_schedules(&[pev(0, 1, 2, 10.0)], 0.5).unwrap().len(), 2);
        let two = [pev(0, 1, 4, 20.0), pev(1, 3, 6, 20.0)];
        assert_eq!(enumerate_schedules(&two, 0.5).unwrap().len(), 36);
        let big = [pev(0, 1, 12, 20.0), pev(1, 1, 12, 20.0)];
        assert!(matches!(enumerate_schedules(&big, 0.5), Err(OracleError::TooLarge { count: 24 })));
    }

    #[test]
    fn combinations_small() {
        assert_eq!(combinations(&[1, 2, 3], 2), vec![vec![1, 2], vec![1, 3], vec![2, 3]]);
        assert_eq!(combinations(&[1, 2], 0), vec![Vec::<usize>::new()]);
    }
}

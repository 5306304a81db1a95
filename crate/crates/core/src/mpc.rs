//! Online receding-horizon loop over the scheduling slots.

use std::io::Write;
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::{build_slot_problem, fixed_station_load, generation_cost, BuildError};
use crate::conic::{solve, ConicError, SolveStatus};
use crate::fleet::{FleetError, FleetState, PevRecord};
use crate::grid::{GridCase, ScenarioProfiles};
use crate::micp::{solve_micp, MicpConfig, MicpError, MicpIterate};
use crate::rank1::{rank_check, solve_rank1, Rank1Config, Rank1Error, Rank1Iterate, SlotPoint};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MpcConfig {
    pub micp: MicpConfig,
    pub rank1: Rank1Config,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub t: usize,
    /// Ids of the vehicles in the active set.
    pub active: Vec<usize>,
    /// `(vehicle id, τ)` applied in this slot.
    pub applied_tau: Vec<(usize, u8)>,
    pub voltage: Vec<Complex64>,
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    pub generation_cost: f64,
    pub charging_cost: f64,
    /// Slot generation cost of the stage-one (relaxed) dispatch.
    pub stage1_generation_cost: f64,
    pub stage1_iterations: usize,
    pub stage2_iterations: usize,
    /// Rank test per horizon slot of the stage-one matrices.
    pub rank_check: Vec<bool>,
    pub stage2_used: bool,
    /// Largest slot-constraint violation at the applied voltage.
    pub violation: f64,
    pub micp_diagnostics: Vec<MicpIterate>,
    pub rank1_diagnostics: Vec<Rank1Iterate>,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub binary_variables: usize,
    pub mu: f64,
    pub lambda: f64,
    pub obj_stage1: f64,
    pub obj_stage2: f64,
    pub avg_slot_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcTrace {
    pub records: Vec<SlotRecord>,
    pub pev_ids: Vec<usize>,
    /// State of charge per vehicle: row 0 is the initial state, row `t` the state after slot `t`.
    pub soc: Vec<Vec<f64>>,
    /// Total generation plus charging cost of the applied controls.
    pub objective: f64,
    /// Ids of vehicles that left with demand remaining.
    pub unmet: Vec<usize>,
    pub summary: Summary,
}

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("slot {t}: {source}")]
    Micp { t: usize, source: MicpError },
    #[error("slot {t}: {source}")]
    Rank1 { t: usize, source: Rank1Error },
    #[error("slot {t}: {source}")]
    Build { t: usize, source: BuildError },
    #[error("slot {t}: {source}")]
    Conic { t: usize, source: ConicError },
    #[error("slot {t}: relaxed OPF ended with status {status:?}")]
    Opf { t: usize, status: SolveStatus },
    #[error("slot {t}: {source}")]
    Fleet { t: usize, source: FleetError },
}

impl MpcError {
    pub fn slot(&self) -> usize {
        match self {
            MpcError::Micp { t, .. }
            | MpcError::Rank1 { t, .. }
            | MpcError::Build { t, .. }
            | MpcError::Conic { t, .. }
            | MpcError::Opf { t, .. }
            | MpcError::Fleet { t, .. } => *t,
        }
    }
}

/// Number of charging decisions over the whole run.
pub fn binary_variable_count(fleet: &[PevRecord]) -> usize {
    fleet.iter().map(|r| r.departure_slot + 1 - r.arrival_slot).sum()
}

/// Relaxed OPF of one slot with a fixed charging load.
pub fn relaxed_slot(
    grid: &GridCase,
    profiles: &ScenarioProfiles,
    slot: usize,
    station_load: &[f64],
    config: &MpcConfig,
) -> Result<SlotPoint, MpcError> {
    let build = |source| MpcError::Build { t: slot, source };
    let (problem, vars) = build_slot_problem(grid, profiles, slot, station_load, None).map_err(build)?;
    let sol = solve(&problem, &config.micp.solver).map_err(|source| MpcError::Conic { t: slot, source })?;
    if !sol.is_usable() {
        return Err(MpcError::Opf { t: slot, status: sol.status });
    }
    Ok(SlotPoint {
        w: vars.w.extract(&sol.x),
        pg: vars.pg.iter().map(|v| sol.x[v.0]).collect(),
        qg: vars.qg.iter().map(|v| sol.x[v.0]).collect(),
    })
}

pub fn run_mpc(
    grid: &GridCase,
    profiles: &ScenarioProfiles,
    fleet: &[PevRecord],
    config: &MpcConfig,
) -> Result<MpcTrace, MpcError> {
    let mut state = FleetState::new(fleet.to_vec(), profiles.slot_hours);
    let mut soc = vec![state.soc.clone()];
    let mut records = Vec::with_capacity(profiles.slot_count());
    for t in 1..=profiles.slot_count() {
        let started = Instant::now();
        let active = state.active_set();
        let mut micp_diagnostics = Vec::new();
        let (decisions, stage1, rank_flags) = if active.is_empty() {
            let load = vec![0.0; grid.bus_count()];
            let point = relaxed_slot(grid, profiles, t, &load, config)?;
            let flags = rank_check(std::slice::from_ref(&point.w), config.rank1.eps)
                .map_err(|source| MpcError::Conic { t, source })?;
            (Vec::new(), point, flags)
        } else {
            let out = solve_micp(grid, profiles, &state, &config.micp).map_err(|source| MpcError::Micp { t, source })?;
            let blocks: Vec<_> = out.index.slots.iter().map(|s| s.w.extract(&out.solution.x)).collect();
            let flags = rank_check(&blocks, config.rank1.eps).map_err(|source| MpcError::Conic { t, source })?;
            let first = out.index.slot(t);
            let point = SlotPoint {
                w: blocks[0].clone(),
                pg: first.pg.iter().map(|v| out.solution.x[v.0]).collect(),
                qg: first.qg.iter().map(|v| out.solution.x[v.0]).collect(),
            };
            micp_diagnostics = out.iterates.clone();
            (out.first_slot(), point, flags)
        };
        let load = fixed_station_load(grid, &state, &decisions).map_err(|source| MpcError::Build { t, source })?;
        let stage2 = solve_rank1(grid, profiles, t, &load, &stage1, &config.rank1)
            .map_err(|source| MpcError::Rank1 { t, source })?;
        let stage2_iterations = stage2.iterates.iter().filter(|it| it.kappa > 0).count();

        let applied: Vec<(usize, bool)> = decisions.iter().map(|&(i, v)| (i, v == 1.0)).collect();
        let charging_cost: f64 = applied
            .iter()
            .filter(|a| a.1)
            .map(|&(i, _)| profiles.price(t) * state.energy_per_slot(i))
            .fold(0.0, |a, b| a + b);
        let record = SlotRecord {
            t,
            active: active.iter().map(|&i| state.records[i].id).collect(),
            applied_tau: applied.iter().map(|&(i, c)| (state.records[i].id, c as u8)).collect(),
            voltage: stage2.v.clone(),
            generation_cost: stage2.objective,
            charging_cost,
            stage1_generation_cost: generation_cost(grid, &stage1.pg),
            stage1_iterations: micp_diagnostics.len().saturating_sub(1),
            stage2_iterations,
            rank_check: rank_flags,
            stage2_used: stage2_iterations > 0,
            violation: stage2.violation,
            pg: stage2.pg,
            qg: stage2.qg,
            micp_diagnostics,
            rank1_diagnostics: stage2.iterates,
            runtime_s: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "slot {t}: active {:?} tau {:?} cost {:.6}",
            record.active,
            record.applied_tau,
            record.generation_cost + record.charging_cost
        );
        records.push(record);
        state = state.advance(&applied).map_err(|source| MpcError::Fleet { t, source })?;
        soc.push(state.soc.clone());
    }

    let objective: f64 = records.iter().map(|r| r.generation_cost + r.charging_cost).sum();
    let obj_stage1: f64 = records.iter().map(|r| r.stage1_generation_cost + r.charging_cost).sum();
    let summary = Summary {
        binary_variables: binary_variable_count(fleet),
        mu: config.micp.penalty.mu,
        lambda: config.rank1.lambda,
        obj_stage1,
        obj_stage2: objective,
        avg_slot_time_s: records.iter().map(|r| r.runtime_s).sum::<f64>() / records.len().max(1) as f64,
    };
    Ok(MpcTrace {
        records,
        pev_ids: fleet.iter().map(|r| r.id).collect(),
        soc,
        objective,
        unmet: state.unmet.iter().map(|&i| fleet[i].id).collect(),
        summary,
    })
}

fn join<T: std::fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

impl MpcTrace {
    /// One row per slot. Contains no timing data, so identical runs give identical bytes.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t",
            "active",
            "tau",
            "pg",
            "qg",
            "v_mag",
            "v_ang",
            "generation_cost",
            "charging_cost",
            "stage1_generation_cost",
            "stage1_iterations",
            "stage2_iterations",
            "rank_check",
            "stage2_used",
        ])?;
        for r in &self.records {
            w.write_record([
                r.t.to_string(),
                join(&r.active),
                join(r.applied_tau.iter().map(|(id, v)| format!("{id}:{v}"))),
                join(&r.pg),
                join(&r.qg),
                join(r.voltage.iter().map(|v| v.norm())),
                join(r.voltage.iter().map(|v| v.arg())),
                r.generation_cost.to_string(),
                r.charging_cost.to_string(),
                r.stage1_generation_cost.to_string(),
                r.stage1_iterations.to_string(),
                r.stage2_iterations.to_string(),
                join(r.rank_check.iter().map(|&b| b as u8)),
                (r.stage2_used as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// State of charge time series, one column per vehicle.
    pub fn write_soc_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(self.pev_ids.iter().map(|id| format!("pev_{id}")));
        w.write_record(&header)?;
        for (t, row) in self.soc.iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(|s| s.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Stage-one diagnostics as JSON lines tagged with the slot.
    pub fn write_micp_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            for it in &r.micp_diagnostics {
                let mut v = serde_json::to_value(it)?;
                v["t"] = r.t.into();
                writeln!(out, "{v}")?;
            }
        }
        Ok(())
    }

    pub fn write_rank1_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            for it in &r.rank1_diagnostics {
                let mut v = serde_json::to_value(it)?;
                v["t"] = r.t.into();
                writeln!(out, "{v}")?;
            }
        }
        Ok(())
    }
}

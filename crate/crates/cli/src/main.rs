//! `evgrid`: run the online charging coordinator on a case file.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use evgrid::builder::{generation_cost, BuildError, PenaltyConfig};
use evgrid::conic::SolveStatus;
use evgrid::fleet::{FleetSpec, PevRecord};
use evgrid::grid::{read_case_document, GridCase, ScenarioProfiles};
use evgrid::micp::{MicpConfig, MicpError};
use evgrid::mpc::{binary_variable_count, relaxed_slot, run_mpc, MpcConfig, MpcError, MpcTrace};
use evgrid::oracle::{brute_force_oracle, OracleError};
use evgrid::rank1::{relative_residual, solve_rank1, Rank1Config, Rank1Error};
use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Run the online loop and write the trace.
    Simulate,
    /// Run the online loop and the exhaustive offline reference side by side.
    Oracle,
    /// Check a case file (and its fleet) without solving.
    Validate,
    /// Solve one slot without charging load, both stages.
    SolveSlot,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Oracle => "oracle",
            Mode::Validate => "validate",
            Mode::SolveSlot => "solve-slot",
        }
    }
}

/// Online EV charging coordination over an SDP-relaxed power network.
///
/// Log verbosity follows the EVGRID_LOG environment variable (e.g. EVGRID_LOG=debug).
#[derive(Debug, Parser)]
#[command(name = "evgrid", version)]
struct Args {
    /// Mode, given positionally or with --mode.
    #[arg(value_enum, conflicts_with = "mode")]
    command: Option<Mode>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Case file (JSON).
    #[arg(long)]
    case: PathBuf,
    /// Fleet file: an array of PEV records or a generator object. Overrides the case's fleet.
    #[arg(long)]
    fleet: Option<PathBuf>,
    /// Seed for generated fleets.
    #[arg(long)]
    seed: Option<u64>,
    /// Binary penalty weight.
    #[arg(long, default_value_t = 10.0)]
    mu: f64,
    /// Rank-one penalty weight.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Exponent of the binary penalty, above 1.
    #[arg(long = "L", default_value_t = 1.5)]
    l: f64,
    /// Tolerance of the binary gap and of the rank test.
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    /// Iteration cap of both penalty loops.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Interior-point gap and feasibility tolerance.
    #[arg(long, default_value_t = 1e-8)]
    solver_tol: f64,
    /// Slot for solve-slot (1-based).
    #[arg(long, default_value_t = 1)]
    slot: usize,
    /// Output directory.
    #[arg(long, default_value = "evgrid-out")]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Infeasible(String),
    NonConvergence(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Infeasible(_) => 1,
            CliError::Input(_) => 2,
            CliError::NonConvergence(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Infeasible(m) => write!(f, "infeasible: {m}"),
            CliError::NonConvergence(m) => write!(f, "no convergence: {m}"),
        }
    }
}

fn input(e: impl fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn by_status(status: SolveStatus, msg: String) -> CliError {
    match status {
        SolveStatus::Infeasible | SolveStatus::Unbounded => CliError::Infeasible(msg),
        _ => CliError::NonConvergence(msg),
    }
}

fn from_micp(e: MicpError, msg: String) -> CliError {
    match e {
        MicpError::Infeasible | MicpError::Build(BuildError::InfeasibleDemand { .. }) => CliError::Infeasible(msg),
        MicpError::Build(_) => CliError::Input(msg),
        MicpError::Solver { status, .. } => by_status(status, msg),
        MicpError::Conic(_) | MicpError::Stall { .. } | MicpError::MaxIterations { .. } | MicpError::Rounding { .. } => {
            CliError::NonConvergence(msg)
        }
    }
}

fn from_rank1(e: Rank1Error, msg: String) -> CliError {
    match e {
        Rank1Error::Build(_) => CliError::Input(msg),
        Rank1Error::Solver { status, .. } => by_status(status, msg),
        Rank1Error::Conic(_) | Rank1Error::NotRankOne { .. } | Rank1Error::NonConvergence { .. } => {
            CliError::NonConvergence(msg)
        }
    }
}

impl From<MpcError> for CliError {
    fn from(e: MpcError) -> Self {
        let msg = e.to_string();
        match e {
            MpcError::Micp { source, .. } => from_micp(source, msg),
            MpcError::Rank1 { source, .. } => from_rank1(source, msg),
            MpcError::Build { source: BuildError::InfeasibleDemand { .. }, .. } => CliError::Infeasible(msg),
            MpcError::Build { .. } | MpcError::Fleet { .. } => CliError::Input(msg),
            MpcError::Opf { status, .. } => by_status(status, msg),
            MpcError::Conic { .. } => CliError::NonConvergence(msg),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        let msg = format!("oracle: {e}");
        match e {
            OracleError::TooLarge { .. } | OracleError::Station(_) | OracleError::Grid(_) => CliError::Input(msg),
            OracleError::NoSchedule => CliError::Infeasible(msg),
            OracleError::Slot(inner) => inner.into(),
            OracleError::Rank1 { source, .. } => from_rank1(source, msg),
        }
    }
}

struct Inputs {
    grid: GridCase,
    profiles: ScenarioProfiles,
    fleet: Vec<PevRecord>,
}

fn load_inputs(args: &Args) -> Result<Inputs, CliError> {
    let doc = read_case_document(&args.case).map_err(input)?;
    let (grid, profiles) = doc.build().map_err(input)?;
    let spec = match &args.fleet {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))?;
            Some(FleetSpec::parse(&text).map_err(input)?)
        }
        None => doc.fleet.clone(),
    };
    let spec = match (spec, args.seed) {
        (Some(FleetSpec::Config(mut c)), Some(seed)) => {
            c.seed = seed;
            Some(FleetSpec::Config(c))
        }
        (Some(FleetSpec::Records(r)), Some(_)) => {
            log::warn!("--seed has no effect on a fleet given as records");
            Some(FleetSpec::Records(r))
        }
        (spec, _) => spec,
    };
    let stations: Vec<usize> = grid.charging_stations().iter().map(|&k| grid.buses[k].id).collect();
    let fleet = match spec {
        Some(s) => s.resolve(&stations, profiles.slot_count(), profiles.slot_hours).map_err(input)?,
        None => {
            log::warn!("no fleet given; running without PEVs");
            Vec::new()
        }
    };
    Ok(Inputs { grid, profiles, fleet })
}

fn mpc_config(args: &Args) -> Result<MpcConfig, CliError> {
    let penalty = PenaltyConfig {
        mu: args.mu,
        l: args.l,
        lambda: args.lambda,
        eps: args.eps,
        ..PenaltyConfig::default()
    };
    penalty.validate().map_err(input)?;
    if !(args.solver_tol > 0.0) {
        return Err(input("--solver-tol must be positive"));
    }
    let mut micp = MicpConfig { penalty, ..MicpConfig::default() };
    micp.solver.gap_tol = args.solver_tol;
    micp.solver.feas_tol = args.solver_tol;
    let mut rank1 = Rank1Config {
        lambda: args.lambda,
        eps: args.eps,
        solver: micp.solver,
        ..Rank1Config::default()
    };
    if let Some(n) = args.max_iters {
        if n == 0 {
            return Err(input("--max-iters must be positive"));
        }
        micp.max_iters = n;
        rank1.max_iters = n;
    }
    Ok(MpcConfig { micp, rank1 })
}

/// Collects output files and writes the manifest last.
struct Output {
    dir: PathBuf,
    files: Vec<serde_json::Value>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| input(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, kind: &str, bytes: Vec<u8>) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| input(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(json!({ "path": name, "kind": kind }));
        Ok(())
    }

    fn json(&mut self, name: &str, kind: &str, value: &impl serde::Serialize) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(input)?;
        bytes.push(b'\n');
        self.write(name, kind, bytes)
    }

    fn finish(mut self, mode: Mode, case: &Path) -> Result<PathBuf, CliError> {
        let manifest = json!({
            "mode": mode.name(),
            "case": case.display().to_string(),
            "files": std::mem::take(&mut self.files),
        });
        let path = self.dir.join("manifest.json");
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(input)?;
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(|e| input(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

fn write_trace(out: &mut Output, trace: &MpcTrace) -> Result<(), CliError> {
    let csv = |f: &dyn Fn(&mut Vec<u8>) -> Result<(), csv::Error>| -> Result<Vec<u8>, CliError> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(input)?;
        Ok(buf)
    };
    out.write("trace.csv", "trace_csv", csv(&|b| trace.write_csv(b))?)?;
    out.json("trace.json", "trace_json", trace)?;
    out.write("soc.csv", "soc_csv", csv(&|b| trace.write_soc_csv(b))?)?;
    let mut micp = Vec::new();
    trace.write_micp_jsonl(&mut micp).map_err(input)?;
    out.write("stage1.jsonl", "stage1_diagnostics", micp)?;
    let mut rank1 = Vec::new();
    trace.write_rank1_jsonl(&mut rank1).map_err(input)?;
    out.write("stage2.jsonl", "stage2_diagnostics", rank1)?;
    out.json(
        "summary.json",
        "summary",
        &json!({
            "objective": trace.objective,
            "unmet": trace.unmet,
            "table": trace.summary,
        }),
    )
}

fn print_summary(trace: &MpcTrace) {
    let s = &trace.summary;
    println!(
        "binaries {}  mu {}  lambda {}  obj(stage 1) {:.6}  obj(stage 2) {:.6}  avg slot time {:.3} s",
        s.binary_variables, s.mu, s.lambda, s.obj_stage1, s.obj_stage2, s.avg_slot_time_s
    );
    if !trace.unmet.is_empty() {
        println!("unmet demand: PEVs {:?}", trace.unmet);
    }
}

fn simulate(args: &Args) -> Result<(), CliError> {
    let inputs = load_inputs(args)?;
    let config = mpc_config(args)?;
    let trace = run_mpc(&inputs.grid, &inputs.profiles, &inputs.fleet, &config)?;
    let mut out = Output::new(&args.out)?;
    write_trace(&mut out, &trace)?;
    let manifest = out.finish(Mode::Simulate, &args.case)?;
    print_summary(&trace);
    println!("wrote {}", manifest.display());
    Ok(())
}

const ORACLE_SLACK: f64 = 1e-6;

fn oracle(args: &Args) -> Result<(), CliError> {
    let inputs = load_inputs(args)?;
    let config = mpc_config(args)?;
    let trace = run_mpc(&inputs.grid, &inputs.profiles, &inputs.fleet, &config)?;
    let reference = brute_force_oracle(&inputs.grid, &inputs.profiles, &inputs.fleet, &config)?;
    let rel = (trace.objective - reference.objective) / reference.objective.abs().max(f64::MIN_POSITIVE);
    let mut mpc_schedule: Vec<Vec<usize>> = vec![Vec::new(); inputs.fleet.len()];
    for r in &trace.records {
        for &(id, tau) in &r.applied_tau {
            if tau == 1 {
                let i = inputs.fleet.iter().position(|p| p.id == id).expect("trace ids come from the fleet");
                mpc_schedule[i].push(r.t);
            }
        }
    }
    let mut out = Output::new(&args.out)?;
    write_trace(&mut out, &trace)?;
    out.json(
        "oracle.json",
        "oracle_comparison",
        &json!({
            "pev_ids": inputs.fleet.iter().map(|p| p.id).collect::<Vec<_>>(),
            "mpc_objective": trace.objective,
            "oracle_objective": reference.objective,
            "oracle_relaxed_objective": reference.relaxed_objective,
            "relative_difference": rel,
            // The two objectives come from different solves, so equality holds only to solver accuracy.
            "oracle_not_above_mpc": reference.objective <= trace.objective + ORACLE_SLACK * trace.objective.abs(),
            "mpc_schedule": mpc_schedule,
            "oracle_schedule": reference.schedule,
            "candidates": reference.candidates,
        }),
    )?;
    let manifest = out.finish(Mode::Oracle, &args.case)?;
    println!("{:>10} {:>18}", "", "objective");
    println!("{:>10} {:>18.9}", "online", trace.objective);
    println!("{:>10} {:>18.9}", "oracle", reference.objective);
    println!("relative difference {rel:.3e} over {} candidates", reference.candidates);
    println!("wrote {}", manifest.display());
    Ok(())
}

fn validate(args: &Args) -> Result<(), CliError> {
    let inputs = load_inputs(args)?;
    mpc_config(args)?;
    let g = &inputs.grid;
    println!(
        "ok: {} buses, {} lines, {} generators ({} stations), {} slots of {} h, {} PEVs ({} binary decisions)",
        g.bus_count(),
        g.lines.len(),
        g.generators.len(),
        g.charging_stations().len(),
        inputs.profiles.slot_count(),
        inputs.profiles.slot_hours,
        inputs.fleet.len(),
        binary_variable_count(&inputs.fleet)
    );
    Ok(())
}

fn solve_slot(args: &Args) -> Result<(), CliError> {
    let inputs = load_inputs(args)?;
    let config = mpc_config(args)?;
    let (grid, profiles, t) = (&inputs.grid, &inputs.profiles, args.slot);
    if t == 0 || t > profiles.slot_count() {
        return Err(input(format!("--slot {t} outside 1..={}", profiles.slot_count())));
    }
    let load = vec![0.0; grid.bus_count()];
    let stage1 = relaxed_slot(grid, profiles, t, &load, &config)?;
    let residual = relative_residual(&stage1.w).map_err(|e| CliError::NonConvergence(e.to_string()))?;
    let stage2 = solve_rank1(grid, profiles, t, &load, &stage1, &config.rank1)
        .map_err(|e| MpcError::Rank1 { t, source: e })?;
    let lower = generation_cost(grid, &stage1.pg);
    let mut out = Output::new(&args.out)?;
    out.json(
        "slot.json",
        "slot_solution",
        &json!({
            "t": t,
            "stage1_cost": lower,
            "stage1_rank_residual": residual,
            "stage2_cost": stage2.objective,
            "violation": stage2.violation,
            "voltage": stage2.v.iter().map(|v| [v.re, v.im]).collect::<Vec<_>>(),
            "pg": stage2.pg,
            "qg": stage2.qg,
            "iterates": stage2.iterates,
        }),
    )?;
    let manifest = out.finish(Mode::SolveSlot, &args.case)?;
    println!(
        "slot {t}: relaxed {lower:.9} (rank residual {residual:.2e}), recovered {:.9} after {} iterations",
        stage2.objective,
        stage2.iterates.iter().filter(|i| i.kappa > 0).count()
    );
    println!("wrote {}", manifest.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EVGRID_LOG", "warn")).init();
    let args = Args::parse();
    let Some(mode) = args.command.or(args.mode) else {
        eprintln!("error: a mode is required (simulate, oracle, validate, solve-slot)");
        return ExitCode::from(2);
    };
    let result = match mode {
        Mode::Simulate => simulate(&args),
        Mode::Oracle => oracle(&args),
        Mode::Validate => validate(&args),
        Mode::SolveSlot => solve_slot(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

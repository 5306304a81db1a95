//! Static network description, exogenous per-slot profiles and the JSON case format.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fleet::FleetSpec;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("line impedance is zero")]
    ZeroImpedance,
    #[error("base power must be positive, got {0}")]
    NonPositiveBase(f64),
    #[error("index out of range: {0}")]
    Index(String),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> GridError {
    GridError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub v_min: f64,
    pub v_max: f64,
}

/// A series branch between two bus indices (not ids).
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub impedance: Complex64,
    pub theta_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    /// Bus index.
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// `(c2, c1, c0)` of `c2 P² + c1 P + c0` with `P` in MW.
    pub cost: [f64; 3],
    pub is_station: bool,
}

impl GeneratorSpec {
    /// Generation cost for a per-unit output.
    pub fn cost_pu(&self, p_pu: f64, base_mva: f64) -> f64 {
        let p = p_pu * base_mva;
        let [c2, c1, c0] = self.cost;
        c2 * p * p + c1 * p + c0
    }
}

/// Validated network. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<GeneratorSpec>,
    gen_at_bus: Vec<Option<usize>>,
    neighbors: Vec<Vec<(usize, Complex64)>>,
}

/// Per-slot exogenous data. Slots are numbered from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioProfiles {
    pub slot_hours: f64,
    pub load_shape: Vec<f64>,
    pub prices: Vec<f64>,
    /// Nominal `(P, Q)` demand per bus index, per-unit.
    pub base_loads: Vec<(f64, f64)>,
}

pub fn line_admittance(impedance: Complex64) -> Result<Complex64, GridError> {
    if impedance.norm_sqr() == 0.0 || !impedance.is_finite() {
        return Err(GridError::ZeroImpedance);
    }
    Ok(impedance.inv())
}

pub fn to_per_unit(kw: f64, base_mva: f64) -> Result<f64, GridError> {
    if !(base_mva > 0.0) {
        return Err(GridError::NonPositiveBase(base_mva));
    }
    Ok(kw / (base_mva * 1000.0))
}

impl GridCase {
    pub fn new(
        base_mva: f64,
        buses: Vec<Bus>,
        lines: Vec<Line>,
        generators: Vec<GeneratorSpec>,
    ) -> Result<Self, GridError> {
        if !(base_mva > 0.0) || !base_mva.is_finite() {
            return Err(invalid("base_mva", format!("must be positive, got {base_mva}")));
        }
        let n = buses.len();
        if n == 0 {
            return Err(invalid("buses", "at least one bus is required"));
        }
        let mut seen = HashMap::new();
        for (i, b) in buses.iter().enumerate() {
            if let Some(j) = seen.insert(b.id, i) {
                return Err(invalid(format!("buses[{i}].id"), format!("duplicate of buses[{j}]")));
            }
            if !(b.v_min > 0.0) || !(b.v_min <= b.v_max) || !b.v_max.is_finite() {
                return Err(invalid(
                    format!("buses[{i}]"),
                    format!("bus {} needs 0 < v_min <= v_max, got [{}, {}]", b.id, b.v_min, b.v_max),
                ));
            }
        }
        let mut neighbors: Vec<BTreeMap<usize, Complex64>> = vec![BTreeMap::new(); n];
        for (i, l) in lines.iter().enumerate() {
            if l.from >= n || l.to >= n {
                return Err(invalid(format!("lines[{i}]"), "endpoint is not a bus"));
            }
            if l.from == l.to {
                return Err(invalid(format!("lines[{i}]"), "endpoints must differ"));
            }
            if !(l.theta_max > 0.0 && l.theta_max < std::f64::consts::FRAC_PI_2) {
                return Err(invalid(
                    format!("lines[{i}].theta_max"),
                    format!("must lie in (0, pi/2), got {}", l.theta_max),
                ));
            }
            if !(l.impedance.re >= 0.0) || !l.impedance.im.is_finite() {
                return Err(invalid(format!("lines[{i}].r"), "resistance must be nonnegative"));
            }
            let y = line_admittance(l.impedance)
                .map_err(|_| invalid(format!("lines[{i}]"), "zero impedance"))?;
            *neighbors[l.from].entry(l.to).or_default() += y;
            *neighbors[l.to].entry(l.from).or_default() += y;
        }
        // connectivity
        let mut reached = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        reached[0] = true;
        while let Some(k) = queue.pop_front() {
            for &m in neighbors[k].keys() {
                if !reached[m] {
                    reached[m] = true;
                    queue.push_back(m);
                }
            }
        }
        if let Some(k) = reached.iter().position(|r| !r) {
            return Err(invalid("lines", format!("bus {} is not connected to bus {}", buses[k].id, buses[0].id)));
        }
        let mut gen_at_bus = vec![None; n];
        for (i, g) in generators.iter().enumerate() {
            let f = |s: &str| format!("generators[{i}].{s}");
            if g.bus >= n {
                return Err(invalid(f("bus"), "not a bus"));
            }
            if gen_at_bus[g.bus].replace(i).is_some() {
                return Err(invalid(f("bus"), format!("bus {} already has a generator", buses[g.bus].id)));
            }
            if !(g.p_min <= g.p_max) {
                return Err(invalid(f("p_min"), format!("p_min {} exceeds p_max {}", g.p_min, g.p_max)));
            }
            if !(g.q_min <= g.q_max) {
                return Err(invalid(f("q_min"), format!("q_min {} exceeds q_max {}", g.q_min, g.q_max)));
            }
            if !(g.cost[0] >= 0.0) || g.cost.iter().any(|c| !c.is_finite()) {
                return Err(invalid(f("cost"), "coefficients must be finite with c2 >= 0"));
            }
        }
        if generators.is_empty() {
            return Err(invalid("generators", "at least one generator is required"));
        }
        Ok(Self {
            base_mva,
            buses,
            lines,
            generators,
            gen_at_bus,
            neighbors: neighbors.into_iter().map(|m| m.into_iter().collect()).collect(),
        })
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Generator index at a bus index, if any.
    pub fn generator_at(&self, bus: usize) -> Option<usize> {
        self.gen_at_bus.get(bus).copied().flatten()
    }

    /// Bus indices of the charging stations.
    pub fn charging_stations(&self) -> Vec<usize> {
        self.generators.iter().filter(|g| g.is_station).map(|g| g.bus).collect()
    }

    /// Neighbors of a bus with the total series admittance to each (parallel lines summed).
    pub fn neighbors(&self, bus: usize) -> &[(usize, Complex64)] {
        &self.neighbors[bus]
    }

    /// Power injections `(P_k, Q_k)` drawn by the network from a voltage vector.
    pub fn injections(&self, v: &[Complex64]) -> Vec<(f64, f64)> {
        (0..self.bus_count())
            .map(|k| {
                let s: Complex64 = self.neighbors[k]
                    .iter()
                    .map(|&(m, y)| v[k] * (v[k] - v[m]).conj() * y.conj())
                    .sum();
                (s.re, s.im)
            })
            .collect()
    }

    /// Maximum deviation of the voltage angle limits, `max(|arg V_k - arg V_m| - theta_max)`.
    pub fn angle_violation(&self, v: &[Complex64]) -> f64 {
        self.lines
            .iter()
            .map(|l| (v[l.from] * v[l.to].conj()).arg().abs() - l.theta_max)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl ScenarioProfiles {
    pub fn new(
        slot_hours: f64,
        load_shape: Vec<f64>,
        prices: Vec<f64>,
        base_loads: Vec<(f64, f64)>,
    ) -> Result<Self, GridError> {
        if !(slot_hours > 0.0) || !slot_hours.is_finite() {
            return Err(invalid("profiles.slot_hours", "must be positive"));
        }
        if load_shape.is_empty() {
            return Err(invalid("profiles.load_shape", "needs at least one slot"));
        }
        if let Some(i) = load_shape.iter().position(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(invalid(format!("profiles.load_shape[{i}]"), "must be positive"));
        }
        if prices.len() != load_shape.len() {
            return Err(invalid(
                "profiles.prices",
                format!("has {} entries, load_shape has {}", prices.len(), load_shape.len()),
            ));
        }
        if let Some(i) = prices.iter().position(|&b| !(b >= 0.0) || !b.is_finite()) {
            return Err(invalid(format!("profiles.prices[{i}]"), "must be nonnegative"));
        }
        Ok(Self {
            slot_hours,
            load_shape,
            prices,
            base_loads,
        })
    }

    pub fn slot_count(&self) -> usize {
        self.load_shape.len()
    }

    /// Price of slot `t` (1-based), currency per kWh.
    pub fn price(&self, slot: usize) -> f64 {
        self.prices[slot - 1]
    }

    /// Demand `(P, Q)` at a bus index in slot `t` (1-based), scaled by `l(t) T / Σ l`.
    pub fn scaled_load(&self, bus: usize, slot: usize) -> Result<(f64, f64), GridError> {
        if slot == 0 || slot > self.slot_count() {
            return Err(GridError::Index(format!("slot {slot} outside 1..={}", self.slot_count())));
        }
        let &(p, q) = self
            .base_loads
            .get(bus)
            .ok_or_else(|| GridError::Index(format!("bus index {bus}")))?;
        let total: f64 = self.load_shape.iter().sum();
        let factor = self.load_shape[slot - 1] * self.slot_count() as f64 / total;
        Ok((factor * p, factor * q))
    }
}

// ---------------------------------------------------------------------------
// JSON documents

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseDocument {
    pub base_mva: f64,
    pub buses: Vec<BusDoc>,
    pub lines: Vec<LineDoc>,
    pub generators: Vec<GeneratorDoc>,
    pub profiles: ProfilesDoc,
    /// Optional embedded fleet, used when no separate fleet file is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fleet: Option<FleetSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusDoc {
    pub id: usize,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineDoc {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub theta_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorDoc {
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub cost: [f64; 3],
    #[serde(default)]
    pub is_station: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfilesDoc {
    pub slot_hours: f64,
    pub load_shape: Vec<f64>,
    pub prices: Vec<f64>,
    pub base_loads: Vec<LoadDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadDoc {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
}

impl CaseDocument {
    pub fn parse(text: &str) -> Result<Self, GridError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| GridError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    /// Validate and convert to the in-memory model.
    pub fn build(&self) -> Result<(GridCase, ScenarioProfiles), GridError> {
        let buses: Vec<Bus> = self
            .buses
            .iter()
            .map(|b| Bus {
                id: b.id,
                v_min: b.v_min,
                v_max: b.v_max,
            })
            .collect();
        let index: HashMap<usize, usize> = buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        let lookup = |id: usize, field: String| {
            index
                .get(&id)
                .copied()
                .ok_or_else(|| invalid(field, format!("bus {id} does not exist")))
        };
        let mut lines = Vec::with_capacity(self.lines.len());
        for (i, l) in self.lines.iter().enumerate() {
            lines.push(Line {
                from: lookup(l.from, format!("lines[{i}].from"))?,
                to: lookup(l.to, format!("lines[{i}].to"))?,
                impedance: Complex64::new(l.r, l.x),
                theta_max: l.theta_max,
            });
        }
        let mut generators = Vec::with_capacity(self.generators.len());
        for (i, g) in self.generators.iter().enumerate() {
            generators.push(GeneratorSpec {
                bus: lookup(g.bus, format!("generators[{i}].bus"))?,
                p_min: g.p_min,
                p_max: g.p_max,
                q_min: g.q_min,
                q_max: g.q_max,
                cost: g.cost,
                is_station: g.is_station,
            });
        }
        let grid = GridCase::new(self.base_mva, buses, lines, generators)?;
        let mut base_loads = vec![(0.0, 0.0); grid.bus_count()];
        let mut assigned = vec![false; grid.bus_count()];
        for (i, l) in self.profiles.base_loads.iter().enumerate() {
            let k = lookup(l.bus, format!("profiles.base_loads[{i}].bus"))?;
            if std::mem::replace(&mut assigned[k], true) {
                return Err(invalid(format!("profiles.base_loads[{i}].bus"), "duplicate bus"));
            }
            if !l.p.is_finite() || !l.q.is_finite() {
                return Err(invalid(format!("profiles.base_loads[{i}]"), "must be finite"));
            }
            base_loads[k] = (l.p, l.q);
        }
        let profiles = ScenarioProfiles::new(
            self.profiles.slot_hours,
            self.profiles.load_shape.clone(),
            self.profiles.prices.clone(),
            base_loads,
        )?;
        Ok((grid, profiles))
    }

    pub fn from_model(grid: &GridCase, profiles: &ScenarioProfiles) -> Self {
        let id = |k: usize| grid.buses[k].id;
        Self {
            base_mva: grid.base_mva,
            buses: grid
                .buses
                .iter()
                .map(|b| BusDoc {
                    id: b.id,
                    v_min: b.v_min,
                    v_max: b.v_max,
                })
                .collect(),
            lines: grid
                .lines
                .iter()
                .map(|l| LineDoc {
                    from: id(l.from),
                    to: id(l.to),
                    r: l.impedance.re,
                    x: l.impedance.im,
                    theta_max: l.theta_max,
                })
                .collect(),
            generators: grid
                .generators
                .iter()
                .map(|g| GeneratorDoc {
                    bus: id(g.bus),
                    p_min: g.p_min,
                    p_max: g.p_max,
                    q_min: g.q_min,
                    q_max: g.q_max,
                    cost: g.cost,
                    is_station: g.is_station,
                })
                .collect(),
            profiles: ProfilesDoc {
                slot_hours: profiles.slot_hours,
                load_shape: profiles.load_shape.clone(),
                prices: profiles.prices.clone(),
                base_loads: profiles
                    .base_loads
                    .iter()
                    .enumerate()
                    .filter(|(_, &(p, q))| p != 0.0 || q != 0.0)
                    .map(|(k, &(p, q))| LoadDoc { bus: id(k), p, q })
                    .collect(),
            },
            fleet: None,
        }
    }
}

pub fn read_case_document(path: impl AsRef<Path>) -> Result<CaseDocument, GridError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })?;
    CaseDocument::parse(&text)
}

pub fn load_case(path: impl AsRef<Path>) -> Result<(GridCase, ScenarioProfiles), GridError> {
    read_case_document(path)?.build()
}

pub fn write_case(
    path: impl AsRef<Path>,
    grid: &GridCase,
    profiles: &ScenarioProfiles,
) -> Result<(), GridError> {
    let path = path.as_ref();
    let doc = CaseDocument::from_model(grid, profiles);
    let text = serde_json::to_string_pretty(&doc).expect("case documents always serialize");
    fs::write(path, text).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })
}

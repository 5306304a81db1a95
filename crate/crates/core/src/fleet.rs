//! PEV population: generation, required charging slots and the active set over time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FleetError {
    #[error("energy per slot must be positive, got {0}")]
    NonPositiveEnergy(f64),
    #[error("empty arrival window [{0}, {1}]")]
    EmptyWindow(f64, f64),
    #[error("invalid fleet field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("PEV {id} needs {needed} slots but its window [{arrival}, {departure}] has {available}")]
    Unsatisfiable {
        id: usize,
        needed: usize,
        arrival: usize,
        departure: usize,
        available: usize,
    },
    #[error("charging decision for PEV {0} which is not in the active set")]
    NotActive(usize),
    #[error("missing charging decision for active PEV {0}")]
    MissingDecision(usize),
}

fn invalid(field: &str, reason: impl Into<String>) -> FleetError {
    FleetError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PevRecord {
    pub id: usize,
    /// Bus id of the charging station.
    pub station: usize,
    pub arrival_slot: usize,
    pub departure_slot: usize,
    pub capacity_kwh: f64,
    pub initial_soc: f64,
    pub max_rate_kw: f64,
    pub efficiency: f64,
}

impl PevRecord {
    pub fn energy_per_slot(&self, slot_hours: f64) -> f64 {
        self.max_rate_kw * slot_hours
    }

    pub fn initial_demand(&self) -> f64 {
        self.capacity_kwh * (1.0 - self.initial_soc)
    }

    pub fn required_slots(&self, slot_hours: f64) -> Result<usize, FleetError> {
        demand_slots(self.initial_demand(), self.efficiency, self.energy_per_slot(slot_hours))
    }

    /// Check ranges and that the full demand fits between arrival and departure.
    pub fn validate(&self, slot_count: usize, slot_hours: f64) -> Result<(), FleetError> {
        if !(self.capacity_kwh > 0.0) {
            return Err(invalid("capacity_kwh", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.initial_soc) {
            return Err(invalid("initial_soc", "must lie in [0, 1)"));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(invalid("efficiency", "must lie in (0, 1]"));
        }
        if !(self.max_rate_kw > 0.0) {
            return Err(invalid("max_rate_kw", "must be positive"));
        }
        if !(1 <= self.arrival_slot && self.arrival_slot <= self.departure_slot && self.departure_slot <= slot_count)
        {
            return Err(invalid(
                "arrival_slot",
                format!(
                    "PEV {} needs 1 <= arrival {} <= departure {} <= {slot_count}",
                    self.id, self.arrival_slot, self.departure_slot
                ),
            ));
        }
        let needed = self.required_slots(slot_hours)?;
        let available = self.departure_slot - self.arrival_slot + 1;
        if needed > available {
            return Err(FleetError::Unsatisfiable {
                id: self.id,
                needed,
                arrival: self.arrival_slot,
                departure: self.departure_slot,
                available,
            });
        }
        Ok(())
    }
}

/// Number of full-rate slots needed to deliver `demand_kwh`:
/// `ceil(demand / (efficiency * energy_per_slot))`.
pub fn demand_slots(demand_kwh: f64, efficiency: f64, energy_per_slot: f64) -> Result<usize, FleetError> {
    if !(energy_per_slot > 0.0) {
        return Err(FleetError::NonPositiveEnergy(energy_per_slot));
    }
    let ratio = demand_kwh.max(0.0) / (efficiency * energy_per_slot);
    // a demand that is an exact multiple must not pick up an extra slot from rounding noise
    Ok((ratio - 1e-9).ceil().max(0.0) as usize)
}

/// `ceil(C (1 - s0) / (u_h E))`.
pub fn required_slots(
    capacity_kwh: f64,
    initial_soc: f64,
    efficiency: f64,
    energy_per_slot: f64,
) -> Result<usize, FleetError> {
    demand_slots(capacity_kwh * (1.0 - initial_soc), efficiency, energy_per_slot)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalParams {
    pub mean_hour: f64,
    pub sd_hour: f64,
    /// Clock hours `[start, end)`; hours past midnight are written as 24+.
    pub window: [f64; 2],
}

impl Default for ArrivalParams {
    fn default() -> Self {
        Self {
            mean_hour: 20.0,
            sd_hour: 1.5,
            window: [18.0, 24.0],
        }
    }
}

impl ArrivalParams {
    fn sampler(&self) -> Result<TruncatedNormal, FleetError> {
        let [a, b] = self.window;
        if !(a < b) {
            return Err(FleetError::EmptyWindow(a, b));
        }
        let normal = Normal::new(self.mean_hour, self.sd_hour).map_err(|e| invalid("arrival.sd_hour", e.to_string()))?;
        let (lo, hi) = (normal.cdf(a), normal.cdf(b));
        if !(hi > lo) {
            return Err(FleetError::EmptyWindow(a, b));
        }
        Ok(TruncatedNormal { normal, lo, hi, a, b })
    }
}

/// Inverse-CDF sampler; each draw consumes exactly one uniform.
struct TruncatedNormal {
    normal: Normal,
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
}

impl TruncatedNormal {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let h = self.normal.inverse_cdf(self.lo + u * (self.hi - self.lo));
        h.clamp(self.a, self.b.next_down())
    }
}

/// Arrival clock hours, deterministic in `seed`.
pub fn sample_arrival_hours(count: usize, seed: u64, params: &ArrivalParams) -> Result<Vec<f64>, FleetError> {
    let sampler = params.sampler()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| sampler.sample(&mut rng)).collect())
}

/// Slot (1-based) containing a clock hour for a horizon starting at `start_hour`.
pub fn hour_to_slot(hour: f64, start_hour: f64, slot_hours: f64) -> usize {
    ((hour - start_hour) / slot_hours).floor().max(0.0) as usize + 1
}

/// Arrival slots, deterministic in `seed`.
pub fn sample_arrivals(
    count: usize,
    seed: u64,
    params: &ArrivalParams,
    start_hour: f64,
    slot_hours: f64,
) -> Result<Vec<usize>, FleetError> {
    Ok(sample_arrival_hours(count, seed, params)?
        .into_iter()
        .map(|h| hour_to_slot(h, start_hour, slot_hours))
        .collect())
}

/// Generator settings; omitted fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetConfig {
    pub count: usize,
    pub arrival: ArrivalParams,
    pub capacity_kwh: f64,
    pub initial_soc: f64,
    pub max_rate_kw: f64,
    pub efficiency: f64,
    /// Extra slots after the minimum charging window, drawn uniformly (inclusive).
    pub departure_slack: [usize; 2],
    pub seed: u64,
    /// Clock hour at which slot 1 begins.
    pub start_hour: f64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            count: 0,
            arrival: ArrivalParams::default(),
            capacity_kwh: 100.0,
            initial_soc: 0.2,
            max_rate_kw: 20.0,
            efficiency: 0.9,
            departure_slack: [0, 4],
            seed: 0,
            start_hour: 18.0,
        }
    }
}

impl FleetConfig {
    /// Draw a fleet. Stations are bus ids, chosen uniformly. Vehicles whose demand cannot fit
    /// before the end of the horizon are redrawn.
    pub fn generate(&self, stations: &[usize], slot_count: usize, slot_hours: f64) -> Result<Vec<PevRecord>, FleetError> {
        if self.count > 0 && stations.is_empty() {
            return Err(invalid("count", "the case has no charging stations"));
        }
        let [smin, smax] = self.departure_slack;
        if smin > smax {
            return Err(invalid("departure_slack", "min exceeds max"));
        }
        let sampler = self.arrival.sampler()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut fleet = Vec::with_capacity(self.count);
        for id in 0..self.count {
            let station = stations[rng.random_range(0..stations.len())];
            let mut attempts = 0;
            let record = loop {
                let hour = sampler.sample(&mut rng);
                let slack = rng.random_range(smin..=smax);
                let arrival = hour_to_slot(hour, self.start_hour, slot_hours).min(slot_count);
                let mut rec = PevRecord {
                    id,
                    station,
                    arrival_slot: arrival,
                    departure_slot: arrival,
                    capacity_kwh: self.capacity_kwh,
                    initial_soc: self.initial_soc,
                    max_rate_kw: self.max_rate_kw,
                    efficiency: self.efficiency,
                };
                let needed = rec.required_slots(slot_hours)?;
                rec.departure_slot = (arrival + needed + slack).min(slot_count);
                match rec.validate(slot_count, slot_hours) {
                    Ok(()) => break rec,
                    Err(FleetError::Unsatisfiable { .. }) if attempts < 1000 => attempts += 1,
                    Err(e) => return Err(e),
                }
            };
            fleet.push(record);
        }
        Ok(fleet)
    }
}

/// A fleet given either verbatim or as a generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FleetSpec {
    Records(Vec<PevRecord>),
    Config(FleetConfig),
}

impl FleetSpec {
    /// Parse a JSON array of records or a generator object; errors carry the field path.
    pub fn parse(text: &str) -> Result<Self, FleetError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| invalid("fleet", e.to_string()))?;
        let is_records = value.is_array();
        let at = |e: serde_path_to_error::Error<serde_json::Error>| {
            let path = e.path().to_string();
            let field = if path == "." { "fleet".to_string() } else { format!("fleet.{path}") };
            invalid(&field, e.into_inner().to_string())
        };
        if is_records {
            serde_path_to_error::deserialize(value).map(FleetSpec::Records).map_err(at)
        } else {
            serde_path_to_error::deserialize(value).map(FleetSpec::Config).map_err(at)
        }
    }

    pub fn resolve(&self, stations: &[usize], slot_count: usize, slot_hours: f64) -> Result<Vec<PevRecord>, FleetError> {
        let records = match self {
            FleetSpec::Records(r) => r.clone(),
            FleetSpec::Config(c) => c.generate(stations, slot_count, slot_hours)?,
        };
        for r in &records {
            if !stations.contains(&r.station) {
                return Err(invalid("station", format!("PEV {} is at bus {} which is not a charging station", r.id, r.station)));
            }
            r.validate(slot_count, slot_hours)?;
        }
        Ok(records)
    }
}

/// Remaining demand below this fraction of one slot's delivered energy counts as satisfied.
const DEMAND_TOL: f64 = 1e-9;

/// Fleet bookkeeping during a run. `clock` is the current slot (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct FleetState {
    pub clock: usize,
    pub records: Vec<PevRecord>,
    pub remaining_demand: Vec<f64>,
    pub soc: Vec<f64>,
    /// Indices of vehicles that departed with demand left.
    pub unmet: Vec<usize>,
    slot_hours: f64,
}

impl FleetState {
    pub fn new(records: Vec<PevRecord>, slot_hours: f64) -> Self {
        let remaining_demand = records.iter().map(PevRecord::initial_demand).collect();
        let soc = records.iter().map(|r| r.initial_soc).collect();
        Self {
            clock: 1,
            records,
            remaining_demand,
            soc,
            unmet: Vec::new(),
            slot_hours,
        }
    }

    pub fn slot_hours(&self) -> f64 {
        self.slot_hours
    }

    pub fn energy_per_slot(&self, i: usize) -> f64 {
        self.records[i].energy_per_slot(self.slot_hours)
    }

    /// `τ̄` from the current remaining demand.
    pub fn required_slots(&self, i: usize) -> usize {
        let r = &self.records[i];
        demand_slots(self.remaining_demand[i], r.efficiency, self.energy_per_slot(i)).unwrap_or(0)
    }

    pub fn is_active(&self, i: usize) -> bool {
        let r = &self.records[i];
        r.arrival_slot <= self.clock && self.clock <= r.departure_slot && self.required_slots(i) > 0
    }

    /// Record indices of the vehicles in `C(t)`.
    pub fn active_set(&self) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.is_active(i)).collect()
    }

    /// Latest departure slot over the active set.
    pub fn horizon(&self) -> Option<usize> {
        self.active_set().into_iter().map(|i| self.records[i].departure_slot).max()
    }

    /// Apply slot decisions `(record index, charge)` covering exactly `C(t)` and move to `t + 1`.
    pub fn advance(&self, applied: &[(usize, bool)]) -> Result<FleetState, FleetError> {
        let active = self.active_set();
        for &(i, _) in applied {
            if !active.contains(&i) {
                return Err(FleetError::NotActive(i));
            }
        }
        if let Some(&i) = active.iter().find(|i| !applied.iter().any(|(j, _)| j == *i)) {
            return Err(FleetError::MissingDecision(i));
        }
        let mut next = self.clone();
        for &(i, charge) in applied {
            if !charge {
                continue;
            }
            let r = &self.records[i];
            let delivered = r.efficiency * self.energy_per_slot(i);
            let mut d = (self.remaining_demand[i] - delivered).max(0.0);
            if d <= DEMAND_TOL * delivered {
                d = 0.0;
            }
            next.remaining_demand[i] = d;
            next.soc[i] = (self.soc[i] + delivered / r.capacity_kwh).min(1.0);
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.departure_slot == self.clock && next.remaining_demand[i] > 0.0 && !next.unmet.contains(&i) {
                next.unmet.push(i);
            }
        }
        next.clock += 1;
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pev(id: usize, arrival: usize, departure: usize) -> PevRecord {
        PevRecord {
            id,
            station: 1,
            arrival_slot: arrival,
            departure_slot: departure,
            capacity_kwh: 100.0,
            initial_soc: 0.2,
            max_rate_kw: 20.0,
            efficiency: 1.0,
        }
    }

    #[test]
    fn slot_counts() {
        assert_eq!(required_slots(100.0, 0.2, 1.0, 10.0), Ok(8));
        assert_eq!(demand_slots(60.0, 1.0, 10.0), Ok(6));
        assert_eq!(demand_slots(0.0, 1.0, 10.0), Ok(0));
        assert_eq!(required_slots(100.0, 0.2, 0.9, 10.0), Ok(9));
        assert!(demand_slots(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn empty_sample() {
        assert!(sample_arrivals(0, 1, &ArrivalParams::default(), 18.0, 0.5).unwrap().is_empty());
        let bad = ArrivalParams { window: [20.0, 20.0], ..Default::default() };
        assert!(sample_arrival_hours(3, 1, &bad).is_err());
    }

    #[test]
    fn advance_examples() {
        let state = FleetState::new(vec![pev(0, 1, 10)], 0.5);
        assert_eq!(state.remaining_demand[0], 80.0);
        let next = state.advance(&[(0, true)]).unwrap();
        assert_eq!(next.remaining_demand[0], 70.0);
        assert!((next.soc[0] - 0.3).abs() < 1e-12);
        let idle = next.advance(&[(0, false)]).unwrap();
        assert_eq!(idle.remaining_demand[0], 70.0);
        assert_eq!(idle.soc[0], next.soc[0]);

        let mut almost = FleetState::new(vec![pev(0, 1, 10)], 0.5);
        almost.remaining_demand[0] = 5.0;
        almost.soc[0] = 0.95;
        let done = almost.advance(&[(0, true)]).unwrap();
        assert_eq!(done.remaining_demand[0], 0.0);
        assert_eq!(done.soc[0], 1.0);
        assert!(done.active_set().is_empty());
    }

    #[test]
    fn advance_rejects_inactive() {
        let state = FleetState::new(vec![pev(0, 3, 12)], 0.5);
        assert_eq!(state.advance(&[(0, true)]), Err(FleetError::NotActive(0)));
    }

    #[test]
    fn horizon_examples() {
        let state = FleetState::new(vec![pev(0, 1, 12), pev(1, 1, 20)], 0.5);
        assert_eq!(state.horizon(), Some(20));
        let empty = FleetState::new(vec![], 0.5);
        assert_eq!(empty.horizon(), None);
        let mut single = FleetState::new(vec![pev(0, 1, 3)], 0.5);
        single.clock = 3;
        assert_eq!(single.horizon(), Some(3));
    }

    #[test]
    fn unmet_demand_flagged() {
        let state = FleetState::new(vec![pev(0, 1, 8)], 0.5);
        let next = state.advance(&[(0, false)]).unwrap();
        assert!(next.unmet.is_empty());
        let mut s = next;
        while s.clock <= 8 {
            let act: Vec<_> = s.active_set().into_iter().map(|i| (i, false)).collect();
            s = s.advance(&act).unwrap();
        }
        assert_eq!(s.unmet, vec![0]);
    }

    #[test]
    fn generated_fleet_is_admissible_and_deterministic() {
        let cfg = FleetConfig { count: 50, seed: 7, ..Default::default() };
        let a = cfg.generate(&[2, 5], 24, 0.5).unwrap();
        let b = cfg.generate(&[2, 5], 24, 0.5).unwrap();
        assert_eq!(a, b);
        for r in &a {
            r.validate(24, 0.5).unwrap();
            assert!(r.arrival_slot <= 12);
            assert!(r.station == 2 || r.station == 5);
        }
    }

    #[test]
    fn fleet_spec_untagged() {
        let recs = FleetSpec::parse(
            r#"[{"id":0,"station":1,"arrival_slot":1,"departure_slot":3,"capacity_kwh":20,
                 "initial_soc":0.5,"max_rate_kw":20,"efficiency":1.0}]"#,
        )
        .unwrap();
        assert!(matches!(recs, FleetSpec::Records(ref r) if r.len() == 1));
        let cfg = FleetSpec::parse(
            r#"{"count":2,"capacity_kwh":100,"initial_soc":0.2,"max_rate_kw":20,"efficiency":0.9,
                "departure_slack":[0,2],"seed":1}"#,
        )
        .unwrap();
        assert!(matches!(cfg, FleetSpec::Config(ref c) if c.arrival == ArrivalParams::default()));
    }
}

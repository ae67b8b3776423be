//! Domain types shared by every stage of the simulator.
//!
//! Time is a discrete grid of integer ticks, distances are planar Euclidean
//! meters inside a rectangular confined area, energy is in mAh and current
//! intensity in mA. All types are plain values and are `Send + Sync`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mobility::ProvisionSeries;

/// A tick index on the scenario [`TimeGrid`].
pub type Tick = u32;

/// Wireless transfer range used when an advertisement does not state one.
pub const DEFAULT_RANGE_M: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfinedArea {
    pub width_m: f64,
    pub height_m: f64,
}

impl ConfinedArea {
    pub fn new(width_m: f64, height_m: f64) -> Self {
        Self { width_m, height_m }
    }

    pub fn contains(&self, loc: Location) -> bool {
        (0.0..=self.width_m).contains(&loc.x_m) && (0.0..=self.height_m).contains(&loc.y_m)
    }

    pub fn clamp(&self, loc: Location) -> Location {
        Location::new(
            loc.x_m.clamp(0.0, self.width_m),
            loc.y_m.clamp(0.0, self.height_m),
        )
    }

    pub fn center(&self) -> Location {
        Location::new(self.width_m / 2.0, self.height_m / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x_m: f64,
    pub y_m: f64,
}

impl Location {
    pub fn new(x_m: f64, y_m: f64) -> Self {
        Self { x_m, y_m }
    }
}

/// Euclidean distance in meters.
pub fn distance(a: Location, b: Location) -> f64 {
    (a.x_m - b.x_m).hypot(a.y_m - b.y_m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    /// Scenario start as seconds since the Unix epoch.
    pub epoch: i64,
    pub resolution_min: u32,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self {
            epoch: 0,
            resolution_min: 1,
        }
    }
}

impl TimeGrid {
    pub fn ticks_per_hour(&self) -> u32 {
        (60 / self.resolution_min.max(1)).max(1)
    }
}

/// Advertised quality attributes of an energy service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QoS {
    #[serde(default = "default_range")]
    pub range_m: f64,
    pub start_tick: Tick,
    pub end_tick: Tick,
    /// Deliverable energy capacity over `[start_tick, end_tick)`.
    pub dec_mah: f64,
    pub intensity_ma: f64,
    /// Transmission success rate. Carried, not used by composition.
    pub tsr: f64,
    /// Carried, not used by composition.
    pub reliability: f64,
}

fn default_range() -> f64 {
    DEFAULT_RANGE_M
}

impl QoS {
    pub fn duration(&self) -> Tick {
        self.end_tick.saturating_sub(self.start_tick)
    }

    /// Energy delivered per connected tick under the uniform-rate model.
    pub fn rate_per_tick(&self) -> f64 {
        match self.duration() {
            0 => 0.0,
            d => self.dec_mah / f64::from(d),
        }
    }
}

/// Per-tick location estimate of a provider with the probability of being there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AvailabilityPattern {
    pub ticks: Vec<Tick>,
    pub locations: Vec<Location>,
    pub probabilities: Vec<f64>,
}

impl AvailabilityPattern {
    /// A provider sitting at `loc` with certainty over `[start, end)`.
    pub fn stationary(loc: Location, start: Tick, end: Tick) -> Self {
        let n = end.saturating_sub(start) as usize;
        Self {
            ticks: (start..end).collect(),
            locations: vec![loc; n],
            probabilities: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    /// Index of `tick` in the pattern, if covered.
    pub fn index_of(&self, tick: Tick) -> Option<usize> {
        let first = *self.ticks.first()?;
        let idx = tick.checked_sub(first)? as usize;
        (self.ticks.get(idx) == Some(&tick)).then_some(idx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyService {
    pub eid: String,
    pub owner_id: String,
    #[serde(default = "default_functionality")]
    pub functionality: String,
    pub qos: QoS,
    pub availability: AvailabilityPattern,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intermittence: Option<ProvisionSeries>,
}

fn default_functionality() -> String {
    "wireless-energy".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRequest {
    pub id: String,
    pub t: Tick,
    pub l: Location,
    pub re_mah: f64,
    pub ci_ma: f64,
    pub du_ticks: Tick,
}

impl EnergyRequest {
    pub fn end(&self) -> Tick {
        self.t + self.du_ticks
    }

    pub fn window(&self) -> (Tick, Tick) {
        (self.t, self.end())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub area: ConfinedArea,
    #[serde(default)]
    pub grid: TimeGrid,
    pub services: Vec<EnergyService>,
    pub requests: Vec<EnergyRequest>,
    #[serde(default)]
    pub switch_cost_mah: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Scenario {
    pub fn service(&self, eid: &str) -> Option<&EnergyService> {
        self.services.iter().find(|s| s.eid == eid)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json_string()?)?;
        Ok(())
    }
}

/// Checks every type invariant and reports each violation as text.
///
/// An empty result means the scenario is well formed.
pub fn validate_scenario(s: &Scenario) -> Vec<String> {
    let mut out = Vec::new();
    if !(s.area.width_m > 0.0) || !(s.area.height_m > 0.0) {
        out.push(format!(
            "area: width_m > 0 and height_m > 0 violated ({} x {})",
            s.area.width_m, s.area.height_m
        ));
    }
    if s.grid.resolution_min < 1 {
        out.push("grid: resolution_min >= 1 violated".to_owned());
    }
    if !(s.switch_cost_mah >= 0.0) {
        out.push(format!(
            "scenario: switch_cost_mah >= 0 violated ({})",
            s.switch_cost_mah
        ));
    }

    let mut seen = HashSet::new();
    for svc in &s.services {
        let id = &svc.eid;
        if !seen.insert(id.as_str()) {
            out.push(format!("service {id}: duplicate eid"));
        }
        let q = &svc.qos;
        if q.start_tick >= q.end_tick {
            out.push(format!("service {id}: start_tick < end_tick violated"));
        }
        if !(q.dec_mah >= 0.0) {
            out.push(format!("service {id}: dec_mah >= 0 violated ({})", q.dec_mah));
        }
        if !(q.intensity_ma > 0.0) {
            out.push(format!(
                "service {id}: intensity_ma > 0 violated ({})",
                q.intensity_ma
            ));
        }
        if !(q.range_m > 0.0) {
            out.push(format!("service {id}: range_m > 0 violated ({})", q.range_m));
        }
        if !(0.0..=1.0).contains(&q.tsr) {
            out.push(format!("service {id}: tsr in [0,1] violated ({})", q.tsr));
        }
        if !(0.0..=1.0).contains(&q.reliability) {
            out.push(format!(
                "service {id}: reliability in [0,1] violated ({})",
                q.reliability
            ));
        }
        validate_availability(svc, s.area, &mut out);
    }

    let mut seen = HashSet::new();
    for req in &s.requests {
        let id = &req.id;
        if !seen.insert(id.as_str()) {
            out.push(format!("request {id}: duplicate id"));
        }
        if !(req.re_mah > 0.0) {
            out.push(format!("request {id}: re_mah > 0 violated ({})", req.re_mah));
        }
        if !(req.ci_ma > 0.0) {
            out.push(format!("request {id}: ci_ma > 0 violated ({})", req.ci_ma));
        }
        if req.du_ticks < 1 {
            out.push(format!("request {id}: du_ticks >= 1 violated"));
        }
        if !s.area.contains(req.l) {
            out.push(format!(
                "request {id}: location ({}, {}) outside area",
                req.l.x_m, req.l.y_m
            ));
        }
    }
    out
}

fn validate_availability(svc: &EnergyService, area: ConfinedArea, out: &mut Vec<String>) {
    let id = &svc.eid;
    let a = &svc.availability;
    if a.ticks.len() != a.locations.len() || a.ticks.len() != a.probabilities.len() {
        out.push(format!(
            "service {id}: availability lengths differ (ticks {}, locations {}, probabilities {})",
            a.ticks.len(),
            a.locations.len(),
            a.probabilities.len()
        ));
    }
    if a.ticks.windows(2).any(|w| w[0] >= w[1]) {
        out.push(format!("service {id}: availability ticks not strictly increasing"));
    }
    let (st, et) = (svc.qos.start_tick, svc.qos.end_tick);
    let spans = a.ticks.len() == et.saturating_sub(st) as usize
        && a.ticks.first() == Some(&st)
        && a.ticks.windows(2).all(|w| w[1] == w[0] + 1);
    if st < et && !spans {
        out.push(format!(
            "service {id}: availability ticks do not span [{st}, {et})"
        ));
    }
    for (tick, p) in a.ticks.iter().zip(&a.probabilities) {
        if !(0.0..=1.0).contains(p) {
            out.push(format!(
                "service {id}: probability at tick {tick} outside [0,1] ({p})"
            ));
        }
    }
    for (tick, loc) in a.ticks.iter().zip(&a.locations) {
        if !area.contains(*loc) {
            out.push(format!(
                "service {id}: location at tick {tick} outside area ({}, {})",
                loc.x_m, loc.y_m
            ));
        }
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn service(eid: &str, st: Tick, et: Tick, loc: Location) -> EnergyService {
        EnergyService {
            eid: eid.to_owned(),
            owner_id: format!("owner-{eid}"),
            functionality: default_functionality(),
            qos: QoS {
                range_m: DEFAULT_RANGE_M,
                start_tick: st,
                end_tick: et,
                dec_mah: f64::from(et - st),
                intensity_ma: 500.0,
                tsr: 0.95,
                reliability: 0.9,
            },
            availability: AvailabilityPattern::stationary(loc, st, et),
            intermittence: None,
        }
    }

    pub fn request(id: &str, t: Tick, du: Tick, loc: Location) -> EnergyRequest {
        EnergyRequest {
            id: id.to_owned(),
            t,
            l: loc,
            re_mah: 10.0,
            ci_ma: 1000.0,
            du_ticks: du,
        }
    }

    pub fn scenario() -> Scenario {
        let here = Location::new(2.0, 2.0);
        Scenario {
            area: ConfinedArea::new(10.0, 10.0),
            grid: TimeGrid::default(),
            services: vec![service("e1", 0, 10, here), service("e2", 5, 20, here)],
            requests: vec![request("q1", 0, 10, here)],
            switch_cost_mah: 0.0,
            rng_seed: 7,
        }
    }
}

//! Synthetic and dataset-driven scenario construction.
//!
//! Providers sit at a home seat and wander within a small radius of it
//! (random waypoint). Disconnections are injected afterwards by zeroing the
//! availability probability on drawn runs of ticks, so the same mobility
//! trace can be replayed under several disconnection frequencies.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{DiscreteCDF, Poisson};

use crate::error::{Error, Result};
use crate::mobility::stable_hash;
use crate::model::{
    AvailabilityPattern, ConfinedArea, EnergyRequest, EnergyService, Location, QoS, Scenario, Tick,
    TimeGrid,
};

/// Inclusive uniform bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds<T> {
    pub min: T,
    pub max: T,
}

impl<T: Copy> Bounds<T> {
    pub fn new(min: T, max: T) -> Self {
        Self { min, max }
    }

    pub fn fixed(v: T) -> Self {
        Self { min: v, max: v }
    }
}

impl Bounds<Tick> {
    fn sample(&self, rng: &mut impl Rng) -> Tick {
        rng.gen_range(self.min..=self.max)
    }
}

impl Bounds<f64> {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.gen_range(self.min..=self.max)
        }
    }
}

fn check_bounds<T: PartialOrd + Copy + std::fmt::Debug>(name: &str, b: &Bounds<T>, floor: T) -> Result<()> {
    if b.min > b.max {
        return Err(Error::InvalidConfig(format!("{name}: min {:?} > max {:?}", b.min, b.max)));
    }
    if b.min < floor {
        return Err(Error::InvalidConfig(format!("{name}: min {:?} below {:?}", b.min, floor)));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub service_count: usize,
    pub request_count: usize,
    pub area: ConfinedArea,
    #[serde(default = "one")]
    pub resolution_min: u32,
    /// Services and requests start in `[0, horizon_ticks)`.
    pub horizon_ticks: Tick,
    /// Relative arrival weight per hour of day; empty means uniform.
    #[serde(default)]
    pub arrival_profile: Vec<f64>,
    pub service_duration: Bounds<Tick>,
    pub dec_mah: Bounds<f64>,
    pub intensities_ma: Vec<f64>,
    #[serde(default = "default_range")]
    pub range_m: f64,
    /// Radius of the wander disk around each provider's seat.
    #[serde(default = "default_wander")]
    pub wander_m: f64,
    #[serde(default = "default_speed")]
    pub speed_m_per_tick: f64,
    pub request_re_mah: Bounds<f64>,
    pub request_ci_ma: Vec<f64>,
    pub request_duration: Bounds<Tick>,
    /// Expected disconnections per service.
    #[serde(default)]
    pub disconnection_freq: f64,
    #[serde(default = "default_gap")]
    pub disconnection_length: Bounds<Tick>,
    #[serde(default)]
    pub switch_cost_mah: f64,
    #[serde(default = "default_voltage")]
    pub nominal_voltage_v: f64,
    pub seed: u64,
}

fn one() -> u32 {
    1
}
fn default_range() -> f64 {
    crate::model::DEFAULT_RANGE_M
}
fn default_wander() -> f64 {
    1.0
}
fn default_speed() -> f64 {
    0.5
}
fn default_gap() -> Bounds<Tick> {
    Bounds::new(1, 5)
}
fn default_voltage() -> f64 {
    5.0
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            service_count: 100,
            request_count: 20,
            area: ConfinedArea::new(12.0, 12.0),
            resolution_min: 1,
            horizon_ticks: 120,
            arrival_profile: Vec::new(),
            service_duration: Bounds::new(10, 30),
            dec_mah: Bounds::new(20.0, 120.0),
            intensities_ma: vec![300.0, 500.0, 700.0],
            range_m: default_range(),
            wander_m: default_wander(),
            speed_m_per_tick: default_speed(),
            request_re_mah: Bounds::new(20.0, 60.0),
            request_ci_ma: vec![1000.0],
            request_duration: Bounds::new(10, 30),
            disconnection_freq: 0.0,
            disconnection_length: default_gap(),
            switch_cost_mah: 0.0,
            nominal_voltage_v: default_voltage(),
            seed: 42,
        }
    }
}

impl GeneratorConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.area.width_m > 0.0 && self.area.height_m > 0.0) {
            return bad("area must have positive width and height".into());
        }
        if self.resolution_min < 1 || self.horizon_ticks < 1 {
            return bad("resolution_min and horizon_ticks must be at least 1".into());
        }
        if self.arrival_profile.iter().any(|w| !(*w >= 0.0))
            || (!self.arrival_profile.is_empty() && self.arrival_profile.iter().sum::<f64>() <= 0.0)
        {
            return bad("arrival_profile weights must be non-negative with a positive sum".into());
        }
        check_bounds("service_duration", &self.service_duration, 1)?;
        check_bounds("request_duration", &self.request_duration, 1)?;
        check_bounds("disconnection_length", &self.disconnection_length, 1)?;
        check_bounds("dec_mah", &self.dec_mah, 0.0)?;
        check_bounds("request_re_mah", &self.request_re_mah, f64::MIN_POSITIVE)?;
        for (name, set) in [("intensities_ma", &self.intensities_ma), ("request_ci_ma", &self.request_ci_ma)] {
            if set.is_empty() || set.iter().any(|v| !(*v > 0.0) || v.fract() != 0.0) {
                return bad(format!("{name} must be a nonempty set of positive whole mA"));
            }
        }
        if !(self.range_m > 0.0) || !(self.wander_m >= 0.0) || !(self.speed_m_per_tick > 0.0) {
            return bad("range_m and speed_m_per_tick must be positive, wander_m non-negative".into());
        }
        if !(self.disconnection_freq >= 0.0) || !self.disconnection_freq.is_finite() {
            return bad("disconnection_freq must be finite and non-negative".into());
        }
        if !(self.switch_cost_mah >= 0.0) {
            return bad("switch_cost_mah must be non-negative".into());
        }
        if !(self.nominal_voltage_v > 0.0) {
            return Err(Error::InvalidVoltage(self.nominal_voltage_v));
        }
        Ok(())
    }

    fn grid(&self) -> TimeGrid {
        TimeGrid {
            epoch: 0,
            resolution_min: self.resolution_min,
        }
    }
}

fn random_point(area: &ConfinedArea, rng: &mut impl Rng) -> Location {
    Location::new(rng.gen_range(0.0..=area.width_m), rng.gen_range(0.0..=area.height_m))
}

/// Random-waypoint walk inside the disk of radius `wander` around `home`.
fn waypoint_trace(
    home: Location,
    area: &ConfinedArea,
    wander: f64,
    speed: f64,
    ticks: usize,
    rng: &mut impl Rng,
) -> Vec<Location> {
    let pick = |rng: &mut ChaCha8Rng| {
        let r = wander * rng.gen::<f64>().sqrt();
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        area.clamp(Location::new(home.x_m + r * a.cos(), home.y_m + r * a.sin()))
    };
    let mut local = ChaCha8Rng::seed_from_u64(rng.gen());
    let mut pos = home;
    let mut target = pick(&mut local);
    let mut out = Vec::with_capacity(ticks);
    for _ in 0..ticks {
        out.push(pos);
        let (dx, dy) = (target.x_m - pos.x_m, target.y_m - pos.y_m);
        let d = dx.hypot(dy);
        if d <= speed {
            pos = target;
            target = pick(&mut local);
        } else {
            pos = Location::new(pos.x_m + dx / d * speed, pos.y_m + dy / d * speed);
        }
    }
    out
}

/// Start-tick sampler weighted by the hour-of-day profile.
struct Arrivals {
    dist: Option<WeightedIndex<f64>>,
    horizon: Tick,
}

impl Arrivals {
    fn new(profile: &[f64], horizon: Tick, ticks_per_hour: u32) -> Result<Self> {
        if profile.is_empty() {
            return Ok(Self { dist: None, horizon });
        }
        let weights = (0..horizon).map(|t| profile[(t / ticks_per_hour) as usize % profile.len()]);
        let dist = WeightedIndex::new(weights)
            .map_err(|e| Error::InvalidConfig(format!("arrival profile over the horizon: {e}")))?;
        Ok(Self { dist: Some(dist), horizon })
    }

    fn sample(&self, rng: &mut impl Rng) -> Tick {
        match &self.dist {
            Some(d) => d.sample(rng) as Tick,
            None => rng.gen_range(0..self.horizon),
        }
    }
}

fn choose(set: &[f64], rng: &mut impl Rng) -> f64 {
    set[rng.gen_range(0..set.len())]
}

fn make_service(
    i: usize,
    st: Tick,
    et: Tick,
    dec_mah: f64,
    cfg: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
) -> EnergyService {
    let home = random_point(&cfg.area, rng);
    let intensity_ma = choose(&cfg.intensities_ma, rng);
    let trace = waypoint_trace(
        home,
        &cfg.area,
        cfg.wander_m,
        cfg.speed_m_per_tick,
        (et - st) as usize,
        rng,
    );
    EnergyService {
        eid: format!("e{i:05}"),
        owner_id: format!("o{i:05}"),
        functionality: "wireless-energy".into(),
        qos: QoS {
            range_m: cfg.range_m,
            start_tick: st,
            end_tick: et,
            dec_mah,
            intensity_ma,
            tsr: 1.0,
            reliability: 1.0,
        },
        availability: AvailabilityPattern {
            ticks: (st..et).collect(),
            locations: trace,
            probabilities: vec![1.0; (et - st) as usize],
        },
        intermittence: None,
    }
}

/// Builds a seeded synthetic scenario and applies the configured
/// disconnection randomizer.
pub fn generate_scenario(cfg: &GeneratorConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let grid = cfg.grid();
    let arrivals = Arrivals::new(&cfg.arrival_profile, cfg.horizon_ticks, grid.ticks_per_hour())?;

    let mut services = Vec::with_capacity(cfg.service_count);
    for i in 0..cfg.service_count {
        let st = arrivals.sample(&mut rng);
        let et = st + cfg.service_duration.sample(&mut rng);
        let dec = cfg.dec_mah.sample(&mut rng);
        services.push(make_service(i, st, et, dec, cfg, &mut rng));
    }
    let requests = (0..cfg.request_count)
        .map(|i| EnergyRequest {
            id: format!("q{i:05}"),
            t: arrivals.sample(&mut rng),
            l: random_point(&cfg.area, &mut rng),
            re_mah: cfg.request_re_mah.sample(&mut rng),
            ci_ma: choose(&cfg.request_ci_ma, &mut rng),
            du_ticks: cfg.request_duration.sample(&mut rng),
        })
        .collect();

    let scenario = Scenario {
        area: cfg.area,
        grid,
        services,
        requests,
        switch_cost_mah: cfg.switch_cost_mah,
        rng_seed: cfg.seed,
    };
    Ok(perturb_disconnections(
        &scenario,
        cfg.disconnection_freq,
        cfg.disconnection_length,
        cfg.seed ^ PERTURB_SALT,
    ))
}

const PERTURB_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Zeroes the availability probability on randomly drawn runs.
///
/// Each service draws a Poisson(`freq`) event count by inverting the CDF at
/// one uniform, then a length (capped at the window) and an offset placing
/// the run inside the window for every event. The uniform and the event stream depend only on the seed and the
/// service id, so raising `freq` keeps every earlier event and adds more.
pub fn perturb_disconnections(s: &Scenario, freq: f64, length: Bounds<Tick>, seed: u64) -> Scenario {
    let mut out = s.clone();
    if !(freq > 0.0) {
        return out;
    }
    let poisson = Poisson::new(freq).expect("positive finite rate");
    for svc in &mut out.services {
        let (st, et) = (svc.qos.start_tick, svc.qos.end_tick);
        if st >= et {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(&svc.eid));
        let u: f64 = rng.gen();
        let count = poisson.inverse_cdf(u);
        for _ in 0..count {
            let len = rng
                .gen_range(length.min.max(1)..=length.max.max(1))
                .min(et - st);
            let offset = rng.gen_range(st..=et - len);
            for t in offset..offset + len {
                if let Some(i) = svc.availability.index_of(t) {
                    svc.availability.probabilities[i] = 0.0;
                }
            }
        }
    }
    out
}

/// Hourly foot traffic of one business.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckinRow {
    pub business_id: String,
    pub weekday: u8,
    pub hour: u8,
    pub checkins: u64,
}

/// One house-day of half-hourly production and consumption in Wh.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyRow {
    pub house_id: String,
    pub date: String,
    pub production: [f64; 48],
    pub consumption: [f64; 48],
}

pub const SLOTS_PER_DAY: usize = 48;

/// `wh / voltage × 1000`.
pub fn normalize_wh_to_mah(wh: f64, nominal_voltage_v: f64) -> Result<f64> {
    if !(nominal_voltage_v > 0.0) {
        return Err(Error::InvalidVoltage(nominal_voltage_v));
    }
    Ok(wh / nominal_voltage_v * 1000.0)
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<impl Read>> {
    Ok(csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(File::open(path)?))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, path: &Path, line: u64) -> Result<T> {
    rec[i]
        .parse()
        .map_err(|_| parse_err(path, line, format!("{name}: cannot parse {:?}", &rec[i])))
}

pub fn ingest_checkins(path: impl AsRef<Path>) -> Result<Vec<CheckinRow>> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 4 {
            return Err(parse_err(path, line, format!("expected 4 fields, found {}", rec.len())));
        }
        let row = CheckinRow {
            business_id: rec[0].to_owned(),
            weekday: field(&rec, 1, "weekday", path, line)?,
            hour: field(&rec, 2, "hour", path, line)?,
            checkins: field(&rec, 3, "checkins", path, line)?,
        };
        if row.weekday > 6 || row.hour > 23 {
            return Err(parse_err(path, line, "weekday must be 0-6 and hour 0-23"));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn ingest_energy(path: impl AsRef<Path>) -> Result<Vec<EnergyRow>> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let mut rows = Vec::new();
    let width = 2 + 2 * SLOTS_PER_DAY;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(parse_err(
                path,
                line,
                format!("expected {width} fields, found {}", rec.len()),
            ));
        }
        let mut production = [0.0; SLOTS_PER_DAY];
        let mut consumption = [0.0; SLOTS_PER_DAY];
        for k in 0..SLOTS_PER_DAY {
            production[k] = field(&rec, 2 + k, "production", path, line)?;
            consumption[k] = field(&rec, 2 + SLOTS_PER_DAY + k, "consumption", path, line)?;
        }
        if production.iter().chain(&consumption).any(|v| !(*v >= 0.0)) {
            return Err(parse_err(path, line, "energy values must be non-negative"));
        }
        rows.push(EnergyRow {
            house_id: rec[0].to_owned(),
            date: rec[1].to_owned(),
            production,
            consumption,
        });
    }
    Ok(rows)
}

pub fn write_checkins(path: impl AsRef<Path>, rows: &[CheckinRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["business_id", "weekday", "hour", "checkins"])?;
    for r in rows {
        w.write_record([
            r.business_id.clone(),
            r.weekday.to_string(),
            r.hour.to_string(),
            r.checkins.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn energy_header() -> Vec<String> {
    let mut h = vec!["house_id".to_owned(), "date".to_owned()];
    h.extend((1..=SLOTS_PER_DAY).map(|k| format!("p{k:02}")));
    h.extend((1..=SLOTS_PER_DAY).map(|k| format!("c{k:02}")));
    h
}

pub fn write_energy(path: impl AsRef<Path>, rows: &[EnergyRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(energy_header())?;
    for r in rows {
        let mut rec = vec![r.house_id.clone(), r.date.clone()];
        rec.extend(r.production.iter().chain(&r.consumption).map(|v| v.to_string()));
        out.write_record(rec)?;
    }
    let bytes = out.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    File::create(path)?.write_all(&bytes)?;
    Ok(())
}

/// Wh within `[from_min, to_min)` minutes of the day, pro rata by minute.
fn wh_between(slots: &[f64; SLOTS_PER_DAY], from_min: u32, to_min: u32) -> f64 {
    (0..SLOTS_PER_DAY)
        .map(|k| {
            let (a, b) = (k as u32 * 30, k as u32 * 30 + 30);
            let overlap = to_min.min(b).saturating_sub(from_min.max(a));
            slots[k] * f64::from(overlap) / 30.0
        })
        .sum()
}

const MAX_RESAMPLES: usize = 100;

/// Maps check-in arrivals and house-day energy records onto a scenario.
///
/// Start ticks follow the hourly check-in totals (one tick grid per day).
/// A service's DEC is the production of a uniformly chosen record over its
/// interval, a request's RE the consumption of another record over its
/// duration, both converted at `cfg.nominal_voltage_v`. Intervals running
/// past midnight are redrawn.
pub fn build_scenario_from_datasets(
    checkins: &[CheckinRow],
    energy: &[EnergyRow],
    cfg: &GeneratorConfig,
) -> Result<Scenario> {
    cfg.validate()?;
    if checkins.is_empty() || energy.is_empty() {
        return Err(Error::Mapping("check-in and energy inputs must be nonempty".into()));
    }
    let mut hourly = [0.0f64; 24];
    for r in checkins {
        hourly[r.hour as usize] += r.checkins as f64;
    }
    let hours = WeightedIndex::new(hourly)
        .map_err(|_| Error::Mapping("check-in counts are all zero".into()))?;
    let grid = cfg.grid();
    let tph = grid.ticks_per_hour();
    let day = 24 * 60 / cfg.resolution_min;
    let res = cfg.resolution_min;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let draw_interval = |rng: &mut ChaCha8Rng, dur: &Bounds<Tick>| -> Result<(Tick, Tick)> {
        for _ in 0..MAX_RESAMPLES {
            let st = hours.sample(rng) as Tick * tph + rng.gen_range(0..tph);
            let et = st + dur.sample(rng);
            if et <= day {
                return Ok((st, et));
            }
        }
        Err(Error::Mapping(format!(
            "no interval within one day after {MAX_RESAMPLES} draws"
        )))
    };

    let mut services = Vec::with_capacity(cfg.service_count);
    for i in 0..cfg.service_count {
        let (st, et) = draw_interval(&mut rng, &cfg.service_duration)?;
        let rec = &energy[rng.gen_range(0..energy.len())];
        let wh = wh_between(&rec.production, st * res, et * res);
        let dec = normalize_wh_to_mah(wh, cfg.nominal_voltage_v)?;
        services.push(make_service(i, st, et, dec, cfg, &mut rng));
    }
    let mut requests = Vec::with_capacity(cfg.request_count);
    for i in 0..cfg.request_count {
        let (t, end) = draw_interval(&mut rng, &cfg.request_duration)?;
        let rec = &energy[rng.gen_range(0..energy.len())];
        let wh = wh_between(&rec.consumption, t * res, end * res);
        requests.push(EnergyRequest {
            id: format!("q{i:05}"),
            t,
            l: random_point(&cfg.area, &mut rng),
            re_mah: normalize_wh_to_mah(wh, cfg.nominal_voltage_v)?.max(f64::MIN_POSITIVE),
            ci_ma: choose(&cfg.request_ci_ma, &mut rng),
            du_ticks: end - t,
        });
    }
    let scenario = Scenario {
        area: cfg.area,
        grid,
        services,
        requests,
        switch_cost_mah: cfg.switch_cost_mah,
        rng_seed: cfg.seed,
    };
    Ok(perturb_disconnections(
        &scenario,
        cfg.disconnection_freq,
        cfg.disconnection_length,
        cfg.seed ^ PERTURB_SALT,
    ))
}

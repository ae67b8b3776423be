//! Experiment sweeps and metrics tables.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::composer::{evaluate_plan, Algorithm, CompositionContext, CompositionPlan, Composer, DeliveryReport, HeuristicConfig};
use crate::error::{Error, Result};
use crate::knapsack::Selector;
use crate::mobility::{derive_provision, disconnection_ratio, stability_score, ProvisionMode};
use crate::model::{EnergyRequest, Scenario, Tick};
use crate::selection::filter_composable;
use crate::workload::{generate_scenario, perturb_disconnections, Bounds, GeneratorConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioSource {
    /// Regenerated per seed with `seed` overridden.
    Generated(GeneratorConfig),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SweepAxis {
    /// Requests binned by the mean stability score of their composable services.
    Stability,
    /// Requests binned by the mean disconnection ratio of their composable services.
    Disconnection,
    /// Services per request; a generated source scales `service_count`, a
    /// file source keeps the first `ratio × requests` services.
    Ratio {
        #[serde(default = "default_ratios")]
        ratios: Vec<u32>,
    },
    /// Disconnection frequency levels applied with the randomizer.
    Frequency {
        levels: Vec<f64>,
        #[serde(default = "default_gap")]
        length: Bounds<Tick>,
    },
}

fn default_ratios() -> Vec<u32> {
    (1..=9).collect()
}

fn default_gap() -> Bounds<Tick> {
    Bounds::new(1, 5)
}

fn one() -> u32 {
    1
}

pub const BUCKETS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub source: ScenarioSource,
    pub algorithms: Vec<Algorithm>,
    pub axis: SweepAxis,
    /// Each request is composed this many times; timings are averaged.
    #[serde(default = "one")]
    pub repetitions: u32,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub heuristic: HeuristicConfig,
    /// Stability threshold of the lossy filter; defaults to `heuristic.mu`.
    #[serde(default)]
    pub lossy_mu: Option<f64>,
    /// Replaces the scenario's switch cost when set.
    #[serde(default)]
    pub switch_cost_mah: Option<f64>,
    #[serde(default)]
    pub mode: ProvisionMode,
    #[serde(default)]
    pub selector: Selector,
}

impl ExperimentSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.algorithms.is_empty() {
            return bad("algorithm set is empty");
        }
        if self.repetitions < 1 {
            return bad("repetitions must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("seed list is empty");
        }
        self.heuristic.validate()?;
        if let Some(mu) = self.lossy_mu {
            if !(0.0..=1.0).contains(&mu) {
                return bad("lossy_mu must lie in [0, 1]");
            }
        }
        if self.switch_cost_mah.is_some_and(|c| !(c >= 0.0)) {
            return bad("switch_cost_mah must be non-negative");
        }
        match &self.axis {
            SweepAxis::Ratio { ratios } if ratios.is_empty() || ratios.contains(&0) => {
                return bad("ratios must be a nonempty list of positive integers")
            }
            SweepAxis::Frequency { levels, length }
                if levels.is_empty()
                    || levels.iter().any(|l| !(*l >= 0.0) || !l.is_finite())
                    || length.min < 1
                    || length.min > length.max =>
            {
                return bad("frequency levels must be finite and non-negative with valid lengths")
            }
            _ => {}
        }
        if let ScenarioSource::Generated(cfg) = &self.source {
            cfg.validate()?;
        }
        Ok(())
    }

    pub fn composer(&self, switch_cost_mah: f64) -> Composer {
        Composer {
            heuristic: self.heuristic,
            lossy_mu: self.lossy_mu.unwrap_or(self.heuristic.mu),
            context: CompositionContext {
                mode: self.mode,
                switch_cost_mah,
                selector: self.selector,
            },
        }
    }
}

/// One aggregated table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub algorithm: Algorithm,
    pub axis: String,
    pub served_count: u64,
    pub request_count: u64,
    pub mean_delivered_mah: f64,
    pub mean_switch_count: f64,
    pub mean_cpu_time_ms: f64,
}

/// Everything produced for one request in one cell, handed to observers.
pub struct Observation<'a> {
    pub algorithm: Algorithm,
    pub axis: &'a str,
    pub seed: u64,
    pub scenario: &'a Scenario,
    pub request: &'a EnergyRequest,
    pub plan: &'a CompositionPlan,
    pub report: &'a DeliveryReport,
    pub cpu_time_ms: f64,
}

/// Totals of one (algorithm, axis value, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub algorithm: Algorithm,
    pub axis: String,
    pub seed: u64,
    pub served_count: u64,
    pub request_count: u64,
    pub delivered_mah: f64,
    pub switch_count: u64,
    pub cpu_time_ms: f64,
}

/// A scenario plus the subset of its requests that belongs to one axis value.
struct Slice {
    axis: String,
    scenario: Scenario,
    requests: Vec<usize>,
}

fn base_scenario(spec: &ExperimentSpec, seed: u64, tweak: impl FnOnce(&mut GeneratorConfig)) -> Result<Scenario> {
    let mut s = match &spec.source {
        ScenarioSource::Generated(cfg) => {
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            tweak(&mut cfg);
            generate_scenario(&cfg)?
        }
        ScenarioSource::File(path) => Scenario::load(path)?,
    };
    if let Some(c) = spec.switch_cost_mah {
        s.switch_cost_mah = c;
    }
    Ok(s)
}

fn bucket_label(b: usize) -> String {
    let w = 1.0 / BUCKETS as f64;
    format!("[{:.1},{:.1})", b as f64 * w, (b + 1) as f64 * w)
}

fn slices(spec: &ExperimentSpec, seed: u64) -> Result<Vec<Slice>> {
    let all = |s: &Scenario| (0..s.requests.len()).collect::<Vec<_>>();
    let mut out = Vec::new();
    match &spec.axis {
        SweepAxis::Ratio { ratios } => {
            for &r in ratios {
                let scenario = base_scenario(spec, seed, |cfg| {
                    cfg.service_count = r as usize * cfg.request_count;
                })?;
                let mut scenario = scenario;
                if matches!(spec.source, ScenarioSource::File(_)) {
                    let keep = r as usize * scenario.requests.len();
                    scenario.services.truncate(keep);
                }
                let requests = all(&scenario);
                out.push(Slice { axis: r.to_string(), scenario, requests });
            }
        }
        SweepAxis::Frequency { levels, length } => {
            let base = base_scenario(spec, seed, |cfg| cfg.disconnection_freq = 0.0)?;
            for &level in levels {
                let scenario = perturb_disconnections(&base, level, *length, seed ^ FREQUENCY_SALT);
                let requests = all(&scenario);
                out.push(Slice { axis: level.to_string(), scenario, requests });
            }
        }
        SweepAxis::Stability | SweepAxis::Disconnection => {
            let scenario = base_scenario(spec, seed, |_| {})?;
            let mut bins: Vec<Vec<usize>> = vec![Vec::new(); BUCKETS];
            for (k, req) in scenario.requests.iter().enumerate() {
                let nearby = filter_composable(&scenario.services, req, spec.mode)?;
                if nearby.is_empty() {
                    continue;
                }
                let mut sum = 0.0;
                for svc in &nearby {
                    let ps = derive_provision(svc, req, spec.mode)?;
                    sum += match spec.axis {
                        SweepAxis::Stability => stability_score(&ps),
                        _ => disconnection_ratio(&ps)?,
                    };
                }
                let mean = sum / nearby.len() as f64;
                bins[((mean * BUCKETS as f64) as usize).min(BUCKETS - 1)].push(k);
            }
            for (b, requests) in bins.into_iter().enumerate() {
                out.push(Slice {
                    axis: bucket_label(b),
                    scenario: scenario.clone(),
                    requests,
                });
            }
        }
    }
    Ok(out)
}

const FREQUENCY_SALT: u64 = 0x5851_f42d_4c95_7f2d;

/// Runs every (axis value, seed, algorithm) cell in a fixed order and
/// returns per-cell totals. `observe` sees every composed request.
pub fn run_cells(
    spec: &ExperimentSpec,
    mut observe: impl FnMut(&Observation<'_>),
) -> Result<Vec<CellResult>> {
    spec.validate()?;
    let mut cells = Vec::new();
    for &seed in &spec.seeds {
        for slice in slices(spec, seed)? {
            let scenario = &slice.scenario;
            let composer = spec.composer(scenario.switch_cost_mah);
            for &algorithm in &spec.algorithms {
                if let Some(&first) = slice.requests.first() {
                    composer.compose(algorithm, &scenario.services, &scenario.requests[first])?;
                }
                let mut cell = CellResult {
                    algorithm,
                    axis: slice.axis.clone(),
                    seed,
                    served_count: 0,
                    request_count: 0,
                    delivered_mah: 0.0,
                    switch_count: 0,
                    cpu_time_ms: 0.0,
                };
                for &k in &slice.requests {
                    let req = &scenario.requests[k];
                    let mut plan = None;
                    let mut elapsed = 0.0;
                    for _ in 0..spec.repetitions {
                        let t0 = Instant::now();
                        let p = composer.compose(algorithm, &scenario.services, req)?;
                        elapsed += t0.elapsed().as_secs_f64() * 1e3;
                        plan.get_or_insert(p);
                    }
                    let plan = plan.expect("at least one repetition");
                    let cpu = elapsed / f64::from(spec.repetitions);
                    let report = evaluate_plan(&plan, scenario, req, spec.mode)?;
                    observe(&Observation {
                        algorithm,
                        axis: &slice.axis,
                        seed,
                        scenario,
                        request: req,
                        plan: &plan,
                        report: &report,
                        cpu_time_ms: cpu,
                    });
                    cell.request_count += 1;
                    cell.served_count += u64::from(report.served);
                    cell.delivered_mah += report.delivered_mah;
                    cell.switch_count += u64::from(report.switch_count);
                    cell.cpu_time_ms += cpu;
                }
                cells.push(cell);
            }
        }
    }
    Ok(cells)
}

/// Folds cells into one row per (algorithm, axis value), ordered by first
/// appearance of the axis value and then by the order of `algorithms`.
pub fn aggregate(algorithms: &[Algorithm], cells: &[CellResult]) -> Vec<MetricsRow> {
    let mut axes: Vec<&str> = Vec::new();
    for c in cells {
        if !axes.contains(&c.axis.as_str()) {
            axes.push(&c.axis);
        }
    }
    let mut rows = Vec::new();
    for axis in axes {
        for &algorithm in algorithms {
            let mine: Vec<_> = cells
                .iter()
                .filter(|c| c.algorithm == algorithm && c.axis == axis)
                .collect();
            let n: u64 = mine.iter().map(|c| c.request_count).sum();
            let mean = |f: &dyn Fn(&CellResult) -> f64| {
                if n == 0 {
                    0.0
                } else {
                    mine.iter().map(|c| f(c)).sum::<f64>() / n as f64
                }
            };
            rows.push(MetricsRow {
                algorithm,
                axis: axis.to_owned(),
                served_count: mine.iter().map(|c| c.served_count).sum(),
                request_count: n,
                mean_delivered_mah: mean(&|c| c.delivered_mah),
                mean_switch_count: mean(&|c| c.switch_count as f64),
                mean_cpu_time_ms: mean(&|c| c.cpu_time_ms),
            });
        }
    }
    rows
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<MetricsRow>> {
    let cells = run_cells(spec, |_| {})?;
    Ok(aggregate(&spec.algorithms, &cells))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::InvalidConfig(format!("unknown report format {other:?}"))),
        }
    }
}

pub const COLUMNS: [&str; 7] = [
    "algorithm",
    "axis",
    "served_count",
    "request_count",
    "mean_delivered_mah",
    "mean_switch_count",
    "mean_cpu_time_ms",
];

pub fn report(rows: &[MetricsRow], format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    match format {
        ReportFormat::Json => std::fs::write(path, serde_json::to_string_pretty(rows)? + "\n")?,
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
            w.write_record(COLUMNS)?;
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Reads rows written by [`report`] in either format.
pub fn read_rows(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    if text.trim_start().starts_with('[') {
        return Ok(serde_json::from_str(&text)?);
    }
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

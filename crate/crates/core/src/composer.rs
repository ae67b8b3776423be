//! Composition algorithms and ground-truth replay.
//!
//! Four planners share one output type:
//!
//! * **fluid**: gates candidates on stability and disconnection ratio,
//!   tolerates short gaps, patches long gaps with a covering substitute and
//!   then runs the per-chunk knapsack over advertised chunks;
//! * **brute**: every connected segment is an independent sub-service and
//!   the knapsack runs on the fine chunking induced by all segment edges;
//! * **static**: advertised chunks and advertised energy, blind to mobility;
//! * **lossy**: drops intermittent services above a stability threshold,
//!   then plans like static.
//!
//! A plan is a list of per-provider invocations. A provider's consecutive
//! active ticks are coalesced into one invocation; every invocation is one
//! connection establishment.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knapsack::{ChunkItem, Selector};
use crate::mobility::{
    derive_provision, disconnection_ratio, extract_disconnections, stability_score, Disconnection,
    ProvisionMode, ProvisionSeries,
};
use crate::model::{EnergyRequest, EnergyService, Scenario, Tick};
use crate::selection::{filter_composable, partition, Span};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub service_id: String,
    pub start_tick: Tick,
    pub end_tick: Tick,
    pub expected_intensity_ma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionPlan {
    pub request_id: String,
    pub invocations: Vec<Invocation>,
    pub predicted_energy_mah: f64,
    pub switch_count: u32,
}

impl CompositionPlan {
    pub fn empty(request_id: &str) -> Self {
        Self {
            request_id: request_id.to_owned(),
            invocations: Vec::new(),
            predicted_energy_mah: 0.0,
            switch_count: 0,
        }
    }
}

/// Stability gate and substitution thresholds of the fluid heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicConfig {
    /// Candidates with a stability score above this are discarded.
    pub mu: f64,
    /// Candidates whose disconnection ratio reaches this are discarded.
    pub d_max: f64,
    /// Disconnections at least this long get a substitute; shorter ones are tolerated.
    pub g_min: Tick,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            mu: 0.8,
            d_max: 0.5,
            g_min: 3,
        }
    }
}

impl HeuristicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.mu) {
            return Err(Error::InvalidConfig(format!("mu must lie in [0, 1), got {}", self.mu)));
        }
        if !(self.d_max > 0.0 && self.d_max <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "d_max must lie in (0, 1], got {}",
                self.d_max
            )));
        }
        if self.g_min < 1 {
            return Err(Error::InvalidConfig("g_min must be at least 1".into()));
        }
        Ok(())
    }
}

/// Settings shared by every planner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositionContext {
    #[serde(default)]
    pub mode: ProvisionMode,
    #[serde(default)]
    pub switch_cost_mah: f64,
    #[serde(default)]
    pub selector: Selector,
}

impl Default for CompositionContext {
    fn default() -> Self {
        Self {
            mode: ProvisionMode::Expected,
            switch_cost_mah: 0.0,
            selector: Selector::Exact,
        }
    }
}

impl CompositionContext {
    pub fn for_scenario(s: &Scenario) -> Self {
        Self {
            switch_cost_mah: s.switch_cost_mah,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Fluid,
    Brute,
    Static,
    Lossy,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Fluid,
        Algorithm::Brute,
        Algorithm::Static,
        Algorithm::Lossy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Fluid => "fluid",
            Algorithm::Brute => "brute",
            Algorithm::Static => "static",
            Algorithm::Lossy => "lossy",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown algorithm {s:?}")))
    }
}

/// Everything needed to plan any request with any algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Composer {
    pub heuristic: HeuristicConfig,
    pub lossy_mu: f64,
    pub context: CompositionContext,
}

impl Default for Composer {
    fn default() -> Self {
        let heuristic = HeuristicConfig::default();
        Self {
            heuristic,
            lossy_mu: heuristic.mu,
            context: CompositionContext::default(),
        }
    }
}

impl Composer {
    /// Filters the composable services for `req` and plans with `algorithm`.
    pub fn compose(
        &self,
        algorithm: Algorithm,
        services: &[EnergyService],
        req: &EnergyRequest,
    ) -> Result<CompositionPlan> {
        let nearby = filter_composable(services, req, self.context.mode)?;
        match algorithm {
            Algorithm::Fluid => compose_fluid(&nearby, req, &self.heuristic, &self.context),
            Algorithm::Brute => compose_bruteforce(&nearby, req, &self.context),
            Algorithm::Static => compose_static(&nearby, req, &self.context),
            Algorithm::Lossy => compose_lossy(&nearby, req, self.lossy_mu, &self.context),
        }
    }
}

/// Substitute(s) patching one disconnection of a base service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub disconnection: Disconnection,
    pub substitute_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
struct Provider {
    id: String,
    rate: f64,
    intensity: f64,
}

/// A base service and its substitutes treated as one service.
///
/// At every tick exactly one provider is active: the base or the
/// substitute patching that tick.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedService {
    pub base_service_id: String,
    pub substitutes: Vec<Patch>,
    /// Base series with patched gaps set to 1.
    pub effective: ProvisionSeries,
    /// Connection establishments added by the patches.
    pub added_switches: u32,
    providers: Vec<Provider>,
    owner: Vec<usize>,
}

impl MergedService {
    fn slot(&self, tick: Tick) -> Option<usize> {
        (tick >= self.effective.start_tick && tick < self.effective.end_tick)
            .then(|| (tick - self.effective.start_tick) as usize)
    }

    /// Id of the provider serving at `tick`, if any.
    pub fn provider_at(&self, tick: Tick) -> Option<&str> {
        Some(&self.providers[self.owner[self.slot(tick)?]].id)
    }

    /// Energy per tick of whichever provider is active at `tick`; zero when disconnected.
    pub fn rate_at(&self, tick: Tick) -> f64 {
        match self.slot(tick) {
            Some(i) if self.effective.pr[i] == 1 => self.providers[self.owner[i]].rate,
            _ => 0.0,
        }
    }

    pub fn intensity_at(&self, tick: Tick) -> f64 {
        self.slot(tick).map_or(0.0, |i| self.providers[self.owner[i]].intensity)
    }

    /// Predicted energy over `[start, end)`.
    pub fn energy_in(&self, start: Tick, end: Tick) -> f64 {
        let lo = start.max(self.effective.start_tick);
        let hi = end.min(self.effective.end_tick);
        let mut total = 0.0;
        let mut run: Option<(usize, u32)> = None;
        for t in lo..hi {
            let i = (t - self.effective.start_tick) as usize;
            let cur = (self.effective.pr[i] == 1).then(|| self.owner[i]);
            match (run, cur) {
                (Some((k, n)), Some(c)) if k == c => run = Some((k, n + 1)),
                _ => {
                    if let Some((k, n)) = run {
                        total += self.providers[k].rate * f64::from(n);
                    }
                    run = cur.map(|c| (c, 1));
                }
            }
        }
        if let Some((k, n)) = run {
            total += self.providers[k].rate * f64::from(n);
        }
        total
    }

    /// Largest intensity drawn at any tick of `[start, end)`.
    pub fn peak_intensity_in(&self, start: Tick, end: Tick) -> f64 {
        (start.max(self.effective.start_tick)..end.min(self.effective.end_tick))
            .map(|t| self.intensity_at(t))
            .fold(0.0, f64::max)
    }
}

/// Ranks services able to stand in for `dis`: connected over the whole gap
/// and within the consumer's intensity cap, best first by (lowest
/// disconnection ratio, highest per-tick rate, smaller id).
pub fn find_substitutes<'a>(
    dis: &Disconnection,
    candidates: &[&'a EnergyService],
    req: &EnergyRequest,
    mode: ProvisionMode,
) -> Result<Vec<&'a EnergyService>> {
    let series = candidates
        .iter()
        .map(|s| derive_provision(s, req, mode))
        .collect::<Result<Vec<_>>>()?;
    let adis: Vec<f64> = series.iter().map(|ps| disconnection_ratio(ps).unwrap_or(1.0)).collect();
    let mut ranked: Vec<usize> = (0..candidates.len())
        .filter(|&i| can_substitute(dis, candidates[i], &series[i], req))
        .collect();
    ranked.sort_by(|&a, &b| substitute_order(candidates, &adis, a, b));
    Ok(ranked.into_iter().map(|i| candidates[i]).collect())
}

fn can_substitute(dis: &Disconnection, s: &EnergyService, ps: &ProvisionSeries, req: &EnergyRequest) -> bool {
    s.qos.intensity_ma <= req.ci_ma && ps.covers(dis.start_tick, dis.end_tick)
}

fn substitute_order(services: &[&EnergyService], adis: &[f64], a: usize, b: usize) -> std::cmp::Ordering {
    let (sa, sb) = (services[a], services[b]);
    adis[a]
        .total_cmp(&adis[b])
        .then_with(|| sb.qos.rate_per_tick().total_cmp(&sa.qos.rate_per_tick()))
        .then_with(|| sa.eid.cmp(&sb.eid))
}

/// Folds substitutes into `base`, producing one service whose gaps are
/// covered by the patches.
pub fn merge_with_substitutes(
    base: &EnergyService,
    patches: &[(Disconnection, &EnergyService)],
    req: &EnergyRequest,
    mode: ProvisionMode,
) -> Result<MergedService> {
    let series = derive_provision(base, req, mode)?;
    let sub_series = patches
        .iter()
        .map(|(_, s)| derive_provision(s, req, mode))
        .collect::<Result<Vec<_>>>()?;
    let patches: Vec<_> = patches
        .iter()
        .zip(sub_series.iter())
        .map(|(&(d, s), ps)| (d, s, ps))
        .collect();
    let mut order: Vec<usize> = (0..patches.len()).collect();
    order.sort_by_key(|&i| patches[i].0.start_tick);
    for w in order.windows(2) {
        let (a, b) = (patches[w[0]].0, patches[w[1]].0);
        if b.start_tick < a.end_tick {
            return Err(Error::ConflictingSubstitutes {
                first_start: a.start_tick,
                first_end: a.end_tick,
                second_start: b.start_tick,
                second_end: b.end_tick,
            });
        }
    }

    let (ws, we) = (series.start_tick, series.end_tick);
    let mut providers = vec![Provider {
        id: base.eid.clone(),
        rate: base.qos.rate_per_tick(),
        intensity: base.qos.intensity_ma,
    }];
    let mut owner = vec![0; series.len()];
    let mut effective = series;
    let mut substitutes = Vec::new();
    let mut added_switches = 0;
    for &i in &order {
        let (dis, sub, sub_series) = patches[i];
        if !sub_series.covers(dis.start_tick, dis.end_tick)
            || dis.start_tick < ws
            || dis.end_tick > we
        {
            return Err(Error::UncoveredPatch {
                substitute: sub.eid.clone(),
                start: dis.start_tick,
                end: dis.end_tick,
            });
        }
        providers.push(Provider {
            id: sub.eid.clone(),
            rate: sub.qos.rate_per_tick(),
            intensity: sub.qos.intensity_ma,
        });
        let k = providers.len() - 1;
        for t in dis.start_tick..dis.end_tick {
            let j = (t - ws) as usize;
            owner[j] = k;
            effective.pr[j] = 1;
        }
        // Switch to the substitute unless it opens the window, and back unless it closes it.
        added_switches += u32::from(dis.start_tick > ws) + u32::from(dis.end_tick < we);
        substitutes.push(Patch {
            disconnection: dis,
            substitute_ids: vec![sub.eid.clone()],
        });
    }
    Ok(MergedService {
        base_service_id: base.eid.clone(),
        substitutes,
        effective,
        added_switches,
        providers,
        owner,
    })
}

/// Collects per-provider activity and turns it into coalesced invocations.
struct PlanBuilder<'a> {
    services: &'a [&'a EnergyService],
    active: BTreeMap<usize, Vec<(Tick, Tick)>>,
}

impl<'a> PlanBuilder<'a> {
    fn new(services: &'a [&'a EnergyService]) -> Self {
        Self {
            services,
            active: BTreeMap::new(),
        }
    }

    fn activate(&mut self, provider: usize, start: Tick, end: Tick) {
        if start < end {
            self.active.entry(provider).or_default().push((start, end));
        }
    }

    /// `believed(provider, start, end)` is the number of ticks the planner
    /// expects the provider to deliver inside the invocation.
    fn finish(
        self,
        req: &EnergyRequest,
        ctx: &CompositionContext,
        believed: impl Fn(usize, Tick, Tick) -> usize,
    ) -> CompositionPlan {
        let mut invocations = Vec::new();
        let mut energy = 0.0;
        for (p, mut spans) in self.active {
            spans.sort_unstable();
            let mut merged: Vec<(Tick, Tick)> = Vec::new();
            for (a, b) in spans {
                match merged.last_mut() {
                    Some(last) if a <= last.1 => last.1 = last.1.max(b),
                    _ => merged.push((a, b)),
                }
            }
            let svc = self.services[p];
            for (a, b) in merged {
                // A hold over nothing but expected gap buys no energy.
                let n = believed(p, a, b);
                if n == 0 {
                    continue;
                }
                energy += svc.qos.rate_per_tick() * n as f64;
                invocations.push(Invocation {
                    service_id: svc.eid.clone(),
                    start_tick: a,
                    end_tick: b,
                    expected_intensity_ma: svc.qos.intensity_ma,
                });
            }
        }
        invocations.sort_by(|x, y| {
            (x.start_tick, &x.service_id, x.end_tick).cmp(&(y.start_tick, &y.service_id, y.end_tick))
        });
        let switch_count = invocations.len() as u32;
        CompositionPlan {
            request_id: req.id.clone(),
            invocations,
            predicted_energy_mah: energy - ctx.switch_cost_mah * f64::from(switch_count),
            switch_count,
        }
    }
}

fn series_for(
    services: &[&EnergyService],
    req: &EnergyRequest,
    mode: ProvisionMode,
) -> Result<Vec<ProvisionSeries>> {
    services.iter().map(|s| derive_provision(s, req, mode)).collect()
}

fn advertised_spans(services: &[&EnergyService], members: &[usize]) -> Vec<Span> {
    members
        .iter()
        .map(|&i| Span {
            owner: i,
            start: services[i].qos.start_tick,
            end: services[i].qos.end_tick,
        })
        .collect()
}

struct Unit {
    base: usize,
    overrides: Vec<(Tick, Tick, Option<usize>)>,
}

/// Heuristic fluid composition.
pub fn compose_fluid(
    services: &[&EnergyService],
    req: &EnergyRequest,
    cfg: &HeuristicConfig,
    ctx: &CompositionContext,
) -> Result<CompositionPlan> {
    cfg.validate()?;
    let series = series_for(services, req, ctx.mode)?;

    let adis: Vec<f64> = series.iter().map(|ps| disconnection_ratio(ps).unwrap_or(1.0)).collect();
    let kept: Vec<usize> = (0..services.len())
        .filter(|&i| !(stability_score(&series[i]) > cfg.mu || adis[i] >= cfg.d_max))
        .collect();

    // Each (provider, tick) belongs to at most one merged service.
    let mut reserved: Vec<Vec<(Tick, Tick)>> = vec![Vec::new(); services.len()];
    let mut patches: HashMap<usize, Vec<(Disconnection, usize)>> = HashMap::new();
    for &i in &kept {
        for dis in extract_disconnections(&series[i]) {
            if dis.length_ticks < cfg.g_min {
                continue;
            }
            // Best-ranked candidate whose gap ticks are still unclaimed.
            let pick = (0..services.len())
                .filter(|&j| {
                    j != i
                        && can_substitute(&dis, services[j], &series[j], req)
                        && reserved[j]
                            .iter()
                            .all(|&(a, b)| b <= dis.start_tick || a >= dis.end_tick)
                })
                .min_by(|&a, &b| substitute_order(services, &adis, a, b));
            if let Some(j) = pick {
                reserved[j].push((dis.start_tick, dis.end_tick));
                patches.entry(i).or_default().push((dis, j));
            }
        }
    }

    // Each kept service becomes its base plus disjoint overrides: ticks
    // served by a substitute, or lent away to another unit.
    let mut units: Vec<Unit> = Vec::with_capacity(kept.len());
    for &i in &kept {
        let mut overrides: Vec<(Tick, Tick, Option<usize>)> = patches
            .remove(&i)
            .unwrap_or_default()
            .into_iter()
            .map(|(d, j)| (d.start_tick, d.end_tick, Some(j)))
            .chain(reserved[i].iter().map(|&(a, b)| (a, b, None)))
            .collect();
        overrides.sort_unstable_by_key(|o| o.0);
        units.push(Unit { base: i, overrides });
    }

    let spans = advertised_spans(services, &kept);
    let mut plan = PlanBuilder::new(services);
    for chunk in partition(req.window(), &spans, &[]) {
        let (lo, hi) = (chunk.start, chunk.end);
        let items: Vec<ChunkItem> = chunk
            .spans
            .iter()
            .map(|&s| {
                let u = &units[s];
                let q = &services[u.base].qos;
                let mut energy = q.rate_per_tick() * series[u.base].connected_in(lo, hi) as f64;
                let mut peak: f64 = 0.0;
                let mut overridden = 0;
                for &(a, b, who) in &u.overrides {
                    let n = b.min(hi).saturating_sub(a.max(lo));
                    if n == 0 {
                        continue;
                    }
                    overridden += n;
                    match who {
                        Some(j) => {
                            energy += services[j].qos.rate_per_tick() * f64::from(n);
                            peak = peak.max(services[j].qos.intensity_ma);
                        }
                        None => energy -= q.rate_per_tick() * f64::from(n),
                    }
                }
                if overridden < hi - lo {
                    peak = peak.max(q.intensity_ma);
                }
                ChunkItem::new(services[u.base].eid.clone(), peak, energy)
            })
            .collect();
        for pick in ctx.selector.select(&items, req.ci_ma)?.indices {
            let u = &units[chunk.spans[pick]];
            let mut t = lo;
            for &(a, b, who) in &u.overrides {
                let (a, b) = (a.max(lo), b.min(hi));
                if a >= b {
                    continue;
                }
                plan.activate(u.base, t, a);
                if let Some(j) = who {
                    plan.activate(j, a, b);
                }
                t = b;
            }
            plan.activate(u.base, t, hi);
        }
    }
    Ok(plan.finish(req, ctx, |p, a, b| series[p].connected_in(a, b)))
}

/// Every connected segment is its own sub-service on the fine chunking.
pub fn compose_bruteforce(
    services: &[&EnergyService],
    req: &EnergyRequest,
    ctx: &CompositionContext,
) -> Result<CompositionPlan> {
    let series = series_for(services, req, ctx.mode)?;
    let mut spans = Vec::new();
    let mut cuts = Vec::new();
    for (i, ps) in series.iter().enumerate() {
        cuts.extend([services[i].qos.start_tick, services[i].qos.end_tick]);
        spans.extend(ps.connected_segments().into_iter().map(|(a, b)| Span {
            owner: i,
            start: a,
            end: b,
        }));
    }
    let mut plan = PlanBuilder::new(services);
    for chunk in partition(req.window(), &spans, &cuts) {
        let len = f64::from(chunk.end - chunk.start);
        let items: Vec<ChunkItem> = chunk
            .spans
            .iter()
            .map(|&s| {
                let q = &services[spans[s].owner].qos;
                ChunkItem::new(
                    services[spans[s].owner].eid.clone(),
                    q.intensity_ma,
                    q.rate_per_tick() * len,
                )
            })
            .collect();
        for pick in ctx.selector.select(&items, req.ci_ma)?.indices {
            plan.activate(spans[chunk.spans[pick]].owner, chunk.start, chunk.end);
        }
    }
    Ok(plan.finish(req, ctx, |p, a, b| series[p].connected_in(a, b)))
}

/// Advertisement-only composition: full advertised delivery is assumed.
pub fn compose_static(
    services: &[&EnergyService],
    req: &EnergyRequest,
    ctx: &CompositionContext,
) -> Result<CompositionPlan> {
    let members: Vec<usize> = (0..services.len()).collect();
    let spans = advertised_spans(services, &members);
    let mut plan = PlanBuilder::new(services);
    for chunk in partition(req.window(), &spans, &[]) {
        let len = f64::from(chunk.end - chunk.start);
        let items: Vec<ChunkItem> = chunk
            .spans
            .iter()
            .map(|&s| {
                let q = &services[s].qos;
                ChunkItem::new(services[s].eid.clone(), q.intensity_ma, q.rate_per_tick() * len)
            })
            .collect();
        for pick in ctx.selector.select(&items, req.ci_ma)?.indices {
            plan.activate(chunk.spans[pick], chunk.start, chunk.end);
        }
    }
    Ok(plan.finish(req, ctx, |_, a, b| (b - a) as usize))
}

/// Drops every disconnected service whose stability score exceeds `mu`,
/// then composes the survivors statically.
pub fn compose_lossy(
    services: &[&EnergyService],
    req: &EnergyRequest,
    mu: f64,
    ctx: &CompositionContext,
) -> Result<CompositionPlan> {
    let mut survivors = Vec::with_capacity(services.len());
    for &svc in services {
        let ps = derive_provision(svc, req, ctx.mode)?;
        if !(ps.disconnected_ticks() > 0 && stability_score(&ps) > mu) {
            survivors.push(svc);
        }
    }
    compose_static(&survivors, req, ctx)
}

/// Outcome of replaying a plan against the true provision series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryReport {
    pub request_id: String,
    pub delivered_mah: f64,
    pub served: bool,
    /// Connections actually established.
    pub switch_count: u32,
    /// Planned invocations whose provider never came within reach.
    pub wasted_switch_count: u32,
}

/// Replays `plan` tick by tick. Each invocation delivers the provider's
/// uniform rate on every truly connected tick and costs one connection
/// establishment when it delivers anything.
pub fn evaluate_plan(
    plan: &CompositionPlan,
    scenario: &Scenario,
    req: &EnergyRequest,
    truth: ProvisionMode,
) -> Result<DeliveryReport> {
    let mut energy = 0.0;
    let mut established = 0u32;
    let mut wasted = 0u32;
    let mut cache: HashMap<&str, ProvisionSeries> = HashMap::new();
    for inv in &plan.invocations {
        if inv.start_tick < req.t || inv.end_tick > req.end() || inv.start_tick >= inv.end_tick {
            return Err(Error::InvocationOutsideWindow {
                service_id: inv.service_id.clone(),
                start: inv.start_tick,
                end: inv.end_tick,
                window_start: req.t,
                window_end: req.end(),
            });
        }
        let svc = scenario
            .service(&inv.service_id)
            .ok_or_else(|| Error::UnknownService(inv.service_id.clone()))?;
        let ps = match cache.get(svc.eid.as_str()) {
            Some(ps) => ps,
            None => cache
                .entry(svc.eid.as_str())
                .or_insert(derive_provision(svc, req, truth)?),
        };
        let connected = ps.connected_in(inv.start_tick, inv.end_tick);
        energy += svc.qos.rate_per_tick() * connected as f64;
        if connected > 0 {
            established += 1;
        } else {
            wasted += 1;
        }
    }
    let delivered = (energy - scenario.switch_cost_mah * f64::from(established)).max(0.0);
    Ok(DeliveryReport {
        request_id: req.id.clone(),
        delivered_mah: delivered,
        served: delivered >= req.re_mah,
        switch_count: established,
        wasted_switch_count: wasted,
    })
}

/// Structural checks on a plan: invocations inside the request window,
/// no overlapping invocations of one service, and aggregate intensity at
/// every tick within the consumer's cap.
pub fn plan_violations(plan: &CompositionPlan, req: &EnergyRequest) -> Vec<String> {
    let mut out = Vec::new();
    let mut by_service: BTreeMap<&str, Vec<(Tick, Tick)>> = BTreeMap::new();
    for inv in &plan.invocations {
        if inv.start_tick >= inv.end_tick || inv.start_tick < req.t || inv.end_tick > req.end() {
            out.push(format!(
                "{}: invocation of {} over [{}, {}) outside window",
                plan.request_id, inv.service_id, inv.start_tick, inv.end_tick
            ));
        }
        by_service
            .entry(&inv.service_id)
            .or_default()
            .push((inv.start_tick, inv.end_tick));
    }
    for (id, mut spans) in by_service {
        spans.sort_unstable();
        if spans.windows(2).any(|w| w[1].0 < w[0].1) {
            out.push(format!("{}: overlapping invocations of {id}", plan.request_id));
        }
    }
    for t in req.t..req.end() {
        let load: f64 = plan
            .invocations
            .iter()
            .filter(|i| i.start_tick <= t && t < i.end_tick)
            .map(|i| i.expected_intensity_ma)
            .sum();
        if load > req.ci_ma + 1e-9 {
            out.push(format!(
                "{}: intensity {load} mA exceeds cap {} mA at tick {t}",
                plan.request_id, req.ci_ma
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fixtures, ConfinedArea, Location, TimeGrid};

    const HERE: Location = Location { x_m: 2.0, y_m: 2.0 };

    fn svc(id: &str, st: Tick, et: Tick, intensity: f64, dec: f64, gaps: &[(Tick, Tick)]) -> EnergyService {
        let mut s = fixtures::service(id, st, et, HERE);
        s.qos.intensity_ma = intensity;
        s.qos.dec_mah = dec;
        for &(a, b) in gaps {
            for t in a..b {
                s.availability.probabilities[(t - st) as usize] = 0.0;
            }
        }
        s
    }

    fn req(t: Tick, du: Tick, re: f64, ci: f64) -> EnergyRequest {
        EnergyRequest {
            re_mah: re,
            ci_ma: ci,
            ..fixtures::request("q1", t, du, HERE)
        }
    }

    fn scenario(services: Vec<EnergyService>, r: &EnergyRequest, cost: f64) -> Scenario {
        Scenario {
            area: ConfinedArea::new(10.0, 10.0),
            grid: TimeGrid::default(),
            services,
            requests: vec![r.clone()],
            switch_cost_mah: cost,
            rng_seed: 0,
        }
    }

    fn refs(v: &[EnergyService]) -> Vec<&EnergyService> {
        v.iter().collect()
    }

    fn ctx() -> CompositionContext {
        CompositionContext::default()
    }

    #[test]
    fn substitutes_must_cover_the_gap() {
        let r = req(0, 10, 5.0, 1000.0);
        let full = svc("full", 0, 10, 500.0, 10.0, &[]);
        let part = svc("part", 0, 10, 500.0, 10.0, &[(0, 5), (7, 10)]);
        let gap = Disconnection::new(4, 7);
        let got = find_substitutes(&gap, &[&part, &full], &r, ProvisionMode::Expected).unwrap();
        assert_eq!(got.iter().map(|s| s.eid.as_str()).collect::<Vec<_>>(), vec!["full"]);
        assert!(find_substitutes(&gap, &[], &r, ProvisionMode::Expected).unwrap().is_empty());
    }

    #[test]
    fn substitute_ranking() {
        let r = req(0, 10, 5.0, 1000.0);
        let gap = Disconnection::new(2, 4);
        let steady_slow = svc("b", 0, 10, 500.0, 10.0, &[]);
        let steady_fast = svc("c", 0, 10, 500.0, 20.0, &[]);
        let flaky = svc("a", 0, 10, 500.0, 50.0, &[(6, 8)]);
        let too_strong = svc("d", 0, 10, 1500.0, 90.0, &[]);
        let got = find_substitutes(
            &gap,
            &[&steady_slow, &flaky, &too_strong, &steady_fast],
            &r,
            ProvisionMode::Expected,
        )
        .unwrap();
        let ids: Vec<_> = got.iter().map(|s| s.eid.as_str()).collect();
        assert_eq!(ids, vec!["c", "b", "a"]);
    }

    #[test]
    fn merge_examples() {
        let r = req(0, 5, 5.0, 1000.0);
        let base = svc("A", 0, 5, 500.0, 5.0, &[(2, 4)]);
        let sub = svc("S", 0, 5, 400.0, 10.0, &[]);
        let m = merge_with_substitutes(&base, &[(Disconnection::new(2, 4), &sub)], &r, ProvisionMode::Expected)
            .unwrap();
        assert_eq!(m.effective.pr, vec![1, 1, 1, 1, 1]);
        assert_eq!(m.added_switches, 2);
        assert_eq!(m.provider_at(2), Some("S"));
        assert_eq!(m.provider_at(4), Some("A"));
        assert_eq!(m.rate_at(3), 2.0);
        assert_eq!(m.intensity_at(3), 400.0);
        assert_eq!(m.energy_in(0, 5), 3.0 + 4.0);

        let alone = merge_with_substitutes(&base, &[], &r, ProvisionMode::Expected).unwrap();
        assert_eq!(alone.effective.pr, vec![1, 1, 0, 0, 1]);
        assert_eq!(alone.added_switches, 0);

        let tail = svc("T", 0, 5, 500.0, 5.0, &[(3, 5)]);
        let m = merge_with_substitutes(&tail, &[(Disconnection::new(3, 5), &sub)], &r, ProvisionMode::Expected)
            .unwrap();
        assert_eq!(m.added_switches, 1);
    }

    #[test]
    fn merge_rejects_overlapping_patches() {
        let r = req(0, 10, 5.0, 1000.0);
        let base = svc("A", 0, 10, 500.0, 5.0, &[(2, 6)]);
        let s1 = svc("S1", 0, 10, 400.0, 10.0, &[]);
        let s2 = svc("S2", 0, 10, 400.0, 10.0, &[]);
        let err = merge_with_substitutes(
            &base,
            &[(Disconnection::new(2, 5), &s1), (Disconnection::new(4, 6), &s2)],
            &r,
            ProvisionMode::Expected,
        );
        assert!(matches!(err, Err(Error::ConflictingSubstitutes { .. })));
    }

    #[test]
    fn fluid_single_connected_service() {
        let r = req(0, 10, 8.0, 1000.0);
        let services = vec![svc("A", 0, 10, 500.0, 10.0, &[])];
        let plan = compose_fluid(&refs(&services), &r, &HeuristicConfig::default(), &ctx()).unwrap();
        assert_eq!(plan.invocations.len(), 1);
        assert_eq!(plan.switch_count, 1);
        assert_eq!(plan.predicted_energy_mah, 10.0);
        let brute = compose_bruteforce(&refs(&services), &r, &ctx()).unwrap();
        assert_eq!(brute, plan);
        let stat = compose_static(&refs(&services), &r, &ctx()).unwrap();
        assert_eq!(stat, plan);
    }

    #[test]
    fn fluid_patches_long_gap() {
        let r = req(0, 10, 8.0, 1000.0);
        let services = vec![
            svc("A", 0, 10, 600.0, 10.0, &[(4, 7)]),
            svc("S", 0, 10, 600.0, 10.0, &[]),
        ];
        let cfg = HeuristicConfig { g_min: 2, ..Default::default() };
        let plan = compose_fluid(&refs(&services), &r, &cfg, &ctx()).unwrap();
        let got: Vec<_> = plan
            .invocations
            .iter()
            .map(|i| (i.service_id.as_str(), i.start_tick, i.end_tick))
            .collect();
        assert_eq!(got, vec![("A", 0, 4), ("S", 4, 7), ("A", 7, 10)]);
        assert_eq!(plan.switch_count, 3);
        assert_eq!(plan.predicted_energy_mah, 10.0);
        assert!(plan_violations(&plan, &r).is_empty());
    }

    #[test]
    fn fluid_tolerates_short_gaps() {
        let r = req(0, 10, 8.0, 1000.0);
        let services = vec![
            svc("A", 0, 10, 600.0, 20.0, &[(4, 5)]),
            svc("S", 0, 10, 600.0, 10.0, &[]),
        ];
        let plan = compose_fluid(&refs(&services), &r, &HeuristicConfig::default(), &ctx()).unwrap();
        assert_eq!(plan.invocations.len(), 1);
        assert_eq!(plan.invocations[0].service_id, "A");
        assert_eq!(plan.predicted_energy_mah, 18.0);
    }

    #[test]
    fn fluid_gates_out_intermittent_services() {
        let r = req(0, 10, 8.0, 1000.0);
        let services = vec![svc("A", 0, 10, 600.0, 10.0, &[(0, 6)])];
        let plan = compose_fluid(&refs(&services), &r, &HeuristicConfig::default(), &ctx()).unwrap();
        assert_eq!(plan, CompositionPlan::empty("q1"));
    }

    #[test]
    fn brute_switches_around_gap() {
        let r = req(0, 5, 1.0, 1000.0);
        let services = vec![
            svc("A", 0, 5, 600.0, 10.0, &[(2, 3)]),
            svc("B", 0, 5, 600.0, 5.0, &[]),
        ];
        let plan = compose_bruteforce(&refs(&services), &r, &ctx()).unwrap();
        let got: Vec<_> = plan
            .invocations
            .iter()
            .map(|i| (i.service_id.as_str(), i.start_tick, i.end_tick))
            .collect();
        assert_eq!(got, vec![("A", 0, 2), ("B", 2, 3), ("A", 3, 5)]);
        assert_eq!(plan.switch_count, 3);
        assert!(compose_bruteforce(&[], &r, &ctx()).unwrap().invocations.is_empty());
    }

    #[test]
    fn static_is_blind_to_gaps() {
        let r = req(0, 10, 1.0, 1000.0);
        let clean = vec![svc("A", 0, 10, 600.0, 10.0, &[]), svc("B", 2, 8, 300.0, 6.0, &[])];
        let gappy = vec![
            svc("A", 0, 10, 600.0, 10.0, &[(1, 4), (6, 9)]),
            svc("B", 2, 8, 300.0, 6.0, &[(2, 5)]),
        ];
        let a = compose_static(&refs(&clean), &r, &ctx()).unwrap();
        let b = compose_static(&refs(&gappy), &r, &ctx()).unwrap();
        assert_eq!(a, b);
        assert_eq!(compose_static(&[], &r, &ctx()).unwrap(), CompositionPlan::empty("q1"));
    }

    #[test]
    fn lossy_keeps_only_stable_services() {
        let r = req(0, 10, 1.0, 5000.0);
        let services = vec![
            svc("stable", 0, 10, 600.0, 10.0, &[(3, 4)]),
            svc("mid", 0, 10, 600.0, 10.0, &[(3, 6)]),
            svc("flaky", 0, 10, 600.0, 10.0, &[(1, 7)]),
        ];
        let plan = compose_lossy(&refs(&services), &r, 0.6, &ctx()).unwrap();
        let mut ids: Vec<_> = plan.invocations.iter().map(|i| i.service_id.as_str()).collect();
        ids.sort();
        // stability scores: 0, 2/3, 5/6
        assert_eq!(ids, vec!["stable"]);
        let clean = vec![svc("A", 0, 10, 600.0, 10.0, &[])];
        assert_eq!(
            compose_lossy(&refs(&clean), &r, 0.6, &ctx()).unwrap(),
            compose_static(&refs(&clean), &r, &ctx()).unwrap()
        );
        let all_bad = vec![svc("x", 0, 10, 600.0, 10.0, &[(0, 8)])];
        assert!(compose_lossy(&refs(&all_bad), &r, 0.6, &ctx()).unwrap().invocations.is_empty());
    }

    #[test]
    fn evaluation_examples() {
        let r = req(0, 60, 20.0, 1000.0);
        let mut gaps = vec![(5, 10)];
        let s = svc("A", 0, 60, 500.0, 60.0, &gaps);
        let plan = CompositionPlan {
            request_id: "q1".into(),
            invocations: vec![Invocation {
                service_id: "A".into(),
                start_tick: 0,
                end_tick: 30,
                expected_intensity_ma: 500.0,
            }],
            predicted_energy_mah: 0.0,
            switch_count: 1,
        };
        let sc = scenario(vec![s], &r, 2.0);
        let rep = evaluate_plan(&plan, &sc, &r, ProvisionMode::Expected).unwrap();
        assert_eq!(rep.delivered_mah, 23.0);
        assert!(rep.served);
        assert_eq!(rep.switch_count, 1);

        gaps.clear();
        let s = svc("A", 0, 60, 500.0, 60.0, &gaps);
        let mut whole = plan.clone();
        whole.invocations[0].end_tick = 60;
        let rep = evaluate_plan(&whole, &scenario(vec![s], &r, 0.0), &r, ProvisionMode::Expected).unwrap();
        assert_eq!(rep.delivered_mah, 60.0);

        let dark = svc("A", 0, 60, 500.0, 60.0, &[(0, 60)]);
        let rep = evaluate_plan(&plan, &scenario(vec![dark], &r, 2.0), &r, ProvisionMode::Expected).unwrap();
        assert_eq!(rep.delivered_mah, 0.0);
        assert!(!rep.served);
        assert_eq!(rep.wasted_switch_count, 1);

        let mut outside = plan.clone();
        outside.invocations[0].end_tick = 61;
        assert!(matches!(
            evaluate_plan(&outside, &sc, &r, ProvisionMode::Expected),
            Err(Error::InvocationOutsideWindow { .. })
        ));
    }

    #[test]
    fn substitutes_are_not_double_booked() {
        // A and B share the same gap; only one can borrow S over it.
        let r = req(0, 10, 1.0, 3000.0);
        let services = vec![
            svc("A", 0, 10, 500.0, 10.0, &[(4, 7)]),
            svc("B", 0, 10, 500.0, 10.0, &[(4, 7)]),
            svc("S", 0, 10, 500.0, 10.0, &[]),
        ];
        let cfg = HeuristicConfig { g_min: 2, ..Default::default() };
        let plan = compose_fluid(&refs(&services), &r, &cfg, &ctx()).unwrap();
        assert!(plan_violations(&plan, &r).is_empty(), "{plan:?}");
        let sc = scenario(services.clone(), &r, 0.0);
        let rep = evaluate_plan(&plan, &sc, &r, ProvisionMode::Expected).unwrap();
        assert_eq!(rep.delivered_mah, plan.predicted_energy_mah);
        // A 10 + B 7 + S 7 (its own 10 less the 3 ticks lent to A) = 24, never more than 30.
        assert_eq!(plan.predicted_energy_mah, 24.0);
    }

    #[test]
    fn plan_checker_flags_violations() {
        let r = req(0, 10, 1.0, 1000.0);
        let inv = |id: &str, a, b, i| Invocation {
            service_id: id.into(),
            start_tick: a,
            end_tick: b,
            expected_intensity_ma: i,
        };
        let plan = CompositionPlan {
            request_id: "q1".into(),
            invocations: vec![inv("A", 0, 5, 600.0), inv("A", 4, 8, 600.0), inv("B", 9, 11, 100.0)],
            predicted_energy_mah: 0.0,
            switch_count: 3,
        };
        let v = plan_violations(&plan, &r);
        assert!(v.iter().any(|m| m.contains("overlapping")));
        assert!(v.iter().any(|m| m.contains("exceeds cap")));
        assert!(v.iter().any(|m| m.contains("outside window")));
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("greedy".parse::<Algorithm>().is_err());
    }
}

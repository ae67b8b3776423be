//! Provider mobility: availability estimation from history, per-request
//! provision series, disconnections and the two intermittence scores.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{distance, AvailabilityPattern, ConfinedArea, EnergyRequest, EnergyService, Location, Tick};

/// Binary wireless-provision status of one service toward one request,
/// one entry per tick of `[start_tick, end_tick)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvisionSeries {
    pub service_id: String,
    pub request_id: String,
    pub start_tick: Tick,
    pub end_tick: Tick,
    pub pr: Vec<u8>,
}

impl ProvisionSeries {
    pub fn new(service_id: &str, request_id: &str, start_tick: Tick, pr: Vec<u8>) -> Self {
        Self {
            service_id: service_id.to_owned(),
            request_id: request_id.to_owned(),
            start_tick,
            end_tick: start_tick + pr.len() as Tick,
            pr,
        }
    }

    pub fn len(&self) -> usize {
        self.pr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pr.is_empty()
    }

    pub fn connected_ticks(&self) -> usize {
        self.pr.iter().filter(|&&p| p == 1).count()
    }

    pub fn disconnected_ticks(&self) -> usize {
        self.len() - self.connected_ticks()
    }

    pub fn is_connected_at(&self, tick: Tick) -> bool {
        tick >= self.start_tick
            && tick < self.end_tick
            && self.pr[(tick - self.start_tick) as usize] == 1
    }

    /// True when every tick of `[start, end)` lies in the series and is connected.
    pub fn covers(&self, start: Tick, end: Tick) -> bool {
        start >= self.start_tick
            && end <= self.end_tick
            && (start..end).all(|t| self.pr[(t - self.start_tick) as usize] == 1)
    }

    /// Number of connected ticks in `[start, end)`, clipped to the series.
    pub fn connected_in(&self, start: Tick, end: Tick) -> usize {
        let lo = start.max(self.start_tick);
        let hi = end.min(self.end_tick);
        if lo >= hi {
            return 0;
        }
        self.pr[(lo - self.start_tick) as usize..(hi - self.start_tick) as usize]
            .iter()
            .filter(|&&p| p == 1)
            .count()
    }

    /// Maximal runs of ones as half-open tick intervals.
    pub fn connected_segments(&self) -> Vec<(Tick, Tick)> {
        runs(&self.pr, 1)
            .into_iter()
            .map(|(a, b)| (self.start_tick + a, self.start_tick + b))
            .collect()
    }
}

fn runs(pr: &[u8], value: u8) -> Vec<(Tick, Tick)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &p) in pr.iter().enumerate() {
        match (p == value, start) {
            (true, None) => start = Some(i as Tick),
            (false, Some(s)) => {
                out.push((s, i as Tick));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, pr.len() as Tick));
    }
    out
}

/// A maximal run of zero provision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disconnection {
    pub start_tick: Tick,
    pub end_tick: Tick,
    pub length_ticks: Tick,
}

impl Disconnection {
    pub fn new(start_tick: Tick, end_tick: Tick) -> Self {
        Self {
            start_tick,
            end_tick,
            length_ticks: end_tick - start_tick,
        }
    }
}

/// How availability probabilities turn into a binary presence test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProvisionMode {
    /// Present when θ ≥ 0.5.
    #[default]
    Expected,
    /// Present when θ ≥ τ.
    Threshold(f64),
    /// Present with probability θ, drawn from a seeded stream.
    Sampled(u64),
}

/// One visit of a provider to a named confined area. Ticks are time-of-day
/// ticks so that visits on different days line up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub owner_id: String,
    pub area: String,
    pub ticks: Vec<Tick>,
    pub locations: Vec<Location>,
}

impl HistoryRecord {
    fn location_at(&self, tick: Tick) -> Option<Location> {
        self.ticks
            .binary_search(&tick)
            .ok()
            .map(|i| self.locations[i])
    }
}

/// Side of the square cells used by the modal-location estimator.
pub const CELL_SIZE_M: f64 = 1.0;

/// Estimates a per-tick availability pattern over `[st, et)` from visit history.
///
/// For every tick the area is cut into 1 m cells and the cell holding most
/// visits wins; θ is the fraction of all visits found in that cell and the
/// location is the mean of those visits. Ties go to the lowest `(x, y)` cell.
pub fn estimate_availability(
    history: &[HistoryRecord],
    area: ConfinedArea,
    st: Tick,
    et: Tick,
) -> Result<AvailabilityPattern> {
    if history.is_empty() {
        return Err(Error::NoHistory);
    }
    for rec in history {
        if rec.ticks.len() != rec.locations.len() {
            return Err(Error::InvalidConfig(format!(
                "history record of {}: {} ticks but {} locations",
                rec.owner_id,
                rec.ticks.len(),
                rec.locations.len()
            )));
        }
        if rec.ticks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "history record of {}: ticks not strictly increasing",
                rec.owner_id
            )));
        }
        if let Some((tick, _)) = rec
            .ticks
            .iter()
            .zip(&rec.locations)
            .find(|(_, loc)| !area.contains(**loc))
        {
            return Err(Error::OutsideArea {
                owner_id: rec.owner_id.clone(),
                tick: *tick,
            });
        }
    }

    let cols = (area.width_m / CELL_SIZE_M).ceil().max(1.0) as i64;
    let rows = (area.height_m / CELL_SIZE_M).ceil().max(1.0) as i64;
    let cell_of = |loc: Location| {
        let cx = ((loc.x_m / CELL_SIZE_M).floor() as i64).clamp(0, cols - 1);
        let cy = ((loc.y_m / CELL_SIZE_M).floor() as i64).clamp(0, rows - 1);
        (cx, cy)
    };

    let total = history.len() as f64;
    let mut pattern = AvailabilityPattern::default();
    let mut last = area.center();
    for tick in st..et {
        // BTreeMap iteration order gives the lowest-cell tie-break for free.
        let mut cells: BTreeMap<(i64, i64), (usize, f64, f64)> = BTreeMap::new();
        for loc in history.iter().filter_map(|r| r.location_at(tick)) {
            let e = cells.entry(cell_of(loc)).or_default();
            e.0 += 1;
            e.1 += loc.x_m;
            e.2 += loc.y_m;
        }
        let modal = cells
            .values()
            .fold(None::<&(usize, f64, f64)>, |best, c| match best {
                Some(b) if b.0 >= c.0 => Some(b),
                _ => Some(c),
            });
        let (loc, theta) = match modal {
            Some(&(n, sx, sy)) => {
                let loc = Location::new(sx / n as f64, sy / n as f64);
                (loc, n as f64 / total)
            }
            None => (last, 0.0),
        };
        last = loc;
        pattern.ticks.push(tick);
        pattern.locations.push(loc);
        pattern.probabilities.push(theta);
    }
    Ok(pattern)
}

/// Derives the provision series of `svc` toward `req` over the overlap of
/// their windows. A tick is connected when the provider is within range of
/// the consumer and passes the availability test of `mode`.
pub fn derive_provision(
    svc: &EnergyService,
    req: &EnergyRequest,
    mode: ProvisionMode,
) -> Result<ProvisionSeries> {
    if let ProvisionMode::Threshold(tau) = mode {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidThreshold(tau));
        }
    }
    let start = svc.qos.start_tick.max(req.t);
    let end = svc.qos.end_tick.min(req.end()).max(start);
    let mut rng = match mode {
        ProvisionMode::Sampled(seed) => Some(ChaCha8Rng::seed_from_u64(
            seed ^ stable_hash(&svc.eid) ^ stable_hash(&req.id).rotate_left(32),
        )),
        _ => None,
    };
    let avail = &svc.availability;
    let pr = (start..end)
        .map(|tick| {
            let draw = rng.as_mut().map(|r| r.gen::<f64>());
            let Some(i) = avail.index_of(tick) else {
                return 0;
            };
            let theta = avail.probabilities[i];
            let present = match mode {
                ProvisionMode::Expected => theta >= 0.5,
                ProvisionMode::Threshold(tau) => theta >= tau,
                ProvisionMode::Sampled(_) => draw.is_some_and(|u| u < theta),
            };
            u8::from(present && distance(req.l, avail.locations[i]) <= svc.qos.range_m)
        })
        .collect();
    Ok(ProvisionSeries::new(&svc.eid, &req.id, start, pr))
}

/// FNV-1a; used only to decorrelate per-service random streams.
pub(crate) fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Maximal zero runs of the series in increasing order.
pub fn extract_disconnections(ps: &ProvisionSeries) -> Vec<Disconnection> {
    runs(&ps.pr, 0)
        .into_iter()
        .map(|(a, b)| Disconnection::new(ps.start_tick + a, ps.start_tick + b))
        .collect()
}

/// `1 − 1/z` where `z` is the number of disconnected ticks; 0 when `z = 0`.
///
/// Higher means more disconnected time. `z = 0` and `z = 1` both map to 0.
pub fn stability_score(ps: &ProvisionSeries) -> f64 {
    match ps.disconnected_ticks() {
        0 => 0.0,
        z => 1.0 - 1.0 / z as f64,
    }
}

/// Accumulated disconnection time over the series length.
pub fn disconnection_ratio(ps: &ProvisionSeries) -> Result<f64> {
    if ps.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(ps.disconnected_ticks() as f64 / ps.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures;
    use proptest::prelude::*;

    fn series(pr: &[u8]) -> ProvisionSeries {
        ProvisionSeries::new("e1", "q1", 0, pr.to_vec())
    }

    #[test]
    fn provision_follows_distance() {
        let origin = Location::new(0.0, 0.0);
        let mut svc = fixtures::service("e1", 0, 5, origin);
        svc.availability.locations = vec![
            Location::new(1.0, 1.0),
            Location::new(2.0, 2.0),
            Location::new(6.0, 0.0),
            Location::new(0.0, 3.0),
            Location::new(4.0, 0.0),
        ];
        let req = fixtures::request("q1", 0, 5, origin);
        let ps = derive_provision(&svc, &req, ProvisionMode::Expected).unwrap();
        assert_eq!(ps.pr, vec![1, 1, 0, 1, 1]);
    }

    #[test]
    fn pinned_and_absent_providers() {
        let here = Location::new(3.0, 3.0);
        let mut svc = fixtures::service("e1", 2, 9, here);
        let req = fixtures::request("q1", 0, 20, here);
        let ps = derive_provision(&svc, &req, ProvisionMode::Expected).unwrap();
        assert_eq!((ps.start_tick, ps.end_tick), (2, 9));
        assert!(ps.pr.iter().all(|&p| p == 1));

        svc.availability.probabilities.iter_mut().for_each(|p| *p = 0.0);
        for mode in [
            ProvisionMode::Expected,
            ProvisionMode::Threshold(0.0001),
            ProvisionMode::Sampled(3),
        ] {
            let ps = derive_provision(&svc, &req, mode).unwrap();
            assert!(ps.pr.iter().all(|&p| p == 0), "{mode:?}");
        }
    }

    #[test]
    fn threshold_modes() {
        let here = Location::new(3.0, 3.0);
        let mut svc = fixtures::service("e1", 0, 4, here);
        svc.availability.probabilities = vec![0.2, 0.5, 0.7, 1.0];
        let req = fixtures::request("q1", 0, 4, here);
        let pr = |m| derive_provision(&svc, &req, m).unwrap().pr;
        assert_eq!(pr(ProvisionMode::Expected), vec![0, 1, 1, 1]);
        assert_eq!(pr(ProvisionMode::Threshold(0.7)), vec![0, 0, 1, 1]);
        assert!(matches!(
            derive_provision(&svc, &req, ProvisionMode::Threshold(1.5)),
            Err(Error::InvalidThreshold(_))
        ));
    }

    #[test]
    fn empty_overlap_is_empty_series() {
        let here = Location::new(3.0, 3.0);
        let svc = fixtures::service("e1", 12, 20, here);
        let req = fixtures::request("q1", 0, 10, here);
        let ps = derive_provision(&svc, &req, ProvisionMode::Expected).unwrap();
        assert!(ps.is_empty());
    }

    #[test]
    fn sampled_mode_is_reproducible() {
        let here = Location::new(3.0, 3.0);
        let mut svc = fixtures::service("e1", 0, 200, here);
        svc.availability.probabilities.iter_mut().for_each(|p| *p = 0.5);
        let req = fixtures::request("q1", 0, 200, here);
        let a = derive_provision(&svc, &req, ProvisionMode::Sampled(9)).unwrap();
        let b = derive_provision(&svc, &req, ProvisionMode::Sampled(9)).unwrap();
        let c = derive_provision(&svc, &req, ProvisionMode::Sampled(10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.pr, c.pr);
        let ones = a.connected_ticks();
        assert!((60..140).contains(&ones), "{ones}");
    }

    #[test]
    fn disconnection_examples() {
        let d = extract_disconnections(&series(&[1, 1, 0, 0, 1, 0, 1]));
        assert_eq!(d, vec![Disconnection::new(2, 4), Disconnection::new(5, 6)]);
        assert!(extract_disconnections(&series(&[1; 5])).is_empty());
        let zeros = ProvisionSeries::new("e1", "q1", 3, vec![0; 6]);
        assert_eq!(extract_disconnections(&zeros), vec![Disconnection::new(3, 9)]);
    }

    #[test]
    fn stability_examples() {
        let three = series(&[1, 0, 1, 1, 0, 1, 1, 0, 1, 1]);
        assert!((stability_score(&three) - (1.0 - 1.0 / 3.0)).abs() < 1e-9);
        assert_eq!(stability_score(&series(&[1; 10])), 0.0);
        assert_eq!(stability_score(&series(&[1, 1, 0, 1])), 0.0);
    }

    #[test]
    fn ratio_examples() {
        let s = series(&[1, 0, 0, 1, 1, 1, 0, 1, 1, 1]);
        assert!((disconnection_ratio(&s).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(disconnection_ratio(&series(&[1; 4])).unwrap(), 0.0);
        assert_eq!(disconnection_ratio(&series(&[0; 4])).unwrap(), 1.0);
        assert!(matches!(
            disconnection_ratio(&series(&[])),
            Err(Error::EmptySeries)
        ));
    }

    fn visit(points: &[(f64, f64)], start: Tick) -> HistoryRecord {
        HistoryRecord {
            owner_id: "u1".into(),
            area: "food-court".into(),
            ticks: (start..start + points.len() as Tick).collect(),
            locations: points.iter().map(|&(x, y)| Location::new(x, y)).collect(),
        }
    }

    #[test]
    fn identical_traces_give_certain_pattern() {
        let area = ConfinedArea::new(10.0, 10.0);
        let trace = [(1.2, 3.4), (2.2, 3.9), (7.7, 0.1)];
        let history = vec![visit(&trace, 5); 10];
        let p = estimate_availability(&history, area, 5, 8).unwrap();
        assert_eq!(p.ticks, vec![5, 6, 7]);
        assert!(p.probabilities.iter().all(|&t| t == 1.0));
        for (got, want) in p.locations.iter().zip(trace) {
            assert!((got.x_m - want.0).abs() < 1e-12 && (got.y_m - want.1).abs() < 1e-12);
        }
    }

    #[test]
    fn modal_cell_frequency() {
        let area = ConfinedArea::new(10.0, 10.0);
        let mut history = vec![visit(&[(2.5, 2.5)], 0); 7];
        history.extend(vec![visit(&[(6.5, 8.5)], 0); 3]);
        let p = estimate_availability(&history, area, 0, 1).unwrap();
        assert!((p.probabilities[0] - 0.7).abs() < 1e-12);
        assert_eq!(p.locations[0], Location::new(2.5, 2.5));
    }

    #[test]
    fn pattern_follows_each_ticks_mode() {
        let area = ConfinedArea::new(10.0, 10.0);
        let history = vec![
            visit(&[(0.5, 0.5), (9.5, 9.5)], 0),
            visit(&[(0.5, 0.5), (9.5, 9.5)], 0),
            visit(&[(4.5, 4.5), (5.5, 5.5)], 0),
        ];
        let p = estimate_availability(&history, area, 0, 3).unwrap();
        assert_eq!(p.locations[0], Location::new(0.5, 0.5));
        assert_eq!(p.locations[1], Location::new(9.5, 9.5));
        assert!((p.probabilities[1] - 2.0 / 3.0).abs() < 1e-12);
        // no visit observed at tick 2
        assert_eq!(p.probabilities[2], 0.0);
    }

    #[test]
    fn estimation_errors() {
        let area = ConfinedArea::new(4.0, 4.0);
        assert!(matches!(
            estimate_availability(&[], area, 0, 3),
            Err(Error::NoHistory)
        ));
        let outside = vec![visit(&[(1.0, 1.0), (5.0, 1.0)], 0)];
        assert!(matches!(
            estimate_availability(&outside, area, 0, 3),
            Err(Error::OutsideArea { tick: 1, .. })
        ));
    }

    fn arb_series() -> impl Strategy<Value = ProvisionSeries> {
        (0u32..50, prop::collection::vec(0u8..2, 1..80))
            .prop_map(|(start, pr)| ProvisionSeries::new("e", "q", start, pr))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn disconnections_tile_the_series(ps in arb_series()) {
            let gaps = extract_disconnections(&ps);
            let mut rebuilt = vec![1u8; ps.len()];
            let mut prev_end = None;
            for d in &gaps {
                prop_assert!(d.length_ticks >= 1);
                prop_assert!(prev_end.map_or(true, |e| d.start_tick > e));
                for t in d.start_tick..d.end_tick {
                    rebuilt[(t - ps.start_tick) as usize] = 0;
                }
                prev_end = Some(d.end_tick);
            }
            prop_assert_eq!(&rebuilt, &ps.pr);
            let lost: u32 = gaps.iter().map(|d| d.length_ticks).sum();
            prop_assert_eq!(lost as usize, ps.len() - ps.connected_ticks());
        }

        #[test]
        fn ratio_is_one_minus_mean(ps in arb_series()) {
            let mean = ps.connected_ticks() as f64 / ps.len() as f64;
            prop_assert!((disconnection_ratio(&ps).unwrap() - (1.0 - mean)).abs() <= 1e-12);
        }

        #[test]
        fn stability_is_zero_iff_at_most_one_gap_tick(ps in arb_series()) {
            let z = ps.disconnected_ticks();
            let s = stability_score(&ps);
            prop_assert_eq!(s == 0.0, z <= 1);
            prop_assert!((0.0..1.0).contains(&s));
            if z >= 1 {
                let mut more = ps.clone();
                if let Some(i) = more.pr.iter().position(|&p| p == 1) {
                    more.pr[i] = 0;
                    prop_assert!(stability_score(&more) > s);
                }
            }
        }
    }
}

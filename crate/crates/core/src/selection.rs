//! Spatio-temporal pre-selection: which services can serve a request at all,
//! and how the request window splits into chunks with a fixed candidate set.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mobility::{derive_provision, ProvisionMode};
use crate::model::{EnergyRequest, EnergyService, Tick};

/// A reference to a (partial) service active over a whole chunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRef {
    /// Position of the service in the list handed to [`chunk_timeline`].
    pub index: usize,
    pub service_id: String,
    /// Connected segment `[start, end)` in fine mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<(Tick, Tick)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub start_tick: Tick,
    pub end_tick: Tick,
    pub candidates: Vec<CandidateRef>,
}

impl Chunk {
    pub fn len(&self) -> Tick {
        self.end_tick - self.start_tick
    }

    pub fn is_empty(&self) -> bool {
        self.end_tick <= self.start_tick
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundaries {
    /// Advertised start/end times only.
    Advertised,
    /// Advertised times plus every connected-segment edge.
    Fine,
}

/// Keeps services that overlap the request window by at least one tick and
/// are within range of the consumer at one tick or more. Order is preserved.
pub fn filter_composable<'a>(
    services: &'a [EnergyService],
    req: &EnergyRequest,
    mode: ProvisionMode,
) -> Result<Vec<&'a EnergyService>> {
    let mut out = Vec::new();
    for svc in services {
        if svc.qos.start_tick >= req.end() || svc.qos.end_tick <= req.t {
            continue;
        }
        if derive_provision(svc, req, mode)?.connected_ticks() > 0 {
            out.push(svc);
        }
    }
    Ok(out)
}

/// One coverage interval of a chunking input: `owner` is covered on `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Span {
    pub owner: usize,
    pub start: Tick,
    pub end: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct RawChunk {
    pub start: Tick,
    pub end: Tick,
    /// Indices into the span list of spans covering the whole chunk.
    pub spans: Vec<usize>,
}

/// Splits `window` at every span edge and extra cut inside it; zero-length
/// pieces are dropped.
pub(crate) fn partition(window: (Tick, Tick), spans: &[Span], extra_cuts: &[Tick]) -> Vec<RawChunk> {
    let (lo, hi) = window;
    if lo >= hi {
        return Vec::new();
    }
    let mut cuts: Vec<Tick> = spans
        .iter()
        .flat_map(|s| [s.start, s.end])
        .chain(extra_cuts.iter().copied())
        .map(|t| t.clamp(lo, hi))
        .chain([lo, hi])
        .collect();
    cuts.sort_unstable();
    cuts.dedup();
    cuts.windows(2)
        .map(|w| RawChunk {
            start: w[0],
            end: w[1],
            spans: spans
                .iter()
                .enumerate()
                .filter(|(_, s)| s.start <= w[0] && s.end >= w[1])
                .map(|(i, _)| i)
                .collect(),
        })
        .collect()
}

/// Chunks the request window at service boundaries.
pub fn chunk_timeline(
    services: &[&EnergyService],
    req: &EnergyRequest,
    boundaries: Boundaries,
    mode: ProvisionMode,
) -> Result<Vec<Chunk>> {
    let mut spans = Vec::new();
    let mut segments = Vec::new();
    let mut cuts = Vec::new();
    for (i, svc) in services.iter().enumerate() {
        let (st, et) = (svc.qos.start_tick, svc.qos.end_tick);
        match boundaries {
            Boundaries::Advertised => {
                spans.push(Span { owner: i, start: st, end: et });
                segments.push(None);
            }
            Boundaries::Fine => {
                // Advertised edges still cut, but only connected segments make candidates.
                cuts.extend([st, et]);
                for (a, b) in derive_provision(svc, req, mode)?.connected_segments() {
                    spans.push(Span { owner: i, start: a, end: b });
                    segments.push(Some((a, b)));
                }
            }
        }
    }
    Ok(partition(req.window(), &spans, &cuts)
        .into_iter()
        .map(|raw| Chunk {
            start_tick: raw.start,
            end_tick: raw.end,
            candidates: raw
                .spans
                .into_iter()
                .map(|i| CandidateRef {
                    index: spans[i].owner,
                    service_id: services[spans[i].owner].eid.clone(),
                    segment: segments[i],
                })
                .collect(),
        })
        .collect())
}

/// Partition check used by tests and the acceptance harness: chunks must be
/// non-empty, ordered, gap-free and cover exactly the request window.
pub fn partitions_window(chunks: &[Chunk], req: &EnergyRequest) -> bool {
    let mut at = req.t;
    for c in chunks {
        if c.start_tick != at || c.end_tick <= c.start_tick {
            return false;
        }
        at = c.end_tick;
    }
    at == req.end()
}

//! Per-chunk selection under the aggregate current-intensity cap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkItem {
    pub service_id: String,
    pub intensity_ma: f64,
    pub energy_mah: f64,
}

impl ChunkItem {
    pub fn new(service_id: impl Into<String>, intensity_ma: f64, energy_mah: f64) -> Self {
        Self {
            service_id: service_id.into(),
            intensity_ma,
            energy_mah,
        }
    }
}

/// Chosen items as indices into the input slice, in ascending service-id order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Selection {
    pub indices: Vec<usize>,
    pub energy_mah: f64,
    pub intensity_ma: f64,
}

impl Selection {
    fn from_indices(items: &[ChunkItem], indices: Vec<usize>) -> Self {
        let energy_mah = indices.iter().map(|&i| items[i].energy_mah).sum();
        let intensity_ma = indices.iter().map(|&i| items[i].intensity_ma).sum();
        Self {
            indices,
            energy_mah,
            intensity_ma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    #[default]
    Exact,
    Greedy,
}

impl Selector {
    pub fn select(self, items: &[ChunkItem], ci_ma: f64) -> Result<Selection> {
        match self {
            Selector::Exact => select_knapsack(items, ci_ma),
            Selector::Greedy => Ok(select_greedy(items, ci_ma)),
        }
    }
}

const INTEGRAL_TOLERANCE: f64 = 1e-9;

fn integral_ma(v: f64) -> Result<u64> {
    let r = v.round();
    if !v.is_finite() || v < 0.0 || (v - r).abs() > INTEGRAL_TOLERANCE {
        return Err(Error::NonIntegralIntensity(v));
    }
    Ok(r as u64)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Exact 0/1 knapsack maximizing energy with `Σ intensity ≤ ci_ma`.
///
/// Intensities must be whole mA; the table runs over capacity in units of
/// the gcd of the eligible intensities. Items heavier than the cap or with
/// no energy never enter. Among optimal sets the one whose sorted id list is
/// lexicographically smallest wins.
pub fn select_knapsack(items: &[ChunkItem], ci_ma: f64) -> Result<Selection> {
    if !(ci_ma > 0.0) {
        return Err(Error::InvalidConfig(format!("ci_ma must be positive, got {ci_ma}")));
    }
    let cap = (ci_ma + INTEGRAL_TOLERANCE).floor() as u64;
    let mut order: Vec<(usize, u64)> = Vec::with_capacity(items.len());
    for (i, it) in items.iter().enumerate() {
        let w = integral_ma(it.intensity_ma)?;
        if w > 0 && w <= cap && it.energy_mah > 0.0 {
            order.push((i, w));
        }
    }
    if order.is_empty() {
        return Ok(Selection::default());
    }
    order.sort_by(|a, b| items[a.0].service_id.cmp(&items[b.0].service_id).then(a.0.cmp(&b.0)));

    let unit = order.iter().fold(0, |g, &(_, w)| gcd(g, w));
    let cap = (cap / unit) as usize;
    let weights: Vec<usize> = order.iter().map(|&(_, w)| (w / unit) as usize).collect();
    let n = order.len();
    let width = cap + 1;

    // best[i * width + c]: max energy from items i.. with capacity c.
    let mut best = vec![0.0f64; (n + 1) * width];
    for i in (0..n).rev() {
        let (row, next) = best[i * width..].split_at_mut(width);
        let e = items[order[i].0].energy_mah;
        let w = weights[i];
        for c in 0..width {
            let skip = next[c];
            row[c] = if c >= w { skip.max(e + next[c - w]) } else { skip };
        }
    }

    let mut chosen = Vec::new();
    let mut c = cap;
    for i in 0..n {
        let w = weights[i];
        if c < w {
            continue;
        }
        let take = items[order[i].0].energy_mah + best[(i + 1) * width + c - w];
        if take >= best[(i + 1) * width + c] {
            chosen.push(order[i].0);
            c -= w;
        }
    }
    Ok(Selection::from_indices(items, chosen))
}

/// Repeatedly takes the most energetic remaining item and keeps it when the
/// aggregate intensity stays within `ci_ma`. Ties go to the smaller id.
pub fn select_greedy(items: &[ChunkItem], ci_ma: f64) -> Selection {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        items[b]
            .energy_mah
            .total_cmp(&items[a].energy_mah)
            .then_with(|| items[a].service_id.cmp(&items[b].service_id))
            .then(a.cmp(&b))
    });
    let mut load = 0.0;
    let mut chosen = Vec::new();
    for i in order {
        if load + items[i].intensity_ma <= ci_ma {
            load += items[i].intensity_ma;
            chosen.push(i);
        }
    }
    chosen.sort_by(|&a, &b| items[a].service_id.cmp(&items[b].service_id).then(a.cmp(&b)));
    Selection::from_indices(items, chosen)
}

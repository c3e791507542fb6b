//! Traffic heatmaps, per-zone purchase distributions and Jensen-Shannon divergence.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{decode_code, Codec, GRID};
use crate::corpus::Journey;
use crate::error::{Error, Result};
use crate::layout::StoreLayout;

/// Largest displacement coverable between two 5 s samples.
pub const WALKABLE_STEP: f64 = 2.5;
pub const DEFAULT_HEATMAP_SAMPLE: usize = 2000;

/// Visit counts per grid cell, row-major with row 0 at the bottom.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heatmap {
    pub counts: Vec<u64>,
    pub journeys: usize,
}

impl Default for Heatmap {
    fn default() -> Self {
        Self { counts: vec![0; GRID * GRID], journeys: 0 }
    }
}

impl Heatmap {
    pub fn add(&mut self, journey: &Journey) {
        for c in &journey.codes {
            self.counts[decode_code(c).flat_index()] += 1;
        }
        self.journeys += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[j * GRID + i]
    }

    /// Counts as a probability vector, `None` when empty.
    pub fn distribution(&self) -> Option<Vec<f64>> {
        normalize(&self.counts)
    }

    /// Whitespace-separated matrix, top row first.
    pub fn to_matrix_text(&self) -> String {
        let mut out = String::new();
        for j in (0..GRID).rev() {
            let row: Vec<String> = (0..GRID).map(|i| self.get(i, j).to_string()).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    /// Binary graymap, brightest at the busiest cell, top row first.
    pub fn to_pgm(&self) -> Vec<u8> {
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let mut out = format!("P5\n{GRID} {GRID}\n255\n").into_bytes();
        for j in (0..GRID).rev() {
            for i in 0..GRID {
                out.push((self.get(i, j) as f64 / max * 255.0).round() as u8);
            }
        }
        out
    }
}

/// Heatmap over at most `n_sample` journeys drawn without replacement.
pub fn traffic_heatmap(journeys: &[Journey], n_sample: usize, seed: u64) -> Heatmap {
    let mut map = Heatmap::default();
    if n_sample >= journeys.len() {
        if n_sample > journeys.len() {
            log::warn!("heatmap sample of {n_sample} requested from {} journeys, using all", journeys.len());
        }
        journeys.iter().for_each(|j| map.add(j));
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, journeys.len(), n_sample).into_vec();
        picked.sort_unstable();
        picked.into_iter().for_each(|i| map.add(&journeys[i]));
    }
    map
}

/// Purchase counts per zone plus a trailing bucket for points outside every zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneDistribution {
    pub zone_ids: Vec<u32>,
    /// One entry per zone, then the unzoned bucket.
    pub counts: Vec<u64>,
    pub probabilities: Vec<f64>,
    pub journeys: usize,
    /// Nothing was bought at all; probabilities are zero.
    pub empty: bool,
}

impl ZoneDistribution {
    pub fn unzoned(&self) -> u64 {
        *self.counts.last().expect("unzoned bucket")
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Items per journey in each bucket.
    pub fn per_visit(&self) -> Vec<f64> {
        let n = self.journeys.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }
}

pub fn zone_purchase_distribution(journeys: &[Journey], layout: &StoreLayout) -> ZoneDistribution {
    let codec = Codec::with_side(layout.store_side);
    let n = layout.zones.len();
    let mut counts = vec![0u64; n + 1];
    for j in journeys {
        for e in &j.events {
            let p = codec.code_center(&j.codes[e.point_index]);
            counts[layout.zone_index_at(p).unwrap_or(n)] += e.count as u64;
        }
    }
    if counts[n] > 0 {
        log::warn!("{} purchased items fall outside every zone", counts[n]);
    }
    let probabilities = normalize(&counts);
    ZoneDistribution {
        zone_ids: layout.zones.iter().map(|z| z.id).collect(),
        empty: probabilities.is_none(),
        probabilities: probabilities.unwrap_or_else(|| vec![0.0; n + 1]),
        counts,
        journeys: journeys.len(),
    }
}

pub fn normalize(counts: &[u64]) -> Option<Vec<f64>> {
    let total: u64 = counts.iter().sum();
    (total > 0).then(|| counts.iter().map(|&c| c as f64 / total as f64).collect())
}

fn kl_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter().zip(m).filter(|(&pi, _)| pi > 0.0).map(|(&pi, &mi)| pi * (pi / mi).log2()).sum()
}

/// Jensen-Shannon divergence in bits: 0 for identical inputs, 1 for disjoint supports.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidArgument(format!("distributions differ in length: {} vs {}", p.len(), q.len())));
    }
    for (name, d) in [("p", p), ("q", q)] {
        if let Some(v) = d.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!("{name} has invalid entry {v}")));
        }
        let s: f64 = d.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("{name} sums to {s}, not 1")));
        }
    }
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let d = 0.5 * kl_to_mixture(p, &m) + 0.5 * kl_to_mixture(q, &m);
    Ok(d.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub steps: usize,
    pub walkable: usize,
    /// Share of steps no longer than the walkable bound; 1 when there are no steps.
    pub walkable_fraction: f64,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

/// Displacements between consecutive cell centers.
pub fn step_stats(journeys: &[Journey]) -> StepStats {
    let codec = Codec::default();
    let mut d: Vec<f64> = journeys
        .iter()
        .flat_map(|j| {
            j.codes.windows(2).map(|w| codec.code_center(&w[0]).distance(&codec.code_center(&w[1]))).collect::<Vec<_>>()
        })
        .collect();
    d.sort_by(f64::total_cmp);
    let walkable = d.iter().filter(|&&x| x <= WALKABLE_STEP + 1e-9).count();
    let q = |f: f64| if d.is_empty() { 0.0 } else { d[((d.len() - 1) as f64 * f).round() as usize] };
    StepStats {
        steps: d.len(),
        walkable,
        walkable_fraction: if d.is_empty() { 1.0 } else { walkable as f64 / d.len() as f64 },
        mean: if d.is_empty() { 0.0 } else { d.iter().sum::<f64>() / d.len() as f64 },
        p50: q(0.5),
        p95: q(0.95),
        max: d.last().copied().unwrap_or(0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub generated_journeys: usize,
    pub reference_journeys: usize,
    /// Share of generations that parsed, when known.
    pub validity_rate: Option<f64>,
    pub zone_js: f64,
    pub heatmap_js: f64,
    pub generated_steps: StepStats,
    pub reference_steps: StepStats,
    pub generated_zones: ZoneDistribution,
    pub reference_zones: ZoneDistribution,
    #[serde(skip)]
    pub generated_heatmap: Heatmap,
    #[serde(skip)]
    pub reference_heatmap: Heatmap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub heatmap_sample: usize,
    pub seed: u64,
    pub validity_rate: Option<f64>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { heatmap_sample: DEFAULT_HEATMAP_SAMPLE, seed: 0, validity_rate: None }
    }
}

pub fn compare_report(
    generated: &[Journey],
    reference: &[Journey],
    layout: &StoreLayout,
    opts: ReportOptions,
) -> Result<EvalReport> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::InvalidArgument("both journey sets must be non-empty".into()));
    }
    let generated_heatmap = traffic_heatmap(generated, opts.heatmap_sample, opts.seed);
    let reference_heatmap = traffic_heatmap(reference, opts.heatmap_sample, opts.seed);
    let generated_zones = zone_purchase_distribution(generated, layout);
    let reference_zones = zone_purchase_distribution(reference, layout);
    let zone_js = if generated_zones.empty || reference_zones.empty {
        log::warn!("a journey set has no purchases, zone divergence set to 1");
        if generated_zones.empty && reference_zones.empty {
            0.0
        } else {
            1.0
        }
    } else {
        js_divergence(&generated_zones.probabilities, &reference_zones.probabilities)?
    };
    let heatmap_js = js_divergence(
        &generated_heatmap.distribution().expect("non-empty journeys"),
        &reference_heatmap.distribution().expect("non-empty journeys"),
    )?;
    Ok(EvalReport {
        generated_journeys: generated.len(),
        reference_journeys: reference.len(),
        validity_rate: opts.validity_rate,
        zone_js,
        heatmap_js,
        generated_steps: step_stats(generated),
        reference_steps: step_stats(reference),
        generated_zones,
        reference_zones,
        generated_heatmap,
        reference_heatmap,
    })
}

/// Side-by-side zone table: counts, shares and items per visit.
pub fn zone_table_csv(report: &EvalReport, layout: &StoreLayout) -> String {
    let mut out = String::from("zone_id,categories,generated_count,generated_share,generated_per_visit,reference_count,reference_share,reference_per_visit\n");
    let (g, r) = (&report.generated_zones, &report.reference_zones);
    let (gv, rv) = (g.per_visit(), r.per_visit());
    for k in 0..g.counts.len() {
        let (id, cats) = match layout.zones.get(k) {
            Some(z) => (z.id.to_string(), z.categories.join(";")),
            None => ("unzoned".to_string(), String::new()),
        };
        let _ = writeln!(
            out,
            "{id},{cats},{},{:.6},{:.6},{},{:.6},{:.6}",
            g.counts[k], g.probabilities[k], gv[k], r.counts[k], r.probabilities[k], rv[k]
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{code_of_cell, GridCell};
    use crate::layout::{Rect, Zone};
    use crate::purchase::PurchaseEvent;

    fn cell(i: u8, j: u8) -> crate::codec::CellCode {
        code_of_cell(GridCell::new(i, j).unwrap())
    }

    fn layout() -> StoreLayout {
        StoreLayout {
            store_side: 32.0,
            zones: vec![
                Zone { id: 0, rect: Rect::new(0.0, 0.0, 16.0, 32.0), categories: vec!["left".into()] },
                Zone { id: 1, rect: Rect::new(16.0, 0.0, 30.0, 32.0), categories: vec!["right".into()] },
            ],
            entrance: Rect::new(0.0, 0.0, 1.0, 1.0),
            checkout: Rect::new(31.0, 0.0, 32.0, 1.0),
            shelves: vec![],
        }
    }

    fn oracle(p: &[f64], q: &[f64]) -> f64 {
        let mut d = 0.0;
        for x in 0..p.len() {
            let m = (p[x] + q[x]) / 2.0;
            if p[x] > 0.0 {
                d += 0.5 * p[x] * (p[x] / m).ln() / 2f64.ln();
            }
            if q[x] > 0.0 {
                d += 0.5 * q[x] * (q[x] / m).ln() / 2f64.ln();
            }
        }
        d
    }

    #[test]
    fn js_known_values() {
        assert_eq!(js_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((js_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        let v = js_divergence(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        assert!((v - oracle(&[0.5, 0.5], &[0.9, 0.1])).abs() < 1e-12);
        assert!(js_divergence(&[1.0], &[0.5, 0.5]).is_err());
        assert!(js_divergence(&[1.5, -0.5], &[0.5, 0.5]).is_err());
        assert!(js_divergence(&[0.2, 0.2], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn heatmap_counts_points() {
        let a = Journey::new(vec![cell(0, 0), cell(0, 0), cell(5, 9)], vec![]);
        let b = Journey::new(vec![cell(63, 63)], vec![]);
        let h = traffic_heatmap(std::slice::from_ref(&a), 2000, 0);
        assert_eq!(h.total(), 3);
        assert_eq!(h.get(0, 0), 2);
        assert_eq!(h.get(5, 9), 1);
        let both = traffic_heatmap(&[a.clone(), b.clone()], 2000, 0);
        let hb = traffic_heatmap(&[b], 2000, 0);
        let sum: Vec<u64> = h.counts.iter().zip(&hb.counts).map(|(x, y)| x + y).collect();
        assert_eq!(both.counts, sum);

        let pgm = both.to_pgm();
        assert!(pgm.starts_with(b"P5\n64 64\n255\n"));
        assert_eq!(pgm.len(), 13 + 64 * 64);
        // Top-left byte is cell (0, 63): empty. Last byte is (63, 0): empty.
        assert_eq!(both.to_matrix_text().lines().count(), 64);
        assert!(both.to_matrix_text().lines().next().unwrap().ends_with(" 1"));
    }

    #[test]
    fn heatmap_sampling_is_seeded() {
        let js: Vec<Journey> = (0..50).map(|k| Journey::new(vec![cell(k, 0)], vec![])).collect();
        let a = traffic_heatmap(&js, 10, 3);
        assert_eq!(a.total(), 10);
        assert_eq!(a, traffic_heatmap(&js, 10, 3));
        assert_ne!(a, traffic_heatmap(&js, 10, 4));
    }

    #[test]
    fn zone_distribution_buckets() {
        let l = layout();
        let none = zone_purchase_distribution(&[Journey::new(vec![cell(1, 1)], vec![])], &l);
        assert!(none.empty);
        let one = Journey::new(vec![cell(1, 1), cell(2, 2)], vec![PurchaseEvent { point_index: 1, count: 3 }]);
        let d = zone_purchase_distribution(std::slice::from_ref(&one), &l);
        assert_eq!(d.probabilities, vec![1.0, 0.0, 0.0]);
        // x = 31.25 lies right of every zone.
        let out = Journey::new(
            vec![cell(62, 2), cell(40, 2)],
            vec![PurchaseEvent { point_index: 0, count: 1 }, PurchaseEvent { point_index: 1, count: 1 }],
        );
        let d = zone_purchase_distribution(&[one, out], &l);
        assert_eq!(d.counts, vec![3, 1, 1]);
        assert_eq!(d.unzoned(), 1);
        assert!((d.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(d.per_visit(), vec![1.5, 0.5, 0.5]);
    }

    #[test]
    fn report_extremes() {
        let l = layout();
        let left = vec![Journey::new(vec![cell(1, 1), cell(2, 1)], vec![PurchaseEvent { point_index: 1, count: 1 }])];
        let right =
            vec![Journey::new(vec![cell(40, 1), cell(40, 2)], vec![PurchaseEvent { point_index: 0, count: 1 }])];
        let same = compare_report(&left, &left, &l, ReportOptions::default()).unwrap();
        assert_eq!((same.zone_js, same.heatmap_js), (0.0, 0.0));
        let apart = compare_report(&left, &right, &l, ReportOptions::default()).unwrap();
        assert!((apart.zone_js - 1.0).abs() < 1e-12);
        assert!(compare_report(&[], &left, &l, ReportOptions::default()).is_err());
        let csv = zone_table_csv(&apart, &l);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().last().unwrap().starts_with("unzoned,"));
    }

    #[test]
    fn steps_measured_between_centers() {
        let j = Journey::new(vec![cell(0, 0), cell(1, 0), cell(1, 0), cell(10, 0)], vec![]);
        let s = step_stats(&[j]);
        assert_eq!((s.steps, s.walkable), (3, 2));
        assert!((s.max - 4.5).abs() < 1e-12);
        assert_eq!(step_stats(&[]).walkable_fraction, 1.0);
    }
}

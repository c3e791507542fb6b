//! From raw trajectories and checkout records to journeys annotated with
//! per-sample purchase counts.
//!
//! Pipeline: [`match_transactions`] attaches scanner items to trajectories by
//! checkout time, [`dbscan`] over [`xyt_embed`] finds dwells, and
//! [`locate_purchases`] places every purchased unit on a trajectory sample.

pub mod dbscan;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::Point2D;
use crate::layout::StoreLayout;

pub use dbscan::{dbscan, DbscanParams, NOISE};

/// Seconds are scaled by this factor to become meters in xyt space.
pub const TIME_SCALE: f64 = 0.1;
/// Default tolerance when pairing scanner items with checkout times.
pub const DEFAULT_MATCH_WINDOW: f64 = 120.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPoint {
    /// Seconds since the first sample of the journey.
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl TimedPoint {
    pub fn pos(&self) -> Point2D {
        Point2D::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub customer_id: String,
    /// Absolute time (epoch seconds) of the first sample.
    pub start_time: f64,
    pub points: Vec<TimedPoint>,
}

impl Trajectory {
    /// Absolute time of the last sample, taken as the checkout time.
    pub fn checkout_time(&self) -> f64 {
        self.start_time + self.points.last().map_or(0.0, |p| p.t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScannerItem {
    /// Absolute transaction time, epoch seconds.
    pub txn_time: f64,
    pub category: String,
    pub quantity: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PurchaseEvent {
    pub point_index: usize,
    pub count: u32,
}

/// Merges events sharing a point index and sorts them by index.
pub fn merge_events(events: impl IntoIterator<Item = PurchaseEvent>) -> Vec<PurchaseEvent> {
    let mut by_index: BTreeMap<usize, u32> = BTreeMap::new();
    for e in events {
        *by_index.entry(e.point_index).or_default() += e.count;
    }
    by_index
        .into_iter()
        .filter(|&(_, c)| c > 0)
        .map(|(point_index, count)| PurchaseEvent { point_index, count })
        .collect()
}

pub fn xyt_embed(traj: &Trajectory) -> Vec<[f64; 3]> {
    traj.points.iter().map(|p| [p.x, p.y, TIME_SCALE * p.t]).collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Matching {
    /// Items per trajectory, parallel to the input trajectory list.
    pub per_trajectory: Vec<Vec<ScannerItem>>,
    pub unmatched: Vec<ScannerItem>,
}

/// Attaches each item to the trajectory whose checkout time is nearest,
/// provided it lies within `window` seconds. Ties go to the earlier checkout.
pub fn match_transactions(trajs: &[Trajectory], items: &[ScannerItem], window: f64) -> Matching {
    let mut order: Vec<(f64, usize)> = trajs.iter().enumerate().map(|(i, t)| (t.checkout_time(), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut out = Matching { per_trajectory: vec![Vec::new(); trajs.len()], unmatched: Vec::new() };
    for item in items {
        let from = order.partition_point(|&(t, _)| t < item.txn_time - window);
        let mut best: Option<(f64, f64, usize)> = None;
        for &(time, idx) in order[from..].iter().take_while(|&&(t, _)| t <= item.txn_time + window) {
            let d = (time - item.txn_time).abs();
            match best {
                Some((bd, bt, _)) if d == bd && time != bt => {
                    log::warn!(
                        "transaction at {} equidistant to checkouts {bt} and {time}; keeping the earlier",
                        item.txn_time
                    );
                }
                Some((bd, _, _)) if d >= bd => {}
                _ => best = Some((d, time, idx)),
            }
        }
        match best {
            Some((_, _, idx)) => out.per_trajectory[idx].push(item.clone()),
            None => out.unmatched.push(item.clone()),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlacementRule {
    /// Last sample of a dwell cluster touching the item's zone.
    ClusterEnd,
    /// Random sample inside a zone that was passed without a dwell.
    Traversal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExclusionReason {
    /// No zone stocks the category.
    UnknownCategory,
    /// The trajectory never enters a zone stocking the category.
    ZoneNotVisited,
}

/// Where one purchased unit was placed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub category: String,
    pub point_index: usize,
    pub zone_id: u32,
    pub rule: PlacementRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub item: ScannerItem,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Localization {
    pub events: Vec<PurchaseEvent>,
    pub placements: Vec<Placement>,
    pub excluded: Vec<Exclusion>,
}

impl Localization {
    pub fn placed_quantity(&self) -> u64 {
        self.events.iter().map(|e| e.count as u64).sum()
    }

    pub fn excluded_quantity(&self) -> u64 {
        self.excluded.iter().map(|e| e.item.quantity as u64).sum()
    }
}

/// Places each purchased unit on a trajectory sample.
///
/// For every unit: among the zones stocking its category, a DBSCAN cluster
/// with points inside such a zone wins (most in-zone points, then the earliest
/// cluster) and the unit goes to that cluster's last sample in time. Failing
/// that, the zone entered earliest is used and a uniformly random in-zone
/// sample is drawn. Units whose zones are never entered are excluded.
pub fn locate_purchases(
    traj: &Trajectory,
    labels: &[i32],
    items: &[ScannerItem],
    layout: &StoreLayout,
    seed: u64,
) -> Localization {
    assert_eq!(labels.len(), traj.points.len(), "one label per trajectory point");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zone_of_point: Vec<Vec<usize>> = traj
        .points
        .iter()
        .map(|p| layout.zones.iter().enumerate().filter(|(_, z)| z.rect.contains(p.pos())).map(|(i, _)| i).collect())
        .collect();
    let n_clusters = dbscan::cluster_count(labels);
    let mut cluster_last = vec![0usize; n_clusters];
    for (i, &l) in labels.iter().enumerate() {
        if l >= 0 {
            let c = l as usize;
            if traj.points[i].t >= traj.points[cluster_last[c]].t {
                cluster_last[c] = i;
            }
        }
    }

    let mut out = Localization::default();
    let mut raw = Vec::new();
    for item in items {
        let zones = layout.zones_for_category(&item.category);
        if zones.is_empty() {
            out.excluded.push(Exclusion { item: item.clone(), reason: ExclusionReason::UnknownCategory });
            continue;
        }
        // (in-zone count, cluster, zone) for each cluster touching a candidate zone.
        let mut best_cluster: Option<(usize, usize, usize)> = None;
        for &z in &zones {
            let mut counts = vec![0usize; n_clusters];
            for (i, &l) in labels.iter().enumerate() {
                if l >= 0 && zone_of_point[i].contains(&z) {
                    counts[l as usize] += 1;
                }
            }
            for (c, &n) in counts.iter().enumerate() {
                if n == 0 {
                    continue;
                }
                let better = match best_cluster {
                    None => true,
                    Some((bn, bc, _)) => n > bn || (n == bn && c < bc),
                };
                if better {
                    best_cluster = Some((n, c, z));
                }
            }
        }
        let choice = if let Some((_, c, z)) = best_cluster {
            Some((cluster_last[c], z, PlacementRule::ClusterEnd))
        } else {
            // Earliest traversed candidate zone.
            let first_visit =
                zones.iter().filter_map(|&z| zone_of_point.iter().position(|zs| zs.contains(&z)).map(|i| (i, z))).min();
            first_visit.map(|(_, z)| {
                let inside: Vec<usize> = (0..traj.points.len()).filter(|&i| zone_of_point[i].contains(&z)).collect();
                (inside[0], z, PlacementRule::Traversal)
            })
        };
        match choice {
            None => out.excluded.push(Exclusion { item: item.clone(), reason: ExclusionReason::ZoneNotVisited }),
            Some((idx, z, rule)) => {
                for _ in 0..item.quantity {
                    let point_index = match rule {
                        PlacementRule::ClusterEnd => idx,
                        PlacementRule::Traversal => {
                            let inside: Vec<usize> =
                                (0..traj.points.len()).filter(|&i| zone_of_point[i].contains(&z)).collect();
                            inside[rng.random_range(0..inside.len())]
                        }
                    };
                    raw.push(PurchaseEvent { point_index, count: 1 });
                    out.placements.push(Placement {
                        category: item.category.clone(),
                        point_index,
                        zone_id: layout.zones[z].id,
                        rule,
                    });
                }
            }
        }
    }
    out.events = merge_events(raw);
    out
}

/// A trajectory with its located purchases.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedTrajectory {
    pub trajectory: Trajectory,
    pub localization: Localization,
}

/// Runs matching, clustering and localization over a batch.
/// Per-trajectory seeds are derived from `seed` and the trajectory index.
pub fn annotate(
    trajs: &[Trajectory],
    items: &[ScannerItem],
    layout: &StoreLayout,
    params: DbscanParams,
    match_window: f64,
    seed: u64,
) -> (Vec<AnnotatedTrajectory>, Vec<ScannerItem>) {
    let matching = match_transactions(trajs, items, match_window);
    let annotated = trajs
        .iter()
        .zip(&matching.per_trajectory)
        .enumerate()
        .map(|(i, (traj, items))| {
            let labels = dbscan(&xyt_embed(traj), params);
            let localization = locate_purchases(traj, &labels, items, layout, derive_seed(seed, i as u64));
            AnnotatedTrajectory { trajectory: traj.clone(), localization }
        })
        .collect();
    (annotated, matching.unmatched)
}

/// SplitMix64-style mixing of a master seed with a stream index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{Rect, Zone};

    fn layout() -> StoreLayout {
        StoreLayout {
            store_side: 32.0,
            zones: vec![
                Zone { id: 10, rect: Rect::new(10.0, 10.0, 14.0, 14.0), categories: vec!["tea".into()] },
                Zone { id: 11, rect: Rect::new(20.0, 10.0, 24.0, 14.0), categories: vec!["milk".into()] },
                Zone { id: 12, rect: Rect::new(20.0, 20.0, 24.0, 24.0), categories: vec!["soap".into()] },
            ],
            entrance: Rect::new(0.0, 0.0, 2.0, 2.0),
            checkout: Rect::new(30.0, 0.0, 32.0, 2.0),
            shelves: vec![],
        }
    }

    fn traj(points: &[(f64, f64)]) -> Trajectory {
        Trajectory {
            customer_id: "c".into(),
            start_time: 1000.0,
            points: points.iter().enumerate().map(|(k, &(x, y))| TimedPoint { t: 5.0 * k as f64, x, y }).collect(),
        }
    }

    fn item(cat: &str, q: u32) -> ScannerItem {
        ScannerItem { txn_time: 0.0, category: cat.into(), quantity: q }
    }

    #[test]
    fn xyt_scaling() {
        let t = Trajectory {
            customer_id: "c".into(),
            start_time: 0.0,
            points: vec![
                TimedPoint { t: 0.0, x: 1.0, y: 2.0 },
                TimedPoint { t: 5.0, x: 1.0, y: 2.0 },
                TimedPoint { t: 60.0, x: 0.0, y: 0.0 },
            ],
        };
        assert_eq!(xyt_embed(&t), vec![[1.0, 2.0, 0.0], [1.0, 2.0, 0.5], [0.0, 0.0, 6.0]]);
    }

    #[test]
    fn matching_window() {
        let mut a = traj(&[(0.0, 0.0), (1.0, 1.0)]);
        a.start_time = 43_200.0 - 2.0; // checkout at 12:00:03
        let mut b = traj(&[(0.0, 0.0), (1.0, 1.0)]);
        b.start_time = 43_800.0 - 5.0; // checkout at 12:10:00
        let items = vec![ScannerItem { txn_time: 43_200.0, category: "tea".into(), quantity: 1 }];
        let m = match_transactions(&[a.clone()], &items, DEFAULT_MATCH_WINDOW);
        assert_eq!(m.per_trajectory[0].len(), 1);
        let m = match_transactions(&[b], &items, DEFAULT_MATCH_WINDOW);
        assert_eq!(m.unmatched.len(), 1);
    }

    #[test]
    fn matching_tie_prefers_earlier_checkout() {
        let mut a = traj(&[(0.0, 0.0), (1.0, 1.0)]);
        a.start_time = 95.0; // checkout 100
        let mut b = traj(&[(0.0, 0.0), (1.0, 1.0)]);
        b.start_time = 115.0; // checkout 120
        let items = vec![ScannerItem { txn_time: 110.0, category: "tea".into(), quantity: 1 }];
        let m = match_transactions(&[b, a], &items, DEFAULT_MATCH_WINDOW);
        assert_eq!(m.per_trajectory[1].len(), 1);
        assert!(m.per_trajectory[0].is_empty());
    }

    #[test]
    fn matching_picks_nearest() {
        let mut trajs = vec![];
        for k in 0..5 {
            let mut t = traj(&[(0.0, 0.0), (1.0, 1.0)]);
            t.start_time = 100.0 * k as f64;
            trajs.push(t);
        }
        // checkouts at 5, 105, 205, 305, 405
        let items: Vec<ScannerItem> = [4.0, 107.0, 300.0, 420.0]
            .iter()
            .map(|&t| ScannerItem { txn_time: t, category: "x".into(), quantity: 1 })
            .collect();
        let m = match_transactions(&trajs, &items, 120.0);
        let counts: Vec<usize> = m.per_trajectory.iter().map(Vec::len).collect();
        assert_eq!(counts, vec![1, 1, 0, 1, 1]);
    }

    #[test]
    fn dwell_in_zone_goes_to_cluster_end() {
        // walk in, dwell 5 samples in the tea zone, walk out
        let t = traj(&[
            (2.0, 2.0),
            (7.0, 7.0),
            (12.0, 12.0),
            (12.1, 12.0),
            (12.0, 12.1),
            (12.1, 12.1),
            (12.0, 12.0),
            (17.0, 12.0),
            (25.0, 5.0),
        ]);
        let labels = dbscan(&xyt_embed(&t), DbscanParams::default());
        assert_eq!(&labels[2..7], &[0; 5]);
        let loc = locate_purchases(&t, &labels, &[item("tea", 2)], &layout(), 1);
        assert_eq!(loc.events, vec![PurchaseEvent { point_index: 6, count: 2 }]);
        assert!(loc.placements.iter().all(|p| p.rule == PlacementRule::ClusterEnd && p.zone_id == 10));
    }

    #[test]
    fn traversed_zone_is_random_but_seeded() {
        let t = traj(&[(2.0, 2.0), (21.0, 11.0), (22.0, 12.0), (23.0, 13.0), (28.0, 2.0)]);
        let labels = dbscan(&xyt_embed(&t), DbscanParams::default());
        assert!(labels.iter().all(|&l| l == NOISE));
        let a = locate_purchases(&t, &labels, &[item("milk", 3)], &layout(), 5);
        let b = locate_purchases(&t, &labels, &[item("milk", 3)], &layout(), 5);
        assert_eq!(a, b);
        assert!(a.placements.iter().all(|p| (1..=3).contains(&p.point_index) && p.rule == PlacementRule::Traversal));
        assert_eq!(a.placed_quantity(), 3);
    }

    #[test]
    fn unvisited_and_unknown_are_excluded() {
        let t = traj(&[(2.0, 2.0), (12.0, 12.0), (28.0, 2.0)]);
        let labels = vec![NOISE; 3];
        let loc = locate_purchases(&t, &labels, &[item("soap", 1), item("bread", 2)], &layout(), 0);
        assert!(loc.events.is_empty());
        assert_eq!(loc.excluded[0].reason, ExclusionReason::ZoneNotVisited);
        assert_eq!(loc.excluded[1].reason, ExclusionReason::UnknownCategory);
        assert_eq!(loc.excluded_quantity(), 3);
    }

    #[test]
    fn cluster_with_more_in_zone_points_wins() {
        let mut l = layout();
        l.zones[1].categories.push("tea".into()); // tea stocked in zones 10 and 11
        let mut pts = vec![(2.0, 2.0)];
        pts.extend([(11.0, 11.0); 4]); // 4-point dwell in zone 10
        pts.push((16.0, 11.0));
        pts.extend([(21.0, 11.0); 6]); // 6-point dwell in zone 11
        pts.push((28.0, 2.0));
        let t = traj(&pts);
        let labels = dbscan(&xyt_embed(&t), DbscanParams::default());
        let loc = locate_purchases(&t, &labels, &[item("tea", 1)], &l, 0);
        assert_eq!(loc.events, vec![PurchaseEvent { point_index: 11, count: 1 }]);
        assert_eq!(loc.placements[0].zone_id, 11);
    }

    #[test]
    fn conservation_and_merging() {
        let t = traj(&[(12.0, 12.0), (12.0, 12.0), (12.0, 12.0), (12.0, 12.0), (28.0, 2.0)]);
        let labels = dbscan(&xyt_embed(&t), DbscanParams::default());
        let items = vec![item("tea", 2), item("tea", 1), item("soap", 4), item("nope", 1)];
        let loc = locate_purchases(&t, &labels, &items, &layout(), 3);
        assert_eq!(loc.events, vec![PurchaseEvent { point_index: 3, count: 3 }]);
        let total: u64 = items.iter().map(|i| i.quantity as u64).sum();
        assert_eq!(loc.placed_quantity() + loc.excluded_quantity(), total);
    }

    #[test]
    fn merge_sums_and_sorts() {
        let merged = merge_events([
            PurchaseEvent { point_index: 4, count: 1 },
            PurchaseEvent { point_index: 1, count: 2 },
            PurchaseEvent { point_index: 4, count: 3 },
        ]);
        assert_eq!(
            merged,
            vec![PurchaseEvent { point_index: 1, count: 2 }, PurchaseEvent { point_index: 4, count: 4 }]
        );
    }
}

//! Synthetic stores and shoppers with known ground truth.
//!
//! A store is a rectangular footprint with shelving along the left, right and
//! top walls and a row of free-standing gondolas. Vertical aisles separate the
//! gondolas; open cross areas run along the bottom (entrance and checkout)
//! and the top. Each zone is an aisle-facing strip: half a shelf plus the
//! adjacent half aisle, cut into segments along the aisle.
//!
//! Shoppers walk shortest aisle paths between the zones on their list,
//! pause in front of each to pick items, then wait at the checkout.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::codec::Point2D;
use crate::error::{Error, Result};
use crate::formats::{write_scanner_csv, write_trajectories_csv};
use crate::layout::{Rect, StoreLayout, Zone};
use crate::purchase::{derive_seed, ScannerItem, TimedPoint, Trajectory};

const WALL_DEPTH: f64 = 0.6;
/// Distance of the shopper from a shelf face while picking.
const PICK_OFFSET: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorePreset {
    pub name: String,
    /// Outer walls.
    pub footprint: Rect,
    pub n_gondolas: usize,
    pub gondola_width: f64,
    /// Vertical extent of gondolas and side-wall shelving.
    pub shelf_y0: f64,
    pub shelf_y1: f64,
    pub segments_per_face: usize,
    pub left_wall_segments: usize,
    pub right_wall_segments: usize,
    pub top_wall_segments: usize,
}

impl StorePreset {
    /// 61 zones on a 30 m square.
    pub fn a() -> Self {
        Self {
            name: "A".into(),
            footprint: Rect::new(1.0, 1.0, 31.0, 31.0),
            n_gondolas: 6,
            gondola_width: 1.2,
            shelf_y0: 6.0,
            shelf_y1: 27.6,
            segments_per_face: 4,
            left_wall_segments: 4,
            right_wall_segments: 4,
            top_wall_segments: 5,
        }
    }

    /// 41 zones on a 22 m square.
    pub fn b() -> Self {
        Self {
            name: "B".into(),
            footprint: Rect::new(1.0, 1.0, 23.0, 23.0),
            n_gondolas: 4,
            gondola_width: 1.2,
            shelf_y0: 6.0,
            shelf_y1: 19.6,
            segments_per_face: 4,
            left_wall_segments: 3,
            right_wall_segments: 3,
            top_wall_segments: 3,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_uppercase().as_str() {
            "A" => Ok(Self::a()),
            "B" => Ok(Self::b()),
            other => Err(Error::InvalidArgument(format!("unknown store preset {other:?} (expected A or B)"))),
        }
    }

    pub fn zone_count(&self) -> usize {
        2 * self.n_gondolas * self.segments_per_face
            + self.left_wall_segments
            + self.right_wall_segments
            + self.top_wall_segments
    }
}

/// Free-space geometry of a generated store, used for path planning.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreGeometry {
    pub footprint: Rect,
    pub shelf_y0: f64,
    pub shelf_y1: f64,
    /// x-ranges of the vertical aisles, left to right.
    pub aisles: Vec<(f64, f64)>,
    pub bottom_lane: f64,
    pub top_lane: f64,
    pub top_shelf_y0: f64,
}

impl StoreGeometry {
    fn aisle_of(&self, x: f64) -> Option<usize> {
        self.aisles.iter().position(|&(a, b)| x >= a && x <= b)
    }

    fn in_bottom(&self, p: Point2D) -> bool {
        p.y < self.shelf_y0
    }

    fn in_top(&self, p: Point2D) -> bool {
        p.y >= self.shelf_y1
    }

    fn reaches(&self, p: Point2D, lane: f64) -> bool {
        self.aisle_of(p.x).is_some()
            || (lane < self.shelf_y0 && self.in_bottom(p))
            || (lane > self.shelf_y1 && self.in_top(p))
    }

    /// Shortest obstacle-free polyline from `a` to `b`, both in free space.
    pub fn path(&self, a: Point2D, b: Point2D) -> Vec<Point2D> {
        let same_aisle = matches!((self.aisle_of(a.x), self.aisle_of(b.x)), (Some(i), Some(j)) if i == j);
        let same_cross = (self.in_bottom(a) && self.in_bottom(b)) || (self.in_top(a) && self.in_top(b));
        if same_aisle || same_cross {
            return vec![a, b];
        }
        let lanes = [self.bottom_lane, self.top_lane];
        let mut candidates: Vec<Vec<Point2D>> = Vec::new();
        for &lane in &lanes {
            if self.reaches(a, lane) && self.reaches(b, lane) {
                candidates.push(vec![a, Point2D::new(a.x, lane), Point2D::new(b.x, lane), b]);
            }
        }
        for &la in &lanes {
            for &lb in &lanes {
                if la == lb || !self.reaches(a, la) || !self.reaches(b, lb) {
                    continue;
                }
                for &(x0, x1) in &self.aisles {
                    let cx = (x0 + x1) / 2.0;
                    candidates.push(vec![
                        a,
                        Point2D::new(a.x, la),
                        Point2D::new(cx, la),
                        Point2D::new(cx, lb),
                        Point2D::new(b.x, lb),
                        b,
                    ]);
                }
            }
        }
        candidates
            .into_iter()
            .min_by(|p, q| polyline_length(p).total_cmp(&polyline_length(q)))
            .expect("every free point reaches a lane")
    }
}

pub fn polyline_length(p: &[Point2D]) -> f64 {
    p.windows(2).map(|w| w[0].distance(&w[1])).sum()
}

/// Where a shopper stands to pick from a zone: a line segment parallel to
/// the shelf face.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PickLine {
    from: Point2D,
    to: Point2D,
}

impl PickLine {
    fn at(&self, u: f64) -> Point2D {
        Point2D::new(self.from.x + u * (self.to.x - self.from.x), self.from.y + u * (self.to.y - self.from.y))
    }
}

/// A generated store: layout plus geometry and planted zone popularity.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthStore {
    pub preset: StorePreset,
    pub layout: StoreLayout,
    pub geometry: StoreGeometry,
    /// Zipf weight of each zone, indexed like `layout.zones`.
    pub popularity: Vec<f64>,
    pick_lines: Vec<PickLine>,
    entrance_spot: Point2D,
    checkout_spot: Point2D,
}

fn segments(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = (f64, f64)> {
    let step = (hi - lo) / n as f64;
    (0..n).map(move |k| (lo + step * k as f64, if k + 1 == n { hi } else { lo + step * (k + 1) as f64 }))
}

/// Builds the layout of `preset`. The seed only permutes zone popularity.
pub fn make_layout(preset: &StorePreset, seed: u64) -> Result<SynthStore> {
    let f = preset.footprint;
    let inner_x0 = f.x0 + WALL_DEPTH;
    let inner_x1 = f.x1 - WALL_DEPTH;
    let top_shelf_y0 = f.y1 - WALL_DEPTH;
    let (gy0, gy1) = (preset.shelf_y0, preset.shelf_y1);
    let ng = preset.n_gondolas;
    let gw = preset.gondola_width;
    let aisle = (inner_x1 - inner_x0 - ng as f64 * gw) / (ng + 1) as f64;
    if aisle < 2.0 || gy0 <= f.y0 + 2.0 || gy1 >= top_shelf_y0 - 1.0 {
        return Err(Error::Simulation(format!("preset {} leaves no room for aisles", preset.name)));
    }

    let mut shelves = vec![
        Rect::new(f.x0, gy0, inner_x0, gy1),
        Rect::new(inner_x1, gy0, f.x1, gy1),
        Rect::new(f.x0, top_shelf_y0, f.x1, f.y1),
    ];
    let mut aisles = Vec::with_capacity(ng + 1);
    let mut zones: Vec<(Rect, PickLine)> = Vec::new();
    let mut x = inner_x0;
    for _ in 0..ng {
        aisles.push((x, x + aisle));
        x += aisle;
        shelves.push(Rect::new(x, gy0, x + gw, gy1));
        x += gw;
    }
    aisles.push((x, inner_x1));

    // Left wall, then each gondola's two faces, then right wall, then top wall.
    // Neighboring zones meet at aisle centerlines.
    let mids: Vec<f64> = aisles.iter().map(|&(a, b)| (a + b) / 2.0).collect();
    for (y0, y1) in segments(gy0, gy1, preset.left_wall_segments) {
        let px = inner_x0 + PICK_OFFSET;
        zones.push((Rect::new(f.x0, y0, mids[0], y1), pick_vertical(px, y0, y1)));
    }
    for g in 0..ng {
        let gx0 = aisles[g].1;
        let gx1 = gx0 + gw;
        for (y0, y1) in segments(gy0, gy1, preset.segments_per_face) {
            zones.push((Rect::new(mids[g], y0, gx0 + gw / 2.0, y1), pick_vertical(gx0 - PICK_OFFSET, y0, y1)));
        }
        for (y0, y1) in segments(gy0, gy1, preset.segments_per_face) {
            zones.push((Rect::new(gx0 + gw / 2.0, y0, mids[g + 1], y1), pick_vertical(gx1 + PICK_OFFSET, y0, y1)));
        }
    }
    for (y0, y1) in segments(gy0, gy1, preset.right_wall_segments) {
        let px = inner_x1 - PICK_OFFSET;
        zones.push((Rect::new(mids[ng], y0, f.x1, y1), pick_vertical(px, y0, y1)));
    }
    let top_lane = (gy1 + top_shelf_y0) / 2.0;
    for (x0, x1) in segments(f.x0, f.x1, preset.top_wall_segments) {
        let py = top_shelf_y0 - PICK_OFFSET;
        let lo = (x0 + PICK_OFFSET).max(inner_x0 + PICK_OFFSET);
        let hi = (x1 - PICK_OFFSET).min(inner_x1 - PICK_OFFSET);
        zones.push((
            Rect::new(x0, top_lane, x1, f.y1),
            PickLine { from: Point2D::new(lo, py), to: Point2D::new(hi, py) },
        ));
    }
    debug_assert_eq!(zones.len(), preset.zone_count());

    let entrance = Rect::new(f.x0, f.y0, f.x0 + 4.0, f.y0 + 2.5);
    let checkout = Rect::new(f.x1 - 6.0, f.y0, f.x1, f.y0 + 2.5);
    let layout = StoreLayout {
        store_side: crate::codec::DEFAULT_SIDE,
        zones: zones
            .iter()
            .enumerate()
            .map(|(i, (rect, _))| Zone {
                id: i as u32,
                rect: *rect,
                categories: vec![format!("{}-cat{:02}", preset.name.to_ascii_lowercase(), i)],
            })
            .collect(),
        entrance,
        checkout,
        shelves,
    };
    layout.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ranks: Vec<usize> = (1..=zones.len()).collect();
    ranks.shuffle(&mut rng);
    let popularity = ranks.iter().map(|&r| 1.0 / r as f64).collect();

    Ok(SynthStore {
        preset: preset.clone(),
        geometry: StoreGeometry {
            footprint: f,
            shelf_y0: gy0,
            shelf_y1: gy1,
            aisles,
            bottom_lane: gy0 - 1.5,
            top_lane,
            top_shelf_y0,
        },
        layout,
        popularity,
        pick_lines: zones.into_iter().map(|(_, p)| p).collect(),
        entrance_spot: entrance.center(),
        checkout_spot: checkout.center(),
    })
}

fn pick_vertical(x: f64, y0: f64, y1: f64) -> PickLine {
    PickLine { from: Point2D::new(x, y0 + PICK_OFFSET), to: Point2D::new(x, y1 - PICK_OFFSET) }
}

/// Behavioral knobs of simulated shoppers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShopperModel {
    /// Mean of the Poisson part of the list size (list = 1 + Poisson).
    pub list_mean: f64,
    /// Upper bound on the list size, keeping journeys inside a 256-token context.
    pub list_max: usize,
    /// Distance covered in a sampling period while browsing along aisles.
    pub stroll_step: (f64, f64),
    /// Walking speed when heading off after picking, m/s.
    pub walk_speed: f64,
    /// Radius in xyt space, meters, that the walk away from a pick stays out of.
    pub pause_radius: f64,
    pub clearance_margin: f64,
    /// Pause at each target, in samples.
    pub dwell_samples: (usize, usize),
    /// Wait at the checkout, in samples.
    pub checkout_samples: (usize, usize),
    pub noise_sigma: f64,
    pub sample_period: f64,
    pub double_quantity_prob: f64,
    /// Minimum spacing of consecutive pick spots.
    pub min_pick_spacing: f64,
    /// Gap between consecutive checkouts, seconds.
    pub checkout_gap: (f64, f64),
    pub start_epoch: f64,
}

impl Default for ShopperModel {
    fn default() -> Self {
        Self {
            list_mean: 3.0,
            list_max: 6,
            stroll_step: (1.7, 2.2),
            walk_speed: 1.0,
            pause_radius: 2.5,
            clearance_margin: 0.7,
            dwell_samples: (4, 8),
            checkout_samples: (6, 10),
            noise_sigma: 0.2,
            sample_period: 5.0,
            double_quantity_prob: 0.15,
            min_pick_spacing: 3.5,
            checkout_gap: (60.0, 180.0),
            start_epoch: 1_700_000_000.0,
        }
    }
}

impl ShopperModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Simulation(m.to_string()));
        if !(self.noise_sigma >= 0.0 && self.noise_sigma < 0.5) {
            return bad("noise_sigma must lie in [0, 0.5)");
        }
        if self.sample_period <= 0.0 || self.walk_speed <= 0.0 {
            return bad("sample_period and walk_speed must be positive");
        }
        if !(0.0 < self.stroll_step.0 && self.stroll_step.0 <= self.stroll_step.1) {
            return bad("stroll_step must be a positive range");
        }
        if self.dwell_samples.0 < 1 || self.dwell_samples.0 > self.dwell_samples.1 {
            return bad("dwell_samples must be a non-empty range starting at 1 or more");
        }
        if self.checkout_samples.0 < 1 || self.checkout_samples.0 > self.checkout_samples.1 {
            return bad("checkout_samples must be a non-empty range");
        }
        if !(self.checkout_gap.0 > 4.0 && self.checkout_gap.0 <= self.checkout_gap.1) {
            return bad("checkout_gap must exceed the receipt jitter");
        }
        if self.list_max < 1 {
            return bad("list_max must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.double_quantity_prob) || self.list_mean < 0.0 {
            return bad("list_mean and double_quantity_prob out of range");
        }
        Ok(())
    }
}

/// One planted purchase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthPurchase {
    pub customer_id: String,
    pub category: String,
    pub quantity: u32,
    pub zone_id: u32,
    /// Index of the last sample of the pause at which the item was picked.
    pub point_index: usize,
    /// Noise-free pick position.
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub trajectories: Vec<Trajectory>,
    pub scanner: Vec<ScannerItem>,
    /// Planted purchases per trajectory.
    pub truth: Vec<Vec<TruthPurchase>>,
}

impl Simulation {
    pub fn all_truth(&self) -> impl Iterator<Item = &TruthPurchase> {
        self.truth.iter().flatten()
    }
}

struct Walker<'a> {
    store: &'a SynthStore,
    model: &'a ShopperModel,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    pos: Point2D,
    t: f64,
    points: Vec<TimedPoint>,
    /// Spot and time of the last sample of the latest pick.
    last_pick: Option<(Point2D, f64)>,
}

impl Walker<'_> {
    fn observe(&mut self, keep: impl Fn(Point2D) -> bool) {
        let layout = &self.store.layout;
        let side = layout.store_side;
        let mut p = self.pos;
        for _ in 0..1000 {
            p = Point2D::new(
                self.pos.x + self.noise.sample(&mut self.rng),
                self.pos.y + self.noise.sample(&mut self.rng),
            );
            if p.x >= 0.0 && p.y >= 0.0 && p.x < side && p.y < side && !layout.in_shelf(p) && keep(p) {
                break;
            }
            p = self.pos;
        }
        self.points.push(TimedPoint { t: self.t, x: p.x, y: p.y });
        self.t += self.model.sample_period;
    }

    /// True when a sample at `p` would sit within the pause radius (in xyt)
    /// of the last pick, plus a noise margin.
    fn crowds_last_pick(&self, p: Point2D) -> bool {
        let Some((spot, t_end)) = self.last_pick else { return false };
        let dt = (self.t - t_end) * crate::purchase::TIME_SCALE;
        let r = self.model.pause_radius;
        dt < r && p.distance(&spot) < (r * r - dt * dt).sqrt() + self.model.clearance_margin
    }

    /// Walks to `goal`, recording one sample per period. Steps are strolls,
    /// except that the shopper moves at walking speed while still close to the
    /// last pick. The sample at arrival is left to the caller.
    fn walk_to(&mut self, goal: Point2D) {
        let path = self.store.geometry.path(self.pos, goal);
        let legs: Vec<(Point2D, Point2D)> =
            path.windows(2).map(|w| (w[0], w[1])).filter(|(a, b)| a.distance(b) > 1e-9).collect();
        let advance = |mut pos: Point2D, mut leg: usize, mut budget: f64| {
            while leg < legs.len() && budget > 0.0 {
                let end = legs[leg].1;
                let d = pos.distance(&end);
                if d <= budget {
                    pos = end;
                    budget -= d;
                    leg += 1;
                } else {
                    let u = budget / d;
                    pos = Point2D::new(pos.x + u * (end.x - pos.x), pos.y + u * (end.y - pos.y));
                    budget = 0.0;
                }
            }
            (pos, leg)
        };
        let mut leg = 0;
        loop {
            let stroll = self.rng.random_range(self.model.stroll_step.0..=self.model.stroll_step.1);
            let (mut pos, mut next) = advance(self.pos, leg, stroll);
            if next < legs.len() && self.crowds_last_pick(pos) {
                (pos, next) = advance(self.pos, leg, self.model.walk_speed * self.model.sample_period);
            }
            self.pos = pos;
            leg = next;
            if leg >= legs.len() {
                self.pos = goal;
                return;
            }
            self.observe(|_| true);
        }
    }
}

/// Simulates `n` shoppers. Journey `i` uses a seed derived from `seed` and `i`;
/// checkout times are then laid out in order with a separate stream.
pub fn simulate_journeys(store: &SynthStore, model: &ShopperModel, n: usize, seed: u64) -> Result<Simulation> {
    model.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("simulation needs at least one shopper".into()));
    }
    let zones = &store.layout.zones;
    for (i, line) in store.pick_lines.iter().enumerate() {
        for u in [0.0, 1.0] {
            let p = line.at(u);
            if store.layout.in_shelf(p) || !zones[i].rect.contains(p) {
                return Err(Error::Simulation(format!("zone {} cannot be reached from an aisle", zones[i].id)));
            }
        }
    }
    let noise = Normal::new(0.0, model.noise_sigma.max(1e-12)).expect("valid sigma");
    let list_size = Poisson::new(model.list_mean.max(1e-9)).expect("valid mean");

    let mut trajectories = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        let customer_id = format!("{}{:06}", store.preset.name.to_ascii_lowercase(), i);

        let want = (1 + list_size.sample(&mut rng) as usize).min(model.list_max).min(zones.len());
        let mut weights = store.popularity.clone();
        let mut list = Vec::with_capacity(want);
        for _ in 0..want {
            let total: f64 = weights.iter().sum();
            let mut r = rng.random::<f64>() * total;
            let mut pick = weights.len() - 1;
            for (z, &w) in weights.iter().enumerate() {
                if w > 0.0 && r < w {
                    pick = z;
                    break;
                }
                r -= w;
            }
            weights[pick] = 0.0;
            list.push(pick);
        }

        let mut w =
            Walker { store, model, rng, noise, pos: store.entrance_spot, t: 0.0, points: Vec::new(), last_pick: None };
        let entrance = store.layout.entrance;
        w.observe(|p| entrance.contains(p));

        let mut bought = Vec::new();
        while !list.is_empty() {
            // Nearest remaining target, preferring ones that leave room from the last pick.
            let here = w.pos;
            let last = w.last_pick.map(|(p, _)| p);
            let roomy = |z: usize| {
                let line = store.pick_lines[z];
                last.is_none_or(|q| line.from.distance(&q).max(line.to.distance(&q)) >= model.min_pick_spacing)
            };
            let (k, _) = list
                .iter()
                .enumerate()
                .map(|(k, &z)| {
                    let d = polyline_length(&store.geometry.path(here, store.pick_lines[z].at(0.5)));
                    (k, (!roomy(z), d))
                })
                .min_by(|a, b| a.1 .0.cmp(&b.1 .0).then(a.1 .1.total_cmp(&b.1 .1)))
                .expect("non-empty list");
            let z = list.remove(k);
            let line = store.pick_lines[z];
            let mut spot = line.at(w.rng.random());
            if let Some(q) = last {
                for _ in 0..32 {
                    if q.distance(&spot) >= model.min_pick_spacing {
                        break;
                    }
                    let other = line.at(w.rng.random());
                    if other.distance(&q) > spot.distance(&q) {
                        spot = other;
                    }
                }
            }
            w.walk_to(spot);
            let dwell = w.rng.random_range(model.dwell_samples.0..=model.dwell_samples.1);
            for _ in 0..dwell {
                w.observe(|_| true);
            }
            let quantity = if w.rng.random::<f64>() < model.double_quantity_prob { 2 } else { 1 };
            bought.push(TruthPurchase {
                customer_id: customer_id.clone(),
                category: zones[z].categories[0].clone(),
                quantity,
                zone_id: zones[z].id,
                point_index: w.points.len() - 1,
                x: spot.x,
                y: spot.y,
            });
            w.last_pick = Some((spot, w.t - model.sample_period));
        }
        w.walk_to(store.checkout_spot);
        let stay = w.rng.random_range(model.checkout_samples.0..=model.checkout_samples.1);
        let checkout = store.layout.checkout;
        for _ in 0..stay {
            w.observe(|p| checkout.contains(p));
        }
        trajectories.push(Trajectory { customer_id, start_time: 0.0, points: w.points });
        truth.push(bought);
    }

    let mut clock = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let mut checkout_at = model.start_epoch;
    let mut scanner = Vec::new();
    for (traj, bought) in trajectories.iter_mut().zip(&truth) {
        checkout_at += clock.random_range(model.checkout_gap.0..=model.checkout_gap.1).round();
        traj.start_time = checkout_at - traj.points.last().expect("non-empty").t;
        let txn_time = checkout_at + clock.random_range(-2.0..=2.0f64).round();
        scanner.extend(bought.iter().map(|b| ScannerItem {
            txn_time,
            category: b.category.clone(),
            quantity: b.quantity,
        }));
    }
    Ok(Simulation { trajectories, scanner, truth })
}

fn write_truth_csv(sim: &Simulation) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for t in sim.all_truth() {
        w.serialize(t).map_err(|e| Error::Format(format!("truth: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Format(format!("truth: {e}")))
}

pub fn read_truth_csv(bytes: &[u8]) -> Result<Vec<TruthPurchase>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format(format!("truth: {e}")))
}

/// File names written by [`write_outputs`].
pub const LAYOUT_FILE: &str = "layout.json";
pub const TRAJECTORY_FILE: &str = "trajectories.csv";
pub const SCANNER_FILE: &str = "scanner.csv";
pub const TRUTH_FILE: &str = "truth.csv";

/// Writes layout, trajectories, scanner records and planted purchases into `dir`.
pub fn write_outputs(dir: &Path, store: &SynthStore, sim: &Simulation) -> Result<()> {
    store.layout.save(&dir.join(LAYOUT_FILE))?;
    crate::io::write_atomic(&dir.join(TRAJECTORY_FILE), &write_trajectories_csv(&sim.trajectories)?)?;
    crate::io::write_atomic(&dir.join(SCANNER_FILE), &write_scanner_csv(&sim.scanner)?)?;
    crate::io::write_atomic(&dir.join(TRUTH_FILE), &write_truth_csv(sim)?)
}

/// Spearman rank correlation, average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let r = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                out[k] = r;
            }
            i = j + 1;
        }
        out
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_expected_zone_counts() {
        let a = make_layout(&StorePreset::a(), 1).unwrap();
        let b = make_layout(&StorePreset::b(), 1).unwrap();
        assert_eq!(a.layout.zones.len(), 61);
        assert_eq!(b.layout.zones.len(), 41);
        for s in [&a, &b] {
            let f = s.preset.footprint;
            assert!(f.x0 >= 0.0 && f.x1 <= 32.0);
            for (i, z) in s.layout.zones.iter().enumerate() {
                for other in &s.layout.zones[i + 1..] {
                    assert!(!z.rect.overlaps(&other.rect), "zones {} and {} overlap", z.id, other.id);
                }
            }
        }
    }

    #[test]
    fn layout_is_deterministic() {
        let a = make_layout(&StorePreset::a(), 9).unwrap();
        let b = make_layout(&StorePreset::a(), 9).unwrap();
        assert_eq!(a.layout.to_json(), b.layout.to_json());
        assert_eq!(a.popularity, b.popularity);
        assert_ne!(a.popularity, make_layout(&StorePreset::a(), 10).unwrap().popularity);
    }

    #[test]
    fn paths_avoid_shelves() {
        let s = make_layout(&StorePreset::a(), 1).unwrap();
        let spots: Vec<Point2D> =
            s.pick_lines.iter().map(|l| l.at(0.3)).chain([s.entrance_spot, s.checkout_spot]).collect();
        for &a in &spots {
            for &b in &spots {
                let path = s.geometry.path(a, b);
                assert!(polyline_length(&path) >= a.distance(&b) - 1e-9);
                for w in path.windows(2) {
                    for k in 0..=20 {
                        let u = k as f64 / 20.0;
                        let p = Point2D::new(w[0].x + u * (w[1].x - w[0].x), w[0].y + u * (w[1].y - w[0].y));
                        assert!(!s.layout.in_shelf(p), "{a:?} -> {b:?} crosses a shelf at {p:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn one_shopper_enters_and_checks_out() {
        let s = make_layout(&StorePreset::b(), 2).unwrap();
        let sim = simulate_journeys(&s, &ShopperModel::default(), 1, 3).unwrap();
        let t = &sim.trajectories[0];
        assert!(s.layout.entrance.contains(t.points[0].pos()));
        assert!(s.layout.checkout.contains(t.points.last().unwrap().pos()));
        assert!(t.points.windows(2).all(|w| (w[1].t - w[0].t - 5.0).abs() < 1e-9));
        assert!(!sim.truth[0].is_empty());
    }

    #[test]
    fn simulation_is_deterministic_and_consistent() {
        let s = make_layout(&StorePreset::a(), 4).unwrap();
        let m = ShopperModel::default();
        let a = simulate_journeys(&s, &m, 40, 8).unwrap();
        assert_eq!(a, simulate_journeys(&s, &m, 40, 8).unwrap());
        let cats = s.layout.category_index();
        assert!(a.scanner.iter().all(|i| cats.contains_key(i.category.as_str())));
        for t in &a.trajectories {
            assert!(t.points.iter().all(|p| !s.layout.in_shelf(p.pos())));
        }
        let checkouts: Vec<f64> = a.trajectories.iter().map(|t| t.checkout_time()).collect();
        assert!(checkouts.windows(2).all(|w| w[1] - w[0] >= 60.0));
        for (traj, truth) in a.trajectories.iter().zip(&a.truth) {
            for p in truth {
                let zone = &s.layout.zones[p.zone_id as usize];
                assert!(zone.rect.contains(Point2D::new(p.x, p.y)));
                assert!(traj.points[p.point_index].pos().distance(&Point2D::new(p.x, p.y)) < 1.5);
            }
        }
    }

    #[test]
    fn list_size_is_capped() {
        let s = make_layout(&StorePreset::a(), 4).unwrap();
        let m = ShopperModel { list_mean: 20.0, list_max: 3, ..ShopperModel::default() };
        let sim = simulate_journeys(&s, &m, 10, 2).unwrap();
        assert!(sim.truth.iter().all(|t| !t.is_empty() && t.len() <= 3));
        assert!(sim.truth.iter().any(|t| t.len() == 3));
    }

    #[test]
    fn rejects_bad_model() {
        let s = make_layout(&StorePreset::b(), 0).unwrap();
        let m = ShopperModel { noise_sigma: 0.6, ..ShopperModel::default() };
        assert!(matches!(simulate_journeys(&s, &m, 3, 0), Err(Error::Simulation(_))));
        let m = ShopperModel { list_max: 0, ..ShopperModel::default() };
        assert!(matches!(simulate_journeys(&s, &m, 3, 0), Err(Error::Simulation(_))));
        assert!(simulate_journeys(&s, &ShopperModel::default(), 0, 0).is_err());
    }

    #[test]
    fn spearman_oracle() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        // ranks (1,2,3,4) vs (2,1,4,3): 1 - 6·4/(4·15) = 0.6
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]) - 0.6).abs() < 1e-12);
    }
}

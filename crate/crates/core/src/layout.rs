//! Store floor plans: zones carrying product categories, shelves, entrance and checkout.
//!
//! Layout files are JSON:
//!
//! ```json
//! {
//!   "store_side": 32.0,
//!   "zones": [{"id": 0, "rect": [2.0, 6.0, 3.5, 11.4], "categories": ["cat-000"]}],
//!   "entrance": [1.0, 1.0, 4.0, 3.0],
//!   "checkout": [24.0, 1.0, 30.0, 3.0],
//!   "shelves": [[3.5, 6.0, 4.7, 27.6]]
//! }
//! ```
//!
//! `shelves` is optional; when present, shelves are obstacles no trajectory enters.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::Point2D;
use crate::error::{Error, Result};

/// Axis-aligned rectangle `[x0, y0, x1, y1]`, half-open on the upper edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl From<[f64; 4]> for Rect {
    fn from(r: [f64; 4]) -> Self {
        Rect::new(r[0], r[1], r[2], r[3])
    }
}

impl From<Rect> for [f64; 4] {
    fn from(r: Rect) -> Self {
        [r.x0, r.y0, r.x1, r.y1]
    }
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn contains(&self, p: Point2D) -> bool {
        p.x >= self.x0 && p.x < self.x1 && p.y >= self.y0 && p.y < self.y1
    }

    /// Strict interior test, used for obstacle checks.
    pub fn contains_strict(&self, p: Point2D) -> bool {
        p.x > self.x0 && p.x < self.x1 && p.y > self.y0 && p.y < self.y1
    }

    pub fn center(&self) -> Point2D {
        Point2D::new((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn is_valid(&self) -> bool {
        [self.x0, self.y0, self.x1, self.y1].iter().all(|v| v.is_finite()) && self.x0 < self.x1 && self.y0 < self.y1
    }

    pub fn within(&self, side: f64) -> bool {
        self.x0 >= 0.0 && self.y0 >= 0.0 && self.x1 <= side && self.y1 <= side
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub id: u32,
    pub rect: Rect,
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreLayout {
    pub store_side: f64,
    pub zones: Vec<Zone>,
    pub entrance: Rect,
    pub checkout: Rect,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shelves: Vec<Rect>,
}

impl StoreLayout {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Format(format!("layout: {msg}")));
        if !(self.store_side.is_finite() && self.store_side > 0.0) {
            return bad(format!("store_side {} must be positive", self.store_side));
        }
        if self.zones.is_empty() {
            return bad("no zones".into());
        }
        let mut ids = HashSet::new();
        for z in &self.zones {
            if !ids.insert(z.id) {
                return bad(format!("duplicate zone id {}", z.id));
            }
            if !z.rect.is_valid() || !z.rect.within(self.store_side) {
                return bad(format!("zone {} rect {:?} is degenerate or off the floor", z.id, z.rect));
            }
        }
        for (name, r) in [("entrance", &self.entrance), ("checkout", &self.checkout)] {
            if !r.is_valid() || !r.within(self.store_side) {
                return bad(format!("{name} rect {r:?} is degenerate or off the floor"));
            }
        }
        for r in &self.shelves {
            if !r.is_valid() || !r.within(self.store_side) {
                return bad(format!("shelf rect {r:?} is degenerate or off the floor"));
            }
        }
        Ok(())
    }

    /// First zone (in file order) containing `p`.
    pub fn zone_at(&self, p: Point2D) -> Option<&Zone> {
        self.zones.iter().find(|z| z.rect.contains(p))
    }

    pub fn zone_index_at(&self, p: Point2D) -> Option<usize> {
        self.zones.iter().position(|z| z.rect.contains(p))
    }

    /// Indices of zones stocking `category`, in file order.
    pub fn zones_for_category(&self, category: &str) -> Vec<usize> {
        self.zones
            .iter()
            .enumerate()
            .filter(|(_, z)| z.categories.iter().any(|c| c == category))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn category_index(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, z) in self.zones.iter().enumerate() {
            for c in &z.categories {
                out.entry(c.as_str()).or_default().push(i);
            }
        }
        out
    }

    pub fn in_shelf(&self, p: Point2D) -> bool {
        self.shelves.iter().any(|s| s.contains_strict(p))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let layout: StoreLayout = serde_json::from_str(text).map_err(|e| Error::Format(format!("layout: {e}")))?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json().as_bytes())
    }
}

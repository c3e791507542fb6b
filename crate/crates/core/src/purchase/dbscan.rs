//! Density-based clustering over small point sets (one trajectory at a time).
//!
//! Neighbor queries go through a uniform hash grid with cell side `eps`, so a
//! query only inspects the 27 surrounding buckets.

use std::collections::{HashMap, VecDeque};

pub const NOISE: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self { eps: 2.5, min_pts: 4 }
    }
}

struct Grid<'a> {
    points: &'a [[f64; 3]],
    eps: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [[f64; 3]], eps: f64) -> Self {
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(p, eps)).or_default().push(i);
        }
        Self { points, eps, buckets }
    }

    fn key(p: &[f64; 3], eps: f64) -> [i64; 3] {
        [(p[0] / eps).floor() as i64, (p[1] / eps).floor() as i64, (p[2] / eps).floor() as i64]
    }

    /// Indices within `eps` of point `i` (itself included), ascending.
    fn neighbors(&self, i: usize) -> Vec<usize> {
        let p = &self.points[i];
        let k = Self::key(p, self.eps);
        let eps2 = self.eps * self.eps;
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        out.extend(bucket.iter().copied().filter(|&j| dist2(p, &self.points[j]) <= eps2));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Labels each point with a cluster id (0, 1, ...) or [`NOISE`].
///
/// Points are scanned in input order. An unlabeled core point opens a new
/// cluster, which is grown breadth-first through core points before the scan
/// continues, so a border point reachable from several clusters keeps the one
/// discovered first.
pub fn dbscan(points: &[[f64; 3]], params: DbscanParams) -> Vec<i32> {
    assert!(params.eps > 0.0, "eps must be positive");
    assert!(params.min_pts >= 1, "min_pts must be at least 1");
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let grid = Grid::new(points, params.eps);
    let neighborhoods: Vec<Vec<usize>> = (0..n).map(|i| grid.neighbors(i)).collect();
    let is_core: Vec<bool> = neighborhoods.iter().map(|nb| nb.len() >= params.min_pts).collect();

    let mut labels = vec![NOISE; n];
    let mut assigned = vec![false; n];
    let mut next = 0i32;
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if assigned[seed] || !is_core[seed] {
            continue;
        }
        let cluster = next;
        next += 1;
        assigned[seed] = true;
        labels[seed] = cluster;
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            for &q in &neighborhoods[p] {
                if assigned[q] {
                    continue;
                }
                assigned[q] = true;
                labels[q] = cluster;
                if is_core[q] {
                    queue.push_back(q);
                }
            }
        }
    }
    labels
}

/// Number of clusters in a label vector.
pub fn cluster_count(labels: &[i32]) -> usize {
    labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
}

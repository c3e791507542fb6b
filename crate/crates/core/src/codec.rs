//! Hierarchical cell codes for store-frame positions.
//!
//! The floor is a square of `side` meters (32 m by default) split six times
//! into quadrants, giving a 64 × 64 grid of 0.5 m cells. Each level adds one
//! letter; level `k` (0-based) draws from the four letters starting at
//! `'a' + 4k`, so level 0 uses `a..=d` and level 5 uses `u..=x`.
//!
//! Within a level the letter offset is `2 * upper + right`: lower-left = 0,
//! lower-right = 1, upper-left = 2, upper-right = 3. Points on an internal
//! boundary fall into the upper/right half.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of subdivision levels (and letters per code).
pub const LEVELS: usize = 6;
/// Cells per grid side.
pub const GRID: usize = 1 << LEVELS;
/// Default floor side in meters.
pub const DEFAULT_SIDE: f64 = 32.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCell {
    /// Column, 0 at the left edge.
    pub i: u8,
    /// Row, 0 at the bottom edge.
    pub j: u8,
}

impl GridCell {
    pub fn new(i: u8, j: u8) -> Option<Self> {
        ((i as usize) < GRID && (j as usize) < GRID).then_some(Self { i, j })
    }

    /// Row-major index into a `GRID × GRID` array (row = `j`).
    pub fn flat_index(&self) -> usize {
        self.j as usize * GRID + self.i as usize
    }

    pub fn all() -> impl Iterator<Item = GridCell> {
        (0..GRID as u8).flat_map(|j| (0..GRID as u8).map(move |i| GridCell { i, j }))
    }
}

/// Six-letter hierarchical cell name, e.g. `agkpqw`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellCode([u8; LEVELS]);

impl CellCode {
    pub fn as_bytes(&self) -> &[u8; LEVELS] {
        &self.0
    }

    pub fn as_str(&self) -> &str {
        // Letters are validated ASCII on construction.
        std::str::from_utf8(&self.0).expect("cell code is ascii")
    }

    /// Quadrant offset (0..4) at `level`.
    pub fn offset(&self, level: usize) -> u8 {
        self.0[level] - level_base(level)
    }

    pub fn parse(s: &str) -> Result<Self, CodeParseError> {
        Self::from_bytes(s.as_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodeParseError> {
        if bytes.len() != LEVELS {
            return Err(CodeParseError::Length(bytes.len()));
        }
        let mut out = [0u8; LEVELS];
        for (level, &b) in bytes.iter().enumerate() {
            if !is_level_letter(level, b) {
                return Err(CodeParseError::Letter { position: level, found: b as char });
            }
            out[level] = b;
        }
        Ok(Self(out))
    }
}

impl fmt::Display for CellCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for CellCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CellCode({})", self.as_str())
    }
}

impl FromStr for CellCode {
    type Err = CodeParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for CellCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CellCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        CellCode::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("{axis} = {value} is outside the floor [0, {side})")]
    OutOfBounds { axis: Axis, value: f64, side: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodeParseError {
    #[error("cell code must have {LEVELS} letters, got {0}")]
    Length(usize),
    #[error("letter {found:?} at position {position} is not a level-{} letter", position + 1)]
    Letter { position: usize, found: char },
}

pub fn level_base(level: usize) -> u8 {
    b'a' + 4 * level as u8
}

pub fn is_level_letter(level: usize, b: u8) -> bool {
    level < LEVELS && (level_base(level)..level_base(level) + 4).contains(&b)
}

/// Maps store coordinates onto cell codes for a square floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Codec {
    side: f64,
}

impl Default for Codec {
    fn default() -> Self {
        Self { side: DEFAULT_SIDE }
    }
}

impl Codec {
    /// A codec for a non-default floor side. Panics if `side` is not positive.
    pub fn with_side(side: f64) -> Self {
        assert!(side.is_finite() && side > 0.0, "floor side must be positive");
        Self { side }
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn cell_size(&self) -> f64 {
        self.side / GRID as f64
    }

    pub fn contains(&self, p: Point2D) -> bool {
        self.check(p).is_ok()
    }

    fn check(&self, p: Point2D) -> Result<(), CodecError> {
        for (axis, value) in [(Axis::X, p.x), (Axis::Y, p.y)] {
            if !(value.is_finite() && (0.0..self.side).contains(&value)) {
                return Err(CodecError::OutOfBounds { axis, value, side: self.side });
            }
        }
        Ok(())
    }

    /// Encodes a point by halving the current square once per level.
    pub fn encode(&self, p: Point2D) -> Result<CellCode, CodecError> {
        self.check(p)?;
        let (mut x0, mut y0) = (0.0, 0.0);
        let mut half = self.side;
        let mut out = [0u8; LEVELS];
        for (level, slot) in out.iter_mut().enumerate() {
            half /= 2.0;
            let right = p.x >= x0 + half;
            let upper = p.y >= y0 + half;
            if right {
                x0 += half;
            }
            if upper {
                y0 += half;
            }
            *slot = level_base(level) + 2 * upper as u8 + right as u8;
        }
        Ok(CellCode(out))
    }

    pub fn cell_of(&self, p: Point2D) -> Result<GridCell, CodecError> {
        self.encode(p).map(|c| decode_code(&c))
    }

    pub fn cell_center(&self, g: GridCell) -> Point2D {
        let s = self.cell_size();
        Point2D::new((g.i as f64 + 0.5) * s, (g.j as f64 + 0.5) * s)
    }

    pub fn code_center(&self, c: &CellCode) -> Point2D {
        self.cell_center(decode_code(c))
    }
}

/// Encodes with the default 32 m floor.
pub fn encode_location(p: Point2D) -> Result<CellCode, CodecError> {
    Codec::default().encode(p)
}

/// The grid cell named by `c`.
pub fn decode_code(c: &CellCode) -> GridCell {
    let (mut i, mut j) = (0u8, 0u8);
    for level in 0..LEVELS {
        let q = c.offset(level);
        i = (i << 1) | (q & 1);
        j = (j << 1) | (q >> 1);
    }
    GridCell { i, j }
}

/// Center of `g` on the default 32 m floor.
pub fn cell_center(g: GridCell) -> Point2D {
    Codec::default().cell_center(g)
}

/// Code naming a grid cell directly.
pub fn code_of_cell(g: GridCell) -> CellCode {
    let mut out = [0u8; LEVELS];
    for (level, slot) in out.iter_mut().enumerate() {
        let shift = LEVELS - 1 - level;
        let xb = (g.i >> shift) & 1;
        let yb = (g.j >> shift) & 1;
        *slot = level_base(level) + 2 * yb + xb;
    }
    CellCode(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Reference encoder: interleave the bits of the integer cell indices.
    fn interleave_reference(x: f64, y: f64) -> String {
        let i = (x / 0.5).floor() as u32;
        let j = (y / 0.5).floor() as u32;
        (0..6)
            .map(|k| {
                let bit = 5 - k;
                let q = (((j >> bit) & 1) << 1) | ((i >> bit) & 1);
                (b'a' + 4 * k as u8 + q as u8) as char
            })
            .collect()
    }

    #[test]
    fn corner_points() {
        assert_eq!(encode_location(Point2D::new(0.1, 0.1)).unwrap().as_str(), "aeimqu");
        assert_eq!(encode_location(Point2D::new(31.9, 31.9)).unwrap().as_str(), "dhlptx");
    }

    #[test]
    fn sample_code_round_trips() {
        let c = CellCode::parse("agkpqw").unwrap();
        let center = cell_center(decode_code(&c));
        assert_eq!(encode_location(center).unwrap(), c);
    }

    #[test]
    fn decode_extremes() {
        assert_eq!(decode_code(&"aeimqu".parse().unwrap()), GridCell { i: 0, j: 0 });
        assert_eq!(decode_code(&"dhlptx".parse().unwrap()), GridCell { i: 63, j: 63 });
    }

    #[test]
    fn centers() {
        assert_eq!(cell_center(GridCell { i: 0, j: 0 }), Point2D::new(0.25, 0.25));
        assert_eq!(cell_center(GridCell { i: 63, j: 63 }), Point2D::new(31.75, 31.75));
        assert_eq!(cell_center(GridCell { i: 10, j: 3 }), Point2D::new(5.25, 1.75));
    }

    #[test]
    fn exhaustive_round_trip() {
        for g in GridCell::all() {
            let c = encode_location(cell_center(g)).unwrap();
            assert_eq!(decode_code(&c), g);
            assert_eq!(code_of_cell(g), c);
        }
    }

    #[test]
    fn random_cells_match_interleaving_reference() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let g = GridCell::new(rng.random_range(0..64), rng.random_range(0..64)).unwrap();
            let p = cell_center(g);
            let c = encode_location(p).unwrap();
            assert_eq!(c.as_str(), interleave_reference(p.x, p.y));
            assert_eq!(encode_location(cell_center(decode_code(&c))).unwrap(), c);
        }
    }

    #[test]
    fn boundaries_go_to_upper_half() {
        let c = encode_location(Point2D::new(16.0, 16.0)).unwrap();
        assert_eq!(c.as_str(), "deimqu");
        let c = encode_location(Point2D::new(0.5, 0.0)).unwrap();
        assert_eq!(decode_code(&c), GridCell { i: 1, j: 0 });
    }

    #[test]
    fn out_of_bounds_names_axis() {
        let err = encode_location(Point2D::new(3.0, 32.0)).unwrap_err();
        assert!(matches!(err, CodecError::OutOfBounds { axis: Axis::Y, .. }));
        let err = encode_location(Point2D::new(-0.01, 3.0)).unwrap_err();
        assert!(matches!(err, CodecError::OutOfBounds { axis: Axis::X, .. }));
        assert!(encode_location(Point2D::new(f64::NAN, 1.0)).is_err());
    }

    #[test]
    fn parse_errors_report_position() {
        assert_eq!(CellCode::parse("aeim"), Err(CodeParseError::Length(4)));
        assert_eq!(CellCode::parse("aeimzz"), Err(CodeParseError::Letter { position: 4, found: 'z' }));
        assert_eq!(CellCode::parse("eaimqu"), Err(CodeParseError::Letter { position: 0, found: 'e' }));
    }

    #[test]
    fn locality() {
        let a = encode_location(Point2D::new(5.01, 5.01)).unwrap();
        let b = encode_location(Point2D::new(5.49, 5.49)).unwrap();
        assert_eq!(a, b);
        // Cells (10, 10) and (11, 10) differ only in the last bit of i.
        let a = code_of_cell(GridCell { i: 10, j: 10 });
        let b = code_of_cell(GridCell { i: 11, j: 10 });
        assert_eq!(a.as_bytes()[..5], b.as_bytes()[..5]);
        assert_ne!(a, b);
    }

    #[test]
    fn custom_side() {
        let codec = Codec::with_side(64.0);
        assert_eq!(codec.cell_size(), 1.0);
        let c = codec.encode(Point2D::new(63.5, 0.2)).unwrap();
        assert_eq!(decode_code(&c), GridCell { i: 63, j: 0 });
    }

    proptest::proptest! {
        #[test]
        fn level_alphabets_hold(x in 0.0f64..32.0, y in 0.0f64..32.0) {
            let c = encode_location(Point2D::new(x, y)).unwrap();
            for (k, &b) in c.as_bytes().iter().enumerate() {
                proptest::prop_assert!(is_level_letter(k, b));
            }
            proptest::prop_assert_eq!(c.as_str(), interleave_reference(x, y));
        }
    }
}

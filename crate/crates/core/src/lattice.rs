//! Points and nearest-neighbour edges of the square lattice.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Coordinates beyond this magnitude are rejected by the walk.
pub const GUARD_BAND: i64 = 1 << 62;

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct LatticePoint {
    pub x: i64,
    pub y: i64,
}

impl LatticePoint {
    pub const ORIGIN: LatticePoint = LatticePoint { x: 0, y: 0 };

    pub const fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }

    pub fn sup_norm(self) -> i64 {
        self.x.abs().max(self.y.abs())
    }

    pub fn euclidean(self) -> f64 {
        ((self.x as f64).powi(2) + (self.y as f64).powi(2)).sqrt()
    }

    pub fn within_guard(self) -> bool {
        self.x.abs() <= GUARD_BAND && self.y.abs() <= GUARD_BAND
    }

    pub fn step(self, dir: Direction) -> Self {
        let (dx, dy) = dir.offset();
        Self::new(self.x + dx, self.y + dy)
    }

    /// Componentwise congruence modulo `m`.
    pub fn congruent(self, other: Self, m: i64) -> bool {
        (self.x - other.x).rem_euclid(m) == 0 && (self.y - other.y).rem_euclid(m) == 0
    }

    pub fn to_f64(self) -> [f64; 2] {
        [self.x as f64, self.y as f64]
    }
}

impl Add for LatticePoint {
    type Output = LatticePoint;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for LatticePoint {
    type Output = LatticePoint;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    East,
    West,
    North,
    South,
}

impl Direction {
    /// Fixed order used for conductance vectors and jump selection.
    pub const ALL: [Direction; 4] = [
        Direction::East,
        Direction::West,
        Direction::North,
        Direction::South,
    ];

    pub const fn offset(self) -> (i64, i64) {
        match self {
            Direction::East => (1, 0),
            Direction::West => (-1, 0),
            Direction::North => (0, 1),
            Direction::South => (0, -1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    Horizontal,
    Vertical,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{0} and {1} are not lattice neighbours")]
pub struct NotAnEdge(pub LatticePoint, pub LatticePoint);

/// Undirected nearest-neighbour edge; `u` is the lexicographically smaller
/// endpoint, so `v = u + (1, 0)` or `v = u + (0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    u: LatticePoint,
    v: LatticePoint,
}

impl Edge {
    pub fn new(p: LatticePoint, q: LatticePoint) -> Result<Self, NotAnEdge> {
        let d = q - p;
        if d.x.abs() + d.y.abs() != 1 {
            return Err(NotAnEdge(p, q));
        }
        Ok(if p < q {
            Self { u: p, v: q }
        } else {
            Self { u: q, v: p }
        })
    }

    pub fn from_step(p: LatticePoint, dir: Direction) -> Self {
        let q = p.step(dir);
        if p < q {
            Self { u: p, v: q }
        } else {
            Self { u: q, v: p }
        }
    }

    pub fn horizontal(p: LatticePoint) -> Self {
        Self {
            u: p,
            v: LatticePoint::new(p.x + 1, p.y),
        }
    }

    pub fn vertical(p: LatticePoint) -> Self {
        Self {
            u: p,
            v: LatticePoint::new(p.x, p.y + 1),
        }
    }

    pub fn u(&self) -> LatticePoint {
        self.u
    }

    pub fn v(&self) -> LatticePoint {
        self.v
    }

    pub fn orientation(&self) -> Orientation {
        if self.u.y == self.v.y {
            Orientation::Horizontal
        } else {
            Orientation::Vertical
        }
    }

    pub fn shifted(&self, by: LatticePoint) -> Self {
        Self {
            u: self.u + by,
            v: self.v + by,
        }
    }

    /// Applies a point map to both endpoints and re-canonicalises.
    pub fn map(&self, f: impl Fn(LatticePoint) -> LatticePoint) -> Self {
        Edge::new(f(self.u), f(self.v)).expect("point map must preserve adjacency")
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}, {}}}", self.u, self.v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges_are_canonical() {
        let p = LatticePoint::new(3, 4);
        let q = LatticePoint::new(3, 5);
        assert_eq!(Edge::new(q, p).unwrap(), Edge::new(p, q).unwrap());
        assert_eq!(Edge::new(p, q).unwrap().u(), p);
        assert_eq!(Edge::from_step(q, Direction::South), Edge::vertical(p));
        assert_eq!(Edge::vertical(p).orientation(), Orientation::Vertical);
    }

    #[test]
    fn non_neighbours_are_rejected() {
        let p = LatticePoint::new(0, 0);
        assert!(Edge::new(p, LatticePoint::new(1, 1)).is_err());
        assert!(Edge::new(p, p).is_err());
    }

    #[test]
    fn congruence() {
        assert!(LatticePoint::new(-3, 5).congruent(LatticePoint::new(1, 1), 4));
        assert!(!LatticePoint::new(-3, 5).congruent(LatticePoint::new(1, 2), 4));
    }
}

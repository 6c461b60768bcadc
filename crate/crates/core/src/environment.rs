//! Lazily evaluated conductance field `mu^n_e` on the infinite lattice.
//!
//! Level `n` places, inside every tile of the period-`a_n` tiling shifted by
//! `O_n`, four reflected copies of an I-shaped obstacle: a vertical bar of
//! `20 b_n` high-conductance edges (`K_n`) capped by two rows of `2 b_n + 1`
//! low-conductance vertical "gate" edges (`eta_n`). The other three copies are
//! the images under `R1: (x, y) -> (y, x)`, `R2: (x, y) -> (a - y, a - x)` and
//! `R1 R2`. Nothing is materialised: every query reduces the edge into the
//! tile frame and tests membership in the four images directly.

use std::collections::HashMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{Direction, Edge, LatticePoint};
use crate::rng::RngStream;
use crate::schedule::{ParameterSchedule, ScheduleError, Violation};

/// Largest tile period `enumerate_fundamental` will materialise.
pub const MAX_ENUMERATED_PERIOD: u64 = 4096;

/// Stream index reserved for offset sampling.
const OFFSET_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("schedule violates {} condition(s): {}", .0.len(), .0.iter().map(|v| format!("level {} {}", v.level, v.condition)).collect::<Vec<_>>().join(", "))]
    InvalidSchedule(Vec<Violation>),
    #[error("offsets inconsistent with schedule: {0}")]
    Offsets(String),
    #[error("level {level} exceeds the environment's {max} levels")]
    LevelOutOfRange { level: usize, max: usize },
    #[error("K_{level} is not calibrated but a bar edge at that level was queried")]
    MissingCalibration { level: usize },
    #[error("a_{level} = {period} exceeds the enumeration limit {limit}")]
    TooLarge {
        level: usize,
        period: u64,
        limit: u64,
    },
    #[error("obstacle images overlap at level {level}: {edge}")]
    Overlap { level: usize, edge: Edge },
}

/// Tiling offsets `O_1..O_N`, stored at index `n - 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffsetSequence(Vec<LatticePoint>);

impl OffsetSequence {
    pub fn new(points: Vec<LatticePoint>, schedule: &ParameterSchedule) -> Result<Self, EnvError> {
        if points.len() != schedule.levels() {
            return Err(EnvError::Offsets(format!(
                "{} offsets for {} levels",
                points.len(),
                schedule.levels()
            )));
        }
        for (i, &o) in points.iter().enumerate() {
            let n = i + 1;
            let a = schedule.a(n) as i64;
            if !(0..a).contains(&o.x) || !(0..a).contains(&o.y) {
                return Err(EnvError::Offsets(format!(
                    "O_{n} = {o} outside [0, {}]^2",
                    a - 1
                )));
            }
            if n >= 2 && !o.congruent(points[i - 1], schedule.a(n - 1) as i64) {
                return Err(EnvError::Offsets(format!(
                    "O_{n} - O_{} = {} is not in a_{}Z^2",
                    n - 1,
                    o - points[i - 1],
                    n - 1
                )));
            }
        }
        Ok(Self(points))
    }

    pub fn zeros(schedule: &ParameterSchedule) -> Self {
        Self(vec![LatticePoint::ORIGIN; schedule.levels()])
    }

    pub fn get(&self, n: usize) -> LatticePoint {
        self.0[n - 1]
    }

    pub fn points(&self) -> &[LatticePoint] {
        &self.0
    }
}

/// Draws `O_1` uniformly from `[0, a_1 - 1]^2` and each later `O_n` uniformly
/// from the points of `[0, a_n - 1]^2` congruent to `O_{n-1}` mod `a_{n-1}`.
pub fn sample_offsets(schedule: &ParameterSchedule, seed: u64) -> OffsetSequence {
    let mut rng = RngStream::new(seed, OFFSET_STREAM).rng();
    let mut points = Vec::with_capacity(schedule.levels());
    let mut prev = LatticePoint::ORIGIN;
    for n in 1..=schedule.levels() {
        let spacing = schedule.a(n - 1);
        let choices = schedule.a(n) / spacing;
        let zx = rng.random_range(0..choices) as i64;
        let zy = rng.random_range(0..choices) as i64;
        let o = LatticePoint::new(prev.x + zx * spacing as i64, prev.y + zy * spacing as i64);
        points.push(o);
        prev = o;
    }
    OffsetSequence(points)
}

/// Value class of `nu^{n,0}_e`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeClass {
    /// `eta_n`
    Gate,
    /// `K_n`
    Bar,
    /// `1`
    Unit,
}

/// Position of a site relative to the level-`n` tile centres.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    /// Sup-distance at most `2 beta_n` from a centre.
    Inner,
    /// Sup-distance greater than `4 beta_n` from every centre.
    Outer,
    Neither,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionInfo {
    pub region: Region,
    pub in_obstacle: bool,
    /// Sup-distance to the nearest level-`n` tile centre.
    pub center_distance: i64,
}

/// Level geometry in the tile frame `[0, a]^2`.
#[derive(Clone, Copy, Debug)]
struct Tile {
    a: i64,
    half: i64,
    b: i64,
    beta: i64,
    /// Obstacle points all lie within this sup-distance of the centre.
    reach: i64,
}

impl Tile {
    fn new(schedule: &ParameterSchedule, n: usize) -> Self {
        let (a, b, beta) = (
            schedule.a(n) as i64,
            schedule.b(n) as i64,
            schedule.beta(n) as i64,
        );
        Tile {
            a,
            half: a / 2,
            b,
            beta,
            reach: (beta + b).max(10 * b + 1),
        }
    }

    fn r1(&self, p: LatticePoint) -> LatticePoint {
        LatticePoint::new(p.y, p.x)
    }

    fn r2(&self, p: LatticePoint) -> LatticePoint {
        LatticePoint::new(self.a - p.y, self.a - p.x)
    }

    fn images(&self, p: LatticePoint) -> [LatticePoint; 4] {
        [p, self.r1(p), self.r2(p), self.r1(self.r2(p))]
    }

    fn reduce(&self, p: LatticePoint) -> LatticePoint {
        LatticePoint::new(p.x.rem_euclid(self.a), p.y.rem_euclid(self.a))
    }

    fn center_distance(&self, p: LatticePoint) -> i64 {
        (p.x - self.half).abs().max((p.y - self.half).abs())
    }

    fn bar_x(&self) -> i64 {
        self.half - self.beta
    }

    /// Lower endpoint `lo` of a vertical edge of `E(D^00)`.
    fn is_bar_base(&self, lo: LatticePoint) -> bool {
        lo.x == self.bar_x() && lo.y >= self.half - 10 * self.b && lo.y < self.half + 10 * self.b
    }

    /// Lower endpoint `lo` of a vertical edge of `E_v(D^01)`.
    fn is_gate_base(&self, lo: LatticePoint) -> bool {
        (lo.x - self.bar_x()).abs() <= self.b
            && (lo.y == self.half + 10 * self.b || lo.y == self.half - 10 * self.b - 1)
    }

    fn in_base_obstacle(&self, p: LatticePoint) -> bool {
        let on_bar = p.x == self.bar_x() && (p.y - self.half).abs() <= 10 * self.b;
        let dy = p.y - self.half;
        let on_caps = (p.x - self.bar_x()).abs() <= self.b
            && (dy == 10 * self.b
                || dy == 10 * self.b + 1
                || dy == -10 * self.b
                || dy == -10 * self.b - 1);
        on_bar || on_caps
    }

    /// Classifies the edge `{p, p + d}` with `p` already reduced into `[0, a)^2`.
    fn classify(&self, p: LatticePoint, d: (i64, i64)) -> EdgeClass {
        let q = LatticePoint::new(p.x + d.0, p.y + d.1);
        if self.center_distance(p) > self.reach || self.center_distance(q) > self.reach {
            return EdgeClass::Unit;
        }
        let pi = self.images(p);
        let qi = self.images(q);
        let vertical_lows = pi
            .iter()
            .zip(&qi)
            .filter(|&(s, t)| s.x == t.x)
            .map(|(&s, &t)| if s.y < t.y { s } else { t });
        let mut bar = false;
        for lo in vertical_lows {
            if self.is_gate_base(lo) {
                return EdgeClass::Gate;
            }
            bar |= self.is_bar_base(lo);
        }
        if bar {
            EdgeClass::Bar
        } else {
            EdgeClass::Unit
        }
    }
}

/// `nu^{n,0}_e` class of `e` in the untranslated level-`n` pattern.
pub fn nu0_classify(schedule: &ParameterSchedule, n: usize, e: Edge) -> EdgeClass {
    let tile = Tile::new(schedule, n);
    let d = e.v() - e.u();
    tile.classify(tile.reduce(e.u()), (d.x, d.y))
}

/// Explicit gate and bar edge lists of one tile, in the tile frame.
#[derive(Clone, Debug, Default)]
pub struct ObstaclePattern {
    pub gate: Vec<Edge>,
    pub bar: Vec<Edge>,
}

/// Builds the four obstacle images edge by edge. Fails if any two images share
/// an edge.
pub fn obstacle_pattern(
    schedule: &ParameterSchedule,
    n: usize,
) -> Result<ObstaclePattern, EnvError> {
    let t = Tile::new(schedule, n);
    let mut base_gate = Vec::new();
    for x in (t.bar_x() - t.b)..=(t.bar_x() + t.b) {
        base_gate.push(Edge::vertical(LatticePoint::new(x, t.half + 10 * t.b)));
        base_gate.push(Edge::vertical(LatticePoint::new(x, t.half - 10 * t.b - 1)));
    }
    let base_bar: Vec<Edge> = ((t.half - 10 * t.b)..(t.half + 10 * t.b))
        .map(|y| Edge::vertical(LatticePoint::new(t.bar_x(), y)))
        .collect();
    let maps: [&dyn Fn(LatticePoint) -> LatticePoint; 4] =
        [&|p| p, &|p| t.r1(p), &|p| t.r2(p), &|p| t.r1(t.r2(p))];
    let mut seen: HashMap<Edge, EdgeClass> = HashMap::new();
    let mut pattern = ObstaclePattern::default();
    for (class, base) in [(EdgeClass::Gate, &base_gate), (EdgeClass::Bar, &base_bar)] {
        for map in maps {
            for e in base {
                let image = e.map(map);
                if seen.insert(image, class).is_some() {
                    return Err(EnvError::Overlap {
                        level: n,
                        edge: image,
                    });
                }
                match class {
                    EdgeClass::Gate => pattern.gate.push(image),
                    _ => pattern.bar.push(image),
                }
            }
        }
    }
    Ok(pattern)
}

/// One materialised edge of the fundamental tile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileEdge {
    pub edge: Edge,
    /// Level-`n` class of the edge.
    pub class: EdgeClass,
    pub conductance: f64,
}

/// Every edge of `E(O_n + [0, a_n]^2)` with its conductance `mu^n`.
#[derive(Clone, Debug)]
pub struct FundamentalTile {
    pub level: usize,
    pub origin: LatticePoint,
    pub side: i64,
    pub edges: Vec<TileEdge>,
}

impl FundamentalTile {
    pub fn count(&self, class: EdgeClass) -> usize {
        self.edges.iter().filter(|e| e.class == class).count()
    }

    /// Writes `x1,y1,x2,y2,conductance` rows with a header.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x1", "y1", "x2", "y2", "conductance"])?;
        for te in &self.edges {
            let (u, v) = (te.edge.u(), te.edge.v());
            w.write_record(&[
                u.x.to_string(),
                u.y.to_string(),
                v.x.to_string(),
                v.y.to_string(),
                te.conductance.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The conductance field `mu^n` for `n <= N`, determined by a schedule and
/// its offsets. Immutable; share it freely across threads.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Environment {
    schedule: ParameterSchedule,
    offsets: OffsetSequence,
}

impl Environment {
    pub fn new(schedule: ParameterSchedule, offsets: OffsetSequence) -> Result<Self, EnvError> {
        let report = schedule.validate()?;
        if !report.is_valid() {
            return Err(EnvError::InvalidSchedule(report.violations));
        }
        let offsets = OffsetSequence::new(offsets.0, &schedule)?;
        Ok(Self { schedule, offsets })
    }

    /// Environment with offsets drawn from `seed`.
    pub fn sample(schedule: ParameterSchedule, seed: u64) -> Result<Self, EnvError> {
        let offsets = sample_offsets(&schedule, seed);
        Self::new(schedule, offsets)
    }

    pub fn schedule(&self) -> &ParameterSchedule {
        &self.schedule
    }

    pub fn offsets(&self) -> &OffsetSequence {
        &self.offsets
    }

    /// Highest level `N`.
    pub fn level(&self) -> usize {
        self.schedule.levels()
    }

    pub fn offset(&self, n: usize) -> LatticePoint {
        self.offsets.get(n)
    }

    /// Same offsets, different `eta`/`K` values.
    pub fn with_schedule(&self, schedule: ParameterSchedule) -> Result<Self, EnvError> {
        Self::new(schedule, self.offsets.clone())
    }

    pub fn check_level(&self, n: usize) -> Result<(), EnvError> {
        if n > self.level() {
            return Err(EnvError::LevelOutOfRange {
                level: n,
                max: self.level(),
            });
        }
        Ok(())
    }

    /// Class of `e` under the translated level-`n` pattern `nu^n`.
    pub fn classify(&self, n: usize, e: Edge) -> EdgeClass {
        let tile = Tile::new(&self.schedule, n);
        let d = e.v() - e.u();
        tile.classify(tile.reduce(e.u() - self.offset(n)), (d.x, d.y))
    }

    fn level_value(&self, k: usize, class: EdgeClass) -> Result<Option<f64>, EnvError> {
        Ok(match class {
            EdgeClass::Unit => None,
            EdgeClass::Gate => Some(self.schedule.eta(k)),
            EdgeClass::Bar => Some(
                self.schedule
                    .k(k)
                    .ok_or(EnvError::MissingCalibration { level: k })?,
            ),
        })
    }

    /// `mu^n_e`: the first level `k = n, n-1, ..., 1` whose pattern is not
    /// unit on `e` decides; `mu^0 = 1`.
    pub fn conductance(&self, e: Edge, n: usize) -> Result<f64, EnvError> {
        self.check_level(n)?;
        for k in (1..=n).rev() {
            if let Some(v) = self.level_value(k, self.classify(k, e))? {
                return Ok(v);
            }
        }
        Ok(1.0)
    }

    /// Conductances of the four edges at `x`, in [`Direction::ALL`] order.
    pub fn site_conductances(&self, x: LatticePoint, n: usize) -> Result<[f64; 4], EnvError> {
        let mut out = [1.0; 4];
        for (slot, dir) in out.iter_mut().zip(Direction::ALL) {
            *slot = self.conductance(Edge::from_step(x, dir), n)?;
        }
        Ok(out)
    }

    /// Sup-distance from `x` to the nearest centre `u_n + O_n + a_n Z^2`.
    pub fn center_distance(&self, n: usize, x: LatticePoint) -> i64 {
        let tile = Tile::new(&self.schedule, n);
        let fold = |c: i64| (c + tile.half).rem_euclid(tile.a) - tile.half;
        let rel = x - self.offset(n) - LatticePoint::new(tile.half, tile.half);
        fold(rel.x).abs().max(fold(rel.y).abs())
    }

    /// Membership of `x` in the level-`n` obstacle set `D_n`.
    pub fn in_obstacle(&self, n: usize, x: LatticePoint) -> bool {
        let tile = Tile::new(&self.schedule, n);
        let p = tile.reduce(x - self.offset(n));
        if tile.center_distance(p) > tile.reach {
            return false;
        }
        tile.images(p).iter().any(|&q| tile.in_base_obstacle(q))
    }

    pub fn region(&self, n: usize, x: LatticePoint) -> RegionInfo {
        let beta = self.schedule.beta(n) as i64;
        let d = self.center_distance(n, x);
        let region = if d <= 2 * beta {
            Region::Inner
        } else if d > 4 * beta {
            Region::Outer
        } else {
            Region::Neither
        };
        RegionInfo {
            region,
            in_obstacle: self.in_obstacle(n, x),
            center_distance: d,
        }
    }

    /// The representative `Pi_n(x)` of `x + a_n Z^2` in
    /// `[-a_n/2, a_n/2 - 1]^2 + O_n`.
    pub fn fold_to_fundamental(&self, n: usize, x: LatticePoint) -> LatticePoint {
        let a = self.schedule.a(n) as i64;
        let half = a / 2;
        let o = self.offset(n);
        let fold = |c: i64| (c + half).rem_euclid(a) - half;
        let rel = x - o;
        LatticePoint::new(fold(rel.x), fold(rel.y)) + o
    }

    /// Materialises every edge of `O_n + [0, a_n]^2`. The obstacle sets are
    /// built explicitly here ([`obstacle_pattern`]) rather than through the
    /// membership tests used by [`Environment::conductance`], so the two can
    /// be cross-checked.
    pub fn enumerate_fundamental(&self, n: usize) -> Result<FundamentalTile, EnvError> {
        self.check_level(n)?;
        if n == 0 {
            return Err(EnvError::LevelOutOfRange {
                level: 0,
                max: self.level(),
            });
        }
        for k in 1..=n {
            let period = self.schedule.a(k);
            if period > MAX_ENUMERATED_PERIOD {
                return Err(EnvError::TooLarge {
                    level: k,
                    period,
                    limit: MAX_ENUMERATED_PERIOD,
                });
            }
        }
        let mut lookups = Vec::with_capacity(n);
        for k in 1..=n {
            let pattern = obstacle_pattern(&self.schedule, k)?;
            let map: HashMap<Edge, EdgeClass> = pattern
                .gate
                .iter()
                .map(|&e| (e, EdgeClass::Gate))
                .chain(pattern.bar.iter().map(|&e| (e, EdgeClass::Bar)))
                .collect();
            lookups.push(map);
        }
        let side = self.schedule.a(n) as i64;
        let origin = self.offset(n);
        let lookup = |k: usize, e: Edge| -> EdgeClass {
            let a = self.schedule.a(k) as i64;
            let rel = e.shifted(LatticePoint::new(0, 0) - self.offset(k));
            let lo = LatticePoint::new(rel.u().x.rem_euclid(a), rel.u().y.rem_euclid(a));
            let key = rel.shifted(lo - rel.u());
            *lookups[k - 1].get(&key).unwrap_or(&EdgeClass::Unit)
        };
        let mut edges = Vec::with_capacity(2 * (side as usize) * (side as usize + 1));
        for dy in 0..=side {
            for dx in 0..=side {
                let p = origin + LatticePoint::new(dx, dy);
                let mut candidates = Vec::with_capacity(2);
                if dx < side {
                    candidates.push(Edge::horizontal(p));
                }
                if dy < side {
                    candidates.push(Edge::vertical(p));
                }
                for edge in candidates {
                    let class = lookup(n, edge);
                    let mut conductance = 1.0;
                    for k in (1..=n).rev() {
                        if let Some(v) = self.level_value(k, lookup(k, edge))? {
                            conductance = v;
                            break;
                        }
                    }
                    edges.push(TileEdge {
                        edge,
                        class,
                        conductance,
                    });
                }
            }
        }
        Ok(FundamentalTile {
            level: n,
            origin,
            side,
            edges,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk1() -> Environment {
        let s = ParameterSchedule::desk(1).unwrap().with_k(1, 7.5);
        Environment::new(s.clone(), OffsetSequence::zeros(&s)).unwrap()
    }

    fn v(x: i64, y: i64) -> Edge {
        Edge::vertical(LatticePoint::new(x, y))
    }

    #[test]
    fn hand_picked_edges() {
        let s = ParameterSchedule::desk(1).unwrap();
        assert_eq!(nu0_classify(&s, 1, v(132, 176)), EdgeClass::Bar);
        assert_eq!(nu0_classify(&s, 1, v(128, 216)), EdgeClass::Gate);
        assert_eq!(nu0_classify(&s, 1, v(128, 135)), EdgeClass::Gate);
        assert_eq!(nu0_classify(&s, 1, v(127, 216)), EdgeClass::Unit);
        // the horizontal cap edges are not gates
        assert_eq!(
            nu0_classify(&s, 1, Edge::horizontal(LatticePoint::new(128, 216))),
            EdgeClass::Unit
        );
        // R1 image of the bar is horizontal at y = 132
        assert_eq!(
            nu0_classify(&s, 1, Edge::horizontal(LatticePoint::new(176, 132))),
            EdgeClass::Bar
        );
        // R2 image: x -> a - y, the bar lands at y = 352 - 132 = 220
        assert_eq!(
            nu0_classify(&s, 1, Edge::horizontal(LatticePoint::new(176, 220))),
            EdgeClass::Bar
        );
        // periodic copy
        assert_eq!(nu0_classify(&s, 1, v(132 - 352, 176 + 704)), EdgeClass::Bar);
    }

    #[test]
    fn conductance_levels() {
        let env = desk1();
        assert_eq!(env.conductance(v(132, 176), 0).unwrap(), 1.0);
        assert_eq!(env.conductance(v(132, 176), 1).unwrap(), 7.5);
        assert_eq!(env.conductance(v(128, 216), 1).unwrap(), 0.0625);
        assert_eq!(env.conductance(v(5, 5), 1).unwrap(), 1.0);
        assert!(matches!(
            env.conductance(v(5, 5), 2),
            Err(EnvError::LevelOutOfRange { .. })
        ));
    }

    #[test]
    fn missing_k_is_reported_only_on_bars() {
        let s = ParameterSchedule::desk(1).unwrap();
        let env = Environment::new(s.clone(), OffsetSequence::zeros(&s)).unwrap();
        assert_eq!(env.conductance(v(128, 216), 1).unwrap(), 0.0625);
        assert!(matches!(
            env.conductance(v(132, 176), 1),
            Err(EnvError::MissingCalibration { level: 1 })
        ));
    }

    #[test]
    fn level_two_unit_edge_on_level_one_gate() {
        let s = ParameterSchedule::desk(2)
            .unwrap()
            .with_k(1, 3.0)
            .with_k(2, 9.0);
        let offsets =
            OffsetSequence::new(vec![LatticePoint::new(0, 0), LatticePoint::new(352, 0)], &s)
                .unwrap();
        let env = Environment::new(s.clone(), offsets).unwrap();
        // level-1 gate in the tile at the origin; far from level-2 obstacles
        let e = v(128, 216);
        assert_eq!(env.classify(2, e), EdgeClass::Unit);
        assert_eq!(env.conductance(e, 2).unwrap(), s.eta(1));
    }

    #[test]
    fn offsets_sampling() {
        let s = ParameterSchedule::new(
            crate::schedule::Mode::Desk,
            vec![1, 4, 8],
            vec![2, 4],
            vec![2, 8],
        )
        .unwrap();
        let a = sample_offsets(&s, 11);
        assert_eq!(a, sample_offsets(&s, 11));
        let o = OffsetSequence::new(vec![LatticePoint::new(1, 2), LatticePoint::new(5, 6)], &s);
        assert!(o.is_ok());
        let bad = OffsetSequence::new(vec![LatticePoint::new(1, 2), LatticePoint::new(4, 6)], &s);
        assert!(bad.is_err());
    }

    #[test]
    fn regions() {
        let env = desk1();
        let center = LatticePoint::new(176, 176);
        assert_eq!(env.region(1, center).region, Region::Inner);
        assert!(env.region(1, LatticePoint::new(132, 176)).in_obstacle);
        assert!(!env.region(1, LatticePoint::new(133, 176)).in_obstacle);
        let s = ParameterSchedule::desk_with(1, crate::schedule::DeskRatios::EXCURSION).unwrap();
        let env = Environment::new(s.clone(), OffsetSequence::zeros(&s)).unwrap();
        let beta = s.beta(1) as i64;
        let c = LatticePoint::new(132, 132);
        assert_eq!(
            env.region(1, c + LatticePoint::new(0, 5 * beta - 264))
                .region,
            Region::Outer
        );
        assert_eq!(
            env.region(1, c + LatticePoint::new(3 * beta, 0)).region,
            Region::Neither
        );
        assert_eq!(
            env.region(1, c + LatticePoint::new(2 * beta, -2 * beta))
                .region,
            Region::Inner
        );
    }

    #[test]
    fn folding() {
        let s = ParameterSchedule::desk(1).unwrap();
        let o = LatticePoint::new(10, 20);
        let env = Environment::new(s.clone(), OffsetSequence::new(vec![o], &s).unwrap()).unwrap();
        assert_eq!(env.fold_to_fundamental(1, o + LatticePoint::new(704, 0)), o);
        assert_eq!(
            env.fold_to_fundamental(1, o + LatticePoint::new(176, 0)),
            o + LatticePoint::new(-176, 0)
        );
        assert_eq!(
            env.fold_to_fundamental(1, o + LatticePoint::new(175, -176)),
            o + LatticePoint::new(175, -176)
        );
    }

    #[test]
    fn enumeration_counts_and_agreement() {
        let env = desk1();
        let tile = env.enumerate_fundamental(1).unwrap();
        assert_eq!(tile.count(EdgeClass::Bar), 320);
        assert_eq!(tile.count(EdgeClass::Gate), 72);
        assert_eq!(tile.edges.len(), 2 * 352 * 353);
        for te in &tile.edges {
            assert_eq!(
                env.conductance(te.edge, 1).unwrap(),
                te.conductance,
                "{}",
                te.edge
            );
        }
    }

    #[test]
    fn enumeration_size_guard() {
        let s = ParameterSchedule::desk(2).unwrap();
        let env = Environment::new(s.clone(), OffsetSequence::zeros(&s)).unwrap();
        assert!(matches!(
            env.enumerate_fundamental(2),
            Err(EnvError::TooLarge { .. })
        ));
    }

    #[test]
    fn csv_export() {
        let tile = desk1().enumerate_fundamental(1).unwrap();
        let mut buf = Vec::new();
        tile.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x1,y1,x2,y2,conductance\n"));
        assert_eq!(text.lines().count(), tile.edges.len() + 1);
    }
}

//! Exact simulation of the variable-speed random walk.
//!
//! At a site `x` the walk waits an exponential time of rate
//! `mu_x = sum_y mu_xy` and then jumps to neighbour `y` with probability
//! `mu_xy / mu_x`. Every step consumes exactly two uniforms from the walker's
//! stream (holding time, then direction), so two walks driven by the same
//! stream agree for as long as they see the same conductances, and extending
//! the horizon reproduces the shorter path as a prefix.

use std::io::{self, Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{EnvError, Environment};
use crate::lattice::{Direction, LatticePoint};
use crate::rng::RngStream;

#[derive(Debug, Error)]
pub enum WalkError {
    #[error("horizon must be positive and finite, got {0}")]
    Horizon(f64),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("walk left the coordinate guard band after {} jumps", .partial.jump_count())]
    GuardBand { partial: Box<PathRecord> },
    #[error("time {t} outside [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },
    #[error("rescaling needs horizon {needed}, path has {horizon}")]
    InsufficientHorizon { needed: f64, horizon: f64 },
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("walker {index}: {source}")]
    Walker { index: u64, source: Box<WalkError> },
    #[error(
        "ensemble needs at least one walker and one start per walker or a single shared start"
    )]
    Ensemble,
}

/// Jump record of a cadlag lattice path on `[0, horizon]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub start: LatticePoint,
    pub jump_times: Vec<f64>,
    /// Position after each jump.
    pub positions: Vec<LatticePoint>,
    pub horizon: f64,
}

impl PathRecord {
    pub fn constant(start: LatticePoint, horizon: f64) -> Self {
        Self {
            start,
            jump_times: Vec::new(),
            positions: Vec::new(),
            horizon,
        }
    }

    /// Builds and validates a path.
    pub fn new(
        start: LatticePoint,
        jump_times: Vec<f64>,
        positions: Vec<LatticePoint>,
        horizon: f64,
    ) -> Result<Self, WalkError> {
        let p = Self {
            start,
            jump_times,
            positions,
            horizon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn jump_count(&self) -> usize {
        self.jump_times.len()
    }

    pub fn validate(&self) -> Result<(), WalkError> {
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(WalkError::InvalidPath(format!("horizon {}", self.horizon)));
        }
        if self.jump_times.len() != self.positions.len() {
            return Err(WalkError::InvalidPath(
                "times and positions differ in length".into(),
            ));
        }
        let mut prev_t = 0.0;
        let mut prev_x = self.start;
        for (i, (&t, &x)) in self.jump_times.iter().zip(&self.positions).enumerate() {
            if t <= prev_t || t > self.horizon {
                return Err(WalkError::InvalidPath(format!("jump {i} at time {t}")));
            }
            let d = x - prev_x;
            if d.x.abs() + d.y.abs() != 1 {
                return Err(WalkError::InvalidPath(format!(
                    "jump {i} from {prev_x} to {x}"
                )));
            }
            prev_t = t;
            prev_x = x;
        }
        Ok(())
    }

    /// Number of jumps at times `<= t`.
    pub fn jumps_until(&self, t: f64) -> usize {
        self.jump_times.partition_point(|&s| s <= t)
    }

    /// Position after `k` jumps.
    pub fn position_after(&self, k: usize) -> LatticePoint {
        if k == 0 {
            self.start
        } else {
            self.positions[k - 1]
        }
    }

    pub fn position_at(&self, t: f64) -> Result<LatticePoint, WalkError> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(WalkError::OutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        Ok(self.position_after(self.jumps_until(t)))
    }

    pub fn final_position(&self) -> LatticePoint {
        self.position_after(self.jump_count())
    }

    /// The path restricted to `[0, horizon]`.
    pub fn truncated(&self, horizon: f64) -> Self {
        let k = self.jumps_until(horizon);
        Self {
            start: self.start,
            jump_times: self.jump_times[..k].to_vec(),
            positions: self.positions[..k].to_vec(),
            horizon,
        }
    }

    /// `t -> X_{a^2 t} / a` sampled on `grid`.
    pub fn rescale(&self, a: f64, grid: &[f64]) -> Result<Vec<[f64; 2]>, WalkError> {
        let tmax = grid.iter().cloned().fold(0.0, f64::max);
        let needed = a * a * tmax;
        if needed > self.horizon {
            return Err(WalkError::InsufficientHorizon {
                needed,
                horizon: self.horizon,
            });
        }
        grid.iter()
            .map(|&t| {
                let p = self.position_at(a * a * t)?;
                Ok([p.x as f64 / a, p.y as f64 / a])
            })
            .collect()
    }

    /// Writes `t,x,y` rows: one for the start at `t = 0` and one per jump.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "y"])?;
        w.write_record(&[
            "0".to_string(),
            self.start.x.to_string(),
            self.start.y.to_string(),
        ])?;
        for (t, p) in self.jump_times.iter().zip(&self.positions) {
            w.write_record(&[t.to_string(), p.x.to_string(), p.y.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Nearest lattice point; exact half-integers round toward `+inf`.
pub fn round_to_lattice(v: [f64; 2]) -> LatticePoint {
    LatticePoint::new((v[0] + 0.5).floor() as i64, (v[1] + 0.5).floor() as i64)
}

pub fn simulate(
    env: &Environment,
    n: usize,
    start: LatticePoint,
    horizon: f64,
    stream: RngStream,
) -> Result<PathRecord, WalkError> {
    simulate_with(env, n, start, horizon, &mut stream.rng())
}

/// [`simulate`] with a caller-supplied generator.
pub fn simulate_with<R: Rng>(
    env: &Environment,
    n: usize,
    start: LatticePoint,
    horizon: f64,
    rng: &mut R,
) -> Result<PathRecord, WalkError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(WalkError::Horizon(horizon));
    }
    env.check_level(n)?;
    let mut path = PathRecord::constant(start, horizon);
    let mut x = start;
    let mut t = 0.0;
    loop {
        let mu = env.site_conductances(x, n)?;
        let rate: f64 = mu.iter().sum();
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / rate;
        let v: f64 = rng.random::<f64>() * rate;
        if t > horizon {
            return Ok(path);
        }
        let mut acc = 0.0;
        let mut dir = Direction::ALL[3];
        for (i, d) in Direction::ALL.into_iter().enumerate() {
            acc += mu[i];
            if v < acc {
                dir = d;
                break;
            }
        }
        x = x.step(dir);
        if !x.within_guard() {
            return Err(WalkError::GuardBand {
                partial: Box::new(path),
            });
        }
        path.jump_times.push(t);
        path.positions.push(x);
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

/// Evaluates `f(0..count)` and returns the results in index order.
pub fn map_walkers<T, F>(count: u64, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    match exec {
        Execution::Serial => (0..count).map(f).collect(),
        Execution::Parallel => (0..count).into_par_iter().map(f).collect(),
    }
}

/// Simulates `count` walkers, walker `i` on `RngStream(master_seed, i)`.
/// `starts` holds either one shared start or one start per walker.
pub fn batch_simulate(
    env: &Environment,
    n: usize,
    starts: &[LatticePoint],
    horizon: f64,
    count: u64,
    master_seed: u64,
    exec: Execution,
) -> Result<Vec<PathRecord>, WalkError> {
    if count == 0 || !(starts.len() == 1 || starts.len() as u64 == count) {
        return Err(WalkError::Ensemble);
    }
    let results = map_walkers(count, exec, |i| {
        let start = if starts.len() == 1 {
            starts[0]
        } else {
            starts[i as usize]
        };
        simulate(env, n, start, horizon, RngStream::new(master_seed, i))
    });
    results
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| WalkError::Walker {
                index: i as u64,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Time spent at each site of the torus `(Z / period Z)^2`, indexed
/// `y * period + x` after reducing coordinates. Projecting a walk in an
/// environment of period dividing `period` gives the walk on that torus.
pub fn torus_occupation(path: &PathRecord, period: i64) -> Vec<f64> {
    let side = period as usize;
    let mut occ = vec![0.0; side * side];
    let mut slot = |p: LatticePoint, dt: f64| {
        let i = p.y.rem_euclid(period) as usize * side + p.x.rem_euclid(period) as usize;
        occ[i] += dt;
    };
    let mut prev_t = 0.0;
    let mut prev_x = path.start;
    for (&t, &x) in path.jump_times.iter().zip(&path.positions) {
        slot(prev_x, t - prev_t);
        prev_t = t;
        prev_x = x;
    }
    slot(prev_x, path.horizon - prev_t);
    occ
}

const ENSEMBLE_MAGIC: &[u8; 8] = b"WFENS001";

/// Writes the columnar binary ensemble format described in
/// `docs/formats.md`.
pub fn write_ensemble<W: Write>(paths: &[PathRecord], mut out: W) -> io::Result<()> {
    let total: usize = paths.iter().map(|p| p.jump_count()).sum();
    out.write_all(ENSEMBLE_MAGIC)?;
    out.write_all(&(paths.len() as u64).to_le_bytes())?;
    out.write_all(&(total as u64).to_le_bytes())?;
    let mut offset = 0u64;
    out.write_all(&offset.to_le_bytes())?;
    for p in paths {
        offset += p.jump_count() as u64;
        out.write_all(&offset.to_le_bytes())?;
    }
    for p in paths {
        out.write_all(&p.horizon.to_le_bytes())?;
    }
    for p in paths {
        out.write_all(&p.start.x.to_le_bytes())?;
    }
    for p in paths {
        out.write_all(&p.start.y.to_le_bytes())?;
    }
    for p in paths {
        for t in &p.jump_times {
            out.write_all(&t.to_le_bytes())?;
        }
    }
    for p in paths {
        for x in &p.positions {
            out.write_all(&x.x.to_le_bytes())?;
        }
    }
    for p in paths {
        for x in &p.positions {
            out.write_all(&x.y.to_le_bytes())?;
        }
    }
    out.flush()
}

pub fn read_ensemble<R: Read>(mut input: R) -> io::Result<Vec<PathRecord>> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != ENSEMBLE_MAGIC {
        return Err(bad("not a walkforge ensemble"));
    }
    let mut word = [0u8; 8];
    let mut next = |input: &mut R| -> io::Result<[u8; 8]> {
        input.read_exact(&mut word)?;
        Ok(word)
    };
    let count = u64::from_le_bytes(next(&mut input)?) as usize;
    let total = u64::from_le_bytes(next(&mut input)?) as usize;
    let offsets = (0..=count)
        .map(|_| next(&mut input).map(|w| u64::from_le_bytes(w) as usize))
        .collect::<io::Result<Vec<_>>>()?;
    if offsets.windows(2).any(|w| w[0] > w[1]) || offsets.last() != Some(&total) {
        return Err(bad("inconsistent offsets"));
    }
    let f64s = |k: usize, input: &mut R, next: &mut dyn FnMut(&mut R) -> io::Result<[u8; 8]>| {
        (0..k)
            .map(|_| next(input).map(f64::from_le_bytes))
            .collect::<io::Result<Vec<f64>>>()
    };
    let i64s = |k: usize, input: &mut R, next: &mut dyn FnMut(&mut R) -> io::Result<[u8; 8]>| {
        (0..k)
            .map(|_| next(input).map(i64::from_le_bytes))
            .collect::<io::Result<Vec<i64>>>()
    };
    let horizons = f64s(count, &mut input, &mut next)?;
    let sx = i64s(count, &mut input, &mut next)?;
    let sy = i64s(count, &mut input, &mut next)?;
    let ts = f64s(total, &mut input, &mut next)?;
    let xs = i64s(total, &mut input, &mut next)?;
    let ys = i64s(total, &mut input, &mut next)?;
    Ok((0..count)
        .map(|i| {
            let r = offsets[i]..offsets[i + 1];
            PathRecord {
                start: LatticePoint::new(sx[i], sy[i]),
                jump_times: ts[r.clone()].to_vec(),
                positions: r.map(|j| LatticePoint::new(xs[j], ys[j])).collect(),
                horizon: horizons[i],
            }
        })
        .collect())
}

#![allow(dead_code)]

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use walkforge_core::network::FiniteNetwork;
use walkforge_core::schedule::ParameterSchedule;
use walkforge_core::stats::{brownian_grid_path, osc, skorokhod_estimate, DiscretePath};
use walkforge_core::{Environment, OffsetSequence};

/// Solves `h(x) = c(x) + sum_{y free} (mu_xy / mu_x) h(y)` on the free
/// vertices (`h = 0` on `absorbing`) by eliminating free vertices one at a
/// time.
fn first_step_solve(net: &FiniteNetwork, absorbing: &[usize], c: Vec<f64>) -> Vec<f64> {
    let n = net.vertex_count();
    let mut c = c;
    let mut p = vec![vec![0.0; n]; n];
    // probability of stepping straight into the absorbing set
    let mut q = vec![0.0; n];
    let free: Vec<usize> = (0..n).filter(|x| !absorbing.contains(x)).collect();
    for &x in &free {
        let mu = net.total_weight(x);
        for &(y, w) in net.neighbors(x) {
            if absorbing.contains(&y) {
                q[x] += w / mu;
            } else {
                p[x][y] += w / mu;
            }
        }
    }
    // after eliminating z no row refers to z; the pivot 1 - p[z][z] is
    // formed as the sum of the other exits, which avoids cancellation
    for &z in &free {
        let denom = q[z] + (0..n).filter(|&y| y != z).map(|y| p[z][y]).sum::<f64>();
        p[z][z] = 0.0;
        for y in 0..n {
            p[z][y] /= denom;
        }
        q[z] /= denom;
        c[z] /= denom;
        for &x in &free {
            if x == z || p[x][z] == 0.0 {
                continue;
            }
            let f = p[x][z];
            p[x][z] = 0.0;
            for y in 0..n {
                p[x][y] += f * p[z][y];
            }
            c[x] += f * c[z];
            q[x] += f * q[z];
        }
    }
    (0..n)
        .map(|x| if absorbing.contains(&x) { 0.0 } else { c[x] })
        .collect()
}

/// `E^x T_target` by first-step analysis: `h(x) = 1/mu_x + sum_y (mu_xy/mu_x) h(y)`.
pub fn first_step_hitting_times(net: &FiniteNetwork, target: &[usize]) -> Vec<f64> {
    let c = (0..net.vertex_count())
        .map(|x| 1.0 / net.total_weight(x))
        .collect();
    first_step_solve(net, target, c)
}

/// `P^x(T_A1 < T_A2)` by first-step analysis.
pub fn first_step_hitting_probability(net: &FiniteNetwork, a1: &[usize], a2: &[usize]) -> Vec<f64> {
    let c = (0..net.vertex_count())
        .map(|x| {
            let hit: f64 = net
                .neighbors(x)
                .iter()
                .filter(|(y, _)| a1.contains(y))
                .map(|&(_, w)| w)
                .sum();
            hit / net.total_weight(x)
        })
        .collect();
    let absorbing: Vec<usize> = a1.iter().chain(a2).cloned().collect();
    let mut h = first_step_solve(net, &absorbing, c);
    for &x in a1 {
        h[x] = 1.0;
    }
    h
}

/// Minimum over all monotone index couplings on the merged grid, by explicit
/// enumeration of lattice paths with steps (1,0), (0,1), (1,1).
pub fn brute_force_skorokhod(x: &DiscretePath, y: &DiscretePath) -> f64 {
    let mut grid: Vec<f64> = x.grid().iter().chain(y.grid()).cloned().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let m = grid.len();
    let cost = |i: usize, j: usize| {
        let (a, b) = (x.value_at(grid[i]), y.value_at(grid[j]));
        let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        (grid[i] - grid[j]).abs().max(d)
    };
    fn go(
        i: usize,
        j: usize,
        m: usize,
        acc: f64,
        cost: &dyn Fn(usize, usize) -> f64,
        best: &mut f64,
    ) {
        let acc = acc.max(cost(i, j));
        if acc >= *best {
            return;
        }
        if i == m - 1 && j == m - 1 {
            *best = acc;
            return;
        }
        if i + 1 < m && j + 1 < m {
            go(i + 1, j + 1, m, acc, cost, best);
        }
        if i + 1 < m {
            go(i + 1, j, m, acc, cost, best);
        }
        if j + 1 < m {
            go(i, j + 1, m, acc, cost, best);
        }
    }
    let mut best = f64::INFINITY;
    go(0, 0, m, 0.0, &cost, &mut best);
    best
}

pub type PointPair = ((i64, i64), (i64, i64));

fn ordered(p: (i64, i64), q: (i64, i64)) -> PointPair {
    if p <= q {
        (p, q)
    } else {
        (q, p)
    }
}

/// Gate and bar edges of one tile, written directly from the I-shape
/// coordinates and the three reflections.
pub fn tile_obstacles(a: i64, b: i64, beta: i64) -> (HashSet<PointPair>, HashSet<PointPair>) {
    let c = a / 2;
    let x0 = c - beta;
    let reflections = |p: (i64, i64)| -> [(i64, i64); 4] {
        let r1 = |q: (i64, i64)| (q.1, q.0);
        let r2 = |q: (i64, i64)| (a - q.1, a - q.0);
        [p, r1(p), r2(p), r1(r2(p))]
    };
    let mut gate = HashSet::new();
    let mut bar = HashSet::new();
    for x in (x0 - b)..=(x0 + b) {
        for (y_lo, y_hi) in [(c + 10 * b, c + 10 * b + 1), (c - 10 * b - 1, c - 10 * b)] {
            let (ps, qs) = (reflections((x, y_lo)), reflections((x, y_hi)));
            for k in 0..4 {
                gate.insert(ordered(ps[k], qs[k]));
            }
        }
    }
    for y in (c - 10 * b)..(c + 10 * b) {
        let (ps, qs) = (reflections((x0, y)), reflections((x0, y + 1)));
        for k in 0..4 {
            bar.insert(ordered(ps[k], qs[k]));
        }
    }
    (gate, bar)
}

pub fn desk_env(levels: usize, k: f64) -> Environment {
    let mut s = ParameterSchedule::desk(levels).unwrap();
    for n in 1..=levels {
        s.set_k(n, k);
    }
    Environment::new(s.clone(), OffsetSequence::zeros(&s)).unwrap()
}

pub fn uniform_grid(steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|i| {
            if i == steps {
                1.0
            } else {
                i as f64 / steps as f64
            }
        })
        .collect()
}

pub fn random_path(rng: &mut ChaCha8Rng, grid: &[f64]) -> DiscretePath {
    let mut v = [0.0, 0.0];
    let values = grid
        .iter()
        .map(|_| {
            if rng.random_bool(0.4) {
                v = [
                    v[0] + rng.random_range(-1.0..1.0),
                    v[1] + rng.random_range(-1.0..1.0),
                ];
            }
            v
        })
        .collect();
    DiscretePath::new(grid.to_vec(), values).unwrap()
}

pub fn random_grid(rng: &mut ChaCha8Rng, points: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..points).map(|_| rng.random_range(0.01..0.99)).collect();
    g.push(0.0);
    g.push(1.0);
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

/// Non-decreasing grid map with `sigma(t_i) = t_{pi(i)}`, `pi(i) - i` in
/// `[lo, hi]` grid steps.
pub fn random_time_change(rng: &mut ChaCha8Rng, grid: &[f64], lo: i64, hi: i64) -> Vec<f64> {
    let m = grid.len() as i64;
    let mut prev = 0i64;
    (0..m)
        .map(|i| {
            let want = (i + rng.random_range(lo..=hi)).clamp(0, m - 1);
            let k = want.max(prev).min(i + hi).clamp(0, m - 1);
            prev = k;
            grid[k as usize]
        })
        .collect()
}

/// Largest violation over `count` triples of each of the three metric
/// inequalities.
pub fn metric_bound_violations(count: usize, seed: u64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [f64::NEG_INFINITY; 3];
    for _ in 0..count {
        let steps = rng.random_range(8..=24);
        let grid = uniform_grid(steps);
        let x = random_path(&mut rng, &grid);
        let y = random_path(&mut rng, &grid);
        let k = rng.random_range(0..=3i64);
        let delta = k as f64 / steps as f64 + 1e-12;
        // |sigma(t) - t| <= delta
        let sigma = random_time_change(&mut rng, &grid, -k, k);
        let lhs = skorokhod_estimate(&x.compose(&sigma).unwrap(), &y.compose(&sigma).unwrap());
        let rhs = skorokhod_estimate(&x, &y) + 2.0 * osc(&x, delta).max(osc(&y, delta));
        worst[0] = worst[0].max(lhs - rhs);
        // Z = X + Y
        let z = x.add(&y).unwrap();
        worst[1] = worst[1].max(skorokhod_estimate(&z, &y) - x.sup_norm());
        // t - sigma(t) in [0, delta] on a Brownian path
        let w = brownian_grid_path(steps, rng.random());
        let back = random_time_change(&mut rng, w.grid(), -k, 0);
        worst[2] =
            worst[2].max(skorokhod_estimate(&w.compose(&back).unwrap(), &w) - osc(&w, delta));
    }
    worst
}

/// Largest relative error of `sigma1 + sigma2 = t` and the number of times at
/// which `X1 + X2 - X0 != X`, over all jump times and `random_times` uniform
/// times.
pub fn decomposition_exactness(
    path: &walkforge_core::walk::PathRecord,
    env: &Environment,
    n: usize,
    random_times: usize,
    seed: u64,
) -> (f64, usize) {
    use walkforge_core::decomposition::{compute_stopping_times, split_and_clock};
    let d = compute_stopping_times(path, env, n).unwrap();
    let split = split_and_clock(path, &d).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times: Vec<f64> = path.jump_times.clone();
    times.extend((0..random_times).map(|_| rng.random_range(0.0..=path.horizon)));
    times.push(path.horizon);
    let mut worst = 0.0f64;
    let mut mismatches = 0;
    for t in times {
        let total = split.sigma1.value(t) + split.sigma2.value(t);
        if t > 0.0 {
            worst = worst.max((total - t).abs() / t);
        }
        let x = path.position_at(t).unwrap();
        let sum = split.x1.position_at(t).unwrap() + split.x2.position_at(t).unwrap() - path.start;
        if sum != x {
            mismatches += 1;
        }
    }
    (worst, mismatches)
}

/// EXCURSION-ratio environment with zero offsets.
pub fn excursion_env(levels: usize, k: f64) -> Environment {
    use walkforge_core::schedule::DeskRatios;
    let mut s = ParameterSchedule::desk_with(levels, DeskRatios::EXCURSION).unwrap();
    for n in 1..=levels {
        s.set_k(n, k);
    }
    Environment::new(s.clone(), OffsetSequence::zeros(&s)).unwrap()
}

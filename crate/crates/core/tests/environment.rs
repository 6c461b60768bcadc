mod common;

use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use walkforge_core::environment::{nu0_classify, sample_offsets, EdgeClass, Region};
use walkforge_core::schedule::{DeskRatios, Mode, ParameterSchedule};
use walkforge_core::{Edge, Environment, LatticePoint};

fn small_schedule() -> ParameterSchedule {
    ParameterSchedule::new(Mode::Desk, vec![1, 4, 8], vec![1, 1], vec![1, 1]).unwrap()
}

#[test]
fn first_offset_is_uniform() {
    let s = small_schedule();
    let draws = 100_000u64;
    let mut counts = [0u64; 16];
    for seed in 0..draws {
        let o = sample_offsets(&s, seed).get(1);
        counts[(o.y * 4 + o.x) as usize] += 1;
    }
    let expected = draws as f64 / 16.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let p = 1.0 - ChiSquared::new(15.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 = {chi2}, p = {p}");
}

#[test]
fn second_offset_refines_first() {
    let s = small_schedule();
    let mut counts = std::collections::HashMap::new();
    let mut n = 0u64;
    for seed in 0..40_000u64 {
        let o = sample_offsets(&s, seed);
        let (o1, o2) = (o.get(1), o.get(2));
        assert!((0..8).contains(&o2.x) && (0..8).contains(&o2.y));
        let d = o2 - o1;
        assert!(d.x.rem_euclid(4) == 0 && d.y.rem_euclid(4) == 0);
        if o1 == LatticePoint::new(1, 2) {
            *counts.entry(o2).or_insert(0u64) += 1;
            n += 1;
        }
    }
    let mut keys: Vec<LatticePoint> = counts.keys().cloned().collect();
    keys.sort_by_key(|p| (p.x, p.y));
    let want: Vec<LatticePoint> = [(1, 2), (1, 6), (5, 2), (5, 6)]
        .iter()
        .map(|&(x, y)| LatticePoint::new(x, y))
        .collect();
    assert_eq!(keys, want);
    let expected = n as f64 / 4.0;
    let chi2: f64 = counts
        .values()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    assert!(1.0 - ChiSquared::new(3.0).unwrap().cdf(chi2) > 0.01);
    assert_eq!(sample_offsets(&s, 99), sample_offsets(&s, 99));
}

#[test]
fn level_two_query_sees_level_one_gate() {
    let env = common::desk_env(2, 3.0);
    let gate = Edge::vertical(LatticePoint::new(128, 216));
    assert_eq!(env.classify(2, gate), EdgeClass::Unit);
    assert_eq!(env.conductance(gate, 2).unwrap(), 1.0 / 16.0);
    assert_eq!(env.conductance(gate, 0).unwrap(), 1.0);
}

#[test]
fn independent_obstacle_oracle() {
    for s in [
        ParameterSchedule::desk(1).unwrap(),
        ParameterSchedule::desk_with(1, DeskRatios::EXCURSION).unwrap(),
    ] {
        let (a, b, beta) = (s.a(1) as i64, s.b(1) as i64, s.beta(1) as i64);
        let (gate, bar) = common::tile_obstacles(a, b, beta);
        for y in 0..a {
            for x in 0..a {
                let p = LatticePoint::new(x, y);
                for e in [Edge::horizontal(p), Edge::vertical(p)] {
                    let key = ((e.u().x, e.u().y), (e.v().x, e.v().y));
                    let want = if gate.contains(&key) {
                        EdgeClass::Gate
                    } else if bar.contains(&key) {
                        EdgeClass::Bar
                    } else {
                        EdgeClass::Unit
                    };
                    assert_eq!(nu0_classify(&s, 1, e), want, "{e}");
                }
            }
        }
    }
}

fn env_with_offsets(seed: u64) -> Environment {
    let s = ParameterSchedule::desk(2)
        .unwrap()
        .with_k(1, 3.0)
        .with_k(2, 5.0);
    Environment::sample(s, seed).unwrap()
}

fn arb_edge(range: i64) -> impl Strategy<Value = Edge> {
    (-range..range, -range..range, any::<bool>()).prop_map(|(x, y, h)| {
        if h {
            Edge::horizontal(LatticePoint::new(x, y))
        } else {
            Edge::vertical(LatticePoint::new(x, y))
        }
    })
}

fn reflect(e: Edge, f: impl Fn(LatticePoint) -> LatticePoint) -> Edge {
    Edge::new(f(e.u()), f(e.v())).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn periodicity(seed in 0u64..50, e in arb_edge(1_000_000), zx in -5i64..5, zy in -5i64..5, level in 1usize..=2) {
        let env = env_with_offsets(seed);
        let a = env.schedule().a(level) as i64;
        let shifted = e.shifted(LatticePoint::new(zx * a, zy * a));
        prop_assert_eq!(env.conductance(e, level).unwrap(), env.conductance(shifted, level).unwrap());
    }

    #[test]
    fn reflection_symmetry(x in 0i64..352, y in 0i64..352, h in any::<bool>()) {
        let s = ParameterSchedule::desk(1).unwrap();
        let a = 352;
        let p = LatticePoint::new(x, y);
        let e = if h { Edge::horizontal(p) } else { Edge::vertical(p) };
        let c = nu0_classify(&s, 1, e);
        prop_assert_eq!(nu0_classify(&s, 1, reflect(e, |q| LatticePoint::new(q.y, q.x))), c);
        prop_assert_eq!(nu0_classify(&s, 1, reflect(e, |q| LatticePoint::new(a - q.y, a - q.x))), c);
    }

    #[test]
    fn boundary_band_is_unit(x in 0i64..352, y in 0i64..352, h in any::<bool>()) {
        let s = ParameterSchedule::desk(1).unwrap();
        let (a, q) = (352, 88);
        let p = LatticePoint::new(x, y);
        let e = if h { Edge::horizontal(p) } else { Edge::vertical(p) };
        let near = |p: LatticePoint| p.x.min(a - p.x).min(p.y).min(a - p.y) <= q;
        if near(e.u()) && near(e.v()) {
            prop_assert_eq!(nu0_classify(&s, 1, e), EdgeClass::Unit);
        }
    }

    #[test]
    fn folding(seed in 0u64..50, x in -1_000_000_000i64..1_000_000_000, y in -1_000_000_000i64..1_000_000_000, level in 1usize..=2) {
        let env = env_with_offsets(seed);
        let p = LatticePoint::new(x, y);
        let f = env.fold_to_fundamental(level, p);
        let a = env.schedule().a(level) as i64;
        prop_assert!((p - f).congruent(LatticePoint::ORIGIN, a));
        let rel = f - env.offset(level);
        prop_assert!(rel.x >= -a / 2 && rel.x < a / 2 && rel.y >= -a / 2 && rel.y < a / 2);
        prop_assert_eq!(env.fold_to_fundamental(level, f), f);
    }
}

#[test]
fn regions_at_centres_and_far_away() {
    let s = ParameterSchedule::desk_with(2, DeskRatios::EXCURSION)
        .unwrap()
        .with_k(1, 3.0)
        .with_k(2, 5.0);
    let env = Environment::sample(s, 3).unwrap();
    for n in 1..=2 {
        let half = env.schedule().a(n) as i64 / 2;
        let beta = env.schedule().beta(n) as i64;
        let centre = env.offset(n) + LatticePoint::new(half, half);
        assert_eq!(env.region(n, centre).region, Region::Inner);
        let far = centre + LatticePoint::new(5 * beta, 0);
        let info = env.region(n, far);
        assert_eq!(info.center_distance, 5 * beta);
        assert_eq!(info.region, Region::Outer);
    }
}

#[test]
fn default_ratios_fold_every_point_within_four_beta() {
    // a = 8 beta: the folded distance never exceeds 4 beta, so Gamma^2 is empty
    let env = env_with_offsets(3);
    let beta = env.schedule().beta(1) as i64;
    let centre = env.offset(1) + LatticePoint::new(4 * beta, 4 * beta);
    assert_eq!(
        env.center_distance(1, centre + LatticePoint::new(5 * beta, 0)),
        3 * beta
    );
    assert_eq!(
        env.center_distance(1, centre + LatticePoint::new(4 * beta, 4 * beta)),
        4 * beta
    );
}

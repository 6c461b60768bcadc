mod common;

use proptest::prelude::*;
use walkforge_core::decomposition::*;
use walkforge_core::walk;
use walkforge_core::{LatticePoint, RngStream};

fn path(seed: u64, horizon: f64) -> walk::PathRecord {
    let env = common::excursion_env(1, 2.5);
    // start well outside Gamma^1: the tile centre is (132, 132), beta = 22
    walk::simulate(
        &env,
        1,
        LatticePoint::new(10, 20),
        horizon,
        RngStream::new(seed, 0),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn clocks_add_up_and_components_split(seed in any::<u64>()) {
        let env = common::excursion_env(1, 2.5);
        let p = path(seed, 20_000.0);
        let (err, mismatches) = common::decomposition_exactness(&p, &env, 1, 1000, seed);
        prop_assert!(err <= 1e-12, "{}", err);
        prop_assert_eq!(mismatches, 0);
    }

    #[test]
    fn interval_structure(seed in any::<u64>()) {
        let env = common::excursion_env(1, 2.5);
        let p = path(seed, 20_000.0);
        let d = compute_stopping_times(&p, &env, 1).unwrap();
        let j = d.j_intervals();
        for w in j.windows(2) {
            prop_assert!(w[0].1 <= w[1].0);
        }
        for &(a, b) in &j {
            prop_assert!(a <= b);
        }
        for k in 0..d.s.len() {
            prop_assert!(d.u[k].time <= d.s[k].time);
            if k + 1 < d.u.len() {
                prop_assert!(d.s[k].time <= d.u[k + 1].time);
            }
        }
        // V_k sits in X(T_{k-1}) + a_0 Z^2 with a_0 = 1, so check the level-2 spacing too
        for (k, v) in d.v.iter().enumerate() {
            let t_prev = if k == 0 { 0 } else { d.t[k - 1].index };
            prop_assert!(p.position_after(v.index).congruent(p.position_after(t_prev), env.schedule().a(0) as i64));
            // the walk is at least beta away from the obstacles at V_k
            let dist = env.center_distance(1, p.position_after(v.index));
            prop_assert!(dist > 4 * env.schedule().beta(1) as i64);
        }
    }

    #[test]
    fn inverse_clock(seed in any::<u64>()) {
        let env = common::excursion_env(1, 2.5);
        let p = path(seed, 20_000.0);
        let d = compute_stopping_times(&p, &env, 1).unwrap();
        let split = split_and_clock(&p, &d).unwrap();
        let total = split.sigma1.total();
        let mut prev = 0.0;
        for i in 0..=200 {
            let tau = total * (i as f64 / 200.0);
            let s = split.sigma1.inverse(tau).unwrap();
            prop_assert!(split.sigma1.value(s) >= tau - 1e-9 * total.max(1.0));
            prop_assert!(s >= prev);
            prev = s;
        }
    }

    #[test]
    fn increments_bounded_by_running_sup(seed in any::<u64>()) {
        let env = common::excursion_env(1, 2.5);
        let p = path(seed, 40_000.0);
        let d = compute_stopping_times(&p, &env, 1).unwrap();
        let inc = excursion_increments(&p, &d);
        for (y, &ybar) in inc.y.iter().zip(&inc.ybar) {
            prop_assert!(y.euclidean() <= ybar);
        }
    }
}

#[test]
fn level_two_congruence_at_every_v() {
    let env = common::excursion_env(2, 2.5);
    let a1 = env.schedule().a(1) as i64;
    for seed in 0..5 {
        // a level-1 walk seen at level 2: the V_k congruence uses a_1
        let p = walk::simulate(
            &env,
            1,
            LatticePoint::new(0, 0),
            40_000.0,
            RngStream::new(seed, 0),
        )
        .unwrap();
        let d = compute_stopping_times(&p, &env, 2).unwrap();
        for (k, v) in d.v.iter().enumerate() {
            let t_prev = if k == 0 { 0 } else { d.t[k - 1].index };
            assert!(p
                .position_after(v.index)
                .congruent(p.position_after(t_prev), a1));
        }
    }
}

#[test]
fn coupling_holds_until_higher_obstacle() {
    let env = common::excursion_env(2, 2.5);
    let a2 = env.schedule().a(2) as i64 / 2;
    let beta2 = env.schedule().beta(2) as i64;
    // start next to the level-2 bar
    let start = LatticePoint::new(a2 - beta2 - 3, a2);
    for i in 0..10 {
        let r = coupling_check(&env, 1, start, 200.0, RngStream::new(31, i)).unwrap();
        assert!(r.coincide);
    }
}

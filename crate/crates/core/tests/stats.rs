mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use walkforge_core::stats::*;
use walkforge_core::walk::{self, Execution};
use walkforge_core::LatticePoint;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dp_matches_brute_force(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gx = common::random_grid(&mut rng, 4);
        let gy = common::random_grid(&mut rng, 4);
        let x = common::random_path(&mut rng, &gx);
        let y = common::random_path(&mut rng, &gy);
        let dp = skorokhod_estimate(&x, &y);
        let brute = common::brute_force_skorokhod(&x, &y);
        prop_assert!((dp - brute).abs() < 1e-15, "{} vs {}", dp, brute);
    }

    #[test]
    fn skorokhod_pseudometric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let paths: Vec<DiscretePath> = (0..3).map(|_| {
            let g = common::random_grid(&mut rng, 10);
            common::random_path(&mut rng, &g)
        }).collect();
        let d = |i: usize, j: usize| skorokhod_estimate(&paths[i], &paths[j]);
        prop_assert_eq!(d(0, 0), 0.0);
        prop_assert!(d(0, 1) >= 0.0);
        prop_assert_eq!(d(0, 1), d(1, 0));
        prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-12);
    }

    #[test]
    fn identity_alignment_bound(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = common::random_grid(&mut rng, 12);
        let x = common::random_path(&mut rng, &g);
        let y = common::random_path(&mut rng, &g);
        let sup = g.iter().map(|&t| {
            let (a, b) = (x.value_at(t), y.value_at(t));
            (a[0] - b[0]).hypot(a[1] - b[1])
        }).fold(0.0, f64::max);
        prop_assert!(skorokhod_estimate(&x, &y) <= sup);
    }

    #[test]
    fn osc_is_monotone_in_delta(seed in any::<u64>(), d1 in 0.01f64..1.0, d2 in 0.01f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = common::random_path(&mut rng, &common::uniform_grid(20));
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(osc(&x, lo) <= osc(&x, hi));
    }

    #[test]
    fn gaussian_kernel_symmetric(t in 0.01f64..10.0, x in prop::array::uniform2(-3.0f64..3.0), y in prop::array::uniform2(-3.0f64..3.0)) {
        prop_assert_eq!(gaussian_kernel(t, x, y).unwrap(), gaussian_kernel(t, y, x).unwrap());
    }
}

#[test]
fn metric_bound_surrogates() {
    let worst = common::metric_bound_violations(300, 17);
    for v in worst {
        assert!(v <= 1e-9, "{worst:?}");
    }
}

#[test]
fn skorokhod_constant_paths() {
    for c in [0.0, 0.2, -0.7, 0.999] {
        let g = common::uniform_grid(4);
        let zero = DiscretePath::new(g.clone(), vec![[0.0; 2]; 5]).unwrap();
        let cst = DiscretePath::new(g, vec![[c, 0.0]; 5]).unwrap();
        assert_eq!(skorokhod_estimate(&zero, &cst), f64::abs(c));
        assert_eq!(common::brute_force_skorokhod(&zero, &cst), f64::abs(c));
    }
}

#[test]
fn ks_null_rejection_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let reps = 1000u64;
    let mut rejections = 0;
    for _ in 0..reps {
        let xs: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let r = ks_test(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        if r.statistics[0].p_value.unwrap() < 0.01 {
            rejections += 1;
        }
    }
    // Binomial(1000, 0.01) exceeds 21 with probability below 1e-3
    assert!(rejections <= 21, "{rejections}");
}

#[test]
fn ks_detects_wrong_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let xs: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let r = ks_test(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
    assert!(r.statistics[0].p_value.unwrap() < 1e-3);
    let r = ks_test(&xs, normal_cdf).unwrap();
    assert!(r.statistics[0].p_value.unwrap() > 0.01);
}

#[test]
fn two_sample_null_rejection_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut rejections = 0;
    for _ in 0..500 {
        let a: Vec<f64> = (0..150).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..150).map(|_| StandardNormal.sample(&mut rng)).collect();
        if two_sample_ks(&a, &b).unwrap().statistics[0]
            .p_value
            .unwrap()
            < 0.01
        {
            rejections += 1;
        }
    }
    // Binomial(500, 0.01) exceeds 13 with probability below 1e-3
    assert!(rejections <= 13, "{rejections}");
}

#[test]
fn gaussian_kernel_values() {
    let k = gaussian_kernel(1.0, [0.0, 0.0], [0.0, 0.0]).unwrap();
    assert!((k - 0.1591549430918953).abs() < 1e-15);
    assert!(gaussian_kernel(0.0, [0.0; 2], [0.0; 2]).is_err());
    // midpoint rule over [-12, 12]^2 around x = (0.3, -0.2), t = 0.7
    let h = 0.02;
    let mut total = 0.0;
    for i in 0..1200 {
        for j in 0..1200 {
            let y = [-12.0 + (i as f64 + 0.5) * h, -12.0 + (j as f64 + 0.5) * h];
            total += gaussian_kernel(0.7, [0.3, -0.2], y).unwrap() * h * h;
        }
    }
    assert!((total - 1.0).abs() < 1e-6, "{total}");
}

#[test]
fn homogeneous_fclt_covers_reference() {
    let env = common::desk_env(1, 3.0);
    let a = 8.0;
    let paths = walk::batch_simulate(
        &env,
        0,
        &[LatticePoint::ORIGIN],
        a * a,
        4000,
        21,
        Execution::Parallel,
    )
    .unwrap();
    let opts = FcltOptions {
        reference_diffusivity: Some(2.0),
        lattice_spacing: Some(1.0 / a),
        ..Default::default()
    };
    let rep = fclt_report(&paths, a, &[0.25, 0.5, 1.0], opts).unwrap();
    for t in ["0.25", "0.5", "1"] {
        for c in ["x", "y"] {
            let v = rep.get(&format!("var_{c}(t={t})")).unwrap();
            let [lo, hi] = v.ci.unwrap();
            let reference = 2.0 * t.parse::<f64>().unwrap();
            assert!(lo <= reference && reference <= hi, "{v:?}");
            let m = rep.get(&format!("mean_{c}(t={t})")).unwrap().ci.unwrap();
            assert!(m[0] <= 0.0 && 0.0 <= m[1]);
        }
        let cov = rep.get(&format!("cov_xy(t={t})")).unwrap().ci.unwrap();
        assert!(cov[0] <= 0.0 && 0.0 <= cov[1]);
    }
}

#[test]
fn heat_kernel_axis_symmetry() {
    let env = common::desk_env(1, 3.0);
    let opts = HeatKernelOptions {
        times: vec![0.5],
        points: vec![[1.0, 0.0], [0.0, 1.0]],
        samples: 4000,
        smoothing: None,
        ci_z: 3.0,
    };
    let rep = heat_kernel_check(&env, 0, 8.0, &opts, 4).unwrap();
    let a = rep.get("a2p[t=0.5,y=(1,0)]").unwrap().ci.unwrap();
    let b = rep.get("a2p[t=0.5,y=(0,1)]").unwrap().ci.unwrap();
    assert!(a[0] <= b[1] && b[0] <= a[1], "{a:?} {b:?}");
}

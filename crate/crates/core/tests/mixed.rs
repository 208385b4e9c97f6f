use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use biasrel::mixed::{delta_r2, fit_lmm, profile_loglik, DatasetBuilder, FitOptions, RegressionDataset};
use biasrel::Error;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Crossed design with `q x q` groups, three continuous predictors and one
/// three-level factor. `dup` appends an exact copy of `x0`.
fn dataset(seed: u64, n: usize, q: usize, dup: bool) -> RegressionDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nu: Vec<f64> = (0..q).map(|_| 0.5 * normal(&mut rng)).collect();
    let mu: Vec<f64> = (0..q).map(|_| 0.4 * normal(&mut rng)).collect();
    let mut x = (0..3).map(|_| Vec::with_capacity(n)).collect::<Vec<_>>();
    let (mut y, mut a, mut c, mut g) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let (ai, ci) = (i % q, (i / q) % q);
        let xs = [normal(&mut rng), normal(&mut rng), normal(&mut rng)];
        let lvl = rng.gen_range(0..3usize);
        y.push(Some(1.0 + 0.8 * xs[0] - 0.4 * xs[1] + 0.3 * lvl as f64 + nu[ai] + mu[ci] + normal(&mut rng)));
        for (col, v) in x.iter_mut().zip(xs) {
            col.push(Some(v));
        }
        a.push(format!("a{ai}"));
        c.push(format!("c{ci}"));
        g.push(Some(["lo", "mid", "hi"][lvl].to_string()));
    }
    let copy = x[0].clone();
    let mut b = DatasetBuilder::new(y, a, c);
    for (j, col) in x.into_iter().enumerate() {
        b = b.continuous(&format!("x{j}"), col).unwrap();
    }
    if dup {
        b = b.continuous("x0_copy", copy).unwrap();
    }
    b.categorical("g", g).unwrap().build().unwrap()
}

#[test]
fn row_permutation_leaves_fit_unchanged() {
    let ds = dataset(1, 600, 5, false);
    let mut order: Vec<usize> = (0..ds.n()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let a = fit_lmm(&ds, &FitOptions::default()).unwrap();
    let b = fit_lmm(&ds.select_rows(&order), &FitOptions::default()).unwrap();
    for (x, y) in a.beta.iter().chain(&a.se).zip(b.beta.iter().chain(&b.se)) {
        assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
    }
    for (x, y) in [(a.sigma2_nu, b.sigma2_nu), (a.sigma2_mu, b.sigma2_mu), (a.sigma2_eps, b.sigma2_eps), (a.loglik, b.loglik)] {
        assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{x} vs {y}");
    }
}

#[test]
fn fitted_point_is_a_local_maximum() {
    let ds = dataset(2, 800, 6, false);
    let fit = fit_lmm(&ds, &FitOptions::default()).unwrap();
    let theta = fit.log_theta;
    assert!(theta.iter().all(Option::is_some), "{theta:?}");
    let at = profile_loglik(&ds, theta).unwrap();
    assert!((at - fit.loglik).abs() <= 1e-9 * at.abs());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let moved = theta.map(|t| t.map(|v| v + rng.gen_range(-0.5..0.5)));
        let ll = profile_loglik(&ds, moved).unwrap();
        assert!(ll <= fit.loglik + 1e-7, "{moved:?} gives {ll} > {}", fit.loglik);
    }
}

#[test]
fn variance_components_are_non_negative() {
    for seed in 0..5 {
        let fit = fit_lmm(&dataset(seed, 300, 4, false), &FitOptions::default()).unwrap();
        assert!(fit.sigma2_nu >= 0.0 && fit.sigma2_mu >= 0.0 && fit.sigma2_eps > 0.0);
    }
}

#[test]
fn standard_errors_shrink_with_n() {
    let sizes = [1000, 5000, 20000];
    let median_se: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            let mut se: Vec<f64> = (0..5)
                .map(|seed| {
                    let fit = fit_lmm(&dataset(100 + seed, n, 6, false), &FitOptions::default()).unwrap();
                    fit.coefficient("x0").unwrap().1
                })
                .collect();
            se.sort_by(f64::total_cmp);
            se[2]
        })
        .collect();
    assert!(median_se[0] > median_se[1] && median_se[1] > median_se[2], "{median_se:?}");
}

#[test]
fn duplicate_column_is_reported_or_aliased() {
    let ds = dataset(4, 500, 5, true);
    match fit_lmm(&ds, &FitOptions::default()) {
        Err(Error::Collinear(cols)) => assert_eq!(cols, vec!["x0_copy".to_string()]),
        other => panic!("expected a collinearity error, got {other:?}"),
    }
    let opts = FitOptions {
        alias_collinear: true,
        ..Default::default()
    };
    let fit = fit_lmm(&ds, &opts).unwrap();
    assert_eq!(fit.aliased, vec!["x0_copy".to_string()]);
    let (b, se) = fit.coefficient("x0_copy").unwrap();
    assert_eq!(b, 0.0);
    assert!(se.is_nan());
    // Dropping a duplicate explains nothing that the original did not.
    let d = delta_r2(&ds, "x0_copy", &opts).unwrap();
    assert!(d.delta.abs() <= 1e-9, "{d:?}");
}

#[test]
fn delta_r2_isolates_the_generating_predictor() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 2000;
    let (mut y, mut a, mut c) = (Vec::new(), Vec::new(), Vec::new());
    let mut x = vec![Vec::new(); 3];
    for i in 0..n {
        let xs = [normal(&mut rng), normal(&mut rng), normal(&mut rng)];
        y.push(Some(2.0 * xs[0] + 0.5 * normal(&mut rng)));
        for (col, v) in x.iter_mut().zip(xs) {
            col.push(Some(v));
        }
        a.push(format!("a{}", i % 4));
        c.push(format!("c{}", (i / 4) % 4));
    }
    let mut b = DatasetBuilder::new(y, a, c);
    for (j, col) in x.into_iter().enumerate() {
        b = b.continuous(&format!("x{j}"), col).unwrap();
    }
    let ds = b.build().unwrap();
    let opts = FitOptions::default();
    let full = fit_lmm(&ds, &opts).unwrap();
    let d0 = delta_r2(&ds, "x0", &opts).unwrap();
    assert!(d0.delta > 0.9 * full.r2_fixed, "{d0:?}");
    for other in ["x1", "x2"] {
        let d = delta_r2(&ds, other, &opts).unwrap();
        assert!(d.delta.abs() < 0.01, "{d:?}");
    }
}

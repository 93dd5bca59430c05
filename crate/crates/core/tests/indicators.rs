#![allow(clippy::needless_range_loop)]

mod common;

use pkd_core::datagen::gen_window;
use pkd_core::indicators::{
    grid_search, roc, sma, sma_cross, spearman, IndicatorKind, IndicatorSpec,
};
use proptest::prelude::*;
use rand::Rng;

fn naive_sma(x: &[f64], lag: usize) -> f64 {
    let mut s = 0.0;
    for i in x.len() - lag..x.len() {
        s += x[i];
    }
    s / lag as f64
}

/// Mid-ranks by counting, then the textbook Pearson formula.
fn naive_spearman(a: &[f64], b: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|&x| {
                let below = v.iter().filter(|&&y| y < x).count() as f64;
                let equal = v.iter().filter(|&&y| y == x).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sma_matches_loop(seed in any::<u64>(), lag in 1usize..=50) {
        let w = gen_window(50, &mut common::rng(seed));
        prop_assert!(close(sma(&w, lag).unwrap(), naive_sma(&w, lag), 1e-12));
    }

    #[test]
    fn crossover_is_difference_of_averages(seed in any::<u64>(), fast in 1usize..49, gap in 1usize..49) {
        let slow = (fast + gap).min(50);
        prop_assume!(fast < slow);
        let w = gen_window(50, &mut common::rng(seed));
        let want = naive_sma(&w, fast) - naive_sma(&w, slow);
        prop_assert!(close(sma_cross(&w, fast, slow).unwrap(), want, 1e-12));
    }

    #[test]
    fn roc_matches_ratio(seed in any::<u64>(), lag in 1usize..50) {
        let w = gen_window(50, &mut common::rng(seed));
        let want = w[49] / w[49 - lag] - 1.0;
        prop_assert!(close(roc(&w, lag).unwrap(), want, 1e-12));
    }

    #[test]
    fn spearman_matches_counting_oracle(a in prop::collection::vec(-5i32..5, 3..40), seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = a.iter().map(|_| f64::from(rng.random_range(-3i32..3))).collect();
        let want = naive_spearman(&a, &b);
        match spearman(&a, &b) {
            Ok(got) => prop_assert!((got - want).abs() < 1e-10, "{got} vs {want}"),
            Err(_) => prop_assert!(!want.is_finite()),
        }
    }

    #[test]
    fn spearman_sees_only_order(v in prop::collection::vec(-100.0f64..100.0, 3..50), w in prop::collection::vec(-100.0f64..100.0, 3..50)) {
        let n = v.len().min(w.len());
        let (v, w) = (&v[..n], &w[..n]);
        if let Ok(base) = spearman(v, w) {
            prop_assert!((-1.0..=1.0).contains(&base));
            let warped: Vec<f64> = v.iter().map(|x| (x / 40.0).exp()).collect();
            prop_assert!((spearman(&warped, w).unwrap() - base).abs() < 1e-10);
            let flipped: Vec<f64> = v.iter().map(|x| -x).collect();
            prop_assert!((spearman(&flipped, w).unwrap() + base).abs() < 1e-10);
        }
    }
}

#[test]
fn oracles_agree_on_a_thousand_random_windows() {
    let mut rng = common::rng(11);
    for _ in 0..1000 {
        let w = gen_window(50, &mut rng);
        let lag = rng.random_range(1..=45);
        let slow = rng.random_range(lag + 1..=50);
        assert!(close(sma(&w, lag).unwrap(), naive_sma(&w, lag), 1e-12));
        assert!(close(
            sma_cross(&w, lag, slow).unwrap(),
            naive_sma(&w, lag) - naive_sma(&w, slow),
            1e-12
        ));
        assert!(close(
            roc(&w, lag).unwrap(),
            w[49] / w[49 - lag] - 1.0,
            1e-12
        ));
    }
}

#[test]
fn grid_search_recovers_the_generating_lag() {
    let mut rng = common::rng(5);
    let windows: Vec<_> = (0..400).map(|_| gen_window(50, &mut rng)).collect();
    let lags: Vec<usize> = (1..=9).map(|i| 5 * i).collect();
    for truth in [
        IndicatorSpec::Roc { lag: 20 },
        IndicatorSpec::SmaCross { fast: 10, slow: 35 },
    ] {
        let returns = truth.evaluate_all(&windows).unwrap();
        let r = grid_search(&windows, &returns, &truth.kind().grid(&lags)).unwrap();
        assert_eq!(r.best_spec, truth);
        assert_eq!(r.ic, 1.0);
        let negated: Vec<f64> = returns.iter().map(|v| -v).collect();
        let r = grid_search(&windows, &negated, &truth.kind().grid(&lags)).unwrap();
        assert_eq!(r.best_spec, truth);
        assert_eq!(r.ic, -1.0);
    }
}

#[test]
fn grid_ties_go_to_the_shortest_lags() {
    // a returns series that every ROC lag orders identically: all IC = 1
    let windows: Vec<Vec<f64>> = (1..=30)
        .map(|k| {
            (0..50)
                .map(|i| 100.0 + (k as f64) * i as f64 / 10.0)
                .collect()
        })
        .collect();
    let returns: Vec<f64> = (1..=30).map(f64::from).collect();
    let grid = IndicatorKind::Roc.grid(&[10, 5, 20]);
    let r = grid_search(&windows, &returns, &grid).unwrap();
    assert_eq!(r.best_spec, IndicatorSpec::Roc { lag: 5 });
}

use super::*;
use crate::quantreg::{uniform_grid, Kernel};
use crate::rng;
use crate::simulation::{error_quantile, ErrorDist};
use proptest::prelude::*;

fn gpd_sample(n: usize, seed: u64, r: impl Fn(f64) -> f64) -> PairedSample {
    let mut g = rng::stream(seed, 0);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for _ in 0..n {
        let x = -1.0 + 2.0 * rng::open01(&mut g);
        let e = error_quantile(ErrorDist::Gpd(0.25), rng::open01(&mut g)).unwrap();
        xs.push(x);
        ys.push(r(x) + e);
    }
    PairedSample::new(xs, ys).unwrap()
}

#[test]
fn residual_examples() {
    let s = PairedSample::new(vec![0.0, 1.0, 2.0], vec![1.0, 4.0, 2.0]).unwrap();
    assert_eq!(residuals(&s, |_| 0.0).unwrap(), vec![1.0, 4.0, 2.0]);
    assert_eq!(residuals(&s, |_| 2.0).unwrap(), vec![-1.0, 2.0, 0.0]);
    let exact = PairedSample::new(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 4.0]).unwrap();
    assert_eq!(residuals(&exact, |x| 2.0 * x).unwrap(), vec![0.0; 3]);
    let err = residuals(&s, |x| if x > 0.5 { f64::NAN } else { 0.0 }).unwrap_err();
    assert_eq!(err, Error::Evaluation { index: 1, x: 1.0 });
}

#[test]
fn hill_hand_example() {
    let t = hill(&[8.0, 1.0, 4.0, 2.0], 3).unwrap();
    assert_eq!(t.threshold, 1.0);
    assert!((t.gamma_hat - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    assert!((t.gamma_hat - 1.386294).abs() < 1e-6);
    let l2 = std::f64::consts::LN_2;
    let expected = [3.0 * l2, 2.0 * l2, l2];
    for (a, b) in t.sorted_exceedance_logs.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn hill_on_equal_top_values_is_zero() {
    let t = hill(&[-3.0, 0.5, 2.0, 2.0, 2.0, 2.0], 3).unwrap();
    assert_eq!(t.gamma_hat, 0.0);
    assert_eq!(t.threshold, 2.0);
}

#[test]
fn hill_errors() {
    assert!(matches!(hill(&[1.0, 2.0], 2), Err(Error::Domain(_))));
    assert!(matches!(hill(&[1.0, 2.0], 0), Err(Error::Domain(_))));
    let err = hill(&[-2.0, -1.0, 0.0, 3.0], 2).unwrap_err();
    assert!(matches!(
        err,
        Error::NonPositiveThreshold { k: 2, n: 4, .. }
    ));
    assert!(err.to_string().contains("raise tau_c"));
}

#[test]
fn hill_on_exact_pareto_is_centred_with_asymptotic_spread() {
    // Exact Pareto(γ) via U^{-γ}; k = 100 so the limit sd is γ/√k = 0.05.
    let gamma = 0.5;
    let (n, k, reps) = (5000, 100, 500);
    let est: Vec<f64> = (0..reps)
        .map(|r| {
            let mut g = rng::stream(99, r as u64);
            let e: Vec<f64> = (0..n).map(|_| rng::open01(&mut g).powf(-gamma)).collect();
            hill(&e, k).unwrap().gamma_hat
        })
        .collect();
    let mean = est.iter().sum::<f64>() / reps as f64;
    let sd = (est.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
    assert!((mean - 0.5).abs() <= 0.05, "mean {mean}");
    assert!((0.035..=0.065).contains(&sd), "sd {sd}");
}

proptest! {
    #[test]
    fn hill_is_scale_invariant(e in prop::collection::vec(0.01f64..100.0, 5..40), c in 0.001f64..1000.0) {
        let k = e.len() / 2;
        let a = hill(&e, k).unwrap();
        let scaled: Vec<f64> = e.iter().map(|v| v * c).collect();
        let b = hill(&scaled, k).unwrap();
        prop_assert!((a.gamma_hat - b.gamma_hat).abs() < 1e-9);
        prop_assert!(a.gamma_hat >= 0.0);
    }

    #[test]
    fn weissman_is_monotone(t in 0.1f64..10.0, g in 0.0f64..2.0, k in 1usize..50, t1 in 0.5f64..0.999, t2 in 0.5f64..0.999) {
        let n = 1000;
        let tail = TailFit { k, threshold: t, gamma_hat: g, sorted_exceedance_logs: vec![0.0; k] };
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(weissman_quantile(&tail, n, hi).unwrap() >= weissman_quantile(&tail, n, lo).unwrap());
        let bigger = TailFit { threshold: t * 1.5, ..tail.clone() };
        prop_assert!(weissman_quantile(&bigger, n, hi).unwrap() >= weissman_quantile(&tail, n, hi).unwrap());
        let ratio = k as f64 / (n as f64 * (1.0 - hi));
        if ratio > 1.0 {
            let steeper = TailFit { gamma_hat: g + 0.1, ..tail.clone() };
            prop_assert!(weissman_quantile(&steeper, n, hi).unwrap() >= weissman_quantile(&tail, n, hi).unwrap());
        }
    }
}

#[test]
fn weissman_examples() {
    let tail = TailFit {
        k: 10,
        threshold: 2.0,
        gamma_hat: 0.5,
        sorted_exceedance_logs: vec![0.0; 10],
    };
    // k/(n(1-τ)) = 1 at n = 100, τ = 0.9.
    assert_eq!(weissman_quantile(&tail, 100, 0.9).unwrap(), 2.0);
    // ratio 4 at n = 100, τ = 0.975.
    assert!((weissman_quantile(&tail, 100, 0.975).unwrap() - 4.0).abs() < 1e-12);
    let flat = TailFit {
        gamma_hat: 0.0,
        ..tail
    };
    assert_eq!(weissman_quantile(&flat, 100, 0.999).unwrap(), 2.0);
}

#[test]
fn k_rules() {
    assert_eq!(KRule::NThirdBaseline.resolve(500), 35);
    assert_eq!(KRule::NThirdBaseline.resolve(1000), 45);
    assert_eq!(KRule::NQuarter.resolve(1287), 23);
    assert_eq!(KRule::NQuarter.resolve(500), 18);
    assert_eq!(KRule::NQuarter.resolve(2500), 28);
    assert_eq!(KRule::NQuarter.resolve(256), 16);
    assert_eq!(KRule::Fixed(7).resolve(10), 7);
}

#[test]
fn cst_prediction_has_common_shape() {
    let s = gpd_sample(400, 21, f64::exp);
    let k = KRule::NQuarter.resolve(s.len());
    let m = fit_cst(&s, 0.5, 0.4, Kernel::Epanechnikov, k).unwrap();
    assert_eq!(m.residuals.len(), 400);
    let mut sorted = m.residuals.clone();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(m.tail.threshold, sorted[400 - k - 1]);
    let grid = uniform_grid(-0.9, 0.9, 9);
    let gaps: Vec<f64> = grid
        .iter()
        .map(|&x| m.predict(0.995, x).unwrap() - m.predict(0.99, x).unwrap())
        .collect();
    for g in &gaps {
        assert!((g - gaps[0]).abs() < 1e-12);
    }
    // Extrapolation ratio one returns r̂(x) + threshold.
    let tau_one = 1.0 - k as f64 / 400.0;
    for &x in &grid {
        let p = m.predict(tau_one, x).unwrap();
        assert!((p - (m.rhat(x).unwrap() + m.tail.threshold)).abs() < 1e-12);
        let mut prev = f64::NEG_INFINITY;
        for &tau in &[0.5, 0.7, 0.9, 0.95, 0.99, 0.999] {
            let q = m.predict(tau, x).unwrap();
            assert!(q >= prev);
            prev = q;
        }
    }
    assert!(matches!(
        m.predict(0.4, 0.0),
        Err(Error::BelowThresholdLevel { .. })
    ));
    assert!(m.validate().is_ok());
}

#[test]
fn cst_shift_equivariance() {
    let s = gpd_sample(300, 8, |x| x);
    let m = fit_cst(&s, 0.5, 0.5, Kernel::Epanechnikov, 16).unwrap();
    let c = 12.5;
    let ms = fit_cst(&s.shifted(c), 0.5, 0.5, Kernel::Epanechnikov, 16).unwrap();
    assert!((m.tail.gamma_hat - ms.tail.gamma_hat).abs() < 1e-9);
    for &x in &[-0.7, 0.0, 0.6] {
        let d = ms.predict(0.99, x).unwrap() - m.predict(0.99, x).unwrap();
        assert!((d - c).abs() < 1e-9, "{d}");
    }
}

#[test]
fn cst_rejects_non_positive_threshold() {
    let s = gpd_sample(200, 4, |x| x);
    let err = fit_cst(&s, 0.5, 0.5, Kernel::Epanechnikov, 150).unwrap_err();
    assert!(matches!(err, Error::NonPositiveThreshold { .. }));
}

#[test]
fn baseline_on_noiseless_line() {
    let xs: Vec<f64> = (0..60).map(|i| -1.0 + i as f64 / 30.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 3.0 + 0.5 * x).collect();
    let s = PairedSample::new(xs, ys).unwrap();
    let m = fit_linear_baseline(&s, 10, 3, BaselineAnchor::Mean).unwrap();
    for &(_, a, b) in &m.coeffs_per_tau {
        assert!((a - 3.0).abs() < 1e-12 && (b - 0.5).abs() < 1e-12);
    }
    assert!(m.gamma_hat.abs() < 1e-12);
    assert_eq!(m.tau_grid.len(), 8);
    assert_eq!(m.tau_grid[0], 50.0 / 60.0);
    assert_eq!(*m.tau_grid.last().unwrap(), 57.0 / 60.0);
    for &tau in &[m.anchor_level(), 0.99, 0.9999] {
        assert!((m.predict(tau, 0.4).unwrap() - 3.2).abs() < 1e-12);
    }
    assert!(matches!(
        m.predict(0.5, 0.0),
        Err(Error::BelowThresholdLevel { .. })
    ));
    assert!(m.validate().is_ok());
}

#[test]
fn baseline_argument_checks() {
    let s = gpd_sample(20, 1, |x| x);
    assert!(fit_linear_baseline(&s, 18, 3, BaselineAnchor::Mean).is_err());
    assert!(fit_linear_baseline(&s, 3, 3, BaselineAnchor::Mean).is_err());
    let neg =
        PairedSample::new(s.xs().to_vec(), s.ys().iter().map(|y| y - 100.0).collect()).unwrap();
    assert!(matches!(
        fit_linear_baseline(&neg, 8, 2, BaselineAnchor::Mean),
        Err(Error::NonPositiveQuantile { .. })
    ));
}

/// Independent baseline: every linear quantile fit by enumerating all lines
/// through two observations.
fn brute_baseline(s: &PairedSample, k: usize, trim: usize) -> (f64, Vec<(f64, f64)>) {
    let (xs, ys) = (s.xs(), s.ys());
    let n = xs.len();
    let mut lines = Vec::new();
    for j in (trim..=k).rev() {
        let tau = (n - j) as f64 / n as f64;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for a in 0..n {
            for b in a + 1..n {
                let slope = (ys[b] - ys[a]) / (xs[b] - xs[a]);
                let icpt = ys[a] - slope * xs[a];
                let loss: f64 = (0..n)
                    .map(|i| {
                        let u = ys[i] - icpt - slope * xs[i];
                        if u < 0.0 {
                            u * (tau - 1.0)
                        } else {
                            u * tau
                        }
                    })
                    .sum();
                if loss < best.0 {
                    best = (loss, icpt, slope);
                }
            }
        }
        lines.push((best.1, best.2));
    }
    let xbar = xs.iter().sum::<f64>() / n as f64;
    let q0 = lines[0].0 + lines[0].1 * xbar;
    let g = lines[1..]
        .iter()
        .map(|(a, b)| ((a + b * xbar) / q0).ln())
        .sum::<f64>()
        / (lines.len() - 1) as f64;
    (g.max(0.0), lines)
}

#[test]
fn baseline_matches_independent_reimplementation() {
    let s = gpd_sample(50, 31, |x| 2.0 + x);
    let k = KRule::NThirdBaseline.resolve(50);
    let m = fit_linear_baseline(&s, k, 3, BaselineAnchor::Mean).unwrap();
    let (g, lines) = brute_baseline(&s, k, 3);
    assert!((m.gamma_hat - g).abs() < 1e-9, "{} vs {g}", m.gamma_hat);
    for (&(_, a, b), &(ea, eb)) in m.coeffs_per_tau.iter().zip(&lines) {
        assert!((a - ea).abs() < 1e-9 && (b - eb).abs() < 1e-9);
    }
    for &x in &[-0.8, 0.0, 0.9] {
        for &tau in &[0.99, 0.995] {
            let ratio = k as f64 / (50.0 * (1.0 - tau));
            let expect = (lines[0].0 + lines[0].1 * x) * ratio.powf(g);
            assert!((m.predict(tau, x).unwrap() - expect).abs() < 1e-9);
        }
    }
}

#[test]
fn baseline_per_point_anchor() {
    let s = gpd_sample(200, 12, |x| 3.0 + x);
    let m = fit_linear_baseline(&s, 26, 3, BaselineAnchor::PerPointAverage).unwrap();
    assert!(m.gamma_hat > 0.0);
    assert_eq!(m.anchor, BaselineAnchor::PerPointAverage);
}

use proptest::prelude::*;

use super::*;
use crate::bandwidth::BandwidthChoice;
use crate::model::Strategy as Fitter;

#[test]
fn qvs_examples() {
    assert_eq!(qvs(&[1.0, 2.0], &[1.0, 2.0], 0.3).unwrap(), 0.0);
    assert_eq!(qvs(&[0.0, 1.0, 2.0], &[1.0; 3], 0.5).unwrap(), 1.0);
    assert!((qvs(&[0.0], &[1.0], 0.9).unwrap() - 0.1).abs() < 1e-15);
    assert!(qvs(&[0.0, 1.0], &[1.0], 0.5).is_err());
    assert!(qvs(&[], &[], 0.5).is_err());
}

#[test]
fn qvss_examples() {
    let obs = [0.0, 1.0, 2.0, 7.0];
    let f = [0.5, 1.5, 1.0, 3.0];
    assert_eq!(qvss(&obs, &f, &f, 0.7).unwrap(), 0.0);
    assert_eq!(qvss(&obs, &obs, &f, 0.7).unwrap(), 1.0);
    assert_eq!(skill(1.0, 4.0).unwrap(), 0.75);
    assert!(matches!(
        qvss(&obs, &f, &obs, 0.7),
        Err(Error::UndefinedSkill)
    ));
}

#[test]
fn climatology_examples() {
    let obs: Vec<f64> = (1..=100).map(f64::from).collect();
    assert_eq!(climatology_reference(&obs, 0.5).unwrap(), 50.0);
    assert_eq!(climatology_reference(&[4.2; 9], 0.37).unwrap(), 4.2);
    assert_eq!(climatology_reference(&obs, 1.0 - 1e-12).unwrap(), 100.0);
    assert!(climatology_reference(&[], 0.5).is_err());
}

#[test]
fn reliability_single_bin() {
    let obs = [3.0, 1.0, 2.0];
    let f = [0.0, 1.0, 5.0];
    let pts = reliability_diagram(&obs, &f, 0.5, 1).unwrap();
    assert_eq!(
        pts,
        vec![ReliabilityPoint {
            mean_forecast: 2.0,
            empirical_quantile: 2.0,
            count: 3
        }]
    );
    assert!(reliability_diagram(&obs, &f, 0.5, 4).is_err());
}

#[test]
fn reliability_hand_example() {
    let obs = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0];
    let f = [2.0, 0.5, 3.0, 1.0, 6.0, 4.0];
    let pts = reliability_diagram(&obs, &f, 0.5, 2).unwrap();
    // Sorted by forecast: {0.5, 1.0, 2.0} with obs {1, 1, 3} and
    // {3.0, 4.0, 6.0} with obs {4, 9, 5}.
    assert!((pts[0].mean_forecast - 3.5 / 3.0).abs() < 1e-15);
    assert_eq!(pts[0].empirical_quantile, 1.0);
    assert!((pts[1].mean_forecast - 13.0 / 3.0).abs() < 1e-15);
    assert_eq!(pts[1].empirical_quantile, 5.0);
    assert_eq!((pts[0].count, pts[1].count), (3, 3));
}

#[test]
fn reliability_perfect_forecasts_on_diagonal() {
    let obs: Vec<f64> = (0..12).map(|i| (i * 5 % 12) as f64).collect();
    let pts = reliability_diagram(&obs, &obs, 1.0 - 1e-9, 12).unwrap();
    assert!(pts.iter().all(|p| p.mean_forecast == p.empirical_quantile));
}

#[test]
fn remainder_goes_to_lowest_bins() {
    let obs: Vec<f64> = (0..23).map(f64::from).collect();
    let pts = reliability_diagram(&obs, &obs, 0.5, 5).unwrap();
    let counts: Vec<usize> = pts.iter().map(|p| p.count).collect();
    assert_eq!(counts, vec![5, 5, 5, 4, 4]);
}

#[test]
fn filter_parsing() {
    let f: RowFilter = "x>5".parse().unwrap();
    assert_eq!((f.column, f.op, f.value), (FilterColumn::X, CmpOp::Gt, 5.0));
    assert!(f.keep(5.5, None) && !f.keep(5.0, None));
    let f: RowFilter = " z <= 2.5 ".parse().unwrap();
    assert_eq!((f.column, f.op), (FilterColumn::Z, CmpOp::Le));
    assert!(f.keep(0.0, Some(2.5)) && !f.keep(0.0, None));
    for bad in ["y>1", "x=3", "x>", "x>nan", ">3"] {
        assert!(bad.parse::<RowFilter>().is_err(), "{bad}");
    }
    assert_eq!(
        String::from("x>=1.5".parse::<RowFilter>().unwrap()),
        "x>=1.5"
    );
}

fn synthetic(groups: &[&str], per_group: usize, signal: bool) -> Dataset {
    let mut g = rng::stream(99, 0);
    let mut d = Dataset::default();
    for name in groups {
        for _ in 0..per_group {
            let x = 4.0 * rng::open01(&mut g);
            let u = rng::open01(&mut g);
            let noise = ((1.0 - u).powf(-0.2) - 1.0) / 0.2;
            d.groups.push(name.to_string());
            d.xs.push(x);
            d.ys.push(if signal { x.exp() } else { 0.0 } + noise);
        }
    }
    d
}

fn fixed_settings(strategy: Fitter) -> FitSettings {
    FitSettings {
        strategy,
        tau_c: 0.8,
        h: BandwidthChoice::Fixed(1.2),
        ..FitSettings::default()
    }
}

#[test]
fn identical_groups_give_identical_folds() {
    let one = synthetic(&["a"], 150, true);
    let mut d = one.clone();
    d.groups
        .extend(std::iter::repeat_n("b".to_string(), one.len()));
    d.xs.extend(&one.xs);
    d.ys.extend(&one.ys);
    let opts = CvOptions {
        taus: vec![0.9, 0.95],
        ..CvOptions::default()
    };
    let out = grouped_cv(&d, &fixed_settings(Fitter::Cst), &opts).unwrap();
    assert_eq!(out.reports.len(), 4);
    for (a, b) in out.reports[..2].iter().zip(&out.reports[2..]) {
        assert_eq!((a.group_key.as_str(), b.group_key.as_str()), ("a", "b"));
        assert_eq!(a.qvs, b.qvs);
        assert_eq!(a.qvs_reference, b.qvs_reference);
        assert_eq!(a.reliability_points, b.reliability_points);
    }
}

#[test]
fn cv_rejects_single_group() {
    let d = synthetic(&["only"], 50, true);
    assert!(grouped_cv(&d, &fixed_settings(Fitter::Cst), &CvOptions::default()).is_err());
}

#[test]
fn filter_restricts_scored_rows_and_skips_empty_folds() {
    let mut d = synthetic(&["a", "b", "c"], 120, true);
    // Group c only has small covariates, so "x>2" leaves it empty.
    for i in 0..d.len() {
        if d.groups[i] == "c" {
            d.xs[i] /= 4.0;
        }
    }
    let opts = CvOptions {
        taus: vec![0.95],
        filter: Some("x>2".parse().unwrap()),
        ..CvOptions::default()
    };
    let out = grouped_cv(&d, &fixed_settings(Fitter::Cst), &opts).unwrap();
    assert_eq!(out.skipped.len(), 1);
    assert_eq!(out.skipped[0].0, "c");
    for r in &out.reports {
        let expected = (0..d.len())
            .filter(|&i| d.groups[i] == r.group_key && d.xs[i] > 2.0)
            .count();
        assert_eq!(r.n, expected);
        assert_eq!(
            r.reliability_points.iter().map(|p| p.count).sum::<usize>(),
            expected
        );
    }
}

#[test]
fn signal_beats_climatology_and_noise_does_not() {
    let signal = synthetic(&["1", "2", "3", "4"], 200, true);
    let noise = synthetic(&["1", "2", "3", "4"], 200, false);
    let opts = CvOptions {
        taus: vec![0.95],
        ..CvOptions::default()
    };
    for strategy in [Fitter::Cst, Fitter::LinearBaseline] {
        let s = grouped_cv(&signal, &fixed_settings(strategy), &opts).unwrap();
        assert!(mean_qvss(&s.reports, 0.95) > 0.0, "{strategy:?}");
    }
    let n = grouped_cv(&noise, &fixed_settings(Fitter::Cst), &opts).unwrap();
    assert!(mean_qvss(&n.reports, 0.95) <= 0.05);
}

#[test]
fn csv_layouts() {
    let r = VerificationReport {
        group_key: "2001".into(),
        tau: 0.95,
        n: 2,
        qvs: 1.5,
        qvs_reference: 2.0,
        qvss: 0.25,
        reliability_points: vec![ReliabilityPoint {
            mean_forecast: 1.0,
            empirical_quantile: 2.0,
            count: 2,
        }],
    };
    let mut a = Vec::new();
    write_report_csv(std::slice::from_ref(&r), &mut a).unwrap();
    assert_eq!(
        String::from_utf8(a).unwrap(),
        "group,tau,qvs,qvs_ref,qvss\n2001,0.95,1.5,2.0,0.25\n"
    );
    let mut b = Vec::new();
    write_reliability_csv(&[r], &mut b).unwrap();
    assert_eq!(
        String::from_utf8(b).unwrap(),
        "group,tau,bin,mean_forecast,empirical_quantile,count\n2001,0.95,0,1.0,2.0,2\n"
    );
}

fn obs_and_forecasts() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-50.0f64..50.0, n),
            prop::collection::vec(-50.0f64..50.0, n),
        )
    })
}

proptest! {
    #[test]
    fn qvs_is_permutation_invariant((obs, f) in obs_and_forecasts(), tau in 0.01f64..0.99, shift in 0usize..40) {
        let n = obs.len();
        let k = shift % n;
        let ro: Vec<f64> = obs.iter().cycle().skip(k).take(n).copied().collect();
        let rf: Vec<f64> = f.iter().cycle().skip(k).take(n).copied().collect();
        let a = qvs(&obs, &f, tau).unwrap();
        let b = qvs(&ro, &rf, tau).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
    }

    #[test]
    fn constant_forecast_minimised_at_empirical_quantile(obs in prop::collection::vec(-50.0f64..50.0, 1..40), tau in 0.01f64..0.99) {
        let q = empirical_quantile(&obs, tau).unwrap();
        let best = qvs(&obs, &vec![q; obs.len()], tau).unwrap();
        for &c in &obs {
            prop_assert!(best <= qvs(&obs, &vec![c; obs.len()], tau).unwrap() + 1e-9);
        }
    }

    #[test]
    fn skill_sign_flips_when_swapped((obs, f) in obs_and_forecasts(), off in 0.1f64..5.0, tau in 0.05f64..0.95) {
        let g: Vec<f64> = f.iter().map(|v| v + off).collect();
        let a = qvs(&obs, &f, tau).unwrap();
        let b = qvs(&obs, &g, tau).unwrap();
        prop_assume!(a > 0.0 && b > 0.0 && (a - b).abs() > 1e-9);
        let s1 = qvss(&obs, &f, &g, tau).unwrap();
        let s2 = qvss(&obs, &g, &f, tau).unwrap();
        prop_assert_eq!(s1.signum(), -s2.signum());
    }

    #[test]
    fn reliability_bins_account_for_every_row((obs, f) in obs_and_forecasts(), bins in 1usize..12, tau in 0.01f64..0.99) {
        prop_assume!(bins <= obs.len());
        let pts = reliability_diagram(&obs, &f, tau, bins).unwrap();
        prop_assert_eq!(pts.len(), bins);
        prop_assert_eq!(pts.iter().map(|p| p.count).sum::<usize>(), obs.len());
        for w in pts.windows(2) {
            prop_assert!(w[0].mean_forecast <= w[1].mean_forecast);
        }
    }
}

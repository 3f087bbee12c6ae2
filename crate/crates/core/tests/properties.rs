// SPDX-License-Identifier: MIT OR Apache-2.0

use proptest::prelude::*;
use rca_cusum::critical::{empirical_quantile, hetero_fnl_distribution};
use rca_cusum::cusum::{darling_erdos_from_max, renyi_window_sup};
use rca_cusum::*;

fn arb_series(min: usize, max: usize) -> impl Strategy<Value = TimeSeries> {
    prop::collection::vec(-5.0f64..5.0, min + 1..max + 1)
        .prop_map(|v| TimeSeries::new(v, "prop").unwrap())
}

fn arb_rca() -> impl Strategy<Value = TimeSeries> {
    (0.0f64..1.05, 40usize..160, any::<u64>()).prop_map(|(b, n, seed)| {
        let p = RcaParams::new(b, 0.01, 0.5).unwrap();
        simulate_rca(&RcaSimSpec::new(p, n, seed).with_burn_in(20)).unwrap()
    })
}

fn negate(s: &TimeSeries) -> TimeSeries {
    TimeSeries::new(s.values().iter().map(|v| -v).collect(), "neg").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sign_flip_leaves_statistics_unchanged(s in arb_rca()) {
        let m = negate(&s);
        let (ts, tm) = (build_cumulants(&s).unwrap(), build_cumulants(&m).unwrap());
        let (qs, qm) = (q_process(&s, &ts).unwrap(), q_process(&m, &tm).unwrap());
        for k in qs.grid() {
            prop_assert!((qs.value_at(k).abs() - qm.value_at(k).abs()).abs() <= 1e-12 * (1.0 + qs.value_at(k).abs()));
        }
        let eta = eta_hat_sq(&s, &ts).unwrap();
        prop_assert!((eta.value - eta_hat_sq(&m, &tm).unwrap().value).abs() <= 1e-12 * eta.value);
        let w = WeightSpec::kappa(0.25).unwrap();
        let (a, b) = (weighted_sup(&qs, &w, eta.eta()).unwrap(), weighted_sup(&qm, &w, eta.eta()).unwrap());
        prop_assert!((a.value - b.value).abs() <= 1e-10 * a.value);
        prop_assert_eq!(a.argmax, b.argmax);
    }

    #[test]
    fn left_estimate_ignores_later_values(s in arb_rca(), frac in 0.2f64..0.8, bump in -3.0f64..3.0) {
        let n = s.n();
        let k = ((n as f64 * frac) as usize).clamp(2, n - 1);
        let mut v = s.values().to_vec();
        for x in &mut v[k + 1..] {
            *x += bump;
        }
        let changed = TimeSeries::new(v.clone(), "changed").unwrap();
        let (a, b) = (build_cumulants(&s).unwrap(), build_cumulants(&changed).unwrap());
        prop_assert_eq!(a.beta_hat_left(k).unwrap(), b.beta_hat_left(k).unwrap());
        // and the right estimate ignores values before y_k
        let mut w = s.values().to_vec();
        for x in &mut w[..k] {
            *x -= bump;
        }
        let early = build_cumulants(&TimeSeries::new(w, "early").unwrap()).unwrap();
        let (r0, r1) = (a.beta_hat_right(k).unwrap(), early.beta_hat_right(k).unwrap());
        prop_assert!((r0 - r1).abs() <= 1e-12 * (1.0 + r0.abs()));
    }

    #[test]
    fn widening_trim_never_raises_window_sup(s in arb_rca(), r in 2usize..8, extra in 1usize..6, kappa in 0.51f64..1.5) {
        let t = build_cumulants(&s).unwrap();
        let q = q_process(&s, &t).unwrap();
        let narrow = renyi_window_sup(&q, kappa, &TrimSpec::new(r, r).unwrap()).unwrap();
        if let Ok(wide) = renyi_window_sup(&q, kappa, &TrimSpec::new(r + extra, r).unwrap()) {
            prop_assert!(wide.value <= narrow.value);
        }
    }

    #[test]
    fn darling_erdos_increasing(m in 0.0f64..10.0, dm in 1e-6f64..1.0, n in 20usize..100_000) {
        prop_assert!(darling_erdos_from_max(m + dm, n) > darling_erdos_from_max(m, n));
    }

    #[test]
    fn cumulants_are_monotone_and_bounded(s in arb_series(8, 80)) {
        let t = build_cumulants(&s).unwrap();
        for k in 2..=s.n() {
            prop_assert!(t.den_upto(k) >= t.den_upto(k - 1));
            prop_assert!(t.den_upto(k) <= (k - 1) as f64);
        }
        let total: f64 = s.values().windows(2).skip(1).map(|w| w[0] * w[0] / (1.0 + w[0] * w[0])).sum();
        prop_assert!((t.den_total() - total).abs() <= 1e-12 * (1.0 + total));
    }

    #[test]
    fn kernel_identities_hold(s in arb_rca()) {
        let t = build_cumulants(&s).unwrap();
        let k = build_kernel(&s, &t).unwrap();
        let n = s.n();
        for j in 2..=n - 2 {
            prop_assert!((k.c1_grid(j) + k.c2_grid(j) - k.c1_total()).abs() <= 4.0 * f64::EPSILON * k.c1_total());
            prop_assert!(k.c1_grid(j) >= k.c1_grid(j - 1));
            prop_assert!(k.b_grid(j) >= k.b_grid(j - 1));
            prop_assert!(k.g_diag_at(j) >= -1e-12);
        }
        prop_assert!(k.g(1.0, 1.0).abs() <= 1e-12 * (1.0 + k.b_total()));
        prop_assert_eq!(k.g(0.5 / (n + 1) as f64, 0.5 / (n + 1) as f64), 0.0);
        for &(a, b) in &[(0.2, 0.7), (0.45, 0.55), (0.9, 0.1)] {
            prop_assert!((k.g(a, b) - k.g(b, a)).abs() <= 1e-15 * (1.0 + k.g(a, b).abs()));
        }
    }

    #[test]
    fn empirical_quantile_monotone(mut v in prop::collection::vec(-100.0f64..100.0, 1..200), p in 0.0f64..1.0, dp in 0.0f64..0.5) {
        v.sort_by(f64::total_cmp);
        let hi = (p + dp).min(1.0);
        prop_assert!(empirical_quantile(&v, p) <= empirical_quantile(&v, hi));
        prop_assert!(v.contains(&empirical_quantile(&v, p)));
    }

    #[test]
    fn reject_iff_statistic_exceeds_cv(s in arb_rca(), kappa in prop::sample::select(vec![0.0, 0.25, 0.5, 1.0])) {
        let config = TestConfig::new(Statistic::for_kappa(kappa).unwrap(), VarianceMode::Homoskedastic, 0.05, CvSource::Analytic);
        if let Ok(r) = run_test(&s, &config) {
            prop_assert_eq!(r.reject, r.statistic_value > r.critical_value);
            prop_assert_eq!(r.breakdate.is_some(), r.reject);
            let again = run_test(&s, &config).unwrap();
            prop_assert_eq!(again.statistic_value.to_bits(), r.statistic_value.to_bits());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fnl_is_a_step_cdf(s in arb_rca(), seed in any::<u64>()) {
        let t = build_cumulants(&s).unwrap();
        let k = build_kernel(&s, &t).unwrap();
        let f = hetero_fnl_distribution(&k, &WeightSpec::kappa(0.25).unwrap(), 150, seed).unwrap();
        prop_assert_eq!(f.l(), 150);
        prop_assert!(f.sups.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(f.cdf(f.sups[0] - 1.0), 0.0);
        prop_assert_eq!(f.cdf(f.sups[149]), 1.0);
        // every jump is a multiple of 1/L
        for x in &f.sups {
            let scaled = f.cdf(*x) * 150.0;
            prop_assert!((scaled - scaled.round()).abs() < 1e-9);
        }
        let c = f.critical_value(0.05).unwrap();
        prop_assert_eq!(c, f.sups[(150.0f64 * 0.95).ceil() as usize - 1]);
    }

    #[test]
    fn simulation_is_reproducible(b in 0.0f64..1.05, n in 10usize..300, seed in any::<u64>()) {
        let p = RcaParams::new(b, 0.01, 0.5).unwrap();
        let spec = RcaSimSpec::new(p, n, seed);
        prop_assert_eq!(simulate_rca(&spec).unwrap(), simulate_rca(&spec).unwrap());
    }

    #[test]
    fn ingestion_locates_every_bad_row(rows in prop::collection::vec(prop_oneof![
        (-1e6f64..1e6).prop_map(|v| v.to_string()),
        "[p-z][a-z]{0,3}",
    ], 3..40)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, format!("x\n{}\n", rows.join("\n"))).unwrap();
        let first_bad = rows.iter().position(|r| r.parse::<f64>().is_err());
        match load_series(&IngestSpec::new(&path, ColumnSel::Name("x".into()))) {
            Ok(l) => {
                prop_assert!(first_bad.is_none());
                prop_assert_eq!(l.series.values().len(), rows.len());
            }
            Err(e) => {
                let bad = first_bad.expect("error on well-formed input");
                let line = format!("line {}", bad + 2);
                prop_assert!(e.to_string().contains(&line), "{} lacks {}", e, line);
            }
        }
    }
}

use proptest::prelude::*;
use rlpi_core::metrics::{
    band_of, band_percentages, cohort_aggregate, lbgi_hbgi, mean_std, risk_transform, tdi, write_markdown_table,
    GlycaemicReport,
};

fn trace() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(20.0f64..500.0, 1..400)
}

proptest! {
    #[test]
    fn every_sample_falls_in_exactly_one_band(bg in 1.0f64..600.0) {
        let hits = [
            (70.0..=180.0).contains(&bg),
            (50.0..70.0).contains(&bg),
            bg < 50.0,
            bg > 180.0 && bg <= 250.0,
            bg > 250.0,
        ];
        prop_assert_eq!(hits.iter().filter(|&&h| h).count(), 1);
        prop_assert!(hits[band_of(bg)]);
    }

    #[test]
    fn band_percentages_sum_to_one_hundred(t in trace()) {
        let b = band_percentages(&t).unwrap();
        prop_assert!((b.as_array().iter().sum::<f64>() - 100.0).abs() <= 1e-9);
        prop_assert!(b.as_array().iter().all(|&p| (0.0..=100.0).contains(&p)));
    }

    #[test]
    fn risk_indices_split_the_symmetrized_risk(t in trace()) {
        let (lo, hi) = lbgi_hbgi(&t).unwrap();
        prop_assert!(lo >= 0.0 && hi >= 0.0);
        let total: f64 = t.iter().map(|&v| {
            let f = 1.509 * (v.ln().powf(1.084) - 5.381);
            10.0 * f * f
        }).sum::<f64>() / t.len() as f64;
        prop_assert!((lo + hi - total).abs() <= 1e-9 * total.max(1.0));
        if t.iter().all(|&v| v >= 113.0) {
            prop_assert_eq!(lo, 0.0);
        }
        if t.iter().all(|&v| v <= 112.0) {
            prop_assert_eq!(hi, 0.0);
        }
    }

    #[test]
    fn report_statistics_are_ordered(t in trace(), days in 0.5f64..30.0) {
        let doses: Vec<f64> = t.iter().map(|v| v / 1000.0).collect();
        let r = GlycaemicReport::from_trace(&t, &doses, days).unwrap();
        prop_assert!(r.bg_min <= r.bg_mean * (1.0 + 1e-12) && r.bg_mean <= r.bg_max * (1.0 + 1e-12));
        prop_assert!((r.tdi - doses.iter().sum::<f64>() / days).abs() <= 1e-12 * r.tdi.max(1.0));
        prop_assert_eq!(r.values()[11], r.bands.normo);
        prop_assert_eq!(GlycaemicReport::csv_header().split(',').count(), r.csv_row().split(',').count());
    }

    #[test]
    fn aggregation_ignores_report_order(ts in prop::collection::vec(trace(), 2..8), seed in any::<u64>()) {
        let reports: Vec<GlycaemicReport> =
            ts.iter().map(|t| GlycaemicReport::from_trace(t, &[1.0, 2.0], 1.0).unwrap()).collect();
        let mut shuffled = reports.clone();
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(cohort_aggregate(&reports).unwrap(), cohort_aggregate(&shuffled).unwrap());
    }
}

#[test]
fn risk_is_neutral_near_112() {
    assert!(risk_transform(112.5).abs() < 1e-2);
    assert!(risk_transform(40.0) < 0.0 && risk_transform(300.0) > 0.0);
}

#[test]
fn worked_examples() {
    let b = band_percentages(&[40.0, 60.0, 100.0, 200.0, 300.0, 70.0, 180.0, 50.0]).unwrap();
    assert_eq!(b.as_array(), [37.5, 25.0, 12.5, 12.5, 12.5]);
    assert_eq!(tdi(&[0.5; 288], 1.0).unwrap(), 144.0);
    assert!(tdi(&[1.0], 0.0).is_err());
    assert!(band_percentages(&[]).is_err());
    assert!(lbgi_hbgi(&[100.0, 0.0]).is_err());

    let m = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
    assert_eq!(m.mean, 5.0);
    assert!((m.std - (32.0f64 / 7.0).sqrt()).abs() < 1e-15);
    assert_eq!(mean_std(&[3.0]).std, 0.0);
}

#[test]
fn markdown_table_has_one_row_per_summary() {
    let r = GlycaemicReport::from_trace(&[100.0, 150.0, 60.0], &[1.0], 1.0).unwrap();
    let s = cohort_aggregate(&[r.clone(), r]).unwrap();
    let mut out = Vec::new();
    write_markdown_table(&[("a".into(), s.clone()), ("b".into(), s)], &[("trials", vec!["2".into(), "3".into()])], &mut out)
        .unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].contains("[70,180]") && lines[0].ends_with("trials |"));
    assert!(lines[3].starts_with("| b |") && lines[3].ends_with("3 |"));
}

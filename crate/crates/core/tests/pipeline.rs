//! Synthetic world through CSV, estimation and evaluation, plus invariants
//! of the bootstrap summaries.

use lmflow::bootstrap::{se_and_ci, BootstrapConfig};
use lmflow::carima::{self, EvaluationConfig, InterventionSpec};
use lmflow::estimator::{build_series, EstimationPanel};
use lmflow::panel::{read_panel, write_records, ParseOptions, SubgroupFilter, WeightSource};
use lmflow::synth::{self, WorldConfig};
use lmflow::{QuarterId, QuarterWindow, StateSpace};
use proptest::prelude::*;

const MATRIX: [[f64; 5]; 5] = [
    [0.930, 0.010, 0.020, 0.010, 0.030],
    [0.020, 0.720, 0.110, 0.060, 0.090],
    [0.005, 0.020, 0.955, 0.005, 0.015],
    [0.030, 0.100, 0.050, 0.570, 0.250],
    [0.015, 0.025, 0.025, 0.040, 0.895],
];

fn q(s: &str) -> QuarterId {
    s.parse().unwrap()
}

fn config(persons: usize) -> WorldConfig {
    let rows = MATRIX.iter().map(|r| r.to_vec()).collect();
    WorldConfig::constant(&StateSpace::canonical(), rows, q("2016Q1"), q("2019Q3"), persons, 5)
}

#[test]
fn csv_round_trip_keeps_every_record() {
    let world = synth::generate(&config(2_000)).unwrap();
    let mut buf = Vec::new();
    write_records(&mut buf, &world.panel).unwrap();
    let back = read_panel(buf.as_slice(), &ParseOptions::default()).unwrap();
    assert_eq!(back.records, world.panel.records);
}

#[test]
fn estimates_track_the_generating_chain() {
    let world = synth::generate(&config(60_000)).unwrap();
    let panel = EstimationPanel::from_panel(&world.panel, &SubgroupFilter::all(), WeightSource::Destination).unwrap();
    let window: QuarterWindow = "2016Q1:2019Q3".parse().unwrap();
    let series = build_series(&panel, window).unwrap();
    for qtr in QuarterId::range_inclusive(window.start.succ(), window.end) {
        let m = series.matrix(qtr).unwrap();
        let ess = &series.counts[&qtr].row_ess;
        for (i, row) in MATRIX.iter().enumerate() {
            for (j, &truth) in row.iter().enumerate() {
                let se = (truth * (1.0 - truth) / ess[i]).sqrt();
                assert!((m.get(i, j) - truth).abs() < 5.0 * se, "{qtr} ({i},{j}) {} vs {truth}", m.get(i, j));
            }
        }
    }
}

#[test]
fn evaluation_without_bootstrap_is_internally_consistent() {
    let world = synth::generate(&config(20_000)).unwrap();
    let panel = EstimationPanel::from_panel(&world.panel, &SubgroupFilter::all(), WeightSource::Destination).unwrap();
    let spec = InterventionSpec::from_bounds(q("2016Q1"), q("2018Q3"), 4).unwrap();
    let report = carima::effects(&panel, &spec, &EvaluationConfig::new(1_000.0, None)).unwrap();

    for shares in report.fitted_shares.iter().chain(&report.forecasted_shares) {
        assert!((shares.values().iter().sum::<f64>() - 1.0).abs() < 1e-8);
    }
    let diff_sum: f64 = report.share_diffs.iter().map(|d| d.estimate).sum();
    assert!(diff_sum.abs() < 1e-8);
    for (d, c) in report.share_diffs.iter().zip(&report.count_diffs) {
        assert!((d.estimate * 1_000.0 - c.estimate).abs() < 1e-6);
        assert!(!c.significant);
    }
    for (i, row) in report.cumulative_effects.iter().enumerate() {
        let row_sum: f64 = row.iter().map(|e| e.estimate).sum();
        assert!(row_sum.abs() < 1e-8, "row {i} sums to {row_sum}");
        for (j, e) in row.iter().enumerate() {
            let gap = report.cumulative_fitted.get(i, j) - report.cumulative_forecasted.get(i, j);
            assert!((e.estimate - gap).abs() < 1e-12);
        }
    }
}

#[test]
fn bootstrap_report_is_reproducible() {
    let world = synth::generate(&config(10_000)).unwrap();
    let panel = EstimationPanel::from_panel(&world.panel, &SubgroupFilter::all(), WeightSource::Destination).unwrap();
    let spec = InterventionSpec::from_bounds(q("2016Q1"), q("2018Q3"), 2).unwrap();
    let cfg = EvaluationConfig::new(1.0, Some(BootstrapConfig::new(100, 9)));
    let a = carima::render_outputs(&carima::effects(&panel, &spec, &cfg).unwrap()).unwrap();
    let b = carima::render_outputs(&carima::effects(&panel, &spec, &cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn summaries_are_ordered_and_bounded(
        point in -1.0f64..1.0,
        values in prop::collection::vec(-2.0f64..2.0, 100..300),
    ) {
        let r = se_and_ci(point, &values, 0.95).unwrap();
        let b = values.len() as f64;
        prop_assert!(r.se >= 0.0);
        prop_assert!(r.ci_lo <= r.ci_hi);
        prop_assert!(r.p_value >= 2.0 / (b + 1.0) - 1e-15 && r.p_value <= 1.0);
        prop_assert_eq!(r.b_effective, values.len());
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(r.ci_lo >= lo && r.ci_hi <= hi);
    }

    #[test]
    fn shifted_replicates_shift_the_interval(
        values in prop::collection::vec(-1.0f64..1.0, 100..200),
        shift in -5.0f64..5.0,
    ) {
        let a = se_and_ci(0.0, &values, 0.95).unwrap();
        let moved: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let b = se_and_ci(shift, &moved, 0.95).unwrap();
        prop_assert!((b.ci_lo - a.ci_lo - shift).abs() < 1e-9);
        prop_assert!((b.ci_hi - a.ci_hi - shift).abs() < 1e-9);
        prop_assert!((b.se - a.se).abs() < 1e-9);
    }
}

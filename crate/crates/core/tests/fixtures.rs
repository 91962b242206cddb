//! Regression anchors: experiment outputs recorded at pinned seeds.
//!
//! These numbers are not ground truth. They pin the current behaviour so any
//! change to numerics, initialization or training order shows up here.

mod common;

use common::{COMPENSATION, COMPENSATION_MEAN_ETA};

use anchor_core::experiments::ablation::{integer_task, run_ablation, AblationConfig};
use anchor_core::experiments::compensation::{run_compensation, CompensationConfig};
use anchor_core::experiments::routing::{run_routing_ablation, RoutingConfig};
use anchor_core::experiments::topk::{run_topk_sweep, TopkSweepConfig};

const TOL: f64 = 1e-9;

fn close(a: f64, b: f64) -> bool {
    common::close(a, b, TOL)
}

#[test]
fn compensation_eta() {
    let (rows, summary) = run_compensation(&CompensationConfig::default(), 2).unwrap();
    assert_eq!(rows.len(), COMPENSATION.len());
    for (row, (period, eta, lin, gau)) in rows.iter().zip(COMPENSATION) {
        assert_eq!(row.period, period);
        assert!(close(row.eta, eta), "T*={period}: eta {} vs {eta}", row.eta);
        assert!(close(row.mae_linear, lin), "T*={period}: linear {}", row.mae_linear);
        assert!(close(row.mae_gaussian, gau), "T*={period}: gaussian {}", row.mae_gaussian);
    }
    assert!(close(summary.mean_eta, COMPENSATION_MEAN_ETA));
}

#[test]
fn integer_ablation_has_nothing_to_fix() {
    let cfg = AblationConfig {
        task: integer_task(),
        ..Default::default()
    };
    let (rows, summary) = run_ablation(&cfg, 3).unwrap();
    assert_eq!(summary.periods, vec![12]);
    let expected = [
        ("anchor-1d", 0.00011323413726840737),
        ("anchor-bl", 0.00011354983491624365),
        ("anchor-gaussian", 0.00011141925792000633),
    ];
    for (row, (name, mse)) in rows.iter().zip(expected) {
        assert_eq!(row.variant, name);
        assert!(close(row.mse, mse), "{name}: {}", row.mse);
    }
    let lo = rows.iter().map(|r| r.mse).fold(f64::MAX, f64::min);
    let hi = rows.iter().map(|r| r.mse).fold(f64::MIN, f64::max);
    assert!(hi / lo < 1.2, "integer-period variants spread by {}", hi / lo);
}

#[test]
fn fractional_ablation() {
    let (rows, summary) = run_ablation(&AblationConfig::default(), 3).unwrap();
    assert_eq!(summary.periods, vec![10]);
    let expected = [
        ("anchor-1d", 0.00015177894077260406),
        ("anchor-bl", 0.00014782090267438517),
        ("anchor-gaussian", 0.00014596998781206706),
    ];
    for (row, (name, mse)) in rows.iter().zip(expected) {
        assert_eq!(row.variant, name);
        assert!(close(row.mse, mse), "{name}: {}", row.mse);
    }
}

#[test]
fn topk_three_is_no_worse_than_one() {
    let cfg = TopkSweepConfig {
        k_max: 3,
        ..Default::default()
    };
    let (rows, _) = run_topk_sweep(&cfg, 3).unwrap();
    assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert!(close(rows[0].mse, 0.0034868736153002363), "k=1: {}", rows[0].mse);
    assert!(close(rows[2].mse, 0.0033862058983109497), "k=3: {}", rows[2].mse);
    assert!(rows[2].mse <= rows[0].mse);
}

#[test]
fn routing_orders() {
    let (rows, summary) = run_routing_ablation(&RoutingConfig::default(), 2).unwrap();
    assert_eq!(rows[0].periods, "16 6 32");
    assert_eq!(rows[1].periods, "32 6 16");
    for r in &rows {
        assert!(r.f1 > 0.0 && r.f1 <= 1.0);
    }
    assert!(close(rows[0].f1, 0.5714285714285715));
    assert!(close(rows[1].f1, 0.5714285714285715));
    assert!(close(rows[0].threshold, 0.1857865838740279));
    assert!(close(rows[1].threshold, 0.19707803466448506));
    assert_eq!((summary.anomalous_points, summary.scored_points), (10, 320));
}

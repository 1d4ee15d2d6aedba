//! Generators and property checks shared by the property suite and the
//! acceptance runner.

#![allow(dead_code)]

use std::collections::BTreeSet;

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use mlclean_core::dataset::{Dataset, Record, Schema};
use mlclean_core::features::FeatureMatrix;
use mlclean_core::model::{train, Objective, TrainConfig};
use mlclean_core::resolve::{resolve, MatchRules, MergePolicy};
use mlclean_core::reweigh::{group_stats, reweigh, ReweighMode, ReweighStrategy};
use mlclean_core::sanitize::{lloyd, ClusterAssignment};

pub const NAMES: [&str; 6] = ["Jo", "Joe", "Joseph", "Sally", "Sal", "Sam"];

pub fn schema() -> Schema {
    Schema {
        id_column: "id".into(),
        weight_column: None,
        name_columns: vec!["name".into()],
        numeric_features: vec!["x".into(), "z".into()],
        categorical_features: vec![],
        sensitive_column: "g".into(),
        sensitive_groups: ("A".into(), "B".into()),
        label_column: "label".into(),
    }
}

/// `(in group A, label, weight, name index, x, z)`
pub type Row = (bool, bool, f64, usize, f64, f64);

pub fn build(rows: &[Row]) -> Dataset {
    let records = rows
        .iter()
        .enumerate()
        .map(|(i, &(a, label, weight, name, x, z))| {
            let id = format!("r{i:03}");
            Record {
                provenance: BTreeSet::from([id.clone()]),
                id,
                weight,
                names: vec![NAMES[name].to_owned()],
                numeric: vec![x, z],
                categorical: vec![],
                group: if a { "A" } else { "B" }.to_owned(),
                label,
            }
        })
        .collect();
    Dataset::new(schema(), records).expect("generated rows are valid")
}

fn row() -> impl Strategy<Value = Row> {
    (
        any::<bool>(),
        any::<bool>(),
        0.05f64..20.0,
        0..NAMES.len(),
        (0..3u8).prop_map(f64::from),
        -5.0f64..5.0,
    )
}

/// Datasets in which both groups have positive and negative weight.
pub fn feasible_rows() -> impl Strategy<Value = Vec<Row>> {
    let anchors = prop::collection::vec(0.05f64..20.0, 4).prop_map(|w| {
        vec![
            (true, true, w[0], 0, 0.0, 0.0),
            (true, false, w[1], 1, 1.0, 0.0),
            (false, true, w[2], 2, 2.0, 0.0),
            (false, false, w[3], 3, 0.0, 1.0),
        ]
    });
    (anchors, prop::collection::vec(row(), 0..40)).prop_map(|(mut a, rest)| {
        a.extend(rest);
        a
    })
}

/// Rows whose integer-valued `x` makes exact duplicates common.
pub fn duplicate_prone_rows() -> impl Strategy<Value = Vec<Row>> {
    prop::collection::vec(row().prop_map(|r| (r.0, r.1, r.2, r.3, r.4, r.4)), 1..40)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// After reweighing both groups share one positive ratio, and reweighing the
/// output again changes nothing.
pub fn check_reweigh(rows: &[Row]) -> Result<(), TestCaseError> {
    let d = build(rows);
    for mode in [
        ReweighMode::UpweightPositives,
        ReweighMode::DownweightNegatives,
    ] {
        let strategy = ReweighStrategy::new(mode);
        let before = group_stats(&d).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let (out, _) = match reweigh(&d, &strategy) {
            Ok(v) => v,
            Err(e) => {
                let [a, b] = before.ratios();
                prop_assert!(a.max(b) >= 1.0, "unexpected failure {e} for ratios {a} {b}");
                continue;
            }
        };
        let [a, b] = group_stats(&out).unwrap().ratios();
        prop_assert!((a - b).abs() <= 1e-9, "{mode}: {a} vs {b}");
        let (again, _) = reweigh(&out, &strategy).unwrap();
        prop_assert_eq!(&again, &out);
    }
    Ok(())
}

pub fn tolerant_rules() -> MatchRules {
    MatchRules {
        default_tolerance: 0.5,
        ..MatchRules::default()
    }
}

pub fn check_conservation(rows: &[Row]) -> Result<(), TestCaseError> {
    let d = build(rows);
    let (out, log) = resolve(&d, None, &tolerant_rules(), &MergePolicy::default()).unwrap();
    prop_assert!(close(out.total_weight(), d.total_weight(), 1e-12));
    let folded: usize = log.entries.iter().map(|e| e.constituents.len() - 1).sum();
    prop_assert_eq!(out.len() + folded, d.len());
    Ok(())
}

/// Moves every record of block `b` to `x + 1000 * b`, so no match can cross
/// blocks, then compares blocked and unblocked resolution.
pub fn check_blocked_equivalence(rows: &[Row], blocks: &[usize]) -> Result<(), TestCaseError> {
    let shifted: Vec<Row> = rows
        .iter()
        .zip(blocks)
        .map(|(r, &b)| (r.0, r.1, r.2, r.3, r.4 + 1000.0 * b as f64, r.5))
        .collect();
    let d = build(&shifted);
    let nblocks = blocks.iter().max().map_or(0, |m| m + 1);
    let mut ids: Vec<Vec<String>> = vec![Vec::new(); nblocks];
    for (r, &b) in d.records().iter().zip(blocks) {
        ids[b].push(r.id.clone());
    }
    ids.retain(|b| !b.is_empty());
    let ca = ClusterAssignment::from_blocks(ids, None).unwrap();
    let rules = tolerant_rules();
    let policy = MergePolicy::default();
    let (blocked, blog) = resolve(&d, Some(&ca), &rules, &policy).unwrap();
    let (full, flog) = resolve(&d, None, &rules, &policy).unwrap();
    prop_assert_eq!(&blocked, &full);
    prop_assert_eq!(&blog.entries, &flog.entries);
    prop_assert!(blog.pair_comparisons <= flog.pair_comparisons);
    Ok(())
}

pub fn check_kmeans_monotone(points: &[Vec<f64>], k: usize) -> Result<(), TestCaseError> {
    let ids = (0..points.len()).map(|i| format!("p{i}")).collect();
    let fm = FeatureMatrix::from_rows(ids, points.to_vec()).unwrap();
    let k = k.clamp(1, points.len());
    let run = lloyd(&fm, points[..k].to_vec(), 100);
    for w in run.inertia_trace.windows(2) {
        prop_assert!(
            w[1] <= w[0] + 1e-9 * w[0].max(1.0),
            "{:?}",
            run.inertia_trace
        );
    }
    Ok(())
}

/// Analytic gradient against central differences.
pub fn check_gradient(
    rows: &[Vec<f64>],
    labels: &[bool],
    weights: &[f64],
    coef: &[f64],
    intercept: f64,
    l2: f64,
) -> Result<(), TestCaseError> {
    let ids = (0..rows.len()).map(|i| format!("p{i}")).collect();
    let fm = FeatureMatrix::from_rows(ids, rows.to_vec()).unwrap();
    let obj = Objective::new(&fm, labels, weights, l2).unwrap();
    let (g, gb) = obj.gradient(coef, intercept);
    let h = 1e-6;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-4);
    for j in 0..coef.len() {
        let mut plus = coef.to_vec();
        let mut minus = coef.to_vec();
        plus[j] += h;
        minus[j] -= h;
        let numeric = (obj.loss(&plus, intercept) - obj.loss(&minus, intercept)) / (2.0 * h);
        prop_assert!(
            rel(g[j], numeric) <= 1e-5,
            "coef {j}: {} vs {numeric}",
            g[j]
        );
    }
    let numeric = (obj.loss(coef, intercept + h) - obj.loss(coef, intercept - h)) / (2.0 * h);
    prop_assert!(rel(gb, numeric) <= 1e-5, "intercept: {gb} vs {numeric}");
    Ok(())
}

pub fn check_scale_invariance(rows: &[Row], c: f64) -> Result<(), TestCaseError> {
    let d = build(rows);
    let scaled = d
        .with_records(
            d.records()
                .iter()
                .map(|r| Record {
                    weight: r.weight * c,
                    ..r.clone()
                })
                .collect(),
        )
        .unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    };
    let (a, b) = match (train(&d, &cfg), train(&scaled, &cfg)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(_), Err(_)) => return Ok(()),
        (x, y) => return Err(TestCaseError::fail(format!("{x:?} vs {y:?}"))),
    };
    for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
        prop_assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
    }
    prop_assert!((a.intercept - b.intercept).abs() <= 1e-9);
    Ok(())
}

pub fn points() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..4).prop_flat_map(|dim| {
        prop::collection::vec(prop::collection::vec(-10.0f64..10.0, dim), 2..40)
    })
}

/// `(rows, labels, weights, coefficients, intercept, l2)`
pub type GradientCase = (Vec<Vec<f64>>, Vec<bool>, Vec<f64>, Vec<f64>, f64, f64);

pub fn gradient_case() -> impl Strategy<Value = GradientCase> {
    (1usize..4, 2usize..15).prop_flat_map(|(dim, n)| {
        (
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), n),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(0.1f64..5.0, n),
            prop::collection::vec(-2.0f64..2.0, dim),
            -2.0f64..2.0,
            0.0f64..0.1,
        )
    })
}

pub fn blocked_case() -> impl Strategy<Value = (Vec<Row>, Vec<usize>)> {
    duplicate_prone_rows().prop_flat_map(|rows| {
        let n = rows.len();
        (Just(rows), prop::collection::vec(0usize..4, n))
    })
}

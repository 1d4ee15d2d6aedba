//! Ordering benchmark and the accuracy-impact diagnostic.

use std::collections::HashSet;
use std::io::Write;

use crate::dataset::{format_float, Dataset};
use crate::error::{Error, Result};
use crate::harness::inject::{
    inject_duplicates, inject_poison, ordered_pair, DuplicateSpec, GroundTruth, PoisonSpec,
};
use crate::model::{evaluate, train, TrainConfig};
use crate::pipeline::{
    run_on_split, split_dataset, PipelineConfig, PipelineMode, PipelineReport, SplitConfig,
};

/// Shared data preparation for every benchmark row.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BenchSetup {
    pub split: SplitConfig,
    /// Injected into the training split only.
    pub duplicates: Option<DuplicateSpec>,
    pub poison: Option<PoisonSpec>,
}

/// Precision and recall; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Quality {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

impl Quality {
    fn from_counts(hits: usize, predicted: usize, actual: usize) -> Self {
        let ratio = |d: usize| (d > 0).then(|| hits as f64 / d as f64);
        Self {
            precision: ratio(predicted),
            recall: ratio(actual),
        }
    }
}

/// Scores flagged ids against injected poison.
pub fn sanitization_quality(flagged: &HashSet<String>, truth: &GroundTruth) -> Quality {
    let hits = truth
        .poison
        .iter()
        .filter(|id| flagged.contains(*id))
        .count();
    Quality::from_counts(hits, flagged.len(), truth.poison.len())
}

/// Pairwise scoring of merged groups against injected duplicate clusters.
pub fn resolution_quality(report: &PipelineReport, truth: &GroundTruth) -> Option<Quality> {
    let log = report.merge_log()?;
    let mut predicted = HashSet::new();
    for e in &log.entries {
        let members: Vec<&String> = e.constituents.iter().collect();
        for (i, a) in members.iter().enumerate() {
            for b in &members[i + 1..] {
                predicted.insert(ordered_pair(a, b));
            }
        }
    }
    let actual = truth.duplicate_pairs();
    let hits = predicted.intersection(&actual).count();
    Some(Quality::from_counts(hits, predicted.len(), actual.len()))
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub method: String,
    pub outcome: std::result::Result<PipelineReport, String>,
    pub sanitization: Option<Quality>,
    pub resolution: Option<Quality>,
}

#[derive(Debug, Clone)]
pub struct ComparisonTable {
    pub rows: Vec<BenchRow>,
    pub truth: GroundTruth,
}

fn opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_else(|| "n/a".into())
}

impl ComparisonTable {
    pub fn row(&self, method: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// `method,accuracy,fairness,runtime_s`, one line per row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["method", "accuracy", "fairness", "runtime_s"])?;
        for row in &self.rows {
            match &row.outcome {
                Ok(r) => w.write_record([
                    row.method.clone(),
                    format_float(r.metrics.accuracy),
                    r.metrics
                        .parity_ratio
                        .map(format_float)
                        .unwrap_or_else(|| "UNDEFINED".into()),
                    if r.stages.is_empty() {
                        "n/a".into()
                    } else {
                        format_float(r.preprocessing_seconds)
                    },
                ])?,
                Err(_) => w.write_record([row.method.as_str(), "FAILED", "FAILED", "FAILED"])?,
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Sanitization and entity-resolution precision/recall per row.
    pub fn write_quality_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "method",
            "sanitize_precision",
            "sanitize_recall",
            "er_precision",
            "er_recall",
        ])?;
        for row in &self.rows {
            let s = row.sanitization.unwrap_or_default();
            let c = row.resolution.unwrap_or_default();
            w.write_record([
                row.method.clone(),
                opt(s.precision),
                opt(s.recall),
                opt(c.precision),
                opt(c.recall),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<10} {:>9} {:>9} {:>10} {:>8} {:>8} {:>8} {:>8}\n",
            "method", "accuracy", "fairness", "runtime_s", "S_prec", "S_rec", "C_prec", "C_rec"
        );
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
        for row in &self.rows {
            match &row.outcome {
                Ok(r) => {
                    let s = row.sanitization.unwrap_or_default();
                    let c = row.resolution.unwrap_or_default();
                    out.push_str(&format!(
                        "{:<10} {:>9.4} {:>9} {:>10} {:>8} {:>8} {:>8} {:>8}\n",
                        row.method,
                        r.metrics.accuracy,
                        r.metrics.parity_display(),
                        r.runtime_display(),
                        cell(s.precision),
                        cell(s.recall),
                        cell(c.precision),
                        cell(c.recall),
                    ));
                }
                Err(e) => out.push_str(&format!("{:<10} FAILED: {e}\n", row.method)),
            }
        }
        out
    }
}

/// Splits once, injects into the training side, and returns
/// `(train, test, ground truth)`.
pub fn prepare(d: &Dataset, setup: &BenchSetup) -> Result<(Dataset, Dataset, GroundTruth)> {
    let (mut train_set, test_set) = split_dataset(d, &setup.split);
    let mut truth = GroundTruth::default();
    if let Some(spec) = &setup.duplicates {
        let (out, t) = inject_duplicates(&train_set, spec)?;
        train_set = out;
        truth = truth.merge(t);
    }
    if let Some(spec) = &setup.poison {
        let (out, t) = inject_poison(&train_set, spec)?;
        train_set = out;
        truth = truth.merge(t);
    }
    Ok((train_set, test_set, truth))
}

/// Runs every config on the same prepared data. A None row comes first; when
/// no config is a baseline one is derived from the first config.
pub fn bench_orderings(
    d: &Dataset,
    configs: &[(String, PipelineConfig)],
    setup: &BenchSetup,
) -> Result<ComparisonTable> {
    if configs.is_empty() {
        return Err(Error::Parameter(
            "bench needs at least one pipeline config".into(),
        ));
    }
    if d.is_empty() {
        return Err(Error::Parameter("bench input is empty".into()));
    }
    let mut ordered: Vec<(String, PipelineConfig)> = Vec::with_capacity(configs.len() + 1);
    match configs
        .iter()
        .position(|(_, c)| c.mode == PipelineMode::Baseline)
    {
        Some(i) => {
            ordered.push(configs[i].clone());
            ordered.extend(
                configs
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, c)| c.clone()),
            );
        }
        None => {
            ordered.push((
                "None".into(),
                configs[0].1.with_mode(PipelineMode::Baseline),
            ));
            ordered.extend(configs.iter().cloned());
        }
    }

    let (train_set, test_set, truth) = prepare(d, setup)?;
    let rows = ordered
        .into_iter()
        .map(|(method, cfg)| {
            let eval_set = if setup.split.test_fraction == 0.0 {
                &train_set
            } else {
                &test_set
            };
            match run_on_split(&train_set, eval_set, &cfg) {
                Ok(report) => {
                    let sanitization = report
                        .sanitization()
                        .map(|s| sanitization_quality(&s.flagged_ids(), &truth));
                    let resolution = resolution_quality(&report, &truth);
                    BenchRow {
                        method,
                        outcome: Ok(report),
                        sanitization,
                        resolution,
                    }
                }
                Err(e) => BenchRow {
                    method,
                    outcome: Err(e.to_string()),
                    sanitization: None,
                    resolution: None,
                },
            }
        })
        .collect();
    Ok(ComparisonTable { rows, truth })
}

/// Accuracy without `ids` minus accuracy with them, both evaluated on
/// `eval_set` with `ids` excluded.
pub fn impact_on_split(
    train_set: &Dataset,
    eval_set: &Dataset,
    ids: &HashSet<String>,
    cfg: &TrainConfig,
) -> Result<f64> {
    let eval_set = eval_set.without_ids(ids);
    if eval_set.is_empty() {
        return Err(Error::Parameter(
            "evaluation set is empty after removing ids".into(),
        ));
    }
    let with = evaluate(&train(train_set, cfg)?, &eval_set)?.accuracy;
    let without = evaluate(&train(&train_set.without_ids(ids), cfg)?, &eval_set)?.accuracy;
    Ok(without - with)
}

pub fn impact(
    d: &Dataset,
    ids: &HashSet<String>,
    split: &SplitConfig,
    cfg: &TrainConfig,
) -> Result<f64> {
    if let Some(missing) = ids.iter().find(|id| d.get(id).is_none()) {
        return Err(Error::Parameter(format!(
            "id `{missing}` is not in the dataset"
        )));
    }
    if split.test_fraction == 0.0 {
        return impact_on_split(d, d, ids, cfg);
    }
    let (train_set, test_set) = split_dataset(d, split);
    impact_on_split(&train_set, &test_set, ids, cfg)
}

//! Stage orchestration: sanitization (S), cleaning (C) and unfairness
//! mitigation (M) in a configured order, or the fused MLClean mode in which C
//! only compares records inside the clusters S produced.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{format_float, Dataset};
use crate::error::{Error, Result};
use crate::model::{evaluate, train, LinearModel, MetricsReport, TrainConfig};
use crate::resolve::{resolve, MatchRules, MergeLog, MergePolicy};
use crate::reweigh::{reweigh, ReweighReport, ReweighStrategy};
use crate::sanitize::{sanitize, SanitizationReport, SanitizeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Sanitize,
    Clean,
    Mitigate,
}

impl Stage {
    pub fn symbol(self) -> &'static str {
        match self {
            Stage::Sanitize => "S",
            Stage::Clean => "C",
            Stage::Mitigate => "M",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "S" => Ok(Stage::Sanitize),
            "C" => Ok(Stage::Clean),
            "M" => Ok(Stage::Mitigate),
            other => Err(Error::Parameter(format!(
                "unknown stage `{other}` (expected S, C or M)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PipelineMode {
    /// No preprocessing.
    Baseline,
    Sequence(Vec<Stage>),
    /// S and C fused over shared clusters, then M.
    MlClean,
}

impl PipelineMode {
    pub fn label(&self) -> String {
        match self {
            PipelineMode::Baseline => "None".into(),
            PipelineMode::Sequence(stages) if stages.len() == 1 => stages[0].to_string(),
            PipelineMode::Sequence(stages) => {
                let s: Vec<&str> = stages.iter().map(|s| s.symbol()).collect();
                format!("<{}>", s.join(","))
            }
            PipelineMode::MlClean => "MLClean".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let PipelineMode::Sequence(stages) = self {
            if stages.is_empty() {
                return Err(Error::Parameter(
                    "a stage sequence must not be empty".into(),
                ));
            }
            let mut seen = HashSet::new();
            if let Some(dup) = stages.iter().find(|s| !seen.insert(**s)) {
                return Err(Error::Parameter(format!(
                    "stage {dup} appears more than once"
                )));
            }
        }
        Ok(())
    }
}

impl FromStr for PipelineMode {
    type Err = Error;

    /// Accepts `None`, `MLClean`, or a comma-separated stage list with
    /// optional angle brackets (`S`, `<S,C,M>`, `M,S,C`).
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t.to_ascii_uppercase().as_str() {
            "NONE" | "BASELINE" => return Ok(PipelineMode::Baseline),
            "MLCLEAN" => return Ok(PipelineMode::MlClean),
            _ => {}
        }
        let inner = t
            .strip_prefix('<')
            .and_then(|x| x.strip_suffix('>'))
            .unwrap_or(t);
        let stages = inner
            .split(',')
            .filter(|x| !x.trim().is_empty())
            .map(Stage::from_str)
            .collect::<Result<Vec<_>>>()?;
        let mode = PipelineMode::Sequence(stages);
        mode.validate()?;
        Ok(mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub seed: u64,
    /// Fraction of records held out for evaluation. `0.0` evaluates on the
    /// unprocessed input instead.
    pub test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mode: PipelineMode,
    pub sanitize: SanitizeParams,
    pub match_rules: MatchRules,
    pub merge_policy: MergePolicy,
    pub reweigh: ReweighStrategy,
    pub train: TrainConfig,
    pub split: SplitConfig,
    /// Also sanitize the held-out split before evaluation.
    pub sanitize_test: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: PipelineMode::MlClean,
            sanitize: SanitizeParams::default(),
            match_rules: MatchRules::default(),
            merge_policy: MergePolicy::default(),
            reweigh: ReweighStrategy::default(),
            train: TrainConfig::default(),
            split: SplitConfig::default(),
            sanitize_test: false,
        }
    }
}

impl PipelineConfig {
    pub fn with_mode(&self, mode: PipelineMode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mode.validate()?;
        self.sanitize.policy.validate()?;
        self.match_rules.validate()?;
        self.train.validate()?;
        if !(0.0..1.0).contains(&self.split.test_fraction) {
            return Err(Error::Parameter("test_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Seeded shuffle split; both parts keep the input's record order.
pub fn split_dataset(d: &Dataset, split: &SplitConfig) -> (Dataset, Dataset) {
    let n = d.len();
    let n_test = ((n as f64) * split.test_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(split.seed));
    let test: HashSet<usize> = order[..n_test.min(n)].iter().copied().collect();
    let (mut tr, mut te) = (Vec::new(), Vec::new());
    for (i, r) in d.records().iter().enumerate() {
        if test.contains(&i) {
            te.push(r.clone());
        } else {
            tr.push(r.clone());
        }
    }
    (d.with_records_unchecked(tr), d.with_records_unchecked(te))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StageDelta {
    /// Ids that disappeared without being folded into a new record.
    pub removed: Vec<String>,
    /// New records formed from several input records: `(new id, input ids)`.
    pub merged: Vec<(String, Vec<String>)>,
    /// New records with no input counterpart.
    pub added: Vec<String>,
    /// Ids present on both sides whose weight changed.
    pub reweighted: Vec<String>,
    pub weight_before: f64,
    pub weight_after: f64,
}

impl StageDelta {
    pub fn weight_delta(&self) -> f64 {
        self.weight_after - self.weight_before
    }

    pub fn is_empty(&self) -> bool {
        self.removed.is_empty()
            && self.merged.is_empty()
            && self.added.is_empty()
            && self.reweighted.is_empty()
            && self.weight_delta() == 0.0
    }
}

pub fn stage_delta(before: &Dataset, after: &Dataset) -> StageDelta {
    let after_ids: HashSet<&str> = after.records().iter().map(|r| r.id.as_str()).collect();
    let before_pos = before.positions();
    let mut by_original: HashMap<&str, &str> = HashMap::new();
    for r in before.records() {
        for o in &r.provenance {
            by_original.insert(o.as_str(), r.id.as_str());
        }
    }

    let mut folded: HashSet<&str> = HashSet::new();
    let mut merged = Vec::new();
    let mut added = Vec::new();
    let mut reweighted = Vec::new();
    for r in after.records() {
        if let Some(&i) = before_pos.get(r.id.as_str()) {
            if before.records()[i].weight != r.weight {
                reweighted.push(r.id.clone());
            }
            continue;
        }
        let mut sources: Vec<&str> = r
            .provenance
            .iter()
            .filter_map(|o| by_original.get(o.as_str()).copied())
            .collect();
        sources.sort_by_key(|id| before_pos[id]);
        sources.dedup();
        if sources.is_empty() {
            added.push(r.id.clone());
        } else {
            folded.extend(sources.iter().copied());
            merged.push((
                r.id.clone(),
                sources.into_iter().map(str::to_owned).collect(),
            ));
        }
    }
    let removed = before
        .records()
        .iter()
        .filter(|r| !after_ids.contains(r.id.as_str()) && !folded.contains(r.id.as_str()))
        .map(|r| r.id.clone())
        .collect();

    StageDelta {
        removed,
        merged,
        added,
        reweighted,
        weight_before: before.total_weight(),
        weight_after: after.total_weight(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageDetail {
    Sanitize(SanitizationReport),
    Clean(MergeLog),
    Mitigate(ReweighReport),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: Stage,
    /// C ran on the clusters produced by the preceding S.
    pub fused: bool,
    pub input_count: usize,
    pub output_count: usize,
    pub delta: StageDelta,
    pub seconds: f64,
    /// Pair comparisons made by a C stage.
    pub pair_comparisons: Option<u64>,
    pub detail: StageDetail,
}

impl StageReport {
    pub fn name(&self) -> String {
        if self.fused {
            format!("{}(fused)", self.stage)
        } else {
            self.stage.to_string()
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub method: String,
    pub stages: Vec<StageReport>,
    pub metrics: MetricsReport,
    /// Preprocessing wall-clock; excludes training and evaluation.
    pub preprocessing_seconds: f64,
    pub total_seconds: f64,
    pub final_dataset: Dataset,
    pub model: LinearModel,
}

impl PipelineReport {
    pub fn stage(&self, stage: Stage) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn sanitization(&self) -> Option<&SanitizationReport> {
        self.stages.iter().find_map(|s| match &s.detail {
            StageDetail::Sanitize(r) => Some(r),
            _ => None,
        })
    }

    pub fn merge_log(&self) -> Option<&MergeLog> {
        self.stages.iter().find_map(|s| match &s.detail {
            StageDetail::Clean(r) => Some(r),
            _ => None,
        })
    }

    pub fn runtime_display(&self) -> String {
        if self.stages.is_empty() {
            "n/a".into()
        } else {
            format!("{:.3}", self.preprocessing_seconds)
        }
    }

    /// One Table-3 style row: `method,accuracy,fairness,runtime_s`.
    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["method", "accuracy", "fairness", "runtime_s"])?;
        w.write_record([
            self.method.clone(),
            format_float(self.metrics.accuracy),
            self.metrics
                .parity_ratio
                .map(format_float)
                .unwrap_or_else(|| "UNDEFINED".into()),
            if self.stages.is_empty() {
                "n/a".into()
            } else {
                format_float(self.preprocessing_seconds)
            },
        ])?;
        w.flush()?;
        Ok(())
    }

    pub fn write_stages_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "stage",
            "input_records",
            "output_records",
            "removed",
            "merged",
            "reweighted",
            "weight_delta",
            "seconds",
            "pair_comparisons",
        ])?;
        for s in &self.stages {
            w.write_record([
                s.name(),
                s.input_count.to_string(),
                s.output_count.to_string(),
                s.delta.removed.len().to_string(),
                s.delta.merged.len().to_string(),
                s.delta.reweighted.len().to_string(),
                format_float(s.delta.weight_delta()),
                format_float(s.seconds),
                s.pair_comparisons
                    .map(|c| c.to_string())
                    .unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("method: {}\n", self.method);
        out.push_str(&format!(
            "{:<10} {:>8} {:>8} {:>8} {:>8} {:>12} {:>10} {:>14}\n",
            "stage", "in", "out", "removed", "merged", "weight_delta", "seconds", "pairs"
        ));
        for s in &self.stages {
            out.push_str(&format!(
                "{:<10} {:>8} {:>8} {:>8} {:>8} {:>12.4} {:>10.4} {:>14}\n",
                s.name(),
                s.input_count,
                s.output_count,
                s.delta.removed.len(),
                s.delta.merged.len(),
                s.delta.weight_delta(),
                s.seconds,
                s.pair_comparisons
                    .map(|c| c.to_string())
                    .unwrap_or_else(|| "-".into()),
            ));
        }
        out.push_str(&format!(
            "accuracy {:.4}  fairness {}  runtime_s {}\n",
            self.metrics.accuracy,
            self.metrics.parity_display(),
            self.runtime_display()
        ));
        out
    }
}

fn stage_error(stage: Stage) -> impl FnOnce(Error) -> Error {
    move |e| Error::Stage {
        stage: stage.to_string(),
        source: Box::new(e),
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64()))
}

struct StageRunner<'a> {
    cfg: &'a PipelineConfig,
    reports: Vec<StageReport>,
}

impl StageRunner<'_> {
    fn push(
        &mut self,
        stage: Stage,
        fused: bool,
        before: &Dataset,
        after: &Dataset,
        seconds: f64,
        detail: StageDetail,
    ) {
        let pair_comparisons = match &detail {
            StageDetail::Clean(log) => Some(log.pair_comparisons),
            _ => None,
        };
        self.reports.push(StageReport {
            stage,
            fused,
            input_count: before.len(),
            output_count: after.len(),
            delta: stage_delta(before, after),
            seconds,
            pair_comparisons,
            detail,
        });
    }

    fn run_stage(&mut self, stage: Stage, d: &Dataset) -> Result<Dataset> {
        let cfg = self.cfg;
        let (out, seconds, detail) = match stage {
            Stage::Sanitize => {
                let ((out, rep), t) =
                    timed(|| sanitize(d, &cfg.sanitize)).map_err(stage_error(stage))?;
                (out, t, StageDetail::Sanitize(rep))
            }
            Stage::Clean => {
                let ((out, log), t) =
                    timed(|| resolve(d, None, &cfg.match_rules, &cfg.merge_policy))
                        .map_err(stage_error(stage))?;
                (out, t, StageDetail::Clean(log))
            }
            Stage::Mitigate => {
                let ((out, rep), t) =
                    timed(|| reweigh(d, &cfg.reweigh)).map_err(stage_error(stage))?;
                (out, t, StageDetail::Mitigate(rep))
            }
        };
        self.push(stage, false, d, &out, seconds, detail);
        Ok(out)
    }

    fn run_fused(&mut self, d: &Dataset) -> Result<Dataset> {
        let cfg = self.cfg;
        let ((sanitized, rep), t_s) =
            timed(|| sanitize(d, &cfg.sanitize)).map_err(stage_error(Stage::Sanitize))?;
        let ((cleaned, log), t_c) = timed(|| {
            resolve(
                &sanitized,
                Some(&rep.surviving),
                &cfg.match_rules,
                &cfg.merge_policy,
            )
        })
        .map_err(stage_error(Stage::Clean))?;
        self.push(
            Stage::Sanitize,
            false,
            d,
            &sanitized,
            t_s,
            StageDetail::Sanitize(rep),
        );
        self.push(
            Stage::Clean,
            true,
            &sanitized,
            &cleaned,
            t_c,
            StageDetail::Clean(log),
        );
        self.run_stage(Stage::Mitigate, &cleaned)
    }
}

/// Runs the configured preprocessing on `train` only.
pub fn preprocess(train: &Dataset, cfg: &PipelineConfig) -> Result<(Dataset, Vec<StageReport>)> {
    cfg.validate()?;
    let mut runner = StageRunner {
        cfg,
        reports: Vec::new(),
    };
    let out = match &cfg.mode {
        PipelineMode::Baseline => train.clone(),
        PipelineMode::Sequence(stages) => {
            let mut current = train.clone();
            for &stage in stages {
                current = runner.run_stage(stage, &current)?;
            }
            current
        }
        PipelineMode::MlClean => runner.run_fused(train)?,
    };
    Ok((out, runner.reports))
}

/// Preprocesses `train`, fits the model, and evaluates it on `eval`.
pub fn run_on_split(
    train_set: &Dataset,
    eval_set: &Dataset,
    cfg: &PipelineConfig,
) -> Result<PipelineReport> {
    let start = Instant::now();
    let (processed, stages) = preprocess(train_set, cfg)?;
    let preprocessing_seconds = stages.iter().map(|s| s.seconds).sum();

    let eval_set = if cfg.sanitize_test {
        sanitize(eval_set, &cfg.sanitize)
            .map_err(stage_error(Stage::Sanitize))?
            .0
    } else {
        eval_set.clone()
    };
    let model = train(&processed, &cfg.train)?;
    let metrics = evaluate(&model, &eval_set)?;
    Ok(PipelineReport {
        method: cfg.mode.label(),
        stages,
        metrics,
        preprocessing_seconds,
        total_seconds: start.elapsed().as_secs_f64(),
        final_dataset: processed,
        model,
    })
}

pub fn run_pipeline(d: &Dataset, cfg: &PipelineConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    if d.is_empty() {
        return Err(Error::Parameter("pipeline input is empty".into()));
    }
    if cfg.split.test_fraction == 0.0 {
        return run_on_split(d, d, cfg);
    }
    let (train_set, test_set) = split_dataset(d, &cfg.split);
    run_on_split(&train_set, &test_set, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fixtures::table1;
    use crate::reweigh::group_stats;

    fn table1_cfg(mode: PipelineMode) -> PipelineConfig {
        PipelineConfig {
            mode,
            sanitize: SanitizeParams {
                k: Some(2),
                ..SanitizeParams::default()
            },
            split: SplitConfig {
                seed: 0,
                test_fraction: 0.0,
            },
            ..PipelineConfig::default()
        }
    }

    fn seq(s: &str) -> PipelineMode {
        s.parse().unwrap()
    }

    #[test]
    fn mode_parsing_and_labels() {
        assert_eq!(
            seq("<S,C,M>"),
            PipelineMode::Sequence(vec![Stage::Sanitize, Stage::Clean, Stage::Mitigate])
        );
        assert_eq!(seq("M,S,C").label(), "<M,S,C>");
        assert_eq!(seq("S").label(), "S");
        assert_eq!(seq("MLClean"), PipelineMode::MlClean);
        assert_eq!(seq("None"), PipelineMode::Baseline);
        assert!("S,S".parse::<PipelineMode>().is_err());
        assert!("".parse::<PipelineMode>().is_err());
        assert!("X".parse::<PipelineMode>().is_err());
        assert!(PipelineMode::Sequence(vec![]).validate().is_err());
    }

    #[test]
    fn mlclean_table1_trace() {
        let report = run_pipeline(&table1(), &table1_cfg(PipelineMode::MlClean)).unwrap();
        let names: Vec<String> = report.stages.iter().map(StageReport::name).collect();
        assert_eq!(names, vec!["S", "C(fused)", "M"]);

        let s = &report.stages[0];
        assert_eq!(s.delta.removed, vec!["e6"]);
        assert_eq!(s.delta.weight_delta(), -1.0);

        let c = &report.stages[1];
        assert_eq!(
            c.delta.merged,
            vec![("m:e2+e3".to_owned(), vec!["e2".to_owned(), "e3".to_owned()])]
        );
        assert_eq!(c.delta.weight_delta(), 0.0);
        assert_eq!(c.pair_comparisons, Some(10));
        let StageDetail::Clean(log) = &c.detail else {
            panic!()
        };
        assert_eq!(log.entries[0].weight, 2.0);
        assert!(!log.entries[0].label);

        let m = &report.stages[2];
        assert_eq!(m.delta.reweighted, vec!["m:e2+e3"]);
        let fin = &report.final_dataset;
        assert_eq!(fin.get("m:e2+e3").unwrap().weight, 1.0);
        assert_eq!(group_stats(fin).unwrap().ratios(), [0.5, 0.5]);
        assert_eq!(report.metrics.counts, [3, 3]);
    }

    #[test]
    fn ordering_changes_final_fairness() {
        let scm = run_pipeline(&table1(), &table1_cfg(seq("S,C,M"))).unwrap();
        let [a, b] = group_stats(&scm.final_dataset).unwrap().ratios();
        assert!((a - b).abs() < 1e-9);

        let msc = run_pipeline(&table1(), &table1_cfg(seq("M,S,C"))).unwrap();
        let [m, f] = group_stats(&msc.final_dataset).unwrap().ratios();
        assert!((m - 2.0 / 3.0).abs() < 1e-9, "{m}");
        assert!((f - 0.5).abs() < 1e-9, "{f}");
    }

    #[test]
    fn reweigh_is_needed_again_after_cleaning() {
        let mut cfg = table1_cfg(seq("M,C"));
        cfg.merge_policy = MergePolicy::keep_one();
        let (after_mc, _) = preprocess(&table1(), &cfg).unwrap();
        let (again, report) = reweigh(&after_mc, &ReweighStrategy::default()).unwrap();
        assert_ne!(report.factors, [1.0, 1.0]);
        assert!(!stage_delta(&after_mc, &again).reweighted.is_empty());
    }

    #[test]
    fn mass_preserving_merge_keeps_reweigh_fixed_point() {
        let (after_mc, _) = preprocess(&table1(), &table1_cfg(seq("M,C"))).unwrap();
        let (again, report) = reweigh(&after_mc, &ReweighStrategy::default()).unwrap();
        assert_eq!(report.factors, [1.0, 1.0]);
        assert_eq!(again, after_mc);
    }

    #[test]
    fn mitigate_only_on_fair_data_keeps_weights() {
        let fair = table1().filter(|r| r.id != "e6" && r.id != "e3");
        let (out, stages) = preprocess(&fair, &table1_cfg(seq("M"))).unwrap();
        assert_eq!(out, fair);
        assert!(stages[0].delta.is_empty());
    }

    #[test]
    fn identity_delta_is_empty() {
        assert!(stage_delta(&table1(), &table1()).is_empty());
    }

    #[test]
    fn infeasible_stage_is_named() {
        let only_m = table1().filter(|r| r.group == "M");
        let err = preprocess(&only_m, &table1_cfg(seq("M"))).unwrap_err();
        assert!(
            matches!(&err, Error::Stage { stage, .. } if stage == "M"),
            "{err}"
        );
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn counts_reconcile_between_stages() {
        let report = run_pipeline(&table1(), &table1_cfg(seq("S,C,M"))).unwrap();
        for w in report.stages.windows(2) {
            assert_eq!(w[0].output_count, w[1].input_count);
        }
        assert_eq!(report.stages[0].input_count, 6);
        assert_eq!(
            report.stages.last().unwrap().output_count,
            report.final_dataset.len()
        );
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let d = table1();
        let cfg = SplitConfig {
            seed: 3,
            test_fraction: 0.5,
        };
        let (a, b) = split_dataset(&d, &cfg);
        assert_eq!(a.len(), 3);
        assert_eq!(b.len(), 3);
        let (a2, b2) = split_dataset(&d, &cfg);
        assert_eq!((a.clone(), b.clone()), (a2, b2));
        let ids: HashSet<&str> = a.ids().into_iter().chain(b.ids()).collect();
        assert_eq!(ids.len(), 6);
    }

    #[test]
    fn summary_csv_layout() {
        let report = run_pipeline(&table1(), &table1_cfg(PipelineMode::Baseline)).unwrap();
        let mut buf = Vec::new();
        report.write_summary_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("method,accuracy,fairness,runtime_s\nNone,"));
        assert!(text.trim_end().ends_with(",n/a"));
    }
}

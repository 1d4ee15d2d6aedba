//! Weighted logistic regression trained by full-batch gradient descent, and
//! the accuracy / demographic-parity metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::config::IniDocument;
use crate::dataset::{format_float, Dataset, Schema};
use crate::error::{Error, Result};
use crate::features::{CategoricalLevels, ColumnStats, FeatureMatrix, FeatureSpace};

/// Predicted or actual labels keyed by record id.
pub type Labels = BTreeMap<String, bool>;

const MAX_STEP_HALVINGS: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_lambda: f64,
    /// Unused by the deterministic zero-initialised solver; kept so a run is
    /// fully described by its config.
    pub seed: u64,
    pub convergence_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 500,
            l2_lambda: 1e-4,
            seed: 0,
            convergence_tol: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter("learning_rate must be positive".into()));
        }
        if !(self.l2_lambda >= 0.0) {
            return Err(Error::Parameter("l2_lambda must be >= 0".into()));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::Parameter("convergence_tol must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub space: FeatureSpace,
    pub threshold: f64,
}

/// Diagnostics from one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    /// Objective before the first step and after every accepted step.
    pub losses: Vec<f64>,
    /// Number of times the step size was halved to keep the loss from rising.
    pub step_halvings: u32,
    pub epochs_run: usize,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Training problem in encoded form: rows, labels, and weights normalised
/// to sum to one.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub features: &'a FeatureMatrix,
    pub labels: Vec<f64>,
    pub weights: Vec<f64>,
    pub l2_lambda: f64,
}

impl<'a> Objective<'a> {
    pub fn new(
        features: &'a FeatureMatrix,
        labels: &[bool],
        weights: &[f64],
        l2_lambda: f64,
    ) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Training("total example weight is zero".into()));
        }
        Ok(Self {
            features,
            labels: labels.iter().map(|&y| if y { 1.0 } else { 0.0 }).collect(),
            weights: weights.iter().map(|w| w / total).collect(),
            l2_lambda,
        })
    }

    fn margin(&self, i: usize, coef: &[f64], intercept: f64) -> f64 {
        self.features
            .row(i)
            .iter()
            .zip(coef)
            .map(|(x, c)| x * c)
            .sum::<f64>()
            + intercept
    }

    /// Weighted mean cross-entropy plus `lambda * |coef|^2`.
    pub fn loss(&self, coef: &[f64], intercept: f64) -> f64 {
        let data: f64 = (0..self.features.rows())
            .map(|i| {
                let z = self.margin(i, coef, intercept);
                let ce = if self.labels[i] > 0.5 {
                    softplus(-z)
                } else {
                    softplus(z)
                };
                self.weights[i] * ce
            })
            .sum();
        data + self.l2_lambda * coef.iter().map(|c| c * c).sum::<f64>()
    }

    /// Gradient with respect to `(coef, intercept)`.
    pub fn gradient(&self, coef: &[f64], intercept: f64) -> (Vec<f64>, f64) {
        let mut g = vec![0.0; coef.len()];
        let mut g0 = 0.0;
        for i in 0..self.features.rows() {
            let residual =
                self.weights[i] * (sigmoid(self.margin(i, coef, intercept)) - self.labels[i]);
            for (gj, x) in g.iter_mut().zip(self.features.row(i)) {
                *gj += residual * x;
            }
            g0 += residual;
        }
        for (gj, c) in g.iter_mut().zip(coef) {
            *gj += 2.0 * self.l2_lambda * c;
        }
        (g, g0)
    }
}

/// Gradient descent from zero. A step that would increase the loss is
/// retried with half the learning rate.
pub fn train_with_trace(d: &Dataset, cfg: &TrainConfig) -> Result<(LinearModel, TrainTrace)> {
    cfg.validate()?;
    if d.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let positives = d
        .records()
        .iter()
        .filter(|r| r.label && r.weight > 0.0)
        .count();
    let negatives = d
        .records()
        .iter()
        .filter(|r| !r.label && r.weight > 0.0)
        .count();
    if positives == 0 || negatives == 0 {
        return Err(Error::Training(
            "training set needs both labels with positive weight".into(),
        ));
    }

    let space = FeatureSpace::fit(d)?;
    let fm = space.transform(d)?;
    let labels: Vec<bool> = d.records().iter().map(|r| r.label).collect();
    let weights: Vec<f64> = d.records().iter().map(|r| r.weight).collect();
    let objective = Objective::new(&fm, &labels, &weights, cfg.l2_lambda)?;

    let mut coef = vec![0.0; fm.width()];
    let mut intercept = 0.0;
    let mut lr = cfg.learning_rate;
    let mut loss = objective.loss(&coef, intercept);
    let mut trace = TrainTrace {
        losses: vec![loss],
        step_halvings: 0,
        epochs_run: 0,
    };

    'epochs: for _ in 0..cfg.epochs {
        let (g, g0) = objective.gradient(&coef, intercept);
        let mut halvings = 0;
        let (next_coef, next_intercept, next_loss) = loop {
            let c: Vec<f64> = coef.iter().zip(&g).map(|(c, g)| c - lr * g).collect();
            let b = intercept - lr * g0;
            let l = objective.loss(&c, b);
            if l <= loss {
                break (c, b, l);
            }
            halvings += 1;
            trace.step_halvings += 1;
            if halvings > MAX_STEP_HALVINGS {
                break 'epochs;
            }
            lr /= 2.0;
        };
        let delta = loss - next_loss;
        coef = next_coef;
        intercept = next_intercept;
        loss = next_loss;
        trace.losses.push(loss);
        trace.epochs_run += 1;
        if delta.abs() < cfg.convergence_tol {
            break;
        }
    }

    if coef.iter().any(|c| !c.is_finite()) || !intercept.is_finite() {
        return Err(Error::Training("parameters diverged".into()));
    }
    Ok((
        LinearModel {
            coefficients: coef,
            intercept,
            space,
            threshold: 0.5,
        },
        trace,
    ))
}

pub fn train(d: &Dataset, cfg: &TrainConfig) -> Result<LinearModel> {
    train_with_trace(d, cfg).map(|(m, _)| m)
}

impl LinearModel {
    pub fn probability(&self, encoded: &[f64]) -> f64 {
        let z: f64 = encoded
            .iter()
            .zip(&self.coefficients)
            .map(|(x, c)| x * c)
            .sum::<f64>()
            + self.intercept;
        sigmoid(z)
    }

    pub fn probabilities(&self, d: &Dataset) -> Result<Vec<f64>> {
        let fm = self.space.transform(d)?;
        Ok(fm.iter_rows().map(|row| self.probability(row)).collect())
    }

    pub fn column_names(&self) -> Vec<String> {
        self.space.column_names()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# weighted logistic regression\n[model]\n");
        let _ = writeln!(out, "intercept = {}", format_float(self.intercept));
        let _ = writeln!(out, "threshold = {}", format_float(self.threshold));
        out.push_str("\n[coefficients]\n");
        for (name, c) in self.column_names().iter().zip(&self.coefficients) {
            let _ = writeln!(out, "{name} = {}", format_float(*c));
        }
        out.push_str("\n[numeric_stats]\n");
        for s in &self.space.numeric {
            let _ = writeln!(
                out,
                "{} = {},{}",
                s.name,
                format_float(s.mean),
                format_float(s.std)
            );
        }
        out.push_str("\n[categorical_levels]\n");
        for c in &self.space.categorical {
            let _ = writeln!(out, "{} = {}", c.name, c.levels.join(";"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc = IniDocument::parse(text)?;
        let num = |section: &str, key: &str| -> Result<f64> {
            let (v, line) = doc
                .get(section, key)
                .ok_or_else(|| Error::config(0, format!("missing [{section}] {key}")))?;
            v.parse()
                .map_err(|_| Error::config(line, format!("`{v}` is not a number")))
        };
        let intercept = num("model", "intercept")?;
        let threshold = num("model", "threshold")?;

        let mut numeric = Vec::new();
        for (name, value, line) in doc.entries("numeric_stats") {
            let (m, s) = value
                .split_once(',')
                .ok_or_else(|| Error::config(line, "expected `mean,std`"))?;
            let parse = |t: &str| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::config(line, format!("`{t}` is not a number")))
            };
            numeric.push(ColumnStats {
                name: name.to_owned(),
                mean: parse(m)?,
                std: parse(s)?,
            });
        }
        let categorical = doc
            .entries("categorical_levels")
            .map(|(name, value, _)| CategoricalLevels {
                name: name.to_owned(),
                levels: if value.is_empty() {
                    Vec::new()
                } else {
                    value.split(';').map(str::to_owned).collect()
                },
            })
            .collect();
        let space = FeatureSpace {
            numeric,
            categorical,
        };

        let coefs: BTreeMap<&str, (&str, usize)> = doc
            .entries("coefficients")
            .map(|(k, v, l)| (k, (v, l)))
            .collect();
        let names = space.column_names();
        if coefs.len() != names.len() {
            return Err(Error::config(
                0,
                "coefficient count does not match feature columns",
            ));
        }
        let coefficients = names
            .iter()
            .map(|n| {
                let (v, line) = coefs
                    .get(n.as_str())
                    .ok_or_else(|| Error::config(0, format!("missing coefficient `{n}`")))?;
                v.parse::<f64>()
                    .map_err(|_| Error::config(*line, format!("`{v}` is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            coefficients,
            intercept,
            space,
            threshold,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Label 1 iff the predicted probability is at least the threshold.
pub fn predict(model: &LinearModel, d: &Dataset) -> Result<Labels> {
    let probs = model.probabilities(d)?;
    Ok(d.records()
        .iter()
        .zip(probs)
        .map(|(r, p)| (r.id.clone(), p >= model.threshold))
        .collect())
}

pub fn actual_labels(d: &Dataset) -> Labels {
    d.records()
        .iter()
        .map(|r| (r.id.clone(), r.label))
        .collect()
}

pub fn groups_of(d: &Dataset) -> BTreeMap<String, String> {
    d.records()
        .iter()
        .map(|r| (r.id.clone(), r.group.clone()))
        .collect()
}

/// Unweighted fraction of ids whose predicted label equals the actual one.
pub fn accuracy(predicted: &Labels, actual: &Labels) -> Result<f64> {
    if actual.is_empty() {
        return Err(Error::Parameter("accuracy of an empty set".into()));
    }
    if predicted.len() != actual.len() || !predicted.keys().eq(actual.keys()) {
        return Err(Error::Parameter(
            "predicted and actual id sets differ".into(),
        ));
    }
    let correct = predicted
        .values()
        .zip(actual.values())
        .filter(|(p, a)| p == a)
        .count();
    Ok(correct as f64 / actual.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRates {
    /// Positive-prediction rate per group in schema order `(A, B)`.
    pub rates: [f64; 2],
    pub counts: [usize; 2],
}

impl GroupRates {
    /// `rate_A / rate_B`, or `None` (undefined) when `rate_B` is zero.
    pub fn parity_ratio(&self) -> Option<f64> {
        if self.rates[1] == 0.0 {
            None
        } else {
            Some(self.rates[0] / self.rates[1])
        }
    }
}

pub fn group_rates(
    predicted: &Labels,
    groups: &BTreeMap<String, String>,
    schema: &Schema,
) -> Result<GroupRates> {
    let mut positives = [0usize; 2];
    let mut counts = [0usize; 2];
    for (id, &p) in predicted {
        let g = groups
            .get(id)
            .ok_or_else(|| Error::Parameter(format!("no group for id `{id}`")))?;
        let idx = if g == schema.group_a() {
            0
        } else if g == schema.group_b() {
            1
        } else {
            return Err(Error::Parameter(format!("unknown group `{g}`")));
        };
        counts[idx] += 1;
        positives[idx] += usize::from(p);
    }
    if counts.contains(&0) {
        return Err(Error::Parameter(
            "both sensitive groups must be present".into(),
        ));
    }
    Ok(GroupRates {
        rates: [
            positives[0] as f64 / counts[0] as f64,
            positives[1] as f64 / counts[1] as f64,
        ],
        counts,
    })
}

/// Demographic parity ratio with orientation fixed by the schema. Values
/// above 1 are legal.
pub fn parity_ratio(
    predicted: &Labels,
    groups: &BTreeMap<String, String>,
    schema: &Schema,
) -> Result<Option<f64>> {
    Ok(group_rates(predicted, groups, schema)?.parity_ratio())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// `None` when group B has no positive predictions.
    pub parity_ratio: Option<f64>,
    pub positive_rates: [f64; 2],
    pub counts: [usize; 2],
}

impl MetricsReport {
    pub fn parity_display(&self) -> String {
        match self.parity_ratio {
            Some(r) => format!("{r:.3}"),
            None => "UNDEFINED".into(),
        }
    }
}

pub fn evaluate(model: &LinearModel, d: &Dataset) -> Result<MetricsReport> {
    let predicted = predict(model, d)?;
    let acc = accuracy(&predicted, &actual_labels(d))?;
    let rates = group_rates(&predicted, &groups_of(d), d.schema())?;
    Ok(MetricsReport {
        accuracy: acc,
        parity_ratio: rates.parity_ratio(),
        positive_rates: rates.rates,
        counts: rates.counts,
    })
}

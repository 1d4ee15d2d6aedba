//! Sectioned `key = value` configuration files.
//!
//! ```text
//! # comment
//! [schema]
//! id = ID
//! names = Name
//! numeric = Age
//! categorical = Gender
//! sensitive = Gender
//! groups = M, F
//! label = Label
//!
//! [pipeline]
//! mode = MLClean
//! ```
//!
//! Lists are comma separated. Bench method lists are separated by `;` since a
//! single method may itself be a comma-separated stage order.

use std::collections::HashSet;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::Schema;
use crate::error::{Error, Result};
use crate::harness::{DuplicateSpec, PoisonSpec};
use crate::pipeline::{PipelineConfig, PipelineMode};
use crate::resolve::{NameRule, WeightMode};
use crate::reweigh::ReweighMode;

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Section {
    name: String,
    line: usize,
    entries: Vec<Entry>,
}

/// Parsed but untyped configuration text.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IniDocument {
    sections: Vec<Section>,
}

impl IniDocument {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<Section> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            if let Some(rest) = t.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::config(line, "unterminated section header"))?
                    .trim();
                if name.is_empty() {
                    return Err(Error::config(line, "empty section name"));
                }
                if sections.iter().any(|s| s.name == name) {
                    return Err(Error::config(
                        line,
                        format!("section [{name}] appears twice"),
                    ));
                }
                sections.push(Section {
                    name: name.to_owned(),
                    line,
                    entries: Vec::new(),
                });
                continue;
            }
            let (key, value) = t
                .split_once('=')
                .ok_or_else(|| Error::config(line, format!("expected `key = value`, got `{t}`")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::config(line, "empty key"));
            }
            let section = sections
                .last_mut()
                .ok_or_else(|| Error::config(line, "key outside of any section"))?;
            if section.entries.iter().any(|e| e.key == key) {
                return Err(Error::config(
                    line,
                    format!("duplicate key `{key}` in [{}]", section.name),
                ));
            }
            section.entries.push(Entry {
                key: key.to_owned(),
                value: value.trim().to_owned(),
                line,
            });
        }
        Ok(Self { sections })
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|s| s.name.as_str())
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.iter().any(|s| s.name == section)
    }

    /// Value and 1-based line number.
    pub fn get(&self, section: &str, key: &str) -> Option<(&str, usize)> {
        self.sections
            .iter()
            .find(|s| s.name == section)?
            .entries
            .iter()
            .find(|e| e.key == key)
            .map(|e| (e.value.as_str(), e.line))
    }

    /// `(key, value, line)` in file order.
    pub fn entries<'a>(
        &'a self,
        section: &'a str,
    ) -> impl Iterator<Item = (&'a str, &'a str, usize)> + 'a {
        self.sections
            .iter()
            .filter(move |s| s.name == section)
            .flat_map(|s| s.entries.iter())
            .map(|e| (e.key.as_str(), e.value.as_str(), e.line))
    }
}

fn parse_value<T: FromStr>(value: &str, line: usize, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(line, format!("`{value}` is not a valid {what}")))
}

fn parse_f64(value: &str, line: usize) -> Result<f64> {
    match value.to_ascii_lowercase().as_str() {
        "inf" | "infinity" => Ok(f64::INFINITY),
        _ => parse_value(value, line, "number"),
    }
}

fn parse_bool(value: &str, line: usize) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(line, format!("`{value}` is not a boolean"))),
    }
}

fn parse_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

fn unknown_key(section: &str, key: &str, line: usize) -> Error {
    Error::config(line, format!("unknown key `{key}` in [{section}]"))
}

fn parse_schema(doc: &IniDocument) -> Result<Schema> {
    let section_line = doc
        .sections
        .iter()
        .find(|s| s.name == "schema")
        .map_or(0, |s| s.line);
    let mut id = None;
    let mut weight = None;
    let mut names = Vec::new();
    let mut numeric = Vec::new();
    let mut categorical = Vec::new();
    let mut sensitive = None;
    let mut groups = None;
    let mut label = None;
    for (key, value, line) in doc.entries("schema") {
        match key {
            "id" => id = Some(value.to_owned()),
            "weight" => weight = Some(value.to_owned()).filter(|v| !v.is_empty()),
            "names" => names = parse_list(value),
            "numeric" => numeric = parse_list(value),
            "categorical" => categorical = parse_list(value),
            "sensitive" => sensitive = Some(value.to_owned()),
            "groups" => {
                let g = parse_list(value);
                if g.len() != 2 {
                    return Err(Error::config(line, "groups needs exactly two values"));
                }
                groups = Some((g[0].clone(), g[1].clone()));
            }
            "label" => label = Some(value.to_owned()),
            _ => return Err(unknown_key("schema", key, line)),
        }
    }
    let require = |v: Option<String>, key: &str| {
        v.ok_or_else(|| Error::config(section_line, format!("[schema] needs `{key}`")))
    };
    let schema = Schema {
        id_column: require(id, "id")?,
        weight_column: weight,
        name_columns: names,
        numeric_features: numeric,
        categorical_features: categorical,
        sensitive_column: require(sensitive, "sensitive")?,
        sensitive_groups: groups
            .ok_or_else(|| Error::config(section_line, "[schema] needs `groups`"))?,
        label_column: require(label, "label")?,
    };
    schema.validate()?;
    Ok(schema)
}

fn parse_reweigh_mode(value: &str, line: usize) -> Result<ReweighMode> {
    match value.to_ascii_uppercase().as_str() {
        "UPWEIGHT_POSITIVES" => Ok(ReweighMode::UpweightPositives),
        "DOWNWEIGHT_NEGATIVES" => Ok(ReweighMode::DownweightNegatives),
        _ => Err(Error::config(
            line,
            format!("unknown reweigh mode `{value}`"),
        )),
    }
}

fn parse_mode(value: &str, line: usize) -> Result<PipelineMode> {
    value
        .parse()
        .map_err(|e: Error| Error::config(line, format!("invalid pipeline mode `{value}`: {e}")))
}

fn apply_pipeline_sections(doc: &IniDocument, cfg: &mut PipelineConfig) -> Result<()> {
    for (key, value, line) in doc.entries("sanitize") {
        let s = &mut cfg.sanitize;
        match key {
            "k" => {
                s.k = if value.eq_ignore_ascii_case("auto") {
                    None
                } else {
                    Some(parse_value(value, line, "cluster count")?)
                }
            }
            "seed" => s.seed = parse_value(value, line, "seed")?,
            "max_iter" => s.max_iter = parse_value(value, line, "iteration count")?,
            "min_cluster_size" => s.policy.min_cluster_size = parse_value(value, line, "size")?,
            "min_cluster_fraction" => s.policy.min_cluster_fraction = parse_f64(value, line)?,
            "distance_multiplier" => s.policy.distance_multiplier = parse_f64(value, line)?,
            "action" if value.eq_ignore_ascii_case("remove") => {}
            _ => return Err(unknown_key("sanitize", key, line)),
        }
    }
    for (key, value, line) in doc.entries("resolve") {
        let r = &mut cfg.match_rules;
        match key {
            "name_rule" => {
                r.name_rule = match value.to_ascii_uppercase().as_str() {
                    "EXACT" => NameRule::Exact,
                    "EXACT_OR_ABBREVIATION" | "EXACT_OR_PREFIX" => NameRule::ExactOrAbbreviation,
                    _ => return Err(Error::config(line, format!("unknown name rule `{value}`"))),
                }
            }
            "min_prefix" => r.min_prefix = parse_value(value, line, "length")?,
            "tolerance" => r.default_tolerance = parse_f64(value, line)?,
            "require_same_group" => r.require_same_group = parse_bool(value, line)?,
            "weight_mode" => {
                cfg.merge_policy.weight_mode = match value.to_ascii_uppercase().as_str() {
                    "SUM_WEIGHTS" => WeightMode::SumWeights,
                    "KEEP_ONE" => WeightMode::KeepOne,
                    _ => {
                        return Err(Error::config(
                            line,
                            format!("unknown weight mode `{value}`"),
                        ))
                    }
                }
            }
            _ => match key.strip_prefix("tolerance.") {
                Some(feature) if !feature.is_empty() => {
                    r.tolerances
                        .insert(feature.to_owned(), parse_f64(value, line)?);
                }
                _ => return Err(unknown_key("resolve", key, line)),
            },
        }
    }
    for (key, value, line) in doc.entries("reweigh") {
        match key {
            "mode" => cfg.reweigh.mode = parse_reweigh_mode(value, line)?,
            "reference" if value.eq_ignore_ascii_case("MAX_RATIO_GROUP") => {}
            _ => return Err(unknown_key("reweigh", key, line)),
        }
    }
    for (key, value, line) in doc.entries("train") {
        let t = &mut cfg.train;
        match key {
            "learning_rate" => t.learning_rate = parse_f64(value, line)?,
            "epochs" => t.epochs = parse_value(value, line, "epoch count")?,
            "l2_lambda" => t.l2_lambda = parse_f64(value, line)?,
            "seed" => t.seed = parse_value(value, line, "seed")?,
            "convergence_tol" => t.convergence_tol = parse_f64(value, line)?,
            _ => return Err(unknown_key("train", key, line)),
        }
    }
    for (key, value, line) in doc.entries("pipeline") {
        match key {
            "mode" => cfg.mode = parse_mode(value, line)?,
            "split_seed" => cfg.split.seed = parse_value(value, line, "seed")?,
            "test_fraction" => cfg.split.test_fraction = parse_f64(value, line)?,
            "sanitize_test" => cfg.sanitize_test = parse_bool(value, line)?,
            _ => return Err(unknown_key("pipeline", key, line)),
        }
    }
    Ok(())
}

fn parse_duplicates(doc: &IniDocument) -> Result<DuplicateSpec> {
    let mut spec = DuplicateSpec::default();
    for (key, value, line) in doc.entries("duplicates") {
        match key {
            "rate" => spec.rate = parse_f64(value, line)?,
            "zipf_s" => spec.zipf_s = parse_f64(value, line)?,
            "max_copies" => spec.max_copies = parse_value(value, line, "count")?,
            "abbreviation_prob" => spec.abbreviation_prob = parse_f64(value, line)?,
            "min_prefix" => spec.min_prefix = parse_value(value, line, "length")?,
            "jitter" => spec.jitter = parse_f64(value, line)?,
            "seed" => spec.seed = parse_value(value, line, "seed")?,
            _ => return Err(unknown_key("duplicates", key, line)),
        }
    }
    Ok(spec)
}

fn parse_poison(doc: &IniDocument) -> Result<PoisonSpec> {
    let mut spec = PoisonSpec::default();
    for (key, value, line) in doc.entries("poison") {
        match key {
            "epsilon" => spec.epsilon = parse_f64(value, line)?,
            "magnitude" => spec.magnitude = parse_f64(value, line)?,
            "label_mode" if value.eq_ignore_ascii_case("FLIP_MAJORITY") => {}
            "seed" => spec.seed = parse_value(value, line, "seed")?,
            _ => return Err(unknown_key("poison", key, line)),
        }
    }
    Ok(spec)
}

/// The methods compared by `bench` when none are configured.
pub fn default_bench_methods() -> Vec<PipelineMode> {
    ["None", "S", "C", "M", "M,S,C", "S,C,M", "MLClean"]
        .iter()
        .map(|m| m.parse().expect("valid built-in mode"))
        .collect()
}

/// Typed view of a configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub schema: Option<Schema>,
    pub pipeline: PipelineConfig,
    /// Present when the file has a `[duplicates]` section.
    pub duplicates: Option<DuplicateSpec>,
    /// Present when the file has a `[poison]` section.
    pub poison: Option<PoisonSpec>,
    pub bench_methods: Vec<PipelineMode>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            schema: None,
            pipeline: PipelineConfig::default(),
            duplicates: None,
            poison: None,
            bench_methods: default_bench_methods(),
        }
    }
}

const SECTIONS: [&str; 9] = [
    "schema",
    "sanitize",
    "resolve",
    "reweigh",
    "train",
    "pipeline",
    "duplicates",
    "poison",
    "bench",
];

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let doc = IniDocument::parse(text)?;
        for s in &doc.sections {
            if !SECTIONS.contains(&s.name.as_str()) {
                return Err(Error::config(
                    s.line,
                    format!("unknown section [{}]", s.name),
                ));
            }
        }
        let mut cfg = Config::default();
        if doc.has_section("schema") {
            cfg.schema = Some(parse_schema(&doc)?);
        }
        apply_pipeline_sections(&doc, &mut cfg.pipeline)?;
        if doc.has_section("duplicates") {
            cfg.duplicates = Some(parse_duplicates(&doc)?);
        }
        if doc.has_section("poison") {
            cfg.poison = Some(parse_poison(&doc)?);
        }
        for (key, value, line) in doc.entries("bench") {
            match key {
                "methods" => {
                    let methods = value
                        .split(';')
                        .map(str::trim)
                        .filter(|m| !m.is_empty())
                        .map(|m| parse_mode(m, line))
                        .collect::<Result<Vec<_>>>()?;
                    if methods.is_empty() {
                        return Err(Error::config(
                            line,
                            "methods must list at least one pipeline",
                        ));
                    }
                    let mut seen = HashSet::new();
                    if let Some(dup) = methods.iter().find(|m| !seen.insert(m.label())) {
                        return Err(Error::config(
                            line,
                            format!("method {} is listed twice", dup.label()),
                        ));
                    }
                    cfg.bench_methods = methods;
                }
                _ => return Err(unknown_key("bench", key, line)),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Overrides every seed in the configuration.
    pub fn set_seed(&mut self, seed: u64) {
        self.pipeline.sanitize.seed = seed;
        self.pipeline.split.seed = seed;
        self.pipeline.train.seed = seed;
        if let Some(d) = &mut self.duplicates {
            d.seed = seed;
        }
        if let Some(p) = &mut self.poison {
            p.seed = seed;
        }
    }

    pub fn require_schema(&self) -> Result<&Schema> {
        self.schema
            .as_ref()
            .ok_or_else(|| Error::config(0, "the configuration has no [schema] section"))
    }
}

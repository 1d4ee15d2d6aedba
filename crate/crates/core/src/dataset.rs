//! Tabular data model and CSV ingestion.
//!
//! A [`Dataset`] is an ordered list of [`Record`]s together with the
//! [`Schema`] that assigns every CSV column a role. Datasets are treated as
//! immutable values: every preprocessing stage builds a new one.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Column that carries merge provenance in saved datasets.
pub const PROVENANCE_COLUMN: &str = "provenance";

/// Weight column name used when the schema does not name one.
pub const DEFAULT_WEIGHT_COLUMN: &str = "weight";

const PROVENANCE_SEPARATOR: char = ';';

/// Column roles for a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub id_column: String,
    /// When the column is absent from a file every weight defaults to 1.0.
    pub weight_column: Option<String>,
    /// String fields compared by entity resolution.
    pub name_columns: Vec<String>,
    pub numeric_features: Vec<String>,
    pub categorical_features: Vec<String>,
    /// May coincide with one of the categorical features.
    pub sensitive_column: String,
    /// `(groupA, groupB)`; fixes the orientation of the parity ratio.
    pub sensitive_groups: (String, String),
    pub label_column: String,
}

impl Schema {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let mut roles: Vec<&str> = vec![self.id_column.as_str(), self.label_column.as_str()];
        roles.push(self.weight_column_name());
        roles.extend(self.name_columns.iter().map(String::as_str));
        roles.extend(self.numeric_features.iter().map(String::as_str));
        roles.extend(self.categorical_features.iter().map(String::as_str));
        if !self.sensitive_is_categorical() {
            roles.push(self.sensitive_column.as_str());
        }
        for name in roles {
            if name.is_empty() {
                return Err(Error::Schema("empty column name".into()));
            }
            if name == PROVENANCE_COLUMN {
                return Err(Error::Schema(format!(
                    "column name `{PROVENANCE_COLUMN}` is reserved"
                )));
            }
            if !seen.insert(name) {
                return Err(Error::Schema(format!(
                    "column `{name}` is used more than once"
                )));
            }
        }
        let (a, b) = &self.sensitive_groups;
        if a.is_empty() || b.is_empty() || a == b {
            return Err(Error::Schema(format!(
                "sensitive_groups must be two distinct values, got ({a}, {b})"
            )));
        }
        Ok(())
    }

    pub fn weight_column_name(&self) -> &str {
        self.weight_column
            .as_deref()
            .unwrap_or(DEFAULT_WEIGHT_COLUMN)
    }

    pub fn sensitive_is_categorical(&self) -> bool {
        self.categorical_features.contains(&self.sensitive_column)
    }

    pub fn group_a(&self) -> &str {
        &self.sensitive_groups.0
    }

    pub fn group_b(&self) -> &str {
        &self.sensitive_groups.1
    }

    pub fn has_group(&self, group: &str) -> bool {
        group == self.sensitive_groups.0 || group == self.sensitive_groups.1
    }

    /// Header written by [`save_dataset`].
    pub fn output_header(&self) -> Vec<String> {
        let mut header = vec![self.id_column.clone(), self.weight_column_name().to_owned()];
        header.extend(self.name_columns.iter().cloned());
        header.extend(self.numeric_features.iter().cloned());
        header.extend(self.categorical_features.iter().cloned());
        if !self.sensitive_is_categorical() {
            header.push(self.sensitive_column.clone());
        }
        header.push(self.label_column.clone());
        header.push(PROVENANCE_COLUMN.to_owned());
        header
    }
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    pub weight: f64,
    pub names: Vec<String>,
    pub numeric: Vec<f64>,
    pub categorical: Vec<String>,
    pub group: String,
    pub label: bool,
    /// Original ids folded into this record; `{id}` for unmerged records.
    pub provenance: BTreeSet<String>,
}

impl Record {
    pub fn label_value(&self) -> u8 {
        u8::from(self.label)
    }

    pub fn is_merged(&self) -> bool {
        self.provenance.len() > 1
    }

    /// Smallest original id in lexicographic order.
    pub fn min_original_id(&self) -> &str {
        self.provenance
            .iter()
            .next()
            .map(String::as_str)
            .unwrap_or(self.id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Schema,
    records: Vec<Record>,
}

impl Dataset {
    /// Builds a dataset, checking id uniqueness and schema conformance.
    pub fn new(schema: Schema, records: Vec<Record>) -> Result<Self> {
        schema.validate()?;
        let mut ids = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            let row = i + 1;
            if !ids.insert(r.id.as_str()) {
                return Err(Error::validation(
                    row,
                    Some(&schema.id_column),
                    format!("duplicate id `{}`", r.id),
                ));
            }
            check_record(&schema, r, row)?;
        }
        Ok(Self { schema, records })
    }

    /// Same as [`Dataset::new`] but skips conformance checks. Callers must
    /// only pass records derived from an already validated dataset.
    pub(crate) fn from_parts_unchecked(schema: Schema, records: Vec<Record>) -> Self {
        debug_assert!({
            let mut ids = HashSet::new();
            records.iter().all(|r| ids.insert(r.id.clone()))
        });
        Self { schema, records }
    }

    pub fn empty(schema: Schema) -> Result<Self> {
        Self::new(schema, Vec::new())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn into_records(self) -> Vec<Record> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.records.iter().map(|r| r.weight).sum()
    }

    /// New dataset with the same schema, keeping records for which `keep`
    /// returns true.
    pub fn filter(&self, mut keep: impl FnMut(&Record) -> bool) -> Dataset {
        let records = self.records.iter().filter(|r| keep(r)).cloned().collect();
        Dataset::from_parts_unchecked(self.schema.clone(), records)
    }

    pub fn without_ids(&self, ids: &HashSet<String>) -> Dataset {
        self.filter(|r| !ids.contains(&r.id))
    }

    /// Replaces the records, re-running validation.
    pub fn with_records(&self, records: Vec<Record>) -> Result<Dataset> {
        Dataset::new(self.schema.clone(), records)
    }

    pub(crate) fn with_records_unchecked(&self, records: Vec<Record>) -> Dataset {
        Dataset::from_parts_unchecked(self.schema.clone(), records)
    }

    /// Index of each id in record order.
    pub fn positions(&self) -> HashMap<&str, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect()
    }
}

fn check_record(schema: &Schema, r: &Record, row: usize) -> Result<()> {
    if r.id.is_empty() {
        return Err(Error::validation(row, Some(&schema.id_column), "empty id"));
    }
    if !(r.weight >= 0.0 && r.weight.is_finite()) {
        return Err(Error::validation(
            row,
            Some(schema.weight_column_name()),
            format!("weight must be finite and nonnegative, got {}", r.weight),
        ));
    }
    if r.names.len() != schema.name_columns.len()
        || r.numeric.len() != schema.numeric_features.len()
        || r.categorical.len() != schema.categorical_features.len()
    {
        return Err(Error::validation(
            row,
            None,
            "record arity does not match schema",
        ));
    }
    if let Some(j) = r.numeric.iter().position(|v| !v.is_finite()) {
        return Err(Error::validation(
            row,
            Some(&schema.numeric_features[j]),
            "non-finite value",
        ));
    }
    if !schema.has_group(&r.group) {
        return Err(Error::validation(
            row,
            Some(&schema.sensitive_column),
            format!(
                "group `{}` is not one of the schema's sensitive groups",
                r.group
            ),
        ));
    }
    if r.provenance.is_empty() {
        return Err(Error::validation(
            row,
            Some(PROVENANCE_COLUMN),
            "empty provenance",
        ));
    }
    if r.provenance.len() == 1 && !r.provenance.contains(&r.id) {
        return Err(Error::validation(
            row,
            Some(PROVENANCE_COLUMN),
            "unmerged record must list its own id as provenance",
        ));
    }
    Ok(())
}

struct ColumnIndex {
    id: usize,
    weight: Option<usize>,
    names: Vec<usize>,
    numeric: Vec<usize>,
    categorical: Vec<usize>,
    sensitive: usize,
    label: usize,
    provenance: Option<usize>,
}

impl ColumnIndex {
    fn resolve(schema: &Schema, header: &csv::StringRecord) -> Result<Self> {
        let position: HashMap<&str, usize> =
            header.iter().enumerate().map(|(i, h)| (h, i)).collect();
        let find = |name: &str| -> Result<usize> {
            position
                .get(name)
                .copied()
                .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
        };
        let all =
            |names: &[String]| -> Result<Vec<usize>> { names.iter().map(|n| find(n)).collect() };
        Ok(Self {
            id: find(&schema.id_column)?,
            weight: position.get(schema.weight_column_name()).copied(),
            names: all(&schema.name_columns)?,
            numeric: all(&schema.numeric_features)?,
            categorical: all(&schema.categorical_features)?,
            sensitive: find(&schema.sensitive_column)?,
            label: find(&schema.label_column)?,
            provenance: position.get(PROVENANCE_COLUMN).copied(),
        })
    }
}

/// Reads a dataset from any CSV source.
pub fn read_dataset<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    schema.validate()?;
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = csv.headers()?.clone();
    let cols = ColumnIndex::resolve(schema, &header)?;

    let mut records = Vec::new();
    for (i, row) in csv.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let cell = |idx: usize, column: &str| -> Result<&str> {
            match row.get(idx) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(Error::validation(row_no, Some(column), "missing value")),
            }
        };

        let id = cell(cols.id, &schema.id_column)?.to_owned();
        let weight = match cols.weight {
            Some(idx) => {
                let raw = cell(idx, schema.weight_column_name())?;
                parse_number(raw, row_no, schema.weight_column_name())?
            }
            None => 1.0,
        };
        let names = cols
            .names
            .iter()
            .zip(&schema.name_columns)
            .map(|(&idx, col)| cell(idx, col).map(str::to_owned))
            .collect::<Result<Vec<_>>>()?;
        let numeric = cols
            .numeric
            .iter()
            .zip(&schema.numeric_features)
            .map(|(&idx, col)| parse_number(cell(idx, col)?, row_no, col))
            .collect::<Result<Vec<_>>>()?;
        let categorical = cols
            .categorical
            .iter()
            .zip(&schema.categorical_features)
            .map(|(&idx, col)| cell(idx, col).map(str::to_owned))
            .collect::<Result<Vec<_>>>()?;
        let group = cell(cols.sensitive, &schema.sensitive_column)?.to_owned();
        let label = match cell(cols.label, &schema.label_column)? {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::validation(
                    row_no,
                    Some(&schema.label_column),
                    format!("label must be 0 or 1, got `{other}`"),
                ))
            }
        };
        let provenance = match cols.provenance {
            Some(idx) => {
                let raw = cell(idx, PROVENANCE_COLUMN)?;
                raw.split(PROVENANCE_SEPARATOR).map(str::to_owned).collect()
            }
            None => BTreeSet::from([id.clone()]),
        };

        records.push(Record {
            id,
            weight,
            names,
            numeric,
            categorical,
            group,
            label,
            provenance,
        });
    }
    Dataset::new(schema.clone(), records)
}

fn parse_number(raw: &str, row: usize, column: &str) -> Result<f64> {
    match raw.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::validation(
            row,
            Some(column),
            format!("`{raw}` is not a finite number"),
        )),
    }
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let file = File::open(path.as_ref())?;
    read_dataset(file, schema)
}

/// Writes a dataset as CSV. Weights are always written; provenance goes in
/// an extra semicolon-joined column.
pub fn write_dataset<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let schema = dataset.schema();
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(schema.output_header())?;
    let separate_sensitive = !schema.sensitive_is_categorical();
    for r in dataset.records() {
        let mut row: Vec<String> = Vec::with_capacity(schema.output_header().len());
        row.push(r.id.clone());
        row.push(format_float(r.weight));
        row.extend(r.names.iter().cloned());
        row.extend(r.numeric.iter().map(|v| format_float(*v)));
        row.extend(r.categorical.iter().cloned());
        if separate_sensitive {
            row.push(r.group.clone());
        }
        row.push(r.label_value().to_string());
        row.push(join_provenance(&r.provenance));
        csv.write_record(&row)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    write_dataset(dataset, file)
}

pub fn join_provenance(provenance: &BTreeSet<String>) -> String {
    provenance
        .iter()
        .map(String::as_str)
        .collect::<Vec<_>>()
        .join(&PROVENANCE_SEPARATOR.to_string())
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v}")
}

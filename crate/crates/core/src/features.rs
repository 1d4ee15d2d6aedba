//! Numeric encoding of a dataset: z-scored numeric columns followed by
//! one-hot categorical columns.

use std::collections::BTreeSet;

use crate::dataset::{Dataset, Record, Schema};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub name: String,
    pub mean: f64,
    /// Population standard deviation; `0.0` marks a constant column.
    pub std: f64,
}

impl ColumnStats {
    pub fn standardize(&self, v: f64) -> f64 {
        if self.std == 0.0 {
            0.0
        } else {
            (v - self.mean) / self.std
        }
    }

    pub fn unstandardize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalLevels {
    pub name: String,
    /// Sorted distinct values seen at fit time.
    pub levels: Vec<String>,
}

/// Fitted encoding, reusable on other datasets with the same schema.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpace {
    pub numeric: Vec<ColumnStats>,
    pub categorical: Vec<CategoricalLevels>,
}

impl FeatureSpace {
    pub fn fit(d: &Dataset) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::Parameter("cannot featurize an empty dataset".into()));
        }
        let schema = d.schema();
        let n = d.len() as f64;
        let numeric = schema
            .numeric_features
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let first = d.records()[0].numeric[j];
                if d.records().iter().all(|r| r.numeric[j] == first) {
                    return ColumnStats {
                        name: name.clone(),
                        mean: first,
                        std: 0.0,
                    };
                }
                let mean = d.records().iter().map(|r| r.numeric[j]).sum::<f64>() / n;
                let var = d
                    .records()
                    .iter()
                    .map(|r| (r.numeric[j] - mean).powi(2))
                    .sum::<f64>()
                    / n;
                ColumnStats {
                    name: name.clone(),
                    mean,
                    std: var.sqrt(),
                }
            })
            .collect();
        let categorical = schema
            .categorical_features
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let levels: BTreeSet<&str> = d
                    .records()
                    .iter()
                    .map(|r| r.categorical[j].as_str())
                    .collect();
                CategoricalLevels {
                    name: name.clone(),
                    levels: levels.into_iter().map(str::to_owned).collect(),
                }
            })
            .collect();
        Ok(Self {
            numeric,
            categorical,
        })
    }

    pub fn width(&self) -> usize {
        self.numeric.len()
            + self
                .categorical
                .iter()
                .map(|c| c.levels.len())
                .sum::<usize>()
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.numeric.iter().map(|c| c.name.clone()).collect();
        for cat in &self.categorical {
            names.extend(cat.levels.iter().map(|l| format!("{}:{l}", cat.name)));
        }
        names
    }

    /// Checks that `schema` has exactly the feature columns this space was
    /// fitted on.
    pub fn check_compatible(&self, schema: &Schema) -> Result<()> {
        let numeric: Vec<&str> = self.numeric.iter().map(|c| c.name.as_str()).collect();
        let categorical: Vec<&str> = self.categorical.iter().map(|c| c.name.as_str()).collect();
        let want_numeric: Vec<&str> = schema.numeric_features.iter().map(String::as_str).collect();
        let want_categorical: Vec<&str> = schema
            .categorical_features
            .iter()
            .map(String::as_str)
            .collect();
        if numeric != want_numeric || categorical != want_categorical {
            return Err(Error::Schema(format!(
                "feature mismatch: model has numeric {numeric:?} categorical {categorical:?}, \
                 dataset has numeric {want_numeric:?} categorical {want_categorical:?}"
            )));
        }
        Ok(())
    }

    /// Encodes one record into `out`. Unseen categorical values encode as
    /// all zeros.
    pub fn encode_into(&self, r: &Record, out: &mut Vec<f64>) {
        out.extend(
            self.numeric
                .iter()
                .zip(&r.numeric)
                .map(|(s, &v)| s.standardize(v)),
        );
        for (cat, value) in self.categorical.iter().zip(&r.categorical) {
            out.extend(
                cat.levels
                    .iter()
                    .map(|l| if l == value { 1.0 } else { 0.0 }),
            );
        }
    }

    pub fn transform(&self, d: &Dataset) -> Result<FeatureMatrix> {
        self.check_compatible(d.schema())?;
        let width = self.width();
        let mut data = Vec::with_capacity(width * d.len());
        for r in d.records() {
            self.encode_into(r, &mut data);
        }
        Ok(FeatureMatrix {
            row_ids: d.records().iter().map(|r| r.id.clone()).collect(),
            column_names: self.column_names(),
            width,
            data,
            space: self.clone(),
        })
    }
}

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub row_ids: Vec<String>,
    pub column_names: Vec<String>,
    width: usize,
    data: Vec<f64>,
    pub space: FeatureSpace,
}

impl FeatureMatrix {
    /// Builds a matrix from raw rows; used for points that do not come from a
    /// dataset.
    pub fn from_rows(row_ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if row_ids.len() != rows.len() {
            return Err(Error::Parameter(
                "row id count differs from row count".into(),
            ));
        }
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Parameter("ragged rows".into()));
        }
        let column_names = (0..width).map(|j| format!("x{j}")).collect();
        Ok(Self {
            row_ids,
            column_names,
            width,
            data: rows.into_iter().flatten().collect(),
            space: FeatureSpace {
                numeric: Vec::new(),
                categorical: Vec::new(),
            },
        })
    }

    pub fn rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows()).map(move |i| self.row(i))
    }

    /// Raw value of numeric feature `j` for row `i`.
    pub fn raw_numeric(&self, i: usize, j: usize) -> f64 {
        self.space.numeric[j].unstandardize(self.row(i)[j])
    }
}

/// Fits a [`FeatureSpace`] on `d` and encodes `d` with it.
pub fn featurize(d: &Dataset) -> Result<FeatureMatrix> {
    FeatureSpace::fit(d)?.transform(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fixtures::table1;

    #[test]
    fn standardizes_table1_ages() {
        let fm = featurize(&table1()).unwrap();
        assert_eq!(fm.column_names, vec!["Age", "Gender:F", "Gender:M"]);
        let age = &fm.space.numeric[0];
        // Reference values computed directly: mean 430/6, population std
        // sqrt(sum((x - mean)^2) / 6).
        let ages = [20.0, 20.0, 20.0, 30.0, 40.0, 300.0];
        let mean: f64 = ages.iter().sum::<f64>() / 6.0;
        let std = (ages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 6.0).sqrt();
        assert!((mean - 71.666667).abs() < 1e-5);
        assert!((std - 102.3746).abs() < 1e-4);
        assert!((age.mean - mean).abs() < 1e-12);
        assert!((age.std - std).abs() < 1e-12);
        assert!((fm.row(5)[0] - 2.2304).abs() < 1e-4, "{}", fm.row(5)[0]);
    }

    #[test]
    fn constant_column_is_zero() {
        let d = table1();
        let records = d
            .records()
            .iter()
            .cloned()
            .map(|mut r| {
                r.numeric[0] = 5.0;
                r
            })
            .collect();
        let fm = featurize(&d.with_records(records).unwrap()).unwrap();
        assert!(fm.iter_rows().all(|row| row[0] == 0.0));
        assert_eq!(fm.raw_numeric(0, 0), 5.0);
    }

    #[test]
    fn one_hot_has_single_one_per_row() {
        let fm = featurize(&table1()).unwrap();
        for row in fm.iter_rows() {
            assert_eq!(row[1] + row[2], 1.0);
        }
        assert_eq!(fm.row(0)[2], 1.0); // e1 is M
        assert_eq!(fm.row(3)[1], 1.0); // e4 is F
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_std() {
        let fm = featurize(&table1()).unwrap();
        let col: Vec<f64> = fm.iter_rows().map(|r| r[0]).collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / col.len() as f64;
        assert!(m.abs() < 1e-12);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let d = table1().filter(|_| false);
        assert!(matches!(featurize(&d), Err(Error::Parameter(_))));
    }

    #[test]
    fn unseen_level_encodes_as_zeros() {
        let space = FeatureSpace::fit(&table1()).unwrap();
        let mut r = table1().records()[0].clone();
        r.categorical[0] = "X".into();
        let mut out = Vec::new();
        space.encode_into(&r, &mut out);
        assert_eq!(&out[1..], &[0.0, 0.0]);
    }
}

//! Synthetic datasets for benchmarks and acceptance runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{Dataset, Record, Schema};

fn schema(numeric: usize) -> Schema {
    Schema {
        id_column: "id".into(),
        weight_column: None,
        name_columns: vec!["name".into()],
        numeric_features: (1..=numeric).map(|j| format!("x{j}")).collect(),
        categorical_features: vec!["group".into()],
        sensitive_column: "group".into(),
        sensitive_groups: ("A".into(), "B".into()),
        label_column: "label".into(),
    }
}

fn random_name<R: Rng + ?Sized>(rng: &mut R, len: usize) -> String {
    (0..len)
        .map(|_| char::from(b'a' + rng.random_range(0..26u8)))
        .collect()
}

fn record(id: String, name: String, numeric: Vec<f64>, group: &str, label: bool) -> Record {
    Record {
        provenance: [id.clone()].into(),
        id,
        weight: 1.0,
        names: vec![name],
        numeric,
        categorical: vec![group.to_owned()],
        group: group.to_owned(),
        label,
    }
}

/// Two-group classification data in which group A's positives are kept with
/// probability `positive_keep_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasedSpec {
    pub n: usize,
    pub positive_keep_a: f64,
    /// Class-mean offset per numeric feature; features get `±shift`.
    pub class_shift: Vec<f64>,
}

impl Default for BiasedSpec {
    fn default() -> Self {
        Self {
            n: 2000,
            positive_keep_a: 0.25,
            class_shift: vec![0.8, 0.6, 0.4, 0.0, 0.0, 0.0],
        }
    }
}

pub fn biased_benchmark(spec: &BiasedSpec, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(spec.n);
    while records.len() < spec.n {
        let in_a = rng.random::<bool>();
        let label = rng.random::<bool>();
        if in_a && label && rng.random::<f64>() >= spec.positive_keep_a {
            continue;
        }
        let sign = if label { 1.0 } else { -1.0 };
        let numeric = spec
            .class_shift
            .iter()
            .map(|s| rng.sample::<f64, _>(StandardNormal) + sign * s)
            .collect();
        let i = records.len();
        let name = random_name(&mut rng, 8);
        records.push(record(
            format!("r{i}"),
            name,
            numeric,
            if in_a { "A" } else { "B" },
            label,
        ));
    }
    Dataset::new(schema(spec.class_shift.len()), records).expect("generated dataset is valid")
}

/// Records drawn around `clusters` centres that are far apart relative to the
/// unit within-cluster spread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusteredSpec {
    pub n: usize,
    pub clusters: usize,
    pub dims: usize,
    /// Minimum distance between any two centres.
    pub separation: f64,
}

impl Default for ClusteredSpec {
    fn default() -> Self {
        Self {
            n: 5000,
            clusters: 10,
            dims: 4,
            separation: 25.0,
        }
    }
}

pub fn clustered_dataset(spec: &ClusteredSpec, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = spec.separation * (spec.clusters as f64).max(2.0);
    let mut centres: Vec<Vec<f64>> = Vec::with_capacity(spec.clusters);
    while centres.len() < spec.clusters {
        let c: Vec<f64> = (0..spec.dims)
            .map(|_| rng.random_range(-span..span))
            .collect();
        let far = centres.iter().all(|o| {
            o.iter()
                .zip(&c)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
                >= spec.separation
        });
        if far {
            centres.push(c);
        }
    }
    let records = (0..spec.n)
        .map(|i| {
            let c = &centres[i % spec.clusters];
            let offsets: Vec<f64> = (0..spec.dims).map(|_| rng.sample(StandardNormal)).collect();
            let label = offsets[0] + 0.5 * rng.sample::<f64, _>(StandardNormal) > 0.0;
            let numeric = c.iter().zip(&offsets).map(|(a, b)| a + b).collect();
            let group = if rng.random::<bool>() { "A" } else { "B" };
            let name = random_name(&mut rng, 8);
            record(format!("r{i}"), name, numeric, group, label)
        })
        .collect();
    Dataset::new(schema(spec.dims), records).expect("generated dataset is valid")
}

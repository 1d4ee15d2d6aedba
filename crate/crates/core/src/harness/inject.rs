//! Duplicate and poison injectors with ground truth.

use std::collections::{BTreeMap, HashSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, Record};
use crate::error::{Error, Result};

/// What the injectors did, so stages can be scored against it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    /// Original id to the ids of its injected copies.
    pub duplicates: BTreeMap<String, Vec<String>>,
    pub poison: Vec<String>,
}

impl GroundTruth {
    pub fn merge(mut self, other: GroundTruth) -> GroundTruth {
        for (k, v) in other.duplicates {
            self.duplicates.entry(k).or_default().extend(v);
        }
        self.poison.extend(other.poison);
        self
    }

    /// Unordered id pairs that refer to the same entity, as `(min, max)`.
    pub fn duplicate_pairs(&self) -> HashSet<(String, String)> {
        let mut out = HashSet::new();
        for (orig, copies) in &self.duplicates {
            let members: Vec<&String> = std::iter::once(orig).chain(copies).collect();
            for (i, a) in members.iter().enumerate() {
                for b in &members[i + 1..] {
                    out.insert(ordered_pair(a, b));
                }
            }
        }
        out
    }
}

pub(crate) fn ordered_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_owned(), b.to_owned())
    } else {
        (b.to_owned(), a.to_owned())
    }
}

/// Truncated Zipf law on `{1, ..., max}` with mass proportional to `k^-s`.
#[derive(Debug, Clone)]
pub struct ZipfCopies {
    pmf: Vec<f64>,
    index: WeightedIndex<f64>,
}

impl ZipfCopies {
    pub fn new(s: f64, max: usize) -> Result<Self> {
        if !(s > 1.0) || !s.is_finite() {
            return Err(Error::Parameter(format!("zipf_s must be > 1, got {s}")));
        }
        if max == 0 {
            return Err(Error::Parameter("max_copies must be at least 1".into()));
        }
        let raw: Vec<f64> = (1..=max).map(|k| (k as f64).powf(-s)).collect();
        let total: f64 = raw.iter().sum();
        let index = WeightedIndex::new(&raw).map_err(|e| Error::Parameter(e.to_string()))?;
        Ok(Self {
            pmf: raw.iter().map(|w| w / total).collect(),
            index,
        })
    }

    /// `pmf()[k - 1]` is the probability of `k` copies.
    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng) + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DuplicateSpec {
    pub rate: f64,
    pub zipf_s: f64,
    pub max_copies: usize,
    /// Chance that each name field of a copy is shortened to a prefix.
    pub abbreviation_prob: f64,
    /// Shortest prefix an abbreviation may produce.
    pub min_prefix: usize,
    /// Copies' numeric values stay within `±jitter` of the original.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for DuplicateSpec {
    fn default() -> Self {
        Self {
            rate: 0.2,
            zipf_s: 2.0,
            max_copies: 10,
            abbreviation_prob: 0.5,
            min_prefix: 3,
            jitter: 0.0,
            seed: 0,
        }
    }
}

impl DuplicateSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::Parameter(
                "duplication rate must be in [0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.abbreviation_prob) {
            return Err(Error::Parameter(
                "abbreviation_prob must be in [0, 1]".into(),
            ));
        }
        if !(self.jitter >= 0.0) || !self.jitter.is_finite() {
            return Err(Error::Parameter(
                "jitter must be a finite value >= 0".into(),
            ));
        }
        if self.min_prefix == 0 {
            return Err(Error::Parameter("min_prefix must be at least 1".into()));
        }
        ZipfCopies::new(self.zipf_s, self.max_copies).map(|_| ())
    }
}

/// Keeps jittered values strictly inside the match tolerance.
const JITTER_MARGIN: f64 = 0.999;

fn fresh_id(base: &str, taken: &mut HashSet<String>) -> String {
    let mut n = 1usize;
    loop {
        let id = format!("{base}#{n}");
        if taken.insert(id.clone()) {
            return id;
        }
        n += 1;
    }
}

fn abbreviate<R: Rng + ?Sized>(name: &str, min_prefix: usize, rng: &mut R) -> String {
    let chars: Vec<char> = name.chars().collect();
    if chars.len() <= min_prefix {
        return name.to_owned();
    }
    let len = rng.random_range(min_prefix..chars.len());
    chars[..len].iter().collect()
}

/// Appends jittered, possibly abbreviated copies of a `rate` fraction of the
/// records. Original records keep their position and contents.
pub fn inject_duplicates(d: &Dataset, spec: &DuplicateSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let zipf = ZipfCopies::new(spec.zipf_s, spec.max_copies)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = d.len();
    let chosen_count = ((n as f64) * spec.rate).round() as usize;
    let mut chosen = sample(&mut rng, n, chosen_count.min(n)).into_vec();
    chosen.sort_unstable();

    let mut taken: HashSet<String> = d.records().iter().map(|r| r.id.clone()).collect();
    let mut records = d.records().to_vec();
    let mut truth = GroundTruth::default();
    for i in chosen {
        let original = &d.records()[i];
        let copies = zipf.sample(&mut rng);
        let mut ids = Vec::with_capacity(copies);
        for _ in 0..copies {
            let id = fresh_id(&original.id, &mut taken);
            let names = original
                .names
                .iter()
                .map(|name| {
                    if rng.random::<f64>() < spec.abbreviation_prob {
                        abbreviate(name, spec.min_prefix, &mut rng)
                    } else {
                        name.clone()
                    }
                })
                .collect();
            let numeric = original
                .numeric
                .iter()
                .map(|v| {
                    if spec.jitter > 0.0 {
                        v + rng.random_range(-spec.jitter..spec.jitter) * JITTER_MARGIN
                    } else {
                        *v
                    }
                })
                .collect();
            records.push(Record {
                id: id.clone(),
                weight: 1.0,
                names,
                numeric,
                categorical: original.categorical.clone(),
                group: original.group.clone(),
                label: original.label,
                provenance: [id.clone()].into(),
            });
            ids.push(id);
        }
        truth.duplicates.insert(original.id.clone(), ids);
    }
    Ok((d.with_records(records)?, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoisonLabel {
    /// Every poison record gets the label opposite to the clean majority.
    FlipMajority,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoisonSpec {
    pub epsilon: f64,
    /// Standard deviations beyond the clean range.
    pub magnitude: f64,
    pub label_mode: PoisonLabel,
    pub seed: u64,
}

impl Default for PoisonSpec {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            magnitude: 3.0,
            label_mode: PoisonLabel::FlipMajority,
            seed: 0,
        }
    }
}

impl PoisonSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Parameter("epsilon must be in [0, 1)".into()));
        }
        if !(self.magnitude > 0.0) || !self.magnitude.is_finite() {
            return Err(Error::Parameter("magnitude must be positive".into()));
        }
        Ok(())
    }

    /// `ceil(epsilon * n)`, robust to representation error in `epsilon`.
    pub fn count(&self, n: usize) -> usize {
        let x = self.epsilon * n as f64;
        let r = x.round();
        if (x - r).abs() < 1e-9 {
            r as usize
        } else {
            x.ceil() as usize
        }
    }
}

/// Appends out-of-range records with flipped labels.
pub fn inject_poison(d: &Dataset, spec: &PoisonSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let count = spec.count(d.len());
    if count == 0 {
        return Ok((d.clone(), GroundTruth::default()));
    }
    if d.is_empty() {
        return Err(Error::Parameter("cannot poison an empty dataset".into()));
    }
    let width = d.schema().numeric_features.len();
    let n = d.len() as f64;
    let mut lo = vec![f64::INFINITY; width];
    let mut hi = vec![f64::NEG_INFINITY; width];
    let mut mean = vec![0.0; width];
    for r in d.records() {
        for (j, v) in r.numeric.iter().enumerate() {
            lo[j] = lo[j].min(*v);
            hi[j] = hi[j].max(*v);
            mean[j] += v / n;
        }
    }
    let mut sd = vec![0.0; width];
    for r in d.records() {
        for (j, v) in r.numeric.iter().enumerate() {
            sd[j] += (v - mean[j]).powi(2) / n;
        }
    }
    for s in &mut sd {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    let positive: f64 = d
        .records()
        .iter()
        .filter(|r| r.label)
        .map(|r| r.weight)
        .sum();
    let majority = positive > d.total_weight() - positive;
    let label = match spec.label_mode {
        PoisonLabel::FlipMajority => !majority,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut taken: HashSet<String> = d.records().iter().map(|r| r.id.clone()).collect();
    let mut records = d.records().to_vec();
    let mut truth = GroundTruth::default();
    for _ in 0..count {
        let source = &d.records()[rng.random_range(0..d.len())];
        let id = fresh_id("poison", &mut taken);
        let numeric = (0..width)
            .map(|j| {
                if rng.random::<bool>() {
                    hi[j] + spec.magnitude * sd[j]
                } else {
                    lo[j] - spec.magnitude * sd[j]
                }
            })
            .collect();
        records.push(Record {
            id: id.clone(),
            weight: 1.0,
            names: source.names.clone(),
            numeric,
            categorical: source.categorical.clone(),
            group: source.group.clone(),
            label,
            provenance: [id.clone()].into(),
        });
        truth.poison.push(id);
    }
    Ok((d.with_records(records)?, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fixtures::table1;
    use crate::features::featurize;
    use crate::harness::synth::{biased_benchmark, BiasedSpec};
    use crate::resolve::{match_pair, MatchRules};
    use crate::sanitize::kmeans;

    #[test]
    fn zero_rate_is_identity() {
        let spec = DuplicateSpec {
            rate: 0.0,
            ..DuplicateSpec::default()
        };
        let (out, truth) = inject_duplicates(&table1(), &spec).unwrap();
        assert_eq!(out, table1());
        assert_eq!(truth, GroundTruth::default());
    }

    #[test]
    fn duplicates_are_deterministic_and_keep_originals() {
        let spec = DuplicateSpec {
            rate: 0.5,
            jitter: 0.5,
            seed: 9,
            ..DuplicateSpec::default()
        };
        let (a, ta) = inject_duplicates(&table1(), &spec).unwrap();
        let (b, tb) = inject_duplicates(&table1(), &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(&a.records()[..6], table1().records());
        assert_eq!(ta.duplicates.len(), 3);
    }

    #[test]
    fn copies_match_their_original() {
        let spec = DuplicateSpec {
            rate: 1.0,
            jitter: 0.25,
            abbreviation_prob: 1.0,
            seed: 4,
            ..DuplicateSpec::default()
        };
        let (d, truth) = inject_duplicates(&table1(), &spec).unwrap();
        let rules = MatchRules {
            default_tolerance: 0.25,
            ..MatchRules::default()
        };
        for (orig, copies) in &truth.duplicates {
            let o = d.get(orig).unwrap();
            for c in copies {
                let c = d.get(c).unwrap();
                assert_eq!(c.weight, 1.0);
                assert!(c.names[0].chars().count() >= 3);
                assert!(
                    match_pair(o, c, &rules, d.schema()).unwrap(),
                    "{o:?} vs {c:?}"
                );
            }
        }
    }

    #[test]
    fn zipf_frequencies_match_mass_function() {
        let z = ZipfCopies::new(2.0, 3).unwrap();
        let norm = 1.0 + 0.25 + 1.0 / 9.0;
        let expected = [1.0 / norm, 0.25 / norm, (1.0 / 9.0) / norm];
        for (p, e) in z.pmf().iter().zip(expected) {
            assert!((p - e).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            counts[z.sample(&mut rng) - 1] += 1;
        }
        for (c, e) in counts.iter().zip(expected) {
            let freq = *c as f64 / draws as f64;
            assert!((freq - e).abs() < 0.01, "{freq} vs {e}");
        }
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            DuplicateSpec {
                rate: 1.5,
                ..DuplicateSpec::default()
            },
            DuplicateSpec {
                zipf_s: 1.0,
                ..DuplicateSpec::default()
            },
        ] {
            assert!(matches!(
                inject_duplicates(&table1(), &spec),
                Err(Error::Parameter(_))
            ));
        }
        let bad = PoisonSpec {
            epsilon: 1.0,
            ..PoisonSpec::default()
        };
        assert!(inject_poison(&table1(), &bad).is_err());
    }

    #[test]
    fn poison_count_is_ceiling() {
        let spec = PoisonSpec::default();
        assert_eq!(spec.count(100), 10);
        assert_eq!(spec.count(101), 11);
        assert_eq!(
            PoisonSpec {
                epsilon: 0.0,
                ..spec
            }
            .count(100),
            0
        );
        let zero = PoisonSpec {
            epsilon: 0.0,
            ..spec
        };
        assert_eq!(inject_poison(&table1(), &zero).unwrap().0, table1());
    }

    #[test]
    fn poison_lies_outside_clean_range_with_flipped_label() {
        let (d, truth) = inject_poison(&table1(), &PoisonSpec::default()).unwrap();
        assert_eq!(truth.poison.len(), 1);
        let p = d.get(&truth.poison[0]).unwrap();
        assert!(p.label, "clean majority is negative");
        let ages: Vec<f64> = table1().records().iter().map(|r| r.numeric[0]).collect();
        let (lo, hi) = ages
            .iter()
            .fold((f64::MAX, f64::MIN), |(l, h), v| (l.min(*v), h.max(*v)));
        assert!(p.numeric[0] < lo || p.numeric[0] > hi);
        assert!(!table1().ids().contains(&p.id.as_str()));
    }

    #[test]
    fn poison_is_farther_than_clean_99th_percentile() {
        let spec = BiasedSpec {
            n: 1000,
            ..BiasedSpec::default()
        };
        let clean = biased_benchmark(&spec, 5);
        let (poisoned, truth) = inject_poison(&clean, &PoisonSpec::default()).unwrap();
        // Centroids from the clean data, distances in the clean feature space.
        let fm = featurize(&clean).unwrap();
        let ca = kmeans(&fm, 10, 0, 300).unwrap();
        let nearest = |x: &[f64]| {
            ca.centroids
                .iter()
                .map(|c| {
                    c.iter()
                        .zip(x)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        };
        let mut clean_d: Vec<f64> = fm.iter_rows().map(nearest).collect();
        clean_d.sort_by(f64::total_cmp);
        let p99 = clean_d[(clean_d.len() as f64 * 0.99).ceil() as usize - 1];
        let pm = fm
            .space
            .transform(&poisoned.filter(|r| truth.poison.contains(&r.id)))
            .unwrap();
        for row in pm.iter_rows() {
            assert!(nearest(row) > p99, "{} <= {p99}", nearest(row));
        }
    }
}

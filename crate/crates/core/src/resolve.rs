//! Entity resolution: pairwise matching, optional blocking, transitive
//! closure over the match graph, and merging of each connected component.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;

use crate::dataset::{format_float, join_provenance, Dataset, Record, Schema};
use crate::error::{Error, Result};
use crate::sanitize::ClusterAssignment;
use crate::union_find::UnionFind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NameRule {
    Exact,
    /// Equal, or the shorter value abbreviates the longer one: it has at
    /// least `min_prefix` characters, starts with the same character, and
    /// its characters appear in order in the longer value ("Joe" / "Joseph",
    /// "Jos" / "Joseph"). Plain prefixes are a special case.
    ExactOrAbbreviation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchRules {
    pub name_rule: NameRule,
    pub min_prefix: usize,
    /// Absolute tolerance for numeric features not listed in `tolerances`.
    pub default_tolerance: f64,
    pub tolerances: BTreeMap<String, f64>,
    pub require_same_group: bool,
}

impl Default for MatchRules {
    fn default() -> Self {
        Self {
            name_rule: NameRule::ExactOrAbbreviation,
            min_prefix: 3,
            default_tolerance: 0.0,
            tolerances: BTreeMap::new(),
            require_same_group: true,
        }
    }
}

impl MatchRules {
    pub fn validate(&self) -> Result<()> {
        if self.min_prefix < 1 {
            return Err(Error::Parameter("min_prefix must be at least 1".into()));
        }
        let all = std::iter::once(&self.default_tolerance).chain(self.tolerances.values());
        for t in all {
            if !(*t >= 0.0) {
                return Err(Error::Parameter(format!(
                    "numeric tolerance must be >= 0, got {t}"
                )));
            }
        }
        Ok(())
    }

    fn tolerance_vector(&self, schema: &Schema) -> Result<Vec<f64>> {
        for name in self.tolerances.keys() {
            if !schema.numeric_features.contains(name) {
                return Err(Error::Parameter(format!(
                    "tolerance given for unknown numeric feature `{name}`"
                )));
            }
        }
        Ok(schema
            .numeric_features
            .iter()
            .map(|f| {
                self.tolerances
                    .get(f)
                    .copied()
                    .unwrap_or(self.default_tolerance)
            })
            .collect())
    }
}

/// `short` abbreviates `long` (both given as chars, `short` no longer than
/// `long`).
fn abbreviates(short: &str, long: &str, min_len: usize) -> bool {
    let mut s = short.chars();
    let mut l = long.chars();
    let Some(first) = s.next() else { return false };
    if short.chars().count() < min_len || l.next() != Some(first) {
        return false;
    }
    's: for c in s {
        for d in l.by_ref() {
            if c == d {
                continue 's;
            }
        }
        return false;
    }
    true
}

pub fn names_match(a: &str, b: &str, rule: NameRule, min_prefix: usize) -> bool {
    if a == b {
        return true;
    }
    match rule {
        NameRule::Exact => false,
        NameRule::ExactOrAbbreviation => {
            let (short, long) = if a.chars().count() <= b.chars().count() {
                (a, b)
            } else {
                (b, a)
            };
            abbreviates(short, long, min_prefix)
        }
    }
}

/// Rules compiled against a schema.
#[derive(Debug, Clone)]
pub struct Matcher {
    rules: MatchRules,
    tolerances: Vec<f64>,
}

impl Matcher {
    pub fn new(rules: &MatchRules, schema: &Schema) -> Result<Self> {
        rules.validate()?;
        Ok(Self {
            tolerances: rules.tolerance_vector(schema)?,
            rules: rules.clone(),
        })
    }

    pub fn matches(&self, a: &Record, b: &Record) -> bool {
        if self.rules.require_same_group && a.group != b.group {
            return false;
        }
        let numeric_ok = a
            .numeric
            .iter()
            .zip(&b.numeric)
            .zip(&self.tolerances)
            .all(|((x, y), tol)| (x - y).abs() <= *tol);
        numeric_ok
            && a.names
                .iter()
                .zip(&b.names)
                .all(|(x, y)| names_match(x, y, self.rules.name_rule, self.rules.min_prefix))
    }
}

pub fn match_pair(a: &Record, b: &Record, rules: &MatchRules, schema: &Schema) -> Result<bool> {
    Ok(Matcher::new(rules, schema)?.matches(a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    SumWeights,
    /// The merged record keeps the weight of its member with the smallest
    /// original id.
    KeepOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    WeightedMajority,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NameMode {
    LongestString,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NumericMode {
    WeightedMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergePolicy {
    pub weight_mode: WeightMode,
    pub label_mode: LabelMode,
    pub name_mode: NameMode,
    pub numeric_mode: NumericMode,
}

impl Default for MergePolicy {
    fn default() -> Self {
        Self {
            weight_mode: WeightMode::SumWeights,
            label_mode: LabelMode::WeightedMajority,
            name_mode: NameMode::LongestString,
            numeric_mode: NumericMode::WeightedMean,
        }
    }
}

impl MergePolicy {
    pub fn keep_one() -> Self {
        Self {
            weight_mode: WeightMode::KeepOne,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeEntry {
    pub merged_id: String,
    pub constituents: BTreeSet<String>,
    pub weight: f64,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MergeLog {
    pub entries: Vec<MergeEntry>,
    pub pair_comparisons: u64,
}

impl MergeLog {
    /// CSV with columns `merged_id,constituents,weight,label`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["merged_id", "constituents", "weight", "label"])?;
        for e in &self.entries {
            w.write_record([
                e.merged_id.clone(),
                join_provenance(&e.constituents),
                format_float(e.weight),
                u8::from(e.label).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn pairs(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}

/// Comparisons made by [`resolve`]: all pairs without blocks, pairs within
/// each block otherwise.
pub fn pair_count(n_records: usize, blocks: Option<&ClusterAssignment>) -> u64 {
    match blocks {
        None => pairs(n_records),
        Some(ca) => ca.per_cluster_ids.iter().map(|b| pairs(b.len())).sum(),
    }
}

pub fn merged_id(constituents: &BTreeSet<String>) -> String {
    let joined: Vec<&str> = constituents.iter().map(String::as_str).collect();
    format!("m:{}", joined.join("+"))
}

fn block_positions(d: &Dataset, blocks: Option<&ClusterAssignment>) -> Result<Vec<Vec<usize>>> {
    let Some(ca) = blocks else {
        return Ok(vec![(0..d.len()).collect()]);
    };
    let positions = d.positions();
    let mut seen = HashSet::with_capacity(d.len());
    let mut out = Vec::with_capacity(ca.per_cluster_ids.len());
    for block in &ca.per_cluster_ids {
        let mut b = Vec::with_capacity(block.len());
        for id in block {
            let &pos = positions.get(id.as_str()).ok_or_else(|| {
                Error::Parameter(format!("block id `{id}` is not in the dataset"))
            })?;
            if !seen.insert(pos) {
                return Err(Error::Parameter(format!(
                    "id `{id}` appears in more than one block"
                )));
            }
            b.push(pos);
        }
        out.push(b);
    }
    if seen.len() != d.len() {
        return Err(Error::Parameter(format!(
            "blocks cover {} of {} dataset ids",
            seen.len(),
            d.len()
        )));
    }
    Ok(out)
}

/// Weighted majority vote; ties go to the value of the member with the
/// smallest original id.
fn weighted_vote<'a>(members: &[&'a Record], value: impl Fn(&'a Record) -> &'a str) -> String {
    let mut totals: BTreeMap<&str, f64> = BTreeMap::new();
    for m in members {
        *totals.entry(value(m)).or_insert(0.0) += m.weight;
    }
    let best = totals.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    let leaders: HashSet<&str> = totals
        .iter()
        .filter(|(_, &w)| w == best)
        .map(|(k, _)| *k)
        .collect();
    if leaders.len() == 1 {
        return leaders.into_iter().next().unwrap().to_owned();
    }
    members
        .iter()
        .filter(|m| leaders.contains(value(m)))
        .min_by(|a, b| a.min_original_id().cmp(b.min_original_id()))
        .map(|m| value(m).to_owned())
        .expect("a leader exists")
}

/// Merges the members of one component (given in dataset order).
pub fn merge_records(schema: &Schema, members: &[&Record], policy: &MergePolicy) -> Record {
    let provenance: BTreeSet<String> = members
        .iter()
        .flat_map(|m| m.provenance.iter().cloned())
        .collect();
    let representative = members
        .iter()
        .min_by(|a, b| a.min_original_id().cmp(b.min_original_id()))
        .expect("non-empty component");

    let weight = match policy.weight_mode {
        WeightMode::SumWeights => members.iter().map(|m| m.weight).sum(),
        WeightMode::KeepOne => representative.weight,
    };

    let LabelMode::WeightedMajority = policy.label_mode;
    let (w1, w0) = members.iter().fold((0.0, 0.0), |(p, n), m| {
        if m.label {
            (p + m.weight, n)
        } else {
            (p, n + m.weight)
        }
    });
    let label = if w1 > w0 {
        true
    } else if w0 > w1 {
        false
    } else {
        representative.label
    };

    let NameMode::LongestString = policy.name_mode;
    let names = (0..schema.name_columns.len())
        .map(|j| {
            let longest = members
                .iter()
                .map(|m| m.names[j].chars().count())
                .max()
                .unwrap_or(0);
            members
                .iter()
                .filter(|m| m.names[j].chars().count() == longest)
                .min_by(|a, b| a.min_original_id().cmp(b.min_original_id()))
                .map(|m| m.names[j].clone())
                .unwrap_or_default()
        })
        .collect();

    let NumericMode::WeightedMean = policy.numeric_mode;
    let total_w: f64 = members.iter().map(|m| m.weight).sum();
    let numeric = (0..schema.numeric_features.len())
        .map(|j| {
            if total_w > 0.0 {
                members.iter().map(|m| m.weight * m.numeric[j]).sum::<f64>() / total_w
            } else {
                members.iter().map(|m| m.numeric[j]).sum::<f64>() / members.len() as f64
            }
        })
        .collect();

    let categorical: Vec<String> = (0..schema.categorical_features.len())
        .map(|j| weighted_vote(members, |m| m.categorical[j].as_str()))
        .collect();
    let group = match schema
        .categorical_features
        .iter()
        .position(|c| *c == schema.sensitive_column)
    {
        Some(j) => categorical[j].clone(),
        None => weighted_vote(members, |m| m.group.as_str()),
    };

    Record {
        id: merged_id(&provenance),
        weight,
        names,
        numeric,
        categorical,
        group,
        label,
        provenance,
    }
}

/// Resolves duplicates in `d`, comparing pairs within each block (or all
/// pairs without blocks) and merging connected components of the match
/// graph.
pub fn resolve(
    d: &Dataset,
    blocks: Option<&ClusterAssignment>,
    rules: &MatchRules,
    policy: &MergePolicy,
) -> Result<(Dataset, MergeLog)> {
    let matcher = Matcher::new(rules, d.schema())?;
    let blocks = block_positions(d, blocks)?;
    let records = d.records();

    let mut uf = UnionFind::new(records.len());
    let mut comparisons = 0u64;
    for block in &blocks {
        for (x, &i) in block.iter().enumerate() {
            for &j in &block[x + 1..] {
                comparisons += 1;
                if matcher.matches(&records[i], &records[j]) {
                    uf.union(i, j);
                }
            }
        }
    }

    // Components keyed by their smallest position; members in dataset order.
    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut root_min: HashMap<usize, usize> = HashMap::new();
    for i in 0..records.len() {
        let root = uf.find(i);
        let first = *root_min.entry(root).or_insert(i);
        components.entry(first).or_default().push(i);
    }

    let mut out = Vec::with_capacity(components.len());
    let mut log = MergeLog {
        entries: Vec::new(),
        pair_comparisons: comparisons,
    };
    for members in components.values() {
        if members.len() == 1 {
            out.push(records[members[0]].clone());
            continue;
        }
        let refs: Vec<&Record> = members.iter().map(|&i| &records[i]).collect();
        let merged = merge_records(d.schema(), &refs, policy);
        log.entries.push(MergeEntry {
            merged_id: merged.id.clone(),
            constituents: merged.provenance.clone(),
            weight: merged.weight,
            label: merged.label,
        });
        out.push(merged);
    }
    Ok((d.with_records(out)?, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fixtures::{table1, table1_schema};

    fn rec(d: &Dataset, id: &str) -> Record {
        d.get(id).unwrap().clone()
    }

    #[test]
    fn abbreviation_rule() {
        let r = NameRule::ExactOrAbbreviation;
        assert!(names_match("Joe", "Joseph", r, 3));
        assert!(names_match("Joseph", "Joe", r, 3));
        assert!(names_match("Jos", "Joseph", r, 3));
        assert!(!names_match("John", "Joseph", r, 3));
        assert!(!names_match("John", "Joe", r, 3));
        assert!(!names_match("Jo", "Joseph", r, 3));
        assert!(names_match("Jo", "Joseph", r, 2));
        assert!(!names_match("oe", "Joe", r, 2));
        assert!(!names_match("Joe", "Joseph", NameRule::Exact, 3));
    }

    #[test]
    fn table1_pairs() {
        let d = table1();
        let rules = MatchRules::default();
        let s = table1_schema();
        assert!(match_pair(&rec(&d, "e2"), &rec(&d, "e3"), &rules, &s).unwrap());
        assert!(!match_pair(&rec(&d, "e4"), &rec(&d, "e5"), &rules, &s).unwrap());
        assert!(!match_pair(&rec(&d, "e1"), &rec(&d, "e2"), &rules, &s).unwrap());
        for r in d.records() {
            assert!(match_pair(r, r, &rules, &s).unwrap());
        }
    }

    #[test]
    fn tolerance_for_unknown_feature_is_rejected() {
        let mut rules = MatchRules::default();
        rules.tolerances.insert("Height".into(), 1.0);
        assert!(matches!(
            resolve(&table1(), None, &rules, &MergePolicy::default()),
            Err(Error::Parameter(_))
        ));
    }

    fn table1_blocks(d: &Dataset) -> ClusterAssignment {
        let _ = d;
        ClusterAssignment::from_blocks(
            vec![
                vec!["e1".into(), "e2".into(), "e3".into()],
                vec!["e4".into(), "e5".into()],
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn blocked_table1_merges_e2_e3_with_summed_weight() {
        let d = table1().filter(|r| r.id != "e6");
        let blocks = table1_blocks(&d);
        let (out, log) = resolve(
            &d,
            Some(&blocks),
            &MatchRules::default(),
            &MergePolicy::default(),
        )
        .unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out.ids(), vec!["e1", "m:e2+e3", "e4", "e5"]);
        let e23 = &out.records()[1];
        assert_eq!(e23.weight, 2.0);
        assert!(!e23.label);
        assert_eq!(e23.names, vec!["Joseph"]);
        assert_eq!(e23.numeric, vec![20.0]);
        assert_eq!(e23.group, "M");
        assert_eq!(log.entries.len(), 1);
        assert_eq!(log.pair_comparisons, 4);
        assert_eq!(log.pair_comparisons, pair_count(d.len(), Some(&blocks)));
    }

    #[test]
    fn keep_one_gives_unit_weight() {
        let d = table1();
        let (out, _) = resolve(&d, None, &MatchRules::default(), &MergePolicy::keep_one()).unwrap();
        assert_eq!(out.get("m:e2+e3").unwrap().weight, 1.0);
        assert_eq!(out.len(), 5);
    }

    #[test]
    fn no_matches_is_identity() {
        let d = table1().filter(|r| r.id != "e3");
        let (out, log) =
            resolve(&d, None, &MatchRules::default(), &MergePolicy::default()).unwrap();
        assert_eq!(out, d);
        assert!(log.entries.is_empty());
        assert_eq!(log.pair_comparisons, 10);
    }

    /// Brute-force connected components by repeated relaxation, independent of
    /// the union-find used by `resolve`.
    fn oracle_components(d: &Dataset, matcher: &Matcher) -> Vec<BTreeSet<String>> {
        let n = d.len();
        let mut label: Vec<usize> = (0..n).collect();
        loop {
            let mut changed = false;
            for i in 0..n {
                for j in 0..n {
                    if i != j
                        && matcher.matches(&d.records()[i], &d.records()[j])
                        && label[j] < label[i]
                    {
                        label[i] = label[j];
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let mut groups: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
        for (i, l) in label.into_iter().enumerate() {
            groups
                .entry(l)
                .or_default()
                .insert(d.records()[i].id.clone());
        }
        groups.into_values().collect()
    }

    #[test]
    fn transitive_closure_merges_chain() {
        // "Jos" and "Joe" both abbreviate "Joseph" but not each other.
        let csv =
            "ID,Weight,Name,Gender,Age,Label\na,1,Jos,M,20,0\nb,1,Joseph,M,20,0\nc,1,Joe,M,20,1\n";
        let d = crate::dataset::read_dataset(csv.as_bytes(), &table1_schema()).unwrap();
        let rules = MatchRules::default();
        let matcher = Matcher::new(&rules, d.schema()).unwrap();
        let r = d.records();
        assert!(matcher.matches(&r[0], &r[1]) && matcher.matches(&r[1], &r[2]));
        assert!(!matcher.matches(&r[0], &r[2]));
        let components = oracle_components(&d, &matcher);
        assert_eq!(components.len(), 1);

        let (out, log) = resolve(&d, None, &rules, &MergePolicy::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.records()[0].weight, 3.0);
        assert!(!out.records()[0].label);
        assert_eq!(log.entries[0].constituents, components[0]);
    }

    #[test]
    fn label_tie_breaks_toward_smallest_original_id() {
        let csv = "ID,Weight,Name,Gender,Age,Label\nb,1,Ann,F,30,0\na,1,Ann,F,30,1\n";
        let d = crate::dataset::read_dataset(csv.as_bytes(), &table1_schema()).unwrap();
        let (out, _) = resolve(&d, None, &MatchRules::default(), &MergePolicy::default()).unwrap();
        assert!(out.records()[0].label);
        assert_eq!(out.records()[0].id, "m:a+b");
    }

    #[test]
    fn cross_group_merges_are_opt_in() {
        let csv = "ID,Weight,Name,Gender,Age,Label\na,1,Sam,F,30,0\nb,1,Sam,M,30,0\n";
        let d = crate::dataset::read_dataset(csv.as_bytes(), &table1_schema()).unwrap();
        let (out, _) = resolve(&d, None, &MatchRules::default(), &MergePolicy::default()).unwrap();
        assert_eq!(out.len(), 2);
        let rules = MatchRules {
            require_same_group: false,
            ..MatchRules::default()
        };
        let (out, _) = resolve(&d, None, &rules, &MergePolicy::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.records()[0].group, out.records()[0].categorical[0]);
    }

    #[test]
    fn mismatched_blocks_are_rejected() {
        let d = table1();
        let blocks = table1_blocks(&d);
        assert!(matches!(
            resolve(
                &d,
                Some(&blocks),
                &MatchRules::default(),
                &MergePolicy::default()
            ),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn pair_count_formula() {
        assert_eq!(pair_count(6, None), 15);
        let blocks = ClusterAssignment::from_blocks(
            vec![
                vec!["a".into(), "b".into(), "c".into()],
                vec!["d".into(), "e".into()],
            ],
            None,
        )
        .unwrap();
        assert_eq!(pair_count(5, Some(&blocks)), 4);
        let singletons =
            ClusterAssignment::from_blocks((0..4).map(|i| vec![i.to_string()]).collect(), None)
                .unwrap();
        assert_eq!(pair_count(4, Some(&singletons)), 0);
        assert_eq!(pair_count(0, None), 0);
    }

    #[test]
    fn merge_log_csv() {
        let (_, log) = resolve(
            &table1(),
            None,
            &MatchRules::default(),
            &MergePolicy::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "merged_id,constituents,weight,label\nm:e2+e3,e2;e3,2,0\n"
        );
    }

    #[test]
    fn resolve_is_idempotent_on_table1() {
        let d = table1();
        let (once, _) = resolve(&d, None, &MatchRules::default(), &MergePolicy::default()).unwrap();
        let (twice, log) =
            resolve(&once, None, &MatchRules::default(), &MergePolicy::default()).unwrap();
        assert_eq!(once, twice);
        assert!(log.entries.is_empty());
    }
}

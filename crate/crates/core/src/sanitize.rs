//! Clustering-based anomaly detection.
//!
//! Records are clustered with k-means in standardized feature space. A record
//! is flagged when its cluster is too small, or when it lies unusually far
//! from its cluster's centroid. The clusters that survive double as blocks
//! for entity resolution.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{format_float, Dataset};
use crate::error::{Error, Result};
use crate::features::{featurize, FeatureMatrix};

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_RESTARTS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: BTreeMap<String, usize>,
    /// Member ids per cluster, in row order.
    pub per_cluster_ids: Vec<Vec<String>>,
    /// Within-cluster sum of squared distances.
    pub inertia: f64,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn cluster_of(&self, id: &str) -> Option<usize> {
        self.assignment.get(id).copied()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.per_cluster_ids.iter().map(Vec::len).collect()
    }

    /// Builds an assignment from explicit blocks, with centroids taken from
    /// `fm` when given.
    pub fn from_blocks(blocks: Vec<Vec<String>>, fm: Option<&FeatureMatrix>) -> Result<Self> {
        let mut assignment = BTreeMap::new();
        for (c, block) in blocks.iter().enumerate() {
            for id in block {
                if assignment.insert(id.clone(), c).is_some() {
                    return Err(Error::Parameter(format!(
                        "id `{id}` appears in more than one block"
                    )));
                }
            }
        }
        let centroids = match fm {
            Some(fm) => {
                let index = row_index(fm);
                blocks
                    .iter()
                    .map(|b| {
                        let rows: Vec<usize> = b
                            .iter()
                            .map(|id| {
                                index.get(id.as_str()).copied().ok_or_else(|| {
                                    Error::Parameter(format!("id `{id}` not in feature matrix"))
                                })
                            })
                            .collect::<Result<_>>()?;
                        Ok(mean_of_rows(fm, &rows))
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            None => vec![Vec::new(); blocks.len()],
        };
        let mut ca = Self {
            centroids,
            assignment,
            per_cluster_ids: blocks,
            inertia: 0.0,
        };
        if let Some(fm) = fm {
            ca.inertia = ca.compute_inertia(fm);
        }
        Ok(ca)
    }

    fn compute_inertia(&self, fm: &FeatureMatrix) -> f64 {
        let index = row_index(fm);
        self.per_cluster_ids
            .iter()
            .zip(&self.centroids)
            .flat_map(|(ids, c)| ids.iter().map(move |id| (id, c)))
            .map(|(id, c)| sq_dist(fm.row(index[id.as_str()]), c))
            .sum()
    }
}

fn row_index(fm: &FeatureMatrix) -> HashMap<&str, usize> {
    fm.row_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_of_rows(fm: &FeatureMatrix, rows: &[usize]) -> Vec<f64> {
    let mut m = vec![0.0; fm.width()];
    for &i in rows {
        for (acc, v) in m.iter_mut().zip(fm.row(i)) {
            *acc += v;
        }
    }
    let n = rows.len().max(1) as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Result of one Lloyd run, before ids are attached.
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia measured at each assignment step.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

impl LloydRun {
    pub fn inertia(&self) -> f64 {
        self.inertia_trace.last().copied().unwrap_or(0.0)
    }
}

/// k-means++ seeding: each new center is chosen among a few candidates drawn
/// with probability proportional to squared distance from the current
/// centers, keeping the candidate that lowers the potential the most.
fn seed_centers(fm: &FeatureMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = fm.rows();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let first = rng.random_range(0..n);
    let mut centers = vec![fm.row(first).to_vec()];
    let mut closest: Vec<f64> = fm.iter_rows().map(|r| sq_dist(r, &centers[0])).collect();

    while centers.len() < k {
        let total: f64 = closest.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let candidate = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                let mut pick = n - 1;
                for (i, d) in closest.iter().enumerate() {
                    if u < *d {
                        pick = i;
                        break;
                    }
                    u -= d;
                }
                pick
            } else {
                rng.random_range(0..n)
            };
            let row = fm.row(candidate);
            let updated: Vec<f64> = closest
                .iter()
                .zip(fm.iter_rows())
                .map(|(&d, r)| d.min(sq_dist(r, row)))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|(p, _, _)| potential < *p) {
                best = Some((potential, candidate, updated));
            }
        }
        let (_, pick, updated) = best.expect("at least one trial");
        centers.push(fm.row(pick).to_vec());
        closest = updated;
    }
    centers
}

fn assign(
    fm: &FeatureMatrix,
    centroids: &[Vec<f64>],
    labels: &mut [usize],
    dists: &mut [f64],
) -> bool {
    let mut changed = false;
    for (i, row) in fm.iter_rows().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in centroids.iter().enumerate() {
            let d = sq_dist(row, centroid);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        if labels[i] != best {
            changed = true;
            labels[i] = best;
        }
        dists[i] = best_d;
    }
    changed
}

/// Lloyd iterations from the given starting centers.
pub fn lloyd(fm: &FeatureMatrix, mut centroids: Vec<Vec<f64>>, max_iter: usize) -> LloydRun {
    let n = fm.rows();
    let k = centroids.len();
    let mut labels = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut trace = Vec::new();
    let mut iterations = 0;

    while iterations < max_iter {
        let changed = assign(fm, &centroids, &mut labels, &mut dists);
        trace.push(dists.iter().sum());
        iterations += 1;
        if !changed {
            break;
        }

        // Empty clusters take the point farthest from its centroid.
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .fold(None::<usize>, |acc, i| match acc {
                    Some(j) if dists[j] >= dists[i] => Some(j),
                    _ => Some(i),
                });
            if let Some(i) = far {
                counts[labels[i]] -= 1;
                labels[i] = c;
                counts[c] = 1;
                dists[i] = 0.0;
            }
        }

        let mut sums = vec![vec![0.0; fm.width()]; k];
        for (i, row) in fm.iter_rows().enumerate() {
            for (acc, v) in sums[labels[i]].iter_mut().zip(row) {
                *acc += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = counts[c] as f64;
                centroids[c] = sums[c].iter().map(|s| s / inv).collect();
            }
        }
    }
    LloydRun {
        labels,
        centroids,
        inertia_trace: trace,
        iterations,
    }
}

fn validate_k(fm: &FeatureMatrix, k: usize, max_iter: usize) -> Result<()> {
    if fm.rows() == 0 {
        return Err(Error::Parameter("k-means on an empty matrix".into()));
    }
    if k == 0 || k > fm.rows() {
        return Err(Error::Parameter(format!(
            "k must be in 1..={}, got {k}",
            fm.rows()
        )));
    }
    if max_iter == 0 {
        return Err(Error::Parameter("max_iter must be at least 1".into()));
    }
    Ok(())
}

/// Seeded k-means: `restarts` independent k-means++ seedings, each refined
/// by Lloyd iterations; the lowest-inertia run wins (earliest on ties).
pub fn kmeans_runs(
    fm: &FeatureMatrix,
    k: usize,
    seed: u64,
    max_iter: usize,
    restarts: usize,
) -> Result<LloydRun> {
    validate_k(fm, k, max_iter)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<LloydRun> = None;
    for _ in 0..restarts.max(1) {
        let centers = seed_centers(fm, k, &mut rng);
        let run = lloyd(fm, centers, max_iter);
        if best.as_ref().is_none_or(|b| run.inertia() < b.inertia()) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

pub fn kmeans(
    fm: &FeatureMatrix,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<ClusterAssignment> {
    let run = kmeans_runs(fm, k, seed, max_iter, DEFAULT_RESTARTS)?;
    Ok(attach_ids(fm, &run))
}

fn attach_ids(fm: &FeatureMatrix, run: &LloydRun) -> ClusterAssignment {
    let k = run.centroids.len();
    let mut per_cluster_ids = vec![Vec::new(); k];
    let mut assignment = BTreeMap::new();
    for (id, &c) in fm.row_ids.iter().zip(&run.labels) {
        per_cluster_ids[c].push(id.clone());
        assignment.insert(id.clone(), c);
    }
    ClusterAssignment {
        centroids: run.centroids.clone(),
        assignment,
        per_cluster_ids,
        inertia: run.inertia(),
    }
}

/// `round(sqrt(n / 2))`, at least 1.
pub fn default_k(n: usize) -> usize {
    ((n as f64 / 2.0).sqrt().round() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SanitizeAction {
    Remove,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SanitizationPolicy {
    pub min_cluster_size: usize,
    /// Clusters smaller than this fraction of the mean non-empty cluster size
    /// are also treated as too small. `0.0` disables the relative rule.
    pub min_cluster_fraction: f64,
    /// `tau`: a record is far when its centroid distance exceeds
    /// `mean + tau * std` of its cluster's distances.
    pub distance_multiplier: f64,
    pub action: SanitizeAction,
}

impl Default for SanitizationPolicy {
    fn default() -> Self {
        Self {
            min_cluster_size: 2,
            min_cluster_fraction: 0.5,
            distance_multiplier: 3.0,
            action: SanitizeAction::Remove,
        }
    }
}

impl SanitizationPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.min_cluster_size < 1 {
            return Err(Error::Parameter(
                "min_cluster_size must be at least 1".into(),
            ));
        }
        if !(self.distance_multiplier > 0.0) {
            return Err(Error::Parameter(
                "distance_multiplier must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.min_cluster_fraction) {
            return Err(Error::Parameter(
                "min_cluster_fraction must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// A policy under which no record can be flagged.
    pub fn permissive() -> Self {
        Self {
            min_cluster_size: 1,
            min_cluster_fraction: 0.0,
            distance_multiplier: f64::INFINITY,
            action: SanitizeAction::Remove,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlagReason {
    SmallCluster,
    FarFromCentroid,
}

impl fmt::Display for FlagReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlagReason::SmallCluster => "SMALL_CLUSTER",
            FlagReason::FarFromCentroid => "FAR_FROM_CENTROID",
        })
    }
}

impl FromStr for FlagReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SMALL_CLUSTER" => Ok(FlagReason::SmallCluster),
            "FAR_FROM_CENTROID" => Ok(FlagReason::FarFromCentroid),
            other => Err(Error::Parameter(format!("unknown flag reason `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlaggedRecord {
    pub id: String,
    pub reason: FlagReason,
    /// Euclidean distance to the record's centroid.
    pub distance: f64,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SanitizationReport {
    pub flagged: Vec<FlaggedRecord>,
    /// Clusters with flagged records removed; emptied clusters are dropped
    /// and the rest renumbered in order.
    pub surviving: ClusterAssignment,
}

impl SanitizationReport {
    pub fn flagged_ids(&self) -> HashSet<String> {
        self.flagged.iter().map(|f| f.id.clone()).collect()
    }

    /// CSV with columns `id,reason,distance,cluster`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "reason", "distance", "cluster"])?;
        for f in &self.flagged {
            w.write_record([
                f.id.clone(),
                f.reason.to_string(),
                format_float(f.distance),
                f.cluster.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn detect_outliers(
    ca: &ClusterAssignment,
    fm: &FeatureMatrix,
    policy: &SanitizationPolicy,
) -> SanitizationReport {
    let index = row_index(fm);
    let nonempty = ca
        .per_cluster_ids
        .iter()
        .filter(|c| !c.is_empty())
        .count()
        .max(1);
    let assigned: usize = ca.per_cluster_ids.iter().map(Vec::len).sum();
    let mean_size = assigned as f64 / nonempty as f64;
    let size_floor = (policy.min_cluster_size as f64).max(policy.min_cluster_fraction * mean_size);

    let mut flagged = Vec::new();
    for (c, ids) in ca.per_cluster_ids.iter().enumerate() {
        if ids.is_empty() {
            continue;
        }
        let centroid = &ca.centroids[c];
        let dists: Vec<f64> = ids
            .iter()
            .map(|id| sq_dist(fm.row(index[id.as_str()]), centroid).sqrt())
            .collect();
        if (ids.len() as f64) < size_floor {
            flagged.extend(ids.iter().zip(&dists).map(|(id, &distance)| FlaggedRecord {
                id: id.clone(),
                reason: FlagReason::SmallCluster,
                distance,
                cluster: c,
            }));
            continue;
        }
        if ids.len() < 2 || policy.distance_multiplier.is_infinite() {
            continue;
        }
        let n = dists.len() as f64;
        let mean = dists.iter().sum::<f64>() / n;
        let std = (dists.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n).sqrt();
        let limit = mean + policy.distance_multiplier * std;
        flagged.extend(ids.iter().zip(&dists).filter(|(_, &d)| d > limit).map(
            |(id, &distance)| FlaggedRecord {
                id: id.clone(),
                reason: FlagReason::FarFromCentroid,
                distance,
                cluster: c,
            },
        ));
    }

    let removed: HashSet<&str> = flagged.iter().map(|f| f.id.as_str()).collect();
    let blocks: Vec<Vec<String>> = ca
        .per_cluster_ids
        .iter()
        .map(|ids| {
            ids.iter()
                .filter(|id| !removed.contains(id.as_str()))
                .cloned()
                .collect::<Vec<_>>()
        })
        .filter(|b: &Vec<String>| !b.is_empty())
        .collect();
    let surviving = ClusterAssignment::from_blocks(blocks, Some(fm))
        .expect("blocks partition a subset of fm rows");
    SanitizationReport { flagged, surviving }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SanitizeParams {
    /// `None` selects [`default_k`] of the input size.
    pub k: Option<usize>,
    pub seed: u64,
    pub max_iter: usize,
    pub policy: SanitizationPolicy,
}

impl Default for SanitizeParams {
    fn default() -> Self {
        Self {
            k: None,
            seed: 0,
            max_iter: DEFAULT_MAX_ITER,
            policy: SanitizationPolicy::default(),
        }
    }
}

/// Featurize, cluster, flag, and drop flagged records.
pub fn sanitize(d: &Dataset, params: &SanitizeParams) -> Result<(Dataset, SanitizationReport)> {
    params.policy.validate()?;
    let fm = featurize(d)?;
    let k = params.k.unwrap_or_else(|| default_k(d.len()));
    let ca = kmeans(&fm, k, params.seed, params.max_iter)?;
    let report = detect_outliers(&ca, &fm, &params.policy);
    let flagged = report.flagged_ids();
    Ok((d.without_ids(&flagged), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fixtures::table1;

    fn points(rows: &[&[f64]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(
            (0..rows.len()).map(|i| format!("p{i}")).collect(),
            rows.iter().map(|r| r.to_vec()).collect(),
        )
        .unwrap()
    }

    /// Minimum within-cluster sum of squares over every 2-partition.
    fn best_two_partition(fm: &FeatureMatrix) -> (f64, Vec<usize>) {
        let n = fm.rows();
        let mut best = (f64::INFINITY, Vec::new());
        for mask in 1u32..(1 << (n - 1)) {
            let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
            let mut wcss = 0.0;
            for c in 0..2 {
                let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                let m = mean_of_rows(fm, &rows);
                wcss += rows.iter().map(|&i| sq_dist(fm.row(i), &m)).sum::<f64>();
            }
            if wcss < best.0 {
                best = (wcss, labels);
            }
        }
        best
    }

    #[test]
    fn table1_two_clusters_match_exhaustive_optimum() {
        let fm = featurize(&table1()).unwrap();
        let (wcss, labels) = best_two_partition(&fm);
        let e6 = labels[5];
        assert!(labels[..5].iter().all(|&l| l != e6));

        let ca = kmeans(&fm, 2, 7, DEFAULT_MAX_ITER).unwrap();
        let mut sizes = ca.sizes();
        sizes.sort();
        assert_eq!(sizes, vec![1, 5]);
        let c6 = ca.cluster_of("e6").unwrap();
        assert_eq!(ca.per_cluster_ids[c6], vec!["e6"]);
        assert!((ca.inertia - wcss).abs() < 1e-12);
    }

    #[test]
    fn table1_clustering_is_seed_robust() {
        let fm = featurize(&table1()).unwrap();
        for seed in 0..50 {
            let ca = kmeans(&fm, 2, seed, DEFAULT_MAX_ITER).unwrap();
            let c6 = ca.cluster_of("e6").unwrap();
            assert_eq!(ca.per_cluster_ids[c6].len(), 1, "seed {seed}");
        }
    }

    #[test]
    fn k_one_and_k_n() {
        let fm = featurize(&table1()).unwrap();
        let one = kmeans(&fm, 1, 0, 10).unwrap();
        assert_eq!(one.per_cluster_ids[0].len(), 6);
        let all = kmeans(&fm, 6, 0, 10).unwrap();
        assert!(all.sizes().iter().all(|&s| s == 1));
        assert!(all.inertia.abs() < 1e-24);
    }

    #[test]
    fn k_out_of_range_is_rejected() {
        let fm = featurize(&table1()).unwrap();
        assert!(matches!(kmeans(&fm, 7, 0, 10), Err(Error::Parameter(_))));
        assert!(matches!(kmeans(&fm, 0, 0, 10), Err(Error::Parameter(_))));
        assert!(matches!(kmeans(&fm, 2, 0, 0), Err(Error::Parameter(_))));
        let empty = FeatureMatrix::from_rows(vec![], vec![]).unwrap();
        assert!(matches!(kmeans(&empty, 1, 0, 10), Err(Error::Parameter(_))));
    }

    #[test]
    fn table1_singleton_is_flagged() {
        let fm = featurize(&table1()).unwrap();
        let ca = kmeans(&fm, 2, 0, DEFAULT_MAX_ITER).unwrap();
        let policy = SanitizationPolicy {
            min_cluster_size: 2,
            ..SanitizationPolicy::default()
        };
        let report = detect_outliers(&ca, &fm, &policy);
        assert_eq!(report.flagged.len(), 1);
        assert_eq!(report.flagged[0].id, "e6");
        assert_eq!(report.flagged[0].reason, FlagReason::SmallCluster);
        assert_eq!(report.surviving.k(), 1);
        assert_eq!(
            report.surviving.per_cluster_ids[0],
            vec!["e1", "e2", "e3", "e4", "e5"]
        );
    }

    #[test]
    fn identical_points_are_not_flagged() {
        let fm = points(&[&[1.0, 2.0][..]; 6]);
        let ca = kmeans(&fm, 1, 0, 10).unwrap();
        let report = detect_outliers(&ca, &fm, &SanitizationPolicy::default());
        assert!(report.flagged.is_empty());
    }

    #[test]
    fn far_point_flagged_by_distance_rule() {
        // Centroid 2; distances 2,2,2,2,8; mean 3.2, population std 2.4;
        // limit at tau = 1 is 5.6 so only the point at 10 exceeds it.
        let fm = points(&[&[0.0], &[0.0], &[0.0], &[0.0], &[10.0]]);
        let dists = [2.0f64, 2.0, 2.0, 2.0, 8.0];
        let mean = dists.iter().sum::<f64>() / 5.0;
        let std = (dists.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
        assert!((mean + std - 5.6).abs() < 1e-12);

        let ca = kmeans(&fm, 1, 0, 10).unwrap();
        let policy = SanitizationPolicy {
            min_cluster_size: 1,
            min_cluster_fraction: 0.0,
            distance_multiplier: 1.0,
            action: SanitizeAction::Remove,
        };
        let report = detect_outliers(&ca, &fm, &policy);
        assert_eq!(report.flagged.len(), 1);
        assert_eq!(report.flagged[0].id, "p4");
        assert_eq!(report.flagged[0].reason, FlagReason::FarFromCentroid);
        assert!((report.flagged[0].distance - 8.0).abs() < 1e-12);
        assert_eq!(report.surviving.centroids[0], vec![0.0]);
    }

    #[test]
    fn sanitize_table1_drops_e6() {
        let params = SanitizeParams {
            k: Some(2),
            ..SanitizeParams::default()
        };
        let (out, report) = sanitize(&table1(), &params).unwrap();
        assert_eq!(out.ids(), vec!["e1", "e2", "e3", "e4", "e5"]);
        assert_eq!(report.flagged_ids(), HashSet::from(["e6".to_owned()]));
        assert_eq!(default_k(6), 2);
        assert_eq!(
            sanitize(&table1(), &SanitizeParams::default()).unwrap().0,
            out
        );
    }

    #[test]
    fn permissive_policy_keeps_everything() {
        let params = SanitizeParams {
            k: Some(2),
            policy: SanitizationPolicy::permissive(),
            ..SanitizeParams::default()
        };
        let (out, report) = sanitize(&table1(), &params).unwrap();
        assert_eq!(out, table1());
        assert!(report.flagged.is_empty());
    }

    #[test]
    fn report_csv_layout() {
        let params = SanitizeParams {
            k: Some(2),
            ..SanitizeParams::default()
        };
        let (_, report) = sanitize(&table1(), &params).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("id,reason,distance,cluster"));
        assert!(lines.next().unwrap().starts_with("e6,SMALL_CLUSTER,0,"));
    }

    #[test]
    fn invalid_policy_is_rejected() {
        let params = SanitizeParams {
            policy: SanitizationPolicy {
                distance_multiplier: 0.0,
                ..SanitizationPolicy::default()
            },
            ..SanitizeParams::default()
        };
        assert!(matches!(
            sanitize(&table1(), &params),
            Err(Error::Parameter(_))
        ));
    }
}

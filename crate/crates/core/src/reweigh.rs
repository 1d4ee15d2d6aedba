//! Example reweighing for demographic parity on the training labels.
//!
//! For each sensitive group `g` let `P_g` and `N_g` be the total weight of
//! its positive and negative examples and `r_g = P_g / (P_g + N_g)`. The
//! reference group is the one with the highest ratio; every other group has
//! one label side rescaled so that its ratio becomes equal to the reference.

use std::fmt;
use std::io::Write;

use crate::dataset::{format_float, Dataset};
use crate::error::{Error, Result};

/// Ratios closer than this are already equal; the group is left untouched.
/// This makes reweighing an exact fixed point on its own output.
const RATIO_EQUALITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStat {
    pub group: String,
    pub positive: f64,
    pub negative: f64,
}

impl GroupStat {
    pub fn total(&self) -> f64 {
        self.positive + self.negative
    }

    pub fn ratio(&self) -> f64 {
        self.positive / self.total()
    }
}

/// Weighted label totals per sensitive group, in schema order `(A, B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub groups: [GroupStat; 2],
}

impl GroupStats {
    pub fn get(&self, group: &str) -> Option<&GroupStat> {
        self.groups.iter().find(|g| g.group == group)
    }

    pub fn ratios(&self) -> [f64; 2] {
        [self.groups[0].ratio(), self.groups[1].ratio()]
    }

    /// Index of the reference group: highest ratio, ties to group A.
    pub fn reference(&self) -> usize {
        let [a, b] = self.ratios();
        if a >= b {
            0
        } else {
            1
        }
    }
}

pub fn group_stats(d: &Dataset) -> Result<GroupStats> {
    let schema = d.schema();
    let mut groups = [
        GroupStat {
            group: schema.group_a().to_owned(),
            positive: 0.0,
            negative: 0.0,
        },
        GroupStat {
            group: schema.group_b().to_owned(),
            positive: 0.0,
            negative: 0.0,
        },
    ];
    for r in d.records() {
        let g = if r.group == groups[0].group { 0 } else { 1 };
        if r.label {
            groups[g].positive += r.weight;
        } else {
            groups[g].negative += r.weight;
        }
    }
    if let Some(g) = groups.iter().find(|g| !(g.total() > 0.0)) {
        return Err(Error::DegenerateGroup(g.group.clone()));
    }
    Ok(GroupStats { groups })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReweighMode {
    /// Scale up positive weights of groups below the reference ratio.
    UpweightPositives,
    /// Scale down negative weights of groups below the reference ratio.
    DownweightNegatives,
}

impl fmt::Display for ReweighMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReweighMode::UpweightPositives => "UPWEIGHT_POSITIVES",
            ReweighMode::DownweightNegatives => "DOWNWEIGHT_NEGATIVES",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceGroup {
    MaxRatioGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReweighStrategy {
    pub mode: ReweighMode,
    pub reference: ReferenceGroup,
}

impl ReweighStrategy {
    pub fn new(mode: ReweighMode) -> Self {
        Self {
            mode,
            reference: ReferenceGroup::MaxRatioGroup,
        }
    }
}

impl Default for ReweighStrategy {
    fn default() -> Self {
        Self::new(ReweighMode::DownweightNegatives)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightChange {
    pub id: String,
    pub old_weight: f64,
    pub new_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReweighReport {
    pub reference_group: String,
    pub changes: Vec<WeightChange>,
    pub before: GroupStats,
    pub after: GroupStats,
    /// Scale factor per group in schema order; 1.0 for untouched groups.
    pub factors: [f64; 2],
}

impl ReweighReport {
    /// CSV `id,old_weight,new_weight` followed by `#`-prefixed footer lines
    /// with per-group ratios.
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        {
            let mut w = csv::Writer::from_writer(&mut writer);
            w.write_record(["id", "old_weight", "new_weight"])?;
            for c in &self.changes {
                w.write_record([
                    c.id.clone(),
                    format_float(c.old_weight),
                    format_float(c.new_weight),
                ])?;
            }
            w.flush()?;
        }
        writeln!(writer, "# group,ratio_before,ratio_after,factor")?;
        for i in 0..2 {
            writeln!(
                writer,
                "# {},{},{},{}",
                self.before.groups[i].group,
                format_float(self.before.groups[i].ratio()),
                format_float(self.after.groups[i].ratio()),
                format_float(self.factors[i])
            )?;
        }
        Ok(())
    }
}

pub fn reweigh(d: &Dataset, strategy: &ReweighStrategy) -> Result<(Dataset, ReweighReport)> {
    let before = group_stats(d)?;
    let ReferenceGroup::MaxRatioGroup = strategy.reference;
    let reference = before.reference();
    let r_ref = before.groups[reference].ratio();

    let mut factors = [1.0, 1.0];
    for (g, stat) in before.groups.iter().enumerate() {
        if g == reference || (r_ref - stat.ratio()).abs() <= RATIO_EQUALITY_TOL {
            continue;
        }
        let infeasible = |reason: &str| Error::Infeasible {
            group: stat.group.clone(),
            reason: reason.to_owned(),
        };
        if r_ref >= 1.0 {
            return Err(infeasible("reference group has only positive labels"));
        }
        if stat.positive <= 0.0 {
            return Err(infeasible("group has no positive weight"));
        }
        // r_ref / (1 - r_ref) == P_ref / N_ref, written without the ratio to stay exact.
        let refs = &before.groups[reference];
        factors[g] = match strategy.mode {
            ReweighMode::UpweightPositives => {
                refs.positive * stat.negative / (refs.negative * stat.positive)
            }
            ReweighMode::DownweightNegatives => {
                stat.positive * refs.negative / (refs.positive * stat.negative)
            }
        };
    }

    let scale_positive = strategy.mode == ReweighMode::UpweightPositives;
    let group_index = |group: &str| usize::from(group != before.groups[0].group);
    let mut changes = Vec::with_capacity(d.len());
    let records = d
        .records()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            let f = factors[group_index(&r.group)];
            let old = r.weight;
            if f != 1.0 && r.label == scale_positive {
                r.weight *= f;
            }
            changes.push(WeightChange {
                id: r.id.clone(),
                old_weight: old,
                new_weight: r.weight,
            });
            r
        })
        .collect();
    let out = d.with_records_unchecked(records);
    let after = group_stats(&out)?;
    let [a, b] = after.ratios();
    debug_assert!(
        (a - b).abs() <= 1e-9,
        "ratios after reweigh differ: {a} vs {b}"
    );

    Ok((
        out,
        ReweighReport {
            reference_group: before.groups[reference].group.clone(),
            changes,
            before,
            after,
            factors,
        },
    ))
}

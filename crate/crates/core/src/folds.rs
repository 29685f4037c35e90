//! Fold plans for the five cross-validation schemes.
//!
//! Every splitter returns a [`FoldPlan`]: an ordered list of
//! `(train ids, validation ids)` pairs. Order matters: the last fold's
//! training ids are what the LAST FOLD strategy deploys.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{count_labels, Dataset, RecordId, YearRange};
use crate::error::{Error, Result};
use crate::geo::assign_grid_blocks;
use crate::kmeans::{kmeans, sq_dist, standardize};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Random,
    Spatial,
    Environmental,
    SpatioTemporal,
    Tss,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Random => "random",
            Scheme::Spatial => "spatial",
            Scheme::Environmental => "environmental",
            Scheme::SpatioTemporal => "spatio_temporal",
            Scheme::Tss => "tss",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemeParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_km: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intervals: Option<Vec<YearRange>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fold {
    pub train: Vec<RecordId>,
    pub val: Vec<RecordId>,
    /// Validation set holds a single class; its AUC is undefined.
    pub single_class_val: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub scheme: Scheme,
    pub params: SchemeParams,
    pub folds: Vec<Fold>,
}

#[derive(Serialize)]
struct PlanHeader<'a> {
    scheme: Scheme,
    params: &'a SchemeParams,
    n_folds: usize,
    fold_sizes: Vec<(usize, usize)>,
    single_class_folds: Vec<usize>,
}

impl FoldPlan {
    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    /// Training ids of the final fold: the LAST FOLD deployment set.
    pub fn last_fold_train(&self) -> Option<&[RecordId]> {
        self.folds.last().map(|f| f.train.as_slice())
    }

    pub fn flagged_folds(&self) -> Vec<usize> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(_, f)| f.single_class_val)
            .map(|(i, _)| i)
            .collect()
    }

    /// Structural checks: non-empty, disjoint train/val per fold, ids known.
    pub fn validate(&self, d: &Dataset) -> Result<()> {
        if self.folds.is_empty() {
            return Err(Error::InvalidArgument("fold plan has no folds".into()));
        }
        for (j, f) in self.folds.iter().enumerate() {
            if f.train.is_empty() || f.val.is_empty() {
                return Err(Error::InvalidArgument(format!("fold {j} has an empty side")));
            }
            let train: HashSet<_> = f.train.iter().collect();
            if f.val.iter().any(|id| train.contains(id)) {
                return Err(Error::InvalidArgument(format!(
                    "fold {j} reuses ids across train and validation"
                )));
            }
            d.positions(&f.train)?;
            d.positions(&f.val)?;
        }
        Ok(())
    }

    /// `record_id,fold_index,role` rows, fold by fold, train ids first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("record_id,fold_index,role\n");
        for (j, f) in self.folds.iter().enumerate() {
            for id in &f.train {
                out.push_str(&format!("{id},{j},train\n"));
            }
            for id in &f.val {
                out.push_str(&format!("{id},{j},val\n"));
            }
        }
        out
    }

    pub fn header_json(&self) -> String {
        let header = PlanHeader {
            scheme: self.scheme,
            params: &self.params,
            n_folds: self.folds.len(),
            fold_sizes: self.folds.iter().map(|f| (f.train.len(), f.val.len())).collect(),
            single_class_folds: self.flagged_folds(),
        };
        serde_json::to_string_pretty(&header).expect("plan header serializes")
    }

    /// Write `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, self.header_json() + "\n").map_err(|e| Error::io(&json, e))
    }
}

/// Ordered, non-overlapping year ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<YearRange>", into = "Vec<YearRange>")]
pub struct TemporalIntervals(Vec<YearRange>);

impl TemporalIntervals {
    pub fn new(ranges: Vec<YearRange>) -> Result<Self> {
        if ranges.is_empty() {
            return Err(Error::InvalidArgument("no temporal intervals".into()));
        }
        for w in ranges.windows(2) {
            if w[1].first <= w[0].last {
                return Err(Error::InvalidArgument(format!(
                    "intervals {} and {} are not strictly increasing and disjoint",
                    w[0], w[1]
                )));
            }
        }
        Ok(TemporalIntervals(ranges))
    }

    pub fn ranges(&self) -> &[YearRange] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn interval_of(&self, year: i32) -> Option<usize> {
        self.0.iter().position(|r| r.contains(year))
    }

    /// Interval index of every record; fails if a year is uncovered.
    fn assign(&self, d: &Dataset) -> Result<Vec<usize>> {
        d.records()
            .iter()
            .map(|r| {
                self.interval_of(r.year).ok_or_else(|| Error::Interval {
                    interval: "none".into(),
                    reason: format!("record {} (year {}) lies in no interval", r.id, r.year),
                })
            })
            .collect()
    }
}

impl TryFrom<Vec<YearRange>> for TemporalIntervals {
    type Error = Error;
    fn try_from(v: Vec<YearRange>) -> Result<Self> {
        TemporalIntervals::new(v)
    }
}

impl From<TemporalIntervals> for Vec<YearRange> {
    fn from(t: TemporalIntervals) -> Self {
        t.0
    }
}

/// Build folds from a group label per record: fold `j` validates on group `j`.
fn folds_from_groups(d: &Dataset, group: &[usize], k: usize) -> Vec<Fold> {
    (0..k)
        .map(|j| {
            let (mut train, mut val) = (Vec::new(), Vec::new());
            let mut labels = Vec::new();
            for (r, &g) in d.records().iter().zip(group) {
                if g == j {
                    val.push(r.id);
                    labels.push(r.label);
                } else {
                    train.push(r.id);
                }
            }
            let (p, a) = count_labels(labels);
            Fold {
                train,
                val,
                single_class_val: p == 0 || a == 0,
            }
        })
        .collect()
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds the {n} records")));
    }
    Ok(())
}

/// Uniformly random k-fold: a seeded permutation cut into `k` validation
/// sets whose sizes differ by at most one.
pub fn random_kfold(d: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    check_k(k, d.len())?;
    let n = d.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng(seed));
    let mut group = vec![0; n];
    let (base, extra) = (n / k, n % k);
    let mut cursor = 0;
    for j in 0..k {
        let size = base + usize::from(j < extra);
        for &i in &order[cursor..cursor + size] {
            group[i] = j;
        }
        cursor += size;
    }
    Ok(FoldPlan {
        scheme: Scheme::Random,
        params: SchemeParams {
            k: Some(k),
            seed: Some(seed),
            ..Default::default()
        },
        folds: folds_from_groups(d, &group, k),
    })
}

/// Largest-first greedy allocation of groups to `k` folds: each group (in
/// descending size, ties ordered by seed) goes to the currently smallest
/// fold, lowest index first.
fn balance_groups(sizes: &[usize], k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.shuffle(&mut rng::rng(seed));
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]));
    let mut load = vec![0usize; k];
    let mut fold_of = vec![0; sizes.len()];
    for g in order {
        let target = (0..k).min_by_key(|&f| (load[f], f)).unwrap();
        fold_of[g] = target;
        load[target] += sizes[g];
    }
    fold_of
}

/// Spatial blocking: grid blocks of `block_km` allocated to `k` folds.
pub fn spatial_blocks_cv(d: &Dataset, block_km: f64, k: usize, seed: u64) -> Result<FoldPlan> {
    check_k(k, d.len())?;
    let blocks = assign_grid_blocks(d, block_km, seed)?;
    if blocks.n_blocks() < k {
        return Err(Error::TooFewBlocks {
            block_km,
            found: blocks.n_blocks(),
            needed: k,
        });
    }
    let fold_of_block = balance_groups(&blocks.block_sizes(), k, rng::derive(seed, 1));
    let group: Vec<usize> = blocks.block_ids.iter().map(|&b| fold_of_block[b]).collect();
    Ok(FoldPlan {
        scheme: Scheme::Spatial,
        params: SchemeParams {
            k: Some(k),
            block_km: Some(block_km),
            seed: Some(seed),
            ..Default::default()
        },
        folds: folds_from_groups(d, &group, k),
    })
}

/// Greatest number of records [`env_blocks_cv`]'s repair loop may move.
const MAX_REPAIR_MOVES: usize = 1_000_000;

/// Environmental blocking: k-means on standardized features, then repair
/// until every cluster holds both classes. Repair moves, for a cluster
/// lacking class `c`, the class-`c` record nearest its center taken from a
/// cluster that holds at least two of them.
pub fn env_blocks_cv(d: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    check_k(k, d.len())?;
    let labels = d.labels();
    let (n_pres, n_abs) = count_labels(labels.iter().copied());
    for (label, count) in [(1u8, n_pres), (0u8, n_abs)] {
        if count < k {
            return Err(Error::ClassTooSmall {
                label,
                count,
                needed: k,
            });
        }
    }
    let rows: Vec<Vec<f64>> = d.records().iter().map(|r| r.features.clone()).collect();
    let z = standardize(&rows);
    let clustering = kmeans(&z, k, seed)?;
    let mut group = clustering.assignment;
    let centers = clustering.centers;
    let mut moves = 0;
    loop {
        let mut counts = vec![[0usize; 2]; k];
        for (&g, &l) in group.iter().zip(&labels) {
            counts[g][l as usize] += 1;
        }
        let Some((cluster, class)) = (0..k)
            .flat_map(|c| [(c, 0u8), (c, 1u8)])
            .find(|&(c, l)| counts[c][l as usize] == 0)
        else {
            break;
        };
        let donor = (0..group.len())
            .filter(|&i| labels[i] == class && counts[group[i]][class as usize] >= 2)
            .min_by(|&a, &b| {
                sq_dist(&z[a], &centers[cluster])
                    .total_cmp(&sq_dist(&z[b], &centers[cluster]))
                    .then(a.cmp(&b))
            })
            .expect("class has at least k members, so some cluster holds two");
        group[donor] = cluster;
        moves += 1;
        if moves > MAX_REPAIR_MOVES {
            return Err(Error::InvalidArgument("class-balance repair did not converge".into()));
        }
    }
    if moves > 0 {
        log::info!("environmental blocking moved {moves} records to balance classes");
    }
    Ok(FoldPlan {
        scheme: Scheme::Environmental,
        params: SchemeParams {
            k: Some(k),
            seed: Some(seed),
            ..Default::default()
        },
        folds: folds_from_groups(d, &group, k),
    })
}

/// Spatio-temporal blocking: a spatial plan inside each interval, training
/// never crossing intervals. Folds are ordered by (interval, spatial fold).
pub fn spatiotemporal_cv(
    d: &Dataset,
    block_km: f64,
    k_spatial: usize,
    intervals: &TemporalIntervals,
    seed: u64,
) -> Result<FoldPlan> {
    let assigned = intervals.assign(d)?;
    let mut folds = Vec::with_capacity(k_spatial * intervals.len());
    for (t, range) in intervals.ranges().iter().enumerate() {
        let ctx = |reason: String| Error::Interval {
            interval: range.to_string(),
            reason,
        };
        let ids: Vec<RecordId> = d
            .records()
            .iter()
            .zip(&assigned)
            .filter(|(_, &a)| a == t)
            .map(|(r, _)| r.id)
            .collect();
        let sub = d.subset(&ids)?;
        let (p, a) = count_labels(sub.labels());
        if p == 0 || a == 0 {
            return Err(ctx(format!("{p} presences and {a} absences; both classes required")));
        }
        let plan = spatial_blocks_cv(&sub, block_km, k_spatial, seed).map_err(|e| ctx(e.to_string()))?;
        folds.extend(plan.folds);
    }
    Ok(FoldPlan {
        scheme: Scheme::SpatioTemporal,
        params: SchemeParams {
            k: Some(k_spatial),
            block_km: Some(block_km),
            intervals: Some(intervals.ranges().to_vec()),
            seed: Some(seed),
        },
        folds,
    })
}

/// Forward chaining over `T` intervals: fold `j` trains on intervals
/// `1..=j` and validates on interval `j + 1`.
pub fn tss_cv(d: &Dataset, intervals: &TemporalIntervals) -> Result<FoldPlan> {
    if intervals.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "forward chaining needs at least 2 intervals, got {}",
            intervals.len()
        )));
    }
    let assigned = intervals.assign(d)?;
    for (t, range) in intervals.ranges().iter().enumerate() {
        if !assigned.contains(&t) {
            return Err(Error::Interval {
                interval: range.to_string(),
                reason: "no records".into(),
            });
        }
    }
    let mut folds = Vec::with_capacity(intervals.len() - 1);
    for j in 1..intervals.len() {
        let (mut train, mut val) = (Vec::new(), Vec::new());
        let (mut train_labels, mut val_labels) = (Vec::new(), Vec::new());
        for (r, &t) in d.records().iter().zip(&assigned) {
            if t < j {
                train.push(r.id);
                train_labels.push(r.label);
            } else if t == j {
                val.push(r.id);
                val_labels.push(r.label);
            }
        }
        let (p, a) = count_labels(train_labels);
        if p == 0 || a == 0 {
            return Err(Error::Interval {
                interval: intervals.ranges()[j - 1].to_string(),
                reason: format!("training window up to here has {p} presences and {a} absences"),
            });
        }
        let (vp, va) = count_labels(val_labels);
        folds.push(Fold {
            train,
            val,
            single_class_val: vp == 0 || va == 0,
        });
    }
    Ok(FoldPlan {
        scheme: Scheme::Tss,
        params: SchemeParams {
            intervals: Some(intervals.ranges().to_vec()),
            ..Default::default()
        },
        folds,
    })
}

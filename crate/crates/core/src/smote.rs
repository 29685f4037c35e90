//! SMOTE oversampling of presences inside a training partition.
//!
//! Synthetic rows interpolate between a presence and one of its nearest
//! presence neighbours. Neighbours are found in z-scored feature space
//! (statistics over the whole training table); interpolation happens in the
//! original units. Synthetic rows carry label 1 and a [`RowKey::Synthetic`]
//! key, so they can never be mistaken for records eligible for validation.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::{sq_dist, standardize};
use crate::rng;
use crate::table::{RowKey, TrainingTable};

pub const DEFAULT_K_NEIGHBORS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoteConfig {
    pub target_presence_ratio: f64,
    #[serde(default = "default_k")]
    pub k_neighbors: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_k() -> usize {
    DEFAULT_K_NEIGHBORS
}

impl SmoteConfig {
    pub fn new(target_presence_ratio: f64, seed: u64) -> Self {
        SmoteConfig {
            target_presence_ratio,
            k_neighbors: DEFAULT_K_NEIGHBORS,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_presence_ratio > 0.0 && self.target_presence_ratio < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "target presence ratio {} is outside (0, 1)",
                self.target_presence_ratio
            )));
        }
        if self.k_neighbors == 0 {
            return Err(Error::InvalidArgument("k_neighbors must be at least 1".into()));
        }
        Ok(())
    }
}

/// Smallest presence total `p` with `p / (p + absences) >= ratio`.
pub fn required_presences(absences: usize, ratio: f64) -> usize {
    let a = absences as f64;
    let mut p = (ratio * a / (1.0 - ratio)).ceil().max(0.0) as usize;
    // Correct the float ceiling in either direction.
    while p > 0 && (p - 1) as f64 >= ratio * ((p - 1) as f64 + a) {
        p -= 1;
    }
    while (p as f64) < ratio * (p as f64 + a) {
        p += 1;
    }
    p
}

/// Oversample presences until the presence ratio reaches the target.
///
/// Originals come first and unchanged; synthetic rows follow. When the table
/// already meets the target it is returned as is.
pub fn smote(train: &TrainingTable, cfg: &SmoteConfig) -> Result<TrainingTable> {
    cfg.validate()?;
    train.validate()?;
    let (presences, absences) = train.class_counts();
    let current = train.presence_ratio();
    if current >= cfg.target_presence_ratio {
        log::info!(
            "smote: presence ratio {current:.3} already meets target {:.3}; table unchanged",
            cfg.target_presence_ratio
        );
        return Ok(train.clone());
    }
    if presences < 2 {
        return Err(Error::Smote(format!(
            "need at least 2 presences to interpolate, found {presences}"
        )));
    }
    let n_syn = required_presences(absences, cfg.target_presence_ratio) - presences;

    let minority: Vec<usize> = (0..train.len()).filter(|&i| train.labels[i] == 1).collect();
    let z = standardize(&train.features);
    let k = cfg.k_neighbors.min(presences - 1);
    let neighbours: Vec<Vec<usize>> = minority
        .iter()
        .map(|&i| {
            let mut near: Vec<(f64, usize)> = minority
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| (sq_dist(&z[i], &z[j]), j))
                .collect();
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            near.truncate(k);
            near.into_iter().map(|(_, j)| j).collect()
        })
        .collect();

    let mut r = rng::rng(cfg.seed);
    let mut bases: Vec<usize> = (0..minority.len()).collect();
    bases.shuffle(&mut r);

    let mut out = train.clone();
    out.keys.reserve(n_syn);
    out.features.reserve(n_syn);
    out.labels.reserve(n_syn);
    for s in 0..n_syn {
        let b = bases[s % bases.len()];
        let base = &train.features[minority[b]];
        let nn = &train.features[neighbours[b][r.random_range(0..k)]];
        let u: f64 = r.random();
        out.features
            .push(base.iter().zip(nn).map(|(x, y)| x + u * (y - x)).collect());
        out.keys.push(RowKey::Synthetic(s as u64));
        out.labels.push(1);
    }
    log::info!("smote: {n_syn} synthetic presences added to {presences} presences / {absences} absences");
    Ok(out)
}

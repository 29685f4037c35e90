//! Feature/label tables handed to learners.
//!
//! A table is what remains of a dataset once coordinates and years are
//! dropped, plus any synthetic rows added by oversampling. Row keys say
//! where each row came from, so audits can prove synthetic rows never reach
//! validation or test sets.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, RecordId};
use crate::error::{Error, Result};

/// Provenance of a training row. Originals sort before synthetics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKey {
    Original(RecordId),
    Synthetic(u64),
}

impl RowKey {
    pub fn record_id(self) -> Option<RecordId> {
        match self {
            RowKey::Original(id) => Some(id),
            RowKey::Synthetic(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTable {
    pub keys: Vec<RowKey>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl TrainingTable {
    /// Rows for `ids`, in the order given.
    pub fn from_dataset(d: &Dataset, ids: &[RecordId]) -> Result<Self> {
        let positions = d.positions(ids)?;
        let records = d.records();
        Ok(TrainingTable {
            keys: ids.iter().map(|&id| RowKey::Original(id)).collect(),
            features: positions.iter().map(|&p| records[p].features.clone()).collect(),
            labels: positions.iter().map(|&p| records[p].label).collect(),
        })
    }

    /// Every record of `d`, in dataset order.
    pub fn from_all(d: &Dataset) -> Self {
        TrainingTable {
            keys: d.records().iter().map(|r| RowKey::Original(r.id)).collect(),
            features: d.records().iter().map(|r| r.features.clone()).collect(),
            labels: d.labels(),
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn width(&self) -> Option<usize> {
        self.features.first().map(Vec::len)
    }

    pub fn original_ids(&self) -> Vec<RecordId> {
        self.keys.iter().filter_map(|k| k.record_id()).collect()
    }

    pub fn n_synthetic(&self) -> usize {
        self.keys.iter().filter(|k| matches!(k, RowKey::Synthetic(_))).count()
    }

    /// `(presences, absences)`.
    pub fn class_counts(&self) -> (usize, usize) {
        crate::data::count_labels(self.labels.iter().copied())
    }

    /// Presence fraction; 0 for an empty table.
    pub fn presence_ratio(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.class_counts().0 as f64 / self.len() as f64
    }

    /// Row positions sorted by key, so fitting does not depend on row order.
    pub(crate) fn canonical_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| match self.keys[a].cmp(&self.keys[b]) {
            Ordering::Equal => a.cmp(&b),
            o => o,
        });
        order
    }

    /// Shape, label and finiteness checks shared by every learner.
    pub fn validate(&self) -> Result<usize> {
        if self.features.len() != self.len() || self.labels.len() != self.len() {
            return Err(Error::InvalidDataset(format!(
                "table columns disagree: {} keys, {} feature rows, {} labels",
                self.len(),
                self.features.len(),
                self.labels.len()
            )));
        }
        let width = self.width().unwrap_or(0);
        for (row, (f, &y)) in self.features.iter().zip(&self.labels).enumerate() {
            if f.len() != width {
                return Err(Error::WidthMismatch {
                    expected: width,
                    found: f.len(),
                });
            }
            if let Some(column) = f.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row, column });
            }
            if y > 1 {
                return Err(Error::InvalidDataset(format!("row {row} has label {y}")));
            }
        }
        Ok(width)
    }
}

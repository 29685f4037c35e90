//! Tree-ensemble classifiers: random forests and logistic gradient boosting.
//!
//! Both learners sort training rows by [`RowKey`] before any random draw, so
//! the fitted model depends on the rows and the seed, never on row order.

mod forest;
mod gbm;
pub mod tree;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::RecordId;
use crate::error::{Error, Result};
use crate::table::TrainingTable;

pub use gbm::staged_log_loss;
pub use tree::{Node, Tree};

/// Leaf log-odds are clamped here so probabilities stay strictly inside (0, 1).
pub(crate) const MAX_LOG_ODDS: f64 = 36.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Rf,
    Gbm,
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LearnerKind::Rf => "rf",
            LearnerKind::Gbm => "gbm",
        })
    }
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rf" => Ok(LearnerKind::Rf),
            "gbm" => Ok(LearnerKind::Gbm),
            other => Err(Error::InvalidArgument(format!("unknown learner kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub mtry_fraction: f64,
    pub bootstrap_fraction: f64,
}

impl Default for RfParams {
    fn default() -> Self {
        RfParams {
            n_trees: 300,
            max_depth: 12,
            min_samples_leaf: 1,
            mtry_fraction: 0.5,
            bootstrap_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub subsample_fraction: f64,
    pub colsample_fraction: f64,
    pub l2_leaf_penalty: f64,
}

impl Default for GbmParams {
    fn default() -> Self {
        GbmParams {
            n_trees: 100,
            learning_rate: 0.1,
            max_depth: 3,
            min_samples_leaf: 1,
            subsample_fraction: 1.0,
            colsample_fraction: 1.0,
            l2_leaf_penalty: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LearnerParams {
    Rf(RfParams),
    Gbm(GbmParams),
}

fn fraction(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} = {v} is outside (0, 1]")))
    }
}

fn whole(name: &str, v: f64) -> Result<usize> {
    if v.is_finite() && v >= 0.0 {
        Ok(v.round() as usize)
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} = {v} is not a non-negative count"
        )))
    }
}

impl LearnerParams {
    pub fn kind(&self) -> LearnerKind {
        match self {
            LearnerParams::Rf(_) => LearnerKind::Rf,
            LearnerParams::Gbm(_) => LearnerKind::Gbm,
        }
    }

    pub fn default_for(kind: LearnerKind) -> Self {
        match kind {
            LearnerKind::Rf => LearnerParams::Rf(RfParams::default()),
            LearnerKind::Gbm => LearnerParams::Gbm(GbmParams::default()),
        }
    }

    /// Defaults for `kind` overridden by named values. Counts are rounded.
    pub fn from_named(kind: LearnerKind, values: &BTreeMap<String, f64>) -> Result<Self> {
        let mut p = Self::default_for(kind);
        for (name, &v) in values {
            match &mut p {
                LearnerParams::Rf(rf) => match name.as_str() {
                    "n_trees" => rf.n_trees = whole(name, v)?,
                    "max_depth" => rf.max_depth = whole(name, v)?,
                    "min_samples_leaf" => rf.min_samples_leaf = whole(name, v)?,
                    "mtry_fraction" => rf.mtry_fraction = v,
                    "bootstrap_fraction" => rf.bootstrap_fraction = v,
                    _ => return Err(Error::InvalidArgument(format!("rf has no hyperparameter `{name}`"))),
                },
                LearnerParams::Gbm(g) => match name.as_str() {
                    "n_trees" => g.n_trees = whole(name, v)?,
                    "learning_rate" => g.learning_rate = v,
                    "max_depth" => g.max_depth = whole(name, v)?,
                    "min_samples_leaf" => g.min_samples_leaf = whole(name, v)?,
                    "subsample_fraction" => g.subsample_fraction = v,
                    "colsample_fraction" => g.colsample_fraction = v,
                    "l2_leaf_penalty" => g.l2_leaf_penalty = v,
                    _ => return Err(Error::InvalidArgument(format!("gbm has no hyperparameter `{name}`"))),
                },
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v >= 1 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be at least 1")))
            }
        };
        match self {
            LearnerParams::Rf(p) => {
                positive("n_trees", p.n_trees)?;
                positive("max_depth", p.max_depth)?;
                positive("min_samples_leaf", p.min_samples_leaf)?;
                fraction("mtry_fraction", p.mtry_fraction)?;
                fraction("bootstrap_fraction", p.bootstrap_fraction)
            }
            LearnerParams::Gbm(p) => {
                positive("max_depth", p.max_depth)?;
                positive("min_samples_leaf", p.min_samples_leaf)?;
                fraction("subsample_fraction", p.subsample_fraction)?;
                fraction("colsample_fraction", p.colsample_fraction)?;
                if !(p.learning_rate > 0.0 && p.learning_rate.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "learning_rate = {} must be positive",
                        p.learning_rate
                    )));
                }
                if !(p.l2_leaf_penalty >= 0.0 && p.l2_leaf_penalty.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "l2_leaf_penalty = {} must be non-negative",
                        p.l2_leaf_penalty
                    )));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub params: LearnerParams,
    pub seed: u64,
}

impl LearnerSpec {
    pub fn rf(params: RfParams, seed: u64) -> Self {
        LearnerSpec {
            params: LearnerParams::Rf(params),
            seed,
        }
    }

    pub fn gbm(params: GbmParams, seed: u64) -> Self {
        LearnerSpec {
            params: LearnerParams::Gbm(params),
            seed,
        }
    }

    pub fn kind(&self) -> LearnerKind {
        self.params.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Ensemble {
    /// Mean of per-tree presence fractions.
    Forest { trees: Vec<Tree> },
    /// Sigmoid of the base log-odds plus the summed tree outputs.
    Boosted { base_log_odds: f64, trees: Vec<Tree> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: LearnerSpec,
    pub feature_count: usize,
    /// Original record ids the model saw, in canonical order.
    pub training_ids: Vec<RecordId>,
    pub n_synthetic: usize,
    pub ensemble: Ensemble,
}

pub const MODEL_FORMAT: &str = "geofold-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: TrainedModel,
}

pub(crate) fn sigmoid(f: f64) -> f64 {
    let f = f.clamp(-MAX_LOG_ODDS, MAX_LOG_ODDS);
    1.0 / (1.0 + (-f).exp())
}

/// Fit a learner. Requires at least 2 rows, both classes and finite features.
pub fn fit(spec: &LearnerSpec, table: &TrainingTable) -> Result<TrainedModel> {
    spec.params.validate()?;
    let width = table.validate()?;
    if table.len() < 2 {
        return Err(Error::InvalidDataset(format!(
            "{} training rows, need at least 2",
            table.len()
        )));
    }
    let (presences, absences) = table.class_counts();
    if absences == 0 || presences == 0 {
        return Err(Error::SingleClass(format!(
            "training table has {absences} absences and {presences} presences"
        )));
    }
    let order = table.canonical_order();
    let ensemble = match &spec.params {
        LearnerParams::Rf(p) => forest::fit(p, spec.seed, table, &order, width),
        LearnerParams::Gbm(p) => gbm::fit(p, spec.seed, table, &order, width),
    };
    Ok(TrainedModel {
        spec: spec.clone(),
        feature_count: width,
        training_ids: order.iter().filter_map(|&i| table.keys[i].record_id()).collect(),
        n_synthetic: table.n_synthetic(),
        ensemble,
    })
}

impl TrainedModel {
    pub fn predict_row(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.feature_count {
            return Err(Error::WidthMismatch {
                expected: self.feature_count,
                found: x.len(),
            });
        }
        Ok(match &self.ensemble {
            Ensemble::Forest { trees } => trees.iter().map(|t| t.predict(x)).sum::<f64>() / trees.len() as f64,
            Ensemble::Boosted { base_log_odds, trees } => {
                sigmoid(base_log_odds + trees.iter().map(|t| t.predict(x)).sum::<f64>())
            }
        })
    }

    /// One presence probability per row.
    pub fn predict_proba(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.predict_row(r)).collect()
    }

    pub fn n_trees(&self) -> usize {
        match &self.ensemble {
            Ensemble::Forest { trees } | Ensemble::Boosted { trees, .. } => trees.len(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::ModelFormat(format!("unexpected format tag `{}`", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "version {} is not supported (expected {MODEL_VERSION})",
                file.version
            )));
        }
        Ok(file.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Free-function form of [`TrainedModel::predict_proba`].
pub fn predict_proba(model: &TrainedModel, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    model.predict_proba(rows)
}

/// Column-major copy of the table's features in the given row order.
pub(crate) fn columns(table: &TrainingTable, order: &[usize], width: usize) -> Vec<Vec<f64>> {
    (0..width)
        .map(|f| order.iter().map(|&i| table.features[i][f]).collect())
        .collect()
}

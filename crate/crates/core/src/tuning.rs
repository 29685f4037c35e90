//! Random hyperparameter search under a fold plan, selection of the best
//! configuration, and the two finalization strategies.
//!
//! Seeds are derived per configuration and per fold, so every work item is
//! independent and results do not depend on how the items are scheduled.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, RecordId};
use crate::error::{Error, Result};
use crate::folds::FoldPlan;
use crate::learners::{fit, LearnerKind, LearnerParams, LearnerSpec, TrainedModel};
use crate::metrics::roc_auc;
use crate::rng;
use crate::smote::{smote, SmoteConfig};
use crate::table::{RowKey, TrainingTable};

/// Named hyperparameter values; counts are stored as whole-valued floats.
pub type HyperparamConfig = BTreeMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scale", rename_all = "snake_case")]
pub enum Dimension {
    /// Uniform over the integers `low..=high`.
    Int { low: i64, high: i64 },
    /// Uniform over `[low, high]`.
    Float { low: f64, high: f64 },
    /// Log-uniform over `[low, high]`, both positive.
    LogFloat { low: f64, high: f64 },
}

impl Dimension {
    pub fn fixed(v: f64) -> Self {
        Dimension::Float { low: v, high: v }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            Dimension::Int { low, high } => low <= high,
            Dimension::Float { low, high } => low.is_finite() && high.is_finite() && low <= high,
            Dimension::LogFloat { low, high } => low > 0.0 && high.is_finite() && low <= high,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "dimension `{name}` has an invalid range {self:?}"
            )))
        }
    }

    fn draw(&self, r: &mut rng::Rng) -> f64 {
        match *self {
            Dimension::Int { low, high } => r.random_range(low..=high) as f64,
            Dimension::Float { low, high } => low + r.random::<f64>() * (high - low),
            Dimension::LogFloat { low, high } => (low.ln() + r.random::<f64>() * (high.ln() - low.ln()))
                .exp()
                .clamp(low, high),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub learner: LearnerKind,
    pub dims: BTreeMap<String, Dimension>,
}

fn dims(entries: &[(&str, Dimension)]) -> BTreeMap<String, Dimension> {
    entries.iter().map(|(n, d)| (n.to_string(), *d)).collect()
}

/// Learner presets known to the pipeline. `gbm` is plain boosting (no leaf
/// penalty, every column); `xgb` adds the leaf penalty and column sampling;
/// `lgbm` is the regularized space with larger leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerPreset {
    Rf,
    Gbm,
    Xgb,
    Lgbm,
}

impl LearnerPreset {
    pub const ALL: [LearnerPreset; 4] = [
        LearnerPreset::Rf,
        LearnerPreset::Gbm,
        LearnerPreset::Xgb,
        LearnerPreset::Lgbm,
    ];

    pub fn kind(self) -> LearnerKind {
        match self {
            LearnerPreset::Rf => LearnerKind::Rf,
            _ => LearnerKind::Gbm,
        }
    }

    pub fn space(self) -> ParamSpace {
        let mut space = ParamSpace::default_for(self.kind());
        match self {
            LearnerPreset::Rf | LearnerPreset::Xgb => {}
            LearnerPreset::Gbm => {
                space.dims.insert("l2_leaf_penalty".into(), Dimension::fixed(0.0));
                space.dims.insert("colsample_fraction".into(), Dimension::fixed(1.0));
            }
            LearnerPreset::Lgbm => {
                space
                    .dims
                    .insert("min_samples_leaf".into(), Dimension::Int { low: 5, high: 20 });
                space
                    .dims
                    .insert("max_depth".into(), Dimension::Int { low: 3, high: 8 });
            }
        }
        space
    }
}

impl fmt::Display for LearnerPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LearnerPreset::Rf => "rf",
            LearnerPreset::Gbm => "gbm",
            LearnerPreset::Xgb => "xgb",
            LearnerPreset::Lgbm => "lgbm",
        })
    }
}

impl FromStr for LearnerPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LearnerPreset::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown learner `{s}` (rf, gbm, xgb, lgbm)")))
    }
}

impl ParamSpace {
    /// The conventional search ranges for each learner.
    pub fn default_for(learner: LearnerKind) -> Self {
        use Dimension::*;
        let dims = match learner {
            LearnerKind::Rf => dims(&[
                ("n_trees", Int { low: 100, high: 1000 }),
                ("max_depth", Int { low: 2, high: 20 }),
                ("min_samples_leaf", Int { low: 1, high: 20 }),
                ("mtry_fraction", Float { low: 0.2, high: 1.0 }),
                ("bootstrap_fraction", Float { low: 0.5, high: 1.0 }),
            ]),
            LearnerKind::Gbm => dims(&[
                ("n_trees", Int { low: 50, high: 1000 }),
                ("learning_rate", LogFloat { low: 0.005, high: 0.3 }),
                ("max_depth", Int { low: 1, high: 8 }),
                ("min_samples_leaf", Int { low: 1, high: 20 }),
                ("subsample_fraction", Float { low: 0.5, high: 1.0 }),
                ("colsample_fraction", Float { low: 0.3, high: 1.0 }),
                ("l2_leaf_penalty", Float { low: 0.0, high: 10.0 }),
            ]),
        };
        ParamSpace { learner, dims }
    }

    /// Checks ranges and that both corners of the box are valid learner configs.
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::InvalidArgument("hyperparameter space is empty".into()));
        }
        for (name, d) in &self.dims {
            d.validate(name)?;
        }
        for upper in [false, true] {
            let corner: HyperparamConfig = self
                .dims
                .iter()
                .map(|(n, d)| {
                    let v = match (*d, upper) {
                        (Dimension::Int { low, .. }, false) => low as f64,
                        (Dimension::Int { high, .. }, true) => high as f64,
                        (Dimension::Float { low, .. } | Dimension::LogFloat { low, .. }, false) => low,
                        (Dimension::Float { high, .. } | Dimension::LogFloat { high, .. }, true) => high,
                    };
                    (n.clone(), v)
                })
                .collect();
            LearnerParams::from_named(self.learner, &corner)?;
        }
        Ok(())
    }
}

/// `n` independent draws. Config `i` depends only on `(seed, i)`.
pub fn sample_configs(space: &ParamSpace, n: usize, seed: u64) -> Result<Vec<HyperparamConfig>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one configuration".into()));
    }
    space.validate()?;
    Ok((0..n)
        .map(|i| {
            let mut r = rng::rng(rng::derive(seed, i as u64));
            space
                .dims
                .iter()
                .map(|(name, d)| (name.clone(), d.draw(&mut r)))
                .collect()
        })
        .collect())
}

/// Learner seed for configuration `config_id` of a search seeded with `seed`.
pub fn learner_seed(seed: u64, config_id: usize) -> u64 {
    rng::derive(seed, config_id as u64)
}

fn spec_for(kind: LearnerKind, config: &HyperparamConfig, seed: u64) -> Result<LearnerSpec> {
    Ok(LearnerSpec {
        params: LearnerParams::from_named(kind, config)?,
        seed,
    })
}

/// Training table for `ids`, oversampled when configured; `stream` picks the
/// oversampling seed so each fold draws independently.
fn training_table(
    d: &Dataset,
    ids: &[RecordId],
    smote_cfg: Option<&SmoteConfig>,
    stream: u64,
) -> Result<TrainingTable> {
    let table = TrainingTable::from_dataset(d, ids)?;
    match smote_cfg {
        None => Ok(table),
        Some(cfg) => {
            let cfg = SmoteConfig {
                seed: rng::derive(cfg.seed, stream),
                ..cfg.clone()
            };
            smote(&table, &cfg)
        }
    }
}

/// Proves that only training ids (and synthetic rows) reached the learner.
fn audit(table: &TrainingTable, train: &[RecordId], held_out: &[RecordId]) -> Result<()> {
    let train: HashSet<RecordId> = train.iter().copied().collect();
    let held_out: HashSet<RecordId> = held_out.iter().copied().collect();
    for key in &table.keys {
        if let RowKey::Original(id) = key {
            if !train.contains(id) || held_out.contains(id) {
                return Err(Error::InvalidArgument(format!(
                    "record {id} entered a training table it does not belong to"
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldOutcome {
    Scored(f64),
    /// Validation ids hold one class, so AUC is undefined.
    SkippedValidation,
    /// Training ids hold one class (and oversampling could not help).
    SkippedTraining,
}

impl FoldOutcome {
    pub fn auc(self) -> Option<f64> {
        match self {
            FoldOutcome::Scored(a) => Some(a),
            _ => None,
        }
    }

    pub fn is_skipped(self) -> bool {
        !matches!(self, FoldOutcome::Scored(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    pub config_id: usize,
    pub config: HyperparamConfig,
    pub folds: Vec<FoldOutcome>,
    /// Mean over scored folds only.
    pub mean_val_auc: f64,
}

impl SearchRow {
    pub fn n_skipped(&self) -> usize {
        self.folds.iter().filter(|f| f.is_skipped()).count()
    }

    fn from_outcomes(config_id: usize, config: HyperparamConfig, folds: Vec<FoldOutcome>) -> Result<Self> {
        let scored: Vec<f64> = folds.iter().filter_map(|f| f.auc()).collect();
        if scored.is_empty() {
            return Err(Error::AllFoldsSkipped);
        }
        Ok(SearchRow {
            config_id,
            config,
            folds,
            mean_val_auc: scored.iter().sum::<f64>() / scored.len() as f64,
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate_fold(
    kind: LearnerKind,
    config: &HyperparamConfig,
    config_id: usize,
    plan: &FoldPlan,
    fold_index: usize,
    d: &Dataset,
    smote_cfg: Option<&SmoteConfig>,
    seed: u64,
) -> Result<FoldOutcome> {
    let fold = &plan.folds[fold_index];
    if fold.single_class_val {
        return Ok(FoldOutcome::SkippedValidation);
    }
    let val = d.positions(&fold.val)?;
    let val_labels: Vec<u8> = val.iter().map(|&p| d.records()[p].label).collect();
    if val_labels.iter().all(|&l| l == val_labels[0]) {
        return Ok(FoldOutcome::SkippedValidation);
    }
    let table = TrainingTable::from_dataset(d, &fold.train)?;
    let (pres, abs) = table.class_counts();
    if pres == 0 || abs == 0 || (smote_cfg.is_some() && pres < 2) {
        return Ok(FoldOutcome::SkippedTraining);
    }
    let table = training_table(d, &fold.train, smote_cfg, fold_index as u64)?;
    audit(&table, &fold.train, &fold.val)?;
    let spec = spec_for(kind, config, learner_seed(seed, config_id))?;
    let model = fit(&spec, &table)?;
    let rows: Vec<Vec<f64>> = val.iter().map(|&p| d.records()[p].features.clone()).collect();
    let scores = model.predict_proba(&rows)?;
    Ok(FoldOutcome::Scored(roc_auc(&val_labels, &scores)?))
}

/// Cross-validated AUC of one configuration.
pub fn cv_evaluate(
    kind: LearnerKind,
    config: &HyperparamConfig,
    config_id: usize,
    plan: &FoldPlan,
    d: &Dataset,
    smote_cfg: Option<&SmoteConfig>,
    seed: u64,
) -> Result<SearchRow> {
    plan.validate(d)?;
    let folds = (0..plan.len())
        .map(|j| evaluate_fold(kind, config, config_id, plan, j, d, smote_cfg, seed))
        .collect::<Result<Vec<_>>>()?;
    SearchRow::from_outcomes(config_id, config.clone(), folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub learner: LearnerKind,
    pub rows: Vec<SearchRow>,
}

impl SearchResult {
    /// `config_id,learner,scheme,fold,val_auc,skipped` rows.
    pub fn to_csv(&self, learner_label: &str, scheme_label: &str) -> String {
        let mut out = String::from("config_id,learner,scheme,fold,val_auc,skipped\n");
        for row in &self.rows {
            for (j, f) in row.folds.iter().enumerate() {
                let auc = f.auc().map(|a| a.to_string()).unwrap_or_default();
                out.push_str(&format!(
                    "{},{learner_label},{scheme_label},{j},{auc},{}\n",
                    row.config_id,
                    f.is_skipped()
                ));
            }
        }
        out
    }
}

/// Evaluate every configuration on every fold. Config × fold items run in
/// parallel; results are keyed by index, so order of execution is irrelevant.
pub fn search(
    kind: LearnerKind,
    configs: &[HyperparamConfig],
    plan: &FoldPlan,
    d: &Dataset,
    smote_cfg: Option<&SmoteConfig>,
    seed: u64,
) -> Result<SearchResult> {
    plan.validate(d)?;
    let k = plan.len();
    let outcomes = (0..configs.len() * k)
        .into_par_iter()
        .map(|item| evaluate_fold(kind, &configs[item / k], item / k, plan, item % k, d, smote_cfg, seed))
        .collect::<Result<Vec<_>>>()?;
    let rows = configs
        .iter()
        .enumerate()
        .map(|(i, c)| SearchRow::from_outcomes(i, c.clone(), outcomes[i * k..(i + 1) * k].to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(SearchResult { learner: kind, rows })
}

/// Index of the highest mean validation AUC; the earliest config wins ties.
pub fn select_best(rows: &[SearchRow]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if best.is_none_or(|b| r.mean_val_auc > rows[b].mean_val_auc) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Retrain,
    LastFold,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Retrain => "retrain",
            Strategy::LastFold => "last_fold",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalModelBundle {
    pub strategy: Strategy,
    pub config_id: usize,
    pub theta_star: HyperparamConfig,
    pub model: TrainedModel,
    /// Original (non-synthetic) records used to fit.
    pub training_set_size: usize,
}

/// Oversampling stream used when refitting on the whole in-time set.
const RETRAIN_STREAM: u64 = u64::MAX;

/// Fit the deployed model: on every in-time record (`Retrain`) or on the last
/// fold's training ids (`LastFold`). The learner seed matches the one used
/// during search, so `LastFold` reproduces the last fold's CV model.
#[allow(clippy::too_many_arguments)]
pub fn finalize(
    strategy: Strategy,
    kind: LearnerKind,
    theta_star: &HyperparamConfig,
    config_id: usize,
    plan: &FoldPlan,
    d_in_time: &Dataset,
    smote_cfg: Option<&SmoteConfig>,
    seed: u64,
) -> Result<FinalModelBundle> {
    let (ids, stream) = match strategy {
        Strategy::Retrain => (d_in_time.ids(), RETRAIN_STREAM),
        Strategy::LastFold => (
            plan.last_fold_train()
                .ok_or_else(|| Error::InvalidArgument("fold plan has no folds".into()))?
                .to_vec(),
            (plan.len() - 1) as u64,
        ),
    };
    let plain = TrainingTable::from_dataset(d_in_time, &ids)?;
    let (pres, abs) = plain.class_counts();
    if pres == 0 || abs == 0 {
        return Err(Error::SingleClass(format!(
            "{strategy} training set has {pres} presences and {abs} absences"
        )));
    }
    let table = training_table(d_in_time, &ids, smote_cfg, stream)?;
    audit(&table, &ids, &[])?;
    let spec = spec_for(kind, theta_star, learner_seed(seed, config_id))?;
    let model = fit(&spec, &table)?;
    Ok(FinalModelBundle {
        strategy,
        config_id,
        theta_star: theta_star.clone(),
        training_set_size: ids.len(),
        model,
    })
}

/// Out-of-time AUC of a finalized model; no refitting.
pub fn evaluate_test(bundle: &FinalModelBundle, d_test: &Dataset) -> Result<f64> {
    let rows: Vec<Vec<f64>> = d_test.records().iter().map(|r| r.features.clone()).collect();
    let scores = bundle.model.predict_proba(&rows)?;
    roc_auc(&d_test.labels(), &scores)
}

/// Caveat printed beside every oracle table.
pub const ORACLE_CAVEAT: &str = "Oracle AUC is the best test AUC over all searched configurations. \
It is chosen by looking at the test set, so it is an optimistic upper bound carrying selection bias, \
not an estimate of deployed performance.";

/// Best test AUC and the config index achieving it (earliest on ties).
pub fn oracle_best(test_aucs: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &a) in test_aucs.iter().enumerate() {
        if a.is_finite() && best.is_none_or(|(_, b)| a > b) {
            best = Some((i, a));
        }
    }
    best
}

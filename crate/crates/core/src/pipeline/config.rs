use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{CsvSchema, TemporalSplitSpec, YearRange};
use crate::error::{Error, Result};
use crate::folds::{Scheme, TemporalIntervals};
use crate::rng;
use crate::sac::SacOptions;
use crate::sim::VirtualSpeciesParams;
use crate::smote::SmoteConfig;
use crate::tuning::{Dimension, LearnerPreset, ParamSpace, Strategy};

/// One experiment, read from JSON. Relative paths resolve against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub split: TemporalSplitSpec,
    /// Spatial thinning distance applied before the split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thin_min_dist_m: Option<f64>,
    /// Root of every seed the run derives.
    pub seed: u64,
    pub schemes: Vec<SchemeEntry>,
    pub learners: Vec<LearnerEntry>,
    /// Random configurations sampled per learner.
    pub n_configs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smote: Option<SmoteConfig>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub sac: SacOptions,
    /// Largest cluster count in the emitted elbow curve.
    #[serde(default = "default_elbow_max_k")]
    pub elbow_max_k: usize,
    /// Also write the selected final models as JSON.
    #[serde(default)]
    pub save_models: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_strategies() -> Vec<Strategy> {
    vec![Strategy::Retrain, Strategy::LastFold]
}

fn default_elbow_max_k() -> usize {
    10
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// A prepared CSV; without a schema every column other than
    /// `id, lon, lat, year, label` is a feature.
    Csv {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        schema: Option<CsvSchema>,
    },
    Simulate(VirtualSpeciesParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BlockWidth {
    Km(f64),
    /// The median variogram range of the in-time data.
    Sac(SacKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SacKeyword {
    #[serde(rename = "sac")]
    Sac,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeEntry {
    /// Label used in outputs; derived from the scheme when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub scheme: Scheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_km: Option<BlockWidth>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals: Option<Vec<YearRange>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

pub const DEFAULT_K: usize = 5;

impl SchemeEntry {
    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let width = match self.block_km {
            Some(BlockWidth::Km(km)) => format!("_{km}km"),
            Some(BlockWidth::Sac(_)) => "_sac".into(),
            None => String::new(),
        };
        match self.scheme {
            Scheme::Spatial | Scheme::SpatioTemporal => format!("{}{width}", self.scheme),
            _ => self.scheme.to_string(),
        }
    }

    pub fn k(&self) -> usize {
        self.k.unwrap_or(DEFAULT_K)
    }

    pub fn needs_sac(&self) -> bool {
        matches!(self.block_km, Some(BlockWidth::Sac(_)))
    }

    fn validate(&self) -> Result<()> {
        let label = self.label();
        let err = |msg: &str| Err(Error::Config(format!("scheme `{label}`: {msg}")));
        let blocked = matches!(self.scheme, Scheme::Spatial | Scheme::SpatioTemporal);
        let temporal = matches!(self.scheme, Scheme::SpatioTemporal | Scheme::Tss);
        if blocked != self.block_km.is_some() {
            return err(if blocked {
                "block_km is required"
            } else {
                "block_km only applies to spatial schemes"
            });
        }
        if let Some(BlockWidth::Km(km)) = self.block_km {
            if !(km > 0.0 && km.is_finite()) {
                return err("block_km must be positive");
            }
        }
        match (&self.intervals, temporal) {
            (None, true) => return err("intervals are required"),
            (Some(_), false) => return err("intervals only apply to temporal schemes"),
            (Some(v), true) => {
                TemporalIntervals::new(v.clone()).map_err(|e| Error::Config(format!("scheme `{label}`: {e}")))?;
            }
            (None, false) => {}
        }
        if self.scheme == Scheme::Tss && self.k.is_some() {
            return err("k does not apply to forward chaining (one fold per interval step)");
        }
        if self.scheme != Scheme::Tss && self.k() < 2 {
            return err("k must be at least 2");
        }
        Ok(())
    }
}

/// A learner preset, optionally renamed and with some search dimensions replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LearnerEntry {
    Preset(LearnerPreset),
    Custom {
        preset: LearnerPreset,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        dims: BTreeMap<String, Dimension>,
    },
}

impl LearnerEntry {
    pub fn preset(&self) -> LearnerPreset {
        match self {
            LearnerEntry::Preset(p) | LearnerEntry::Custom { preset: p, .. } => *p,
        }
    }

    pub fn label(&self) -> String {
        match self {
            LearnerEntry::Custom { name: Some(n), .. } => n.clone(),
            _ => self.preset().to_string(),
        }
    }

    pub fn space(&self) -> Result<ParamSpace> {
        let mut space = self.preset().space();
        if let LearnerEntry::Custom { dims, .. } = self {
            for (name, d) in dims {
                if !space.dims.contains_key(name) {
                    return Err(Error::Config(format!(
                        "learner `{}`: unknown hyperparameter `{name}`",
                        self.label()
                    )));
                }
                space.dims.insert(name.clone(), *d);
            }
        }
        space
            .validate()
            .map_err(|e| Error::Config(format!("learner `{}`: {e}", self.label())))?;
        Ok(space)
    }
}

/// Seeds for one learner, shared by every scheme so configs pair up across schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LearnerSeeds {
    pub configs: u64,
    pub fit: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        TemporalSplitSpec::new(self.split.train_years, self.split.test_years)
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.schemes.is_empty() || self.learners.is_empty() {
            return Err(Error::Config("at least one scheme and one learner are required".into()));
        }
        if self.n_configs == 0 {
            return Err(Error::Config("n_configs must be at least 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        if let Some(m) = self.thin_min_dist_m {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Config("thin_min_dist_m must be positive".into()));
            }
        }
        if let Some(s) = &self.smote {
            s.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if let DataSource::Simulate(p) = &self.data {
            p.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        let mut seen = HashSet::new();
        for s in &self.schemes {
            s.validate()?;
            if !seen.insert(s.label()) {
                return Err(Error::Config(format!("duplicate scheme label `{}`", s.label())));
            }
        }
        let mut seen = HashSet::new();
        for l in &self.learners {
            l.space()?;
            if !seen.insert(l.label()) {
                return Err(Error::Config(format!("duplicate learner label `{}`", l.label())));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn scheme_seed(&self, entry: &SchemeEntry) -> u64 {
        entry
            .seed
            .unwrap_or_else(|| rng::derive_str(self.seed, &format!("scheme/{}", entry.label())))
    }

    pub fn learner_seeds(&self, entry: &LearnerEntry) -> LearnerSeeds {
        let label = entry.label();
        LearnerSeeds {
            configs: rng::derive_str(self.seed, &format!("configs/{label}")),
            fit: rng::derive_str(self.seed, &format!("fit/{label}")),
        }
    }

    pub fn thin_seed(&self) -> u64 {
        rng::derive_str(self.seed, "thin")
    }

    pub fn elbow_seed(&self) -> u64 {
        rng::derive_str(self.seed, "elbow")
    }
}

/// Restricts a run to some (scheme, learner) cells.
/// Parsed from `scheme=a,learner=b`; repeating a key admits several values.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CellFilter {
    pub schemes: Vec<String>,
    pub learners: Vec<String>,
}

impl CellFilter {
    pub fn parse(s: &str) -> Result<Self> {
        let mut f = CellFilter::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("filter term `{part}` is not key=value")))?;
            match key.trim() {
                "scheme" => f.schemes.push(value.trim().to_string()),
                "learner" => f.learners.push(value.trim().to_string()),
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown filter key `{other}` (scheme, learner)"
                    )))
                }
            }
        }
        Ok(f)
    }

    pub fn admits_scheme(&self, label: &str) -> bool {
        self.schemes.is_empty() || self.schemes.iter().any(|s| s == label)
    }

    pub fn admits_learner(&self, label: &str) -> bool {
        self.learners.is_empty() || self.learners.iter().any(|s| s == label)
    }
}

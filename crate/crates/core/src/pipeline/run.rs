use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{BlockWidth, CellFilter, DataSource, ExperimentConfig, LearnerEntry, LearnerSeeds, SchemeEntry};
use super::report::{emit_report, Bundle, FailureRow, SummaryRow};
use crate::data::{class_counts, load_csv, temporal_split, CsvSchema, Dataset, IngestSummary, TemporalSplit};
use crate::error::{Error, Result};
use crate::folds::{
    env_blocks_cv, random_kfold, spatial_blocks_cv, spatiotemporal_cv, tss_cv, FoldPlan, Scheme, TemporalIntervals,
};
use crate::geo::thin;
use crate::kmeans::{elbow_curve, standardize};
use crate::sac::{sac_range, SacRange};
use crate::sim::simulate_virtual_species;
use crate::tuning::{
    evaluate_test, finalize, sample_configs, search, select_best, FinalModelBundle, HyperparamConfig, SearchResult,
    Strategy,
};

const RESERVED_COLUMNS: [&str; 5] = ["id", "lon", "lat", "year", "label"];

/// Schema for a CSV whose non-reserved columns are all features.
pub fn infer_schema(path: &Path) -> Result<CsvSchema> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })?;
    let header = reader.headers().map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut schema = CsvSchema::with_features(
        header
            .iter()
            .filter(|c| !RESERVED_COLUMNS.contains(c))
            .map(str::to_string),
    );
    if header.iter().any(|c| c == "id") {
        schema.id = Some("id".into());
    }
    Ok(schema)
}

/// Records the run works on, after loading, thinning and the temporal split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub ingest: Option<IngestSummary>,
    pub thinned_out: usize,
    pub split: TemporalSplit,
}

pub fn load_data(cfg: &ExperimentConfig, base_dir: &Path) -> Result<(Dataset, Option<IngestSummary>)> {
    match &cfg.data {
        DataSource::Simulate(p) => Ok((simulate_virtual_species(p)?, None)),
        DataSource::Csv { path, schema } => {
            let path = base_dir.join(path);
            let schema = match schema {
                Some(s) => s.clone(),
                None => infer_schema(&path)?,
            };
            let (d, summary) = load_csv(&path, &schema)?;
            log::info!("ingest {}: {summary}", path.display());
            Ok((d, Some(summary)))
        }
    }
}

pub fn prepare(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Prepared> {
    let (mut dataset, ingest) = load_data(cfg, base_dir)?;
    let mut thinned_out = 0;
    if let Some(min_dist) = cfg.thin_min_dist_m {
        let kept = thin(&dataset, min_dist, cfg.thin_seed())?;
        thinned_out = dataset.len() - kept.len();
        dataset = dataset.subset(&kept)?;
        log::info!("thinning at {min_dist} m removed {thinned_out} records");
    }
    let split = temporal_split(&dataset, &cfg.split)?;
    let (p, a) = class_counts(&split.out_of_time);
    if p == 0 || a == 0 {
        return Err(Error::SingleClass(format!(
            "out-of-time test set has {p} presences and {a} absences"
        )));
    }
    Ok(Prepared {
        dataset,
        ingest,
        thinned_out,
        split,
    })
}

/// A scheme's fold plan, or why it could not be built.
#[derive(Debug, Clone)]
pub struct PlannedScheme {
    pub label: String,
    pub entry: SchemeEntry,
    pub seed: u64,
    pub plan: std::result::Result<FoldPlan, String>,
}

/// SAC range (when some scheme asks for it) and every scheme's plan on the in-time data.
pub fn build_plans(
    cfg: &ExperimentConfig,
    in_time: &Dataset,
) -> (Option<std::result::Result<SacRange, String>>, Vec<PlannedScheme>) {
    let sac = cfg
        .schemes
        .iter()
        .any(SchemeEntry::needs_sac)
        .then(|| sac_range(in_time, &cfg.sac).map_err(|e| e.to_string()));
    if let Some(Ok(s)) = &sac {
        log::info!("sac range of in-time data: {:.1} km", s.range_km);
    }
    let plans = cfg
        .schemes
        .iter()
        .map(|entry| {
            let seed = cfg.scheme_seed(entry);
            let plan = build_plan(entry, seed, in_time, sac.as_ref());
            PlannedScheme {
                label: entry.label(),
                entry: entry.clone(),
                seed,
                plan,
            }
        })
        .collect();
    (sac, plans)
}

fn build_plan(
    entry: &SchemeEntry,
    seed: u64,
    d: &Dataset,
    sac: Option<&std::result::Result<SacRange, String>>,
) -> std::result::Result<FoldPlan, String> {
    let block_km = match entry.block_km {
        Some(BlockWidth::Km(km)) => Some(km),
        Some(BlockWidth::Sac(_)) => match sac {
            Some(Ok(s)) => Some(s.range_km),
            Some(Err(e)) => return Err(format!("sac range unavailable: {e}")),
            None => unreachable!("sac range is computed whenever a scheme needs it"),
        },
        None => None,
    };
    let intervals = || TemporalIntervals::new(entry.intervals.clone().unwrap_or_default());
    let k = entry.k();
    let plan = match entry.scheme {
        Scheme::Random => random_kfold(d, k, seed),
        Scheme::Spatial => spatial_blocks_cv(d, block_km.unwrap_or_default(), k, seed),
        Scheme::Environmental => env_blocks_cv(d, k, seed),
        Scheme::SpatioTemporal => {
            intervals().and_then(|iv| spatiotemporal_cv(d, block_km.unwrap_or_default(), k, &iv, seed))
        }
        Scheme::Tss => intervals().and_then(|iv| tss_cv(d, &iv)),
    };
    plan.map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Search only.
    Tune,
    /// Search, finalize under every strategy, test, report.
    Full,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub only: CellFilter,
    pub stage: Stage,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            out_dir: None,
            only: CellFilter::default(),
            stage: Stage::Full,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub cells: usize,
    pub failures: Vec<FailureRow>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config_sha256: String,
    config: &'a ExperimentConfig,
    seed: u64,
    started_unix: u64,
    finished_unix: u64,
    records: RecordCounts,
    sac_range_km: Option<f64>,
    schemes: Vec<SchemeManifest>,
    learners: Vec<LearnerManifest>,
    cells: Vec<CellManifest>,
    failures: usize,
}

#[derive(Serialize)]
struct RecordCounts {
    loaded: usize,
    thinned_out: usize,
    in_time: usize,
    out_of_time: usize,
    outside_split: usize,
}

#[derive(Serialize)]
struct SchemeManifest {
    label: String,
    scheme: Scheme,
    seed: u64,
    n_folds: Option<usize>,
    error: Option<String>,
}

#[derive(Serialize)]
struct LearnerManifest {
    label: String,
    seeds: LearnerSeeds,
}

#[derive(Serialize)]
struct CellManifest {
    scheme: String,
    learner: String,
    status: &'static str,
    scheme_seed: u64,
    config_seed: u64,
    fit_seed: u64,
    smote_seed: Option<u64>,
    error: Option<String>,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn cell_stem(scheme: &str, learner: &str) -> String {
    format!("{scheme}__{learner}")
}

struct CellResult {
    search: SearchResult,
    tests: BTreeMap<Strategy, Vec<f64>>,
    models: Vec<FinalModelBundle>,
}

fn run_cell(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    plan: &FoldPlan,
    learner: &LearnerEntry,
    configs: &[HyperparamConfig],
    stage: Stage,
) -> Result<CellResult> {
    let kind = learner.preset().kind();
    let fit_seed = cfg.learner_seeds(learner).fit;
    let in_time = &prepared.split.in_time;
    let smote = cfg.smote.as_ref();
    let result = search(kind, configs, plan, in_time, smote, fit_seed)?;
    let mut tests = BTreeMap::new();
    let mut models = Vec::new();
    if stage == Stage::Full {
        let items: Vec<(Strategy, usize)> = cfg
            .strategies
            .iter()
            .flat_map(|&s| (0..configs.len()).map(move |i| (s, i)))
            .collect();
        let scores = items
            .par_iter()
            .map(|&(strategy, i)| {
                finalize(strategy, kind, &configs[i], i, plan, in_time, smote, fit_seed)
                    .and_then(|b| evaluate_test(&b, &prepared.split.out_of_time))
                    .map_err(|e| e.context(format!("config_id={i}, strategy={strategy}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        for (chunk, &s) in scores.chunks(configs.len()).zip(&cfg.strategies) {
            tests.insert(s, chunk.to_vec());
        }
        if cfg.save_models {
            let best = select_best(&result.rows).expect("a search always has rows");
            for &s in &cfg.strategies {
                models.push(finalize(s, kind, &configs[best], best, plan, in_time, smote, fit_seed)?);
            }
        }
    }
    Ok(CellResult {
        search: result,
        tests,
        models,
    })
}

/// Run every admitted (scheme, learner) cell and write the bundle under the
/// output directory. A failing cell is recorded and the run continues; only
/// errors before any cell runs (config, data, split) are returned as `Err`.
pub fn run_experiment(cfg: &ExperimentConfig, base_dir: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    let started = unix_now();
    cfg.validate()?;
    let out = opts.out_dir.clone().unwrap_or_else(|| base_dir.join(&cfg.output_dir));
    for sub in ["plans", "search", "configs"] {
        create_dir(&out.join(sub))?;
    }
    let prepared = prepare(cfg, base_dir)?;
    let in_time = &prepared.split.in_time;
    if matches!(cfg.data, DataSource::Simulate(_)) {
        prepared.dataset.write_csv(&out.join("dataset.csv"))?;
    }

    let (sac, plans) = build_plans(cfg, in_time);
    if let Some(Ok(s)) = &sac {
        s.write_csv(&out.join("sac_range.csv"))?;
    }
    if cfg.schemes.iter().any(|s| s.scheme == Scheme::Environmental) {
        write_elbow(cfg, in_time, &out.join("elbow.csv"))?;
    }
    for p in &plans {
        if let Ok(plan) = &p.plan {
            plan.write(&out.join("plans"), &p.label)?;
        }
    }

    let mut learner_configs = Vec::new();
    for l in &cfg.learners {
        let seeds = cfg.learner_seeds(l);
        let configs = sample_configs(&l.space()?, cfg.n_configs, seeds.configs)?;
        let json = serde_json::to_string_pretty(&configs)? + "\n";
        write_file(&out.join("configs").join(format!("{}.json", l.label())), json)?;
        learner_configs.push(configs);
    }

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut cells = Vec::new();
    for p in plans.iter().filter(|p| opts.only.admits_scheme(&p.label)) {
        for (l, configs) in cfg.learners.iter().zip(&learner_configs) {
            let label = l.label();
            if !opts.only.admits_learner(&label) {
                continue;
            }
            let outcome = match &p.plan {
                Err(e) => Err(format!("fold plan: {e}")),
                Ok(plan) => run_cell(cfg, &prepared, plan, l, configs, opts.stage).map_err(|e| e.to_string()),
            };
            let seeds = cfg.learner_seeds(l);
            let error = match outcome {
                Ok(cell) => {
                    let stem = cell_stem(&p.label, &label);
                    write_file(
                        &out.join("search").join(format!("{stem}.csv")),
                        cell.search.to_csv(&label, &p.label),
                    )?;
                    for r in &cell.search.rows {
                        let test = |s| cell.tests.get(&s).map(|v: &Vec<f64>| v[r.config_id]);
                        rows.push(SummaryRow {
                            scheme: p.label.clone(),
                            learner: label.clone(),
                            config_id: r.config_id,
                            mean_val_auc: r.mean_val_auc,
                            test_auc_retrain: test(Strategy::Retrain),
                            test_auc_lastfold: test(Strategy::LastFold),
                        });
                    }
                    if !cell.models.is_empty() {
                        create_dir(&out.join("models"))?;
                    }
                    for m in &cell.models {
                        m.model
                            .save(&out.join("models").join(format!("{stem}__{}.json", m.strategy)))?;
                    }
                    None
                }
                Err(e) => {
                    log::error!("cell scheme={} learner={label} failed: {e}", p.label);
                    failures.push(FailureRow {
                        scheme: p.label.clone(),
                        learner: label.clone(),
                        error: e.clone(),
                    });
                    Some(e)
                }
            };
            cells.push(CellManifest {
                scheme: p.label.clone(),
                learner: label,
                status: if error.is_none() { "ok" } else { "failed" },
                scheme_seed: p.seed,
                config_seed: seeds.configs,
                fit_seed: seeds.fit,
                smote_seed: cfg.smote.as_ref().map(|s| s.seed),
                error,
            });
        }
    }

    let bundle = Bundle {
        rows,
        failures: failures.clone(),
    };
    bundle.write(&out)?;
    if opts.stage == Stage::Full && !bundle.rows.is_empty() {
        emit_report(&bundle, &out.join("report"))?;
    }

    let manifest = Manifest {
        tool: "geofold",
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: cfg.digest(),
        config: cfg,
        seed: cfg.seed,
        started_unix: started,
        finished_unix: unix_now(),
        records: RecordCounts {
            loaded: prepared.dataset.len() + prepared.thinned_out,
            thinned_out: prepared.thinned_out,
            in_time: in_time.len(),
            out_of_time: prepared.split.out_of_time.len(),
            outside_split: prepared.split.dropped,
        },
        sac_range_km: sac.as_ref().and_then(|s| s.as_ref().ok()).map(|s| s.range_km),
        schemes: plans
            .iter()
            .map(|p| SchemeManifest {
                label: p.label.clone(),
                scheme: p.entry.scheme,
                seed: p.seed,
                n_folds: p.plan.as_ref().ok().map(FoldPlan::len),
                error: p.plan.as_ref().err().cloned(),
            })
            .collect(),
        learners: cfg
            .learners
            .iter()
            .map(|l| LearnerManifest {
                label: l.label(),
                seeds: cfg.learner_seeds(l),
            })
            .collect(),
        failures: failures.len(),
        cells,
    };
    write_file(
        &out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(RunOutcome {
        out_dir: out,
        cells: manifest.cells.len(),
        failures,
    })
}

/// k-means inertia for `k = 1..=elbow_max_k` on standardized in-time features.
pub fn write_elbow(cfg: &ExperimentConfig, in_time: &Dataset, path: &Path) -> Result<()> {
    let rows: Vec<Vec<f64>> = in_time.records().iter().map(|r| r.features.clone()).collect();
    let z = standardize(&rows);
    let max_k = cfg.elbow_max_k.min(z.len()).max(1);
    let curve = elbow_curve(&z, 1..=max_k, cfg.elbow_seed())?;
    let mut text = String::from("k,inertia\n");
    for (k, inertia) in curve {
        text.push_str(&format!("{k},{inertia}\n"));
    }
    write_file(path, text)
}

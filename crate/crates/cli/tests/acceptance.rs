//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
//!
//! Run with `cargo test -p geofold-cli --test acceptance` (add `--release` for
//! laptop-scale timings).

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use geofold::data::{Dataset, Record, RecordId, YearRange};
use geofold::folds::{
    env_blocks_cv, random_kfold, spatial_blocks_cv, spatiotemporal_cv, tss_cv, FoldPlan, TemporalIntervals,
};
use geofold::learners::{fit, staged_log_loss, GbmParams, LearnerKind, LearnerSpec, RfParams};
use geofold::metrics::{pearson, roc_auc, spearman, ScoreSeries};
use geofold::pipeline::{run_experiment, Bundle, ExperimentConfig, Report, RunOptions};
use geofold::rng;
use geofold::sac::{sac_range, SacOptions};
use geofold::sim::{simulate_virtual_species, VirtualSpeciesParams};
use geofold::smote::{smote, SmoteConfig};
use geofold::table::{RowKey, TrainingTable};
use geofold::tuning::{finalize, sample_configs, LearnerPreset, Strategy};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::json;

const SEEDS: u64 = 5;
const SEEDS_REQUIRED: usize = 4;

const INFLATION_MIN_DVAL: f64 = 0.02;
const INFLATION_MIN_MAE_RATIO: f64 = 1.2;
const INFLATION_BUDGET: Duration = Duration::from_secs(600);

const RANGE_TRUE_KM: f64 = 100.0;
const RANGE_REL_TOL: f64 = 0.25;
const RANGE_BUDGET: Duration = Duration::from_secs(60);

const EXACT_TOL: f64 = 1e-12;
const TRIALS: usize = 100;

const XOR_DEPTH1_MAX: f64 = 0.6;
const XOR_DEPTH2_MIN: f64 = 0.95;

const E2E_BUDGET: Duration = Duration::from_secs(300);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().expect("temporary directory")
}

// 1 ----------------------------------------------------------------------

fn inflation_config(seed: u64) -> ExperimentConfig {
    let mut sim = VirtualSpeciesParams::new(3000, 400.0, 100.0, seed);
    sim.n_env_features = 8;
    sim.coefficients = vec![1.5, -1.0, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0];
    sim.noise_rate = 0.1;
    sim.latent_sd = 4.5;
    sim.latent_epoch_years = Some(10);
    sim.latent_range_km = Some(40.0);
    let cfg = json!({
        "data": { "simulate": sim },
        "split": { "train_years": [2000, 2009], "test_years": [2010, 2019] },
        "seed": seed,
        "schemes": [
            { "scheme": "random", "k": 5 },
            { "scheme": "spatial", "block_km": "sac", "k": 5 }
        ],
        "learners": [
            { "preset": "gbm", "dims": { "n_trees": { "scale": "int", "low": 50, "high": 300 } } }
        ],
        "n_configs": 20,
        "strategies": ["retrain"]
    });
    ExperimentConfig::from_json(&cfg.to_string()).expect("inflation config")
}

fn sac_inflation() -> Outcome {
    let start = Instant::now();
    let mut passed = 0;
    let mut lines = Vec::new();
    for seed in 0..SEEDS {
        let dir = tmp();
        let opts = RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
            ..RunOptions::default()
        };
        let cfg = inflation_config(seed);
        let run = run_experiment(&cfg, dir.path(), &opts);
        let Ok(run) = run else {
            lines.push(format!("seed {seed}: run failed: {}", run.unwrap_err()));
            continue;
        };
        if !run.failures.is_empty() {
            lines.push(format!("seed {seed}: {} failed cells", run.failures.len()));
            continue;
        }
        let bundle = Bundle::load(dir.path()).expect("bundle");
        let report = Report::from_bundle(&bundle).expect("report");
        let mean_val = |scheme: &str| {
            let rows = bundle.cell(scheme, "gbm");
            rows.iter().map(|r| r.mean_val_auc).sum::<f64>() / rows.len() as f64
        };
        let mae = |scheme: &str| {
            report
                .robustness
                .iter()
                .find(|r| r.scheme == scheme && r.strategy == Strategy::Retrain)
                .map(|r| r.mae)
                .expect("robustness row")
        };
        let dval = mean_val("random") - mean_val("spatial_sac");
        let ratio = mae("random") / mae("spatial_sac");
        let ok = dval >= INFLATION_MIN_DVAL && ratio >= INFLATION_MIN_MAE_RATIO;
        passed += usize::from(ok);
        lines.push(format!(
            "seed {seed}: dval {dval:.4} mae ratio {ratio:.3} {}",
            if ok { "ok" } else { "miss" }
        ));
    }
    let elapsed = start.elapsed();
    for l in &lines {
        println!("    {l}");
    }
    outcome(
        passed >= SEEDS_REQUIRED && elapsed <= INFLATION_BUDGET,
        format!(
            "{passed}/{SEEDS} seeds with dval >= {INFLATION_MIN_DVAL} and MAE ratio >= {INFLATION_MIN_MAE_RATIO}; {:.0} s (budget {} s)",
            elapsed.as_secs_f64(),
            INFLATION_BUDGET.as_secs()
        ),
    )
}

// 2 ----------------------------------------------------------------------

fn range_recovery() -> Outcome {
    let start = Instant::now();
    let mut passed = 0;
    let mut ranges = Vec::new();
    for seed in 0..SEEDS {
        let p = VirtualSpeciesParams::new(3000, 500.0, RANGE_TRUE_KM, seed);
        let d = simulate_virtual_species(&p).expect("simulation");
        let r = sac_range(&d, &SacOptions::default())
            .map(|s| s.range_km)
            .unwrap_or(f64::NAN);
        passed += usize::from((r / RANGE_TRUE_KM - 1.0).abs() <= RANGE_REL_TOL);
        ranges.push(format!("{r:.1}"));
    }
    let elapsed = start.elapsed();
    outcome(
        passed >= SEEDS_REQUIRED && elapsed <= RANGE_BUDGET,
        format!(
            "{passed}/{SEEDS} within ±{:.0}% of {RANGE_TRUE_KM} km [{}]; {:.1} s",
            RANGE_REL_TOL * 100.0,
            ranges.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

// 3 ----------------------------------------------------------------------

fn brute_force_auc(labels: &[u8], scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                pairs += 1.0;
                wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    wins / pairs
}

/// Scores drawn from a small pool so ties are common.
fn tied_scores(r: &mut rng::Rng, n: usize) -> Vec<f64> {
    let pool: Vec<f64> = (0..r.random_range(1..=n)).map(|_| r.random::<f64>()).collect();
    (0..n)
        .map(|_| {
            if r.random_bool(0.5) {
                pool[r.random_range(0..pool.len())]
            } else {
                r.random()
            }
        })
        .collect()
}

fn auc_equivalence() -> Outcome {
    let mut r = rng::rng(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = r.random_range(2..=50);
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(r.random_bool(0.5))).collect();
        labels[0] = 0;
        labels[1] = 1;
        labels.shuffle(&mut r);
        let scores = tied_scores(&mut r, n);
        let fast = roc_auc(&labels, &scores).expect("both classes present");
        worst = worst.max((fast - brute_force_auc(&labels, &scores)).abs());
    }
    outcome(
        worst <= EXACT_TOL,
        format!("1000 instances, max |rank - pairs| = {worst:.2e} (tol {EXACT_TOL:e})"),
    )
}

// 4 ----------------------------------------------------------------------

fn naive_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let below = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn naive_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn metric_formulas() -> Outcome {
    let mut r = rng::rng(4);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 1000 {
        let n = r.random_range(3..=40);
        let (a, b) = if checked % 2 == 0 {
            (tied_scores(&mut r, n), tied_scores(&mut r, n))
        } else {
            (
                (0..n).map(|_| r.random()).collect(),
                (0..n).map(|_| r.random()).collect(),
            )
        };
        let series = ScoreSeries::new(a.clone(), b.clone()).unwrap();
        let Some(s) = spearman(&series) else { continue };
        let oracle = naive_pearson(&naive_ranks(&a), &naive_ranks(&b));
        worst = worst.max((s - oracle).abs());
        worst = worst.max((s - pearson(&series.ranked()).unwrap()).abs());
        checked += 1;
    }
    let auc = roc_auc(&[0, 0, 1, 1], &[0.1, 0.4, 0.35, 0.8]).unwrap();
    let worked = ScoreSeries::new(vec![1.0, 2.0, 3.0], vec![3.0, 1.0, 2.0]).unwrap();
    let (rho, r_p) = (spearman(&worked).unwrap(), pearson(&worked).unwrap());
    let examples = auc == 0.75 && (rho + 0.5).abs() <= EXACT_TOL && (r_p + 0.5).abs() <= EXACT_TOL;
    outcome(
        worst <= EXACT_TOL && examples,
        format!(
            "1000 vectors, max |spearman - pearson(ranks)| = {worst:.2e}; AUC {auc}, Spearman {rho}, Pearson {r_p}"
        ),
    )
}

// 5 ----------------------------------------------------------------------

fn random_dataset(r: &mut rng::Rng, n: usize, side_deg: f64, presence: f64) -> Dataset {
    let records = (0..n)
        .map(|i| Record {
            id: i as RecordId * 5 + 2,
            lon: 5.0 + r.random_range(0.0..side_deg),
            lat: 45.0 + r.random_range(0.0..side_deg),
            year: r.random_range(2000..=2011),
            label: u8::from(r.random::<f64>() < presence),
            features: (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    Dataset::new(records, vec!["a".into(), "b".into(), "c".into()]).unwrap()
}

fn three_intervals() -> TemporalIntervals {
    TemporalIntervals::new(vec![
        YearRange::new(2000, 2003).unwrap(),
        YearRange::new(2004, 2007).unwrap(),
        YearRange::new(2008, 2011).unwrap(),
    ])
    .unwrap()
}

fn disjoint(d: &Dataset, plan: &FoldPlan) -> bool {
    let ids: HashSet<RecordId> = d.ids().into_iter().collect();
    plan.folds.iter().all(|f| {
        let train: HashSet<_> = f.train.iter().collect();
        !f.train.is_empty()
            && !f.val.is_empty()
            && f.val.iter().all(|id| !train.contains(id))
            && f.train.iter().chain(&f.val).all(|id| ids.contains(id))
    })
}

fn year_of(d: &Dataset, id: RecordId) -> i32 {
    d.get(id).unwrap().year
}

fn splitter_invariants() -> Outcome {
    let mut r = rng::rng(5);
    let iv = three_intervals();
    let mut failures: Vec<String> = Vec::new();
    let mut built = [0usize; 5];
    for trial in 0..TRIALS {
        let seed: u64 = r.random();
        let k = r.random_range(2..=4);
        let n = r.random_range(90..220);
        let d = random_dataset(&mut r, n, 3.0, 0.4);
        let mut fail = |what: &str| failures.push(format!("trial {trial}: {what}"));

        match random_kfold(&d, k, seed) {
            Ok(p) => {
                built[0] += 1;
                if !disjoint(&d, &p) || random_kfold(&d, k, seed).unwrap() != p {
                    fail("random");
                }
            }
            Err(e) => fail(&format!("random: {e}")),
        }
        if let Ok(p) = spatial_blocks_cv(&d, r.random_range(20.0..120.0), k, seed) {
            built[1] += 1;
            if !disjoint(&d, &p) {
                fail("spatial");
            }
        }
        if let Ok(p) = env_blocks_cv(&d, k, seed) {
            built[2] += 1;
            let both = p.folds.iter().all(|f| {
                f.val
                    .iter()
                    .map(|&id| d.get(id).unwrap().label)
                    .collect::<HashSet<_>>()
                    .len()
                    == 2
            });
            if !disjoint(&d, &p) || !both || env_blocks_cv(&d, k, seed).unwrap() != p {
                fail("environmental");
            }
        }
        if let Ok(p) = spatiotemporal_cv(&d, 60.0, k, &iv, seed) {
            built[3] += 1;
            let contained = p.folds.iter().enumerate().all(|(j, f)| {
                f.train
                    .iter()
                    .chain(&f.val)
                    .all(|&id| iv.interval_of(year_of(&d, id)) == Some(j / k))
            });
            if !disjoint(&d, &p) || !contained || spatiotemporal_cv(&d, 60.0, k, &iv, seed).unwrap() != p {
                fail("spatio-temporal");
            }
        }
        if let Ok(p) = tss_cv(&d, &iv) {
            built[4] += 1;
            let ordered = p.folds.iter().all(|f| {
                let max_train = f.train.iter().map(|&id| year_of(&d, id)).max().unwrap();
                let min_val = f.val.iter().map(|&id| year_of(&d, id)).min().unwrap();
                max_train < min_val
            });
            if !disjoint(&d, &p) || !ordered || tss_cv(&d, &iv).unwrap() != p {
                fail("forward chaining");
            }
        }
    }
    let everything_built = built.iter().all(|&b| b == TRIALS);
    for f in failures.iter().take(5) {
        println!("    {f}");
    }
    outcome(
        failures.is_empty() && everything_built,
        format!(
            "{TRIALS} trials; plans built random/spatial/env/spt/tss = {built:?}; {} violations",
            failures.len()
        ),
    )
}

// 6 ----------------------------------------------------------------------

fn table(features: Vec<Vec<f64>>, labels: Vec<u8>) -> TrainingTable {
    TrainingTable {
        keys: (0..labels.len() as i64).map(RowKey::Original).collect(),
        features,
        labels,
    }
}

/// Whether `x` lies on the segment between two of `anchors`.
fn on_some_segment(x: &[f64], anchors: &[&Vec<f64>]) -> bool {
    anchors.iter().any(|a| {
        anchors.iter().any(|b| {
            let d: Vec<f64> = a.iter().zip(b.iter()).map(|(p, q)| q - p).collect();
            let len2: f64 = d.iter().map(|v| v * v).sum();
            let t = if len2 == 0.0 {
                0.0
            } else {
                x.iter()
                    .zip(a.iter())
                    .zip(&d)
                    .map(|((xi, ai), di)| (xi - ai) * di)
                    .sum::<f64>()
                    / len2
            };
            (-1e-9..=1.0 + 1e-9).contains(&t)
                && x.iter()
                    .zip(a.iter())
                    .zip(&d)
                    .all(|((xi, ai), di)| (ai + t * di - xi).abs() <= 1e-9)
        })
    })
}

fn smote_contract() -> Outcome {
    let mut r = rng::rng(6);
    let mut failures = Vec::new();
    for trial in 0..TRIALS {
        let n = r.random_range(20..80);
        let presences = r.random_range(2..n / 4 + 2);
        let width = r.random_range(1..4);
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i < presences)).collect();
        let features: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..width).map(|_| r.random_range(-3.0..3.0)).collect())
            .collect();
        let t = table(features, labels);
        let target = r.random_range(0.3..0.6);
        let cfg = SmoteConfig::new(target, r.random());
        let out = smote(&t, &cfg).expect("smote");
        let preserved =
            out.keys[..n] == t.keys[..] && out.features[..n] == t.features[..] && out.labels[..n] == t.labels[..];
        let ratio = out.presence_ratio();
        let in_band = ratio >= target && ratio < target + 1.0 / out.len() as f64;
        let anchors: Vec<&Vec<f64>> = t.features[..presences].iter().collect();
        let segments = (n..out.len()).all(|i| {
            out.labels[i] == 1
                && matches!(out.keys[i], RowKey::Synthetic(_))
                && on_some_segment(&out.features[i], &anchors)
        });
        if !(preserved && in_band && segments) {
            failures.push(format!(
                "trial {trial}: preserved {preserved} ratio {ratio:.4} vs {target:.4} segments {segments}"
            ));
        }
    }
    let ten_ninety = {
        let labels: Vec<u8> = (0..100).map(|i| u8::from(i < 10)).collect();
        let features = (0..100).map(|i| vec![i as f64, (i * i % 17) as f64]).collect();
        let out = smote(&table(features, labels), &SmoteConfig::new(0.3, 1)).unwrap();
        out.n_synthetic()
    };
    for f in failures.iter().take(5) {
        println!("    {f}");
    }
    outcome(
        failures.is_empty() && ten_ninety == 29,
        format!(
            "{TRIALS} trials, {} violations; 10/90 at 0.3 adds {ten_ninety} synthetic",
            failures.len()
        ),
    )
}

// 7 ----------------------------------------------------------------------

fn strategy_plumbing() -> Outcome {
    let mut r = rng::rng(7);
    let records: Vec<Record> = (0..400)
        .map(|i| {
            let features: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
            Record {
                id: 1000 + i,
                lon: 10.0 + (i % 20) as f64 * 0.05,
                lat: 45.0 + (i / 20) as f64 * 0.05,
                year: 2000 + (i % 8) as i32,
                label: u8::from(features[0] > 0.3 || i % 9 == 0),
                features,
            }
        })
        .collect();
    let d = Dataset::new(records, vec!["a".into(), "b".into(), "c".into()]).unwrap();
    let intervals = TemporalIntervals::new(
        (0..4)
            .map(|t| YearRange::new(2000 + 2 * t, 2001 + 2 * t).unwrap())
            .collect(),
    )
    .unwrap();
    let plan = tss_cv(&d, &intervals).expect("plan");
    let space = LearnerPreset::Gbm.space();
    let cfg = sample_configs(&space, 1, 2).unwrap().remove(0);
    let last = finalize(Strategy::LastFold, LearnerKind::Gbm, &cfg, 0, &plan, &d, None, 3).expect("last fold");
    let retrain = finalize(Strategy::Retrain, LearnerKind::Gbm, &cfg, 0, &plan, &d, None, 3).expect("retrain");
    let first_three: HashSet<RecordId> = d.records().iter().filter(|r| r.year <= 2005).map(|r| r.id).collect();
    let all: HashSet<RecordId> = d.ids().into_iter().collect();
    let got_last: HashSet<RecordId> = last.model.training_ids.iter().copied().collect();
    let got_all: HashSet<RecordId> = retrain.model.training_ids.iter().copied().collect();
    outcome(
        plan.len() == 3 && got_last == first_three && got_all == all,
        format!(
            "T = 4, {} folds; last fold trains on {} of {} in intervals 1-3; retrain on {} of {}",
            plan.len(),
            got_last.len(),
            first_three.len(),
            got_all.len(),
            all.len()
        ),
    )
}

// 8 ----------------------------------------------------------------------

fn xor_table(n: usize, seed: u64) -> TrainingTable {
    let mut r = rng::rng(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let sa = if i % 2 == 0 { 1.0 } else { -1.0 };
        let sb = if (i / 2) % 2 == 0 { 1.0 } else { -1.0 };
        let a: f64 = sa * r.random_range(0.0..1.0);
        let b: f64 = sb * r.random_range(0.0..1.0);
        y.push(u8::from((a > 0.0) != (b > 0.0)));
        x.push(vec![a, b]);
    }
    table(x, y)
}

fn noisy_table(n: usize, seed: u64) -> TrainingTable {
    let mut r = rng::rng(seed);
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..4).map(|_| r.random_range(-2.0..2.0)).collect())
        .collect();
    let y = x
        .iter()
        .map(|row| u8::from(r.random::<f64>() < 1.0 / (1.0 + (0.5 * row[1] - row[0]).exp())))
        .collect();
    table(x, y)
}

fn learner_sanity() -> Outcome {
    let xor = xor_table(2000, 11);
    let xor_auc = |depth| {
        let params = GbmParams {
            n_trees: 200,
            max_depth: depth,
            min_samples_leaf: 50,
            ..GbmParams::default()
        };
        let m = fit(&LearnerSpec::gbm(params, 3), &xor).unwrap();
        roc_auc(&xor.labels, &m.predict_proba(&xor.features).unwrap()).unwrap()
    };
    let (a1, a2) = (xor_auc(1), xor_auc(2));

    let mut monotone = true;
    for seed in 0..5 {
        let t = noisy_table(300, seed);
        let params = GbmParams {
            n_trees: 60,
            learning_rate: 0.3,
            max_depth: 4,
            subsample_fraction: 0.6,
            ..GbmParams::default()
        };
        let m = fit(&LearnerSpec::gbm(params, seed), &t).unwrap();
        monotone &= staged_log_loss(&m, &t).unwrap().windows(2).all(|w| w[1] <= w[0]);
    }

    let t = noisy_table(250, 9);
    let specs = [
        LearnerSpec::rf(
            RfParams {
                n_trees: 30,
                ..RfParams::default()
            },
            5,
        ),
        LearnerSpec::gbm(
            GbmParams {
                n_trees: 30,
                subsample_fraction: 0.7,
                colsample_fraction: 0.6,
                ..GbmParams::default()
            },
            5,
        ),
    ];
    let deterministic = specs.iter().all(|spec| {
        let fits: Vec<_> = [1, 2, 4]
            .into_iter()
            .map(|n| {
                let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
                pool.install(|| fit(spec, &t).unwrap())
            })
            .collect();
        fits.windows(2).all(|w| w[0] == w[1])
    });
    outcome(
        a1 <= XOR_DEPTH1_MAX && a2 >= XOR_DEPTH2_MIN && monotone && deterministic,
        format!(
            "XOR depth-1 AUC {a1:.3} (<= {XOR_DEPTH1_MAX}), depth-2 {a2:.3} (>= {XOR_DEPTH2_MIN}); loss monotone {monotone}; same fit on 1/2/4 workers {deterministic}"
        ),
    )
}

// 9 ----------------------------------------------------------------------

fn files_below(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/minimal.json");
    let dir = tmp();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_geofold"))
            .args(["run", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .expect("spawn geofold");
        (status.status.code(), out)
    };
    let (code_a, a) = run("a");
    let (code_b, b) = run("b");
    let elapsed = start.elapsed();
    let files = files_below(&a);
    let mut differing = Vec::new();
    if files != files_below(&b) {
        differing.push("file set".to_string());
    }
    for f in files.iter().filter(|f| f.as_os_str() != "manifest.json") {
        if std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok() {
            differing.push(f.display().to_string());
        }
    }
    let csvs = files
        .iter()
        .filter(|f| f.extension().is_some_and(|e| e == "csv"))
        .count();
    outcome(
        code_a == Some(0) && code_b == Some(0) && differing.is_empty() && csvs > 0 && elapsed <= E2E_BUDGET,
        format!(
            "exit {code_a:?}/{code_b:?}; {} files ({csvs} csv) compared, {} differ {differing:?}; {:.1} s",
            files.len() - 1,
            differing.len(),
            elapsed.as_secs_f64()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("1 sac inflation", sac_inflation),
        ("2 sac range recovery", range_recovery),
        ("3 auc oracle equivalence", auc_equivalence),
        ("4 metric formulas", metric_formulas),
        ("5 splitter invariants", splitter_invariants),
        ("6 smote contract", smote_contract),
        ("7 strategy plumbing", strategy_plumbing),
        ("8 learner sanity", learner_sanity),
        ("9 end-to-end determinism", end_to_end),
    ];
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !wanted.is_empty() && !wanted.iter().any(|w| name.contains(w.as_str())) {
            continue;
        }
        let started = Instant::now();
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "{} [{name}] {} ({:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            started.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

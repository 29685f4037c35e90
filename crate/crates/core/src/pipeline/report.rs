use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::write_file;
use crate::error::{Error, Result};
use crate::metrics::{quantile, robustness_report, ScoreSeries};
use crate::tuning::{Strategy, ORACLE_CAVEAT};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const FAILURES_FILE: &str = "failures.csv";

/// One searched configuration of one (scheme, learner) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: String,
    pub learner: String,
    pub config_id: usize,
    pub mean_val_auc: f64,
    pub test_auc_retrain: Option<f64>,
    pub test_auc_lastfold: Option<f64>,
}

impl SummaryRow {
    pub fn test_auc(&self, s: Strategy) -> Option<f64> {
        match s {
            Strategy::Retrain => self.test_auc_retrain,
            Strategy::LastFold => self.test_auc_lastfold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub scheme: String,
    pub learner: String,
    pub error: String,
}

/// Everything a report is computed from: the summary and failure tables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bundle {
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<FailureRow>,
}

fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let csv_err = |e| Error::Csv {
        path: "<memory>".into(),
        source: e,
    };
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let csv_err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(csv_err)
}

impl Bundle {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let summary = to_csv(
            &self.rows,
            &[
                "scheme",
                "learner",
                "config_id",
                "mean_val_auc",
                "test_auc_retrain",
                "test_auc_lastfold",
            ],
        )?;
        write_file(&dir.join(SUMMARY_FILE), summary)?;
        write_file(
            &dir.join(FAILURES_FILE),
            to_csv(&self.failures, &["scheme", "learner", "error"])?,
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let failures_path = dir.join(FAILURES_FILE);
        Ok(Bundle {
            rows: read_csv(&dir.join(SUMMARY_FILE))?,
            failures: if failures_path.exists() {
                read_csv(&failures_path)?
            } else {
                Vec::new()
            },
        })
    }

    /// Scheme labels in order of first appearance.
    pub fn schemes(&self) -> Vec<String> {
        unique(self.rows.iter().map(|r| &r.scheme))
    }

    pub fn learners(&self) -> Vec<String> {
        unique(self.rows.iter().map(|r| &r.learner))
    }

    /// Strategies with at least one test score.
    pub fn strategies(&self) -> Vec<Strategy> {
        [Strategy::Retrain, Strategy::LastFold]
            .into_iter()
            .filter(|&s| self.rows.iter().any(|r| r.test_auc(s).is_some()))
            .collect()
    }

    pub fn cell(&self, scheme: &str, learner: &str) -> Vec<&SummaryRow> {
        self.rows
            .iter()
            .filter(|r| r.scheme == scheme && r.learner == learner)
            .collect()
    }
}

fn unique<'a>(items: impl Iterator<Item = &'a String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.contains(s) {
            out.push(s.clone());
        }
    }
    out
}

/// Row with the highest mean validation AUC; the earliest wins ties.
fn selected<'a>(rows: &[&'a SummaryRow]) -> Option<&'a SummaryRow> {
    let mut best: Option<&SummaryRow> = None;
    for r in rows {
        if best.is_none_or(|b| r.mean_val_auc > b.mean_val_auc) {
            best = Some(r);
        }
    }
    best
}

/// Agreement of one (scheme, strategy, learner) cell; correlations are
/// `None` when undefined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessRow {
    pub scheme: String,
    pub strategy: Strategy,
    pub learner: String,
    pub m: usize,
    pub mae: f64,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub oracle_test_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterRow {
    pub scheme: String,
    pub strategy: Strategy,
    pub learner: String,
    pub config_id: usize,
    pub val_auc: f64,
    pub test_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectedRow {
    pub scheme: String,
    pub strategy: Strategy,
    pub learner: String,
    pub config_id: usize,
    pub mean_val_auc: f64,
    pub test_auc: f64,
}

/// Robustness of one (scheme, strategy) aggregated over learners.
/// Correlation means skip learners whose correlation is undefined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaeSummaryRow {
    pub scheme: String,
    pub strategy: Strategy,
    pub n_learners: usize,
    pub mae_mean: f64,
    pub mae_q25: f64,
    pub mae_q75: f64,
    pub mae_iqr: f64,
    pub pearson_mean: Option<f64>,
    pub pearson_n: usize,
    pub spearman_mean: Option<f64>,
    pub spearman_n: usize,
}

/// Every table derived from a bundle.
/// `(strategy, scheme, oracle AUC per learner, mean over learners)`.
pub type OracleRow = (Strategy, String, Vec<Option<f64>>, Option<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub schemes: Vec<String>,
    pub learners: Vec<String>,
    pub strategies: Vec<Strategy>,
    pub robustness: Vec<RobustnessRow>,
    pub scatter: Vec<ScatterRow>,
    pub selected: Vec<SelectedRow>,
    pub mae_summary: Vec<MaeSummaryRow>,
}

impl Report {
    pub fn from_bundle(bundle: &Bundle) -> Result<Self> {
        if bundle.rows.is_empty() {
            return Err(Error::InvalidArgument("bundle holds no results".into()));
        }
        let schemes = bundle.schemes();
        let learners = bundle.learners();
        let strategies = bundle.strategies();
        let mut robustness = Vec::new();
        let mut scatter = Vec::new();
        let mut selected_rows = Vec::new();
        for strategy in &strategies {
            for scheme in &schemes {
                for learner in &learners {
                    let cell: Vec<&SummaryRow> = bundle
                        .cell(scheme, learner)
                        .into_iter()
                        .filter(|r| r.test_auc(*strategy).is_some())
                        .collect();
                    if cell.is_empty() {
                        continue;
                    }
                    let test = |r: &SummaryRow| r.test_auc(*strategy).expect("filtered to scored rows");
                    scatter.extend(cell.iter().map(|r| ScatterRow {
                        scheme: scheme.clone(),
                        strategy: *strategy,
                        learner: learner.clone(),
                        config_id: r.config_id,
                        val_auc: r.mean_val_auc,
                        test_auc: test(r),
                    }));
                    if let Some(best) = selected(&cell) {
                        selected_rows.push(SelectedRow {
                            scheme: scheme.clone(),
                            strategy: *strategy,
                            learner: learner.clone(),
                            config_id: best.config_id,
                            mean_val_auc: best.mean_val_auc,
                            test_auc: test(best),
                        });
                    }
                    let series = ScoreSeries::new(
                        cell.iter().map(|r| r.mean_val_auc).collect(),
                        cell.iter().map(|r| test(r)).collect(),
                    );
                    match series {
                        Ok(s) => {
                            let rep = robustness_report(&s);
                            robustness.push(RobustnessRow {
                                scheme: scheme.clone(),
                                strategy: *strategy,
                                learner: learner.clone(),
                                m: rep.m,
                                mae: rep.mae,
                                pearson: rep.pearson,
                                spearman: rep.spearman,
                                oracle_test_auc: rep.oracle_test_auc,
                            });
                        }
                        Err(e) => log::warn!("no robustness for {scheme}/{strategy}/{learner}: {e}"),
                    }
                }
            }
        }
        let mut mae_summary = Vec::new();
        for strategy in &strategies {
            for scheme in &schemes {
                let group: Vec<&RobustnessRow> = robustness
                    .iter()
                    .filter(|r| r.strategy == *strategy && &r.scheme == scheme)
                    .collect();
                if group.is_empty() {
                    continue;
                }
                let maes: Vec<f64> = group.iter().map(|r| r.mae).collect();
                let (q25, q75) = (
                    quantile(&maes, 0.25).unwrap_or(f64::NAN),
                    quantile(&maes, 0.75).unwrap_or(f64::NAN),
                );
                let mean_of = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
                let pearsons: Vec<f64> = group.iter().filter_map(|r| r.pearson).collect();
                let spearmans: Vec<f64> = group.iter().filter_map(|r| r.spearman).collect();
                mae_summary.push(MaeSummaryRow {
                    scheme: scheme.clone(),
                    strategy: *strategy,
                    n_learners: group.len(),
                    mae_mean: maes.iter().sum::<f64>() / maes.len() as f64,
                    mae_q25: q25,
                    mae_q75: q75,
                    mae_iqr: q75 - q25,
                    pearson_n: pearsons.len(),
                    pearson_mean: mean_of(pearsons),
                    spearman_n: spearmans.len(),
                    spearman_mean: mean_of(spearmans),
                });
            }
        }
        Ok(Report {
            schemes,
            learners,
            strategies,
            robustness,
            scatter,
            selected: selected_rows,
            mae_summary,
        })
    }

    /// `(strategy, scheme) -> oracle test AUC per learner` plus the learner mean.
    pub fn oracle_table(&self) -> Vec<OracleRow> {
        let mut out = Vec::new();
        for &strategy in &self.strategies {
            for scheme in &self.schemes {
                let cells: Vec<Option<f64>> = self
                    .learners
                    .iter()
                    .map(|l| {
                        self.robustness
                            .iter()
                            .find(|r| r.strategy == strategy && &r.scheme == scheme && &r.learner == l)
                            .map(|r| r.oracle_test_auc)
                    })
                    .collect();
                let present: Vec<f64> = cells.iter().flatten().copied().collect();
                let avg = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
                out.push((strategy, scheme.clone(), cells, avg));
            }
        }
        out
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt3(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into())
}

fn markdown(report: &Report, bundle: &Bundle) -> String {
    let mut md = String::from("# Validation robustness report\n\n");
    let _ = writeln!(md, "## Oracle test AUC\n\n{ORACLE_CAVEAT}\n");
    let mut header = String::from("| Strategy | CV |");
    let mut rule = String::from("|---|---|");
    for l in &report.learners {
        let _ = write!(header, " {l} |");
        rule.push_str("---|");
    }
    header.push_str(" Average |");
    rule.push_str("---|");
    let _ = writeln!(md, "{header}\n{rule}");
    for (strategy, scheme, cells, avg) in report.oracle_table() {
        let _ = write!(md, "| {strategy} | {scheme} |");
        for c in cells {
            let _ = write!(md, " {} |", fmt3(c));
        }
        let _ = writeln!(md, " {} |", fmt3(avg));
    }

    let _ = writeln!(md, "\n## Selected configuration (highest mean validation AUC)\n");
    let _ = writeln!(
        md,
        "| Strategy | CV | Learner | config | validation AUC | test AUC |\n|---|---|---|---|---|---|"
    );
    for s in &report.selected {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {:.3} | {:.3} |",
            s.strategy, s.scheme, s.learner, s.config_id, s.mean_val_auc, s.test_auc
        );
    }

    let _ = writeln!(md, "\n## Robustness (validation vs test AUC over configurations)\n");
    let _ = writeln!(
        md,
        "| Strategy | CV | Learner | m | MAE | Pearson | Spearman |\n|---|---|---|---|---|---|---|"
    );
    for r in &report.robustness {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {:.4} | {} | {} |",
            r.strategy,
            r.scheme,
            r.learner,
            r.m,
            r.mae,
            fmt3(r.pearson),
            fmt3(r.spearman)
        );
    }

    let _ = writeln!(md, "\n## MAE across learners (IQR is the 25th to 75th percentile)\n");
    let _ = writeln!(
        md,
        "| Strategy | CV | learners | mean MAE | IQR | mean Pearson | mean Spearman |\n|---|---|---|---|---|---|---|"
    );
    for r in &report.mae_summary {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {:.4} | {:.4} | {} | {} |",
            r.strategy,
            r.scheme,
            r.n_learners,
            r.mae_mean,
            r.mae_iqr,
            fmt3(r.pearson_mean),
            fmt3(r.spearman_mean)
        );
    }
    let _ = writeln!(
        md,
        "\nUndefined correlations (constant scores) are shown as n/a and left out of the means."
    );

    if !bundle.failures.is_empty() {
        let _ = writeln!(md, "\n## Failed cells\n");
        for f in &bundle.failures {
            let _ = writeln!(md, "- {} / {}: {}", f.scheme, f.learner, f.error);
        }
    }
    md
}

/// Write the report tables into `dir`:
/// `oracle.csv`, `selected.csv`, `robustness.csv`, `mae_summary.csv`,
/// `scatter.csv` and a readable `report.md`.
pub fn emit_report(bundle: &Bundle, dir: &Path) -> Result<Report> {
    let report = Report::from_bundle(bundle)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut oracle = String::from("strategy,scheme");
    for l in &report.learners {
        let _ = write!(oracle, ",{l}");
    }
    oracle.push_str(",average\n");
    for (strategy, scheme, cells, avg) in report.oracle_table() {
        let _ = write!(oracle, "{strategy},{scheme}");
        for c in cells {
            let _ = write!(oracle, ",{}", opt(c));
        }
        let _ = writeln!(oracle, ",{}", opt(avg));
    }
    write_file(&dir.join("oracle.csv"), oracle)?;
    write_file(
        &dir.join("selected.csv"),
        to_csv(
            &report.selected,
            &["scheme", "strategy", "learner", "config_id", "mean_val_auc", "test_auc"],
        )?,
    )?;
    write_file(
        &dir.join("robustness.csv"),
        to_csv(
            &report.robustness,
            &[
                "scheme",
                "strategy",
                "learner",
                "m",
                "mae",
                "pearson",
                "spearman",
                "oracle_test_auc",
            ],
        )?,
    )?;
    write_file(
        &dir.join("mae_summary.csv"),
        to_csv(
            &report.mae_summary,
            &[
                "scheme",
                "strategy",
                "n_learners",
                "mae_mean",
                "mae_q25",
                "mae_q75",
                "mae_iqr",
                "pearson_mean",
                "pearson_n",
                "spearman_mean",
                "spearman_n",
            ],
        )?,
    )?;
    write_file(
        &dir.join("scatter.csv"),
        to_csv(
            &report.scatter,
            &["scheme", "strategy", "learner", "config_id", "val_auc", "test_auc"],
        )?,
    )?;
    write_file(&dir.join("report.md"), markdown(&report, bundle))?;
    Ok(report)
}

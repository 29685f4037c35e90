//! ROC AUC and the agreement metrics between validation-phase and
//! test-phase scores.

use serde::Serialize;

use crate::error::{Error, Result};

/// Average (mid) ranks, 1-based. Tied values share the mean of the ranks
/// they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j share their mean.
        let mid = (i + 1 + j) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = mid;
        }
        i = j;
    }
    ranks
}

/// Area under the ROC curve in its Mann–Whitney form: the fraction of
/// (presence, absence) pairs ranked correctly, ties counting one half.
pub fn roc_auc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass(format!(
            "AUC needs both classes ({n_pos} presences, {n_neg} absences)"
        )));
    }
    let ranks = average_ranks(scores);
    // Rank sums are multiples of 1/2, so this stays exact in f64 for any
    // realistic sample size.
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Paired validation-phase (`validation`) and test-phase (`test`) scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    validation: Vec<f64>,
    test: Vec<f64>,
}

impl ScoreSeries {
    pub fn new(validation: Vec<f64>, test: Vec<f64>) -> Result<Self> {
        if validation.len() != test.len() {
            return Err(Error::InvalidArgument(format!(
                "score series lengths differ: {} vs {}",
                validation.len(),
                test.len()
            )));
        }
        if validation.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 paired scores, got {}",
                validation.len()
            )));
        }
        if validation.iter().chain(&test).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite score".into()));
        }
        Ok(ScoreSeries { validation, test })
    }

    pub fn validation(&self) -> &[f64] {
        &self.validation
    }

    pub fn test(&self) -> &[f64] {
        &self.test
    }

    pub fn len(&self) -> usize {
        self.validation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.validation.is_empty()
    }

    pub fn ranked(&self) -> ScoreSeries {
        ScoreSeries {
            validation: average_ranks(&self.validation),
            test: average_ranks(&self.test),
        }
    }
}

pub fn mae(series: &ScoreSeries) -> f64 {
    let m = series.len() as f64;
    series
        .validation
        .iter()
        .zip(&series.test)
        .map(|(v, t)| (t - v).abs())
        .sum::<f64>()
        / m
}

/// Pearson correlation, `None` when either side has zero variance.
pub fn pearson(series: &ScoreSeries) -> Option<f64> {
    pearson_slices(&series.validation, &series.test)
}

fn pearson_slices(a: &[f64], b: &[f64]) -> Option<f64> {
    // Tested exactly: a rounded mean leaves tiny residuals on constant input.
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(a) || constant(b) {
        return None;
    }
    let m = a.len() as f64;
    let ma = a.iter().sum::<f64>() / m;
    let mb = b.iter().sum::<f64>() / m;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson on average ranks.
pub fn spearman(series: &ScoreSeries) -> Option<f64> {
    pearson(&series.ranked())
}

/// Agreement between validation and test scores for one
/// (scheme, strategy, learner) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessReport {
    pub m: usize,
    pub mae: f64,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub oracle_test_auc: f64,
    /// Index into the series of the configuration achieving the oracle AUC.
    pub oracle_index: usize,
}

pub fn robustness_report(series: &ScoreSeries) -> RobustnessReport {
    let (oracle_index, oracle_test_auc) = series.test.iter().copied().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |best, (i, v)| if v > best.1 { (i, v) } else { best },
    );
    RobustnessReport {
        m: series.len(),
        mae: mae(series),
        pearson: pearson(series),
        spearman: spearman(series),
        oracle_test_auc,
        oracle_index,
    }
}

/// Linear-interpolated quantile (the R type-7 rule), `q` in [0, 1].
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

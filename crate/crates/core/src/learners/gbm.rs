use rand::seq::index;

use super::tree::{grow_tree, presort, Columns, Criterion, GrowOptions};
use super::{columns, sigmoid, Ensemble, GbmParams, TrainedModel, MAX_LOG_ODDS};
use crate::error::{Error, Result};
use crate::rng;
use crate::table::TrainingTable;

/// Halvings tried before a stage that raises training loss is dropped.
const MAX_STEP_HALVINGS: usize = 30;

/// Mean logistic loss of raw scores `f` against 0/1 labels.
fn log_loss(f: &[f64], y: &[f64]) -> f64 {
    let total: f64 = f
        .iter()
        .zip(y)
        .map(|(&f, &y)| f.max(0.0) + (-f.abs()).exp().ln_1p() - y * f)
        .sum();
    total / f.len() as f64
}

fn loss_after(f: &[f64], delta: &[f64], scale: f64, y: &[f64]) -> f64 {
    let total: f64 = f
        .iter()
        .zip(delta)
        .zip(y)
        .map(|((&a, &d), &y)| {
            let f = a + scale * d;
            f.max(0.0) + (-f.abs()).exp().ln_1p() - y * f
        })
        .sum();
    total / f.len() as f64
}

/// Stagewise Newton boosting on logistic loss.
///
/// Each stage fits a tree to residuals `y - p` with hessians `p (1 - p)`,
/// leaves set to `sum(r) / (sum(h) + l2)` and shrunk by the learning rate.
/// If a stage would raise training loss (possible under row subsampling),
/// its leaves are halved until it does not; a stage that never helps is
/// zeroed, so training loss never increases.
pub(super) fn fit(p: &GbmParams, seed: u64, table: &TrainingTable, order: &[usize], width: usize) -> Ensemble {
    let n = order.len();
    let cols = columns(table, order, width);
    let sorted = presort(&cols);
    let rows: Vec<&[f64]> = order.iter().map(|&i| table.features[i].as_slice()).collect();
    let y: Vec<f64> = order.iter().map(|&i| f64::from(table.labels[i])).collect();
    let base_rate = y.iter().sum::<f64>() / n as f64;
    let base_log_odds = (base_rate / (1.0 - base_rate)).ln();
    let n_rows = ((p.subsample_fraction * n as f64).round() as usize).clamp(1, n);
    let n_cols = ((p.colsample_fraction * width as f64).ceil() as usize).clamp(1, width.max(1));
    let opts = GrowOptions {
        criterion: Criterion::Newton { l2: p.l2_leaf_penalty },
        max_depth: p.max_depth,
        min_samples_leaf: p.min_samples_leaf as f64,
        features_per_split: None,
    };
    let data = Columns {
        cols: &cols,
        sorted: &sorted,
    };

    let mut f = vec![base_log_odds; n];
    let mut loss = log_loss(&f, &y);
    let mut trees = Vec::with_capacity(p.n_trees);
    let mut delta = vec![0.0; n];
    let mut resid = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for t in 0..p.n_trees {
        let mut r = rng::rng(rng::derive(seed, t as u64));
        let weight: Vec<f64> = if n_rows < n {
            let mut w = vec![0.0; n];
            for i in index::sample(&mut r, n, n_rows) {
                w[i] = 1.0;
            }
            w
        } else {
            vec![1.0; n]
        };
        let features: Vec<usize> = if n_cols < width {
            let mut fs = index::sample(&mut r, width, n_cols).into_vec();
            fs.sort_unstable();
            fs
        } else {
            (0..width).collect()
        };
        for i in 0..n {
            let p = sigmoid(f[i]);
            resid[i] = y[i] - p;
            hess[i] = p * (1.0 - p);
        }
        let mut tree = grow_tree(&data, &features, &resid, Some(&hess), &weight, &opts, &mut r);
        tree.scale_leaves(p.learning_rate);
        for (d, row) in delta.iter_mut().zip(&rows) {
            *d = tree.predict(row);
        }
        let mut scale = 1.0;
        let mut next = loss_after(&f, &delta, scale, &y);
        let mut halvings = 0;
        while next > loss && halvings < MAX_STEP_HALVINGS {
            scale *= 0.5;
            halvings += 1;
            next = loss_after(&f, &delta, scale, &y);
        }
        if next > loss {
            scale = 0.0;
            next = loss;
        }
        if scale != 1.0 {
            log::debug!("gbm stage {t}: step scaled by {scale} to keep training loss from rising");
            tree.scale_leaves(scale);
            for (d, row) in delta.iter_mut().zip(&rows) {
                *d = tree.predict(row);
            }
        }
        for (a, d) in f.iter_mut().zip(&delta) {
            *a += d;
        }
        // Leaf scaling is exact in binary, so `next` is the loss of the new `f`.
        loss = next;
        trees.push(tree);
    }
    Ensemble::Boosted {
        base_log_odds: base_log_odds.clamp(-MAX_LOG_ODDS, MAX_LOG_ODDS),
        trees,
    }
}

/// Training log loss after each stage of a boosted model (index 0 is the
/// base model), evaluated on `table`.
pub fn staged_log_loss(model: &TrainedModel, table: &TrainingTable) -> Result<Vec<f64>> {
    let Ensemble::Boosted { base_log_odds, trees } = &model.ensemble else {
        return Err(Error::InvalidArgument("staged loss needs a boosted model".into()));
    };
    let y: Vec<f64> = table.labels.iter().map(|&l| f64::from(l)).collect();
    let mut f = vec![*base_log_odds; table.len()];
    let mut out = vec![log_loss(&f, &y)];
    for t in trees {
        for (a, row) in f.iter_mut().zip(&table.features) {
            if row.len() != model.feature_count {
                return Err(Error::WidthMismatch {
                    expected: model.feature_count,
                    found: row.len(),
                });
            }
            *a += t.predict(row);
        }
        out.push(log_loss(&f, &y));
    }
    Ok(out)
}

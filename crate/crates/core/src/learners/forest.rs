use rand::Rng as _;
use rayon::prelude::*;

use super::tree::{grow_tree, presort, Columns, Criterion, GrowOptions};
use super::{columns, Ensemble, RfParams};
use crate::rng;
use crate::table::TrainingTable;

/// Bagged Gini trees. Each tree draws its bootstrap from its own derived
/// seed, so trees can be grown in any order on any number of workers.
pub(super) fn fit(p: &RfParams, seed: u64, table: &TrainingTable, order: &[usize], width: usize) -> Ensemble {
    let n = order.len();
    let cols = columns(table, order, width);
    let sorted = presort(&cols);
    let y: Vec<f64> = order.iter().map(|&i| f64::from(table.labels[i])).collect();
    let draws = ((p.bootstrap_fraction * n as f64).round() as usize).max(1);
    let mtry = ((p.mtry_fraction * width as f64).ceil() as usize).clamp(1, width.max(1));
    let features: Vec<usize> = (0..width).collect();
    let opts = GrowOptions {
        criterion: Criterion::Gini,
        max_depth: p.max_depth,
        min_samples_leaf: p.min_samples_leaf as f64,
        features_per_split: Some(mtry),
    };
    let data = Columns {
        cols: &cols,
        sorted: &sorted,
    };
    let trees = (0..p.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::rng(rng::derive(seed, t as u64));
            let mut weight = vec![0.0; n];
            for _ in 0..draws {
                weight[r.random_range(0..n)] += 1.0;
            }
            grow_tree(&data, &features, &y, None, &weight, &opts, &mut r)
        })
        .collect();
    Ensemble::Forest { trees }
}

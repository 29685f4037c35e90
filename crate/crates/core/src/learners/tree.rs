//! CART construction over presorted columns.
//!
//! Columns are sorted once per ensemble; each tree level then costs one pass
//! per feature over the sorted rows, O(features × rows × depth). Thresholds are
//! midpoints between consecutive distinct values, and a row goes left when
//! `x <= threshold`. Gain ties keep the lowest feature, then the lowest
//! threshold.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub(crate) fn scale_leaves(&mut self, factor: f64) {
        for n in &mut self.nodes {
            if let Node::Leaf { value } = n {
                *value *= factor;
            }
        }
    }
}

/// What a node accumulates and how it scores.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Criterion {
    /// Weighted Gini impurity on 0/1 labels; leaf = weighted presence fraction.
    Gini,
    /// Second-order boosting gain on residuals and hessians;
    /// leaf = sum(residual) / (sum(hessian) + l2).
    Newton { l2: f64 },
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    /// Gini: weighted presences. Newton: residual sum.
    a: f64,
    /// Newton: hessian sum.
    b: f64,
    /// Sample weight (row count, or bootstrap multiplicity).
    w: f64,
}

impl Stats {
    fn add(&mut self, o: &Stats) {
        self.a += o.a;
        self.b += o.b;
        self.w += o.w;
    }

    fn minus(&self, o: &Stats) -> Stats {
        Stats {
            a: self.a - o.a,
            b: self.b - o.b,
            w: self.w - o.w,
        }
    }
}

impl Criterion {
    fn score(self, s: &Stats) -> f64 {
        match self {
            Criterion::Gini => {
                if s.w <= 0.0 {
                    0.0
                } else {
                    -2.0 * s.a * (s.w - s.a) / s.w
                }
            }
            Criterion::Newton { l2 } => {
                let denom = s.b + l2;
                if denom <= 0.0 {
                    0.0
                } else {
                    s.a * s.a / denom
                }
            }
        }
    }

    fn leaf(self, s: &Stats) -> f64 {
        match self {
            Criterion::Gini => {
                if s.w > 0.0 {
                    s.a / s.w
                } else {
                    0.0
                }
            }
            Criterion::Newton { l2 } => {
                let denom = s.b + l2;
                if denom > 0.0 {
                    s.a / denom
                } else {
                    0.0
                }
            }
        }
    }
}

pub(crate) struct GrowOptions {
    pub criterion: Criterion,
    pub max_depth: usize,
    pub min_samples_leaf: f64,
    /// Features drawn per split; `None` uses every candidate.
    pub features_per_split: Option<usize>,
}

/// Column-major training view shared by every tree of an ensemble.
pub(crate) struct Columns<'a> {
    pub cols: &'a [Vec<f64>],
    /// Rows sorted by each column's value (ties by row index).
    pub sorted: &'a [Vec<u32>],
}

pub(crate) fn presort(cols: &[Vec<f64>]) -> Vec<Vec<u32>> {
    cols.iter()
        .map(|c| {
            let mut idx: Vec<u32> = (0..c.len() as u32).collect();
            idx.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]).then(a.cmp(&b)));
            idx
        })
        .collect()
}

#[derive(Clone, Copy)]
struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Sentinel for rows outside every open node.
const CLOSED: u32 = u32::MAX;

/// Grow one tree on the rows with positive weight, using only `features`.
///
/// For [`Criterion::Gini`] `target` holds 0/1 labels; for
/// [`Criterion::Newton`] it holds residuals and `hessian` must be given.
/// `weight` is the per-row multiplicity (0 excludes the row).
///
/// Growth is level by level: each level makes one pass per feature over the
/// presorted rows, routing every row to the accumulator of its open node.
pub(crate) fn grow_tree(
    data: &Columns<'_>,
    features: &[usize],
    target: &[f64],
    hessian: Option<&[f64]>,
    weight: &[f64],
    opts: &GrowOptions,
    rng: &mut Rng,
) -> Tree {
    let n = target.len();
    let crit = opts.criterion;
    let min_leaf = opts.min_samples_leaf;
    let row_stats: Vec<Stats> = (0..n)
        .map(|i| Stats {
            a: target[i] * weight[i],
            b: match crit {
                Criterion::Gini => 0.0,
                Criterion::Newton { .. } => hessian.expect("newton criterion needs hessians")[i] * weight[i],
            },
            w: weight[i],
        })
        .collect();

    let mut nodes: Vec<Node> = Vec::new();
    let mut totals: Vec<Stats> = Vec::new();
    // Row -> node id, or CLOSED once its node is final.
    let mut row_node: Vec<u32> = vec![CLOSED; n];
    let mut root = Stats::default();
    for (i, s) in row_stats.iter().enumerate() {
        if weight[i] > 0.0 {
            row_node[i] = 0;
            root.add(s);
        }
    }
    nodes.push(Node::Leaf {
        value: crit.leaf(&root),
    });
    totals.push(root);
    let mut open: Vec<usize> = vec![0];

    // Per-level scratch indexed by slot (position in `open`).
    let mut slot_of: Vec<u32> = vec![CLOSED; 1];
    for depth in 0..=opts.max_depth {
        open.retain(|&k| depth < opts.max_depth && totals[k].w >= 2.0 * min_leaf && !features.is_empty());
        if open.is_empty() {
            break;
        }
        slot_of.clear();
        slot_of.resize(nodes.len(), CLOSED);
        for (s, &k) in open.iter().enumerate() {
            slot_of[k] = s as u32;
        }
        let m = open.len();
        // Features each open node may split on.
        let allowed: Option<Vec<Vec<bool>>> = match opts.features_per_split {
            Some(mtry) if mtry < features.len() => Some(
                (0..m)
                    .map(|_| {
                        let mut mask = vec![false; features.len()];
                        for p in index::sample(rng, features.len(), mtry) {
                            mask[p] = true;
                        }
                        mask
                    })
                    .collect(),
            ),
            _ => None,
        };
        let parent: Vec<f64> = open.iter().map(|&k| crit.score(&totals[k])).collect();
        let mut best: Vec<Option<Split>> = vec![None; m];
        let mut acc = vec![Stats::default(); m];
        let mut last = vec![f64::NAN; m];
        for (fi, &f) in features.iter().enumerate() {
            let col = &data.cols[f];
            acc.iter_mut().for_each(|a| *a = Stats::default());
            last.iter_mut().for_each(|l| *l = f64::NAN);
            for &r in &data.sorted[f] {
                let r = r as usize;
                let node = row_node[r];
                if node == CLOSED {
                    continue;
                }
                let s = slot_of[node as usize];
                if s == CLOSED {
                    continue;
                }
                let s = s as usize;
                if let Some(mask) = &allowed {
                    if !mask[s][fi] {
                        continue;
                    }
                }
                let v = col[r];
                let left = acc[s];
                if left.w > 0.0 && v != last[s] {
                    let right = totals[open[s]].minus(&left);
                    if left.w >= min_leaf && right.w >= min_leaf {
                        let gain = crit.score(&left) + crit.score(&right) - parent[s];
                        if gain > 1e-12 && best[s].is_none_or(|b| gain > b.gain) {
                            let prev = last[s];
                            let mid = prev + (v - prev) / 2.0;
                            let threshold = if mid < v { mid } else { prev };
                            best[s] = Some(Split {
                                feature: f,
                                threshold,
                                gain,
                            });
                        }
                    }
                }
                acc[s].add(&row_stats[r]);
                last[s] = v;
            }
        }

        // Materialise children and reroute rows.
        let mut children: Vec<Option<(usize, usize, Split)>> = vec![None; m];
        let mut next_open = Vec::new();
        for s in 0..m {
            if let Some(split) = best[s] {
                let (l, r) = (nodes.len(), nodes.len() + 1);
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                totals.push(Stats::default());
                totals.push(Stats::default());
                nodes[open[s]] = Node::Split {
                    feature: split.feature,
                    threshold: split.threshold,
                    left: l,
                    right: r,
                };
                children[s] = Some((l, r, split));
                next_open.push(l);
                next_open.push(r);
            }
        }
        for (i, node) in row_node.iter_mut().enumerate() {
            if *node == CLOSED {
                continue;
            }
            let s = slot_of[*node as usize];
            if s == CLOSED {
                *node = CLOSED;
                continue;
            }
            match children[s as usize] {
                Some((l, r, split)) => {
                    let child = if data.cols[split.feature][i] <= split.threshold {
                        l
                    } else {
                        r
                    };
                    totals[child].add(&row_stats[i]);
                    *node = child as u32;
                }
                None => *node = CLOSED,
            }
        }
        for &k in &next_open {
            nodes[k] = Node::Leaf {
                value: crit.leaf(&totals[k]),
            };
        }
        open = next_open;
    }
    Tree { nodes }
}

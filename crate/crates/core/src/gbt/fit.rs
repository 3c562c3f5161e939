use rayon::prelude::*;

use super::{goes_left, GbtModel, GbtParams, TreeNode, GBT_FORMAT_VERSION};
use crate::error::{Error, Result};

/// Per-round mean squared error.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitHistory {
    pub train_loss: Vec<f64>,
    pub valid_loss: Vec<f64>,
    /// Number of trees kept (after early stopping truncation).
    pub best_rounds: usize,
}

pub fn fit(
    rows: &[Vec<f64>],
    y: &[f64],
    params: &GbtParams,
    feature_names: Vec<String>,
) -> Result<GbtModel> {
    fit_with_validation(rows, y, None, params, feature_names).map(|(m, _)| m)
}

/// Boost on `rows`/`y`; when `valid` is given, stop after
/// `early_stopping_rounds` rounds without improvement and keep the best prefix.
pub fn fit_with_validation(
    rows: &[Vec<f64>],
    y: &[f64],
    valid: Option<(&[Vec<f64>], &[f64])>,
    params: &GbtParams,
    feature_names: Vec<String>,
) -> Result<(GbtModel, FitHistory)> {
    params.validate()?;
    if rows.is_empty() {
        return Err(Error::InvalidArgument("cannot fit on zero rows".into()));
    }
    if rows.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.len(),
            actual: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("targets must be finite".into()));
    }
    let n_features = feature_names.len();
    for r in rows {
        if r.len() != n_features {
            return Err(Error::DimensionMismatch {
                expected: n_features,
                actual: r.len(),
            });
        }
    }
    if let Some((vx, vy)) = valid {
        if vx.len() != vy.len() {
            return Err(Error::DimensionMismatch {
                expected: vx.len(),
                actual: vy.len(),
            });
        }
        if let Some(r) = vx.iter().find(|r| r.len() != n_features) {
            return Err(Error::DimensionMismatch {
                expected: n_features,
                actual: r.len(),
            });
        }
    }

    // A constant target gets its exact value so residuals are exactly zero.
    let base_score = if y.iter().all(|&v| v == y[0]) {
        y[0]
    } else {
        y.iter().sum::<f64>() / y.len() as f64
    };
    let mut model = GbtModel {
        version: GBT_FORMAT_VERSION,
        params: params.clone(),
        base_score,
        feature_names,
        trees: Vec::new(),
    };
    let columns = Columns::new(rows, n_features);
    let mut pred = vec![base_score; y.len()];
    let mut valid_pred = valid.map(|(vx, _)| vec![base_score; vx.len()]);
    let mut hist = FitHistory::default();
    let mut best = (f64::INFINITY, 0usize);

    for round in 0..params.n_rounds {
        let grad: Vec<f64> = pred.iter().zip(y).map(|(p, t)| p - t).collect();
        let (tree, leaf_of) = grow_tree(&columns, &grad, params);
        if tree.is_leaf() {
            break;
        }
        for (p, v) in pred.iter_mut().zip(&leaf_of) {
            *p += v;
        }
        hist.train_loss.push(mse(&pred, y));
        if let (Some((vx, vy)), Some(vp)) = (valid, valid_pred.as_mut()) {
            for (p, x) in vp.iter_mut().zip(vx) {
                *p += tree.predict(x);
            }
            let loss = mse(vp, vy);
            hist.valid_loss.push(loss);
            if loss < best.0 {
                best = (loss, round + 1);
            }
        }
        model.trees.push(tree);
        if valid.is_some() && model.trees.len() - best.1 >= params.early_stopping_rounds.max(1) {
            break;
        }
    }
    if valid.is_some() && !model.trees.is_empty() {
        model.trees.truncate(best.1);
    }
    hist.best_rounds = model.trees.len();
    Ok((model, hist))
}

fn mse(p: &[f64], y: &[f64]) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64
}

/// Column-major copy plus, per feature, the non-NaN rows sorted by value and
/// the NaN rows.
struct Columns {
    values: Vec<Vec<f64>>,
    sorted: Vec<Vec<u32>>,
    nan_rows: Vec<Vec<u32>>,
}

impl Columns {
    fn new(rows: &[Vec<f64>], n_features: usize) -> Self {
        let values: Vec<Vec<f64>> = (0..n_features)
            .map(|f| rows.iter().map(|r| r[f]).collect())
            .collect();
        let (sorted, nan_rows) = values
            .par_iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32)
                    .filter(|&i| !col[i as usize].is_nan())
                    .collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                let nan = (0..col.len() as u32)
                    .filter(|&i| col[i as usize].is_nan())
                    .collect();
                (idx, nan)
            })
            .unzip();
        Columns {
            values,
            sorted,
            nan_rows,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    threshold: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    g: f64,
    h: f64,
}

/// Node under construction.
struct Building {
    stats: Stats,
    cover: f64,
    split: Option<(usize, f64, f64, usize, usize)>,
}

const NONE: u32 = u32::MAX;

fn score(s: Stats, lambda: f64) -> f64 {
    s.g * s.g / (s.h + lambda)
}

/// Grows one tree level by level. Returns the tree and each row's leaf value.
fn grow_tree(cols: &Columns, grad: &[f64], params: &GbtParams) -> (TreeNode, Vec<f64>) {
    let n = grad.len();
    let total = Stats {
        g: grad.iter().sum(),
        h: n as f64,
    };
    let mut arena = vec![Building {
        stats: total,
        cover: n as f64,
        split: None,
    }];
    // Row -> slot in the current level; arena index per slot.
    let mut slot_of = vec![0u32; n];
    let mut level: Vec<usize> = vec![0];
    let mut node_of = vec![0usize; n];

    for _depth in 0..params.max_depth {
        if level.is_empty() {
            break;
        }
        let parent: Vec<Stats> = level.iter().map(|&a| arena[a].stats).collect();
        let per_feature: Vec<Vec<Option<Candidate>>> = (0..cols.values.len())
            .into_par_iter()
            .map(|f| scan_feature(cols, f, grad, &slot_of, &parent, params))
            .collect();

        let mut next_level = Vec::new();
        let mut split_of_slot: Vec<Option<(usize, f64, u32, u32)>> = vec![None; level.len()];
        for (slot, &a) in level.iter().enumerate() {
            let mut best: Option<(usize, Candidate)> = None;
            for (f, cands) in per_feature.iter().enumerate() {
                if let Some(c) = cands[slot] {
                    if best.is_none_or(|(_, b)| c.gain > b.gain) {
                        best = Some((f, c));
                    }
                }
            }
            if let Some((f, c)) = best.filter(|(_, c)| c.gain > 0.0) {
                let l = arena.len();
                arena.push(Building {
                    stats: Stats::default(),
                    cover: 0.0,
                    split: None,
                });
                arena.push(Building {
                    stats: Stats::default(),
                    cover: 0.0,
                    split: None,
                });
                arena[a].split = Some((f, c.threshold, c.gain, l, l + 1));
                split_of_slot[slot] = Some((
                    f,
                    c.threshold,
                    next_level.len() as u32,
                    next_level.len() as u32 + 1,
                ));
                next_level.push(l);
                next_level.push(l + 1);
            }
        }
        for i in 0..n {
            let s = slot_of[i];
            if s == NONE {
                continue;
            }
            match split_of_slot[s as usize] {
                Some((f, thr, ls, rs)) => {
                    let ns = if goes_left(cols.values[f][i], thr) {
                        ls
                    } else {
                        rs
                    };
                    let a = next_level[ns as usize];
                    arena[a].stats.g += grad[i];
                    arena[a].stats.h += 1.0;
                    arena[a].cover += 1.0;
                    slot_of[i] = ns;
                    node_of[i] = a;
                }
                None => slot_of[i] = NONE,
            }
        }
        level = next_level;
    }

    let leaf_value = |s: Stats| -params.learning_rate * s.g / (s.h + params.lambda);
    let leaf_of: Vec<f64> = node_of
        .iter()
        .map(|&a| leaf_value(arena[a].stats))
        .collect();
    (assemble(&arena, 0, &leaf_value), leaf_of)
}

fn assemble(arena: &[Building], a: usize, leaf_value: &impl Fn(Stats) -> f64) -> TreeNode {
    let b = &arena[a];
    match b.split {
        Some((feature, threshold, gain, l, r)) => TreeNode::Internal {
            feature,
            threshold,
            left: Box::new(assemble(arena, l, leaf_value)),
            right: Box::new(assemble(arena, r, leaf_value)),
            cover: Some(b.cover),
            gain,
        },
        None => TreeNode::Leaf {
            value: leaf_value(b.stats),
            cover: Some(b.cover),
        },
    }
}

/// Best split of feature `f` for every active slot. Candidate thresholds are
/// the distinct values in ascending order; a later candidate replaces the
/// current best only on strictly larger gain.
fn scan_feature(
    cols: &Columns,
    f: usize,
    grad: &[f64],
    slot_of: &[u32],
    parent: &[Stats],
    params: &GbtParams,
) -> Vec<Option<Candidate>> {
    let k = parent.len();
    let mut left = vec![Stats::default(); k];
    for &i in &cols.nan_rows[f] {
        let s = slot_of[i as usize];
        if s != NONE {
            left[s as usize].g += grad[i as usize];
            left[s as usize].h += 1.0;
        }
    }
    let mut last: Vec<Option<f64>> = vec![None; k];
    let mut best: Vec<Option<Candidate>> = vec![None; k];
    let col = &cols.values[f];
    for &i in &cols.sorted[f] {
        let i = i as usize;
        let s = slot_of[i];
        if s == NONE {
            continue;
        }
        let s = s as usize;
        let v = col[i];
        if let Some(lv) = last[s] {
            if v > lv {
                let l = left[s];
                let r = Stats {
                    g: parent[s].g - l.g,
                    h: parent[s].h - l.h,
                };
                if l.h >= params.min_child_weight && r.h >= params.min_child_weight {
                    let gain = 0.5
                        * (score(l, params.lambda) + score(r, params.lambda)
                            - score(parent[s], params.lambda))
                        - params.gamma;
                    if best[s].is_none_or(|b| gain > b.gain) {
                        best[s] = Some(Candidate { gain, threshold: v });
                    }
                }
            }
        }
        left[s].g += grad[i];
        left[s].h += 1.0;
        last[s] = Some(v);
    }
    best
}

use rayon::prelude::*;

use super::{goes_left, GbtModel, TreeNode};
use crate::error::{Error, Result};

pub const BRUTE_FORCE_MAX_FEATURES: usize = 12;

/// `base + phi.sum()` equals the model output for the explained row.
#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    pub phi: Vec<f64>,
    pub base: f64,
}

impl Attribution {
    pub fn output(&self) -> f64 {
        self.base + self.phi.iter().sum::<f64>()
    }
}

fn require_cover(model: &GbtModel) -> Result<f64> {
    if !model.has_cover() {
        return Err(Error::Model("model has no cover statistics".into()));
    }
    Ok(model.base_score
        + model
            .trees
            .iter()
            .map(|t| t.expected_value().unwrap_or(0.0))
            .sum::<f64>())
}

/// Exact tree Shapley values with cover-weighted conditional expectations
/// (polynomial path algorithm).
pub fn tree_shap(model: &GbtModel, x: &[f64]) -> Result<Attribution> {
    model.check_input(x)?;
    let base = require_cover(model)?;
    let mut phi = vec![0.0; model.n_features()];
    for t in &model.trees {
        recurse(t, x, &mut phi, Vec::new(), 1.0, 1.0, usize::MAX);
    }
    Ok(Attribution { phi, base })
}

#[derive(Debug, Clone, Copy)]
struct PathElem {
    feature: usize,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElem>, zero: f64, one: f64, feature: usize) {
    let d = path.len();
    path.push(PathElem {
        feature,
        zero,
        one,
        weight: if d == 0 { 1.0 } else { 0.0 },
    });
    for i in (0..d).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / (d + 1) as f64;
        path[i].weight = zero * path[i].weight * (d - i) as f64 / (d + 1) as f64;
    }
}

fn unwind(path: &mut Vec<PathElem>, idx: usize) {
    let d = path.len() - 1;
    let (one, zero) = (path[idx].one, path[idx].zero);
    let mut next = path[d].weight;
    for i in (0..d).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * (d + 1) as f64 / ((i + 1) as f64 * one);
            next = tmp - path[i].weight * zero * (d - i) as f64 / (d + 1) as f64;
        } else {
            path[i].weight = path[i].weight * (d + 1) as f64 / (zero * (d - i) as f64);
        }
    }
    for i in idx..d {
        path[i].feature = path[i + 1].feature;
        path[i].zero = path[i + 1].zero;
        path[i].one = path[i + 1].one;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElem], idx: usize) -> f64 {
    let d = path.len() - 1;
    let (one, zero) = (path[idx].one, path[idx].zero);
    let mut next = path[d].weight;
    let mut total = 0.0;
    for i in (0..d).rev() {
        if one != 0.0 {
            let tmp = next * (d + 1) as f64 / ((i + 1) as f64 * one);
            total += tmp;
            next = path[i].weight - tmp * zero * (d - i) as f64 / (d + 1) as f64;
        } else if zero != 0.0 {
            total += path[i].weight / zero / ((d - i) as f64 / (d + 1) as f64);
        }
    }
    total
}

fn recurse(
    node: &TreeNode,
    x: &[f64],
    phi: &mut [f64],
    mut path: Vec<PathElem>,
    zero: f64,
    one: f64,
    feature: usize,
) {
    extend(&mut path, zero, one, feature);
    match node {
        TreeNode::Leaf { value, .. } => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                phi[path[i].feature] += w * (path[i].one - path[i].zero) * value;
            }
        }
        TreeNode::Internal {
            feature: f,
            threshold,
            left,
            right,
            cover,
            ..
        } => {
            let (hot, cold) = if goes_left(x[*f], *threshold) {
                (left, right)
            } else {
                (right, left)
            };
            let (mut iz, mut io) = (1.0, 1.0);
            if let Some(k) = (1..path.len()).find(|&k| path[k].feature == *f) {
                iz = path[k].zero;
                io = path[k].one;
                unwind(&mut path, k);
            }
            let c = cover.unwrap_or(1.0);
            let frac = |n: &TreeNode| n.cover().unwrap_or(0.0) / c;
            recurse(hot, x, phi, path.clone(), frac(hot) * iz, io, *f);
            recurse(cold, x, phi, path, frac(cold) * iz, 0.0, *f);
        }
    }
}

/// Expected tree output when only features in `known` (bitmask) are fixed
/// to `x`; others are integrated out by cover.
fn conditional(node: &TreeNode, x: &[f64], known: u32) -> f64 {
    match node {
        TreeNode::Leaf { value, .. } => *value,
        TreeNode::Internal {
            feature,
            threshold,
            left,
            right,
            cover,
            ..
        } => {
            if known & (1 << feature) != 0 {
                conditional(
                    if goes_left(x[*feature], *threshold) {
                        left
                    } else {
                        right
                    },
                    x,
                    known,
                )
            } else {
                let c = cover.unwrap_or(1.0);
                (left.cover().unwrap_or(0.0) * conditional(left, x, known)
                    + right.cover().unwrap_or(0.0) * conditional(right, x, known))
                    / c
            }
        }
    }
}

/// Shapley values by enumerating all feature subsets. Exponential; test oracle.
pub fn brute_force_shap(model: &GbtModel, x: &[f64]) -> Result<Attribution> {
    model.check_input(x)?;
    let base = require_cover(model)?;
    let m = model.n_features();
    if m > BRUTE_FORCE_MAX_FEATURES {
        return Err(Error::InvalidArgument(format!(
            "brute-force Shapley supports at most {BRUTE_FORCE_MAX_FEATURES} features, got {m}"
        )));
    }
    let value = |s: u32| -> f64 { model.trees.iter().map(|t| conditional(t, x, s)).sum() };
    let values: Vec<f64> = (0..1u32 << m).map(value).collect();
    let fact: Vec<f64> = (0..=m)
        .scan(1.0, |acc, i| {
            if i > 0 {
                *acc *= i as f64;
            }
            Some(*acc)
        })
        .collect();
    let mut phi = vec![0.0; m];
    for (j, p) in phi.iter_mut().enumerate() {
        let bit = 1u32 << j;
        for s in 0..1u32 << m {
            if s & bit != 0 {
                continue;
            }
            let k = s.count_ones() as usize;
            let w = fact[k] * fact[m - k - 1] / fact[m];
            *p += w * (values[(s | bit) as usize] - values[s as usize]);
        }
    }
    Ok(Attribution { phi, base })
}

/// Mean |phi| per feature over `rows`.
pub fn mean_abs_shap(model: &GbtModel, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no rows to explain".into()));
    }
    let attrs: Vec<Attribution> = rows
        .par_iter()
        .map(|r| tree_shap(model, r))
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; model.n_features()];
    for a in &attrs {
        for (o, p) in out.iter_mut().zip(&a.phi) {
            *o += p.abs();
        }
    }
    out.iter_mut().for_each(|o| *o /= rows.len() as f64);
    Ok(out)
}

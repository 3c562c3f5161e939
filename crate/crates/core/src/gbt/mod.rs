//! Second-order gradient-boosted regression trees (squared error, L2 leaf
//! regularization, exact greedy splits) with exact TreeSHAP attributions.

mod fit;
mod shap;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fit::{fit, fit_with_validation, FitHistory};
pub use shap::{brute_force_shap, mean_abs_shap, tree_shap, Attribution, BRUTE_FORCE_MAX_FEATURES};

pub const GBT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub n_rounds: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    /// Stop after this many rounds without a validation improvement.
    pub early_stopping_rounds: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            learning_rate: 0.1,
            max_depth: 4,
            n_rounds: 200,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            early_stopping_rounds: 20,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate.is_finite()
            && self.learning_rate > 0.0
            && self.lambda.is_finite()
            && self.lambda >= 0.0
            && self.gamma.is_finite()
            && self.gamma >= 0.0
            && self.min_child_weight.is_finite()
            && self.min_child_weight >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "bad boosting parameters {self:?}"
            )))
        }
    }
}

/// A regression tree node. Rows with `x[feature] < threshold` or a NaN value
/// go left. `cover` is the number of training rows that reached the node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cover: Option<f64>,
        #[serde(default)]
        gain: f64,
    },
    Leaf {
        value: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cover: Option<f64>,
    },
}

impl TreeNode {
    pub fn leaf(value: f64, cover: f64) -> Self {
        TreeNode::Leaf {
            value,
            cover: Some(cover),
        }
    }

    /// Internal node whose cover is the sum of its children's.
    pub fn split(feature: usize, threshold: f64, left: TreeNode, right: TreeNode) -> Self {
        let cover = match (left.cover(), right.cover()) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
        TreeNode::Internal {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
            cover,
            gain: 0.0,
        }
    }

    pub fn cover(&self) -> Option<f64> {
        match self {
            TreeNode::Internal { cover, .. } | TreeNode::Leaf { cover, .. } => *cover,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if goes_left(x[*feature], *threshold) {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    /// Cover-weighted mean of leaf values.
    pub fn expected_value(&self) -> Option<f64> {
        match self {
            TreeNode::Leaf { value, .. } => Some(*value),
            TreeNode::Internal {
                left, right, cover, ..
            } => {
                let c = (*cover)?;
                Some(
                    (left.cover()? * left.expected_value()?
                        + right.cover()? * right.expected_value()?)
                        / c,
                )
            }
        }
    }

    pub(crate) fn visit_internal(&self, f: &mut impl FnMut(usize, f64, f64)) {
        if let TreeNode::Internal {
            feature,
            threshold,
            left,
            right,
            gain,
            ..
        } = self
        {
            f(*feature, *threshold, *gain);
            left.visit_internal(f);
            right.visit_internal(f);
        }
    }

    fn check(&self, n_features: usize) -> Result<()> {
        match self {
            TreeNode::Leaf { value, .. } if value.is_finite() => Ok(()),
            TreeNode::Leaf { .. } => Err(Error::Model("non-finite leaf value".into())),
            TreeNode::Internal {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                if *feature >= n_features {
                    return Err(Error::Model(format!(
                        "split on feature {feature} of {n_features}"
                    )));
                }
                if !threshold.is_finite() {
                    return Err(Error::Model("non-finite threshold".into()));
                }
                left.check(n_features)?;
                right.check(n_features)
            }
        }
    }
}

#[inline]
pub(crate) fn goes_left(v: f64, threshold: f64) -> bool {
    v.is_nan() || v < threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub version: u32,
    pub params: GbtParams,
    pub base_score: f64,
    pub feature_names: Vec<String>,
    pub trees: Vec<TreeNode>,
}

impl GbtModel {
    /// A model with no trees that always predicts `base_score`.
    pub fn constant(base_score: f64, feature_names: Vec<String>, params: GbtParams) -> Self {
        GbtModel {
            version: GBT_FORMAT_VERSION,
            params,
            base_score,
            feature_names,
            trees: Vec::new(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(self.base_score, |acc, t| acc + t.predict(x))
    }

    pub fn predict_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.predict(r)).collect()
    }

    /// Total split gain per feature.
    pub fn gain_importance(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_features()];
        for t in &self.trees {
            t.visit_internal(&mut |f, _, g| out[f] += g);
        }
        out
    }

    pub fn has_cover(&self) -> bool {
        fn walk(n: &TreeNode) -> bool {
            match n {
                TreeNode::Leaf { cover, .. } => cover.is_some_and(|c| c > 0.0),
                TreeNode::Internal {
                    cover, left, right, ..
                } => cover.is_some_and(|c| c > 0.0) && walk(left) && walk(right),
            }
        }
        self.trees.iter().all(walk)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != GBT_FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported model version {}",
                self.version
            )));
        }
        if !self.base_score.is_finite() {
            return Err(Error::Model("non-finite base score".into()));
        }
        self.trees
            .iter()
            .try_for_each(|t| t.check(self.n_features()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: GbtModel = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedFeature {
    pub index: usize,
    pub name: String,
    pub score: f64,
}

/// Sort features by score, descending; ties keep index order.
pub fn rank_by_score(names: &[String], scores: &[f64]) -> Vec<RankedFeature> {
    let mut out: Vec<RankedFeature> = names
        .iter()
        .zip(scores)
        .enumerate()
        .map(|(index, (name, &score))| RankedFeature {
            index,
            name: name.clone(),
            score,
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    out
}

pub fn mean_abs_shap_ranking(model: &GbtModel, rows: &[Vec<f64>]) -> Result<Vec<RankedFeature>> {
    let scores = mean_abs_shap(model, rows)?;
    Ok(rank_by_score(&model.feature_names, &scores))
}

pub fn gain_ranking(model: &GbtModel) -> Vec<RankedFeature> {
    rank_by_score(&model.feature_names, &model.gain_importance())
}

pub fn select_top_k(ranking: &[RankedFeature], k: usize) -> Result<Vec<String>> {
    if k > ranking.len() {
        return Err(Error::InvalidArgument(format!(
            "top-{k} requested from {} features",
            ranking.len()
        )));
    }
    Ok(ranking[..k].iter().map(|r| r.name.clone()).collect())
}

/// Long-format attribution export: `utterance_id,feature,phi`.
pub fn write_attributions_csv(
    path: &Path,
    ids: &[String],
    feature_names: &[String],
    attrs: &[Attribution],
) -> Result<()> {
    if ids.len() != attrs.len() {
        return Err(Error::DimensionMismatch {
            expected: ids.len(),
            actual: attrs.len(),
        });
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    let ser = |e: csv::Error| Error::Serde(e.to_string());
    w.write_record(["utterance_id", "feature", "phi"])
        .map_err(ser)?;
    for (id, a) in ids.iter().zip(attrs) {
        for (name, phi) in feature_names.iter().zip(&a.phi) {
            w.write_record([id.as_str(), name.as_str(), &phi.to_string()])
                .map_err(ser)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests;

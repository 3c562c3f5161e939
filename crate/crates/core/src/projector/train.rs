use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ProjectorModel, Tensor, N_CITIES};
use crate::error::{Error, Result};
use crate::seed;

/// One weakly labelled example; `label` indexes [`crate::corpus::City::ALL`].
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    SgdMomentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weight_init_scale: f64,
    pub optimizer: Optimizer,
    pub momentum: f64,
    /// Share of the pool held out for per-epoch validation accuracy.
    pub valid_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            weight_init_scale: 1.0,
            optimizer: Optimizer::SgdMomentum,
            momentum: 0.9,
            valid_fraction: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy over the training portion after the epoch.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub n_train: usize,
    pub n_valid: usize,
}

fn evaluate(model: &ProjectorModel, samples: &[&Sample]) -> (f64, f64) {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in samples {
        let p = model
            .project(&s.input)
            .expect("inputs validated before training");
        loss -= p[s.label].max(f64::MIN_POSITIVE).ln();
        let pred = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        correct += usize::from(pred == s.label);
    }
    let n = samples.len().max(1) as f64;
    (loss / n, correct as f64 / n)
}

/// Mini-batch SGD on mean cross-entropy. Deterministic for a given config.
pub fn train_projector(
    model: &ProjectorModel,
    pool: &[Sample],
    cfg: &TrainConfig,
) -> Result<(ProjectorModel, TrainHistory)> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument(
            "projector training pool is empty".into(),
        ));
    }
    if cfg.learning_rate.is_nan()
        || cfg.learning_rate < 0.0
        || cfg.epochs == 0
        || cfg.batch_size == 0
    {
        return Err(Error::InvalidArgument(
            "need learning_rate >= 0, epochs >= 1 and batch_size >= 1".into(),
        ));
    }
    if let Some(s) = pool.iter().find(|s| s.label >= N_CITIES) {
        return Err(Error::InvalidArgument(format!(
            "label {} out of range",
            s.label
        )));
    }
    let mut labels: Vec<usize> = pool.iter().map(|s| s.label).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 {
        return Err(Error::InvalidArgument(
            "projector training needs at least two distinct city labels".into(),
        ));
    }
    for s in pool {
        model.check_input(&s.input)?;
    }

    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut seed::rng(cfg.seed, "projector/valid"));
    let n_valid = ((cfg.valid_fraction.clamp(0.0, 1.0) * pool.len() as f64).round() as usize)
        .min(pool.len() - 1);
    let (valid_idx, train_idx) = order.split_at(n_valid);
    let valid: Vec<&Sample> = valid_idx.iter().map(|&i| &pool[i]).collect();
    let mut train_idx = train_idx.to_vec();

    let mut model = model.clone();
    let mut velocity: Vec<Vec<f64>> = model
        .layers
        .iter()
        .map(|l| vec![0.0; l.n_parameters()])
        .collect();
    let mut grads: Vec<Vec<f64>> = velocity.clone();
    let mut rng = seed::rng(cfg.seed, "projector/shuffle");
    let mut history = TrainHistory {
        n_train: train_idx.len(),
        n_valid,
        ..Default::default()
    };
    let momentum = match cfg.optimizer {
        Optimizer::Sgd => 0.0,
        Optimizer::SgdMomentum => cfg.momentum,
    };
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        for batch in train_idx.chunks(cfg.batch_size) {
            grads
                .iter_mut()
                .for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
            for &i in batch {
                model.accumulate(&pool[i], &mut grads);
            }
            let scale = 1.0 / batch.len() as f64;
            for ((layer, v), g) in model.layers.iter_mut().zip(&mut velocity).zip(&grads) {
                let Some((w, b)) = layer.params_mut() else {
                    continue;
                };
                for (k, p) in w.iter_mut().chain(b.iter_mut()).enumerate() {
                    v[k] = momentum * v[k] - cfg.learning_rate * g[k] * scale;
                    *p += v[k];
                }
            }
        }
        let train: Vec<&Sample> = train_idx.iter().map(|&i| &pool[i]).collect();
        let (train_loss, train_accuracy) = evaluate(&model, &train);
        let valid_accuracy = (!valid.is_empty()).then(|| evaluate(&model, &valid).1);
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            train_accuracy,
            valid_accuracy,
        });
    }
    Ok((model, history))
}

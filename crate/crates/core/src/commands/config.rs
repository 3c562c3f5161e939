use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::asr_features::Alphabet;
use crate::char_lm::{DEFAULT_K, DEFAULT_MIN_COUNT, DEFAULT_ORDER};
use crate::error::{Error, Result};
use crate::pipeline::{FeatureSetId, PipelineParams, TargetKind};
use crate::projector::{CnnSpec, FcSpec, TrainConfig};
use crate::prosody::ProsodyConfig;

/// Paths are relative to the config file unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub manifest: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lm_corpus: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xvectors: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub order: usize,
    pub k: f64,
    pub min_count: u32,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            order: DEFAULT_ORDER,
            k: DEFAULT_K,
            min_count: DEFAULT_MIN_COUNT,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FcSection {
    pub spec: FcSpec,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnSection {
    pub spec: CnnSpec,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    pub char_comb_normalized: bool,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            char_comb_normalized: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Train / validation / test shares of utterances.
    pub split: [f64; 3],
    pub targets: Vec<TargetKind>,
    pub holdout_iterations: usize,
    pub holdout_test_fraction: f64,
    pub holdout_sets: Vec<FeatureSetId>,
    pub top_n: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            split: [0.70, 0.15, 0.15],
            targets: TargetKind::EVERY.to_vec(),
            holdout_iterations: 200,
            holdout_test_fraction: 0.20,
            holdout_sets: FeatureSetId::EVERY.to_vec(),
            top_n: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub paths: PathsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphabet: Option<Vec<String>>,
    #[serde(default)]
    pub lm: LmConfig,
    #[serde(default)]
    pub fc: FcSection,
    #[serde(default)]
    pub cnn: CnnSection,
    #[serde(default)]
    pub prosody: ProsodyConfig,
    #[serde(default)]
    pub features: FeaturesConfig,
    #[serde(default)]
    pub model: PipelineParams,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn must_exist(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::io(p, std::io::ErrorKind::NotFound.into()))
    }
}

impl RunConfig {
    /// Parse, resolve relative paths against the file's directory and check
    /// that every referenced input exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut cfg.paths;
        p.manifest = resolve(base, &p.manifest);
        p.out_dir = resolve(base, &p.out_dir);
        for opt in [&mut p.lm_corpus, &mut p.xvectors, &mut p.compare] {
            if let Some(q) = opt.as_mut() {
                *q = resolve(base, q);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        must_exist(&self.paths.manifest)?;
        for p in [
            &self.paths.lm_corpus,
            &self.paths.xvectors,
            &self.paths.compare,
        ]
        .into_iter()
        .flatten()
        {
            must_exist(p)?;
        }
        self.model.gbt.validate()?;
        let s = self.eval.split;
        if s.iter().any(|f| !(0.0..=1.0).contains(f)) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidArgument(format!(
                "split fractions {s:?} must sum to 1"
            )));
        }
        self.alphabet()?;
        Ok(())
    }

    pub fn alphabet(&self) -> Result<Alphabet> {
        match &self.alphabet {
            Some(s) => Alphabet::new(s.clone()),
            None => Ok(Alphabet::default()),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }
}

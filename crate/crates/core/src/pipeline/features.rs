use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FeatureSetId;
use crate::asr_features::{
    bigram_feature_names, bigram_frequencies, char_durations, duration_feature_names, Alphabet,
    PosteriorMatrix,
};
use crate::char_lm::{lm_features, tag_verbs, CharLm, WordVocab, LM_FEATURE_NAMES};
use crate::corpus::{read_wav, City, UtteranceRecord};
use crate::error::{Error, Result};
use crate::projector::{ProjectorModel, Tensor};
use crate::prosody::{extract_contours, normalize_contours, ProsodyConfig};

/// Everything needed to turn a record into feature rows.
#[derive(Debug, Clone)]
pub struct FeatureContext {
    pub alphabet: Alphabet,
    pub prosody: ProsodyConfig,
    pub char_lm: Option<CharLm>,
    pub vocab: Option<WordVocab>,
    pub fc: Option<ProjectorModel>,
    pub cnn: Option<ProjectorModel>,
    /// Column names of the ingested ComParE table.
    pub compare_names: Option<Vec<String>>,
    /// Reduced ComParE columns used inside ALL.
    pub compare_top: Option<Vec<String>>,
    /// Bigram counts divided by `max(len-1, 1)` instead of raw counts.
    pub char_comb_normalized: bool,
}

impl FeatureContext {
    pub fn new(alphabet: Alphabet) -> Self {
        FeatureContext {
            alphabet,
            prosody: ProsodyConfig::default(),
            char_lm: None,
            vocab: None,
            fc: None,
            cnn: None,
            compare_names: None,
            compare_top: None,
            char_comb_normalized: true,
        }
    }

    /// Column names of an individual set, or of ALL when the top ComParE list
    /// is known.
    pub fn column_names(&self, set: FeatureSetId) -> Result<Vec<String>> {
        let city_cols = |prefix: &str| {
            City::ALL
                .iter()
                .map(|c| format!("{prefix}_{c}"))
                .collect::<Vec<_>>()
        };
        Ok(match set {
            FeatureSetId::CharComb => bigram_feature_names(&self.alphabet),
            FeatureSetId::CharDur => duration_feature_names(&self.alphabet),
            FeatureSetId::Lm => LM_FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            FeatureSetId::XvectorProj => city_cols("xvec"),
            FeatureSetId::ProsodyProj => city_cols("prosody"),
            FeatureSetId::Compare => self
                .compare_names
                .clone()
                .ok_or_else(|| Error::InvalidArgument("no ComParE table configured".into()))?,
            FeatureSetId::All => {
                let mut out = Vec::new();
                for s in FeatureSetId::INDIVIDUAL {
                    if s == FeatureSetId::Compare {
                        out.extend(self.top_compare()?.iter().cloned());
                    } else {
                        out.extend(self.column_names(s)?);
                    }
                }
                out
            }
        })
    }

    pub(crate) fn top_compare(&self) -> Result<&[String]> {
        self.compare_top.as_deref().ok_or_else(|| {
            Error::InvalidArgument("ALL needs the selected top ComParE features".into())
        })
    }

    /// Indices of the top ComParE columns within the full table.
    pub(crate) fn top_compare_indices(&self) -> Result<Vec<usize>> {
        let names = self.column_names(FeatureSetId::Compare)?;
        self.top_compare()?
            .iter()
            .map(|t| {
                names.iter().position(|n| n == t).ok_or_else(|| {
                    Error::InvalidArgument(format!("selected ComParE feature {t:?} not in table"))
                })
            })
            .collect()
    }

    fn missing(&self, set: FeatureSetId, r: &UtteranceRecord) -> Error {
        Error::MissingSideData {
            set: set.to_string(),
            ids: vec![r.id.clone()],
        }
    }

    /// Feature row of one record for an individual set.
    pub fn row(&self, set: FeatureSetId, r: &UtteranceRecord) -> Result<Vec<f64>> {
        match set {
            FeatureSetId::CharComb => {
                match &r.posteriors {
                    Some(p) if p.exists() => {}
                    _ => return Err(self.missing(set, r)),
                }
                let b = bigram_frequencies(&r.transcript, &self.alphabet);
                Ok(if self.char_comb_normalized {
                    b.normalized()
                } else {
                    b.counts.clone()
                })
            }
            FeatureSetId::CharDur => {
                let path = r
                    .posteriors
                    .as_deref()
                    .filter(|p| p.exists())
                    .ok_or_else(|| self.missing(set, r))?;
                char_durations(&PosteriorMatrix::read(path)?, &self.alphabet)
            }
            FeatureSetId::Lm => {
                let lm = self.char_lm.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("LM features need a character LM".into())
                })?;
                let vocab = self.vocab.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("LM features need a word vocabulary".into())
                })?;
                let verbs: BTreeSet<usize> = tag_verbs(&r.transcript, r.pos_tags.as_deref())?;
                Ok(lm_features(lm, vocab, &r.transcript, &verbs)?.to_vec())
            }
            FeatureSetId::XvectorProj => {
                let fc = self.fc.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("x-vector projection needs an FC projector".into())
                })?;
                let x = r.xvector.as_ref().ok_or_else(|| self.missing(set, r))?;
                fc.project(&Tensor::vector(x.clone()))
            }
            FeatureSetId::Compare => {
                let n = self.column_names(set)?.len();
                let x = r.compare.as_ref().ok_or_else(|| self.missing(set, r))?;
                if x.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        actual: x.len(),
                    });
                }
                Ok(x.clone())
            }
            FeatureSetId::ProsodyProj => {
                let cnn = self.cnn.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("prosody projection needs a CNN projector".into())
                })?;
                if !Path::new(&r.audio).exists() {
                    return Err(self.missing(set, r));
                }
                let audio = read_wav(&r.audio)?;
                let c = normalize_contours(&extract_contours(&audio, &self.prosody)?);
                cnn.project(&Tensor::new(4, c.n_frames(), c.to_channel_major()))
            }
            FeatureSetId::All => {
                let top = self.top_compare_indices()?;
                let mut out = Vec::new();
                for s in FeatureSetId::INDIVIDUAL {
                    let v = self.row(s, r)?;
                    if s == FeatureSetId::Compare {
                        out.extend(top.iter().map(|&i| v[i]));
                    } else {
                        out.extend(v);
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Column-level provenance written next to a feature CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub version: u32,
    pub set: FeatureSetId,
    pub n_rows: usize,
    pub columns: Vec<SidecarColumn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarColumn {
    pub name: String,
    pub set: FeatureSetId,
}

//! Feature-set assembly, per-set and combined model training, and prediction.

mod features;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DdmScore, SplitSpec, UtteranceRecord};
use crate::error::{Error, Result};
use crate::gbt::{
    fit_with_validation, gain_ranking, mean_abs_shap_ranking, select_top_k, FitHistory, GbtModel,
    GbtParams,
};

pub use features::{FeatureContext, MatrixSidecar, SidecarColumn};

pub const MATRIX_FORMAT_VERSION: u32 = 1;
pub const DDM_MIN: f64 = 0.0;
pub const DDM_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureSetId {
    #[serde(rename = "CHAR_COMB")]
    CharComb,
    #[serde(rename = "CHAR_DUR")]
    CharDur,
    #[serde(rename = "LM")]
    Lm,
    #[serde(rename = "XVECTOR_PROJ")]
    XvectorProj,
    #[serde(rename = "COMPARE")]
    Compare,
    #[serde(rename = "PROSODY_PROJ")]
    ProsodyProj,
    #[serde(rename = "ALL")]
    All,
}

impl FeatureSetId {
    pub const INDIVIDUAL: [FeatureSetId; 6] = [
        FeatureSetId::CharComb,
        FeatureSetId::CharDur,
        FeatureSetId::Lm,
        FeatureSetId::XvectorProj,
        FeatureSetId::Compare,
        FeatureSetId::ProsodyProj,
    ];

    pub const EVERY: [FeatureSetId; 7] = [
        FeatureSetId::CharComb,
        FeatureSetId::CharDur,
        FeatureSetId::Lm,
        FeatureSetId::XvectorProj,
        FeatureSetId::Compare,
        FeatureSetId::ProsodyProj,
        FeatureSetId::All,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSetId::CharComb => "CHAR_COMB",
            FeatureSetId::CharDur => "CHAR_DUR",
            FeatureSetId::Lm => "LM",
            FeatureSetId::XvectorProj => "XVECTOR_PROJ",
            FeatureSetId::Compare => "COMPARE",
            FeatureSetId::ProsodyProj => "PROSODY_PROJ",
            FeatureSetId::All => "ALL",
        }
    }
}

impl fmt::Display for FeatureSetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureSetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureSetId::EVERY
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown feature set {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TargetKind {
    #[serde(rename = "DDM_PHON")]
    DdmPhon,
    #[serde(rename = "DDM_GRAM")]
    DdmGram,
    #[serde(rename = "DDM")]
    Ddm,
}

impl TargetKind {
    pub const EVERY: [TargetKind; 3] = [TargetKind::DdmPhon, TargetKind::DdmGram, TargetKind::Ddm];

    pub fn as_str(self) -> &'static str {
        match self {
            TargetKind::DdmPhon => "DDM_PHON",
            TargetKind::DdmGram => "DDM_GRAM",
            TargetKind::Ddm => "DDM",
        }
    }

    pub fn of(self, s: &DdmScore) -> f64 {
        match self {
            TargetKind::DdmPhon => s.ddm_phon,
            TargetKind::DdmGram => s.ddm_gram,
            TargetKind::Ddm => s.ddm,
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TargetKind::EVERY
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown target {s:?}")))
    }
}

/// Rows are utterances, columns named features; NaN marks a missing value.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub set: FeatureSetId,
    pub ids: Vec<String>,
    pub names: Vec<String>,
    pub provenance: Vec<FeatureSetId>,
    pub rows: Vec<Vec<f64>>,
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("provenance.json")
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Keep only the rows whose id is in `ids`, in the order given.
    pub fn select_rows(&self, ids: &[String]) -> Result<FeatureMatrix> {
        let index: BTreeMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let rows = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|&i| self.rows[i].clone())
                    .ok_or_else(|| Error::InvalidArgument(format!("no feature row for {id:?}")))
            })
            .collect::<Result<_>>()?;
        Ok(FeatureMatrix {
            rows,
            ids: ids.to_vec(),
            ..self.clone()
        })
    }

    /// CSV (`id` column then features) plus a `.provenance.json` sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        let ser = |e: csv::Error| Error::Serde(e.to_string());
        let mut w = csv::Writer::from_path(path).map_err(ser)?;
        w.write_field("id").map_err(ser)?;
        w.write_record(&self.names).map_err(ser)?;
        for (id, row) in self.ids.iter().zip(&self.rows) {
            w.write_field(id).map_err(ser)?;
            w.write_record(row.iter().map(|v| v.to_string()))
                .map_err(ser)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let sidecar = MatrixSidecar {
            version: MATRIX_FORMAT_VERSION,
            set: self.set,
            n_rows: self.n_rows(),
            columns: self
                .names
                .iter()
                .zip(&self.provenance)
                .map(|(name, &set)| SidecarColumn {
                    name: name.clone(),
                    set,
                })
                .collect(),
        };
        let sp = sidecar_path(path);
        std::fs::write(&sp, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&sp, e))
    }

    pub fn read(path: &Path) -> Result<FeatureMatrix> {
        let sp = sidecar_path(path);
        let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let sidecar: MatrixSidecar = serde_json::from_str(&text)?;
        let table = crate::corpus::ingest_feature_table(path, Some(sidecar.columns.len()))?;
        let names: Vec<String> = sidecar.columns.iter().map(|c| c.name.clone()).collect();
        if table.names != names && !table.is_empty() {
            return Err(Error::FeatureTable {
                path: path.to_path_buf(),
                message: "header does not match provenance sidecar".into(),
            });
        }
        // Preserve file order rather than the table's sorted map order.
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
        let mut ids = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Serde(e.to_string()))?;
            ids.push(rec.get(0).unwrap_or_default().to_string());
        }
        let rows = ids.iter().map(|id| table.rows[id].clone()).collect();
        Ok(FeatureMatrix {
            set: sidecar.set,
            ids,
            names,
            provenance: sidecar.columns.iter().map(|c| c.set).collect(),
            rows,
        })
    }
}

/// Per-row failures from a partial build.
#[derive(Debug)]
pub struct RowFailure {
    pub id: String,
    pub error: Error,
}

/// Build what can be built; failing rows are reported, not fatal.
pub fn build_features_partial(
    records: &[UtteranceRecord],
    set: FeatureSetId,
    ctx: &FeatureContext,
) -> Result<(FeatureMatrix, Vec<RowFailure>)> {
    let names = ctx.column_names(set)?;
    let provenance = match set {
        FeatureSetId::All => {
            let mut p = Vec::new();
            for s in FeatureSetId::INDIVIDUAL {
                let n = if s == FeatureSetId::Compare {
                    ctx.top_compare()?.len()
                } else {
                    ctx.column_names(s)?.len()
                };
                p.extend(std::iter::repeat_n(s, n));
            }
            p
        }
        s => vec![s; names.len()],
    };
    let results: Vec<Result<Vec<f64>>> = records.par_iter().map(|r| ctx.row(set, r)).collect();
    let mut m = FeatureMatrix {
        set,
        ids: Vec::new(),
        names,
        provenance,
        rows: Vec::new(),
    };
    let mut failures = Vec::new();
    for (r, res) in records.iter().zip(results) {
        match res {
            Ok(row) if row.len() == m.n_cols() => {
                m.ids.push(r.id.clone());
                m.rows.push(row);
            }
            Ok(row) => failures.push(RowFailure {
                id: r.id.clone(),
                error: Error::DimensionMismatch {
                    expected: m.n_cols(),
                    actual: row.len(),
                },
            }),
            Err(error) => failures.push(RowFailure {
                id: r.id.clone(),
                error,
            }),
        }
    }
    Ok((m, failures))
}

/// Build a full matrix. Missing side data is reported for every affected id
/// at once; any other row error is returned as is.
pub fn build_features(
    records: &[UtteranceRecord],
    set: FeatureSetId,
    ctx: &FeatureContext,
) -> Result<FeatureMatrix> {
    let (m, failures) = build_features_partial(records, set, ctx)?;
    fail_on_rows(set, failures)?;
    Ok(m)
}

fn fail_on_rows(set: FeatureSetId, failures: Vec<RowFailure>) -> Result<()> {
    if failures.is_empty() {
        return Ok(());
    }
    if failures
        .iter()
        .all(|f| matches!(f.error, Error::MissingSideData { .. }))
    {
        return Err(Error::MissingSideData {
            set: set.to_string(),
            ids: failures.into_iter().map(|f| f.id).collect(),
        });
    }
    let f = failures
        .into_iter()
        .find(|f| !matches!(f.error, Error::MissingSideData { .. }))
        .unwrap();
    Err(Error::InvalidArgument(format!(
        "{set} features for {}: {}",
        f.id, f.error
    )))
}

/// The six individual matrices for one record list, computed once. ALL is
/// derived by column selection.
#[derive(Debug, Clone)]
pub struct FeatureBank {
    pub ids: Vec<String>,
    pub sets: BTreeMap<FeatureSetId, FeatureMatrix>,
}

impl FeatureBank {
    pub fn build(records: &[UtteranceRecord], ctx: &FeatureContext) -> Result<FeatureBank> {
        let mut sets = BTreeMap::new();
        for s in FeatureSetId::INDIVIDUAL {
            sets.insert(s, build_features(records, s, ctx)?);
        }
        Ok(FeatureBank {
            ids: records.iter().map(|r| r.id.clone()).collect(),
            sets,
        })
    }

    /// Individual set, or ALL assembled with the named ComParE subset.
    pub fn matrix(
        &self,
        set: FeatureSetId,
        compare_top: Option<&[String]>,
    ) -> Result<FeatureMatrix> {
        if set != FeatureSetId::All {
            return self
                .sets
                .get(&set)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("{set} not in feature bank")));
        }
        let top = compare_top.ok_or_else(|| {
            Error::InvalidArgument("ALL needs the selected top ComParE features".into())
        })?;
        let mut names = Vec::new();
        let mut provenance = Vec::new();
        let mut rows = vec![Vec::new(); self.ids.len()];
        for s in FeatureSetId::INDIVIDUAL {
            let m = &self.sets[&s];
            let cols: Vec<usize> = if s == FeatureSetId::Compare {
                top.iter()
                    .map(|t| {
                        m.names.iter().position(|n| n == t).ok_or_else(|| {
                            Error::InvalidArgument(format!(
                                "selected ComParE feature {t:?} not in table"
                            ))
                        })
                    })
                    .collect::<Result<_>>()?
            } else {
                (0..m.n_cols()).collect()
            };
            for &j in &cols {
                names.push(m.names[j].clone());
                provenance.push(s);
            }
            for (out, row) in rows.iter_mut().zip(&m.rows) {
                out.extend(cols.iter().map(|&j| row[j]));
            }
        }
        Ok(FeatureMatrix {
            set: FeatureSetId::All,
            ids: self.ids.clone(),
            names,
            provenance,
            rows,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopSelection {
    /// Mean |SHAP| on the training rows.
    #[default]
    Shap,
    /// Total split gain.
    Gain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub gbt: GbtParams,
    pub compare_top_k: usize,
    pub selection: TopSelection,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            gbt: GbtParams::default(),
            compare_top_k: 10,
            selection: TopSelection::Shap,
        }
    }
}

/// The seven models for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    pub target: TargetKind,
    pub models: BTreeMap<FeatureSetId, GbtModel>,
    pub histories: BTreeMap<FeatureSetId, FitHistory>,
    pub compare_top: Vec<String>,
}

impl TrainedModels {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (set, m) in &self.models {
            m.save(&dir.join(format!("{set}.json")))?;
        }
        let p = dir.join("compare_top.json");
        std::fs::write(&p, serde_json::to_string_pretty(&self.compare_top)?)
            .map_err(|e| Error::io(&p, e))
    }

    /// Loads every model present in `dir`; at least one must exist.
    pub fn load(dir: &Path, target: TargetKind) -> Result<Self> {
        let p = dir.join("compare_top.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let compare_top = serde_json::from_str(&text)?;
        let mut models = BTreeMap::new();
        for set in FeatureSetId::EVERY {
            let mp = dir.join(format!("{set}.json"));
            if mp.exists() {
                models.insert(set, GbtModel::load(&mp)?);
            }
        }
        if models.is_empty() {
            return Err(Error::io(
                dir.join("ALL.json"),
                std::io::ErrorKind::NotFound.into(),
            ));
        }
        Ok(TrainedModels {
            target,
            models,
            histories: BTreeMap::new(),
            compare_top,
        })
    }
}

/// Targets of annotated records; unannotated records are an error.
pub fn targets(records: &[&UtteranceRecord], target: TargetKind) -> Result<Vec<f64>> {
    records
        .iter()
        .map(|r| {
            r.ddm().map(|s| target.of(&s)).ok_or_else(|| {
                Error::InvalidArgument(format!("utterance {:?} has no DDM annotation", r.id))
            })
        })
        .collect()
}

pub(crate) fn ids_of(records: &[&UtteranceRecord]) -> Vec<String> {
    records.iter().map(|r| r.id.clone()).collect()
}

/// Select the reduced ComParE list from a trained COMPARE model.
pub fn select_compare_top(
    model: &GbtModel,
    train_rows: &[Vec<f64>],
    params: &PipelineParams,
) -> Result<Vec<String>> {
    let ranking = match params.selection {
        TopSelection::Shap => mean_abs_shap_ranking(model, train_rows)?,
        TopSelection::Gain => gain_ranking(model),
    };
    select_top_k(&ranking, params.compare_top_k.min(ranking.len()))
}

/// Train the seven models for `target` from a bank that covers the train and
/// validation records of `split`.
pub fn train_from_bank(
    bank: &FeatureBank,
    records: &[UtteranceRecord],
    split: &SplitSpec,
    target: TargetKind,
    params: &PipelineParams,
) -> Result<TrainedModels> {
    let train = split.select(&split.train, records);
    let valid = split.select(&split.valid, records);
    if train.is_empty() {
        return Err(Error::InvalidArgument("training partition is empty".into()));
    }
    let (train_ids, valid_ids) = (ids_of(&train), ids_of(&valid));
    let (ty, vy) = (targets(&train, target)?, targets(&valid, target)?);

    let fit_set = |m: &FeatureMatrix| -> Result<(GbtModel, FitHistory)> {
        let tx = m.select_rows(&train_ids)?;
        let vx = m.select_rows(&valid_ids)?;
        let valid = (!vx.rows.is_empty()).then_some((vx.rows.as_slice(), vy.as_slice()));
        fit_with_validation(&tx.rows, &ty, valid, &params.gbt, m.names.clone())
    };

    let fitted: Vec<(FeatureSetId, (GbtModel, FitHistory))> = FeatureSetId::INDIVIDUAL
        .par_iter()
        .map(|&s| Ok((s, fit_set(&bank.matrix(s, None)?)?)))
        .collect::<Result<_>>()?;
    let mut models = BTreeMap::new();
    let mut histories = BTreeMap::new();
    for (s, (m, h)) in fitted {
        models.insert(s, m);
        histories.insert(s, h);
    }

    let compare_rows = bank.sets[&FeatureSetId::Compare]
        .select_rows(&train_ids)?
        .rows;
    let compare_top = select_compare_top(&models[&FeatureSetId::Compare], &compare_rows, params)?;
    let (m, h) = fit_set(&bank.matrix(FeatureSetId::All, Some(&compare_top))?)?;
    models.insert(FeatureSetId::All, m);
    histories.insert(FeatureSetId::All, h);
    Ok(TrainedModels {
        target,
        models,
        histories,
        compare_top,
    })
}

/// Seven models (six sets plus ALL) trained on the training partition with
/// the validation partition used for early stopping.
pub fn train_all(
    records: &[UtteranceRecord],
    split: &SplitSpec,
    target: TargetKind,
    ctx: &FeatureContext,
    params: &PipelineParams,
) -> Result<TrainedModels> {
    let used: Vec<UtteranceRecord> = records
        .iter()
        .filter(|r| split.train.contains(&r.speaker) || split.valid.contains(&r.speaker))
        .cloned()
        .collect();
    let bank = FeatureBank::build(&used, ctx)?;
    train_from_bank(&bank, &used, split, target, params)
}

pub fn clamp_ddm(v: f64) -> f64 {
    v.clamp(DDM_MIN, DDM_MAX)
}

/// One clamped prediction per model; sets whose side data is missing carry
/// their own error.
pub fn predict_ddm(
    models: &TrainedModels,
    record: &UtteranceRecord,
    ctx: &FeatureContext,
) -> BTreeMap<FeatureSetId, Result<f64>> {
    let mut ctx = ctx.clone();
    ctx.compare_top = Some(models.compare_top.clone());
    models
        .models
        .iter()
        .map(|(&set, m)| {
            (
                set,
                ctx.row(set, record)
                    .and_then(|x| m.predict(&x))
                    .map(clamp_ddm),
            )
        })
        .collect()
}

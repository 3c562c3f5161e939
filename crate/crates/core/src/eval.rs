//! Pearson-correlation reports per feature set and target, random
//! speaker-independent hold-out averaging, city-level DDM means and SHAP
//! summaries.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{make_random_holdouts, City, DdmScore, SplitSpec, UtteranceRecord};
use crate::error::{Error, Result};
use crate::gbt::{fit, mean_abs_shap_ranking, tree_shap, Attribution, GbtModel};
use crate::pipeline::{
    clamp_ddm, ids_of, targets, train_from_bank, FeatureBank, FeatureMatrix, FeatureSetId,
    PipelineParams, TargetKind, TrainedModels,
};

/// Sample Pearson correlation. Zero variance or fewer than two points is an
/// error rather than NaN.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least 2 points, got {n}"
        )));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// One (feature set, target) entry; `r` is `None` when undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub set: FeatureSetId,
    pub target: TargetKind,
    pub r: Option<f64>,
    pub n_test: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn cell(set: FeatureSetId, target: TargetKind, pred: &[f64], truth: &[f64]) -> EvalCell {
    let (r, note) = match pearson(pred, truth) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    EvalCell {
        set,
        target,
        r,
        n_test: truth.len(),
        note,
    }
}

/// Score `models` on test ids drawn from `bank`.
fn score_models(
    models: &TrainedModels,
    bank: &FeatureBank,
    test_ids: &[String],
    truth: &[f64],
) -> Result<Vec<EvalCell>> {
    let mut out = Vec::new();
    for (&set, model) in &models.models {
        let m = bank
            .matrix(set, Some(&models.compare_top))?
            .select_rows(test_ids)?;
        let pred: Vec<f64> = m
            .rows
            .iter()
            .map(|x| model.predict(x).map(clamp_ddm))
            .collect::<Result<_>>()?;
        out.push(cell(set, models.target, &pred, truth));
    }
    Ok(out)
}

/// Pearson r on the test partition for every model in `models`.
/// `bank` must contain the test records.
pub fn evaluate_split(
    models: &TrainedModels,
    bank: &FeatureBank,
    records: &[UtteranceRecord],
    split: &SplitSpec,
) -> Result<Vec<EvalCell>> {
    let test = split.select(&split.test, records);
    let truth = targets(&test, models.target)?;
    score_models(models, bank, &ids_of(&test), &truth)
}

/// Annotated records only.
pub fn scored(records: &[UtteranceRecord]) -> Vec<UtteranceRecord> {
    records
        .iter()
        .filter(|r| r.annotation.is_some())
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutIteration {
    pub index: usize,
    pub n_train_speakers: usize,
    pub n_test_speakers: usize,
    pub cells: Vec<EvalCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutSummary {
    pub set: FeatureSetId,
    pub target: TargetKind,
    pub mean_r: Option<f64>,
    pub n_defined: usize,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub splits: Vec<SplitSpec>,
    pub iterations: Vec<HoldoutIteration>,
    pub summary: Vec<HoldoutSummary>,
}

/// Train `sets` on the training side of a two-way split (no early stopping)
/// and score the test side. The ComParE model is fitted whenever ALL is
/// requested so its top features can be selected.
fn holdout_models(
    bank: &FeatureBank,
    records: &[UtteranceRecord],
    split: &SplitSpec,
    sets: &[FeatureSetId],
    target: TargetKind,
    params: &PipelineParams,
) -> Result<TrainedModels> {
    if sets.contains(&FeatureSetId::All) {
        let mut m = train_from_bank(bank, records, split, target, params)?;
        m.models.retain(|s, _| sets.contains(s));
        return Ok(m);
    }
    let train = split.select(&split.train, records);
    let ids = ids_of(&train);
    let y = targets(&train, target)?;
    let mut models = BTreeMap::new();
    for &s in sets {
        let m = bank.matrix(s, None)?.select_rows(&ids)?;
        models.insert(s, fit(&m.rows, &y, &params.gbt, m.names.clone())?);
    }
    Ok(TrainedModels {
        target,
        models,
        histories: BTreeMap::new(),
        compare_top: Vec::new(),
    })
}

/// Repeated speaker-independent train/test splits; per-(set, target) mean r
/// over iterations where r is defined.
#[allow(clippy::too_many_arguments)]
pub fn random_holdout_eval(
    records: &[UtteranceRecord],
    bank: &FeatureBank,
    sets: &[FeatureSetId],
    target_kinds: &[TargetKind],
    n_iter: usize,
    test_fraction: f64,
    seed: u64,
    params: &PipelineParams,
) -> Result<HoldoutReport> {
    let records = scored(records);
    let splits = make_random_holdouts(&records, n_iter, test_fraction, seed)?;
    let iterations: Vec<HoldoutIteration> = splits
        .par_iter()
        .enumerate()
        .map(|(index, split)| {
            let mut cells = Vec::new();
            for &t in target_kinds {
                let models = holdout_models(bank, &records, split, sets, t, params)?;
                cells.extend(evaluate_split(&models, bank, &records, split)?);
            }
            Ok(HoldoutIteration {
                index,
                n_train_speakers: split.train.len(),
                n_test_speakers: split.test.len(),
                cells,
            })
        })
        .collect::<Result<_>>()?;

    let mut summary = Vec::new();
    for &t in target_kinds {
        for s in FeatureSetId::EVERY.into_iter().filter(|s| sets.contains(s)) {
            let rs: Vec<Option<f64>> = iterations
                .iter()
                .flat_map(|it| {
                    it.cells
                        .iter()
                        .filter(|c| c.set == s && c.target == t)
                        .map(|c| c.r)
                })
                .collect();
            let defined: Vec<f64> = rs.iter().flatten().copied().collect();
            summary.push(HoldoutSummary {
                set: s,
                target: t,
                mean_r: (!defined.is_empty())
                    .then(|| defined.iter().sum::<f64>() / defined.len() as f64),
                n_defined: defined.len(),
                n_excluded: rs.len() - defined.len(),
            });
        }
    }
    Ok(HoldoutReport {
        splits,
        iterations,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityMean {
    pub score: DdmScore,
    pub n_utterances: usize,
}

/// Unweighted mean of per-utterance scores per city; cities without annotated
/// utterances are left out.
pub fn city_means(records: &[UtteranceRecord]) -> BTreeMap<City, CityMean> {
    let mut acc: BTreeMap<City, (f64, f64, f64, usize)> = BTreeMap::new();
    for r in records {
        if let Some(s) = r.ddm() {
            let e = acc.entry(r.city).or_default();
            e.0 += s.ddm_phon;
            e.1 += s.ddm_gram;
            e.2 += s.ddm;
            e.3 += 1;
        }
    }
    acc.into_iter()
        .map(|(c, (p, g, d, n))| {
            let n_f = n as f64;
            (
                c,
                CityMean {
                    score: DdmScore {
                        ddm_phon: p / n_f,
                        ddm_gram: g / n_f,
                        ddm: d / n_f,
                    },
                    n_utterances: n,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapSummaryRow {
    pub feature: String,
    pub index: usize,
    pub mean_abs_phi: f64,
    pub min_phi: f64,
    pub median_phi: f64,
    pub max_phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapSummary {
    pub rows: Vec<ShapSummaryRow>,
    pub attributions: Vec<Attribution>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Top `top_n` features by mean |phi| with per-utterance phi spread.
pub fn shap_summary(model: &GbtModel, x: &FeatureMatrix, top_n: usize) -> Result<ShapSummary> {
    let ranking = mean_abs_shap_ranking(model, &x.rows)?;
    let attributions: Vec<Attribution> = x
        .rows
        .par_iter()
        .map(|r| tree_shap(model, r))
        .collect::<Result<_>>()?;
    let rows = ranking
        .iter()
        .take(top_n)
        .map(|rf| {
            let mut phis: Vec<f64> = attributions.iter().map(|a| a.phi[rf.index]).collect();
            let (lo, hi) = phis
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                });
            ShapSummaryRow {
                feature: rf.name.clone(),
                index: rf.index,
                mean_abs_phi: rf.score,
                min_phi: lo,
                median_phi: median(&mut phis),
                max_phi: hi,
            }
        })
        .collect();
    Ok(ShapSummary { rows, attributions })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}

fn ser(e: csv::Error) -> Error {
    Error::Serde(e.to_string())
}

fn fmt_r(r: Option<f64>) -> String {
    r.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"))
}

/// `city,ddm_phon,ddm_gram,ddm,n_utterances`.
pub fn write_city_means_csv(path: &Path, means: &BTreeMap<City, CityMean>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["city", "ddm_phon", "ddm_gram", "ddm", "n_utterances"])
        .map_err(ser)?;
    for (c, m) in means {
        w.write_record([
            c.to_string(),
            format!("{:.6}", m.score.ddm_phon),
            format!("{:.6}", m.score.ddm_gram),
            format!("{:.6}", m.score.ddm),
            m.n_utterances.to_string(),
        ])
        .map_err(ser)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Feature sets as rows, targets as columns.
pub fn write_grid_csv(path: &Path, cells: &[EvalCell]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["feature_set".to_string()];
    header.extend(TargetKind::EVERY.iter().map(|t| t.to_string()));
    header.push("n_test".into());
    w.write_record(&header).map_err(ser)?;
    for s in FeatureSetId::EVERY {
        let row_cells: Vec<&EvalCell> = cells.iter().filter(|c| c.set == s).collect();
        if row_cells.is_empty() {
            continue;
        }
        let mut rec = vec![s.to_string()];
        for t in TargetKind::EVERY {
            rec.push(
                row_cells
                    .iter()
                    .find(|c| c.target == t)
                    .map_or(String::new(), |c| fmt_r(c.r)),
            );
        }
        rec.push(row_cells[0].n_test.to_string());
        w.write_record(&rec).map_err(ser)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean r per set and target, with the excluded-iteration counts.
pub fn write_holdout_summary_csv(path: &Path, summary: &[HoldoutSummary]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["feature_set".to_string()];
    for t in TargetKind::EVERY {
        header.push(t.to_string());
        header.push(format!("{t}_excluded"));
    }
    w.write_record(&header).map_err(ser)?;
    for s in FeatureSetId::EVERY {
        let row: Vec<&HoldoutSummary> = summary.iter().filter(|h| h.set == s).collect();
        if row.is_empty() {
            continue;
        }
        let mut rec = vec![s.to_string()];
        for t in TargetKind::EVERY {
            match row.iter().find(|h| h.target == t) {
                Some(h) => {
                    rec.push(fmt_r(h.mean_r));
                    rec.push(h.n_excluded.to_string());
                }
                None => rec.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&rec).map_err(ser)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One line per iteration, set and target.
pub fn write_holdout_log_csv(path: &Path, iterations: &[HoldoutIteration]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["iteration", "feature_set", "target", "r", "n_test"])
        .map_err(ser)?;
    for it in iterations {
        for c in &it.cells {
            w.write_record([
                it.index.to_string(),
                c.set.to_string(),
                c.target.to_string(),
                fmt_r(c.r),
                c.n_test.to_string(),
            ])
            .map_err(ser)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_ranking_csv(path: &Path, rows: &[ShapSummaryRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "rank",
        "feature",
        "mean_abs_phi",
        "min_phi",
        "median_phi",
        "max_phi",
    ])
    .map_err(ser)?;
    for (i, r) in rows.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            r.feature.clone(),
            r.mean_abs_phi.to_string(),
            r.min_phi.to_string(),
            r.median_phi.to_string(),
            r.max_phi.to_string(),
        ])
        .map_err(ser)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Plot data for the summarized features: `feature,utterance_id,phi,feature_value`.
pub fn write_shap_plot_csv(path: &Path, x: &FeatureMatrix, summary: &ShapSummary) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["feature", "utterance_id", "phi", "feature_value"])
        .map_err(ser)?;
    for row in &summary.rows {
        for ((id, a), xr) in x.ids.iter().zip(&summary.attributions).zip(&x.rows) {
            w.write_record([
                row.feature.clone(),
                id.clone(),
                a.phi[row.index].to_string(),
                xr[row.index].to_string(),
            ])
            .map_err(ser)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbt::{GbtParams, TreeNode};
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() <= 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() <= 1e-12);
        assert!(matches!(
            pearson(&[1.0; 5], &x[..5]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(
            pearson(&[1.0], &[2.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn pearson_symmetric_and_affine_invariant(
            pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40),
            a in 0.01f64..50.0, b in -50.0f64..50.0,
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            if let Ok(r) = pearson(&x, &y) {
                prop_assert!((r - pearson(&y, &x).unwrap()).abs() <= 1e-12);
                let xt: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                prop_assert!((r - pearson(&xt, &y).unwrap()).abs() <= 1e-9);
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }

    fn rec(city: City, n_ph: u32, n_ms: u32, n_words: u32) -> UtteranceRecord {
        UtteranceRecord {
            id: format!("{city}-{n_ph}-{n_ms}-{n_words}"),
            speaker: "s".into(),
            city,
            audio: "a.wav".into(),
            transcript: String::new(),
            posteriors: None,
            xvector_id: None,
            compare_id: None,
            pos_tags: None,
            annotation: Some(crate::corpus::DdmAnnotation::new(n_ph, n_ms, n_words).unwrap()),
            interrupted: false,
            word_count: n_words as usize,
            xvector: None,
            compare: None,
        }
    }

    #[test]
    fn city_means_examples() {
        assert!(city_means(&[]).is_empty());
        let recs = vec![
            rec(City::DCB, 1, 0, 10),
            rec(City::DCB, 3, 2, 10),
            rec(City::LES, 1, 1, 3),
        ];
        let m = city_means(&recs);
        assert!((m[&City::DCB].score.ddm_phon - 0.2).abs() < 1e-15);
        assert_eq!(m[&City::DCB].n_utterances, 2);
        assert!(!m.contains_key(&City::ROC));
        for v in m.values() {
            assert!((v.score.ddm - (v.score.ddm_phon + v.score.ddm_gram)).abs() < 1e-15);
        }
        let mut unscored = rec(City::ROC, 0, 0, 1);
        unscored.annotation = None;
        assert!(!city_means(&[unscored]).contains_key(&City::ROC));
    }

    #[test]
    fn shap_summary_of_stump() {
        let names: Vec<String> = (0..4).map(|i| format!("f{i}")).collect();
        let mut model = GbtModel::constant(0.0, names.clone(), GbtParams::default());
        model.trees.push(TreeNode::split(
            2,
            0.5,
            TreeNode::leaf(-1.0, 2.0),
            TreeNode::leaf(1.0, 2.0),
        ));
        let x = FeatureMatrix {
            set: FeatureSetId::Lm,
            ids: (0..4).map(|i| format!("u{i}")).collect(),
            names,
            provenance: vec![FeatureSetId::Lm; 4],
            rows: vec![
                vec![0.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.2, 0.0],
                vec![0.0, 0.0, 0.9, 0.0],
            ],
        };
        let s = shap_summary(&model, &x, 20).unwrap();
        assert_eq!(s.rows.len(), 4);
        assert_eq!(s.rows.iter().filter(|r| r.mean_abs_phi != 0.0).count(), 1);
        assert_eq!(s.rows[0].feature, "f2");
        assert_eq!((s.rows[0].min_phi, s.rows[0].max_phi), (-1.0, 1.0));
        let ranking = mean_abs_shap_ranking(&model, &x.rows).unwrap();
        let s2 = shap_summary(&model, &x, 2).unwrap();
        assert_eq!(
            s2.rows.iter().map(|r| r.index).collect::<Vec<_>>(),
            ranking[..2].iter().map(|r| r.index).collect::<Vec<_>>()
        );
        for (a, row) in s.attributions.iter().zip(&x.rows) {
            assert!((a.output() - model.predict(row).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_predictions_give_unit_r() {
        let truth = [0.1, 0.3, 0.2, 0.5];
        let c = cell(FeatureSetId::Lm, TargetKind::Ddm, &truth, &truth);
        assert!((c.r.unwrap() - 1.0).abs() < 1e-12);
        let single = cell(FeatureSetId::Lm, TargetKind::Ddm, &[0.1], &[0.2]);
        assert!(single.r.is_none() && single.note.is_some());
    }
}

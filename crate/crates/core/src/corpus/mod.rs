//! Utterance manifests, audio ingestion, dialect-density arithmetic, weak-label
//! pool selection and speaker-independent splitting.

mod split;
mod table;
mod wav;

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::asr_features::{normalize_transcript, Alphabet};
use crate::error::{Error, Result};

pub use split::{make_random_holdouts, make_speaker_split, SplitSpec};
pub use table::{ingest_feature_table, FeatureTable};
pub use wav::{read_wav, resample, write_wav_pcm16, AudioBuffer, TARGET_SAMPLE_RATE};

/// Expected x-vector width.
pub const XVECTOR_DIM: usize = 512;

/// Minimum word count for an utterance to enter the weak-label pool.
pub const WEAK_POOL_MIN_WORDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum City {
    DCB,
    ROC,
    PRV,
    LES,
    VLD,
}

impl City {
    /// Fixed output order of every city-probability vector.
    pub const ALL: [City; 5] = [City::DCB, City::ROC, City::PRV, City::LES, City::VLD];

    pub fn index(self) -> usize {
        match self {
            City::DCB => 0,
            City::ROC => 1,
            City::PRV => 2,
            City::LES => 3,
            City::VLD => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            City::DCB => "DCB",
            City::ROC => "ROC",
            City::PRV => "PRV",
            City::LES => "LES",
            City::VLD => "VLD",
        }
    }
}

impl fmt::Display for City {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for City {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        City::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::UnknownCity(s.to_string()))
    }
}

/// Hand-counted dialect tokens for one utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DdmAnnotation {
    pub n_ph: u32,
    pub n_ms: u32,
    pub n_words: u32,
}

impl DdmAnnotation {
    pub fn new(n_ph: u32, n_ms: u32, n_words: u32) -> Result<Self> {
        let a = DdmAnnotation {
            n_ph,
            n_ms,
            n_words,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_words == 0 {
            return Err(Error::Domain("n_words must be at least 1".into()));
        }
        if self.n_ph > self.n_words || self.n_ms > self.n_words {
            return Err(Error::Domain(format!(
                "token counts ({}, {}) exceed word count {}",
                self.n_ph, self.n_ms, self.n_words
            )));
        }
        Ok(())
    }
}

/// Phonological, morphosyntactic and total dialect density of an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdmScore {
    pub ddm_phon: f64,
    pub ddm_gram: f64,
    pub ddm: f64,
}

/// `ddm` is formed as `ddm_phon + ddm_gram` so the additivity holds bit for bit;
/// it differs from `(n_ph + n_ms) / n_words` by at most one rounding step.
pub fn compute_ddm(a: &DdmAnnotation) -> Result<DdmScore> {
    a.validate()?;
    let n = f64::from(a.n_words);
    let ddm_phon = f64::from(a.n_ph) / n;
    let ddm_gram = f64::from(a.n_ms) / n;
    Ok(DdmScore {
        ddm_phon,
        ddm_gram,
        ddm: ddm_phon + ddm_gram,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub speaker: String,
    pub city: City,
    pub audio: PathBuf,
    pub transcript: String,
    pub posteriors: Option<PathBuf>,
    pub xvector_id: Option<String>,
    pub compare_id: Option<String>,
    pub pos_tags: Option<Vec<String>>,
    pub annotation: Option<DdmAnnotation>,
    pub interrupted: bool,
    pub word_count: usize,
    /// Filled by [`attach_features`].
    pub xvector: Option<Vec<f64>>,
    /// Filled by [`attach_features`]; column names live on the source table.
    pub compare: Option<Vec<f64>>,
}

impl UtteranceRecord {
    pub fn ddm(&self) -> Option<DdmScore> {
        self.annotation.as_ref().and_then(|a| compute_ddm(a).ok())
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.transcript.split(' ').filter(|w| !w.is_empty())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLine {
    id: Option<String>,
    speaker: Option<String>,
    city: Option<String>,
    audio: Option<String>,
    transcript: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    posteriors: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    xvector_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    compare_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pos_tags: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_ph: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_ms: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_words: Option<u32>,
    #[serde(default)]
    interrupted: bool,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn relativize(base: &Path, p: &Path) -> String {
    p.strip_prefix(base)
        .unwrap_or(p)
        .to_string_lossy()
        .into_owned()
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<UtteranceRecord>> {
    load_manifest_with(path, &Alphabet::default())
}

/// Parse a line-delimited JSON manifest. Side files are resolved against the
/// manifest's directory but not opened.
pub fn load_manifest_with(
    path: impl AsRef<Path>,
    alphabet: &Alphabet,
) -> Result<Vec<UtteranceRecord>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: ManifestLine = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: lineno,
            message: e.to_string(),
        })?;
        let missing = |field: &str| Error::Manifest {
            line: lineno,
            message: format!("missing required field `{field}`"),
        };
        let id = raw.id.ok_or_else(|| missing("id"))?;
        let speaker = raw.speaker.ok_or_else(|| missing("speaker"))?;
        let city: City = raw.city.ok_or_else(|| missing("city"))?.parse()?;
        let audio = resolve(&base, &raw.audio.ok_or_else(|| missing("audio"))?);
        let transcript = normalize_transcript(
            &raw.transcript.ok_or_else(|| missing("transcript"))?,
            alphabet,
        );
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        let annotation = match (raw.n_ph, raw.n_ms, raw.n_words) {
            (None, None, None) => None,
            (Some(n_ph), Some(n_ms), Some(n_words)) => Some(
                DdmAnnotation::new(n_ph, n_ms, n_words).map_err(|e| Error::Manifest {
                    line: lineno,
                    message: e.to_string(),
                })?,
            ),
            _ => {
                return Err(Error::Manifest {
                    line: lineno,
                    message: "n_ph, n_ms and n_words must be given together".into(),
                })
            }
        };
        let word_count = transcript.split(' ').filter(|w| !w.is_empty()).count();
        records.push(UtteranceRecord {
            id,
            speaker,
            city,
            audio,
            transcript,
            posteriors: raw.posteriors.map(|p| resolve(&base, &p)),
            xvector_id: raw.xvector_id,
            compare_id: raw.compare_id,
            pos_tags: raw.pos_tags,
            annotation,
            interrupted: raw.interrupted,
            word_count,
            xvector: None,
            compare: None,
        });
    }
    Ok(records)
}

pub fn save_manifest(path: impl AsRef<Path>, records: &[UtteranceRecord]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = ManifestLine {
            id: Some(r.id.clone()),
            speaker: Some(r.speaker.clone()),
            city: Some(r.city.to_string()),
            audio: Some(relativize(base, &r.audio)),
            transcript: Some(r.transcript.clone()),
            posteriors: r.posteriors.as_deref().map(|p| relativize(base, p)),
            xvector_id: r.xvector_id.clone(),
            compare_id: r.compare_id.clone(),
            pos_tags: r.pos_tags.clone(),
            n_ph: r.annotation.map(|a| a.n_ph),
            n_ms: r.annotation.map(|a| a.n_ms),
            n_words: r.annotation.map(|a| a.n_words),
            interrupted: r.interrupted,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Join ingested x-vector and ComParE rows onto records by their side ids.
/// Records whose id is absent from a table keep `None`.
pub fn attach_features(
    records: &mut [UtteranceRecord],
    xvectors: Option<&FeatureTable>,
    compare: Option<&FeatureTable>,
) {
    for r in records.iter_mut() {
        if let (Some(t), Some(id)) = (xvectors, r.xvector_id.as_ref()) {
            r.xvector = t.rows.get(id).cloned();
        }
        if let (Some(t), Some(id)) = (compare, r.compare_id.as_ref()) {
            r.compare = t.rows.get(id).cloned();
        }
    }
}

/// Unscored, uninterrupted utterances with at least ten words.
pub fn filter_weak_label_pool(records: &[UtteranceRecord]) -> Vec<UtteranceRecord> {
    records
        .iter()
        .filter(|r| r.word_count >= WEAK_POOL_MIN_WORDS && !r.interrupted && r.annotation.is_none())
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn ddm_examples() {
        let s = compute_ddm(&DdmAnnotation::new(2, 1, 10).unwrap()).unwrap();
        assert_eq!((s.ddm_phon, s.ddm_gram), (0.2, 0.1));
        assert!((s.ddm - 0.3).abs() < 1e-15);
        let s = compute_ddm(&DdmAnnotation::new(0, 0, 12).unwrap()).unwrap();
        assert_eq!((s.ddm_phon, s.ddm_gram, s.ddm), (0.0, 0.0, 0.0));
        let s = compute_ddm(&DdmAnnotation::new(1, 1, 2).unwrap()).unwrap();
        assert_eq!((s.ddm_phon, s.ddm_gram, s.ddm), (0.5, 0.5, 1.0));
    }

    #[test]
    fn ddm_rejects_zero_words() {
        let bad = DdmAnnotation {
            n_ph: 0,
            n_ms: 0,
            n_words: 0,
        };
        assert!(matches!(compute_ddm(&bad), Err(Error::Domain(_))));
        assert!(DdmAnnotation::new(3, 0, 2).is_err());
    }

    #[test]
    fn manifest_parses_two_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "m.jsonl",
            r#"{"id":"u1","speaker":"s1","city":"DCB","audio":"a/u1.wav","transcript":"he  is running","n_ph":1,"n_ms":0,"n_words":3}
{"id":"u2","speaker":"s2","city":"PRV","audio":"/abs/u2.wav","transcript":"ok","posteriors":"p/u2.bin","interrupted":true,"pos_tags":["INTJ"]}
"#,
        );
        let recs = load_manifest(&p).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].transcript, "HE IS RUNNING");
        assert_eq!(recs[0].word_count, 3);
        assert_eq!(recs[0].audio, dir.path().join("a/u1.wav"));
        assert_eq!(
            recs[0].annotation,
            Some(DdmAnnotation::new(1, 0, 3).unwrap())
        );
        assert_eq!(recs[1].city, City::PRV);
        assert_eq!(recs[1].audio, PathBuf::from("/abs/u2.wav"));
        assert_eq!(recs[1].posteriors, Some(dir.path().join("p/u2.bin")));
        assert!(recs[1].interrupted);
        assert!(recs[1].annotation.is_none());
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let line = |id: &str, city: &str| {
            format!(
                r#"{{"id":"{id}","speaker":"s","city":"{city}","audio":"x.wav","transcript":"a"}}"#
            )
        };
        let p = write(
            dir.path(),
            "dup.jsonl",
            &format!("{}\n{}\n", line("u1", "DCB"), line("u1", "ROC")),
        );
        match load_manifest(&p) {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "u1"),
            other => panic!("{other:?}"),
        }
        let p = write(dir.path(), "city.jsonl", &line("u1", "ATL"));
        let err = load_manifest(&p).unwrap_err();
        assert!(err.to_string().contains("unknown city"), "{err}");
        let p = write(
            dir.path(),
            "miss.jsonl",
            &format!(
                "{}\n{}\n",
                line("u1", "DCB"),
                r#"{"id":"u2","city":"DCB","audio":"x","transcript":"a"}"#
            ),
        );
        match load_manifest(&p) {
            Err(Error::Manifest { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("speaker"));
            }
            other => panic!("{other:?}"),
        }
    }

    fn rec(id: &str, words: usize, interrupted: bool, scored: bool) -> UtteranceRecord {
        let transcript = vec!["WORD"; words].join(" ");
        UtteranceRecord {
            id: id.into(),
            speaker: "s".into(),
            city: City::DCB,
            audio: PathBuf::from("x.wav"),
            transcript,
            posteriors: None,
            xvector_id: None,
            compare_id: None,
            pos_tags: None,
            annotation: scored.then(|| DdmAnnotation::new(0, 0, words.max(1) as u32).unwrap()),
            interrupted,
            word_count: words,
            xvector: None,
            compare: None,
        }
    }

    #[test]
    fn weak_pool_criteria() {
        let pool = filter_weak_label_pool(&[
            rec("short", 9, false, false),
            rec("ok", 15, false, false),
            rec("scored", 15, false, true),
            rec("interrupted", 15, true, false),
            rec("edge", 10, false, false),
        ]);
        let ids: Vec<_> = pool.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["ok", "edge"]);
    }
}

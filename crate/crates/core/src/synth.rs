//! Deterministic synthetic corpus: scored utterances whose dialect density
//! is a noisy function of planted tokens, per-city prosody and embeddings,
//! plus a weak-label pool and a reference-dialect text corpus.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::asr_features::{Alphabet, PosteriorMatrix, DEFAULT_FRAME_STRIDE_S};
use crate::commands::{EvalConfig, PathsConfig, RunConfig};
use crate::corpus::{
    save_manifest, write_wav_pcm16, City, DdmAnnotation, UtteranceRecord, XVECTOR_DIM,
};
use crate::error::{Error, Result};
use crate::pipeline::{FeatureSetId, PipelineParams};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub speakers_per_city: usize,
    pub scored_per_speaker: usize,
    /// Unscored utterances of at least ten words per speaker.
    pub pool_per_speaker: usize,
    pub compare_dim: usize,
    pub informative_compare: usize,
    pub lm_sentences: usize,
    pub utterance_s: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            speakers_per_city: 4,
            scored_per_speaker: 11,
            pool_per_speaker: 6,
            compare_dim: 6373,
            informative_compare: 8,
            lm_sentences: 1500,
            utterance_s: 1.2,
        }
    }
}

impl SynthConfig {
    /// Tiny corpus for unit tests.
    pub fn small(seed: u64) -> Self {
        SynthConfig {
            seed,
            speakers_per_city: 1,
            scored_per_speaker: 5,
            pool_per_speaker: 4,
            compare_dim: 24,
            informative_compare: 3,
            lm_sentences: 200,
            utterance_s: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSummary {
    pub n_utterances: usize,
    pub n_scored: usize,
    pub n_speakers: usize,
    pub manifest: PathBuf,
    pub config: PathBuf,
}

struct Word {
    text: &'static str,
    tag: &'static str,
}

const fn w(text: &'static str, tag: &'static str) -> Word {
    Word { text, tag }
}

const SUBJECTS: &[&[Word]] = &[
    &[w("I", "PRON")],
    &[w("WE", "PRON")],
    &[w("THEY", "PRON")],
    &[w("HE", "PRON")],
    &[w("SHE", "PRON")],
    &[w("MY", "DET"), w("BROTHER", "NOUN")],
    &[w("MY", "DET"), w("MOTHER", "NOUN")],
    &[w("THE", "DET"), w("KIDS", "NOUN")],
    &[w("THAT", "DET"), w("TEACHER", "NOUN")],
    &[w("THEM", "PRON")],
];

const VERBS: &[&[Word]] = &[
    &[w("WENT", "VERB")],
    &[w("WORKED", "VERB")],
    &[w("PLAYED", "VERB")],
    &[w("LIVED", "VERB")],
    &[w("TALKED", "VERB")],
    &[w("CALLED", "VERB")],
    &[w("MOVED", "VERB")],
    &[w("WALKED", "VERB")],
    &[w("STARTED", "VERB")],
    &[w("WAS", "AUX"), w("GOING", "VERB")],
    &[w("WAS", "AUX"), w("TALKING", "VERB")],
    &[w("WAS", "AUX"), w("DOING", "VERB")],
    &[w("SAID", "VERB"), w("NOTHING", "PRON")],
    &[w("KNEW", "VERB"), w("SOMETHING", "PRON")],
];

const PREPS: &[Word] = &[
    w("TO", "ADP"),
    w("WITH", "ADP"),
    w("AT", "ADP"),
    w("IN", "ADP"),
    w("FOR", "ADP"),
    w("ON", "ADP"),
];
const DETS: &[Word] = &[
    w("THE", "DET"),
    w("THIS", "DET"),
    w("THAT", "DET"),
    w("MY", "DET"),
    w("OUR", "DET"),
];
const NOUNS: &[Word] = &[
    w("HOUSE", "NOUN"),
    w("STREET", "NOUN"),
    w("SCHOOL", "NOUN"),
    w("CAR", "NOUN"),
    w("FAMILY", "NOUN"),
    w("CHURCH", "NOUN"),
    w("STORE", "NOUN"),
    w("FRIEND", "NOUN"),
    w("PARK", "NOUN"),
    w("TEAM", "NOUN"),
    w("SUMMER", "NOUN"),
    w("NEIGHBORHOOD", "NOUN"),
    w("CORNER", "NOUN"),
    w("GAME", "NOUN"),
];
const TAILS: &[Word] = &[
    w("THERE", "ADV"),
    w("TODAY", "ADV"),
    w("AGAIN", "ADV"),
    w("LATER", "ADV"),
];

/// Phonological variants of reference words.
const PHON: &[(&str, &str)] = &[
    ("THE", "DA"),
    ("THIS", "DIS"),
    ("THAT", "DAT"),
    ("THEM", "DEM"),
    ("THEY", "DEY"),
    ("THERE", "DERE"),
    ("WITH", "WIF"),
    ("NOTHING", "NUTTIN'"),
    ("SOMETHING", "SOMETHIN'"),
    ("GOING", "GOIN'"),
    ("TALKING", "TALKIN'"),
    ("DOING", "DOIN'"),
    ("BROTHER", "BRUVA"),
    ("MOTHER", "MUVA"),
];

/// Morphosyntactic markers inserted before the verb, all verb-tagged.
const MORPHO: &[&str] = &["FINNA", "GON", "BE", "DONE", "AIN'T"];

const CITY_BASE: [f64; 5] = [0.75, 0.45, 0.6, 0.35, 0.5];
const CITY_F0: [f64; 5] = [110.0, 140.0, 170.0, 200.0, 230.0];
const CITY_SLOPE: [f64; 5] = [-0.35, -0.15, 0.0, 0.15, 0.35];
const CITY_VIBRATO_HZ: [f64; 5] = [2.5, 3.5, 4.5, 5.5, 6.5];

struct Utterance {
    words: Vec<String>,
    tags: Vec<String>,
    n_ph: u32,
    n_ms: u32,
}

/// One clause: subject, optional marker, verb phrase, optional PP and tail.
fn clause(rng: &mut ChaCha8Rng, level: f64, dialect: bool, u: &mut Utterance) {
    let push = |rng: &mut ChaCha8Rng, word: &Word, u: &mut Utterance| {
        let variant = PHON
            .iter()
            .find(|(std, _)| *std == word.text)
            .map(|(_, v)| *v);
        match variant {
            Some(v) if dialect && rng.gen_bool((0.85 * level).clamp(0.0, 1.0)) => {
                u.words.push(v.to_string());
                u.n_ph += 1;
            }
            _ => u.words.push(word.text.to_string()),
        }
        u.tags.push(word.tag.to_string());
    };
    for wd in *SUBJECTS.choose(rng).unwrap() {
        push(rng, wd, u);
    }
    if dialect && rng.gen_bool((0.7 * level).clamp(0.0, 1.0)) {
        u.words.push(MORPHO.choose(rng).unwrap().to_string());
        u.tags.push("AUX".into());
        u.n_ms += 1;
    }
    for wd in *VERBS.choose(rng).unwrap() {
        push(rng, wd, u);
    }
    if rng.gen_bool(0.8) {
        {
            let wd = PREPS.choose(rng).unwrap();
            push(rng, wd, u);
        }
        {
            let wd = DETS.choose(rng).unwrap();
            push(rng, wd, u);
        }
        {
            let wd = NOUNS.choose(rng).unwrap();
            push(rng, wd, u);
        }
    }
    if rng.gen_bool(0.3) {
        {
            let wd = TAILS.choose(rng).unwrap();
            push(rng, wd, u);
        }
    }
}

fn utterance(rng: &mut ChaCha8Rng, min_words: usize, level: f64, dialect: bool) -> Utterance {
    let mut u = Utterance {
        words: Vec::new(),
        tags: Vec::new(),
        n_ph: 0,
        n_ms: 0,
    };
    clause(rng, level, dialect, &mut u);
    while u.words.len() < min_words {
        u.words.push("AND".into());
        u.tags.push("CCONJ".into());
        clause(rng, level, dialect, &mut u);
    }
    u
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'A' | 'E' | 'I' | 'O' | 'U')
}

/// Frame scores with the transcript's characters as per-frame maxima; vowels
/// are held longer at higher dialect levels.
fn posteriors(
    rng: &mut ChaCha8Rng,
    text: &str,
    level: f64,
    alphabet: &Alphabet,
) -> Result<PosteriorMatrix> {
    let n_sym = alphabet.len();
    let sil = alphabet.sil();
    let mut frames: Vec<usize> = vec![sil; 4];
    let mut prev = None;
    for c in text.chars() {
        let Some(s) = alphabet.char_index(c).or(alphabet.unk()) else {
            continue;
        };
        if prev == Some(s) {
            frames.push(sil);
        }
        let mut n = 2 + rng.gen_range(0..2);
        if is_vowel(c) {
            n += (3.0 * level).round() as usize + rng.gen_range(0..2);
        }
        frames.extend(std::iter::repeat_n(s, n));
        prev = Some(s);
    }
    frames.extend([sil; 4]);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut values = Vec::with_capacity(frames.len() * n_sym);
    for &f in &frames {
        for k in 0..n_sym {
            let base = if k == f { 5.0 } else { 0.0 };
            values.push((base + noise.sample(rng)) as f32);
        }
    }
    PosteriorMatrix::new(frames.len(), n_sym, values, DEFAULT_FRAME_STRIDE_S)
}

/// Voiced harmonic tone with a city-specific F0 slope and vibrato rate.
fn audio(rng: &mut ChaCha8Rng, city: usize, speaker_shift: f64, secs: f64, rate: u32) -> Vec<f64> {
    let n = (secs * f64::from(rate)) as usize;
    let base = CITY_F0[city] * (1.0 + speaker_shift);
    let syll = rng.gen_range(3.0..5.0);
    let noise = Normal::new(0.0, 0.003).unwrap();
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / f64::from(rate);
        let f0 = base
            * (1.0 + CITY_SLOPE[city] * (t - secs / 2.0))
            * (1.0 + 0.04 * (2.0 * std::f64::consts::PI * CITY_VIBRATO_HZ[city] * t).sin());
        phase += 2.0 * std::f64::consts::PI * f0 / f64::from(rate);
        let env = 0.5 + 0.4 * (std::f64::consts::PI * syll * t).sin().powi(2);
        let v = 0.5 * phase.sin() + 0.25 * (2.0 * phase).sin() + 0.12 * (3.0 * phase).sin();
        out.push(0.8 * env * v + noise.sample(rng));
    }
    out
}

fn table_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

/// Write the corpus, side files and a ready-to-run `config.toml` into `dir`.
pub fn generate_fixture(dir: &Path, cfg: &SynthConfig) -> Result<FixtureSummary> {
    if cfg.speakers_per_city == 0 || cfg.scored_per_speaker == 0 {
        return Err(Error::InvalidArgument(
            "fixture needs speakers and utterances".into(),
        ));
    }
    if cfg.informative_compare > cfg.compare_dim {
        return Err(Error::InvalidArgument(
            "more informative ComParE columns than columns".into(),
        ));
    }
    for sub in ["audio", "posteriors"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let alphabet = Alphabet::default();
    let mut text_rng = seed::rng(cfg.seed, "synth/text");
    let mut level_rng = seed::rng(cfg.seed, "synth/levels");
    let mut signal_rng = seed::rng(cfg.seed, "synth/signal");
    let mut embed_rng = seed::rng(cfg.seed, "synth/embeddings");
    let std_normal = Normal::new(0.0, 1.0).unwrap();

    let city_means: Vec<Vec<f64>> = (0..5)
        .map(|_| {
            (0..XVECTOR_DIM)
                .map(|_| std_normal.sample(&mut embed_rng))
                .collect()
        })
        .collect();
    let mut informative: Vec<usize> = (0..cfg.compare_dim).collect();
    informative.shuffle(&mut embed_rng);
    informative.truncate(cfg.informative_compare);

    let mut records = Vec::new();
    let mut xvec_rows: Vec<(String, Vec<f64>)> = Vec::new();
    let mut compare_rows: Vec<(String, Vec<f64>)> = Vec::new();
    let mut n_speakers = 0;

    for (ci, city) in City::ALL.into_iter().enumerate() {
        for sp in 0..cfg.speakers_per_city {
            n_speakers += 1;
            let speaker = format!("{city}_s{sp:02}");
            let speaker_level =
                (CITY_BASE[ci] + 0.2 * std_normal.sample(&mut level_rng)).clamp(0.05, 1.0);
            let speaker_shift = 0.06 * std_normal.sample(&mut level_rng);
            let speaker_offset: Vec<f64> = (0..XVECTOR_DIM)
                .map(|_| 0.4 * std_normal.sample(&mut embed_rng))
                .collect();
            let n_pool = cfg.pool_per_speaker + 2;
            for u in 0..cfg.scored_per_speaker + n_pool {
                let scored = u < cfg.scored_per_speaker;
                let pool_k = u.saturating_sub(cfg.scored_per_speaker);
                let id = format!("{speaker}_u{u:02}");
                let level =
                    (speaker_level + 0.15 * std_normal.sample(&mut level_rng)).clamp(0.0, 1.0);
                // The last two pool slots are too short or interrupted.
                let short = !scored && pool_k == n_pool - 2;
                let interrupted = !scored && pool_k == n_pool - 1;
                let min_words = if short {
                    6
                } else {
                    text_rng.gen_range(10..=20)
                };
                let mut utt = utterance(&mut text_rng, min_words, level, true);
                if short {
                    utt.words.truncate(6);
                    utt.tags.truncate(6);
                }
                let transcript = utt.words.join(" ");

                let post_path = dir.join("posteriors").join(format!("{id}.post"));
                posteriors(&mut signal_rng, &transcript, level, &alphabet)?
                    .write_binary(&post_path)?;
                let rate = if u % 5 == 4 { 44_100 } else { 16_000 };
                let wav_path = dir.join("audio").join(format!("{id}.wav"));
                write_wav_pcm16(
                    &wav_path,
                    &audio(&mut signal_rng, ci, speaker_shift, cfg.utterance_s, rate),
                    rate,
                )?;

                let xv: Vec<f64> = (0..XVECTOR_DIM)
                    .map(|k| {
                        city_means[ci][k]
                            + speaker_offset[k]
                            + 0.7 * std_normal.sample(&mut embed_rng)
                    })
                    .collect();
                xvec_rows.push((id.clone(), xv));

                let annotation = if scored {
                    let n_words = utt.words.len() as u32;
                    let mut n_ph = utt.n_ph as i64;
                    if level_rng.gen_bool(0.1) {
                        n_ph += if level_rng.gen_bool(0.5) { 1 } else { -1 };
                    }
                    let n_ph = n_ph.clamp(0, i64::from(n_words)) as u32;
                    let n_ms = utt.n_ms.min(n_words);
                    let mut row: Vec<f64> = (0..cfg.compare_dim)
                        .map(|_| std_normal.sample(&mut embed_rng))
                        .collect();
                    let ddm = f64::from(n_ph + n_ms) / f64::from(n_words);
                    for (j, &col) in informative.iter().enumerate() {
                        row[col] = (2.0 + j as f64 * 0.1) * ddm + 0.05 * row[col];
                    }
                    compare_rows.push((id.clone(), row));
                    Some(DdmAnnotation::new(n_ph, n_ms, n_words)?)
                } else {
                    None
                };
                records.push(UtteranceRecord {
                    id: id.clone(),
                    speaker: speaker.clone(),
                    city,
                    audio: wav_path,
                    transcript: transcript.clone(),
                    posteriors: Some(post_path),
                    xvector_id: Some(id.clone()),
                    compare_id: scored.then(|| id.clone()),
                    pos_tags: Some(utt.tags),
                    annotation,
                    interrupted,
                    word_count: utt.words.len(),
                    xvector: None,
                    compare: None,
                });
            }
        }
    }

    let manifest = dir.join("manifest.jsonl");
    save_manifest(&manifest, &records)?;

    let xv_path = dir.join("xvectors.csv");
    let mut wr = table_writer(&xv_path)?;
    let io = |e| Error::io(&xv_path, e);
    write!(wr, "id").map_err(io)?;
    for k in 0..XVECTOR_DIM {
        write!(wr, ",x{k:03}").map_err(io)?;
    }
    writeln!(wr).map_err(io)?;
    for (id, row) in &xvec_rows {
        write!(wr, "{id}").map_err(io)?;
        for v in row {
            write!(wr, ",{v:.5}").map_err(io)?;
        }
        writeln!(wr).map_err(io)?;
    }
    wr.flush().map_err(io)?;

    let cmp_path = dir.join("compare.csv");
    let mut wr = table_writer(&cmp_path)?;
    let io = |e| Error::io(&cmp_path, e);
    write!(wr, "id").map_err(io)?;
    for k in 0..cfg.compare_dim {
        write!(wr, ",cmp_{k:04}").map_err(io)?;
    }
    writeln!(wr).map_err(io)?;
    for (id, row) in &compare_rows {
        write!(wr, "{id}").map_err(io)?;
        for v in row {
            write!(wr, ",{v:.4}").map_err(io)?;
        }
        writeln!(wr).map_err(io)?;
    }
    wr.flush().map_err(io)?;

    let corpus_path = dir.join("gae_corpus.txt");
    let mut wr = table_writer(&corpus_path)?;
    let mut lm_rng = seed::rng(cfg.seed, "synth/lm-corpus");
    for _ in 0..cfg.lm_sentences {
        let min_words = lm_rng.gen_range(4..=16);
        let u = utterance(&mut lm_rng, min_words, 0.0, false);
        writeln!(wr, "{}", u.words.join(" ").to_lowercase())
            .map_err(|e| Error::io(&corpus_path, e))?;
    }
    wr.flush().map_err(|e| Error::io(&corpus_path, e))?;

    let run = RunConfig {
        seed: cfg.seed,
        paths: PathsConfig {
            manifest: "manifest.jsonl".into(),
            lm_corpus: Some("gae_corpus.txt".into()),
            xvectors: Some("xvectors.csv".into()),
            compare: Some("compare.csv".into()),
            out_dir: "out".into(),
        },
        alphabet: None,
        lm: Default::default(),
        fc: Default::default(),
        cnn: Default::default(),
        prosody: Default::default(),
        features: Default::default(),
        model: PipelineParams::default(),
        eval: EvalConfig {
            holdout_sets: vec![
                FeatureSetId::CharDur,
                FeatureSetId::Lm,
                FeatureSetId::XvectorProj,
                FeatureSetId::ProsodyProj,
            ],
            ..Default::default()
        },
    };
    let config = dir.join("config.toml");
    std::fs::write(&config, run.to_toml()?).map_err(|e| Error::io(&config, e))?;

    let n_scored = records.iter().filter(|r| r.annotation.is_some()).count();
    Ok(FixtureSummary {
        n_utterances: records.len(),
        n_scored,
        n_speakers,
        manifest,
        config,
    })
}

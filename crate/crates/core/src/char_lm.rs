//! Character n-gram language model with add-k smoothing, a count-threshold word
//! vocabulary, verb tagging and the five transcript-surprisal features.
//!
//! All surprisals are in nats. Inter-word spaces are scored when computing
//! `char_ppl` but are not attributed to any word.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::asr_features::Alphabet;
use crate::error::{Error, Result};

pub const LM_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_ORDER: usize = 6;
pub const DEFAULT_K: f64 = 0.01;
pub const DEFAULT_MIN_COUNT: u32 = 2;

pub const LM_FEATURE_NAMES: [&str; 5] = [
    "char_ppl",
    "avg_word_surprisal",
    "avg_verb_surprisal",
    "verb_surprisal_ratio",
    "verb_oov_rate",
];

/// A next-character distribution over an alphabet.
///
/// `history` holds the symbol indices of everything already emitted in the
/// utterance, oldest first; models pad the start as they see fit.
pub trait CharModel: Sync {
    fn alphabet(&self) -> &Alphabet;
    fn log_prob(&self, history: &[usize], next: usize) -> f64;
}

/// Assigns `1/|A|` to every symbol.
#[derive(Debug, Clone)]
pub struct UniformLm {
    pub alphabet: Alphabet,
}

impl CharModel for UniformLm {
    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn log_prob(&self, _history: &[usize], _next: usize) -> f64 {
        -(self.alphabet.len() as f64).ln()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<usize, u64>,
}

/// Order-`n` character model. The history is left-padded with `sil`, so
/// `p(c | ctx) = (count(ctx, c) + k) / (count(ctx) + k |A|)` over the last
/// `n - 1` symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct CharLm {
    order: usize,
    k: f64,
    alphabet: Alphabet,
    counts: HashMap<Vec<usize>, ContextCounts>,
}

impl CharLm {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    fn context(&self, history: &[usize]) -> Vec<usize> {
        let need = self.order - 1;
        let have = history.len().min(need);
        let mut ctx = vec![self.alphabet.sil(); need - have];
        ctx.extend_from_slice(&history[history.len() - have..]);
        ctx
    }

    pub fn prob(&self, history: &[usize], next: usize) -> f64 {
        let a = self.alphabet.len() as f64;
        let (c, total) = match self.counts.get(&self.context(history)) {
            Some(cc) => (cc.next.get(&next).copied().unwrap_or(0), cc.total),
            None => (0, 0),
        };
        (c as f64 + self.k) / (total as f64 + self.k * a)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let name = |i: &usize| self.alphabet.symbols()[*i].clone();
        let mut counts = BTreeMap::new();
        for (ctx, cc) in &self.counts {
            let key = ctx.iter().map(name).collect::<Vec<_>>().join("|");
            let inner: BTreeMap<String, u64> = cc.next.iter().map(|(s, n)| (name(s), *n)).collect();
            counts.insert(key, inner);
        }
        let file = CharLmFile {
            version: LM_FORMAT_VERSION,
            order: self.order,
            k: self.k,
            log_base: "e".into(),
            alphabet: self.alphabet.clone(),
            counts,
        };
        write_json(path, &file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file: CharLmFile = read_json(path)?;
        if file.version != LM_FORMAT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported LM version {}",
                file.version
            )));
        }
        let alphabet = file.alphabet;
        let lookup = |s: &str| {
            alphabet
                .index_of(s)
                .ok_or_else(|| Error::Serde(format!("LM symbol {s:?} not in alphabet")))
        };
        let mut counts = HashMap::new();
        for (key, inner) in file.counts {
            let ctx = if file.order == 1 {
                Vec::new()
            } else {
                key.split('|').map(lookup).collect::<Result<Vec<_>>>()?
            };
            if ctx.len() != file.order - 1 {
                return Err(Error::Serde(format!("context {key:?} has wrong length")));
            }
            let mut cc = ContextCounts::default();
            for (s, n) in inner {
                cc.next.insert(lookup(&s)?, n);
                cc.total += n;
            }
            counts.insert(ctx, cc);
        }
        Ok(CharLm {
            order: file.order,
            k: file.k,
            alphabet,
            counts,
        })
    }
}

impl CharModel for CharLm {
    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn log_prob(&self, history: &[usize], next: usize) -> f64 {
        self.prob(history, next).ln()
    }
}

#[derive(Serialize, Deserialize)]
struct CharLmFile {
    version: u32,
    order: usize,
    k: f64,
    log_base: String,
    alphabet: Alphabet,
    counts: BTreeMap<String, BTreeMap<String, u64>>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Count character n-grams over normalized sentences.
pub fn train_char_lm<S: AsRef<str>>(
    corpus: &[S],
    order: usize,
    k: f64,
    alphabet: &Alphabet,
) -> Result<CharLm> {
    if order == 0 {
        return Err(Error::InvalidArgument("LM order must be at least 1".into()));
    }
    if k.is_nan() || k <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "smoothing k = {k} must be positive"
        )));
    }
    let mut lm = CharLm {
        order,
        k,
        alphabet: alphabet.clone(),
        counts: HashMap::new(),
    };
    let mut seen = 0usize;
    for sentence in corpus {
        let seq = alphabet.encode(sentence.as_ref());
        for j in 0..seq.len() {
            let ctx = lm.context(&seq[..j]);
            let cc = lm.counts.entry(ctx).or_default();
            *cc.next.entry(seq[j]).or_insert(0) += 1;
            cc.total += 1;
            seen += 1;
        }
    }
    if seen == 0 {
        return Err(Error::InvalidArgument("LM training corpus is empty".into()));
    }
    Ok(lm)
}

/// `-ln p(c_j | c_<j)` for each character of `text`, with no prior context.
pub fn char_losses<M: CharModel + ?Sized>(lm: &M, text: &str) -> Vec<f64> {
    let seq = lm.alphabet().encode(text);
    (0..seq.len())
        .map(|j| -lm.log_prob(&seq[..j], seq[j]))
        .collect()
}

/// Surprisal of `word` given everything before it in the utterance, as the sum
/// of its character surprisals.
pub fn word_surprisal<M: CharModel + ?Sized>(lm: &M, word: &str, left_context: &str) -> f64 {
    let alphabet = lm.alphabet();
    let mut history = alphabet.encode(left_context);
    let mut total = 0.0;
    for c in alphabet.encode(word) {
        total -= lm.log_prob(&history, c);
        history.push(c);
    }
    total
}

/// Perplexity of the whole utterance, spaces included.
pub fn utterance_char_ppl<M: CharModel + ?Sized>(lm: &M, text: &str) -> Result<f64> {
    let losses = char_losses(lm, text);
    if losses.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot score an empty utterance".into(),
        ));
    }
    Ok((losses.iter().sum::<f64>() / losses.len() as f64).exp())
}

/// Words seen at least `min_count` times in the reference corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordVocab {
    pub version: u32,
    pub min_count: u32,
    pub words: BTreeSet<String>,
}

impl WordVocab {
    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
}

pub fn train_vocab<S: AsRef<str>>(corpus: &[S], min_count: u32) -> Result<WordVocab> {
    if min_count == 0 {
        return Err(Error::InvalidArgument(
            "min_count must be at least 1".into(),
        ));
    }
    let mut counts: HashMap<&str, u32> = HashMap::new();
    for s in corpus {
        for w in s.as_ref().split(' ').filter(|w| !w.is_empty()) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    let words: BTreeSet<String> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .map(|(w, _)| w.to_string())
        .collect();
    if words.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no word occurs at least {min_count} times"
        )));
    }
    Ok(WordVocab {
        version: LM_FORMAT_VERSION,
        min_count,
        words,
    })
}

const AUXILIARIES: &[&str] = &[
    "AM",
    "IS",
    "ARE",
    "WAS",
    "WERE",
    "BE",
    "BEEN",
    "BEING",
    "DO",
    "DOES",
    "DID",
    "HAVE",
    "HAS",
    "HAD",
    "WILL",
    "WOULD",
    "CAN",
    "COULD",
    "SHALL",
    "SHOULD",
    "MAY",
    "MIGHT",
    "MUST",
    "AIN'T",
    "ISN'T",
    "AREN'T",
    "WASN'T",
    "WEREN'T",
    "DON'T",
    "DOESN'T",
    "DIDN'T",
    "HAVEN'T",
    "HASN'T",
    "HADN'T",
    "WON'T",
    "WOULDN'T",
    "CAN'T",
    "COULDN'T",
    "SHOULDN'T",
    "I'M",
    "YOU'RE",
    "WE'RE",
    "THEY'RE",
    "HE'S",
    "SHE'S",
    "IT'S",
    "THAT'S",
];

const VERB_STEMS: &[&str] = &[
    "ASK",
    "BECOME",
    "BEGIN",
    "BELIEVE",
    "BRING",
    "BUILD",
    "BUY",
    "CALL",
    "CARRY",
    "CATCH",
    "CHANGE",
    "COME",
    "COOK",
    "COUNT",
    "CRY",
    "CUT",
    "DANCE",
    "DECIDE",
    "DIE",
    "DRINK",
    "DRIVE",
    "EAT",
    "END",
    "EXPECT",
    "FALL",
    "FEEL",
    "FIGHT",
    "FIND",
    "FINISH",
    "FOLLOW",
    "FORGET",
    "GET",
    "GIVE",
    "GO",
    "GROW",
    "HAPPEN",
    "HEAR",
    "HELP",
    "HIT",
    "HOLD",
    "HOPE",
    "HURT",
    "KEEP",
    "KILL",
    "KNOW",
    "LAUGH",
    "LEARN",
    "LEAVE",
    "LET",
    "LIKE",
    "LISTEN",
    "LIVE",
    "LOOK",
    "LOSE",
    "LOVE",
    "MAKE",
    "MARRY",
    "MEAN",
    "MEET",
    "MISS",
    "MOVE",
    "NEED",
    "OPEN",
    "PAY",
    "PICK",
    "PLAY",
    "PULL",
    "PUSH",
    "PUT",
    "RAISE",
    "REACH",
    "READ",
    "REMEMBER",
    "RUN",
    "SAY",
    "SEE",
    "SEEM",
    "SELL",
    "SEND",
    "SET",
    "SHOW",
    "SING",
    "SIT",
    "SLEEP",
    "SPEAK",
    "SPEND",
    "STAND",
    "START",
    "STAY",
    "STOP",
    "STUDY",
    "TAKE",
    "TALK",
    "TEACH",
    "TELL",
    "THINK",
    "TRY",
    "TURN",
    "UNDERSTAND",
    "USE",
    "VISIT",
    "WAIT",
    "WALK",
    "WANT",
    "WATCH",
    "WEAR",
    "WIN",
    "WISH",
    "WONDER",
    "WORK",
    "WORRY",
    "WRITE",
    "SWIM",
    "JUMP",
    "CLEAN",
    "DRESS",
    "FIX",
    "SHOP",
    "VOTE",
    "PRAY",
    "GRAB",
    "DROP",
    "BEAT",
    "SHUT",
    "HANG",
    "SAVE",
    "FILL",
];

fn is_known_stem(w: &str) -> bool {
    VERB_STEMS.contains(&w)
}

/// Lexicon fallback: auxiliaries and copulas, known verb stems, and
/// `-ED`/`-ING`/`-S` inflections of known stems.
pub fn is_fallback_verb(word: &str) -> bool {
    if AUXILIARIES.contains(&word) || is_known_stem(word) {
        return true;
    }
    for suffix in ["ING", "IED", "IES", "ED", "ES", "S"] {
        let Some(stem) = word.strip_suffix(suffix) else {
            continue;
        };
        if stem.len() < 2 {
            continue;
        }
        let mut candidates = vec![stem.to_string(), format!("{stem}E")];
        let b = stem.as_bytes();
        if b.len() >= 2 && b[b.len() - 1] == b[b.len() - 2] {
            candidates.push(stem[..stem.len() - 1].to_string());
        }
        if suffix.starts_with('I') {
            candidates.push(format!("{stem}Y"));
        }
        if candidates.iter().any(|c| is_known_stem(c)) {
            return true;
        }
    }
    false
}

fn is_verb_tag(tag: &str) -> bool {
    let t = tag.trim().to_ascii_uppercase();
    t == "VERB" || t == "AUX" || t.starts_with("VB")
}

/// Word indices tagged as verbs. External tags are used verbatim when given.
pub fn tag_verbs(transcript: &str, tags: Option<&[String]>) -> Result<BTreeSet<usize>> {
    let words: Vec<&str> = transcript.split(' ').filter(|w| !w.is_empty()).collect();
    match tags {
        Some(tags) => {
            if tags.len() != words.len() {
                return Err(Error::DimensionMismatch {
                    expected: words.len(),
                    actual: tags.len(),
                });
            }
            Ok(tags
                .iter()
                .enumerate()
                .filter(|(_, t)| is_verb_tag(t))
                .map(|(i, _)| i)
                .collect())
        }
        None => Ok(words
            .iter()
            .enumerate()
            .filter(|(_, w)| is_fallback_verb(w))
            .map(|(i, _)| i)
            .collect()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmFeatures {
    pub char_ppl: f64,
    pub avg_word_surprisal: f64,
    pub avg_verb_surprisal: f64,
    pub verb_surprisal_ratio: f64,
    pub verb_oov_rate: f64,
}

impl LmFeatures {
    /// Values in [`LM_FEATURE_NAMES`] order.
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.char_ppl,
            self.avg_word_surprisal,
            self.avg_verb_surprisal,
            self.verb_surprisal_ratio,
            self.verb_oov_rate,
        ]
    }
}

/// The five surprisal features of a normalized transcript. Utterances without
/// verbs get 0 for the three verb features.
pub fn lm_features<M: CharModel + ?Sized>(
    lm: &M,
    vocab: &WordVocab,
    transcript: &str,
    verb_indices: &BTreeSet<usize>,
) -> Result<LmFeatures> {
    let char_ppl = utterance_char_ppl(lm, transcript)?;
    let alphabet = lm.alphabet();
    let losses = char_losses(lm, transcript);
    let space = alphabet.char_index(' ');

    // Word spans over the encoded sequence (encode may drop characters).
    let seq = alphabet.encode(transcript);
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for (j, &s) in seq.iter().enumerate() {
        match (Some(s) == space, start) {
            (false, None) => start = Some(j),
            (true, Some(b)) => {
                spans.push((b, j));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(b) = start {
        spans.push((b, seq.len()));
    }
    let words: Vec<&str> = transcript.split(' ').filter(|w| !w.is_empty()).collect();
    if let Some(&bad) = verb_indices.iter().find(|&&i| i >= words.len()) {
        return Err(Error::InvalidArgument(format!(
            "verb index {bad} out of range for {} words",
            words.len()
        )));
    }
    let surprisals: Vec<f64> = spans
        .iter()
        .map(|&(a, b)| losses[a..b].iter().sum())
        .collect();
    let avg_word_surprisal = if surprisals.is_empty() {
        0.0
    } else {
        surprisals.iter().sum::<f64>() / surprisals.len() as f64
    };
    let (avg_verb_surprisal, verb_surprisal_ratio, verb_oov_rate) = if verb_indices.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        let n = verb_indices.len() as f64;
        let avg = verb_indices
            .iter()
            .map(|&i| surprisals.get(i).copied().unwrap_or(0.0))
            .sum::<f64>()
            / n;
        let ratio = if avg_word_surprisal > 0.0 {
            avg / avg_word_surprisal
        } else {
            0.0
        };
        let oov = verb_indices
            .iter()
            .filter(|&&i| !vocab.contains(words[i]))
            .count() as f64
            / n;
        (avg, ratio, oov)
    };
    Ok(LmFeatures {
        char_ppl,
        avg_word_surprisal,
        avg_verb_surprisal,
        verb_surprisal_ratio,
        verb_oov_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uniform() -> UniformLm {
        UniformLm {
            alphabet: Alphabet::default(),
        }
    }

    /// Puts all mass on the character that follows in a fixed reference text.
    struct Oracle {
        alphabet: Alphabet,
        text: Vec<usize>,
    }

    impl CharModel for Oracle {
        fn alphabet(&self) -> &Alphabet {
            &self.alphabet
        }
        fn log_prob(&self, history: &[usize], next: usize) -> f64 {
            if self.text.get(history.len()) == Some(&next) {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
    }

    fn vocab(words: &[&str]) -> WordVocab {
        WordVocab {
            version: 1,
            min_count: 1,
            words: words.iter().map(|w| w.to_string()).collect(),
        }
    }

    #[test]
    fn trained_model_beats_uniform_in_domain() {
        let a = Alphabet::default();
        let corpus = [
            "THE KIDS WALKED HOME",
            "SHE SAID THE STORE WAS CLOSED",
            "THEY WALKED TO THE STORE",
        ];
        let lm = train_char_lm(&corpus, 6, 0.01, &a).unwrap();
        for text in corpus {
            assert!(utterance_char_ppl(&lm, text).unwrap() < a.len() as f64);
        }
    }

    #[test]
    fn unseen_context_is_uniform() {
        let a = Alphabet::default();
        let lm = train_char_lm(&["AB"], 3, 0.5, &a).unwrap();
        let ctx = a.encode("ZZQ");
        for c in 0..a.len() {
            assert!((lm.prob(&ctx, c) - 1.0 / 31.0).abs() < 1e-15);
        }
    }

    #[test]
    fn unigram_formula() {
        let a = Alphabet::default();
        let k = 0.25;
        let lm = train_char_lm(&["AAAB"], 1, k, &a).unwrap();
        let expected = (3.0 + k) / (4.0 + k * 31.0);
        assert!((lm.prob(&[], 0) - expected).abs() < 1e-15);
        assert!((lm.prob(&a.encode("BBBB"), 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn training_errors() {
        let a = Alphabet::default();
        let empty: [&str; 0] = [];
        assert!(train_char_lm(&empty, 3, 0.1, &a).is_err());
        assert!(train_char_lm(&[""], 3, 0.1, &a).is_err());
        assert!(train_char_lm(&["A"], 0, 0.1, &a).is_err());
        assert!(train_char_lm(&["A"], 2, 0.0, &a).is_err());
    }

    #[test]
    fn uniform_and_deterministic_scores() {
        let u = uniform();
        assert!((word_surprisal(&u, "CAT", "THE ") - 3.0 * 31f64.ln()).abs() < 1e-12);
        assert!((utterance_char_ppl(&u, "HELLO THERE").unwrap() - 31.0).abs() < 1e-9);
        let a = Alphabet::default();
        let text = "GO HOME";
        let o = Oracle {
            text: a.encode(text),
            alphabet: a,
        };
        assert_eq!(word_surprisal(&o, "HOME", "GO "), 0.0);
        assert_eq!(utterance_char_ppl(&o, text).unwrap(), 1.0);
        assert!(utterance_char_ppl(&u, "").is_err());
    }

    #[test]
    fn word_and_space_surprisals_add_up() {
        let a = Alphabet::default();
        let lm = train_char_lm(&["THE CAT SAT ON THE MAT", "A DOG RAN"], 4, 0.1, &a).unwrap();
        let text = "THE DOG SAT";
        let total: f64 = char_losses(&lm, text).iter().sum();
        let mut acc = 0.0;
        let mut prefix = String::new();
        for (i, w) in text.split(' ').enumerate() {
            if i > 0 {
                acc -= lm.log_prob(&a.encode(&prefix), a.char_index(' ').unwrap());
                prefix.push(' ');
            }
            acc += word_surprisal(&lm, w, &prefix);
            prefix.push_str(w);
        }
        assert!((acc - total).abs() < 1e-12);
    }

    #[test]
    fn verb_tagging() {
        let tags = vec!["NOUN".to_string(), "VERB".to_string()];
        assert_eq!(
            tag_verbs("DOG RUNS", Some(&tags)).unwrap(),
            BTreeSet::from([1])
        );
        assert_eq!(
            tag_verbs("HE IS RUNNING", None).unwrap(),
            BTreeSet::from([1, 2])
        );
        assert!(tag_verbs("THE RED HOUSE", None).unwrap().is_empty());
        assert!(tag_verbs("DOG RUNS", Some(&tags[..1])).is_err());
        assert!(
            is_fallback_verb("WALKED") && is_fallback_verb("MAKING") && is_fallback_verb("CARRIED")
        );
        assert!(!is_fallback_verb("THINGS"));
    }

    #[test]
    fn lm_feature_examples() {
        let u = uniform();
        let f = lm_features(&u, &vocab(&["RUN"]), "I RUN GLORP", &BTreeSet::from([1, 2])).unwrap();
        assert_eq!(f.verb_oov_rate, 0.5);
        // Uniform model: surprisal is proportional to length.
        let avg_verb_len = (3.0 + 5.0) / 2.0;
        let avg_word_len = (1.0 + 3.0 + 5.0) / 3.0;
        assert!((f.verb_surprisal_ratio - avg_verb_len / avg_word_len).abs() < 1e-12);
        assert!((f.char_ppl - 31.0).abs() < 1e-9);

        let f = lm_features(&u, &vocab(&["RUN"]), "THE RED HOUSE", &BTreeSet::new()).unwrap();
        assert_eq!(
            (
                f.avg_verb_surprisal,
                f.verb_surprisal_ratio,
                f.verb_oov_rate
            ),
            (0.0, 0.0, 0.0)
        );
        assert!(f.avg_word_surprisal > 0.0);
        assert!(lm_features(&u, &vocab(&["RUN"]), "", &BTreeSet::new()).is_err());
        assert!(lm_features(&u, &vocab(&["RUN"]), "A B", &BTreeSet::from([2])).is_err());
    }

    #[test]
    fn vocab_threshold() {
        let v = train_vocab(&["A B B", "C B A"], 2).unwrap();
        assert_eq!(v.words, BTreeSet::from(["A".to_string(), "B".to_string()]));
        assert!(train_vocab(&["A B C"], 2).is_err());
    }

    #[test]
    fn serialization_round_trip() {
        let a = Alphabet::default();
        let lm = train_char_lm(&["HELLO THERE", "HELLO WORLD"], 3, 0.01, &a).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lm.json");
        lm.save(&p).unwrap();
        let back = CharLm::load(&p).unwrap();
        assert_eq!(back, lm);
        let first = std::fs::read(&p).unwrap();
        back.save(&p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
        let uni = train_char_lm(&["AB"], 1, 0.5, &a).unwrap();
        uni.save(&p).unwrap();
        assert_eq!(CharLm::load(&p).unwrap(), uni);
    }

    proptest! {
        #[test]
        fn distributions_normalize(ctx in "[A-E ]{0,8}", order in 1usize..6) {
            let a = Alphabet::default();
            let lm = train_char_lm(&["ABBA CAB", "DEAD BEEF", "A BAD DECADE"], order, 0.01, &a).unwrap();
            let h = a.encode(&ctx);
            let s: f64 = (0..a.len()).map(|c| lm.prob(&h, c)).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn trailing_whitespace_is_irrelevant(text in "[a-e]{1,6}( [a-e]{1,6}){0,3}", pad in "[ \t]{0,4}") {
            let a = Alphabet::default();
            let lm = train_char_lm(&["ABBA CAB", "DEAD BEEF"], 3, 0.01, &a).unwrap();
            let t1 = crate::asr_features::normalize_transcript(&text, &a);
            let t2 = crate::asr_features::normalize_transcript(&format!("{text}{pad}"), &a);
            prop_assert_eq!(utterance_char_ppl(&lm, &t1).unwrap(), utterance_char_ppl(&lm, &t2).unwrap());
        }
    }
}

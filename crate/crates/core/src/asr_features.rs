//! Character-bigram counts over ASR transcripts and average per-character
//! durations from greedy (CTC-collapse) alignment of frame posteriors.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Blank / silence symbol name.
pub const SIL: &str = "sil";
/// Out-of-alphabet symbol name.
pub const UNK: &str = "unk";
/// Text representation of [`UNK`] inside normalized transcripts.
pub const UNK_CHAR: char = '\u{FFFD}';

pub const DEFAULT_FRAME_STRIDE_S: f64 = 0.02;

const POSTERIOR_MAGIC: &[u8; 8] = b"DDMPOST1";

/// Ordered output symbols of the recognizer. The default has 31 entries:
/// `A`-`Z`, apostrophe, space, period, `sil` and `unk`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Alphabet {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
    char_index: HashMap<char, usize>,
    sil: usize,
    unk: Option<usize>,
}

impl Default for Alphabet {
    fn default() -> Self {
        let mut symbols: Vec<String> = ('A'..='Z').map(String::from).collect();
        symbols.extend(["'", " ", ".", SIL, UNK].map(String::from));
        Alphabet::new(symbols).expect("default alphabet is valid")
    }
}

impl TryFrom<Vec<String>> for Alphabet {
    type Error = Error;

    fn try_from(symbols: Vec<String>) -> Result<Self> {
        Alphabet::new(symbols)
    }
}

impl From<Alphabet> for Vec<String> {
    fn from(a: Alphabet) -> Self {
        a.symbols
    }
}

impl Alphabet {
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        let mut index = HashMap::new();
        let mut char_index = HashMap::new();
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate alphabet symbol {s:?}"
                )));
            }
            if s == UNK {
                char_index.insert(UNK_CHAR, i);
            } else if s != SIL {
                let mut chars = s.chars();
                if let (Some(c), None) = (chars.next(), chars.next()) {
                    char_index.insert(c, i);
                }
            }
        }
        let sil = *index
            .get(SIL)
            .ok_or_else(|| Error::InvalidArgument("alphabet must contain `sil`".into()))?;
        if !char_index.contains_key(&' ') {
            return Err(Error::InvalidArgument(
                "alphabet must contain the space symbol".into(),
            ));
        }
        let unk = index.get(UNK).copied();
        Ok(Alphabet {
            symbols,
            index,
            char_index,
            sil,
            unk,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn char_index(&self, c: char) -> Option<usize> {
        self.char_index.get(&c).copied()
    }

    pub fn sil(&self) -> usize {
        self.sil
    }

    pub fn unk(&self) -> Option<usize> {
        self.unk
    }

    /// Column-name form of a symbol: punctuation and space are spelled out.
    pub fn display_name(&self, i: usize) -> String {
        match self.symbols[i].as_str() {
            "'" => "apostrophe".into(),
            " " => "space".into(),
            "." => "period".into(),
            s => s.to_string(),
        }
    }

    /// Symbol indices of a normalized transcript, in order.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.chars().filter_map(|c| self.char_index(c)).collect()
    }
}

/// Uppercase, map out-of-alphabet characters to `unk` (dropped when the
/// alphabet has no `unk`), collapse whitespace runs and trim.
pub fn normalize_transcript(text: &str, alphabet: &Alphabet) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars() {
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        for u in c.to_uppercase() {
            let mapped = if alphabet.char_index(u).is_some() && u != ' ' {
                Some(u)
            } else if alphabet.unk.is_some() {
                Some(UNK_CHAR)
            } else {
                None
            };
            if let Some(m) = mapped {
                if pending_space && !out.is_empty() {
                    out.push(' ');
                }
                pending_space = false;
                out.push(m);
            }
        }
    }
    out
}

/// Row-major `|A| x |A|` bigram counts; entry `i*|A|+j` counts symbol `i`
/// immediately followed by symbol `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramVector {
    pub counts: Vec<f64>,
    pub n_symbols: usize,
}

impl BigramVector {
    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Counts divided by `max(total, 1)`.
    pub fn normalized(&self) -> Vec<f64> {
        let t = self.total().max(1.0);
        self.counts.iter().map(|c| c / t).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.counts[i * self.n_symbols + j]
    }
}

pub fn bigram_frequencies(text: &str, alphabet: &Alphabet) -> BigramVector {
    let n = alphabet.len();
    let mut counts = vec![0.0; n * n];
    let idx = alphabet.encode(text);
    for w in idx.windows(2) {
        counts[w[0] * n + w[1]] += 1.0;
    }
    BigramVector {
        counts,
        n_symbols: n,
    }
}

/// Column names of the bigram features, e.g. `N_space`.
pub fn bigram_feature_names(alphabet: &Alphabet) -> Vec<String> {
    let n = alphabet.len();
    let mut names = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            names.push(format!(
                "{}_{}",
                alphabet.display_name(i),
                alphabet.display_name(j)
            ));
        }
    }
    names
}

pub fn duration_feature_names(alphabet: &Alphabet) -> Vec<String> {
    (0..alphabet.len())
        .map(|i| format!("dur_{}", alphabet.display_name(i)))
        .collect()
}

/// Per-frame recognizer scores, higher is more likely.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    pub n_frames: usize,
    pub n_symbols: usize,
    pub values: Vec<f32>,
    pub frame_stride_s: f64,
}

impl PosteriorMatrix {
    pub fn new(
        n_frames: usize,
        n_symbols: usize,
        values: Vec<f32>,
        frame_stride_s: f64,
    ) -> Result<Self> {
        if values.len() != n_frames * n_symbols {
            return Err(Error::DimensionMismatch {
                expected: n_frames * n_symbols,
                actual: values.len(),
            });
        }
        if frame_stride_s.is_nan() || frame_stride_s <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "frame stride {frame_stride_s} must be positive"
            )));
        }
        Ok(PosteriorMatrix {
            n_frames,
            n_symbols,
            values,
            frame_stride_s,
        })
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.values[t * self.n_symbols..(t + 1) * self.n_symbols]
    }

    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(20 + 4 * self.values.len());
        buf.extend_from_slice(POSTERIOR_MAGIC);
        buf.extend_from_slice(&(self.n_frames as u32).to_le_bytes());
        buf.extend_from_slice(&(self.n_symbols as u32).to_le_bytes());
        buf.extend_from_slice(&(self.frame_stride_s as f32).to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Read either the `DDMPOST1` binary layout or the CSV fallback (one frame
    /// per line, optional leading `# stride=<seconds>` line).
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let fail = |message: String| Error::Posterior {
            path: path.to_path_buf(),
            message,
        };
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(POSTERIOR_MAGIC) {
            if bytes.len() < 20 {
                return Err(fail("truncated header".into()));
            }
            let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
            let rows = u32_at(8) as usize;
            let cols = u32_at(12) as usize;
            let stride = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
            let body = &bytes[20..];
            if body.len() != rows * cols * 4 {
                return Err(fail(format!(
                    "expected {} payload bytes for {rows}x{cols}, found {}",
                    rows * cols * 4,
                    body.len()
                )));
            }
            let values = body
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            return PosteriorMatrix::new(
                rows,
                cols,
                values,
                stride.to_string().parse().unwrap_or(f64::from(stride)),
            )
            .map_err(|e| fail(e.to_string()));
        }
        let mut stride = DEFAULT_FRAME_STRIDE_S;
        let mut values = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for (i, line) in BufReader::new(bytes.as_slice()).lines().enumerate() {
            let line = line.map_err(|e| fail(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("stride=") {
                    stride = v
                        .trim()
                        .parse()
                        .map_err(|_| fail(format!("bad stride on line {}", i + 1)))?;
                }
                continue;
            }
            let row = line
                .split(',')
                .map(|c| c.trim().parse::<f32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| fail(format!("non-numeric value on line {}", i + 1)))?;
            match cols {
                None => cols = Some(row.len()),
                Some(c) if c != row.len() => {
                    return Err(fail(format!(
                        "line {} has {} columns, expected {c}",
                        i + 1,
                        row.len()
                    )))
                }
                _ => {}
            }
            values.extend(row);
            rows += 1;
        }
        PosteriorMatrix::new(rows, cols.unwrap_or(0), values, stride)
            .map_err(|e| fail(e.to_string()))
    }
}

/// One run of identical per-frame argmax symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub symbol: usize,
    pub frames: usize,
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] || (row[best].is_nan() && !v.is_nan()) {
            best = i;
        }
    }
    best
}

/// Per-frame argmax (ties to the lower index) merged into runs.
pub fn greedy_align(p: &PosteriorMatrix) -> Vec<Run> {
    let mut runs: Vec<Run> = Vec::new();
    if p.n_symbols == 0 {
        return runs;
    }
    for t in 0..p.n_frames {
        let s = argmax(p.row(t));
        match runs.last_mut() {
            Some(r) if r.symbol == s => r.frames += 1,
            _ => runs.push(Run {
                symbol: s,
                frames: 1,
            }),
        }
    }
    runs
}

/// Mean run length in seconds for each symbol; 0 for symbols that never occur.
pub fn char_durations(p: &PosteriorMatrix, alphabet: &Alphabet) -> Result<Vec<f64>> {
    if p.n_symbols != alphabet.len() {
        return Err(Error::DimensionMismatch {
            expected: alphabet.len(),
            actual: p.n_symbols,
        });
    }
    let mut frames = vec![0usize; alphabet.len()];
    let mut runs = vec![0usize; alphabet.len()];
    for r in greedy_align(p) {
        frames[r.symbol] += r.frames;
        runs[r.symbol] += 1;
    }
    Ok(frames
        .iter()
        .zip(&runs)
        .map(|(&f, &n)| {
            if n == 0 {
                0.0
            } else {
                f as f64 / n as f64 * p.frame_stride_s
            }
        })
        .collect())
}

/// Greedy transcript: runs with blanks dropped, mapped back to characters.
pub fn decode_greedy(p: &PosteriorMatrix, alphabet: &Alphabet) -> String {
    greedy_align(p)
        .into_iter()
        .filter(|r| r.symbol != alphabet.sil())
        .filter_map(|r| {
            let s = &alphabet.symbols()[r.symbol];
            if s == UNK {
                Some(UNK_CHAR)
            } else {
                s.chars().next()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_hot(alpha: &Alphabet, seq: &[&str]) -> PosteriorMatrix {
        let n = alpha.len();
        let mut values = vec![0.0f32; seq.len() * n];
        for (t, s) in seq.iter().enumerate() {
            values[t * n + alpha.index_of(s).unwrap()] = 1.0;
        }
        PosteriorMatrix::new(seq.len(), n, values, 0.02).unwrap()
    }

    #[test]
    fn default_alphabet_has_31_symbols() {
        let a = Alphabet::default();
        assert_eq!(a.len(), 31);
        assert_eq!(a.index_of("A"), Some(0));
        assert_eq!(a.display_name(a.char_index(' ').unwrap()), "space");
        assert!(Alphabet::new(vec!["A".into(), "A".into()]).is_err());
        assert!(Alphabet::new(vec!["A".into(), " ".into()]).is_err());
    }

    #[test]
    fn normalization() {
        let a = Alphabet::default();
        assert_eq!(normalize_transcript("don't  stop", &a), "DON'T STOP");
        assert_eq!(normalize_transcript("", &a), "");
        assert_eq!(normalize_transcript("naïve", &a), format!("NA{UNK_CHAR}VE"));
        assert_eq!(normalize_transcript("  a\t\nb  ", &a), "A B");
    }

    #[test]
    fn bigram_examples() {
        let a = Alphabet::default();
        let ix = |c: char| a.char_index(c).unwrap();
        let v = bigram_frequencies("AB A", &a);
        assert_eq!(v.counts.len(), 961);
        assert_eq!(v.get(ix('A'), ix('B')), 1.0);
        assert_eq!(v.get(ix('B'), ix(' ')), 1.0);
        assert_eq!(v.get(ix(' '), ix('A')), 1.0);
        assert_eq!(v.total(), 3.0);
        assert_eq!(bigram_frequencies("AAA", &a).get(ix('A'), ix('A')), 2.0);
        let z = bigram_frequencies("", &a);
        assert!(z.counts.iter().all(|&c| c == 0.0));
        assert!(z.normalized().iter().all(|&c| c == 0.0));
        let names = bigram_feature_names(&a);
        assert_eq!(names[ix('N') * 31 + ix(' ')], "N_space");
    }

    #[test]
    fn greedy_alignment_examples() {
        let a = Alphabet::default();
        let sil = a.sil();
        let p = one_hot(&a, &["sil", "A", "A", "sil", "B"]);
        let runs = greedy_align(&p);
        let got: Vec<_> = runs.iter().map(|r| (r.symbol, r.frames)).collect();
        assert_eq!(got, vec![(sil, 1), (0, 2), (sil, 1), (1, 1)]);
        let p = one_hot(&a, &["sil"; 7]);
        assert_eq!(
            greedy_align(&p),
            vec![Run {
                symbol: sil,
                frames: 7
            }]
        );
        let mut tie = vec![0.0f32; 31];
        tie[0] = 0.5;
        tie[1] = 0.5;
        let p = PosteriorMatrix::new(1, 31, tie, 0.02).unwrap();
        assert_eq!(greedy_align(&p)[0].symbol, 0);
        let empty = PosteriorMatrix::new(0, 31, vec![], 0.02).unwrap();
        assert!(greedy_align(&empty).is_empty());
    }

    #[test]
    fn duration_examples() {
        let a = Alphabet::default();
        let p = one_hot(&a, &["A", "A", "sil", "A", "A", "A", "A"]);
        let d = char_durations(&p, &a).unwrap();
        assert!((d[0] - 0.06).abs() < 1e-12);
        assert_eq!(d[1], 0.0);
        let p = one_hot(&a, &["sil"; 5]);
        let d = char_durations(&p, &a).unwrap();
        assert!((d[a.sil()] - 0.10).abs() < 1e-12);
        assert_eq!(d.iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn decode_drops_blanks() {
        let a = Alphabet::default();
        let p = one_hot(&a, &["sil", "H", "H", "I", "sil", " ", "Y", "O", "sil"]);
        assert_eq!(decode_greedy(&p, &a), "HI YO");
    }

    #[test]
    fn posterior_file_formats() {
        let a = Alphabet::default();
        let dir = tempfile::tempdir().unwrap();
        let p = one_hot(&a, &["sil", "A", "B"]);
        let bin = dir.path().join("p.bin");
        p.write_binary(&bin).unwrap();
        assert_eq!(PosteriorMatrix::read(&bin).unwrap(), p);

        let csv = dir.path().join("p.csv");
        std::fs::write(&csv, "# stride=0.01\n1,0,0\n0,2,0.5\n").unwrap();
        let q = PosteriorMatrix::read(&csv).unwrap();
        assert_eq!((q.n_frames, q.n_symbols, q.frame_stride_s), (2, 3, 0.01));
        assert_eq!(q.row(1), &[0.0, 2.0, 0.5]);

        let mut bytes = std::fs::read(&bin).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&bin, bytes).unwrap();
        assert!(PosteriorMatrix::read(&bin).is_err());
    }

    fn matrix() -> impl Strategy<Value = (PosteriorMatrix, Vec<f32>)> {
        (0usize..40).prop_flat_map(|frames| {
            (
                proptest::collection::vec(0u8..4, frames * 31),
                proptest::collection::vec(-5.0f32..5.0, frames),
            )
                .prop_map(move |(v, shifts)| {
                    let values = v.into_iter().map(f32::from).collect();
                    (
                        PosteriorMatrix::new(frames, 31, values, 0.02).unwrap(),
                        shifts,
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn bigram_sum_matches_length(text in "[a-z' .]{0,40}") {
            let a = Alphabet::default();
            let norm = normalize_transcript(&text, &a);
            let n = norm.chars().count();
            prop_assert_eq!(bigram_frequencies(&norm, &a).total() as usize, n.saturating_sub(1));
            prop_assert_eq!(normalize_transcript(&norm, &a), norm);
        }

        #[test]
        fn runs_cover_frames_and_never_repeat((p, shifts) in matrix()) {
            let runs = greedy_align(&p);
            prop_assert_eq!(runs.iter().map(|r| r.frames).sum::<usize>(), p.n_frames);
            prop_assert!(runs.windows(2).all(|w| w[0].symbol != w[1].symbol));

            // Adding a per-frame constant changes no argmax.
            let mut shifted = p.clone();
            for (row, shift) in shifted.values.chunks_mut(31).zip(&shifts) {
                for v in row {
                    *v += shift.round();
                }
            }
            let a = Alphabet::default();
            prop_assert_eq!(char_durations(&p, &a).unwrap(), char_durations(&shifted, &a).unwrap());
        }
    }
}

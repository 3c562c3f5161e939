use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::UtteranceRecord;
use crate::error::{Error, Result};
use crate::seed;

/// Speaker-independent partition of a corpus. `valid` is empty for two-way
/// hold-out splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: BTreeSet<String>,
    pub valid: BTreeSet<String>,
    pub test: BTreeSet<String>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn is_disjoint(&self) -> bool {
        self.train.is_disjoint(&self.valid)
            && self.train.is_disjoint(&self.test)
            && self.valid.is_disjoint(&self.test)
    }

    pub fn select<'a>(
        &self,
        part: &BTreeSet<String>,
        records: &'a [UtteranceRecord],
    ) -> Vec<&'a UtteranceRecord> {
        records
            .iter()
            .filter(|r| part.contains(&r.speaker))
            .collect()
    }
}

fn speaker_counts(records: &[UtteranceRecord]) -> BTreeMap<&str, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.speaker.as_str()).or_insert(0) += 1;
    }
    counts
}

/// Greedy packing of shuffled speakers: each speaker goes to the partition with
/// the largest remaining utterance deficit (ties to the earlier partition),
/// except that partitions with a positive target are never left empty.
fn partition_speakers<R: Rng>(
    records: &[UtteranceRecord],
    fractions: &[f64],
    rng: &mut R,
) -> Result<Vec<BTreeSet<String>>> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidArgument(format!(
            "split fractions {fractions:?} must be in [0,1] and sum to 1"
        )));
    }
    let counts = speaker_counts(records);
    let needed = fractions.iter().filter(|&&f| f > 0.0).count();
    if counts.len() < needed.max(2) {
        return Err(Error::InvalidArgument(format!(
            "need at least {} speakers to split, found {}",
            needed.max(2),
            counts.len()
        )));
    }
    let mut speakers: Vec<(&str, usize)> = counts.into_iter().collect();
    speakers.shuffle(rng);
    let total: usize = speakers.iter().map(|s| s.1).sum();
    let targets: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut filled = vec![0usize; fractions.len()];
    let mut parts = vec![BTreeSet::new(); fractions.len()];
    let n = speakers.len();
    for (i, (spk, count)) in speakers.into_iter().enumerate() {
        let remaining = n - i;
        let empty: Vec<usize> = (0..fractions.len())
            .filter(|&k| fractions[k] > 0.0 && parts[k].is_empty())
            .collect();
        let k = if remaining <= empty.len() {
            empty[0]
        } else {
            let mut best = None;
            for k in (0..fractions.len()).filter(|&k| fractions[k] > 0.0) {
                let deficit = targets[k] - filled[k] as f64;
                match best {
                    Some((_, d)) if deficit <= d => {}
                    _ => best = Some((k, deficit)),
                }
            }
            best.expect("at least one positive fraction").0
        };
        filled[k] += count;
        parts[k].insert(spk.to_string());
    }
    Ok(parts)
}

/// Three-way speaker-independent split, deterministic for a given seed.
pub fn make_speaker_split(
    records: &[UtteranceRecord],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitSpec> {
    let mut rng = seed::rng(seed, "split");
    let distinct = speaker_counts(records).len();
    if distinct < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 speakers for a three-way split, found {distinct}"
        )));
    }
    let mut parts =
        partition_speakers(records, &[fractions.0, fractions.1, fractions.2], &mut rng)?;
    let test = parts.pop().unwrap_or_default();
    let valid = parts.pop().unwrap_or_default();
    let train = parts.pop().unwrap_or_default();
    Ok(SplitSpec {
        train,
        valid,
        test,
        seed,
    })
}

/// `n_iter` two-way speaker-independent splits; iteration `i` depends only on
/// `(seed, i)`.
pub fn make_random_holdouts(
    records: &[UtteranceRecord],
    n_iter: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<Vec<SplitSpec>> {
    (0..n_iter)
        .map(|i| {
            let mut rng = seed::rng(seed, &format!("holdout/{i}"));
            let mut parts =
                partition_speakers(records, &[1.0 - test_fraction, test_fraction], &mut rng)?;
            let test = parts.pop().unwrap_or_default();
            let train = parts.pop().unwrap_or_default();
            Ok(SplitSpec {
                train,
                valid: BTreeSet::new(),
                test,
                seed: seed::substream(seed, &format!("holdout/{i}")),
            })
        })
        .collect()
}

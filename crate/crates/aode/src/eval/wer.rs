//! Word error rate from a minimum-cost token alignment, plus corpus-level
//! pooling of the error counts.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::par::par_map_ref;

/// Error counts from one alignment (or a pooled set of alignments).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WerBreakdown {
    pub substitutions: u64,
    pub deletions: u64,
    pub insertions: u64,
    pub ref_len: u64,
}

impl WerBreakdown {
    /// Total edit operations; equals the Levenshtein distance for a single
    /// alignment.
    pub fn edits(&self) -> u64 {
        self.substitutions + self.deletions + self.insertions
    }

    /// (S + D + I) / ref_len. May exceed 1.0 through insertions.
    pub fn wer(&self) -> f64 {
        self.edits() as f64 / self.ref_len as f64
    }

    fn add(&mut self, other: &WerBreakdown) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.ref_len += other.ref_len;
    }
}

/// Aligns `hypothesis` against `reference` with unit edit costs and returns
/// the substitution/deletion/insertion split. When several minimum-cost
/// alignments exist, ties are resolved preferring substitution over
/// insertion over deletion.
pub fn word_error_rate<S: AsRef<str>>(
    reference: &[S],
    hypothesis: &[S],
) -> Result<WerBreakdown, EvalError> {
    if reference.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let m = reference.len();
    let n = hypothesis.len();
    let width = n + 1;
    let mut dist = vec![0u32; (m + 1) * width];
    for j in 0..=n {
        dist[j] = j as u32;
    }
    for i in 1..=m {
        dist[i * width] = i as u32;
        for j in 1..=n {
            let cost = u32::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            let diag = dist[(i - 1) * width + (j - 1)] + cost;
            let ins = dist[i * width + (j - 1)] + 1;
            let del = dist[(i - 1) * width + j] + 1;
            dist[i * width + j] = diag.min(ins).min(del);
        }
    }

    let mut counts = WerBreakdown {
        ref_len: m as u64,
        ..Default::default()
    };
    let (mut i, mut j) = (m, n);
    while i > 0 || j > 0 {
        let here = dist[i * width + j];
        if i > 0 && j > 0 {
            let cost = u32::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            if dist[(i - 1) * width + (j - 1)] + cost == here {
                counts.substitutions += u64::from(cost);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && dist[i * width + (j - 1)] + 1 == here {
            counts.insertions += 1;
            j -= 1;
            continue;
        }
        counts.deletions += 1;
        i -= 1;
    }
    Ok(counts)
}

/// Pools substitution/deletion/insertion counts over utterances, then
/// divides once. Pairs with an empty reference contribute their hypothesis
/// length as insertions; a corpus whose references are all empty is an
/// error. Utterances are aligned independently, so the pooled counts do not
/// depend on processing order.
pub fn corpus_wer<S: AsRef<str> + Sync>(
    pairs: &[(Vec<S>, Vec<S>)],
) -> Result<WerBreakdown, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let per_utterance = par_map_ref(pairs, |(reference, hypothesis)| {
        if reference.is_empty() {
            Ok(WerBreakdown {
                insertions: hypothesis.len() as u64,
                ..Default::default()
            })
        } else {
            word_error_rate(reference.as_slice(), hypothesis.as_slice())
        }
    });
    let mut pooled = WerBreakdown::default();
    for result in per_utterance {
        pooled.add(&result?);
    }
    if pooled.ref_len == 0 {
        return Err(EvalError::AllReferencesEmpty);
    }
    Ok(pooled)
}

//! Edit distance and character error rate.
//!
//! Corpus CER is total edit distance over total reference length (the ASR
//! convention), not a mean of per-utterance rates. Utterances with an empty
//! reference and a non-empty hypothesis have no defined CER; corpus scoring
//! skips and counts them.

use crate::error::{Result, SaaError};

/// Levenshtein distance with unit costs for substitution, insertion and
/// deletion.
pub fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    let (n, m) = (a.len(), b.len());
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for i in 1..=n {
        cur[0] = i;
        for j in 1..=m {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Per-utterance CER: edit distance divided by reference length.
pub fn cer(reference: &[usize], hypothesis: &[usize]) -> Result<f64> {
    if reference.is_empty() {
        return if hypothesis.is_empty() { Ok(0.0) } else { Err(SaaError::UndefinedCer) };
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

/// Corpus-level CER report.
#[derive(Debug, Clone, PartialEq)]
pub struct CerReport {
    pub total_distance: usize,
    pub total_ref_len: usize,
    /// Utterances with empty reference and non-empty hypothesis, excluded
    /// from the totals.
    pub skipped: usize,
    pub scored: usize,
}

impl CerReport {
    pub fn cer(&self) -> f64 {
        if self.total_ref_len == 0 {
            0.0
        } else {
            self.total_distance as f64 / self.total_ref_len as f64
        }
    }
}

/// Score (reference, hypothesis) pairs; undefined pairs are skipped and
/// counted rather than failing the whole corpus.
pub fn corpus_cer(pairs: &[(Vec<usize>, Vec<usize>)]) -> CerReport {
    let mut report = CerReport { total_distance: 0, total_ref_len: 0, skipped: 0, scored: 0 };
    for (r, h) in pairs {
        if r.is_empty() && !h.is_empty() {
            report.skipped += 1;
            continue;
        }
        report.total_distance += edit_distance(r, h);
        report.total_ref_len += r.len();
        report.scored += 1;
    }
    report
}

//! Corpus BLEU-1..4 and ROUGE-L on a 0–100 scale.
//!
//! BLEU is cumulative and corpus-level: clipped n-gram matches and candidate
//! n-gram counts are summed over all pairs before the precisions are formed,
//! the geometric mean uses uniform weights, and the brevity penalty uses the
//! total closest-reference length. No smoothing is applied, so a zero match
//! count at any order gives a score of 0.
//!
//! ROUGE-L is the mean over pairs of the LCS-based F-measure with `beta`
//! weighting recall (default 1.2).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textprep::tokenize_words;

pub const DEFAULT_BETA: f64 = 1.2;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("at least one hypothesis/reference pair is required")]
    Empty,
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub n_examples: usize,
}

impl MetricReport {
    /// Aligned text table, one metric per column.
    pub fn table(&self) -> String {
        format!(
            "{:>8} {:>8} {:>8} {:>8} {:>8}\n{:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2}\n",
            "BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "ROUGE-L",
            self.bleu1, self.bleu2, self.bleu3, self.bleu4, self.rouge_l
        )
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            let key: Vec<&str> = w.iter().map(|t| t.as_ref()).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// Per-order clipped match and candidate totals plus length statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    fn new(max_n: usize) -> Self {
        Self {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            hyp_len: 0,
            ref_len: 0,
        }
    }

    fn merge(&mut self, other: &BleuStats) {
        for k in 0..self.matches.len() {
            self.matches[k] += other.matches[k];
            self.totals[k] += other.totals[k];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// Cumulative BLEU-n in [0, 1].
    pub fn score(&self, n: usize) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for k in 0..n {
            if self.matches[k] == 0 || self.totals[k] == 0 {
                return 0.0;
            }
            log_sum += (self.matches[k] as f64 / self.totals[k] as f64).ln();
        }
        let bp = if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        bp * (log_sum / n as f64).exp()
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp().min(1.0)
        }
    }
}

/// Statistics of one hypothesis against any number of references; clipping
/// uses the maximum count over references and the reference length is the
/// one closest to the hypothesis length (shorter wins ties).
pub fn sentence_stats<S: AsRef<str>>(hyp: &[S], refs: &[&[S]], max_n: usize) -> BleuStats {
    let mut stats = BleuStats::new(max_n);
    stats.hyp_len = hyp.len();
    stats.ref_len = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&l| ((l as i64 - hyp.len() as i64).abs(), l))
        .unwrap_or(0);
    for n in 1..=max_n {
        let hyp_counts = ngram_counts(hyp, n);
        let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
        for r in refs {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        for (g, c) in &hyp_counts {
            stats.matches[n - 1] += (*c).min(max_ref.get(g).copied().unwrap_or(0));
            stats.totals[n - 1] += c;
        }
    }
    stats
}

fn check_lengths(h: usize, r: usize) -> Result<(), MetricsError> {
    if h != r {
        return Err(MetricsError::LengthMismatch { hyps: h, refs: r });
    }
    if h == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

pub fn corpus_stats<S: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<S>],
    max_n: usize,
) -> Result<BleuStats, MetricsError> {
    check_lengths(hypotheses.len(), references.len())?;
    let mut total = BleuStats::new(max_n);
    for (h, r) in hypotheses.iter().zip(references) {
        total.merge(&sentence_stats(h, &[r.as_slice()], max_n));
    }
    Ok(total)
}

/// Corpus-level cumulative BLEU-n, scaled to 0–100.
pub fn bleu<S: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<S>],
    n: usize,
) -> Result<f64, MetricsError> {
    Ok(corpus_stats(hypotheses, references, n)?.score(n) * 100.0)
}

/// Longest common subsequence length.
pub fn lcs_length<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure of a single pair in [0, 1].
pub fn rouge_l_pair<S: AsRef<str>>(hyp: &[S], reference: &[S], beta: f64) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_length(hyp, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / hyp.len() as f64;
    let r = l / reference.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean ROUGE-L F over pairs, scaled to 0–100.
pub fn rouge_l<S: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<S>],
    beta: f64,
) -> Result<f64, MetricsError> {
    check_lengths(hypotheses.len(), references.len())?;
    let total: f64 = hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| rouge_l_pair(h, r, beta))
        .sum();
    Ok(100.0 * total / hypotheses.len() as f64)
}

/// All five scores over tokenised pairs.
pub fn score_corpus<S: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<S>],
    beta: f64,
) -> Result<MetricReport, MetricsError> {
    let stats = corpus_stats(hypotheses, references, 4)?;
    Ok(MetricReport {
        bleu1: 100.0 * stats.score(1),
        bleu2: 100.0 * stats.score(2),
        bleu3: 100.0 * stats.score(3),
        bleu4: 100.0 * stats.score(4),
        rouge_l: rouge_l(hypotheses, references, beta)?,
        n_examples: hypotheses.len(),
    })
}

/// Lowercases and tokenises one line the same way prepared data is tokenised.
pub fn eval_tokens(line: &str) -> Vec<String> {
    tokenize_words(&line.to_lowercase())
}

pub fn score_lines(hyp_lines: &[String], ref_lines: &[String], beta: f64) -> Result<MetricReport, MetricsError> {
    check_lengths(hyp_lines.len(), ref_lines.len())?;
    let h: Vec<Vec<String>> = hyp_lines.iter().map(|l| eval_tokens(l)).collect();
    let r: Vec<Vec<String>> = ref_lines.iter().map(|l| eval_tokens(l)).collect();
    score_corpus(&h, &r, beta)
}

fn read_lines(path: &Path) -> Result<Vec<String>, MetricsError> {
    let text = fs::read_to_string(path).map_err(|source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// Scores a hypothesis file against a reference file, one sentence per line.
pub fn evaluate_corpus(hyp: &Path, reference: &Path, beta: f64) -> Result<MetricReport, MetricsError> {
    score_lines(&read_lines(hyp)?, &read_lines(reference)?, beta)
}

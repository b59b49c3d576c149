//! Response-quality metrics: BLEU-2, distinct-n, embedding similarity,
//! vocabulary recall and vocabulary size.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynvocab::DynamicVocab;
use crate::error::{Error, Result};
use crate::text::{TokenId, Vocabulary, UNK};

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_default() += 1;
        }
    }
    counts
}

/// Sentence BLEU over 1- and 2-grams. Clipped precisions that come out
/// zero are smoothed to `1 / (total + 1)`; the brevity penalty uses the
/// reference length closest to the candidate (shorter on ties).
pub fn bleu2<S: AsRef<str>, R: AsRef<[S]>>(candidate: &[S], references: &[R]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::EmptyInput("references"));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let mut log_p = 0.0;
    for n in 1..=2 {
        let cand = ngram_counts(candidate, n);
        let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
        for r in references {
            for (g, c) in ngram_counts(r.as_ref(), n) {
                let e = max_ref.entry(g).or_default();
                *e = (*e).max(c);
            }
        }
        let total = candidate.len().saturating_sub(n - 1);
        let matched: usize = cand
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if matched == 0 {
            1.0 / (total + 1) as f64
        } else {
            matched as f64 / total as f64
        };
        log_p += p.ln() / 2.0;
    }
    let c = candidate.len();
    let r = references
        .iter()
        .map(|r| r.as_ref().len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap_or(0);
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(bp * log_p.exp())
}

/// Distinct n-grams over all n-grams across `candidates`; 0 when there are none.
pub fn distinct_n<S: AsRef<str>>(candidates: &[Vec<S>], n: usize) -> f64 {
    assert!(n >= 1, "distinct-n needs n >= 1");
    let mut seen: HashMap<Vec<&str>, usize> = HashMap::new();
    let mut total = 0;
    for c in candidates {
        for (g, k) in ngram_counts(c, n) {
            total += k;
            *seen.entry(g).or_default() += k;
        }
    }
    if total == 0 {
        0.0
    } else {
        seen.len() as f64 / total as f64
    }
}

/// Word vectors keyed by token.
#[derive(Debug, Clone, Default)]
pub struct WordVectors {
    dim: usize,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl WordVectors {
    pub fn new(dim: usize) -> Self {
        WordVectors {
            dim,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, word: &str, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Invalid(format!(
                "vector for `{word}` has {} entries, expected {}",
                vector.len(),
                self.dim
            )));
        }
        match self.index.get(word) {
            Some(&row) => self.data[row * self.dim..(row + 1) * self.dim].copy_from_slice(vector),
            None => {
                self.index.insert(word.to_string(), self.index.len());
                self.data.extend_from_slice(vector);
            }
        }
        Ok(())
    }

    /// word2vec text format: a `count dim` header, then `word v1 .. vdim`.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
        let dim = header
            .split_whitespace()
            .nth(1)
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| err(1, format!("bad header `{header}`")))?;
        let mut out = WordVectors::new(dim);
        for (i, line) in lines {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let v: Vec<f32> = parts
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(i + 1, format!("{e}")))?;
            out.insert(&word.to_lowercase(), &v).map_err(|e| err(i + 1, e.to_string()))?;
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, path)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.index
            .get(word)
            .map(|&r| &self.data[r * self.dim..(r + 1) * self.dim])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingScores {
    pub greedy: f64,
    pub average: f64,
    pub extreme: f64,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn known<'a, S: AsRef<str>>(tokens: &[S], vectors: &'a WordVectors) -> Vec<Vec<f64>> {
    tokens
        .iter()
        .filter_map(|t| vectors.get(t.as_ref()))
        .map(|v| v.iter().map(|&x| f64::from(x)).collect())
        .collect()
}

fn mean(vs: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; vs[0].len()];
    for v in vs {
        for (a, b) in m.iter_mut().zip(v) {
            *a += b;
        }
    }
    m.iter().map(|x| x / vs.len() as f64).collect()
}

fn extrema(vs: &[Vec<f64>]) -> Vec<f64> {
    (0..vs[0].len())
        .map(|d| {
            vs.iter()
                .map(|v| v[d])
                .fold(0.0, |best: f64, x| match x.abs().total_cmp(&best.abs()) {
                    std::cmp::Ordering::Greater => x,
                    std::cmp::Ordering::Equal => x.max(best),
                    std::cmp::Ordering::Less => best,
                })
        })
        .collect()
}

fn greedy_side(from: &[Vec<f64>], to: &[Vec<f64>]) -> f64 {
    from.iter()
        .map(|a| to.iter().map(|b| cosine(a, b)).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / from.len() as f64
}

/// Greedy matching, mean-vector and extrema-vector cosines. Tokens
/// without a vector are dropped; scores below zero are reported as zero.
/// Extrema ties in magnitude keep the positive entry.
pub fn embedding_metrics<S: AsRef<str>>(
    candidate: &[S],
    reference: &[S],
    vectors: &WordVectors,
) -> Result<EmbeddingScores> {
    let c = known(candidate, vectors);
    let r = known(reference, vectors);
    if c.is_empty() || r.is_empty() {
        return Err(Error::EmptyInput("known tokens on both sides"));
    }
    let greedy = (greedy_side(&c, &r) + greedy_side(&r, &c)) / 2.0;
    Ok(EmbeddingScores {
        greedy: greedy.clamp(0.0, 1.0),
        average: cosine(&mean(&c), &mean(&r)).clamp(0.0, 1.0),
        extreme: cosine(&extrema(&c), &extrema(&r)).clamp(0.0, 1.0),
    })
}

/// Fraction of reference tokens covered by the active set. UNK counts as
/// uncovered, so the full vocabulary scores the in-vocabulary rate.
pub fn word_recall(vocab: &DynamicVocab, reference: &[TokenId]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyInput("reference"));
    }
    let hit = reference
        .iter()
        .filter(|&&id| id != UNK && vocab.contains(id))
        .count();
    Ok(hit as f64 / reference.len() as f64)
}

/// Recall restricted to the reference's content words; `None` if it has none.
pub fn content_recall(dv: &DynamicVocab, vocab: &Vocabulary, reference: &[TokenId]) -> Option<f64> {
    let content: Vec<TokenId> = reference
        .iter()
        .copied()
        .filter(|&id| vocab.content_index(id).is_some())
        .collect();
    if content.is_empty() {
        return None;
    }
    let hit = content.iter().filter(|&&id| dv.contains(id)).count();
    Some(hit as f64 / content.len() as f64)
}

pub fn voc_size(vocabs: &[DynamicVocab]) -> f64 {
    if vocabs.is_empty() {
        return 0.0;
    }
    vocabs.iter().map(DynamicVocab::len).sum::<usize>() as f64 / vocabs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pairs: usize,
    pub bleu2: f64,
    pub recall: Option<f64>,
    pub voc_size_mean: Option<f64>,
    pub greedy: Option<f64>,
    pub average: Option<f64>,
    pub extreme: Option<f64>,
    pub distinct1: f64,
    pub distinct2: f64,
    /// Pairs with known words on both sides.
    pub embedding_pairs: usize,
}

/// Per-pair vocabulary statistics for the report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coverage {
    pub recall: f64,
    pub voc_size: usize,
}

impl MetricsReport {
    /// Corpus-level scores: every per-pair score is averaged over pairs.
    pub fn compute<S: AsRef<str>>(
        candidates: &[Vec<S>],
        references: &[Vec<S>],
        coverage: &[Coverage],
        vectors: Option<&WordVectors>,
    ) -> Result<Self> {
        if candidates.len() != references.len() {
            return Err(Error::Invalid(format!(
                "{} candidates for {} references",
                candidates.len(),
                references.len()
            )));
        }
        if candidates.is_empty() {
            return Err(Error::EmptyInput("evaluation pairs"));
        }
        let n = candidates.len() as f64;
        let mut bleu = 0.0;
        for (c, r) in candidates.iter().zip(references) {
            bleu += bleu2(c, std::slice::from_ref(r))?;
        }
        let (mut sums, mut embedding_pairs) = ([0.0; 3], 0);
        if let Some(v) = vectors {
            for (c, r) in candidates.iter().zip(references) {
                if let Ok(s) = embedding_metrics(c, r, v) {
                    sums[0] += s.greedy;
                    sums[1] += s.average;
                    sums[2] += s.extreme;
                    embedding_pairs += 1;
                }
            }
        }
        let emb = |i: usize| (embedding_pairs > 0).then(|| sums[i] / embedding_pairs as f64);
        let cov_mean = |f: fn(&Coverage) -> f64| {
            (!coverage.is_empty()).then(|| coverage.iter().map(f).sum::<f64>() / coverage.len() as f64)
        };
        Ok(MetricsReport {
            pairs: candidates.len(),
            bleu2: bleu / n,
            recall: cov_mean(|c| c.recall),
            voc_size_mean: cov_mean(|c| c.voc_size as f64),
            greedy: emb(0),
            average: emb(1),
            extreme: emb(2),
            distinct1: distinct_n(candidates, 1),
            distinct2: distinct_n(candidates, 2),
            embedding_pairs,
        })
    }

    /// One header row and one value row, columns aligned.
    pub fn to_table(&self) -> String {
        let pct = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
        let cols = [
            ("BLEU-2", pct(Some(self.bleu2))),
            ("Recall", pct(self.recall)),
            ("VocSize", self.voc_size_mean.map_or("-".into(), |v| format!("{v:.1}"))),
            ("Greedy", pct(self.greedy)),
            ("Average", pct(self.average)),
            ("Extreme", pct(self.extreme)),
            ("Distinct1", pct(Some(self.distinct1))),
            ("Distinct2", pct(Some(self.distinct2))),
        ];
        let (mut head, mut row) = (Vec::new(), Vec::new());
        for (name, value) in cols {
            let w = name.len().max(value.len());
            head.push(format!("{name:>w$}"));
            row.push(format!("{value:>w$}"));
        }
        format!("{}\n{}\n", head.join("  "), row.join("  "))
    }
}

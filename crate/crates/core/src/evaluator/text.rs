//! BLEU, ROUGE and a METEOR variant over word sequences.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

fn ngrams<'a>(words: &[&'a str], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut out = HashMap::new();
    if n == 0 || words.len() < n {
        return out;
    }
    for w in words.windows(n) {
        *out.entry(w.to_vec()).or_insert(0) += 1;
    }
    out
}

/// Clipped n-gram matches and candidate n-gram count against several references.
fn clipped(candidate: &[&str], references: &[Vec<&str>], n: usize) -> (usize, usize) {
    let cand = ngrams(candidate, n);
    let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
    for r in references {
        for (g, c) in ngrams(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matches = cand.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
    (matches, candidate.len().saturating_sub(n - 1))
}

/// Reference length closest to `c`, shorter on ties.
fn closest_ref_len(c: usize, references: &[Vec<&str>]) -> usize {
    references.iter().map(|r| r.len()).min_by_key(|&r| ((r as i64 - c as i64).abs(), r)).unwrap_or(0)
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

fn combine(matches: &[usize], totals: &[usize], c: usize, r: usize) -> f64 {
    if c == 0 || matches.iter().zip(totals).any(|(&m, &t)| m == 0 || t == 0) {
        return 0.0;
    }
    let n = matches.len() as f64;
    let log_p: f64 = matches.iter().zip(totals).map(|(&m, &t)| (m as f64 / t as f64).ln()).sum::<f64>() / n;
    brevity_penalty(c, r) * log_p.exp()
}

/// Sentence BLEU with uniform weights over 1..=n-grams, no smoothing.
pub fn bleu_n(candidate: &[&str], references: &[Vec<&str>], n: usize) -> f64 {
    let (m, t): (Vec<usize>, Vec<usize>) = (1..=n).map(|k| clipped(candidate, references, k)).unzip();
    combine(&m, &t, candidate.len(), closest_ref_len(candidate.len(), references))
}

/// Corpus BLEU: n-gram counts and lengths pooled over all pairs before combining.
pub fn corpus_bleu(pairs: &[(Vec<&str>, Vec<Vec<&str>>)], n: usize) -> f64 {
    let mut m = vec![0; n];
    let mut t = vec![0; n];
    let (mut c, mut r) = (0, 0);
    for (cand, refs) in pairs {
        for k in 1..=n {
            let (mk, tk) = clipped(cand, refs, k);
            m[k - 1] += mk;
            t[k - 1] += tk;
        }
        c += cand.len();
        r += closest_ref_len(cand.len(), refs);
    }
    combine(&m, &t, c, r)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(hits: usize, cand: usize, reference: usize) -> Self {
        let precision = if cand == 0 { 0.0 } else { hits as f64 / cand as f64 };
        let recall = if reference == 0 { 0.0 } else { hits as f64 / reference as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { precision, recall, f1 }
    }
}

/// ROUGE-N with clipped n-gram counts.
pub fn rouge_n(candidate: &[&str], reference: &[&str], n: usize) -> Prf {
    let c = ngrams(candidate, n);
    let r = ngrams(reference, n);
    let hits = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    Prf::from_counts(hits, c.values().sum(), r.values().sum())
}

pub fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    for x in a {
        let mut cur = vec![0; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &[&str], reference: &[&str]) -> Prf {
    Prf::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RougeVariant {
    One,
    Two,
    L,
}

pub fn rouge(candidate: &[&str], reference: &[&str], variant: RougeVariant) -> Prf {
    match variant {
        RougeVariant::One => rouge_n(candidate, reference, 1),
        RougeVariant::Two => rouge_n(candidate, reference, 2),
        RougeVariant::L => rouge_l(candidate, reference),
    }
}

/// Strips one common English suffix from words longer than four letters.
pub fn stem(word: &str) -> &str {
    for suffix in ["ing", "ed", "es", "ly", "s"] {
        if word.len() > 4 && word.ends_with(suffix) {
            return &word[..word.len() - suffix.len()];
        }
    }
    word
}

/// Candidate index to reference index, exact matches first, then stems.
/// Each stage scans the candidate left to right and takes the first free
/// reference position.
pub fn align(candidate: &[&str], reference: &[&str]) -> Vec<(usize, usize)> {
    let mut used_c = vec![false; candidate.len()];
    let mut used_r = vec![false; reference.len()];
    let mut pairs = Vec::new();
    let stages: [fn(&str) -> &str; 2] = [|w| w, stem];
    for key in stages {
        for (i, c) in candidate.iter().enumerate() {
            if used_c[i] {
                continue;
            }
            if let Some(j) = (0..reference.len()).find(|&j| !used_r[j] && key(reference[j]) == key(c)) {
                used_c[i] = true;
                used_r[j] = true;
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Runs of alignment pairs adjacent in both candidate and reference.
pub fn chunks(pairs: &[(usize, usize)]) -> usize {
    if pairs.is_empty() {
        return 0;
    }
    1 + pairs.windows(2).filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1)).count()
}

/// METEOR with exact and suffix-stem matching: `Fmean = 10PR / (R + 9P)`
/// times `1 − 0.5 (chunks/m)³`, the penalty applying only when the matches
/// form more than one chunk.
pub fn meteor(candidate: &[&str], reference: &[&str]) -> f64 {
    let pairs = align(candidate, reference);
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let ch = chunks(&pairs);
    let penalty = if ch > 1 { 0.5 * (ch as f64 / m as f64).powi(3) } else { 0.0 };
    fmean * (1.0 - penalty)
}

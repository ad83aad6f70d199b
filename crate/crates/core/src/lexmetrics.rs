//! Lexical diversity of an output group: Distinct-n, EAD-n, Self-BLEU and
//! Self-ROUGE-L.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pareto::{MetricValue, Orientation};

/// Added to the Distinct-n and EAD-n denominators.
pub const DISTINCT_EPS: f64 = 1e-10;
/// Replaces a zero modified n-gram precision in BLEU.
pub const BLEU_ZERO_PRECISION: f64 = 1e-9;
pub const BLEU_MAX_ORDER: usize = 4;

/// Whitespace split, with trailing punctuation detached one character per
/// token (`"end."` → `["end", "."]`). A chunk made only of punctuation stays
/// whole.
pub fn word_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let stem = chunk.trim_end_matches(|c: char| c.is_ascii_punctuation() || is_unicode_punct(c));
        if stem.is_empty() {
            out.push(chunk.to_string());
            continue;
        }
        out.push(stem.to_string());
        out.extend(chunk[stem.len()..].chars().map(String::from));
    }
    out
}

fn is_unicode_punct(c: char) -> bool {
    matches!(c, '…' | '“' | '”' | '‘' | '’' | '«' | '»' | '—' | '–' | '。' | '，' | '！' | '？')
}

fn ngrams<T>(seq: &[T], n: usize) -> impl Iterator<Item = &[T]> {
    let count = if n == 0 { 0 } else { (seq.len() + 1).saturating_sub(n) };
    (0..count).map(move |i| &seq[i..i + n])
}

/// (unique, total) n-gram counts over the multiset union of all outputs.
/// N-grams never span two outputs.
pub fn ngram_counts<T: Hash + Eq>(group: &[Vec<T>], n: usize) -> (usize, usize) {
    let mut set = HashSet::new();
    let mut total = 0;
    for seq in group {
        for g in ngrams(seq, n) {
            set.insert(g);
            total += 1;
        }
    }
    (set.len(), total)
}

/// `|unique n-grams| / (|n-grams| + ε)`; 0 when there are no n-grams.
pub fn distinct_n<T: Hash + Eq>(group: &[Vec<T>], n: usize) -> f64 {
    let (unique, total) = ngram_counts(group, n);
    if total == 0 {
        return 0.0;
    }
    unique as f64 / (total as f64 + DISTINCT_EPS)
}

/// Expected number of distinct n-grams among `total` uniform draws from
/// `V = vocab_size^n` types: `V · (1 − (1 − 1/V)^total)`, in log space.
pub fn ead_expected_unique(total: usize, vocab_size: usize, n: usize) -> f64 {
    let v = (vocab_size as f64).powi(n as i32);
    -v * (total as f64 * (-1.0 / v).ln_1p()).exp_m1()
}

/// Expectation-adjusted Distinct-n.
pub fn ead_n<T: Hash + Eq>(group: &[Vec<T>], n: usize, vocab_size: usize) -> Result<f64> {
    if vocab_size < 2 {
        return Err(Error::Input(format!("EAD needs a vocabulary of at least 2 types, got {vocab_size}")));
    }
    let (unique, total) = ngram_counts(group, n);
    if total == 0 {
        return Ok(0.0);
    }
    Ok(unique as f64 / (ead_expected_unique(total, vocab_size, n) + DISTINCT_EPS))
}

fn counts<T: Hash + Eq>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    for g in ngrams(seq, n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Sentence BLEU of `hyp` against several references: clipped n-gram
/// precisions up to order `min(4, |hyp|)`, uniform geometric mean, brevity
/// penalty against the closest reference length (shorter on ties). A zero
/// precision is replaced by 1e−9. An empty hypothesis scores 0.
pub fn sentence_bleu<T: Hash + Eq>(hyp: &[T], refs: &[&[T]]) -> f64 {
    if hyp.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let order = BLEU_MAX_ORDER.min(hyp.len());
    let mut log_sum = 0.0;
    for n in 1..=order {
        let hyp_counts = counts(hyp, n);
        let mut max_ref: HashMap<&[T], usize> = HashMap::new();
        for r in refs {
            for (g, c) in counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let clipped: usize = hyp_counts.iter().map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0))).sum();
        let denom = hyp.len() + 1 - n;
        let p = if clipped == 0 { BLEU_ZERO_PRECISION } else { clipped as f64 / denom as f64 };
        log_sum += p.ln();
    }
    let c = hyp.len();
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("non-empty refs");
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_sum / order as f64).exp()
}

/// Mean over outputs of BLEU(output, all other outputs). `None` below two
/// outputs.
pub fn self_bleu<T: Hash + Eq>(group: &[Vec<T>]) -> Option<f64> {
    if group.len() < 2 {
        return None;
    }
    let total: f64 = (0..group.len())
        .map(|i| {
            let refs: Vec<&[T]> = group.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, r)| r.as_slice()).collect();
            sentence_bleu(&group[i], &refs)
        })
        .sum();
    Some(total / group.len() as f64)
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// LCS F1 between two token sequences; 0 when they share nothing.
pub fn rouge_l_f1<T: Eq>(a: &[T], b: &[T]) -> f64 {
    let l = lcs_len(a, b);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / a.len() as f64;
    let r = l as f64 / b.len() as f64;
    2.0 * p * r / (p + r)
}

/// Mean over outputs of the mean ROUGE-L F1 against each other output.
pub fn self_rouge_l<T: Eq>(group: &[Vec<T>]) -> Option<f64> {
    let n = group.len();
    if n < 2 {
        return None;
    }
    let total: f64 = (0..n)
        .map(|i| {
            (0..n).filter(|&j| j != i).map(|j| rouge_l_f1(&group[i], &group[j])).sum::<f64>() / (n - 1) as f64
        })
        .sum();
    Some(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalReport {
    pub distinct_n: BTreeMap<usize, f64>,
    /// Over aligned-tokenizer tokens; empty when no tokenization was given.
    pub ead_n: BTreeMap<usize, f64>,
    pub self_bleu: Option<f64>,
    pub self_rouge_l: Option<f64>,
}

impl LexicalReport {
    /// `aligned_tokens` pairs each output's aligned-tokenizer token ids with
    /// that tokenizer's vocabulary size.
    pub fn compute(texts: &[&str], aligned_tokens: Option<(&[Vec<u32>], usize)>) -> Result<Self> {
        let words: Vec<Vec<String>> = texts.iter().map(|t| word_tokenize(t)).collect();
        let distinct_n = (1..=3).map(|n| (n, distinct_n(&words, n))).collect();
        let ead_n = match aligned_tokens {
            Some((toks, vocab)) => (1..=3).map(|n| Ok((n, ead_n(toks, n, vocab)?))).collect::<Result<_>>()?,
            None => BTreeMap::new(),
        };
        Ok(Self { distinct_n, ead_n, self_bleu: self_bleu(&words), self_rouge_l: self_rouge_l(&words) })
    }

    pub fn values(&self) -> Vec<MetricValue> {
        let mut out = Vec::new();
        for (n, v) in &self.distinct_n {
            out.push(MetricValue::new(format!("distinct_{n}"), Some(*v), Orientation::HigherBetter));
        }
        for (n, v) in &self.ead_n {
            out.push(MetricValue::new(format!("ead_{n}"), Some(*v), Orientation::HigherBetter));
        }
        out.push(MetricValue::new("self_bleu", self.self_bleu, Orientation::LowerBetter));
        out.push(MetricValue::new("self_rouge_l", self.self_rouge_l, Orientation::LowerBetter));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(texts: &[&str]) -> Vec<Vec<String>> {
        texts.iter().map(|t| word_tokenize(t)).collect()
    }

    #[test]
    fn tokenizer() {
        assert_eq!(word_tokenize("Hello, world!"), vec!["Hello", ",", "world", "!"]);
        assert_eq!(word_tokenize("  a\tb\n... c?!"), vec!["a", "b", "...", "c", "?", "!"]);
        assert_eq!(word_tokenize("don't stop"), vec!["don't", "stop"]);
        assert!(word_tokenize("").is_empty());
    }

    #[test]
    fn distinct_examples() {
        assert!((distinct_n(&toks(&["a b", "a c"]), 1) - 0.75).abs() < 1e-9);
        let same = vec![vec!["w"]; 10];
        assert!((distinct_n(&same, 1) - 0.1).abs() < 1e-9);
        assert_eq!(distinct_n(&toks(&["a b", "c"]), 3), 0.0);
        assert_eq!(distinct_n::<String>(&[], 1), 0.0);
    }

    #[test]
    fn ead_examples() {
        let one = vec![vec![5u32]];
        let v = ead_n(&one, 1, 128_000).unwrap();
        assert!((v - 1.0).abs() < 1e-5, "{v}");
        let v2 = ead_n(&one, 2, 128_000).unwrap();
        assert_eq!(v2, 0.0);
        let one_bigram = vec![vec![5u32, 6]];
        assert!((ead_n(&one_bigram, 2, 128_000).unwrap() - 1.0).abs() < 1e-5);
        assert_eq!(ead_n::<u32>(&[], 1, 100).unwrap(), 0.0);
        assert!(ead_n(&one, 1, 1).is_err());
        let dup = vec![vec![1u32, 1, 1, 1]];
        let uniq = vec![vec![1u32, 2, 3, 4]];
        assert!(ead_n(&dup, 1, 50).unwrap() < ead_n(&uniq, 1, 50).unwrap());
    }

    #[test]
    fn bleu_examples() {
        assert!((self_bleu(&toks(&["the cat sat", "the cat sat", "the cat sat"])).unwrap() - 1.0).abs() < 1e-12);
        assert!(self_bleu(&toks(&["a b c d", "e f g h"])).unwrap() < 1e-8);
        assert!((self_bleu(&toks(&["yes", "yes"])).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(self_bleu(&toks(&["only"])), None);
    }

    #[test]
    fn rouge_examples() {
        let g = toks(&["a b c d", "a c d e"]);
        assert!((rouge_l_f1(&g[0], &g[1]) - 0.75).abs() < 1e-12);
        assert!((self_rouge_l(&g).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(self_rouge_l(&toks(&["a b", "c d"])).unwrap(), 0.0);
        assert_eq!(self_rouge_l(&toks(&["x y", "x y", "x y"])).unwrap(), 1.0);
    }

    #[test]
    fn report_orientations() {
        let r = LexicalReport::compute(&["a b", "a c"], None).unwrap();
        let vals = r.values();
        let get = |n: &str| vals.iter().find(|v| v.name == n).unwrap().orientation;
        assert_eq!(get("distinct_1"), Orientation::HigherBetter);
        assert_eq!(get("self_bleu"), Orientation::LowerBetter);
        assert_eq!(get("self_rouge_l"), Orientation::LowerBetter);
    }

    fn group_strategy() -> impl Strategy<Value = Vec<Vec<u8>>> {
        prop::collection::vec(prop::collection::vec(0u8..8, 0..10), 2..6)
    }

    proptest! {
        #[test]
        fn ranges_and_permutation(g in group_strategy(), rot in 0usize..6) {
            let mut p = g.clone();
            let k = rot % p.len();
            p.rotate_left(k);
            for n in 1..=3 {
                let d = distinct_n(&g, n);
                prop_assert!((0.0..=1.0).contains(&d));
                prop_assert_eq!(d, distinct_n(&p, n));
                // unique / expected-unique is not bounded by 1: an all-unique
                // sample always beats its expectation
                let e = ead_n(&g, n, 8).unwrap();
                prop_assert!(e >= 0.0 && e.is_finite());
                prop_assert_eq!(e, ead_n(&p, n, 8).unwrap());
            }
            let b = self_bleu(&g).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&b));
            prop_assert!((b - self_bleu(&p).unwrap()).abs() < 1e-12);
            let r = self_rouge_l(&g).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!((r - self_rouge_l(&p).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn duplication_monotonicity(g in group_strategy(), pick in 0usize..6) {
            let mut d = g.clone();
            d.push(g[pick % g.len()].clone());
            for n in 1..=3 {
                prop_assert!(distinct_n(&d, n) <= distinct_n(&g, n) + 1e-12);
            }
            // a duplicate is a perfect match for its twin and cannot remove
            // any n-gram from another output's references
            prop_assert!(self_bleu(&d).unwrap() >= self_bleu(&g).unwrap() - 1e-12
                || g[pick % g.len()].is_empty());
        }
    }
}

//! Semantic diversity and quality metrics of an output group.
//!
//! Diversity: embedding cosine dissimilarity, Vendi score, NLI diversity,
//! entailment clustering with its cluster count (Distinct Score) and
//! semantic entropy. Quality: perplexity and log-probability under the
//! aligned model, and mean reward.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, ChatPrompt, ModelBackend, ScoringBackends, TokenId};
use crate::error::{Error, Result};
use crate::pareto::{MetricValue, Orientation};

/// Bidirectional entailment probability needed to join a cluster.
pub const ENTAILMENT_THRESHOLD: f64 = 0.5;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot(a, b) / (na * nb))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineResult {
    pub value: Option<f64>,
    /// Pairs skipped because an embedding had zero norm.
    pub excluded_pairs: Vec<(usize, usize)>,
}

/// Mean of `1 − cos(e_i, e_j)` over pairs i < j. Not clamped: anti-aligned
/// embeddings give values above 1.
pub fn cosine_dissimilarity(embeddings: &[Vec<f64>]) -> CosineResult {
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut excluded_pairs = Vec::new();
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            match cosine(&embeddings[i], &embeddings[j]) {
                Some(c) => {
                    sum += 1.0 - c;
                    count += 1;
                }
                None => excluded_pairs.push((i, j)),
            }
        }
    }
    CosineResult { value: (count > 0).then(|| sum / count as f64), excluded_pairs }
}

/// Cosine similarity matrix with unit diagonal; undefined entries are 0.
pub fn cosine_matrix(embeddings: &[Vec<f64>]) -> DMatrix<f64> {
    let n = embeddings.len();
    DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { cosine(&embeddings[i], &embeddings[j]).unwrap_or(0.0) })
}

/// `exp(H(λ))` for the eigenvalues λ of `K/n`. K is symmetrized, negative
/// eigenvalues are clipped to 0 and the spectrum renormalized to sum 1.
pub fn vendi_from_similarity(k: &DMatrix<f64>) -> Result<f64> {
    let n = k.nrows();
    if n == 0 || k.ncols() != n {
        return Err(Error::Input(format!("similarity matrix must be square and non-empty, got {}×{}", n, k.ncols())));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("similarity matrix has non-finite entries".into()));
    }
    let sym = (k + k.transpose()) * (0.5 / n as f64);
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("eigen-decomposition did not converge".into()))?;
    let lambdas: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0)).collect();
    let total: f64 = lambdas.iter().sum();
    if total <= 0.0 {
        return Err(Error::Numeric("similarity matrix has no positive spectrum".into()));
    }
    let h: f64 = lambdas.iter().map(|l| l / total).filter(|p| *p > 0.0).map(|p| -p * p.ln()).sum();
    Ok(h.exp())
}

pub fn vendi_score(embeddings: &[Vec<f64>]) -> Result<f64> {
    vendi_from_similarity(&cosine_matrix(embeddings))
}

/// Mean entailment probability P(y_i ⇒ y_j) over pairs i < j (premise y_i).
/// Lower means more diverse.
pub fn nli_diversity(texts: &[&str], scoring: &ScoringBackends) -> Result<Option<f64>, BackendError> {
    let n = texts.len();
    if n < 2 {
        return Ok(None);
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let probs = pairs
        .par_iter()
        .map(|&(i, j)| scoring.nli(texts[i], texts[j]).map(|p| p.entailment.clamp(0.0, 1.0)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(probs.iter().sum::<f64>() / probs.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticClustering {
    /// Sample indices per cluster, in order of foundation.
    pub clusters: Vec<Vec<usize>>,
    /// Per-sample sequence log-probability under the generating system.
    pub member_logprobs: Vec<f64>,
}

/// Greedy first-fit clustering: each sample joins the first cluster whose
/// first member it mutually entails (both directions ≥ 0.5), else founds a
/// new cluster.
pub fn cluster_semantic(
    texts: &[&str],
    logprobs: &[f64],
    scoring: &ScoringBackends,
) -> Result<SemanticClustering, BackendError> {
    if texts.len() != logprobs.len() {
        return Err(BackendError::Input(format!("{} texts but {} log-probabilities", texts.len(), logprobs.len())));
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    'sample: for (i, text) in texts.iter().enumerate() {
        for cluster in clusters.iter_mut() {
            let rep = texts[cluster[0]];
            if scoring.nli(rep, text)?.entailment >= ENTAILMENT_THRESHOLD
                && scoring.nli(text, rep)?.entailment >= ENTAILMENT_THRESHOLD
            {
                cluster.push(i);
                continue 'sample;
            }
        }
        clusters.push(vec![i]);
    }
    Ok(SemanticClustering { clusters, member_logprobs: logprobs.to_vec() })
}

pub fn distinct_score(c: &SemanticClustering) -> usize {
    c.clusters.len()
}

fn logsumexp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Shannon entropy (nats) of cluster masses; each cluster's log mass is the
/// logsumexp of its members, normalized across clusters. `None` when every
/// log-probability is −∞ or any is NaN.
pub fn semantic_entropy(c: &SemanticClustering) -> Option<f64> {
    if c.member_logprobs.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return None;
    }
    let cluster_logs: Vec<f64> =
        c.clusters.iter().map(|m| logsumexp(m.iter().map(|&i| c.member_logprobs[i]))).collect();
    let z = logsumexp(cluster_logs.iter().copied());
    if z == f64::NEG_INFINITY {
        return None;
    }
    let h = cluster_logs
        .iter()
        .map(|l| l - z)
        .filter(|lp| *lp > f64::NEG_INFINITY)
        .map(|lp| -lp.exp() * lp)
        .sum::<f64>();
    Some(h.max(0.0))
}

/// Log-probability of one output under the aligned model and its length in
/// aligned tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignedScore {
    pub logprob: f64,
    pub tokens: usize,
}

impl AlignedScore {
    pub fn perplexity(&self) -> f64 {
        (-self.logprob / self.tokens as f64).exp()
    }
}

/// Score one output under the aligned model. The end-of-sequence token is
/// appended when the output ended naturally. Empty outputs give `None`.
pub fn aligned_score(
    aligned: &dyn ModelBackend,
    prompt: &ChatPrompt,
    text: &str,
    ended: bool,
) -> Result<Option<AlignedScore>, BackendError> {
    if text.is_empty() {
        return Ok(None);
    }
    let context = aligned.encode_prompt(prompt)?;
    let mut cont: Vec<TokenId> = aligned.tokenize(text)?.into_iter().map(|t| t.id).collect();
    if ended {
        cont.push(aligned.eos().id);
    }
    let logprob = aligned.sequence_logprob(&context, &cont)?;
    Ok(Some(AlignedScore { logprob, tokens: cont.len() }))
}

/// Mean per-output perplexity; `None` when no output could be scored.
pub fn perplexity(scores: &[Option<AlignedScore>]) -> Option<f64> {
    mean(scores.iter().flatten().map(AlignedScore::perplexity))
}

pub fn mean_aligned_logprob(scores: &[Option<AlignedScore>]) -> Option<f64> {
    mean(scores.iter().flatten().map(|s| s.logprob))
}

pub fn mean_reward(prompt: &str, texts: &[&str], scoring: &ScoringBackends) -> Result<Option<f64>, BackendError> {
    let rewards = texts.par_iter().map(|t| scoring.reward(prompt, t)).collect::<Result<Vec<_>, _>>()?;
    Ok(mean(rewards))
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Semantic diversity and quality of one group. Missing values carry a note
/// in `flags`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SemanticReport {
    pub cosine_dissimilarity: Option<f64>,
    pub vendi: Option<f64>,
    pub nli_diversity: Option<f64>,
    pub distinct_score: Option<usize>,
    pub semantic_entropy: Option<f64>,
    pub perplexity: Option<f64>,
    pub aligned_logprob: Option<f64>,
    pub mean_reward: Option<f64>,
    pub flags: Vec<String>,
}

impl SemanticReport {
    pub fn values(&self) -> Vec<MetricValue> {
        use Orientation::*;
        vec![
            MetricValue::new("cosine_dissimilarity", self.cosine_dissimilarity, HigherBetter),
            MetricValue::new("vendi", self.vendi, HigherBetter),
            MetricValue::new("nli_diversity", self.nli_diversity, LowerBetter),
            MetricValue::new("distinct_score", self.distinct_score.map(|d| d as f64), HigherBetter),
            MetricValue::new("semantic_entropy", self.semantic_entropy, HigherBetter),
            MetricValue::new("perplexity", self.perplexity, LowerBetter),
            MetricValue::new("aligned_logprob", self.aligned_logprob, HigherBetter),
            MetricValue::new("mean_reward", self.mean_reward, HigherBetter),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::stub::{ConstantReward, EqualityNli, TableNli, TableReward};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn nli_backends(nli: impl crate::backends::NliModel + 'static) -> ScoringBackends {
        ScoringBackends::new().with_nli(Arc::new(nli))
    }

    #[test]
    fn cosine_examples() {
        let same = vec![vec![0.3, 0.4]; 4];
        assert!(cosine_dissimilarity(&same).value.unwrap().abs() < 1e-12);
        let orth = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
        assert!((cosine_dissimilarity(&orth).value.unwrap() - 1.0).abs() < 1e-12);
        let r = cosine_dissimilarity(&[vec![1.0, 0.0], vec![0.6, 0.8]]);
        assert!((r.value.unwrap() - 0.4).abs() < 1e-12);
        let anti = cosine_dissimilarity(&[vec![1.0, 0.0], vec![-1.0, 0.0]]);
        assert!((anti.value.unwrap() - 2.0).abs() < 1e-12);
        let z = cosine_dissimilarity(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(z.excluded_pairs, vec![(0, 1), (0, 2)]);
        assert!((z.value.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vendi_closed_forms() {
        let same = vec![vec![1.0, 2.0, 3.0]; 5];
        assert!((vendi_score(&same).unwrap() - 1.0).abs() < 1e-9);
        let eye: Vec<Vec<f64>> = (0..7).map(|i| (0..7).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        assert!((vendi_score(&eye).unwrap() - 7.0).abs() < 1e-9);
    }

    #[test]
    fn nli_examples() {
        let s = nli_backends(EqualityNli::new(Vec::<String>::new()));
        assert_eq!(nli_diversity(&["x", "x", "x"], &s).unwrap(), Some(1.0));
        let s = nli_backends(TableNli::new(Vec::<(String, String, f64)>::new(), 0.0));
        assert_eq!(nli_diversity(&["a", "b", "c"], &s).unwrap(), Some(0.0));
        let s = nli_backends(TableNli::new([("a", "b", 0.9), ("a", "c", 0.1), ("b", "c", 0.5)], 0.0));
        assert!((nli_diversity(&["a", "b", "c"], &s).unwrap().unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(nli_diversity(&["a"], &s).unwrap(), None);
    }

    #[test]
    fn clustering_examples() {
        let s = nli_backends(EqualityNli::new(Vec::<String>::new()));
        let c = cluster_semantic(&["x", "x", "x"], &[0.0; 3], &s).unwrap();
        assert_eq!(c.clusters, vec![vec![0, 1, 2]]);
        let c = cluster_semantic(&["a", "b", "c"], &[0.0; 3], &s).unwrap();
        assert_eq!(distinct_score(&c), 3);
        let s = nli_backends(TableNli::new([("a", "b", 0.8), ("b", "a", 0.6)], 0.0));
        let c = cluster_semantic(&["a", "b", "c"], &[0.0; 3], &s).unwrap();
        assert_eq!(c.clusters, vec![vec![0, 1], vec![2]]);
        // one direction is not enough
        let s = nli_backends(TableNli::new([("a", "b", 0.8), ("b", "a", 0.4)], 0.0));
        assert_eq!(distinct_score(&cluster_semantic(&["a", "b"], &[0.0; 2], &s).unwrap()), 2);
    }

    #[test]
    fn semantic_entropy_closed_forms() {
        let two = SemanticClustering { clusters: vec![vec![0], vec![1]], member_logprobs: vec![-3.0, -3.0] };
        assert!((semantic_entropy(&two).unwrap() - 2f64.ln()).abs() < 1e-12);
        let one = SemanticClustering { clusters: vec![vec![0, 1]], member_logprobs: vec![-1.0, -7.0] };
        assert_eq!(semantic_entropy(&one), Some(0.0));
        let l = |p: f64| p.ln();
        let three = SemanticClustering {
            clusters: vec![vec![0, 1], vec![2], vec![3]],
            member_logprobs: vec![l(0.1), l(0.1), l(0.1), l(0.1)],
        };
        assert!((semantic_entropy(&three).unwrap() - 1.5 * 2f64.ln()).abs() < 1e-12);
        let dead = SemanticClustering { clusters: vec![vec![0]], member_logprobs: vec![f64::NEG_INFINITY] };
        assert_eq!(semantic_entropy(&dead), None);
    }

    #[test]
    fn perplexity_examples() {
        let certain = [Some(AlignedScore { logprob: 0.0, tokens: 5 })];
        assert_eq!(perplexity(&certain), Some(1.0));
        let quarter = [Some(AlignedScore { logprob: 0.25f64.ln(), tokens: 1 })];
        assert!((perplexity(&quarter).unwrap() - 4.0).abs() < 1e-12);
        let uniform = [Some(AlignedScore { logprob: 6.0 * (1.0f64 / 7.0).ln(), tokens: 6 })];
        assert!((perplexity(&uniform).unwrap() - 7.0).abs() < 1e-9);
        assert_eq!(perplexity(&[None]), None);
    }

    #[test]
    fn reward_examples() {
        let s = ScoringBackends::new().with_reward(Arc::new(ConstantReward(7.62)));
        assert_eq!(mean_reward("p", &["a", "b"], &s).unwrap(), Some(7.62));
        let s = ScoringBackends::new().with_reward(Arc::new(TableReward::new([("a", 1.0), ("b", 3.0)], 0.0)));
        assert_eq!(mean_reward("p", &["a", "b"], &s).unwrap(), Some(2.0));
        assert_eq!(mean_reward("p", &[], &s).unwrap(), None);
    }

    proptest! {
        #[test]
        fn vendi_bounds(raw in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..8)) {
            let v = vendi_score(&raw).unwrap();
            prop_assert!(v >= 1.0 - 1e-9 && v <= raw.len() as f64 + 1e-9);
        }

        #[test]
        fn clustering_invariants_under_permutation(
            labels in prop::collection::vec(0u8..4, 1..9),
            lps in prop::collection::vec(-20.0f64..0.0, 9),
            rot in 0usize..9,
        ) {
            let texts: Vec<String> = labels.iter().map(|l| format!("t{l}")).collect();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let lp = &lps[..refs.len()];
            let s = nli_backends(EqualityNli::new(Vec::<String>::new()));
            let c = cluster_semantic(&refs, lp, &s).unwrap();
            let k = rot % refs.len();
            let mut pr = refs.clone();
            pr.rotate_left(k);
            let mut plp = lp.to_vec();
            plp.rotate_left(k);
            let pc = cluster_semantic(&pr, &plp, &s).unwrap();
            prop_assert_eq!(distinct_score(&c), distinct_score(&pc));
            let (a, b) = (semantic_entropy(&c).unwrap(), semantic_entropy(&pc).unwrap());
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!(a >= 0.0 && a <= (distinct_score(&c) as f64).ln() + 1e-9);
            let mut members: Vec<usize> = c.clusters.concat();
            members.sort();
            prop_assert_eq!(members, (0..refs.len()).collect::<Vec<_>>());
        }
    }
}

//! Deterministic in-process scoring backends for tests and synthetic runs.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::scoring::{Embedder, Judge, NliModel, NliProbs, RewardModel, ScoringBackends};
use super::BackendError;
use crate::lexmetrics::word_tokenize;

/// Looks texts up in a fixed table.
pub struct TableEmbedder {
    table: HashMap<String, Vec<f64>>,
}

impl TableEmbedder {
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = (S, Vec<f64>)>) -> Self {
        Self { table: entries.into_iter().map(|(k, v)| (k.into(), v)).collect() }
    }
}

impl Embedder for TableEmbedder {
    fn id(&self) -> &str {
        "stub:table-embedder"
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| BackendError::Input(format!("no stub embedding for {text:?}")))
    }
}

/// Bag of lowercase words hashed into `dim` buckets, L2-normalized.
pub struct HashedBowEmbedder {
    dim: usize,
    id: String,
}

impl HashedBowEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1), id: format!("stub:hashed-bow:{dim}") }
    }
}

impl Embedder for HashedBowEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let mut v = vec![0.0; self.dim];
        for w in word_tokenize(text) {
            let h = Sha256::digest(w.to_lowercase().as_bytes());
            let bucket = u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) as usize % self.dim;
            v[bucket] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

/// Entails iff the word sequences are equal once `ignore` words are dropped;
/// contradicts otherwise.
pub struct EqualityNli {
    ignore: Vec<String>,
}

impl EqualityNli {
    pub fn new<S: Into<String>>(ignore: impl IntoIterator<Item = S>) -> Self {
        Self { ignore: ignore.into_iter().map(Into::into).collect() }
    }

    fn normalize(&self, text: &str) -> Vec<String> {
        word_tokenize(text).into_iter().filter(|w| !self.ignore.contains(w)).collect()
    }
}

impl NliModel for EqualityNli {
    fn id(&self) -> &str {
        "stub:equality-nli"
    }

    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliProbs, BackendError> {
        Ok(if self.normalize(premise) == self.normalize(hypothesis) { NliProbs::ENTAIL } else { NliProbs::CONTRADICT })
    }
}

/// Fixed entailment probabilities for ordered (premise, hypothesis) pairs.
/// Identical texts entail; unlisted pairs use `default_entailment`.
pub struct TableNli {
    table: HashMap<(String, String), f64>,
    default_entailment: f64,
}

impl TableNli {
    pub fn new<S: Into<String>>(pairs: impl IntoIterator<Item = (S, S, f64)>, default_entailment: f64) -> Self {
        Self {
            table: pairs.into_iter().map(|(p, h, e)| ((p.into(), h.into()), e)).collect(),
            default_entailment,
        }
    }
}

impl NliModel for TableNli {
    fn id(&self) -> &str {
        "stub:table-nli"
    }

    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliProbs, BackendError> {
        let e = match self.table.get(&(premise.to_string(), hypothesis.to_string())) {
            Some(e) => *e,
            None if premise == hypothesis => 1.0,
            None => self.default_entailment,
        };
        Ok(NliProbs { entailment: e, neutral: 0.0, contradiction: 1.0 - e })
    }
}

pub struct ConstantReward(pub f64);

impl RewardModel for ConstantReward {
    fn id(&self) -> &str {
        "stub:constant-reward"
    }

    fn reward(&self, _prompt: &str, _output: &str) -> Result<f64, BackendError> {
        Ok(self.0)
    }
}

/// Reward looked up by output text.
pub struct TableReward {
    table: HashMap<String, f64>,
    default: f64,
}

impl TableReward {
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = (S, f64)>, default: f64) -> Self {
        Self { table: entries.into_iter().map(|(k, v)| (k.into(), v)).collect(), default }
    }
}

impl RewardModel for TableReward {
    fn id(&self) -> &str {
        "stub:table-reward"
    }

    fn reward(&self, _prompt: &str, output: &str) -> Result<f64, BackendError> {
        Ok(self.table.get(output).copied().unwrap_or(self.default))
    }
}

/// Judge that answers through a closure.
pub struct FnJudge<F>(pub F);

impl<F> Judge for FnJudge<F>
where
    F: Fn(&str) -> Result<String, BackendError> + Send + Sync,
{
    fn id(&self) -> &str {
        "stub:fn-judge"
    }

    fn chat(&self, prompt: &str) -> Result<String, BackendError> {
        (self.0)(prompt)
    }
}

/// Serializable description of stub scorers, used by experiment configs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StubScoringSpec {
    /// Dimension of the hashed bag-of-words embedder.
    #[serde(default)]
    pub embedder_dim: Option<usize>,
    /// Words ignored by the equality NLI stub; `None` disables NLI.
    #[serde(default)]
    pub nli_ignore: Option<Vec<String>>,
    #[serde(default)]
    pub constant_reward: Option<f64>,
    /// Fixed judge reply.
    #[serde(default)]
    pub judge_reply: Option<String>,
}

impl StubScoringSpec {
    pub fn build(&self) -> ScoringBackends {
        let mut s = ScoringBackends::new();
        if let Some(dim) = self.embedder_dim {
            s = s.with_embedder(Arc::new(HashedBowEmbedder::new(dim)));
        }
        if let Some(ignore) = &self.nli_ignore {
            s = s.with_nli(Arc::new(EqualityNli::new(ignore.clone())));
        }
        if let Some(r) = self.constant_reward {
            s = s.with_reward(Arc::new(ConstantReward(r)));
        }
        if let Some(reply) = self.judge_reply.clone() {
            s = s.with_judge(Arc::new(FnJudge(move |_: &str| Ok(reply.clone()))));
        }
        s
    }
}

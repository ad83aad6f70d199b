//! Auxiliary scoring capabilities consumed by the metrics.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::cache::ScoreCache;
use super::BackendError;

pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError>;
}

/// Probabilities of (entailment, neutral, contradiction).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliProbs {
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

impl NliProbs {
    pub const ENTAIL: NliProbs = NliProbs { entailment: 1.0, neutral: 0.0, contradiction: 0.0 };
    pub const CONTRADICT: NliProbs = NliProbs { entailment: 0.0, neutral: 0.0, contradiction: 1.0 };

    pub fn validate(self) -> Result<Self, BackendError> {
        let parts = [self.entailment, self.neutral, self.contradiction];
        let sum: f64 = parts.iter().sum();
        if parts.iter().any(|p| !p.is_finite() || *p < -1e-9) || (sum - 1.0).abs() > 1e-6 {
            return Err(BackendError::Protocol(format!("nli probabilities {parts:?} do not sum to 1")));
        }
        Ok(self)
    }
}

pub trait NliModel: Send + Sync {
    fn id(&self) -> &str;
    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliProbs, BackendError>;
}

pub trait RewardModel: Send + Sync {
    fn id(&self) -> &str;
    fn reward(&self, prompt: &str, output: &str) -> Result<f64, BackendError>;
}

/// A chat model used as a judge or annotator.
pub trait Judge: Send + Sync {
    fn id(&self) -> &str;
    fn chat(&self, prompt: &str) -> Result<String, BackendError>;
}

/// Bundle of optional scoring backends. Every call goes through a per-run
/// cache keyed by the SHA-256 of (backend id, request payload).
#[derive(Clone, Default)]
pub struct ScoringBackends {
    embedder: Option<Arc<dyn Embedder>>,
    nli: Option<Arc<dyn NliModel>>,
    reward: Option<Arc<dyn RewardModel>>,
    judge: Option<Arc<dyn Judge>>,
    embed_cache: Arc<ScoreCache<Vec<f64>>>,
    nli_cache: Arc<ScoreCache<NliProbs>>,
    reward_cache: Arc<ScoreCache<f64>>,
    embed_dim: Arc<std::sync::OnceLock<usize>>,
}

impl ScoringBackends {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_embedder(mut self, e: Arc<dyn Embedder>) -> Self {
        self.embedder = Some(e);
        self
    }

    pub fn with_nli(mut self, n: Arc<dyn NliModel>) -> Self {
        self.nli = Some(n);
        self
    }

    pub fn with_reward(mut self, r: Arc<dyn RewardModel>) -> Self {
        self.reward = Some(r);
        self
    }

    pub fn with_judge(mut self, j: Arc<dyn Judge>) -> Self {
        self.judge = Some(j);
        self
    }

    pub fn has_embedder(&self) -> bool {
        self.embedder.is_some()
    }

    pub fn has_nli(&self) -> bool {
        self.nli.is_some()
    }

    pub fn has_reward(&self) -> bool {
        self.reward.is_some()
    }

    pub fn judge(&self) -> Option<&Arc<dyn Judge>> {
        self.judge.as_ref()
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let e = self.embedder.as_ref().ok_or_else(|| BackendError::Unavailable("embedder".into()))?;
        let v = self.embed_cache.get_or_try_insert(e.id(), &[text], || e.embed(text))?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(BackendError::Protocol("embedding contains non-finite values".into()));
        }
        let dim = *self.embed_dim.get_or_init(|| v.len());
        if v.len() != dim {
            return Err(BackendError::Protocol(format!("embedding dimension {} != {dim}", v.len())));
        }
        Ok(v)
    }

    pub fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliProbs, BackendError> {
        let n = self.nli.as_ref().ok_or_else(|| BackendError::Unavailable("nli".into()))?;
        self.nli_cache
            .get_or_try_insert(n.id(), &[premise, hypothesis], || n.classify(premise, hypothesis)?.validate())
    }

    pub fn reward(&self, prompt: &str, output: &str) -> Result<f64, BackendError> {
        let r = self.reward.as_ref().ok_or_else(|| BackendError::Unavailable("reward".into()))?;
        let v = self.reward_cache.get_or_try_insert(r.id(), &[prompt, output], || r.reward(prompt, output))?;
        if !v.is_finite() {
            return Err(BackendError::Protocol(format!("non-finite reward {v}")));
        }
        Ok(v)
    }

    /// Judge calls are not cached: the decoder issues each prompt once.
    pub fn chat(&self, prompt: &str) -> Result<String, BackendError> {
        let j = self.judge.as_ref().ok_or_else(|| BackendError::Unavailable("judge".into()))?;
        j.chat(prompt)
    }

    /// Number of (hits, misses) over all caches.
    pub fn cache_stats(&self) -> (u64, u64) {
        let parts = [self.embed_cache.stats(), self.nli_cache.stats(), self.reward_cache.stats()];
        parts.iter().fold((0, 0), |(h, m), (a, b)| (h + a, m + b))
    }
}

//! Model and scoring backends.
//!
//! Everything the decoder and the metrics need from a language model goes
//! through [`ModelBackend`]; everything the metrics need from auxiliary
//! models (embedders, NLI, reward, judge) goes through [`ScoringBackends`].
//! Two implementations ship with the crate: a deterministic template model
//! ([`synthetic::SyntheticModel`]) and a JSON-over-HTTP client
//! ([`http::HttpModel`], [`http::HttpScorer`]).

pub mod cache;
pub mod http;
pub mod scoring;
pub mod stub;
pub mod synthetic;

use serde::{Deserialize, Serialize};

pub use crate::error::BackendError;
pub use scoring::{Embedder, Judge, NliModel, NliProbs, RewardModel, ScoringBackends};

pub type TokenId = u32;

/// Tolerance on `sum(probabilities) + residual_mass == 1`.
pub const MASS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub id: TokenId,
    /// Surface text, including any leading-space marker.
    pub surface: String,
}

impl Token {
    pub fn new(id: TokenId, surface: impl Into<String>) -> Self {
        Self { id, surface: surface.into() }
    }
}

/// A finite next-token distribution.
///
/// Entries are kept sorted by probability (descending), ties broken by
/// ascending token id. A server that only reports its top-k tokens yields a
/// `truncated` distribution whose `residual_mass` holds the unlisted mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    entries: Vec<(Token, f64)>,
    truncated: bool,
    residual_mass: f64,
}

impl TokenDistribution {
    /// Validate and sort. Fails if any probability is outside `[0, 1]` or the
    /// total mass is off by more than [`MASS_TOLERANCE`].
    pub fn new(
        mut entries: Vec<(Token, f64)>,
        truncated: bool,
        residual_mass: f64,
    ) -> Result<Self, BackendError> {
        if !(0.0..=1.0 + MASS_TOLERANCE).contains(&residual_mass) {
            return Err(BackendError::Protocol(format!("residual mass {residual_mass} outside [0,1]")));
        }
        let mut total = residual_mass;
        for (tok, p) in &entries {
            if !p.is_finite() || *p < 0.0 || *p > 1.0 + MASS_TOLERANCE {
                return Err(BackendError::Protocol(format!(
                    "probability {p} for token {} outside [0,1]",
                    tok.id
                )));
            }
            total += p;
        }
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(BackendError::Protocol(format!("distribution mass {total} != 1")));
        }
        if truncated && entries.is_empty() {
            return Err(BackendError::Protocol("truncated distribution lists no tokens".into()));
        }
        sort_entries(&mut entries);
        Ok(Self { entries, truncated, residual_mass })
    }

    /// Build a full (non-truncated) distribution from unnormalized weights.
    /// Zero-weight entries are dropped.
    pub fn from_weights(weights: impl IntoIterator<Item = (Token, f64)>) -> Result<Self, BackendError> {
        let mut entries: Vec<(Token, f64)> = weights.into_iter().filter(|(_, w)| *w > 0.0).collect();
        let total: f64 = entries.iter().map(|(_, w)| *w).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(BackendError::Input("distribution has no positive mass".into()));
        }
        for e in &mut entries {
            e.1 /= total;
        }
        Self::new(entries, false, 0.0)
    }

    pub fn entries(&self) -> &[(Token, f64)] {
        &self.entries
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    pub fn residual_mass(&self) -> f64 {
        self.residual_mass
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top1(&self) -> Option<&Token> {
        self.entries.first().map(|(t, _)| t)
    }

    pub fn max_prob(&self) -> f64 {
        self.entries.first().map_or(0.0, |(_, p)| *p)
    }

    pub fn prob_of(&self, id: TokenId) -> Option<f64> {
        self.entries.iter().find(|(t, _)| t.id == id).map(|(_, p)| *p)
    }

    /// Shannon entropy in nats. The residual mass of a truncated distribution
    /// enters as one extra pseudo-entry, which underestimates the entropy of
    /// the unlisted tail.
    pub fn entropy(&self) -> f64 {
        let mut h = 0.0;
        for (_, p) in &self.entries {
            if *p > 0.0 {
                h -= p * p.ln();
            }
        }
        if self.residual_mass > 0.0 {
            h -= self.residual_mass * self.residual_mass.ln();
        }
        h.max(0.0)
    }
}

pub(crate) fn sort_entries(entries: &mut [(Token, f64)]) {
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.id.cmp(&b.0.id)));
}

/// A (system, user) pair rendered into a model context by the backend's chat
/// template.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatPrompt {
    pub system: Option<String>,
    pub user: String,
}

impl ChatPrompt {
    pub fn user(text: impl Into<String>) -> Self {
        Self { system: None, user: text.into() }
    }
}

/// How a backend turns a [`ChatPrompt`] into tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatTemplate {
    /// The model's own chat template (aligned models).
    #[default]
    Native,
    /// Plain text concatenation (base models).
    Plain,
}

impl ChatTemplate {
    /// Text rendering used by the plain template.
    pub fn render_plain(prompt: &ChatPrompt) -> String {
        match &prompt.system {
            Some(sys) => format!("{sys}\n\n{}\n\n", prompt.user),
            None => format!("{}\n\n", prompt.user),
        }
    }
}

/// A language model exposing next-token distributions.
///
/// `next_token_distribution` must be a pure function of the context and the
/// backend identity.
pub trait ModelBackend: Send + Sync {
    fn id(&self) -> &str;

    fn vocab_size(&self) -> usize;

    /// Identifies the tokenizer. Two backends with equal fingerprints share
    /// token ids and contexts can be exchanged without retokenization.
    fn vocab_fingerprint(&self) -> &str;

    fn eos(&self) -> &Token;

    fn context_limit(&self) -> usize;

    /// Render the prompt with this backend's chat template.
    fn encode_prompt(&self, prompt: &ChatPrompt) -> Result<Vec<TokenId>, BackendError>;

    /// Tokenize a response continuation (no chat template, no special tokens).
    fn tokenize(&self, text: &str) -> Result<Vec<Token>, BackendError>;

    fn next_token_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution, BackendError>;

    /// Σ_t log P(y_t | context, y_<t), in nats.
    fn sequence_logprob(&self, context: &[TokenId], continuation: &[TokenId]) -> Result<f64, BackendError> {
        if continuation.is_empty() {
            return Err(BackendError::Input("empty continuation".into()));
        }
        let mut ctx = context.to_vec();
        let mut total = 0.0;
        for &id in continuation {
            if id as usize >= self.vocab_size() {
                return Err(BackendError::Input(format!("token {id} not in vocabulary")));
            }
            let dist = self.next_token_distribution(&ctx)?;
            match dist.prob_of(id) {
                Some(p) => total += p.ln(),
                None if dist.is_truncated() => {
                    return Err(BackendError::Protocol(format!(
                        "token {id} outside the truncated distribution; use a server-side logprob"
                    )))
                }
                None => return Ok(f64::NEG_INFINITY),
            }
            ctx.push(id);
        }
        Ok(total)
    }
}

/// Concatenate surfaces and drop the sequence-start space marker.
pub fn detokenize<'a>(surfaces: impl IntoIterator<Item = &'a str>) -> String {
    let joined: String = surfaces.into_iter().collect();
    match joined.strip_prefix(' ') {
        Some(rest) => rest.to_string(),
        None => joined,
    }
}

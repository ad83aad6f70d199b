//! JSON-over-HTTP backends.
//!
//! Every capability is one POST endpoint under `/v1/`:
//!
//! | endpoint          | request                                   | response                                          |
//! |-------------------|-------------------------------------------|---------------------------------------------------|
//! | `info`            | `{model}`                                 | `{vocab_size, eos: [id, surface], context_limit, vocab_fingerprint}` |
//! | `tokenize`        | `{model, text}` or `{model, chat: {system, user}}` | `{tokens: [[id, surface], ...]}`          |
//! | `next_token`      | `{model, context: [id...], top_k}`        | `{entries: [[id, surface, prob], ...], residual_mass}` |
//! | `seq_logprob`     | `{model, context, continuation}`          | `{logprob}`                                       |
//! | `embed`           | `{model, text}`                           | `{embedding: [f64...]}`                           |
//! | `nli`             | `{model, premise, hypothesis}`            | `{entailment, neutral, contradiction}`            |
//! | `reward`          | `{model, prompt, output}`                 | `{reward}`                                        |
//! | `chat`            | `{model, messages: [{role, content}]}`    | `{reply}`                                         |
//!
//! Connection failures, timeouts, 429 and 5xx responses are reported as
//! retryable [`BackendError::Transport`]; other 4xx as
//! [`BackendError::Input`]; undecodable bodies as [`BackendError::Protocol`].
//! When `BACO_API_TOKEN` is set it is sent as a bearer token.

use std::time::Duration;

use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::scoring::{Embedder, Judge, NliModel, NliProbs, RewardModel};
use super::{BackendError, ChatPrompt, ChatTemplate, ModelBackend, Token, TokenDistribution, TokenId};

pub const TOKEN_ENV: &str = "BACO_API_TOKEN";

fn default_top_k() -> usize {
    100
}

fn default_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpModelConfig {
    pub url: String,
    pub model: String,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub chat_template: ChatTemplate,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

#[derive(Debug, Clone)]
struct Endpoint {
    client: Client,
    base: String,
    token: Option<String>,
}

impl Endpoint {
    fn new(url: &str, timeout_secs: u64) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            base: url.trim_end_matches('/').to_string(),
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
        })
    }

    fn post<R: DeserializeOwned>(&self, path: &str, body: &serde_json::Value) -> Result<R, BackendError> {
        let url = format!("{}/v1/{path}", self.base);
        let mut req = self.client.post(&url).json(body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(format!("{url}: {e}")))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transport(format!("{url}: {e}")))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(BackendError::Transport(format!("{url}: HTTP {status}: {text}")));
        }
        if !status.is_success() {
            return Err(BackendError::Input(format!("{url}: HTTP {status}: {text}")));
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Protocol(format!("{url}: {e}")))
    }
}

#[derive(Deserialize)]
struct InfoResponse {
    vocab_size: usize,
    eos: (TokenId, String),
    context_limit: usize,
    #[serde(default)]
    vocab_fingerprint: Option<String>,
}

#[derive(Deserialize)]
struct TokenizeResponse {
    tokens: Vec<(TokenId, String)>,
}

#[derive(Debug, Deserialize)]
pub(crate) struct NextTokenResponse {
    pub entries: Vec<(TokenId, String, f64)>,
    #[serde(default)]
    pub residual_mass: f64,
}

impl NextTokenResponse {
    pub(crate) fn into_distribution(self) -> Result<TokenDistribution, BackendError> {
        let truncated = self.residual_mass > 0.0;
        let entries = self.entries.into_iter().map(|(id, s, p)| (Token::new(id, s), p)).collect();
        TokenDistribution::new(entries, truncated, self.residual_mass)
    }
}

/// A language model served over HTTP.
pub struct HttpModel {
    endpoint: Endpoint,
    config: HttpModelConfig,
    id: String,
    vocab_size: usize,
    fingerprint: String,
    eos: Token,
    context_limit: usize,
}

impl HttpModel {
    /// Connects and fetches the model's vocabulary metadata.
    pub fn connect(config: HttpModelConfig) -> Result<Self, BackendError> {
        let endpoint = Endpoint::new(&config.url, config.timeout_secs)?;
        let info: InfoResponse = endpoint.post("info", &json!({ "model": config.model }))?;
        if info.vocab_size == 0 {
            return Err(BackendError::Protocol("server reports empty vocabulary".into()));
        }
        Ok(Self {
            id: format!("http:{}:{}", endpoint.base, config.model),
            fingerprint: info.vocab_fingerprint.unwrap_or_else(|| format!("http-vocab:{}", config.model)),
            vocab_size: info.vocab_size,
            eos: Token::new(info.eos.0, info.eos.1),
            context_limit: info.context_limit,
            endpoint,
            config,
        })
    }

    fn check_context(&self, context: &[TokenId]) -> Result<(), BackendError> {
        if context.is_empty() {
            return Err(BackendError::Input("empty context".into()));
        }
        if context.len() > self.context_limit {
            return Err(BackendError::Input(format!(
                "context of {} tokens exceeds limit {}",
                context.len(),
                self.context_limit
            )));
        }
        Ok(())
    }
}

impl ModelBackend for HttpModel {
    fn id(&self) -> &str {
        &self.id
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn vocab_fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn eos(&self) -> &Token {
        &self.eos
    }

    fn context_limit(&self) -> usize {
        self.context_limit
    }

    fn encode_prompt(&self, prompt: &ChatPrompt) -> Result<Vec<TokenId>, BackendError> {
        let body = match self.config.chat_template {
            ChatTemplate::Native => json!({
                "model": self.config.model,
                "chat": { "system": prompt.system, "user": prompt.user },
            }),
            ChatTemplate::Plain => json!({
                "model": self.config.model,
                "text": ChatTemplate::render_plain(prompt),
            }),
        };
        let r: TokenizeResponse = self.endpoint.post("tokenize", &body)?;
        Ok(r.tokens.into_iter().map(|(id, _)| id).collect())
    }

    fn tokenize(&self, text: &str) -> Result<Vec<Token>, BackendError> {
        let r: TokenizeResponse =
            self.endpoint.post("tokenize", &json!({ "model": self.config.model, "text": text }))?;
        Ok(r.tokens.into_iter().map(|(id, s)| Token::new(id, s)).collect())
    }

    fn next_token_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution, BackendError> {
        self.check_context(context)?;
        let r: NextTokenResponse = self.endpoint.post(
            "next_token",
            &json!({ "model": self.config.model, "context": context, "top_k": self.config.top_k }),
        )?;
        r.into_distribution()
    }

    fn sequence_logprob(&self, context: &[TokenId], continuation: &[TokenId]) -> Result<f64, BackendError> {
        if continuation.is_empty() {
            return Err(BackendError::Input("empty continuation".into()));
        }
        self.check_context(context)?;
        #[derive(Deserialize)]
        struct R {
            logprob: f64,
        }
        let r: R = self.endpoint.post(
            "seq_logprob",
            &json!({ "model": self.config.model, "context": context, "continuation": continuation }),
        )?;
        if r.logprob > 1e-9 || r.logprob.is_nan() {
            return Err(BackendError::Protocol(format!("log-probability {} > 0", r.logprob)));
        }
        Ok(r.logprob.min(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpScorerConfig {
    pub url: String,
    #[serde(default)]
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

/// One scoring server implementing any of `embed`, `nli`, `reward`, `chat`.
pub struct HttpScorer {
    endpoint: Endpoint,
    model: String,
    id: String,
}

impl HttpScorer {
    pub fn new(config: &HttpScorerConfig) -> Result<Self, BackendError> {
        let endpoint = Endpoint::new(&config.url, config.timeout_secs)?;
        Ok(Self { id: format!("http:{}:{}", endpoint.base, config.model), endpoint, model: config.model.clone() })
    }
}

impl Embedder for HttpScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        #[derive(Deserialize)]
        struct R {
            embedding: Vec<f64>,
        }
        let r: R = self.endpoint.post("embed", &json!({ "model": self.model, "text": text }))?;
        Ok(r.embedding)
    }
}

impl NliModel for HttpScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliProbs, BackendError> {
        let r: NliProbs = self
            .endpoint
            .post("nli", &json!({ "model": self.model, "premise": premise, "hypothesis": hypothesis }))?;
        r.validate()
    }
}

impl RewardModel for HttpScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn reward(&self, prompt: &str, output: &str) -> Result<f64, BackendError> {
        #[derive(Deserialize)]
        struct R {
            reward: f64,
        }
        let r: R = self.endpoint.post("reward", &json!({ "model": self.model, "prompt": prompt, "output": output }))?;
        Ok(r.reward)
    }
}

impl Judge for HttpScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn chat(&self, prompt: &str) -> Result<String, BackendError> {
        #[derive(Deserialize)]
        struct R {
            reply: String,
        }
        let r: R = self.endpoint.post(
            "chat",
            &json!({ "model": self.model, "messages": [{ "role": "user", "content": prompt }] }),
        )?;
        Ok(r.reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_response_records_residual() {
        let r: NextTokenResponse =
            serde_json::from_str(r#"{"entries": [[5, " a", 0.6], [7, " b", 0.3]], "residual_mass": 0.1}"#).unwrap();
        let d = r.into_distribution().unwrap();
        assert!(d.is_truncated());
        let listed: f64 = d.entries().iter().map(|(_, p)| p).sum();
        assert!((d.residual_mass() - (1.0 - listed)).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_mass_is_a_protocol_error() {
        let r: NextTokenResponse =
            serde_json::from_str(r#"{"entries": [[5, " a", 0.6]], "residual_mass": 0.1}"#).unwrap();
        assert!(matches!(r.into_distribution(), Err(BackendError::Protocol(_))));
    }

    #[test]
    fn unreachable_server_is_retryable() {
        let cfg = HttpModelConfig {
            url: "http://127.0.0.1:9".into(),
            model: "m".into(),
            top_k: 5,
            chat_template: ChatTemplate::Native,
            timeout_secs: 2,
        };
        let err = HttpModel::connect(cfg).err().unwrap();
        assert!(err.is_retryable(), "{err}");
    }
}

//! Collaborative decoding between a base and an aligned model.
//!
//! One trace proceeds token by token. The model that emitted the previous
//! token (the active model) proposes a candidate. If the candidate continues
//! the current word it is emitted directly. If it starts a new word (or is
//! end-of-sequence) the step is a routing step: the other model is queried,
//! its candidate is drawn among word-start tokens, and the router picks which
//! candidate is emitted. The first token always comes from the aligned model.
//!
//! End-of-sequence is accepted only when it is the aligned model's raw top-1.
//! Otherwise it is removed from the chosen model's raw distribution, sampling
//! parameters are reapplied, and a replacement is drawn. If nothing remains,
//! the other model's candidate is used; if neither model can continue the
//! trace ends as `max_tokens`.
//!
//! Randomness is counter-based: every draw uses a ChaCha stream keyed by
//! (seed, prompt id, sample id) and selected by (step, purpose), so a trace
//! is reproducible and independent of scheduling and of retries.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{detokenize, BackendError, ChatPrompt, ModelBackend, Token, TokenDistribution, TokenId};
use crate::error::{Error, Result};
use crate::lexeme::is_word_boundary;
use crate::router::{Router, RoutingInputs, Source, StrategySpec};

fn default_temperature() -> f64 {
    1.0
}

fn default_top_p() -> f64 {
    0.9
}

fn default_max_tokens() -> usize {
    256
}

fn default_samples() -> usize {
    10
}

fn default_retries() -> usize {
    3
}

/// Sampling and group parameters shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default = "default_samples")]
    pub samples_per_prompt: usize,
    #[serde(default)]
    pub seed: u64,
    /// Attempts per trace after a retryable backend error.
    #[serde(default = "default_retries")]
    pub retries: usize,
    #[serde(default)]
    pub system_prompt: Option<String>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            temperature: default_temperature(),
            top_p: default_top_p(),
            max_tokens: default_max_tokens(),
            samples_per_prompt: default_samples(),
            seed: 0,
            retries: default_retries(),
            system_prompt: None,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if self.max_tokens == 0 || self.samples_per_prompt == 0 {
            return Err(Error::Config("max_tokens and samples_per_prompt must be positive".into()));
        }
        Ok(())
    }
}

/// Which model(s) produce the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Baco { strategy: StrategySpec },
    BaseOnly,
    AlignedOnly,
}

/// Temperature first (`p^(1/T)`, renormalized), then the smallest prefix of
/// the sorted entries with cumulative mass ≥ `top_p`, renormalized. The
/// residual mass of a truncated distribution is dropped.
pub fn apply_sampling(dist: &TokenDistribution, temperature: f64, top_p: f64) -> Result<TokenDistribution> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    if dist.is_empty() {
        return Err(Error::Input("cannot sample from an empty distribution".into()));
    }
    let inv_t = 1.0 / temperature;
    // log-space keeps tiny probabilities finite at low temperature
    let logs: Vec<f64> = dist.entries().iter().map(|(_, p)| p.ln() * inv_t).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = scaled.iter().sum();
    let mut kept = Vec::new();
    let mut cum = 0.0;
    for ((tok, _), w) in dist.entries().iter().zip(&scaled) {
        let p = w / total;
        kept.push((tok.clone(), p));
        cum += p;
        if cum >= top_p - 1e-12 {
            break;
        }
    }
    Ok(TokenDistribution::from_weights(kept)?)
}

/// Inverse-CDF draw over the listed entries.
pub fn sample_token<R: Rng + ?Sized>(dist: &TokenDistribution, rng: &mut R) -> Option<(Token, f64)> {
    let u: f64 = rng.random();
    let total: f64 = dist.entries().iter().map(|(_, p)| p).sum();
    let mut cum = 0.0;
    for (tok, p) in dist.entries() {
        cum += p / total;
        if u < cum {
            return Some((tok.clone(), *p / total));
        }
    }
    dist.entries().last().map(|(t, p)| (t.clone(), p / total))
}

/// Entries kept by `keep`, renormalized; `None` when nothing survives.
fn restrict(dist: &TokenDistribution, keep: impl Fn(&Token) -> bool) -> Option<TokenDistribution> {
    let kept: Vec<_> = dist.entries().iter().filter(|(t, _)| keep(t)).cloned().collect();
    if kept.is_empty() {
        return None;
    }
    TokenDistribution::from_weights(kept).ok()
}

#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Purpose {
    Aligned = 0,
    Base = 1,
    Router = 2,
    AlignedRetry = 3,
    BaseRetry = 4,
}

impl Purpose {
    fn draw(src: Source) -> Self {
        match src {
            Source::Aligned => Purpose::Aligned,
            Source::Base => Purpose::Base,
        }
    }

    fn retry(src: Source) -> Self {
        match src {
            Source::Aligned => Purpose::AlignedRetry,
            Source::Base => Purpose::BaseRetry,
        }
    }
}

/// Counter-based randomness for one trace.
#[derive(Debug, Clone)]
pub struct TraceRng {
    key: [u8; 32],
}

impl TraceRng {
    pub fn new(seed: u64, prompt_id: &str, sample_id: usize) -> Self {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update((prompt_id.len() as u64).to_le_bytes());
        h.update(prompt_id.as_bytes());
        h.update((sample_id as u64).to_le_bytes());
        Self { key: h.finalize().into() }
    }

    fn stream(&self, step: usize, purpose: Purpose) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(((step as u64) << 3) | purpose as u64);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    EosAlignedTop1,
    MaxTokens,
}

/// One emitted token, serialized as `[surface, source, reason]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceToken(pub String, pub Source, pub String);

impl TraceToken {
    pub fn surface(&self) -> &str {
        &self.0
    }

    pub fn source(&self) -> Source {
        self.1
    }

    pub fn reason(&self) -> &str {
        &self.2
    }

    /// The token was placed by a routing decision.
    pub fn is_routed(&self) -> bool {
        !matches!(self.2.as_str(), REASON_FIRST | REASON_CONTINUATION | REASON_SINGLE)
    }
}

pub const REASON_FIRST: &str = "first_token";
pub const REASON_CONTINUATION: &str = "continuation";
pub const REASON_SINGLE: &str = "single_model";
pub const REASON_INELIGIBLE: &str = "other_ineligible";
pub const REASON_EOS_FALLBACK: &str = "eos_fallback";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub prompt_id: String,
    pub sample_id: usize,
    pub text: String,
    pub tokens: Vec<TraceToken>,
    pub terminated_by: Termination,
    pub switch_count: usize,
    pub base_fraction: f64,
    pub config_digest: String,
    /// Σ log p of each emitted token under the distribution it was drawn from.
    pub gen_logprob: f64,
    /// Raw top-1 surface of the end-of-sequence arbiter at the final step.
    pub aligned_top1_at_stop: Option<String>,
}

impl GenerationTrace {
    fn finish(
        prompt_id: &str,
        sample_id: usize,
        tokens: Vec<TraceToken>,
        terminated_by: Termination,
        digest: &str,
        gen_logprob: f64,
        top1: Option<String>,
    ) -> Self {
        let switch_count = tokens.windows(2).filter(|w| w[0].1 != w[1].1).count();
        let base = tokens.iter().filter(|t| t.1 == Source::Base).count();
        let base_fraction = if tokens.is_empty() { 0.0 } else { base as f64 / tokens.len() as f64 };
        Self {
            prompt_id: prompt_id.to_string(),
            sample_id,
            text: detokenize(tokens.iter().map(|t| t.0.as_str())),
            tokens,
            terminated_by,
            switch_count,
            base_fraction,
            config_digest: digest.to_string(),
            gen_logprob,
            aligned_top1_at_stop: top1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub prompt_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputGroup {
    pub prompt: Prompt,
    pub traces: Vec<GenerationTrace>,
}

impl OutputGroup {
    pub fn texts(&self) -> Vec<&str> {
        self.traces.iter().map(|t| t.text.as_str()).collect()
    }
}

/// Digest of everything that determines a trace besides the prompt and
/// sample id. Keys are serialized in sorted order.
pub fn config_digest(cfg: &GenerationConfig, method: &Method, base_id: &str, aligned_id: &str) -> String {
    let value = serde_json::json!({
        "generation": cfg,
        "method": method,
        "base": base_id,
        "aligned": aligned_id,
    });
    let canonical = serde_json::to_string(&value).expect("serializable");
    hex::encode(Sha256::digest(canonical.as_bytes()))[..16].to_string()
}

/// Per-model decoding state: prompt context plus response ids.
struct ModelState<'a> {
    model: &'a dyn ModelBackend,
    prompt: Vec<TokenId>,
    response: Vec<TokenId>,
    /// Response ids lag behind the text and must be rebuilt by tokenizing.
    stale: bool,
    calls: &'a AtomicUsize,
}

impl ModelState<'_> {
    fn distribution(&mut self, text: &str) -> Result<Option<TokenDistribution>, BackendError> {
        if self.stale {
            self.response = if text.is_empty() {
                Vec::new()
            } else {
                self.model.tokenize(text)?.into_iter().map(|t| t.id).collect()
            };
            self.stale = false;
        }
        if self.prompt.len() + self.response.len() >= self.model.context_limit() {
            return Ok(None);
        }
        let mut ctx = Vec::with_capacity(self.prompt.len() + self.response.len());
        ctx.extend_from_slice(&self.prompt);
        ctx.extend_from_slice(&self.response);
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.model.next_token_distribution(&ctx).map(Some)
    }
}

/// Decodes traces for one (method, generation config) pair.
pub struct Decoder<'a> {
    base: &'a dyn ModelBackend,
    aligned: &'a dyn ModelBackend,
    method: Method,
    router: Option<Router>,
    cfg: GenerationConfig,
    digest: String,
    shared_vocab: bool,
    base_calls: AtomicUsize,
    aligned_calls: AtomicUsize,
}

impl<'a> Decoder<'a> {
    pub fn new(
        base: &'a dyn ModelBackend,
        aligned: &'a dyn ModelBackend,
        method: Method,
        cfg: GenerationConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let router = match &method {
            Method::Baco { strategy } => Some(Router::new(strategy.clone())?),
            _ => None,
        };
        Ok(Self {
            digest: config_digest(&cfg, &method, base.id(), aligned.id()),
            shared_vocab: base.vocab_fingerprint() == aligned.vocab_fingerprint(),
            base,
            aligned,
            method,
            router,
            cfg,
            base_calls: AtomicUsize::new(0),
            aligned_calls: AtomicUsize::new(0),
        })
    }

    /// Replace the router (to attach a judge or a custom lexicon).
    pub fn with_router(mut self, router: Router) -> Self {
        if self.router.is_some() {
            self.router = Some(router);
        }
        self
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.cfg
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// Next-token calls issued so far as (base, aligned).
    pub fn call_counts(&self) -> (usize, usize) {
        (self.base_calls.load(Ordering::Relaxed), self.aligned_calls.load(Ordering::Relaxed))
    }

    fn chat_prompt(&self, prompt: &Prompt) -> ChatPrompt {
        ChatPrompt { system: self.cfg.system_prompt.clone(), user: prompt.text.clone() }
    }

    /// Decode `samples_per_prompt` traces; retryable failures are retried per
    /// trace. Traces are decoded in parallel on the current rayon pool.
    pub fn decode_group(&self, prompt: &Prompt) -> Result<OutputGroup> {
        let traces = (0..self.cfg.samples_per_prompt)
            .into_par_iter()
            .map(|sid| self.decode_with_retries(prompt, sid))
            .collect::<Result<Vec<_>>>()?;
        Ok(OutputGroup { prompt: prompt.clone(), traces })
    }

    fn decode_with_retries(&self, prompt: &Prompt, sample_id: usize) -> Result<GenerationTrace> {
        let mut attempt = 0;
        loop {
            match self.decode_one(prompt, sample_id) {
                Err(Error::Backend(e)) if e.is_retryable() && attempt < self.cfg.retries => {
                    attempt += 1;
                    log::warn!("prompt {} sample {sample_id}: {e}; retry {attempt}", prompt.prompt_id);
                    std::thread::sleep(std::time::Duration::from_millis(50 << attempt.min(6)));
                }
                other => return other,
            }
        }
    }

    pub fn decode_one(&self, prompt: &Prompt, sample_id: usize) -> Result<GenerationTrace> {
        let chat = self.chat_prompt(prompt);
        let rng = TraceRng::new(self.cfg.seed, &prompt.prompt_id, sample_id);
        let mut states = [
            ModelState {
                model: self.base,
                prompt: self.base.encode_prompt(&chat)?,
                response: Vec::new(),
                stale: false,
                calls: &self.base_calls,
            },
            ModelState {
                model: self.aligned,
                prompt: self.aligned.encode_prompt(&chat)?,
                response: Vec::new(),
                stale: false,
                calls: &self.aligned_calls,
            },
        ];
        let idx = |s: Source| match s {
            Source::Base => 0,
            Source::Aligned => 1,
        };
        let single = match self.method {
            Method::BaseOnly => Some(Source::Base),
            Method::AlignedOnly => Some(Source::Aligned),
            Method::Baco { .. } => None,
        };
        let (t, p) = (self.cfg.temperature, self.cfg.top_p);

        let mut tokens: Vec<TraceToken> = Vec::new();
        let mut raw_text = String::new();
        let mut logprob = 0.0;
        let mut top1_at_stop = None;
        let mut active = single.unwrap_or(Source::Aligned);
        let eos_ids = [self.base.eos().id, self.aligned.eos().id];
        let eos_of = |s: Source| eos_ids[idx(s)];

        let finish = |tokens, term, logprob, top1| {
            Ok(GenerationTrace::finish(&prompt.prompt_id, sample_id, tokens, term, &self.digest, logprob, top1))
        };

        for step in 0..self.cfg.max_tokens {
            let prev = tokens.last().map(|tk| tk.0.clone());
            let Some(act_raw) = states[idx(active)].distribution(&raw_text)? else {
                return finish(tokens, Termination::MaxTokens, logprob, top1_at_stop);
            };
            let act_post = apply_sampling(&act_raw, t, p)?;
            let (cand, cand_p) = sample_token(&act_post, &mut rng.stream(step, Purpose::draw(active)))
                .expect("non-empty after sampling");
            let is_eos = cand.id == eos_of(active);
            let boundary = is_eos || is_word_boundary(&cand.surface, prev.as_deref());

            // continuation step, or any step when a single model decodes
            let first = step == 0;
            if single.is_some() || first || !boundary {
                let reason = if single.is_some() {
                    REASON_SINGLE
                } else if first {
                    REASON_FIRST
                } else {
                    REASON_CONTINUATION
                };
                let arbiter_top1 = act_raw.top1().map(|tk| tk.id);
                let chosen = if is_eos {
                    top1_at_stop = act_raw.top1().map(|tk| tk.surface.clone());
                    if arbiter_top1 == Some(cand.id) {
                        return finish(tokens, Termination::EosAlignedTop1, logprob, top1_at_stop);
                    }
                    let eos = cand.id;
                    let retry = restrict(&act_raw, |tk| tk.id != eos)
                        .map(|d| apply_sampling(&d, t, p))
                        .transpose()?
                        .and_then(|d| sample_token(&d, &mut rng.stream(step, Purpose::retry(active))));
                    match retry {
                        Some(c) => c,
                        None => return finish(tokens, Termination::MaxTokens, logprob, top1_at_stop),
                    }
                } else {
                    (cand, cand_p)
                };
                self.emit(&mut states, active, &chosen.0, &mut raw_text);
                logprob += chosen.1.ln();
                tokens.push(TraceToken(chosen.0.surface, active, reason.to_string()));
                continue;
            }

            // routing step
            let other = match active {
                Source::Base => Source::Aligned,
                Source::Aligned => Source::Base,
            };
            let Some(oth_raw) = states[idx(other)].distribution(&raw_text)? else {
                return finish(tokens, Termination::MaxTokens, logprob, top1_at_stop);
            };
            let oth_eos = eos_of(other);
            let word_start = |tk: &Token, eos: TokenId| tk.id == eos || is_word_boundary(&tk.surface, prev.as_deref());
            let oth_cand = restrict(&apply_sampling(&oth_raw, t, p)?, |tk| word_start(tk, oth_eos))
                .and_then(|d| sample_token(&d, &mut rng.stream(step, Purpose::draw(other))));

            let (base_raw, aligned_raw) = match active {
                Source::Base => (&act_raw, &oth_raw),
                Source::Aligned => (&oth_raw, &act_raw),
            };
            let (target, reason) = match &oth_cand {
                None => (active, REASON_INELIGIBLE.to_string()),
                Some((oc, _)) => {
                    let (bc, ac) = match active {
                        Source::Base => (&cand, oc),
                        Source::Aligned => (oc, &cand),
                    };
                    let response = detokenize(tokens.iter().map(|tk| tk.0.as_str()));
                    let inputs = RoutingInputs {
                        base_dist: base_raw,
                        aligned_dist: aligned_raw,
                        base_candidate: bc,
                        aligned_candidate: ac,
                        prompt: &prompt.text,
                        response: &response,
                    };
                    let router = self.router.as_ref().expect("collaborative method has a router");
                    let d = router.decide(&inputs, &mut rng.stream(step, Purpose::Router));
                    (d.target, d.reason)
                }
            };
            let mut chosen = if target == active { Some((cand, cand_p)) } else { oth_cand };
            let mut source = target;
            let mut reason = reason;
            let aligned_eos = self.aligned.eos().id;
            let aligned_top1 = aligned_raw.top1().map(|tk| tk.id);

            let (tok, tok_p) = loop {
                let Some((tok, tok_p)) = chosen.take() else {
                    return finish(tokens, Termination::MaxTokens, logprob, top1_at_stop);
                };
                if tok.id != eos_of(source) {
                    break (tok, tok_p);
                }
                top1_at_stop = aligned_raw.top1().map(|tk| tk.surface.clone());
                // an end-of-sequence from either model is judged by the aligned top-1
                if aligned_top1 == Some(aligned_eos) {
                    logprob += tok_p.ln();
                    return finish(tokens, Termination::EosAlignedTop1, logprob, top1_at_stop);
                }
                let raw = match source {
                    Source::Base => base_raw,
                    Source::Aligned => aligned_raw,
                };
                let eos = eos_of(source);
                let must_start_word = source != active;
                let retry = restrict(raw, |tk| tk.id != eos)
                    .map(|d| apply_sampling(&d, t, p))
                    .transpose()?
                    .and_then(|d| if must_start_word { restrict(&d, |tk| word_start(tk, eos)) } else { Some(d) })
                    .and_then(|d| sample_token(&d, &mut rng.stream(step, Purpose::retry(source))));
                match retry {
                    Some(c) => break c,
                    None if reason != REASON_EOS_FALLBACK => {
                        // hand the word to the other model
                        let fallback = if source == active { other } else { active };
                        let fb_raw = match fallback {
                            Source::Base => base_raw,
                            Source::Aligned => aligned_raw,
                        };
                        let fb_eos = eos_of(fallback);
                        let need_start = fallback != active;
                        chosen = restrict(fb_raw, |tk| tk.id != fb_eos)
                            .map(|d| apply_sampling(&d, t, p))
                            .transpose()?
                            .and_then(|d| if need_start { restrict(&d, |tk| word_start(tk, fb_eos)) } else { Some(d) })
                            .and_then(|d| sample_token(&d, &mut rng.stream(step, Purpose::retry(fallback))));
                        source = fallback;
                        reason = REASON_EOS_FALLBACK.to_string();
                    }
                    None => return finish(tokens, Termination::MaxTokens, logprob, top1_at_stop),
                }
            };
            self.emit(&mut states, source, &tok, &mut raw_text);
            logprob += tok_p.ln();
            tokens.push(TraceToken(tok.surface, source, reason));
            active = source;
        }
        finish(tokens, Termination::MaxTokens, logprob, top1_at_stop)
    }

    fn emit(&self, states: &mut [ModelState<'_>; 2], source: Source, tok: &Token, raw_text: &mut String) {
        raw_text.push_str(&tok.surface);
        let (own, other) = match source {
            Source::Base => (0, 1),
            Source::Aligned => (1, 0),
        };
        if !states[own].stale {
            states[own].response.push(tok.id);
        }
        if self.shared_vocab && !states[other].stale {
            states[other].response.push(tok.id);
        } else {
            states[other].stale = true;
        }
    }
}

/// Write traces as JSONL, one record per line.
pub fn write_traces_jsonl<W: std::io::Write>(mut w: W, traces: &[GenerationTrace]) -> Result<()> {
    for t in traces {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n").map_err(|e| Error::io("<trace writer>", e))?;
    }
    Ok(())
}

pub fn read_traces_jsonl(text: &str) -> Result<Vec<GenerationTrace>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(probs: &[(&str, f64)]) -> TokenDistribution {
        TokenDistribution::new(
            probs.iter().enumerate().map(|(i, (s, p))| (Token::new(i as u32 + 2, *s), *p)).collect(),
            false,
            0.0,
        )
        .unwrap()
    }

    fn probs(d: &TokenDistribution) -> Vec<(String, f64)> {
        d.entries().iter().map(|(t, p)| (t.surface.clone(), *p)).collect()
    }

    #[test]
    fn sampling_identity() {
        let d = dist(&[("a", 0.5), ("b", 0.3), ("c", 0.2)]);
        let out = apply_sampling(&d, 1.0, 1.0).unwrap();
        for ((_, x), (_, y)) in probs(&d).iter().zip(probs(&out)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn top_p_keeps_prefix_reaching_mass() {
        let d = dist(&[("a", 0.5), ("b", 0.3), ("c", 0.2)]);
        assert_eq!(apply_sampling(&d, 1.0, 0.9).unwrap().len(), 3);
        let d = dist(&[("a", 0.95), ("b", 0.05)]);
        let out = apply_sampling(&d, 1.0, 0.9).unwrap();
        assert_eq!(probs(&out), vec![("a".to_string(), 1.0)]);
    }

    #[test]
    fn temperature_sharpens() {
        let d = dist(&[("a", 0.75), ("b", 0.25)]);
        let out = apply_sampling(&d, 0.5, 1.0).unwrap();
        // 0.75² / (0.75² + 0.25²) = 0.9
        assert!((out.entries()[0].1 - 0.9).abs() < 1e-12);
    }

    #[test]
    fn truncated_residual_is_dropped() {
        let d = TokenDistribution::new(vec![(Token::new(2, "a"), 0.3), (Token::new(3, "b"), 0.2)], true, 0.5).unwrap();
        let out = apply_sampling(&d, 1.0, 1.0).unwrap();
        assert!(!out.is_truncated());
        assert!((out.entries()[0].1 - 0.6).abs() < 1e-12);
    }

    #[test]
    fn rng_streams_are_distinct_and_stable() {
        let r = TraceRng::new(7, "p", 0);
        let a: u64 = r.stream(0, Purpose::Base).random();
        let b: u64 = r.stream(0, Purpose::Aligned).random();
        let c: u64 = r.stream(1, Purpose::Base).random();
        assert!(a != b && a != c);
        assert_eq!(a, TraceRng::new(7, "p", 0).stream(0, Purpose::Base).random::<u64>());
        assert_ne!(a, TraceRng::new(7, "p", 1).stream(0, Purpose::Base).random::<u64>());
    }

    #[test]
    fn defaults() {
        let c = GenerationConfig::default();
        assert_eq!((c.temperature, c.top_p, c.samples_per_prompt), (1.0, 0.9, 10));
        let parsed: GenerationConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(parsed, c);
    }
}

//! Deterministic template language model.
//!
//! A synthetic model holds weighted response templates. Its next-token
//! distribution after a response prefix is the weight-normalized distribution
//! of continuations over the templates that start with that prefix (end of
//! template = end of sequence), optionally mixed with a repeated filler token
//! and a uniform smoothing floor:
//!
//! ```text
//! p(y) = (1 - ε) · [ (1 - q) · Σ_{t matches, t[len] = y} w_t / Σ_{t matches} w_t + q · 1{y = filler} ] + ε / |V|
//! ```
//!
//! Tokens listed in `skip` (and the filler) are invisible to template
//! matching. When no template matches, the bracketed term is a point mass on
//! end-of-sequence. The model ignores the prompt: its chat template renders
//! every prompt as a single `<s>` token.
//!
//! Template text uses whitespace to separate words and `|` to split a word
//! into sub-word pieces (`"moun|tain"` → `" moun"`, `"tain"`). A newline is a
//! token of its own.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, ChatPrompt, ModelBackend, Token, TokenDistribution, TokenId};
use crate::error::{Error, Result};

pub const EOS_ID: TokenId = 0;
pub const BOS_ID: TokenId = 1;
const EOS_SURFACE: &str = "</s>";
const BOS_SURFACE: &str = "<s>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub text: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillerSpec {
    pub text: String,
    pub prob: f64,
}

/// JSON configuration of one synthetic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub templates: Vec<TemplateSpec>,
    #[serde(default)]
    pub smoothing: f64,
    /// Folded into the backend identity only.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub filler: Option<FillerSpec>,
    #[serde(default)]
    pub skip: Vec<String>,
    #[serde(default)]
    pub extra_vocabulary: Vec<String>,
    #[serde(default = "default_context_limit")]
    pub context_limit: usize,
}

fn default_context_limit() -> usize {
    4096
}

impl SyntheticConfig {
    pub fn from_templates<S: Into<String>>(templates: impl IntoIterator<Item = (S, f64)>) -> Self {
        Self {
            name: None,
            templates: templates
                .into_iter()
                .map(|(text, weight)| TemplateSpec { text: text.into(), weight })
                .collect(),
            smoothing: 0.0,
            seed: 0,
            filler: None,
            skip: Vec::new(),
            extra_vocabulary: Vec::new(),
            context_limit: default_context_limit(),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn with_smoothing(mut self, eps: f64) -> Self {
        self.smoothing = eps;
        self
    }

    pub fn with_filler(mut self, text: impl Into<String>, prob: f64) -> Self {
        self.filler = Some(FillerSpec { text: text.into(), prob });
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let raw = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(serde_json::from_str(&raw)?)
    }

    fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::Config("synthetic model needs at least one template".into()));
        }
        for t in &self.templates {
            if !(t.weight > 0.0 && t.weight.is_finite()) {
                return Err(Error::Config(format!("template weight {} must be positive", t.weight)));
            }
            if split_pieces(&t.text).is_empty() {
                return Err(Error::Config("empty template text".into()));
            }
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Config(format!("smoothing {} outside [0,1)", self.smoothing)));
        }
        if let Some(f) = &self.filler {
            if !(0.0..1.0).contains(&f.prob) || split_pieces(&f.text).len() != 1 {
                return Err(Error::Config("filler must be a single token with prob in [0,1)".into()));
            }
        }
        Ok(())
    }

    fn surfaces(&self) -> Vec<String> {
        let mut out: Vec<String> = self.templates.iter().flat_map(|t| split_pieces(&t.text)).collect();
        if let Some(f) = &self.filler {
            out.extend(split_pieces(&f.text));
        }
        out.extend(self.skip.iter().flat_map(|s| split_pieces(s)));
        out.extend(self.extra_vocabulary.iter().flat_map(|s| split_pieces(s)));
        out
    }
}

/// Split template text into token surfaces.
pub fn split_pieces(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut pending_space = true;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c == '\n' {
            out.push("\n".to_string());
            pending_space = false;
            chars.next();
        } else if c.is_whitespace() {
            pending_space = true;
            chars.next();
        } else {
            let mut chunk = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                chunk.push(c);
                chars.next();
            }
            for (i, piece) in chunk.split('|').filter(|p| !p.is_empty()).enumerate() {
                if i == 0 && pending_space {
                    out.push(format!(" {piece}"));
                } else {
                    out.push(piece.to_string());
                }
            }
            pending_space = false;
        }
    }
    out
}

/// Vocabulary shared by one or more synthetic models.
#[derive(Debug)]
pub struct SyntheticVocab {
    surfaces: Vec<String>,
    index: HashMap<String, TokenId>,
    max_len: usize,
    fingerprint: String,
}

impl SyntheticVocab {
    pub fn new(surfaces: impl IntoIterator<Item = String>) -> Self {
        let unique: BTreeSet<String> = surfaces
            .into_iter()
            .filter(|s| !s.is_empty() && s != EOS_SURFACE && s != BOS_SURFACE)
            .collect();
        let mut all = vec![EOS_SURFACE.to_string(), BOS_SURFACE.to_string()];
        all.extend(unique);
        let index = all.iter().enumerate().map(|(i, s)| (s.clone(), i as TokenId)).collect();
        let max_len = all.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut h = Sha256::new();
        for s in &all {
            h.update(s.as_bytes());
            h.update([0u8]);
        }
        let fingerprint = format!("synthetic-vocab:{}", &hex::encode(h.finalize())[..16]);
        Self { surfaces: all, index, max_len, fingerprint }
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn id_of(&self, surface: &str) -> Option<TokenId> {
        self.index.get(surface).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<Token> {
        self.surfaces.get(id as usize).map(|s| Token::new(id, s.clone()))
    }

    /// Greedy longest-match tokenization. A leading space marker is added
    /// unless the text starts with whitespace.
    pub fn tokenize(&self, text: &str) -> Result<Vec<Token>, BackendError> {
        let owned;
        let text = if text.is_empty() || text.starts_with(char::is_whitespace) {
            text
        } else {
            owned = format!(" {text}");
            &owned
        };
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < text.len() {
            let rest = &text[pos..];
            let mut found = None;
            let mut end = self.max_len.min(rest.len());
            while end > 0 {
                if rest.is_char_boundary(end) {
                    if let Some(&id) = self.index.get(&rest[..end]) {
                        if id != EOS_ID && id != BOS_ID {
                            found = Some((id, end));
                            break;
                        }
                    }
                }
                end -= 1;
            }
            match found {
                Some((id, len)) => {
                    out.push(Token::new(id, &rest[..len]));
                    pos += len;
                }
                None => {
                    // a run of plain spaces before a newline has no token of its own
                    if rest.starts_with(' ') && rest.trim_start_matches(' ').starts_with('\n') {
                        pos += rest.len() - rest.trim_start_matches(' ').len();
                        continue;
                    }
                    let snippet: String = rest.chars().take(16).collect();
                    return Err(BackendError::Input(format!("text {snippet:?} not in vocabulary")));
                }
            }
        }
        Ok(out)
    }
}

pub struct SyntheticModel {
    id: String,
    vocab: Arc<SyntheticVocab>,
    templates: Vec<(Vec<TokenId>, f64)>,
    smoothing: f64,
    filler: Option<(TokenId, f64)>,
    skip: HashSet<TokenId>,
    context_limit: usize,
    eos: Token,
}

impl SyntheticModel {
    /// Build a single model over its own vocabulary.
    pub fn new(config: &SyntheticConfig) -> Result<Self> {
        let mut models = Self::build_shared(std::slice::from_ref(config))?;
        Ok(models.remove(0))
    }

    /// Build several models over one shared vocabulary (same token ids).
    pub fn build_shared(configs: &[SyntheticConfig]) -> Result<Vec<Self>> {
        for c in configs {
            c.validate()?;
        }
        let vocab = Arc::new(SyntheticVocab::new(configs.iter().flat_map(|c| c.surfaces())));
        configs.iter().map(|c| Self::with_vocab(c, vocab.clone())).collect()
    }

    pub fn with_vocab(config: &SyntheticConfig, vocab: Arc<SyntheticVocab>) -> Result<Self> {
        config.validate()?;
        let lookup = |s: &str| {
            vocab
                .id_of(s)
                .ok_or_else(|| Error::Config(format!("surface {s:?} missing from shared vocabulary")))
        };
        let mut templates = Vec::with_capacity(config.templates.len());
        for t in &config.templates {
            let ids = split_pieces(&t.text).iter().map(|s| lookup(s)).collect::<Result<Vec<_>>>()?;
            templates.push((ids, t.weight));
        }
        let filler = match &config.filler {
            Some(f) => Some((lookup(&split_pieces(&f.text)[0])?, f.prob)),
            None => None,
        };
        let mut skip = HashSet::new();
        for s in config.skip.iter().flat_map(|s| split_pieces(s)) {
            skip.insert(lookup(&s)?);
        }
        if let Some((fid, _)) = filler {
            skip.insert(fid);
        }
        let digest = {
            let mut h = Sha256::new();
            h.update(serde_json::to_vec(config)?);
            h.update(vocab.fingerprint.as_bytes());
            hex::encode(h.finalize())
        };
        let id = match &config.name {
            Some(n) => format!("synthetic:{n}:{}", &digest[..12]),
            None => format!("synthetic:{}", &digest[..12]),
        };
        Ok(Self {
            id,
            eos: Token::new(EOS_ID, EOS_SURFACE),
            vocab,
            templates,
            smoothing: config.smoothing,
            filler,
            skip,
            context_limit: config.context_limit,
        })
    }

    pub fn vocab(&self) -> &Arc<SyntheticVocab> {
        &self.vocab
    }

    /// Unsmoothed continuation weights after `response` (special tokens and
    /// skipped tokens already removed).
    fn core_weights(&self, response: &[TokenId]) -> Vec<(TokenId, f64)> {
        let mut acc: HashMap<TokenId, f64> = HashMap::new();
        let mut total = 0.0;
        for (ids, w) in &self.templates {
            if ids.len() >= response.len() && ids[..response.len()] == *response {
                let next = ids.get(response.len()).copied().unwrap_or(EOS_ID);
                *acc.entry(next).or_insert(0.0) += w;
                total += w;
            }
        }
        if total == 0.0 {
            return vec![(EOS_ID, 1.0)];
        }
        let (filler_id, q) = self.filler.unwrap_or((EOS_ID, 0.0));
        let mut out: Vec<(TokenId, f64)> = acc.into_iter().map(|(id, w)| (id, (1.0 - q) * w / total)).collect();
        if q > 0.0 {
            out.push((filler_id, q));
        }
        out
    }
}

impl ModelBackend for SyntheticModel {
    fn id(&self) -> &str {
        &self.id
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn vocab_fingerprint(&self) -> &str {
        &self.vocab.fingerprint
    }

    fn eos(&self) -> &Token {
        &self.eos
    }

    fn context_limit(&self) -> usize {
        self.context_limit
    }

    fn encode_prompt(&self, _prompt: &ChatPrompt) -> Result<Vec<TokenId>, BackendError> {
        Ok(vec![BOS_ID])
    }

    fn tokenize(&self, text: &str) -> Result<Vec<Token>, BackendError> {
        self.vocab.tokenize(text)
    }

    fn next_token_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution, BackendError> {
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
        let mut response = Vec::with_capacity(context.len());
        for &id in context {
            if id as usize >= self.vocab.len() {
                return Err(BackendError::Input(format!("token {id} not in vocabulary")));
            }
            if id != BOS_ID && id != EOS_ID && !self.skip.contains(&id) {
                response.push(id);
            }
        }
        let core = self.core_weights(&response);
        let eps = self.smoothing;
        let mut probs = vec![0.0; self.vocab.len()];
        if eps > 0.0 {
            let floor = eps / (self.vocab.len() - 1) as f64;
            for (i, p) in probs.iter_mut().enumerate() {
                if i as TokenId != BOS_ID {
                    *p = floor;
                }
            }
        }
        for (id, p) in core {
            probs[id as usize] += (1.0 - eps) * p;
        }
        let entries = probs
            .into_iter()
            .enumerate()
            .filter(|(_, p)| *p > 0.0)
            .map(|(i, p)| (self.vocab.token(i as TokenId).expect("id in range"), p));
        TokenDistribution::from_weights(entries)
    }
}

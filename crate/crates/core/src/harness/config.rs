//! Experiment configuration (JSON).
//!
//! Relative paths are resolved against the directory of the config file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backends::http::{HttpModel, HttpModelConfig, HttpScorer, HttpScorerConfig};
use crate::backends::stub::StubScoringSpec;
use crate::backends::synthetic::{SyntheticConfig, SyntheticModel};
use crate::backends::{ModelBackend, ScoringBackends};
use crate::decoder::{GenerationConfig, Method, Prompt};
use crate::error::{Error, Result};
use crate::pareto::{MetricGroup, Orientation};
use crate::router::StrategySpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSource {
    /// Path to a synthetic model JSON file.
    Synthetic { path: PathBuf },
    SyntheticInline { config: SyntheticConfig },
    Http(HttpModelConfig),
}

/// Scoring capabilities. HTTP entries take precedence over the stub.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringConfig {
    #[serde(default)]
    pub stub: Option<StubScoringSpec>,
    #[serde(default)]
    pub embedder: Option<HttpScorerConfig>,
    #[serde(default)]
    pub nli: Option<HttpScorerConfig>,
    #[serde(default)]
    pub reward: Option<HttpScorerConfig>,
    #[serde(default)]
    pub judge: Option<HttpScorerConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsConfig {
    pub base: ModelSource,
    pub aligned: ModelSource,
    #[serde(default)]
    pub scoring: ScoringConfig,
}

pub fn default_gammas() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

pub fn default_temperatures() -> Vec<f64> {
    vec![0.6, 0.8, 1.0, 1.2, 1.5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sweep {
    Baco {
        strategy: StrategySpec,
        #[serde(default = "default_gammas")]
        gammas: Vec<f64>,
    },
    BaseOnly {
        #[serde(default = "default_temperatures")]
        temperatures: Vec<f64>,
    },
    AlignedOnly {
        #[serde(default = "default_temperatures")]
        temperatures: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    #[serde(flatten)]
    pub sweep: Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Baco,
    BaseOnly,
    AlignedOnly,
}

/// One (method, sweep value) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub method: String,
    pub kind: RunKind,
    /// γ for collaborative runs, temperature otherwise.
    pub value: f64,
    pub decode: Method,
    pub generation: GenerationConfig,
}

impl Run {
    pub fn label(&self) -> String {
        format!("{}__{:.2}", self.method, self.value)
    }
}

pub const LEXICAL_METRICS: [&str; 8] =
    ["distinct_1", "distinct_2", "distinct_3", "ead_1", "ead_2", "ead_3", "self_bleu", "self_rouge_l"];
pub const SEMANTIC_METRICS: [&str; 5] =
    ["cosine_dissimilarity", "vendi", "nli_diversity", "distinct_score", "semantic_entropy"];
pub const DISCOURSE_METRICS: [&str; 2] = ["tp_div", "arousal_div"];
pub const QUALITY_METRICS: [&str; 3] = ["perplexity", "mean_reward", "aligned_logprob"];

pub fn metric_group(name: &str) -> Option<MetricGroup> {
    if LEXICAL_METRICS.contains(&name) {
        Some(MetricGroup::Lexical)
    } else if SEMANTIC_METRICS.contains(&name) {
        Some(MetricGroup::Semantic)
    } else if DISCOURSE_METRICS.contains(&name) {
        Some(MetricGroup::Discourse)
    } else {
        None
    }
}

pub fn metric_orientation(name: &str) -> Orientation {
    match name {
        "self_bleu" | "self_rouge_l" | "nli_diversity" | "perplexity" => Orientation::LowerBetter,
        _ => Orientation::HigherBetter,
    }
}

fn default_diversity() -> Vec<String> {
    ["distinct_1", "distinct_2", "distinct_3", "ead_1", "self_bleu", "self_rouge_l"]
        .iter()
        .chain(SEMANTIC_METRICS.iter())
        .map(|s| s.to_string())
        .collect()
}

fn default_quality() -> Vec<String> {
    vec!["perplexity".into(), "mean_reward".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "default_diversity")]
    pub diversity: Vec<String>,
    #[serde(default = "default_quality")]
    pub quality: Vec<String>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { diversity: default_diversity(), quality: default_quality() }
    }
}

fn default_workers() -> usize {
    1
}

fn default_anchor_temperature() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    /// JSONL of `{prompt_id, text}`.
    pub prompts_file: PathBuf,
    /// Applied to every prompt; `{prompt}` is replaced by the prompt text.
    #[serde(default)]
    pub prompt_template: Option<String>,
    pub backends: BackendsConfig,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Directory of `{run label}.jsonl` narrative annotations.
    #[serde(default)]
    pub annotations_dir: Option<PathBuf>,
    /// Temperature of the single-model runs anchoring every space.
    #[serde(default = "default_anchor_temperature")]
    pub anchor_temperature: f64,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&raw)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Make relative paths relative to `base`.
    pub fn resolve_paths(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.prompts_file);
        fix(&mut self.output_dir);
        if let Some(a) = self.annotations_dir.as_mut() {
            fix(a);
        }
        for src in [&mut self.backends.base, &mut self.backends.aligned] {
            if let ModelSource::Synthetic { path } = src {
                fix(path);
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.generation.validate()?;
        if self.methods.is_empty() {
            return Err(Error::Config("no methods configured".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let mut names = BTreeSet::new();
        for m in &self.methods {
            if m.name.is_empty() || m.name.contains(['/', '\\']) || m.name.contains("__") {
                return Err(Error::Config(format!("bad method name {:?}", m.name)));
            }
            if !names.insert(&m.name) {
                return Err(Error::Config(format!("duplicate method name {:?}", m.name)));
            }
            match &m.sweep {
                Sweep::Baco { strategy, gammas } => {
                    if gammas.is_empty() {
                        return Err(Error::Config(format!("{}: empty γ sweep", m.name)));
                    }
                    for g in gammas {
                        strategy
                            .with_gamma(*g)
                            .validate()
                            .map_err(|e| Error::Config(format!("{}: {e}", m.name)))?;
                    }
                }
                Sweep::BaseOnly { temperatures } | Sweep::AlignedOnly { temperatures } => {
                    if temperatures.is_empty() {
                        return Err(Error::Config(format!("{}: empty temperature sweep", m.name)));
                    }
                    if temperatures.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                        return Err(Error::Config(format!("{}: temperatures must be positive", m.name)));
                    }
                }
            }
        }
        for name in &self.metrics.diversity {
            if metric_group(name).is_none() {
                return Err(Error::Config(format!("unknown diversity metric {name:?}")));
            }
        }
        for name in &self.metrics.quality {
            if !QUALITY_METRICS.contains(&name.as_str()) {
                return Err(Error::Config(format!("unknown quality metric {name:?}")));
            }
        }
        for kind in [RunKind::BaseOnly, RunKind::AlignedOnly] {
            if !self.runs().iter().any(|r| r.kind == kind && r.value == self.anchor_temperature) {
                return Err(Error::Config(format!(
                    "a {kind:?} method must include the anchor temperature {}",
                    self.anchor_temperature
                )));
            }
        }
        Ok(())
    }

    /// Every (method, sweep value) pair in configuration order.
    pub fn runs(&self) -> Vec<Run> {
        let mut out = Vec::new();
        for m in &self.methods {
            match &m.sweep {
                Sweep::Baco { strategy, gammas } => {
                    for &g in gammas {
                        out.push(Run {
                            method: m.name.clone(),
                            kind: RunKind::Baco,
                            value: g,
                            decode: Method::Baco { strategy: strategy.with_gamma(g) },
                            generation: self.generation.clone(),
                        });
                    }
                }
                Sweep::BaseOnly { temperatures } | Sweep::AlignedOnly { temperatures } => {
                    let (kind, decode) = match m.sweep {
                        Sweep::BaseOnly { .. } => (RunKind::BaseOnly, Method::BaseOnly),
                        _ => (RunKind::AlignedOnly, Method::AlignedOnly),
                    };
                    for &t in temperatures {
                        out.push(Run {
                            method: m.name.clone(),
                            kind,
                            value: t,
                            decode: decode.clone(),
                            generation: GenerationConfig { temperature: t, ..self.generation.clone() },
                        });
                    }
                }
            }
        }
        out
    }

    /// SHA-256 of the canonical (sorted-key) JSON serialization.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let value = serde_json::to_value(self).expect("serializable");
        hex::encode(Sha256::digest(serde_json::to_string(&value).expect("serializable").as_bytes()))
    }

    pub fn load_prompts(&self) -> Result<Vec<Prompt>> {
        let raw = std::fs::read_to_string(&self.prompts_file).map_err(|e| Error::io(&self.prompts_file, e))?;
        let mut prompts = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, line) in raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut p: Prompt = serde_json::from_str(line)
                .map_err(|e| Error::Config(format!("{} line {}: {e}", self.prompts_file.display(), i + 1)))?;
            if !seen.insert(p.prompt_id.clone()) {
                return Err(Error::Config(format!("duplicate prompt_id {:?}", p.prompt_id)));
            }
            if let Some(t) = &self.prompt_template {
                p.text = t.replace("{prompt}", &p.text);
            }
            prompts.push(p);
        }
        if prompts.is_empty() {
            return Err(Error::Config(format!("{} has no prompts", self.prompts_file.display())));
        }
        Ok(prompts)
    }

    /// Build (base, aligned). Two synthetic models share one vocabulary.
    pub fn build_models(&self) -> Result<(Arc<dyn ModelBackend>, Arc<dyn ModelBackend>)> {
        let synthetic = |src: &ModelSource| -> Result<Option<SyntheticConfig>> {
            Ok(match src {
                ModelSource::Synthetic { path } => Some(SyntheticConfig::load(path)?),
                ModelSource::SyntheticInline { config } => Some(config.clone()),
                ModelSource::Http(_) => None,
            })
        };
        let http = |src: &ModelSource| -> Result<Arc<dyn ModelBackend>> {
            match src {
                ModelSource::Http(c) => Ok(Arc::new(HttpModel::connect(c.clone())?)),
                _ => unreachable!("synthetic handled above"),
            }
        };
        let b = &self.backends;
        match (synthetic(&b.base)?, synthetic(&b.aligned)?) {
            (Some(bc), Some(ac)) => {
                let mut m = SyntheticModel::build_shared(&[bc, ac])?;
                let aligned = m.pop().expect("two models");
                let base = m.pop().expect("two models");
                Ok((Arc::new(base), Arc::new(aligned)))
            }
            (Some(bc), None) => Ok((Arc::new(SyntheticModel::new(&bc)?), http(&b.aligned)?)),
            (None, Some(ac)) => Ok((http(&b.base)?, Arc::new(SyntheticModel::new(&ac)?))),
            (None, None) => Ok((http(&b.base)?, http(&b.aligned)?)),
        }
    }

    pub fn build_scoring(&self) -> Result<ScoringBackends> {
        let s = &self.backends.scoring;
        let mut out = s.stub.as_ref().map(StubScoringSpec::build).unwrap_or_default();
        if let Some(c) = &s.embedder {
            out = out.with_embedder(Arc::new(HttpScorer::new(c)?));
        }
        if let Some(c) = &s.nli {
            out = out.with_nli(Arc::new(HttpScorer::new(c)?));
        }
        if let Some(c) = &s.reward {
            out = out.with_reward(Arc::new(HttpScorer::new(c)?));
        }
        if let Some(c) = &s.judge {
            out = out.with_judge(Arc::new(HttpScorer::new(c)?));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "prompts_file": "prompts.jsonl",
            "backends": {
                "base": {"kind": "synthetic", "path": "base.json"},
                "aligned": {"kind": "synthetic", "path": "aligned.json"}
            },
            "methods": [
                {"name": "baco", "kind": "baco", "strategy": "P-Punc"},
                {"name": "base", "kind": "base_only"},
                {"name": "aligned", "kind": "aligned_only", "temperatures": [1.0, 1.5]}
            ],
            "output_dir": "out"
        })
    }

    #[test]
    fn defaults_and_runs() {
        let cfg: ExperimentConfig = serde_json::from_value(minimal()).unwrap();
        cfg.validate().unwrap();
        let runs = cfg.runs();
        assert_eq!(runs.len(), 11 + 5 + 2);
        assert_eq!(runs[4].label(), "baco__0.40");
        assert_eq!(cfg.metrics.diversity.len() * cfg.metrics.quality.len(), 22);
        assert_eq!(runs[12].generation.temperature, 0.8);
    }

    #[test]
    fn digest_ignores_key_order() {
        let a: ExperimentConfig = serde_json::from_value(minimal()).unwrap();
        let text = r#"{"output_dir": "out", "methods": [
            {"kind": "baco", "strategy": "P-Punc", "name": "baco"},
            {"kind": "base_only", "name": "base"},
            {"temperatures": [1.0, 1.5], "name": "aligned", "kind": "aligned_only"}],
            "backends": {"aligned": {"path": "aligned.json", "kind": "synthetic"},
                         "base": {"path": "base.json", "kind": "synthetic"}},
            "prompts_file": "prompts.jsonl"}"#;
        let b: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn rejects_bad_sweeps() {
        let mut v = minimal();
        v["methods"][0]["gammas"] = serde_json::json!([0.5, 1.5]);
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert!(cfg.validate().is_err());
        let mut v = minimal();
        v["methods"][2]["temperatures"] = serde_json::json!([1.5]);
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert!(cfg.validate().is_err(), "anchor temperature missing");
        let mut v = minimal();
        v["metrics"] = serde_json::json!({"diversity": ["nope"]});
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert!(cfg.validate().is_err());
    }
}

//! Evaluation stage: metrics per (run, prompt), prompt-averaged values per
//! run, and the trade-off points of every enabled diversity × quality space.
//!
//! A metric whose scoring backend is absent or keeps failing is recorded as
//! missing with a flag; every other metric still proceeds.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{metric_group, metric_orientation, ExperimentConfig, RunKind, DISCOURSE_METRICS};
use super::generate::load_run_traces;
use super::write_atomic;
use crate::backends::{BackendError, ChatPrompt, ModelBackend, ScoringBackends};
use crate::decoder::{GenerationTrace, Termination};
use crate::discourse::{arousal_div, tp_div, NarrativeAnnotation};
use crate::error::{Error, Result};
use crate::lexmetrics::{distinct_n, ead_n, self_bleu, self_rouge_l, word_tokenize};
use crate::pareto::{Orientation, SpaceId, TradeoffPoint};
use crate::semmetrics::{
    aligned_score, cluster_semantic, cosine_dissimilarity, distinct_score, mean_aligned_logprob, mean_reward,
    nli_diversity, perplexity, semantic_entropy, vendi_score,
};

pub const METRICS_DIR: &str = "metrics";
pub const RUNS_FILE: &str = "runs.json";
pub const SPACES_FILE: &str = "spaces.json";

/// Attempts per scoring request before a metric is marked missing.
const SCORING_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub prompt_id: String,
    pub metrics: BTreeMap<String, Option<f64>>,
    #[serde(default)]
    pub flags: Vec<String>,
}

/// Prompt-averaged metrics of one (method, sweep value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub method: String,
    pub kind: RunKind,
    pub value: f64,
    pub prompts: usize,
    /// Mean over the prompts where the metric is present.
    pub metrics: BTreeMap<String, Option<f64>>,
    pub mean_tokens: f64,
    pub mean_switches: f64,
    pub mean_base_fraction: f64,
}

/// Points of one space. Quality is oriented so that higher is better
/// (perplexity is negated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceData {
    pub space: SpaceId,
    pub diversity_orientation: Orientation,
    pub quality_negated: bool,
    pub points: Vec<TradeoffPoint>,
}

pub fn metrics_path(dir: &Path, label: &str) -> PathBuf {
    dir.join(METRICS_DIR).join(format!("{label}.jsonl"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateReport {
    pub runs: Vec<RunSummary>,
    pub spaces: Vec<SpaceData>,
}

/// Annotation sidecar line: a narrative annotation tagged with its prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnnotationRecord {
    prompt_id: String,
    #[serde(flatten)]
    annotation: NarrativeAnnotation,
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    aligned: Arc<dyn ModelBackend>,
    scoring: ScoringBackends,
    prompt_text: HashMap<String, String>,
    wanted: Vec<String>,
}

impl Context<'_> {
    fn wants(&self, name: &str) -> bool {
        self.wanted.iter().any(|w| w == name)
    }

    fn wants_any(&self, names: &[&str]) -> bool {
        names.iter().any(|n| self.wants(n))
    }
}

fn with_retries<T>(mut f: impl FnMut() -> std::result::Result<T, BackendError>) -> std::result::Result<T, BackendError> {
    let mut attempt = 1;
    loop {
        match f() {
            Err(e) if e.is_retryable() && attempt < SCORING_ATTEMPTS => {
                log::warn!("scoring request failed ({e}); retry {attempt}");
                std::thread::sleep(std::time::Duration::from_millis(50 << attempt));
                attempt += 1;
            }
            other => return other,
        }
    }
}

pub fn run_evaluate(cfg: &ExperimentConfig) -> Result<EvaluateReport> {
    let prompts = cfg.load_prompts()?;
    let (_, aligned) = cfg.build_models()?;
    let mut wanted = cfg.metrics.diversity.clone();
    wanted.extend(cfg.metrics.quality.iter().cloned());
    let ctx = Context {
        cfg,
        aligned,
        scoring: cfg.build_scoring()?,
        prompt_text: prompts.iter().map(|p| (p.prompt_id.clone(), p.text.clone())).collect(),
        wanted,
    };
    let dir = &cfg.output_dir;
    let metrics_dir = dir.join(METRICS_DIR);
    std::fs::create_dir_all(&metrics_dir).map_err(|e| Error::io(&metrics_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;

    let mut summaries = Vec::new();
    for run in cfg.runs() {
        let label = run.label();
        let groups = load_run_traces(dir, &label)?;
        let annotations = load_annotations(cfg, &label)?;
        let records: Vec<GroupMetrics> = pool.install(|| {
            groups
                .par_iter()
                .map(|(pid, traces)| evaluate_group(&ctx, pid, traces, annotations.get(pid).map(Vec::as_slice)))
                .collect::<Result<Vec<_>>>()
        })?;
        let mut buf = Vec::new();
        for r in &records {
            serde_json::to_writer(&mut buf, r)?;
            buf.push(b'\n');
        }
        write_atomic(&metrics_path(dir, &label), &buf)?;

        let all: Vec<&GenerationTrace> = groups.iter().flat_map(|(_, g)| g).collect();
        let n = all.len().max(1) as f64;
        summaries.push(RunSummary {
            label,
            method: run.method.clone(),
            kind: run.kind,
            value: run.value,
            prompts: records.len(),
            metrics: average(&ctx.wanted, &records),
            mean_tokens: all.iter().map(|t| t.tokens.len() as f64).sum::<f64>() / n,
            mean_switches: all.iter().map(|t| t.switch_count as f64).sum::<f64>() / n,
            mean_base_fraction: all.iter().map(|t| t.base_fraction).sum::<f64>() / n,
        });
    }
    let spaces = build_spaces(cfg, &summaries);
    write_atomic(&metrics_dir.join(RUNS_FILE), &serde_json::to_vec_pretty(&summaries)?)?;
    write_atomic(&metrics_dir.join(SPACES_FILE), &serde_json::to_vec_pretty(&spaces)?)?;
    Ok(EvaluateReport { runs: summaries, spaces })
}

fn average(names: &[String], records: &[GroupMetrics]) -> BTreeMap<String, Option<f64>> {
    names
        .iter()
        .map(|name| {
            let vals: Vec<f64> = records.iter().filter_map(|r| r.metrics.get(name).copied().flatten()).collect();
            let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
            (name.clone(), mean)
        })
        .collect()
}

/// One space per enabled (diversity, quality) pair, in configuration order.
pub fn build_spaces(cfg: &ExperimentConfig, runs: &[RunSummary]) -> Vec<SpaceData> {
    let mut out = Vec::new();
    for d in &cfg.metrics.diversity {
        for q in &cfg.metrics.quality {
            let negate = metric_orientation(q) == Orientation::LowerBetter;
            let points = runs
                .iter()
                .filter_map(|r| {
                    let quality = r.metrics.get(q).copied().flatten()?;
                    let diversity = r.metrics.get(d).copied().flatten()?;
                    Some(TradeoffPoint {
                        method: r.method.clone(),
                        config: r.label.clone(),
                        quality: if negate { -quality } else { quality },
                        diversity,
                    })
                })
                .collect();
            out.push(SpaceData {
                space: SpaceId { diversity: d.clone(), quality: q.clone(), group: metric_group(d).expect("validated") },
                diversity_orientation: metric_orientation(d),
                quality_negated: negate,
                points,
            });
        }
    }
    out
}

fn load_annotations(cfg: &ExperimentConfig, label: &str) -> Result<HashMap<String, Vec<NarrativeAnnotation>>> {
    let mut out: HashMap<String, Vec<NarrativeAnnotation>> = HashMap::new();
    let Some(dir) = &cfg.annotations_dir else { return Ok(out) };
    let path = dir.join(format!("{label}.jsonl"));
    if !path.exists() {
        return Ok(out);
    }
    let raw = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    for line in raw.lines().filter(|l| !l.trim().is_empty()) {
        let rec: AnnotationRecord = serde_json::from_str(line)?;
        out.entry(rec.prompt_id).or_default().push(rec.annotation);
    }
    for v in out.values_mut() {
        v.sort_by_key(|a| a.sample_id);
    }
    Ok(out)
}

fn evaluate_group(
    ctx: &Context<'_>,
    prompt_id: &str,
    traces: &[GenerationTrace],
    annotations: Option<&[NarrativeAnnotation]>,
) -> Result<GroupMetrics> {
    let mut m: BTreeMap<String, Option<f64>> = BTreeMap::new();
    let mut flags = Vec::new();
    let texts: Vec<&str> = traces.iter().map(|t| t.text.as_str()).collect();
    let prompt_text = ctx
        .prompt_text
        .get(prompt_id)
        .ok_or_else(|| Error::Input(format!("trace for unknown prompt {prompt_id:?}")))?;

    let words: Vec<Vec<String>> = texts.iter().map(|t| word_tokenize(t)).collect();
    for n in 1..=3 {
        let name = format!("distinct_{n}");
        if ctx.wants(&name) {
            m.insert(name, Some(distinct_n(&words, n)));
        }
    }
    if ctx.wants("self_bleu") {
        m.insert("self_bleu".into(), self_bleu(&words));
    }
    if ctx.wants("self_rouge_l") {
        m.insert("self_rouge_l".into(), self_rouge_l(&words));
    }
    if ctx.wants_any(&["ead_1", "ead_2", "ead_3"]) {
        let toks = texts
            .iter()
            .map(|t| ctx.aligned.tokenize(t).map(|v| v.into_iter().map(|k| k.id).collect::<Vec<u32>>()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        for n in 1..=3 {
            let name = format!("ead_{n}");
            if ctx.wants(&name) {
                m.insert(name, Some(ead_n(&toks, n, ctx.aligned.vocab_size())?));
            }
        }
    }

    let mut missing = |m: &mut BTreeMap<String, Option<f64>>, names: &[&str], why: String| {
        for n in names {
            if ctx.wants(n) {
                m.insert(n.to_string(), None);
            }
        }
        flags.push(why);
    };

    if ctx.wants_any(&["cosine_dissimilarity", "vendi"]) {
        let names = ["cosine_dissimilarity", "vendi"];
        if !ctx.scoring.has_embedder() {
            missing(&mut m, &names, "embedding metrics missing: no embedder".into());
        } else {
            match texts.iter().map(|t| with_retries(|| ctx.scoring.embed(t))).collect::<std::result::Result<Vec<_>, _>>() {
                Ok(emb) => {
                    if ctx.wants("cosine_dissimilarity") {
                        m.insert("cosine_dissimilarity".into(), cosine_dissimilarity(&emb).value);
                    }
                    if ctx.wants("vendi") {
                        m.insert("vendi".into(), vendi_score(&emb).ok());
                    }
                }
                Err(e) => missing(&mut m, &names, format!("embedding metrics missing: {e}")),
            }
        }
    }
    if ctx.wants("nli_diversity") {
        if !ctx.scoring.has_nli() {
            missing(&mut m, &["nli_diversity"], "nli_diversity missing: no nli model".into());
        } else {
            match with_retries(|| nli_diversity(&texts, &ctx.scoring)) {
                Ok(v) => {
                    m.insert("nli_diversity".into(), v);
                }
                Err(e) => missing(&mut m, &["nli_diversity"], format!("nli_diversity missing: {e}")),
            }
        }
    }
    if ctx.wants_any(&["distinct_score", "semantic_entropy"]) {
        let names = ["distinct_score", "semantic_entropy"];
        if !ctx.scoring.has_nli() {
            missing(&mut m, &names, "clustering metrics missing: no nli model".into());
        } else {
            let logprobs: Vec<f64> = traces.iter().map(|t| t.gen_logprob).collect();
            match with_retries(|| cluster_semantic(&texts, &logprobs, &ctx.scoring)) {
                Ok(c) => {
                    if ctx.wants("distinct_score") {
                        m.insert("distinct_score".into(), Some(distinct_score(&c) as f64));
                    }
                    if ctx.wants("semantic_entropy") {
                        m.insert("semantic_entropy".into(), semantic_entropy(&c));
                    }
                }
                Err(e) => missing(&mut m, &names, format!("clustering metrics missing: {e}")),
            }
        }
    }
    if ctx.wants_any(&["perplexity", "aligned_logprob"]) {
        let chat = ChatPrompt { system: ctx.cfg.generation.system_prompt.clone(), user: prompt_text.clone() };
        let scores = traces
            .iter()
            .map(|t| {
                with_retries(|| {
                    aligned_score(ctx.aligned.as_ref(), &chat, &t.text, t.terminated_by == Termination::EosAlignedTop1)
                })
            })
            .collect::<std::result::Result<Vec<_>, _>>();
        match scores {
            Ok(s) => {
                if ctx.wants("perplexity") {
                    m.insert("perplexity".into(), perplexity(&s));
                }
                if ctx.wants("aligned_logprob") {
                    m.insert("aligned_logprob".into(), mean_aligned_logprob(&s));
                }
            }
            Err(e) => missing(&mut m, &["perplexity", "aligned_logprob"], format!("aligned scoring missing: {e}")),
        }
    }
    if ctx.wants("mean_reward") {
        if !ctx.scoring.has_reward() {
            missing(&mut m, &["mean_reward"], "mean_reward missing: no reward model".into());
        } else {
            match with_retries(|| mean_reward(prompt_text, &texts, &ctx.scoring)) {
                Ok(v) => {
                    m.insert("mean_reward".into(), v);
                }
                Err(e) => missing(&mut m, &["mean_reward"], format!("mean_reward missing: {e}")),
            }
        }
    }
    if ctx.wants_any(&DISCOURSE_METRICS) {
        match annotations {
            None => missing(&mut m, &DISCOURSE_METRICS, "discourse metrics missing: no annotations".into()),
            Some(a) => {
                if ctx.wants("tp_div") {
                    let r = tp_div(a);
                    if !r.excluded.is_empty() {
                        flags.push(format!("tp_div excluded {} annotations", r.excluded.len()));
                    }
                    m.insert("tp_div".into(), r.value);
                }
                if ctx.wants("arousal_div") {
                    let r = arousal_div(a)?;
                    if !r.excluded.is_empty() {
                        flags.push(format!("arousal_div excluded {} annotations", r.excluded.len()));
                    }
                    m.insert("arousal_div".into(), r.value);
                }
            }
        }
    }
    Ok(GroupMetrics { prompt_id: prompt_id.to_string(), metrics: m, flags })
}

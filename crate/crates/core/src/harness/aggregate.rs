//! Aggregation stage: per-space Coverage and Dominance, rollups, frontier
//! and curve data, and switch statistics of the collaborative runs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, RunKind};
use super::evaluate::{RunSummary, SpaceData, METRICS_DIR, RUNS_FILE, SPACES_FILE};
use super::generate::{load_run_traces, trace_path};
use super::write_atomic;
use crate::decoder::Termination;
use crate::error::{Error, Result};
use crate::pareto::{aggregate, evaluate_space, FeasibleRegion, NormPoint, Orientation, SpaceResult, SummaryRow};
use crate::router::Source;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const FRONTIERS_FILE: &str = "frontiers.json";
pub const CURVES_FILE: &str = "curves.json";
pub const SWITCH_FILE: &str = "switch_stats.json";
pub const POSITION_BINS: usize = 10;

/// Best achievable diversity value for `n` samples, where one exists.
/// Lower-is-better metrics are bounded below by 0.
pub fn diversity_bound(metric: &str, n: usize) -> Option<f64> {
    match metric {
        "distinct_1" | "distinct_2" | "distinct_3" | "cosine_dissimilarity" | "tp_div" => Some(1.0),
        "vendi" | "distinct_score" => Some(n as f64),
        "semantic_entropy" => Some((n as f64).ln()),
        "self_bleu" | "self_rouge_l" | "nli_diversity" => Some(0.0),
        _ => None,
    }
}

fn anchor(runs: &[RunSummary], kind: RunKind, t: f64) -> Option<&RunSummary> {
    runs.iter().find(|r| r.kind == kind && r.value == t)
}

/// Region of one space: quality from base (x_min) to aligned (x_max) at the
/// anchor temperature; diversity from the aligned anchor to the metric's
/// bound, or to the base anchor when the metric has no bound.
pub fn feasible_region(cfg: &ExperimentConfig, runs: &[RunSummary], space: &SpaceData) -> FeasibleRegion {
    let get = |kind: RunKind, metric: &str| {
        anchor(runs, kind, cfg.anchor_temperature).and_then(|r| r.metrics.get(metric).copied().flatten()).unwrap_or(f64::NAN)
    };
    let sign = if space.quality_negated { -1.0 } else { 1.0 };
    let d = &space.space.diversity;
    let n = cfg.generation.samples_per_prompt;
    let aligned_d = get(RunKind::AlignedOnly, d);
    let (y_min, y_max) = match space.diversity_orientation {
        Orientation::HigherBetter => {
            (aligned_d, diversity_bound(d, n).unwrap_or_else(|| get(RunKind::BaseOnly, d)))
        }
        Orientation::LowerBetter => (diversity_bound(d, n).unwrap_or(0.0), aligned_d),
    };
    FeasibleRegion {
        x_min: sign * get(RunKind::BaseOnly, &space.space.quality),
        x_max: sign * get(RunKind::AlignedOnly, &space.space.quality),
        y_min,
        y_max,
        diversity_orientation: space.diversity_orientation,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveData {
    pub space: String,
    /// Normalized points per method, sorted by x.
    pub curves: BTreeMap<String, Vec<NormPoint>>,
}

/// Position histograms of one collaborative run. Bin `b` covers relative
/// token positions [b/B, (b+1)/B).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchStats {
    pub label: String,
    pub method: String,
    pub value: f64,
    pub tokens: Vec<usize>,
    pub base_tokens: Vec<usize>,
    pub routed: Vec<usize>,
    pub switches: Vec<usize>,
    pub routed_total: usize,
    pub switches_total: usize,
    pub mean_length: f64,
    pub eos_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub rows: Vec<SummaryRow>,
    pub results: Vec<SpaceResult>,
    pub switch_stats: Vec<SwitchStats>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&raw)?)
}

pub fn run_aggregate(cfg: &ExperimentConfig) -> Result<AggregateReport> {
    let dir = &cfg.output_dir;
    let runs: Vec<RunSummary> = read_json(&dir.join(METRICS_DIR).join(RUNS_FILE))?;
    let spaces: Vec<SpaceData> = read_json(&dir.join(METRICS_DIR).join(SPACES_FILE))?;
    let methods: std::collections::BTreeSet<&str> = runs.iter().map(|r| r.method.as_str()).collect();
    if methods.len() < 2 {
        log::warn!("aggregating a single method; dominance is trivially 1");
    }
    let results: Vec<SpaceResult> = spaces
        .iter()
        .map(|s| {
            let r = evaluate_space(s.space.clone(), &s.points, feasible_region(cfg, &runs, s));
            if let Some(why) = &r.skipped {
                log::warn!("space {} skipped: {why}", r.space.name());
            }
            r
        })
        .collect();
    let rows = aggregate(&results);
    write_atomic(&dir.join(SUMMARY_FILE), &summary_csv(&rows)?)?;
    write_atomic(&dir.join(FRONTIERS_FILE), &serde_json::to_vec_pretty(&results)?)?;
    let curves: Vec<CurveData> = results
        .iter()
        .map(|r| {
            let mut curves: BTreeMap<String, Vec<NormPoint>> = BTreeMap::new();
            for p in &r.normalized {
                curves.entry(p.method.clone()).or_default().push(p.clone());
            }
            for c in curves.values_mut() {
                c.sort_by(|a, b| a.x.total_cmp(&b.x).then_with(|| a.config.cmp(&b.config)));
            }
            CurveData { space: r.space.name(), curves }
        })
        .collect();
    write_atomic(&dir.join(CURVES_FILE), &serde_json::to_vec_pretty(&curves)?)?;
    let mut stats = Vec::new();
    for r in runs.iter().filter(|r| r.kind == RunKind::Baco) {
        if trace_path(dir, &r.label).exists() {
            stats.push(switch_stats(dir, r)?);
        } else {
            log::warn!("no traces for {}; switch statistics omitted", r.label);
        }
    }
    let switch_stats = stats;
    write_atomic(&dir.join(SWITCH_FILE), &serde_json::to_vec_pretty(&switch_stats)?)?;
    Ok(AggregateReport { rows, results, switch_stats })
}

/// Fixed-precision CSV so repeated runs are byte-identical.
pub fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "rollup", "coverage", "dominance", "spaces", "skipped"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.rollup.label().to_string(),
            format!("{:.6}", r.coverage),
            format!("{:.6}", r.dominance),
            r.spaces.to_string(),
            r.skipped.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Input(format!("csv buffer: {e}")))
}

fn switch_stats(dir: &Path, run: &RunSummary) -> Result<SwitchStats> {
    let mut s = SwitchStats {
        label: run.label.clone(),
        method: run.method.clone(),
        value: run.value,
        tokens: vec![0; POSITION_BINS],
        base_tokens: vec![0; POSITION_BINS],
        routed: vec![0; POSITION_BINS],
        switches: vec![0; POSITION_BINS],
        routed_total: 0,
        switches_total: 0,
        mean_length: 0.0,
        eos_fraction: 0.0,
    };
    let mut traces = 0usize;
    let mut length = 0usize;
    let mut eos = 0usize;
    for (_, group) in load_run_traces(dir, &run.label)? {
        for t in group {
            traces += 1;
            length += t.tokens.len();
            eos += usize::from(t.terminated_by == Termination::EosAlignedTop1);
            let len = t.tokens.len();
            for (i, tok) in t.tokens.iter().enumerate() {
                let b = i * POSITION_BINS / len;
                s.tokens[b] += 1;
                s.base_tokens[b] += usize::from(tok.source() == Source::Base);
                if tok.is_routed() {
                    s.routed[b] += 1;
                    s.routed_total += 1;
                }
                if i > 0 && t.tokens[i - 1].source() != tok.source() {
                    s.switches[b] += 1;
                    s.switches_total += 1;
                }
            }
        }
    }
    if traces > 0 {
        s.mean_length = length as f64 / traces as f64;
        s.eos_fraction = eos as f64 / traces as f64;
    }
    Ok(s)
}

//! Generation stage: one trace file per (method, sweep value).
//!
//! Each finished (run, prompt) group is written atomically to a partial file
//! first, so an interrupted stage resumes where it stopped. When every prompt
//! of a run is present the partial files are merged, sorted by
//! (prompt_id, sample_id), into `traces/{label}.jsonl`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Run};
use super::write_atomic;
use crate::backends::ScoringBackends;
use crate::decoder::{read_traces_jsonl, write_traces_jsonl, Decoder, GenerationTrace, Prompt};
use crate::error::{Error, Result};
use crate::router::Router;

pub const TRACES_DIR: &str = "traces";
const PARTIAL_DIR: &str = ".partial";

pub fn trace_path(output_dir: &Path, label: &str) -> PathBuf {
    output_dir.join(TRACES_DIR).join(format!("{label}.jsonl"))
}

fn partial_path(output_dir: &Path, label: &str, prompt_id: &str) -> PathBuf {
    let key = hex::encode(&Sha256::digest(prompt_id.as_bytes())[..8]);
    output_dir.join(TRACES_DIR).join(PARTIAL_DIR).join(label).join(format!("{key}.jsonl"))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GenerateReport {
    pub runs: usize,
    /// Groups decoded in this invocation.
    pub decoded_groups: usize,
    /// Groups found complete from an earlier invocation.
    pub reused_groups: usize,
    pub traces: usize,
}

/// Run the generation stage. With `resume` false, existing trace and
/// partial files are discarded first.
pub fn run_generate(cfg: &ExperimentConfig, resume: bool) -> Result<GenerateReport> {
    let prompts = cfg.load_prompts()?;
    let (base, aligned) = cfg.build_models()?;
    let scoring = cfg.build_scoring()?;
    let runs = cfg.runs();
    let dir = &cfg.output_dir;
    let traces_dir = dir.join(TRACES_DIR);
    if !resume && traces_dir.exists() {
        std::fs::remove_dir_all(&traces_dir).map_err(|e| Error::io(&traces_dir, e))?;
    }
    std::fs::create_dir_all(&traces_dir).map_err(|e| Error::io(&traces_dir, e))?;

    let decoders = runs
        .iter()
        .map(|run| build_decoder(run, base.as_ref(), aligned.as_ref(), &scoring))
        .collect::<Result<Vec<_>>>()?;

    let pending: Vec<(usize, &Prompt)> = runs
        .iter()
        .enumerate()
        .filter(|(_, run)| !trace_path(dir, &run.label()).exists())
        .flat_map(|(i, _)| prompts.iter().map(move |p| (i, p)))
        .collect();
    let done_runs = runs.len() - pending.len() / prompts.len();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let outcomes: Vec<Result<bool>> = pool.install(|| {
        pending
            .par_iter()
            .map(|&(i, prompt)| {
                let path = partial_path(dir, &runs[i].label(), &prompt.prompt_id);
                if path.exists() {
                    return Ok(false);
                }
                let group = decoders[i].decode_group(prompt)?;
                let mut buf = Vec::new();
                write_traces_jsonl(&mut buf, &group.traces)?;
                write_atomic(&path, &buf)?;
                Ok(true)
            })
            .collect()
    });
    let mut report = GenerateReport { runs: runs.len(), ..Default::default() };
    let mut first_error = None;
    for o in outcomes {
        match o {
            Ok(true) => report.decoded_groups += 1,
            Ok(false) => report.reused_groups += 1,
            Err(e) => {
                log::error!("generation failed: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }
    report.reused_groups += done_runs * prompts.len();

    for run in &runs {
        let label = run.label();
        let path = trace_path(dir, &label);
        if !path.exists() {
            merge_run(dir, &label, &prompts)?;
        }
        report.traces += read_traces_jsonl(&read(&path)?)?.len();
    }
    let partial = traces_dir.join(PARTIAL_DIR);
    if partial.exists() {
        std::fs::remove_dir_all(&partial).map_err(|e| Error::io(&partial, e))?;
    }
    Ok(report)
}

fn build_decoder<'a>(
    run: &Run,
    base: &'a dyn crate::backends::ModelBackend,
    aligned: &'a dyn crate::backends::ModelBackend,
    scoring: &ScoringBackends,
) -> Result<Decoder<'a>> {
    let mut decoder = Decoder::new(base, aligned, run.decode.clone(), run.generation.clone())?;
    if let crate::decoder::Method::Baco { strategy } = &run.decode {
        if let (true, Some(judge)) = (strategy.uses_judge(), scoring.judge()) {
            decoder = decoder.with_router(Router::new(strategy.clone())?.with_judge(judge.clone()));
        }
    }
    Ok(decoder)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn merge_run(dir: &Path, label: &str, prompts: &[Prompt]) -> Result<()> {
    let mut traces: Vec<GenerationTrace> = Vec::new();
    for p in prompts {
        traces.extend(read_traces_jsonl(&read(&partial_path(dir, label, &p.prompt_id))?)?);
    }
    traces.sort_by(|a, b| (&a.prompt_id, a.sample_id).cmp(&(&b.prompt_id, b.sample_id)));
    let mut buf = Vec::new();
    write_traces_jsonl(&mut buf, &traces)?;
    write_atomic(&trace_path(dir, label), &buf)
}

/// Traces of one run, grouped by prompt in file order.
pub fn load_run_traces(dir: &Path, label: &str) -> Result<Vec<(String, Vec<GenerationTrace>)>> {
    let traces = read_traces_jsonl(&read(&trace_path(dir, label))?)?;
    let mut groups: Vec<(String, Vec<GenerationTrace>)> = Vec::new();
    for t in traces {
        match groups.last_mut() {
            Some((id, g)) if *id == t.prompt_id => g.push(t),
            _ => groups.push((t.prompt_id.clone(), vec![t])),
        }
    }
    Ok(groups)
}

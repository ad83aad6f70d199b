//! Experiment pipeline: `generate` → `evaluate` → `aggregate`.
//!
//! Stages communicate only through files in the output directory. Every
//! stage updates `manifest.json`, which lists each emitted file with its
//! SHA-256.

pub mod aggregate;
pub mod config;
pub mod evaluate;
pub mod generate;
pub mod manifest;

use std::path::Path;
use std::str::FromStr;

pub use aggregate::{run_aggregate, AggregateReport};
pub use config::{ExperimentConfig, MethodSpec, ModelSource, Run, RunKind, Sweep};
pub use evaluate::{run_evaluate, EvaluateReport};
pub use generate::{run_generate, GenerateReport};
pub use manifest::RunManifest;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Generate,
    Evaluate,
    Aggregate,
    All,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Evaluate => "evaluate",
            Stage::Aggregate => "aggregate",
            Stage::All => "all",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generate" => Ok(Stage::Generate),
            "evaluate" => Ok(Stage::Evaluate),
            "aggregate" => Ok(Stage::Aggregate),
            "all" => Ok(Stage::All),
            other => Err(Error::Config(format!("unknown stage {other:?}"))),
        }
    }
}

/// Write to a sibling temporary file and rename over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Outcome of [`run_stage`]; entries are set for the stages that ran.
#[derive(Debug, Clone, Default)]
pub struct PipelineReport {
    pub generate: Option<GenerateReport>,
    pub evaluate: Option<EvaluateReport>,
    pub aggregate: Option<AggregateReport>,
}

/// Run one stage (or all) and record it in the manifest.
pub fn run_stage(cfg: &ExperimentConfig, stage: Stage, resume: bool) -> Result<PipelineReport> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = RunManifest::open(cfg)?;
    let mut report = PipelineReport::default();
    let stages: &[Stage] = match stage {
        Stage::All => &[Stage::Generate, Stage::Evaluate, Stage::Aggregate],
        Stage::Generate => &[Stage::Generate],
        Stage::Evaluate => &[Stage::Evaluate],
        Stage::Aggregate => &[Stage::Aggregate],
    };
    for s in stages {
        log::info!("stage {}", s.name());
        manifest.start_stage(s.name());
        manifest.save(dir)?;
        let outcome = match s {
            Stage::Generate => run_generate(cfg, resume).map(|r| report.generate = Some(r)),
            Stage::Evaluate => run_evaluate(cfg).map(|r| report.evaluate = Some(r)),
            Stage::Aggregate => run_aggregate(cfg).map(|r| report.aggregate = Some(r)),
            Stage::All => unreachable!("expanded above"),
        };
        manifest.refresh_files(dir)?;
        if outcome.is_ok() {
            manifest.finish_stage(s.name());
        }
        manifest.save(dir)?;
        outcome?;
    }
    Ok(report)
}

//! Discourse-level diversity of long-form outputs from external annotations:
//! turning-point positions (TP-Div) and arousal trajectories (Arousal-Div).
//!
//! Arousal trajectories are compared as distributions: a cubic least-squares
//! fit is evaluated on 101 evenly spaced points of [0, 1], shifted so its
//! minimum is 1e−6, and normalized to sum 1. Arousal-Div is the mean of
//! KL(â_i ‖ â_j) over pairs i < j in group order.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, Judge};
use crate::error::{Error, Result};

pub const TURNING_POINTS: usize = 5;
pub const GRID_POINTS: usize = 101;
pub const CLIP: f64 = 1e-6;
pub const POLY_DEGREE: usize = 3;

/// Sidecar record for one narrative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeAnnotation {
    pub sample_id: usize,
    pub sentence_count: usize,
    /// 1-based sentence indices.
    #[serde(default)]
    pub turning_points: Vec<usize>,
    /// (relative position in [0, 1], score in [1, 10]).
    #[serde(default)]
    pub arousal: Vec<(f64, f64)>,
}

impl NarrativeAnnotation {
    /// Relative turning-point positions, or why they are unusable.
    pub fn relative_positions(&self) -> Result<Vec<f64>, String> {
        if self.turning_points.len() != TURNING_POINTS {
            return Err(format!("{} turning points, expected {TURNING_POINTS}", self.turning_points.len()));
        }
        if self.sentence_count == 0 {
            return Err("zero sentences".into());
        }
        if self.turning_points.windows(2).any(|w| w[0] >= w[1]) {
            return Err("turning points not strictly increasing".into());
        }
        if self.turning_points.iter().any(|&i| i == 0 || i > self.sentence_count) {
            return Err(format!("turning point outside [1, {}]", self.sentence_count));
        }
        Ok(self.turning_points.iter().map(|&i| i as f64 / self.sentence_count as f64).collect())
    }

    fn check_arousal(&self) -> Result<(), String> {
        if self.arousal.len() < 3 {
            return Err(format!("{} arousal samples, need at least 3", self.arousal.len()));
        }
        if self.arousal.iter().any(|(t, s)| !t.is_finite() || !s.is_finite() || !(0.0..=1.0).contains(t)) {
            return Err("arousal sample outside t ∈ [0, 1] or non-finite".into());
        }
        Ok(())
    }
}

/// A group value with the samples left out and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscourseResult {
    pub value: Option<f64>,
    pub excluded: Vec<(usize, String)>,
}

/// Mean over pairs of the mean absolute difference of relative positions.
pub fn tp_div_from_positions(positions: &[Vec<f64>]) -> Option<f64> {
    let n = positions.len();
    if n < 2 {
        return None;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = positions[i].iter().zip(&positions[j]).map(|(a, b)| (a - b).abs()).sum();
            sum += d / positions[i].len() as f64;
        }
    }
    Some(sum / (n * (n - 1) / 2) as f64)
}

pub fn tp_div(annotations: &[NarrativeAnnotation]) -> DiscourseResult {
    let mut positions = Vec::new();
    let mut excluded = Vec::new();
    for a in annotations {
        match a.relative_positions() {
            Ok(p) => positions.push(p),
            Err(e) => excluded.push((a.sample_id, e)),
        }
    }
    DiscourseResult { value: tp_div_from_positions(&positions), excluded }
}

/// Least-squares polynomial coefficients, constant term first. Uses the
/// minimum-norm solution when the samples do not determine every
/// coefficient.
pub fn fit_polynomial(samples: &[(f64, f64)], degree: usize) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Input("no samples to fit".into()));
    }
    let a = DMatrix::from_fn(samples.len(), degree + 1, |r, c| samples[r].0.powi(c as i32));
    let b = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1));
    let svd = a.svd(true, true);
    let x = svd.solve(&b, 1e-12).map_err(|e| Error::Numeric(format!("polynomial fit failed: {e}")))?;
    Ok(x.iter().copied().collect())
}

fn eval_poly(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

/// Fitted trajectory as a distribution over the grid.
pub fn trajectory_distribution(samples: &[(f64, f64)]) -> Result<Vec<f64>> {
    let coeffs = fit_polynomial(samples, POLY_DEGREE)?;
    let curve: Vec<f64> = (0..GRID_POINTS).map(|k| eval_poly(&coeffs, k as f64 / (GRID_POINTS - 1) as f64)).collect();
    Ok(shift_normalize(&curve))
}

/// Subtract the minimum, add the clip constant, normalize to sum 1.
pub fn shift_normalize(curve: &[f64]) -> Vec<f64> {
    let min = curve.iter().cloned().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = curve.iter().map(|v| v - min + CLIP).collect();
    let total: f64 = shifted.iter().sum();
    shifted.iter().map(|v| v / total).collect()
}

pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(pi, _)| **pi > 0.0).map(|(pi, qi)| pi * (pi / qi).ln()).sum()
}

/// Mean of KL(p_i ‖ p_j) over pairs i < j.
pub fn mean_pairwise_kl(dists: &[Vec<f64>]) -> Option<f64> {
    let n = dists.len();
    if n < 2 {
        return None;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += kl_divergence(&dists[i], &dists[j]);
        }
    }
    Some(sum / (n * (n - 1) / 2) as f64)
}

pub fn arousal_div(annotations: &[NarrativeAnnotation]) -> Result<DiscourseResult> {
    let mut dists = Vec::new();
    let mut excluded = Vec::new();
    for a in annotations {
        match a.check_arousal() {
            Ok(()) => dists.push(trajectory_distribution(&a.arousal)?),
            Err(e) => excluded.push((a.sample_id, e)),
        }
    }
    Ok(DiscourseResult { value: mean_pairwise_kl(&dists), excluded })
}

/// Annotation request for a chat model. The reply is expected to be the
/// sidecar JSON object for the narrative; quality of the annotation is the
/// chat model's responsibility.
pub fn annotation_request(sample_id: usize, narrative: &str) -> String {
    format!(
        "Split the story below into sentences and number them from 1.\n\
         1. Report the number of sentences.\n\
         2. Pick the {TURNING_POINTS} sentences that act as turning points of the plot, in order.\n\
         3. For every sentence, rate its emotional arousal from 1 (calm) to 10 (intense), \
         reported with its relative position (sentence index divided by the number of sentences).\n\
         Answer with a single JSON object of the form \
         {{\"sample_id\": {sample_id}, \"sentence_count\": L, \"turning_points\": [i1, i2, i3, i4, i5], \
         \"arousal\": [[t, score], ...]}}.\n\nStory:\n{narrative}\n"
    )
}

/// Send an annotation request and parse the first JSON object in the reply.
pub fn request_annotation(judge: &dyn Judge, sample_id: usize, narrative: &str) -> Result<NarrativeAnnotation> {
    let reply = judge.chat(&annotation_request(sample_id, narrative))?;
    let start = reply.find('{');
    let end = reply.rfind('}');
    match (start, end) {
        (Some(s), Some(e)) if s < e => Ok(serde_json::from_str(&reply[s..=e])?),
        _ => Err(BackendError::Protocol("annotation reply contains no JSON object".into()).into()),
    }
}

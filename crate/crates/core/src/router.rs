//! Routing strategies: which model emits the next word.
//!
//! Every rule is evaluated to one of three verdicts. Logit rules and `FC`
//! either vote `Base` or pass; `Punc` either vetoes to `Aligned` or passes;
//! `Judge` votes `Base`, passes, or forces `Aligned` when the judge cannot
//! be reached. A composite evaluates its children in order and the first
//! non-passing verdict wins; if all pass the word goes to the aligned model.
//! A standalone rule that passes routes to the aligned model, except `Punc`,
//! which routes to the base model.
//!
//! Thresholds are strict: a maximum probability exactly equal to γ, or an
//! entropy exactly equal to γ, does not route to the base model.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{Judge, Token, TokenDistribution};
use crate::error::{Error, Result};
use crate::lexeme::{classify_token, Lexicon, TokenClass};

const JUDGE_PROMPT: &str = include_str!("../data/judge_prompt.v1.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Base,
    Aligned,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Base => "base",
            Source::Aligned => "aligned",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    Rand,
    P,
    #[serde(rename = "P-a")]
    Pa,
    H,
    #[serde(rename = "H-a")]
    Ha,
    PR,
    HR,
    FC,
    Punc,
    Judge,
    Composite,
}

impl StrategyKind {
    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::Rand => "Rand",
            StrategyKind::P => "P",
            StrategyKind::Pa => "P-a",
            StrategyKind::H => "H",
            StrategyKind::Ha => "H-a",
            StrategyKind::PR => "PR",
            StrategyKind::HR => "HR",
            StrategyKind::FC => "FC",
            StrategyKind::Punc => "Punc",
            StrategyKind::Judge => "Judge",
            StrategyKind::Composite => "Composite",
        }
    }

    fn from_label(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().as_str() {
            "rand" => StrategyKind::Rand,
            "p" => StrategyKind::P,
            "p-a" | "pa" => StrategyKind::Pa,
            "h" => StrategyKind::H,
            "h-a" | "ha" => StrategyKind::Ha,
            "pr" => StrategyKind::PR,
            "hr" => StrategyKind::HR,
            "fc" => StrategyKind::FC,
            "punc" => StrategyKind::Punc,
            "judge" => StrategyKind::Judge,
            _ => return None,
        })
    }

    /// Closed interval of admissible thresholds; `None` when γ is unused.
    pub fn gamma_domain(self) -> Option<(f64, f64)> {
        match self {
            StrategyKind::Rand | StrategyKind::P | StrategyKind::Pa | StrategyKind::PR => Some((0.0, 1.0)),
            StrategyKind::H | StrategyKind::Ha => Some((0.0, f64::INFINITY)),
            StrategyKind::HR => Some((1.0, f64::INFINITY)),
            StrategyKind::FC | StrategyKind::Punc | StrategyKind::Judge | StrategyKind::Composite => None,
        }
    }

    /// Needs the inactive model's sampled candidate.
    pub fn uses_candidates(self) -> bool {
        matches!(self, StrategyKind::FC | StrategyKind::Punc)
    }
}

/// A routing strategy with its threshold γ. Serialized either as
/// `{kind, gamma, children}` or as a shorthand string such as `"P-Punc:0.4"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr")]
pub struct StrategySpec {
    pub kind: StrategyKind,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<StrategySpec>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecRepr {
    Short(String),
    Full {
        kind: StrategyKind,
        #[serde(default)]
        gamma: f64,
        #[serde(default)]
        children: Vec<StrategySpec>,
    },
}

impl TryFrom<SpecRepr> for StrategySpec {
    type Error = Error;

    fn try_from(r: SpecRepr) -> Result<Self> {
        match r {
            SpecRepr::Short(s) => s.parse(),
            SpecRepr::Full { kind, gamma, children } => {
                let spec = StrategySpec { kind, gamma, children };
                spec.validate()?;
                Ok(spec)
            }
        }
    }
}

impl StrategySpec {
    pub fn new(kind: StrategyKind, gamma: f64) -> Self {
        Self { kind, gamma, children: Vec::new() }
    }

    pub fn composite(children: Vec<StrategySpec>, gamma: f64) -> Self {
        Self { kind: StrategyKind::Composite, gamma, children }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() && self.gamma != f64::INFINITY {
            return Err(Error::Strategy(format!("γ = {} is not a number", self.gamma)));
        }
        match self.kind {
            StrategyKind::Composite => {
                if self.children.len() < 2 {
                    return Err(Error::Strategy("composite needs at least two children".into()));
                }
                for c in &self.children {
                    if c.kind == StrategyKind::Composite {
                        return Err(Error::Strategy("composites cannot nest".into()));
                    }
                    c.validate()?;
                }
            }
            kind => {
                if !self.children.is_empty() {
                    return Err(Error::Strategy(format!("{} takes no children", kind.label())));
                }
                if let Some((lo, hi)) = kind.gamma_domain() {
                    if !(lo..=hi).contains(&self.gamma) {
                        return Err(Error::Strategy(format!(
                            "γ = {} outside [{lo}, {hi}] for {}",
                            self.gamma,
                            kind.label()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Same strategy with γ replaced everywhere (composite children included).
    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self {
            kind: self.kind,
            gamma,
            children: self.children.iter().map(|c| c.with_gamma(gamma)).collect(),
        }
    }

    /// Name without the threshold, e.g. `P-Punc`.
    pub fn name(&self) -> String {
        match self.kind {
            StrategyKind::Composite => {
                self.children.iter().rev().map(|c| c.kind.label()).collect::<Vec<_>>().join("-")
            }
            k => k.label().to_string(),
        }
    }

    pub fn uses_candidates(&self) -> bool {
        self.kind.uses_candidates() || self.children.iter().any(|c| c.uses_candidates())
    }

    pub fn uses_judge(&self) -> bool {
        self.kind == StrategyKind::Judge || self.children.iter().any(|c| c.uses_judge())
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name(), self.gamma)
    }
}

impl FromStr for StrategySpec {
    type Err = Error;

    /// `NAME[:GAMMA]`. Compound names list the fallback rule first, so
    /// `P-Punc` applies `Punc` before `P`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, gamma) = match s.split_once(':') {
            Some((n, g)) => {
                let g: f64 = g.trim().parse().map_err(|_| Error::Strategy(format!("bad threshold in {s:?}")))?;
                (n.trim(), g)
            }
            None => (s.trim(), 0.0),
        };
        let spec = if let Some(kind) = StrategyKind::from_label(name) {
            StrategySpec::new(kind, gamma)
        } else {
            let mut parts = Vec::new();
            let mut rest: Vec<&str> = name.split('-').collect();
            // re-join "P-a"/"H-a" fragments
            let mut i = 0;
            while i < rest.len() {
                if i + 1 < rest.len() && rest[i + 1].eq_ignore_ascii_case("a") {
                    let joined = format!("{}-a", rest[i]);
                    let kind = StrategyKind::from_label(&joined)
                        .ok_or_else(|| Error::Strategy(format!("unknown strategy {joined:?}")))?;
                    parts.push(kind);
                    i += 2;
                } else {
                    let kind = StrategyKind::from_label(rest[i])
                        .ok_or_else(|| Error::Strategy(format!("unknown strategy {:?}", rest[i])))?;
                    parts.push(kind);
                    i += 1;
                }
            }
            rest.clear();
            parts.reverse();
            StrategySpec::composite(parts.into_iter().map(|k| StrategySpec::new(k, gamma)).collect(), gamma)
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Statistics the decision was based on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingSnapshot {
    pub base_max_prob: f64,
    pub base_entropy: f64,
    pub aligned_max_prob: f64,
    pub aligned_entropy: f64,
    pub base_class: TokenClass,
    pub aligned_class: TokenClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub target: Source,
    pub reason: String,
    pub inputs: RoutingSnapshot,
}

/// Everything a routing rule may look at for one word boundary.
pub struct RoutingInputs<'a> {
    /// Raw (pre-sampling) next-token distributions.
    pub base_dist: &'a TokenDistribution,
    pub aligned_dist: &'a TokenDistribution,
    /// Tokens each model would emit under the current sampling parameters.
    pub base_candidate: &'a Token,
    pub aligned_candidate: &'a Token,
    pub prompt: &'a str,
    /// Response text generated so far.
    pub response: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
enum Verdict {
    Base(String),
    Aligned(String),
    Pass,
}

/// A strategy bound to its lexicon and optional judge.
#[derive(Clone)]
pub struct Router {
    spec: StrategySpec,
    lexicon: Arc<Lexicon>,
    judge: Option<Arc<dyn Judge>>,
}

impl Router {
    pub fn new(spec: StrategySpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, lexicon: Arc::new(Lexicon::english()), judge: None })
    }

    pub fn with_lexicon(mut self, lexicon: Arc<Lexicon>) -> Self {
        self.lexicon = lexicon;
        self
    }

    pub fn with_judge(mut self, judge: Arc<dyn Judge>) -> Self {
        self.judge = Some(judge);
        self
    }

    pub fn spec(&self) -> &StrategySpec {
        &self.spec
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn decide<R: Rng + ?Sized>(&self, inputs: &RoutingInputs<'_>, rng: &mut R) -> RoutingDecision {
        let snap = RoutingSnapshot {
            base_max_prob: inputs.base_dist.max_prob(),
            base_entropy: inputs.base_dist.entropy(),
            aligned_max_prob: inputs.aligned_dist.max_prob(),
            aligned_entropy: inputs.aligned_dist.entropy(),
            base_class: classify_token(&inputs.base_candidate.surface, true, &self.lexicon),
            aligned_class: classify_token(&inputs.aligned_candidate.surface, true, &self.lexicon),
        };
        let (target, reason) = match self.spec.kind {
            StrategyKind::Composite => {
                let mut out = (Source::Aligned, "aligned_default".to_string());
                for child in &self.spec.children {
                    match self.verdict(child, &snap, inputs, rng) {
                        Verdict::Base(r) => {
                            out = (Source::Base, r);
                            break;
                        }
                        Verdict::Aligned(r) => {
                            out = (Source::Aligned, r);
                            break;
                        }
                        Verdict::Pass => {}
                    }
                }
                out
            }
            kind => match self.verdict(&self.spec, &snap, inputs, rng) {
                Verdict::Base(r) => (Source::Base, r),
                Verdict::Aligned(r) => (Source::Aligned, r),
                Verdict::Pass if kind == StrategyKind::Punc => (Source::Base, kind.label().to_string()),
                Verdict::Pass => (Source::Aligned, kind.label().to_string()),
            },
        };
        RoutingDecision { target, reason, inputs: snap }
    }

    fn verdict<R: Rng + ?Sized>(
        &self,
        rule: &StrategySpec,
        snap: &RoutingSnapshot,
        inputs: &RoutingInputs<'_>,
        rng: &mut R,
    ) -> Verdict {
        let label = rule.kind.label().to_string();
        let gamma = rule.gamma;
        let base_if = |cond: bool| if cond { Verdict::Base(label.clone()) } else { Verdict::Pass };
        match rule.kind {
            StrategyKind::Rand => base_if(rng.random::<f64>() < gamma),
            StrategyKind::P => base_if(snap.base_max_prob < gamma),
            StrategyKind::Pa => base_if(snap.aligned_max_prob < gamma),
            StrategyKind::H => base_if(snap.base_entropy > gamma),
            StrategyKind::Ha => base_if(snap.aligned_entropy > gamma),
            StrategyKind::PR => base_if(snap.base_max_prob / snap.aligned_max_prob < gamma),
            StrategyKind::HR => {
                if snap.aligned_entropy == 0.0 {
                    if snap.base_entropy > 0.0 {
                        Verdict::Base("degenerate_ratio".into())
                    } else {
                        Verdict::Aligned("degenerate_ratio".into())
                    }
                } else {
                    base_if(snap.base_entropy / snap.aligned_entropy > gamma)
                }
            }
            StrategyKind::Punc => {
                if snap.base_class == TokenClass::PunctOrFormat || snap.aligned_class == TokenClass::PunctOrFormat {
                    Verdict::Aligned(label)
                } else {
                    Verdict::Pass
                }
            }
            StrategyKind::FC => base_if(
                snap.base_class == TokenClass::FunctionWordStart
                    || (snap.base_class == TokenClass::ContentWordStart
                        && snap.aligned_class == TokenClass::ContentWordStart),
            ),
            StrategyKind::Judge => match &self.judge {
                None => Verdict::Aligned("judge_unavailable".into()),
                Some(j) => match j.chat(&judge_prompt(inputs.prompt, inputs.response)) {
                    Err(_) => Verdict::Aligned("judge_unavailable".into()),
                    Ok(reply) => match parse_judge_reply(&reply) {
                        Some(true) => Verdict::Base(label),
                        Some(false) => Verdict::Pass,
                        None => Verdict::Aligned("judge_unparsable".into()),
                    },
                },
            },
            StrategyKind::Composite => unreachable!("validated: composites do not nest"),
        }
    }
}

/// The judge prompt with the few-shot demonstrations and the test sample.
pub fn judge_prompt(prompt: &str, response: &str) -> String {
    JUDGE_PROMPT.replace("{prompt}", prompt).replace("{response}", response)
}

/// First whole-word "yes" or "no" in the reply, case-insensitive.
pub fn parse_judge_reply(reply: &str) -> Option<bool> {
    reply
        .split(|c: char| !c.is_alphanumeric())
        .map(str::to_ascii_lowercase)
        .find_map(|w| match w.as_str() {
            "yes" => Some(true),
            "no" => Some(false),
            _ => None,
        })
}

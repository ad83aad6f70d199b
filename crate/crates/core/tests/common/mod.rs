#![allow(dead_code)]

use baco::backends::synthetic::{SyntheticConfig, SyntheticModel};
use baco::Prompt;

pub const WORDS: [&str; 10] = ["river", "stone", "lantern", "orchard", "harbor", "meadow", "comet", "violin", "glacier", "market"];

/// Base: ten equally likely stories sharing the first word. Aligned: one
/// story with almost all mass.
pub fn story_pair(aligned_mass: f64, smoothing: f64) -> (SyntheticModel, SyntheticModel) {
    let stories: Vec<String> = WORDS.iter().map(|w| format!("Once the {w} moun|tain sang , and left .")).collect();
    let base = SyntheticConfig::from_templates(stories.iter().map(|s| (s.clone(), 1.0)))
        .with_name("base")
        .with_smoothing(smoothing);
    let rest = (1.0 - aligned_mass) / 9.0;
    let aligned = SyntheticConfig::from_templates(
        stories.iter().enumerate().map(|(i, s)| (s.clone(), if i == 0 { aligned_mass } else { rest })),
    )
    .with_name("aligned")
    .with_smoothing(smoothing);
    let mut m = SyntheticModel::build_shared(&[base, aligned]).unwrap();
    let aligned = m.pop().unwrap();
    (m.pop().unwrap(), aligned)
}

/// Both models share one long template, so every step after the first is a
/// routing step and no trace ends before `max_tokens`.
pub fn long_pair(words: usize) -> (SyntheticModel, SyntheticModel) {
    let text: Vec<String> = (0..words).map(|i| format!("w{i}")).collect();
    let text = text.join(" ");
    let base = SyntheticConfig::from_templates([(text.clone(), 1.0)]).with_name("base");
    let aligned = SyntheticConfig::from_templates([(text, 1.0)]).with_name("aligned");
    let mut m = SyntheticModel::build_shared(&[base, aligned]).unwrap();
    let aligned = m.pop().unwrap();
    (m.pop().unwrap(), aligned)
}

pub fn prompt(id: &str) -> Prompt {
    Prompt { prompt_id: id.to_string(), text: format!("Write a short story ({id}).") }
}

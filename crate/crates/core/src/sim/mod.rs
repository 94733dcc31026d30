//! Agenda-driven dialogue simulator: topic selection, template pairing,
//! expression substitution, multi-turn state tracking, and exhaustive
//! (symptom, attribute) annotation.

mod distribution;
mod generate;
mod stats;

pub use distribution::{boost_distribution, draw_categorical, RawTypePercentages, TypeDistribution};
pub use generate::{
    annotate_dialogue, build_eval_sets, generate_corpus, generate_dialogue, select_topic,
    DialogueOutput, DialogueState, EvalSets, Fact, FactKind, Trace,
};
pub use stats::GenStats;

use serde::{Deserialize, Serialize};

use crate::corpus::{AttributeKind, SymptomId};
use crate::{Error, Result};

/// Generator configuration. Loaded from TOML; every field has a default so
/// small configs stay small.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// Symptoms queried during training; each needs matrix and pool entries.
    pub inventory: Vec<String>,
    /// Held-out symptoms for the augmented evaluation set.
    pub ood_symptoms: Vec<String>,
    /// patient : caregiver respondent ratio.
    pub respondent_ratio: (u32, u32),
    pub gender_prob_female: f64,
    /// Probability a symptom is present when first asked.
    pub presence_prob: f64,
    /// Probability a polar proposal is confirmed rather than corrected.
    pub confirm_prob: f64,
    pub seed: u64,
    /// Optional attribute allowlist intersected with the matrix (toy runs).
    pub attributes: Option<Vec<String>>,
    pub distribution: RawTypePercentages,
    /// Held-out evaluation set sizes.
    pub base_set_size: usize,
    /// Dialogues that receive one out-of-distribution exchange each; every
    /// insertion contributes two answerable queries.
    pub augmented_dialogues: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            inventory: [
                "chest pain",
                "cough",
                "headache",
                "swelling",
                "dizziness",
                "shortness of breath",
                "fatigue",
                "palpitations",
                "poor appetite",
            ]
            .map(String::from)
            .to_vec(),
            ood_symptoms: vec!["bleeding".into(), "cold".into()],
            respondent_ratio: (2, 1),
            gender_prob_female: 0.5,
            presence_prob: 0.5,
            confirm_prob: 0.5,
            seed: 7,
            attributes: None,
            distribution: RawTypePercentages::default(),
            base_set_size: 1264,
            augmented_dialogues: 8,
        }
    }
}

impl GenConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: GenConfig =
            toml::from_str(text).map_err(|e| Error::config("gen config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.inventory.is_empty() {
            problems.push("inventory is empty".to_string());
        }
        if self.respondent_ratio.0 == 0 || self.respondent_ratio.1 == 0 {
            problems.push("respondent ratio components must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.gender_prob_female) {
            problems.push("gender_prob_female out of [0,1]".to_string());
        }
        if !(0.0 < self.presence_prob && self.presence_prob < 1.0) {
            problems.push("presence_prob must be in (0,1)".to_string());
        }
        for ood in &self.ood_symptoms {
            if self.inventory.iter().any(|s| s == ood) {
                problems.push(format!("ood symptom {ood:?} is in the training inventory"));
            }
        }
        if let Some(attrs) = &self.attributes {
            for a in attrs {
                if AttributeKind::parse(a).is_none() {
                    problems.push(format!("unknown attribute {a:?} in filter"));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config("gen config", problems.join("\n")))
        }
    }

    pub fn symptom_ids(&self) -> Vec<SymptomId> {
        self.inventory.iter().map(SymptomId::new).collect()
    }

    pub fn ood_ids(&self) -> Vec<SymptomId> {
        self.ood_symptoms.iter().map(SymptomId::new).collect()
    }

    pub fn attribute_filter(&self) -> Option<Vec<AttributeKind>> {
        self.attributes
            .as_ref()
            .map(|v| v.iter().filter_map(|a| AttributeKind::parse(a)).collect())
    }
}

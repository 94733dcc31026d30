//! Corpus-level generation statistics.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, Sample, SpeakerRole, UtteranceType};

use super::TypeDistribution;

/// Aggregate statistics over a generated corpus, with observed-vs-target
/// frequencies for every utterance type.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GenStats {
    pub n_dialogues: usize,
    pub n_samples: usize,
    pub mean_words: f64,
    pub mean_tokens: f64,
    pub patient_fraction: f64,
    pub answerable_fraction: f64,
    /// Observed label frequency per base/modifier type, against its target.
    pub type_frequencies: BTreeMap<String, Observed>,

    #[serde(skip)]
    total_words: usize,
    #[serde(skip)]
    total_tokens: usize,
    #[serde(skip)]
    patient_dialogues: usize,
    #[serde(skip)]
    answerable: usize,
    #[serde(skip)]
    inquiry_turns: usize,
    #[serde(skip)]
    response_turns: usize,
    #[serde(skip)]
    label_counts: BTreeMap<UtteranceType, usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Observed {
    pub observed: f64,
    pub target: f64,
}

impl GenStats {
    pub fn record(&mut self, dialogue: &Dialogue, samples: &[Sample]) {
        self.n_dialogues += 1;
        self.total_words += dialogue.word_count();
        self.total_tokens += dialogue.flat_len() - 1;
        if dialogue.respondent_role == SpeakerRole::Patient {
            self.patient_dialogues += 1;
        }
        self.n_samples += samples.len();
        self.answerable += samples.iter().filter(|s| s.answer.is_span()).count();
        for turn in &dialogue.turns {
            if turn.role == SpeakerRole::Nurse {
                self.inquiry_turns += 1;
            } else {
                self.response_turns += 1;
            }
            for &label in &turn.utterance_types {
                *self.label_counts.entry(label).or_default() += 1;
            }
        }
    }

    /// Computes the derived ratios. Call once after the last `record`.
    pub fn finish(&mut self, dist: &TypeDistribution) {
        let nd = self.n_dialogues.max(1) as f64;
        self.mean_words = self.total_words as f64 / nd;
        self.mean_tokens = self.total_tokens as f64 / nd;
        self.patient_fraction = self.patient_dialogues as f64 / nd;
        self.answerable_fraction = self.answerable as f64 / self.n_samples.max(1) as f64;

        let inquiry = self.inquiry_turns.max(1) as f64;
        let response = self.response_turns.max(1) as f64;
        let mut freq = |label: UtteranceType, denom: f64, target: f64| {
            let observed = *self.label_counts.get(&label).unwrap_or(&0) as f64 / denom;
            self.type_frequencies.insert(
                format!("{label:?}"),
                Observed { observed, target },
            );
        };
        for base in UtteranceType::INQUIRY_BASES {
            freq(base, inquiry, dist.target(base));
        }
        for base in UtteranceType::RESPONSE_BASES {
            freq(base, response, dist.target(base));
        }
        freq(UtteranceType::Revision, response, dist.p_revision);
        freq(UtteranceType::TopicDrift, response, dist.p_topic_drift);
        // Transitional clauses attach to both roles with separate targets;
        // report against the blended denominator.
        let trans = *self
            .label_counts
            .get(&UtteranceType::TransitionalClause)
            .unwrap_or(&0) as f64;
        self.type_frequencies.insert(
            "TransitionalClause".to_string(),
            Observed {
                observed: trans / (inquiry + response),
                target: (dist.p_inquiry_transitional + dist.p_response_transitional) / 2.0,
            },
        );
    }

    /// Label frequency over turns of the label's role, for tests.
    pub fn frequency(&self, label: UtteranceType) -> f64 {
        let denom = if UtteranceType::INQUIRY_BASES.contains(&label) {
            self.inquiry_turns
        } else {
            self.response_turns
        }
        .max(1) as f64;
        *self.label_counts.get(&label).unwrap_or(&0) as f64 / denom
    }

    pub fn inquiry_turns(&self) -> usize {
        self.inquiry_turns
    }

    pub fn response_turns(&self) -> usize {
        self.response_turns
    }
}

impl fmt::Display for GenStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dialogues            {}", self.n_dialogues)?;
        writeln!(f, "samples              {}", self.n_samples)?;
        writeln!(f, "mean words/dialogue  {:.1}", self.mean_words)?;
        writeln!(f, "mean tokens/dialogue {:.1}", self.mean_tokens)?;
        writeln!(f, "patient fraction     {:.3}", self.patient_fraction)?;
        writeln!(f, "answerable fraction  {:.3}", self.answerable_fraction)?;
        writeln!(f, "type frequencies (observed / target):")?;
        for (label, o) in &self.type_frequencies {
            writeln!(f, "  {label:<20} {:.3} / {:.3}", o.observed, o.target)?;
        }
        Ok(())
    }
}

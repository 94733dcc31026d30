//! Canonical data types for dialogues, queries, answers, and samples, plus
//! the line-delimited corpus format.
//!
//! Span coordinates live in a single flattened index space: position 0 is a
//! reserved sentinel token prepended to the dialogue, and positions 1.. are
//! the turn tokens in turn order, left to right. All gold and predicted spans
//! use these indices.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bank::CompatibilityMatrix;
use crate::{Error, Result};

/// Surface form of the sentinel token at flattened position 0.
pub const SENTINEL_TOKEN: &str = "[seq]";

/// Corpus file format tag, written as the first line of every corpus file.
pub const CORPUS_FORMAT: &str = "symdial-corpus";
/// Current corpus format version.
pub const CORPUS_VERSION: u32 = 1;

/// Lowercase key identifying a symptom, e.g. `"chest pain"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SymptomId(pub String);

impl SymptomId {
    pub fn new(name: impl Into<String>) -> Self {
        SymptomId(name.into().to_lowercase())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SymptomId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The five clinically significant detail dimensions a query can ask about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Time,
    Activity,
    Extent,
    Frequency,
    Location,
}

impl AttributeKind {
    pub const ALL: [AttributeKind; 5] = [
        AttributeKind::Time,
        AttributeKind::Activity,
        AttributeKind::Extent,
        AttributeKind::Frequency,
        AttributeKind::Location,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttributeKind::Time => "time",
            AttributeKind::Activity => "activity",
            AttributeKind::Extent => "extent",
            AttributeKind::Frequency => "frequency",
            AttributeKind::Location => "location",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }
}

impl fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeakerRole {
    Nurse,
    Patient,
    Caregiver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Female,
    Male,
}

/// Linguistic labels attached to a turn. A single turn may carry several:
/// one base type plus any modifier flags that applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtteranceType {
    // Inquiry base types.
    OpenEnded,
    Detailed,
    MultiIntent,
    Reconfirmation,
    // Response base types.
    YesNo,
    DetailedResponse,
    // Modifier flags.
    TransitionalClause,
    Revision,
    TopicDrift,
}

impl UtteranceType {
    pub const INQUIRY_BASES: [UtteranceType; 4] = [
        UtteranceType::OpenEnded,
        UtteranceType::Detailed,
        UtteranceType::MultiIntent,
        UtteranceType::Reconfirmation,
    ];
    pub const RESPONSE_BASES: [UtteranceType; 2] =
        [UtteranceType::YesNo, UtteranceType::DetailedResponse];
    pub const MODIFIERS: [UtteranceType; 3] = [
        UtteranceType::TransitionalClause,
        UtteranceType::Revision,
        UtteranceType::TopicDrift,
    ];

    pub fn is_modifier(self) -> bool {
        Self::MODIFIERS.contains(&self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: SpeakerRole,
    pub tokens: Vec<String>,
    /// Trace metadata from the simulator; survives serialization.
    #[serde(default)]
    pub utterance_types: BTreeSet<UtteranceType>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub turns: Vec<Turn>,
    pub respondent_role: SpeakerRole,
    /// Gender governing third-person pronoun agreement.
    pub respondent_gender: Gender,
}

impl Dialogue {
    /// Total flattened length including the sentinel.
    pub fn flat_len(&self) -> usize {
        1 + self.turns.iter().map(|t| t.tokens.len()).sum::<usize>()
    }

    /// Count of word tokens (at least one alphanumeric character), the unit
    /// used for dialogue-length statistics.
    pub fn word_count(&self) -> usize {
        self.turns
            .iter()
            .flat_map(|t| &t.tokens)
            .filter(|tok| tok.chars().any(|c| c.is_alphanumeric()))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub symptom: SymptomId,
    pub attribute: AttributeKind,
}

/// Either a token span in flattened coordinates or an explicit no-answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Answer {
    Span { start: usize, end: usize },
    NoAnswer,
}

impl Answer {
    pub fn is_span(&self) -> bool {
        matches!(self, Answer::Span { .. })
    }

    /// Inclusive token-index set covered by the answer; empty for no-answer.
    pub fn index_set(&self) -> std::ops::Range<usize> {
        match self {
            Answer::Span { start, end } => *start..*end + 1,
            Answer::NoAnswer => 0..0,
        }
    }
}

/// One training or evaluation unit: a dialogue, a query against it, and the
/// gold answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub dialogue: Dialogue,
    pub query: Query,
    pub answer: Answer,
}

/// Flattened view of a dialogue: sentinel-prefixed token list plus the
/// bijective mapping between (turn, offset) pairs and global indices.
#[derive(Debug, Clone)]
pub struct FlatDialogue {
    pub tokens: Vec<String>,
    /// Global index of each turn's first token.
    turn_starts: Vec<usize>,
}

impl FlatDialogue {
    /// Global flattened index for a (turn, offset) position.
    pub fn global_index(&self, turn: usize, offset: usize) -> usize {
        self.turn_starts[turn] + offset
    }

    /// Inverse of [`global_index`]. Index 0 is the sentinel and has no
    /// turn-local position.
    pub fn turn_offset(&self, global: usize) -> Option<(usize, usize)> {
        if global == 0 || global >= self.tokens.len() {
            return None;
        }
        let turn = match self.turn_starts.binary_search(&global) {
            Ok(t) => t,
            Err(ins) => ins - 1,
        };
        Some((turn, global - self.turn_starts[turn]))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Flattens a dialogue into the canonical sentinel-prefixed token list.
pub fn flatten(dialogue: &Dialogue) -> FlatDialogue {
    let mut tokens = Vec::with_capacity(dialogue.flat_len());
    tokens.push(SENTINEL_TOKEN.to_string());
    let mut turn_starts = Vec::with_capacity(dialogue.turns.len());
    for turn in &dialogue.turns {
        turn_starts.push(tokens.len());
        tokens.extend(turn.tokens.iter().cloned());
    }
    FlatDialogue {
        tokens,
        turn_starts,
    }
}

/// A structural problem found in a sample. Collected rather than panicked on,
/// so callers can report all violations at once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyTurn { turn: usize },
    NoTurns,
    BadAlternation { turn: usize },
    SentinelReserved,
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    SpanInverted { start: usize, end: usize },
    UnknownSymptom(SymptomId),
    IncompatibleAttribute(SymptomId, AttributeKind),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyTurn { turn } => write!(f, "turn {turn} has no tokens"),
            Violation::NoTurns => write!(f, "dialogue has no turns"),
            Violation::BadAlternation { turn } => {
                write!(f, "turn {turn} breaks nurse/respondent alternation")
            }
            Violation::SentinelReserved => {
                write!(f, "sentinel reserved: stored spans must start at index >= 1")
            }
            Violation::SpanOutOfBounds { start, end, len } => {
                write!(f, "span ({start},{end}) outside flattened length {len}")
            }
            Violation::SpanInverted { start, end } => write!(f, "span start {start} > end {end}"),
            Violation::UnknownSymptom(s) => write!(f, "symptom {s:?} not in inventory"),
            Violation::IncompatibleAttribute(s, a) => {
                write!(f, "attribute {a} not allowed for symptom {s}")
            }
        }
    }
}

/// Checks span bounds, sentinel reservation, turn structure, and
/// symptom/attribute compatibility. Returns every violation found.
pub fn validate_sample(sample: &Sample, compat: &CompatibilityMatrix) -> Vec<Violation> {
    let mut out = Vec::new();
    let d = &sample.dialogue;
    if d.turns.is_empty() {
        out.push(Violation::NoTurns);
    }
    for (i, turn) in d.turns.iter().enumerate() {
        if turn.tokens.is_empty() {
            out.push(Violation::EmptyTurn { turn: i });
        }
        let expect_nurse = i % 2 == 0;
        let is_nurse = turn.role == SpeakerRole::Nurse;
        if expect_nurse != is_nurse {
            out.push(Violation::BadAlternation { turn: i });
        }
    }
    let len = d.flat_len();
    match sample.answer {
        Answer::Span { start, end } => {
            if start == 0 {
                out.push(Violation::SentinelReserved);
            } else if start > end {
                out.push(Violation::SpanInverted { start, end });
            } else if end >= len {
                out.push(Violation::SpanOutOfBounds { start, end, len });
            }
        }
        Answer::NoAnswer => {}
    }
    if !compat.knows(&sample.query.symptom) {
        out.push(Violation::UnknownSymptom(sample.query.symptom.clone()));
    } else if sample.answer.is_span()
        && !compat.allows(&sample.query.symptom, sample.query.attribute)
    {
        // An incompatible pair can legitimately be queried; its gold answer
        // is no-answer. Only an asserted span for such a pair is a defect.
        out.push(Violation::IncompatibleAttribute(
            sample.query.symptom.clone(),
            sample.query.attribute,
        ));
    }
    out
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

/// Writes samples as line-delimited records with a version header, atomically
/// (temp file then rename).
pub fn write_corpus(path: &Path, samples: &[Sample]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        write_corpus_to(&mut w, samples).map_err(|e| Error::io(&tmp, e))?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_corpus_to<W: Write>(w: &mut W, samples: &[Sample]) -> std::io::Result<()> {
    let header = Header {
        format: CORPUS_FORMAT.to_string(),
        version: CORPUS_VERSION,
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    for sample in samples {
        serde_json::to_writer(&mut *w, sample)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a corpus file written by [`write_corpus`]. Errors carry the 1-based
/// line number of the offending record.
pub fn read_corpus(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let header_line = match lines.next() {
        None => return Ok(Vec::new()), // empty file, empty corpus
        Some((_, line)) => line.map_err(|e| Error::io(path, e))?,
    };
    if header_line.trim().is_empty() {
        return Ok(Vec::new());
    }
    let header: Header = serde_json::from_str(&header_line).map_err(|e| Error::Corpus {
        path: path.to_path_buf(),
        line: 1,
        detail: format!("bad header: {e}"),
    })?;
    if header.format != CORPUS_FORMAT || header.version != CORPUS_VERSION {
        return Err(Error::Corpus {
            path: path.to_path_buf(),
            line: 1,
            detail: format!(
                "unsupported format {}/{} (expected {}/{})",
                header.format, header.version, CORPUS_FORMAT, CORPUS_VERSION
            ),
        });
    }

    let mut samples = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|e| Error::Corpus {
            path: path.to_path_buf(),
            line: idx + 1,
            detail: e.to_string(),
        })?;
        samples.push(sample);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::CompatibilityMatrix;

    pub(crate) fn turn(role: SpeakerRole, words: &[&str]) -> Turn {
        Turn {
            role,
            tokens: words.iter().map(|w| w.to_string()).collect(),
            utterance_types: BTreeSet::new(),
        }
    }

    fn two_turn_dialogue() -> Dialogue {
        Dialogue {
            turns: vec![
                turn(SpeakerRole::Nurse, &["any", "cough", "?"]),
                turn(SpeakerRole::Patient, &["no", ",", "no", "cough"]),
            ],
            respondent_role: SpeakerRole::Patient,
            respondent_gender: Gender::Female,
        }
    }

    fn small_matrix() -> CompatibilityMatrix {
        let mut m = CompatibilityMatrix::default();
        m.insert(
            SymptomId::new("cough"),
            [
                AttributeKind::Time,
                AttributeKind::Extent,
                AttributeKind::Frequency,
                AttributeKind::Activity,
            ]
            .into(),
        );
        m
    }

    #[test]
    fn flatten_prepends_sentinel_and_counts() {
        let d = two_turn_dialogue();
        let flat = flatten(&d);
        assert_eq!(flat.len(), 8);
        assert_eq!(flat.tokens[0], SENTINEL_TOKEN);
        assert_eq!(flat.tokens[1], "any");
        assert_eq!(flat.tokens[4], "no");
    }

    #[test]
    fn flatten_index_roundtrip() {
        let d = two_turn_dialogue();
        let flat = flatten(&d);
        // Global 5 is turn 1, offset 1.
        assert_eq!(flat.turn_offset(5), Some((1, 1)));
        assert_eq!(flat.global_index(1, 1), 5);
        for g in 1..flat.len() {
            let (t, o) = flat.turn_offset(g).unwrap();
            assert_eq!(flat.global_index(t, o), g);
        }
        assert_eq!(flat.turn_offset(0), None);
        assert_eq!(flat.turn_offset(flat.len()), None);
    }

    #[test]
    fn validate_accepts_good_span() {
        let sample = Sample {
            id: "s0".into(),
            dialogue: two_turn_dialogue(),
            query: Query {
                symptom: SymptomId::new("cough"),
                attribute: AttributeKind::Time,
            },
            answer: Answer::Span { start: 4, end: 6 },
        };
        assert!(validate_sample(&sample, &small_matrix()).is_empty());
    }

    #[test]
    fn validate_rejects_sentinel_span_in_sample() {
        let sample = Sample {
            id: "s0".into(),
            dialogue: two_turn_dialogue(),
            query: Query {
                symptom: SymptomId::new("cough"),
                attribute: AttributeKind::Time,
            },
            answer: Answer::Span { start: 0, end: 0 },
        };
        let v = validate_sample(&sample, &small_matrix());
        assert!(v.contains(&Violation::SentinelReserved));
    }

    #[test]
    fn validate_rejects_incompatible_attribute_span() {
        let sample = Sample {
            id: "s0".into(),
            dialogue: two_turn_dialogue(),
            query: Query {
                symptom: SymptomId::new("cough"),
                attribute: AttributeKind::Location,
            },
            answer: Answer::Span { start: 4, end: 6 },
        };
        let v = validate_sample(&sample, &small_matrix());
        assert_eq!(
            v,
            vec![Violation::IncompatibleAttribute(
                SymptomId::new("cough"),
                AttributeKind::Location
            )]
        );
        // The same pair with a no-answer gold is the expected encoding.
        let na = Sample {
            answer: Answer::NoAnswer,
            ..sample
        };
        assert!(validate_sample(&na, &small_matrix()).is_empty());
    }

    #[test]
    fn corpus_roundtrip_identity() {
        let mut samples = Vec::new();
        for i in 0..5 {
            let mut d = two_turn_dialogue();
            d.turns[0]
                .utterance_types
                .insert(UtteranceType::OpenEnded);
            d.turns[1].utterance_types.insert(UtteranceType::YesNo);
            d.turns[1]
                .utterance_types
                .insert(UtteranceType::TopicDrift);
            samples.push(Sample {
                id: format!("s{i}"),
                dialogue: d,
                query: Query {
                    symptom: SymptomId::new("cough"),
                    attribute: AttributeKind::ALL[i % 5],
                },
                answer: if i % 2 == 0 {
                    Answer::Span { start: 4, end: 6 }
                } else {
                    Answer::NoAnswer
                },
            });
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_corpus(&path, &samples).unwrap();
        let back = read_corpus(&path).unwrap();
        assert_eq!(samples, back);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(read_corpus(&path).unwrap().is_empty());
    }

    #[test]
    fn truncated_record_errors_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let mut buf = Vec::new();
        write_corpus_to(&mut buf, &[]).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text.push_str("{\"id\": \"s0\", \"dialogue\"\n");
        std::fs::write(&path, text).unwrap();
        match read_corpus(&path) {
            Err(Error::Corpus { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected corpus error, got {other:?}"),
        }
    }
}

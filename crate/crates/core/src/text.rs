//! Tokenization, vocabulary, pretrained-vector loading, and encoding of
//! samples into index sequences.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{flatten, Answer, Sample};
use crate::rng::{self, stream_rng};
use crate::{Error, Result};

pub const PAD_ID: usize = 0;
pub const SENTINEL_ID: usize = 1;
pub const OOV_ID: usize = 2;
const RESERVED: usize = 3;

/// Lowercases and splits text into word and punctuation tokens. Runs of two
/// or more dots collapse to a single "..." token; apostrophes and hyphens
/// between letters stay inside the word.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let chars: Vec<char> = text.chars().flat_map(|c| c.to_lowercase()).collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            flush(&mut word, &mut out);
            i += 1;
        } else if c.is_alphanumeric() {
            word.push(c);
            i += 1;
        } else if (c == '\'' || c == '-')
            && !word.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            word.push(c);
            i += 1;
        } else if c == '.' && chars.get(i + 1) == Some(&'.') {
            flush(&mut word, &mut out);
            while chars.get(i) == Some(&'.') {
                i += 1;
            }
            out.push("...".to_string());
        } else {
            flush(&mut word, &mut out);
            out.push(c.to_string());
            i += 1;
        }
    }
    flush(&mut word, &mut out);
    out
}

fn flush(word: &mut String, out: &mut Vec<String>) {
    if !word.is_empty() {
        out.push(std::mem::take(word));
    }
}

/// Token-to-id map with reserved ids 0=PAD, 1=sentinel, 2=OOV. Ids are dense
/// and assigned in sorted token order, so the same token set always yields
/// the same vocabulary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    pub embedding_dim: usize,
}

impl Vocabulary {
    pub fn build(words: impl IntoIterator<Item = String>, embedding_dim: usize) -> Self {
        let unique: BTreeSet<String> = words
            .into_iter()
            .filter(|w| w != crate::corpus::SENTINEL_TOKEN)
            .collect();
        let mut tokens = vec!["<pad>".to_string(), crate::corpus::SENTINEL_TOKEN.to_string(), "<oov>".to_string()];
        tokens.extend(unique);
        let mut v = Vocabulary {
            tokens,
            index: HashMap::new(),
            embedding_dim,
        };
        v.rebuild_index();
        v
    }

    /// Restores the lookup index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(OOV_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= RESERVED
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED..]
    }
}

/// Dense embedding table in vocabulary id order.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
    /// Fraction of non-reserved vocabulary tokens missing from the file.
    pub oov_fraction: f64,
    /// Vocabulary tokens that fell back to the shared random vector.
    pub oov_tokens: Vec<String>,
}

/// Loads word vectors in the plain-text layout (token then D decimals per
/// line). Every vocabulary token missing from the file shares one random
/// vector drawn from the seed; the PAD row is zero; the sentinel row is a
/// separate random draw and is the one trainable row of a fixed table.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, seed: u64) -> Result<EmbeddingMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let dim = vocab.embedding_dim;
    let mut file_rows: HashMap<String, Vec<f64>> = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = match parts.next() {
            Some(t) => t.to_string(),
            None => continue,
        };
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|e| {
                    Error::config(
                        format!("{}:{}", path.display(), lineno + 1),
                        format!("bad vector component {p:?}: {e}"),
                    )
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::config(
                format!("{}:{}", path.display(), lineno + 1),
                format!(
                    "vector for {token:?} has {} components, expected {dim}",
                    values.len()
                ),
            ));
        }
        file_rows.insert(token, values);
    }

    let mut rng = stream_rng(seed, rng::stream::EMBEDDING, 0);
    let shared_oov: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let sentinel_row: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();

    let mut rows = Vec::with_capacity(vocab.len());
    let mut oov_tokens = Vec::new();
    for id in 0..vocab.len() {
        let row = match id {
            PAD_ID => vec![0.0; dim],
            SENTINEL_ID => sentinel_row.clone(),
            OOV_ID => shared_oov.clone(),
            _ => {
                let token = vocab.token(id);
                match file_rows.get(token) {
                    Some(r) => r.clone(),
                    None => {
                        oov_tokens.push(token.to_string());
                        shared_oov.clone()
                    }
                }
            }
        };
        rows.push(row);
    }
    let n_words = vocab.len().saturating_sub(RESERVED);
    let oov_fraction = if n_words == 0 {
        0.0
    } else {
        oov_tokens.len() as f64 / n_words as f64
    };
    Ok(EmbeddingMatrix {
        dim,
        rows,
        oov_fraction,
        oov_tokens,
    })
}

/// Sample encoded as id sequences plus gold indices. No-answer is encoded as
/// the sentinel span (0, 0) with answerable = 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSample {
    pub id: String,
    pub dialogue_ids: Vec<usize>,
    pub query_ids: Vec<usize>,
    pub gold_start: usize,
    pub gold_end: usize,
    pub answerable: bool,
}

/// Query surface form fed to the model: the symptom words followed by the
/// attribute word.
pub fn query_tokens(query: &crate::corpus::Query) -> Vec<String> {
    let mut toks = tokenize(query.symptom.as_str());
    toks.push(query.attribute.as_str().to_string());
    toks
}

pub fn encode(sample: &Sample, vocab: &Vocabulary) -> Result<EncodedSample> {
    let flat = flatten(&sample.dialogue);
    let mut dialogue_ids = Vec::with_capacity(flat.len());
    dialogue_ids.push(SENTINEL_ID);
    for tok in &flat.tokens[1..] {
        dialogue_ids.push(vocab.id(tok));
    }
    let query_ids: Vec<usize> = query_tokens(&sample.query)
        .iter()
        .map(|t| vocab.id(t))
        .collect();
    let (gold_start, gold_end, answerable) = match sample.answer {
        Answer::Span { start, end } => {
            if start == 0 || start > end || end >= dialogue_ids.len() {
                return Err(Error::Invariant(format!(
                    "sample {}: span ({start},{end}) invalid for dialogue of {} tokens",
                    sample.id,
                    dialogue_ids.len()
                )));
            }
            (start, end, true)
        }
        Answer::NoAnswer => (0, 0, false),
    };
    Ok(EncodedSample {
        id: sample.id.clone(),
        dialogue_ids,
        query_ids,
        gold_start,
        gold_end,
        answerable,
    })
}

/// Class structure for the synthetic vector file: tokens sharing a class get
/// a shared direction component, which is what gives related words nearby
/// embeddings the way distributionally trained vectors do.
pub type TokenClasses = BTreeMap<String, Vec<String>>;

/// Writes a deterministic word-vector file covering `vocab_words`. Each
/// token's vector is the sum of its class directions plus per-token noise,
/// normalized to unit length. Stands in for downloaded pretrained vectors in
/// offline runs; any file in the same layout can be used instead.
pub fn write_synthetic_vectors(
    path: &Path,
    vocab_words: &[String],
    classes: &TokenClasses,
    dim: usize,
    seed: u64,
) -> Result<()> {
    let mut class_dirs: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (ci, name) in classes.keys().enumerate() {
        let mut rng = stream_rng(seed, rng::stream::VECTOR_FILE, 1 + ci as u64);
        class_dirs.insert(name.as_str(), unit_vector(dim, &mut rng));
    }
    let mut member_of: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (name, members) in classes {
        for m in members {
            member_of.entry(m.as_str()).or_default().push(name.as_str());
        }
    }

    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        for (ti, token) in vocab_words.iter().enumerate() {
            let mut rng = stream_rng(seed, rng::stream::VECTOR_FILE, 100_000 + ti as u64);
            let noise = unit_vector(dim, &mut rng);
            let mut v = vec![0.0f64; dim];
            if let Some(names) = member_of.get(token.as_str()) {
                for name in names {
                    let dir = &class_dirs[name];
                    for (vi, di) in v.iter_mut().zip(dir) {
                        *vi += 0.9 * di;
                    }
                }
            }
            for (vi, ni) in v.iter_mut().zip(&noise) {
                *vi += 0.5 * ni;
            }
            normalize(&mut v);
            write!(w, "{token}").map_err(|e| Error::io(&tmp, e))?;
            for x in &v {
                write!(w, " {x:.6}").map_err(|e| Error::io(&tmp, e))?;
            }
            writeln!(w).map_err(|e| Error::io(&tmp, e))?;
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn unit_vector(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    normalize(&mut v);
    v
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AttributeKind, Query, SymptomId};

    #[test]
    fn tokenize_splits_punctuation() {
        assert_eq!(
            tokenize("Do you cough at night?"),
            vec!["do", "you", "cough", "at", "night", "?"]
        );
    }

    #[test]
    fn tokenize_empty() {
        assert_eq!(tokenize(""), Vec::<String>::new());
    }

    #[test]
    fn tokenize_keeps_ellipses_whole() {
        // Oracle for the rule set: ellipses are single tokens, words lowercase.
        assert_eq!(
            tokenize("Swelling... swelling..."),
            vec!["swelling", "...", "swelling", "..."]
        );
    }

    #[test]
    fn tokenize_commas_and_contractions() {
        assert_eq!(
            tokenize("no, that's right."),
            vec!["no", ",", "that's", "right", "."]
        );
    }

    #[test]
    fn vocabulary_ids_are_stable_and_reserved() {
        let words = ["cough", "night", "any", "cough"].map(String::from);
        let v = Vocabulary::build(words, 8);
        assert_eq!(v.id("<pad>"), PAD_ID);
        assert_eq!(v.id(crate::corpus::SENTINEL_TOKEN), SENTINEL_ID);
        assert_eq!(v.id("definitely-not-present"), OOV_ID);
        assert_eq!(v.len(), 3 + 3);
        // Sorted assignment: any < cough < night.
        assert_eq!(v.id("any"), 3);
        assert_eq!(v.id("cough"), 4);
        assert_eq!(v.id("night"), 5);
    }

    #[test]
    fn embeddings_share_one_oov_vector_and_zero_pad() {
        let v = Vocabulary::build(["cough", "night", "rare"].map(String::from), 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.txt");
        std::fs::write(&path, "cough 0.1 0.2 0.3 0.4\n").unwrap();
        let m = load_embeddings(&path, &v, 9).unwrap();
        assert_eq!(m.rows[v.id("cough")], vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(m.rows[PAD_ID], vec![0.0; 4]);
        // night and rare are both out of file and must share bit-identical rows.
        assert_eq!(m.rows[v.id("night")], m.rows[v.id("rare")]);
        assert_ne!(m.rows[v.id("night")], m.rows[SENTINEL_ID]);
        assert!((m.oov_fraction - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn embeddings_dimension_mismatch_errors() {
        let v = Vocabulary::build(["cough"].map(String::from), 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.txt");
        std::fs::write(&path, "cough 0.1 0.2\n").unwrap();
        assert!(matches!(
            load_embeddings(&path, &v, 9),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn encode_maps_spans_and_no_answer() {
        use crate::corpus::{Dialogue, Gender, SpeakerRole, Turn};
        let d = Dialogue {
            turns: vec![
                Turn {
                    role: SpeakerRole::Nurse,
                    tokens: ["any", "cough", "?"].map(String::from).to_vec(),
                    utterance_types: Default::default(),
                },
                Turn {
                    role: SpeakerRole::Patient,
                    tokens: ["yes", ",", "at", "night"].map(String::from).to_vec(),
                    utterance_types: Default::default(),
                },
            ],
            respondent_role: SpeakerRole::Patient,
            respondent_gender: Gender::Male,
        };
        let vocab = Vocabulary::build(
            ["any", "cough", "?", "yes", ",", "at", "night", "time"].map(String::from),
            8,
        );
        let q = Query {
            symptom: SymptomId::new("cough"),
            attribute: AttributeKind::Time,
        };
        let span_sample = Sample {
            id: "a".into(),
            dialogue: d.clone(),
            query: q.clone(),
            answer: Answer::Span { start: 6, end: 7 },
        };
        let e = encode(&span_sample, &vocab).unwrap();
        assert_eq!(e.dialogue_ids[0], SENTINEL_ID);
        assert_eq!(e.dialogue_ids.len(), 8);
        assert_eq!((e.gold_start, e.gold_end, e.answerable), (6, 7, true));
        assert_eq!(e.query_ids.len(), 2);

        let na_sample = Sample {
            id: "b".into(),
            dialogue: d,
            query: q,
            answer: Answer::NoAnswer,
        };
        let e = encode(&na_sample, &vocab).unwrap();
        assert_eq!((e.gold_start, e.gold_end, e.answerable), (0, 0, false));
    }

    #[test]
    fn encode_rejects_out_of_range_span() {
        use crate::corpus::{Dialogue, Gender, SpeakerRole, Turn};
        let d = Dialogue {
            turns: vec![Turn {
                role: SpeakerRole::Nurse,
                tokens: vec!["hello".into()],
                utterance_types: Default::default(),
            }],
            respondent_role: SpeakerRole::Patient,
            respondent_gender: Gender::Male,
        };
        let vocab = Vocabulary::build(["hello"].map(String::from), 8);
        let s = Sample {
            id: "x".into(),
            dialogue: d,
            query: Query {
                symptom: SymptomId::new("cough"),
                attribute: AttributeKind::Time,
            },
            answer: Answer::Span { start: 1, end: 9 },
        };
        assert!(encode(&s, &vocab).is_err());
    }

    #[test]
    fn synthetic_vectors_cluster_classes() {
        let words: Vec<String> = ["cough", "hacking", "sneeze", "table"]
            .map(String::from)
            .to_vec();
        let mut classes = TokenClasses::new();
        classes.insert(
            "symptom".into(),
            vec!["cough".into(), "hacking".into(), "sneeze".into()],
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.txt");
        write_synthetic_vectors(&path, &words, &classes, 16, 3).unwrap();
        let vocab = Vocabulary::build(words.iter().cloned(), 16);
        let m = load_embeddings(&path, &vocab, 3).unwrap();
        assert!((m.oov_fraction - 0.0).abs() < 1e-12);
        let cos = |a: &str, b: &str| {
            let ra = &m.rows[vocab.id(a)];
            let rb = &m.rows[vocab.id(b)];
            let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
            let na: f64 = ra.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = rb.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        // Same-class tokens sit closer together than unrelated ones.
        assert!(cos("cough", "hacking") > cos("cough", "table") + 0.2);
        assert!(cos("cough", "sneeze") > 0.3);
    }
}

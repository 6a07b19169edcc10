//! Hierarchical review data: tokens inside sentences inside reviews.
//!
//! Reviews carry per-token binary labels (`pol`, `tar`), per-sentence entity
//! indicators and a one-hot valence, and one review-level score in `[0, 1]`.

mod io;
mod synth;

pub use io::{load_corpus, read_corpus, save_corpus, write_corpus, SCHEMA_VERSION};
pub use synth::{
    generate_synthetic, generate_synthetic_with_plan, PlantedMeans, SynthSpec, TokenClass,
};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature widths of the three modalities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub text: usize,
    pub audio: usize,
    pub video: usize,
}

impl Dims {
    pub fn new(text: usize, audio: usize, video: usize) -> Self {
        Self { text, audio, video }
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.text, self.audio, self.video]
    }

    pub fn total(&self) -> usize {
        self.text + self.audio + self.video
    }
}

impl Default for Dims {
    fn default() -> Self {
        Self::new(300, 4, 4)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModalityFeatures {
    pub text: Vec<f64>,
    pub audio: Vec<f64>,
    pub video: Vec<f64>,
}

impl ModalityFeatures {
    pub fn views(&self) -> [&[f64]; 3] {
        [&self.text, &self.audio, &self.video]
    }

    pub fn concat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.text.len() + self.audio.len() + self.video.len());
        v.extend_from_slice(&self.text);
        v.extend_from_slice(&self.audio);
        v.extend_from_slice(&self.video);
        v
    }
}

/// Token-level labels: polarity-bearing word and target-mentioning word.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TokenLabels {
    pub pol: u8,
    pub tar: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub features: ModalityFeatures,
    pub labels: TokenLabels,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Valence {
    Positive = 0,
    Negative = 1,
    Neutral = 2,
    None = 3,
}

impl Valence {
    pub const ALL: [Valence; 4] = [
        Valence::Positive,
        Valence::Negative,
        Valence::Neutral,
        Valence::None,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn one_hot(self) -> Vec<u8> {
        let mut v = vec![0; 4];
        v[self.index()] = 1;
        v
    }
}

/// Sentence-level labels. `valence` is kept as the raw 4-vector so that
/// malformed input can be reported rather than silently coerced.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceLabels {
    pub entities: Vec<u8>,
    pub valence: Vec<u8>,
}

impl SentenceLabels {
    /// The valence class, if the vector is a proper one-hot.
    pub fn valence_class(&self) -> Option<Valence> {
        if self.valence.len() != 4 || self.valence.iter().map(|&v| v as usize).sum::<usize>() != 1 {
            return None;
        }
        self.valence
            .iter()
            .position(|&v| v == 1)
            .and_then(Valence::from_index)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceRecord {
    pub tokens: Vec<Token>,
    pub labels: SentenceLabels,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Review {
    pub id: String,
    pub sentences: Vec<SentenceRecord>,
    pub text_score: f64,
}

impl Review {
    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(|s| s.tokens.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::UnknownSplit {
                name: other.to_string(),
                valid: "train, val, test".into(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub reviews: Vec<Review>,
    pub split: BTreeMap<String, Split>,
    pub dims: Dims,
    pub entities: usize,
}

impl Corpus {
    pub fn reviews_in(&self, split: Split) -> Vec<&Review> {
        self.reviews
            .iter()
            .filter(|r| self.split.get(&r.id) == Some(&split))
            .collect()
    }

    pub fn split_sizes(&self) -> [usize; 3] {
        let mut n = [0; 3];
        for s in self.split.values() {
            n[*s as usize] += 1;
        }
        n
    }

    pub fn summary(&self) -> CorpusSummary {
        CorpusSummary {
            reviews: self.reviews.len(),
            sentences: self.reviews.iter().map(|r| r.sentences.len()).sum(),
            tokens: self.reviews.iter().map(Review::num_tokens).sum(),
            splits: self.split_sizes(),
            dims: self.dims,
            entities: self.entities,
        }
    }

    /// Every violation over all reviews plus split consistency problems.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out: Vec<Violation> = self
            .reviews
            .iter()
            .flat_map(|r| validate_review(r, self.dims, self.entities))
            .collect();
        if let Err(e) = check_splits(self) {
            out.push(Violation::error("", None, e.to_string()));
        }
        out
    }
}

pub(crate) fn check_splits(c: &Corpus) -> Result<()> {
    let mut seen = BTreeMap::new();
    for r in &c.reviews {
        if seen.insert(r.id.as_str(), ()).is_some() {
            return Err(Error::Split(format!(
                "review id `{}` appears more than once",
                r.id
            )));
        }
        if !c.split.contains_key(&r.id) {
            return Err(Error::Split(format!("review `{}` has no split", r.id)));
        }
    }
    if let Some(extra) = c.split.keys().find(|k| !seen.contains_key(k.as_str())) {
        return Err(Error::Split(format!(
            "split lists unknown review `{extra}`"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct CorpusSummary {
    pub reviews: usize,
    pub sentences: usize,
    pub tokens: usize,
    pub splits: [usize; 3],
    pub dims: Dims,
    pub entities: usize,
}

impl fmt::Display for CorpusSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "E={} dims=({},{},{})",
            self.entities, self.dims.text, self.dims.audio, self.dims.video
        )?;
        writeln!(f, "reviews:   {}", self.reviews)?;
        writeln!(f, "sentences: {}", self.sentences)?;
        writeln!(f, "tokens:    {}", self.tokens)?;
        write!(
            f,
            "splits:    train={} val={} test={}",
            self.splits[0], self.splits[1], self.splits[2]
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    Error,
    /// Reported on imported data but not grounds for rejection.
    Warning,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub review: String,
    pub sentence: Option<usize>,
    pub message: String,
    pub severity: Severity,
}

impl Violation {
    fn error(review: &str, sentence: Option<usize>, message: impl Into<String>) -> Self {
        Self {
            review: review.to_string(),
            sentence,
            message: message.into(),
            severity: Severity::Error,
        }
    }

    fn warning(review: &str, sentence: Option<usize>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            ..Self::error(review, sentence, message)
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "review `{}`: {}", self.review, self.message)
    }
}

/// Checks every structural invariant of one review. An empty result means
/// the review is well formed.
pub fn validate_review(r: &Review, dims: Dims, entities: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    let id = r.id.as_str();
    if r.sentences.is_empty() {
        out.push(Violation::error(id, None, "review has no sentences"));
    }
    if !(0.0..=1.0).contains(&r.text_score) {
        out.push(Violation::error(id, None, "text_score out of [0,1]"));
    }
    for (si, s) in r.sentences.iter().enumerate() {
        let e = |m: String| Violation::error(id, Some(si), m);
        if s.tokens.is_empty() {
            out.push(e(format!("sentence has no tokens @ s{si}")));
        }
        let lab = &s.labels;
        if lab.entities.len() != entities {
            out.push(e(format!(
                "entity vector has length {} (expected {entities}) @ s{si}",
                lab.entities.len()
            )));
        }
        if lab.entities.iter().any(|&b| b > 1) {
            out.push(e(format!("entity bits not binary @ s{si}")));
        }
        match lab.valence_class() {
            None => out.push(e(format!("valence not one-hot @ s{si}"))),
            Some(v) if v != Valence::None && lab.entities.iter().all(|&b| b == 0) => {
                out.push(Violation::warning(
                    id,
                    Some(si),
                    format!("opinionated sentence without entity @ s{si}"),
                ))
            }
            Some(_) => {}
        }
        for (ti, t) in s.tokens.iter().enumerate() {
            let f = &t.features;
            for (name, got, want) in [
                ("text", f.text.len(), dims.text),
                ("audio", f.audio.len(), dims.audio),
                ("video", f.video.len(), dims.video),
            ] {
                if got != want {
                    out.push(e(format!(
                        "{name} features have length {got} (expected {want}) @ s{si} t{ti}"
                    )));
                }
            }
            if f.text
                .iter()
                .chain(&f.audio)
                .chain(&f.video)
                .any(|v| !v.is_finite())
            {
                out.push(e(format!("non-finite feature @ s{si} t{ti}")));
            }
            if t.labels.pol > 1 || t.labels.tar > 1 {
                out.push(e(format!("token labels not binary @ s{si} t{ti}")));
            }
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tiny_review(id: &str) -> Review {
        let tok = |pol, tar| Token {
            features: ModalityFeatures {
                text: vec![0.5, -1.0],
                audio: vec![0.0],
                video: vec![1.5],
            },
            labels: TokenLabels { pol, tar },
        };
        Review {
            id: id.into(),
            sentences: vec![SentenceRecord {
                tokens: vec![tok(1, 0), tok(0, 1), tok(0, 0)],
                labels: SentenceLabels {
                    entities: vec![1, 0, 0],
                    valence: Valence::Positive.one_hot(),
                },
            }],
            text_score: 0.75,
        }
    }

    const DIMS: Dims = Dims {
        text: 2,
        audio: 1,
        video: 1,
    };

    #[test]
    fn well_formed_review_has_no_violations() {
        assert!(validate_review(&tiny_review("a"), DIMS, 3).is_empty());
    }

    #[test]
    fn double_valence_is_reported() {
        let mut r = tiny_review("a");
        r.sentences[0].labels.valence = vec![1, 1, 0, 0];
        let v = validate_review(&r, DIMS, 3);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].message, "valence not one-hot @ s0");
        assert_eq!(v[0].sentence, Some(0));
        assert_eq!(v[0].review, "a");
    }

    #[test]
    fn score_out_of_range_is_reported() {
        let mut r = tiny_review("a");
        r.text_score = 1.3;
        let v = validate_review(&r, DIMS, 3);
        assert_eq!(
            v.iter().map(|v| v.message.as_str()).collect::<Vec<_>>(),
            ["text_score out of [0,1]"]
        );
    }

    #[test]
    fn missing_entity_is_a_warning() {
        let mut r = tiny_review("a");
        r.sentences[0].labels.entities = vec![0, 0, 0];
        let v = validate_review(&r, DIMS, 3);
        assert_eq!(v.len(), 1);
        assert!(!v[0].is_error());
    }

    #[test]
    fn shape_errors() {
        let mut r = tiny_review("a");
        r.sentences[0].tokens[1].features.audio.push(1.0);
        r.sentences[0].tokens[2].features.text[0] = f64::NAN;
        r.sentences[0].tokens[0].labels.pol = 2;
        let v = validate_review(&r, DIMS, 3);
        assert_eq!(v.len(), 3, "{v:?}");
        r.sentences.clear();
        assert!(validate_review(&r, DIMS, 3)
            .iter()
            .any(|v| v.message.contains("no sentences")));
    }

    #[test]
    fn split_parsing() {
        assert_eq!("val".parse::<Split>().unwrap(), Split::Val);
        let err = "dev".parse::<Split>().unwrap_err().to_string();
        assert!(err.contains("train, val, test"));
    }
}

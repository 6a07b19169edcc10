//! JSON-lines corpus files: a header line followed by one review per line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    check_splits, validate_review, Corpus, Dims, ModalityFeatures, Review, SentenceLabels,
    SentenceRecord, Split, Token, TokenLabels,
};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema: u32,
    dims: [usize; 3],
    #[serde(rename = "E")]
    entities: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenLine {
    text: Vec<f64>,
    audio: Vec<f64>,
    video: Vec<f64>,
    pol: u8,
    tar: u8,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SentenceLine {
    entities: Vec<u8>,
    valence: Vec<u8>,
    tokens: Vec<TokenLine>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReviewLine {
    id: String,
    text_score: f64,
    split: Split,
    sentences: Vec<SentenceLine>,
}

impl ReviewLine {
    fn from_review(r: &Review, split: Split) -> Self {
        Self {
            id: r.id.clone(),
            text_score: r.text_score,
            split,
            sentences: r
                .sentences
                .iter()
                .map(|s| SentenceLine {
                    entities: s.labels.entities.clone(),
                    valence: s.labels.valence.clone(),
                    tokens: s
                        .tokens
                        .iter()
                        .map(|t| TokenLine {
                            text: t.features.text.clone(),
                            audio: t.features.audio.clone(),
                            video: t.features.video.clone(),
                            pol: t.labels.pol,
                            tar: t.labels.tar,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    fn into_review(self) -> (Review, Split) {
        let review = Review {
            id: self.id,
            text_score: self.text_score,
            sentences: self
                .sentences
                .into_iter()
                .map(|s| SentenceRecord {
                    labels: SentenceLabels {
                        entities: s.entities,
                        valence: s.valence,
                    },
                    tokens: s
                        .tokens
                        .into_iter()
                        .map(|t| Token {
                            features: ModalityFeatures {
                                text: t.text,
                                audio: t.audio,
                                video: t.video,
                            },
                            labels: TokenLabels {
                                pol: t.pol,
                                tar: t.tar,
                            },
                        })
                        .collect(),
                })
                .collect(),
        };
        (review, self.split)
    }
}

/// Writes `c` as JSON lines. The corpus must be valid.
pub fn write_corpus<W: Write>(c: &Corpus, mut w: W) -> Result<()> {
    let errors: Vec<String> = c
        .validate()
        .iter()
        .filter(|v| v.is_error())
        .map(|v| v.to_string())
        .collect();
    if !errors.is_empty() {
        return Err(Error::Validation(errors));
    }
    let header = Header {
        schema: SCHEMA_VERSION,
        dims: c.dims.as_array(),
        entities: c.entities,
    };
    let io = |e| Error::io("<corpus>", e);
    writeln!(w, "{}", serde_json::to_string(&header)?).map_err(io)?;
    for r in &c.reviews {
        let line = serde_json::to_string(&ReviewLine::from_review(r, c.split[&r.id]))?;
        writeln!(w, "{line}").map_err(io)?;
    }
    Ok(())
}

pub fn read_corpus<R: Read>(r: R) -> Result<Corpus> {
    let mut lines = BufReader::new(r).lines().enumerate();
    let header_line = match lines.next() {
        Some((_, line)) => line.map_err(|e| Error::io("<corpus>", e))?,
        None => return Err(Error::Schema("empty corpus file".into())),
    };
    let header: Header = serde_json::from_str(&header_line)
        .map_err(|e| Error::Schema(format!("bad header line: {e}")))?;
    if header.schema != SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "schema version {} not supported (expected {SCHEMA_VERSION})",
            header.schema
        )));
    }
    let dims = Dims::new(header.dims[0], header.dims[1], header.dims[2]);
    let mut reviews = Vec::new();
    let mut split = BTreeMap::new();
    for (no, line) in lines {
        let line = line.map_err(|e| Error::io("<corpus>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ReviewLine = serde_json::from_str(&line)
            .map_err(|e| Error::Schema(format!("line {}: {e}", no + 1)))?;
        let (review, s) = parsed.into_review();
        if let Some(prev) = split.insert(review.id.clone(), s) {
            return Err(Error::Split(format!(
                "review `{}` listed twice (splits {prev} and {s})",
                review.id
            )));
        }
        reviews.push(review);
    }
    let corpus = Corpus {
        reviews,
        split,
        dims,
        entities: header.entities,
    };
    check_splits(&corpus)?;
    let errors: Vec<String> = corpus
        .reviews
        .iter()
        .flat_map(|r| validate_review(r, dims, corpus.entities))
        .filter(|v| v.is_error())
        .map(|v| v.to_string())
        .collect();
    if !errors.is_empty() {
        return Err(Error::Validation(errors));
    }
    Ok(corpus)
}

pub fn save_corpus(c: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_corpus(c, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(f)
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_review;
    use super::*;

    fn two_review_corpus() -> Corpus {
        let mut b = tiny_review("b");
        b.text_score = 0.1 + 0.2; // not exactly representable in short decimal
        b.sentences[0].tokens[0].features.text[1] = std::f64::consts::PI * 1e-7;
        Corpus {
            reviews: vec![tiny_review("a"), b],
            split: [
                ("a".to_string(), Split::Train),
                ("b".to_string(), Split::Test),
            ]
            .into(),
            dims: Dims::new(2, 1, 1),
            entities: 3,
        }
    }

    fn to_string(c: &Corpus) -> String {
        let mut buf = Vec::new();
        write_corpus(c, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let c = two_review_corpus();
        let text = to_string(&c);
        assert!(text.starts_with("{\"schema\":1,\"dims\":[2,1,1],\"E\":3}\n"));
        let back = read_corpus(text.as_bytes()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn truncated_file_is_a_schema_error() {
        let text = to_string(&two_review_corpus());
        let cut = &text[..text.len() - 20];
        assert!(matches!(read_corpus(cut.as_bytes()), Err(Error::Schema(_))));
        assert!(matches!(read_corpus(&b""[..]), Err(Error::Schema(_))));
    }

    #[test]
    fn wrong_schema_version() {
        let text = to_string(&two_review_corpus()).replacen("\"schema\":1", "\"schema\":2", 1);
        let err = read_corpus(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("schema version 2"));
    }

    #[test]
    fn overlapping_splits_are_rejected() {
        let text = to_string(&two_review_corpus());
        let mut lines: Vec<&str> = text.lines().collect();
        let dup = lines[1].replace("\"split\":\"train\"", "\"split\":\"val\"");
        lines.push(&dup);
        let joined = lines.join("\n");
        assert!(matches!(
            read_corpus(joined.as_bytes()),
            Err(Error::Split(_))
        ));
    }

    #[test]
    fn invalid_reviews_are_rejected_on_load() {
        let text =
            to_string(&two_review_corpus()).replace("\"text_score\":0.75", "\"text_score\":1.5");
        assert!(matches!(
            read_corpus(text.as_bytes()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let c = two_review_corpus();
        save_corpus(&c, &p).unwrap();
        assert_eq!(load_corpus(&p).unwrap(), c);
        assert!(matches!(
            load_corpus(dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}

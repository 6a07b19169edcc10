//! Deterministic synthetic corpora with a planted, recoverable signal.
//!
//! Each entity and each opinionated valence owns a mean vector in the text
//! modality. Target tokens draw their text features around their entity's
//! mean, polarity tokens around their valence's mean, every other token
//! around zero. Polarity tokens also carry a weaker valence cue in the audio
//! modality. A sentence's valence is the majority valence of its polarity
//! tokens and the review score is `(pos + 1) / (pos + neg + 2)` over the
//! counts of positive and negative sentences.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    Corpus, Dims, ModalityFeatures, Review, SentenceLabels, SentenceRecord, Split, Token,
    TokenLabels, Valence,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_reviews: usize,
    pub sentences: (usize, usize),
    pub tokens: (usize, usize),
    pub dims: Dims,
    pub entities: usize,
    pub signal_strength: f64,
    pub noise_std: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_reviews: 200,
            sentences: (3, 8),
            tokens: (4, 20),
            dims: Dims::new(16, 4, 4),
            entities: 5,
            signal_strength: 1.0,
            noise_std: 0.5,
        }
    }
}

impl SynthSpec {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.dims.text == 0 || self.dims.audio == 0 || self.dims.video == 0 {
            return bad("all feature dimensions must be positive");
        }
        if self.sentences.0 == 0 || self.sentences.0 > self.sentences.1 {
            return bad("sentence count range must be nonempty and start at 1 or more");
        }
        if self.tokens.0 == 0 || self.tokens.0 > self.tokens.1 {
            return bad("token count range must be nonempty and start at 1 or more");
        }
        if self.entities == 0 {
            return bad("entity count must be positive");
        }
        if !(self.signal_strength > 0.0 && self.signal_strength.is_finite()) {
            return bad("signal_strength must be positive");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be nonnegative");
        }
        Ok(())
    }
}

/// What a token was planted as.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenClass {
    Background,
    Entity(usize),
    Valence(Valence),
}

impl TokenClass {
    pub fn labels(self) -> TokenLabels {
        match self {
            TokenClass::Background => TokenLabels { pol: 0, tar: 0 },
            TokenClass::Entity(_) => TokenLabels { pol: 0, tar: 1 },
            TokenClass::Valence(_) => TokenLabels { pol: 1, tar: 0 },
        }
    }
}

/// Text-modality means used to plant the signal.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedMeans {
    pub entity: Vec<Vec<f64>>,
    /// Positive, negative, neutral.
    pub valence: Vec<Vec<f64>>,
    pub audio_valence: Vec<Vec<f64>>,
}

impl PlantedMeans {
    /// All classes with their text means, background (zero) first.
    pub fn classes(&self) -> Vec<(TokenClass, Vec<f64>)> {
        let d = self.valence[0].len();
        let mut out = vec![(TokenClass::Background, vec![0.0; d])];
        out.extend(
            self.entity
                .iter()
                .enumerate()
                .map(|(e, m)| (TokenClass::Entity(e), m.clone())),
        );
        out.extend(self.valence.iter().enumerate().map(|(v, m)| {
            (
                TokenClass::Valence(Valence::from_index(v).unwrap()),
                m.clone(),
            )
        }));
        out
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn around(rng: &mut ChaCha8Rng, mean: &[f64], noise: f64) -> Vec<f64> {
    mean.iter()
        .map(|&m| m + noise * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// 60/20/20 assignment from a hash of the review id.
pub(crate) fn split_for(id: &str) -> Split {
    let digest = Sha256::digest(id.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    match u64::from_le_bytes(b) % 100 {
        0..=59 => Split::Train,
        60..=79 => Split::Val,
        _ => Split::Test,
    }
}

pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<Corpus> {
    generate_synthetic_with_plan(spec, seed).map(|(c, _)| c)
}

/// Like [`generate_synthetic`] but also returns the planted means and the
/// planted class of every token (review, sentence, token order).
pub fn generate_synthetic_with_plan(
    spec: &SynthSpec,
    seed: u64,
) -> Result<(Corpus, (PlantedMeans, Vec<Vec<Vec<TokenClass>>>))> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Dims { text, audio, video } = spec.dims;
    let s = spec.signal_strength;
    let means = PlantedMeans {
        entity: (0..spec.entities)
            .map(|_| gaussian_vec(&mut rng, text, s))
            .collect(),
        valence: (0..3).map(|_| gaussian_vec(&mut rng, text, s)).collect(),
        audio_valence: (0..3)
            .map(|_| gaussian_vec(&mut rng, audio, 0.5 * s))
            .collect(),
    };
    let zero_audio = vec![0.0; audio];
    let zero_video = vec![0.0; video];
    let zero_text = vec![0.0; text];

    let mut reviews = Vec::with_capacity(spec.n_reviews);
    let mut classes = Vec::with_capacity(spec.n_reviews);
    let mut split = BTreeMap::new();
    for i in 0..spec.n_reviews {
        let id = format!("rev{i:05}");
        let n_sent = rng.random_range(spec.sentences.0..=spec.sentences.1);
        let mut sentences = Vec::with_capacity(n_sent);
        let mut review_classes = Vec::with_capacity(n_sent);
        let (mut pos, mut neg) = (0usize, 0usize);
        for _ in 0..n_sent {
            let len = rng.random_range(spec.tokens.0..=spec.tokens.1);
            let u: f64 = rng.random();
            let valence = match u {
                u if u < 0.40 => Valence::Positive,
                u if u < 0.75 => Valence::Negative,
                u if u < 0.85 => Valence::Neutral,
                _ => Valence::None,
            };
            let mut planted = vec![TokenClass::Background; len];
            let mut entity_bits = vec![0u8; spec.entities];
            if valence != Valence::None {
                let n_ent = if spec.entities > 1 && rng.random_bool(0.3) {
                    2
                } else {
                    1
                };
                let mut ents: Vec<usize> = (0..spec.entities).collect();
                ents.shuffle(&mut rng);
                ents.truncate(n_ent);
                let mut n_pol = rng.random_range(1..=3usize);
                if n_pol + n_ent > len {
                    n_pol = len.saturating_sub(n_ent).max(1);
                }
                let mut pol_valences = vec![valence; n_pol];
                if n_pol == 3 && rng.random_bool(0.3) {
                    let others: Vec<Valence> = Valence::ALL[..3]
                        .iter()
                        .copied()
                        .filter(|&v| v != valence)
                        .collect();
                    pol_valences[2] = others[rng.random_range(0..others.len())];
                }
                let mut slots: Vec<usize> = (0..len).collect();
                slots.shuffle(&mut rng);
                let mut slot_iter = slots.into_iter();
                for v in pol_valences {
                    if let Some(k) = slot_iter.next() {
                        planted[k] = TokenClass::Valence(v);
                    }
                }
                for &e in &ents {
                    entity_bits[e] = 1;
                    if let Some(k) = slot_iter.next() {
                        planted[k] = TokenClass::Entity(e);
                    }
                }
            }
            match valence {
                Valence::Positive => pos += 1,
                Valence::Negative => neg += 1,
                _ => {}
            }
            let tokens = planted
                .iter()
                .map(|&class| {
                    let (tmean, amean) = match class {
                        TokenClass::Background => (&zero_text, &zero_audio),
                        TokenClass::Entity(e) => (&means.entity[e], &zero_audio),
                        TokenClass::Valence(v) => {
                            (&means.valence[v.index()], &means.audio_valence[v.index()])
                        }
                    };
                    Token {
                        features: ModalityFeatures {
                            text: around(&mut rng, tmean, spec.noise_std),
                            audio: around(&mut rng, amean, spec.noise_std),
                            video: around(&mut rng, &zero_video, spec.noise_std),
                        },
                        labels: class.labels(),
                    }
                })
                .collect();
            sentences.push(SentenceRecord {
                tokens,
                labels: SentenceLabels {
                    entities: entity_bits,
                    valence: valence.one_hot(),
                },
            });
            review_classes.push(planted);
        }
        let text_score = (pos as f64 + 1.0) / ((pos + neg) as f64 + 2.0);
        split.insert(id.clone(), split_for(&id));
        reviews.push(Review {
            id,
            sentences,
            text_score,
        });
        classes.push(review_classes);
    }
    let corpus = Corpus {
        reviews,
        split,
        dims: spec.dims,
        entities: spec.entities,
    };
    Ok((corpus, (means, classes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_review;

    fn small() -> SynthSpec {
        SynthSpec {
            n_reviews: 30,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_synthetic(&small(), 11).unwrap();
        let b = generate_synthetic(&small(), 11).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&small(), 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_reviews_are_valid_without_warnings() {
        let c = generate_synthetic(&small(), 3).unwrap();
        for r in &c.reviews {
            assert!(validate_review(r, c.dims, c.entities).is_empty());
            for s in &r.sentences {
                if s.labels.valence_class() != Some(Valence::None) {
                    assert!(s.labels.entities.iter().any(|&b| b == 1));
                }
            }
        }
    }

    #[test]
    fn sentence_valence_is_majority_of_polarity_tokens() {
        let (c, (_, classes)) = generate_synthetic_with_plan(&small(), 5).unwrap();
        for (r, rc) in c.reviews.iter().zip(&classes) {
            for (s, sc) in r.sentences.iter().zip(rc) {
                let mut counts = [0usize; 3];
                for cls in sc {
                    if let TokenClass::Valence(v) = cls {
                        counts[v.index()] += 1;
                    }
                }
                let v = s.labels.valence_class().unwrap();
                if v == Valence::None {
                    assert_eq!(counts, [0, 0, 0]);
                } else {
                    let best = counts.iter().max().unwrap();
                    assert_eq!(counts[v.index()], *best);
                    assert_eq!(counts.iter().filter(|&&n| n == *best).count(), 1);
                }
            }
        }
    }

    #[test]
    fn noiseless_tokens_sit_on_their_means() {
        let spec = SynthSpec {
            signal_strength: 50.0,
            noise_std: 0.0,
            ..small()
        };
        let (c, (means, classes)) = generate_synthetic_with_plan(&spec, 1).unwrap();
        let table = means.classes();
        for (r, rc) in c.reviews.iter().zip(&classes) {
            for (s, sc) in r.sentences.iter().zip(rc) {
                for (t, cls) in s.tokens.iter().zip(sc) {
                    let mean = &table.iter().find(|(k, _)| k == cls).unwrap().1;
                    assert_eq!(&t.features.text, mean);
                }
            }
        }
    }

    #[test]
    fn rejects_degenerate_specs() {
        let mut s = small();
        s.dims = Dims::new(0, 4, 4);
        assert!(generate_synthetic(&s, 0).is_err());
        let mut s = small();
        s.signal_strength = 0.0;
        assert!(generate_synthetic(&s, 0).is_err());
        let mut s = small();
        s.tokens = (5, 4);
        assert!(generate_synthetic(&s, 0).is_err());
    }

    #[test]
    fn split_is_roughly_sixty_twenty_twenty() {
        let c = generate_synthetic(&SynthSpec::default(), 7).unwrap();
        let [tr, va, te] = c.split_sizes();
        assert_eq!(tr + va + te, 200);
        assert!(
            (90..=150).contains(&tr) && va >= 20 && te >= 20,
            "{tr} {va} {te}"
        );
    }
}

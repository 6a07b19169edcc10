//! Micro-F1, MAE and per-entity scores, plus split evaluation.

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Corpus, Review, Split};
use crate::error::{Error, Result};
use crate::hierarchy::{HierModel, Mode, PredictionBundle, TaskMask};
use crate::scalar::Scalar;

/// Probabilities at or above this are predicted positive.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn count(pred: &[u8], gold: &[u8]) -> Result<Self> {
        if pred.len() != gold.len() {
            return Err(Error::LengthMismatch {
                what: "predictions vs gold labels",
                left: pred.len(),
                right: gold.len(),
            });
        }
        let mut c = Confusion::default();
        for (&p, &g) in pred.iter().zip(gold) {
            c.add(p != 0, g != 0);
        }
        Ok(c)
    }

    pub fn add(&mut self, pred: bool, gold: bool) {
        match (pred, gold) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    /// `2TP / (2TP + FP + FN)`, and 1 when there is nothing to find and
    /// nothing was predicted.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

/// F1 over all binary decisions pooled together.
pub fn micro_f1(pred: &[u8], gold: &[u8]) -> Result<f64> {
    Ok(Confusion::count(pred, gold)?.f1())
}

pub fn mae(preds: &[f64], golds: &[f64]) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch {
            what: "mae inputs",
            left: preds.len(),
            right: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptySequence("mae"));
    }
    Ok(preds
        .iter()
        .zip(golds)
        .map(|(p, g)| (p - g).abs())
        .sum::<f64>()
        / preds.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EntityScore {
    pub entity: usize,
    pub f1: f64,
    /// Number of gold positives in the column.
    pub gold_count: usize,
    pub pred_count: usize,
}

/// Binary F1 of every entity column of sentence-level matrices.
pub fn per_entity_f1(
    preds: &[Vec<u8>],
    golds: &[Vec<u8>],
    entities: usize,
) -> Result<Vec<EntityScore>> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch {
            what: "entity rows",
            left: preds.len(),
            right: golds.len(),
        });
    }
    let mut conf = vec![Confusion::default(); entities];
    for (p, g) in preds.iter().zip(golds) {
        if p.len() != entities || g.len() != entities {
            return Err(Error::DimMismatch {
                what: "entity row",
                expected: entities,
                got: if p.len() != entities {
                    p.len()
                } else {
                    g.len()
                },
            });
        }
        for (k, c) in conf.iter_mut().enumerate() {
            c.add(p[k] != 0, g[k] != 0);
        }
    }
    Ok(conf
        .iter()
        .enumerate()
        .map(|(entity, c)| EntityScore {
            entity,
            f1: c.f1(),
            gold_count: c.tp + c.fn_,
            pred_count: c.tp + c.fp,
        })
        .collect())
}

/// Scores of one split. Metrics of label components excluded by the task
/// mask are `None`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsBundle {
    pub reviews: usize,
    /// Pooled over the enabled token components (pol and/or tar).
    pub token_micro_f1: Option<f64>,
    pub token_pol_f1: Option<f64>,
    pub token_tar_f1: Option<f64>,
    /// Pooled over every entity bit.
    pub sentence_micro_f1: Option<f64>,
    /// Micro-F1 of the one-hot argmax valence decisions.
    pub valence_f1: Option<f64>,
    pub text_mae: f64,
    pub per_entity: Vec<EntityScore>,
}

/// Anything producing per-review predictions.
pub trait Predictor: Sync {
    fn predict(&self, r: &Review) -> Result<PredictionBundle<f64>>;
}

impl<T: Scalar> Predictor for HierModel<T> {
    fn predict(&self, r: &Review) -> Result<PredictionBundle<f64>> {
        Ok(self.forward_review(r, Mode::Eval)?.to_f64())
    }
}

fn bit(p: f64) -> u8 {
    (p >= THRESHOLD) as u8
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

/// Thresholds predictions at 0.5 (argmax for valence) and scores them.
pub fn score_predictions(
    reviews: &[&Review],
    preds: &[PredictionBundle<f64>],
    entities: usize,
    mask: &TaskMask,
) -> Result<MetricsBundle> {
    if reviews.is_empty() {
        return Err(Error::EmptySequence("evaluate"));
    }
    let mut pol = Confusion::default();
    let mut tar = Confusion::default();
    let mut ent = Confusion::default();
    let mut val = Confusion::default();
    let mut ent_pred = Vec::new();
    let mut ent_gold = Vec::new();
    let mut text_pred = Vec::with_capacity(reviews.len());
    let mut text_gold = Vec::with_capacity(reviews.len());
    for (r, p) in reviews.iter().zip(preds) {
        if p.tokens.len() != r.sentences.len() || p.sentences.len() != r.sentences.len() {
            return Err(Error::LengthMismatch {
                what: "review sentences vs predictions",
                left: r.sentences.len(),
                right: p.sentences.len(),
            });
        }
        for ((s, tp), sp) in r.sentences.iter().zip(&p.tokens).zip(&p.sentences) {
            if tp.len() != s.tokens.len() {
                return Err(Error::LengthMismatch {
                    what: "sentence tokens vs predictions",
                    left: s.tokens.len(),
                    right: tp.len(),
                });
            }
            for (t, q) in s.tokens.iter().zip(tp) {
                pol.add(bit(q[0]) == 1, t.labels.pol != 0);
                tar.add(bit(q[1]) == 1, t.labels.tar != 0);
            }
            ent_pred.push(sp.entities.iter().map(|&q| bit(q)).collect::<Vec<u8>>());
            ent_gold.push(s.labels.entities.clone());
            let guess = argmax(&sp.valence);
            for (k, &g) in s.labels.valence.iter().enumerate() {
                val.add(k == guess, g != 0);
            }
        }
        text_pred.push(p.text);
        text_gold.push(r.text_score);
    }
    let per_entity = per_entity_f1(&ent_pred, &ent_gold, entities)?;
    for (p, g) in ent_pred.iter().zip(&ent_gold) {
        ent.merge(&Confusion::count(p, g)?);
    }
    let mut token = Confusion::default();
    if mask.pol {
        token.merge(&pol);
    }
    if mask.tar {
        token.merge(&tar);
    }
    Ok(MetricsBundle {
        reviews: reviews.len(),
        token_micro_f1: (mask.pol || mask.tar).then(|| token.f1()),
        token_pol_f1: mask.pol.then(|| pol.f1()),
        token_tar_f1: mask.tar.then(|| tar.f1()),
        sentence_micro_f1: mask.entities.then(|| ent.f1()),
        valence_f1: mask.valence.then(|| val.f1()),
        text_mae: mae(&text_pred, &text_gold)?,
        per_entity: if mask.entities {
            per_entity
        } else {
            Vec::new()
        },
    })
}

/// Predicts every review in parallel (results are order-stable) and scores them.
pub fn evaluate_reviews<P: Predictor + ?Sized>(
    predictor: &P,
    reviews: &[&Review],
    entities: usize,
    mask: &TaskMask,
) -> Result<MetricsBundle> {
    let preds = reviews
        .par_iter()
        .map(|r| predictor.predict(r))
        .collect::<Result<Vec<_>>>()?;
    score_predictions(reviews, &preds, entities, mask)
}

pub fn evaluate<P: Predictor + ?Sized>(
    predictor: &P,
    corpus: &Corpus,
    split: Split,
    mask: &TaskMask,
) -> Result<MetricsBundle> {
    let reviews = corpus.reviews_in(split);
    if reviews.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "split `{split}` has no reviews"
        )));
    }
    evaluate_reviews(predictor, &reviews, corpus.entities, mask)
}

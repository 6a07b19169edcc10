//! Per-level losses and their weighted combination.
//!
//! Token and sentence losses are averaged over the tokens and sentences of
//! one review; the text loss is a squared error. The review objective is the
//! weighted mean `sum_t w_t l_t / sum_t w_t`.

use serde::{Deserialize, Serialize};

use crate::corpus::{Review, SentenceLabels, TokenLabels};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::PROB_EPS;

use super::{PredictionBundle, SentencePrediction};

/// Task weights `(token, sentence, text)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskWeights {
    pub token: f64,
    pub sentence: f64,
    pub text: f64,
}

impl TaskWeights {
    pub const TEXT_ONLY: TaskWeights = TaskWeights::new(0.0, 0.0, 1.0);

    pub const fn new(token: f64, sentence: f64, text: f64) -> Self {
        Self {
            token,
            sentence,
            text,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.token, self.sentence, self.text]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::ZeroWeights);
        }
        Ok(())
    }

    /// `w / sum(w)`.
    pub fn normalized(&self) -> Result<[f64; 3]> {
        self.validate()?;
        let s: f64 = self.as_array().iter().sum();
        Ok(self.as_array().map(|x| x / s))
    }
}

/// Which label components contribute to the objective. Heads of disabled
/// components are left untrained and their metrics are not reported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskMask {
    pub pol: bool,
    pub tar: bool,
    pub entities: bool,
    pub valence: bool,
}

impl TaskMask {
    pub const JOINT: TaskMask = TaskMask {
        pol: true,
        tar: true,
        entities: true,
        valence: true,
    };
    /// Token polarity and sentence valence.
    pub const POLARITY: TaskMask = TaskMask {
        pol: true,
        tar: false,
        entities: false,
        valence: true,
    };
    /// Token targets and sentence entities.
    pub const ENTITY: TaskMask = TaskMask {
        pol: false,
        tar: true,
        entities: true,
        valence: false,
    };

    pub fn name(&self) -> &'static str {
        match *self {
            TaskMask::JOINT => "joint",
            TaskMask::POLARITY => "polarity",
            TaskMask::ENTITY => "entity",
            _ => "custom",
        }
    }
}

impl Default for TaskMask {
    fn default() -> Self {
        TaskMask::JOINT
    }
}

fn check_prob<T: Scalar>(p: T, what: &'static str) -> Result<T> {
    let v = p.as_f64();
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidProbability { what, value: v });
    }
    Ok(p.max(T::of(PROB_EPS)).min(T::one() - T::of(PROB_EPS)))
}

/// Bernoulli negative log-likelihood of label `y` under probability `p`.
pub fn bernoulli_nll<T: Scalar>(y: u8, p: T) -> Result<T> {
    let q = check_prob(p, "bernoulli")?;
    Ok(if y != 0 {
        -q.ln()
    } else {
        -(T::one() - q).ln()
    })
}

/// `-ln p[class]` for a distribution over the valence classes.
pub fn valence_nll<T: Scalar>(class: usize, dist: &[T]) -> Result<T> {
    let p = dist.get(class).copied().ok_or(Error::OutOfRange {
        value: class as f64,
        lo: 0.0,
        hi: dist.len() as f64 - 1.0,
    })?;
    Ok(-check_prob(p, "valence")?.ln())
}

/// Mean over tokens of the mean NLL of the enabled token components.
pub fn loss_token_masked<T: Scalar>(
    labels: &[TokenLabels],
    probs: &[[T; 2]],
    mask: &TaskMask,
) -> Result<T> {
    if labels.len() != probs.len() {
        return Err(Error::LengthMismatch {
            what: "token labels vs predictions",
            left: labels.len(),
            right: probs.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptySequence("loss_token"));
    }
    let active = mask.pol as usize + mask.tar as usize;
    if active == 0 {
        return Ok(T::zero());
    }
    let mut total = T::zero();
    for (y, p) in labels.iter().zip(probs) {
        if mask.pol {
            total += bernoulli_nll(y.pol, p[0])?;
        }
        if mask.tar {
            total += bernoulli_nll(y.tar, p[1])?;
        }
    }
    Ok(total / T::of((active * labels.len()) as f64))
}

/// `(1/n) sum_i (1/2) [NLL(pol_i) + NLL(tar_i)]`.
pub fn loss_token<T: Scalar>(labels: &[TokenLabels], probs: &[[T; 2]]) -> Result<T> {
    loss_token_masked(labels, probs, &TaskMask::JOINT)
}

/// Entity term (mean Bernoulli NLL over entity bits) and valence term
/// (categorical NLL) of one sentence.
pub fn sentence_loss_terms<T: Scalar>(
    labels: &SentenceLabels,
    pred: &SentencePrediction<T>,
) -> Result<(T, T)> {
    if labels.entities.len() != pred.entities.len() {
        return Err(Error::LengthMismatch {
            what: "entity labels vs predictions",
            left: labels.entities.len(),
            right: pred.entities.len(),
        });
    }
    if pred.valence.len() != 4 {
        return Err(Error::DimMismatch {
            what: "valence prediction",
            expected: 4,
            got: pred.valence.len(),
        });
    }
    let class = labels
        .valence_class()
        .ok_or_else(|| Error::InvalidArgument("valence label is not one-hot".into()))?;
    let mut ent = T::zero();
    for (&y, &p) in labels.entities.iter().zip(&pred.entities) {
        ent += bernoulli_nll(y, p)?;
    }
    if !labels.entities.is_empty() {
        ent /= T::of(labels.entities.len() as f64);
    }
    Ok((ent, valence_nll(class.index(), &pred.valence)?))
}

pub fn loss_sentence_masked<T: Scalar>(
    labels: &[SentenceLabels],
    preds: &[SentencePrediction<T>],
    mask: &TaskMask,
) -> Result<T> {
    if labels.len() != preds.len() {
        return Err(Error::LengthMismatch {
            what: "sentence labels vs predictions",
            left: labels.len(),
            right: preds.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptySequence("loss_sentence"));
    }
    let mut total = T::zero();
    for (y, p) in labels.iter().zip(preds) {
        let (ent, val) = sentence_loss_terms(y, p)?;
        let use_ent = mask.entities && !y.entities.is_empty();
        let parts = use_ent as usize + mask.valence as usize;
        if parts == 0 {
            continue;
        }
        let mut s = T::zero();
        if use_ent {
            s += ent;
        }
        if mask.valence {
            s += val;
        }
        total += s / T::of(parts as f64);
    }
    Ok(total / T::of(labels.len() as f64))
}

/// `(1/n) sum_j (1/2) [entity term_j + valence term_j]`.
pub fn loss_sentence<T: Scalar>(
    labels: &[SentenceLabels],
    preds: &[SentencePrediction<T>],
) -> Result<T> {
    loss_sentence_masked(labels, preds, &TaskMask::JOINT)
}

/// `(y - p)^2`.
pub fn loss_text<T: Scalar>(y: T, p: T) -> T {
    (y - p) * (y - p)
}

/// `sum_t w_t l_t / sum_t w_t`.
pub fn combined_loss<T: Scalar>(losses: [T; 3], w: &TaskWeights) -> Result<T> {
    let n = w.normalized()?;
    Ok(losses.iter().zip(n).map(|(&l, c)| l * T::of(c)).sum())
}

/// Weighted objective of one review given its predictions.
pub fn review_objective<T: Scalar>(
    r: &Review,
    preds: &PredictionBundle<T>,
    w: &TaskWeights,
) -> Result<T> {
    review_objective_masked(r, preds, w, &TaskMask::JOINT)
}

pub fn review_objective_masked<T: Scalar>(
    r: &Review,
    preds: &PredictionBundle<T>,
    w: &TaskWeights,
    mask: &TaskMask,
) -> Result<T> {
    if preds.sentences.len() != r.sentences.len() || preds.tokens.len() != r.sentences.len() {
        return Err(Error::LengthMismatch {
            what: "review sentences vs predictions",
            left: r.sentences.len(),
            right: preds.sentences.len(),
        });
    }
    let labels: Vec<TokenLabels> = r
        .sentences
        .iter()
        .flat_map(|s| s.tokens.iter().map(|t| t.labels))
        .collect();
    let probs: Vec<[T; 2]> = preds.tokens.iter().flatten().copied().collect();
    let l_tok = loss_token_masked(&labels, &probs, mask)?;
    let sent_labels: Vec<SentenceLabels> = r.sentences.iter().map(|s| s.labels.clone()).collect();
    let l_sent = loss_sentence_masked(&sent_labels, &preds.sentences, mask)?;
    let l_tex = loss_text(T::of(r.text_score), check_prob(preds.text, "text")?);
    let total = combined_loss([l_tok, l_sent, l_tex], w)?;
    if !total.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "non-finite objective for review `{}`",
            r.id
        )));
    }
    Ok(total)
}

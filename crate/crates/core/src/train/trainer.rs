//! The training loop.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate_reviews, MetricsBundle};
use super::optim::{add_weight_decay, clip_global_norm, Adam};
use crate::corpus::{Corpus, Review, Split};
use crate::error::{Error, Result};
use crate::hierarchy::{HierModel, Mode, ModelSpec, TaskMask, TaskWeights};
use crate::params::{Grads, ParamGroup};
use crate::scalar::Scalar;
use crate::schedule::{lambda_at, StrategySpec};

fn default_lr() -> f64 {
    0.01
}
fn default_patience() -> usize {
    20
}
fn default_decay() -> f64 {
    0.5
}
fn default_clip() -> f64 {
    5.0
}
fn default_weight_decay() -> f64 {
    1e-5
}
fn default_dropout() -> f64 {
    0.2
}
fn default_batch() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_patience")]
    pub scheduler_patience: usize,
    #[serde(default = "default_decay")]
    pub scheduler_decay: f64,
    #[serde(default = "default_clip")]
    pub grad_clip_norm: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    pub max_epochs: usize,
    /// Reviews per gradient step; their gradients are averaged.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub mask: TaskMask,
}

impl TrainConfig {
    pub fn new(max_epochs: usize, seed: u64) -> Self {
        Self {
            lr: default_lr(),
            scheduler_patience: default_patience(),
            scheduler_decay: default_decay(),
            grad_clip_norm: default_clip(),
            weight_decay: default_weight_decay(),
            dropout: default_dropout(),
            max_epochs,
            batch_size: default_batch(),
            seed,
            mask: TaskMask::JOINT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            errs.push(format!("train.lr must be nonnegative, got {}", self.lr));
        }
        if self.scheduler_patience == 0 {
            errs.push("train.scheduler_patience must be positive".into());
        }
        if !(self.scheduler_decay > 0.0 && self.scheduler_decay <= 1.0) {
            errs.push(format!(
                "train.scheduler_decay must lie in (0, 1], got {}",
                self.scheduler_decay
            ));
        }
        if !(self.grad_clip_norm > 0.0) {
            errs.push(format!(
                "train.grad_clip_norm must be positive, got {}",
                self.grad_clip_norm
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            errs.push(format!(
                "train.weight_decay must be nonnegative, got {}",
                self.weight_decay
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            errs.push(format!(
                "train.dropout must lie in [0, 1), got {}",
                self.dropout
            ));
        }
        if self.max_epochs == 0 {
            errs.push("train.max_epochs must be positive".into());
        }
        if self.batch_size == 0 {
            errs.push("train.batch_size must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub weights: TaskWeights,
    /// Mean training objective over the epoch (dropout active).
    pub train_loss: f64,
    pub val: MetricsBundle,
    /// Learning rate in effect during the epoch.
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Scalar> {
    /// Parameters of the epoch with the lowest validation text MAE.
    pub model: HierModel<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl<T: Scalar> TrainOutcome<T> {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch]
    }
}

fn zero_rows<T: Scalar>(grads: &mut Grads<T>, model: &HierModel<T>, mask: &TaskMask) {
    for (id, rows) in model.frozen_rows(mask) {
        let cols = model.store().get(id).cols;
        let g = grads.get_mut(id);
        for r in rows {
            g[r * cols..(r + 1) * cols].fill(T::zero());
        }
    }
}

/// Gradient-trains a freshly initialised model. Task weights follow
/// `strategy` epoch by epoch; the returned model is the best-validation
/// checkpoint. The run depends only on its inputs.
pub fn train<T: Scalar>(
    corpus: &Corpus,
    spec: &ModelSpec,
    strategy: &StrategySpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    strategy.validate()?;
    let model = HierModel::<T>::new(spec.clone(), cfg.seed)?;
    train_model(model, corpus, strategy, cfg)
}

/// Like [`train`], starting from `model`.
pub fn train_model<T: Scalar>(
    mut model: HierModel<T>,
    corpus: &Corpus,
    strategy: &StrategySpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if corpus.dims != model.spec().dims || corpus.entities != model.spec().entities {
        return Err(Error::InvalidArgument(format!(
            "model expects dims {:?} and E={}, corpus has {:?} and E={}",
            model.spec().dims.as_array(),
            model.spec().entities,
            corpus.dims.as_array(),
            corpus.entities
        )));
    }
    let train_set = corpus.reviews_in(Split::Train);
    let val_set = corpus.reviews_in(Split::Val);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument(
            "training needs nonempty train and val splits".into(),
        ));
    }
    let mask = cfg.mask;
    let mut adam = Adam::new(
        model.store(),
        cfg.lr,
        cfg.scheduler_decay,
        cfg.scheduler_patience,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(f64, usize, HierModel<T>)> = None;

    for epoch in 0..cfg.max_epochs {
        let weights = lambda_at(strategy, epoch)?;
        weights.validate()?;
        let lr = adam.lr(ParamGroup::TokenEncoder);
        order.shuffle(&mut rng);
        let mut losses = vec![0.0; train_set.len()];
        for batch in order.chunks(cfg.batch_size) {
            let jobs: Vec<(usize, &Review, u64)> = batch
                .iter()
                .map(|&i| (i, train_set[i], rng.next_u64()))
                .collect();
            let results = jobs
                .par_iter()
                .map(|&(i, r, seed)| {
                    let mut g = model.store().grads();
                    let mode = Mode::Train {
                        seed,
                        rate: cfg.dropout,
                    };
                    let v = model.accumulate_gradient(r, &weights, &mask, mode, &mut g)?;
                    Ok((i, v, g))
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Divergence {
                    epoch,
                    detail: e.to_string(),
                })?;
            let mut grads = model.store().grads();
            for (i, v, g) in &results {
                losses[*i] = v.as_f64();
                grads.add_assign(g);
            }
            grads.scale(T::of(1.0 / batch.len() as f64));
            let norm = clip_global_norm(&mut grads, cfg.grad_clip_norm);
            if !norm.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("gradient norm is {norm}"),
                });
            }
            add_weight_decay(&mut grads, model.store(), cfg.weight_decay);
            zero_rows(&mut grads, &model, &mask);
            adam.step(model.store_mut(), &grads);
        }
        let train_loss = losses.iter().sum::<f64>() / train_set.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("training loss is {train_loss}"),
            });
        }
        let val = evaluate_reviews(&model, &val_set, corpus.entities, &mask)?;
        if !val.text_mae.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: "validation MAE is not finite".into(),
            });
        }
        adam.scheduler_step(val.text_mae);
        if best.as_ref().is_none_or(|(b, _, _)| val.text_mae < *b) {
            best = Some((val.text_mae, epoch, model.clone()));
        }
        history.push(EpochRecord {
            epoch,
            weights,
            train_loss,
            val,
            lr,
        });
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "X".to_string(), |x| x.to_string())
}

pub const HISTORY_COLUMNS: [&str; 10] = [
    "epoch",
    "lambda_tok",
    "lambda_sent",
    "lambda_tex",
    "train_loss",
    "val_mae",
    "val_token_f1",
    "val_sentence_f1",
    "val_valence_f1",
    "lr",
];

pub fn write_history<W: Write>(history: &[EpochRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(HISTORY_COLUMNS)?;
    for h in history {
        out.write_record([
            h.epoch.to_string(),
            h.weights.token.to_string(),
            h.weights.sentence.to_string(),
            h.weights.text.to_string(),
            h.train_loss.to_string(),
            h.val.text_mae.to_string(),
            opt(h.val.token_micro_f1),
            opt(h.val.sentence_micro_f1),
            opt(h.val.valence_f1),
            h.lr.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<history>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthSpec};
    use crate::hierarchy::Preset;
    use crate::schedule::StrategyKind;

    fn corpus(n: usize) -> Corpus {
        generate_synthetic(
            &SynthSpec {
                n_reviews: n,
                sentences: (2, 3),
                tokens: (3, 5),
                ..SynthSpec::default()
            },
            5,
        )
        .unwrap()
    }

    fn small_spec(c: &Corpus) -> ModelSpec {
        ModelSpec::preset(Preset::IndBiGruAtt, c.dims, c.entities).with_width_cap(4)
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let c = corpus(12);
        let spec = small_spec(&c);
        let mut cfg = TrainConfig::new(2, 3);
        cfg.lr = 0.0;
        let out = train::<f64>(&c, &spec, &StrategySpec::new(StrategyKind::S2, 5.0), &cfg).unwrap();
        let init = HierModel::<f64>::new(spec, 3).unwrap();
        assert_eq!(out.model.store(), init.store());
        assert_eq!(out.history.len(), 2);
        cfg.dropout = 0.0;
        let out = train::<f64>(
            &c,
            &small_spec(&c),
            &StrategySpec::fixed([0.05, 0.5, 1.0]),
            &cfg,
        )
        .unwrap();
        assert_eq!(out.history[0].train_loss, out.history[1].train_loss);
    }

    #[test]
    fn runs_are_reproducible() {
        let c = corpus(12);
        let mut cfg = TrainConfig::new(3, 11);
        cfg.batch_size = 2;
        let s = StrategySpec::new(StrategyKind::S1, 1.0);
        let a = train::<f64>(&c, &small_spec(&c), &s, &cfg).unwrap();
        let b = train::<f64>(&c, &small_spec(&c), &s, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model.store(), b.model.store());
        let mut buf = Vec::new();
        write_history(&a.history, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,lambda_tok,lambda_sent,lambda_tex,train_loss,val_mae"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn training_reduces_loss() {
        let c = corpus(16);
        let cfg = TrainConfig::new(8, 1);
        let out = train::<f64>(
            &c,
            &small_spec(&c),
            &StrategySpec::fixed([0.05, 0.5, 1.0]),
            &cfg,
        )
        .unwrap();
        assert!(out.history.last().unwrap().train_loss < out.history[0].train_loss);
        let best = out.best().val.text_mae;
        assert!(out.history.iter().all(|h| h.val.text_mae >= best));
    }

    #[test]
    fn masked_heads_stay_put() {
        let c = corpus(12);
        let spec = small_spec(&c);
        let mut cfg = TrainConfig::new(2, 4);
        cfg.mask = TaskMask::ENTITY;
        let out = train::<f64>(&c, &spec, &StrategySpec::fixed([0.05, 0.5, 1.0]), &cfg).unwrap();
        let init = HierModel::<f64>::new(spec, 4).unwrap();
        for (id, rows) in init.frozen_rows(&TaskMask::ENTITY) {
            let cols = init.store().get(id).cols;
            for r in rows {
                assert_eq!(
                    init.store().get(id).data[r * cols..(r + 1) * cols],
                    out.model.store().get(id).data[r * cols..(r + 1) * cols]
                );
            }
        }
        assert_eq!(out.history[0].val.valence_f1, None);
    }

    #[test]
    fn rejects_bad_inputs() {
        let c = corpus(12);
        let mut cfg = TrainConfig::new(1, 0);
        cfg.dropout = 1.0;
        assert!(matches!(
            train::<f64>(
                &c,
                &small_spec(&c),
                &StrategySpec::new(StrategyKind::S2, 5.0),
                &cfg
            ),
            Err(Error::Config(_))
        ));
        let mut other = small_spec(&c);
        other.entities += 1;
        assert!(train::<f64>(
            &c,
            &other,
            &StrategySpec::new(StrategyKind::S2, 5.0),
            &TrainConfig::new(1, 0)
        )
        .is_err());
    }
}

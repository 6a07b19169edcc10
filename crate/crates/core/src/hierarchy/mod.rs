//! The three-level predictor: token encoder, sentence encoder over pooled
//! token states, and text pooling over sentence states, with one output
//! head per level.
//!
//! ```text
//! tokens ──token encoder──> token states ──token head──> (p_pol, p_tar)
//!                               │ pool per sentence
//!                               v
//!        sentence encoder ──> sentence states ──sentence head──> entities, valence
//!                               │ pool over sentences
//!                               v
//!                            text head ──> score
//! ```

mod loss;

pub use loss::{
    bernoulli_nll, combined_loss, loss_sentence, loss_sentence_masked, loss_text, loss_token,
    loss_token_masked, review_objective, review_objective_masked, sentence_loss_terms, valence_nll,
    TaskMask, TaskWeights,
};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dims, Review};
use crate::encoders::{
    Attention, BiGru, EncoderOutput, IndBiGru, Marn, MarnConfig, Mfn, MfnConfig,
};
use crate::error::{Error, Result};
use crate::params::{Grads, ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Dropout, Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenEncoderKind {
    /// Raw features are the token states.
    Identity,
    /// One bidirectional GRU over the concatenated modalities.
    BiGru,
    /// One bidirectional GRU per modality.
    IndBiGru,
    Marn,
    Mfn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    /// The encoder's own sequence summary.
    Last,
    Attention,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceEncoderKind {
    Mfn,
    Identity,
}

/// Architecture columns compared in the encoder experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "BiGRU")]
    BiGru,
    #[serde(rename = "IndBiGRU")]
    IndBiGru,
    #[serde(rename = "IndBiGRU+attSent")]
    IndBiGruAttSent,
    #[serde(rename = "IndBiGRU+att")]
    IndBiGruAtt,
    #[serde(rename = "MARN")]
    Marn,
    #[serde(rename = "MFN")]
    Mfn,
    /// Averaged token features with linear heads.
    #[serde(rename = "AvEmb")]
    AvgEmb,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::BiGru,
        Preset::IndBiGru,
        Preset::IndBiGruAttSent,
        Preset::IndBiGruAtt,
        Preset::Marn,
        Preset::Mfn,
        Preset::AvgEmb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::BiGru => "BiGRU",
            Preset::IndBiGru => "IndBiGRU",
            Preset::IndBiGruAttSent => "IndBiGRU+attSent",
            Preset::IndBiGruAtt => "IndBiGRU+att",
            Preset::Marn => "MARN",
            Preset::Mfn => "MFN",
            Preset::AvgEmb => "AvEmb",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown model preset `{s}` (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

fn default_sentence_hidden() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub dims: Dims,
    pub entities: usize,
    pub token_encoder: TokenEncoderKind,
    /// Recurrent width per modality (text, audio, video). The single BiGRU
    /// uses their sum.
    pub token_hidden: Vec<usize>,
    pub token_pool: PoolKind,
    pub sentence_encoder: SentenceEncoderKind,
    /// Width cap for the sentence-level MFN when `sentence_mfn` is absent.
    #[serde(default = "default_sentence_hidden")]
    pub sentence_hidden: usize,
    /// Explicit sentence-level MFN sizes; one LSTM per token-state block.
    #[serde(default)]
    pub sentence_mfn: Option<MfnConfig>,
    pub text_pool: PoolKind,
}

impl ModelSpec {
    /// Independent BiGRUs with attention pooling at both levels and a
    /// sentence-level MFN.
    pub fn new(dims: Dims, entities: usize) -> Self {
        Self::preset(Preset::IndBiGruAtt, dims, entities)
    }

    pub fn preset(preset: Preset, dims: Dims, entities: usize) -> Self {
        let base = Self {
            dims,
            entities,
            token_encoder: TokenEncoderKind::IndBiGru,
            token_hidden: vec![8, 4, 4],
            token_pool: PoolKind::Last,
            sentence_encoder: SentenceEncoderKind::Mfn,
            sentence_hidden: default_sentence_hidden(),
            sentence_mfn: None,
            text_pool: PoolKind::Last,
        };
        match preset {
            Preset::BiGru => Self {
                token_encoder: TokenEncoderKind::BiGru,
                ..base
            },
            Preset::IndBiGru => base,
            Preset::IndBiGruAttSent => Self {
                token_pool: PoolKind::Attention,
                ..base
            },
            Preset::IndBiGruAtt => Self {
                token_pool: PoolKind::Attention,
                text_pool: PoolKind::Attention,
                ..base
            },
            Preset::Marn => Self {
                token_encoder: TokenEncoderKind::Marn,
                ..base
            },
            Preset::Mfn => Self {
                token_encoder: TokenEncoderKind::Mfn,
                ..base
            },
            Preset::AvgEmb => Self {
                token_encoder: TokenEncoderKind::Identity,
                token_pool: PoolKind::Mean,
                sentence_encoder: SentenceEncoderKind::Identity,
                text_pool: PoolKind::Mean,
                ..base
            },
        }
    }

    /// Same architecture with every recurrent width at most `cap`.
    pub fn with_width_cap(mut self, cap: usize) -> Self {
        for h in &mut self.token_hidden {
            *h = (*h).min(cap);
        }
        self.sentence_hidden = self.sentence_hidden.min(cap);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.dims.as_array().contains(&0) {
            errs.push(format!(
                "feature dims must be positive, got {:?}",
                self.dims.as_array()
            ));
        }
        if self.entities == 0 {
            errs.push("entities must be at least 1".into());
        }
        if self.token_hidden.len() != 3 || self.token_hidden.contains(&0) {
            errs.push(format!(
                "token_hidden needs three positive widths, got {:?}",
                self.token_hidden
            ));
        }
        if self.sentence_hidden == 0 {
            errs.push("sentence_hidden must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Clone, Debug)]
enum TokenEncoder {
    Identity,
    BiGru(BiGru),
    IndBiGru(IndBiGru),
    Marn(Marn),
    Mfn(Mfn),
}

#[derive(Clone, Debug)]
struct Head {
    w: ParamId,
    b: ParamId,
}

impl Head {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        input: usize,
        output: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            w: store.add_uniform(format!("{name}.w"), group, output, input, input, rng),
            b: store.add_uniform(format!("{name}.b"), group, output, 1, input, rng),
        }
    }

    fn apply<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Var {
        g.linear(&[(self.w, x)], Some(self.b))
    }
}

/// Parameter layout; independent of the scalar type.
#[derive(Clone, Debug)]
struct Architecture {
    token_encoder: TokenEncoder,
    token_blocks: Vec<usize>,
    token_attention: Option<Attention>,
    sentence_mfn: Option<Mfn>,
    sentence_dim: usize,
    text_attention: Option<Attention>,
    token_head: Head,
    sentence_head: Head,
    text_head: Head,
}

impl Architecture {
    fn build<T: Scalar>(
        spec: &ModelSpec,
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        spec.validate()?;
        let dims = spec.dims.as_array();
        let h = &spec.token_hidden;
        let enc_group = ParamGroup::TokenEncoder;
        let (token_encoder, token_blocks) = match spec.token_encoder {
            TokenEncoderKind::Identity => (TokenEncoder::Identity, dims.to_vec()),
            TokenEncoderKind::BiGru => {
                let hidden: usize = h.iter().sum();
                let enc = BiGru::new(
                    store,
                    "token.bigru",
                    enc_group,
                    spec.dims.total(),
                    hidden,
                    rng,
                );
                (TokenEncoder::BiGru(enc), vec![2 * hidden])
            }
            TokenEncoderKind::IndBiGru => {
                let enc = IndBiGru::new(store, "token.ind_bigru", enc_group, &dims, h, rng);
                (
                    TokenEncoder::IndBiGru(enc),
                    h.iter().map(|x| 2 * x).collect(),
                )
            }
            TokenEncoderKind::Marn => {
                let cap = *h.iter().max().unwrap_or(&1);
                let config = MarnConfig {
                    hidden: h.clone(),
                    ..MarnConfig::uniform(3, cap)
                };
                let mut blocks = config.hidden.clone();
                blocks.push(config.joint);
                (
                    TokenEncoder::Marn(Marn::new(
                        store,
                        "token.marn",
                        enc_group,
                        &dims,
                        config,
                        rng,
                    )?),
                    blocks,
                )
            }
            TokenEncoderKind::Mfn => {
                let cap = *h.iter().max().unwrap_or(&1);
                let config = MfnConfig {
                    hidden: h.clone(),
                    ..MfnConfig::capped(3, cap)
                };
                let mut blocks = config.hidden.clone();
                blocks.push(config.mem);
                (
                    TokenEncoder::Mfn(Mfn::new(store, "token.mfn", enc_group, &dims, config, rng)?),
                    blocks,
                )
            }
        };
        let token_dim: usize = token_blocks.iter().sum();
        let token_attention = (spec.token_pool == PoolKind::Attention)
            .then(|| Attention::new(store, "token_pool", ParamGroup::TokenPool, token_dim, rng));
        let (sentence_mfn, sentence_dim) = match spec.sentence_encoder {
            SentenceEncoderKind::Identity => (None, token_dim),
            SentenceEncoderKind::Mfn => {
                let config = spec
                    .sentence_mfn
                    .clone()
                    .unwrap_or_else(|| MfnConfig::capped(token_blocks.len(), spec.sentence_hidden));
                let mfn = Mfn::new(
                    store,
                    "sentence.mfn",
                    ParamGroup::SentenceEncoder,
                    &token_blocks,
                    config,
                    rng,
                )?;
                let d = mfn.output_dim();
                (Some(mfn), d)
            }
        };
        let text_attention = (spec.text_pool == PoolKind::Attention)
            .then(|| Attention::new(store, "text_pool", ParamGroup::TextPool, sentence_dim, rng));
        let token_head = Head::new(
            store,
            "head.token",
            ParamGroup::TokenHead,
            token_dim,
            2,
            rng,
        );
        let sentence_head = Head::new(
            store,
            "head.sentence",
            ParamGroup::SentenceHead,
            sentence_dim,
            spec.entities + 4,
            rng,
        );
        let text_head = Head::new(
            store,
            "head.text",
            ParamGroup::TextHead,
            sentence_dim,
            1,
            rng,
        );
        Ok(Self {
            token_encoder,
            token_blocks,
            token_attention,
            sentence_mfn,
            sentence_dim,
            text_attention,
            token_head,
            sentence_head,
            text_head,
        })
    }
}

/// Sentence-level outputs: entity probabilities and a valence distribution
/// over (positive, negative, neutral, none).
#[derive(Clone, Debug, PartialEq)]
pub struct SentencePrediction<T> {
    pub entities: Vec<T>,
    pub valence: Vec<T>,
}

/// All predictions for one review. `tokens[j][i]` is `(p_pol, p_tar)` of
/// token `i` in sentence `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionBundle<T> {
    pub tokens: Vec<Vec<[T; 2]>>,
    pub sentences: Vec<SentencePrediction<T>>,
    pub text: T,
    /// Token attention weights per sentence when token pooling uses attention.
    pub token_attention: Vec<Option<Vec<T>>>,
    /// Sentence attention weights when text pooling uses attention.
    pub sentence_attention: Option<Vec<T>>,
}

impl<T: Scalar> PredictionBundle<T> {
    pub fn to_f64(&self) -> PredictionBundle<f64> {
        let v = |xs: &[T]| xs.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        PredictionBundle {
            tokens: self
                .tokens
                .iter()
                .map(|s| s.iter().map(|p| [p[0].as_f64(), p[1].as_f64()]).collect())
                .collect(),
            sentences: self
                .sentences
                .iter()
                .map(|s| SentencePrediction {
                    entities: v(&s.entities),
                    valence: v(&s.valence),
                })
                .collect(),
            text: self.text.as_f64(),
            token_attention: self
                .token_attention
                .iter()
                .map(|a| a.as_deref().map(v))
                .collect(),
            sentence_attention: self.sentence_attention.as_deref().map(v),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    /// Dropout disabled; repeated calls agree exactly.
    Eval,
    /// Dropout at `rate` on encoder inputs and pooled vectors, with masks
    /// drawn from `seed`.
    Train { seed: u64, rate: f64 },
}

/// Graph nodes of one recorded forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub tokens: Vec<Vec<Var>>,
    pub entities: Vec<Var>,
    pub valence: Vec<Var>,
    pub text: Var,
    pub token_attention: Vec<Option<Var>>,
    pub sentence_attention: Option<Var>,
}

impl ForwardVars {
    pub fn values<T: Scalar>(&self, g: &Graph<T>) -> PredictionBundle<T> {
        PredictionBundle {
            tokens: self
                .tokens
                .iter()
                .map(|s| {
                    s.iter()
                        .map(|&v| {
                            let p = g.value(v);
                            [p[0], p[1]]
                        })
                        .collect()
                })
                .collect(),
            sentences: self
                .entities
                .iter()
                .zip(&self.valence)
                .map(|(&e, &v)| SentencePrediction {
                    entities: g.value(e).to_vec(),
                    valence: g.value(v).to_vec(),
                })
                .collect(),
            text: g.scalar(self.text),
            token_attention: self
                .token_attention
                .iter()
                .map(|a| a.map(|a| g.value(a).to_vec()))
                .collect(),
            sentence_attention: self.sentence_attention.map(|a| g.value(a).to_vec()),
        }
    }
}

pub const MODEL_FORMAT: &str = "hiermine-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
struct ModelFile<T> {
    format: String,
    version: u32,
    scalar: String,
    spec: ModelSpec,
    params: ParamStore<T>,
}

/// A model specification together with its parameters.
#[derive(Clone, Debug)]
pub struct HierModel<T: Scalar> {
    spec: ModelSpec,
    arch: Architecture,
    store: ParamStore<T>,
}

impl<T: Scalar> HierModel<T> {
    /// Fresh parameters drawn uniformly in `±1/sqrt(fan_in)` from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture::build(&spec, &mut store, &mut rng)?;
        Ok(Self { spec, arch, store })
    }

    /// Rebuilds the layout of `spec` and adopts `store`, which must hold
    /// exactly the parameters the layout expects.
    pub fn from_parts(spec: ModelSpec, store: ParamStore<T>) -> Result<Self> {
        let mut model = Self::new(spec, 0)?;
        if store.len() != model.store.len() {
            return Err(Error::Schema(format!(
                "model expects {} parameter tensors, file has {}",
                model.store.len(),
                store.len()
            )));
        }
        for ((_, want), (_, got)) in model.store.iter().zip(store.iter()) {
            if want.name != got.name
                || want.rows != got.rows
                || want.cols != got.cols
                || got.data.len() != got.rows * got.cols
            {
                return Err(Error::Schema(format!(
                    "parameter `{}` ({}x{}) does not match expected `{}` ({}x{})",
                    got.name, got.rows, got.cols, want.name, want.rows, want.cols
                )));
            }
        }
        model.store = store;
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Width of the token states fed to the token head.
    pub fn token_state_dim(&self) -> usize {
        self.arch.token_blocks.iter().sum()
    }

    pub fn sentence_state_dim(&self) -> usize {
        self.arch.sentence_dim
    }

    pub fn cast<U: Scalar>(&self) -> HierModel<U> {
        HierModel {
            spec: self.spec.clone(),
            arch: self.arch.clone(),
            store: self.store.cast(),
        }
    }

    /// Sets every head weight and bias to zero.
    pub fn zero_heads(&mut self) {
        for group in [
            ParamGroup::TokenHead,
            ParamGroup::SentenceHead,
            ParamGroup::TextHead,
        ] {
            self.store.zero_group(group);
        }
    }

    fn check_review(&self, r: &Review) -> Result<()> {
        if r.sentences.is_empty() {
            return Err(Error::EmptySequence("review"));
        }
        let dims = self.spec.dims;
        for s in &r.sentences {
            if s.tokens.is_empty() {
                return Err(Error::EmptySequence("sentence"));
            }
            for t in &s.tokens {
                for (what, want, got) in [
                    ("text features", dims.text, t.features.text.len()),
                    ("audio features", dims.audio, t.features.audio.len()),
                    ("video features", dims.video, t.features.video.len()),
                ] {
                    if want != got {
                        return Err(Error::DimMismatch {
                            what,
                            expected: want,
                            got,
                        });
                    }
                }
            }
            if s.labels.entities.len() != self.spec.entities {
                return Err(Error::DimMismatch {
                    what: "entity labels",
                    expected: self.spec.entities,
                    got: s.labels.entities.len(),
                });
            }
        }
        Ok(())
    }

    fn encode_tokens(&self, g: &mut Graph<T>, views: &[Vec<Var>]) -> Result<EncoderOutput> {
        match &self.arch.token_encoder {
            TokenEncoder::Identity => {
                let n = views[0].len();
                let states: Vec<Var> = (0..n)
                    .map(|t| {
                        let parts: Vec<Var> = views.iter().map(|v| v[t]).collect();
                        g.concat(&parts)
                    })
                    .collect();
                Ok(EncoderOutput {
                    pooled: states[n - 1],
                    states,
                    blocks: self.arch.token_blocks.clone(),
                    alphas: None,
                })
            }
            TokenEncoder::BiGru(enc) => {
                let n = views[0].len();
                let xs: Vec<Var> = (0..n)
                    .map(|t| {
                        let parts: Vec<Var> = views.iter().map(|v| v[t]).collect();
                        g.concat(&parts)
                    })
                    .collect();
                enc.encode(g, &xs)
            }
            TokenEncoder::IndBiGru(enc) => enc.encode(g, views),
            TokenEncoder::Marn(enc) => enc.encode(g, views),
            TokenEncoder::Mfn(enc) => enc.encode(g, views),
        }
    }

    fn pool(
        g: &mut Graph<T>,
        kind: PoolKind,
        att: Option<&Attention>,
        out: &EncoderOutput,
    ) -> Result<(Var, Option<Var>)> {
        Ok(match (kind, att) {
            (PoolKind::Attention, Some(att)) => {
                let (pooled, alphas) = att.pool(g, &out.states)?;
                (pooled, Some(alphas))
            }
            (PoolKind::Mean, _) => (g.mean(&out.states), None),
            _ => (out.pooled, None),
        })
    }

    /// Records the forward pass of one review on `g`.
    pub fn record(&self, g: &mut Graph<T>, r: &Review) -> Result<ForwardVars> {
        self.check_review(r)?;
        let e = self.spec.entities;
        let mut tokens = Vec::with_capacity(r.sentences.len());
        let mut pooled_sentences = Vec::with_capacity(r.sentences.len());
        let mut token_attention = Vec::with_capacity(r.sentences.len());
        for s in &r.sentences {
            let mut views: Vec<Vec<Var>> = vec![Vec::with_capacity(s.tokens.len()); 3];
            for t in &s.tokens {
                for (k, x) in t.features.views().into_iter().enumerate() {
                    let v = g.input(x.iter().map(|&v| T::of(v)).collect());
                    views[k].push(g.dropout(v));
                }
            }
            let out = self.encode_tokens(g, &views)?;
            let probs = out
                .states
                .iter()
                .map(|&h| {
                    let logits = self.arch.token_head.apply(g, h);
                    g.sigmoid(logits)
                })
                .collect();
            tokens.push(probs);
            let (pooled, alphas) = Self::pool(
                g,
                self.spec.token_pool,
                self.arch.token_attention.as_ref(),
                &out,
            )?;
            pooled_sentences.push(g.dropout(pooled));
            token_attention.push(alphas);
        }
        let sent_out = match &self.arch.sentence_mfn {
            None => EncoderOutput {
                pooled: *pooled_sentences.last().expect("nonempty review"),
                states: pooled_sentences,
                blocks: vec![self.arch.sentence_dim],
                alphas: None,
            },
            Some(mfn) => {
                let mut views: Vec<Vec<Var>> = Vec::with_capacity(self.arch.token_blocks.len());
                let mut offset = 0;
                for &b in &self.arch.token_blocks {
                    views.push(
                        pooled_sentences
                            .iter()
                            .map(|&p| g.slice(p, offset, b))
                            .collect(),
                    );
                    offset += b;
                }
                mfn.encode(g, &views)?
            }
        };
        let mut entities = Vec::with_capacity(sent_out.states.len());
        let mut valence = Vec::with_capacity(sent_out.states.len());
        for &h in &sent_out.states {
            let logits = self.arch.sentence_head.apply(g, h);
            let ent = g.slice(logits, 0, e);
            entities.push(g.sigmoid(ent));
            let val = g.slice(logits, e, 4);
            valence.push(g.softmax(val));
        }
        let (text_vec, sentence_attention) = Self::pool(
            g,
            self.spec.text_pool,
            self.arch.text_attention.as_ref(),
            &sent_out,
        )?;
        let text_vec = g.dropout(text_vec);
        let text_logit = self.arch.text_head.apply(g, text_vec);
        let text = g.sigmoid(text_logit);
        Ok(ForwardVars {
            tokens,
            entities,
            valence,
            text,
            token_attention,
            sentence_attention,
        })
    }

    fn graph(&self, mode: Mode) -> Graph<'_, T> {
        match mode {
            Mode::Eval => Graph::new(&self.store),
            Mode::Train { seed, rate } => Graph::with_dropout(
                &self.store,
                Dropout {
                    rate,
                    rng: ChaCha8Rng::seed_from_u64(seed),
                },
            ),
        }
    }

    pub fn forward_review(&self, r: &Review, mode: Mode) -> Result<PredictionBundle<T>> {
        let mut g = self.graph(mode);
        let vars = self.record(&mut g, r)?;
        Ok(vars.values(&g))
    }

    /// Records the forward pass and the weighted objective; returns the
    /// objective node.
    pub fn record_objective(
        &self,
        g: &mut Graph<T>,
        r: &Review,
        w: &TaskWeights,
        mask: &TaskMask,
    ) -> Result<(Var, ForwardVars)> {
        let [c_tok, c_sent, c_tex] = w.normalized()?;
        let vars = self.record(g, r)?;
        let mut terms: Vec<(Var, T)> = Vec::new();
        let active_tok = mask.pol as usize + mask.tar as usize;
        if c_tok > 0.0 && active_tok > 0 {
            let n = r.num_tokens();
            let unit = 1.0 / (active_tok * n) as f64;
            let wp = T::of(if mask.pol { unit } else { 0.0 });
            let wt = T::of(if mask.tar { unit } else { 0.0 });
            for (s, probs) in r.sentences.iter().zip(&vars.tokens) {
                for (t, &p) in s.tokens.iter().zip(probs) {
                    let y = vec![T::of(t.labels.pol as f64), T::of(t.labels.tar as f64)];
                    let node = g.bce(p, y, vec![wp, wt]);
                    terms.push((node, T::of(c_tok)));
                }
            }
        }
        if c_sent > 0.0 {
            let n = r.sentences.len() as f64;
            for (j, s) in r.sentences.iter().enumerate() {
                let e = s.labels.entities.len();
                let use_ent = mask.entities && e > 0;
                let parts = use_ent as usize + mask.valence as usize;
                if parts == 0 {
                    continue;
                }
                let scale = 1.0 / (parts as f64 * n);
                if use_ent {
                    let y = s.labels.entities.iter().map(|&b| T::of(b as f64)).collect();
                    let node = g.bce(vars.entities[j], y, vec![T::of(scale / e as f64); e]);
                    terms.push((node, T::of(c_sent)));
                }
                if mask.valence {
                    let class = s.labels.valence_class().ok_or_else(|| {
                        Error::InvalidArgument(format!("review `{}`: valence is not one-hot", r.id))
                    })?;
                    let node = g.cat_nll(vars.valence[j], class.index(), T::of(scale));
                    terms.push((node, T::of(c_sent)));
                }
            }
        }
        if c_tex > 0.0 {
            let node = g.sq_err(vars.text, T::of(r.text_score), T::one());
            terms.push((node, T::of(c_tex)));
        }
        Ok((g.sum_scalars(&terms), vars))
    }

    /// Objective value and its gradient for one review, added into `grads`.
    pub fn accumulate_gradient(
        &self,
        r: &Review,
        w: &TaskWeights,
        mask: &TaskMask,
        mode: Mode,
        grads: &mut Grads<T>,
    ) -> Result<T> {
        let mut g = self.graph(mode);
        let (obj, _) = self.record_objective(&mut g, r, w, mask)?;
        let value = g.scalar(obj);
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite objective for review `{}`",
                r.id
            )));
        }
        g.backward(obj, grads);
        Ok(value)
    }

    /// Objective value without gradients (dropout off).
    pub fn objective(&self, r: &Review, w: &TaskWeights, mask: &TaskMask) -> Result<T> {
        let mut g = Graph::new(&self.store);
        let (obj, _) = self.record_objective(&mut g, r, w, mask)?;
        Ok(g.scalar(obj))
    }

    /// Head rows belonging to label components disabled by `mask`.
    pub fn frozen_rows(&self, mask: &TaskMask) -> Vec<(ParamId, Vec<usize>)> {
        let e = self.spec.entities;
        let mut token_rows = Vec::new();
        if !mask.pol {
            token_rows.push(0);
        }
        if !mask.tar {
            token_rows.push(1);
        }
        let mut sent_rows = Vec::new();
        if !mask.entities {
            sent_rows.extend(0..e);
        }
        if !mask.valence {
            sent_rows.extend(e..e + 4);
        }
        let mut out = Vec::new();
        for (head, rows) in [
            (&self.arch.token_head, token_rows),
            (&self.arch.sentence_head, sent_rows),
        ] {
            if !rows.is_empty() {
                out.push((head.w, rows.clone()));
                out.push((head.b, rows));
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            scalar: T::NAME.into(),
            spec: self.spec.clone(),
            params: self.store.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let head: serde_json::Value = serde_json::from_str(text)?;
        let field = |k: &str| head.get(k).cloned().unwrap_or(serde_json::Value::Null);
        if field("format") != serde_json::Value::from(MODEL_FORMAT) {
            return Err(Error::Schema(format!("not a {MODEL_FORMAT} file")));
        }
        if field("version") != serde_json::Value::from(MODEL_VERSION) {
            return Err(Error::Schema(format!(
                "model version {} is not supported (expected {MODEL_VERSION})",
                field("version")
            )));
        }
        if field("scalar") != serde_json::Value::from(T::NAME) {
            return Err(Error::Schema(format!(
                "model stores {} parameters, expected {}",
                field("scalar"),
                T::NAME
            )));
        }
        let file: ModelFile<T> = serde_json::from_value(head)?;
        Self::from_parts(file.spec, file.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

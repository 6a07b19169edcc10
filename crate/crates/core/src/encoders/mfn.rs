use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{Ffn, LstmParams};
use super::{check_views, inputs, EncodedValues, EncoderOutput};
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Graph, Var};

/// Memory fusion network sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfnConfig {
    /// LSTM cell size per view.
    pub hidden: Vec<usize>,
    /// Size of the multi-view gated memory.
    pub mem: usize,
    /// Number of consecutive LSTM states fed to the delta attention.
    pub window: usize,
    /// Hidden width of the delta-attention network.
    pub attn_hidden: usize,
    /// Hidden width of the network proposing memory updates.
    pub update_hidden: usize,
    /// Hidden width of the retain gate network.
    pub gamma1_hidden: usize,
    /// Hidden width of the update gate network.
    pub gamma2_hidden: usize,
}

impl Default for MfnConfig {
    /// Text 64, audio 32, video 48; memory 32; window 2; attention widths
    /// 32/16; gate widths 64/32.
    fn default() -> Self {
        Self {
            hidden: vec![64, 32, 48],
            mem: 32,
            window: 2,
            attn_hidden: 32,
            update_hidden: 16,
            gamma1_hidden: 64,
            gamma2_hidden: 32,
        }
    }
}

impl MfnConfig {
    /// Same shape as the default with every width capped at `cap`.
    pub fn capped(views: usize, cap: usize) -> Self {
        let d = Self::default();
        let mut hidden: Vec<usize> = d.hidden.iter().map(|&h| h.min(cap)).collect();
        hidden.resize(views, cap.min(32));
        Self {
            hidden,
            mem: d.mem.min(cap),
            window: d.window,
            attn_hidden: d.attn_hidden.min(cap),
            update_hidden: d.update_hidden.min(cap),
            gamma1_hidden: d.gamma1_hidden.min(cap),
            gamma2_hidden: d.gamma2_hidden.min(cap),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.hidden.iter().sum::<usize>() + self.mem
    }
}

/// Per-view LSTMs, a delta attention over a window of consecutive
/// concatenated LSTM states, and a gated cross-view memory:
///
/// ```text
/// s_t   = h_{t-w+1} ++ ... ++ h_t              (zeros before the start)
/// a_t   = softmax(D_a(s_t)),  s^_t = a_t * s_t
/// u^_t  = tanh(D_u(s^_t))
/// g1,g2 = sigmoid(D_g1(s^_t ++ u_{t-1})), sigmoid(D_g2(s^_t ++ u_{t-1}))
/// u_t   = g1 * u_{t-1} + g2 * u^_t
/// ```
///
/// State `t` is `h_t ++ u_t`; the pooled output is the final state.
#[derive(Clone, Debug)]
pub struct Mfn {
    pub config: MfnConfig,
    pub inputs: Vec<usize>,
    pub lstms: Vec<LstmParams>,
    pub attention: Ffn,
    pub update: Ffn,
    pub gamma1: Ffn,
    pub gamma2: Ffn,
}

impl Mfn {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        group: ParamGroup,
        inputs: &[usize],
        config: MfnConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if inputs.len() != config.hidden.len() {
            return Err(Error::LengthMismatch {
                what: "mfn views",
                left: inputs.len(),
                right: config.hidden.len(),
            });
        }
        if config.window == 0 || config.mem == 0 {
            return Err(Error::InvalidArgument(
                "mfn window and memory must be positive".into(),
            ));
        }
        let lstms = inputs
            .iter()
            .zip(&config.hidden)
            .enumerate()
            .map(|(k, (&i, &h))| {
                LstmParams::new(store, &format!("{prefix}.lstm{k}"), group, i, h, 0, rng)
            })
            .collect();
        let total: usize = config.hidden.iter().sum();
        let span = config.window * total;
        let attention = Ffn::new(
            store,
            &format!("{prefix}.delta_att"),
            group,
            span,
            config.attn_hidden,
            span,
            rng,
        );
        let update = Ffn::new(
            store,
            &format!("{prefix}.update"),
            group,
            span,
            config.update_hidden,
            config.mem,
            rng,
        );
        let gamma1 = Ffn::new(
            store,
            &format!("{prefix}.gamma1"),
            group,
            span + config.mem,
            config.gamma1_hidden,
            config.mem,
            rng,
        );
        let gamma2 = Ffn::new(
            store,
            &format!("{prefix}.gamma2"),
            group,
            span + config.mem,
            config.gamma2_hidden,
            config.mem,
            rng,
        );
        Ok(Self {
            config,
            inputs: inputs.to_vec(),
            lstms,
            attention,
            update,
            gamma1,
            gamma2,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, views: &[Vec<Var>]) -> Result<EncoderOutput> {
        let n = check_views(g, views, &self.inputs, "mfn")?;
        let mut hs: Vec<Var> = self.lstms.iter().map(|l| g.zeros(l.hidden)).collect();
        let mut cs = hs.clone();
        let total: usize = self.config.hidden.iter().sum();
        let zero_cat = g.zeros(total);
        let mut window: Vec<Var> = vec![zero_cat; self.config.window];
        let mut mem = g.zeros(self.config.mem);
        let mut states = Vec::with_capacity(n);
        for t in 0..n {
            for (k, lstm) in self.lstms.iter().enumerate() {
                let (h, c) = lstm.step(g, views[k][t], hs[k], cs[k], None);
                hs[k] = h;
                cs[k] = c;
            }
            let h_cat = g.concat(&hs);
            window.remove(0);
            window.push(h_cat);
            let span = g.concat(&window);
            let scores = self.attention.forward(g, span);
            let att = g.softmax(scores);
            let attended = g.mul(att, span);
            let proposal = self.update.forward(g, attended);
            let proposal = g.tanh(proposal);
            let both = g.concat(&[attended, mem]);
            let g1 = self.gamma1.forward(g, both);
            let g1 = g.sigmoid(g1);
            let g2 = self.gamma2.forward(g, both);
            let g2 = g.sigmoid(g2);
            let retained = g.mul(g1, mem);
            let written = g.mul(g2, proposal);
            mem = g.add(retained, written);
            let mut parts = hs.clone();
            parts.push(mem);
            states.push(g.concat(&parts));
        }
        let mut blocks = self.config.hidden.clone();
        blocks.push(self.config.mem);
        Ok(EncoderOutput {
            pooled: states[n - 1],
            states,
            blocks,
            alphas: None,
        })
    }
}

pub fn mfn_encode<T: Scalar>(
    store: &ParamStore<T>,
    mfn: &Mfn,
    views: &[Vec<Vec<T>>],
) -> Result<EncodedValues<T>> {
    let mut g = Graph::new(store);
    let xs: Vec<Vec<Var>> = views.iter().map(|v| inputs(&mut g, v)).collect();
    let out = mfn.encode(&mut g, &xs)?;
    Ok(out.values(&g))
}

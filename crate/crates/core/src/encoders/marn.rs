use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{Ffn, LstmParams};
use super::{check_views, inputs, EncodedValues, EncoderOutput};
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Graph, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarnConfig {
    /// Local LSTM size per view.
    pub hidden: Vec<usize>,
    /// Output width of each per-view feed-forward map in the attention block.
    pub reduce: Vec<usize>,
    /// Size of the cross-view state.
    pub joint: usize,
    /// Hidden width of every feed-forward map in the attention block.
    pub ffn_hidden: usize,
}

impl MarnConfig {
    pub fn uniform(views: usize, hidden: usize) -> Self {
        Self {
            hidden: vec![hidden; views],
            reduce: vec![hidden.div_ceil(2); views],
            joint: hidden,
            ffn_hidden: hidden,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.hidden.iter().sum::<usize>() + self.joint
    }
}

/// Multi-attention recurrent network. Each view keeps a local LSTM state
/// whose gates also read the previous cross-view state `z`. The attention
/// block computes one softmax attention per view over the concatenated
/// local states, passes each attended vector through its own feed-forward
/// map, and mixes the concatenation through a joint map into the new `z`.
/// State `t` (the hybrid state) is `h_t ++ z_t`; the pooled output is the
/// final hybrid state.
#[derive(Clone, Debug)]
pub struct Marn {
    pub config: MarnConfig,
    pub inputs: Vec<usize>,
    pub lstms: Vec<LstmParams>,
    pub attn_w: Vec<ParamId>,
    pub attn_b: Vec<ParamId>,
    pub view_maps: Vec<Ffn>,
    pub joint_map: Ffn,
}

impl Marn {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        group: ParamGroup,
        inputs: &[usize],
        config: MarnConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let k = inputs.len();
        if config.hidden.len() != k || config.reduce.len() != k {
            return Err(Error::LengthMismatch {
                what: "marn views",
                left: k,
                right: config.hidden.len().min(config.reduce.len()),
            });
        }
        let lstms = inputs
            .iter()
            .zip(&config.hidden)
            .enumerate()
            .map(|(v, (&i, &h))| {
                LstmParams::new(
                    store,
                    &format!("{prefix}.lsthm{v}"),
                    group,
                    i,
                    h,
                    config.joint,
                    rng,
                )
            })
            .collect();
        let total: usize = config.hidden.iter().sum();
        let mut attn_w = Vec::new();
        let mut attn_b = Vec::new();
        let mut view_maps = Vec::new();
        for v in 0..k {
            attn_w.push(store.add_uniform(
                format!("{prefix}.att{v}.w"),
                group,
                total,
                total,
                total,
                rng,
            ));
            attn_b.push(store.add_uniform(
                format!("{prefix}.att{v}.b"),
                group,
                total,
                1,
                total,
                rng,
            ));
            view_maps.push(Ffn::new(
                store,
                &format!("{prefix}.map{v}"),
                group,
                total,
                config.ffn_hidden,
                config.reduce[v],
                rng,
            ));
        }
        let reduced: usize = config.reduce.iter().sum();
        let joint_map = Ffn::new(
            store,
            &format!("{prefix}.joint"),
            group,
            reduced,
            config.ffn_hidden,
            config.joint,
            rng,
        );
        Ok(Self {
            config,
            inputs: inputs.to_vec(),
            lstms,
            attn_w,
            attn_b,
            view_maps,
            joint_map,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, views: &[Vec<Var>]) -> Result<EncoderOutput> {
        let n = check_views(g, views, &self.inputs, "marn")?;
        let mut hs: Vec<Var> = self.lstms.iter().map(|l| g.zeros(l.hidden)).collect();
        let mut cs = hs.clone();
        let mut z = g.zeros(self.config.joint);
        let mut states = Vec::with_capacity(n);
        for t in 0..n {
            for (k, lstm) in self.lstms.iter().enumerate() {
                let (h, c) = lstm.step(g, views[k][t], hs[k], cs[k], Some(z));
                hs[k] = h;
                cs[k] = c;
            }
            let h_cat = g.concat(&hs);
            let mut reduced = Vec::with_capacity(self.lstms.len());
            for k in 0..self.lstms.len() {
                let s = g.linear(&[(self.attn_w[k], h_cat)], Some(self.attn_b[k]));
                let a = g.softmax(s);
                let attended = g.mul(a, h_cat);
                let r = self.view_maps[k].forward(g, attended);
                reduced.push(g.tanh(r));
            }
            let cat = g.concat(&reduced);
            let zz = self.joint_map.forward(g, cat);
            z = g.tanh(zz);
            let mut parts = hs.clone();
            parts.push(z);
            states.push(g.concat(&parts));
        }
        let mut blocks = self.config.hidden.clone();
        blocks.push(self.config.joint);
        Ok(EncoderOutput {
            pooled: states[n - 1],
            states,
            blocks,
            alphas: None,
        })
    }
}

pub fn marn_encode<T: Scalar>(
    store: &ParamStore<T>,
    marn: &Marn,
    views: &[Vec<Vec<T>>],
) -> Result<EncodedValues<T>> {
    let mut g = Graph::new(store);
    let xs: Vec<Vec<Var>> = views.iter().map(|v| inputs(&mut g, v)).collect();
    let out = marn.encode(&mut g, &xs)?;
    Ok(out.values(&g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(views: &[usize], len: usize) -> Vec<Vec<Vec<f64>>> {
        views
            .iter()
            .enumerate()
            .map(|(v, &d)| {
                (0..len)
                    .map(|t| {
                        (0..d)
                            .map(|k| ((v * 13 + t * 5 + k) as f64 * 0.41).cos())
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    fn build(seed: u64) -> (ParamStore<f64>, Marn) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let m = Marn::new(
            &mut store,
            "marn",
            ParamGroup::TokenEncoder,
            &[4, 2, 3],
            MarnConfig::uniform(3, 4),
            &mut rng,
        )
        .unwrap();
        (store, m)
    }

    #[test]
    fn output_has_hybrid_size_for_any_length() {
        let (store, m) = build(0);
        for len in [1, 2, 7] {
            let out = marn_encode(&store, &m, &seq(&[4, 2, 3], len)).unwrap();
            assert_eq!(out.pooled.len(), m.output_dim());
            assert_eq!(out.pooled.len(), 16);
            assert_eq!(out.states.len(), len);
        }
    }

    #[test]
    fn deterministic() {
        let (store, m) = build(1);
        let x = seq(&[4, 2, 3], 5);
        assert_eq!(
            marn_encode(&store, &m, &x).unwrap(),
            marn_encode(&store, &m, &x).unwrap()
        );
    }

    #[test]
    fn zero_joint_map_reduces_to_local_lstms() {
        let (mut store, m) = build(2);
        for id in m.joint_map.params() {
            store.get_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = seq(&[4, 2, 3], 6);
        let out = marn_encode(&store, &m, &x).unwrap();

        // independent local LSTMs fed a zero cross-view state
        let mut g = Graph::new(&store);
        let mut last = Vec::new();
        for (k, lstm) in m.lstms.iter().enumerate() {
            let mut h = g.zeros(lstm.hidden);
            let mut c = g.zeros(lstm.hidden);
            let z = g.zeros(m.config.joint);
            for xt in &x[k] {
                let xv = g.input(xt.clone());
                (h, c) = lstm.step(&mut g, xv, h, c, Some(z));
            }
            last.extend_from_slice(g.value(h));
        }
        assert_eq!(&out.pooled[..12], &last[..]);
        assert!(out.pooled[12..].iter().all(|&v| v == 0.0));
    }
}

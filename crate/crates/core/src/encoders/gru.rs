use rand::Rng;

use super::{check_views, inputs, EncodedValues, EncoderOutput};
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Graph, Var};

/// Weights of one gated recurrent unit direction.
///
/// ```text
/// z  = sigmoid(W_z x + U_z h + b_z)
/// r  = sigmoid(W_r x + U_r h + b_r)
/// h~ = tanh(W x + U (r * h) + b)
/// h' = (1 - z) * h + z * h~
/// ```
#[derive(Clone, Debug)]
pub struct GruParams {
    pub input: usize,
    pub hidden: usize,
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
}

impl GruParams {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        group: ParamGroup,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mut mat = |name: &str, cols: usize| {
            store.add_uniform(format!("{prefix}.{name}"), group, hidden, cols, hidden, rng)
        };
        let w_z = mat("w_z", input);
        let u_z = mat("u_z", hidden);
        let b_z = mat("b_z", 1);
        let w_r = mat("w_r", input);
        let u_r = mat("u_r", hidden);
        let b_r = mat("b_r", 1);
        let w_h = mat("w_h", input);
        let u_h = mat("u_h", hidden);
        let b_h = mat("b_h", 1);
        Self {
            input,
            hidden,
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
        }
    }

    pub fn step<T: Scalar>(&self, g: &mut Graph<T>, x: Var, h: Var) -> Var {
        let z = g.linear(&[(self.w_z, x), (self.u_z, h)], Some(self.b_z));
        let z = g.sigmoid(z);
        let r = g.linear(&[(self.w_r, x), (self.u_r, h)], Some(self.b_r));
        let r = g.sigmoid(r);
        let rh = g.mul(r, h);
        let cand = g.linear(&[(self.w_h, x), (self.u_h, rh)], Some(self.b_h));
        let cand = g.tanh(cand);
        g.lerp(h, cand, z)
    }

    /// Runs the cell over `xs` from a zero state, returning every state.
    pub fn run<T: Scalar>(&self, g: &mut Graph<T>, xs: impl Iterator<Item = Var>) -> Vec<Var> {
        let mut h = g.zeros(self.hidden);
        xs.map(|x| {
            h = self.step(g, x, h);
            h
        })
        .collect()
    }

    pub fn params(&self) -> [ParamId; 9] {
        [
            self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r, self.w_h, self.u_h,
            self.b_h,
        ]
    }
}

/// One update of a single GRU cell.
pub fn gru_cell_step<T: Scalar>(
    store: &ParamStore<T>,
    p: &GruParams,
    x: &[T],
    h_prev: &[T],
) -> Result<Vec<T>> {
    if x.len() != p.input {
        return Err(Error::DimMismatch {
            what: "gru input",
            expected: p.input,
            got: x.len(),
        });
    }
    if h_prev.len() != p.hidden {
        return Err(Error::DimMismatch {
            what: "gru state",
            expected: p.hidden,
            got: h_prev.len(),
        });
    }
    let mut g = Graph::new(store);
    let xv = g.input(x.to_vec());
    let hv = g.input(h_prev.to_vec());
    let h = p.step(&mut g, xv, hv);
    Ok(g.value(h).to_vec())
}

/// Bidirectional GRU. State `t` is `forward_t ++ backward_t`; the pooled
/// summary is `forward_T ++ backward_1`.
#[derive(Clone, Debug)]
pub struct BiGru {
    pub fwd: GruParams,
    pub bwd: GruParams,
}

impl BiGru {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        group: ParamGroup,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            fwd: GruParams::new(store, &format!("{prefix}.fwd"), group, input, hidden, rng),
            bwd: GruParams::new(store, &format!("{prefix}.bwd"), group, input, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden
    }

    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, xs: &[Var]) -> Result<EncoderOutput> {
        let n = check_views(
            g,
            std::slice::from_ref(&xs.to_vec()),
            &[self.fwd.input],
            "bigru",
        )?;
        let fwd = self.fwd.run(g, xs.iter().copied());
        let mut bwd = self.bwd.run(g, xs.iter().rev().copied());
        bwd.reverse();
        let states = (0..n).map(|t| g.concat(&[fwd[t], bwd[t]])).collect();
        let pooled = g.concat(&[fwd[n - 1], bwd[0]]);
        Ok(EncoderOutput {
            states,
            pooled,
            blocks: vec![2 * self.hidden()],
            alphas: None,
        })
    }
}

pub fn bigru_encode<T: Scalar>(
    store: &ParamStore<T>,
    enc: &BiGru,
    seq: &[Vec<T>],
) -> Result<EncodedValues<T>> {
    let mut g = Graph::new(store);
    let xs = inputs(&mut g, seq);
    let out = enc.encode(&mut g, &xs)?;
    Ok(out.values(&g))
}

/// Independent bidirectional GRUs, one per view; states concatenate the
/// per-view states in view order.
#[derive(Clone, Debug)]
pub struct IndBiGru {
    pub views: Vec<BiGru>,
}

impl IndBiGru {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        group: ParamGroup,
        inputs: &[usize],
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        assert_eq!(inputs.len(), hidden.len());
        let views = inputs
            .iter()
            .zip(hidden)
            .enumerate()
            .map(|(k, (&i, &h))| BiGru::new(store, &format!("{prefix}.view{k}"), group, i, h, rng))
            .collect();
        Self { views }
    }

    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, views: &[Vec<Var>]) -> Result<EncoderOutput> {
        let dims: Vec<usize> = self.views.iter().map(|v| v.fwd.input).collect();
        let n = check_views(g, views, &dims, "ind_bigru")?;
        let outs = self
            .views
            .iter()
            .zip(views)
            .map(|(enc, xs)| enc.encode(g, xs))
            .collect::<Result<Vec<_>>>()?;
        let states = (0..n)
            .map(|t| {
                let parts: Vec<Var> = outs.iter().map(|o| o.states[t]).collect();
                g.concat(&parts)
            })
            .collect();
        let pooled_parts: Vec<Var> = outs.iter().map(|o| o.pooled).collect();
        let pooled = g.concat(&pooled_parts);
        Ok(EncoderOutput {
            states,
            pooled,
            blocks: self.views.iter().map(|v| 2 * v.hidden()).collect(),
            alphas: None,
        })
    }
}

pub fn ind_bigru_encode<T: Scalar>(
    store: &ParamStore<T>,
    enc: &IndBiGru,
    views: &[Vec<Vec<T>>],
) -> Result<EncodedValues<T>> {
    let mut g = Graph::new(store);
    let xs: Vec<Vec<Var>> = views.iter().map(|v| inputs(&mut g, v)).collect();
    let out = enc.encode(&mut g, &xs)?;
    Ok(out.values(&g))
}

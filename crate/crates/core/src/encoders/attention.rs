use rand::Rng;

use super::inputs;
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Graph, Var};

/// Single-query attention pooling:
/// `u_t = tanh(W h_t + b)`, `s_t = h_t . u_t`, `alpha = softmax(s)`,
/// `pooled = sum_t alpha_t h_t`.
#[derive(Clone, Debug)]
pub struct Attention {
    pub dim: usize,
    pub w: ParamId,
    pub b: ParamId,
}

impl Attention {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        group: ParamGroup,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            dim,
            w: store.add_uniform(format!("{prefix}.w"), group, dim, dim, dim, rng),
            b: store.add_uniform(format!("{prefix}.b"), group, dim, 1, dim, rng),
        }
    }

    /// Returns `(pooled, alphas)`.
    pub fn pool<T: Scalar>(&self, g: &mut Graph<T>, states: &[Var]) -> Result<(Var, Var)> {
        if states.is_empty() {
            return Err(Error::EmptySequence("attention_pool"));
        }
        let mut scores = Vec::with_capacity(states.len());
        for &h in states {
            if g.dim(h) != self.dim {
                return Err(Error::DimMismatch {
                    what: "attention state",
                    expected: self.dim,
                    got: g.dim(h),
                });
            }
            let u = g.linear(&[(self.w, h)], Some(self.b));
            let u = g.tanh(u);
            scores.push(g.dot(h, u));
        }
        let scores = g.concat(&scores);
        let alphas = g.softmax(scores);
        let pooled = g.weighted_sum(alphas, states);
        Ok((pooled, alphas))
    }
}

/// Value-level attention pooling; returns `(pooled, alphas)`.
pub fn attention_pool<T: Scalar>(
    store: &ParamStore<T>,
    att: &Attention,
    states: &[Vec<T>],
) -> Result<(Vec<T>, Vec<T>)> {
    let mut g = Graph::new(store);
    let hs = inputs(&mut g, states);
    let (pooled, alphas) = att.pool(&mut g, &hs)?;
    Ok((g.value(pooled).to_vec(), g.value(alphas).to_vec()))
}

/// The final state of a sequence.
pub fn last_state_pool<T: Clone>(states: &[Vec<T>]) -> Result<Vec<T>> {
    states
        .last()
        .cloned()
        .ok_or(Error::EmptySequence("last_state_pool"))
}

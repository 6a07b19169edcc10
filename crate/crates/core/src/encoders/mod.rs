//! Token- and sentence-level sequence encoders.
//!
//! Every encoder records its computation on a [`Graph`] so the same code
//! path serves training (with gradients) and plain evaluation. The free
//! functions at the bottom of each submodule wrap a throwaway graph for
//! callers that only want values.

mod attention;
mod gru;
mod lstm;
mod marn;
mod mfn;

pub use attention::{attention_pool, last_state_pool, Attention};
pub use gru::{bigru_encode, gru_cell_step, ind_bigru_encode, BiGru, GruParams, IndBiGru};
pub use lstm::{Ffn, LstmParams};
pub use marn::{marn_encode, Marn, MarnConfig};
pub use mfn::{mfn_encode, Mfn, MfnConfig};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Graph, Var};

/// Encoder result recorded on a graph.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// One hidden vector per input step.
    pub states: Vec<Var>,
    /// Fixed-size summary of the whole sequence.
    pub pooled: Var,
    /// Sizes of the per-view blocks that make up each state, in order.
    pub blocks: Vec<usize>,
    /// Attention weights when the pooling used attention.
    pub alphas: Option<Var>,
}

impl EncoderOutput {
    pub fn values<T: Scalar>(&self, g: &Graph<T>) -> EncodedValues<T> {
        EncodedValues {
            states: self.states.iter().map(|&s| g.value(s).to_vec()).collect(),
            pooled: g.value(self.pooled).to_vec(),
            blocks: self.blocks.clone(),
            alphas: self.alphas.map(|a| g.value(a).to_vec()),
        }
    }
}

/// Plain-value counterpart of [`EncoderOutput`].
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedValues<T> {
    pub states: Vec<Vec<T>>,
    pub pooled: Vec<T>,
    pub blocks: Vec<usize>,
    pub alphas: Option<Vec<T>>,
}

pub(crate) fn check_views<T: Scalar>(
    g: &Graph<T>,
    views: &[Vec<Var>],
    dims: &[usize],
    what: &'static str,
) -> Result<usize> {
    if views.len() != dims.len() {
        return Err(Error::LengthMismatch {
            what,
            left: views.len(),
            right: dims.len(),
        });
    }
    let len = views.first().map_or(0, Vec::len);
    if len == 0 {
        return Err(Error::EmptySequence(what));
    }
    for (v, &d) in views.iter().zip(dims) {
        if v.len() != len {
            return Err(Error::LengthMismatch {
                what,
                left: len,
                right: v.len(),
            });
        }
        if let Some(&x) = v.first() {
            if g.dim(x) != d {
                return Err(Error::DimMismatch {
                    what,
                    expected: d,
                    got: g.dim(x),
                });
            }
        }
    }
    Ok(len)
}

pub(crate) fn inputs<T: Scalar>(g: &mut Graph<T>, seq: &[Vec<T>]) -> Vec<Var> {
    seq.iter().map(|x| g.input(x.clone())).collect()
}

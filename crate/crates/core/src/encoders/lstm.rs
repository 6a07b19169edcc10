use rand::Rng;

use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Graph, Var};

/// LSTM cell with the four gates stacked as `[input, forget, output, cell]`.
/// An optional extra input (the cross-view state of MARN) enters every gate.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub input: usize,
    pub hidden: usize,
    pub w: ParamId,
    pub u: ParamId,
    pub v: Option<ParamId>,
    pub b: ParamId,
}

impl LstmParams {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        group: ParamGroup,
        input: usize,
        hidden: usize,
        extra: usize,
        rng: &mut R,
    ) -> Self {
        let rows = 4 * hidden;
        Self {
            input,
            hidden,
            w: store.add_uniform(format!("{prefix}.w"), group, rows, input, hidden, rng),
            u: store.add_uniform(format!("{prefix}.u"), group, rows, hidden, hidden, rng),
            v: (extra > 0)
                .then(|| store.add_uniform(format!("{prefix}.v"), group, rows, extra, hidden, rng)),
            b: store.add_uniform(format!("{prefix}.b"), group, rows, 1, hidden, rng),
        }
    }

    /// Returns the new `(h, c)`.
    pub fn step<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        x: Var,
        h: Var,
        c: Var,
        extra: Option<Var>,
    ) -> (Var, Var) {
        let mut terms = vec![(self.w, x), (self.u, h)];
        if let (Some(v), Some(e)) = (self.v, extra) {
            terms.push((v, e));
        }
        let pre = g.linear(&terms, Some(self.b));
        let n = self.hidden;
        let i = g.slice(pre, 0, n);
        let i = g.sigmoid(i);
        let f = g.slice(pre, n, n);
        let f = g.sigmoid(f);
        let o = g.slice(pre, 2 * n, n);
        let o = g.sigmoid(o);
        let cand = g.slice(pre, 3 * n, n);
        let cand = g.tanh(cand);
        let keep = g.mul(f, c);
        let write = g.mul(i, cand);
        let c_new = g.add(keep, write);
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc);
        (h_new, c_new)
    }
}

/// One-hidden-layer feed-forward map `W2 relu(W1 x + b1) + b2` (no output
/// activation; callers apply their own).
#[derive(Clone, Debug)]
pub struct Ffn {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Ffn {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        group: ParamGroup,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w1: store.add_uniform(format!("{prefix}.w1"), group, hidden, input, input, rng),
            b1: store.add_uniform(format!("{prefix}.b1"), group, hidden, 1, input, rng),
            w2: store.add_uniform(format!("{prefix}.w2"), group, output, hidden, hidden, rng),
            b2: store.add_uniform(format!("{prefix}.b2"), group, output, 1, hidden, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let h = g.linear(&[(self.w1, x)], Some(self.b1));
        let h = g.relu(h);
        g.linear(&[(self.w2, h)], Some(self.b2))
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

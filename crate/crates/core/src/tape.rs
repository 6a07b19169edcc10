//! Reverse-mode automatic differentiation over vector-valued nodes.
//!
//! A [`Graph`] records one forward evaluation (typically one review) as a
//! list of nodes. Matrices only enter as parameters from a [`ParamStore`];
//! every other node holds a plain vector. Calling [`Graph::backward`] on a
//! scalar node accumulates parameter gradients into a [`Grads`] buffer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::params::{Grads, ParamId, ParamStore};
use crate::scalar::{sigmoid, softmax, Scalar};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    /// `sum_k W_k x_k + b`
    Linear {
        terms: Vec<(ParamId, Var)>,
        bias: Option<ParamId>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `(1 - z) * a + z * b`
    Lerp {
        a: Var,
        b: Var,
        z: Var,
    },
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat(Vec<Var>),
    Slice {
        src: Var,
        start: usize,
    },
    Dot(Var, Var),
    Softmax(Var),
    WeightedSum {
        weights: Var,
        items: Vec<Var>,
    },
    Mean(Vec<Var>),
    Mask(Var, Vec<T>),
    Bce {
        p: Var,
        targets: Vec<T>,
        weights: Vec<T>,
    },
    CatNll {
        p: Var,
        class: usize,
        weight: T,
    },
    SqErr {
        p: Var,
        target: T,
        weight: T,
    },
    SumScalars(Vec<(Var, T)>),
}

#[derive(Debug)]
struct Node<T> {
    value: Vec<T>,
    op: Op<T>,
}

/// Inverted dropout applied by [`Graph::dropout`] while recording a training pass.
pub struct Dropout {
    pub rate: f64,
    pub rng: ChaCha8Rng,
}

pub struct Graph<'p, T: Scalar> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    dropout: Option<Dropout>,
}

#[inline]
fn clamp_prob<T: Scalar>(p: T) -> T {
    let eps = T::of(PROB_EPS);
    p.max(eps).min(T::one() - eps)
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(1024),
            param_vars: vec![None; store.len()],
            dropout: None,
        }
    }

    /// Graph whose [`Graph::dropout`] calls are active.
    pub fn with_dropout(store: &'p ParamStore<T>, dropout: Dropout) -> Self {
        let mut g = Self::new(store);
        if dropout.rate > 0.0 {
            g.dropout = Some(dropout);
        }
        g
    }

    pub fn store(&self) -> &'p ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[T] {
        match self.nodes[v.0].op {
            Op::Param(id) => &self.store.get(id).data,
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.value(v).len()
    }

    pub fn input(&mut self, value: Vec<T>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.input(vec![T::zero(); n])
    }

    /// Parameter as a (flattened) vector node; repeated calls share a node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(Vec::new(), Op::Param(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    /// `sum_k W_k x_k + b` for parameter matrices `W_k`.
    pub fn linear(&mut self, terms: &[(ParamId, Var)], bias: Option<ParamId>) -> Var {
        let rows = match (terms.first(), bias) {
            (Some((w, _)), _) => self.store.get(*w).rows,
            (None, Some(b)) => self.store.get(b).data.len(),
            (None, None) => panic!("linear needs at least one term or a bias"),
        };
        let mut out = match bias {
            Some(b) => {
                let bd = &self.store.get(b).data;
                assert_eq!(bd.len(), rows, "bias length");
                bd.clone()
            }
            None => vec![T::zero(); rows],
        };
        for &(w, x) in terms {
            let p = self.store.get(w);
            assert_eq!(p.rows, rows, "linear term rows for {}", p.name);
            let xv = self.value(x);
            assert_eq!(p.cols, xv.len(), "linear input length for {}", p.name);
            for (i, o) in out.iter_mut().enumerate() {
                let row = &p.data[i * p.cols..(i + 1) * p.cols];
                let mut acc = T::zero();
                for (&wij, &xj) in row.iter().zip(xv) {
                    acc += wij * xj;
                }
                *o += acc;
            }
        }
        // make sure parameter leaves exist for gradient extraction
        for &(w, _) in terms {
            self.param(w);
        }
        if let Some(b) = bias {
            self.param(b);
        }
        self.push(
            out,
            Op::Linear {
                terms: terms.to_vec(),
                bias,
            },
        )
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Vec<T> {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.len(), bv.len(), "elementwise operand lengths");
        av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_map(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_map(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_map(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn lerp(&mut self, a: Var, b: Var, z: Var) -> Var {
        let (av, bv, zv) = (self.value(a), self.value(b), self.value(z));
        assert!(
            av.len() == bv.len() && bv.len() == zv.len(),
            "lerp operand lengths"
        );
        let v = av
            .iter()
            .zip(bv)
            .zip(zv)
            .map(|((&x, &y), &w)| (T::one() - w) * x + w * y)
            .collect();
        self.push(v, Op::Lerp { a, b, z })
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).iter().map(|&x| x * c).collect();
        self.push(v, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|&x| x.tanh()).collect();
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|&x| x.max(T::zero())).collect();
        self.push(v, Op::Relu(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        if parts.len() == 1 {
            return parts[0];
        }
        let mut v = Vec::new();
        for &p in parts {
            v.extend_from_slice(self.value(p));
        }
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Var {
        let v = self.value(src)[start..start + len].to_vec();
        self.push(v, Op::Slice { src, start })
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let s = self.zip_map(a, b, |x, y| x * y).into_iter().sum();
        self.push(vec![s], Op::Dot(a, b))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = softmax(self.value(a));
        self.push(v, Op::Softmax(a))
    }

    /// `sum_i weights[i] * items[i]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Var {
        let w = self.value(weights).to_vec();
        assert_eq!(w.len(), items.len(), "one weight per item");
        let n = self.dim(items[0]);
        let mut out = vec![T::zero(); n];
        for (&wi, &it) in w.iter().zip(items) {
            for (o, &x) in out.iter_mut().zip(self.value(it)) {
                *o += wi * x;
            }
        }
        self.push(
            out,
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
        )
    }

    pub fn mean(&mut self, items: &[Var]) -> Var {
        assert!(!items.is_empty(), "mean of nothing");
        let n = self.dim(items[0]);
        let inv = T::one() / T::of(items.len() as f64);
        let mut out = vec![T::zero(); n];
        for &it in items {
            for (o, &x) in out.iter_mut().zip(self.value(it)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o *= inv);
        self.push(out, Op::Mean(items.to_vec()))
    }

    /// Inverted dropout when the graph was built for training; identity otherwise.
    pub fn dropout(&mut self, a: Var) -> Var {
        let n = self.dim(a);
        let Some(d) = self.dropout.as_mut() else {
            return a;
        };
        let keep = 1.0 - d.rate;
        let scale = T::of(1.0 / keep);
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if d.rng.random::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect();
        let v = self
            .value(a)
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        self.push(v, Op::Mask(a, mask))
    }

    /// `sum_k w_k * NLL(y_k | p_k)` for Bernoulli probabilities `p`.
    pub fn bce(&mut self, p: Var, targets: Vec<T>, weights: Vec<T>) -> Var {
        let pv = self.value(p);
        assert!(
            pv.len() == targets.len() && targets.len() == weights.len(),
            "bce lengths"
        );
        let mut s = T::zero();
        for ((&pk, &y), &w) in pv.iter().zip(&targets).zip(&weights) {
            let q = clamp_prob(pk);
            s += -w * (y * q.ln() + (T::one() - y) * (T::one() - q).ln());
        }
        self.push(
            vec![s],
            Op::Bce {
                p,
                targets,
                weights,
            },
        )
    }

    /// `-weight * ln p[class]`.
    pub fn cat_nll(&mut self, p: Var, class: usize, weight: T) -> Var {
        let q = clamp_prob(self.value(p)[class]);
        self.push(vec![-weight * q.ln()], Op::CatNll { p, class, weight })
    }

    /// `weight * (target - p)^2` for a one-element `p`.
    pub fn sq_err(&mut self, p: Var, target: T, weight: T) -> Var {
        let d = target - self.scalar(p);
        self.push(vec![weight * d * d], Op::SqErr { p, target, weight })
    }

    /// `sum_k c_k * s_k` over one-element nodes.
    pub fn sum_scalars(&mut self, terms: &[(Var, T)]) -> Var {
        let s = terms.iter().map(|&(v, c)| c * self.scalar(v)).sum();
        self.push(vec![s], Op::SumScalars(terms.to_vec()))
    }

    /// Back-propagates from the one-element node `out`, adding parameter
    /// gradients into `grads`.
    pub fn backward(&self, out: Var, grads: &mut Grads<T>) {
        assert_eq!(self.dim(out), 1, "backward needs a scalar output");
        let mut adj: Vec<Vec<T>> = (0..self.nodes.len()).map(|_| Vec::new()).collect();
        adj[out.0] = vec![T::one()];

        fn acc<T: Scalar>(adj: &mut [Vec<T>], v: Var, n: usize) -> &mut Vec<T> {
            let a = &mut adj[v.0];
            if a.is_empty() {
                *a = vec![T::zero(); n];
            }
            a
        }

        for idx in (0..=out.0).rev() {
            if adj[idx].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut adj[idx]);
            let node = &self.nodes[idx];
            let val = &node.value;
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    for (d, &gi) in grads.get_mut(*id).iter_mut().zip(&g) {
                        *d += gi;
                    }
                }
                Op::Linear { terms, bias } => {
                    if let Some(b) = bias {
                        let pv = self.param_vars[b.0].expect("bias leaf");
                        let n = g.len();
                        for (d, &gi) in acc(&mut adj, pv, n).iter_mut().zip(&g) {
                            *d += gi;
                        }
                    }
                    for &(w, x) in terms {
                        let p = self.store.get(w);
                        let xv = self.value(x);
                        let wv = self.param_vars[w.0].expect("weight leaf");
                        {
                            let gw = acc(&mut adj, wv, p.data.len());
                            for (i, &gi) in g.iter().enumerate() {
                                if gi == T::zero() {
                                    continue;
                                }
                                let row = &mut gw[i * p.cols..(i + 1) * p.cols];
                                for (r, &xj) in row.iter_mut().zip(xv) {
                                    *r += gi * xj;
                                }
                            }
                        }
                        let gx = acc(&mut adj, x, p.cols);
                        for (i, &gi) in g.iter().enumerate() {
                            if gi == T::zero() {
                                continue;
                            }
                            let row = &p.data[i * p.cols..(i + 1) * p.cols];
                            for (d, &wij) in gx.iter_mut().zip(row) {
                                *d += gi * wij;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        for (d, &gi) in acc(&mut adj, v, g.len()).iter_mut().zip(&g) {
                            *d += gi;
                        }
                    }
                }
                Op::Sub(a, b) => {
                    for (d, &gi) in acc(&mut adj, *a, g.len()).iter_mut().zip(&g) {
                        *d += gi;
                    }
                    for (d, &gi) in acc(&mut adj, *b, g.len()).iter_mut().zip(&g) {
                        *d -= gi;
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    for ((d, &gi), &y) in acc(&mut adj, *a, g.len()).iter_mut().zip(&g).zip(bv) {
                        *d += gi * y;
                    }
                    for ((d, &gi), &x) in acc(&mut adj, *b, g.len()).iter_mut().zip(&g).zip(av) {
                        *d += gi * x;
                    }
                }
                Op::Lerp { a, b, z } => {
                    let (av, bv, zv) = (self.value(*a), self.value(*b), self.value(*z));
                    let n = g.len();
                    for (k, d) in acc(&mut adj, *a, n).iter_mut().enumerate() {
                        *d += g[k] * (T::one() - zv[k]);
                    }
                    for (k, d) in acc(&mut adj, *b, n).iter_mut().enumerate() {
                        *d += g[k] * zv[k];
                    }
                    for (k, d) in acc(&mut adj, *z, n).iter_mut().enumerate() {
                        *d += g[k] * (bv[k] - av[k]);
                    }
                }
                Op::Scale(a, c) => {
                    for (d, &gi) in acc(&mut adj, *a, g.len()).iter_mut().zip(&g) {
                        *d += gi * *c;
                    }
                }
                Op::Sigmoid(a) => {
                    for ((d, &gi), &s) in acc(&mut adj, *a, g.len()).iter_mut().zip(&g).zip(val) {
                        *d += gi * s * (T::one() - s);
                    }
                }
                Op::Tanh(a) => {
                    for ((d, &gi), &t) in acc(&mut adj, *a, g.len()).iter_mut().zip(&g).zip(val) {
                        *d += gi * (T::one() - t * t);
                    }
                }
                Op::Relu(a) => {
                    for ((d, &gi), &r) in acc(&mut adj, *a, g.len()).iter_mut().zip(&g).zip(val) {
                        if r > T::zero() {
                            *d += gi;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.dim(p);
                        for (d, &gi) in acc(&mut adj, p, n).iter_mut().zip(&g[off..off + n]) {
                            *d += gi;
                        }
                        off += n;
                    }
                }
                Op::Slice { src, start } => {
                    let n = self.dim(*src);
                    let d = acc(&mut adj, *src, n);
                    for (k, &gi) in g.iter().enumerate() {
                        d[start + k] += gi;
                    }
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let gs = g[0];
                    for (d, &y) in acc(&mut adj, *a, av.len()).iter_mut().zip(bv) {
                        *d += gs * y;
                    }
                    for (d, &x) in acc(&mut adj, *b, bv.len()).iter_mut().zip(av) {
                        *d += gs * x;
                    }
                }
                Op::Softmax(a) => {
                    let inner: T = g.iter().zip(val).map(|(&gi, &p)| gi * p).sum();
                    for ((d, &gi), &p) in acc(&mut adj, *a, g.len()).iter_mut().zip(&g).zip(val) {
                        *d += p * (gi - inner);
                    }
                }
                Op::WeightedSum { weights, items } => {
                    let wv = self.value(*weights);
                    let mut gw = vec![T::zero(); items.len()];
                    for (k, &it) in items.iter().enumerate() {
                        let iv = self.value(it);
                        gw[k] = g.iter().zip(iv).map(|(&gi, &x)| gi * x).sum();
                        let wk = wv[k];
                        for (d, &gi) in acc(&mut adj, it, g.len()).iter_mut().zip(&g) {
                            *d += wk * gi;
                        }
                    }
                    for (d, w) in acc(&mut adj, *weights, items.len()).iter_mut().zip(gw) {
                        *d += w;
                    }
                }
                Op::Mean(items) => {
                    let inv = T::one() / T::of(items.len() as f64);
                    for &it in items {
                        for (d, &gi) in acc(&mut adj, it, g.len()).iter_mut().zip(&g) {
                            *d += gi * inv;
                        }
                    }
                }
                Op::Mask(a, mask) => {
                    for ((d, &gi), &m) in acc(&mut adj, *a, g.len()).iter_mut().zip(&g).zip(mask) {
                        *d += gi * m;
                    }
                }
                Op::Bce {
                    p,
                    targets,
                    weights,
                } => {
                    let pv = self.value(*p);
                    let eps = T::of(PROB_EPS);
                    let gs = g[0];
                    let d = acc(&mut adj, *p, pv.len());
                    for k in 0..pv.len() {
                        let q = pv[k];
                        if q < eps || q > T::one() - eps {
                            continue;
                        }
                        let y = targets[k];
                        d[k] += gs * weights[k] * (-y / q + (T::one() - y) / (T::one() - q));
                    }
                }
                Op::CatNll { p, class, weight } => {
                    let pv = self.value(*p);
                    let q = pv[*class];
                    let eps = T::of(PROB_EPS);
                    let d = acc(&mut adj, *p, pv.len());
                    if q >= eps && q <= T::one() - eps {
                        d[*class] += -g[0] * *weight / q;
                    }
                }
                Op::SqErr { p, target, weight } => {
                    let diff = self.scalar(*p) - *target;
                    acc(&mut adj, *p, 1)[0] += g[0] * *weight * (diff + diff);
                }
                Op::SumScalars(terms) => {
                    for &(v, c) in terms {
                        acc(&mut adj, v, 1)[0] += g[0] * c;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamGroup;
    use rand::SeedableRng;

    /// Central differences of `f` with respect to every scalar of every parameter.
    fn numeric_grads(store: &mut ParamStore<f64>, f: &dyn Fn(&ParamStore<f64>) -> f64) -> Vec<f64> {
        let eps = 1e-6;
        let mut out = Vec::new();
        for pi in 0..store.len() {
            for k in 0..store.get(ParamId(pi)).data.len() {
                let orig = store.get(ParamId(pi)).data[k];
                store.get_mut(ParamId(pi)).data[k] = orig + eps;
                let up = f(store);
                store.get_mut(ParamId(pi)).data[k] = orig - eps;
                let down = f(store);
                store.get_mut(ParamId(pi)).data[k] = orig;
                out.push((up - down) / (2.0 * eps));
            }
        }
        out
    }

    fn check(store: &mut ParamStore<f64>, build: &dyn Fn(&mut Graph<f64>) -> Var) {
        let g = {
            let mut graph = Graph::new(store);
            let out = build(&mut graph);
            let mut grads = store.grads();
            graph.backward(out, &mut grads);
            grads.flatten()
        };
        let f = |s: &ParamStore<f64>| {
            let mut graph = Graph::new(s);
            let out = build(&mut graph);
            graph.scalar(out)
        };
        let n = numeric_grads(store, &f);
        for (a, b) in g.iter().zip(&n) {
            assert!(
                (a - b).abs() < 1e-7 * (1.0 + a.abs()),
                "analytic {a} vs numeric {b}"
            );
        }
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let w = store.add_uniform("w", ParamGroup::TokenEncoder, 3, 4, 1, &mut rng);
        let u = store.add_uniform("u", ParamGroup::TokenEncoder, 3, 3, 1, &mut rng);
        let b = store.add_uniform("b", ParamGroup::TokenEncoder, 3, 1, 1, &mut rng);
        let v = store.add_uniform("v", ParamGroup::TokenHead, 3, 1, 1, &mut rng);
        check(&mut store, &|g| {
            let x = g.input(vec![0.3, -0.2, 0.9, 0.1]);
            let h0 = g.input(vec![0.1, 0.5, -0.4]);
            let a = g.linear(&[(w, x), (u, h0)], Some(b));
            let s = g.sigmoid(a);
            let t = g.tanh(a);
            let r = g.relu(a);
            let l = g.lerp(t, r, s);
            let pv = g.param(v);
            let m = g.mul(l, pv);
            let d = g.sub(m, h0);
            let sc = g.scale(d, 1.7);
            let c = g.concat(&[sc, t]);
            let sl = g.slice(c, 2, 3);
            let sm = g.softmax(sl);
            let ws = g.weighted_sum(sm, &[l, t, s]);
            let mn = g.mean(&[ws, s]);
            let dt = g.dot(mn, pv);
            let ad = g.add(mn, s);
            let p = g.sigmoid(ad);
            let l1 = g.bce(p, vec![1.0, 0.0, 1.0], vec![0.5, 0.5, 1.0]);
            let l2 = g.cat_nll(sm, 1, 0.7);
            let ps = g.sigmoid(dt);
            let l3 = g.sq_err(ps, 0.3, 2.0);
            g.sum_scalars(&[(l1, 1.0), (l2, 0.5), (l3, 3.0)])
        });
    }

    #[test]
    fn dropout_is_identity_without_training_rng() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let x = g.input(vec![1.0, 2.0]);
        assert_eq!(g.dropout(x), x);
    }

    #[test]
    fn dropout_scales_kept_units() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::with_dropout(
            &store,
            Dropout {
                rate: 0.5,
                rng: ChaCha8Rng::seed_from_u64(1),
            },
        );
        let x = g.input(vec![1.0; 64]);
        let y = g.dropout(x);
        assert!(g.value(y).iter().all(|&v| v == 0.0 || v == 2.0));
    }
}

//! Adam with per-group state, plateau learning-rate schedulers, gradient
//! clipping and L2 weight decay.

use crate::params::{Grads, ParamGroup, ParamStore};
use crate::scalar::Scalar;

/// Multiplies the learning rate by `factor` once the monitored value has
/// failed to improve for `patience` consecutive steps.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    best: Option<f64>,
    bad: usize,
    reductions: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self {
            lr,
            factor,
            patience,
            best: None,
            bad: 0,
            reductions: 0,
        }
    }

    /// Records `metric` (lower is better); returns true when the rate was cut.
    pub fn step(&mut self, metric: f64) -> bool {
        if self.best.is_none_or(|b| metric < b) {
            self.best = Some(metric);
            self.bad = 0;
            return false;
        }
        self.bad += 1;
        if self.bad >= self.patience {
            self.bad = 0;
            self.reductions += 1;
            self.lr *= self.factor;
            return true;
        }
        false
    }

    pub fn reductions(&self) -> usize {
        self.reductions
    }
}

#[derive(Clone, Debug)]
struct GroupState {
    step: i32,
    scheduler: PlateauScheduler,
}

/// Adam whose step counter and learning rate are kept per [`ParamGroup`].
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    groups: Vec<GroupState>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64, factor: f64, patience: usize) -> Self {
        let zeros: Vec<Vec<T>> = store
            .iter()
            .map(|(_, p)| vec![T::zero(); p.data.len()])
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            groups: ParamGroup::ALL
                .iter()
                .map(|_| GroupState {
                    step: 0,
                    scheduler: PlateauScheduler::new(lr, factor, patience),
                })
                .collect(),
        }
    }

    pub fn lr(&self, group: ParamGroup) -> f64 {
        self.groups[group.index()].scheduler.lr
    }

    /// Feeds the validation metric to every group's scheduler.
    pub fn scheduler_step(&mut self, metric: f64) {
        for g in &mut self.groups {
            g.scheduler.step(metric);
        }
    }

    /// One update of every group that has parameters.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>) {
        let mut present = [false; ParamGroup::ALL.len()];
        for (_, p) in store.iter() {
            present[p.group.index()] = true;
        }
        for (k, g) in self.groups.iter_mut().enumerate() {
            if present[k] {
                g.step += 1;
            }
        }
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let eps = T::of(self.eps);
        for (id, p) in store.iter_mut() {
            let state = &self.groups[p.group.index()];
            let lr = T::of(state.scheduler.lr);
            let c1 = T::one() - b1.powi(state.step);
            let c2 = T::one() - b2.powi(state.step);
            let g = grads.get(id);
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            for i in 0..p.data.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut Grads<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm().as_f64();
    if norm > max_norm && norm.is_finite() {
        grads.scale(T::of(max_norm / norm));
    }
    norm
}

/// Adds `decay * theta` to every gradient.
pub fn add_weight_decay<T: Scalar>(grads: &mut Grads<T>, store: &ParamStore<T>, decay: f64) {
    let d = T::of(decay);
    for (id, p) in store.iter() {
        for (g, &w) in grads.get_mut(id).iter_mut().zip(&p.data) {
            *g += d * w;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn plateau_halves_after_patience() {
        let mut s = PlateauScheduler::new(0.01, 0.5, 20);
        s.step(1.0);
        for k in 1..=3 {
            for _ in 0..19 {
                assert!(!s.step(2.0));
            }
            assert!(s.step(2.0));
            assert_eq!(s.lr, 0.01 * 0.5f64.powi(k));
        }
        assert!(!s.step(0.5));
        assert_eq!(s.reductions(), 3);
    }

    #[test]
    fn improvement_resets_patience() {
        let mut s = PlateauScheduler::new(1.0, 0.5, 2);
        s.step(1.0);
        s.step(1.0);
        s.step(0.9);
        s.step(0.95);
        assert_eq!(s.lr, 1.0);
        s.step(0.95);
        assert_eq!(s.lr, 0.5);
    }

    fn store() -> ParamStore<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        s.add_uniform("a", ParamGroup::TokenHead, 2, 2, 2, &mut rng);
        s.add_uniform("b", ParamGroup::TextHead, 3, 1, 2, &mut rng);
        s
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut s = store();
        let before = s.clone();
        let mut g = s.grads();
        for (i, x) in g.get_mut(crate::params::ParamId(0)).iter_mut().enumerate() {
            *x = if i % 2 == 0 { 3.0 } else { -0.2 };
        }
        let mut adam = Adam::new(&s, 0.01, 0.5, 20);
        adam.step(&mut s, &g);
        let a0 = &before.get(crate::params::ParamId(0)).data;
        let a1 = &s.get(crate::params::ParamId(0)).data;
        for i in 0..4 {
            let want = if i % 2 == 0 { -0.01 } else { 0.01 };
            assert!((a1[i] - a0[i] - want).abs() < 1e-9);
        }
        assert_eq!(
            before.get(crate::params::ParamId(1)),
            s.get(crate::params::ParamId(1))
        );
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut s = store();
        let before = s.clone();
        let mut g = s.grads();
        g.get_mut(crate::params::ParamId(1))[0] = 1.0;
        let mut adam = Adam::new(&s, 0.0, 0.5, 20);
        adam.step(&mut s, &g);
        assert_eq!(before, s);
    }

    #[test]
    fn clipping_and_decay() {
        let s = store();
        let mut g = s.grads();
        g.get_mut(crate::params::ParamId(0))[0] = 30.0;
        g.get_mut(crate::params::ParamId(1))[0] = 40.0;
        assert_eq!(clip_global_norm(&mut g, 5.0), 50.0);
        assert!((g.global_norm() - 5.0).abs() < 1e-12);
        let mut small = s.grads();
        small.get_mut(crate::params::ParamId(0))[0] = 1.0;
        clip_global_norm(&mut small, 5.0);
        assert_eq!(small.get(crate::params::ParamId(0))[0], 1.0);
        let mut z = s.grads();
        add_weight_decay(&mut z, &s, 0.5);
        assert_eq!(
            z.get(crate::params::ParamId(1))[2],
            0.5 * s.get(crate::params::ParamId(1)).data[2]
        );
    }
}

//! Named parameter tensors and their gradient buffers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Optimizer group a parameter belongs to. Each group owns its own
/// optimizer state and learning-rate scheduler.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    TokenEncoder,
    TokenPool,
    SentenceEncoder,
    TextPool,
    TokenHead,
    SentenceHead,
    TextHead,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 7] = [
        ParamGroup::TokenEncoder,
        ParamGroup::TokenPool,
        ParamGroup::SentenceEncoder,
        ParamGroup::TextPool,
        ParamGroup::TokenHead,
        ParamGroup::SentenceHead,
        ParamGroup::TextHead,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Row-major matrix (a vector when `cols == 1`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Param<T> {
    pub name: String,
    pub group: ParamGroup,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add_zeros(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        rows: usize,
        cols: usize,
    ) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            group,
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        });
        ParamId(self.params.len() - 1)
    }

    /// Adds a parameter drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`,
    /// `fan_in` being the column count.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let id = self.add_zeros(name, group, rows, cols);
        for v in &mut self.params[id.0].data {
            *v = T::of(rng.random_range(-bound..bound));
        }
        id
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<T>)> {
        self.params
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalars over all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Sets every scalar to zero.
    pub fn zero_all(&mut self) {
        for p in &mut self.params {
            p.data.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn zero_group(&mut self, group: ParamGroup) {
        for p in self.params.iter_mut().filter(|p| p.group == group) {
            p.data.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn grads(&self) -> Grads<T> {
        Grads {
            data: self
                .params
                .iter()
                .map(|p| vec![T::zero(); p.data.len()])
                .collect(),
        }
    }

    /// Converts every scalar into another precision.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    group: p.group,
                    rows: p.rows,
                    cols: p.cols,
                    data: p.data.iter().map(|&v| U::of(v.as_f64())).collect(),
                })
                .collect(),
        }
    }
}

/// Gradient buffer shaped like a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T> {
    pub data: Vec<Vec<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, id: ParamId) -> &[T] {
        &self.data[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.data[id.0]
    }

    pub fn clear(&mut self) {
        for g in &mut self.data {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn scale(&mut self, c: T) {
        for g in &mut self.data {
            g.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
    }

    pub fn global_norm(&self) -> T {
        self.data
            .iter()
            .flat_map(|g| g.iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.data.iter().flat_map(|g| g.iter().copied()).collect()
    }
}

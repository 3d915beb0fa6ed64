use rand::Rng;

use super::matrix::Matrix;
use crate::error::{KgError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable tensors plus their Adam moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Matrix<T>>,
    first_moment: Vec<Matrix<T>>,
    second_moment: Vec<Matrix<T>>,
    step: u64,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
        }
    }

    /// Adds a tensor with zeroed optimizer moments.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix<T>) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter `{name}`");
        let (r, c) = value.shape();
        self.names.push(name);
        self.tensors.push(value);
        self.first_moment.push(Matrix::zeros(r, c));
        self.second_moment.push(Matrix::zeros(r, c));
        ParamId(self.tensors.len() - 1)
    }

    /// Xavier-uniform initialised tensor, bound `sqrt(6 / (rows + cols))`.
    pub fn insert_xavier<R: Rng + ?Sized>(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| T::of(rng.gen_range(-bound..bound))).collect();
        self.insert(name, Matrix::from_vec(rows, cols, data))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.find(name)
            .ok_or_else(|| KgError::Checkpoint(format!("missing parameter `{name}`")))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Matrix<T> {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.tensors[id.0]
    }

    pub fn moments(&self, id: ParamId) -> (&Matrix<T>, &Matrix<T>) {
        (&self.first_moment[id.0], &self.second_moment[id.0])
    }

    pub(crate) fn parts_mut(&mut self, id: ParamId) -> (&mut Matrix<T>, &mut Matrix<T>, &mut Matrix<T>) {
        (
            &mut self.tensors[id.0],
            &mut self.first_moment[id.0],
            &mut self.second_moment[id.0],
        )
    }

    pub(crate) fn set_moments(&mut self, id: ParamId, m: Matrix<T>, v: Matrix<T>) {
        assert_eq!(m.shape(), self.tensors[id.0].shape());
        assert_eq!(v.shape(), self.tensors[id.0].shape());
        self.first_moment[id.0] = m;
        self.second_moment[id.0] = v;
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    /// Name of the first tensor holding NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors
            .iter()
            .zip(&self.names)
            .find(|(t, _)| !t.all_finite())
            .map(|(_, n)| n.as_str())
    }

    /// Copy in another precision (moments included).
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Matrix::cast).collect(),
            first_moment: self.first_moment.iter().map(Matrix::cast).collect(),
            second_moment: self.second_moment.iter().map(Matrix::cast).collect(),
            step: self.step,
        }
    }
}

/// Per-parameter gradients; `None` means the tensor did not influence the
/// loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn empty(n: usize) -> Self {
        ParamGrads { grads: vec![None; n] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn set(&mut self, id: ParamId, g: Matrix<T>) {
        self.grads[id.0] = Some(g);
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Matrix<T>) {
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Elementwise sum, in argument order (used for ordered reductions).
    pub fn merge(&mut self, other: &ParamGrads<T>) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, c: T) {
        for g in self.grads.iter_mut().flatten() {
            *g = g.map(|x| x * c);
        }
    }
}

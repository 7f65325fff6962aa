use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Named parameter tensors in declaration order.
///
/// Builders allocate through [`ParamSet::uniform`], which draws from
/// `U[-1/√fan_in, 1/√fan_in]`; fan-in is the last axis of a weight matrix.
#[derive(Clone, Debug)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    rng: ChaCha8Rng,
}

impl ParamSet {
    pub fn new(seed: u64) -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Allocates a `[rows, cols]` weight initialized from `U[-1/√cols, 1/√cols]`.
    pub fn uniform(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        let bound = 1.0 / (cols.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        self.push(name, Tensor::matrix(rows, cols, data).expect("sized above"))
    }

    /// Allocates a bias of length `len` with the fan-in of its layer.
    pub fn bias(&mut self, name: impl Into<String>, len: usize, fan_in: usize) -> usize {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..len).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.push(name, Tensor::vector(data))
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Places every parameter on `tape` as a differentiable leaf.
    pub fn on_tape<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors.iter().map(|t| tape.var(t.clone())).collect()
    }

    /// Places every parameter on `tape` as a constant.
    pub fn as_constants<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.count() {
            return Err(Error::Format(format!(
                "expected {} parameters, found {}",
                self.count(),
                flat.len()
            )));
        }
        let mut at = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }
}

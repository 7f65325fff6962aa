//! Constructive universal approximators built from invariant scalar
//! products.
//!
//! The fixed frontend forms `X_i + X_j` for every ordered pair and `X_i`
//! itself, takes signed squared invariant norms, and recovers
//! `⟨X_i, X_j⟩ = (q(X_i + X_j) − q(X_i) − q(X_j)) / 2` with a fixed linear
//! map. Squared norms are used because the polarization identity holds for
//! them, not for the norms themselves.

use super::grepsnet::T0Layer;
use super::ops::{power_signs, spread};
use super::{FeatureBatch, Model, ModelSpec, ParamSet};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::groups::{metric_form, Metric};
use crate::repalgebra::TensorType;

/// Fixed-weight map from `n` vectors to their `n²` inner products.
#[derive(Clone, Debug)]
pub struct ScalarFrontend {
    n: usize,
    metric: Metric,
    signs: Option<Vec<f64>>,
    pairs: Tensor,
    combine: Tensor,
}

/// The frontend for `n` vectors under `metric`.
pub fn build_universal_scalar_frontend(n: usize, metric: &Metric) -> Result<ScalarFrontend> {
    if n == 0 {
        return Err(Error::InvalidModel("the frontend needs at least one vector".into()));
    }
    let rows = n * n + n;
    let mut pairs = vec![0.0; rows * n];
    let mut combine = vec![0.0; n * n * rows];
    for i in 0..n {
        for j in 0..n {
            let r = i * n + j;
            pairs[r * n + i] += 1.0;
            pairs[r * n + j] += 1.0;
            combine[r * rows + r] += 0.5;
            combine[r * rows + n * n + i] -= 0.5;
            combine[r * rows + n * n + j] -= 0.5;
        }
        pairs[(n * n + i) * n + i] = 1.0;
    }
    Ok(ScalarFrontend {
        n,
        metric: metric.clone(),
        signs: power_signs(metric, 1)?,
        pairs: Tensor::matrix(rows, n, pairs)?,
        combine: Tensor::matrix(n * n, rows, combine)?,
    })
}

impl ScalarFrontend {
    pub fn inputs(&self) -> usize {
        self.n
    }

    /// `x` is `[n, B·d]`; returns `[n², B]` with row `i·n + j` = `⟨X_i, X_j⟩`.
    pub fn forward<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        let tape = x.tape();
        let d = self.metric.dim();
        let b = x.shape()[1] / d;
        let rows = self.n * self.n + self.n;
        let sums = tape.constant(self.pairs.clone()).matmul(x)?;
        let sq = sums.square().reshape(&[rows, b, d])?;
        let q = match &self.signs {
            None => sq.sum_last()?,
            Some(s) => {
                let pattern: Vec<f64> = s.iter().copied().cycle().take(rows * b * d).collect();
                sq.mul(tape.constant(Tensor::new(vec![rows, b, d], pattern)?))?
                    .sum_last()?
            }
        };
        tape.constant(self.combine.clone()).matmul(q)
    }

    /// Inner products of one sample of `n` stacked vectors.
    pub fn evaluate(&self, xs: &[f64]) -> Result<Vec<f64>> {
        let d = self.metric.dim();
        if xs.len() != self.n * d {
            return Err(shape_err("frontend", format!("{} values for {}x{d}", xs.len(), self.n)));
        }
        let tape = Tape::new();
        let x = tape.constant(Tensor::matrix(self.n, d, xs.to_vec())?);
        let out = self.forward(x)?.value().data().to_vec();
        Ok(out)
    }
}

/// Direct `⟨X_i, X_j⟩` under `metric`, row-major `n × n`.
pub fn inner_products(xs: &[Vec<f64>], metric: &Metric) -> Vec<f64> {
    xs.iter()
        .flat_map(|a| xs.iter().map(move |b| metric.dot(a, b)))
        .collect()
}

/// `Σ_t c_t X_t` for `x = [n, B·d]` and coefficients `[n, B]`.
pub fn combine_vectors<'t>(x: Var<'t>, coeffs: Var<'t>, d: usize) -> Result<Var<'t>> {
    let n = x.shape()[0];
    let ones = x.tape().constant(Tensor::full(&[1, n], 1.0));
    ones.matmul(x.mul(spread(coeffs, d)?)?)
}

fn single_vector_input(spec: &ModelSpec) -> Result<usize> {
    match spec.input.terms() {
        [t] if t.order == 1 => Ok(t.multiplicity),
        _ => Err(Error::InvalidModel(format!(
            "universal models expect n*T1 input, got {}",
            spec.input
        ))),
    }
}

/// Invariant model: fixed frontend, then a trainable scalar network.
#[derive(Clone, Debug)]
pub struct UniversalScalar {
    spec: ModelSpec,
    params: ParamSet,
    frontend: ScalarFrontend,
    mlp: T0Layer,
}

impl UniversalScalar {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let n = single_vector_input(&spec)?;
        if spec.output != TensorType::single(1, 0) {
            return Err(Error::InvalidModel("universal scalar model outputs T0".into()));
        }
        let frontend = build_universal_scalar_frontend(n, &metric_form(&spec.group))?;
        let mut params = ParamSet::new(seed);
        let c = spec.channels;
        let mlp = T0Layer::new(&mut params, "mlp", &[n * n, c, c, 1]);
        Ok(Self {
            spec,
            params,
            frontend,
            mlp,
        })
    }

    pub fn frontend(&self) -> &ScalarFrontend {
        &self.frontend
    }
}

impl Model for UniversalScalar {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward<'t>(&self, tape: &'t Tape, p: &[Var<'t>], x: &FeatureBatch) -> Result<Vec<Var<'t>>> {
        let s = self.frontend.forward(tape.constant(x.blocks()[0].clone()))?;
        Ok(vec![self.mlp.forward(p, s)?])
    }
}

/// Equivariant vector model `Σ_t X_t · H0_t / ‖X_t‖`, where a trainable
/// scalar network maps the inner products to `H0`.
#[derive(Clone, Debug)]
pub struct UniversalVector {
    spec: ModelSpec,
    params: ParamSet,
    frontend: ScalarFrontend,
    signs: Option<Vec<f64>>,
    mlp: T0Layer,
}

/// Builds the vector model for `n` inputs in `ℝ^d` (Euclidean).
pub fn build_universal_vector_model(spec: ModelSpec, seed: u64) -> Result<UniversalVector> {
    UniversalVector::new(spec, seed)
}

impl UniversalVector {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let n = single_vector_input(&spec)?;
        if spec.output != TensorType::single(1, 1) {
            return Err(Error::InvalidModel("universal vector model outputs T1".into()));
        }
        let metric = metric_form(&spec.group);
        let frontend = build_universal_scalar_frontend(n, &metric)?;
        let mut params = ParamSet::new(seed);
        let c = spec.channels;
        let mlp = T0Layer::new(&mut params, "mlp", &[n * n, c, c, n]);
        Ok(Self {
            signs: power_signs(&metric, 1)?,
            spec,
            params,
            frontend,
            mlp,
        })
    }
}

impl Model for UniversalVector {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward<'t>(&self, tape: &'t Tape, p: &[Var<'t>], x: &FeatureBatch) -> Result<Vec<Var<'t>>> {
        let d = x.dim();
        let xv = tape.constant(x.blocks()[0].clone());
        let h0 = self.mlp.forward(p, self.frontend.forward(xv)?)?;
        let n = super::ops::norms(xv, d, self.signs.as_deref())?;
        Ok(vec![combine_vectors(xv, h0.div(n)?, d)?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_pair() {
        let f = build_universal_scalar_frontend(2, &Metric::euclidean(2)).unwrap();
        let ip = f.evaluate(&[1.0, 0.0, 0.0, 1.0]).unwrap();
        for (a, b) in ip.iter().zip([1.0, 0.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dot_product_example() {
        let f = build_universal_scalar_frontend(2, &Metric::euclidean(5)).unwrap();
        let ip = f
            .evaluate(&[1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0])
            .unwrap();
        assert!((ip[1] - 1.0).abs() < 1e-12 && (ip[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn selector_coefficients_return_first_vector() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 6, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, -1.0, 0.5, 2.0, 0.0, 1.0, 3.0]).unwrap());
        let c = tape.constant(Tensor::matrix(2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap());
        let out = combine_vectors(x, c, 3).unwrap();
        assert_eq!(out.value().data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }
}

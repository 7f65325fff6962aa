use super::grepsnet::T0Layer;
use super::ops::{from_feature_rows, to_feature_rows};
use super::{FeatureBatch, Model, ModelSpec, ParamSet};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::repalgebra::TensorType;
use crate::tasks::{Task, ROTPAT_FEATURES};

/// Plain ReLU network on the flattened payload, `[in, w, …, w, out]` with
/// `spec.layers` hidden layers of width `spec.channels`.
///
/// On `rotpat` it reads only the first group slice, so it sees the same
/// `ROTPAT_FEATURES` inputs as the base network of the regular wrapper.
#[derive(Clone, Debug)]
pub struct Mlp {
    spec: ModelSpec,
    params: ParamSet,
    net: T0Layer,
    in_dim: usize,
}

/// Number of parameters of `[n_in, w × layers, n_out]` with biases.
pub fn mlp_param_count(n_in: usize, n_out: usize, layers: usize, w: usize) -> usize {
    n_in * w + w + layers.saturating_sub(1) * (w * w + w) + w * n_out + n_out
}

/// Hidden width whose parameter count is closest to `budget`.
pub fn mlp_width_for_budget(n_in: usize, n_out: usize, layers: usize, budget: usize) -> usize {
    (1..=budget.max(1))
        .take_while(|&w| mlp_param_count(n_in, n_out, layers, w.saturating_sub(1)) <= budget)
        .min_by_key(|&w| mlp_param_count(n_in, n_out, layers, w).abs_diff(budget))
        .unwrap_or(1)
}

impl Mlp {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        if spec.layers == 0 {
            return Err(Error::InvalidModel("an MLP needs at least one hidden layer".into()));
        }
        let d = spec.group.dim();
        let in_dim = match spec.task {
            Task::RotPat => ROTPAT_FEATURES,
            _ => spec.input.payload_len(d),
        };
        let out_dim = spec.output.payload_len(d);
        let mut dims = vec![in_dim];
        dims.extend(std::iter::repeat_n(spec.channels, spec.layers));
        dims.push(out_dim);
        let mut params = ParamSet::new(seed);
        let net = T0Layer::new(&mut params, "mlp", &dims);
        Ok(Self {
            spec,
            params,
            net,
            in_dim,
        })
    }
}

/// Stacks every block of `x` into a `[payload, B]` constant.
pub(crate) fn flat_rows<'t>(tape: &'t Tape, x: &FeatureBatch) -> Result<Var<'t>> {
    let rows = x
        .ty()
        .terms()
        .iter()
        .zip(x.blocks())
        .map(|(t, b)| {
            let v = tape.constant(b.clone());
            match t.order {
                0 => Ok(v),
                m => to_feature_rows(v, x.dim().pow(m as u32)),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Var::concat(&rows)
}

/// Splits `[payload, B]` rows into output blocks of type `ty`.
pub(crate) fn unflatten_rows<'t>(y: Var<'t>, ty: &TensorType, d: usize) -> Result<Vec<Var<'t>>> {
    let mut at = 0;
    ty.terms()
        .iter()
        .map(|t| {
            let k = d.pow(t.order as u32);
            let rows = t.multiplicity * k;
            let part = y.slice_rows(at, at + rows)?;
            at += rows;
            if t.order == 0 {
                Ok(part)
            } else {
                from_feature_rows(part, t.multiplicity, k)
            }
        })
        .collect()
}

impl Model for Mlp {
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
        let mut h = flat_rows(tape, x)?;
        if h.shape()[0] != self.in_dim {
            h = h.slice_rows(0, self.in_dim)?;
        }
        let y = self.net.forward(p, h)?;
        unflatten_rows(y, &self.spec.output, x.dim())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_width_is_closest() {
        let w = mlp_width_for_budget(10, 1, 3, 30_300);
        let best = mlp_param_count(10, 1, 3, w).abs_diff(30_300);
        for other in [w - 1, w + 1] {
            assert!(mlp_param_count(10, 1, 3, other).abs_diff(30_300) >= best);
        }
    }
}

//! Regular-representation path for finite cyclic groups.
//!
//! The group dimension is treated like a batch dimension: a base network
//! runs on every slice with shared weights, so permuting slices permutes
//! outputs exactly. Invariant outputs come from averaging with group
//! inverses.

use super::grepsnet::T0Layer;
use super::{FeatureBatch, Model, ModelSpec, ParamSet};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::repalgebra::{regular_lift, RegularFeature};
use crate::tasks::ROTPAT_FEATURES;

/// How `C_n` acts on the per-slice payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PayloadAction {
    /// Payload values are invariant.
    Trivial,
    /// The payload is `n` equal blocks that the generator shifts cyclically.
    CyclicBlocks,
}

/// Applies `base` to every `batch × features` slab of `x`.
///
/// `base` receives the slab and the batch size and returns
/// `batch × out_features` values.
pub fn regular_wrap_forward<F>(base: F, x: &RegularFeature) -> Result<RegularFeature>
where
    F: Fn(&[f64], usize) -> Result<Vec<f64>>,
{
    let mut payload = Vec::new();
    let mut out_features = 0;
    for s in 0..x.slices() {
        let y = base(x.slice(s), x.batch())?;
        if x.batch() > 0 {
            out_features = y.len() / x.batch();
        }
        payload.extend(y);
    }
    RegularFeature::new(x.group_size(), x.order(), x.batch(), out_features, payload)
}

/// Index `(b + shift) mod n` block move applied to one feature vector.
fn shift_blocks(v: &[f64], n: usize, shift: usize) -> Vec<f64> {
    let w = v.len() / n;
    let mut out = vec![0.0; v.len()];
    for b in 0..n {
        let t = (b + shift) % n;
        out[t * w..(t + 1) * w].copy_from_slice(&v[b * w..(b + 1) * w]);
    }
    out
}

/// `(1/|G|^i) Σ_g ρ(g⁻¹) y_g` over the group dimension; returns
/// `batch × features`.
///
/// With a trivial payload action this is the plain mean over every slice
/// (any order). Cyclic payload blocks are supported for order 1.
pub fn equitune_average(x: &RegularFeature, action: PayloadAction) -> Result<Vec<f64>> {
    let n = x.group_size();
    let f = x.features();
    if action == PayloadAction::CyclicBlocks && (x.order() != 1 || f % n != 0) {
        return Err(Error::InvalidType(format!(
            "cyclic payload averaging needs order 1 and features divisible by {n}"
        )));
    }
    let mut out = vec![0.0; x.batch() * f];
    for s in 0..x.slices() {
        let slab = x.slice(s);
        for b in 0..x.batch() {
            let v = &slab[b * f..(b + 1) * f];
            let dst = &mut out[b * f..(b + 1) * f];
            match action {
                PayloadAction::Trivial => dst.iter_mut().zip(v).for_each(|(o, a)| *o += a),
                PayloadAction::CyclicBlocks => {
                    let back = shift_blocks(v, n, (n - s % n) % n);
                    dst.iter_mut().zip(&back).for_each(|(o, a)| *o += a);
                }
            }
        }
    }
    let scale = 1.0 / x.slices() as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

/// Regular action of `C_n` element `h` on an order-1 feature: slice `g`
/// moves to `g + h` and, for cyclic payloads, its blocks shift by `h`.
pub fn regular_action(x: &RegularFeature, h: usize, action: PayloadAction) -> Result<RegularFeature> {
    let shifted = x.cyclic_shift(h)?;
    match action {
        PayloadAction::Trivial => Ok(shifted),
        PayloadAction::CyclicBlocks => {
            let n = x.group_size();
            let f = x.features();
            let payload = shifted
                .payload()
                .chunks(f)
                .flat_map(|v| shift_blocks(v, n, h % n))
                .collect();
            RegularFeature::new(n, x.order(), x.batch(), f, payload)
        }
    }
}

/// Classifier on `|G|` slices: optional order-2 lift, a shared ReLU base
/// network per slice, then invariant averaging over the group dimension.
#[derive(Clone, Debug)]
pub struct RegularNet {
    spec: ModelSpec,
    params: ParamSet,
    base: T0Layer,
    features: usize,
    group_size: usize,
}

impl RegularNet {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let group_size = spec
            .group
            .order()
            .ok_or_else(|| Error::InvalidModel("regular models need a finite group".into()))?;
        let features = ROTPAT_FEATURES;
        if spec.input.payload_len(1) != group_size * features {
            return Err(Error::InvalidModel(format!(
                "input {} does not hold {group_size} slices of {features}",
                spec.input
            )));
        }
        let classes = spec.output.payload_len(1);
        let c = spec.channels;
        let mut params = ParamSet::new(seed);
        let base = T0Layer::new(&mut params, "base", &[features, c, c, classes]);
        Ok(Self {
            spec,
            params,
            base,
            features,
            group_size,
        })
    }

    fn slices<'t>(&self, tape: &'t Tape, x: &FeatureBatch) -> Result<Vec<Var<'t>>> {
        let xv = tape.constant(x.blocks()[0].clone());
        let f = self.features;
        let order1: Vec<Var<'t>> = (0..self.group_size)
            .map(|s| xv.slice_rows(s * f, (s + 1) * f))
            .collect::<Result<_>>()?;
        if !self.spec.lift {
            return Ok(order1);
        }
        let mut order2 = Vec::with_capacity(order1.len() * order1.len());
        for a in &order1 {
            for b in &order1 {
                order2.push(a.mul(*b)?);
            }
        }
        Ok(order2)
    }

    /// Per-slice base outputs before averaging, as a regular feature of
    /// order 1 (or 2 when lifting).
    pub fn slice_outputs(&self, x: &RegularFeature) -> Result<RegularFeature> {
        let lifted;
        let x = if self.spec.lift {
            lifted = regular_lift(x)?;
            &lifted
        } else {
            x
        };
        let f = self.features;
        regular_wrap_forward(|slab, batch| self.base_values(slab, batch, f), x)
    }

    /// The base network on a `batch × features` slab.
    pub fn base_values(&self, slab: &[f64], batch: usize, features: usize) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let p = self.params.as_constants(&tape);
        let mut t = vec![0.0; slab.len()];
        for b in 0..batch {
            for j in 0..features {
                t[j * batch + b] = slab[b * features + j];
            }
        }
        let x = tape.constant(Tensor::matrix(features, batch, t)?);
        let y = self.base.forward(&p, x)?;
        let y = y.value();
        let k = y.rows();
        let mut out = vec![0.0; batch * k];
        for r in 0..k {
            for b in 0..batch {
                out[b * k + r] = y.data()[r * batch + b];
            }
        }
        Ok(out)
    }
}

impl Model for RegularNet {
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
        let slices = self.slices(tape, x)?;
        let n = slices.len() as f64;
        let mut acc: Option<Var<'t>> = None;
        for s in slices {
            let y = self.base.forward(p, s)?;
            acc = Some(match acc {
                Some(a) => a.add(y)?,
                None => y,
            });
        }
        Ok(vec![acc.expect("at least one slice").scale(1.0 / n)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feature(n: usize, batch: usize, f: usize) -> RegularFeature {
        let payload = (0..n * batch * f).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        RegularFeature::new(n, 1, batch, f, payload).unwrap()
    }

    #[test]
    fn constant_slices_average_to_constant() {
        let x = RegularFeature::new(4, 1, 1, 2, vec![3.0; 8]).unwrap();
        assert_eq!(equitune_average(&x, PayloadAction::Trivial).unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn equitune_invariant_under_all_shifts() {
        for action in [PayloadAction::Trivial, PayloadAction::CyclicBlocks] {
            let x = feature(4, 3, 8);
            let base = equitune_average(&x, action).unwrap();
            for h in 0..4 {
                let y = equitune_average(&regular_action(&x, h, action).unwrap(), action).unwrap();
                for (a, b) in base.iter().zip(&y) {
                    assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_element_group_is_plain_mean() {
        let x = feature(1, 2, 3);
        assert_eq!(equitune_average(&x, PayloadAction::Trivial).unwrap(), x.payload());
    }
}

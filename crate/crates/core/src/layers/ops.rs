//! Differentiable building blocks shared by the model builders.
//!
//! Order-`m` features are `[c, B·k]` vars with `k = d^m` (see
//! [`FeatureBatch`](super::FeatureBatch)); invariant scalars are `[c, B]`.

use std::rc::Rc;

use crate::autodiff::Var;
use crate::error::{shape_err, Error, Result};
use crate::groups::Metric;
use crate::repalgebra::{invariant_norm, NORM_EPS};

/// Diagonal of `η^{⊗m}`, or `None` when every entry is `+1`.
pub fn power_signs(metric: &Metric, order: usize) -> Result<Option<Vec<f64>>> {
    if metric.is_euclidean() || order == 0 {
        return Ok(None);
    }
    let diag = metric
        .diagonal()
        .ok_or_else(|| Error::InvalidModel("norm layers need a diagonal metric".into()))?;
    let mut signs = vec![1.0];
    for _ in 0..order {
        signs = signs
            .iter()
            .flat_map(|s| diag.iter().map(move |e| s * e))
            .collect();
    }
    Ok(Some(signs))
}

/// Per-channel invariant norms `sqrt(|xᵀη^{⊗m}x| + ε)` of an order-`m`
/// block, shape `[c, B]`.
pub fn norms<'t>(x: Var<'t>, k: usize, signs: Option<&[f64]>) -> Result<Var<'t>> {
    x.group_norms(k, signs.map(Rc::from), NORM_EPS)
}

/// Repeats `[c, B]` scalars across the `k` components of each sample.
pub fn spread<'t>(s: Var<'t>, k: usize) -> Result<Var<'t>> {
    let shape = s.shape();
    s.expand_last(k).reshape(&[shape[0], shape[1] * k])
}

/// `H · Y0 / inv(H)` per channel.
pub fn mix<'t>(h: Var<'t>, y0: Var<'t>, k: usize, signs: Option<&[f64]>) -> Result<Var<'t>> {
    if h.shape()[0] != y0.shape()[0] {
        return Err(shape_err(
            "mix",
            format!("{} channels against {} scalars", h.shape()[0], y0.shape()[0]),
        ));
    }
    if h.shape()[1] != k * y0.shape()[1] {
        return Err(shape_err("mix", format!("{:?} against {:?} in groups of {k}", h.shape(), y0.shape())));
    }
    h.group_mix(y0, signs.map(Rc::from), NORM_EPS)
}

/// The remix used by the invariant task models: every channel is scaled by
/// its own invariant norm, `H · inv(H)`.
pub fn remix<'t>(h: Var<'t>, k: usize, signs: Option<&[f64]>) -> Result<Var<'t>> {
    let n = norms(h, k, signs)?;
    h.scale_groups(n)
}

/// Channel-wise Kronecker product of an order-`a` and an order-`b` block
/// with equal channel counts: `[c, B·ka] ⊗ [c, B·kb] → [c, B·ka·kb]`.
pub fn channel_kron<'t>(x: Var<'t>, ka: usize, y: Var<'t>, kb: usize) -> Result<Var<'t>> {
    let (xs, ys) = (x.shape(), y.shape());
    if xs[0] != ys[0] || xs[1] / ka != ys[1] / kb {
        return Err(shape_err("channel_kron", format!("{xs:?} vs {ys:?}")));
    }
    let (c, b) = (xs[0], xs[1] / ka);
    let xr = x.reshape(&[c * b, ka])?;
    let yr = y.reshape(&[c * b, kb])?;
    xr.outer(yr)?.reshape(&[c, b * ka * kb])
}

/// Embeds `[c, B]` scalars as `s·I_d` order-2 blocks `[c, B·d²]`.
pub fn scalar_identity<'t>(s: Var<'t>, d: usize) -> Result<Var<'t>> {
    let b = s.shape()[1];
    let rep: Rc<[usize]> = (0..b * d).map(|i| i / d).collect();
    let diag: Rc<[usize]> = (0..b * d).map(|i| (i / d) * d * d + (i % d) * (d + 1)).collect();
    s.gather_cols(rep)?.scatter_cols(diag, b * d * d)
}

/// `[c, B·k]` sample-major block → `[c·k, B]` with row `ch·k + t`.
pub fn to_feature_rows<'t>(x: Var<'t>, k: usize) -> Result<Var<'t>> {
    let s = x.shape();
    let (c, b) = (s[0], s[1] / k);
    let idx: Rc<[usize]> = (0..k * b).map(|i| (i % b) * k + i / b).collect();
    x.gather_cols(idx)?.reshape(&[c * k, b])
}

/// Inverse of [`to_feature_rows`].
pub fn from_feature_rows<'t>(x: Var<'t>, c: usize, k: usize) -> Result<Var<'t>> {
    let b = x.shape()[1];
    let idx: Rc<[usize]> = (0..b * k).map(|i| (i % k) * b + i / k).collect();
    x.reshape(&[c, k * b])?.gather_cols(idx)
}

/// Adds a `[n]` bias to every column of `[n, B]`.
pub fn add_bias<'t>(x: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
    let b = x.shape()[1];
    x.add(bias.expand_last(b))
}

/// Non-differentiable reference for [`mix`] on one sample: `h` holds `c`
/// order-`m` channels of length `d^m`, `y0` one scalar per channel.
pub fn mix_values(h: &[f64], y0: &[f64], order: usize, metric: &Metric) -> Result<Vec<f64>> {
    let k = metric.dim().pow(order as u32);
    if h.len() != y0.len() * k {
        return Err(shape_err(
            "mix",
            format!("{} values for {} channels of length {k}", h.len(), y0.len()),
        ));
    }
    Ok(h.chunks(k)
        .zip(y0)
        .flat_map(|(ch, y)| {
            let s = y / invariant_norm(ch, order, metric);
            ch.iter().map(move |v| v * s)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};

    #[test]
    fn mix_scales_to_target_norm() {
        let m = Metric::euclidean(2);
        let out = mix_values(&[3.0, 4.0], &[10.0], 1, &m).unwrap();
        assert!((out[0] - 6.0).abs() < 1e-12 && (out[1] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn tape_mix_matches_reference() {
        let tape = Tape::new();
        let m = Metric::minkowski(4);
        let signs = power_signs(&m, 1).unwrap();
        let hv = [2.0, 1.0, 0.0, 0.0, 1.0, 3.0, -1.0, 0.5];
        let h = tape.constant(Tensor::matrix(2, 4, hv.to_vec()).unwrap());
        let y = tape.constant(Tensor::matrix(2, 1, vec![1.5, -2.0]).unwrap());
        let out = mix(h, y, 4, signs.as_deref()).unwrap();
        let want = mix_values(&hv, &[1.5, -2.0], 1, &m).unwrap();
        for (a, b) in out.value().data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_identity_embeds_diagonal() {
        let tape = Tape::new();
        let s = tape.constant(Tensor::matrix(1, 2, vec![2.0, -1.0]).unwrap());
        let out = scalar_identity(s, 3).unwrap();
        let v = out.value();
        assert_eq!(&v.data()[..9], &[2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0]);
        assert_eq!(&v.data()[9..], &[-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn feature_rows_roundtrip() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 6, (0..12).map(f64::from).collect()).unwrap());
        let rows = to_feature_rows(x, 3).unwrap();
        assert_eq!(rows.shape(), vec![6, 2]);
        assert_eq!(&rows.value().data()[..4], &[0.0, 3.0, 1.0, 4.0]);
        let back = from_feature_rows(rows, 2, 3).unwrap();
        assert_eq!(*back.value(), *x.value());
    }
}

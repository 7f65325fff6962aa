//! Numerical checks shared by tests, the CLI and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{mse_loss, FeatureBatch, Model};
use crate::autodiff::{Tape, Tensor};
use crate::error::Result;
use crate::groups::{sample_element_with, GroupFamily};
use crate::repalgebra::TensorType;
use crate::tasks::Task;

/// Standard normal batch of type `ty`.
pub fn random_batch(ty: &TensorType, d: usize, batch: usize, rng: &mut ChaCha8Rng) -> FeatureBatch {
    let blocks = ty
        .terms()
        .iter()
        .map(|t| {
            let cols = batch * d.pow(t.order as u32);
            let data = (0..t.multiplicity * cols).map(|_| rng.sample(StandardNormal)).collect();
            Tensor::matrix(t.multiplicity, cols, data).expect("sized above")
        })
        .collect();
    FeatureBatch::new(ty.clone(), d, batch, blocks).expect("consistent batch")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuditReport {
    pub trials: usize,
    pub max_violation: f64,
    pub mean_violation: f64,
}

/// Moves group slice `s` of a slice-major `T0` block to `s + h`.
fn shift_slices(x: &FeatureBatch, n: usize, h: usize) -> FeatureBatch {
    let b = &x.blocks()[0];
    let rows = b.rows();
    let f = rows / n;
    let cols = b.cols();
    let mut data = vec![0.0; b.len()];
    for s in 0..n {
        let t = (s + h) % n;
        data[t * f * cols..(t + 1) * f * cols].copy_from_slice(&b.data()[s * f * cols..(s + 1) * f * cols]);
    }
    let block = Tensor::new(b.shape().to_vec(), data).expect("same shape");
    FeatureBatch::new(x.ty().clone(), x.dim(), x.batch(), vec![block]).expect("same type")
}

/// Relative violation `‖f(g·x) − g·f(x)‖ / (1 + ‖f(x)‖)` over `trials`
/// random inputs (batches of `batch`) and group elements.
///
/// For the regular path the group acts by cyclically shifting slices and
/// the output must be invariant.
pub fn audit_equivariance(model: &dyn Model, trials: usize, batch: usize, seed: u64) -> Result<AuditReport> {
    let spec = model.spec();
    let d = spec.group.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_v: f64 = 0.0;
    let mut sum = 0.0;
    for _ in 0..trials {
        let x = random_batch(&spec.input, d, batch, &mut rng);
        let fx = model.predict(&x)?;
        let (fgx, gfx) = if spec.task == Task::RotPat && spec.group.family() == GroupFamily::Cyclic {
            let n = spec.group.order().unwrap_or(1);
            let h = rng.random_range(0..n);
            (model.predict(&shift_slices(&x, n, h))?, fx.clone())
        } else {
            let g = sample_element_with(&spec.group, &mut rng);
            (model.predict(&x.transform(&g))?, fx.transform(&g))
        };
        let diff: f64 = fgx
            .flatten()
            .iter()
            .zip(gfx.flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let v = diff / (1.0 + fx.norm());
        max_v = max_v.max(v);
        sum += v;
    }
    Ok(AuditReport {
        trials,
        max_violation: max_v,
        mean_violation: if trials > 0 { sum / trials as f64 } else { 0.0 },
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub params: usize,
    pub relative_error: f64,
}

/// Compares reverse-mode gradients of the MSE loss against central
/// differences with step `h` over every parameter.
pub fn gradient_check(model: &mut dyn Model, x: &FeatureBatch, y: &FeatureBatch, h: f64) -> Result<GradCheck> {
    let loss_at = |m: &dyn Model| -> Result<f64> {
        let tape = Tape::new();
        let p = m.params().as_constants(&tape);
        let out = m.forward(&tape, &p, x)?;
        Ok(mse_loss(&tape, &out, y)?.item())
    };
    let analytic: Vec<f64> = {
        let tape = Tape::new();
        let p = model.params().on_tape(&tape);
        let out = model.forward(&tape, &p, x)?;
        let loss = mse_loss(&tape, &out, y)?;
        tape.backward(loss)?;
        p.iter()
            .flat_map(|v| {
                let len = v.value().len();
                v.grad().map(Tensor::into_data).unwrap_or_else(|| vec![0.0; len])
            })
            .collect()
    };
    let base = model.params().flatten();
    let mut numeric = Vec::with_capacity(base.len());
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + h;
        model.params_mut().load_flat(&probe)?;
        let up = loss_at(model)?;
        probe[i] = base[i] - h;
        model.params_mut().load_flat(&probe)?;
        let down = loss_at(model)?;
        probe[i] = base[i];
        numeric.push((up - down) / (2.0 * h));
    }
    model.params_mut().load_flat(&base)?;
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    let scale = norm(&analytic).max(norm(&numeric)).max(f64::MIN_POSITIVE);
    Ok(GradCheck {
        params: base.len(),
        relative_error: norm(&diff) / scale,
    })
}

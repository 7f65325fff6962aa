use super::Tensor;
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd(momentum: f64) -> Self {
        Self::Sgd { momentum }
    }

    pub fn adam() -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Multiplies the learning rate by `gamma` every `step_size` epochs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLr {
    pub step_size: usize,
    pub gamma: f64,
}

impl StepLr {
    pub fn lr_at(&self, lr0: f64, epoch: usize) -> f64 {
        lr0 * self.gamma.powi((epoch / self.step_size.max(1)) as i32)
    }
}

/// First-order optimizer with per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    base_lr: f64,
    lr: f64,
    scheduler: Option<StepLr>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, scheduler: Option<StepLr>) -> Self {
        Self {
            kind,
            base_lr: lr,
            lr,
            scheduler,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Sets the learning rate for a zero-based epoch index.
    pub fn set_epoch(&mut self, epoch: usize) {
        self.lr = match self.scheduler {
            Some(s) => s.lr_at(self.base_lr, epoch),
            None => self.base_lr,
        };
    }

    /// Applies one update. `grads[i]` pairs with `params[i]`; a missing
    /// gradient counts as zero.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(shape_err(
                "optimizer",
                format!("{} params but {} grads", params.len(), grads.len()),
            ));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            if matches!(self.kind, OptimizerKind::Adam { .. }) {
                self.v = self.m.clone();
            }
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if self.m[i].len() != p.len() || g.as_ref().is_some_and(|g| g.len() != p.len()) {
                return Err(shape_err("optimizer", format!("buffer {i} does not match its parameter")));
            }
        }
        self.t += 1;
        let lr = self.lr;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let (p, g) = (p.data_mut(), g.data());
            match self.kind {
                OptimizerKind::Sgd { momentum } => {
                    let buf = &mut self.m[i];
                    for j in 0..p.len() {
                        buf[j] = momentum * buf[j] + g[j];
                        p[j] -= lr * buf[j];
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(self.t);
                    let c2 = 1.0 - beta2.powi(self.t);
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for j in 0..p.len() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                        p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_plain_step() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut opt = Optimizer::new(OptimizerKind::sgd(0.0), 0.1, None);
        opt.step(&mut p, &[Some(Tensor::scalar(2.0))]).unwrap();
        assert!((p[0].item() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut p = vec![Tensor::scalar(0.0)];
        let mut opt = Optimizer::new(OptimizerKind::sgd(0.5), 1.0, None);
        let g = [Some(Tensor::scalar(1.0))];
        opt.step(&mut p, &g).unwrap();
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p[0].item(), -2.5);
    }

    #[test]
    fn adam_first_step_is_lr_against_gradient() {
        for g in [-3.0, 0.02, 50.0] {
            let mut p = vec![Tensor::scalar(1.0)];
            let mut opt = Optimizer::new(OptimizerKind::adam(), 1e-3, None);
            opt.step(&mut p, &[Some(Tensor::scalar(g))]).unwrap();
            let moved = p[0].item() - 1.0;
            assert!(moved * g < 0.0);
            assert!((moved.abs() - 1e-3).abs() < 1e-8);
        }
    }

    #[test]
    fn step_lr_decays_at_step_size() {
        let mut opt = Optimizer::new(OptimizerKind::sgd(0.0), 0.5, Some(StepLr { step_size: 7, gamma: 0.1 }));
        opt.set_epoch(6);
        assert_eq!(opt.lr(), 0.5);
        opt.set_epoch(7);
        assert!((opt.lr() - 0.05).abs() < 1e-15);
        opt.set_epoch(14);
        assert!((opt.lr() - 0.005).abs() < 1e-15);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut opt = Optimizer::new(OptimizerKind::adam(), 1e-3, None);
        assert!(opt.step(&mut p, &[]).is_err());
    }
}

use std::rc::Rc;

use grepsnet::autodiff::{Optimizer, OptimizerKind, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Relative error between the tape gradient of `f` at `x` and central
/// differences.
fn check<F>(x: &Tensor, f: F) -> f64
where
    F: for<'t> Fn(Var<'t>) -> Var<'t>,
{
    let eval = |t: &Tensor| {
        let tape = Tape::new();
        f(tape.constant(t.clone())).item()
    };
    let tape = Tape::new();
    let v = tape.var(x.clone());
    let out = f(v);
    tape.backward(out).unwrap();
    let analytic = v.grad().unwrap().into_data();
    let h = 1e-6;
    let mut probe = x.clone();
    let mut num = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let base = probe.data()[i];
        probe.data_mut()[i] = base + h;
        let up = eval(&probe);
        probe.data_mut()[i] = base - h;
        let down = eval(&probe);
        probe.data_mut()[i] = base;
        num.push((up - down) / (2.0 * h));
    }
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&num).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(&analytic).max(norm(&num)).max(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul_and_elementwise(seed in any::<u64>(), m in 1usize..5, k in 1usize..5, n in 1usize..5) {
        let x = random(seed, &[m, k]);
        let w = random(seed ^ 1, &[k, n]);
        let e = check(&x, |v| {
            let w = v.tape().constant(w.clone());
            v.matmul(w).unwrap().sin().mul(v.matmul(w).unwrap()).unwrap().square().sum()
        });
        prop_assert!(e < 1e-5, "{e}");
    }

    #[test]
    fn group_norms_and_scaling(seed in any::<u64>(), c in 1usize..4, b in 1usize..4, k in 1usize..6, minkowski in any::<bool>()) {
        let x = random(seed, &[c, b * k]);
        let signs: Option<Rc<[f64]>> = minkowski.then(|| (0..k).map(|i| if i == 0 { 1.0 } else { -1.0 }).collect());
        let e = check(&x, |v| {
            let n = v.group_norms(k, signs.clone(), 1e-12).unwrap();
            v.scale_groups(n.sin()).unwrap().square().sum().add(n.sum()).unwrap()
        });
        prop_assert!(e < 1e-5, "{e}");
        let e = check(&x, |v| {
            let y = v.group_norms(k, None, 1e-12).unwrap().sin();
            v.group_mix(y, signs.clone(), 1e-12).unwrap().sin().sum()
        });
        prop_assert!(e < 1e-5, "{e}");
    }

    #[test]
    fn gather_scatter_and_columns(seed in any::<u64>(), c in 1usize..4, n in 2usize..6) {
        let x = random(seed, &[c, n]);
        let idx: Rc<[usize]> = (0..2 * n).map(|i| (i * 7 + 3) % n).collect();
        let s = random(seed ^ 2, &[1, 2 * n]);
        let e = check(&x, |v| {
            let g = v.gather_cols(idx.clone()).unwrap();
            let g = g.scale_cols(v.tape().constant(s.clone())).unwrap();
            g.scatter_cols(idx.clone(), n).unwrap().mul(v).unwrap().sum()
        });
        prop_assert!(e < 1e-5, "{e}");
        let rev: Rc<[usize]> = idx.iter().rev().copied().collect();
        let e = check(&x, |v| {
            let y = v.square();
            v.gather_add(idx.clone(), y, rev.clone()).unwrap().sin().sum()
        });
        prop_assert!(e < 1e-5, "{e}");
        let sc = random(seed ^ 3, &[1, n]);
        let e = check(&x, |v| {
            let s = v.slice_rows(0, 1).unwrap().add(v.tape().constant(sc.clone())).unwrap();
            v.square().add_scaled_cols(v.sin(), s).unwrap().sum()
        });
        prop_assert!(e < 1e-5, "{e}");
    }

    #[test]
    fn shape_ops(seed in any::<u64>(), r in 2usize..5, c in 1usize..4) {
        let x = random(seed, &[r, c]);
        let e = check(&x, |v| {
            let top = v.slice_rows(0, 1).unwrap();
            let cat = Var::concat(&[v, top]).unwrap();
            let o = cat.reshape(&[1, (r + 1) * c]).unwrap().relu().abs().add_scalar(0.5).sqrt();
            o.outer(top).unwrap().mean()
        });
        prop_assert!(e < 1e-5, "{e}");
    }
}

#[test]
fn shape_mismatch_is_an_error() {
    let tape = Tape::new();
    let a = tape.var(Tensor::zeros(&[2, 3]));
    let b = tape.var(Tensor::zeros(&[2, 2]));
    assert!(a.add(b).is_err());
    assert!(a.matmul(a).is_err());
}

#[test]
fn adam_minimises_a_quadratic() {
    let mut params = vec![Tensor::vector(vec![3.0, -2.0])];
    let mut opt = Optimizer::new(OptimizerKind::adam(), 0.1, None);
    for _ in 0..500 {
        let tape = Tape::new();
        let p = tape.var(params[0].clone());
        let loss = p.square().sum();
        tape.backward(loss).unwrap();
        let g = vec![p.grad()];
        opt.step(&mut params, &g).unwrap();
    }
    assert!(params[0].norm() < 1e-2, "{:?}", params[0]);
}

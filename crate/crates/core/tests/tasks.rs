use grepsnet::groups::{sample_element, GroupSpec};
use grepsnet::repalgebra::apply_power;
use grepsnet::tasks::{
    conjugate, generate, inertia_matrix, matrix_element, o5_target, simulate, GenOptions, Task,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn points<const D: usize>(seed: u64, n: usize) -> Vec<[f64; D]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect()
}

fn rotate<const D: usize>(g: &nalgebra::DMatrix<f64>, x: &[f64; D]) -> [f64; D] {
    let v = apply_power(g, 1, x);
    std::array::from_fn(|i| v[i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn o5_target_is_invariant(seed in any::<u64>()) {
        let g = sample_element(&GroupSpec::orthogonal(5).unwrap(), seed);
        let p = points::<5>(seed, 2);
        let before = o5_target(&p[0], &p[1]);
        let after = o5_target(&rotate(g.matrix(), &p[0]), &rotate(g.matrix(), &p[1]));
        prop_assert!((before - after).abs() < 1e-9);
    }

    #[test]
    fn inertia_is_equivariant(seed in any::<u64>()) {
        let g = sample_element(&GroupSpec::orthogonal(3).unwrap(), seed);
        let pos = points::<3>(seed, 5);
        let masses: Vec<f64> = (0..5).map(|i| 0.5 + i as f64 * 0.3).collect();
        let moved: Vec<[f64; 3]> = pos.iter().map(|x| rotate(g.matrix(), x)).collect();
        let lhs = inertia_matrix(&masses, &moved);
        let rhs = conjugate(g.matrix(), &inertia_matrix(&masses, &pos));
        for (a, b) in lhs.iter().zip(&rhs) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn matrix_element_is_lorentz_invariant(seed in any::<u64>()) {
        let data = generate(Task::Scattering, 1, seed, &GenOptions::default()).unwrap();
        let flat = data.inputs[0].flatten();
        let p: [[f64; 4]; 4] = std::array::from_fn(|i| std::array::from_fn(|k| flat[i * 4 + k]));
        let g = sample_element(&GroupSpec::lorentz(3).unwrap(), seed ^ 7);
        let moved: [[f64; 4]; 4] = std::array::from_fn(|i| rotate(g.matrix(), &p[i]));
        let (a, b) = (matrix_element(&p), matrix_element(&moved));
        prop_assert!((a - b).abs() / (1.0 + a.abs()) < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn simulation_commutes_with_rotations(seed in any::<u64>()) {
        let g = sample_element(&GroupSpec::orthogonal(3).unwrap(), seed);
        let x = points::<3>(seed, 5);
        let v = points::<3>(seed ^ 1, 5);
        let q = [1.0, -1.0, 1.0, 1.0, -1.0];
        let rot = |s: &[[f64; 3]]| s.iter().map(|p| rotate(g.matrix(), p)).collect::<Vec<_>>();
        let a = simulate(&q, &x, &v, 50, 1e-3);
        let b = simulate(&q, &rot(&x), &rot(&v), 50, 1e-3);
        for (p, r) in rot(a.final_positions()).iter().zip(b.final_positions()) {
            for k in 0..3 {
                prop_assert!((p[k] - r[k]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn generators_are_pure_in_their_seed() {
    let opts = GenOptions {
        steps: 20,
        ..GenOptions::default()
    };
    for task in Task::ALL {
        let a = generate(task, 8, 42, &opts).unwrap();
        let b = generate(task, 8, 42, &opts).unwrap();
        let c = generate(task, 8, 43, &opts).unwrap();
        assert_eq!(a.inputs, b.inputs, "{task}");
        assert_eq!(a.targets, b.targets, "{task}");
        assert_ne!(a.inputs, c.inputs, "{task}");
        assert_eq!(a.len(), 8);
    }
}

#[test]
fn simulation_conserves_momentum() {
    let x = points::<3>(5, 5);
    let v = points::<3>(6, 5);
    let q = [1.0, 1.0, -1.0, 1.0, -1.0];
    let t = simulate(&q, &x, &v, 500, 1e-3);
    let momentum = |vs: &[[f64; 3]]| -> [f64; 3] { std::array::from_fn(|k| vs.iter().map(|p| p[k]).sum()) };
    let (p0, p1) = (momentum(&t.velocities[0]), momentum(t.velocities.last().unwrap()));
    for k in 0..3 {
        assert!((p0[k] - p1[k]).abs() < 1e-9, "{p0:?} vs {p1:?}");
    }
    assert_eq!(t.positions.len(), 501);
}

#[test]
fn rotated_patterns_need_supported_group_sizes() {
    let opts = GenOptions {
        group: Some(GroupSpec::cyclic(3).unwrap()),
        ..GenOptions::default()
    };
    assert!(generate(Task::RotPat, 4, 0, &opts).is_err());
}

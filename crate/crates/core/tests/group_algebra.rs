use grepsnet::groups::{
    cyclic_compose, cyclic_inverse, enumerate_elements, metric_form, sample_element, GroupElement, GroupSpec,
};
use grepsnet::repalgebra::{
    apply_power, convert_up, invariant_norm, kron, quadratic_form, rep_matrix, TensorType, TypedFeature,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn group_strategy() -> impl Strategy<Value = GroupSpec> {
    prop_oneof![
        (2usize..=5).prop_map(|d| GroupSpec::orthogonal(d).unwrap()),
        (2usize..=4).prop_map(|d| GroupSpec::special_orthogonal(d).unwrap()),
        (1usize..=3).prop_map(|k| GroupSpec::lorentz(k).unwrap()),
        (2usize..=8).prop_map(|n| GroupSpec::cyclic(n).unwrap()),
    ]
}

fn vector(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn apply(g: &GroupElement, m: usize, x: &[f64]) -> Vec<f64> {
    apply_power(g.matrix(), m, x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_elements_preserve_the_metric(spec in group_strategy(), seed in any::<u64>()) {
        let g = sample_element(&spec, seed);
        let eta = metric_form(&spec).form().clone();
        let a = g.matrix();
        let lhs = a.transpose() * &eta * a;
        prop_assert!((lhs - &eta).amax() < 1e-9);
    }

    #[test]
    fn special_orthogonal_has_unit_determinant(d in 2usize..=5, seed in any::<u64>()) {
        let g = sample_element(&GroupSpec::special_orthogonal(d).unwrap(), seed);
        prop_assert!((g.matrix().determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tensor_power_is_a_homomorphism(spec in group_strategy(), m in 0usize..=3, s1 in any::<u64>(), s2 in any::<u64>()) {
        let g1 = sample_element(&spec, s1);
        let g2 = sample_element(&spec, s2);
        let lhs = rep_matrix(&g1.compose(&g2), m).unwrap();
        let rhs = rep_matrix(&g1, m).unwrap() * rep_matrix(&g2, m).unwrap();
        prop_assert!((lhs - rhs).amax() < 1e-8);
    }

    #[test]
    fn axis_application_matches_explicit_matrix(spec in group_strategy(), m in 0usize..=3, seed in any::<u64>()) {
        let g = sample_element(&spec, seed);
        let d = spec.dim();
        let x = vector(seed ^ 1, d.pow(m as u32));
        let explicit = rep_matrix(&g, m).unwrap() * DVector::from_column_slice(&x);
        prop_assert!(max_abs_diff(explicit.as_slice(), &apply(&g, m, &x)) < 1e-10);
    }

    #[test]
    fn kron_is_equivariant(spec in group_strategy(), a in 0usize..=2, b in 0usize..=2, seed in any::<u64>()) {
        let g = sample_element(&spec, seed);
        let d = spec.dim();
        let x = vector(seed ^ 2, d.pow(a as u32));
        let y = vector(seed ^ 3, d.pow(b as u32));
        let lhs = kron(&apply(&g, a, &x), &apply(&g, b, &y));
        let rhs = apply(&g, a + b, &kron(&x, &y));
        prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-9);
    }

    #[test]
    fn upward_conversion_is_equivariant(spec in group_strategy(), j in 1usize..=2, extra in 1usize..=2, seed in any::<u64>()) {
        let g = sample_element(&spec, seed);
        let d = spec.dim();
        let i = j + extra;
        let x = vector(seed ^ 4, d.pow(j as u32));
        let aux = vector(seed ^ 5, d);
        let up = convert_up(&x, j, Some(&aux), i).unwrap();
        prop_assert_eq!(up.len(), d.pow(i as u32));
        let moved = convert_up(&apply(&g, j, &x), j, Some(&apply(&g, 1, &aux)), i).unwrap();
        prop_assert!(max_abs_diff(&moved, &apply(&g, i, &up)) < 1e-9);
    }

    #[test]
    fn invariant_norms_are_invariant(spec in group_strategy(), m in 0usize..=3, seed in any::<u64>()) {
        let g = sample_element(&spec, seed);
        let metric = metric_form(&spec);
        let x = vector(seed ^ 6, spec.dim().pow(m as u32));
        let before = quadratic_form(&x, m, &metric);
        let after = quadratic_form(&apply(&g, m, &x), m, &metric);
        let scale = 1.0 + before.abs() + after.abs();
        prop_assert!((before - after).abs() / scale < 1e-9);
        let n0 = invariant_norm(&x, m, &metric);
        let n1 = invariant_norm(&apply(&g, m, &x), m, &metric);
        prop_assert!((n0 - n1).abs() / (1.0 + n0) < 1e-8);
    }

    #[test]
    fn cyclic_index_arithmetic(n in 1usize..=12, a in 0usize..12, b in 0usize..12) {
        let (a, b) = (a % n, b % n);
        prop_assert_eq!(cyclic_compose(a, cyclic_inverse(a, n), n), 0);
        let prod = GroupElement::cyclic(a, n).compose(&GroupElement::cyclic(b, n));
        let expect = GroupElement::cyclic(cyclic_compose(a, b, n), n);
        prop_assert!((prod.matrix() - expect.matrix()).amax() < 1e-12);
    }

    #[test]
    fn typed_feature_roundtrip(c0 in 0usize..3, c1 in 0usize..3, c2 in 0usize..2, seed in any::<u64>()) {
        prop_assume!(c0 + c1 + c2 > 0);
        let ty: TensorType = [(c0, 0), (c1, 1), (c2, 2)]
            .iter()
            .filter(|(c, _)| *c > 0)
            .map(|(c, m)| format!("{c}T{m}"))
            .collect::<Vec<_>>()
            .join("+")
            .parse()
            .unwrap();
        let d = 3;
        let flat = vector(seed, ty.payload_len(d));
        let f = TypedFeature::from_flat(ty.clone(), d, &flat).unwrap();
        prop_assert_eq!(f.flatten(), flat);
        prop_assert_eq!(ty.to_string().parse::<TensorType>().unwrap(), ty);
    }
}

#[test]
fn cyclic_rotations_at_right_angles_are_exact() {
    let els = enumerate_elements(&GroupSpec::cyclic(4).unwrap()).unwrap();
    let expect = [[1.0, 0.0, 0.0, 1.0], [0.0, -1.0, 1.0, 0.0], [-1.0, 0.0, 0.0, -1.0], [0.0, 1.0, -1.0, 0.0]];
    for (g, want) in els.iter().zip(expect) {
        assert_eq!(g.matrix(), &DMatrix::from_row_slice(2, 2, &want));
    }
}

#[test]
fn minkowski_norm_of_null_vector_is_small() {
    let metric = metric_form(&GroupSpec::lorentz(3).unwrap());
    let n = invariant_norm(&[1.0, 1.0, 0.0, 0.0], 1, &metric);
    assert!(n < 1e-5);
    assert!((quadratic_form(&[2.0, 1.0, 0.0, 0.0], 1, &metric) - 3.0).abs() < 1e-12);
}

#[test]
fn upward_conversion_without_aux_fails_on_remainder() {
    assert!(convert_up(&[1.0, 2.0, 3.0, 4.0], 2, None, 3).is_err());
    assert!(convert_up(&[1.0, 2.0], 1, None, 3).is_ok());
    assert!(convert_up(&[1.0, 2.0], 1, None, 1).is_err());
}

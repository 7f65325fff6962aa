//! Tensor types over a base representation.
//!
//! A [`TensorType`] is a formal sum `Σ c·T_m`; its payload stores each term
//! as a row-major block of shape `c × d^m`. Row-major flattening is fixed
//! everywhere so Kronecker index arithmetic agrees across modules: entry
//! `(i_1, …, i_m)` of a `T_m` tensor lives at `Σ i_k d^(m-k)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::groups::{GroupElement, Metric};

/// Default ceiling on tensor orders; the deepest model uses `T_3`.
pub const MAX_ORDER: usize = 4;

/// Guard added under the square root of invariant norms.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Term {
    pub multiplicity: usize,
    pub order: usize,
}

/// `Σ cᵢ·T_{mᵢ}` with distinct orders, kept sorted by order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TensorType {
    terms: Vec<Term>,
}

impl TensorType {
    pub fn new(mut terms: Vec<Term>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidType("empty tensor type".into()));
        }
        terms.sort_by_key(|t| t.order);
        for w in terms.windows(2) {
            if w[0].order == w[1].order {
                return Err(Error::InvalidType(format!("order {} repeated", w[0].order)));
            }
        }
        if let Some(t) = terms.iter().find(|t| t.multiplicity == 0) {
            return Err(Error::InvalidType(format!("zero multiplicity for T{}", t.order)));
        }
        Ok(Self { terms })
    }

    /// `c·T_m`.
    pub fn single(multiplicity: usize, order: usize) -> Self {
        Self::new(vec![Term {
            multiplicity,
            order,
        }])
        .expect("single term with positive multiplicity")
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn multiplicity(&self, order: usize) -> Option<usize> {
        self.terms
            .iter()
            .find(|t| t.order == order)
            .map(|t| t.multiplicity)
    }

    pub fn max_order(&self) -> usize {
        self.terms.last().map(|t| t.order).unwrap_or(0)
    }

    /// Total payload length `Σ c·d^m`.
    pub fn payload_len(&self, d: usize) -> usize {
        self.terms
            .iter()
            .map(|t| t.multiplicity * d.pow(t.order as u32))
            .sum()
    }
}

impl fmt::Display for TensorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str("+")?;
            }
            if t.multiplicity != 1 {
                write!(f, "{}", t.multiplicity)?;
            }
            write!(f, "T{}", t.order)?;
        }
        Ok(())
    }
}

impl FromStr for TensorType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut terms = Vec::new();
        for part in s.split('+') {
            let part = part.trim();
            let (c, m) = part
                .split_once('T')
                .ok_or_else(|| Error::InvalidType(format!("`{part}` is not of the form cTm")))?;
            let multiplicity = if c.is_empty() {
                1
            } else {
                c.parse()
                    .map_err(|_| Error::InvalidType(format!("bad multiplicity in `{part}`")))?
            };
            let order = m
                .parse()
                .map_err(|_| Error::InvalidType(format!("bad order in `{part}`")))?;
            terms.push(Term {
                multiplicity,
                order,
            });
        }
        Self::new(terms)
    }
}

/// Numeric payload of a [`TensorType`].
#[derive(Clone, Debug, PartialEq)]
pub struct TypedFeature {
    ty: TensorType,
    d: usize,
    blocks: Vec<Vec<f64>>,
}

impl TypedFeature {
    pub fn new(ty: TensorType, d: usize, blocks: Vec<Vec<f64>>) -> Result<Self> {
        if blocks.len() != ty.terms().len() {
            return Err(Error::InvalidType(format!(
                "{} blocks for type {ty}",
                blocks.len()
            )));
        }
        for (t, b) in ty.terms().iter().zip(&blocks) {
            let want = t.multiplicity * d.pow(t.order as u32);
            if b.len() != want {
                return Err(Error::InvalidType(format!(
                    "block for {}T{} has length {}, expected {want}",
                    t.multiplicity,
                    t.order,
                    b.len()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidType("non-finite entry".into()));
            }
        }
        Ok(Self { ty, d, blocks })
    }

    /// Splits a flat payload into blocks.
    pub fn from_flat(ty: TensorType, d: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != ty.payload_len(d) {
            return Err(Error::InvalidType(format!(
                "payload length {} does not match {ty} (d={d})",
                flat.len()
            )));
        }
        let mut blocks = Vec::with_capacity(ty.terms().len());
        let mut at = 0;
        for t in ty.terms() {
            let n = t.multiplicity * d.pow(t.order as u32);
            blocks.push(flat[at..at + n].to_vec());
            at += n;
        }
        Self::new(ty, d, blocks)
    }

    pub fn ty(&self) -> &TensorType {
        &self.ty
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn block(&self, order: usize) -> Option<&[f64]> {
        self.ty
            .terms()
            .iter()
            .position(|t| t.order == order)
            .map(|i| self.blocks[i].as_slice())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.concat()
    }

    /// Applies `ρ(g)^{⊗m}` to every channel of every block.
    pub fn transform(&self, g: &GroupElement) -> TypedFeature {
        let blocks = self
            .ty
            .terms()
            .iter()
            .zip(&self.blocks)
            .map(|(t, b)| {
                let k = self.d.pow(t.order as u32);
                b.chunks(k)
                    .flat_map(|ch| apply_power(g.matrix(), t.order, ch))
                    .collect()
            })
            .collect();
        TypedFeature {
            ty: self.ty.clone(),
            d: self.d,
            blocks,
        }
    }
}

/// Explicit Kronecker product of two matrices.
pub fn kron_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// `ρ(g)^{⊗m}` as an explicit `d^m × d^m` matrix, with the default ceiling.
pub fn rep_matrix(g: &GroupElement, m: usize) -> Result<DMatrix<f64>> {
    rep_matrix_with_ceiling(g, m, MAX_ORDER)
}

pub fn rep_matrix_with_ceiling(g: &GroupElement, m: usize, ceiling: usize) -> Result<DMatrix<f64>> {
    if m > ceiling {
        return Err(Error::OrderTooLarge { order: m, ceiling });
    }
    let mut out = DMatrix::from_element(1, 1, 1.0);
    for _ in 0..m {
        out = kron_matrix(&out, g.matrix());
    }
    Ok(out)
}

/// Computes `A^{⊗m} x` by applying `A` along each tensor axis of `x`.
///
/// Costs `O(m·d^(m+1))` instead of the `O(d^(2m))` of the explicit matrix.
pub fn apply_power(a: &DMatrix<f64>, m: usize, x: &[f64]) -> Vec<f64> {
    let d = a.nrows();
    debug_assert_eq!(x.len(), d.pow(m as u32));
    let mut cur = x.to_vec();
    let mut buf = vec![0.0; d];
    for axis in 0..m {
        let stride = d.pow((m - 1 - axis) as u32);
        let outer = d.pow(axis as u32);
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * d * stride + inner;
                for (i, slot) in buf.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += a[(i, j)] * cur[base + j * stride];
                    }
                    *slot = acc;
                }
                for (i, v) in buf.iter().enumerate() {
                    cur[base + i * stride] = *v;
                }
            }
        }
    }
    cur
}

/// Kronecker product of two tensors, `T_m ⊗ T_n → T_{m+n}`.
pub fn kron(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() * y.len());
    for a in x {
        out.extend(y.iter().map(|b| a * b));
    }
    out
}

/// Raises an order-`j` tensor to order `i > j` as `x^{⊗k} ⊗ aux^{⊗r}`
/// with `i = k·j + r`; `aux` is an order-1 tensor, required when `r > 0`.
pub fn convert_up(x: &[f64], j: usize, aux: Option<&[f64]>, i: usize) -> Result<Vec<f64>> {
    if j == 0 || i <= j {
        return Err(Error::Conversion(format!(
            "upward conversion needs i > j > 0 (got j={j}, i={i})"
        )));
    }
    let (k, r) = (i / j, i % j);
    if r > 0 && aux.is_none() {
        return Err(Error::Conversion(format!(
            "T{j} -> T{i} needs an auxiliary T1 tensor (remainder {r})"
        )));
    }
    let mut out = x.to_vec();
    for _ in 1..k {
        out = kron(&out, x);
    }
    if let Some(a) = aux {
        for _ in 0..r {
            out = kron(&out, a);
        }
    }
    Ok(out)
}

/// Signed quadratic form `xᵀ (η^{⊗m}) x`.
pub fn quadratic_form(x: &[f64], m: usize, metric: &Metric) -> f64 {
    let eta_x = apply_power(metric.form(), m, x);
    x.iter().zip(&eta_x).map(|(a, b)| a * b).sum()
}

/// `sqrt(|xᵀ (η^{⊗m}) x| + ε)`: the Euclidean norm for orthogonal groups
/// and the Minkowski norm for Lorentz groups.
pub fn invariant_norm(x: &[f64], m: usize, metric: &Metric) -> f64 {
    (quadratic_form(x, m, metric).abs() + NORM_EPS).sqrt()
}

/// Regular-representation feature with a leading group dimension of size
/// `|G|^order`, followed by `batch × features`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegularFeature {
    group_size: usize,
    order: usize,
    batch: usize,
    features: usize,
    payload: Vec<f64>,
}

impl RegularFeature {
    pub fn new(
        group_size: usize,
        order: usize,
        batch: usize,
        features: usize,
        payload: Vec<f64>,
    ) -> Result<Self> {
        let slices = group_size.pow(order as u32);
        if group_size == 0 || payload.len() != slices * batch * features {
            return Err(Error::InvalidType(format!(
                "regular payload of length {} does not match {slices}x{batch}x{features}",
                payload.len()
            )));
        }
        Ok(Self {
            group_size,
            order,
            batch,
            features,
            payload,
        })
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn features(&self) -> usize {
        self.features
    }

    /// Size of the leading group dimension.
    pub fn slices(&self) -> usize {
        self.group_size.pow(self.order as u32)
    }

    pub fn payload(&self) -> &[f64] {
        &self.payload
    }

    /// The `batch × features` slab at group index `s`.
    pub fn slice(&self, s: usize) -> &[f64] {
        let n = self.batch * self.features;
        &self.payload[s * n..(s + 1) * n]
    }

    /// Reorders the group dimension: output slice `perm[s]` is input slice `s`.
    pub fn permute(&self, perm: &[usize]) -> Result<RegularFeature> {
        if perm.len() != self.slices() {
            return Err(Error::InvalidType("permutation length mismatch".into()));
        }
        let n = self.batch * self.features;
        let mut payload = vec![0.0; self.payload.len()];
        for (s, &t) in perm.iter().enumerate() {
            payload[t * n..(t + 1) * n].copy_from_slice(self.slice(s));
        }
        RegularFeature::new(self.group_size, self.order, self.batch, self.features, payload)
    }

    /// Regular action of `C_n` element `h` on an order-1 or order-2 feature:
    /// index `g` moves to `g + h` (componentwise for order 2).
    pub fn cyclic_shift(&self, h: usize) -> Result<RegularFeature> {
        self.permute(&cyclic_shift_permutation(self.group_size, self.order, h))
    }

    /// Selects a subset of batch entries.
    pub fn select_batch(&self, idx: &[usize]) -> RegularFeature {
        let f = self.features;
        let mut payload = Vec::with_capacity(self.slices() * idx.len() * f);
        for s in 0..self.slices() {
            let slab = self.slice(s);
            for &b in idx {
                payload.extend_from_slice(&slab[b * f..(b + 1) * f]);
            }
        }
        RegularFeature {
            group_size: self.group_size,
            order: self.order,
            batch: idx.len(),
            features: f,
            payload,
        }
    }
}

/// Permutation of the `|G|^order` group indices induced by the cyclic shift `h`.
pub fn cyclic_shift_permutation(n: usize, order: usize, h: usize) -> Vec<usize> {
    let slices = n.pow(order as u32);
    (0..slices)
        .map(|s| {
            // Shift every base-n digit of s by h.
            let mut rest = s;
            let mut out = 0;
            let mut place = 1;
            for _ in 0..order {
                let digit = rest % n;
                rest /= n;
                out += ((digit + h) % n) * place;
                place *= n;
            }
            out
        })
        .collect()
}

/// Mean over the group dimension of an order-1 regular feature; returns
/// `batch × features`.
pub fn group_average(x: &RegularFeature) -> Result<Vec<f64>> {
    if x.order != 1 {
        return Err(Error::InvalidType(format!(
            "group average expects order 1, got {}",
            x.order
        )));
    }
    let n = x.batch * x.features;
    let mut out = vec![0.0; n];
    for s in 0..x.slices() {
        for (o, v) in out.iter_mut().zip(x.slice(s)) {
            *o += v;
        }
    }
    let scale = 1.0 / x.slices() as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

/// Lifts an order-1 regular feature to order 2: slice `(a, b)` (at index
/// `a·|G| + b`) is the elementwise product of slices `a` and `b`.
pub fn regular_lift(x: &RegularFeature) -> Result<RegularFeature> {
    if x.order != 1 {
        return Err(Error::InvalidType(format!(
            "regular lift expects order 1, got {}",
            x.order
        )));
    }
    let g = x.group_size;
    let n = x.batch * x.features;
    let mut payload = Vec::with_capacity(g * g * n);
    for a in 0..g {
        for b in 0..g {
            payload.extend(x.slice(a).iter().zip(x.slice(b)).map(|(u, v)| u * v));
        }
    }
    RegularFeature::new(g, 2, x.batch, x.features, payload)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::{GroupElement, Metric};

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn parse_tensor_types() {
        let t: TensorType = "5T0+5T1".parse().unwrap();
        assert_eq!(t.payload_len(3), 5 + 15);
        assert_eq!(t.to_string(), "5T0+5T1");
        let h: TensorType = "T1+T2+T3".parse().unwrap();
        assert_eq!(h.payload_len(3), 3 + 9 + 27);
        assert_eq!("2T1".parse::<TensorType>().unwrap().payload_len(5), 10);
        assert_eq!("T2+T0".parse::<TensorType>().unwrap().to_string(), "T0+T2");
        for bad in ["", "2X1", "T1+T1", "0T1", "T"] {
            assert!(bad.parse::<TensorType>().is_err(), "{bad}");
        }
    }

    #[test]
    fn rep_matrix_base_and_identity() {
        let g = GroupElement::cyclic(1, 4);
        assert_eq!(&rep_matrix(&g, 1).unwrap(), g.matrix());
        assert_eq!(rep_matrix(&g, 0).unwrap(), DMatrix::from_element(1, 1, 1.0));
        let e = GroupElement::identity(3);
        assert_eq!(rep_matrix(&e, 2).unwrap(), DMatrix::identity(9, 9));
        assert!(matches!(
            rep_matrix(&e, 5),
            Err(Error::OrderTooLarge { order: 5, ceiling: 4 })
        ));
        assert!(rep_matrix_with_ceiling(&GroupElement::identity(2), 5, 6).is_ok());
    }

    #[test]
    fn rep_matrix_square_of_quarter_turn_matches_double_loop() {
        let g = GroupElement::cyclic(1, 4);
        let m = g.matrix();
        let k = rep_matrix(&g, 2).unwrap();
        for i1 in 0..2 {
            for i2 in 0..2 {
                for j1 in 0..2 {
                    for j2 in 0..2 {
                        let want = m[(i1, j1)] * m[(i2, j2)];
                        assert_eq!(k[(i1 * 2 + i2, j1 * 2 + j2)], want);
                    }
                }
            }
        }
    }

    #[test]
    fn kron_examples() {
        assert_eq!(kron(&[1.0, 0.0], &[0.0, 1.0]), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(kron(&[2.5], &[1.0, -2.0, 3.0]), vec![2.5, -5.0, 7.5]);
        assert_eq!(kron(&[1.0; 5], &[1.0; 5]).len(), 25);
    }

    #[test]
    fn convert_up_examples() {
        let x = [1.0, 2.0];
        assert_eq!(convert_up(&x, 1, None, 2).unwrap(), kron(&x, &x));
        let x2 = [1.0, 2.0, 3.0, 4.0];
        let aux = [0.5, -1.0];
        assert_eq!(convert_up(&x2, 2, Some(&aux), 3).unwrap(), kron(&x2, &aux));
        let e = convert_up(&[1.0, 0.0], 1, None, 3).unwrap();
        assert_eq!(e, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(convert_up(&x2, 2, None, 3).is_err());
        assert!(convert_up(&x, 1, None, 1).is_err());
        assert!(convert_up(&x, 0, None, 2).is_err());
    }

    #[test]
    fn invariant_norm_examples() {
        let e2 = Metric::euclidean(2);
        assert!((invariant_norm(&[3.0, 4.0], 1, &e2) - 5.0).abs() < 1e-12);
        let eta = Metric::minkowski(4);
        assert!((invariant_norm(&[2.0, 1.0, 0.0, 0.0], 1, &eta) - 3f64.sqrt()).abs() < 1e-12);
        let id = [1.0, 0.0, 0.0, 1.0];
        assert!((invariant_norm(&id, 2, &e2) - 2f64.sqrt()).abs() < 1e-12);
        // Null vector stays finite.
        assert!(invariant_norm(&[1.0, 1.0, 0.0, 0.0], 1, &eta) > 0.0);
    }

    #[test]
    fn apply_power_matches_explicit_matrix() {
        let g = crate::groups::sample_element(&crate::groups::GroupSpec::orthogonal(3).unwrap(), 4);
        let x: Vec<f64> = (0..27).map(|i| (i as f64 * 0.37).sin()).collect();
        let explicit = rep_matrix(&g, 3).unwrap() * nalgebra::DVector::from_vec(x.clone());
        assert_close(&apply_power(g.matrix(), 3, &x), explicit.as_slice(), 1e-12);
    }

    #[test]
    fn group_average_examples() {
        let x = RegularFeature::new(4, 1, 1, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(group_average(&x).unwrap(), vec![2.5]);
        let c = RegularFeature::new(4, 1, 2, 1, vec![7.0; 8]).unwrap();
        assert_eq!(group_average(&c).unwrap(), vec![7.0, 7.0]);
        let lifted = regular_lift(&x).unwrap();
        assert!(group_average(&lifted).is_err());
    }

    #[test]
    fn regular_lift_two_slices() {
        let x = RegularFeature::new(2, 1, 1, 2, vec![1.0, 2.0, 3.0, 5.0]).unwrap();
        let l = regular_lift(&x).unwrap();
        assert_eq!(l.slices(), 4);
        assert_eq!(l.payload(), &[1.0, 4.0, 3.0, 10.0, 3.0, 10.0, 9.0, 25.0]);
        let x4 = RegularFeature::new(4, 1, 3, 2, vec![0.5; 24]).unwrap();
        assert_eq!(regular_lift(&x4).unwrap().slices(), 16);
    }

    #[test]
    fn identity_permutation_is_noop() {
        let x = RegularFeature::new(3, 1, 2, 2, (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(x.permute(&[0, 1, 2]).unwrap(), x);
        assert_eq!(x.cyclic_shift(3).unwrap(), x);
    }

    #[test]
    fn typed_feature_validation() {
        let ty: TensorType = "T0+2T1".parse().unwrap();
        assert!(TypedFeature::new(ty.clone(), 3, vec![vec![1.0], vec![0.0; 6]]).is_ok());
        assert!(TypedFeature::new(ty.clone(), 3, vec![vec![1.0], vec![0.0; 5]]).is_err());
        assert!(TypedFeature::new(ty.clone(), 3, vec![vec![f64::NAN], vec![0.0; 6]]).is_err());
        let f = TypedFeature::from_flat(ty, 3, &[1.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(f.block(1).unwrap(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }
}

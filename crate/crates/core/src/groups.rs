//! Matrix group families, their invariant bilinear forms, and samplers.
//!
//! Four families are supported: `O(d)`, `SO(d)`, the Lorentz group
//! `O(1,k)` acting on `d = 1 + k` dimensional space-time, and the cyclic
//! group `C_n`. `C_n` has two views: concretely as planar rotations by
//! multiples of `360/n` degrees, and abstractly through index arithmetic
//! when it indexes the group dimension of a regular representation.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Largest boost rapidity drawn by [`sample_element`] for Lorentz groups.
pub const MAX_RAPIDITY: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GroupFamily {
    Orthogonal,
    SpecialOrthogonal,
    Lorentz,
    Cyclic,
}

/// A matrix group family together with its representation dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GroupSpec {
    family: GroupFamily,
    d: usize,
    n: usize,
}

impl GroupSpec {
    pub fn orthogonal(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidGroup("O(d) needs d >= 1".into()));
        }
        Ok(Self {
            family: GroupFamily::Orthogonal,
            d,
            n: 0,
        })
    }

    pub fn special_orthogonal(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidGroup("SO(d) needs d >= 1".into()));
        }
        Ok(Self {
            family: GroupFamily::SpecialOrthogonal,
            d,
            n: 0,
        })
    }

    /// `O(1, spatial)`; acts on `1 + spatial` dimensional vectors.
    pub fn lorentz(spatial: usize) -> Result<Self> {
        if spatial == 0 {
            return Err(Error::InvalidGroup("O(1,k) needs k >= 1".into()));
        }
        Ok(Self {
            family: GroupFamily::Lorentz,
            d: spatial + 1,
            n: 0,
        })
    }

    /// `C_n` acting on the plane.
    pub fn cyclic(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGroup("C_n needs n >= 1".into()));
        }
        Ok(Self {
            family: GroupFamily::Cyclic,
            d: 2,
            n,
        })
    }

    pub fn family(&self) -> GroupFamily {
        self.family
    }

    /// Dimension of the base representation.
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Group order, `None` for the continuous families.
    pub fn order(&self) -> Option<usize> {
        match self.family {
            GroupFamily::Cyclic => Some(self.n),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.family == GroupFamily::Cyclic
    }
}

impl fmt::Display for GroupSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            GroupFamily::Orthogonal => write!(f, "O({})", self.d),
            GroupFamily::SpecialOrthogonal => write!(f, "SO({})", self.d),
            GroupFamily::Lorentz => write!(f, "O(1,{})", self.d - 1),
            GroupFamily::Cyclic => write!(f, "C{}", self.n),
        }
    }
}

impl FromStr for GroupSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidGroup(format!("cannot parse `{s}`"));
        let parse_num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());

        if let Some(rest) = s.strip_prefix('C') {
            return Self::cyclic(parse_num(rest)?);
        }
        let (family, inner) = if let Some(rest) = s.strip_prefix("SO(") {
            (GroupFamily::SpecialOrthogonal, rest)
        } else if let Some(rest) = s.strip_prefix("O(") {
            (GroupFamily::Orthogonal, rest)
        } else {
            return Err(bad());
        };
        let inner = inner.strip_suffix(')').ok_or_else(bad)?;
        match inner.split_once(',') {
            Some((time, space)) if family == GroupFamily::Orthogonal => {
                if parse_num(time)? != 1 {
                    return Err(bad());
                }
                Self::lorentz(parse_num(space)?)
            }
            Some(_) => Err(bad()),
            None if family == GroupFamily::Orthogonal => Self::orthogonal(parse_num(inner)?),
            None => Self::special_orthogonal(parse_num(inner)?),
        }
    }
}

/// A concrete group element: its matrix in the base representation.
///
/// Cyclic elements also remember their index `k` (rotation by `2πk/n`) so
/// the regular representation can use index arithmetic.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupElement {
    matrix: DMatrix<f64>,
    cyclic_index: Option<usize>,
}

impl GroupElement {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        Self {
            matrix,
            cyclic_index: None,
        }
    }

    pub fn identity(d: usize) -> Self {
        Self::from_matrix(DMatrix::identity(d, d))
    }

    /// Rotation by `2πk/n` in the plane.
    pub fn cyclic(k: usize, n: usize) -> Self {
        let k = k % n;
        let theta = 2.0 * PI * k as f64 / n as f64;
        let (s, c) = theta.sin_cos();
        // Exact entries at multiples of 90 degrees.
        let snap = |v: f64| if v.abs() < 1e-15 { 0.0 } else { v };
        let m = DMatrix::from_row_slice(2, 2, &[snap(c), -snap(s), snap(s), snap(c)]);
        Self {
            matrix: m,
            cyclic_index: Some(k),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cyclic_index(&self) -> Option<usize> {
        self.cyclic_index
    }

    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        GroupElement {
            matrix: &self.matrix * &other.matrix,
            cyclic_index: None,
        }
    }
}

/// Symmetric bilinear form preserved by a group.
#[derive(Clone, Debug, PartialEq)]
pub struct Metric {
    form: DMatrix<f64>,
}

impl Metric {
    pub fn euclidean(d: usize) -> Self {
        Self {
            form: DMatrix::identity(d, d),
        }
    }

    /// `diag(+1, -1, ..., -1)`.
    pub fn minkowski(d: usize) -> Self {
        let mut form = -DMatrix::identity(d, d);
        form[(0, 0)] = 1.0;
        Self { form }
    }

    pub fn form(&self) -> &DMatrix<f64> {
        &self.form
    }

    pub fn dim(&self) -> usize {
        self.form.nrows()
    }

    /// Diagonal entries when the form is diagonal.
    pub fn diagonal(&self) -> Option<Vec<f64>> {
        let d = self.dim();
        for i in 0..d {
            for j in 0..d {
                if i != j && self.form[(i, j)] != 0.0 {
                    return None;
                }
            }
        }
        Some((0..d).map(|i| self.form[(i, i)]).collect())
    }

    pub fn is_euclidean(&self) -> bool {
        self.form == DMatrix::identity(self.dim(), self.dim())
    }

    /// `xᵀ η y` for base vectors.
    pub fn dot(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                let e = self.form[(i, j)];
                if e != 0.0 {
                    acc += x[i] * e * y[j];
                }
            }
        }
        acc
    }
}

/// The invariant bilinear form of a group family.
pub fn metric_form(spec: &GroupSpec) -> Metric {
    match spec.family {
        GroupFamily::Lorentz => Metric::minkowski(spec.d),
        _ => Metric::euclidean(spec.d),
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Haar-distributed element of SO(d) via sign-corrected QR of a Gaussian matrix.
fn haar_special_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, d).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

fn haar_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let mut q = haar_special_orthogonal(rng, d);
    if rng.random_bool(0.5) {
        let j = rng.random_range(0..d);
        q.column_mut(j).neg_mut();
    }
    q
}

/// Pure boost with the given rapidity along a spatial direction.
///
/// `direction` has `d - 1` entries and is normalised internally.
pub fn boost(rapidity: f64, direction: &[f64]) -> GroupElement {
    let k = direction.len();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n: Vec<f64> = direction.iter().map(|v| v / norm).collect();
    let (ch, sh) = (rapidity.cosh(), rapidity.sinh());
    let mut m = DMatrix::identity(k + 1, k + 1);
    m[(0, 0)] = ch;
    for i in 0..k {
        m[(0, i + 1)] = sh * n[i];
        m[(i + 1, 0)] = sh * n[i];
        for j in 0..k {
            m[(i + 1, j + 1)] += (ch - 1.0) * n[i] * n[j];
        }
    }
    GroupElement::from_matrix(m)
}

/// Embeds a spatial `k x k` matrix as `diag(1, R)`.
pub fn spatial_embedding(r: &DMatrix<f64>) -> GroupElement {
    let k = r.nrows();
    let mut m = DMatrix::identity(k + 1, k + 1);
    m.view_mut((1, 1), (k, k)).copy_from(r);
    GroupElement::from_matrix(m)
}

/// Draws a group element, deterministic in `seed`.
///
/// Continuous families use Haar-distributed orthogonal factors; Lorentz
/// elements are a random spatial orthogonal transform times a boost with
/// rapidity uniform in `[-MAX_RAPIDITY, MAX_RAPIDITY]`.
pub fn sample_element(spec: &GroupSpec, seed: u64) -> GroupElement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_element_with(spec, &mut rng)
}

pub fn sample_element_with(spec: &GroupSpec, rng: &mut ChaCha8Rng) -> GroupElement {
    match spec.family {
        GroupFamily::Orthogonal => GroupElement::from_matrix(haar_orthogonal(rng, spec.d)),
        GroupFamily::SpecialOrthogonal => {
            GroupElement::from_matrix(haar_special_orthogonal(rng, spec.d))
        }
        GroupFamily::Lorentz => {
            let k = spec.d - 1;
            let rot = spatial_embedding(&haar_orthogonal(rng, k));
            let dir: Vec<f64> = loop {
                let v: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
                if v.iter().map(|x| x * x).sum::<f64>() > 1e-12 {
                    break v;
                }
            };
            let rapidity = rng.random_range(-MAX_RAPIDITY..=MAX_RAPIDITY);
            rot.compose(&boost(rapidity, &dir))
        }
        GroupFamily::Cyclic => GroupElement::cyclic(rng.random_range(0..spec.n), spec.n),
    }
}

/// All elements of a finite group, in index order (`k`-th element is
/// rotation by `2πk/n`).
pub fn enumerate_elements(spec: &GroupSpec) -> Result<Vec<GroupElement>> {
    match spec.family {
        GroupFamily::Cyclic => Ok((0..spec.n).map(|k| GroupElement::cyclic(k, spec.n)).collect()),
        _ => Err(Error::InfiniteGroup(spec.to_string())),
    }
}

/// Index of `a * b` in `C_n`.
pub fn cyclic_compose(a: usize, b: usize, n: usize) -> usize {
    (a + b) % n
}

/// Index of the inverse of `a` in `C_n`.
pub fn cyclic_inverse(a: usize, n: usize) -> usize {
    (n - a % n) % n
}

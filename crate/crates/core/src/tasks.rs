//! Deterministic synthetic datasets.
//!
//! Every generator is a pure function of its seed. Samples are stored as
//! [`TypedFeature`]s so they can be batched straight into the models.
//!
//! Scattering targets use the tree-level, spin-averaged matrix element for
//! `e μ → e μ` with a massless electron, muon mass `M = 0.106` and unit
//! coupling, written with in-states `p1` (electron), `p2` (muon) and
//! out-states `p3`, `p4`:
//!
//! ```text
//! |M|² = 8/t² · [ (p1·p2)(p3·p4) + (p1·p4)(p2·p3) − M²(p1·p3) ],   t = (p1 − p3)² = −2 p1·p3
//! ```
//!
//! Momenta are drawn in the centre-of-momentum frame with `|p| ∈ [0.5, 2]`
//! and scattering angle `cos θ ∈ [−1, 0.5]`, then boosted with rapidity in
//! `[−0.5, 0.5]` along a random direction and rotated.

use std::f64::consts::PI;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::groups::{boost, sample_element_with, spatial_embedding, GroupSpec, Metric};
use crate::repalgebra::{RegularFeature, TensorType, TypedFeature};

/// Muon mass in natural units.
pub const MUON_MASS: f64 = 0.106;
/// Plummer softening length of the Coulomb force.
pub const SOFTENING: f64 = 0.1;
/// Particles per N-body system.
pub const NBODY_PARTICLES: usize = 5;
/// Features per group slice in the rotated-pattern task.
pub const ROTPAT_FEATURES: usize = 8;
/// Noise level of the rotated-pattern task.
pub const ROTPAT_NOISE: f64 = 0.2;
/// Inputs shorter than this are redrawn.
const MIN_NORM: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    /// `sin‖x₁‖ − ‖x₂‖³/2 + cos∠(x₁, x₂)` on `ℝ⁵`.
    O5,
    /// Inertia matrix of five point masses.
    Inertia,
    /// Electron-muon scattering matrix element.
    Scattering,
    /// Final positions of a charged five-body system.
    NBody,
    /// Cyclic-pattern classification on the regular representation.
    RotPat,
    /// `‖X₁‖·X₂` on `ℝ³`.
    NormProd,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Task::O5,
        Task::Inertia,
        Task::Scattering,
        Task::NBody,
        Task::RotPat,
        Task::NormProd,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Task::O5 => "o5",
            Task::Inertia => "inertia",
            Task::Scattering => "scattering",
            Task::NBody => "nbody",
            Task::RotPat => "rotpat",
            Task::NormProd => "normprod",
        }
    }

    pub fn default_group(&self) -> GroupSpec {
        match self {
            Task::O5 => GroupSpec::orthogonal(5),
            Task::Inertia | Task::NBody | Task::NormProd => GroupSpec::orthogonal(3),
            Task::Scattering => GroupSpec::lorentz(3),
            Task::RotPat => GroupSpec::cyclic(4),
        }
        .expect("valid default group")
    }

    /// Input type for a given group (the group matters only for `rotpat`,
    /// whose slice count is the group order).
    pub fn input_type(&self, group: &GroupSpec) -> TensorType {
        let parse = |s: &str| s.parse::<TensorType>().expect("static type");
        match self {
            Task::O5 | Task::NormProd => parse("2T1"),
            Task::Inertia => parse("5T0+5T1"),
            Task::Scattering => parse("4T1"),
            Task::NBody => parse("5T0+10T1"),
            Task::RotPat => TensorType::single(group.order().unwrap_or(1) * ROTPAT_FEATURES, 0),
        }
    }

    pub fn output_type(&self) -> TensorType {
        let parse = |s: &str| s.parse::<TensorType>().expect("static type");
        match self {
            Task::O5 | Task::Scattering => parse("T0"),
            Task::Inertia => parse("T2"),
            Task::NBody => parse("5T1"),
            Task::RotPat => parse("2T0"),
            Task::NormProd => parse("T1"),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s.trim())
            .ok_or_else(|| Error::Format(format!("unknown task `{s}`")))
    }
}

/// How input vectors are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Sampling {
    #[default]
    Gaussian,
    /// Uniform in the unit ball.
    UnitBall,
}

impl fmt::Display for Sampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sampling::Gaussian => "gaussian",
            Sampling::UnitBall => "unit_ball",
        })
    }
}

impl FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gaussian" => Ok(Sampling::Gaussian),
            "unit_ball" => Ok(Sampling::UnitBall),
            other => Err(Error::Format(format!("unknown sampling `{other}`"))),
        }
    }
}

/// Paired inputs and targets for one task.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub group: GroupSpec,
    pub seed: u64,
    pub inputs: Vec<TypedFeature>,
    pub targets: Vec<TypedFeature>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Splits off the first `n` samples.
    pub fn split(mut self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let rest_in = self.inputs.split_off(n);
        let rest_out = self.targets.split_off(n);
        let rest = Dataset {
            inputs: rest_in,
            targets: rest_out,
            ..self.clone()
        };
        (self, rest)
    }

    pub fn input_type(&self) -> &TensorType {
        self.inputs[0].ty()
    }

    pub fn output_type(&self) -> &TensorType {
        self.targets[0].ty()
    }

    /// Writes the columnar binary format: a text header followed by
    /// little-endian `f64` columns (every input component, then every
    /// target component, each over all samples).
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "GREPSNET-DATA 1")?;
        writeln!(
            w,
            "task={} group={} input={} output={} count={} seed={}",
            self.task,
            self.group,
            self.input_type(),
            self.output_type(),
            self.len(),
            self.seed
        )?;
        for set in [&self.inputs, &self.targets] {
            let flat: Vec<Vec<f64>> = set.iter().map(TypedFeature::flatten).collect();
            for col in 0..flat[0].len() {
                for row in &flat {
                    w.write_all(&row[col].to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Dataset> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = String::new();
        r.read_line(&mut magic)?;
        if magic.trim() != "GREPSNET-DATA 1" {
            return Err(Error::Format("not a dataset file".into()));
        }
        let mut header = String::new();
        r.read_line(&mut header)?;
        let field = |key: &str| -> Result<&str> {
            header
                .split_whitespace()
                .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
                .ok_or_else(|| Error::Format(format!("missing `{key}` in dataset header")))
        };
        let task: Task = field("task")?.parse()?;
        let group: GroupSpec = field("group")?.parse()?;
        let in_ty: TensorType = field("input")?.parse()?;
        let out_ty: TensorType = field("output")?.parse()?;
        let count: usize = field("count")?
            .parse()
            .map_err(|_| Error::Format("bad count".into()))?;
        let seed: u64 = field("seed")?
            .parse()
            .map_err(|_| Error::Format("bad seed".into()))?;
        let d = group.dim();
        let mut read_set = |ty: &TensorType| -> Result<Vec<TypedFeature>> {
            let len = ty.payload_len(d);
            let mut rows = vec![vec![0.0; len]; count];
            let mut buf = [0u8; 8];
            for col in 0..len {
                for row in rows.iter_mut() {
                    r.read_exact(&mut buf)?;
                    row[col] = f64::from_le_bytes(buf);
                }
            }
            rows.iter()
                .map(|row| TypedFeature::from_flat(ty.clone(), d, row))
                .collect()
        };
        let inputs = read_set(&in_ty)?;
        let targets = read_set(&out_ty)?;
        Ok(Dataset {
            task,
            group,
            seed,
            inputs,
            targets,
        })
    }

    /// One row per sample: `in_0, …, out_0, …`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let n_in = self.inputs[0].flatten().len();
        let n_out = self.targets[0].flatten().len();
        let header: Vec<String> = (0..n_in)
            .map(|i| format!("in_{i}"))
            .chain((0..n_out).map(|i| format!("out_{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            let row: Vec<String> = x
                .flatten()
                .iter()
                .chain(y.flatten().iter())
                .map(|v| format!("{v:e}"))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Draws a vector with norm at least `MIN_NORM`.
fn draw_vector(rng: &mut ChaCha8Rng, d: usize, sampling: Sampling) -> Vec<f64> {
    loop {
        let g = gaussian_vec(rng, d);
        let n = norm(&g);
        if n < MIN_NORM {
            continue;
        }
        let v = match sampling {
            Sampling::Gaussian => g,
            Sampling::UnitBall => {
                let r = rng.random::<f64>().powf(1.0 / d as f64);
                g.iter().map(|x| x * r / n).collect()
            }
        };
        if norm(&v) >= MIN_NORM {
            return v;
        }
    }
}

/// `sin‖x₁‖ − ‖x₂‖³/2 + x₁ᵀx₂/(‖x₁‖‖x₂‖)`.
pub fn o5_target(x1: &[f64], x2: &[f64]) -> f64 {
    let (n1, n2) = (norm(x1), norm(x2));
    n1.sin() - n2.powi(3) / 2.0 + dot(x1, x2) / (n1 * n2)
}

pub fn gen_o5(count: usize, seed: u64) -> Dataset {
    gen_o5_with(count, seed, Sampling::Gaussian)
}

pub fn gen_o5_with(count: usize, seed: u64, sampling: Sampling) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (in_ty, out_ty) = (Task::O5.input_type(&Task::O5.default_group()), Task::O5.output_type());
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let x1 = draw_vector(&mut rng, 5, sampling);
        let x2 = draw_vector(&mut rng, 5, sampling);
        let y = o5_target(&x1, &x2);
        inputs.push(TypedFeature::new(in_ty.clone(), 5, vec![[x1, x2].concat()]).expect("2T1"));
        targets.push(TypedFeature::new(out_ty.clone(), 5, vec![vec![y]]).expect("T0"));
    }
    Dataset {
        task: Task::O5,
        group: Task::O5.default_group(),
        seed,
        inputs,
        targets,
    }
}

/// `Σᵢ mᵢ (xᵢᵀxᵢ I − xᵢxᵢᵀ)`, row-major 3×3.
pub fn inertia_matrix(masses: &[f64], positions: &[[f64; 3]]) -> [f64; 9] {
    let mut out = [0.0; 9];
    for (m, x) in masses.iter().zip(positions) {
        let r2 = dot(x, x);
        for i in 0..3 {
            for j in 0..3 {
                let delta = if i == j { r2 } else { 0.0 };
                out[i * 3 + j] += m * (delta - x[i] * x[j]);
            }
        }
    }
    out
}

pub fn gen_inertia(count: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let group = Task::Inertia.default_group();
    let (in_ty, out_ty) = (Task::Inertia.input_type(&group), Task::Inertia.output_type());
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let masses: Vec<f64> = (0..5).map(|_| rng.random_range(0.1..2.0)).collect();
        let pos: Vec<[f64; 3]> = (0..5)
            .map(|_| std::array::from_fn(|_| rng.sample(StandardNormal)))
            .collect();
        let flat_pos: Vec<f64> = pos.iter().flatten().copied().collect();
        let y = inertia_matrix(&masses, &pos).to_vec();
        inputs.push(TypedFeature::new(in_ty.clone(), 3, vec![masses, flat_pos]).expect("5T0+5T1"));
        targets.push(TypedFeature::new(out_ty.clone(), 3, vec![y]).expect("T2"));
    }
    Dataset {
        task: Task::Inertia,
        group,
        seed,
        inputs,
        targets,
    }
}

fn minkowski(a: &[f64], b: &[f64]) -> f64 {
    a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
}

/// Matrix element from the Minkowski dots `pᵢ·pⱼ`, indexed `dots[i][j]`.
pub fn matrix_element_from_dots(dots: &[[f64; 4]; 4]) -> f64 {
    let t = -2.0 * dots[0][2];
    let m2 = MUON_MASS * MUON_MASS;
    8.0 / (t * t) * (dots[0][1] * dots[2][3] + dots[0][3] * dots[1][2] - m2 * dots[0][2])
}

/// Matrix element for momenta `(p1, p2, p3, p4)`.
pub fn matrix_element(p: &[[f64; 4]; 4]) -> f64 {
    let mut dots = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            dots[i][j] = minkowski(&p[i], &p[j]);
        }
    }
    matrix_element_from_dots(&dots)
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = norm(&v);
        if n > MIN_NORM {
            return v.map(|x| x / n);
        }
    }
}

fn scattering_event(rng: &mut ChaCha8Rng) -> [[f64; 4]; 4] {
    loop {
        let p = rng.random_range(0.5..=2.0);
        let e_mu = (p * p + MUON_MASS * MUON_MASS).sqrt();
        let cos_t: f64 = rng.random_range(-1.0..=0.5);
        let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
        let phi = rng.random_range(0.0..2.0 * PI);
        let n = [sin_t * phi.cos(), sin_t * phi.sin(), cos_t];
        let cm = [
            [p, 0.0, 0.0, p],
            [e_mu, 0.0, 0.0, -p],
            [p, p * n[0], p * n[1], p * n[2]],
            [e_mu, -p * n[0], -p * n[1], -p * n[2]],
        ];
        let rapidity = rng.random_range(-0.5..=0.5);
        let dir = random_unit(rng);
        let rot = sample_element_with(&GroupSpec::orthogonal(3).expect("O(3)"), rng);
        let lambda = spatial_embedding(rot.matrix()).compose(&boost(rapidity, &dir));
        let out = cm.map(|v| {
            let w = lambda.matrix() * nalgebra::DVector::from_row_slice(&v);
            [w[0], w[1], w[2], w[3]]
        });
        if (2.0 * minkowski(&out[0], &out[2])).abs() >= 1e-8 {
            return out;
        }
    }
}

pub fn gen_scattering(count: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let group = Task::Scattering.default_group();
    let (in_ty, out_ty) = (Task::Scattering.input_type(&group), Task::Scattering.output_type());
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let p = scattering_event(&mut rng);
        let y = matrix_element(&p);
        inputs.push(TypedFeature::new(in_ty.clone(), 4, vec![p.concat()]).expect("4T1"));
        targets.push(TypedFeature::new(out_ty.clone(), 4, vec![vec![y]]).expect("T0"));
    }
    Dataset {
        task: Task::Scattering,
        group,
        seed,
        inputs,
        targets,
    }
}

/// State of a charged particle system over time.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub charges: Vec<f64>,
    /// `positions[step][particle]`, including the initial state.
    pub positions: Vec<Vec<[f64; 3]>>,
    pub velocities: Vec<Vec<[f64; 3]>>,
}

impl Trajectory {
    pub fn final_positions(&self) -> &[[f64; 3]] {
        self.positions.last().expect("at least the initial state")
    }
}

fn coulomb_accelerations(q: &[f64], x: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let n = q.len();
    let mut acc = vec![[0.0; 3]; n];
    let eps2 = SOFTENING * SOFTENING;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let r: [f64; 3] = std::array::from_fn(|k| x[i][k] - x[j][k]);
            let inv = (dot(&r, &r) + eps2).powf(-1.5);
            for k in 0..3 {
                acc[i][k] += q[i] * q[j] * r[k] * inv;
            }
        }
    }
    acc
}

/// Kick-drift-kick leapfrog with unit masses and softened Coulomb forces.
pub fn simulate(
    charges: &[f64],
    positions: &[[f64; 3]],
    velocities: &[[f64; 3]],
    steps: usize,
    dt: f64,
) -> Trajectory {
    let mut x = positions.to_vec();
    let mut v = velocities.to_vec();
    let mut traj = Trajectory {
        charges: charges.to_vec(),
        positions: vec![x.clone()],
        velocities: vec![v.clone()],
    };
    let mut a = coulomb_accelerations(charges, &x);
    for _ in 0..steps {
        for i in 0..x.len() {
            for k in 0..3 {
                v[i][k] += 0.5 * dt * a[i][k];
                x[i][k] += dt * v[i][k];
            }
        }
        a = coulomb_accelerations(charges, &x);
        for i in 0..x.len() {
            for k in 0..3 {
                v[i][k] += 0.5 * dt * a[i][k];
            }
        }
        traj.positions.push(x.clone());
        traj.velocities.push(v.clone());
    }
    traj
}

fn nbody_sample(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<[f64; 3]>, Vec<[f64; 3]>) {
    let q: Vec<f64> = (0..NBODY_PARTICLES)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let mut draw = || -> Vec<[f64; 3]> {
        (0..NBODY_PARTICLES)
            .map(|_| std::array::from_fn(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)))
            .collect()
    };
    let x = draw();
    let v = draw();
    (q, x, v)
}

fn nbody_feature(traj: &Trajectory) -> (TypedFeature, TypedFeature) {
    let group = Task::NBody.default_group();
    let in_ty = Task::NBody.input_type(&group);
    let vectors: Vec<f64> = traj.positions[0]
        .iter()
        .chain(&traj.velocities[0])
        .flatten()
        .copied()
        .collect();
    let input = TypedFeature::new(in_ty, 3, vec![traj.charges.clone(), vectors]).expect("5T0+10T1");
    let target = TypedFeature::new(
        Task::NBody.output_type(),
        3,
        vec![traj.final_positions().iter().flatten().copied().collect()],
    )
    .expect("5T1");
    (input, target)
}

/// Simulated trajectories and the initial-state → final-position dataset.
pub fn gen_nbody(trajectories: usize, steps: usize, dt: f64, seed: u64) -> (Vec<Trajectory>, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajs = Vec::with_capacity(trajectories);
    let mut inputs = Vec::with_capacity(trajectories);
    let mut targets = Vec::with_capacity(trajectories);
    for _ in 0..trajectories {
        let (q, x, v) = nbody_sample(&mut rng);
        let t = simulate(&q, &x, &v, steps, dt);
        let (i, o) = nbody_feature(&t);
        inputs.push(i);
        targets.push(o);
        trajs.push(t);
    }
    let data = Dataset {
        task: Task::NBody,
        group: Task::NBody.default_group(),
        seed,
        inputs,
        targets,
    };
    (trajs, data)
}

/// [`gen_nbody`] without retaining the intermediate states.
pub fn gen_nbody_dataset(trajectories: usize, steps: usize, dt: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(trajectories);
    let mut targets = Vec::with_capacity(trajectories);
    for _ in 0..trajectories {
        let (q, x, v) = nbody_sample(&mut rng);
        let mut t = simulate(&q, &x, &v, steps, dt);
        let last = t.positions.len() - 1;
        t.positions.drain(1..last);
        t.velocities.drain(1..last);
        let (i, o) = nbody_feature(&t);
        inputs.push(i);
        targets.push(o);
    }
    Dataset {
        task: Task::NBody,
        group: Task::NBody.default_group(),
        seed,
        inputs,
        targets,
    }
}

/// Two-class cyclic patterns on `|G|` slices of `ROTPAT_FEATURES` values.
///
/// A sample is `x_g = s_g·p + σ·ε_g` for a shared Gaussian pattern `p`.
/// Class 0 keeps one random sign for every slice; class 1 alternates the
/// sign between neighbouring slices. Cyclic shifts map each class to
/// itself, and a single slice has the same distribution in both classes.
/// Targets are one-hot `2T0`.
pub fn gen_rot_patterns(count: usize, group_size: usize, seed: u64) -> Result<Dataset> {
    if ![2, 4, 8].contains(&group_size) {
        return Err(Error::InvalidGroup(format!(
            "rotated patterns need |G| in {{2, 4, 8}}, got {group_size}"
        )));
    }
    let group = GroupSpec::cyclic(group_size)?;
    let in_ty = Task::RotPat.input_type(&group);
    let f = ROTPAT_FEATURES;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let label = rng.random_bool(0.5) as usize;
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let p = gaussian_vec(&mut rng, f);
        let mut x = Vec::with_capacity(group_size * f);
        for g in 0..group_size {
            let s = if label == 1 && g % 2 == 1 { -sign } else { sign };
            for pv in &p {
                let e: f64 = rng.sample(StandardNormal);
                x.push(s * pv + ROTPAT_NOISE * e);
            }
        }
        let mut y = vec![0.0; 2];
        y[label] = 1.0;
        inputs.push(TypedFeature::new(in_ty.clone(), 2, vec![x]).expect("sized above"));
        targets.push(TypedFeature::new(Task::RotPat.output_type(), 2, vec![y]).expect("2T0"));
    }
    Ok(Dataset {
        task: Task::RotPat,
        group,
        seed,
        inputs,
        targets,
    })
}

/// Class index of a one-hot (or score) target.
pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Regroups slice-major sample payloads into a [`RegularFeature`] of
/// order 1 with shape `|G| × batch × features`.
pub fn to_regular(inputs: &[TypedFeature], group_size: usize) -> Result<RegularFeature> {
    let batch = inputs.len();
    let features = inputs
        .first()
        .map(|x| x.flatten().len() / group_size)
        .unwrap_or(0);
    let mut payload = vec![0.0; group_size * batch * features];
    for (b, x) in inputs.iter().enumerate() {
        let flat = x.flatten();
        for g in 0..group_size {
            let dst = (g * batch + b) * features;
            payload[dst..dst + features].copy_from_slice(&flat[g * features..(g + 1) * features]);
        }
    }
    RegularFeature::new(group_size, 1, batch, features, payload)
}

/// Target `‖X₁‖·X₂` for `X₁, X₂` uniform in the unit ball of `ℝ³`.
pub fn gen_normprod(count: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let group = Task::NormProd.default_group();
    let in_ty = Task::NormProd.input_type(&group);
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let x1 = draw_vector(&mut rng, 3, Sampling::UnitBall);
        let x2 = draw_vector(&mut rng, 3, Sampling::UnitBall);
        let n1 = norm(&x1);
        let y: Vec<f64> = x2.iter().map(|v| n1 * v).collect();
        inputs.push(TypedFeature::new(in_ty.clone(), 3, vec![[x1, x2].concat()]).expect("2T1"));
        targets.push(TypedFeature::new(Task::NormProd.output_type(), 3, vec![y]).expect("T1"));
    }
    Dataset {
        task: Task::NormProd,
        group,
        seed,
        inputs,
        targets,
    }
}

/// Options consumed by [`generate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenOptions {
    pub group: Option<GroupSpec>,
    pub sampling: Sampling,
    pub steps: usize,
    pub dt: f64,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            group: None,
            sampling: Sampling::Gaussian,
            steps: 500,
            dt: 1e-3,
        }
    }
}

/// Generates `count` samples of any task.
pub fn generate(task: Task, count: usize, seed: u64, opts: &GenOptions) -> Result<Dataset> {
    Ok(match task {
        Task::O5 => gen_o5_with(count, seed, opts.sampling),
        Task::Inertia => gen_inertia(count, seed),
        Task::Scattering => gen_scattering(count, seed),
        Task::NBody => gen_nbody_dataset(count, opts.steps, opts.dt, seed),
        Task::RotPat => {
            let n = opts.group.and_then(|g| g.order()).unwrap_or(4);
            gen_rot_patterns(count, n, seed)?
        }
        Task::NormProd => gen_normprod(count, seed),
    })
}

/// Applies `ρ(g)` to a 3×3 row-major matrix as `R M Rᵀ`.
pub fn conjugate(r: &DMatrix<f64>, m: &[f64]) -> Vec<f64> {
    let mm = DMatrix::from_row_slice(3, 3, m);
    let out = r * mm * r.transpose();
    (0..9).map(|i| out[(i / 3, i % 3)]).collect()
}

/// Minkowski metric on `ℝ^{1,3}` as used by the scattering task.
pub fn scattering_metric() -> Metric {
    Metric::minkowski(4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn o5_target_examples() {
        let e1 = [1.0, 0.0, 0.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0, 0.0, 0.0];
        assert!((o5_target(&e1, &e1) - (1f64.sin() + 0.5)).abs() < 1e-12);
        assert!((o5_target(&e1, &e2) - (1f64.sin() - 0.5)).abs() < 1e-12);
        assert!((o5_target(&e1, &e1) - 1.34147).abs() < 1e-5);
    }

    #[test]
    fn point_mass_on_axis() {
        let i = inertia_matrix(&[1.0], &[[1.0, 0.0, 0.0]]);
        assert_eq!(i, [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn crossing_leaves_matrix_element_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = scattering_event(&mut rng);
        let swapped = [p[2], p[3], p[0], p[1]];
        let (a, b) = (matrix_element(&p), matrix_element(&swapped));
        assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn scattering_momenta_are_on_shell() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let p = scattering_event(&mut rng);
            assert!(minkowski(&p[0], &p[0]).abs() < 1e-9);
            assert!((minkowski(&p[1], &p[1]) - MUON_MASS * MUON_MASS).abs() < 1e-9);
            assert!(matrix_element(&p) > 0.0);
        }
    }

    #[test]
    fn rot_patterns_shape_and_labels() {
        let data = gen_rot_patterns(100, 4, 1).unwrap();
        let reg = to_regular(&data.inputs, 4).unwrap();
        assert_eq!(reg.slices(), 4);
        assert_eq!(reg.batch(), 100);
        assert!(gen_rot_patterns(10, 3, 1).is_err());
    }

    #[test]
    fn task_names_roundtrip() {
        for t in Task::ALL {
            assert_eq!(t.name().parse::<Task>().unwrap(), t);
        }
    }
}

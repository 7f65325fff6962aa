//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every operation appends a node to the [`Tape`]; node indices are a
//! topological order, so [`Tape::backward`] is a single reverse sweep.
//! Broadcasting is never implicit: shapes must match exactly, and
//! repetition is spelled out with [`Var::expand_last`].

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use super::tensor::{gemm, gemm_new, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Sum(usize),
    Mean(usize),
    SumLast(usize, usize),
    ExpandLast(usize, usize),
    Relu(usize),
    Sin(usize),
    Sqrt(usize),
    Square(usize),
    Abs(usize),
    Outer(usize, usize),
    Concat(Vec<usize>),
    SliceRows(usize, usize),
    Reshape(usize),
    GatherCols(usize, Rc<[usize]>),
    ScatterCols(usize, Rc<[usize]>),
    GatherAdd(usize, Rc<[usize]>, usize, Rc<[usize]>),
    GroupNorms(usize, Option<Rc<[f64]>>),
    ScaleGroups(usize, usize),
    ScaleCols(usize, usize),
    AddScaledCols(usize, usize, usize),
    GroupMix(usize, usize, Option<Rc<[f64]>>, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumLast(..) => "sum_last",
            Op::ExpandLast(..) => "expand_last",
            Op::Relu(..) => "relu",
            Op::Sin(..) => "sin",
            Op::Sqrt(..) => "sqrt",
            Op::Square(..) => "square",
            Op::Abs(..) => "abs",
            Op::Outer(..) => "outer",
            Op::Concat(..) => "concat",
            Op::SliceRows(..) => "slice",
            Op::Reshape(..) => "reshape",
            Op::GatherCols(..) => "gather_cols",
            Op::ScatterCols(..) => "scatter_cols",
            Op::GatherAdd(..) => "gather_add",
            Op::GroupNorms(..) => "group_norms",
            Op::ScaleGroups(..) => "scale_groups",
            Op::ScaleCols(..) => "scale_cols",
            Op::AddScaledCols(..) => "add_scaled_cols",
            Op::GroupMix(..) => "group_mix",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward/backward pass.
///
/// A tape is single-threaded; independent tapes can live on different
/// threads.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Tensor>>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A differentiable leaf.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.borrow_mut().push(None);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// First node (in evaluation order) holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes
            .borrow()
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.is_finite())
            .map(|(i, n)| (i, n.op.name()))
    }

    /// Propagates adjoints from a scalar `loss` and adds them into the
    /// stored leaf gradients. Calling it again without [`Tape::zero_grad`]
    /// accumulates.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(shape_err(
                "backward",
                format!("loss must be scalar, got {:?}", nodes[loss.id].value.shape()),
            ));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        adj[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let mut grads = self.grads.borrow_mut();
                match &mut grads[id] {
                    Some(t) => t.add_assign(&g),
                    slot @ None => {
                        *slot = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                    }
                }
                continue;
            }
            propagate(&nodes, &mut adj, id, &g);
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().iter_mut().for_each(|g| *g = None);
    }
}

/// Adds `f`'s contribution into the adjoint buffer of node `id`.
fn accumulate(
    nodes: &[Node],
    adj: &mut [Option<Vec<f64>>],
    id: usize,
    f: impl FnOnce(&mut [f64]),
) {
    if !nodes[id].requires_grad {
        return;
    }
    let buf = adj[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]);
    f(buf);
}

fn propagate(nodes: &[Node], adj: &mut [Option<Vec<f64>>], id: usize, g: &[f64]) {
    let node = &nodes[id];
    let val = |i: usize| nodes[i].value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, adj, *a, |ga| add_into(ga, g));
            accumulate(nodes, adj, *b, |gb| add_into(gb, g));
        }
        Op::Sub(a, b) => {
            accumulate(nodes, adj, *a, |ga| add_into(ga, g));
            accumulate(nodes, adj, *b, |gb| {
                gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y)
            });
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            accumulate(nodes, adj, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * bv[i];
                }
            });
            accumulate(nodes, adj, *b, |gb| {
                for i in 0..g.len() {
                    gb[i] += g[i] * av[i];
                }
            });
        }
        Op::Div(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            accumulate(nodes, adj, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] / bv[i];
                }
            });
            accumulate(nodes, adj, *b, |gb| {
                for i in 0..g.len() {
                    gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
                }
            });
        }
        Op::Scale(a, s) => {
            accumulate(nodes, adj, *a, |ga| {
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y)
            });
        }
        Op::AddScalar(a) => accumulate(nodes, adj, *a, |ga| add_into(ga, g)),
        Op::MatMul(a, b) => {
            let (at, bt) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (at.rows(), at.cols(), bt.cols());
            // dA = G·Bᵀ, dB = Aᵀ·G
            accumulate(nodes, adj, *a, |ga| gemm(m, n, k, g, false, bt.data(), true, ga, 1.0));
            accumulate(nodes, adj, *b, |gb| gemm(k, m, n, at.data(), true, g, false, gb, 1.0));
        }
        Op::Sum(a) => accumulate(nodes, adj, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0])),
        Op::Mean(a) => {
            let n = nodes[*a].value.len() as f64;
            accumulate(nodes, adj, *a, |ga| {
                ga.iter_mut().for_each(|x| *x += g[0] / n)
            });
        }
        Op::SumLast(a, k) => accumulate(nodes, adj, *a, |ga| {
            for (i, x) in ga.iter_mut().enumerate() {
                *x += g[i / k];
            }
        }),
        Op::ExpandLast(a, k) => accumulate(nodes, adj, *a, |ga| {
            for (i, x) in ga.iter_mut().enumerate() {
                *x += g[i * k..(i + 1) * k].iter().sum::<f64>();
            }
        }),
        Op::Relu(a) => {
            let av = val(*a);
            accumulate(nodes, adj, *a, |ga| {
                for i in 0..g.len() {
                    if av[i] > 0.0 {
                        ga[i] += g[i];
                    }
                }
            });
        }
        Op::Sin(a) => {
            let av = val(*a);
            accumulate(nodes, adj, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * av[i].cos();
                }
            });
        }
        Op::Sqrt(a) => {
            let out = node.value.data();
            accumulate(nodes, adj, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] / (2.0 * out[i]);
                }
            });
        }
        Op::Square(a) => {
            let av = val(*a);
            accumulate(nodes, adj, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += 2.0 * av[i] * g[i];
                }
            });
        }
        Op::Abs(a) => {
            let av = val(*a);
            accumulate(nodes, adj, *a, |ga| {
                for i in 0..g.len() {
                    let s = if av[i] > 0.0 {
                        1.0
                    } else if av[i] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    ga[i] += s * g[i];
                }
            });
        }
        Op::Outer(a, b) => {
            let (at, bt) = (&nodes[*a].value, &nodes[*b].value);
            let (r, p, q) = (at.rows(), at.cols(), bt.cols());
            let (av, bv) = (at.data(), bt.data());
            accumulate(nodes, adj, *a, |ga| {
                for row in 0..r {
                    for i in 0..p {
                        let gr = &g[row * p * q + i * q..row * p * q + (i + 1) * q];
                        let br = &bv[row * q..(row + 1) * q];
                        ga[row * p + i] += gr.iter().zip(br).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            });
            accumulate(nodes, adj, *b, |gb| {
                for row in 0..r {
                    for i in 0..p {
                        let a_ri = av[row * p + i];
                        let gr = &g[row * p * q + i * q..row * p * q + (i + 1) * q];
                        for j in 0..q {
                            gb[row * q + j] += a_ri * gr[j];
                        }
                    }
                }
            });
        }
        Op::Concat(parts) => {
            let mut at = 0;
            for &p in parts {
                let n = nodes[p].value.len();
                accumulate(nodes, adj, p, |gp| add_into(gp, &g[at..at + n]));
                at += n;
            }
        }
        Op::SliceRows(a, start) => {
            let cols = nodes[*a].value.cols();
            let off = start * cols;
            accumulate(nodes, adj, *a, |ga| add_into(&mut ga[off..off + g.len()], g));
        }
        Op::Reshape(a) => accumulate(nodes, adj, *a, |ga| add_into(ga, g)),
        Op::GatherCols(a, idx) => {
            let src_cols = nodes[*a].value.cols();
            let n = idx.len();
            if n == 0 {
                return;
            }
            accumulate(nodes, adj, *a, |ga| {
                for (grow, arow) in g.chunks_exact(n).zip(ga.chunks_exact_mut(src_cols)) {
                    for (v, &s) in grow.iter().zip(idx.iter()) {
                        // SAFETY: indices were validated against the source
                        // width when the node was recorded.
                        unsafe { *arow.get_unchecked_mut(s) += v };
                    }
                }
            });
        }
        Op::GatherAdd(a, ia, b, ib) => {
            for (src, idx) in [(*a, ia), (*b, ib)] {
                let src_cols = nodes[src].value.cols();
                let n = idx.len();
                if n == 0 {
                    continue;
                }
                accumulate(nodes, adj, src, |gs| {
                    for (grow, srow) in g.chunks_exact(n).zip(gs.chunks_exact_mut(src_cols)) {
                        for (v, &s) in grow.iter().zip(idx.iter()) {
                            // SAFETY: validated when the node was recorded.
                            unsafe { *srow.get_unchecked_mut(s) += v };
                        }
                    }
                });
            }
        }
        Op::ScatterCols(a, idx) => {
            let out_cols = node.value.cols();
            let n = idx.len();
            accumulate(nodes, adj, *a, |ga| {
                for (row, garow) in ga.chunks_mut(n).enumerate() {
                    let base = row * out_cols;
                    for (c, &t) in idx.iter().enumerate() {
                        garow[c] += g[base + t];
                    }
                }
            });
        }
        Op::GroupNorms(a, signs) => {
            let av = val(*a);
            let out = node.value.data();
            if out.is_empty() {
                return;
            }
            let k = av.len() / out.len();
            accumulate(nodes, adj, *a, |ga| {
                for (i, (x, gx)) in av.chunks_exact(k).zip(ga.chunks_exact_mut(k)).enumerate() {
                    let w = g[i] / out[i];
                    match signs {
                        None => gx.iter_mut().zip(x).for_each(|(d, v)| *d += w * v),
                        Some(s) => {
                            // d|q|/dq, zero at the kink like `abs`.
                            let q: f64 = x.iter().zip(s.iter()).map(|(v, e)| e * v * v).sum();
                            let w = if q > 0.0 { w } else if q < 0.0 { -w } else { 0.0 };
                            gx.iter_mut()
                                .zip(x)
                                .zip(s.iter())
                                .for_each(|((d, v), e)| *d += w * e * v);
                        }
                    }
                }
            });
        }
        Op::ScaleGroups(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let k = av.len() / bv.len().max(1);
            if k == 0 {
                return;
            }
            accumulate(nodes, adj, *a, |ga| {
                for ((gx, gg), s) in ga.chunks_exact_mut(k).zip(g.chunks_exact(k)).zip(bv) {
                    gx.iter_mut().zip(gg).for_each(|(d, v)| *d += v * s);
                }
            });
            accumulate(nodes, adj, *b, |gb| {
                for ((d, x), gg) in gb.iter_mut().zip(av.chunks_exact(k)).zip(g.chunks_exact(k)) {
                    *d += x.iter().zip(gg).map(|(u, v)| u * v).sum::<f64>();
                }
            });
        }
        Op::ScaleCols(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let n = bv.len();
            if n == 0 {
                return;
            }
            accumulate(nodes, adj, *a, |ga| {
                for (gx, gg) in ga.chunks_exact_mut(n).zip(g.chunks_exact(n)) {
                    for ((d, v), s) in gx.iter_mut().zip(gg).zip(bv) {
                        *d += v * s;
                    }
                }
            });
            accumulate(nodes, adj, *b, |gb| {
                for (x, gg) in av.chunks_exact(n).zip(g.chunks_exact(n)) {
                    for ((d, u), v) in gb.iter_mut().zip(x).zip(gg) {
                        *d += u * v;
                    }
                }
            });
        }
        Op::AddScaledCols(a, b, c) => {
            let (bv, sv) = (val(*b), val(*c));
            let n = sv.len();
            accumulate(nodes, adj, *a, |ga| add_into(ga, g));
            if n == 0 {
                return;
            }
            accumulate(nodes, adj, *b, |gb| {
                for (gx, gg) in gb.chunks_exact_mut(n).zip(g.chunks_exact(n)) {
                    for ((d, v), s) in gx.iter_mut().zip(gg).zip(sv) {
                        *d += v * s;
                    }
                }
            });
            accumulate(nodes, adj, *c, |gs| {
                for (x, gg) in bv.chunks_exact(n).zip(g.chunks_exact(n)) {
                    for ((d, u), v) in gs.iter_mut().zip(x).zip(gg) {
                        *d += u * v;
                    }
                }
            });
        }
        Op::GroupMix(a, b, signs, eps) => {
            let (hv, yv) = (val(*a), val(*b));
            if yv.is_empty() {
                return;
            }
            let k = hv.len() / yv.len();
            // n = sqrt(|q| + eps); f_t = h_t·y/n;
            // ∂f/∂h_u = g_u·y/n − (Σ_t g_t h_t)·y·sgn(q)·s_u h_u/n³.
            let mut dots = Vec::with_capacity(yv.len());
            let mut coef = Vec::with_capacity(yv.len());
            for (h, gg) in hv.chunks_exact(k).zip(g.chunks_exact(k)) {
                let q: f64 = match signs {
                    None => h.iter().map(|v| v * v).sum(),
                    Some(s) => h.iter().zip(s.iter()).map(|(v, e)| e * v * v).sum(),
                };
                let n = (q.abs() + eps).sqrt();
                let sgn = if signs.is_none() || q > 0.0 { 1.0 } else if q < 0.0 { -1.0 } else { 0.0 };
                let dot: f64 = h.iter().zip(gg).map(|(u, v)| u * v).sum();
                dots.push((dot, n));
                coef.push(sgn);
            }
            accumulate(nodes, adj, *a, |ga| {
                for (i, ((gx, gg), h)) in ga.chunks_exact_mut(k).zip(g.chunks_exact(k)).zip(hv.chunks_exact(k)).enumerate() {
                    let (dot, n) = dots[i];
                    let y = yv[i];
                    let direct = y / n;
                    let cross = dot * y * coef[i] / (n * n * n);
                    match signs {
                        None => {
                            for ((d, v), u) in gx.iter_mut().zip(gg).zip(h) {
                                *d += v * direct - cross * u;
                            }
                        }
                        Some(s) => {
                            for (((d, v), u), e) in gx.iter_mut().zip(gg).zip(h).zip(s.iter()) {
                                *d += v * direct - cross * e * u;
                            }
                        }
                    }
                }
            });
            accumulate(nodes, adj, *b, |gy| {
                for (d, (dot, n)) in gy.iter_mut().zip(&dots) {
                    *d += dot / n;
                }
            });
        }
    }
}

/// Sums of squares over consecutive groups of a fixed small size.
fn square_sums<const K: usize>(x: &[f64]) -> Vec<f64> {
    let (groups, _) = x.as_chunks::<K>();
    groups.iter().map(|g| g.iter().map(|v| v * v).sum()).collect()
}

fn scale_chunks<const K: usize>(x: &mut [f64], s: &[f64]) {
    let (groups, _) = x.as_chunks_mut::<K>();
    for (g, v) in groups.iter_mut().zip(s) {
        g.iter_mut().for_each(|u| *u *= v);
    }
}

/// Euclidean `group_mix` kernel for a fixed group size.
fn mix_chunks<const K: usize>(x: &[f64], y: &[f64], eps: f64) -> Vec<f64> {
    let (groups, _) = x.as_chunks::<K>();
    let mut out = Vec::with_capacity(x.len());
    for (g, v) in groups.iter().zip(y) {
        let q: f64 = g.iter().map(|u| u * u).sum();
        let w = v / (q + eps).sqrt();
        out.extend(g.iter().map(|u| u * w));
    }
    out
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grads.borrow()[self.id].clone()
    }

    fn unary(self, op: Op, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Var<'t>> {
        let out = f(&self.value())?;
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(out, op, rg))
    }

    fn elementwise(self, other: Var<'t>, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let a = self.value();
        let b = other.value();
        if a.shape() != b.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(a.shape().to_vec(), data)
    }

    fn binary(self, other: Var<'t>, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        let out = self.elementwise(other, op.name(), f)?;
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(out, op, rg))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| a * b)
    }

    /// Elementwise quotient. Callers divide by ε-guarded norms, so no
    /// additional guard is applied here.
    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Div(self.id, other.id), |a, b| a / b)
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, s), |t| Ok(t.map(|v| v * s)))
            .expect("scale is shape preserving")
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |t| Ok(t.map(|v| v + s)))
            .expect("add_scalar is shape preserving")
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            let b = other.value();
            if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
                return Err(shape_err(
                    "matmul",
                    format!("{:?} x {:?}", a.shape(), b.shape()),
                ));
            }
            let (m, k, n) = (a.rows(), a.cols(), b.cols());
            Tensor::matrix(m, n, gemm_new(m, k, n, a.data(), b.data()))?
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(out, Op::MatMul(self.id, other.id), rg))
    }

    pub fn sum(self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |t| Ok(Tensor::scalar(t.data().iter().sum())))
            .expect("sum")
    }

    pub fn mean(self) -> Var<'t> {
        self.unary(Op::Mean(self.id), |t| {
            Ok(Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64))
        })
        .expect("mean")
    }

    /// Sums over the last axis, dropping it.
    pub fn sum_last(self) -> Result<Var<'t>> {
        let k = *self
            .value()
            .shape()
            .last()
            .ok_or_else(|| shape_err("sum_last", "scalar input"))?;
        self.unary(Op::SumLast(self.id, k), |t| {
            let shape = t.shape()[..t.shape().len() - 1].to_vec();
            let data = t.data().chunks(k).map(|c| c.iter().sum()).collect();
            Tensor::new(shape, data)
        })
    }

    /// Appends a trailing axis of size `k`, repeating each value.
    pub fn expand_last(self, k: usize) -> Var<'t> {
        self.unary(Op::ExpandLast(self.id, k), |t| {
            let mut shape = t.shape().to_vec();
            shape.push(k);
            let mut data = Vec::with_capacity(t.len() * k);
            for &v in t.data() {
                data.extend(std::iter::repeat_n(v, k));
            }
            Tensor::new(shape, data)
        })
        .expect("expand_last")
    }

    /// Repeats a one-element tensor to `shape`.
    pub fn broadcast_scalar(self, shape: &[usize]) -> Result<Var<'t>> {
        if self.value().len() != 1 {
            return Err(shape_err("broadcast_scalar", "input is not a scalar"));
        }
        let n = shape.iter().product();
        self.reshape(&[])?.expand_last(n).reshape(shape)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |t| Ok(t.map(|v| v.max(0.0))))
            .expect("relu")
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(Op::Sin(self.id), |t| Ok(t.map(f64::sin))).expect("sin")
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(Op::Sqrt(self.id), |t| Ok(t.map(f64::sqrt))).expect("sqrt")
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.id), |t| Ok(t.map(|v| v * v)))
            .expect("square")
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(Op::Abs(self.id), |t| Ok(t.map(f64::abs))).expect("abs")
    }

    /// Row-wise Kronecker product: `[R, p] ⊗ [R, q] → [R, p·q]`.
    pub fn outer(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            let b = other.value();
            if a.rows() != b.rows() {
                return Err(shape_err(
                    "outer",
                    format!("{:?} vs {:?}", a.shape(), b.shape()),
                ));
            }
            let (r, p, q) = (a.rows(), a.cols(), b.cols());
            let mut data = Vec::with_capacity(r * p * q);
            for row in 0..r {
                let br = &b.data()[row * q..(row + 1) * q];
                for &x in &a.data()[row * p..(row + 1) * p] {
                    data.extend(br.iter().map(|y| x * y));
                }
            }
            Tensor::matrix(r, p * q, data)?
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(out, Op::Outer(self.id, other.id), rg))
    }

    /// Concatenates along the first axis; trailing axes must agree.
    pub fn concat(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs"))?;
        let tape = first.tape;
        let out = {
            let nodes = tape.nodes.borrow();
            let tail = nodes[first.id].value.shape().get(1..).unwrap_or(&[]).to_vec();
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                let t = &nodes[p.id].value;
                if t.shape().len() != tail.len() + 1 || t.shape()[1..] != tail[..] {
                    return Err(shape_err(
                        "concat",
                        format!("{:?} does not stack with trailing {:?}", t.shape(), tail),
                    ));
                }
                rows += t.rows();
                data.extend_from_slice(t.data());
            }
            let mut shape = vec![rows];
            shape.extend(tail);
            Tensor::new(shape, data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = tape.requires(&ids);
        Ok(tape.push(out, Op::Concat(ids), rg))
    }

    /// Rows `start..end` along the first axis.
    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'t>> {
        self.unary(Op::SliceRows(self.id, start), |t| {
            if start > end || end > t.rows() || t.shape().is_empty() {
                return Err(shape_err(
                    "slice",
                    format!("rows {start}..{end} of {:?}", t.shape()),
                ));
            }
            let cols = t.cols();
            let mut shape = t.shape().to_vec();
            shape[0] = end - start;
            Tensor::new(shape, t.data()[start * cols..end * cols].to_vec())
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        self.unary(Op::Reshape(self.id), |t| t.clone().reshape(shape))
    }

    /// Viewing the input as `[rows, cols]`, selects columns `idx`
    /// (repeats allowed).
    pub fn gather_cols(self, idx: Rc<[usize]>) -> Result<Var<'t>> {
        let i2 = idx.clone();
        self.unary(Op::GatherCols(self.id, idx), |t| {
            let (r, c) = (t.rows(), t.cols());
            if let Some(bad) = i2.iter().find(|&&s| s >= c) {
                return Err(shape_err("gather_cols", format!("column {bad} >= {c}")));
            }
            let n = i2.len();
            let mut data = Vec::with_capacity(r * n);
            if n > 0 {
                for row in t.data().chunks_exact(c) {
                    // SAFETY: every index was checked against `c` above.
                    data.extend(i2.iter().map(|&s| unsafe { *row.get_unchecked(s) }));
                }
            }
            Tensor::matrix(r, n, data)
        })
    }

    /// `self[:, ia] + other[:, ib]` for inputs with equal row counts and
    /// index lists of equal length.
    pub fn gather_add(self, ia: Rc<[usize]>, other: Var<'t>, ib: Rc<[usize]>) -> Result<Var<'t>> {
        let out = {
            let (x, y) = (self.value(), other.value());
            let (r, cx, cy) = (x.rows(), x.cols(), y.cols());
            if y.rows() != r || ia.len() != ib.len() {
                return Err(shape_err(
                    "gather_add",
                    format!("{:?}[{}] + {:?}[{}]", x.shape(), ia.len(), y.shape(), ib.len()),
                ));
            }
            if ia.iter().any(|&s| s >= cx) || ib.iter().any(|&s| s >= cy) {
                return Err(shape_err("gather_add", "column index out of range"));
            }
            let n = ia.len();
            let mut data = Vec::with_capacity(r * n);
            if n > 0 {
                for (xr, yr) in x.data().chunks_exact(cx).zip(y.data().chunks_exact(cy)) {
                    // SAFETY: every index was checked against its source width above.
                    data.extend(
                        ia.iter()
                            .zip(ib.iter())
                            .map(|(&i, &j)| unsafe { xr.get_unchecked(i) + yr.get_unchecked(j) }),
                    );
                }
            }
            Tensor::matrix(r, n, data)?
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(out, Op::GatherAdd(self.id, ia, other.id, ib), rg))
    }

    /// Inverse of [`Var::gather_cols`]: input column `c` is added into
    /// output column `idx[c]` of a `[rows, out_cols]` result.
    pub fn scatter_cols(self, idx: Rc<[usize]>, out_cols: usize) -> Result<Var<'t>> {
        let i2 = idx.clone();
        self.unary(Op::ScatterCols(self.id, idx), |t| {
            let (r, c) = (t.rows(), t.cols());
            if c != i2.len() {
                return Err(shape_err(
                    "scatter_cols",
                    format!("{c} columns but {} indices", i2.len()),
                ));
            }
            if let Some(bad) = i2.iter().find(|&&s| s >= out_cols) {
                return Err(shape_err("scatter_cols", format!("column {bad} >= {out_cols}")));
            }
            let mut data = vec![0.0; r * out_cols];
            if c > 0 && out_cols > 0 {
                for (src, dst) in t.data().chunks_exact(c).zip(data.chunks_exact_mut(out_cols)) {
                    for (v, &tcol) in src.iter().zip(i2.iter()) {
                        // SAFETY: every index was checked against `out_cols` above.
                        unsafe { *dst.get_unchecked_mut(tcol) += v };
                    }
                }
            }
            Tensor::matrix(r, out_cols, data)
        })
    }

    /// Treats the input as `[r, n·k]` groups of `k` consecutive entries
    /// and returns `[r, n]` values `sqrt(|Σ_t s_t x_t²| + eps)`, with signs
    /// `s` of length `k` (all `+1` when `None`).
    pub fn group_norms(self, k: usize, signs: Option<Rc<[f64]>>, eps: f64) -> Result<Var<'t>> {
        let s2 = signs.clone();
        self.unary(Op::GroupNorms(self.id, signs), |t| {
            let (r, c) = (t.rows(), t.cols());
            if k == 0 || c % k != 0 || s2.as_ref().is_some_and(|s| s.len() != k) {
                return Err(shape_err("group_norms", format!("{:?} in groups of {k}", t.shape())));
            }
            let mut data = match &s2 {
                None => match k {
                    3 => square_sums::<3>(t.data()),
                    4 => square_sums::<4>(t.data()),
                    5 => square_sums::<5>(t.data()),
                    _ => t.data().chunks_exact(k).map(|x| x.iter().map(|v| v * v).sum()).collect(),
                },
                Some(s) => t
                    .data()
                    .chunks_exact(k)
                    .map(|x| x.iter().zip(s.iter()).map(|(v, e)| e * v * v).sum())
                    .collect(),
            };
            data.iter_mut().for_each(|q: &mut f64| *q = (q.abs() + eps).sqrt());
            Tensor::matrix(r, c / k, data)
        })
    }

    /// Multiplies each group of `k = cols/n` consecutive entries of
    /// `[r, n·k]` by the matching entry of `s: [r, n]`.
    pub fn scale_groups(self, s: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let (x, sv) = (self.value(), s.value());
            let k = if sv.is_empty() { 1 } else { x.len() / sv.len() };
            if x.len() != k * sv.len() || x.rows() != sv.rows() {
                return Err(shape_err("scale_groups", format!("{:?} by {:?}", x.shape(), sv.shape())));
            }
            let mut data = x.data().to_vec();
            match k {
                3 => scale_chunks::<3>(&mut data, sv.data()),
                4 => scale_chunks::<4>(&mut data, sv.data()),
                5 => scale_chunks::<5>(&mut data, sv.data()),
                _ => {
                    for (c, v) in data.chunks_exact_mut(k).zip(sv.data()) {
                        c.iter_mut().for_each(|u| *u *= v);
                    }
                }
            }
            Tensor::new(x.shape().to_vec(), data)?
        };
        let rg = self.tape.requires(&[self.id, s.id]);
        Ok(self.tape.push(out, Op::ScaleGroups(self.id, s.id), rg))
    }

    /// Multiplies column `j` of `[r, n]` by entry `j` of a `[1, n]` scale.
    pub fn scale_cols(self, s: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let (x, sv) = (self.value(), s.value());
            if sv.rows() != 1 || x.shape().len() != 2 || x.cols() != sv.len() {
                return Err(shape_err("scale_cols", format!("{:?} by {:?}", x.shape(), sv.shape())));
            }
            let mut data = x.data().to_vec();
            if !sv.is_empty() {
                for row in data.chunks_exact_mut(sv.len()) {
                    row.iter_mut().zip(sv.data()).for_each(|(u, v)| *u *= v);
                }
            }
            Tensor::new(x.shape().to_vec(), data)?
        };
        let rg = self.tape.requires(&[self.id, s.id]);
        Ok(self.tape.push(out, Op::ScaleCols(self.id, s.id), rg))
    }

    /// `h · y / sqrt(|Σ_t s_t h_t²| + eps)` over groups of `k` consecutive
    /// entries of `h = self: [r, n·k]`, with one scalar of `y: [r, n]` per
    /// group.
    pub fn group_mix(self, y: Var<'t>, signs: Option<Rc<[f64]>>, eps: f64) -> Result<Var<'t>> {
        let out = {
            let (x, yv) = (self.value(), y.value());
            let k = if yv.is_empty() { 1 } else { x.len() / yv.len() };
            if x.len() != k * yv.len() || x.rows() != yv.rows() || signs.as_ref().is_some_and(|s| s.len() != k) {
                return Err(shape_err("group_mix", format!("{:?} by {:?}", x.shape(), yv.shape())));
            }
            let data = match (&signs, k) {
                (None, 3) => mix_chunks::<3>(x.data(), yv.data(), eps),
                (None, 4) => mix_chunks::<4>(x.data(), yv.data(), eps),
                (None, 5) => mix_chunks::<5>(x.data(), yv.data(), eps),
                _ => {
                    let mut data = x.data().to_vec();
                    for (h, &yy) in data.chunks_exact_mut(k).zip(yv.data()) {
                        let q: f64 = match &signs {
                            None => h.iter().map(|v| v * v).sum(),
                            Some(s) => h.iter().zip(s.iter()).map(|(v, e)| e * v * v).sum(),
                        };
                        let w = yy / (q.abs() + eps).sqrt();
                        h.iter_mut().for_each(|u| *u *= w);
                    }
                    data
                }
            };
            Tensor::new(x.shape().to_vec(), data)?
        };
        let rg = self.tape.requires(&[self.id, y.id]);
        Ok(self.tape.push(out, Op::GroupMix(self.id, y.id, signs, eps), rg))
    }

    /// `self + other.scale_cols(s)` in one pass.
    pub fn add_scaled_cols(self, other: Var<'t>, s: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let (x, y, sv) = (self.value(), other.value(), s.value());
            if x.shape() != y.shape() || sv.rows() != 1 || x.shape().len() != 2 || x.cols() != sv.len() {
                return Err(shape_err(
                    "add_scaled_cols",
                    format!("{:?} + {:?} by {:?}", x.shape(), y.shape(), sv.shape()),
                ));
            }
            let n = sv.len();
            let mut data = Vec::with_capacity(x.len());
            if n > 0 {
                for (xr, yr) in x.data().chunks_exact(n).zip(y.data().chunks_exact(n)) {
                    data.extend(xr.iter().zip(yr).zip(sv.data()).map(|((u, v), w)| u + v * w));
                }
            }
            Tensor::new(x.shape().to_vec(), data)?
        };
        let rg = self.tape.requires(&[self.id, other.id, s.id]);
        Ok(self.tape.push(out, Op::AddScaledCols(self.id, other.id, s.id), rg))
    }

    /// Fails with the first non-finite node if this value is not finite.
    pub fn check_finite(self) -> Result<Var<'t>> {
        if self.value().is_finite() {
            return Ok(self);
        }
        let (node, op) = self.tape.first_non_finite().unwrap_or((self.id, "unknown"));
        Err(Error::NonFinite { op, node })
    }
}

//! Message passing on fully connected particle graphs.
//!
//! [`GRepsGnn`] keeps node features as `T1` vectors: edges carry a scalar
//! message from an MLP on invariant norms and a vector message from a
//! bias-free linear map, combined by the mixing rule; nodes are updated by
//! another bias-free linear map. [`Mpnn`] is the unconstrained baseline on
//! raw coordinates.

use std::rc::Rc;

use super::grepsnet::{T0Layer, TiLinear};
use super::ops::{mix, norms, spread};
use super::{FeatureBatch, Model, ModelSpec, ParamSet};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tasks::NBODY_PARTICLES;

/// Directed edges `(receiver, sender)` over `nodes` vertices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    pub nodes: usize,
    pub edges: Vec<(usize, usize)>,
}

impl Graph {
    pub fn complete(nodes: usize) -> Self {
        let edges = (0..nodes)
            .flat_map(|i| (0..nodes).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        Self { nodes, edges }
    }

    /// Column indices mapping per-edge slots to per-node slots over a batch,
    /// with `k` components per slot. `pick` chooses receiver or sender.
    fn edge_index(&self, batch: usize, k: usize, pick: impl Fn(&(usize, usize)) -> usize) -> Rc<[usize]> {
        let (n, e) = (self.nodes, self.edges.len());
        let mut idx = Vec::with_capacity(batch * e * k);
        for b in 0..batch {
            for edge in &self.edges {
                let node = b * n + pick(edge);
                idx.extend((0..k).map(|t| node * k + t));
            }
        }
        debug_assert_eq!(idx.len(), batch * e * k);
        idx.into()
    }
}

/// Rearranges rows `first..first + nodes` of a `[rows, B·k]` input block
/// into one `[1, B·nodes·k]` row in node-major order.
fn nodes_from_rows<'t>(block: Var<'t>, first: usize, nodes: usize, k: usize) -> Result<Var<'t>> {
    let s = block.shape();
    let (rows, b) = (s[0], s[1] / k);
    let idx: Rc<[usize]> = (0..b * nodes * k)
        .map(|i| {
            let (slot, t) = (i / k, i % k);
            let (bi, n) = (slot / nodes, slot % nodes);
            ((first + n) * b + bi) * k + t
        })
        .collect();
    block.reshape(&[1, rows * b * k])?.gather_cols(idx)
}

/// Inverse of [`nodes_from_rows`] for a full `[1, B·nodes·k]` row.
fn rows_from_nodes<'t>(x: Var<'t>, nodes: usize, k: usize) -> Result<Var<'t>> {
    let b = x.shape()[1] / (nodes * k);
    let idx: Rc<[usize]> = (0..nodes * b * k)
        .map(|i| {
            let (row, rest) = (i / (b * k), i % (b * k));
            let (bi, t) = (rest / k, rest % k);
            (bi * nodes + row) * k + t
        })
        .collect();
    x.gather_cols(idx)?.reshape(&[nodes, b * k])
}

struct GnnLayer {
    edge_t0: T0Layer,
    edge_t1: TiLinear,
    node_t1: TiLinear,
    width_in: usize,
}

/// Equivariant message passing with `T1` node features.
pub struct GRepsGnn {
    spec: ModelSpec,
    params: ParamSet,
    graph: Graph,
    layers: Vec<GnnLayer>,
    out: TiLinear,
}

/// Parameter count of [`GRepsGnn`] at width `c` with `layers` rounds.
pub fn grepsgnn_param_count(c: usize, layers: usize) -> usize {
    (0..layers)
        .map(|l| {
            let ch = if l == 0 { 2 } else { c };
            (2 * ch + 1) * c + c + c * c + c + 4 * ch * c + (ch + c) * c
        })
        .sum::<usize>()
        + c
}

impl GRepsGnn {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        Self::with_graph(spec, seed, Graph::complete(NBODY_PARTICLES))
    }

    pub fn with_graph(spec: ModelSpec, seed: u64, graph: Graph) -> Result<Self> {
        let c = spec.channels;
        let mut params = ParamSet::new(seed);
        let mut layers = Vec::with_capacity(spec.layers);
        for l in 0..spec.layers {
            let ch = if l == 0 { 2 } else { c };
            layers.push(GnnLayer {
                edge_t0: T0Layer::new(&mut params, &format!("l{l}.edge_t0"), &[2 * ch + 1, c, c]),
                edge_t1: TiLinear::new(&mut params, &format!("l{l}.edge_t1"), 1, 4 * ch, c)?,
                node_t1: TiLinear::new(&mut params, &format!("l{l}.node_t1"), 1, ch + c, c)?,
                width_in: ch,
            });
        }
        let out = TiLinear::new(&mut params, "out", 1, if layers.is_empty() { 2 } else { c }, 1)?;
        Ok(Self {
            spec,
            params,
            graph,
            layers,
            out,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Runs every message-passing round. `h` is `[2, B·N·3]` (position and
    /// velocity channels), `q` is `[1, B·N]`. Returns `[c, B·N·3]`.
    pub fn propagate<'t>(&self, p: &[Var<'t>], h: Var<'t>, q: Var<'t>) -> Result<Var<'t>> {
        let k = 3;
        let n = self.graph.nodes;
        let b = q.shape()[1] / n;
        let e = self.graph.edges.len();
        let recv3 = self.graph.edge_index(b, k, |x| x.0);
        let send3 = self.graph.edge_index(b, k, |x| x.1);
        let recv1 = self.graph.edge_index(b, 1, |x| x.0);
        let send1 = self.graph.edge_index(b, 1, |x| x.1);
        let a = q.gather_cols(recv1.clone())?.mul(q.gather_cols(send1.clone())?)?;
        let a3 = spread(a, k)?.reshape(&[1, b * e * k])?;

        let mut h = h;
        for layer in &self.layers {
            let ch = layer.width_in;
            let nh = norms(h, k, None)?;
            let s_in = Var::concat(&[nh.gather_cols(recv1.clone())?, nh.gather_cols(send1.clone())?, a])?;
            let m0 = layer.edge_t0.forward(p, s_in)?;
            // W·[h_i; h_j; a·h_i; a·h_j] = W₁h_i + W₂h_j + a·(W₃h_i + W₄h_j),
            // with each product formed per node and then gathered to edges.
            let w = p[layer.edge_t1.weight_index()];
            let node_term = |j: usize| -> Result<Var<'t>> {
                w.gather_cols((j * ch..(j + 1) * ch).collect())?.matmul(h)
            };
            let direct = node_term(0)?.gather_add(recv3.clone(), node_term(1)?, send3.clone())?;
            let charged = node_term(2)?.gather_add(recv3.clone(), node_term(3)?, send3.clone())?;
            let m1 = direct.add_scaled_cols(charged, a3)?;
            let m = mix(m1, m0, k, None)?;
            let agg = m.scatter_cols(recv3.clone(), b * n * k)?;
            debug_assert_eq!(m.shape()[1], b * e * k);
            let upd = layer.node_t1.forward(p, Var::concat(&[h, agg])?)?;
            h = if upd.shape() == h.shape() { upd.add(h)? } else { upd };
        }
        Ok(h)
    }
}

impl Model for GRepsGnn {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward<'t>(&self, tape: &'t Tape, p: &[Var<'t>], x: &FeatureBatch) -> Result<Vec<Var<'t>>> {
        let n = self.graph.nodes;
        let (q_block, v_block) = match x.blocks() {
            [q, v] => (tape.constant(q.clone()), tape.constant(v.clone())),
            _ => return Err(Error::InvalidType(format!("expected {n}T0+{}T1 input", 2 * n))),
        };
        let q = nodes_from_rows(q_block, 0, n, 1)?;
        let pos = nodes_from_rows(v_block, 0, n, 3)?;
        let vel = nodes_from_rows(v_block, n, n, 3)?;
        let h = self.propagate(p, Var::concat(&[pos, vel])?, q)?;
        let y = self.out.forward(p, h)?.add(pos)?;
        Ok(vec![rows_from_nodes(y, n, 3)?])
    }
}

struct MpnnLayer {
    edge: T0Layer,
    node: T0Layer,
}

/// Message passing on raw coordinates with unconstrained MLPs.
pub struct Mpnn {
    spec: ModelSpec,
    params: ParamSet,
    graph: Graph,
    layers: Vec<MpnnLayer>,
    out: T0Layer,
}

/// Parameter count of [`Mpnn`] at width `w` with `layers` rounds.
pub fn mpnn_param_count(w: usize, layers: usize) -> usize {
    (0..layers)
        .map(|l| {
            let f = if l == 0 { 6 } else { w };
            (2 * f + 1) * w + w + w * w + w + (f + w) * w + w + w * w + w
        })
        .sum::<usize>()
        + 3 * w
        + 3
}

/// MPNN width whose parameter count best matches a [`GRepsGnn`] of width `c`.
pub fn mpnn_width_matching(c: usize, layers: usize) -> usize {
    let budget = grepsgnn_param_count(c, layers);
    (1..=4 * c + 8)
        .min_by_key(|&w| mpnn_param_count(w, layers).abs_diff(budget))
        .unwrap_or(1)
}

impl Mpnn {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let w = spec.channels;
        let mut params = ParamSet::new(seed);
        let layers = (0..spec.layers)
            .map(|l| {
                let f = if l == 0 { 6 } else { w };
                MpnnLayer {
                    edge: T0Layer::new(&mut params, &format!("l{l}.edge"), &[2 * f + 1, w, w]),
                    node: T0Layer::new(&mut params, &format!("l{l}.node"), &[f + w, w, w]),
                }
            })
            .collect();
        let out = T0Layer::new(&mut params, "out", &[if spec.layers == 0 { 6 } else { w }, 3]);
        Ok(Self {
            spec,
            params,
            graph: Graph::complete(NBODY_PARTICLES),
            layers,
            out,
        })
    }
}

/// `[1, B·N·3]` node-major vectors → `[3, B·N]` coordinate rows.
fn coords_rows<'t>(x: Var<'t>) -> Result<Var<'t>> {
    let bn = x.shape()[1] / 3;
    let idx: Rc<[usize]> = (0..3 * bn).map(|i| (i % bn) * 3 + i / bn).collect();
    x.gather_cols(idx)?.reshape(&[3, bn])
}

/// Inverse of [`coords_rows`].
fn coords_cols<'t>(x: Var<'t>) -> Result<Var<'t>> {
    let bn = x.shape()[1];
    let idx: Rc<[usize]> = (0..3 * bn).map(|i| (i % 3) * bn + i / 3).collect();
    x.reshape(&[1, 3 * bn])?.gather_cols(idx)
}

impl Model for Mpnn {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward<'t>(&self, tape: &'t Tape, p: &[Var<'t>], x: &FeatureBatch) -> Result<Vec<Var<'t>>> {
        let n = self.graph.nodes;
        let (q_block, v_block) = match x.blocks() {
            [q, v] => (tape.constant(q.clone()), tape.constant(v.clone())),
            _ => return Err(Error::InvalidType(format!("expected {n}T0+{}T1 input", 2 * n))),
        };
        let b = x.batch();
        let q = nodes_from_rows(q_block, 0, n, 1)?;
        let pos_nodes = nodes_from_rows(v_block, 0, n, 3)?;
        let pos = coords_rows(pos_nodes)?;
        let vel = coords_rows(nodes_from_rows(v_block, n, n, 3)?)?;
        let recv = self.graph.edge_index(b, 1, |e| e.0);
        let send = self.graph.edge_index(b, 1, |e| e.1);
        let a = q.gather_cols(recv.clone())?.mul(q.gather_cols(send.clone())?)?;

        let mut h = Var::concat(&[pos, vel])?;
        for layer in &self.layers {
            let e_in = Var::concat(&[h.gather_cols(recv.clone())?, h.gather_cols(send.clone())?, a])?;
            let m = layer.edge.forward(p, e_in)?.relu();
            let agg = m.scatter_cols(recv.clone(), b * n)?;
            let upd = layer.node.forward(p, Var::concat(&[h, agg])?)?;
            h = if upd.shape() == h.shape() { upd.add(h)? } else { upd };
        }
        let y = coords_cols(self.out.forward(p, h)?)?.add(pos_nodes)?;
        Ok(vec![rows_from_nodes(y, n, 3)?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::groups::GroupSpec;
    use crate::layers::ModelKind;
    use crate::tasks::Task;

    fn spec(kind: ModelKind, c: usize) -> ModelSpec {
        ModelSpec::for_task(kind, Task::NBody, GroupSpec::orthogonal(3).unwrap(), c).unwrap()
    }

    #[test]
    fn parameter_formulas_match_builders() {
        let g = GRepsGnn::new(spec(ModelKind::GRepsGnn, 6), 0).unwrap();
        assert_eq!(g.params().count(), grepsgnn_param_count(6, 4));
        let m = Mpnn::new(spec(ModelKind::Mpnn, 5), 0).unwrap();
        assert_eq!(m.params().count(), mpnn_param_count(5, 4));
    }

    #[test]
    fn isolated_node_gets_zero_message() {
        let s = ModelSpec {
            layers: 1,
            ..spec(ModelKind::GRepsGnn, 3)
        };
        let g = GRepsGnn::with_graph(s, 2, Graph { nodes: 1, edges: vec![] }).unwrap();
        let tape = Tape::new();
        let p = g.params().as_constants(&tape);
        let h = tape.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap());
        let q = tape.constant(Tensor::matrix(1, 1, vec![1.0]).unwrap());
        let out = g.propagate(&p, h, q).unwrap();
        let zeros = tape.constant(Tensor::zeros(&[3, 3]));
        let want = g.layers[0].node_t1.forward(&p, Var::concat(&[h, zeros]).unwrap()).unwrap();
        assert_eq!(*out.value(), *want.value());
    }

    #[test]
    fn node_layout_roundtrip() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 6, (0..12).map(f64::from).collect()).unwrap());
        let nodes = nodes_from_rows(x, 0, 2, 3).unwrap();
        assert_eq!(&nodes.value().data()[..6], &[0.0, 1.0, 2.0, 6.0, 7.0, 8.0]);
        assert_eq!(*rows_from_nodes(nodes, 2, 3).unwrap().value(), *x.value());
        let c = coords_rows(nodes).unwrap();
        assert_eq!(*coords_cols(c).unwrap().value(), *nodes.value());
    }
}

use std::collections::BTreeMap;

use super::ops::{add_bias, channel_kron, mix, norms, power_signs, remix, scalar_identity};
use super::{FeatureBatch, Model, ModelKind, ModelSpec, ParamSet};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::groups::{metric_form, GroupSpec, Metric};
use crate::repalgebra::TensorType;
use crate::tasks::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

/// Channel mixing for order-`i ≥ 1` features: `Y = W X` with no bias and
/// no nonlinearity. Neither can be requested; see [`TiLinear::with_options`].
#[derive(Clone, Debug)]
pub struct TiLinear {
    order: usize,
    weight: usize,
    c_in: usize,
    c_out: usize,
}

impl TiLinear {
    pub fn new(params: &mut ParamSet, name: &str, order: usize, c_in: usize, c_out: usize) -> Result<Self> {
        Self::with_options(params, name, order, c_in, c_out, false, Activation::None)
    }

    /// Fails for any bias or activation: both would break equivariance of
    /// order `i ≥ 1` features.
    pub fn with_options(
        params: &mut ParamSet,
        name: &str,
        order: usize,
        c_in: usize,
        c_out: usize,
        bias: bool,
        activation: Activation,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidModel("TiLinear acts on orders >= 1; use T0Layer".into()));
        }
        if bias {
            return Err(Error::InvalidModel(format!("{name}: T{order} layers cannot carry a bias")));
        }
        if activation != Activation::None {
            return Err(Error::InvalidModel(format!(
                "{name}: T{order} layers cannot apply a pointwise nonlinearity"
            )));
        }
        let weight = params.uniform(name, c_out, c_in);
        Ok(Self {
            order,
            weight,
            c_in,
            c_out,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn weight_index(&self) -> usize {
        self.weight
    }

    pub fn channels(&self) -> (usize, usize) {
        (self.c_in, self.c_out)
    }

    pub fn forward<'t>(&self, p: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        p[self.weight].matmul(x)
    }
}

/// Unrestricted network on invariant scalars: a stack of affine maps with
/// optional ReLU.
#[derive(Clone, Debug)]
pub struct T0Layer {
    layers: Vec<(usize, usize, Activation)>,
}

impl T0Layer {
    /// Affine layers through `dims`, ReLU between them and none at the end.
    pub fn new(params: &mut ParamSet, name: &str, dims: &[usize]) -> Self {
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let w = params.uniform(format!("{name}.{l}.w"), dims[l + 1], dims[l]);
                let b = params.bias(format!("{name}.{l}.b"), dims[l + 1], dims[l]);
                let act = if l + 1 < n { Activation::Relu } else { Activation::None };
                (w, b, act)
            })
            .collect();
        Self { layers }
    }

    /// `x` is `[in, B]`.
    pub fn forward<'t>(&self, p: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for &(w, b, act) in &self.layers {
            h = add_bias(p[w].matmul(h)?, p[b])?;
            if act == Activation::Relu {
                h = h.relu();
            }
        }
        Ok(h)
    }
}

/// Where an order-`i` path draws its inputs from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    /// The block input of the same order.
    Native,
    /// Order-0 channels times the identity (order 2 only).
    ScalarIdentity,
    /// Upward conversion `T_j^{⊗k} ⊗ T_1^{⊗r}` from order `j`.
    Power { from: usize },
}

#[derive(Clone, Debug)]
struct OrderPath {
    order: usize,
    sources: Vec<Source>,
    w1: TiLinear,
    w2: TiLinear,
}

/// One equivariant layer.
///
/// The scalar path concatenates native scalars with the invariant norms of
/// every higher-order input (ascending order) and runs a two-layer
/// [`T0Layer`] to get `Y0`. Each order-`i` path computes
/// `W₂ mix(W₁ H, Y0)` where `H` stacks its [`Source`]s. Residuals are
/// added wherever input and output channel counts agree.
#[derive(Clone, Debug)]
pub struct GRepsBlock {
    input: TensorType,
    channels: usize,
    d: usize,
    signs: Vec<Option<Vec<f64>>>,
    t0: T0Layer,
    paths: Vec<OrderPath>,
    emit_scalars: bool,
    residual: bool,
}

impl GRepsBlock {
    /// `convert` enables upward conversion sources in addition to native
    /// inputs.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        input: &TensorType,
        out_orders: &[usize],
        channels: usize,
        metric: &Metric,
        residual: bool,
        convert: bool,
    ) -> Result<Self> {
        let d = metric.dim();
        let max_order = out_orders
            .iter()
            .chain(input.terms().iter().map(|t| &t.order))
            .copied()
            .max()
            .unwrap_or(0);
        let signs = (0..=max_order)
            .map(|m| power_signs(metric, m))
            .collect::<Result<Vec<_>>>()?;
        let t0_in: usize = input.terms().iter().map(|t| t.multiplicity).sum();
        let t0 = T0Layer::new(params, &format!("{name}.t0"), &[t0_in, channels, channels]);

        let mult = |m: usize| input.multiplicity(m);
        let mut paths = Vec::new();
        for &i in out_orders.iter().filter(|&&i| i > 0) {
            let mut sources = Vec::new();
            let mut width = 0;
            if let Some(c) = mult(i) {
                sources.push(Source::Native);
                width += c;
            }
            if convert {
                if let (2, Some(c)) = (i, mult(0)) {
                    sources.push(Source::ScalarIdentity);
                    width += c;
                }
                for j in 1..i {
                    let Some(cj) = mult(j) else { continue };
                    if i % j != 0 && mult(1) != Some(cj) {
                        continue;
                    }
                    sources.push(Source::Power { from: j });
                    width += cj;
                }
            }
            if sources.is_empty() {
                return Err(Error::InvalidModel(format!(
                    "{name}: no input can produce order {i} from {input}"
                )));
            }
            let w1 = TiLinear::new(params, &format!("{name}.t{i}.w1"), i, width, channels)?;
            let w2 = TiLinear::new(params, &format!("{name}.t{i}.w2"), i, channels, channels)?;
            paths.push(OrderPath {
                order: i,
                sources,
                w1,
                w2,
            });
        }
        Ok(Self {
            input: input.clone(),
            channels,
            d,
            signs,
            t0,
            paths,
            emit_scalars: out_orders.contains(&0),
            residual,
        })
    }

    pub fn output_type(&self) -> TensorType {
        let c = self.channels;
        let mut terms: Vec<String> = Vec::new();
        if self.emit_scalars {
            terms.push(format!("{c}T0"));
        }
        terms.extend(self.paths.iter().map(|p| format!("{c}T{}", p.order)));
        terms.join("+").parse().expect("well-formed")
    }

    pub fn sources(&self, order: usize) -> Option<&[Source]> {
        self.paths
            .iter()
            .find(|p| p.order == order)
            .map(|p| p.sources.as_slice())
    }

    /// `x` maps each input order to its `[c, B·d^m]` block.
    pub fn forward<'t>(
        &self,
        p: &[Var<'t>],
        x: &BTreeMap<usize, Var<'t>>,
    ) -> Result<BTreeMap<usize, Var<'t>>> {
        for t in self.input.terms() {
            let ok = x.get(&t.order).is_some_and(|v| v.shape()[0] == t.multiplicity);
            if !ok {
                return Err(Error::InvalidType(format!(
                    "block input does not match {} at T{}",
                    self.input, t.order
                )));
            }
        }
        let k = |m: usize| self.d.pow(m as u32);
        let mut scalars = Vec::new();
        if let Some(x0) = x.get(&0) {
            scalars.push(*x0);
        }
        for (&m, v) in x.range(1..) {
            scalars.push(norms(*v, k(m), self.signs[m].as_deref())?);
        }
        let y0 = self.t0.forward(p, Var::concat(&scalars)?)?;

        let mut out = BTreeMap::new();
        if self.emit_scalars {
            out.insert(0, self.with_residual(x.get(&0), y0)?);
        }
        for path in &self.paths {
            let i = path.order;
            let mut stack = Vec::with_capacity(path.sources.len());
            for s in &path.sources {
                stack.push(match *s {
                    Source::Native => x[&i],
                    Source::ScalarIdentity => scalar_identity(x[&0], self.d)?,
                    Source::Power { from: j } => {
                        let (reps, rem) = (i / j, i % j);
                        let mut acc = x[&j];
                        let mut order = j;
                        for _ in 1..reps {
                            acc = channel_kron(acc, k(order), x[&j], k(j))?;
                            order += j;
                        }
                        for _ in 0..rem {
                            acc = channel_kron(acc, k(order), x[&1], k(1))?;
                            order += 1;
                        }
                        acc
                    }
                });
            }
            let h = path.w1.forward(p, Var::concat(&stack)?)?;
            let h = mix(h, y0, k(i), self.signs[i].as_deref())?;
            let y = path.w2.forward(p, h)?;
            out.insert(i, self.with_residual(x.get(&i), y)?);
        }
        Ok(out)
    }

    fn with_residual<'t>(&self, input: Option<&Var<'t>>, y: Var<'t>) -> Result<Var<'t>> {
        match input {
            Some(v) if self.residual && v.shape() == y.shape() => y.add(*v),
            _ => Ok(y),
        }
    }
}

/// Splits a batch into an order → block map of constants on `tape`.
pub(crate) fn blocks_on_tape<'t>(tape: &'t Tape, x: &FeatureBatch) -> BTreeMap<usize, Var<'t>> {
    x.ty()
        .terms()
        .iter()
        .zip(x.blocks())
        .map(|(t, b)| (t.order, tape.constant(b.clone())))
        .collect()
}

/// Invariant regressor for `n·T1` inputs (the O(5) and O(1,3) tasks).
///
/// Five bias-free linear maps: `W_in` lifts the inputs to `c` vectors, each
/// of two residual layers applies `H ← remix(W H) + H` with
/// `remix(H) = H·inv(H)`, then the invariant norms pass through
/// `W₄`, ReLU and `W₅` to one scalar.
#[derive(Clone, Debug)]
pub struct InvariantNet {
    spec: ModelSpec,
    params: ParamSet,
    signs: Option<Vec<f64>>,
    w_in: usize,
    hidden: Vec<usize>,
    w4: usize,
    w5: usize,
}

impl InvariantNet {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let n_in = match spec.input.terms() {
            [t] if t.order == 1 => t.multiplicity,
            _ => {
                return Err(Error::InvalidModel(format!(
                    "invariant network expects n*T1 input, got {}",
                    spec.input
                )))
            }
        };
        if spec.output != TensorType::single(1, 0) {
            return Err(Error::InvalidModel(format!("invariant network outputs T0, not {}", spec.output)));
        }
        let c = spec.channels;
        let metric = metric_form(&spec.group);
        let mut params = ParamSet::new(seed);
        let w_in = params.uniform("w_in", c, n_in);
        let hidden = (1..=2).map(|l| params.uniform(format!("w{l}"), c, c)).collect();
        let w4 = params.uniform("w4", c, c);
        let w5 = params.uniform("w5", 1, c);
        Ok(Self {
            signs: power_signs(&metric, 1)?,
            spec,
            params,
            w_in,
            hidden,
            w4,
            w5,
        })
    }
}

impl Model for InvariantNet {
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
        let k = x.dim();
        let signs = self.signs.as_deref();
        let xin = tape.constant(x.blocks()[0].clone());
        let mut h = remix(p[self.w_in].matmul(xin)?, k, signs)?;
        for &w in &self.hidden {
            h = remix(p[w].matmul(h)?, k, signs)?.add(h)?;
        }
        let s = norms(h, k, signs)?;
        let y = p[self.w5].matmul(p[self.w4].matmul(s)?.relu())?;
        Ok(vec![y])
    }
}

/// O(3)-equivariant network for `5T0+5T1 → T2`.
///
/// Three [`GRepsBlock`]s with hidden type `c(T0+T1+T2+T3)`: order 2 is fed by
/// native `T2`, scalars times the identity and `T1⊗T1`; order 3 by native
/// `T3`, `T1⊗T1⊗T1` and `T2⊗T1`. The last two blocks are residual. A final
/// bias-free `T2` map produces the output.
#[derive(Clone, Debug)]
pub struct O3Net {
    spec: ModelSpec,
    params: ParamSet,
    blocks: Vec<GRepsBlock>,
    head: TiLinear,
}

impl O3Net {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        if spec.output != TensorType::single(1, 2) {
            return Err(Error::InvalidModel(format!("O(3) network outputs T2, not {}", spec.output)));
        }
        let c = spec.channels;
        let metric = metric_form(&spec.group);
        let mut params = ParamSet::new(seed);
        let orders = [0, 1, 2, 3];
        let mut blocks = Vec::new();
        let mut ty = spec.input.clone();
        for l in 0..3 {
            let b = GRepsBlock::new(&mut params, &format!("block{l}"), &ty, &orders, c, &metric, l > 0, true)?;
            ty = b.output_type();
            blocks.push(b);
        }
        let head = TiLinear::new(&mut params, "head", 2, c, 1)?;
        Ok(Self {
            spec,
            params,
            blocks,
            head,
        })
    }

    pub fn blocks(&self) -> &[GRepsBlock] {
        &self.blocks
    }
}

impl Model for O3Net {
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
        let mut h = blocks_on_tape(tape, x);
        for b in &self.blocks {
            h = b.forward(p, &h)?;
        }
        Ok(vec![self.head.forward(p, h[&2])?])
    }
}

fn spec_for(task: Task, group: GroupSpec, channels: usize) -> Result<ModelSpec> {
    ModelSpec::for_task(ModelKind::GRepsNet, task, group, channels)
}

/// The O(5)-invariant task model; 30,300 parameters at `channels = 100`.
pub fn build_o5_model(channels: usize, seed: u64) -> Result<InvariantNet> {
    InvariantNet::new(spec_for(Task::O5, GroupSpec::orthogonal(5)?, channels)?, seed)
}

/// The O(1,3)-invariant task model: the O(5) design with Minkowski norms.
pub fn build_o13_model(channels: usize, seed: u64) -> Result<InvariantNet> {
    InvariantNet::new(spec_for(Task::Scattering, GroupSpec::lorentz(3)?, channels)?, seed)
}

/// The O(3)-equivariant inertia model.
pub fn build_o3_model(channels: usize, seed: u64) -> Result<O3Net> {
    O3Net::new(spec_for(Task::Inertia, GroupSpec::orthogonal(3)?, channels)?, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn o5_parameter_count() {
        assert_eq!(build_o5_model(100, 0).unwrap().params().count(), 30_300);
    }

    #[test]
    fn ti_linear_rejects_bias_and_activation() {
        let mut p = ParamSet::new(0);
        assert!(TiLinear::with_options(&mut p, "w", 1, 2, 2, true, Activation::None).is_err());
        assert!(TiLinear::with_options(&mut p, "w", 1, 2, 2, false, Activation::Relu).is_err());
        assert!(TiLinear::with_options(&mut p, "w", 0, 2, 2, false, Activation::None).is_err());
        assert!(TiLinear::with_options(&mut p, "w", 1, 2, 2, false, Activation::None).is_ok());
    }

    #[test]
    fn o3_sources_follow_conversion_rules() {
        let m = build_o3_model(4, 0).unwrap();
        let first = &m.blocks()[0];
        assert_eq!(first.sources(2).unwrap(), &[Source::ScalarIdentity, Source::Power { from: 1 }]);
        assert_eq!(first.sources(3).unwrap(), &[Source::Power { from: 1 }]);
        let mid = &m.blocks()[1];
        assert_eq!(
            mid.sources(3).unwrap(),
            &[Source::Native, Source::Power { from: 1 }, Source::Power { from: 2 }]
        );
    }

    #[test]
    fn zero_weights_with_residual_pass_input_through() {
        let metric = Metric::euclidean(3);
        let ty: TensorType = "2T0+2T1".parse().unwrap();
        let mut params = ParamSet::new(1);
        let block = GRepsBlock::new(&mut params, "b", &ty, &[0, 1], 2, &metric, true, false).unwrap();
        for (name, t) in params.names().to_vec().iter().zip(params.tensors_mut()) {
            if name.contains(".w1") || name.contains(".w2") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let tape = Tape::new();
        let p = params.on_tape(&tape);
        let x1 = tape.constant(Tensor::matrix(2, 6, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.5, -1.0, 2.0, 0.0, 1.0, 1.0]).unwrap());
        let x0 = tape.constant(Tensor::matrix(2, 2, vec![0.3, 0.1, -0.2, 0.7]).unwrap());
        let x = BTreeMap::from([(0, x0), (1, x1)]);
        let out = block.forward(&p, &x).unwrap();
        assert_eq!(*out[&1].value(), *x1.value());
    }
}

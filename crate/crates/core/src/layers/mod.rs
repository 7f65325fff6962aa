//! Layer primitives and the model builders.
//!
//! Every model implements [`Model`]: it owns a [`ParamSet`] and records its
//! forward pass on a [`Tape`], consuming a [`FeatureBatch`] and producing
//! one `[c, B·d^m]` var per term of its output type.

mod audit;
mod batch;
mod checkpoint;
mod gnn;
mod grepsnet;
mod mlp;
pub mod ops;
mod params;
mod regular;
mod universal;

use std::fmt;
use std::str::FromStr;

pub use audit::{audit_equivariance, gradient_check, random_batch, AuditReport, GradCheck};
pub use batch::FeatureBatch;
pub use checkpoint::{load_checkpoint, read_checkpoint_spec, save_checkpoint};
pub use gnn::{grepsgnn_param_count, mpnn_param_count, mpnn_width_matching, GRepsGnn, Graph, Mpnn};
pub use grepsnet::{
    build_o13_model, build_o3_model, build_o5_model, Activation, GRepsBlock, InvariantNet, O3Net,
    Source, T0Layer, TiLinear,
};
pub use mlp::{mlp_param_count, mlp_width_for_budget, Mlp};
pub use params::ParamSet;
pub use regular::{equitune_average, regular_action, regular_wrap_forward, PayloadAction, RegularNet};
pub use universal::{
    build_universal_scalar_frontend, build_universal_vector_model, combine_vectors,
    inner_products, ScalarFrontend, UniversalScalar, UniversalVector,
};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::groups::GroupSpec;
use crate::repalgebra::TensorType;
use crate::tasks::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    GRepsNet,
    Mlp,
    GRepsGnn,
    Mpnn,
    UniversalScalar,
    UniversalVector,
    Regular,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::GRepsNet,
        ModelKind::Mlp,
        ModelKind::GRepsGnn,
        ModelKind::Mpnn,
        ModelKind::UniversalScalar,
        ModelKind::UniversalVector,
        ModelKind::Regular,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::GRepsNet => "grepsnet",
            ModelKind::Mlp => "mlp",
            ModelKind::GRepsGnn => "grepsgnn",
            ModelKind::Mpnn => "mpnn",
            ModelKind::UniversalScalar => "universal_scalar",
            ModelKind::UniversalVector => "universal_vector",
            ModelKind::Regular => "regular",
        }
    }

    /// Whether the architecture is equivariant by construction.
    pub fn is_equivariant(&self) -> bool {
        !matches!(self, ModelKind::Mlp | ModelKind::Mpnn)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Format(format!("unknown model `{s}`")))
    }
}

/// Declarative description of a model; its string form heads checkpoints.
///
/// `channels` is the hidden width (tensors per order for equivariant
/// models, neurons for MLPs). `layers` counts hidden layers for MLPs and
/// message-passing rounds for graph models; the remaining builders have a
/// fixed depth and record it for reference.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub task: Task,
    pub group: GroupSpec,
    pub input: TensorType,
    pub hidden: TensorType,
    pub output: TensorType,
    pub channels: usize,
    pub layers: usize,
    /// Regular models only: lift order-1 slices to order 2 before the base.
    pub lift: bool,
}

impl ModelSpec {
    /// A spec with the task's natural types and the builder's fixed depth.
    pub fn for_task(kind: ModelKind, task: Task, group: GroupSpec, channels: usize) -> Result<Self> {
        let input = task.input_type(&group);
        let output = task.output_type();
        let c = channels;
        let (hidden, layers) = match (kind, task) {
            (ModelKind::GRepsNet, Task::O5 | Task::Scattering) => (TensorType::single(c, 1), 5),
            (ModelKind::GRepsNet, Task::Inertia) => {
                (format!("{c}T0+{c}T1+{c}T2+{c}T3").parse()?, 4)
            }
            (ModelKind::GRepsGnn, _) => (TensorType::single(c, 1), 4),
            (ModelKind::Mpnn, _) => (TensorType::single(c, 0), 4),
            (ModelKind::Mlp, _) => (TensorType::single(c, 0), 3),
            (ModelKind::UniversalScalar | ModelKind::UniversalVector, _) => {
                (TensorType::single(c, 0), 2)
            }
            (ModelKind::Regular, _) => (TensorType::single(c, 0), 2),
            _ => {
                return Err(Error::InvalidModel(format!(
                    "no {kind} architecture for task {task}"
                )))
            }
        };
        Ok(Self {
            kind,
            task,
            group,
            input,
            hidden,
            output,
            channels,
            layers,
            lift: kind == ModelKind::Regular,
        })
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "kind={} task={} group={} input={} hidden={} output={} channels={} layers={} lift={}",
            self.kind,
            self.task,
            self.group,
            self.input,
            self.hidden,
            self.output,
            self.channels,
            self.layers,
            self.lift
        )
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let field = |key: &str| -> Result<&str> {
            s.split_whitespace()
                .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
                .ok_or_else(|| Error::Format(format!("model spec lacks `{key}`")))
        };
        let num = |key: &str| -> Result<usize> {
            field(key)?
                .parse()
                .map_err(|_| Error::Format(format!("`{key}` is not an integer")))
        };
        Ok(Self {
            kind: field("kind")?.parse()?,
            task: field("task")?.parse()?,
            group: field("group")?.parse()?,
            input: field("input")?.parse()?,
            hidden: field("hidden")?.parse()?,
            output: field("output")?.parse()?,
            channels: num("channels")?,
            layers: num("layers")?,
            lift: field("lift")?
                .parse()
                .map_err(|_| Error::Format("`lift` is not a boolean".into()))?,
        })
    }
}

/// A trainable network.
pub trait Model {
    fn spec(&self) -> &ModelSpec;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;

    /// Records the forward pass. `p` are this model's parameters on `tape`
    /// (see [`ParamSet::on_tape`]); the result has one var per output term.
    fn forward<'t>(&self, tape: &'t Tape, p: &[Var<'t>], x: &FeatureBatch) -> Result<Vec<Var<'t>>>;

    /// Evaluates the model without recording gradients.
    fn predict(&self, x: &FeatureBatch) -> Result<FeatureBatch> {
        let tape = Tape::new();
        let p = self.params().as_constants(&tape);
        let out = self.forward(&tape, &p, x)?;
        let blocks = out
            .iter()
            .map(|v| v.check_finite().map(|v| v.value().clone()))
            .collect::<Result<Vec<_>>>()?;
        FeatureBatch::new(self.spec().output.clone(), x.dim(), x.batch(), blocks)
    }
}

/// Mean squared error over every output entry.
pub fn mse_loss<'t>(tape: &'t Tape, out: &[Var<'t>], target: &FeatureBatch) -> Result<Var<'t>> {
    if out.len() != target.blocks().len() {
        return Err(Error::InvalidModel(format!(
            "{} output blocks against {} target blocks",
            out.len(),
            target.blocks().len()
        )));
    }
    let total: usize = target.blocks().iter().map(|b| b.len()).sum();
    let mut acc: Option<Var<'t>> = None;
    for (o, t) in out.iter().zip(target.blocks()) {
        let diff = o.sub(tape.constant(t.clone()))?;
        let s = diff.square().sum();
        acc = Some(match acc {
            Some(a) => a.add(s)?,
            None => s,
        });
    }
    let sum = acc.ok_or_else(|| Error::InvalidModel("empty output".into()))?;
    Ok(sum.scale(1.0 / total as f64))
}

/// Builds any model described by `spec` with weights drawn from `seed`.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Box<dyn Model>> {
    let check_types = |want_in: &TensorType, want_out: &TensorType| -> Result<()> {
        if &spec.input != want_in || &spec.output != want_out {
            return Err(Error::InvalidModel(format!(
                "{} on {} expects {want_in} -> {want_out}, spec says {} -> {}",
                spec.kind, spec.task, spec.input, spec.output
            )));
        }
        Ok(())
    };
    check_types(&spec.task.input_type(&spec.group), &spec.task.output_type())?;
    let c = spec.channels;
    if c == 0 {
        return Err(Error::InvalidModel("channels must be positive".into()));
    }
    Ok(match (spec.kind, spec.task) {
        (ModelKind::GRepsNet, Task::O5 | Task::Scattering) => {
            Box::new(InvariantNet::new(spec.clone(), seed)?)
        }
        (ModelKind::GRepsNet, Task::Inertia) => Box::new(O3Net::new(spec.clone(), seed)?),
        (ModelKind::Mlp, _) => Box::new(Mlp::new(spec.clone(), seed)?),
        (ModelKind::GRepsGnn, Task::NBody) => Box::new(GRepsGnn::new(spec.clone(), seed)?),
        (ModelKind::Mpnn, Task::NBody) => Box::new(Mpnn::new(spec.clone(), seed)?),
        (ModelKind::UniversalScalar, Task::O5 | Task::Scattering) => {
            Box::new(UniversalScalar::new(spec.clone(), seed)?)
        }
        (ModelKind::UniversalVector, Task::NormProd) => {
            Box::new(UniversalVector::new(spec.clone(), seed)?)
        }
        (ModelKind::Regular, Task::RotPat) => Box::new(RegularNet::new(spec.clone(), seed)?),
        (kind, task) => {
            return Err(Error::InvalidModel(format!(
                "model {kind} is not available for task {task}"
            )))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_string_roundtrip() {
        let spec = ModelSpec::for_task(
            ModelKind::GRepsNet,
            Task::Scattering,
            GroupSpec::lorentz(3).unwrap(),
            16,
        )
        .unwrap();
        let s = spec.to_string();
        assert_eq!(s.parse::<ModelSpec>().unwrap(), spec);
    }

    #[test]
    fn incompatible_pairs_rejected() {
        let g = GroupSpec::orthogonal(5).unwrap();
        let spec = ModelSpec::for_task(ModelKind::GRepsGnn, Task::O5, g, 8).unwrap();
        assert!(build_model(&spec, 0).is_err());
    }
}

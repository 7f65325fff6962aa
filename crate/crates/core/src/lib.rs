//! Equivariant networks for matrix groups built from tensor-polynomial
//! feature types.
//!
//! Features are formal sums of Kronecker powers `T_m` of a group's base
//! representation. Equivariant layers only combine tensors of one order
//! linearly (no bias, no pointwise nonlinearity), while an unrestricted
//! scalar network operates on invariant norms and feeds back through a
//! mixing step. Finite groups use the regular representation instead, where
//! the group dimension is processed like a batch dimension.
//!
//! Module map:
//!
//! - [`groups`]: matrix group families, invariant metrics, sampling.
//! - [`repalgebra`]: tensor types, Kronecker powers, conversion, norms.
//! - [`autodiff`]: a small reverse-mode engine with SGD/Adam.
//! - [`layers`]: layer primitives and the task model builders.
//! - [`tasks`]: deterministic synthetic dataset generators.

pub mod autodiff;
pub mod error;
pub mod groups;
pub mod layers;
pub mod repalgebra;
pub mod tasks;

pub use error::{Error, Result};

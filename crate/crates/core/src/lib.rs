//! Desk-scale toolkit for transfer learning that adapts network architecture
//! and weights together.
//!
//! The pieces fit together like this: a [`supernet::SuperNet`] is a single-path
//! residual network whose per-stage block counts bound a family of smaller
//! architectures. It is trained once on a source task with random suffix drop
//! ([`supernet::sample_active_set`]), fine-tuned on the target task, and then
//! [`search`] walks the allocation space greedily, scoring candidates with
//! inherited weights only. The winning allocation inherits source weights
//! ([`supernet::SuperNet::inherit_weights`]) and is fine-tuned per budget.
//! [`cost`] prices allocations in multiply-accumulates so budgets can be
//! expressed in FLOPs rather than block counts, and [`data`] synthesizes
//! controllable source/target domain pairs so the whole pipeline runs on a CPU
//! in minutes.
//!
//! Everything is deterministic given a master seed: RNG streams are derived by
//! label ([`rng`]), parameter stores iterate in name order, and checkpoints and
//! reports serialize byte-identically across runs.

pub mod checkpoint;
pub mod config;
pub mod cost;
pub mod data;
pub mod error;
pub mod report;
pub mod rng;
pub mod search;
pub mod supernet;
pub mod tensor;
pub mod transfer;

pub use error::{Error, Result};

//! Distributed data-driven control over fragmented data.
//!
//! Each agent of a network holds one input/state/derivative sample of an
//! unknown linear system. From these the agents compute additive shares of
//! the state matrix, then run coupled matrix flows that converge to the
//! Lyapunov certificate or the LQR Riccati solution of the full system.
//! Centralized oracles in [`oracles`] are for validation only.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coords;
pub mod error;
pub mod flow;
pub mod graph;
pub mod lyapunov;
pub mod model;
pub mod numerics;
pub mod oracles;
pub mod riccati;
pub mod robustness;
pub mod splitting;

pub use error::{Error, Result};
pub use flow::{AgentRecord, Coupling, FlowRun, FlowSettings};
pub use graph::{laplacian, make_graph, spectral_split, CommGraph, GraphKind, SpectralSplit};
pub use numerics::{Matrix, Vector};

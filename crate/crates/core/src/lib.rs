//! Numerical laboratory for Lipschitz inverse shadowing of nonsingular flows.
//!
//! The crate is organised in five layers:
//!
//! * [`flowcore`]: state spaces (Euclidean space, flat tori), vector fields,
//!   RK4 integration with variational propagation and the uniform-bound constants.
//! * [`repar`]: piecewise-linear time reparametrizations and the `Rep(δ)` classes.
//! * [`methodlab`]: d-methods, the section-blended perturbation methods Ψ₀/Ψ₁
//!   and their defect analysis.
//! * [`orbitlin`]: along-orbit linearization, bounded solutions of the
//!   inhomogeneous difference systems, growth probes and shadow replays.
//! * [`experiment`]: configuration files and the subcommands behind the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod flowcore;
pub mod methodlab;
pub mod orbitlin;
pub mod repar;

pub use error::{Error, Result};
pub use flowcore::{FlowEngine, Point, Space, UbConstants, VectorFieldSpec};

pub use methodlab::{DMethodInstance, MethodConfig};
pub use repar::Reparam;

//! Charts, vector fields, flow integration and the uniform-bound constants.

pub mod engine;
pub mod field;
pub mod space;
pub mod ub;

pub use engine::FlowEngine;
pub use field::{FieldDef, SampleBox, VectorField, VectorFieldSpec, BUILTIN_FLOWS};
pub use space::{Point, Space, Tangent};
pub use ub::{estimate_ub_constants, G1Value, SampleSpec, UbConstants};

//! Step-by-step AR task guidance engine.
//!
//! A task query and a captured scene go in; a validated plan comes out,
//! and each step of it is compiled into world-space guidance primitives
//! anchored to the snapshot taken when the step was requested.

pub mod geometry;
pub mod plan;
pub mod scene;
pub mod vision;
pub mod compiler;
pub mod session;
pub mod eval;

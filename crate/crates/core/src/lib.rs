//! Decoupled volume fields for monocular dynamic scenes.
//!
//! A scene is represented by a static field, a time-conditioned dynamic field
//! and an optional shadow field that darkens static radiance. The crate
//! provides the composite renderer, the decoupling losses with analytic
//! gradients, an Adam trainer, procedurally generated ground-truth scenes and
//! the evaluation metrics used to check the decomposition.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod field;
pub mod imageio;
pub mod loss;
pub mod model;
pub mod render;
pub mod scene;
pub mod schedule;
pub mod train;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;

//! Estimation-of-distribution algorithms as Monte-Carlo EM over
//! exponential-family search models.

pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod model;
pub mod objectives;
pub mod oracle;
pub mod shaping;

pub use engine::{run, Population, RunSpec, Trace, UpdateRule};
pub use error::{EdaError, Result};
pub use model::{ExpectationParams, Family, ModelOptions, Point, SearchModel};
pub use objectives::{Domain, Objective};
pub use shaping::ShapingSpec;

//! EV charging-pool simulation: scenarios, plant model, prediction,
//! controllers, battery degradation and run statistics.

pub mod controllers;
pub mod degradation;
pub mod error;
pub mod metrics;
pub mod prediction;
pub mod scenario;
pub mod simengine;

pub use controllers::{Controller, ControllerConfig, ControllerKind};
pub use error::CoreError;
pub use scenario::{load_config, parse_config, Config, Scenario};
pub use simengine::Environment;

//! Simulation, estimation, declustering and diagnostics for self-exciting
//! spatio-temporal point processes.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod decluster;
pub mod diagnostics;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod inference;
pub mod intensity;
pub mod optimize;
pub mod rng;
pub mod scalar;
pub mod simulate;
pub mod svg;

pub use error::{Error, Result};

/// Double-precision aliases for the generic types.
pub mod f64 {
    pub type Event = crate::catalog::Event<f64>;
    pub type EventCatalog = crate::catalog::EventCatalog<f64>;
    pub type ObservationDomain = crate::catalog::ObservationDomain<f64>;
    pub type IntensityModel = crate::intensity::IntensityModel<f64>;
    pub type BackgroundModel = crate::intensity::BackgroundModel<f64>;
    pub type TriggeringFamily = crate::intensity::TriggeringFamily<f64>;
    pub type IntegrationMethod = crate::intensity::IntegrationMethod<f64>;
    pub type BranchingMatrix = crate::fit::BranchingMatrix<f64>;
    pub type FitResult = crate::fit::FitResult<f64>;
    pub type EmConfig = crate::fit::EmConfig<f64>;
    pub type SimConfig = crate::simulate::SimConfig<f64>;
    pub type SimResult = crate::simulate::SimResult<f64>;
}

pub use catalog::{Event, EventCatalog, ObservationDomain};
pub use fit::{em_fit, log_likelihood, BranchingMatrix, EmConfig, FitResult};
pub use intensity::{BackgroundModel, IntegrationMethod, IntensityModel, TriggeringFamily};
pub use simulate::{simulate, SimConfig, SimMethod, SimResult};

//! Tamed Euler–Maruyama simulation and least-squares drift estimation for
//! path-dependent McKean–Vlasov SDEs observed at discrete times.
//!
//! The crate is organised bottom-up:
//!
//! - [`segment`]: grid arithmetic, window segments on `[-r0, 0]` and the
//!   piecewise-linear segment built from discrete observations.
//! - [`measure`]: finite particle ensembles standing in for laws on path
//!   space, empirical integrals and an empirical W2 distance.
//! - [`model`]: the coefficient contract, the taming transform and the
//!   built-in scalar mean-field example.
//! - [`simulate`]: tamed EM paths, interacting particle systems and the
//!   deterministic limit equation.
//! - [`estimate`]: residuals, the least-squares contrast, its gradient and
//!   the minimisers (grid, Nelder–Mead, closed form for the linear example).
//! - [`asymptotics`]: quadrature of the limit functionals along the limit
//!   path and the limit covariance of the rescaled estimation error.
//! - [`experiments`]: config-driven Monte Carlo studies and CSV/JSON output.

pub mod asymptotics;
pub mod error;
pub mod estimate;
pub mod experiments;
pub mod measure;
pub mod model;
pub mod segment;
pub mod simulate;

pub use error::{Error, Result};

pub use measure::ParticleEnsemble;
pub use model::{DriftForm, ExampleModel, FnModel, Model, ThetaBox};
pub use segment::{DiscretePath, GridSpec, Segment};
pub use simulate::{LawProvider, NoiseStreams, SimConfig};
pub use estimate::{EstimationResult, Method, ObservationSet};

/// Version string embedded in every study report.
pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

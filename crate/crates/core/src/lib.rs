//! Multi-agent trajectory forecasting with dynamically evolving latent
//! interaction graphs.
//!
//! The library infers a distribution over typed directed edges between agents
//! from an observation window (the interaction graph), decodes future
//! trajectories as Gaussian mixtures conditioned on that graph, and
//! periodically re-infers the graph from a sliding window that includes its
//! own predictions, letting the edge structure evolve over the forecast.
//! Everything is verified end-to-end on a synthetic particle world whose
//! interaction structure switches mid-trajectory.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evolve;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod params;
pub mod plot;
pub mod rngutil;
pub mod sim;
pub mod tape;
pub mod train;

pub use config::ExperimentConfig;
pub use error::Error;

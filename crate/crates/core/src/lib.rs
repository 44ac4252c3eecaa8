//! Simulation core for the FindView task: an agent rotates a virtual camera
//! inside a 360 degree panorama, one degree at a time, until its view
//! matches a given target view.
//!
//! - [`projection`] renders perspective views from equirectangular images.
//! - [`corruptions`] degrades target views (blur, noise, digital, weather).
//! - [`environment`] is the episode state machine, rewards and sampler.
//! - [`metrics`] scores finished episodes.
//! - [`agents`] holds the feature-matching rule agent and an oracle.
//! - [`dataset`] catalogs panoramas, splits them and writes episode sets.

pub mod agents;
pub mod corruptions;
pub mod dataset;
pub mod environment;
pub mod metrics;
pub mod projection;
pub mod raster;

pub use environment::{Action, EnvConfig, EpisodeSpec, FindViewEnv, Pose};
pub use raster::{GrayImage, RgbImage};

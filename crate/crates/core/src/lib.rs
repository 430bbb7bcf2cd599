//! Statistical-feature discriminator and weak-cycle image translation.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod feature_stats;
pub mod generators;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod params;
pub mod resize;
pub mod spectral;
pub mod trainer;

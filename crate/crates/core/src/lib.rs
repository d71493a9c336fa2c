//! Cooperative vehicle-to-vehicle perception and forecasting at desk scale.

pub mod geom;
pub mod rng;
pub mod worldsim;
pub mod channel;
pub mod codec;
pub mod evalkit;
pub mod fusion;
pub mod pnp;
pub mod aggregate;
pub mod dataset;
pub mod train;
pub mod experiment;

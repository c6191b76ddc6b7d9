//! Fixed-impact-time optimal guidance for a constant-speed planar interceptor.
//!
//! The crate covers the whole pipeline: propagating costate-parameterized
//! extremals, turning them into a supervised dataset, fitting a small
//! feedforward network to the optimal command, and flying closed-loop
//! engagements with the network, a numerical two-point solver, or
//! proportional navigation.

pub mod acceptance;
pub mod datagen;
pub mod error;
pub mod guidance;
pub mod kinematics;
pub mod mlp;
pub mod ode;
pub mod pmp;
pub mod sim;

#[cfg(test)]
mod testing;

pub use error::{Error, Result};

//! Information geometry on the latent spaces of generative decoders.
//!
//! A decoder maps latent codes `z` to the parameters `η` of a likelihood
//! family. Pulling the Fisher-Rao metric of the family back through the
//! decoder turns the latent space into a Riemannian manifold; this crate
//! evaluates that metric (exactly, from KL probes, or from an interpolated
//! grid), computes geodesics by minimizing discretized KL energies over
//! spline curves, integrates the geodesic ODE for exponential maps, and fits
//! locally adaptive normal distributions (LAND) on the result.

pub mod cli;
pub mod decoder;
pub mod error;
pub mod families;
pub mod geodesic;
pub mod io;
pub mod land;
pub mod metric;
mod optim;
pub mod rng;
pub mod special;

pub use error::{Error, Result};
pub use decoder::DecoderMap;
pub use families::{FamilyKind, ParamPoint};
pub use rng::RngStream;

//! Whiskered invariant circles of the periodically perturbed planar
//! restricted three-body problem and their stable and unstable manifolds.

pub mod continuation;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod integrator;
pub mod jet;
pub mod manifold;
pub mod seed;
pub mod torus;

pub use error::{Error, Result};

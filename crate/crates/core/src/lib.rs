//! Randomly deleted convex bodies whose volumes differ by a fixed factor
//! while their uniform point samples are nearly indistinguishable.
//!
//! Layers, bottom up: [`sphere`] (cap measures and sampling), [`cone`]
//! (revolution cones and their intersections), [`calibration`] (paired
//! profiles by tangent envelopes), [`deletion`] (Poisson deletion bodies),
//! [`density`] (analytic single-point model) and [`experiment`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod cone;
pub mod deletion;
pub mod density;
pub mod error;
pub mod experiment;
pub mod quadrature;
pub mod rng;
pub mod special;
pub mod sphere;
pub mod stats;

pub use error::{Error, Result};

//! Numerical laboratory for weighted multidimensional ergodic averages and
//! for diffusive limits of long-range random walks on random point sets.
//!
//! The library is organized around a pipeline:
//!
//! * [`env`] generates random environments (marked point sets with symmetric
//!   jump rates on a torus) and the atomic measures they carry;
//! * [`ergodic`] computes weighted lattice averages, maximal functions, and
//!   the covering constructions behind their tail bounds;
//! * [`operator`] assembles the rescaled walk generator and applies its
//!   resolvent and semigroup;
//! * [`homog`] estimates the effective diffusion matrix through periodized
//!   corrector problems;
//! * [`refpde`] evaluates the limiting Brownian semigroup, resolvent, and
//!   periodic heat equation;
//! * [`sep`] runs the symmetric exclusion particle system;
//! * [`harness`] ties everything into reproducible, config-driven
//!   experiments with CSV reports.

#![deny(missing_docs)]
#![deny(unsafe_code)]

pub mod env;
pub mod ergodic;
pub mod error;
pub mod geom;
pub mod harness;
pub mod homog;
pub mod operator;
pub mod refpde;
pub mod rng;
pub mod sep;

pub use error::{Error, Result};

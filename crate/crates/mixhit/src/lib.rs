//! Mixing-time and hitting-time functionals of finite reversible Markov
//! chains in continuous time.
//!
//! The library builds reversible chains from kernels or symmetric edge
//! weights, decomposes them spectrally, evaluates total-variation mixing
//! profiles and hitting-time functionals (including worst-set searches), and
//! numerically certifies a family of inequalities relating the two. A gallery
//! of named chains (including the branching interval walk used as the
//! standard non-cutoff counterexample) and sequence-level cutoff diagnostics
//! sit on top, surfaced through the `mixhit` CLI.

pub mod certify;
pub mod chain;
pub mod error;
pub mod certificate;
pub mod distance;
pub mod gallery;
pub mod hitting;
pub mod spectral;

pub use chain::{Distribution, DoobTransform, LumpingMap, ReversibleChain};
pub use error::{Error, Result};
pub use spectral::{decompose, heat_kernel_oracle, SpectralData};

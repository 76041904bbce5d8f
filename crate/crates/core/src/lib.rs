//! Coherent quantum feedback for tracking and noise suppression.
//!
//! A plant with Hamiltonian `H_P` and pure target `|φ0>` is coupled to a
//! dissipative quantum controller. [`protocol`] builds the interaction and
//! controller couplings, [`spectra`] certifies the resulting closed loop and
//! bounds its error under persistent noise, [`propagate`] integrates the
//! time-dependent master equation with noise events, and [`discretize`]
//! measures how piecewise-constant interactions converge. [`qmat`] and
//! [`liouville`] provide the dense linear algebra underneath; [`scenario`]
//! holds the two-qubit example.
//!
//! ```
//! use cqfb::scenario;
//! use cqfb::spectra::unique_density_steady;
//!
//! let protocol = scenario::design(5.0)?;
//! assert!(unique_density_steady(&protocol.unit_generator())?.unique);
//! # Ok::<(), cqfb::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod discretize;
pub mod error;
pub mod liouville;
pub mod propagate;
pub mod protocol;
pub mod qmat;
pub mod scenario;
pub mod spectra;

pub use error::{Error, Result};

// The guide's code blocks run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/states.md")]
    mod states {}
    #[doc = include_str!("../../../book/src/generators.md")]
    mod generators {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
    #[doc = include_str!("../../../book/src/certificates.md")]
    mod certificates {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/discretization.md")]
    mod discretization {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

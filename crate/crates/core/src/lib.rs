//! Conditional dynamics of a non-interacting nuclear spin bath coupled to a
//! central spin that is repeatedly prepared, evolved and projectively read out.
//!
//! Post-selecting on successful readouts drives the bath through the
//! non-unitary map `V = |α|² U⁺ + |β|² U⁻`, where `U±` are the bath
//! propagators conditioned on the central spin being up or down. Repeated
//! application purifies the bath and, for inhomogeneous couplings, pairs the
//! spins into (phased) singlets.
//!
//! Two engines are provided:
//!
//! * [`dense`] evolves the full `2^N × 2^N` bath density matrix, including the
//!   readout dephasing channel.
//! * [`factored`] expands `V^M |ψ₀⟩` for product inputs into `2^M` weighted
//!   product states and works from per-spin overlaps, which scales to larger
//!   registers at moderate `M`. A Monte Carlo unraveling of the unpolarized
//!   bath sits on top of it.
//!
//! Spin operators use the Pauli convention throughout (eigenvalues `±1`).
//! Basis index bit `0` of a spin is its `|+1⟩` state; spin `0` is the most
//! significant bit of a register index.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod coupling;
pub mod dense;
pub mod error;
pub mod factored;
pub mod geometry;
pub mod linalg;
pub mod par;
pub mod propagator;
pub mod protocols;
pub mod rdm;

pub use error::{Error, Result};
pub use par::Execution;

pub use num_complex::Complex64 as C64;

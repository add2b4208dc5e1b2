//! Core algebra for first-order relational probabilistic reasoning.
//!
//! This crate hosts the language (constraints over real-valued relations),
//! grounding and renaming-orbit canonicalization, polynomial algebra with
//! exact rational coefficients, symbolic assembly of lifted sum-of-squares
//! programs, and exact verification of refutation certificates.
//!
//! Everything here is pure and `no_std` (alloc only); numeric solving and
//! all IO live in the companion `foprl` crate.

#![no_std]

extern crate alloc;

pub mod cert;
pub mod ground;
pub mod lang;
pub mod num;
pub mod parse;
pub mod poly;
pub mod sos;

pub use num::Rat;

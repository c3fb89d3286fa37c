//! Voltage sensitivity matrices for unbalanced three-phase distribution feeders.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod composite;
pub mod error;
pub mod export;
pub mod netmodel;
pub mod oracle;
pub mod powerflow;
pub mod regulator;
pub mod sensitivity;
pub mod sweep;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;

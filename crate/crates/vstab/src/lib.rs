//! Voltage-stability analysis toolkit for a radial source-line-transformer-load
//! system with an on-load tap changer (OLTC).
//!
//! The pipeline: identify a quadratic voltage-dependent load model from
//! measurements ([`loadmodel`]), trace steady-state P-V manifolds by sweeping
//! the load voltage ([`continuation`]), classify each manifold point's local
//! stability from the OLTC's linearized dynamics ([`modal`]), and cross-check
//! the classification with time-domain integration ([`tdsim`]).

// Guards are written `!(x > 0.0)` so NaN is rejected along with the
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod continuation;
pub mod loadmodel;
pub mod modal;
pub mod network;
pub mod perunit;
pub mod tdsim;

pub(crate) mod fmt;

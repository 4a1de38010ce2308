//! Cryogenic low-noise amplifier characterization toolkit.
//!
//! The crate covers the analysis chain used to qualify cryogenic LNAs:
//!
//! - [`network`]: frequency grids, two-port S-parameter networks, cascading,
//!   Touchstone and trace CSV I/O.
//! - [`trl`]: THRU-REFLECT-LINE calibration, de-embedding and verification.
//! - [`thermal`]: temperature gradients along coax runs, distributed
//!   attenuator noise and the lumped cable temperature fit.
//! - [`noise`]: the cold-attenuator Y-factor pipeline.
//! - [`metrics`]: gain flatness, P1dB, band compliance, repeatability.
//! - [`uncertainty`]: first-order propagation to the DUT noise temperature
//!   with a Monte Carlo cross-check.
//! - [`simlab`]: a simulated cryostat testbed with virtual VNA/SA instruments.
//! - [`protocol`]: the two-phase qualification runner, run records and reports.
//!
//! Data-parallel loops go through [`exec`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iteration otherwise.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod metrics;
pub mod network;
pub mod noise;
pub mod protocol;
pub mod simlab;
pub mod thermal;
pub mod trl;
pub mod uncertainty;

pub use error::{Error, Result};
pub use exec::Execution;
pub use network::{FrequencyGrid, ScalarTrace, TwoPortNetwork, Unit};

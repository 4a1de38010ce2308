//! Frequency grids, two-port S-parameter networks and trace I/O.
//!
//! Everything here is an immutable value type; operations return new
//! values and are safe to evaluate concurrently.

mod grid;
mod touchstone;
mod trace;
mod twoport;
pub mod units;

pub use grid::FrequencyGrid;
pub use touchstone::{parse_touchstone, read_touchstone, write_touchstone, DataFormat, TouchstoneOptions};
pub use trace::{read_trace_csv, write_trace_csv, ScalarTrace, Unit};
pub use twoport::{cascade, cascade_with, Mat2, TwoPortNetwork, PASSIVITY_TOLERANCE, REFERENCE_IMPEDANCE};
pub use units::{amplitude_to_db, db_to_amplitude, db_to_power, power_to_db, DbKind};

//! Constrained A-optimal experiment design for two-qubit process estimation.
//!
//! The crate models two exchange/dipole-coupled qubits with unknown coupling
//! strengths (F, G) and a known detuning, enumerates the experimentally
//! accessible product preparations and product POVMs, computes Fisher
//! information matrices for each candidate experiment, solves the A-optimal
//! design problem over the experiment simplex, simulates outcome datasets,
//! estimates parameters by maximum likelihood, and maps estimability and
//! robustness over the parameter plane.

pub mod design;
pub mod error;
pub mod estimate;
pub mod fisher;
pub mod linalg;
pub mod menu;
pub mod model;
pub mod rng;
pub mod sweep;

pub use error::{Error, Result};

//! Finite element simulation of a fast bimolecular reaction in a vortex flow.
//!
//! The two reaction invariants are advanced by backward Euler; every step is a
//! bound-constrained QP so concentrations never go negative.

pub mod assembly;
pub mod chemistry;
pub mod config;
pub mod evaluation;
pub mod flowfield;
pub mod mesh;
pub mod qp;
pub mod rtmx;
pub mod sparse;
pub mod transport;

#[cfg(any(test, feature = "oracles"))]
pub mod oracle;

pub use config::{parse_simulation_config, ConfigError, KeyValues};
pub use mesh::{ScalarField, StructuredTriMesh};
pub use transport::{run, run_with, Channel, SimError, SimulationConfig, SnapshotDataset};

//! Hamiltonian-learning laboratory: exact spin-system simulation, an
//! experiment oracle under three quantum-control models, standard-quantum-limit
//! and Heisenberg-limited learners, quantum Fisher information bounds, and
//! eigenstate-thermalization diagnostics.

pub mod bench;
pub mod estimators;
pub mod eth;
pub mod fisher;
pub mod heisenberg;
pub mod oracle;
pub mod pauli;
pub mod sim;
pub mod sql;

pub use oracle::{ControlModel, ExperimentOracle, ExperimentSpec, OracleHandle, RescaledOracle};
pub use pauli::{HamiltonianModel, Pauli, PauliString, ScaledPauli, StabilizerProductState};
pub use sim::{SpectralDecomposition, StatePrep, StateVector};

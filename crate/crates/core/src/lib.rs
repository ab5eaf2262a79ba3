//! Real-time evolution of neural-network quantum states for spin-1/2
//! lattice models.
//!
//! Wave functions are stored through their log-amplitudes `χ_θ(x)`, with
//! `ψ_θ(x) = exp χ_θ(x)`. Two propagation schemes are provided: the
//! time-dependent variational principle ([`tdvp`]) and step-wise infidelity
//! minimization against an approximate propagator ([`globalopt`]). The
//! dense [`oracle`] provides exact references for small systems.

pub mod ansatz;
pub mod checkpoint;
pub mod error;
pub mod estimators;
pub mod globalopt;
pub mod model;
pub mod observables;
pub mod oracle;
pub mod sampler;
pub mod tdvp;

pub use ansatz::{Ansatz, Architecture, LogDerivatives, ParameterVector, ProductState};
pub use error::{Error, Result};
pub use model::{Boundary, Lattice, PauliAxis, PauliOperator, PauliString, SpinConfiguration};
pub use sampler::{ChainConfig, ChainDiagnostics, Proposal, SampleSet, Sampling};

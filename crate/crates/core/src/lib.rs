//! Forward simulation and reconstruction for the interference protocol that characterizes a
//! bipartite Schmidt state `Σ_l √λ_l |λ_l⟩|u_l⟩` of prime rank `p` through measurements on the
//! controllable side only.

pub mod ensemble;
pub mod error;
pub mod forward;
pub mod harness;
pub mod io;
mod linalg;
pub mod mub;
pub mod phase;
pub mod reconstruction;

pub use ensemble::{random_ensemble, ProtocolParameters, SchmidtEnsemble, VectorRealization, Violation};
pub use error::{Error, Result};
pub use forward::{MeasurementRecord, RecordSource};
pub use mub::{build_family, HadamardFamily};
pub use phase::PrimeDim;
pub use reconstruction::{Method, ReconstructionResult};

//! Quality-diversity policy search without hand-crafted behavior
//! descriptors.
//!
//! Policies are embedded through random Fourier features of their
//! discounted state-action visitation; a calibrated, fitness-weighted PCA
//! projects those embeddings to low-dimensional descriptors; and an
//! annealing grid archive driven by CMA-ES emitters fills the descriptor
//! space with high-performing solutions. A tabular-MDP oracle harness
//! checks the embedding distances against exact kernel MMD values.
//!
//! The numeric core is generic over the scalar type via [`scalar::Real`];
//! `f64` is the default used by the CLI and the aliases below.

pub mod archive;
pub mod config;
pub mod descriptor;
pub mod driver;
pub mod embedding;
pub mod env;
pub mod error;
pub mod metrics;
pub mod optimizer;
pub mod persist;
pub mod policy;
pub mod scalar;
pub mod seeding;
pub mod theorem_check;

pub use error::{Error, Result};
pub use scalar::Real;

/// Default scalar for executables and file formats.
pub type Scalar = f64;

pub type RffMap64 = embedding::RffMap<Scalar>;
pub type PolicyEmbedding64 = embedding::PolicyEmbedding<Scalar>;
pub type CwPcaFit64 = descriptor::CwPcaFit<Scalar>;
pub type CmaEs64 = optimizer::CmaEs<Scalar>;
pub type GridArchive64 = archive::GridArchive<Scalar>;



//! Adaptive search of a face space built from eigenfaces.
//!
//! The pipeline: ingest and symmetry-filter grayscale faces ([`faceio`]),
//! fit an eigenface basis ([`eigenspace`]), model the reduced coordinates
//! as multivariate normal ([`gaussmodel`]), and propose new faces from a
//! skew-normal distribution steered toward faces an oracle accepted
//! ([`skewnormal`], [`search`]).

mod binfmt;
pub mod eigenspace;
pub mod error;
pub mod faceio;
pub mod gaussmodel;
pub mod rng;
pub mod search;
pub mod skewnormal;

pub use eigenspace::{fit_eigenmodel, Coordinates, EigenModel};
pub use error::{Error, Result};
pub use faceio::{FaceDataset, FaceVector, Geometry};
pub use gaussmodel::{fit_mvn, sample_mvn, MvnModel, NormalityReport};
pub use search::{SearchConfig, SearchResult, SearchState, SimulatedOracle};
pub use skewnormal::{SkewTarget, SnParams};

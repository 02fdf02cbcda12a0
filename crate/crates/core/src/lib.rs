//! Manifold superposition benchmark: parametric manifold zoo, sparse additive
//! mixtures, TopK sparse autoencoders, sparse-recovery theory checks, capture
//! metrics, and Ising-based unsupervised discovery of atom groups.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod codes;
pub mod error;
pub mod eval;
pub mod ising;
pub mod mixture;
pub mod recovery;
pub mod rng;
pub mod sae;
pub mod zoo;

pub use codes::CodeMatrix;
pub use error::{Error, Result};
pub use ising::{analyze_fit, discover, fit_codes, plm_fit, DiscoveredGroup, Discovery, IsingFit, Regime, SpinData};
pub use mixture::{build_zoo, generate, AmbientEmbedding, MixtureDataset, Zoo, ZooConfig};
pub use recovery::{CaptureCertificate, Dictionary};
pub use sae::{SaeModel, TrainHyper, TrainLog};
pub use zoo::{ManifoldInstance, ManifoldKind, VariantParams};

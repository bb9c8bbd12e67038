//! Cross-modal hashing with modality-specific code lengths.
//!
//! Two heterogeneous modalities `X` (n1 samples) and `Y` (n2 samples) are
//! bound together by a supervised affinity matrix `S`. Binary codes of
//! lengths `q1` and `q2` are learned by factorizing `S` through two real
//! correlation matrices `H1`, `H2` (q1 x q2), with every binary block solved
//! column by column under discrete constraints. Kernel logistic regression
//! then extends the codes to unseen samples, and `H1`/`H2` translate codes
//! between the two code spaces so that queries of one modality can be run
//! against a database of the other in Hamming space.
//!
//! Module map:
//!
//! - [`dataset`]: CSV loading, query/train splits, unpairing, synthetic data
//! - [`affinity`]: label-based affinity matrices
//! - [`codes`]: the ±1 [`CodeMatrix`](codes::CodeMatrix) and its file formats
//! - [`optimizer`]: alternating discrete optimization (H-step, column solvers, E-RCD)
//! - [`hashfn`]: anchors, RBF kernel features and per-bit kernel logistic regression
//! - [`encoder`]: out-of-sample encoding and code-space translation
//! - [`retrieval`]: popcount Hamming ranking
//! - [`eval`]: mAP, topK-precision, precision-recall, recall@K
//! - [`model`]: the binary model file
//! - [`pipeline`]: end-to-end training, evaluation and the scheme stability bench

pub mod affinity;
pub mod codes;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod hashfn;
pub mod model;
pub mod optimizer;
pub mod pipeline;
pub mod retrieval;

pub use error::{Error, Result};

/// Which of the two modalities a piece of data belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    /// First modality (images in the usual setting), code length `q1`.
    X,
    /// Second modality (texts), code length `q2`.
    Y,
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Modality::X),
            "y" => Ok(Modality::Y),
            other => Err(Error::InvalidArgument(format!("unknown modality tag '{other}'"))),
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Modality::X => f.write_str("x"),
            Modality::Y => f.write_str("y"),
        }
    }
}

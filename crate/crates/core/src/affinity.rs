//! Supervised semantic affinity between the training samples of the two modalities.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabelMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AffinityKind {
    /// Cosine similarity of multi-hot label rows.
    Inner,
    /// `exp(-‖lx - ly‖² / sigma)`.
    Rbf,
}

impl std::str::FromStr for AffinityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inner" => Ok(AffinityKind::Inner),
            "rbf" => Ok(AffinityKind::Rbf),
            other => Err(Error::InvalidArgument(format!("unknown affinity kind '{other}'"))),
        }
    }
}

/// n1 × n2 affinity matrix with entries in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub s: DMatrix<f64>,
    pub kind: AffinityKind,
    /// Squared-distance scale, only for [`AffinityKind::Rbf`].
    pub sigma: Option<f64>,
}

impl AffinityMatrix {
    /// Wraps an arbitrary matrix, checking the [0, 1] range.
    pub fn from_matrix(s: DMatrix<f64>, kind: AffinityKind) -> Result<Self> {
        if let Some(v) = s.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidData(format!("affinity entry {v} outside [0,1]")));
        }
        Ok(Self { s, kind, sigma: None })
    }

    pub fn n1(&self) -> usize {
        self.s.nrows()
    }

    pub fn n2(&self) -> usize {
        self.s.ncols()
    }
}

fn check_categories(lx: &LabelMatrix, ly: &LabelMatrix) -> Result<()> {
    if lx.categories() != ly.categories() {
        return Err(Error::Dimension(format!(
            "label category counts differ: {} vs {}",
            lx.categories(),
            ly.categories()
        )));
    }
    Ok(())
}

pub fn affinity_inner(lx: &LabelMatrix, ly: &LabelMatrix) -> Result<AffinityMatrix> {
    check_categories(lx, ly)?;
    let (a, b) = (lx.matrix(), ly.matrix());
    let na: Vec<f64> = a.row_iter().map(|r| r.norm()).collect();
    let nb: Vec<f64> = b.row_iter().map(|r| r.norm()).collect();
    let mut s = a * b.transpose();
    for j in 0..s.ncols() {
        for i in 0..s.nrows() {
            // rows are non-empty 0/1 vectors, so norms are ≥ 1
            s[(i, j)] = (s[(i, j)] / (na[i] * nb[j])).min(1.0);
        }
    }
    Ok(AffinityMatrix {
        s,
        kind: AffinityKind::Inner,
        sigma: None,
    })
}

pub fn affinity_rbf(lx: &LabelMatrix, ly: &LabelMatrix, sigma: f64) -> Result<AffinityMatrix> {
    check_categories(lx, ly)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let (a, b) = (lx.matrix(), ly.matrix());
    let s = DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let d2 = (a.row(i) - b.row(j)).norm_squared();
        (-d2 / sigma).exp()
    });
    Ok(AffinityMatrix {
        s,
        kind: AffinityKind::Rbf,
        sigma: Some(sigma),
    })
}

/// Mean squared distance between label rows over a seeded sample of 1000
/// cross-modal pairs. Falls back to 1 when every sampled pair is identical.
pub fn default_sigma(lx: &LabelMatrix, ly: &LabelMatrix, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (lx.matrix(), ly.matrix());
    let pairs = 1000;
    let total: f64 = (0..pairs)
        .map(|_| {
            let i = rng.random_range(0..a.nrows());
            let j = rng.random_range(0..b.nrows());
            (a.row(i) - b.row(j)).norm_squared()
        })
        .sum();
    let mean = total / pairs as f64;
    if mean > 0.0 {
        mean
    } else {
        1.0
    }
}

/// Builds the affinity of the requested kind, choosing sigma from the
/// labels when none is given.
pub fn build_affinity(
    lx: &LabelMatrix,
    ly: &LabelMatrix,
    kind: AffinityKind,
    sigma: Option<f64>,
    seed: u64,
) -> Result<AffinityMatrix> {
    match kind {
        AffinityKind::Inner => affinity_inner(lx, ly),
        AffinityKind::Rbf => {
            let sigma = sigma.unwrap_or_else(|| default_sigma(lx, ly, seed));
            affinity_rbf(lx, ly, sigma)
        }
    }
}

//! Similarity construction from coordinate data, and synthetic mixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{FlatClustering, PointSet};
use crate::matrix::SimilarityMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("point {0} has zero norm; cosine similarity is undefined")]
    ZeroNorm(usize),
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("unknown kernel {0:?}")]
    UnknownKind(String),
}

/// Pairwise similarity kernels.
///
/// The cosine kernel is shifted by +1 so values stay nonnegative, which the
/// whole optimization stack assumes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    /// `1 + ⟨x,y⟩ / (‖x‖‖y‖)`, in `[0, 2]`.
    CosineShifted,
    /// `exp(−‖x−y‖² / 2σ²)`, in `(0, 1]`.
    Gaussian { sigma: f64 },
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Result<Self, KernelError> {
        if sigma > 0.0 {
            Ok(KernelSpec::Gaussian { sigma })
        } else {
            Err(KernelError::BadSigma(sigma))
        }
    }
}

impl std::fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelSpec::CosineShifted => write!(f, "cosine"),
            KernelSpec::Gaussian { .. } => write!(f, "gaussian"),
        }
    }
}

/// Applies the kernel to every pair of points.
pub fn build_similarity(
    points: &PointSet,
    spec: KernelSpec,
) -> Result<SimilarityMatrix, KernelError> {
    let n = points.n();
    match spec {
        KernelSpec::CosineShifted => {
            let norms: Vec<f64> = points
                .iter()
                .map(|p| p.iter().map(|x| x * x).sum::<f64>().sqrt())
                .collect();
            if let Some(ix) = norms.iter().position(|&v| v == 0.0) {
                return Err(KernelError::ZeroNorm(ix));
            }
            Ok(SimilarityMatrix::from_fn(n, |i, j| {
                let dot: f64 = points
                    .point(i)
                    .iter()
                    .zip(points.point(j))
                    .map(|(a, b)| a * b)
                    .sum();
                // guard rounding at the boundaries of [0, 2]
                (1.0 + dot / (norms[i] * norms[j])).clamp(0.0, 2.0)
            })
            .expect("cosine similarities are nonnegative"))
        }
        KernelSpec::Gaussian { sigma } => {
            if sigma <= 0.0 {
                return Err(KernelError::BadSigma(sigma));
            }
            Ok(SimilarityMatrix::from_fn(n, |i, j| {
                (-points.squared_distance(i, j) / (2.0 * sigma * sigma)).exp()
            })
            .expect("gaussian similarities are nonnegative"))
        }
    }
}

/// One Gaussian component of a synthetic mixture.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub mean: Vec<f64>,
    /// Standard deviation of the isotropic noise.
    pub scale: f64,
    pub count: usize,
}

/// Draws a seeded sample from a mixture of isotropic Gaussians; labels are
/// the component indices. Identical seeds reproduce identical points.
pub fn synth_mixture(
    components: &[MixtureComponent],
    seed: u64,
) -> (PointSet, FlatClustering) {
    assert!(!components.is_empty());
    let dim = components[0].mean.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (ix, comp) in components.iter().enumerate() {
        assert_eq!(comp.mean.len(), dim, "components must share a dimension");
        assert!(comp.count >= 1);
        for _ in 0..comp.count {
            let p: Vec<f64> = comp
                .mean
                .iter()
                .map(|&m| m + comp.scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            points.push(p);
            labels.push(ix);
        }
    }
    (
        PointSet::new(points).expect("finite samples"),
        FlatClustering::new(labels),
    )
}

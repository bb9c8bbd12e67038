//! Per-bit kernel logistic regression hash functions over an RBF anchor map.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codes::CodeMatrix;
use crate::{Error, Result};

const KMEANS_ITERS: usize = 25;
const GAMMA_PAIRS: usize = 500;
const KLR_MAX_ITER: usize = 500;
const KLR_GTOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorScheme {
    /// Distinct training rows drawn uniformly.
    Rnd,
    /// k-means centroids.
    Km,
}

impl std::str::FromStr for AnchorScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rnd" => Ok(AnchorScheme::Rnd),
            "km" => Ok(AnchorScheme::Km),
            other => Err(Error::InvalidArgument(format!("unknown anchor scheme '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    /// m × d anchor points.
    pub anchors: DMatrix<f64>,
    pub scheme: AnchorScheme,
    /// RBF bandwidth in inverse squared-distance units.
    pub gamma: f64,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.anchors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.anchors.ncols()
    }
}

/// Hash functions of one modality: one weight column per bit, last row is the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct KlrModel {
    pub anchors: AnchorSet,
    /// (m + 1) × q.
    pub weights: DMatrix<f64>,
    pub eta: f64,
}

impl KlrModel {
    pub fn bits(&self) -> usize {
        self.weights.ncols()
    }
}

fn sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    (0..a.ncols()).map(|k| (a[(i, k)] - b[(j, k)]).powi(2)).sum()
}

/// Inverse mean squared distance between seeded random pairs of distinct rows.
fn bandwidth(features: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let n = features.nrows();
    if n < 2 {
        return 1.0;
    }
    let mut total = 0.0;
    for _ in 0..GAMMA_PAIRS {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        total += sq_dist(features, i, features, j);
    }
    let mean = total / GAMMA_PAIRS as f64;
    if mean > 0.0 {
        1.0 / mean
    } else {
        1.0
    }
}

/// Lloyd's k-means with k-means++ seeding.
fn kmeans(x: &DMatrix<f64>, k: usize, iters: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let mut centers = DMatrix::zeros(k, d);
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from(&x.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(x, i, &centers, 0)).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from(&x.row(pick));
        for (i, best) in nearest.iter_mut().enumerate() {
            *best = best.min(sq_dist(x, i, &centers, c));
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..iters {
        for (i, a) in assign.iter_mut().enumerate() {
            *a = (0..k)
                .map(|c| (c, sq_dist(x, i, &centers, c)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(c, _)| c)
                .unwrap();
        }
        let mut sums = DMatrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &c) in assign.iter().enumerate() {
            let mut row = sums.row_mut(c);
            row += x.row(i);
            counts[c] += 1;
        }
        for c in 0..k {
            // empty clusters keep their previous center
            if counts[c] > 0 {
                let mean = sums.row(c) / counts[c] as f64;
                centers.row_mut(c).copy_from(&mean);
            }
        }
    }
    centers
}

/// Picks `m` anchors from the training features of one modality and sets the
/// RBF bandwidth from 500 seeded random pairs.
pub fn sample_anchors(features: &DMatrix<f64>, m: usize, scheme: AnchorScheme, seed: u64) -> Result<AnchorSet> {
    let n = features.nrows();
    if m < 1 || m > n {
        return Err(Error::InvalidArgument(format!(
            "anchor count {m} must lie in [1, {n}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchors = match scheme {
        AnchorScheme::Rnd => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            features.select_rows(&idx[..m])
        }
        AnchorScheme::Km => kmeans(features, m, KMEANS_ITERS, &mut rng),
    };
    let gamma = bandwidth(features, &mut rng);
    Ok(AnchorSet { anchors, scheme, gamma })
}

/// RBF features against the anchors plus a trailing constant-1 bias column.
pub fn kernel_features(x: &DMatrix<f64>, a: &AnchorSet) -> Result<DMatrix<f64>> {
    if x.ncols() != a.dim() && x.nrows() > 0 {
        return Err(Error::Dimension(format!(
            "features have {} dims, anchors have {}",
            x.ncols(),
            a.dim()
        )));
    }
    let m = a.len();
    let rows: Vec<Vec<f64>> = (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let mut r: Vec<f64> = (0..m).map(|j| (-a.gamma * sq_dist(x, i, &a.anchors, j)).exp()).collect();
            r.push(1.0);
            r
        })
        .collect();
    Ok(DMatrix::from_fn(x.nrows(), m + 1, |i, j| rows[i][j]))
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Regularized logistic loss of one bit and its gradient.
///
/// `Σ_i log(1 + exp(−b_i K_i·w)) + η‖w‖²`, with the bias (last) weight
/// excluded from the penalty.
pub fn klr_loss_and_grad(k: &DMatrix<f64>, targets: &DVector<f64>, w: &DVector<f64>, eta: f64) -> (f64, DVector<f64>) {
    let z = k * w;
    let mut loss = 0.0;
    let mut resid = DVector::zeros(z.len());
    for i in 0..z.len() {
        let margin = targets[i] * z[i];
        loss += softplus(-margin);
        resid[i] = -targets[i] * logistic(-margin);
    }
    let mut grad = k.tr_mul(&resid);
    let last = w.len() - 1;
    for j in 0..last {
        loss += eta * w[j] * w[j];
        grad[j] += 2.0 * eta * w[j];
    }
    (loss, grad)
}

/// Limited-memory BFGS with Armijo backtracking.
fn lbfgs<F>(f: F, x0: DVector<f64>, max_iter: usize, gtol: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    const MEMORY: usize = 10;
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut hist: std::collections::VecDeque<(DVector<f64>, DVector<f64>, f64)> = Default::default();
    for iter in 0..max_iter {
        if !fx.is_finite() {
            return Err(Error::Numerical(format!("non-finite logistic loss at iteration {iter}")));
        }
        if g.norm() <= gtol {
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * s.dot(&q);
            q.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            q *= s.dot(y) / y.dot(y);
        } else {
            q /= g.norm().max(1.0);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
            let b = rho * y.dot(&q);
            q.axpy(a - b, s, 1.0);
        }
        let mut dir = -q;
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            hist.clear();
            dir = -&g / g.norm().max(1.0);
            slope = g.dot(&dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &x + &dir * step;
            let (fc, gc) = f(&cand);
            if fc.is_finite() && fc <= fx + 1e-4 * step * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fxn, gn)) = accepted else {
            if hist.is_empty() {
                // no further decrease representable
                break;
            }
            hist.clear();
            continue;
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if hist.len() == MEMORY {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        fx = fxn;
        g = gn;
    }
    Ok(x)
}

/// Fits one weight column per code bit against ±1 targets.
///
/// Each bit minimizes its regularized logistic loss to a gradient norm of
/// 1e-6 or 500 L-BFGS iterations, whichever comes first. Bits are fitted
/// in parallel.
pub fn train_klr(k: &DMatrix<f64>, codes: &CodeMatrix, eta: f64) -> Result<DMatrix<f64>> {
    if k.nrows() != codes.rows() {
        return Err(Error::Dimension(format!(
            "kernel features have {} rows, codes have {}",
            k.nrows(),
            codes.rows()
        )));
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!("eta must be non-negative, got {eta}")));
    }
    let columns: Vec<DVector<f64>> = (0..codes.bits())
        .into_par_iter()
        .map(|bit| {
            let targets = codes.column(bit).into_owned();
            lbfgs(
                |w| klr_loss_and_grad(k, &targets, w, eta),
                DVector::zeros(k.ncols()),
                KLR_MAX_ITER,
                KLR_GTOL,
            )
        })
        .collect::<Result<_>>()?;
    if columns.is_empty() {
        return Ok(DMatrix::zeros(k.ncols(), 0));
    }
    Ok(DMatrix::from_columns(&columns))
}

/// `Pr(h = +1 | x)` for every sample and bit.
pub fn predict_bit_probabilities(k: &DMatrix<f64>, model: &KlrModel) -> Result<DMatrix<f64>> {
    if k.ncols() != model.weights.nrows() {
        return Err(Error::Dimension(format!(
            "kernel features have {} columns, model expects {}",
            k.ncols(),
            model.weights.nrows()
        )));
    }
    // saturated scores stay strictly inside (0, 1)
    Ok((k * &model.weights).map(|z| logistic(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)))
}

/// Samples anchors, builds kernel features and fits all bits.
pub fn fit_hash_functions(
    features: &DMatrix<f64>,
    codes: &CodeMatrix,
    anchors: usize,
    scheme: AnchorScheme,
    eta: f64,
    seed: u64,
) -> Result<KlrModel> {
    let anchors = sample_anchors(features, anchors.min(features.nrows()), scheme, seed)?;
    let k = kernel_features(features, &anchors)?;
    let weights = train_klr(&k, codes, eta)?;
    Ok(KlrModel { anchors, weights, eta })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(seed: u64) -> (DMatrix<f64>, CodeMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 40;
        let x = DMatrix::from_fn(n, 2, |i, _| {
            let c = if i < n / 2 { -3.0 } else { 3.0 };
            c + rng.random_range(-0.5..0.5)
        });
        let b = DMatrix::from_fn(n, 2, |i, j| if (i < n / 2) ^ (j == 1) { 1.0 } else { -1.0 });
        (x, CodeMatrix::new(b).unwrap())
    }

    #[test]
    fn random_anchors_full_permutation() {
        let x = DMatrix::from_fn(6, 2, |i, j| (i * 2 + j) as f64);
        let a = sample_anchors(&x, 6, AnchorScheme::Rnd, 1).unwrap();
        let mut rows: Vec<f64> = (0..6).map(|i| a.anchors[(i, 0)]).collect();
        rows.sort_by(f64::total_cmp);
        assert_eq!(rows, vec![0., 2., 4., 6., 8., 10.]);
        assert!(sample_anchors(&x, 7, AnchorScheme::Rnd, 1).is_err());
        assert!(sample_anchors(&x, 0, AnchorScheme::Km, 1).is_err());
    }

    #[test]
    fn single_centroid_is_mean() {
        let x = DMatrix::from_row_slice(3, 2, &[0., 0., 3., 3., 6., 0.]);
        let a = sample_anchors(&x, 1, AnchorScheme::Km, 4).unwrap();
        assert!((a.anchors[(0, 0)] - 3.0).abs() < 1e-12);
        assert!((a.anchors[(0, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn anchors_are_seed_deterministic() {
        let (x, _) = blobs(3);
        for scheme in [AnchorScheme::Rnd, AnchorScheme::Km] {
            assert_eq!(sample_anchors(&x, 5, scheme, 8).unwrap(), sample_anchors(&x, 5, scheme, 8).unwrap());
        }
    }

    #[test]
    fn kernel_feature_shape_and_limits() {
        let (x, _) = blobs(1);
        let a = sample_anchors(&x, 4, AnchorScheme::Rnd, 2).unwrap();
        let k = kernel_features(&a.anchors, &a).unwrap();
        for j in 0..4 {
            assert_eq!(k[(j, j)], 1.0);
            assert_eq!(k[(j, 4)], 1.0);
        }
        let sharp = AnchorSet { gamma: 1e9, ..a.clone() };
        let k = kernel_features(&a.anchors, &sharp).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(k[(i, j)], if i == j { 1.0 } else { 0.0 });
            }
        }
        assert!(kernel_features(&DMatrix::zeros(2, 3), &a).is_err());
    }

    #[test]
    fn separable_fit_has_zero_training_error() {
        let (x, codes) = blobs(7);
        let model = fit_hash_functions(&x, &codes, 10, AnchorScheme::Km, 0.01, 3).unwrap();
        let k = kernel_features(&x, &model.anchors).unwrap();
        let p = predict_bit_probabilities(&k, &model).unwrap();
        for i in 0..x.nrows() {
            for b in 0..2 {
                assert_eq!(if p[(i, b)] >= 0.5 { 1.0 } else { -1.0 }, codes[(i, b)]);
            }
        }
    }

    #[test]
    fn huge_eta_gives_near_zero_weights() {
        let (x, codes) = blobs(2);
        let model = fit_hash_functions(&x, &codes, 5, AnchorScheme::Rnd, 1e9, 3).unwrap();
        // bias is unpenalized but balanced targets keep it at zero
        assert!(model.weights.amax() < 1e-6, "{}", model.weights.amax());
        let k = kernel_features(&x, &model.anchors).unwrap();
        let p = predict_bit_probabilities(&k, &model).unwrap();
        assert!(p.iter().all(|v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn probabilities_at_known_scores() {
        let a = AnchorSet { anchors: DMatrix::zeros(1, 1), scheme: AnchorScheme::Rnd, gamma: 1.0 };
        let model = KlrModel { anchors: a, weights: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 3f64.ln()]), eta: 0.0 };
        let k = DMatrix::from_row_slice(1, 2, &[0.7, 1.0]);
        let p = predict_bit_probabilities(&k, &model).unwrap();
        assert_eq!(p[(0, 0)], 0.5);
        assert!((p[(0, 1)] - 0.75).abs() < 1e-15);
        assert!(predict_bit_probabilities(&DMatrix::zeros(1, 3), &model).is_err());
        let saturating = KlrModel { weights: DMatrix::from_row_slice(2, 2, &[1e3, -1e3, 0.0, 0.0]), ..model };
        let p = predict_bit_probabilities(&DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), &saturating).unwrap();
        assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn trained_loss_not_above_zero_vector() {
        let (x, codes) = blobs(9);
        let model = fit_hash_functions(&x, &codes, 6, AnchorScheme::Rnd, 0.5, 1).unwrap();
        let k = kernel_features(&x, &model.anchors).unwrap();
        for b in 0..2 {
            let t = codes.column(b).into_owned();
            let (fit, _) = klr_loss_and_grad(&k, &t, &model.weights.column(b).into_owned(), 0.5);
            let (zero, _) = klr_loss_and_grad(&k, &t, &DVector::zeros(k.ncols()), 0.5);
            assert!(fit <= zero);
        }
    }

    #[test]
    fn row_mismatch_rejected() {
        let (_, codes) = blobs(1);
        assert!(train_klr(&DMatrix::zeros(3, 2), &codes, 0.1).is_err());
    }
}

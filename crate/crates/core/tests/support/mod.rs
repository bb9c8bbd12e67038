//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use mtfh::affinity::{AffinityKind, AffinityMatrix};
use mtfh::codes::CodeMatrix;
use mtfh::dataset::LabelMatrix;
use mtfh::optimizer::{CorrelationPair, TrainState};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn signs(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 })
}

pub fn gaussian(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn random_affinity(rng: &mut impl Rng, n1: usize, n2: usize) -> AffinityMatrix {
    AffinityMatrix::from_matrix(DMatrix::from_fn(n1, n2, |_, _| rng.random::<f64>()), AffinityKind::Inner).unwrap()
}

pub fn random_state(rng: &mut impl Rng, n1: usize, n2: usize, q1: usize, q2: usize) -> TrainState {
    let code = |rng: &mut _, r, c| CodeMatrix::new(signs(rng, r, c)).unwrap();
    TrainState {
        u: code(rng, n1, q1),
        v: code(rng, n2, q2),
        uhat: code(rng, n2, q1),
        vhat: code(rng, n1, q2),
        h: CorrelationPair { h1: gaussian(rng, q1, q2), h2: gaussian(rng, q1, q2) },
        initial_objective: f64::NAN,
        objective_trace: Vec::new(),
    }
}

/// Objective written out entry by entry.
pub fn reference_objective(s: &DMatrix<f64>, st: &TrainState, alpha: f64, beta: f64, lambda: f64) -> f64 {
    let (u, v, uh, vh) = (st.u.as_matrix(), st.v.as_matrix(), st.uhat.as_matrix(), st.vhat.as_matrix());
    let (h1, h2) = (&st.h.h1, &st.h.h2);
    let (n1, n2) = s.shape();
    let (q1, q2) = (u.ncols(), v.ncols());
    let (mut fx, mut fy) = (0.0, 0.0);
    for i in 0..n1 {
        for j in 0..n2 {
            let mut a = 0.0;
            for l in 0..q1 {
                a += u[(i, l)] * uh[(j, l)];
            }
            let mut b = 0.0;
            for k in 0..q2 {
                b += vh[(i, k)] * v[(j, k)];
            }
            fx += (s[(i, j)] - a / q1 as f64).powi(2);
            fy += (s[(i, j)] - b / q2 as f64).powi(2);
        }
    }
    let mut link = 0.0;
    for j in 0..n2 {
        for l in 0..q1 {
            let mut a = 0.0;
            for k in 0..q2 {
                a += v[(j, k)] * h1[(l, k)];
            }
            link += (uh[(j, l)] - a).powi(2);
        }
    }
    for i in 0..n1 {
        for k in 0..q2 {
            let mut a = 0.0;
            for l in 0..q1 {
                a += u[(i, l)] * h2[(l, k)];
            }
            link += (vh[(i, k)] - a).powi(2);
        }
    }
    let reg: f64 = h1.iter().chain(h2.iter()).map(|x| x * x).sum();
    alpha * fx + (1.0 - alpha) * fy + beta * link + lambda * reg
}

/// Every ±1 vector of length `n`.
pub fn all_sign_vectors(n: usize) -> impl Iterator<Item = Vec<f64>> {
    (0u32..1 << n).map(move |m| (0..n).map(|i| if m >> i & 1 == 1 { 1.0 } else { -1.0 }).collect())
}

pub fn random_labels(rng: &mut impl Rng, n: usize, c: usize) -> LabelMatrix {
    let m = DMatrix::from_fn(n, c, |_, _| if rng.random_bool(0.3) { 1.0 } else { 0.0 });
    let mut m = m;
    for i in 0..n {
        if m.row(i).iter().all(|v| *v == 0.0) {
            m[(i, rng.random_range(0..c))] = 1.0;
        }
    }
    LabelMatrix::new(m).unwrap()
}

pub fn shares(a: &LabelMatrix, i: usize, b: &LabelMatrix, j: usize) -> bool {
    (0..a.categories()).any(|k| a.matrix()[(i, k)] == 1.0 && b.matrix()[(j, k)] == 1.0)
}

/// Hamming distance by counting differing entries.
pub fn count_diff(a: &[f64], b: &[f64]) -> u32 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u32
}

//! Alternating discrete optimization of the regularized tri-factorization objective
//!
//! ```text
//! α‖S − UÛᵀ/q1‖² + (1−α)‖S − V̂Vᵀ/q2‖²
//!   + β(‖Û − VH1ᵀ‖² + ‖V̂ − UH2‖²) + λ(‖H1‖² + ‖H2‖²)
//! ```
//!
//! over U ∈ {±1}^{n1×q1}, V ∈ {±1}^{n2×q2}, Û ∈ {±1}^{n2×q1},
//! V̂ ∈ {±1}^{n1×q2} and real H1, H2 ∈ R^{q1×q2}.
//!
//! Each outer iteration solves H1, H2 in closed form and then updates the
//! four binary blocks in the order U, Û, V, V̂. A binary block is updated one
//! column at a time; with all other columns fixed, the objective is linear
//! in the free column and is minimized exactly by a sign.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::AffinityMatrix;
use crate::codes::{sign, CodeMatrix};
use crate::{Error, Result};

/// Column update schedule for the binary blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Ensemble of `rounds` random-order passes combined by majority vote.
    Ercd,
    /// One fixed-order pass over the columns.
    Dcc,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ercd" => Ok(Scheme::Ercd),
            "dcc" => Ok(Scheme::Dcc),
            other => Err(Error::InvalidArgument(format!("unknown scheme '{other}'"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Ercd => "ercd",
            Scheme::Dcc => "dcc",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Code length of modality X.
    pub q1: usize,
    /// Code length of modality Y.
    pub q2: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    /// Ensemble rounds, odd.
    pub rounds: usize,
    pub max_iter: usize,
    /// Stop when the relative objective change falls below this.
    pub tol: f64,
    pub seed: u64,
    pub scheme: Scheme,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            q1: 16,
            q2: 16,
            alpha: 0.5,
            beta: 0.1,
            lambda: 0.1,
            rounds: 3,
            max_iter: 20,
            tol: 1e-4,
            seed: 0,
            scheme: Scheme::Ercd,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.q1 < 1 || self.q2 < 1 {
            return bad(format!("code lengths must be ≥ 1 (q1={}, q2={})", self.q1, self.q2));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0,1), got {}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.rounds == 0 || self.rounds % 2 == 0 {
            return bad(format!("ensemble rounds must be odd, got {}", self.rounds));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be ≥ 1".into());
        }
        if !(self.tol >= 0.0) {
            return bad(format!("tol must be non-negative, got {}", self.tol));
        }
        Ok(())
    }
}

/// Correlation matrices H1, H2, both q1 × q2.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationPair {
    pub h1: DMatrix<f64>,
    pub h2: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// n1 × q1 codes of X.
    pub u: CodeMatrix,
    /// n2 × q2 codes of Y.
    pub v: CodeMatrix,
    /// n2 × q1 auxiliary codes of Y in the X code space.
    pub uhat: CodeMatrix,
    /// n1 × q2 auxiliary codes of X in the Y code space.
    pub vhat: CodeMatrix,
    pub h: CorrelationPair,
    /// Objective before the first iteration.
    pub initial_objective: f64,
    /// Objective after each completed iteration.
    pub objective_trace: Vec<f64>,
}

/// The four binary blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    U,
    Uhat,
    V,
    Vhat,
}

impl TrainState {
    pub fn block(&self, b: Block) -> &CodeMatrix {
        match b {
            Block::U => &self.u,
            Block::Uhat => &self.uhat,
            Block::V => &self.v,
            Block::Vhat => &self.vhat,
        }
    }

    fn block_mut(&mut self, b: Block) -> &mut CodeMatrix {
        match b {
            Block::U => &mut self.u,
            Block::Uhat => &mut self.uhat,
            Block::V => &mut self.v,
            Block::Vhat => &mut self.vhat,
        }
    }

    /// Replaces one binary block.
    pub fn with_block(&self, b: Block, codes: CodeMatrix) -> TrainState {
        let mut st = self.clone();
        *st.block_mut(b) = codes;
        st
    }

    /// Seeded start: standard-normal H1, H2 and uniform ±1 codes.
    pub fn random(n1: usize, n2: usize, q1: usize, q2: usize, rng: &mut impl Rng) -> TrainState {
        let mut h = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
        let h1 = h(q1, q2);
        let h2 = h(q1, q2);
        let mut codes = |r: usize, c: usize| {
            CodeMatrix::from_signs(&DMatrix::from_fn(r, c, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 }))
        };
        let u = codes(n1, q1);
        let uhat = codes(n2, q1);
        let v = codes(n2, q2);
        let vhat = codes(n1, q2);
        TrainState {
            u,
            v,
            uhat,
            vhat,
            h: CorrelationPair { h1, h2 },
            initial_objective: f64::NAN,
            objective_trace: Vec::new(),
        }
    }
}

fn check_dims(s: &AffinityMatrix, st: &TrainState) -> Result<()> {
    let (n1, n2) = (s.n1(), s.n2());
    let (q1, q2) = (st.u.bits(), st.v.bits());
    let expect = [
        ("U", &st.u, n1, q1),
        ("V", &st.v, n2, q2),
        ("Û", &st.uhat, n2, q1),
        ("V̂", &st.vhat, n1, q2),
    ];
    for (name, m, r, c) in expect {
        if m.rows() != r || m.bits() != c {
            return Err(Error::Dimension(format!(
                "{name} is {}×{}, expected {r}×{c}",
                m.rows(),
                m.bits()
            )));
        }
    }
    for (name, h) in [("H1", &st.h.h1), ("H2", &st.h.h2)] {
        if h.shape() != (q1, q2) {
            return Err(Error::Dimension(format!(
                "{name} is {}×{}, expected {q1}×{q2}",
                h.nrows(),
                h.ncols()
            )));
        }
    }
    Ok(())
}

/// Value of the regularized objective at `st`.
pub fn objective(s: &AffinityMatrix, st: &TrainState, cfg: &OptimizerConfig) -> Result<f64> {
    check_dims(s, st)?;
    let (q1, q2) = (st.u.bits() as f64, st.v.bits() as f64);
    let (u, v, uh, vh) = (st.u.as_matrix(), st.v.as_matrix(), st.uhat.as_matrix(), st.vhat.as_matrix());
    let (h1, h2) = (&st.h.h1, &st.h.h2);
    let fit_x = (&s.s - u * uh.transpose() / q1).norm_squared();
    let fit_y = (&s.s - vh * v.transpose() / q2).norm_squared();
    let link = (uh - v * h1.transpose()).norm_squared() + (vh - u * h2).norm_squared();
    let reg = h1.norm_squared() + h2.norm_squared();
    Ok(cfg.alpha * fit_x + (1.0 - cfg.alpha) * fit_y + cfg.beta * link + cfg.lambda * reg)
}

/// Solves `(AᵀA + μI) X = AᵀB` for X, falling back to the least-norm
/// least-squares solution of `AX = B` when μ = 0 or the system is singular.
fn ridge_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, mu: f64) -> Result<DMatrix<f64>> {
    let q = a.ncols();
    if mu > 0.0 {
        let gram = a.tr_mul(a) + DMatrix::identity(q, q) * mu;
        if let Some(chol) = gram.cholesky() {
            return Ok(chol.solve(&a.tr_mul(b)));
        }
        log::warn!("ridge system not positive definite; using least-norm solve");
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = 1e-12 * smax * a.nrows().max(a.ncols()) as f64;
    let sol = svd.solve(b, eps).map_err(|e| Error::Numerical(e.to_string()))?;
    if mu > 0.0 {
        return Ok(sol);
    }
    if svd.singular_values.iter().any(|&sv| sv <= eps) {
        log::warn!("H-step system is singular with lambda = 0; using least-norm solve");
    }
    Ok(sol)
}

/// Closed-form H-step:
/// `H1 = ÛᵀV(VᵀV + λ/β I)⁻¹`, `H2 = (UᵀU + λ/β I)⁻¹UᵀV̂`.
pub fn update_h(st: &TrainState, beta: f64, lambda: f64) -> Result<CorrelationPair> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let (u, v) = (st.u.as_matrix(), st.v.as_matrix());
    if st.uhat.rows() != v.nrows() || st.vhat.rows() != u.nrows() {
        return Err(Error::Dimension("auxiliary code rows do not match U/V".into()));
    }
    let mu = lambda / beta;
    let h1 = ridge_solve(v, st.uhat.as_matrix(), mu)?.transpose();
    let h2 = ridge_solve(u, st.vhat.as_matrix(), mu)?;
    if h1.iter().chain(h2.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite correlation matrix".into()));
    }
    Ok(CorrelationPair { h1, h2 })
}

/// Exact minimizer of the objective over column `col` of `block`, all other
/// variables held fixed. `current` stands in for the block's value in `st`
/// (E-RCD passes work on private copies of the block).
fn column_argument(
    block: Block,
    col: usize,
    current: &DMatrix<f64>,
    st: &TrainState,
    s: &DMatrix<f64>,
    alpha: f64,
    beta: f64,
) -> DVector<f64> {
    let (h1, h2) = (&st.h.h1, &st.h.h2);
    match block {
        Block::U => {
            let u = current;
            let uh = st.uhat.as_matrix();
            let q1 = u.ncols() as f64;
            let uh_l = uh.column(col);
            // p1 = α/q1 S û + β V̂ h2ᵀ
            let p = s * uh_l * (alpha / q1) + st.vhat.as_matrix() * h2.row(col).transpose() * beta;
            let mut w = uh.tr_mul(&uh_l) * (alpha / (q1 * q1));
            let mut g = h2 * h2.row(col).transpose() * beta;
            w[col] = 0.0;
            g[col] = 0.0;
            p - u * (w + g)
        }
        Block::Uhat => {
            let uh = current;
            let u = st.u.as_matrix();
            let q1 = u.ncols() as f64;
            let u_l = u.column(col);
            // p2 = α/q1 Sᵀ u + β V h1_rowᵀ
            let p = s.tr_mul(&u_l) * (alpha / q1) + st.v.as_matrix() * h1.row(col).transpose() * beta;
            let mut w = u.tr_mul(&u_l) * (alpha / (q1 * q1));
            w[col] = 0.0;
            p - uh * w
        }
        Block::V => {
            let v = current;
            let vh = st.vhat.as_matrix();
            let q2 = v.ncols() as f64;
            let vh_t = vh.column(col);
            // p3 = (1−α)/q2 Sᵀ v̂ + β Û h1_col
            let p = s.tr_mul(&vh_t) * ((1.0 - alpha) / q2) + st.uhat.as_matrix() * h1.column(col) * beta;
            let mut w = vh.tr_mul(&vh_t) * ((1.0 - alpha) / (q2 * q2));
            let mut g = h1.tr_mul(&h1.column(col)) * beta;
            w[col] = 0.0;
            g[col] = 0.0;
            p - v * (w + g)
        }
        Block::Vhat => {
            let vh = current;
            let v = st.v.as_matrix();
            let q2 = v.ncols() as f64;
            let v_k = v.column(col);
            // p4 = (1−α)/q2 S v + β U h2_col
            let p = s * v_k * ((1.0 - alpha) / q2) + st.u.as_matrix() * h2.column(col) * beta;
            let mut w = v.tr_mul(&v_k) * ((1.0 - alpha) / (q2 * q2));
            w[col] = 0.0;
            p - vh * w
        }
    }
}

/// Column solution for `block` at `col`, using `current` as the block's value.
pub fn solve_column(
    block: Block,
    col: usize,
    current: &DMatrix<f64>,
    st: &TrainState,
    s: &AffinityMatrix,
    cfg: &OptimizerConfig,
) -> DVector<f64> {
    column_argument(block, col, current, st, &s.s, cfg.alpha, cfg.beta).map(sign)
}

fn checked_column(block: Block, col: usize, st: &TrainState, s: &AffinityMatrix, cfg: &OptimizerConfig) -> Result<DVector<f64>> {
    check_dims(s, st)?;
    let b = st.block(block);
    if col >= b.bits() {
        return Err(Error::InvalidArgument(format!(
            "column {col} out of range for {} bits",
            b.bits()
        )));
    }
    Ok(solve_column(block, col, b.as_matrix(), st, s, cfg))
}

/// `u = sign(p1ᵀ − α/q1² U′Û′ᵀû − β U′H2′h2ᵀ)` with `P1 = α/q1 ÛᵀSᵀ + βH2V̂ᵀ`.
pub fn u_column_solution(l: usize, st: &TrainState, s: &AffinityMatrix, cfg: &OptimizerConfig) -> Result<DVector<f64>> {
    checked_column(Block::U, l, st, s, cfg)
}

/// `û = sign(p2ᵀ − α/q1² Û′U′ᵀu)` with `P2 = α/q1 UᵀS + βH1Vᵀ`.
pub fn uhat_column_solution(l: usize, st: &TrainState, s: &AffinityMatrix, cfg: &OptimizerConfig) -> Result<DVector<f64>> {
    checked_column(Block::Uhat, l, st, s, cfg)
}

/// `v = sign(p3ᵀ − (1−α)/q2² V′V̂′ᵀv̂ − β V′H1′ᵀh1)` with `P3 = (1−α)/q2 V̂ᵀS + βH1ᵀÛᵀ`.
pub fn v_column_solution(t: usize, st: &TrainState, s: &AffinityMatrix, cfg: &OptimizerConfig) -> Result<DVector<f64>> {
    checked_column(Block::V, t, st, s, cfg)
}

/// `v̂ = sign(p4ᵀ − (1−α)/q2² V̂′V′ᵀv)` with `P4 = (1−α)/q2 VᵀSᵀ + βH2ᵀUᵀ`.
pub fn vhat_column_solution(k: usize, st: &TrainState, s: &AffinityMatrix, cfg: &OptimizerConfig) -> Result<DVector<f64>> {
    checked_column(Block::Vhat, k, st, s, cfg)
}

/// Ensemble randomized coordinate descent.
///
/// Runs `rounds` independent passes, each starting from `b` and visiting
/// every column once in a uniformly random order; within a pass, updated
/// columns are seen by later ones. The passes are combined by entrywise
/// majority vote. Pass `τ` draws its order from a ChaCha stream keyed by
/// `(seed, τ)`, so the result depends only on the input, `seed` and `rounds`.
pub fn ercd_update<F>(b: &CodeMatrix, rounds: usize, seed: u64, solve: F) -> Result<CodeMatrix>
where
    F: Fn(&DMatrix<f64>, usize) -> DVector<f64> + Sync,
{
    if rounds == 0 || rounds % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "ensemble rounds must be odd, got {rounds}"
        )));
    }
    let passes: Vec<DMatrix<f64>> = (0..rounds)
        .into_par_iter()
        .map(|pass| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(pass as u64);
            let mut order: Vec<usize> = (0..b.bits()).collect();
            order.shuffle(&mut rng);
            let mut cur = b.as_matrix().clone();
            for col in order {
                let new = solve(&cur, col);
                cur.set_column(col, &new);
            }
            cur
        })
        .collect();
    let mut votes = DMatrix::zeros(b.rows(), b.bits());
    for p in &passes {
        votes += p;
    }
    Ok(CodeMatrix::from_signs(&votes))
}

/// Discrete cyclic coordinate descent: one pass over columns `0..q`.
/// `observe` sees the block after every column update.
pub fn dcc_update<F, O>(b: &CodeMatrix, solve: F, mut observe: O) -> CodeMatrix
where
    F: Fn(&DMatrix<f64>, usize) -> DVector<f64>,
    O: FnMut(usize, &DMatrix<f64>),
{
    let mut cur = b.as_matrix().clone();
    for col in 0..b.bits() {
        let new = solve(&cur, col);
        cur.set_column(col, &new);
        observe(col, &cur);
    }
    CodeMatrix::from_signs(&cur)
}

/// Updates one binary block of `st` in place according to `cfg.scheme`.
pub fn update_block(
    block: Block,
    st: &mut TrainState,
    s: &AffinityMatrix,
    cfg: &OptimizerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let snapshot = st.clone();
    let solve = |cur: &DMatrix<f64>, col: usize| solve_column(block, col, cur, &snapshot, s, cfg);
    let updated = match cfg.scheme {
        Scheme::Ercd => ercd_update(snapshot.block(block), cfg.rounds, rng.next_u64(), solve)?,
        Scheme::Dcc => dcc_update(snapshot.block(block), solve, |_, _| {}),
    };
    *st.block_mut(block) = updated;
    Ok(())
}

/// Learns U, V, Û, V̂, H1, H2 from the affinity matrix.
///
/// Stops after `max_iter` iterations or once the relative objective change
/// between consecutive iterations drops below `tol`.
pub fn train_codes(s: &AffinityMatrix, cfg: &OptimizerConfig) -> Result<TrainState> {
    cfg.validate()?;
    if s.n1() == 0 || s.n2() == 0 {
        return Err(Error::Dimension("affinity matrix is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut st = TrainState::random(s.n1(), s.n2(), cfg.q1, cfg.q2, &mut rng);
    let mut prev = objective(s, &st, cfg)?;
    st.initial_objective = prev;
    for iter in 0..cfg.max_iter {
        st.h = update_h(&st, cfg.beta, cfg.lambda)?;
        for block in [Block::U, Block::Uhat, Block::V, Block::Vhat] {
            update_block(block, &mut st, s, cfg, &mut rng)?;
        }
        let obj = objective(s, &st, cfg)?;
        if !obj.is_finite() {
            return Err(Error::Numerical(format!("objective became {obj} at iteration {iter}")));
        }
        st.objective_trace.push(obj);
        log::debug!("iteration {iter}: objective {obj:.6}");
        let rel = (prev - obj).abs() / prev.abs().max(f64::MIN_POSITIVE);
        if rel < cfg.tol {
            break;
        }
        prev = obj;
    }
    Ok(st)
}

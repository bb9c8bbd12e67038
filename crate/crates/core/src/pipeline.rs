//! End-to-end jobs: training a model, evaluating it on a split, and the
//! DCC-vs-E-RCD stability bench.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::affinity::{build_affinity, AffinityKind};
use crate::dataset::{DatasetSplit, ModalityData};
use crate::encoder::{encode, TrainedModel};
use crate::eval::{report, ApNorm, MetricReport, RelevanceJudge};
use crate::hashfn::{fit_hash_functions, AnchorScheme};
use crate::model::ModelMeta;
use crate::optimizer::{train_codes, OptimizerConfig, Scheme, TrainState};
use crate::retrieval::{cross_modal_query, CodeIndex, Direction};
use crate::{Error, Modality, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub optimizer: OptimizerConfig,
    /// Anchor count per modality, capped at the training set size.
    pub anchors: usize,
    pub anchor_scheme: AnchorScheme,
    pub eta: f64,
    pub affinity: AffinityKind,
    /// RBF scale; derived from the labels when absent.
    pub sigma: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            anchors: 500,
            anchor_scheme: AnchorScheme::Rnd,
            eta: 0.01,
            affinity: AffinityKind::Inner,
            sigma: None,
        }
    }
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.optimizer.seed
    }
}

pub struct TrainOutcome {
    pub model: TrainedModel,
    pub state: TrainState,
}

/// Affinity → binary codes → hash functions fitted to the native codes (U for X, V for Y).
pub fn train_model(x: &ModalityData, y: &ModalityData, cfg: &RunConfig) -> Result<TrainOutcome> {
    let seed = cfg.seed();
    let s = build_affinity(&x.labels, &y.labels, cfg.affinity, cfg.sigma, seed).map_err(Error::in_stage("affinity"))?;
    let state = train_codes(&s, &cfg.optimizer).map_err(Error::in_stage("code learning"))?;
    let fit = |data: &ModalityData, codes, salt: u64| {
        fit_hash_functions(
            &data.features,
            codes,
            cfg.anchors.min(data.n()),
            cfg.anchor_scheme,
            cfg.eta,
            seed.wrapping_add(salt),
        )
    };
    let klr_x = fit(x, &state.u, 1).map_err(Error::in_stage("hash functions (x)"))?;
    let klr_y = fit(y, &state.v, 2).map_err(Error::in_stage("hash functions (y)"))?;
    let meta = ModelMeta {
        q1: cfg.optimizer.q1,
        q2: cfg.optimizer.q2,
        d1: x.dim(),
        d2: y.dim(),
        anchors_x: klr_x.anchors.len(),
        anchors_y: klr_y.anchors.len(),
        gamma_x: klr_x.anchors.gamma,
        gamma_y: klr_y.anchors.gamma,
        anchor_scheme: cfg.anchor_scheme,
        eta: cfg.eta,
        affinity: cfg.affinity,
        sigma: s.sigma,
        optimizer: cfg.optimizer.clone(),
        seed,
        iterations: state.objective_trace.len(),
        final_objective: state.objective_trace.last().copied().unwrap_or(state.initial_objective),
    };
    Ok(TrainOutcome {
        model: TrainedModel {
            h: state.h.clone(),
            klr_x,
            klr_y,
            meta,
        },
        state,
    })
}

/// Metrics of one retrieval task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub direction: Direction,
    /// Expected mAP of a random ranking.
    pub baseline_map: f64,
    pub metrics: MetricReport,
}

/// Runs each task with the split's query set against the training set of
/// the database modality, which is hashed through the learned functions.
pub fn evaluate(
    model: &TrainedModel,
    split: &DatasetSplit,
    directions: &[Direction],
    map_cutoffs: &[usize],
    ks: &[usize],
) -> Result<Vec<TaskMetrics>> {
    let data = |m: Modality, query: bool| match (m, query) {
        (Modality::X, true) => &split.query_x,
        (Modality::X, false) => &split.train_x,
        (Modality::Y, true) => &split.query_y,
        (Modality::Y, false) => &split.train_y,
    };
    directions
        .iter()
        .map(|&dir| {
            let q = data(dir.query_modality(), true);
            let db = data(dir.database_modality(), false);
            let db_codes = encode(&db.features, model, dir.database_modality())?;
            let index = CodeIndex::new(&db_codes);
            let rankings = cross_modal_query(&q.features, model, dir, &index, None)?;
            let judge = RelevanceJudge::new(q.labels.clone(), db.labels.clone())?;
            Ok(TaskMetrics {
                direction: dir,
                baseline_map: crate::eval::random_baseline(&judge),
                metrics: report(&rankings, &judge, map_cutoffs, ks, ApNorm::Window)?,
            })
        })
        .collect()
}

/// mAP statistics of one (scheme, task) pair over the bench trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scheme: Scheme,
    pub direction: Direction,
    pub trials: usize,
    pub mean: f64,
    /// max − min.
    pub range: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub maps: Vec<f64>,
}

/// Trains `trials` models per scheme with seeds `seed, seed+1, ...` and
/// reports cross-modal mAP statistics for I→T and T→I.
pub fn bench(split: &DatasetSplit, cfg: &RunConfig, schemes: &[Scheme], trials: usize) -> Result<Vec<BenchRow>> {
    if trials < 2 {
        return Err(Error::InvalidArgument(format!("bench needs at least 2 trials, got {trials}")));
    }
    let tasks = [Direction::I2T, Direction::T2I];
    let mut rows = Vec::new();
    for &scheme in schemes {
        let mut maps = vec![Vec::with_capacity(trials); tasks.len()];
        for trial in 0..trials {
            let mut run = cfg.clone();
            run.optimizer.scheme = scheme;
            run.optimizer.seed = cfg.seed().wrapping_add(trial as u64);
            let out = train_model(&split.train_x, &split.train_y, &run)?;
            for (t, m) in evaluate(&out.model, split, &tasks, &[], &[])?.into_iter().enumerate() {
                maps[t].push(m.metrics.map);
            }
            log::info!("bench {scheme} trial {trial}: {:?}", maps.iter().map(|m| m[trial]).collect::<Vec<_>>());
        }
        for (t, vals) in maps.into_iter().enumerate() {
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            rows.push(BenchRow {
                scheme,
                direction: tasks[t],
                trials,
                mean,
                range: max - min,
                std: var.sqrt(),
                maps: vals,
            });
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("scheme,task,trials,mean_map,max_min,std\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.scheme, r.direction, r.trials, r.mean, r.range, r.std);
    }
    out
}

//! Self-describing binary model file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MTFH"                      4 bytes
//! format version              u32
//! metadata length             u64
//! metadata                    UTF-8 JSON
//! H1, H2, anchors_x, anchors_y, weights_x, weights_y
//!     each: rows u64, cols u64, rows*cols f64 in row-major order
//! ```

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::affinity::AffinityKind;
use crate::encoder::TrainedModel;
use crate::hashfn::{AnchorScheme, AnchorSet, KlrModel};
use crate::optimizer::{CorrelationPair, OptimizerConfig};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MTFH";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub q1: usize,
    pub q2: usize,
    pub d1: usize,
    pub d2: usize,
    pub anchors_x: usize,
    pub anchors_y: usize,
    pub gamma_x: f64,
    pub gamma_y: f64,
    pub anchor_scheme: AnchorScheme,
    pub eta: f64,
    pub affinity: AffinityKind,
    pub sigma: Option<f64>,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub iterations: usize,
    pub final_objective: f64,
}

impl Default for ModelMeta {
    fn default() -> Self {
        Self {
            q1: 0,
            q2: 0,
            d1: 0,
            d2: 0,
            anchors_x: 0,
            anchors_y: 0,
            gamma_x: 1.0,
            gamma_y: 1.0,
            anchor_scheme: AnchorScheme::Rnd,
            eta: 0.01,
            affinity: AffinityKind::Inner,
            sigma: None,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            iterations: 0,
            final_objective: 0.0,
        }
    }
}

fn put_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn matrix(&mut self, name: &str) -> Result<DMatrix<f64>> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format(format!("{name}: absurd shape {rows}×{cols}")))?;
        let body = self.take(len)?;
        let vals: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(DMatrix::from_row_slice(rows, cols, &vals))
    }
}

/// Metadata as written: structural fields always reflect the matrices.
fn effective_meta(model: &TrainedModel) -> ModelMeta {
    ModelMeta {
        q1: model.q1(),
        q2: model.q2(),
        d1: model.d1(),
        d2: model.d2(),
        anchors_x: model.klr_x.anchors.len(),
        anchors_y: model.klr_y.anchors.len(),
        gamma_x: model.klr_x.anchors.gamma,
        gamma_y: model.klr_y.anchors.gamma,
        anchor_scheme: model.klr_x.anchors.scheme,
        eta: model.klr_x.eta,
        ..model.meta.clone()
    }
}

pub fn to_bytes(model: &TrainedModel) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&effective_meta(model)).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    for m in [
        &model.h.h1,
        &model.h.h2,
        &model.klr_x.anchors.anchors,
        &model.klr_y.anchors.anchors,
        &model.klr_x.weights,
        &model.klr_y.weights,
    ] {
        put_matrix(&mut out, m);
    }
    Ok(out)
}

pub fn from_bytes(buf: &[u8]) -> Result<TrainedModel> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("not an MTFH model file".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let meta_len = c.u64()? as usize;
    let meta: ModelMeta =
        serde_json::from_slice(c.take(meta_len)?).map_err(|e| Error::Format(format!("metadata: {e}")))?;
    let h1 = c.matrix("H1")?;
    let h2 = c.matrix("H2")?;
    let ax = c.matrix("anchors_x")?;
    let ay = c.matrix("anchors_y")?;
    let wx = c.matrix("weights_x")?;
    let wy = c.matrix("weights_y")?;
    if c.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - c.pos)));
    }

    let checks = [
        ("H1", h1.shape(), (meta.q1, meta.q2)),
        ("H2", h2.shape(), (meta.q1, meta.q2)),
        ("anchors_x", ax.shape(), (meta.anchors_x, meta.d1)),
        ("anchors_y", ay.shape(), (meta.anchors_y, meta.d2)),
        ("weights_x", wx.shape(), (meta.anchors_x + 1, meta.q1)),
        ("weights_y", wy.shape(), (meta.anchors_y + 1, meta.q2)),
    ];
    for (name, got, want) in checks {
        if got != want {
            return Err(Error::Format(format!(
                "{name} is {}×{}, metadata implies {}×{}",
                got.0, got.1, want.0, want.1
            )));
        }
    }
    let klr = |anchors, gamma, weights| KlrModel {
        anchors: AnchorSet {
            anchors,
            scheme: meta.anchor_scheme,
            gamma,
        },
        weights,
        eta: meta.eta,
    };
    Ok(TrainedModel {
        h: CorrelationPair { h1, h2 },
        klr_x: klr(ax, meta.gamma_x, wx),
        klr_y: klr(ay, meta.gamma_y, wy),
        meta,
    })
}

pub fn save(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf).map_err(|e| Error::parse(path, e.to_string()))
}

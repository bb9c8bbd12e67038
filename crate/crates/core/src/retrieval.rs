//! Exhaustive Hamming ranking over packed codes.

use std::collections::HashSet;

use nalgebra::DMatrix;

use crate::codes::CodeMatrix;
use crate::encoder::{encode, translate, TrainedModel, Translation};
use crate::{Error, Modality, Result};

/// Retrieval task: query modality → database modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// X queries against a Y database.
    I2T,
    /// Y queries against an X database.
    T2I,
    I2I,
    T2T,
}

impl Direction {
    pub fn query_modality(self) -> Modality {
        match self {
            Direction::I2T | Direction::I2I => Modality::X,
            Direction::T2I | Direction::T2T => Modality::Y,
        }
    }

    pub fn database_modality(self) -> Modality {
        match self {
            Direction::T2I | Direction::I2I => Modality::X,
            Direction::I2T | Direction::T2T => Modality::Y,
        }
    }

    pub fn is_cross_modal(self) -> bool {
        self.query_modality() != self.database_modality()
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "i2t" => Ok(Direction::I2T),
            "t2i" => Ok(Direction::T2I),
            "i2i" => Ok(Direction::I2I),
            "t2t" => Ok(Direction::T2T),
            other => Err(Error::InvalidArgument(format!("unknown direction '{other}'"))),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::I2T => "i2t",
            Direction::T2I => "t2i",
            Direction::I2I => "i2i",
            Direction::T2T => "t2t",
        })
    }
}

/// Hamming distance between two ±1 vectors, `(q − a·b) / 2`.
pub fn hamming(a: &[f64], b: &[f64]) -> Result<u32> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "code widths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(((a.len() as f64 - dot) / 2.0).round() as u32)
}

/// Flat index of packed codes with stable integer ids.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeIndex {
    width: usize,
    words: usize,
    packed: Vec<u64>,
    ids: Vec<u64>,
}

impl CodeIndex {
    /// Index with ids `0..n`.
    pub fn new(codes: &CodeMatrix) -> Self {
        Self::with_ids(codes, (0..codes.rows() as u64).collect()).expect("sequential ids are unique")
    }

    pub fn with_ids(codes: &CodeMatrix, ids: Vec<u64>) -> Result<Self> {
        if ids.len() != codes.rows() {
            return Err(Error::InvalidArgument(format!(
                "{} ids for {} codes",
                ids.len(),
                codes.rows()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::InvalidArgument(format!("duplicate id {dup}")));
        }
        let words = codes.bits().div_ceil(64);
        let mut packed = Vec::with_capacity(words * codes.rows());
        for i in 0..codes.rows() {
            packed.extend(codes.packed_row(i));
        }
        Ok(Self {
            width: codes.bits(),
            words,
            packed,
            ids,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    fn distance_to(&self, row: usize, query: &[u64]) -> u32 {
        let code = &self.packed[row * self.words..(row + 1) * self.words];
        code.iter().zip(query).map(|(a, b)| (a ^ b).count_ones()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hit {
    pub id: u64,
    pub distance: u32,
}

/// Database hits for one query, nearest first, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedResult {
    pub hits: Vec<Hit>,
}

impl RankedResult {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.hits.iter().map(|h| h.id)
    }
}

fn pack(query: &[f64]) -> Vec<u64> {
    let mut words = vec![0u64; query.len().div_ceil(64)];
    for (j, &v) in query.iter().enumerate() {
        if v > 0.0 {
            words[j / 64] |= 1 << (j % 64);
        }
    }
    words
}

/// Ranks the whole index (or its `topk` nearest) by Hamming distance to `query`.
pub fn rank(query: &[f64], index: &CodeIndex, topk: Option<usize>) -> Result<RankedResult> {
    if query.len() != index.width {
        return Err(Error::Dimension(format!(
            "query has {} bits, index has {}",
            query.len(),
            index.width
        )));
    }
    let q = pack(query);
    let mut hits: Vec<Hit> = (0..index.len())
        .map(|row| Hit {
            id: index.ids[row],
            distance: index.distance_to(row, &q),
        })
        .collect();
    let key = |h: &Hit| (h.distance, h.id);
    if let Some(k) = topk {
        if k < hits.len() {
            if k > 0 {
                hits.select_nth_unstable_by_key(k - 1, key);
            }
            hits.truncate(k);
        }
    }
    hits.sort_unstable_by_key(key);
    Ok(RankedResult { hits })
}

/// Ranks every row of `queries` against the index.
pub fn rank_all(queries: &CodeMatrix, index: &CodeIndex, topk: Option<usize>) -> Result<Vec<RankedResult>> {
    use rayon::prelude::*;
    (0..queries.rows())
        .into_par_iter()
        .map(|i| rank(&queries.row(i), index, topk))
        .collect()
}

/// Query codes for a task, expressed in the database's native code space:
/// cross-modal queries are encoded natively and then translated.
pub fn query_codes(features: &DMatrix<f64>, model: &TrainedModel, direction: Direction) -> Result<CodeMatrix> {
    let native = encode(features, model, direction.query_modality())?;
    match direction {
        Direction::I2T => translate(&native, model, Translation::XToQ2),
        Direction::T2I => translate(&native, model, Translation::YToQ1),
        Direction::I2I | Direction::T2T => Ok(native),
    }
}

/// Encodes, translates and ranks a batch of query samples against an index
/// holding native codes of the database modality.
pub fn cross_modal_query(
    features: &DMatrix<f64>,
    model: &TrainedModel,
    direction: Direction,
    index: &CodeIndex,
    topk: Option<usize>,
) -> Result<Vec<RankedResult>> {
    let expected = model.bits(direction.database_modality());
    if index.width() != expected {
        return Err(Error::Dimension(format!(
            "{direction} needs a {expected}-bit database index, got {} bits",
            index.width()
        )));
    }
    let q = query_codes(features, model, direction)?;
    rank_all(&q, index, topk)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codes(rows: usize, cols: usize, v: &[f64]) -> CodeMatrix {
        CodeMatrix::new(DMatrix::from_row_slice(rows, cols, v)).unwrap()
    }

    #[test]
    fn hamming_examples() {
        let a = [1.0; 8];
        let b = [-1.0; 8];
        assert_eq!(hamming(&a, &a).unwrap(), 0);
        assert_eq!(hamming(&a, &b).unwrap(), 8);
        assert_eq!(hamming(&[1., 1., -1., -1.], &[1., -1., -1., 1.]).unwrap(), 2);
        assert!(hamming(&[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn self_hit_first_and_ties_by_id() {
        let db = codes(3, 4, &[1., 1., 1., 1., -1., 1., -1., 1., 1., -1., 1., -1.]);
        let idx = CodeIndex::new(&db);
        let r = rank(&db.row(1), &idx, None).unwrap();
        assert_eq!(r.hits[0], Hit { id: 1, distance: 0 });

        let same = codes(3, 2, &[1., -1., 1., -1., 1., -1.]);
        let idx = CodeIndex::with_ids(&same, vec![9, 2, 5]).unwrap();
        let r = rank(&[1., 1.], &idx, None).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), vec![2, 5, 9]);
        let r = rank(&[1., 1.], &idx, Some(2)).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), vec![2, 5]);
        assert!(rank(&[1., 1., 1.], &idx, None).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let c = codes(2, 1, &[1., -1.]);
        assert!(CodeIndex::with_ids(&c, vec![3, 3]).is_err());
        assert!(CodeIndex::with_ids(&c, vec![3]).is_err());
    }

    #[test]
    fn empty_index_gives_empty_result() {
        let idx = CodeIndex::new(&CodeMatrix::empty(8));
        assert!(rank(&[1.0; 8], &idx, Some(5)).unwrap().is_empty());
    }

    #[test]
    fn wide_codes_cross_word_boundary() {
        let a: Vec<f64> = (0..130).map(|j| if j % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let b: Vec<f64> = (0..130).map(|j| if j % 5 == 0 { 1.0 } else { -1.0 }).collect();
        let db = CodeMatrix::new(DMatrix::from_row_slice(1, 130, &b)).unwrap();
        let r = rank(&a, &CodeIndex::new(&db), None).unwrap();
        assert_eq!(r.hits[0].distance, hamming(&a, &b).unwrap());
    }

    #[test]
    fn direction_parsing() {
        assert_eq!("I2T".parse::<Direction>().unwrap(), Direction::I2T);
        assert!("x2y".parse::<Direction>().is_err());
        assert_eq!(Direction::T2I.database_modality(), Modality::X);
    }
}

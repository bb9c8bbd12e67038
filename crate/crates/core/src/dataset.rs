//! Two-modality feature/label data: CSV I/O, splits, unpairing and a
//! synthetic Gaussian-cluster generator.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Modality, Result};

/// Multi-hot label matrix (rows × categories) with entries in {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    data: DMatrix<f64>,
}

impl LabelMatrix {
    /// Validates that every entry is 0 or 1 and every row has at least one 1.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        for i in 0..data.nrows() {
            let mut any = false;
            for j in 0..data.ncols() {
                let v = data[(i, j)];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::InvalidData(format!(
                        "label entry ({i},{j}) is {v}, expected 0 or 1"
                    )));
                }
                any |= v == 1.0;
            }
            if !any {
                return Err(Error::InvalidData(format!("empty label row {i}")));
            }
        }
        Ok(Self { data })
    }

    /// One-hot labels from class indices.
    pub fn one_hot(classes: &[usize], categories: usize) -> Result<Self> {
        let mut data = DMatrix::zeros(classes.len(), categories);
        for (i, &c) in classes.iter().enumerate() {
            if c >= categories {
                return Err(Error::InvalidArgument(format!(
                    "class {c} out of range for {categories} categories"
                )));
            }
            data[(i, c)] = 1.0;
        }
        Ok(Self { data })
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn categories(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.row(i).iter().copied().collect::<Vec<_>>().into_iter()
    }

    /// True when row `i` of `self` and row `j` of `other` share at least one label.
    pub fn shares_label(&self, i: usize, other: &LabelMatrix, j: usize) -> bool {
        (0..self.categories()).any(|k| self.data[(i, k)] == 1.0 && other.data[(j, k)] == 1.0)
    }

    pub fn select_rows(&self, rows: &[usize]) -> LabelMatrix {
        LabelMatrix {
            data: self.data.select_rows(rows),
        }
    }
}

/// Features and labels of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityData {
    pub features: DMatrix<f64>,
    pub labels: LabelMatrix,
}

impl ModalityData {
    pub fn new(features: DMatrix<f64>, labels: LabelMatrix) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::InvalidData("modality has no samples".into()));
        }
        if features.nrows() != labels.rows() {
            return Err(Error::InvalidData(format!(
                "feature rows ({}) != label rows ({})",
                features.nrows(),
                labels.rows()
            )));
        }
        if let Some(idx) = features.iter().position(|v| !v.is_finite()) {
            // column-major storage
            let (r, c) = (idx % features.nrows(), idx / features.nrows());
            return Err(Error::InvalidData(format!("non-finite feature at row {r}, column {c}")));
        }
        Ok(Self { features, labels })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> ModalityData {
        ModalityData {
            features: self.features.select_rows(rows),
            labels: self.labels.select_rows(rows),
        }
    }
}

/// Training and query partitions of both modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train_x: ModalityData,
    pub train_y: ModalityData,
    pub query_x: ModalityData,
    pub query_y: ModalityData,
    /// Training rows of X and Y are in one-to-one, row-aligned correspondence.
    pub paired: bool,
}

/// Reads a headerless comma-separated numeric table.
///
/// An empty file yields a 0×0 matrix. Rows must all have the same number of
/// cells and every cell must parse to a finite real.
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut values = Vec::new();
    let mut ncols: Option<usize> = None;
    let mut nrows = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(path, format!("row {row}: {e}")))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match ncols {
            None => ncols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::parse(
                    path,
                    format!("ragged row {row}: {} cells, expected {c}", record.len()),
                ))
            }
            _ => {}
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::parse(path, format!("row {row}, column {col}: cannot parse '{cell}'"))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    format!("row {row}, column {col}: non-finite value '{cell}'"),
                ));
            }
            values.push(v);
        }
        nrows += 1;
    }
    Ok(DMatrix::from_row_slice(nrows, ncols.unwrap_or(0), &values))
}

/// Writes a matrix as headerless CSV using shortest round-trip decimal formatting.
pub fn write_matrix_csv(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        for i in 0..m.nrows() {
            let row: Vec<String> = m.row(i).iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

/// Loads one modality from a feature file and a label file.
pub fn load_modality(features_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<ModalityData> {
    let (fp, lp) = (features_path.as_ref(), labels_path.as_ref());
    let features = read_matrix_csv(fp)?;
    let labels = read_labels(lp)?;
    if features.nrows() != labels.rows() {
        return Err(Error::parse(
            fp,
            format!(
                "row-count mismatch: {} feature rows vs {} label rows in {}",
                features.nrows(),
                labels.rows(),
                lp.display()
            ),
        ));
    }
    ModalityData::new(features, labels).map_err(|e| Error::parse(fp, e.to_string()))
}

/// Loads and validates a label file.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMatrix> {
    let path = path.as_ref();
    let m = read_matrix_csv(path)?;
    if m.nrows() == 0 {
        return Err(Error::parse(path, "label file is empty"));
    }
    LabelMatrix::new(m).map_err(|e| match e {
        Error::InvalidData(msg) => Error::parse(path, msg),
        other => other,
    })
}

pub fn write_modality(data: &ModalityData, features_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    write_matrix_csv(features_path, &data.features)?;
    write_matrix_csv(labels_path, data.labels.matrix())
}

/// Seeded partition of `0..n` into (train, query) index lists, both sorted.
pub fn split_indices(n: usize, query_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(query_fraction > 0.0 && query_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "query fraction {query_fraction} not in (0,1)"
        )));
    }
    let n_query = (query_fraction * n as f64).round() as usize;
    if n_query < 1 {
        return Err(Error::InvalidArgument(format!(
            "too few samples: fraction {query_fraction} of {n} selects no query rows"
        )));
    }
    if n_query >= n {
        return Err(Error::InvalidArgument(format!(
            "too few samples: fraction {query_fraction} of {n} leaves an empty training set"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut query = perm[..n_query].to_vec();
    let mut train = perm[n_query..].to_vec();
    query.sort_unstable();
    train.sort_unstable();
    Ok((train, query))
}

/// Splits both modalities into training and query sets.
///
/// When `x.n == y.n` the data is treated as paired and the same indices are
/// used for both modalities; otherwise each modality is split independently.
pub fn split(x: &ModalityData, y: &ModalityData, query_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if x.labels.categories() != y.labels.categories() {
        return Err(Error::Dimension(format!(
            "category counts differ: {} vs {}",
            x.labels.categories(),
            y.labels.categories()
        )));
    }
    let paired = x.n() == y.n();
    let (train_ix, query_ix) = split_indices(x.n(), query_fraction, seed)?;
    let (train_iy, query_iy) = if paired {
        (train_ix.clone(), query_ix.clone())
    } else {
        split_indices(y.n(), query_fraction, seed.wrapping_add(1))?
    };
    Ok(DatasetSplit {
        train_x: x.select_rows(&train_ix),
        train_y: y.select_rows(&train_iy),
        query_x: x.select_rows(&query_ix),
        query_y: y.select_rows(&query_iy),
        paired,
    })
}

/// Rows kept when retaining `keep_fraction` of `n` rows: the head of a seeded
/// permutation, returned in original order. Smaller fractions give subsets of
/// larger ones under the same seed.
pub fn unpaired_rows(n: usize, keep_fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep fraction {keep_fraction} not in (0,1]"
        )));
    }
    // guard against 0.9 * 100 = 90.00000000000001
    let keep = ((keep_fraction * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut kept = perm[..keep.min(n)].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

/// Drops training rows of one modality so the two training sets are no
/// longer in correspondence. Query sets are left unchanged.
pub fn make_unpaired(split: &DatasetSplit, modality: Modality, keep_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !split.paired {
        return Err(Error::InvalidArgument("split is already unpaired".into()));
    }
    let mut out = split.clone();
    let target = match modality {
        Modality::X => &mut out.train_x,
        Modality::Y => &mut out.train_y,
    };
    let rows = unpaired_rows(target.n(), keep_fraction, seed)?;
    let unchanged = rows.len() == target.n();
    *target = target.select_rows(&rows);
    out.paired = unchanged;
    Ok(out)
}

/// Two modalities drawn from per-class Gaussian clusters sharing class identity.
///
/// Each class gets a random center in each modality with entries
/// `class_separation * N(0,1)`; samples add unit-variance isotropic noise.
/// Row `i` of both modalities belongs to the same class, and rows are
/// shuffled so classes are interleaved.
pub fn synth_multimodal(
    n_per_class: usize,
    classes: usize,
    d1: usize,
    d2: usize,
    class_separation: f64,
    seed: u64,
) -> Result<(ModalityData, ModalityData)> {
    if n_per_class < 1 || classes < 1 || d1 < 1 || d2 < 1 {
        return Err(Error::InvalidArgument(
            "synthetic dataset dimensions must all be at least 1".into(),
        ));
    }
    if !class_separation.is_finite() || class_separation < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "class separation {class_separation} must be finite and non-negative"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_per_class * classes;
    let mut class_of: Vec<usize> = (0..n).map(|i| i / n_per_class).collect();
    class_of.shuffle(&mut rng);

    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let draw = |d: usize, rng: &mut ChaCha8Rng| -> DMatrix<f64> {
        let centers = DMatrix::<f64>::from_fn(classes, d, |_, _| class_separation * normal(rng));
        DMatrix::from_fn(n, d, |i, j| centers[(class_of[i], j)] + normal(rng))
    };
    // from_fn visits column-major; order is fixed so output is seed-deterministic
    let fx = draw(d1, &mut rng);
    let fy = draw(d2, &mut rng);
    let labels = LabelMatrix::one_hot(&class_of, classes)?;
    Ok((ModalityData::new(fx, labels.clone())?, ModalityData::new(fy, labels)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn loads_small_modality() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(&dir, "f.csv", "0.5,1\n2,3\n-1,4.25\n");
        let l = write(&dir, "l.csv", "1,0\n0,1\n1,1\n");
        let m = load_modality(&f, &l).unwrap();
        assert_eq!((m.n(), m.dim(), m.labels.categories()), (3, 2, 2));
        assert_eq!(m.features[(2, 1)], 4.25);
    }

    #[test]
    fn empty_label_row_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(&dir, "f.csv", "0,1\n2,3\n4,5\n");
        let l = write(&dir, "l.csv", "1,0\n0,1\n0,0\n");
        let err = load_modality(&f, &l).unwrap_err().to_string();
        assert!(err.contains("empty label row 2"), "{err}");
        assert!(err.contains("l.csv"), "{err}");
    }

    #[test]
    fn nan_cell_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(&dir, "f.csv", "0,1\n2,nan\n");
        let l = write(&dir, "l.csv", "1\n1\n");
        let err = load_modality(&f, &l).unwrap_err().to_string();
        assert!(err.contains("row 1, column 1"), "{err}");
    }

    #[test]
    fn ragged_and_mismatched_rows() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(&dir, "f.csv", "0,1\n2\n");
        let err = read_matrix_csv(&f).unwrap_err().to_string();
        assert!(err.contains("ragged row 1"), "{err}");

        let f = write(&dir, "g.csv", "0,1\n2,3\n");
        let l = write(&dir, "l.csv", "1\n");
        let err = load_modality(&f, &l).unwrap_err().to_string();
        assert!(err.contains("row-count mismatch"), "{err}");
    }

    #[test]
    fn csv_round_trip() {
        let (x, _) = synth_multimodal(5, 3, 4, 2, 2.0, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (f, l) = (dir.path().join("f.csv"), dir.path().join("l.csv"));
        write_modality(&x, &f, &l).unwrap();
        assert_eq!(load_modality(&f, &l).unwrap(), x);
    }

    #[test]
    fn split_counts_and_determinism() {
        let (x, y) = synth_multimodal(25, 4, 3, 3, 1.0, 1).unwrap();
        let s = split(&x, &y, 0.05, 7).unwrap();
        assert_eq!((s.query_x.n(), s.train_x.n()), (5, 95));
        assert!(s.paired);
        assert_eq!(s, split(&x, &y, 0.05, 7).unwrap());
        assert_eq!(s.query_x.labels, s.query_y.labels);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let (x, y) = synth_multimodal(10, 1, 2, 2, 1.0, 1).unwrap();
        assert!(split(&x, &y, 0.999, 1).is_err());
        assert!(split(&x, &y, 0.0, 1).is_err());
        assert!(split(&x, &y, 1.0, 1).is_err());
        assert!(split(&x, &y, 0.01, 1).is_err());
    }

    #[test]
    fn unpairing_x_and_y() {
        let (x, y) = synth_multimodal(35, 3, 3, 3, 1.0, 1).unwrap();
        // 105 samples, 5 query rows -> 100 training rows
        let s = split(&x, &y, 5.0 / 105.0, 3).unwrap();
        assert_eq!(s.train_x.n(), 100);
        let u1 = make_unpaired(&s, Modality::X, 0.9, 11).unwrap();
        assert_eq!((u1.train_x.n(), u1.train_y.n()), (90, 100));
        assert!(!u1.paired);
        assert_eq!(u1.query_x, s.query_x);
        let u2 = make_unpaired(&s, Modality::Y, 0.9, 11).unwrap();
        assert_eq!((u2.train_x.n(), u2.train_y.n()), (100, 90));
        assert!(make_unpaired(&u1, Modality::Y, 0.9, 1).is_err());

        let same = make_unpaired(&s, Modality::X, 1.0, 11).unwrap();
        assert!(same.paired);
        assert_eq!(same.train_x, s.train_x);
    }

    #[test]
    fn unpairing_is_nested() {
        let a = unpaired_rows(100, 0.8, 5).unwrap();
        let b = unpaired_rows(100, 0.9, 5).unwrap();
        assert_eq!((a.len(), b.len()), (80, 90));
        assert!(a.iter().all(|i| b.contains(i)));
    }

    #[test]
    fn synth_shapes_and_determinism() {
        let (x, y) = synth_multimodal(100, 4, 20, 30, 3.0, 42).unwrap();
        assert_eq!((x.n(), x.dim(), y.n(), y.dim()), (400, 20, 400, 30));
        assert_eq!(x.labels.categories(), 4);
        for i in 0..x.n() {
            assert_eq!(x.labels.row(i).sum::<f64>(), 1.0);
        }
        let (x2, y2) = synth_multimodal(100, 4, 20, 30, 3.0, 42).unwrap();
        assert_eq!((x, y), (x2, y2));
    }
}

//! Response/design pairs, standardization and file ingestion.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const CONSTANT_SD: f64 = 1e-12;
const BINARY_MAGIC: &[u8; 8] = b"HDDATA01";

/// A response vector `y` (length n) and an n × p design `x`.
///
/// When `standardized` is set every column of `x` has mean 0 and
/// `‖x_j‖²/n = 1`, and `y` is centered. `column_means`/`column_sds` record the
/// original-scale moments so callers can back-transform coefficients.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    standardized: bool,
    column_means: Vec<f64>,
    column_sds: Vec<f64>,
    gram: Arc<OnceLock<DMatrix<f64>>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "X has {n} rows but Y has {} entries",
                y.len()
            )));
        }
        if n < 2 || p < 1 {
            return Err(Error::DimensionMismatch(format!(
                "need n >= 2 and p >= 1, got n = {n}, p = {p}"
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Dataset {
            x,
            y,
            standardized: false,
            column_means: vec![0.0; p],
            column_sds: vec![1.0; p],
            gram: Arc::default(),
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn column_means(&self) -> &[f64] {
        &self.column_means
    }

    pub fn column_sds(&self) -> &[f64] {
        &self.column_sds
    }

    /// Gram matrix `XᵀX/n`, computed once and shared by clones and by
    /// datasets derived through [`Dataset::with_response`].
    pub fn gram(&self) -> &DMatrix<f64> {
        self.gram.get_or_init(|| {
            let mut g = self.x.tr_mul(&self.x);
            g /= self.n() as f64;
            g
        })
    }

    /// `Xᵀy/n`.
    pub fn xty(&self) -> DVector<f64> {
        self.x.tr_mul(&self.y) / self.n() as f64
    }

    /// Same design (and cached Gram matrix) with a new response.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "response has {} entries, design has {} rows",
                y.len(),
                self.n()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Dataset {
            y,
            ..self.clone()
        })
    }

    /// Rows `rows` of the design and response. The result is not flagged as
    /// standardized since subsample moments differ.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let x = self.x.select_rows(rows.iter());
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        Dataset::new(x, y)
    }

    /// Columns `cols` of the design; the response is unchanged.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        let x = self.x.select_columns(cols.iter());
        let mut out = Dataset::new(x, self.y.clone())?;
        out.standardized = self.standardized;
        out.column_means = cols.iter().map(|&j| self.column_means[j]).collect();
        out.column_sds = cols.iter().map(|&j| self.column_sds[j]).collect();
        Ok(out)
    }

    /// SHA-256 over the dimensions and the design entries, used as a cache key.
    pub fn design_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        h.update((self.p() as u64).to_le_bytes());
        for v in self.x.iter() {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }

    /// Loads a headerless numeric CSV design and a single-column response.
    pub fn from_csv(x_path: &Path, y_path: &Path) -> Result<Self> {
        let x = read_matrix_csv(x_path)?;
        let y = read_matrix_csv(y_path)?;
        if y.ncols() != 1 {
            return Err(Error::Parse(format!(
                "{} must have exactly one column, found {}",
                y_path.display(),
                y.ncols()
            )));
        }
        Dataset::new(x, y.column(0).into_owned())
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        w.write_all(&(self.p() as u64).to_le_bytes())?;
        w.write_all(&[self.standardized as u8])?;
        let values = self
            .column_means
            .iter()
            .chain(&self.column_sds)
            .chain(self.x.iter())
            .chain(self.y.iter());
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Parse(format!("{} is not a dataset cache", path.display())));
        }
        let n = read_u64(&mut r)? as usize;
        let p = read_u64(&mut r)? as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let means = read_f64s(&mut r, p)?;
        let sds = read_f64s(&mut r, p)?;
        let x = DMatrix::from_vec(n, p, read_f64s(&mut r, n * p)?);
        let y = DVector::from_vec(read_f64s(&mut r, n)?);
        let mut ds = Dataset::new(x, y)?;
        ds.standardized = flag[0] != 0;
        ds.column_means = means;
        ds.column_sds = sds;
        Ok(ds)
    }
}

/// Centers and scales every column of `X` to mean 0 and `‖X_j‖²/n = 1`, and
/// centers (but does not rescale) `Y`.
pub fn standardize(dataset: &Dataset) -> Result<Dataset> {
    let n = dataset.n();
    let nf = n as f64;
    let mut x = dataset.x.clone();
    let mut means = Vec::with_capacity(dataset.p());
    let mut sds = Vec::with_capacity(dataset.p());
    for (j, mut col) in x.column_iter_mut().enumerate() {
        let mean = col.sum() / nf;
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / nf).sqrt();
        if !(sd > CONSTANT_SD) {
            return Err(Error::ConstantColumn(j));
        }
        col /= sd;
        // Compose with an earlier standardization so metadata stays on the
        // original scale.
        means.push(dataset.column_means[j] + dataset.column_sds[j] * mean);
        sds.push(dataset.column_sds[j] * sd);
    }
    let y_mean = dataset.y.mean();
    let y = dataset.y.add_scalar(-y_mean);
    let mut out = Dataset::new(x, y)?;
    out.standardized = true;
    out.column_means = means;
    out.column_sds = sds;
    Ok(out)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::InputNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

/// Reads a headerless numeric CSV into a matrix (rows = records).
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| {
                    Error::Parse(format!("{}: row {}: not a number: {field:?}", path.display(), i + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse(format!(
                    "{}: row {} has {} fields, expected {}",
                    path.display(),
                    i + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse(format!("{} is empty", path.display())));
    }
    let p = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a matrix as headerless CSV with full round-trip precision.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    (0..len)
        .map(|_| {
            r.read_exact(&mut buf)?;
            Ok(f64::from_le_bytes(buf))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{make_covariance, sample_design, Covariance};

    fn moments(col: nalgebra::DVectorView<f64>) -> (f64, f64) {
        let n = col.len() as f64;
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    #[test]
    fn three_point_column() {
        let ds = Dataset::new(
            DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]),
            DVector::zeros(3),
        )
        .unwrap();
        let s = standardize(&ds).unwrap();
        let (m, sd) = moments(s.x().column(0));
        assert!(m.abs() < 1e-15);
        assert!((sd - 1.0).abs() < 1e-15);
        assert_eq!(s.y().as_slice(), &[0.0, 0.0, 0.0]);
        assert!(s.is_standardized());
        assert_eq!(s.column_means(), &[2.0]);
        assert!((s.column_sds()[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn idempotent() {
        let x = DMatrix::from_fn(20, 4, |i, j| ((i * 7 + j * 3) % 11) as f64 + 0.1 * j as f64);
        let y = DVector::from_fn(20, |i, _| i as f64);
        let once = standardize(&Dataset::new(x, y).unwrap()).unwrap();
        let twice = standardize(&once).unwrap();
        assert!((once.x() - twice.x()).amax() < 1e-10);
        assert!((once.y() - twice.y()).amax() < 1e-10);
        for j in 0..4 {
            assert!((once.column_sds()[j] - twice.column_sds()[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn toeplitz_draw_standardizes() {
        let sigma = make_covariance(&Covariance::Toeplitz { rho: 0.9 }, 30);
        let x = sample_design(&sigma, 100, 5).unwrap();
        let y = DVector::from_fn(100, |i, _| (i as f64).sin());
        let s = standardize(&Dataset::new(x, y).unwrap()).unwrap();
        for col in s.x().column_iter() {
            let (m, sd) = moments(col);
            assert!(m.abs() < 1e-10);
            assert!((sd - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_constant_and_non_finite() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        let ds = Dataset::new(x, DVector::zeros(3)).unwrap();
        assert!(matches!(standardize(&ds), Err(Error::ConstantColumn(1))));
        let bad = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        assert!(matches!(Dataset::new(bad, DVector::zeros(2)), Err(Error::NonFinite)));
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let x = DMatrix::from_fn(5, 3, |i, j| (i as f64 + 1.0) / (j as f64 + 3.0));
        let y = DMatrix::from_fn(5, 1, |i, _| 0.1 * i as f64 - 1.0 / 3.0);
        write_matrix_csv(&dir.path().join("x.csv"), &x).unwrap();
        write_matrix_csv(&dir.path().join("y.csv"), &y).unwrap();
        let ds = Dataset::from_csv(&dir.path().join("x.csv"), &dir.path().join("y.csv")).unwrap();
        assert_eq!(ds.x(), &x);
        assert_eq!(ds.y().as_slice(), y.as_slice());

        let s = standardize(&ds).unwrap();
        let path = dir.path().join("d.bin");
        s.write_binary(&path).unwrap();
        let back = Dataset::read_binary(&path).unwrap();
        assert_eq!(back.x(), s.x());
        assert_eq!(back.y(), s.y());
        assert!(back.is_standardized());
        assert_eq!(back.column_sds(), s.column_sds());
        assert_eq!(back.design_hash(), s.design_hash());
    }

    #[test]
    fn missing_file_is_reported() {
        let err = Dataset::from_csv(Path::new("/nonexistent/x.csv"), Path::new("/nonexistent/y.csv"))
            .unwrap_err();
        assert_eq!(err.kind(), "InputNotFound");
    }

    #[test]
    fn row_mismatch_is_reported() {
        let err = Dataset::new(DMatrix::zeros(4, 2), DVector::zeros(3)).unwrap_err();
        assert_eq!(err.kind(), "DimensionMismatch");
    }
}

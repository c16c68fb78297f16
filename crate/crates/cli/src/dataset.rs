//! Dataset directory ingestion and validation.
//!
//! Schema (written by `generate-synthetic` and consumed everywhere):
//!   features.csv  N rows x L columns
//!   params.csv    N rows x K columns (the low-quality parameters A)
//!   versions.csv  N*M rows: image_id, version_id, then K parameters
//!                 (ids 0-based; any row order, every pair exactly once)
//!   manifest.txt  generator/config echo (presence required, content free)

use fbptf_core::matrix::Matrix;
use fbptf_core::tensor::{DeltaTensor, Tensor3};
use fbptf_core::{Error, Result};
use std::collections::BTreeSet;
use std::path::Path;

/// In-memory dataset: base parameters A (K x N), version parameters
/// (N x M x K), features (L x N), and per-image string ids.
#[derive(Debug, Clone)]
pub struct ParameterDataset {
    pub a: Matrix,
    pub versions: Tensor3,
    pub features: Matrix,
    pub ids: Vec<String>,
}

impl ParameterDataset {
    pub fn n(&self) -> usize {
        self.a.cols()
    }

    pub fn m(&self) -> usize {
        self.versions.m
    }

    pub fn k(&self) -> usize {
        self.a.rows()
    }

    pub fn l(&self) -> usize {
        self.features.rows()
    }

    /// Delta tensor ΔR = A' - A over the selected images, rows in the
    /// given order, every cell observed.
    pub fn delta_rows(&self, rows: &[usize]) -> Result<DeltaTensor> {
        let (m, k) = (self.m(), self.k());
        let mut values = Vec::with_capacity(rows.len() * m * k);
        for &i in rows {
            self.check_row(i)?;
            for j in 0..m {
                for kk in 0..k {
                    values.push(self.versions.get(i, j, kk) - self.a.get(kk, i));
                }
            }
        }
        let mask = vec![1u8; values.len()];
        DeltaTensor::new(rows.len(), m, k, values, mask)
    }

    /// Feature columns for the selected images (L x rows.len()).
    pub fn features_for(&self, rows: &[usize]) -> Result<Matrix> {
        self.select_cols(&self.features, rows)
    }

    /// Base-parameter columns for the selected images (K x rows.len()).
    pub fn a_for(&self, rows: &[usize]) -> Result<Matrix> {
        self.select_cols(&self.a, rows)
    }

    /// Model inputs for the selected images: base parameters stacked on top
    /// of the stored features, (K + L) x rows.len(). Every feature consumer
    /// (the coupled factorization, regression, and nearest-neighbor models)
    /// conditions on the parameters as well as the features.
    pub fn inputs_for(&self, rows: &[usize]) -> Result<Matrix> {
        let a = self.a_for(rows)?;
        let f = self.features_for(rows)?;
        Ok(Matrix::from_fn(self.k() + self.l(), rows.len(), |r, c| {
            if r < self.k() {
                a.get(r, c)
            } else {
                f.get(r - self.k(), c)
            }
        }))
    }

    fn select_cols(&self, src: &Matrix, rows: &[usize]) -> Result<Matrix> {
        for &i in rows {
            self.check_row(i)?;
        }
        Ok(Matrix::from_fn(src.rows(), rows.len(), |r, c| src.get(r, rows[c])))
    }

    fn check_row(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::Invalid {
                op: "ParameterDataset",
                detail: format!("image index {i} outside 0..{}", self.n()),
            });
        }
        Ok(())
    }
}

fn parse_field<T: std::str::FromStr>(
    field: &str,
    path: &str,
    line: usize,
    column: usize,
    what: &str,
) -> Result<T> {
    field.trim().parse().map_err(|_| Error::Parse {
        path: path.to_string(),
        line,
        column,
        detail: format!("expected {what}, got {field:?}"),
    })
}

/// Loads and validates a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<ParameterDataset> {
    let manifest = dir.join("manifest.txt");
    if !manifest.is_file() {
        return Err(Error::Invalid {
            op: "load_dataset",
            detail: format!("{} is missing manifest.txt", dir.display()),
        });
    }
    let features = Matrix::read_csv_file(&dir.join("features.csv"))?.transpose();
    let a = Matrix::read_csv_file(&dir.join("params.csv"))?.transpose();
    let n = a.cols();
    let k = a.rows();
    if features.cols() != n {
        return Err(Error::Dimension {
            op: "load_dataset",
            detail: format!(
                "features.csv has {} rows but params.csv has {n}",
                features.cols()
            ),
        });
    }

    let vpath = dir.join("versions.csv");
    let vname = vpath.display().to_string();
    let text = std::fs::read_to_string(&vpath).map_err(|e| Error::io(vname.clone(), e))?;
    let mut entries: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    let mut m = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + k {
            return Err(Error::Parse {
                path: vname.clone(),
                line: lineno,
                column: fields.len(),
                detail: format!("expected {} fields (image, version, {k} parameters)", 2 + k),
            });
        }
        let image: usize = parse_field(fields[0], &vname, lineno, 1, "an image id")?;
        let version: usize = parse_field(fields[1], &vname, lineno, 2, "a version id")?;
        if image >= n {
            return Err(Error::Parse {
                path: vname.clone(),
                line: lineno,
                column: 1,
                detail: format!("image id {image} outside 0..{n}"),
            });
        }
        let mut params = Vec::with_capacity(k);
        for (idx, field) in fields[2..].iter().enumerate() {
            let v: f64 = parse_field(field, &vname, lineno, 3 + idx, "a number")?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: vname.clone(),
                    line: lineno,
                    column: 3 + idx,
                    detail: "non-finite value".to_string(),
                });
            }
            params.push(v);
        }
        m = m.max(version + 1);
        entries.push((image, version, params));
    }
    if m == 0 {
        return Err(Error::Invalid {
            op: "load_dataset",
            detail: format!("{vname} contains no version rows"),
        });
    }

    let mut values = vec![0.0; n * m * k];
    let mut seen = BTreeSet::new();
    for (image, version, params) in entries {
        if !seen.insert((image, version)) {
            return Err(Error::Invalid {
                op: "load_dataset",
                detail: format!("duplicate entry for image {image} version {version} in {vname}"),
            });
        }
        for (kk, v) in params.into_iter().enumerate() {
            values[(image * m + version) * k + kk] = v;
        }
    }
    for i in 0..n {
        for j in 0..m {
            if !seen.contains(&(i, j)) {
                return Err(Error::Invalid {
                    op: "load_dataset",
                    detail: format!("{vname} is missing the entry for image {i} version {j}"),
                });
            }
        }
    }
    let versions = Tensor3::new(n, m, k, values)?;
    let ids = (0..n).map(|i| i.to_string()).collect();
    Ok(ParameterDataset { a, versions, features, ids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use fbptf_core::synthetic::{generate, write_dataset, SyntheticConfig};

    fn small_dataset_dir(dir: &Path) {
        let cfg = SyntheticConfig { n: 12, l: 5, m: 3, seed: 9, ..SyntheticConfig::default() };
        let ds = generate(&cfg).unwrap();
        write_dataset(&ds, dir).unwrap();
    }

    #[test]
    fn loads_the_generator_output_with_matching_shapes() {
        let tmp = tempfile::tempdir().unwrap();
        small_dataset_dir(tmp.path());
        let ds = load_dataset(tmp.path()).unwrap();
        assert_eq!((ds.n(), ds.m(), ds.k(), ds.l()), (12, 3, 3, 5));
        assert_eq!(ds.ids.len(), 12);
        // Spot-check the delta derivation against the raw files.
        let delta = ds.delta_rows(&[4, 0]).unwrap();
        let expect = ds.versions.get(4, 1, 2) - ds.a.get(2, 4);
        assert_eq!(delta.value(0, 1, 2).to_bits(), expect.to_bits());
        let expect = ds.versions.get(0, 0, 0) - ds.a.get(0, 0);
        assert_eq!(delta.value(1, 0, 0).to_bits(), expect.to_bits());
    }

    #[test]
    fn missing_version_rows_are_named() {
        let tmp = tempfile::tempdir().unwrap();
        small_dataset_dir(tmp.path());
        let vpath = tmp.path().join("versions.csv");
        let text = std::fs::read_to_string(&vpath).unwrap();
        let pruned: Vec<&str> = text.lines().filter(|l| !l.starts_with("7,2")).collect();
        std::fs::write(&vpath, pruned.join("\n")).unwrap();
        let err = load_dataset(tmp.path()).unwrap_err().to_string();
        assert!(err.contains("image 7 version 2"), "error was: {err}");
    }

    #[test]
    fn mismatched_row_counts_and_bad_fields_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        small_dataset_dir(tmp.path());
        // Drop one features row.
        let fpath = tmp.path().join("features.csv");
        let text = std::fs::read_to_string(&fpath).unwrap();
        let fewer: Vec<&str> = text.lines().take(11).collect();
        std::fs::write(&fpath, fewer.join("\n")).unwrap();
        assert!(load_dataset(tmp.path()).is_err());

        // Restore, then corrupt a number in versions.csv.
        small_dataset_dir(tmp.path());
        let vpath = tmp.path().join("versions.csv");
        let text = std::fs::read_to_string(&vpath).unwrap();
        let bad = text.replacen(',', ",oops", 1);
        std::fs::write(&vpath, bad).unwrap();
        let err = load_dataset(tmp.path()).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("versions.csv"));
    }

    #[test]
    fn missing_manifest_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        small_dataset_dir(tmp.path());
        std::fs::remove_file(tmp.path().join("manifest.txt")).unwrap();
        assert!(load_dataset(tmp.path()).is_err());
    }
}

//! Point samples on the unit cube, with CSV persistence.

use std::path::Path;

use crate::error::{Error, Result};

/// `n` points in `[0,1]^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    points: Vec<f64>,
    /// Seed used to generate the sample; 0 for external data.
    pub seed: u64,
    /// Label of the generating density.
    pub model_tag: String,
}

impl Dataset {
    /// Builds a dataset from row-major coordinates.
    ///
    /// Fails unless `dim > 0`, there is at least one row, the buffer length is a
    /// multiple of `dim`, and every coordinate lies in `[0, 1]`.
    pub fn new(
        dim: usize,
        points: Vec<f64>,
        seed: u64,
        model_tag: impl Into<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dataset dimension must be positive"));
        }
        if points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "dataset buffer of length {} does not hold whole rows of dimension {dim}",
                points.len()
            )));
        }
        if let Some(&bad) = points.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfDomain {
                value: bad,
                domain: "[0, 1]",
            });
        }
        Ok(Self {
            dim,
            points,
            seed,
            model_tag: model_tag.into(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], seed: u64, model_tag: impl Into<String>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: r.len(),
            });
        }
        Self::new(dim, rows.concat(), seed, model_tag)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.dim)
    }

    /// Flat row-major coordinates.
    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    /// Rows `range` as a new dataset carrying the same provenance.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::invalid(format!(
                "row range {range:?} invalid for {} rows",
                self.len()
            )));
        }
        Ok(Self {
            dim: self.dim,
            points: self.points[range.start * self.dim..range.end * self.dim].to_vec(),
            seed: self.seed,
            model_tag: self.model_tag.clone(),
        })
    }

    /// Rows selected by index.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::invalid("cannot select zero rows"));
        }
        let mut points = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            points.extend_from_slice(self.row(i));
        }
        Ok(Self {
            dim: self.dim,
            points,
            seed: self.seed,
            model_tag: self.model_tag.clone(),
        })
    }

    /// Appends the rows of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        Ok(Self {
            dim: self.dim,
            points,
            seed: self.seed,
            model_tag: self.model_tag.clone(),
        })
    }

    /// Writes the header `x1,...,xd` and one row per point with 17 significant digits.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record((1..=self.dim).map(|j| format!("x{j}")))?;
        for row in self.rows() {
            w.write_record(row.iter().map(|v| format!("{v:.16e}")))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let dim = r.headers()?.len();
        let mut points = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: rec.len(),
                });
            }
            for field in rec.iter() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::invalid(format!("non-numeric field {field:?} in {}", path.display()))
                })?;
                points.push(v);
            }
        }
        Self::new(dim, points, 0, path.display().to_string())
    }
}

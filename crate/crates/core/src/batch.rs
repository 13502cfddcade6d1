//! The dataset unit: `N` matrices of a common shape with optional
//! per-entry observation masks.

use crate::error::{shape_err, Error, Result};
use crate::linalg::Mat;

/// Observation pattern of one matrix; `true` marks an observed entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    observed: Vec<bool>,
}

impl Mask {
    pub fn full(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            observed: vec![true; rows * cols],
        }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            observed: vec![false; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, observed: Vec<bool>) -> Result<Self> {
        if observed.len() != rows * cols {
            return Err(shape_err(format!(
                "mask has {} entries, expected {rows}x{cols}",
                observed.len()
            )));
        }
        Ok(Mask {
            rows,
            cols,
            observed,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.observed
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[i * self.cols + j]
    }

    pub fn count_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn is_full(&self) -> bool {
        self.observed.iter().all(|&o| o)
    }

    /// `P_Omega(m)`: keeps observed entries, zeroes the rest.
    pub fn project(&self, m: &Mat) -> Mat {
        assert_eq!(m.shape(), self.shape());
        let data = m
            .as_slice()
            .iter()
            .zip(&self.observed)
            .map(|(&v, &o)| if o { v } else { 0.0 })
            .collect();
        Mat::from_vec(self.rows, self.cols, data).expect("shape checked")
    }
}

/// Free-form `key=value` metadata carried alongside a batch (patch specs etc).
pub type Metadata = Vec<(String, String)>;

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixBatch {
    m1: usize,
    m2: usize,
    matrices: Vec<Mat>,
    masks: Option<Vec<Mask>>,
    pub metadata: Option<Metadata>,
}

impl MatrixBatch {
    /// A complete batch. All matrices must share one shape and be finite.
    pub fn new(m1: usize, m2: usize, matrices: Vec<Mat>) -> Result<Self> {
        for (i, m) in matrices.iter().enumerate() {
            if m.shape() != (m1, m2) {
                return Err(shape_err(format!(
                    "matrix {i} has shape {:?}, batch shape is {m1}x{m2}",
                    m.shape()
                )));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite(format!(
                    "matrix {i} has non-finite entries"
                )));
            }
        }
        Ok(MatrixBatch {
            m1,
            m2,
            matrices,
            masks: None,
            metadata: None,
        })
    }

    /// Batch from a non-empty list, taking the shape from the first matrix.
    pub fn from_matrices(matrices: Vec<Mat>) -> Result<Self> {
        let (m1, m2) = matrices
            .first()
            .map(Mat::shape)
            .ok_or_else(|| shape_err("cannot infer the shape of an empty batch"))?;
        Self::new(m1, m2, matrices)
    }

    pub fn with_masks(mut self, masks: Vec<Mask>) -> Result<Self> {
        if masks.len() != self.matrices.len() {
            return Err(shape_err(format!(
                "{} masks for {} matrices",
                masks.len(),
                self.matrices.len()
            )));
        }
        if let Some(bad) = masks.iter().position(|k| k.shape() != (self.m1, self.m2)) {
            return Err(shape_err(format!(
                "mask {bad} has shape {:?}",
                masks[bad].shape()
            )));
        }
        self.masks = Some(masks);
        Ok(self)
    }

    pub fn without_masks(mut self) -> Self {
        self.masks = None;
        self
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.m1, self.m2)
    }

    pub fn matrices(&self) -> &[Mat] {
        &self.matrices
    }

    pub fn into_matrices(self) -> Vec<Mat> {
        self.matrices
    }

    pub fn masks(&self) -> Option<&[Mask]> {
        self.masks.as_deref()
    }

    /// Mask of sample `i`; a full mask when the batch carries none.
    pub fn mask(&self, i: usize) -> Mask {
        match &self.masks {
            Some(m) => m[i].clone(),
            None => Mask::full(self.m1, self.m2),
        }
    }

    /// True when no entry of any sample is missing.
    pub fn is_complete(&self) -> bool {
        self.masks
            .as_ref()
            .map_or(true, |ms| ms.iter().all(Mask::is_full))
    }

    pub fn observed_fraction(&self) -> f64 {
        match &self.masks {
            None => 1.0,
            Some(ms) => {
                let obs: usize = ms.iter().map(Mask::count_observed).sum();
                obs as f64 / (ms.len() * self.m1 * self.m2).max(1) as f64
            }
        }
    }

    /// Mean squared Frobenius norm over the batch.
    pub fn mean_energy(&self) -> f64 {
        if self.matrices.is_empty() {
            return 0.0;
        }
        self.matrices.iter().map(Mat::frob_norm_sq).sum::<f64>() / self.matrices.len() as f64
    }

    /// Splits into the first `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> (MatrixBatch, MatrixBatch) {
        let n = n.min(self.len());
        let part = |range: std::ops::Range<usize>| MatrixBatch {
            m1: self.m1,
            m2: self.m2,
            matrices: self.matrices[range.clone()].to_vec(),
            masks: self.masks.as_ref().map(|m| m[range].to_vec()),
            metadata: self.metadata.clone(),
        };
        (part(0..n), part(n..self.len()))
    }

    /// Looks up a metadata value.
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .as_ref()?
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

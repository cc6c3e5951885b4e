use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Dataset, DecoderError};

/// Lower bound on a feature's standard deviation.
pub const STD_FLOOR: f64 = 1e-12;

/// Per-feature z-scoring with statistics from the training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(ds: &Dataset, rows: Range<usize>) -> Result<Self, DecoderError> {
        Self::fit_rows(ds.rows(rows), ds.n_features())
    }

    /// Population mean and standard deviation over row-major `data`.
    pub fn fit_rows(data: &[f64], n_features: usize) -> Result<Self, DecoderError> {
        let n = data.len() / n_features;
        if n == 0 {
            return Err(DecoderError::EmptyTrain);
        }
        let mut mean = vec![0.0; n_features];
        for row in data.chunks_exact(n_features) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; n_features];
        for row in data.chunks_exact(n_features) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| (s / n as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, DecoderError> {
        if x.len() != self.mean.len() {
            return Err(DecoderError::ShapeMismatch {
                expected: self.mean.len(),
                got: x.len(),
            });
        }
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect())
    }

    /// Normalizes a row-major block.
    pub fn apply_rows(&self, data: &[f64]) -> Vec<f64> {
        let nf = self.mean.len();
        let mut out = Vec::with_capacity(data.len());
        for row in data.chunks_exact(nf) {
            for ((v, m), s) in row.iter().zip(&self.mean).zip(&self.std) {
                out.push((v - m) / s);
            }
        }
        out
    }
}

use nalgebra::{DMatrix, DVector};

use super::{Dataset, DecoderError, Normalizer, ProportionalDecoder};
use crate::kinematics::{HandState, HAND_DOF};

/// Ridge regression from normalized features to the guide state, outputs clamped to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRegressor {
    /// `HAND_DOF` rows of `n_features + 1` weights; the last column is the bias.
    pub weights: Vec<Vec<f64>>,
}

impl LinearRegressor {
    /// Solves `(X'X + l2 I) w = X'y` per output with an unpenalized bias column.
    pub fn fit(data: &[f64], n_features: usize, targets: &[HandState], l2: f64) -> Result<Self, DecoderError> {
        let n = targets.len();
        if n == 0 {
            return Err(DecoderError::EmptyTrain);
        }
        if data.len() != n * n_features {
            return Err(DecoderError::ShapeMismatch {
                expected: n * n_features,
                got: data.len(),
            });
        }
        let d = n_features + 1;
        let x = DMatrix::from_fn(n, d, |i, j| if j == n_features { 1.0 } else { data[i * n_features + j] });
        let mut gram = x.transpose() * &x;
        for j in 0..n_features {
            gram[(j, j)] += l2;
        }
        let chol = gram
            .cholesky()
            .ok_or(DecoderError::Singular)?;
        let weights = (0..HAND_DOF)
            .map(|k| {
                let y = DVector::from_iterator(n, targets.iter().map(|t| t[k]));
                chol.solve(&(x.transpose() * y)).iter().copied().collect()
            })
            .collect();
        Ok(Self { weights })
    }

    pub fn n_features(&self) -> usize {
        self.weights[0].len() - 1
    }
}

impl ProportionalDecoder for LinearRegressor {
    fn predict_state(&self, x: &[f64]) -> Result<HandState, DecoderError> {
        let nf = self.n_features();
        if x.len() != nf {
            return Err(DecoderError::ShapeMismatch { expected: nf, got: x.len() });
        }
        let mut out = [0.0; HAND_DOF];
        for (o, w) in out.iter_mut().zip(&self.weights) {
            *o = w[..nf].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[nf];
        }
        Ok(HandState::clamped(out))
    }
}

/// Fits the normalizer and a ridge regressor on the training split.
pub fn train_linear_regressor(ds: &Dataset, l2: f64) -> Result<(LinearRegressor, Normalizer), DecoderError> {
    let norm = Normalizer::fit(ds, ds.split.train.clone())?;
    let x = norm.apply_rows(ds.rows(ds.split.train.clone()));
    let model = LinearRegressor::fit(&x, ds.n_features(), &ds.guide[ds.split.train.clone()], l2)?;
    Ok((model, norm))
}

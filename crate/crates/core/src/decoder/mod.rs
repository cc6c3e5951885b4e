//! Movement decoders: dataset assembly, normalization, the boosted-tree
//! classifier, a linear proportional baseline, and model persistence.

mod dataset;
mod gbdt;
mod linear;
mod model_file;
mod normalize;

use thiserror::Error;

pub use dataset::{assemble, AssembleOptions, Dataset, Split};
pub use gbdt::{BinMapper, GbdtModel, GbdtParams, Node, TrainTrace, Tree};
pub use linear::{train_linear_regressor, LinearRegressor};
pub use model_file::{load_model, save_model, SavedModel, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use normalize::{Normalizer, STD_FLOOR};

use crate::kinematics::HandState;

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("segment {movement:?} has {frames} frames; at least {need} are required")]
    TooShort {
        movement: String,
        frames: usize,
        need: usize,
    },
    #[error("no guide samples cover the window ending at t={t_us} us in segment {movement:?}")]
    MissingGuide { movement: String, t_us: u64 },
    #[error("training split is empty")]
    EmptyTrain,
    #[error("class {0:?} has no training samples")]
    DegenerateClass(String),
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("expected {expected} features, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("model file format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model was trained with catalog {saved}, current catalog is {current}")]
    CatalogMismatch { saved: String, current: String },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("normal equations are singular")]
    Singular,
    #[error("unknown movement: {0}")]
    UnknownMovement(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Class probabilities from a classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxOutput {
    pub probs: Vec<f64>,
}

impl SoftmaxOutput {
    /// Numerically stable softmax of raw scores.
    pub fn from_scores(scores: &[f64]) -> Self {
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let sum: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= sum);
        Self { probs }
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// Most probable class; ties go to the lower class index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn n_classes(&self) -> usize {
        self.probs.len()
    }

    /// Class indices by descending probability, ties by ascending index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.probs.len()).collect();
        order.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        order
    }
}

/// A movement classifier over normalized features.
pub trait Classifier: Send + Sync {
    fn n_features(&self) -> usize;
    fn n_classes(&self) -> usize;
    fn predict_proba(&self, features: &[f64]) -> Result<SoftmaxOutput, DecoderError>;
}

/// A proportional decoder mapping normalized features to a hand state.
pub trait ProportionalDecoder: Send + Sync {
    fn predict_state(&self, features: &[f64]) -> Result<HandState, DecoderError>;
}

/// Normalizes raw features and classifies them.
pub fn predict(
    model: &dyn Classifier,
    norm: &Normalizer,
    features: &[f64],
) -> Result<SoftmaxOutput, DecoderError> {
    let x = norm.apply(features)?;
    model.predict_proba(&x)
}

/// Fits the normalizer on the training split and trains the classifier on it.
pub fn train_gbdt(
    ds: &Dataset,
    params: &GbdtParams,
) -> Result<(GbdtModel, Normalizer, TrainTrace), DecoderError> {
    let norm = Normalizer::fit(ds, ds.split.train.clone())?;
    let x = norm.apply_rows(ds.rows(ds.split.train.clone()));
    let y = &ds.y[ds.split.train.clone()];
    for (k, name) in ds.classes.iter().enumerate() {
        if !y.contains(&k) {
            return Err(DecoderError::DegenerateClass(name.clone()));
        }
    }
    let (model, trace) = GbdtModel::fit(&x, ds.n_features(), y, ds.classes.len(), params)?;
    Ok((model, norm, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one_and_ranks() {
        let s = SoftmaxOutput::from_scores(&[1.0, 3.0, 3.0, -2.0]);
        assert!((s.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(s.argmax(), 1);
        assert_eq!(s.ranking(), vec![1, 2, 0, 3]);
        let big = SoftmaxOutput::from_scores(&[1000.0, 0.0]);
        assert!(big.probs.iter().all(|p| p.is_finite()));
        assert_eq!(SoftmaxOutput::uniform(4).probs, vec![0.25; 4]);
    }
}

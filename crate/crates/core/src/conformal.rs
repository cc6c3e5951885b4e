//! Regularized adaptive prediction sets (RAPS) and the temporal set solver.
//!
//! The score of a class is the probability mass of all classes ranked at or
//! above it plus `lambda * max(0, rank - k_reg)` (ranks start at 1). A class
//! enters the prediction set when its score is at most the calibrated
//! quantile `q_hat`; the top-ranked class is always included.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::SoftmaxOutput;

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_LAMBDA: f64 = 0.01;
pub const DEFAULT_K_REG: usize = 1;
/// Number of recent sets the solver votes over.
pub const SOLVER_WINDOW: usize = 75;

#[derive(Debug, Error, PartialEq)]
pub enum ConformalError {
    #[error("class {class} is out of range for {n_classes} classes")]
    UnknownClass { class: usize, n_classes: usize },
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("alpha must be in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("lambda must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
    #[error("conformal predictor is not calibrated")]
    NotCalibrated,
}

/// RAPS hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RapsParams {
    pub alpha: f64,
    pub lambda: f64,
    pub k_reg: usize,
}

impl Default for RapsParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            lambda: DEFAULT_LAMBDA,
            k_reg: DEFAULT_K_REG,
        }
    }
}

impl RapsParams {
    pub fn validate(&self) -> Result<(), ConformalError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ConformalError::InvalidAlpha(self.alpha));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(ConformalError::InvalidLambda(self.lambda));
        }
        Ok(())
    }

    fn penalty(&self, rank: usize) -> f64 {
        self.lambda * rank.saturating_sub(self.k_reg) as f64
    }
}

/// Calibrated RAPS predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RapsCalibration {
    pub alpha: f64,
    pub lambda: f64,
    pub k_reg: usize,
    pub q_hat: f64,
}

impl RapsCalibration {
    pub fn new(alpha: f64, lambda: f64, k_reg: usize, q_hat: f64) -> Result<Self, ConformalError> {
        RapsParams { alpha, lambda, k_reg }.validate()?;
        Ok(Self {
            alpha,
            lambda,
            k_reg,
            q_hat,
        })
    }

    pub fn params(&self) -> RapsParams {
        RapsParams {
            alpha: self.alpha,
            lambda: self.lambda,
            k_reg: self.k_reg,
        }
    }
}

/// Conformity score of `true_class` under `probs`.
pub fn raps_score(probs: &SoftmaxOutput, true_class: usize, params: &RapsParams) -> Result<f64, ConformalError> {
    let n = probs.n_classes();
    if true_class >= n {
        return Err(ConformalError::UnknownClass {
            class: true_class,
            n_classes: n,
        });
    }
    let mut mass = 0.0;
    for (i, c) in probs.ranking().into_iter().enumerate() {
        mass += probs.probs[c];
        if c == true_class {
            return Ok(mass + params.penalty(i + 1));
        }
    }
    unreachable!("ranking contains every class")
}

/// The `ceil((n+1)(1-alpha))`-th smallest score, clipped to the largest.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64, ConformalError> {
    if scores.is_empty() {
        return Err(ConformalError::EmptyCalibration);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ConformalError::InvalidAlpha(alpha));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // The small slack keeps exact products such as 10 * 0.9 from rounding up.
    let k = (((n + 1) as f64) * (1.0 - alpha) - 1e-9).ceil() as usize;
    Ok(sorted[k.clamp(1, n) - 1])
}

/// Scores every calibration sample and takes the conformal quantile.
pub fn calibrate<'a>(
    samples: impl IntoIterator<Item = (&'a SoftmaxOutput, usize)>,
    params: &RapsParams,
) -> Result<RapsCalibration, ConformalError> {
    params.validate()?;
    let scores = samples
        .into_iter()
        .map(|(p, y)| raps_score(p, y, params))
        .collect::<Result<Vec<_>, _>>()?;
    let q_hat = conformal_quantile(&scores, params.alpha)?;
    RapsCalibration::new(params.alpha, params.lambda, params.k_reg, q_hat)
}

/// Candidate classes for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    /// Class indices by descending probability; never empty.
    pub labels: Vec<usize>,
    pub certain: bool,
    pub probs: SoftmaxOutput,
}

impl PredictionSet {
    pub fn contains(&self, class: usize) -> bool {
        self.labels.contains(&class)
    }

    /// Top-1 singleton, as produced by a plain argmax decoder.
    pub fn argmax(probs: SoftmaxOutput) -> Self {
        Self {
            labels: vec![probs.argmax()],
            certain: true,
            probs,
        }
    }
}

pub fn predict_set(probs: SoftmaxOutput, cal: &RapsCalibration) -> PredictionSet {
    let params = cal.params();
    let mut labels = Vec::new();
    let mut mass = 0.0;
    for (i, c) in probs.ranking().into_iter().enumerate() {
        mass += probs.probs[c];
        if i > 0 && mass + params.penalty(i + 1) > cal.q_hat {
            break;
        }
        labels.push(c);
    }
    PredictionSet {
        certain: labels.len() == 1,
        labels,
        probs,
    }
}

/// Majority vote over the most recent prediction sets.
#[derive(Debug, Clone)]
pub struct SolverWindow {
    history: VecDeque<PredictionSet>,
    capacity: usize,
}

impl Default for SolverWindow {
    fn default() -> Self {
        Self::new(SOLVER_WINDOW)
    }
}

impl SolverWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "solver window capacity must be positive");
        Self {
            history: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn clear(&mut self) {
        self.history.clear();
    }

    /// Oldest first.
    pub fn history(&self) -> impl Iterator<Item = &PredictionSet> {
        self.history.iter()
    }

    /// Pushes `set` and returns the decided class.
    ///
    /// A certain set decides on its own. Otherwise the label occurring in the
    /// most sets of the window wins; ties go to the higher probability in the
    /// newest set, then to the lower class index.
    pub fn solve(&mut self, set: PredictionSet) -> usize {
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        self.history.push_back(set);
        let newest = self.history.back().expect("just pushed");
        if newest.certain {
            return newest.labels[0];
        }
        let n = newest.probs.n_classes();
        let mut counts = vec![0usize; n];
        for s in &self.history {
            for &c in &s.labels {
                if c < n {
                    counts[c] += 1;
                }
            }
        }
        let mut best = 0;
        for c in 1..n {
            let better = counts[c] > counts[best]
                || (counts[c] == counts[best] && newest.probs.probs[c] > newest.probs.probs[best]);
            if better {
                best = c;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sm(p: &[f64]) -> SoftmaxOutput {
        SoftmaxOutput { probs: p.to_vec() }
    }

    fn cal(q_hat: f64) -> RapsCalibration {
        RapsCalibration::new(0.1, 0.01, 1, q_hat).unwrap()
    }

    #[test]
    fn score_of_certain_top_class_is_one() {
        let s = raps_score(&sm(&[1.0, 0.0, 0.0, 0.0]), 0, &RapsParams::default()).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn score_of_third_ranked_uniform_class() {
        // Uniform ties rank by index, so class 2 is third: 0.75 + 0.01 * (3 - 1).
        let s = raps_score(&sm(&[0.25; 4]), 2, &RapsParams::default()).unwrap();
        assert!((s - 0.77).abs() < 1e-12);
        assert_eq!(
            raps_score(&sm(&[0.25; 4]), 4, &RapsParams::default()),
            Err(ConformalError::UnknownClass { class: 4, n_classes: 4 })
        );
    }

    #[test]
    fn quantile_index_follows_formula() {
        let scores: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        assert_eq!(conformal_quantile(&scores, 0.1).unwrap(), 0.9);
        // n = 19: ceil(20 * 0.9) = 18th smallest.
        let scores: Vec<f64> = (1..=19).map(f64::from).collect();
        assert_eq!(conformal_quantile(&scores, 0.1).unwrap(), 18.0);
        assert_eq!(conformal_quantile(&[0.4; 7], 0.1).unwrap(), 0.4);
        assert_eq!(conformal_quantile(&[], 0.1), Err(ConformalError::EmptyCalibration));
        assert_eq!(conformal_quantile(&[1.0], 1.0), Err(ConformalError::InvalidAlpha(1.0)));
    }

    #[test]
    fn confident_probs_give_certain_singleton() {
        // Fixture: calibration samples whose true class holds 0.97 mass.
        let probs = sm(&[0.97, 0.01, 0.01, 0.01]);
        let c = calibrate(std::iter::repeat_n((&probs, 0), 20), &RapsParams::default()).unwrap();
        assert!((c.q_hat - 0.97).abs() < 1e-12);
        let set = predict_set(probs.clone(), &c);
        assert_eq!(set.labels, vec![0]);
        assert!(set.certain);

        let uniform = predict_set(sm(&[0.25; 4]), &c);
        assert!(uniform.labels.len() > 1);
        assert!(!uniform.certain);
    }

    #[test]
    fn zero_quantile_still_returns_top_class() {
        let set = predict_set(sm(&[0.1, 0.6, 0.3]), &cal(0.0));
        assert_eq!(set.labels, vec![1]);
        assert!(set.certain);
    }

    #[test]
    fn certain_set_decides_regardless_of_history() {
        let mut w = SolverWindow::default();
        for _ in 0..74 {
            w.solve(PredictionSet::argmax(sm(&[0.9, 0.1])));
        }
        assert_eq!(w.solve(PredictionSet::argmax(sm(&[0.2, 0.8]))), 1);
    }

    #[test]
    fn uncertain_set_takes_window_majority() {
        let mut w = SolverWindow::default();
        for _ in 0..40 {
            w.solve(PredictionSet::argmax(sm(&[0.9, 0.1])));
        }
        let mut last = 0;
        for _ in 0..35 {
            let set = PredictionSet {
                labels: vec![1, 0],
                certain: false,
                probs: sm(&[0.4, 0.6]),
            };
            last = w.solve(set);
        }
        assert_eq!(w.len(), 75);
        assert_eq!(last, 0);
    }

    #[test]
    fn count_tie_goes_to_newest_probability() {
        let mut w = SolverWindow::default();
        let set = PredictionSet {
            labels: vec![2, 0],
            certain: false,
            probs: sm(&[0.3, 0.1, 0.6]),
        };
        assert_eq!(w.solve(set), 2);
    }

    #[test]
    fn window_is_bounded() {
        let mut w = SolverWindow::new(75);
        for _ in 0..200 {
            w.solve(PredictionSet::argmax(sm(&[0.5, 0.5])));
        }
        assert_eq!(w.len(), 75);
    }

    #[test]
    fn coverage_on_exchangeable_synthetic_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let k = 5;
        let draw = |rng: &mut ChaCha8Rng| {
            let y = rng.random_range(0..k);
            let scores: Vec<f64> = (0..k)
                .map(|c| if c == y { 1.5 } else { 0.0 } + 1.5 * rng.random::<f64>())
                .collect();
            (SoftmaxOutput::from_scores(&scores), y)
        };
        let calib: Vec<_> = (0..1000).map(|_| draw(&mut rng)).collect();
        let c = calibrate(calib.iter().map(|(p, y)| (p, *y)), &RapsParams::default()).unwrap();
        let test: Vec<_> = (0..3000).map(|_| draw(&mut rng)).collect();
        let covered = test
            .iter()
            .filter(|(p, y)| predict_set(p.clone(), &c).contains(*y))
            .count();
        let rate = covered as f64 / test.len() as f64;
        assert!(rate >= 0.87, "coverage {rate}");
    }

    fn probs_strategy() -> impl Strategy<Value = SoftmaxOutput> {
        prop::collection::vec(-5.0f64..5.0, 2..10).prop_map(|s| SoftmaxOutput::from_scores(&s))
    }

    proptest! {
        #[test]
        fn set_is_a_nonempty_ranking_prefix(p in probs_strategy(), q in 0.0f64..1.2) {
            let set = predict_set(p.clone(), &cal(q));
            let ranking = p.ranking();
            prop_assert!(!set.labels.is_empty());
            prop_assert_eq!(&set.labels[..], &ranking[..set.labels.len()]);
            prop_assert_eq!(set.certain, set.labels.len() == 1);
        }

        #[test]
        fn score_bounded_and_monotone_in_rank(p in probs_strategy()) {
            let params = RapsParams::default();
            let n = p.n_classes();
            let max = 1.0 + params.lambda * (n - params.k_reg) as f64 + 1e-9;
            let mut prev = f64::NEG_INFINITY;
            for c in p.ranking() {
                let s = raps_score(&p, c, &params).unwrap();
                prop_assert!((0.0..=max).contains(&s));
                prop_assert!(s >= prev);
                prev = s;
            }
        }

        #[test]
        fn all_singletons_match_argmax(seq in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 1..200)) {
            let mut w = SolverWindow::default();
            for s in seq {
                let probs = SoftmaxOutput::from_scores(&s);
                let want = probs.argmax();
                prop_assert_eq!(w.solve(PredictionSet::argmax(probs)), want);
            }
        }

        #[test]
        fn true_class_in_set_iff_score_within_quantile(p in probs_strategy(), q in 0.0f64..1.2, c in 0usize..10) {
            let c = c % p.n_classes();
            let set = predict_set(p.clone(), &cal(q));
            let s = raps_score(&p, c, &RapsParams::default()).unwrap();
            if set.labels[0] != c {
                prop_assert_eq!(set.contains(c), s <= q);
            }
        }
    }
}

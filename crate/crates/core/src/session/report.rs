//! Naive and conformal accuracy per movement.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::GuideSample;
use crate::kinematics::{Catalog, ACTIVATION_BOUNDARY};

/// Guide sample nearest to `t_us`; ties go to the earlier sample.
pub fn nearest_guide(guide: &[GuideSample], t_us: u64) -> Option<&GuideSample> {
    let i = guide.partition_point(|g| g.t_us < t_us);
    match (i.checked_sub(1).map(|j| &guide[j]), guide.get(i)) {
        (Some(a), Some(b)) => Some(if t_us - a.t_us <= b.t_us - t_us { a } else { b }),
        (a, b) => a.or(b),
    }
}

/// Instant a prediction is paired with: the center of its feature window,
/// snapped to the frame-period grid.
///
/// `newest_t_us` is the newest frame's timestamp; the window spans
/// `buffer_frames` frame periods ending one period after it.
pub fn prediction_instant(newest_t_us: u64, period_us: u64, buffer_frames: usize) -> u64 {
    let end = newest_t_us + period_us;
    let center = end.saturating_sub(buffer_frames as u64 * period_us / 2);
    (center + period_us / 2) / period_us * period_us
}

/// Class index of a guide sample under the 50% rule for `movement`.
pub fn guide_class(sample: &GuideSample, movement: &str, catalog: &Catalog, classes: &[String]) -> usize {
    let Ok(display) = catalog.display_template(movement) else {
        return 0;
    };
    if display.activation(&sample.state) >= ACTIVATION_BOUNDARY {
        classes.iter().position(|c| c == movement).unwrap_or(0)
    } else {
        0
    }
}

/// One prediction instant with both decoders' outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedPrediction {
    pub t_us: u64,
    pub truth: usize,
    pub naive: usize,
    pub conformal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementResult {
    pub movement: String,
    pub samples: usize,
    pub naive_correct: usize,
    pub conformal_correct: usize,
    pub naive_accuracy: f64,
    pub conformal_accuracy: f64,
    /// Fraction of prediction sets that were singletons.
    pub certain_rate: f64,
}

impl MovementResult {
    pub fn from_predictions(movement: &str, preds: &[PairedPrediction], certain: usize) -> Self {
        let n = preds.len();
        let naive_correct = preds.iter().filter(|p| p.naive == p.truth).count();
        let conformal_correct = preds.iter().filter(|p| p.conformal == p.truth).count();
        let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        Self {
            movement: movement.to_owned(),
            samples: n,
            naive_correct,
            conformal_correct,
            naive_accuracy: frac(naive_correct),
            conformal_accuracy: frac(conformal_correct),
            certain_rate: frac(certain),
        }
    }
}

/// Mean and sample standard deviation; the deviation is 0 for fewer than two values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub movements: Vec<MovementResult>,
    pub naive_mean: f64,
    pub naive_std: f64,
    pub conformal_mean: f64,
    pub conformal_std: f64,
    pub conformal_enabled: bool,
    /// Wall-clock seconds per workflow phase.
    pub phase_durations_s: BTreeMap<String, f64>,
}

impl ValidationReport {
    pub fn new(movements: Vec<MovementResult>, conformal_enabled: bool) -> Self {
        let naive: Vec<f64> = movements.iter().map(|m| m.naive_accuracy).collect();
        let conformal: Vec<f64> = movements.iter().map(|m| m.conformal_accuracy).collect();
        let (naive_mean, naive_std) = mean_std(&naive);
        let (conformal_mean, conformal_std) = mean_std(&conformal);
        Self {
            movements,
            naive_mean,
            naive_std,
            conformal_mean,
            conformal_std,
            conformal_enabled,
            phase_durations_s: BTreeMap::new(),
        }
    }

    pub fn total_samples(&self) -> usize {
        self.movements.iter().map(|m| m.samples).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{GuideTiming, HandState};

    fn guide(ts: &[u64]) -> Vec<GuideSample> {
        ts.iter().map(|&t| GuideSample::new(t, HandState::REST, 0)).collect()
    }

    #[test]
    fn nearest_prefers_closer_then_earlier() {
        let g = guide(&[0, 16_667, 33_333]);
        assert_eq!(nearest_guide(&g, 8_000).unwrap().t_us, 0);
        assert_eq!(nearest_guide(&g, 9_000).unwrap().t_us, 16_667);
        assert_eq!(nearest_guide(&g, 16_667 + 8_333).unwrap().t_us, 16_667);
        assert_eq!(nearest_guide(&g, 1_000_000).unwrap().t_us, 33_333);
        assert!(nearest_guide(&[], 5).is_none());
    }

    #[test]
    fn instant_is_window_center_on_frame_grid() {
        // Frames at k * 9000; newest at 19 * 9000 covers [0, 180000).
        assert_eq!(prediction_instant(171_000, 9_000, 20), 90_000);
        for jitter in 0..4_500 {
            assert_eq!(prediction_instant(171_000 + jitter, 9_000, 20), 90_000);
            assert_eq!(prediction_instant(171_000 - jitter, 9_000, 20), 90_000);
        }
    }

    #[test]
    fn subframe_shift_keeps_pairing() {
        let timing = GuideTiming::default();
        let catalog = Catalog::standard();
        let target = catalog.get("index").unwrap().target;
        let g: Vec<GuideSample> = (0..450)
            .map(|k| {
                let t = k * 16_667;
                GuideSample::new(t, target.scaled(timing.activation(t as f64 / 1e6)), 2)
            })
            .collect();
        let classes: Vec<String> = ["rest", "index"].map(String::from).to_vec();
        for k in 19..800u64 {
            let base = prediction_instant(k * 9_000, 9_000, 20);
            let want = guide_class(nearest_guide(&g, base).unwrap(), "index", &catalog, &classes);
            for shift in [-4_499i64, -1_000, 1_000, 4_499] {
                let t = prediction_instant((k * 9_000).saturating_add_signed(shift), 9_000, 20);
                let got = guide_class(nearest_guide(&g, t).unwrap(), "index", &catalog, &classes);
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn all_rest_predictor_scores_rest_fraction() {
        let preds: Vec<PairedPrediction> = (0..100)
            .map(|i| PairedPrediction {
                t_us: i,
                truth: usize::from(i % 4 == 0),
                naive: 0,
                conformal: 0,
            })
            .collect();
        let r = MovementResult::from_predictions("thumb", &preds, 100);
        assert_eq!(r.naive_accuracy, 0.75);
        assert_eq!(r.conformal_accuracy, 0.75);
    }

    #[test]
    fn aggregates_across_movements_with_sample_std() {
        let m = |acc: f64| MovementResult {
            movement: "m".into(),
            samples: 10,
            naive_correct: 0,
            conformal_correct: 0,
            naive_accuracy: acc,
            conformal_accuracy: acc,
            certain_rate: 1.0,
        };
        let r = ValidationReport::new(vec![m(0.7), m(0.8), m(0.9)], true);
        assert!((r.naive_mean - 0.8).abs() < 1e-12);
        assert!((r.naive_std - 0.1).abs() < 1e-12);
        assert_eq!(r.total_samples(), 30);
        let back: ValidationReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}

//! Amplitude-modulated Gaussian noise standing in for muscle activity.

use myo_core::dsp::{GRID_COLS, GRID_ROWS};
use myo_core::kinematics::{Catalog, REST_ID};
use myo_core::proto::{EmgFrame, CHANNELS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::SimError;

pub const DEFAULT_NOISE_FLOOR: f64 = 40.0;
pub const DEFAULT_SNR: f64 = 6.0;
/// Channels that lose skin contact when the corresponding flag is set.
pub const NO_CONTACT_CHANNELS: [usize; 2] = [1, 17];
/// Amplitude of a contactless channel, in multiples of the noise floor.
pub const NO_CONTACT_GAIN: f64 = 20.0;

/// What the simulated participant is doing at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveSignal {
    pub movement: String,
    pub activation: f64,
}

impl DriveSignal {
    pub fn new(movement: impl Into<String>, activation: f64) -> Result<Self, SimError> {
        if !(0.0..=1.0).contains(&activation) {
            return Err(SimError::InvalidActivation(activation));
        }
        Ok(Self {
            movement: movement.into(),
            activation,
        })
    }

    pub fn rest() -> Self {
        Self {
            movement: REST_ID.to_owned(),
            activation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementPattern {
    pub movement: String,
    pub weights: Vec<f64>,
}

/// Per-movement spatial activation patterns plus the noise parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModel {
    patterns: Vec<MovementPattern>,
    pub noise_floor: f64,
    pub snr: f64,
    pub seed: u64,
    /// Per-entry of [`NO_CONTACT_CHANNELS`]: simulate a lifted electrode.
    pub no_contact: [bool; 2],
}

fn argmax(w: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in w.iter().enumerate() {
        if v > w[best] {
            best = i;
        }
    }
    best
}

impl SyntheticModel {
    pub fn new(patterns: Vec<MovementPattern>, noise_floor: f64, snr: f64, seed: u64) -> Result<Self, SimError> {
        if !(noise_floor > 0.0 && noise_floor.is_finite()) {
            return Err(SimError::InvalidModel(format!("noise floor {noise_floor}")));
        }
        if !(snr >= 0.0 && snr.is_finite()) {
            return Err(SimError::InvalidModel(format!("snr {snr}")));
        }
        let mut peaks = Vec::new();
        for p in &patterns {
            if p.weights.len() != CHANNELS {
                return Err(SimError::InvalidModel(format!("{}: {} weights", p.movement, p.weights.len())));
            }
            if p.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
                return Err(SimError::InvalidModel(format!("{}: negative weight", p.movement)));
            }
            let top = argmax(&p.weights);
            if (p.weights[top] - 1.0).abs() > 1e-12 {
                return Err(SimError::InvalidModel(format!("{}: max weight must be 1", p.movement)));
            }
            if peaks.contains(&top) {
                return Err(SimError::InvalidModel(format!("{}: shares peak channel {top}", p.movement)));
            }
            if patterns.iter().filter(|o| o.movement == p.movement).count() > 1 {
                return Err(SimError::InvalidModel(format!("{}: duplicate", p.movement)));
            }
            peaks.push(top);
        }
        Ok(Self {
            patterns,
            noise_floor,
            snr,
            seed,
            no_contact: [false; 2],
        })
    }

    /// Smooth bumps around the bracelet, one per non-rest catalog movement.
    ///
    /// Peaks are spread evenly along the rows and alternate between the two
    /// columns; the other column carries half the weight.
    pub fn standard(catalog: &Catalog, seed: u64) -> Result<Self, SimError> {
        let moves: Vec<_> = catalog.templates().iter().filter(|t| t.id != REST_ID).collect();
        let n = moves.len().max(1);
        if n > CHANNELS {
            return Err(SimError::InvalidModel(format!("{n} movements exceed {CHANNELS} channels")));
        }
        let sigma = (GRID_ROWS as f64 / n as f64).max(1.0) * 0.6;
        let patterns = moves
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let row = k * GRID_ROWS / n;
                // With more movements than rows, both columns of a row are used.
                let col = if n > GRID_ROWS { (k * GRID_ROWS * 2 / n) % GRID_COLS } else { k % GRID_COLS };
                let weights = (0..CHANNELS)
                    .map(|ch| {
                        let (r, c) = (ch % GRID_ROWS, ch / GRID_ROWS);
                        let d = r.abs_diff(row).min(GRID_ROWS - r.abs_diff(row)) as f64;
                        let w = (-d * d / (2.0 * sigma * sigma)).exp();
                        if c == col {
                            w
                        } else {
                            0.5 * w
                        }
                    })
                    .collect();
                MovementPattern {
                    movement: t.id.clone(),
                    weights,
                }
            })
            .collect();
        Self::new(patterns, DEFAULT_NOISE_FLOOR, DEFAULT_SNR, seed)
    }

    /// Each movement drives exactly one channel.
    pub fn one_hot(assignments: &[(&str, usize)], seed: u64) -> Result<Self, SimError> {
        let patterns = assignments
            .iter()
            .map(|&(m, ch)| {
                if ch >= CHANNELS {
                    return Err(SimError::InvalidModel(format!("{m}: channel {ch}")));
                }
                let mut weights = vec![0.0; CHANNELS];
                weights[ch] = 1.0;
                Ok(MovementPattern {
                    movement: m.to_owned(),
                    weights,
                })
            })
            .collect::<Result<_, _>>()?;
        Self::new(patterns, DEFAULT_NOISE_FLOOR, DEFAULT_SNR, seed)
    }

    pub fn with_snr(mut self, snr: f64) -> Self {
        self.snr = snr;
        self
    }

    pub fn with_noise_floor(mut self, floor: f64) -> Self {
        self.noise_floor = floor;
        self
    }

    pub fn patterns(&self) -> &[MovementPattern] {
        &self.patterns
    }

    pub fn pattern(&self, movement: &str) -> Option<&[f64]> {
        self.patterns
            .iter()
            .find(|p| p.movement == movement)
            .map(|p| p.weights.as_slice())
    }

    /// Expected RMS of every channel under `drive`, in ADC counts.
    pub fn channel_rms(&self, drive: &DriveSignal) -> Result<[f64; CHANNELS], SimError> {
        let pattern = match self.pattern(&drive.movement) {
            Some(p) => Some(p),
            None if drive.movement == REST_ID => None,
            None => return Err(SimError::UnknownMovement(drive.movement.clone())),
        };
        let a = drive.activation.clamp(0.0, 1.0);
        let mut rms = [self.noise_floor; CHANNELS];
        if let Some(p) = pattern {
            for (r, w) in rms.iter_mut().zip(p) {
                *r *= 1.0 + self.snr * a * w;
            }
        }
        for (flag, ch) in self.no_contact.iter().zip(NO_CONTACT_CHANNELS) {
            if *flag {
                rms[ch] = self.noise_floor * NO_CONTACT_GAIN;
            }
        }
        Ok(rms)
    }
}

/// One frame of zero-mean Gaussian noise scaled per channel by the drive.
///
/// The generator is seeded from `(model.seed, t_us)`, so a frame depends on
/// nothing but its inputs.
pub fn synth_frame(model: &SyntheticModel, drive: &DriveSignal, seq: u32, t_us: u64) -> Result<EmgFrame, SimError> {
    let rms = model.channel_rms(drive)?;
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    rng.set_stream(t_us);
    Ok(EmgFrame::from_fn(seq, t_us, |ch, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        (z * rms[ch]).round().clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16
    }))
}

//! Spatial conditioning of the 16x2 electrode grid and RMS feature extraction.
//!
//! The chain for one window is: reshape the 32 channels onto the physical
//! grid, pad rows circularly (the bracelet is a loop) and columns with zeros,
//! convolve every time sample with the 3x3 smoothing kernel, then take one
//! RMS value per channel. The time axis is never filtered.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::proto::{FrameBuffer, ProtoError, SignalMatrix, CHANNELS};

pub const GRID_ROWS: usize = 16;
pub const GRID_COLS: usize = 2;

/// `0.25 * [[0, 1, 0], [1, 0.5, 1], [0, 1, 0]]`.
pub const SMOOTHING_KERNEL: [[f64; 3]; 3] = [
    [0.0, 0.25, 0.0],
    [0.25, 0.125, 0.25],
    [0.0, 0.25, 0.0],
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DspError {
    #[error("expected {expected} channels, got {got}")]
    WrongShape { expected: usize, got: usize },
    #[error("channel map is not a bijection onto the 16x2 grid")]
    InvalidChannelMap,
    #[error(transparent)]
    Buffer(#[from] ProtoError),
}

/// Placement of each amplifier channel on the electrode grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMap {
    cells: Vec<(usize, usize)>,
}

impl Default for ChannelMap {
    /// Channel `k` sits at row `k mod 16`, column `k div 16`.
    fn default() -> Self {
        Self {
            cells: (0..CHANNELS).map(|k| (k % GRID_ROWS, k / GRID_ROWS)).collect(),
        }
    }
}

impl ChannelMap {
    pub fn new(cells: Vec<(usize, usize)>) -> Result<Self, DspError> {
        if cells.len() != CHANNELS {
            return Err(DspError::InvalidChannelMap);
        }
        let mut seen = [false; CHANNELS];
        for &(r, c) in &cells {
            if r >= GRID_ROWS || c >= GRID_COLS || seen[r * GRID_COLS + c] {
                return Err(DspError::InvalidChannelMap);
            }
            seen[r * GRID_COLS + c] = true;
        }
        Ok(Self { cells })
    }

    pub fn cell(&self, channel: usize) -> (usize, usize) {
        self.cells[channel]
    }
}

/// Signal laid out on the 16x2 grid, `len` samples per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSignal {
    len: usize,
    data: Vec<f64>,
}

impl GridSignal {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            data: vec![0.0; GRID_ROWS * GRID_COLS * len],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * GRID_COLS + col) * self.len;
        &self.data[i..i + self.len]
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let i = (row * GRID_COLS + col) * self.len;
        &mut self.data[i..i + self.len]
    }

    pub fn get(&self, row: usize, col: usize, t: usize) -> f64 {
        self.data[(row * GRID_COLS + col) * self.len + t]
    }
}

/// Grid with one padding row above and below and one padding column each side.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedGrid {
    len: usize,
    data: Vec<f64>,
}

impl PaddedGrid {
    pub const ROWS: usize = GRID_ROWS + 2;
    pub const COLS: usize = GRID_COLS + 2;

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Cell in padded coordinates; `(1, 1)` is grid cell `(0, 0)`.
    pub fn cell(&self, prow: usize, pcol: usize) -> &[f64] {
        let i = (prow * Self::COLS + pcol) * self.len;
        &self.data[i..i + self.len]
    }
}

pub fn to_grid(signal: &SignalMatrix, map: &ChannelMap) -> Result<GridSignal, DspError> {
    if signal.channels() != CHANNELS {
        return Err(DspError::WrongShape {
            expected: CHANNELS,
            got: signal.channels(),
        });
    }
    let mut grid = GridSignal::zeros(signal.len());
    for ch in 0..CHANNELS {
        let (r, c) = map.cell(ch);
        grid.cell_mut(r, c).copy_from_slice(signal.channel(ch));
    }
    Ok(grid)
}

pub fn from_grid(grid: &GridSignal, map: &ChannelMap) -> SignalMatrix {
    let mut out = SignalMatrix::zeros(CHANNELS, grid.len());
    for ch in 0..CHANNELS {
        let (r, c) = map.cell(ch);
        out.channel_mut(ch).copy_from_slice(grid.cell(r, c));
    }
    out
}

/// Circular padding over rows, zero padding over columns.
pub fn pad_grid(grid: &GridSignal) -> PaddedGrid {
    let len = grid.len();
    let mut data = vec![0.0; PaddedGrid::ROWS * PaddedGrid::COLS * len];
    for prow in 0..PaddedGrid::ROWS {
        let src_row = (prow + GRID_ROWS - 1) % GRID_ROWS;
        for col in 0..GRID_COLS {
            let i = (prow * PaddedGrid::COLS + col + 1) * len;
            data[i..i + len].copy_from_slice(grid.cell(src_row, col));
        }
    }
    PaddedGrid { len, data }
}

/// Applies [`SMOOTHING_KERNEL`] at every time sample; output keeps the 16x2 shape.
pub fn spatial_filter(grid: &GridSignal) -> GridSignal {
    let padded = pad_grid(grid);
    let mut out = GridSignal::zeros(grid.len());
    for row in 0..GRID_ROWS {
        for col in 0..GRID_COLS {
            let dst = out.cell_mut(row, col);
            for (kr, krow) in SMOOTHING_KERNEL.iter().enumerate() {
                for (kc, &w) in krow.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let src = padded.cell(row + kr, col + kc);
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
    }
    out
}

/// Per-channel RMS of the filtered window, in channel order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub rms: [f64; CHANNELS],
    /// Timestamp of the newest frame in the window.
    pub t_us: u64,
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Full feature chain over an arbitrary 32-channel signal.
pub fn features_from_signal(
    signal: &SignalMatrix,
    map: &ChannelMap,
    t_us: u64,
) -> Result<FeatureVector, DspError> {
    let filtered = spatial_filter(&to_grid(signal, map)?);
    let mut out = [0.0; CHANNELS];
    for (ch, v) in out.iter_mut().enumerate() {
        let (r, c) = map.cell(ch);
        *v = rms(filtered.cell(r, c));
    }
    Ok(FeatureVector { rms: out, t_us })
}

pub fn extract_features(buf: &FrameBuffer, map: &ChannelMap) -> Result<FeatureVector, DspError> {
    let signal = buf.concat()?;
    let t_us = buf.newest().map_or(0, |f| f.t_us);
    features_from_signal(&signal, map, t_us)
}

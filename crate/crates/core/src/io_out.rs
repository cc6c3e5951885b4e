//! Output side: hand-state datagrams, transition smoothing, the 2D cursor
//! mapping, a lock-free latest-state cell and fixed-rate UDP senders.
//!
//! ```text
//! hand datagram   "MGH1" | u64 t_us | 9 x f32      (48 bytes)
//! cursor datagram "MGC1" | u64 t_us | f32 x | f32 y (20 bytes)
//! ```
//! All fields little-endian.

use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{fence, AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{HandState, HAND_DOF, REST_ID};

pub const HAND_MAGIC: &[u8; 4] = b"MGH1";
pub const HAND_DATAGRAM_LEN: usize = 4 + 8 + 4 * HAND_DOF;
pub const CURSOR_MAGIC: &[u8; 4] = b"MGC1";
pub const CURSOR_DATAGRAM_LEN: usize = 4 + 8 + 8;
/// Prediction output rate, Hz.
pub const PREDICTION_RATE_HZ: f64 = 32.0;
/// Guide output rate, Hz.
pub const GUIDE_RATE_HZ: f64 = 60.0;
pub const DEFAULT_INTERP_S: f64 = 0.25;

#[derive(Debug, Error, PartialEq)]
pub enum IoError {
    #[error("datagram has {got} bytes, expected {expected}")]
    BadLength { got: usize, expected: usize },
    #[error("bad datagram magic")]
    BadMagic,
    #[error("no cursor direction for class {0:?}")]
    UnknownClass(String),
    #[error("rate must be positive, got {0}")]
    InvalidRate(f64),
}

/// Decoded hand datagram; values are as sent, not clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandDatagram {
    pub t_us: u64,
    pub values: [f32; HAND_DOF],
}

impl HandDatagram {
    pub fn state(&self) -> HandState {
        HandState::from_f32(self.values)
    }
}

pub fn encode_hand(state: &HandState, t_us: u64) -> [u8; HAND_DATAGRAM_LEN] {
    let mut out = [0u8; HAND_DATAGRAM_LEN];
    out[..4].copy_from_slice(HAND_MAGIC);
    out[4..12].copy_from_slice(&t_us.to_le_bytes());
    for (i, v) in state.to_f32().iter().enumerate() {
        out[12 + 4 * i..16 + 4 * i].copy_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_hand(bytes: &[u8]) -> Result<HandDatagram, IoError> {
    if bytes.len() != HAND_DATAGRAM_LEN {
        return Err(IoError::BadLength {
            got: bytes.len(),
            expected: HAND_DATAGRAM_LEN,
        });
    }
    if &bytes[..4] != HAND_MAGIC {
        return Err(IoError::BadMagic);
    }
    let t_us = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
    let mut values = [0f32; HAND_DOF];
    for (i, v) in values.iter_mut().enumerate() {
        *v = f32::from_le_bytes(bytes[12 + 4 * i..16 + 4 * i].try_into().expect("4 bytes"));
    }
    Ok(HandDatagram { t_us, values })
}

/// Cursor position, both axes in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CursorState {
    pub x: f32,
    pub y: f32,
}

/// Left-right for inversion/eversion, up-down for dorsi/plantarflexion.
pub fn map_cursor(class_id: &str, activation: f64) -> Result<CursorState, IoError> {
    let a = activation.clamp(0.0, 1.0) as f32;
    let (x, y) = match class_id {
        REST_ID => (0.0, 0.0),
        "inversion" => (-a, 0.0),
        "eversion" => (a, 0.0),
        "dorsiflexion" => (0.0, a),
        "plantarflexion" => (0.0, -a),
        other => return Err(IoError::UnknownClass(other.to_owned())),
    };
    Ok(CursorState { x, y })
}

pub fn encode_cursor(c: &CursorState, t_us: u64) -> [u8; CURSOR_DATAGRAM_LEN] {
    let mut out = [0u8; CURSOR_DATAGRAM_LEN];
    out[..4].copy_from_slice(CURSOR_MAGIC);
    out[4..12].copy_from_slice(&t_us.to_le_bytes());
    out[12..16].copy_from_slice(&c.x.to_le_bytes());
    out[16..20].copy_from_slice(&c.y.to_le_bytes());
    out
}

pub fn decode_cursor(bytes: &[u8]) -> Result<(u64, CursorState), IoError> {
    if bytes.len() != CURSOR_DATAGRAM_LEN {
        return Err(IoError::BadLength {
            got: bytes.len(),
            expected: CURSOR_DATAGRAM_LEN,
        });
    }
    if &bytes[..4] != CURSOR_MAGIC {
        return Err(IoError::BadMagic);
    }
    let t_us = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
    let x = f32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes"));
    let y = f32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes"));
    Ok((t_us, CursorState { x, y }))
}

/// Linear transition toward the latest target over a fixed duration.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolator {
    start: HandState,
    current: HandState,
    target: HandState,
    elapsed_s: f64,
    duration_s: f64,
}

impl Interpolator {
    pub fn new(initial: HandState, duration_s: f64) -> Self {
        Self {
            start: initial,
            current: initial,
            target: initial,
            elapsed_s: 0.0,
            duration_s: duration_s.max(0.0),
        }
    }

    pub fn current(&self) -> HandState {
        self.current
    }

    pub fn target(&self) -> HandState {
        self.target
    }

    /// Starts a new transition from the current output, unless `target` is unchanged.
    pub fn set_target(&mut self, target: HandState) {
        if target != self.target {
            self.start = self.current;
            self.target = target;
            self.elapsed_s = 0.0;
        }
    }

    pub fn step(&mut self, dt_s: f64) -> HandState {
        self.elapsed_s += dt_s.max(0.0);
        let f = if self.duration_s == 0.0 {
            1.0
        } else {
            (self.elapsed_s / self.duration_s).min(1.0)
        };
        let (s, t) = (self.start.values(), self.target.values());
        self.current = HandState::clamped(std::array::from_fn(|i| s[i] + (t[i] - s[i]) * f));
        self.current
    }
}

/// What the prediction stage publishes for the output senders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Published {
    pub t_us: u64,
    pub class: u32,
    pub activation: f64,
    pub state: HandState,
}

impl Default for Published {
    fn default() -> Self {
        Self {
            t_us: 0,
            class: 0,
            activation: 0.0,
            state: HandState::REST,
        }
    }
}

const CELL_WORDS: usize = 3 + HAND_DOF;

/// Single-writer, many-reader cell (a sequence lock).
///
/// The writer never waits; a reader retries if it raced a write.
#[derive(Debug)]
pub struct LatestCell {
    seq: AtomicU64,
    words: [AtomicU64; CELL_WORDS],
}

impl Default for LatestCell {
    fn default() -> Self {
        let cell = Self {
            seq: AtomicU64::new(0),
            words: std::array::from_fn(|_| AtomicU64::new(0)),
        };
        cell.write(&Published::default());
        cell
    }
}

impl LatestCell {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of completed writes.
    pub fn version(&self) -> u64 {
        self.seq.load(Ordering::Acquire) / 2
    }

    /// Must only be called from one thread at a time.
    pub fn write(&self, p: &Published) {
        let s = self.seq.load(Ordering::Relaxed);
        self.seq.store(s.wrapping_add(1), Ordering::Relaxed);
        fence(Ordering::Release);
        let mut w = [0u64; CELL_WORDS];
        w[0] = p.t_us;
        w[1] = u64::from(p.class);
        w[2] = p.activation.to_bits();
        for (d, v) in w[3..].iter_mut().zip(p.state.values()) {
            *d = v.to_bits();
        }
        for (a, v) in self.words.iter().zip(w) {
            a.store(v, Ordering::Relaxed);
        }
        self.seq.store(s.wrapping_add(2), Ordering::Release);
    }

    pub fn read(&self) -> Published {
        loop {
            let s1 = self.seq.load(Ordering::Acquire);
            if s1 % 2 == 1 {
                std::hint::spin_loop();
                continue;
            }
            let w: [u64; CELL_WORDS] = std::array::from_fn(|i| self.words[i].load(Ordering::Relaxed));
            fence(Ordering::Acquire);
            if self.seq.load(Ordering::Relaxed) == s1 {
                return Published {
                    t_us: w[0],
                    class: w[1] as u32,
                    activation: f64::from_bits(w[2]),
                    state: HandState::clamped(std::array::from_fn(|i| f64::from_bits(w[3 + i]))),
                };
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    VirtualHand,
    #[serde(rename = "cursor_2d")]
    Cursor2d,
    Null,
}

/// Destination and cadence of one output stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputTarget {
    pub kind: OutputKind,
    /// Ignored for [`OutputKind::Null`].
    pub addr: Option<SocketAddr>,
    pub rate_hz: f64,
    /// Transition time; 0 disables smoothing.
    pub interp_s: f64,
}

impl Default for OutputTarget {
    fn default() -> Self {
        Self {
            kind: OutputKind::VirtualHand,
            addr: Some(SocketAddr::from(([127, 0, 0, 1], 5577))),
            rate_hz: PREDICTION_RATE_HZ,
            interp_s: DEFAULT_INTERP_S,
        }
    }
}

/// Counters of a running sender.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SenderStats {
    pub ticks: u64,
    pub sent: u64,
    pub errors: u64,
    /// Ticks skipped because the sender fell more than a period behind.
    pub skipped: u64,
    pub lateness_p99_us: u64,
    pub lateness_max_us: u64,
}

const LATENESS_WINDOW: usize = 4096;

#[derive(Debug, Default)]
struct StatsInner {
    stats: SenderStats,
    lateness: Vec<u64>,
    next: usize,
}

/// Handle to a fixed-rate sender thread; stops it on drop.
#[derive(Debug)]
pub struct SenderHandle {
    stop: Arc<AtomicBool>,
    stats: Arc<Mutex<StatsInner>>,
    thread: Option<JoinHandle<()>>,
}

impl SenderHandle {
    pub fn stats(&self) -> SenderStats {
        let inner = self.stats.lock().expect("stats lock");
        let mut s = inner.stats.clone();
        if !inner.lateness.is_empty() {
            let mut v = inner.lateness.clone();
            v.sort_unstable();
            s.lateness_p99_us = v[(v.len() * 99).div_ceil(100) - 1];
            s.lateness_max_us = *v.last().expect("nonempty");
        }
        s
    }

    pub fn stop(mut self) -> SenderStats {
        self.shutdown();
        self.stats()
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for SenderHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Calls `produce` on an absolute wall-clock schedule of `rate_hz` and sends
/// each returned payload to every address in `addrs` (none discards it).
///
/// `produce` receives the tick index and the seconds elapsed since the
/// previous tick. Missed ticks are skipped, never sent late in a burst.
pub fn spawn_sender<F>(
    name: &str,
    rate_hz: f64,
    addrs: Vec<SocketAddr>,
    mut produce: F,
) -> Result<SenderHandle, IoError>
where
    F: FnMut(u64, f64) -> Option<Vec<u8>> + Send + 'static,
{
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(IoError::InvalidRate(rate_hz));
    }
    let stop = Arc::new(AtomicBool::new(false));
    let stats = Arc::new(Mutex::new(StatsInner::default()));
    let (stop2, stats2) = (stop.clone(), stats.clone());
    let period = Duration::from_secs_f64(1.0 / rate_hz);
    let thread = thread::Builder::new()
        .name(name.to_owned())
        .spawn(move || {
            let socket = addrs.first().and_then(|a| {
                let bind: SocketAddr = if a.is_ipv4() {
                    ([0, 0, 0, 0], 0).into()
                } else {
                    (std::net::Ipv6Addr::UNSPECIFIED, 0).into()
                };
                match UdpSocket::bind(bind) {
                    Ok(s) => Some(s),
                    Err(e) => {
                        log::error!("sender socket: {e}");
                        None
                    }
                }
            });
            let start = Instant::now();
            let mut tick = 0u64;
            let mut last = start;
            while !stop2.load(Ordering::Relaxed) {
                let deadline = start + period.mul_f64(tick as f64);
                let now = Instant::now();
                if deadline > now {
                    thread::sleep((deadline - now).min(Duration::from_millis(50)));
                    continue;
                }
                let late = now - deadline;
                let now_tick = Instant::now();
                let dt = (now_tick - last).as_secs_f64();
                last = now_tick;
                let payload = produce(tick, dt);
                let mut inner = stats2.lock().expect("stats lock");
                inner.stats.ticks += 1;
                if let Some(bytes) = payload {
                    let mut ok = true;
                    if let Some(s) = &socket {
                        for a in &addrs {
                            if let Err(e) = s.send_to(&bytes, a) {
                                ok = false;
                                log::debug!("send to {a}: {e}");
                            }
                        }
                    }
                    if ok {
                        inner.stats.sent += 1;
                    } else {
                        inner.stats.errors += 1;
                    }
                }
                let late_us = late.as_micros() as u64;
                if inner.lateness.len() < LATENESS_WINDOW {
                    inner.lateness.push(late_us);
                } else {
                    let i = inner.next;
                    inner.lateness[i] = late_us;
                }
                inner.next = (inner.next + 1) % LATENESS_WINDOW;
                // Skip ticks whose deadline already passed by a full period.
                let behind = (late.as_secs_f64() / period.as_secs_f64()) as u64;
                inner.stats.skipped += behind;
                tick += 1 + behind;
            }
        })
        .expect("spawn sender thread");
    Ok(SenderHandle {
        stop,
        stats,
        thread: Some(thread),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Reference parser, written independently of `decode_hand`.
    fn reference_parse(b: &[u8]) -> (u64, Vec<f32>) {
        assert_eq!(b.len(), 48);
        assert_eq!(&b[0..4], &[0x4D, 0x47, 0x48, 0x31]);
        let mut t = 0u64;
        for k in (0..8).rev() {
            t = (t << 8) | u64::from(b[4 + k]);
        }
        let vals = (0..9)
            .map(|i| {
                let o = 12 + 4 * i;
                f32::from_bits(u32::from(b[o]) | u32::from(b[o + 1]) << 8 | u32::from(b[o + 2]) << 16 | u32::from(b[o + 3]) << 24)
            })
            .collect();
        (t, vals)
    }

    #[test]
    fn zero_state_datagram() {
        let d = encode_hand(&HandState::REST, 0);
        assert_eq!(d.len(), 48);
        assert_eq!(&d[..4], b"MGH1");
        assert!(d[12..].iter().all(|&b| b == 0));
    }

    #[test]
    fn hand_decode_errors() {
        assert_eq!(
            decode_hand(&[0; 47]),
            Err(IoError::BadLength { got: 47, expected: 48 })
        );
        assert_eq!(decode_hand(&[0; 48]), Err(IoError::BadMagic));
    }

    #[test]
    fn cursor_mapping() {
        assert_eq!(map_cursor("rest", 1.0).unwrap(), CursorState { x: 0.0, y: 0.0 });
        assert_eq!(map_cursor("eversion", 1.0).unwrap(), CursorState { x: 1.0, y: 0.0 });
        assert_eq!(map_cursor("inversion", 1.0).unwrap(), CursorState { x: -1.0, y: 0.0 });
        assert_eq!(map_cursor("dorsiflexion", 0.5).unwrap(), CursorState { x: 0.0, y: 0.5 });
        assert_eq!(map_cursor("plantarflexion", 1.0).unwrap(), CursorState { x: 0.0, y: -1.0 });
        assert_eq!(map_cursor("grasp", 1.0), Err(IoError::UnknownClass("grasp".into())));
        let c = CursorState { x: -0.25, y: 0.75 };
        assert_eq!(decode_cursor(&encode_cursor(&c, 99)).unwrap(), (99, c));
    }

    #[test]
    fn interpolator_midpoint_and_constant() {
        let grasp = HandState::with(&[0, 2, 3, 4, 5]);
        let mut it = Interpolator::new(HandState::REST, 0.25);
        it.set_target(grasp);
        let mid = it.step(0.125);
        for i in [0, 2, 3, 4, 5] {
            assert!((mid[i] - 0.5).abs() < 1e-12);
        }
        assert_eq!(it.step(0.125), grasp);
        assert_eq!(it.step(0.5), grasp);
        let mut still = Interpolator::new(grasp, 0.25);
        for _ in 0..10 {
            assert_eq!(still.step(0.03), grasp);
        }
    }

    #[test]
    fn zero_duration_jumps() {
        let mut it = Interpolator::new(HandState::REST, 0.0);
        it.set_target(HandState::with(&[1]));
        assert_eq!(it.step(0.0), HandState::with(&[1]));
    }

    #[test]
    fn cell_round_trip_and_version() {
        let cell = LatestCell::new();
        assert_eq!(cell.read(), Published::default());
        let p = Published {
            t_us: 42,
            class: 3,
            activation: 0.75,
            state: HandState::with(&[2, 3]),
        };
        cell.write(&p);
        assert_eq!(cell.read(), p);
        assert_eq!(cell.version(), 2);
    }

    #[test]
    fn cell_reads_are_never_torn() {
        let cell = Arc::new(LatestCell::new());
        let writer = {
            let cell = cell.clone();
            thread::spawn(move || {
                for k in 0..200_000u64 {
                    let v = (k % 1000) as f64 / 1000.0;
                    cell.write(&Published {
                        t_us: k,
                        class: (k % 7) as u32,
                        activation: v,
                        state: HandState::clamped([v; HAND_DOF]),
                    });
                }
            })
        };
        let mut reads = 0;
        while !writer.is_finished() || reads < 1000 {
            let p = cell.read();
            assert_eq!(p.class as u64, p.t_us % 7);
            assert!(p.state.values().iter().all(|&x| x == p.activation));
            reads += 1;
        }
        writer.join().unwrap();
    }

    #[test]
    fn sender_rejects_bad_rate() {
        assert!(matches!(
            spawn_sender("x", 0.0, Vec::new(), |_, _| None),
            Err(IoError::InvalidRate(_))
        ));
    }

    #[test]
    fn sender_delivers_datagrams() {
        let rx = UdpSocket::bind("127.0.0.1:0").unwrap();
        rx.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
        let addr = rx.local_addr().unwrap();
        let h = spawn_sender("t", 100.0, vec![addr], |tick, _| {
            Some(encode_hand(&HandState::REST, tick).to_vec())
        })
        .unwrap();
        let mut buf = [0u8; 64];
        let mut ticks = Vec::new();
        for _ in 0..5 {
            let n = rx.recv(&mut buf).unwrap();
            ticks.push(decode_hand(&buf[..n]).unwrap().t_us);
        }
        let stats = h.stop();
        assert!(stats.sent >= 5);
        assert!(ticks.windows(2).all(|w| w[1] > w[0]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn hand_datagram_round_trip(v in prop::array::uniform9(0.0f32..=1.0), t in any::<u64>()) {
            let state = HandState::from_f32(v);
            let bytes = encode_hand(&state, t);
            let d = decode_hand(&bytes).unwrap();
            prop_assert_eq!(d.t_us, t);
            prop_assert_eq!(d.values, v);
            prop_assert_eq!(d.state(), state);
            let (rt, rv) = reference_parse(&bytes);
            prop_assert_eq!(rt, t);
            prop_assert_eq!(rv, v.to_vec());
            prop_assert_eq!(encode_hand(&d.state(), d.t_us), bytes);
        }

        #[test]
        fn interpolation_is_bounded_and_lipschitz(
            targets in prop::collection::vec((prop::array::uniform9(0.0f64..=1.0), 1usize..20), 1..12),
            duration in 0.05f64..1.0,
        ) {
            let dt = 1.0 / 32.0;
            let mut it = Interpolator::new(HandState::REST, duration);
            let mut prev = it.current();
            for (t, steps) in targets {
                let target = HandState::clamped(t);
                it.set_target(target);
                let from = it.current();
                for _ in 0..steps {
                    let s = it.step(dt);
                    for i in 0..HAND_DOF {
                        let (lo, hi) = (from[i].min(target[i]), from[i].max(target[i]));
                        prop_assert!(s[i] >= lo - 1e-12 && s[i] <= hi + 1e-12);
                        prop_assert!((s[i] - prev[i]).abs() <= dt / duration + 1e-12);
                    }
                    prev = s;
                }
            }
        }
    }
}

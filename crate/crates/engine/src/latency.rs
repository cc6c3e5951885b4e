//! Rolling latency percentiles.

use std::sync::Mutex;
use std::time::Duration;

use serde::Serialize;

const WINDOW: usize = 1 << 16;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LatencySummary {
    pub count: u64,
    pub p50_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

/// Keeps the most recent 65536 samples.
#[derive(Debug, Default)]
pub struct LatencyStats {
    inner: Mutex<Ring>,
}

#[derive(Debug, Default)]
struct Ring {
    ns: Vec<u64>,
    next: usize,
    count: u64,
}

impl LatencyStats {
    pub fn record(&self, d: Duration) {
        let ns = d.as_nanos().min(u128::from(u64::MAX)) as u64;
        let mut r = self.inner.lock().expect("latency lock");
        if r.ns.len() < WINDOW {
            r.ns.push(ns);
        } else {
            let i = r.next;
            r.ns[i] = ns;
        }
        r.next = (r.next + 1) % WINDOW;
        r.count += 1;
    }

    pub fn reset(&self) {
        *self.inner.lock().expect("latency lock") = Ring::default();
    }

    pub fn summary(&self) -> LatencySummary {
        let (mut v, count) = {
            let r = self.inner.lock().expect("latency lock");
            (r.ns.clone(), r.count)
        };
        if v.is_empty() {
            return LatencySummary::default();
        }
        v.sort_unstable();
        let pick = |q: f64| v[((v.len() as f64 * q).ceil() as usize).clamp(1, v.len()) - 1] as f64 / 1e3;
        LatencySummary {
            count,
            p50_us: pick(0.5),
            p99_us: pick(0.99),
            max_us: *v.last().expect("nonempty") as f64 / 1e3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles() {
        let s = LatencyStats::default();
        assert_eq!(s.summary(), LatencySummary::default());
        for k in 1..=100 {
            s.record(Duration::from_micros(k));
        }
        let m = s.summary();
        assert_eq!(m.count, 100);
        assert_eq!(m.p50_us, 50.0);
        assert_eq!(m.p99_us, 99.0);
        assert_eq!(m.max_us, 100.0);
    }
}

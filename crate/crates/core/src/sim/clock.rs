use serde::{Deserialize, Serialize};

/// Device clock: `device = global·(1 + drift) + offset`, in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimClock {
    pub offset_ns: f64,
    /// Fractional rate error (20 ppm = 2e-5).
    pub drift: f64,
}

impl SimClock {
    pub const IDEAL: Self = Self {
        offset_ns: 0.0,
        drift: 0.0,
    };

    pub fn new(offset_ns: f64, drift: f64) -> Self {
        Self { offset_ns, drift }
    }

    pub fn local(&self, global_ns: f64) -> f64 {
        global_ns * (1.0 + self.drift) + self.offset_ns
    }

    pub fn global(&self, local_ns: f64) -> f64 {
        (local_ns - self.offset_ns) / (1.0 + self.drift)
    }

    /// Local reading, rounded to whole nanoseconds as a device would report it.
    pub fn read(&self, global_ns: i64) -> i64 {
        self.local(global_ns as f64).round() as i64
    }
}

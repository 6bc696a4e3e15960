//! Trigger scheduling, round-trip-time based delay compensation, and the
//! NTP-style alternatives it is compared against.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NANOS_PER_MS: f64 = 1e6;
pub const NANOS_PER_SECOND: f64 = 1e9;

/// Default number of RTT probes per client.
pub const DEFAULT_RTT_SAMPLES: usize = 20;

/// Request count of the averaged NTP scheme.
pub const NTP_AVERAGED_REQUESTS: u32 = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SyncError {
    #[error("RTT matrix has no samples")]
    EmptyMatrix,
    #[error("no clients")]
    NoClients,
    #[error("invalid RTT value {0}")]
    InvalidRtt(f64),
    #[error("RTT rows have inconsistent lengths")]
    RaggedMatrix,
    #[error("trigger frequency must be positive, got {0}")]
    InvalidFrequency(f64),
    #[error("duration must be finite and non-negative, got {0}")]
    InvalidDuration(f64),
    #[error("trigger relay scheme needs a compensation plan")]
    MissingPlan,
    #[error("NTP scheme needs a clock-offset estimate")]
    MissingOffset,
    #[error("unknown client index {0}")]
    UnknownClient(usize),
    #[error("NTP request count must be at least 1")]
    InvalidRequestCount,
}

/// The synchronisation trigger `σ_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TriggerMsg {
    pub session_id: u64,
    pub trigger_id: u32,
    /// Host clock reading at send; for NTP schemes, the host's estimate of global time.
    pub host_send_time_ns: i64,
}

/// `A × B` matrix of RTT samples in milliseconds; row `a` belongs to client `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RttMatrix {
    clients: usize,
    samples: usize,
    values: Vec<f64>,
}

impl RttMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, SyncError> {
        let samples = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != samples) {
            return Err(SyncError::RaggedMatrix);
        }
        let values: Vec<f64> = rows.iter().flatten().copied().collect();
        if let Some(&bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(SyncError::InvalidRtt(bad));
        }
        Ok(Self {
            clients: rows.len(),
            samples,
            values,
        })
    }

    pub fn clients(&self) -> usize {
        self.clients
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn row(&self, client: usize) -> &[f64] {
        &self.values[client * self.samples..(client + 1) * self.samples]
    }
}

/// `l̄_a = (1/B) Σ_b l_{a,b}` for each client.
pub fn mean_rtt(matrix: &RttMatrix) -> Result<Vec<f64>, SyncError> {
    if matrix.samples == 0 {
        return Err(SyncError::EmptyMatrix);
    }
    Ok((0..matrix.clients)
        .map(|a| matrix.row(a).iter().sum::<f64>() / matrix.samples as f64)
        .collect())
}

/// `ℓ = max_a l̄_a`.
pub fn max_rtt(means: &[f64]) -> Result<f64, SyncError> {
    means.iter().copied().reduce(f64::max).ok_or(SyncError::NoClients)
}

/// Per-device capture delays that line up every device's capture instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationPlan {
    pub mean_rtt_ms: Vec<f64>,
    pub max_rtt_ms: f64,
    /// `Δt_a = (ℓ − l̄_a) / 2`.
    pub client_delay_ms: Vec<f64>,
    /// `ℓ / 2`, applied by the host after sending a trigger.
    pub host_delay_ms: f64,
}

impl CompensationPlan {
    pub fn delay_ms(&self, role: DeviceRole) -> Result<f64, SyncError> {
        match role {
            DeviceRole::Host => Ok(self.host_delay_ms),
            DeviceRole::Client(a) => self.client_delay_ms.get(a).copied().ok_or(SyncError::UnknownClient(a)),
        }
    }

    pub fn delay_ns(&self, role: DeviceRole) -> Result<i64, SyncError> {
        Ok((self.delay_ms(role)? * NANOS_PER_MS).round() as i64)
    }
}

pub fn compensation_plan(means: &[f64]) -> Result<CompensationPlan, SyncError> {
    if let Some(&bad) = means.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(SyncError::InvalidRtt(bad));
    }
    let max = max_rtt(means)?;
    Ok(CompensationPlan {
        mean_rtt_ms: means.to_vec(),
        max_rtt_ms: max,
        client_delay_ms: means.iter().map(|l| (max - l) / 2.0).collect(),
        host_delay_ms: max / 2.0,
    })
}

/// Accumulates RTT samples per client and turns them into a plan, either over
/// the whole history or over a trailing window.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RttTracker {
    samples: Vec<Vec<f64>>,
    window: Option<usize>,
}

impl RttTracker {
    pub fn new(clients: usize, window: Option<usize>) -> Self {
        Self {
            samples: vec![Vec::new(); clients],
            window,
        }
    }

    pub fn record(&mut self, client: usize, rtt_ms: f64) -> Result<(), SyncError> {
        if !rtt_ms.is_finite() || rtt_ms < 0.0 {
            return Err(SyncError::InvalidRtt(rtt_ms));
        }
        self.samples
            .get_mut(client)
            .ok_or(SyncError::UnknownClient(client))?
            .push(rtt_ms);
        Ok(())
    }

    /// Matrix of the most recent `min(window, count)` samples per client,
    /// truncated to the shortest row.
    pub fn matrix(&self) -> Result<RttMatrix, SyncError> {
        let shortest = self.samples.iter().map(Vec::len).min().unwrap_or(0);
        let take = self.window.map_or(shortest, |w| w.min(shortest));
        let rows: Vec<Vec<f64>> = self.samples.iter().map(|r| r[r.len() - take..].to_vec()).collect();
        RttMatrix::from_rows(&rows)
    }

    pub fn plan(&self) -> Result<CompensationPlan, SyncError> {
        compensation_plan(&mean_rtt(&self.matrix()?)?)
    }
}

/// When the host emits triggers, as offsets from session start.
pub trait TriggerPolicy {
    /// Emission offsets in nanoseconds for a session of `duration_s` seconds.
    fn emission_offsets(&self, duration_s: f64) -> Result<Vec<i64>, SyncError>;
}

/// Triggers at `k / φ` for `k = 0..=⌊duration·φ⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedRate {
    pub frequency_hz: f64,
}

impl TriggerPolicy for FixedRate {
    fn emission_offsets(&self, duration_s: f64) -> Result<Vec<i64>, SyncError> {
        if !(self.frequency_hz > 0.0) || !self.frequency_hz.is_finite() {
            return Err(SyncError::InvalidFrequency(self.frequency_hz));
        }
        if !(duration_s >= 0.0) || !duration_s.is_finite() {
            return Err(SyncError::InvalidDuration(duration_s));
        }
        // guard against 60·20 evaluating to 1199.9999…
        let last = (duration_s * self.frequency_hz + 1e-9).floor() as i64;
        Ok((0..=last)
            .map(|k| (k as f64 * NANOS_PER_SECOND / self.frequency_hz).round() as i64)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledTrigger {
    pub trigger_id: u32,
    pub offset_ns: i64,
}

pub fn schedule_triggers(frequency_hz: f64, duration_s: f64) -> Result<Vec<ScheduledTrigger>, SyncError> {
    schedule_with(&FixedRate { frequency_hz }, duration_s)
}

pub fn schedule_with(policy: &dyn TriggerPolicy, duration_s: f64) -> Result<Vec<ScheduledTrigger>, SyncError> {
    Ok(policy
        .emission_offsets(duration_s)?
        .into_iter()
        .enumerate()
        .map(|(k, offset_ns)| ScheduledTrigger {
            trigger_id: k as u32,
            offset_ns,
        })
        .collect())
}

/// Stamps outgoing triggers with a per-session counter.
#[derive(Debug, Clone)]
pub struct TriggerCounter {
    session_id: u64,
    next: u32,
}

impl TriggerCounter {
    pub fn new(session_id: u64) -> Self {
        Self { session_id, next: 0 }
    }

    pub fn next(&mut self, host_send_time_ns: i64) -> TriggerMsg {
        let msg = TriggerMsg {
            session_id: self.session_id,
            trigger_id: self.next,
            host_send_time_ns,
        };
        self.next += 1;
        msg
    }
}

/// Client-side acceptance: ids must strictly increase; late lower ids are dropped.
#[derive(Debug, Clone, Default)]
pub struct TriggerGate {
    last: Option<u32>,
    dropped: u64,
}

impl TriggerGate {
    pub fn accept(&mut self, trigger_id: u32) -> bool {
        if self.last.is_some_and(|last| trigger_id <= last) {
            self.dropped += 1;
            return false;
        }
        self.last = Some(trigger_id);
        true
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn last(&self) -> Option<u32> {
        self.last
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    /// RTT-compensated relay triggers.
    TriggerRelay,
    /// One NTP request per device, then scheduled capture on estimated global time.
    NtpBaseline,
    /// Averaged NTP requests, then scheduled capture on estimated global time.
    NtpAveraged,
    /// Relay triggers with every device capturing on arrival.
    Uncompensated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SyncScheme {
    pub kind: SchemeKind,
    pub ntp_request_count: u32,
}

impl SyncScheme {
    pub fn trigger_relay() -> Self {
        Self {
            kind: SchemeKind::TriggerRelay,
            ntp_request_count: 1,
        }
    }

    pub fn uncompensated() -> Self {
        Self {
            kind: SchemeKind::Uncompensated,
            ntp_request_count: 1,
        }
    }

    pub fn ntp_baseline() -> Self {
        Self {
            kind: SchemeKind::NtpBaseline,
            ntp_request_count: 1,
        }
    }

    pub fn ntp_averaged(requests: u32) -> Result<Self, SyncError> {
        if requests == 0 {
            return Err(SyncError::InvalidRequestCount);
        }
        Ok(Self {
            kind: SchemeKind::NtpAveraged,
            ntp_request_count: requests,
        })
    }

    pub fn uses_ntp(&self) -> bool {
        matches!(self.kind, SchemeKind::NtpBaseline | SchemeKind::NtpAveraged)
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            SchemeKind::TriggerRelay => "trigger_relay",
            SchemeKind::NtpBaseline => "ntp_baseline",
            SchemeKind::NtpAveraged => "ntp_averaged",
            SchemeKind::Uncompensated => "uncompensated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeviceRole {
    Host,
    Client(usize),
}

/// Alignment of a device clock to global time under an NTP scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NtpAlignment {
    /// Estimated `global − local`, nanoseconds.
    pub offset_estimate_ns: f64,
    /// How far after the trigger's global stamp every device captures.
    pub lead_ns: i64,
}

/// What a device knows when a trigger reaches it.
#[derive(Debug, Clone, Copy)]
pub struct CaptureContext<'a> {
    pub role: DeviceRole,
    pub trigger: &'a TriggerMsg,
    /// Local clock at arrival; for the host, its local send time.
    pub arrival_local_ns: i64,
    pub plan: Option<&'a CompensationPlan>,
    pub ntp: Option<&'a NtpAlignment>,
}

/// Local clock time at which the device captures for this trigger.
pub fn capture_instant(scheme: &SyncScheme, ctx: &CaptureContext<'_>) -> Result<i64, SyncError> {
    match scheme.kind {
        SchemeKind::TriggerRelay => {
            let plan = ctx.plan.ok_or(SyncError::MissingPlan)?;
            Ok(ctx.arrival_local_ns + plan.delay_ns(ctx.role)?)
        }
        SchemeKind::Uncompensated => Ok(ctx.arrival_local_ns),
        SchemeKind::NtpBaseline | SchemeKind::NtpAveraged => {
            let ntp = ctx.ntp.ok_or(SyncError::MissingOffset)?;
            let agreed_global = ctx.trigger.host_send_time_ns + ntp.lead_ns;
            Ok((agreed_global as f64 - ntp.offset_estimate_ns).round() as i64)
        }
    }
}

/// The four timestamps of one NTP exchange: client send (client clock),
/// server receive and send (server clock), client receive (client clock).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NtpSample {
    pub t0: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

impl NtpSample {
    /// `((t1 − t0) + (t2 − t3)) / 2`: estimated server minus client time.
    pub fn offset(&self) -> f64 {
        ((self.t1 - self.t0) + (self.t2 - self.t3)) / 2.0
    }

    pub fn round_trip(&self) -> f64 {
        (self.t3 - self.t0) - (self.t2 - self.t1)
    }
}

/// Source of NTP exchanges (a real or simulated client/server pair).
pub trait NtpExchange {
    fn exchange(&mut self) -> NtpSample;
}

impl<F: FnMut() -> NtpSample> NtpExchange for F {
    fn exchange(&mut self) -> NtpSample {
        self()
    }
}

/// Mean of `request_count` per-exchange offset estimates.
pub fn estimate_ntp_offset(request_count: u32, exchange: &mut dyn NtpExchange) -> Result<f64, SyncError> {
    if request_count == 0 {
        return Err(SyncError::InvalidRequestCount);
    }
    let sum: f64 = (0..request_count).map(|_| exchange.exchange().offset()).sum();
    Ok(sum / f64::from(request_count))
}

//! One-call videoconferencing simulation: encoder, pacing queue, delay-based
//! congestion control, a trace-driven bottleneck and receiver-side metrics.

mod call;
mod freeze;
pub mod gcc;
pub mod pacer;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use call::{run_call, run_call_with, CallTelemetry, TickSnapshot};
pub use freeze::{detect_freezes, freeze_gaps, MIN_FREEZE_GAP_MS};
pub use gcc::{BandwidthUsage, CongestionState, Gcc, GccConfig, PacketFeedback, RateControlState};
pub use pacer::{Packet, Pacer, PacerConfig, MAX_QUEUE_LIMIT_MS, MIN_QUEUE_LIMIT_MS};

use crate::policy::SegmentState;

/// Length of one policy decision window.
pub const SEGMENT_SECONDS: usize = 120;

#[derive(Debug, Error)]
pub enum RtcError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("trace of {0} s is shorter than one {SEGMENT_SECONDS} s segment")]
    TraceTooShort(usize),
    #[error("invariant violated at {at_ms} ms: {what}")]
    InvariantViolation { at_ms: f64, what: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Everything about the sender and receiver that is not the queue limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RtcConfig {
    pub fps: f64,
    pub packet_size_bytes: u32,
    pub pacer: PacerConfig,
    pub gcc: GccConfig,
    pub feedback_interval_ms: f64,
    /// Outstanding-data window added on top of the minimum RTT; the pacer
    /// holds while more than `target * (min_rtt + window)` is in flight.
    /// `None` disables the window.
    pub congestion_window_ms: Option<f64>,
    /// Scale the encoder rate down while the congestion window is overfull.
    pub encoder_pushback: bool,
    /// Drop-tail buffer in front of the access link, in ms of nominal capacity.
    pub bottleneck_buffer_ms: f64,
}

impl Default for RtcConfig {
    fn default() -> Self {
        Self {
            fps: 30.0,
            packet_size_bytes: 1200,
            pacer: PacerConfig::default(),
            gcc: GccConfig::default(),
            feedback_interval_ms: 50.0,
            congestion_window_ms: Some(100.0),
            encoder_pushback: true,
            bottleneck_buffer_ms: 150.0,
        }
    }
}

impl RtcConfig {
    pub fn validate(&self) -> Result<(), RtcError> {
        self.pacer.validate()?;
        let bad = |m: &str| Err(RtcError::InvalidConfig(m.into()));
        if !(self.fps > 0.0 && self.fps <= 240.0) {
            return bad("fps must be in (0, 240]");
        }
        if self.packet_size_bytes < 100 {
            return bad("packet_size_bytes must be at least 100");
        }
        if !(self.feedback_interval_ms >= self.pacer.base_tick_ms) {
            return bad("feedback_interval_ms must be at least one tick");
        }
        if self.congestion_window_ms.is_some_and(|w| !(w >= 0.0)) {
            return bad("congestion_window_ms must be non-negative");
        }
        if !(self.bottleneck_buffer_ms > 0.0) {
            return bad("bottleneck_buffer_ms must be positive");
        }
        let g = &self.gcc;
        if !(g.min_bitrate_kbps > 0.0 && g.min_bitrate_kbps <= g.max_bitrate_kbps) {
            return bad("bitrate bounds must satisfy 0 < min <= max");
        }
        Ok(())
    }
}

/// What a queue policy sees at a segment boundary.
#[derive(Debug, Clone, Copy)]
pub struct SegmentContext<'a> {
    pub segment_index: usize,
    pub start_s: usize,
    /// Predicted serving satellite per second for the whole call.
    pub serving_sat_id: &'a [i64],
}

/// Chooses the pacer queue limit for each segment.
pub trait QueuePolicy {
    fn name(&self) -> String;
    fn queue_limit_ms(&mut self, ctx: &SegmentContext<'_>) -> f64;
}

impl<P: QueuePolicy + ?Sized> QueuePolicy for &mut P {
    fn name(&self) -> String {
        (**self).name()
    }
    fn queue_limit_ms(&mut self, ctx: &SegmentContext<'_>) -> f64 {
        (**self).queue_limit_ms(ctx)
    }
}

impl<P: QueuePolicy + ?Sized> QueuePolicy for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn queue_limit_ms(&mut self, ctx: &SegmentContext<'_>) -> f64 {
        (**self).queue_limit_ms(ctx)
    }
}

/// The same limit for every segment; 2000 ms is the stock setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedQueuePolicy(pub f64);

impl Default for FixedQueuePolicy {
    fn default() -> Self {
        Self(MAX_QUEUE_LIMIT_MS)
    }
}

impl QueuePolicy for FixedQueuePolicy {
    fn name(&self) -> String {
        format!("fixed-{}", self.0)
    }
    fn queue_limit_ms(&mut self, _ctx: &SegmentContext<'_>) -> f64 {
        self.0
    }
}

/// Outcome of one policy decision window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub segment_index: usize,
    pub duration_s: usize,
    /// Normalised bitrate, set once the whole dataset is known.
    pub r_norm: f64,
    /// Normalised freeze rate, set once the whole dataset is known.
    pub f_norm: f64,
    pub action_queue_ms: f64,
    pub raw_bitrate_mbps: f64,
    pub raw_freeze_per_min: f64,
    pub state: Option<SegmentState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallMetrics {
    pub avg_bitrate_mbps: f64,
    pub freeze_rate_per_min: f64,
    pub e2e_delay_ms: f64,
    pub packet_loss_frac: f64,
    pub per_segment: Vec<SegmentRecord>,
}

/// One line of the per-call metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRow {
    pub call_id: usize,
    pub scenario: String,
    pub policy: String,
    pub avg_bitrate_mbps: f64,
    pub freeze_rate_per_min: f64,
    pub e2e_delay_ms: f64,
    pub loss_frac: f64,
}

impl CallRow {
    pub fn new(call_id: usize, scenario: &str, policy: &str, m: &CallMetrics) -> Self {
        Self {
            call_id,
            scenario: scenario.to_string(),
            policy: policy.to_string(),
            avg_bitrate_mbps: m.avg_bitrate_mbps,
            freeze_rate_per_min: m.freeze_rate_per_min,
            e2e_delay_ms: m.e2e_delay_ms,
            loss_frac: m.packet_loss_frac,
        }
    }
}

pub fn write_call_rows<W: Write>(w: W, rows: &[CallRow]) -> Result<(), RtcError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

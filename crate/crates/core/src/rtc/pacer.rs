//! Sender-side pacing queue.
//!
//! Packets leave in FIFO order at `pacing_multiplier * target`. When the queue
//! would take longer than the queue limit to drain at that rate, the rate for
//! the tick is raised so that the whole queue drains within the limit. The
//! pacer never drops packets.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::RtcError;

pub const MIN_QUEUE_LIMIT_MS: f64 = 100.0;
pub const MAX_QUEUE_LIMIT_MS: f64 = 2000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PacerConfig {
    pub max_queue_limit_ms: f64,
    pub pacing_multiplier: f64,
    pub base_tick_ms: f64,
}

impl Default for PacerConfig {
    fn default() -> Self {
        Self {
            max_queue_limit_ms: MAX_QUEUE_LIMIT_MS,
            pacing_multiplier: 2.5,
            base_tick_ms: 5.0,
        }
    }
}

impl PacerConfig {
    pub fn validate(&self) -> Result<(), RtcError> {
        if !(MIN_QUEUE_LIMIT_MS..=MAX_QUEUE_LIMIT_MS).contains(&self.max_queue_limit_ms) {
            return Err(RtcError::InvalidConfig(format!(
                "queue limit {} ms outside [100, 2000]",
                self.max_queue_limit_ms
            )));
        }
        if !(self.pacing_multiplier >= 1.0) {
            return Err(RtcError::InvalidConfig("pacing_multiplier must be >= 1".into()));
        }
        if !(self.base_tick_ms > 0.0) {
            return Err(RtcError::InvalidConfig("base_tick_ms must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet {
    pub seq: u64,
    pub frame_id: u64,
    pub size_bytes: u32,
    /// Time the packet was handed to the pacer.
    pub enqueue_ms: f64,
    /// Time the pacer released it onto the network.
    pub send_ms: f64,
}

#[derive(Debug, Clone)]
pub struct Pacer {
    config: PacerConfig,
    queue: VecDeque<Packet>,
    queued_bytes: u64,
    /// Carry-over of unused or overdrawn budget, bytes.
    budget: f64,
    base_rate_bps: f64,
    last_rate_bps: f64,
}

impl Pacer {
    pub fn new(config: PacerConfig) -> Result<Self, RtcError> {
        config.validate()?;
        Ok(Self {
            config,
            queue: VecDeque::new(),
            queued_bytes: 0,
            budget: 0.0,
            base_rate_bps: 0.0,
            last_rate_bps: 0.0,
        })
    }

    pub fn config(&self) -> &PacerConfig {
        &self.config
    }

    /// Changes the queue limit; the actuation point for queue policies.
    pub fn set_queue_limit(&mut self, limit_ms: f64) -> Result<(), RtcError> {
        let next = PacerConfig {
            max_queue_limit_ms: limit_ms,
            ..self.config
        };
        next.validate()?;
        self.config = next;
        Ok(())
    }

    /// Sets the pacing rate from the encoder target.
    pub fn set_target_rate(&mut self, target_bps: f64) {
        self.base_rate_bps = target_bps * self.config.pacing_multiplier;
    }

    pub fn enqueue(&mut self, packet: Packet) {
        self.queued_bytes += packet.size_bytes as u64;
        self.queue.push_back(packet);
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn queued_bytes(&self) -> u64 {
        self.queued_bytes
    }

    pub fn oldest_enqueue_ms(&self) -> Option<f64> {
        self.queue.front().map(|p| p.enqueue_ms)
    }

    /// Time to drain the current queue at the base pacing rate, ms.
    pub fn projected_drain_ms(&self) -> f64 {
        drain_ms(self.queued_bytes as f64, self.base_rate_bps)
    }

    /// Rate the pacer runs at this tick: the base rate, or the rate that
    /// empties the queue within the limit if that is higher.
    pub fn effective_rate_bps(&self) -> f64 {
        let needed = self.queued_bytes as f64 * 8.0 / (self.config.max_queue_limit_ms / 1000.0);
        self.base_rate_bps.max(needed)
    }

    /// Projected drain time at the rate actually in force.
    pub fn effective_drain_ms(&self) -> f64 {
        drain_ms(self.queued_bytes as f64, self.effective_rate_bps())
    }

    pub fn last_rate_bps(&self) -> f64 {
        self.last_rate_bps
    }

    /// Releases the packets allowed by one tick of budget starting at `now_ms`.
    /// With `hold` set only the limit-enforcing excess over the base rate is
    /// released (the congestion window is closed). Each released packet is
    /// stamped with a send time spread across the tick.
    pub fn drain(&mut self, now_ms: f64, hold: bool) -> Vec<Packet> {
        let tick = self.config.base_tick_ms;
        let rate = self.effective_rate_bps();
        self.last_rate_bps = rate;
        let allowed_rate = if hold { (rate - self.base_rate_bps).max(0.0) } else { rate };
        if self.queue.is_empty() || allowed_rate <= 0.0 {
            // an idle or held pacer does not bank budget
            self.budget = self.budget.min(0.0);
            return Vec::new();
        }
        let tick_bytes = allowed_rate / 8.0 * tick / 1000.0;
        self.budget = (self.budget + tick_bytes).min(tick_bytes.max(1.0) * 2.0);
        let mut out = Vec::new();
        let mut spent = 0.0;
        while self.budget > 0.0 {
            let Some(mut p) = self.queue.pop_front() else { break };
            let offset = if allowed_rate > 0.0 { spent * 8.0 / allowed_rate * 1000.0 } else { 0.0 };
            p.send_ms = now_ms + offset.min(tick);
            spent += p.size_bytes as f64;
            self.budget -= p.size_bytes as f64;
            self.queued_bytes -= p.size_bytes as u64;
            out.push(p);
        }
        out
    }
}

fn drain_ms(bytes: f64, rate_bps: f64) -> f64 {
    if bytes <= 0.0 {
        0.0
    } else if rate_bps <= 0.0 {
        f64::INFINITY
    } else {
        bytes * 8.0 / rate_bps * 1000.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkt(seq: u64, size: u32) -> Packet {
        Packet {
            seq,
            frame_id: seq,
            size_bytes: size,
            enqueue_ms: 0.0,
            send_ms: 0.0,
        }
    }

    fn pacer(limit: f64, target_bps: f64) -> Pacer {
        let mut p = Pacer::new(PacerConfig {
            max_queue_limit_ms: limit,
            ..PacerConfig::default()
        })
        .unwrap();
        p.set_target_rate(target_bps);
        p
    }

    #[test]
    fn empty_queue_releases_nothing() {
        let mut p = pacer(2000.0, 1e6);
        assert!(p.drain(0.0, false).is_empty());
    }

    #[test]
    fn fifo_order() {
        let mut p = pacer(2000.0, 1e6);
        for s in 0..3 {
            p.enqueue(pkt(s, 100));
        }
        let mut out = Vec::new();
        for k in 0..10 {
            out.extend(p.drain(k as f64 * 5.0, false));
        }
        let seqs: Vec<u64> = out.iter().map(|p| p.seq).collect();
        assert_eq!(seqs, [0, 1, 2]);
        assert!(out.windows(2).all(|w| w[0].send_ms <= w[1].send_ms));
    }

    #[test]
    fn limit_doubles_rate() {
        // 100 KB at a base rate that needs 4 s; with a 2 s limit the tick runs
        // at twice the base rate
        let bytes = 100_000u32;
        let base = bytes as f64 * 8.0 / 4.0;
        let mut p = Pacer::new(PacerConfig {
            max_queue_limit_ms: 2000.0,
            pacing_multiplier: 1.0,
            base_tick_ms: 5.0,
        })
        .unwrap();
        p.set_target_rate(base);
        for s in 0..100 {
            p.enqueue(pkt(s, bytes / 100));
        }
        assert!((p.projected_drain_ms() - 4000.0).abs() < 1e-9);
        assert!((p.effective_rate_bps() / base - 2.0).abs() < 1e-12);
        assert!((p.effective_drain_ms() - 2000.0).abs() < 1e-9);
        p.drain(0.0, false);
        assert!((p.last_rate_bps() / base - 2.0).abs() < 1e-12);
    }

    #[test]
    fn hold_only_releases_limit_excess() {
        let mut p = pacer(500.0, 80_000.0);
        p.enqueue(pkt(0, 1000));
        // 1000 B drains in 40 ms at 200 kbps: within the limit, nothing leaves
        assert!(p.drain(0.0, true).is_empty());
        for s in 1..40 {
            p.enqueue(pkt(s, 1000));
        }
        // 40 KB needs 1.6 s at the base rate, beyond the 500 ms limit
        let out = p.drain(5.0, true);
        assert!(!out.is_empty());
    }

    #[test]
    fn never_drops() {
        let mut p = pacer(100.0, 10_000.0);
        for s in 0..500 {
            p.enqueue(pkt(s, 1200));
        }
        let mut n = 0;
        for k in 0..100_000 {
            n += p.drain(k as f64 * 5.0, false).len();
            if p.is_empty() {
                break;
            }
        }
        assert_eq!(n, 500);
        assert_eq!(p.queued_bytes(), 0);
    }

    #[test]
    fn rejects_limits_outside_range() {
        let mut p = pacer(500.0, 1e6);
        assert!(p.set_queue_limit(50.0).is_err());
        assert!(p.set_queue_limit(2500.0).is_err());
        assert!(p.set_queue_limit(900.0).is_ok());
        assert_eq!(p.config().max_queue_limit_ms, 900.0);
    }
}

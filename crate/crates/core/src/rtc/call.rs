//! Tick-driven simulation of a single call over a [`LinkTrace`].
//!
//! Per 5 ms tick: feedback reaching the sender updates the controller, the
//! encoder emits due frames into the pacer, the pacer releases packets into a
//! drop-tail buffer in front of the access link, the link serves that buffer
//! at the trace capacity while it is up, and departures propagate with the
//! trace delay and loss. The receiver reassembles frames, renders each one as
//! soon as it is complete and sends transport feedback every 50 ms.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::freeze::freeze_gaps;
use super::gcc::{Gcc, PacketFeedback};
use super::pacer::{Packet, Pacer};
use super::{CallMetrics, QueuePolicy, RtcConfig, RtcError, SegmentContext, SegmentRecord, SEGMENT_SECONDS};
use crate::netsim::LinkTrace;

/// Once-per-second view of the sender, for inspection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickSnapshot {
    pub t_ms: f64,
    pub target_kbps: f64,
    pub encoder_kbps: f64,
    pub queue_limit_ms: f64,
    pub pacer_queue_bytes: u64,
    pub pacer_drain_ms: f64,
    pub outstanding_bytes: u64,
    pub bottleneck_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PacketCounts {
    pub created: u64,
    pub delivered: u64,
    pub lost: u64,
    pub in_flight: u64,
    pub queued: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallTelemetry {
    pub metrics: CallMetrics,
    pub per_second: Vec<TickSnapshot>,
    pub counts: PacketCounts,
    /// Queue limit applied in each segment.
    pub limits_ms: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Transit {
    packet: Packet,
    arrival_ms: f64,
    lost: bool,
}

impl PartialEq for Transit {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Transit {}
impl PartialOrd for Transit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Transit {
    // reversed: BinaryHeap pops the earliest arrival first
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .arrival_ms
            .total_cmp(&self.arrival_ms)
            .then_with(|| other.packet.seq.cmp(&self.packet.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct FrameProgress {
    capture_ms: f64,
    bytes: u32,
    packets: u32,
    received: u32,
}

struct PendingFeedback {
    ready_ms: f64,
    created_ms: f64,
    reports: Vec<PacketFeedback>,
}

/// Mirrors the encoder-rate pushback applied while the congestion window is
/// overfull.
struct Pushback {
    ratio: f64,
}

impl Pushback {
    fn update(&mut self, fill: f64) {
        self.ratio = if fill > 1.5 {
            self.ratio * 0.9
        } else if fill > 1.0 {
            self.ratio * 0.95
        } else if fill < 0.1 {
            1.0
        } else {
            (self.ratio * 1.05).min(1.0)
        };
        self.ratio = self.ratio.max(0.05);
    }
}

/// Simulates one call with the default sender configuration.
pub fn run_call(trace: &LinkTrace, policy: &mut dyn QueuePolicy, seed: u64) -> Result<CallMetrics, RtcError> {
    run_call_with(trace, policy, seed, &RtcConfig::default()).map(|t| t.metrics)
}

/// Simulates one call. The call covers the whole segments contained in the
/// trace; trailing seconds beyond the last full segment are ignored.
pub fn run_call_with(
    trace: &LinkTrace,
    policy: &mut dyn QueuePolicy,
    seed: u64,
    cfg: &RtcConfig,
) -> Result<CallTelemetry, RtcError> {
    cfg.validate()?;
    let segments = trace.duration / SEGMENT_SECONDS;
    if segments == 0 {
        return Err(RtcError::TraceTooShort(trace.duration));
    }
    let end_ms = (segments * SEGMENT_SECONDS) as f64 * 1000.0;
    let tick = cfg.pacer.base_tick_ms;
    let frame_interval = 1000.0 / cfg.fps;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ca11);

    let mut gcc = Gcc::new(cfg.gcc);
    let mut pacer = Pacer::new(cfg.pacer)?;
    let mut pushback = Pushback { ratio: 1.0 };
    let mut bottleneck: VecDeque<Packet> = VecDeque::new();
    let mut bottleneck_bytes: u64 = 0;
    let mut link_free_at = 0.0f64;
    let mut transit: BinaryHeap<Transit> = BinaryHeap::new();
    let mut pending_fb: VecDeque<PendingFeedback> = VecDeque::new();
    let mut reports: Vec<PacketFeedback> = Vec::new();
    let mut next_feedback_ms = cfg.feedback_interval_ms;
    let mut outstanding: u64 = 0;

    let mut frames: Vec<FrameProgress> = Vec::new();
    let mut next_frame_ms = 0.0;
    let mut last_rendered: Option<usize> = None;
    let mut renders: Vec<(f64, usize)> = Vec::new();
    let mut seq: u64 = 0;

    let mut counts = PacketCounts::default();
    let mut delay_sum = 0.0;
    let mut per_second = Vec::with_capacity(segments * SEGMENT_SECONDS);
    let mut limits_ms = Vec::with_capacity(segments);

    let second_of = |t_ms: f64| ((t_ms / 1000.0) as usize).min(trace.duration - 1);

    let mut step: u64 = 0;
    loop {
        let now = step as f64 * tick;
        if now >= end_ms {
            break;
        }
        let t1 = now + tick;

        if (now / 1000.0).fract() == 0.0 && (now as usize / 1000) % SEGMENT_SECONDS == 0 {
            let idx = now as usize / 1000 / SEGMENT_SECONDS;
            let limit = policy.queue_limit_ms(&SegmentContext {
                segment_index: idx,
                start_s: idx * SEGMENT_SECONDS,
                serving_sat_id: &trace.serving_sat_id,
            });
            pacer.set_queue_limit(limit)?;
            limits_ms.push(limit);
        }

        // feedback reaching the sender; the return path shares the link
        if trace.link_up(now) {
            while pending_fb.front().is_some_and(|f| f.ready_ms <= now) {
                let fb = pending_fb.pop_front().expect("checked");
                let bytes: u64 = fb.reports.iter().map(|r| r.size_bytes as u64).sum();
                outstanding = outstanding.saturating_sub(bytes);
                if let Some(last) = fb.reports.iter().rev().find(|r| !r.lost) {
                    gcc.on_rtt(now - last.send_ms - (fb.created_ms - last.recv_ms));
                }
                gcc.on_feedback(now, &fb.reports);
                if let Some(w) = cfg.congestion_window_ms {
                    if cfg.encoder_pushback {
                        let cwnd = congestion_window(&gcc, w, cfg.packet_size_bytes);
                        pushback.update(outstanding as f64 / cwnd);
                    }
                }
            }
        }

        gcc.on_tick(now);
        let target_bps = gcc.target_bps();
        let encoder_bps = (target_bps * pushback.ratio).max(cfg.gcc.min_bitrate_kbps * 1000.0).min(target_bps);

        while next_frame_ms < t1 && next_frame_ms < end_ms {
            let bytes = (encoder_bps / cfg.fps / 8.0).round().max(1.0) as u32;
            let n = bytes.div_ceil(cfg.packet_size_bytes);
            let frame_id = frames.len() as u64;
            for k in 0..n {
                let size = if k + 1 < n { cfg.packet_size_bytes } else { bytes - (n - 1) * cfg.packet_size_bytes };
                pacer.enqueue(Packet {
                    seq,
                    frame_id,
                    size_bytes: size,
                    enqueue_ms: next_frame_ms,
                    send_ms: f64::NAN,
                });
                seq += 1;
                counts.created += 1;
            }
            frames.push(FrameProgress {
                capture_ms: next_frame_ms,
                bytes,
                packets: n,
                received: 0,
            });
            next_frame_ms += frame_interval;
        }

        pacer.set_target_rate(target_bps);
        let hold = cfg
            .congestion_window_ms
            .is_some_and(|w| outstanding as f64 >= congestion_window(&gcc, w, cfg.packet_size_bytes));
        let sec = second_of(now);
        let buffer_limit = trace.capacity_kbps[sec] * cfg.bottleneck_buffer_ms / 8.0;
        for p in pacer.drain(now, hold) {
            outstanding += p.size_bytes as u64;
            if bottleneck_bytes as f64 + p.size_bytes as f64 > buffer_limit {
                // tail drop: reported lost when its successors arrive
                transit.push(Transit {
                    packet: p,
                    arrival_ms: p.send_ms + trace.delay_ms[sec],
                    lost: true,
                });
                continue;
            }
            bottleneck_bytes += p.size_bytes as u64;
            bottleneck.push_back(p);
        }
        let limit = pacer.config().max_queue_limit_ms;
        if pacer.effective_drain_ms() > limit + tick {
            return Err(RtcError::InvariantViolation {
                at_ms: now,
                what: format!("pacer drain {} ms over limit {limit} ms", pacer.effective_drain_ms()),
            });
        }

        // access link service within the tick
        while let Some(p) = bottleneck.front().copied() {
            let start = link_free_at.max(p.send_ms);
            if start >= t1 {
                break;
            }
            let s = second_of(start);
            let cap = trace.capacity_kbps[s];
            if !trace.link_up(start) || cap <= 0.0 {
                link_free_at = (start + 1.0).min(t1).max(link_free_at);
                if link_free_at >= t1 {
                    break;
                }
                continue;
            }
            let depart = start + p.size_bytes as f64 * 8.0 / cap;
            link_free_at = depart;
            bottleneck.pop_front();
            bottleneck_bytes -= p.size_bytes as u64;
            let ds = second_of(depart);
            let lost = rng.gen::<f64>() < trace.loss_prob[ds];
            transit.push(Transit {
                packet: p,
                arrival_ms: depart + trace.delay_ms[ds],
                lost,
            });
        }

        // receiver
        while transit.peek().is_some_and(|t| t.arrival_ms < t1) {
            let t = transit.pop().expect("checked");
            let p = t.packet;
            reports.push(PacketFeedback {
                send_ms: p.send_ms,
                recv_ms: t.arrival_ms,
                size_bytes: p.size_bytes,
                lost: t.lost,
            });
            if t.lost {
                counts.lost += 1;
                continue;
            }
            counts.delivered += 1;
            delay_sum += t.arrival_ms - p.enqueue_ms;
            let id = p.frame_id as usize;
            let f = &mut frames[id];
            f.received += 1;
            if f.received == f.packets && last_rendered.map_or(true, |r| id > r) {
                last_rendered = Some(id);
                renders.push((t.arrival_ms, id));
            }
        }
        if t1 >= next_feedback_ms {
            if !reports.is_empty() {
                reports.sort_by(|a, b| a.send_ms.total_cmp(&b.send_ms));
                pending_fb.push_back(PendingFeedback {
                    ready_ms: t1 + trace.delay_ms[second_of(t1.min(end_ms - 1.0))],
                    created_ms: t1,
                    reports: std::mem::take(&mut reports),
                });
            }
            next_feedback_ms += cfg.feedback_interval_ms;
        }

        counts.in_flight = (bottleneck.len() + transit.len()) as u64;
        counts.queued = pacer.len() as u64;
        if counts.created != counts.delivered + counts.lost + counts.in_flight + counts.queued {
            return Err(RtcError::InvariantViolation {
                at_ms: now,
                what: format!("packet conservation {counts:?}"),
            });
        }
        let target_kbps = gcc.target_bps() / 1000.0;
        if !(cfg.gcc.min_bitrate_kbps..=cfg.gcc.max_bitrate_kbps).contains(&target_kbps) {
            return Err(RtcError::InvariantViolation {
                at_ms: now,
                what: format!("target {target_kbps} kbps out of bounds"),
            });
        }
        if (now / 1000.0).fract() == 0.0 {
            per_second.push(TickSnapshot {
                t_ms: now,
                target_kbps,
                encoder_kbps: encoder_bps / 1000.0,
                queue_limit_ms: limit,
                pacer_queue_bytes: pacer.queued_bytes(),
                pacer_drain_ms: pacer.effective_drain_ms(),
                outstanding_bytes: outstanding,
                bottleneck_bytes,
            });
        }
        step += 1;
    }

    let metrics = summarize(&frames, &renders, &limits_ms, end_ms, counts.lost, counts.delivered, delay_sum);
    Ok(CallTelemetry {
        metrics,
        per_second,
        counts,
        limits_ms,
    })
}

fn congestion_window(gcc: &Gcc, window_ms: f64, packet_size: u32) -> f64 {
    let bytes = gcc.target_bps() / 8.0 * (gcc.min_rtt_ms() + window_ms) / 1000.0;
    bytes.max(4.0 * packet_size as f64)
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    frames: &[FrameProgress],
    renders: &[(f64, usize)],
    limits_ms: &[f64],
    end_ms: f64,
    lost: u64,
    delivered: u64,
    delay_sum: f64,
) -> CallMetrics {
    // the capture clock starts at 0, so time before the first render and after
    // the last one counts as stall
    let mut times = Vec::with_capacity(renders.len() + 2);
    times.push(0.0);
    times.extend(renders.iter().map(|r| r.0));
    times.push(end_ms);
    let gaps = freeze_gaps(&times);

    let seg_ms = SEGMENT_SECONDS as f64 * 1000.0;
    let per_segment = limits_ms
        .iter()
        .enumerate()
        .map(|(i, &limit)| {
            let (from, to) = (i as f64 * seg_ms, (i + 1) as f64 * seg_ms);
            let bytes: u64 = renders
                .iter()
                .map(|&(_, id)| &frames[id])
                .filter(|f| f.capture_ms >= from && f.capture_ms < to)
                .map(|f| f.bytes as u64)
                .sum();
            let freezes = gaps.iter().filter(|g| g.0 >= from && g.0 < to).count();
            SegmentRecord {
                segment_index: i,
                duration_s: SEGMENT_SECONDS,
                r_norm: 0.0,
                f_norm: 0.0,
                action_queue_ms: limit,
                raw_bitrate_mbps: bytes as f64 * 8.0 / (seg_ms / 1000.0) / 1e6,
                raw_freeze_per_min: freezes as f64 / (seg_ms / 60_000.0),
                state: None,
            }
        })
        .collect();
    let rendered_bytes: u64 = renders.iter().map(|&(_, id)| frames[id].bytes as u64).sum();
    let reported = (delivered + lost).max(1);
    CallMetrics {
        avg_bitrate_mbps: rendered_bytes as f64 * 8.0 / (end_ms / 1000.0) / 1e6,
        freeze_rate_per_min: gaps.len() as f64 / (end_ms / 60_000.0),
        e2e_delay_ms: if delivered > 0 { delay_sum / delivered as f64 } else { 0.0 },
        packet_loss_frac: lost as f64 / reported as f64,
        per_segment,
    }
}

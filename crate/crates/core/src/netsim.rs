//! Per-second path traces synthesised from a serving schedule.
//!
//! The user-terminal access link is the bottleneck. A handover takes the link
//! down for `handover_outage_ms` at the start of the handover second, adds a
//! latency burst and raises loss for the whole outage window.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orbital::ServingSchedule;

/// Extra one-way delay during an outage window.
pub const OUTAGE_DELAY_SPIKE_MS: f64 = 100.0;
/// Extra loss probability during an outage window.
pub const OUTAGE_EXTRA_LOSS: f64 = 0.10;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("empty serving schedule")]
    EmptySchedule,
    #[error("invalid link parameters: {0}")]
    InvalidParams(String),
    #[error("trace csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkParams {
    pub access_capacity_mbps: f64,
    pub capacity_jitter_frac: f64,
    pub loss_rate: f64,
    pub handover_outage_ms: f64,
    /// Recorded for completeness; the access link always binds first.
    pub isl_capacity_gbps: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            access_capacity_mbps: 6.0,
            capacity_jitter_frac: 0.15,
            loss_rate: 0.01,
            handover_outage_ms: 400.0,
            isl_capacity_gbps: 1.0,
        }
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: String| Err(TraceError::InvalidParams(m));
        if !(0.0..1.0).contains(&self.loss_rate) {
            return bad(format!("loss_rate {} not in [0, 1)", self.loss_rate));
        }
        if !(self.access_capacity_mbps > 0.0) || !(self.isl_capacity_gbps > 0.0) {
            return bad("capacities must be positive".into());
        }
        if !(0.0..1.0).contains(&self.capacity_jitter_frac) {
            return bad(format!("capacity_jitter_frac {} not in [0, 1)", self.capacity_jitter_frac));
        }
        if !(self.handover_outage_ms >= 0.0) {
            return bad("handover_outage_ms must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkTrace {
    pub duration: usize,
    pub delay_ms: Vec<f64>,
    pub capacity_kbps: Vec<f64>,
    pub loss_prob: Vec<f64>,
    pub outage: Vec<bool>,
    pub serving_sat_id: Vec<i64>,
    pub handover_seconds: Vec<usize>,
    /// Link-down time at the start of each handover second.
    pub outage_ms: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    t: usize,
    serving_sat_id: i64,
    delay_ms: f64,
    capacity_kbps: f64,
    loss_prob: f64,
    outage: u8,
}

impl LinkTrace {
    /// A trace with the same conditions every second and no handovers.
    pub fn constant(duration: usize, delay_ms: f64, capacity_kbps: f64, loss_prob: f64) -> Self {
        Self {
            duration,
            delay_ms: vec![delay_ms; duration],
            capacity_kbps: vec![capacity_kbps; duration],
            loss_prob: vec![loss_prob; duration],
            outage: vec![false; duration],
            serving_sat_id: vec![0; duration],
            handover_seconds: Vec::new(),
            outage_ms: 0.0,
        }
    }

    /// Whether the link carries traffic at simulation time `t_ms`.
    pub fn link_up(&self, t_ms: f64) -> bool {
        let s = (t_ms / 1000.0) as usize;
        if s >= self.duration || self.capacity_kbps[s] <= 0.0 {
            return false;
        }
        if self.outage[s] {
            // the down period starts at the handover second that opened the window
            let start = self.handover_seconds.iter().rev().find(|&&h| h <= s).copied().unwrap_or(s);
            return t_ms - start as f64 * 1000.0 >= self.outage_ms;
        }
        true
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TraceError> {
        let mut wr = csv::Writer::from_writer(w);
        for t in 0..self.duration {
            wr.serialize(TraceRow {
                t,
                serving_sat_id: self.serving_sat_id[t],
                delay_ms: self.delay_ms[t],
                capacity_kbps: self.capacity_kbps[t],
                loss_prob: self.loss_prob[t],
                outage: self.outage[t] as u8,
            })?;
        }
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads a trace written by [`LinkTrace::write_csv`]. The outage length is
    /// not part of the CSV and must be supplied.
    pub fn read_csv<R: Read>(r: R, outage_ms: f64) -> Result<Self, TraceError> {
        let mut rd = csv::Reader::from_reader(r);
        let mut trace = LinkTrace::constant(0, 0.0, 0.0, 0.0);
        for row in rd.deserialize() {
            let row: TraceRow = row?;
            trace.delay_ms.push(row.delay_ms);
            trace.capacity_kbps.push(row.capacity_kbps);
            trace.loss_prob.push(row.loss_prob);
            trace.outage.push(row.outage != 0);
            trace.serving_sat_id.push(row.serving_sat_id);
        }
        trace.duration = trace.delay_ms.len();
        if trace.duration == 0 {
            return Err(TraceError::EmptySchedule);
        }
        trace.handover_seconds = crate::orbital::handover_seconds(&trace.serving_sat_id);
        trace.outage_ms = outage_ms;
        Ok(trace)
    }
}

/// Synthesises the path trace for a schedule. Capacity jitter is drawn once
/// per second from the seeded generator, so the seed never affects delay,
/// loss or the handover structure.
pub fn build_link_trace(schedule: &ServingSchedule, params: &LinkParams, seed: u64) -> Result<LinkTrace, TraceError> {
    if schedule.duration == 0 || schedule.serving_sat_id.is_empty() {
        return Err(TraceError::EmptySchedule);
    }
    params.validate()?;
    let duration = schedule.duration;
    let handover_seconds = schedule.handover_seconds();
    let window = (params.handover_outage_ms / 1000.0).ceil() as usize;
    let mut outage = vec![false; duration];
    for &h in &handover_seconds {
        for flag in outage.iter_mut().skip(h).take(window) {
            *flag = true;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let access_kbps = params.access_capacity_mbps * 1000.0;
    let j = params.capacity_jitter_frac;
    let mut capacity_kbps = Vec::with_capacity(duration);
    let mut loss_prob = Vec::with_capacity(duration);
    let mut delay_ms = Vec::with_capacity(duration);
    for t in 0..duration {
        let jitter: f64 = if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 };
        let covered = schedule.serving_sat_id[t] >= 0;
        capacity_kbps.push(if covered { access_kbps * (1.0 + jitter) } else { 0.0 });
        if outage[t] {
            loss_prob.push((params.loss_rate + OUTAGE_EXTRA_LOSS).min(1.0));
            delay_ms.push(schedule.delay_ms[t] + OUTAGE_DELAY_SPIKE_MS);
        } else {
            loss_prob.push(params.loss_rate);
            delay_ms.push(schedule.delay_ms[t]);
        }
    }
    Ok(LinkTrace {
        duration,
        delay_ms,
        capacity_kbps,
        loss_prob,
        outage,
        serving_sat_id: schedule.serving_sat_id.clone(),
        handover_seconds,
        outage_ms: params.handover_outage_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule(ids: Vec<i64>) -> ServingSchedule {
        let n = ids.len();
        ServingSchedule {
            duration: n,
            dst_serving_sat_id: ids.clone(),
            delay_ms: ids.iter().map(|&i| if i >= 0 { 40.0 } else { 0.0 }).collect(),
            isl_hops: vec![2; n],
            serving_sat_id: ids,
        }
    }

    #[test]
    fn no_handovers_no_outage() {
        let s = schedule(vec![3; 200]);
        let tr = build_link_trace(&s, &LinkParams::default(), 1).unwrap();
        assert!(tr.outage.iter().all(|o| !o));
        assert!(tr.handover_seconds.is_empty());
        assert!(tr.loss_prob.iter().all(|&l| l == 0.01));
    }

    #[test]
    fn single_handover_window() {
        let mut ids = vec![3; 200];
        ids[100..].fill(4);
        let tr = build_link_trace(&schedule(ids), &LinkParams::default(), 1).unwrap();
        assert_eq!(tr.handover_seconds, vec![100]);
        let flagged: Vec<usize> = (0..200).filter(|&t| tr.outage[t]).collect();
        assert_eq!(flagged, vec![100]);
        assert!((tr.delay_ms[100] - 140.0).abs() < 1e-12);
        assert!((tr.loss_prob[100] - 0.11).abs() < 1e-12);
        assert!(!tr.link_up(100_000.0));
        assert!(!tr.link_up(100_399.0));
        assert!(tr.link_up(100_400.0));
        assert!(tr.link_up(99_999.0));
    }

    #[test]
    fn long_outage_spans_seconds() {
        let mut ids = vec![1; 50];
        ids[10..].fill(2);
        let params = LinkParams {
            handover_outage_ms: 1500.0,
            ..LinkParams::default()
        };
        let tr = build_link_trace(&schedule(ids), &params, 0).unwrap();
        let flagged: Vec<usize> = (0..50).filter(|&t| tr.outage[t]).collect();
        assert_eq!(flagged, vec![10, 11]);
        assert!(!tr.link_up(11_400.0));
        assert!(tr.link_up(11_600.0));
    }

    #[test]
    fn uncovered_seconds_have_no_capacity() {
        let mut ids = vec![1; 20];
        ids[5] = -1;
        let tr = build_link_trace(&schedule(ids), &LinkParams::default(), 0).unwrap();
        assert_eq!(tr.capacity_kbps[5], 0.0);
        assert!(!tr.link_up(5_500.0));
        assert!(tr.handover_seconds.is_empty());
    }

    #[test]
    fn seeds_change_only_capacity() {
        let mut ids = vec![1; 300];
        ids[150..].fill(2);
        let s = schedule(ids);
        let p = LinkParams::default();
        let a = build_link_trace(&s, &p, 1).unwrap();
        let b = build_link_trace(&s, &p, 1).unwrap();
        let c = build_link_trace(&s, &p, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.capacity_kbps, c.capacity_kbps);
        assert_eq!(a.delay_ms, c.delay_ms);
        assert_eq!(a.handover_seconds, c.handover_seconds);
        for &cap in &a.capacity_kbps {
            assert!((5100.0..=6900.0).contains(&cap));
        }
    }

    #[test]
    fn empty_schedule_rejected() {
        assert!(matches!(
            build_link_trace(&schedule(vec![]), &LinkParams::default(), 0),
            Err(TraceError::EmptySchedule)
        ));
    }

    #[test]
    fn csv_round_trip() {
        let mut ids = vec![1; 30];
        ids[12..].fill(7);
        let tr = build_link_trace(&schedule(ids), &LinkParams::default(), 9).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,serving_sat_id,delay_ms,capacity_kbps,loss_prob,outage\n"));
        let back = LinkTrace::read_csv(buf.as_slice(), tr.outage_ms).unwrap();
        assert_eq!(back, tr);
    }
}

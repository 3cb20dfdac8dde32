use serde::{Deserialize, Serialize};

use super::{elevation_and_range, propagation_delay, Constellation, GroundTerminal};

/// Per-hop transit estimate on the grid+ ISL mesh: about 2000 km of link at
/// the speed of light plus forwarding.
pub const ISL_HOP_DELAY_MS: f64 = 7.0;

/// Per-second serving satellites and end-to-end propagation delay for a call
/// between two terminals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServingSchedule {
    pub duration: usize,
    /// Source-side serving satellite, or -1 while the end-to-end path has no
    /// coverage at either end.
    pub serving_sat_id: Vec<i64>,
    /// Destination-side serving satellite, -1 without coverage.
    pub dst_serving_sat_id: Vec<i64>,
    /// One-way end-to-end propagation delay; 0 while uncovered.
    pub delay_ms: Vec<f64>,
    pub isl_hops: Vec<u32>,
}

impl ServingSchedule {
    /// Seconds `t` at which the source-side serving satellite differs from the
    /// one at `t - 1`, both valid.
    pub fn handover_seconds(&self) -> Vec<usize> {
        handover_seconds(&self.serving_sat_id)
    }

    pub fn handover_count(&self) -> usize {
        self.handover_seconds().len()
    }

    pub fn coverage_fraction(&self) -> f64 {
        let covered = self.serving_sat_id.iter().filter(|&&s| s >= 0).count();
        covered as f64 / self.duration.max(1) as f64
    }
}

pub fn handover_seconds(series: &[i64]) -> Vec<usize> {
    (1..series.len())
        .filter(|&t| series[t] >= 0 && series[t - 1] >= 0 && series[t] != series[t - 1])
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    id: usize,
    delay_ms: f64,
}

/// Tracks one terminal's serving satellite under a delay-based policy.
struct ServingTracker<'a> {
    terminal: &'a GroundTerminal,
    hysteresis_ms: f64,
    current: Option<Candidate>,
}

impl<'a> ServingTracker<'a> {
    fn step(&mut self, positions: &[[f64; 3]], t: f64) -> Option<Candidate> {
        let mut best: Option<Candidate> = None;
        let mut incumbent: Option<Candidate> = None;
        for (id, &pos) in positions.iter().enumerate() {
            let (el, range) = elevation_and_range(pos, self.terminal, t);
            if el < self.terminal.min_elevation {
                continue;
            }
            let c = Candidate {
                id,
                delay_ms: propagation_delay(range),
            };
            // strict comparison keeps the lower id on ties
            if best.map_or(true, |b| c.delay_ms < b.delay_ms) {
                best = Some(c);
            }
            if self.current.is_some_and(|cur| cur.id == id) {
                incumbent = Some(c);
            }
        }
        self.current = match (incumbent, best) {
            (_, None) => None,
            (None, Some(b)) => Some(b),
            (Some(inc), Some(b)) => {
                if self.hysteresis_ms <= 0.0 || b.delay_ms < inc.delay_ms - self.hysteresis_ms {
                    Some(b)
                } else {
                    Some(inc)
                }
            }
        };
        self.current
    }
}

/// Builds the per-second serving schedule for a call. Each terminal attaches
/// to the visible satellite with the lowest propagation delay and hands over
/// when a candidate beats the serving satellite by more than `hysteresis_ms`;
/// with zero hysteresis this is the per-second delay argmin.
pub fn serving_schedule(
    constellation: &Constellation,
    src: &GroundTerminal,
    dst: &GroundTerminal,
    duration: usize,
    hysteresis_ms: f64,
) -> ServingSchedule {
    let mut src_track = ServingTracker {
        terminal: src,
        hysteresis_ms,
        current: None,
    };
    let mut dst_track = ServingTracker {
        terminal: dst,
        hysteresis_ms,
        current: None,
    };
    let mut out = ServingSchedule {
        duration,
        serving_sat_id: Vec::with_capacity(duration),
        dst_serving_sat_id: Vec::with_capacity(duration),
        delay_ms: Vec::with_capacity(duration),
        isl_hops: Vec::with_capacity(duration),
    };
    let mut positions = vec![[0.0; 3]; constellation.len()];
    for second in 0..duration {
        let t = second as f64;
        for (p, sat) in positions.iter_mut().zip(&constellation.satellites) {
            *p = sat.position(t);
        }
        let s = src_track.step(&positions, t);
        let d = dst_track.step(&positions, t);
        out.dst_serving_sat_id.push(d.map_or(-1, |c| c.id as i64));
        match (s, d) {
            (Some(s), Some(d)) => {
                let hops = constellation.hop_count(s.id, d.id);
                out.serving_sat_id.push(s.id as i64);
                out.isl_hops.push(hops);
                out.delay_ms.push(s.delay_ms + hops as f64 * ISL_HOP_DELAY_MS + d.delay_ms);
            }
            _ => {
                out.serving_sat_id.push(-1);
                out.isl_hops.push(0);
                out.delay_ms.push(0.0);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbital::{synthesize_walker, OrbitalElements, Satellite};

    fn single(elements: OrbitalElements) -> Constellation {
        Constellation::new(
            1,
            1,
            vec![Satellite {
                id: 0,
                plane: 0,
                slot: 0,
                elements,
                phases: vec![],
            }],
        )
        .unwrap()
    }

    #[test]
    fn single_visible_satellite_never_hands_over() {
        // equatorial orbit, terminal under the satellite at t = 0; with a
        // 20-degree mask it stays visible for several minutes
        let e = OrbitalElements::from_altitude(1500.0, 0.0, 0.0, 0.0).unwrap();
        let c = single(e);
        let term = GroundTerminal::new(0.0, 0.0, 20.0).unwrap();
        let sched = serving_schedule(&c, &term, &term, 300, 0.0);
        assert!(sched.serving_sat_id.iter().all(|&s| s == 0));
        assert_eq!(sched.handover_count(), 0);
        assert_eq!(sched.serving_sat_id.len(), 300);
        assert_eq!(sched.delay_ms.len(), 300);
    }

    #[test]
    fn delay_lower_bound_holds() {
        let c = synthesize_walker(10, 8, 1200.0, 53.0, 1).unwrap();
        let a = GroundTerminal::new(40.7, -74.0, 10.0).unwrap();
        let b = GroundTerminal::new(51.5, -0.1, 10.0).unwrap();
        let sched = serving_schedule(&c, &a, &b, 480, 0.0);
        let bound = 2.0 * propagation_delay(1200.0);
        for t in 0..480 {
            if sched.serving_sat_id[t] >= 0 {
                assert!(sched.delay_ms[t] >= bound);
            }
        }
    }

    #[test]
    fn hysteresis_never_adds_handovers() {
        let c = synthesize_walker(10, 10, 1200.0, 53.0, 4).unwrap();
        let a = GroundTerminal::new(35.7, 139.7, 10.0).unwrap();
        let b = GroundTerminal::new(-33.9, 151.2, 10.0).unwrap();
        let plain = serving_schedule(&c, &a, &b, 1800, 0.0);
        let sticky = serving_schedule(&c, &a, &b, 1800, 2.0);
        assert!(sticky.handover_count() <= plain.handover_count());
    }

    #[test]
    fn handover_seconds_skip_gaps() {
        assert_eq!(handover_seconds(&[1, 1, 2, -1, 3, 3, 4]), vec![2, 6]);
        assert!(handover_seconds(&[]).is_empty());
    }
}

use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::orbital::ServingSchedule;
use crate::rtc::SEGMENT_SECONDS;

/// Handover count at which the normalised total saturates.
pub const HANDOVER_CAP: usize = 10;
/// Flattened state length: one handover flag and one total per second.
pub const STATE_DIM: usize = 2 * SEGMENT_SECONDS;

/// Predicted handover context of one segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentState {
    /// `h[t] == 1` when the serving satellite changes between seconds `t`
    /// and `t + 1` of the segment.
    pub h: Vec<u8>,
}

impl SegmentState {
    pub fn from_flags(h: Vec<u8>) -> Result<Self, PolicyError> {
        if h.len() != SEGMENT_SECONDS || h.iter().any(|&x| x > 1) {
            return Err(PolicyError::ShapeMismatch(format!(
                "handover flags must be {SEGMENT_SECONDS} binary values"
            )));
        }
        Ok(Self { h })
    }

    pub fn total_handovers(&self) -> usize {
        self.h.iter().map(|&x| x as usize).sum()
    }

    /// Handovers per minute over the segment.
    pub fn handover_frequency(&self) -> f64 {
        self.total_handovers() as f64 / (SEGMENT_SECONDS as f64 / 60.0)
    }

    /// Total handovers scaled into [0, 1], repeated in every slot.
    pub fn t_norm(&self) -> f64 {
        self.total_handovers().min(HANDOVER_CAP) as f64 / HANDOVER_CAP as f64
    }

    /// Per-second tokens `(h[t], t_norm)`.
    pub fn tokens(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        let t = self.t_norm();
        self.h.iter().map(move |&x| [x as f64, t])
    }

    /// `h` followed by the repeated normalised total.
    pub fn flatten(&self) -> Vec<f64> {
        let t = self.t_norm();
        self.h.iter().map(|&x| x as f64).chain(std::iter::repeat(t).take(SEGMENT_SECONDS)).collect()
    }
}

/// State of the segment starting at `segment_start` from a per-second series
/// of serving satellite ids.
pub fn state_from_serving(serving: &[i64], segment_start: usize) -> Result<SegmentState, PolicyError> {
    if segment_start + SEGMENT_SECONDS > serving.len() {
        return Err(PolicyError::SegmentOutOfRange {
            start: segment_start,
            duration: serving.len(),
        });
    }
    let h = (0..SEGMENT_SECONDS)
        .map(|t| {
            let (a, b) = (segment_start + t, segment_start + t + 1);
            (b < serving.len() && serving[a] >= 0 && serving[b] >= 0 && serving[a] != serving[b]) as u8
        })
        .collect();
    Ok(SegmentState { h })
}

pub fn build_state(schedule: &ServingSchedule, segment_start: usize) -> Result<SegmentState, PolicyError> {
    state_from_serving(&schedule.serving_sat_id[..schedule.duration.min(schedule.serving_sat_id.len())], segment_start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quiet_window() {
        let s = state_from_serving(&[4; 300], 60).unwrap();
        assert!(s.h.iter().all(|&x| x == 0));
        assert_eq!(s.t_norm(), 0.0);
        assert_eq!(s.flatten().len(), STATE_DIM);
    }

    #[test]
    fn one_change_at_second_thirty() {
        let mut ids = vec![1i64; 240];
        ids[130..].fill(2);
        let s = state_from_serving(&ids, 100).unwrap();
        let ones: Vec<usize> = (0..120).filter(|&t| s.h[t] == 1).collect();
        assert_eq!(ones, vec![29]);
        assert!(s.flatten()[120..].iter().all(|&v| (v - 0.1).abs() < 1e-15));
    }

    #[test]
    fn total_is_capped() {
        let ids: Vec<i64> = (0..120).map(|t| (t / 10) as i64).collect();
        let s = state_from_serving(&ids, 0).unwrap();
        assert_eq!(s.total_handovers(), 11);
        assert_eq!(s.t_norm(), 1.0);
    }

    #[test]
    fn out_of_range() {
        assert!(matches!(
            state_from_serving(&[0; 200], 100),
            Err(PolicyError::SegmentOutOfRange { .. })
        ));
    }

    proptest! {
        #[test]
        fn state_shape(ids in prop::collection::vec(-1i64..4, 120..400), frac in 0.0f64..1.0) {
            let start = ((ids.len() - 120) as f64 * frac) as usize;
            let s = state_from_serving(&ids, start).unwrap();
            let flat = s.flatten();
            prop_assert_eq!(flat.len(), STATE_DIM);
            prop_assert!(flat[..120].iter().all(|&v| v == 0.0 || v == 1.0));
            prop_assert!(flat[120..].iter().all(|&v| v == flat[120] && (0.0..=1.0).contains(&v)));
            let total: f64 = flat[..120].iter().sum();
            prop_assert_eq!(flat[120], (total.min(10.0)) / 10.0);
        }
    }
}

use serde::{Deserialize, Serialize};

use super::{PolicyError, SegmentState};

/// Queue limits the learned policy chooses between, ascending.
pub const ACTION_LIMITS_MS: [f64; 4] = [500.0, 600.0, 900.0, 2000.0];

/// Class index into [`ACTION_LIMITS_MS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Action(u8);

impl Action {
    pub const COUNT: usize = ACTION_LIMITS_MS.len();

    pub fn from_index(i: usize) -> Option<Self> {
        (i < Self::COUNT).then_some(Self(i as u8))
    }

    pub fn all() -> impl Iterator<Item = Action> {
        (0..Self::COUNT as u8).map(Self)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn queue_limit_ms(self) -> f64 {
        ACTION_LIMITS_MS[self.index()]
    }

    /// The action whose limit is closest to `limit_ms`; ties go to the smaller
    /// limit.
    pub fn nearest(limit_ms: f64) -> Self {
        let mut best = 0;
        for (i, &a) in ACTION_LIMITS_MS.iter().enumerate().skip(1) {
            if (a - limit_ms).abs() < (ACTION_LIMITS_MS[best] - limit_ms).abs() {
                best = i;
            }
        }
        Self(best as u8)
    }

    /// Exact inverse of [`Action::queue_limit_ms`].
    pub fn from_limit_ms(limit_ms: f64) -> Option<Self> {
        ACTION_LIMITS_MS.iter().position(|&a| a == limit_ms).map(|i| Self(i as u8))
    }
}

impl TryFrom<u8> for Action {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Self::from_index(v as usize).ok_or_else(|| format!("action index {v} out of range"))
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoEWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for QoEWeights {
    fn default() -> Self {
        Self { alpha: 2.0, beta: 1.0 }
    }
}

impl QoEWeights {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.alpha >= 0.0 && self.beta >= 0.0 {
            Ok(())
        } else {
            Err(PolicyError::InvalidConfig("QoE weights must be non-negative".into()))
        }
    }
}

pub fn qoe(r_norm: f64, f_norm: f64, w: QoEWeights) -> f64 {
    w.alpha * r_norm - w.beta * f_norm
}

/// One logged segment: what was predicted, what limit ran, what came out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: SegmentState,
    /// Limit in force during collection, one of the collection grid values.
    pub limit_ms: f64,
    pub raw_bitrate_mbps: f64,
    pub raw_freeze_per_min: f64,
    pub r_norm: f64,
    pub f_norm: f64,
    pub reward: f64,
}

impl Experience {
    pub fn new(state: SegmentState, limit_ms: f64, raw_bitrate_mbps: f64, raw_freeze_per_min: f64) -> Self {
        Self {
            state,
            limit_ms,
            raw_bitrate_mbps,
            raw_freeze_per_min,
            r_norm: 0.0,
            f_norm: 0.0,
            reward: 0.0,
        }
    }

    pub fn action(&self) -> Action {
        Action::nearest(self.limit_ms)
    }

    /// `(total handovers, handovers per minute)`, the clustering features.
    pub fn features(&self) -> [f64; 2] {
        [self.state.total_handovers() as f64, self.state.handover_frequency()]
    }
}

/// Min-max bounds used to normalise a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub bitrate_min: f64,
    pub bitrate_max: f64,
    pub freeze_min: f64,
    pub freeze_max: f64,
}

impl Normalization {
    pub fn fit(experiences: &[Experience]) -> Result<Self, PolicyError> {
        if experiences.is_empty() {
            return Err(PolicyError::EmptyDataset);
        }
        let bounds = |f: fn(&Experience) -> f64| {
            experiences
                .iter()
                .map(f)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
        };
        let (bitrate_min, bitrate_max) = bounds(|e| e.raw_bitrate_mbps);
        let (freeze_min, freeze_max) = bounds(|e| e.raw_freeze_per_min);
        Ok(Self {
            bitrate_min,
            bitrate_max,
            freeze_min,
            freeze_max,
        })
    }

    pub fn apply(&self, e: &mut Experience, w: QoEWeights) {
        e.r_norm = scale(e.raw_bitrate_mbps, self.bitrate_min, self.bitrate_max);
        e.f_norm = scale(e.raw_freeze_per_min, self.freeze_min, self.freeze_max);
        e.reward = qoe(e.r_norm, e.f_norm, w);
    }
}

fn scale(x: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Min-max normalises bitrate and freeze rate over the dataset and fills in
/// the rewards. A constant column normalises to 0.
pub fn normalize_dataset(experiences: &mut [Experience], w: QoEWeights) -> Result<Normalization, PolicyError> {
    w.validate()?;
    let n = Normalization::fit(experiences)?;
    for e in experiences.iter_mut() {
        n.apply(e, w);
    }
    Ok(n)
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::policy::{expert_action_for_state, infer, state_from_serving, Action, ExpertTable, PolicyWeights};
use crate::rtc::{QueuePolicy, SegmentContext};

/// Limits the exploration policy draws from.
pub const RANDOM_POLICY_LIMITS_MS: [f64; 15] = [
    100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0, 900.0, 1000.0, 1200.0, 1400.0, 1600.0, 1800.0, 2000.0,
];

/// Uniform draw over [`RANDOM_POLICY_LIMITS_MS`] before every segment.
#[derive(Debug, Clone)]
pub struct RandomQueuePolicy {
    rng: ChaCha8Rng,
}

impl RandomQueuePolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl QueuePolicy for RandomQueuePolicy {
    fn name(&self) -> String {
        "random".into()
    }
    fn queue_limit_ms(&mut self, _ctx: &SegmentContext<'_>) -> f64 {
        *RANDOM_POLICY_LIMITS_MS.choose(&mut self.rng).expect("non-empty")
    }
}

/// Runs the trained transformer on the predicted handover state.
#[derive(Debug, Clone)]
pub struct LearnedQueuePolicy<'a> {
    weights: &'a PolicyWeights,
    pub decisions: Vec<Action>,
}

impl<'a> LearnedQueuePolicy<'a> {
    pub fn new(weights: &'a PolicyWeights) -> Self {
        Self {
            weights,
            decisions: Vec::new(),
        }
    }
}

impl QueuePolicy for LearnedQueuePolicy<'_> {
    fn name(&self) -> String {
        "learned".into()
    }
    fn queue_limit_ms(&mut self, ctx: &SegmentContext<'_>) -> f64 {
        let action = state_from_serving(ctx.serving_sat_id, ctx.start_s)
            .ok()
            .and_then(|s| infer(self.weights, &s).ok())
            // fall back to the stock limit if the state cannot be built
            .unwrap_or_else(|| Action::from_index(Action::COUNT - 1).expect("last action"));
        self.decisions.push(action);
        action.queue_limit_ms()
    }
}

/// Queries the clustered expert directly.
#[derive(Debug, Clone)]
pub struct ExpertQueuePolicy<'a> {
    table: &'a ExpertTable,
}

impl<'a> ExpertQueuePolicy<'a> {
    pub fn new(table: &'a ExpertTable) -> Self {
        Self { table }
    }
}

impl QueuePolicy for ExpertQueuePolicy<'_> {
    fn name(&self) -> String {
        "expert".into()
    }
    fn queue_limit_ms(&mut self, ctx: &SegmentContext<'_>) -> f64 {
        match state_from_serving(ctx.serving_sat_id, ctx.start_s) {
            Ok(s) => expert_action_for_state(self.table, &s).queue_limit_ms(),
            Err(_) => Action::from_index(Action::COUNT - 1).expect("last action").queue_limit_ms(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_grid_spans_range() {
        assert_eq!(RANDOM_POLICY_LIMITS_MS.len(), 15);
        assert_eq!(RANDOM_POLICY_LIMITS_MS[0], 100.0);
        assert_eq!(RANDOM_POLICY_LIMITS_MS[14], 2000.0);
        assert!(RANDOM_POLICY_LIMITS_MS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn random_policy_is_seeded() {
        let serving = vec![0i64; 480];
        let ctx = SegmentContext {
            segment_index: 0,
            start_s: 0,
            serving_sat_id: &serving,
        };
        let draw = |seed| {
            let mut p = RandomQueuePolicy::new(seed);
            (0..20).map(|_| p.queue_limit_ms(&ctx)).collect::<Vec<_>>()
        };
        assert_eq!(draw(4), draw(4));
        assert_ne!(draw(4), draw(5));
        assert!(draw(4).iter().all(|l| RANDOM_POLICY_LIMITS_MS.contains(l)));
    }
}

//! Expert policy: cluster segments by handover features, then label each
//! cluster with the action that earned the best mean reward inside it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Action, Experience, PolicyError, QoEWeights, SegmentState};

pub const DEFAULT_CLUSTERS: usize = 4;
pub const MAX_LLOYD_ITERATIONS: usize = 300;

/// Per-feature z-score parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    pub mean: f64,
    pub std: f64,
}

impl FeatureScale {
    fn fit(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        // a constant feature carries no distance information
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }

    fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertTable {
    /// Centroids in z-scored feature space.
    pub centroids: Vec<[f64; 2]>,
    pub labels: Vec<Action>,
    pub scaling: [FeatureScale; 2],
}

impl ExpertTable {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.centroids.is_empty() || self.centroids.len() != self.labels.len() {
            return Err(PolicyError::ShapeMismatch(format!(
                "{} centroids with {} labels",
                self.centroids.len(),
                self.labels.len()
            )));
        }
        if self.centroids.iter().flatten().chain(self.scaling.iter().flat_map(|s| [&s.mean, &s.std])).any(|v| !v.is_finite())
            || self.scaling.iter().any(|s| s.std <= 0.0)
        {
            return Err(PolicyError::ShapeMismatch("non-finite expert parameters".into()));
        }
        Ok(())
    }

    fn scale(&self, features: [f64; 2]) -> [f64; 2] {
        [self.scaling[0].apply(features[0]), self.scaling[1].apply(features[1])]
    }

    /// Index of the nearest centroid; ties go to the lower index.
    pub fn nearest_cluster(&self, features: [f64; 2]) -> usize {
        nearest(&self.centroids, self.scale(features)).0
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(centroids: &[[f64; 2]], p: [f64; 2]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(i, &c)| (i, dist2(c, p)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Seeded k-means++ initialisation followed by Lloyd iterations until the
/// assignment stops changing or the iteration cap is hit. Returns centroids
/// and the final assignment. An emptied cluster keeps its previous centroid.
pub fn kmeans(points: &[[f64; 2]], k: usize, seed: u64) -> Result<(Vec<[f64; 2]>, Vec<usize>), PolicyError> {
    let mut distinct: Vec<[f64; 2]> = points.to_vec();
    distinct.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    distinct.dedup();
    if k == 0 || distinct.len() < k {
        return Err(PolicyError::InsufficientData(format!(
            "{} distinct feature points for k = {k}",
            distinct.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.gen_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|&p| dist2(p, centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        // total > 0 because more distinct points remain than centroids chosen
        let mut target = rng.gen::<f64>() * total;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).expect("a point off every centroid");
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = points[pick];
        centroids.push(c);
        for (d, &p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, c));
        }
    }

    let mut assign: Vec<usize> = points.iter().map(|&p| nearest(&centroids, p).0).collect();
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut sums = vec![[0.0; 2]; k];
        let mut counts = vec![0usize; k];
        for (&p, &a) in points.iter().zip(&assign) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            counts[a] += 1;
        }
        for ((c, s), &n) in centroids.iter_mut().zip(&sums).zip(&counts) {
            if n > 0 {
                *c = [s[0] / n as f64, s[1] / n as f64];
            }
        }
        let next: Vec<usize> = points.iter().map(|&p| nearest(&centroids, p).0).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    Ok((centroids, assign))
}

/// Mean reward per action over the given members; `None` where an action has
/// no samples.
pub fn mean_reward_by_action<'a>(members: impl Iterator<Item = &'a Experience>) -> [Option<f64>; Action::COUNT] {
    let mut sum = [0.0; Action::COUNT];
    let mut n = [0usize; Action::COUNT];
    for e in members {
        let a = e.action().index();
        sum[a] += e.reward;
        n[a] += 1;
    }
    std::array::from_fn(|i| (n[i] > 0).then(|| sum[i] / n[i] as f64))
}

/// Best action by mean reward; ties go to the smaller limit.
pub fn best_action(means: &[Option<f64>; Action::COUNT]) -> Option<Action> {
    let mut best: Option<(usize, f64)> = None;
    for (i, m) in means.iter().enumerate() {
        if let Some(m) = *m {
            if best.map_or(true, |(_, b)| m > b) {
                best = Some((i, m));
            }
        }
    }
    best.and_then(|(i, _)| Action::from_index(i))
}

/// Builds the expert from normalised experiences (rewards already filled in
/// with `w`; they are recomputed here so the table reflects `w`).
pub fn build_expert(experiences: &[Experience], k: usize, w: QoEWeights, seed: u64) -> Result<ExpertTable, PolicyError> {
    w.validate()?;
    if experiences.len() < k {
        return Err(PolicyError::InsufficientData(format!(
            "{} experiences for k = {k}",
            experiences.len()
        )));
    }
    let rescored: Vec<Experience> = experiences
        .iter()
        .map(|e| Experience {
            reward: super::qoe(e.r_norm, e.f_norm, w),
            ..e.clone()
        })
        .collect();
    let raw: Vec<[f64; 2]> = rescored.iter().map(Experience::features).collect();
    let scaling = [
        FeatureScale::fit(raw.iter().map(|f| f[0])),
        FeatureScale::fit(raw.iter().map(|f| f[1])),
    ];
    let points: Vec<[f64; 2]> = raw.iter().map(|f| [scaling[0].apply(f[0]), scaling[1].apply(f[1])]).collect();
    let (centroids, assign) = kmeans(&points, k, seed)?;
    let labels = (0..k)
        .map(|c| {
            let members = rescored.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(e, _)| e);
            best_action(&mean_reward_by_action(members))
                .ok_or_else(|| PolicyError::InsufficientData(format!("cluster {c} has no samples")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExpertTable {
        centroids,
        labels,
        scaling,
    })
}

/// The expert's action for raw `(total handovers, handovers per minute)`.
pub fn expert_action(table: &ExpertTable, features: [f64; 2]) -> Action {
    table.labels[table.nearest_cluster(features)]
}

pub fn expert_action_for_state(table: &ExpertTable, state: &SegmentState) -> Action {
    expert_action(table, [state.total_handovers() as f64, state.handover_frequency()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rtc::SEGMENT_SECONDS;

    fn state_with(total: usize) -> SegmentState {
        let mut h = vec![0u8; SEGMENT_SECONDS];
        for i in 0..total {
            h[i * 7 % SEGMENT_SECONDS] = 1;
        }
        SegmentState::from_flags(h).unwrap()
    }

    fn exp(total: usize, limit: f64, r: f64) -> Experience {
        let mut e = Experience::new(state_with(total), limit, 0.0, 0.0);
        e.r_norm = r;
        e.reward = r;
        e
    }

    fn two_blobs() -> Vec<Experience> {
        let mut d = Vec::new();
        for i in 0..40 {
            // blob A: quiet segments, best under 500
            let total = i % 2;
            d.push(exp(total, 500.0, 0.9));
            d.push(exp(total, 2000.0, 0.2));
            d.push(exp(total, 900.0, 0.4));
            // blob B: busy segments, best under 2000
            let total = 8 + i % 3;
            d.push(exp(total, 500.0, 0.1));
            d.push(exp(total, 2000.0, 0.8));
        }
        d
    }

    #[test]
    fn separable_blobs_recover_planted_labels() {
        let d = two_blobs();
        let t = build_expert(&d, 2, QoEWeights { alpha: 1.0, beta: 0.0 }, 3).unwrap();
        assert_eq!(expert_action(&t, [0.0, 0.0]).queue_limit_ms(), 500.0);
        assert_eq!(expert_action(&t, [9.0, 4.5]).queue_limit_ms(), 2000.0);
        // brute force: every member's cluster label equals the argmax over its
        // own cluster's per-action means
        for c in 0..2 {
            let members: Vec<&Experience> = d.iter().filter(|e| t.nearest_cluster(e.features()) == c).collect();
            let means = mean_reward_by_action(members.iter().copied());
            let best = means.iter().filter_map(|m| *m).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(means[t.labels[c].index()], Some(best));
        }
    }

    #[test]
    fn single_cluster_is_global_argmax() {
        let d = two_blobs();
        let t = build_expert(&d, 1, QoEWeights { alpha: 1.0, beta: 0.0 }, 0).unwrap();
        let means = mean_reward_by_action(d.iter());
        let global = best_action(&means).unwrap();
        assert_eq!(t.labels, vec![global]);
    }

    #[test]
    fn duplicates_do_not_change_labels() {
        let d = two_blobs();
        let dd: Vec<Experience> = d.iter().chain(d.iter()).cloned().collect();
        let w = QoEWeights { alpha: 1.0, beta: 0.0 };
        let a = build_expert(&d, 2, w, 5).unwrap();
        let b = build_expert(&dd, 2, w, 5).unwrap();
        for total in 0..12 {
            let f = [total as f64, total as f64 / 2.0];
            assert_eq!(expert_action(&a, f), expert_action(&b, f));
        }
    }

    #[test]
    fn reproducible_for_a_seed() {
        let d = two_blobs();
        let w = QoEWeights::default();
        assert_eq!(build_expert(&d, 2, w, 9).unwrap(), build_expert(&d, 2, w, 9).unwrap());
    }

    #[test]
    fn tie_rules() {
        let t = ExpertTable {
            centroids: vec![[-1.0, 0.0], [1.0, 0.0], [5.0, 5.0]],
            labels: vec![Action::from_index(3).unwrap(), Action::from_index(0).unwrap(), Action::from_index(1).unwrap()],
            scaling: [FeatureScale { mean: 0.0, std: 1.0 }; 2],
        };
        // exactly at centroid 2
        assert_eq!(expert_action(&t, [5.0, 5.0]).queue_limit_ms(), 600.0);
        // equidistant from 0 and 1
        assert_eq!(expert_action(&t, [0.0, 3.0]).queue_limit_ms(), 2000.0);
        // reward ties go to the smaller limit
        assert_eq!(best_action(&[None, Some(1.0), None, Some(1.0)]), Action::from_index(1));
    }

    #[test]
    fn too_few_distinct_points() {
        let d: Vec<Experience> = (0..10).map(|_| exp(1, 500.0, 0.5)).collect();
        assert!(matches!(
            build_expert(&d, 2, QoEWeights::default(), 0),
            Err(PolicyError::InsufficientData(_))
        ));
    }

    #[test]
    fn kmeans_centroids_are_distinct() {
        let pts: Vec<[f64; 2]> = (0..50).map(|i| [(i % 5) as f64, (i % 5) as f64 * 0.5]).collect();
        let (c, assign) = kmeans(&pts, 4, 11).unwrap();
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                assert!(dist2(c[i], c[j]) > 0.0);
            }
        }
        assert!(assign.iter().all(|&a| a < 4));
    }
}

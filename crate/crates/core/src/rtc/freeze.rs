//! Render-stall detection.
//!
//! A freeze is a gap between consecutive rendered frames longer than three
//! times the median frame interval of the preceding second, and never shorter
//! than 150 ms. One gap is one freeze however long it lasts.

/// Floor on the freeze threshold.
pub const MIN_FREEZE_GAP_MS: f64 = 150.0;
const TRAILING_WINDOW_MS: f64 = 1000.0;

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Start time and length of every freeze in a nondecreasing series of render
/// times.
pub fn freeze_gaps(render_ms: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut window_start = 0;
    let mut scratch = Vec::new();
    for i in 1..render_ms.len() {
        let (prev, cur) = (render_ms[i - 1], render_ms[i]);
        // intervals ending within the second before the gap opened
        while render_ms[window_start] < prev - TRAILING_WINDOW_MS {
            window_start += 1;
        }
        scratch.clear();
        scratch.extend((window_start.max(1)..i).map(|k| render_ms[k] - render_ms[k - 1]));
        let threshold = median(&mut scratch).map_or(MIN_FREEZE_GAP_MS, |m| (3.0 * m).max(MIN_FREEZE_GAP_MS));
        let gap = cur - prev;
        if gap > threshold {
            out.push((prev, gap));
        }
    }
    out
}

/// Number of freezes in a nondecreasing series of render times.
pub fn detect_freezes(render_ms: &[f64]) -> usize {
    freeze_gaps(render_ms).len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn periodic(from: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| from + i as f64 * 1000.0 / 30.0).collect()
    }

    #[test]
    fn periodic_stream_has_no_freezes() {
        assert_eq!(detect_freezes(&periodic(0.0, 900)), 0);
        assert_eq!(detect_freezes(&[]), 0);
        assert_eq!(detect_freezes(&[5.0]), 0);
    }

    #[test]
    fn single_long_gap() {
        let mut t = periodic(0.0, 60);
        let last = *t.last().unwrap();
        t.extend(periodic(last + 500.0, 60));
        assert_eq!(detect_freezes(&t), 1);
        let gaps = freeze_gaps(&t);
        assert!((gaps[0].1 - 500.0).abs() < 1e-9);
    }

    #[test]
    fn two_gaps_five_seconds_apart() {
        // 200 ms exceeds both 3 x 33.3 ms and the 150 ms floor
        let mut t = periodic(0.0, 60);
        let a = *t.last().unwrap() + 200.0;
        t.extend(periodic(a, 150));
        let b = *t.last().unwrap() + 200.0;
        t.extend(periodic(b, 60));
        assert_eq!(detect_freezes(&t), 2);
    }

    #[test]
    fn threshold_follows_slow_frame_rate() {
        // the first 200 ms interval has no history and meets the 150 ms
        // floor; after that the 200 ms cadence is normal, 500 ms is under the
        // 3 x 200 = 600 ms threshold and 700 ms is over it
        let mut t: Vec<f64> = (0..20).map(|i| i as f64 * 200.0).collect();
        assert_eq!(detect_freezes(&t), 1);
        let last = *t.last().unwrap();
        t.push(last + 500.0);
        assert_eq!(detect_freezes(&t), 1);
        t.push(last + 1200.0);
        assert_eq!(detect_freezes(&t), 2);
    }

    proptest! {
        #[test]
        fn gaps_under_floor_never_freeze(gaps in prop::collection::vec(1.0f64..150.0, 1..300)) {
            let mut t = vec![0.0];
            for g in gaps {
                let last = *t.last().unwrap();
                t.push(last + g);
            }
            prop_assert_eq!(detect_freezes(&t), 0);
        }

        #[test]
        fn freezes_bounded_by_long_gaps(gaps in prop::collection::vec(1.0f64..600.0, 1..300)) {
            let mut t = vec![0.0];
            for &g in &gaps {
                let last = *t.last().unwrap();
                t.push(last + g);
            }
            let long = gaps.iter().filter(|&&g| g > MIN_FREEZE_GAP_MS).count();
            prop_assert!(detect_freezes(&t) <= long);
        }
    }
}

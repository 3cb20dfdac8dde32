//! Invariants over randomly drawn traces, datasets and geometry.

use proptest::prelude::*;

use leo_rtc::netsim::LinkTrace;
use leo_rtc::orbital::{propagate, propagation_delay, OrbitalElements, EARTH_RADIUS_KM};
use leo_rtc::policy::{normalize_dataset, Experience, QoEWeights, SegmentState, ACTION_LIMITS_MS};
use leo_rtc::rtc::{run_call_with, FixedQueuePolicy, RtcConfig, SEGMENT_SECONDS};

fn trace(duration: usize, delay_ms: f64, capacity_kbps: f64, loss: f64, handovers: &[usize]) -> LinkTrace {
    let mut t = LinkTrace::constant(duration, delay_ms, capacity_kbps, loss);
    t.outage_ms = 400.0;
    for &h in handovers.iter().filter(|&&h| h > 0 && h < duration) {
        t.outage[h] = true;
        t.handover_seconds.push(h);
        t.serving_sat_id[h..].iter_mut().for_each(|s| *s += 1);
    }
    t.handover_seconds.sort_unstable();
    t.handover_seconds.dedup();
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn packets_are_conserved(
        delay in 5.0f64..60.0,
        capacity in 800.0f64..8000.0,
        loss in 0.0f64..0.05,
        limit in prop::sample::select(ACTION_LIMITS_MS.to_vec()),
        handovers in prop::collection::vec(1usize..120, 0..4),
        seed in any::<u64>(),
    ) {
        let t = trace(120, delay, capacity, loss, &handovers);
        let out = run_call_with(&t, &mut FixedQueuePolicy(limit), seed, &RtcConfig::default()).unwrap();
        let c = out.counts;
        prop_assert_eq!(c.created, c.delivered + c.lost + c.in_flight + c.queued);
        prop_assert!(c.created > 0);
    }

    #[test]
    fn same_seed_same_call(seed in any::<u64>(), handovers in prop::collection::vec(1usize..120, 0..3)) {
        let t = trace(120, 20.0, 3000.0, 0.01, &handovers);
        let run = || run_call_with(&t, &mut FixedQueuePolicy(900.0), seed, &RtcConfig::default()).unwrap().metrics;
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn metrics_are_physical(capacity in 500.0f64..10_000.0, seed in any::<u64>()) {
        let t = trace(120, 15.0, capacity, 0.01, &[]);
        let m = run_call_with(&t, &mut FixedQueuePolicy(2000.0), seed, &RtcConfig::default()).unwrap().metrics;
        prop_assert!(m.avg_bitrate_mbps >= 0.0 && m.avg_bitrate_mbps * 1000.0 <= capacity * 1.05);
        prop_assert!((0.0..=1.0).contains(&m.packet_loss_frac));
        prop_assert!(m.freeze_rate_per_min >= 0.0);
        prop_assert!(m.e2e_delay_ms >= 15.0);
        prop_assert_eq!(m.per_segment.len(), 120 / SEGMENT_SECONDS);
    }

    #[test]
    fn normalised_qoe_is_bounded(raw in prop::collection::vec((0.0f64..10.0, 0.0f64..30.0), 1..40)) {
        let mut ex: Vec<Experience> = raw
            .iter()
            .map(|&(r, f)| Experience::new(SegmentState::from_flags(vec![0; SEGMENT_SECONDS]).unwrap(), 500.0, r, f))
            .collect();
        normalize_dataset(&mut ex, QoEWeights::default()).unwrap();
        for e in &ex {
            prop_assert!((0.0..=1.0).contains(&e.r_norm) && (0.0..=1.0).contains(&e.f_norm));
            prop_assert!((-1.0..=2.0).contains(&e.reward));
        }
    }

    #[test]
    fn orbit_radius_is_constant(alt in 300.0f64..2000.0, inc in 0.0f64..98.0, raan in 0.0f64..360.0, t in 0.0f64..20_000.0) {
        let e = OrbitalElements::from_altitude(alt, inc, raan, 0.0).unwrap();
        let p = propagate(&e, t);
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        prop_assert!((r - EARTH_RADIUS_KM - alt).abs() < 1e-6);
    }

    #[test]
    fn delay_grows_with_range(a in 0.0f64..5000.0, b in 0.0f64..5000.0) {
        prop_assume!(a < b);
        prop_assert!(propagation_delay(a) < propagation_delay(b));
    }
}

#[test]
fn more_capacity_never_lowers_bitrate() {
    let rates: Vec<f64> = [1000.0, 2000.0, 4000.0, 8000.0]
        .iter()
        .map(|&c| {
            let t = trace(240, 20.0, c, 0.0, &[]);
            run_call_with(&t, &mut FixedQueuePolicy(2000.0), 5, &RtcConfig::default())
                .unwrap()
                .metrics
                .avg_bitrate_mbps
        })
        .collect();
    assert!(rates.windows(2).all(|w| w[1] >= w[0] * 0.98), "{rates:?}");
}

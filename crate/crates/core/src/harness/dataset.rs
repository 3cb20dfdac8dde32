//! Random-policy data collection and the per-segment dataset CSV.

use std::io::{Read, Write};

use super::policies::RandomQueuePolicy;
use super::scenario::{build_call_env, mix_seed, ScenarioConfig};
use super::HarnessError;
use crate::policy::{state_from_serving, Experience, SegmentState};
use crate::rtc::{run_call, SEGMENT_SECONDS};

/// One row of the dataset: a segment, the limit that ran, what came out and
/// the handover state that was predicted for it.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRow {
    pub call_id: usize,
    pub segment_index: usize,
    pub action_queue_ms: f64,
    pub raw_bitrate_mbps: f64,
    pub raw_freeze_per_min: f64,
    pub state: SegmentState,
}

impl SegmentRow {
    pub fn handover_total(&self) -> usize {
        self.state.total_handovers()
    }

    pub fn experience(&self) -> Experience {
        Experience::new(self.state.clone(), self.action_queue_ms, self.raw_bitrate_mbps, self.raw_freeze_per_min)
    }
}

const LEADING: [&str; 5] = ["call_id", "segment_index", "action_queue_ms", "raw_bitrate_mbps", "raw_freeze_per_min"];

pub fn dataset_header() -> Vec<String> {
    LEADING
        .iter()
        .map(|s| s.to_string())
        .chain((0..SEGMENT_SECONDS).map(|t| format!("h{t}")))
        .chain(std::iter::once("handover_total".to_string()))
        .collect()
}

pub fn write_dataset<W: Write>(w: W, rows: &[SegmentRow]) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(dataset_header())?;
    for r in rows {
        let mut rec = vec![
            r.call_id.to_string(),
            r.segment_index.to_string(),
            r.action_queue_ms.to_string(),
            r.raw_bitrate_mbps.to_string(),
            r.raw_freeze_per_min.to_string(),
        ];
        rec.extend(r.state.h.iter().map(|x| x.to_string()));
        rec.push(r.handover_total().to_string());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(r: R) -> Result<Vec<SegmentRow>, HarnessError> {
    let mut rd = csv::Reader::from_reader(r);
    let expected = dataset_header();
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != expected {
        let absent = |c: &String| !header.contains(c);
        let mut missing: Vec<String> = LEADING.iter().map(|s| s.to_string()).filter(absent).collect();
        let h_missing = expected[LEADING.len()..LEADING.len() + SEGMENT_SECONDS].iter().filter(|c| absent(c)).count();
        if h_missing > 0 {
            missing.push(format!("{h_missing} of h0..h{}", SEGMENT_SECONDS - 1));
        }
        missing.extend(expected.last().filter(|c| absent(c)).cloned());
        return Err(HarnessError::Schema(if missing.is_empty() {
            "dataset columns are out of order or have extras".into()
        } else {
            format!("dataset is missing columns: {}", missing.join(", "))
        }));
    }
    let mut rows = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let schema = |what: &str| HarnessError::Schema(format!("row {}: bad {what}", line + 1));
        let num = |i: usize| field(i).parse::<f64>().map_err(|_| schema(LEADING[i]));
        let int = |i: usize| field(i).parse::<usize>().map_err(|_| schema(LEADING[i]));
        let h = (0..SEGMENT_SECONDS)
            .map(|t| field(LEADING.len() + t).parse::<u8>().map_err(|_| schema("h column")))
            .collect::<Result<Vec<_>, _>>()?;
        let state = SegmentState::from_flags(h).map_err(|_| schema("h column"))?;
        let total = field(LEADING.len() + SEGMENT_SECONDS).parse::<usize>().map_err(|_| schema("handover_total"))?;
        if total != state.total_handovers() {
            return Err(schema("handover_total (does not match h)"));
        }
        rows.push(SegmentRow {
            call_id: int(0)?,
            segment_index: int(1)?,
            action_queue_ms: num(2)?,
            raw_bitrate_mbps: num(3)?,
            raw_freeze_per_min: num(4)?,
            state,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct Collection {
    pub rows: Vec<SegmentRow>,
    pub skipped_calls: Vec<(usize, String)>,
    /// Handovers per collected call, in call order.
    pub handovers_per_call: Vec<usize>,
}

/// Runs `n_calls` calls under the random policy. Call `i` uses scenario
/// `i % scenarios.len()`; failed calls are logged and skipped.
pub fn collect(scenarios: &[ScenarioConfig], n_calls: usize) -> Result<Collection, HarnessError> {
    if scenarios.is_empty() || n_calls == 0 {
        return Err(HarnessError::Config("collect needs at least one scenario and one call".into()));
    }
    for s in scenarios {
        s.validate()?;
    }
    let mut out = Collection {
        rows: Vec::new(),
        skipped_calls: Vec::new(),
        handovers_per_call: Vec::new(),
    };
    for call_id in 0..n_calls {
        let cfg = &scenarios[call_id % scenarios.len()];
        match collect_call(cfg, call_id) {
            Ok((rows, handovers)) => {
                out.rows.extend(rows);
                out.handovers_per_call.push(handovers);
            }
            Err(e) => {
                log::warn!("call {call_id} ({}) skipped: {e}", cfg.name);
                out.skipped_calls.push((call_id, e.to_string()));
            }
        }
        if (call_id + 1) % 50 == 0 {
            log::info!("collected {} / {n_calls} calls", call_id + 1);
        }
    }
    Ok(out)
}

fn collect_call(cfg: &ScenarioConfig, call_id: usize) -> Result<(Vec<SegmentRow>, usize), HarnessError> {
    let env = build_call_env(cfg, call_id)?;
    let mut policy = RandomQueuePolicy::new(mix_seed(env.rtc_seed, 0x7a11));
    let metrics = run_call(&env.trace, &mut policy, env.rtc_seed)?;
    let rows = metrics
        .per_segment
        .iter()
        .map(|seg| {
            Ok(SegmentRow {
                call_id,
                segment_index: seg.segment_index,
                action_queue_ms: seg.action_queue_ms,
                raw_bitrate_mbps: seg.raw_bitrate_mbps,
                raw_freeze_per_min: seg.raw_freeze_per_min,
                state: state_from_serving(&env.trace.serving_sat_id, seg.segment_index * SEGMENT_SECONDS)?,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok((rows, env.schedule.handover_count()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(call_id: usize, h1: usize) -> SegmentRow {
        let mut h = vec![0u8; SEGMENT_SECONDS];
        for x in h.iter_mut().take(h1) {
            *x = 1;
        }
        SegmentRow {
            call_id,
            segment_index: 1,
            action_queue_ms: 700.0,
            raw_bitrate_mbps: 3.25,
            raw_freeze_per_min: 0.5,
            state: SegmentState::from_flags(h).unwrap(),
        }
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row(0, 0), row(1, 3)];
        let mut buf = Vec::new();
        write_dataset(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap().split(',').count(), 5 + SEGMENT_SECONDS + 1);
        assert_eq!(read_dataset(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn missing_columns_reported() {
        let err = read_dataset("call_id,segment_index\n0,1\n".as_bytes()).unwrap_err();
        match err {
            HarnessError::Schema(m) => assert!(m.contains("action_queue_ms") && m.contains("120 of h0..h119"), "{m}"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn inconsistent_total_rejected() {
        let mut buf = Vec::new();
        write_dataset(&mut buf, &[row(0, 2)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let bad = text.trim_end().rsplit_once(',').map(|(a, _)| format!("{a},5\n")).unwrap();
        assert!(matches!(read_dataset(bad.as_bytes()), Err(HarnessError::Schema(_))));
    }
}

//! Paired A/B evaluation and handover statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::policies::{ExpertQueuePolicy, LearnedQueuePolicy, RandomQueuePolicy};
use super::scenario::{build_call_env, mix_seed, CallEnv, ScenarioConfig};
use super::HarnessError;
use crate::policy::{ExpertTable, PolicyWeights};
use crate::rtc::{run_call_with, write_call_rows, CallRow, FixedQueuePolicy, QueuePolicy, RtcConfig};

/// A policy under evaluation. Each call gets a fresh instance.
#[derive(Debug, Clone, Copy)]
pub enum Arm<'a> {
    Fixed(f64),
    Random,
    Learned(&'a PolicyWeights),
    Expert(&'a ExpertTable),
}

impl Arm<'_> {
    pub fn name(&self) -> String {
        match self {
            Arm::Fixed(l) => format!("fixed-{l}"),
            Arm::Random => "random".into(),
            Arm::Learned(_) => "learned".into(),
            Arm::Expert(_) => "expert".into(),
        }
    }

    fn instantiate(&self, env: &CallEnv) -> Box<dyn QueuePolicy + '_> {
        match *self {
            Arm::Fixed(l) => Box::new(FixedQueuePolicy(l)),
            Arm::Random => Box::new(RandomQueuePolicy::new(mix_seed(env.rtc_seed, 0x7a11))),
            Arm::Learned(w) => Box::new(LearnedQueuePolicy::new(w)),
            Arm::Expert(t) => Box::new(ExpertQueuePolicy::new(t)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
}

/// Linear-interpolated percentile of sorted data, `q` in [0, 1].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Some(Self {
            mean: s.iter().sum::<f64>() / s.len() as f64,
            median: percentile(&s, 0.5),
            p10: percentile(&s, 0.1),
            p90: percentile(&s, 0.9),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub name: String,
    pub calls: Vec<CallRow>,
    pub bitrate_mbps: Summary,
    pub freeze_per_min: Summary,
    pub e2e_delay_ms: Summary,
    pub loss_frac: Summary,
    /// Segments run at each queue limit (ms).
    pub action_histogram: BTreeMap<u32, usize>,
}

impl ArmReport {
    fn from_calls(name: String, calls: Vec<CallRow>, limits: &[f64]) -> Result<Self, HarnessError> {
        let col = |f: fn(&CallRow) -> f64| Summary::of(&calls.iter().map(f).collect::<Vec<_>>());
        let none = || HarnessError::Config(format!("arm {name} completed no calls"));
        let mut action_histogram = BTreeMap::new();
        for &l in limits {
            *action_histogram.entry(l.round() as u32).or_insert(0) += 1;
        }
        Ok(Self {
            bitrate_mbps: col(|c| c.avg_bitrate_mbps).ok_or_else(none)?,
            freeze_per_min: col(|c| c.freeze_rate_per_min).ok_or_else(none)?,
            e2e_delay_ms: col(|c| c.e2e_delay_ms).ok_or_else(none)?,
            loss_frac: col(|c| c.loss_frac).ok_or_else(none)?,
            name,
            calls,
            action_histogram,
        })
    }

    /// Share of segments run at `limit_ms` or above.
    pub fn share_at_or_above(&self, limit_ms: u32) -> f64 {
        let total: usize = self.action_histogram.values().sum();
        let above: usize = self.action_histogram.range(limit_ms..).map(|(_, n)| n).sum();
        if total == 0 {
            0.0
        } else {
            above as f64 / total as f64
        }
    }
}

/// Change of an arm's means relative to the baseline (first) arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub arm: String,
    pub baseline: String,
    /// `arm / baseline` mean bitrate.
    pub bitrate_ratio: f64,
    /// Fractional freeze-rate reduction; positive is better.
    pub freeze_reduction: f64,
    /// Fractional delay increase.
    pub delay_increase: f64,
    /// Loss difference in percentage points.
    pub loss_diff_pp: f64,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

impl Delta {
    fn between(arm: &ArmReport, base: &ArmReport) -> Self {
        Self {
            arm: arm.name.clone(),
            baseline: base.name.clone(),
            bitrate_ratio: ratio(arm.bitrate_mbps.mean, base.bitrate_mbps.mean),
            freeze_reduction: 1.0 - ratio(arm.freeze_per_min.mean, base.freeze_per_min.mean),
            delay_increase: ratio(arm.e2e_delay_ms.mean, base.e2e_delay_ms.mean) - 1.0,
            loss_diff_pp: 100.0 * (arm.loss_frac.mean - base.loss_frac.mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn of(values: &[f64], bin_width: f64, max: f64) -> Self {
        let bins = (max / bin_width).ceil().max(1.0) as usize;
        let mut counts = vec![0; bins];
        for &v in values {
            counts[((v / bin_width) as usize).min(bins - 1)] += 1;
        }
        Self { bin_width, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoverStats {
    pub scenario: String,
    pub handovers_per_call: Vec<usize>,
    /// Seconds between consecutive handovers within a call.
    pub inter_handover_s: Vec<f64>,
    pub inter_handover_histogram: Histogram,
}

pub const INTER_HANDOVER_BIN_S: f64 = 30.0;

impl HandoverStats {
    fn from_envs<'a>(scenario: &str, duration: usize, envs: impl Iterator<Item = &'a CallEnv>) -> Self {
        let mut handovers_per_call = Vec::new();
        let mut inter_handover_s = Vec::new();
        for env in envs {
            let hs = env.schedule.handover_seconds();
            handovers_per_call.push(hs.len());
            inter_handover_s.extend(hs.windows(2).map(|w| (w[1] - w[0]) as f64));
        }
        let inter_handover_histogram = Histogram::of(&inter_handover_s, INTER_HANDOVER_BIN_S, duration as f64);
        Self {
            scenario: scenario.to_string(),
            handovers_per_call,
            inter_handover_s,
            inter_handover_histogram,
        }
    }

    /// Calls per handover count, index = count.
    pub fn count_histogram(&self) -> Vec<usize> {
        let max = self.handovers_per_call.iter().copied().max().unwrap_or(0);
        let mut h = vec![0; max + 1];
        for &n in &self.handovers_per_call {
            h[n] += 1;
        }
        h
    }

    /// Fraction of calls with at most `n` handovers.
    pub fn share_at_most(&self, n: usize) -> f64 {
        let k = self.handovers_per_call.iter().filter(|&&c| c <= n).count();
        k as f64 / self.handovers_per_call.len().max(1) as f64
    }
}

/// Handover statistics of the first `n_calls` environments of a scenario.
pub fn handover_stats(cfg: &ScenarioConfig, n_calls: usize) -> Result<HandoverStats, HarnessError> {
    cfg.validate()?;
    let envs: Vec<CallEnv> = (0..n_calls)
        .filter_map(|id| build_call_env(cfg, id).map_err(|e| log::warn!("call {id} skipped: {e}")).ok())
        .collect();
    Ok(HandoverStats::from_envs(&cfg.name, cfg.call_duration_s, envs.iter()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    pub arms: Vec<ArmReport>,
    pub deltas: Vec<Delta>,
    pub skipped_calls: Vec<(usize, String)>,
    pub handovers: HandoverStats,
}

impl EvalReport {
    pub fn arm(&self, name: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.name == name)
    }

    pub fn delta(&self, arm: &str, baseline: &str) -> Option<Delta> {
        Some(Delta::between(self.arm(arm)?, self.arm(baseline)?))
    }
}

/// Runs every arm on the same `n_calls` call environments. A call that fails
/// in any arm is dropped from all arms so the comparison stays paired.
pub fn evaluate(cfg: &ScenarioConfig, arms: &[Arm<'_>], n_calls: usize) -> Result<EvalReport, HarnessError> {
    evaluate_with(cfg, arms, n_calls, &RtcConfig::default())
}

pub fn evaluate_with(
    cfg: &ScenarioConfig,
    arms: &[Arm<'_>],
    n_calls: usize,
    rtc: &RtcConfig,
) -> Result<EvalReport, HarnessError> {
    cfg.validate()?;
    if arms.is_empty() || n_calls == 0 {
        return Err(HarnessError::Config("evaluate needs at least one arm and one call".into()));
    }
    let mut rows: Vec<Vec<CallRow>> = vec![Vec::new(); arms.len()];
    let mut limits: Vec<Vec<f64>> = vec![Vec::new(); arms.len()];
    let mut skipped_calls = Vec::new();
    let mut envs = Vec::new();
    for call_id in 0..n_calls {
        let outcome = build_call_env(cfg, call_id).and_then(|env| {
            let runs = arms
                .iter()
                .map(|arm| {
                    let mut policy = arm.instantiate(&env);
                    run_call_with(&env.trace, &mut *policy, env.rtc_seed, rtc).map_err(HarnessError::from)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((env, runs))
        });
        match outcome {
            Ok((env, runs)) => {
                for (i, (arm, t)) in arms.iter().zip(runs).enumerate() {
                    rows[i].push(CallRow::new(call_id, &cfg.name, &arm.name(), &t.metrics));
                    limits[i].extend(&t.limits_ms);
                }
                envs.push(env);
            }
            Err(e) => {
                log::warn!("call {call_id} skipped: {e}");
                skipped_calls.push((call_id, e.to_string()));
            }
        }
        if (call_id + 1) % 25 == 0 {
            log::info!("{}: evaluated {} / {n_calls} calls", cfg.name, call_id + 1);
        }
    }
    let reports = arms
        .iter()
        .zip(rows)
        .zip(&limits)
        .map(|((arm, r), l)| ArmReport::from_calls(arm.name(), r, l))
        .collect::<Result<Vec<_>, _>>()?;
    let deltas = reports[1..].iter().map(|a| Delta::between(a, &reports[0])).collect();
    Ok(EvalReport {
        scenario: cfg.name.clone(),
        arms: reports,
        deltas,
        skipped_calls,
        handovers: HandoverStats::from_envs(&cfg.name, cfg.call_duration_s, envs.iter()),
    })
}

pub fn summary_text(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario {}: {} paired calls, {} skipped", r.scenario, r.arms[0].calls.len(), r.skipped_calls.len());
    let _ = writeln!(
        s,
        "{:<14} {:>12} {:>12} {:>12} {:>10}  actions",
        "arm", "bitrate Mbps", "freeze /min", "delay ms", "loss %"
    );
    for a in &r.arms {
        let actions: Vec<String> = a.action_histogram.iter().map(|(l, n)| format!("{l}:{n}")).collect();
        let _ = writeln!(
            s,
            "{:<14} {:>12.3} {:>12.3} {:>12.1} {:>10.2}  {}",
            a.name,
            a.bitrate_mbps.mean,
            a.freeze_per_min.mean,
            a.e2e_delay_ms.mean,
            100.0 * a.loss_frac.mean,
            actions.join(" ")
        );
    }
    for d in &r.deltas {
        let _ = writeln!(
            s,
            "{} vs {}: bitrate x{:.3}, freeze {:+.1}% reduction, delay {:+.1}%, loss {:+.2} pp",
            d.arm,
            d.baseline,
            d.bitrate_ratio,
            100.0 * d.freeze_reduction,
            100.0 * d.delay_increase,
            d.loss_diff_pp
        );
    }
    let _ = writeln!(s, "handovers per call: {:?}", r.handovers.count_histogram());
    s
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    scenario: &'a str,
    arm: &'a str,
    metric: &'a str,
    mean: f64,
    median: f64,
    p10: f64,
    p90: f64,
}

#[derive(Serialize)]
struct HistogramRow {
    bin_start_s: f64,
    bin_end_s: f64,
    count: usize,
}

pub fn write_histogram_csv(path: &Path, h: &Histogram) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for (i, &count) in h.counts.iter().enumerate() {
        w.serialize(HistogramRow {
            bin_start_s: i as f64 * h.bin_width,
            bin_end_s: (i + 1) as f64 * h.bin_width,
            count,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `calls.csv`, `summary.csv`, `summary.txt`, `report.json`,
/// `inter_handover.csv` and, when asked, SVG plots into `dir`.
pub fn write_report(r: &EvalReport, dir: &Path, plots: bool) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let calls: Vec<CallRow> = r.arms.iter().flat_map(|a| a.calls.iter().cloned()).collect();
    write_call_rows(fs::File::create(dir.join("calls.csv"))?, &calls)?;
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    for a in &r.arms {
        for (metric, s) in [
            ("avg_bitrate_mbps", a.bitrate_mbps),
            ("freeze_rate_per_min", a.freeze_per_min),
            ("e2e_delay_ms", a.e2e_delay_ms),
            ("loss_frac", a.loss_frac),
        ] {
            w.serialize(SummaryRow {
                scenario: &r.scenario,
                arm: &a.name,
                metric,
                mean: s.mean,
                median: s.median,
                p10: s.p10,
                p90: s.p90,
            })?;
        }
    }
    w.flush()?;
    fs::write(dir.join("summary.txt"), summary_text(r))?;
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(r).map_err(|e| HarnessError::Config(e.to_string()))?,
    )?;
    write_histogram_csv(&dir.join("inter_handover.csv"), &r.handovers.inter_handover_histogram)?;
    if plots {
        let h = &r.handovers.inter_handover_histogram;
        let labels: Vec<String> = (0..h.counts.len()).map(|i| format!("{}", i as f64 * h.bin_width)).collect();
        let values: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();
        fs::write(
            dir.join("inter_handover.svg"),
            bar_chart_svg(&format!("{}: inter-handover time (s)", r.scenario), &labels, &values),
        )?;
        for (metric, pick) in [
            ("avg_bitrate_mbps", (|c: &CallRow| c.avg_bitrate_mbps) as fn(&CallRow) -> f64),
            ("freeze_rate_per_min", |c: &CallRow| c.freeze_rate_per_min),
            ("e2e_delay_ms", |c: &CallRow| c.e2e_delay_ms),
            ("loss_frac", |c: &CallRow| c.loss_frac),
        ] {
            fs::write(dir.join(format!("{metric}.svg")), distribution_svg(metric, r, pick))?;
        }
    }
    Ok(())
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 320.0;
const MARGIN: f64 = 40.0;

pub fn bar_chart_svg(title: &str, labels: &[String], values: &[f64]) -> String {
    let max = values.iter().copied().fold(0.0, f64::max).max(1e-12);
    let n = values.len().max(1) as f64;
    let bw = (SVG_W - 2.0 * MARGIN) / n;
    let mut s = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" font-family="sans-serif" font-size="10">"#
    );
    let _ = write!(s, r#"<text x="{MARGIN}" y="20" font-size="13">{title}</text>"#);
    for (i, (&v, label)) in values.iter().zip(labels).enumerate() {
        let h = (SVG_H - 2.0 * MARGIN) * v / max;
        let x = MARGIN + i as f64 * bw;
        let y = SVG_H - MARGIN - h;
        let _ = write!(
            s,
            r##"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{h:.1}" fill="#4a78b5"/>"##,
            (bw - 2.0).max(1.0)
        );
        let _ = write!(s, r#"<text x="{x:.1}" y="{:.1}">{label}</text>"#, SVG_H - MARGIN + 12.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Per-arm p10-p90 bars with the median and mean marked.
fn distribution_svg(metric: &str, r: &EvalReport, pick: fn(&CallRow) -> f64) -> String {
    let stats: Vec<(String, Summary)> = r
        .arms
        .iter()
        .filter_map(|a| Summary::of(&a.calls.iter().map(pick).collect::<Vec<_>>()).map(|s| (a.name.clone(), s)))
        .collect();
    let max = stats.iter().map(|(_, s)| s.p90.max(s.mean)).fold(0.0, f64::max).max(1e-12);
    let y_of = |v: f64| SVG_H - MARGIN - (SVG_H - 2.0 * MARGIN) * v / max;
    let bw = (SVG_W - 2.0 * MARGIN) / stats.len().max(1) as f64;
    let mut s = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" font-family="sans-serif" font-size="10">"#
    );
    let _ = write!(s, r#"<text x="{MARGIN}" y="20" font-size="13">{}: {metric}</text>"#, r.scenario);
    for (i, (name, st)) in stats.iter().enumerate() {
        let x = MARGIN + i as f64 * bw + bw * 0.25;
        let w = bw * 0.5;
        let _ = write!(
            s,
            r##"<rect x="{x:.1}" y="{:.1}" width="{w:.1}" height="{:.1}" fill="#9bb7dc"/>"##,
            y_of(st.p90),
            (y_of(st.p10) - y_of(st.p90)).max(1.0)
        );
        let _ = write!(
            s,
            r##"<line x1="{x:.1}" x2="{:.1}" y1="{m:.1}" y2="{m:.1}" stroke="#1d3557" stroke-width="2"/>"##,
            x + w,
            m = y_of(st.median)
        );
        let _ = write!(
            s,
            r##"<circle cx="{:.1}" cy="{:.1}" r="3" fill="#e63946"/>"##,
            x + w / 2.0,
            y_of(st.mean)
        );
        let _ = write!(s, r#"<text x="{x:.1}" y="{:.1}">{name}</text>"#, SVG_H - MARGIN + 12.0);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_percentiles() {
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!(s.mean, 3.0);
        assert_eq!(s.median, 3.0);
        assert!((s.p10 - 1.4).abs() < 1e-12);
        assert!((s.p90 - 4.6).abs() < 1e-12);
        assert!(Summary::of(&[]).is_none());
    }

    #[test]
    fn histogram_bins_and_overflow() {
        let h = Histogram::of(&[0.0, 29.9, 30.0, 1000.0], 30.0, 120.0);
        assert_eq!(h.counts, vec![2, 1, 0, 1]);
    }

    #[test]
    fn identical_arms_have_zero_deltas() {
        let cfg = ScenarioConfig {
            call_duration_s: 240,
            ..ScenarioConfig::ideal()
        };
        let r = evaluate(&cfg, &[Arm::Fixed(900.0), Arm::Fixed(900.0)], 2).unwrap();
        let d = &r.deltas[0];
        assert_eq!(d.bitrate_ratio, 1.0);
        assert_eq!(d.freeze_reduction, 0.0);
        assert_eq!(d.delay_increase, 0.0);
        assert_eq!(d.loss_diff_pp, 0.0);
        assert_eq!(r.arms[0].action_histogram.get(&900), Some(&4));
        assert!(summary_text(&r).contains("fixed-900"));
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let svg = bar_chart_svg("t", &["0".into(), "30".into()], &[1.0, 2.0]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect").count(), 2);
    }
}

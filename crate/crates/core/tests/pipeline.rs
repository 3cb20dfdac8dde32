//! Library and CLI pipeline: collect, cluster, train, evaluate.

use std::path::Path;
use std::process::Command;

use leo_rtc::harness::{collect, read_dataset, ScenarioConfig, RANDOM_POLICY_LIMITS_MS};

fn short(base: ScenarioConfig) -> ScenarioConfig {
    ScenarioConfig {
        call_duration_s: 120,
        ..base
    }
}

#[test]
fn random_policy_covers_the_grid_uniformly() {
    let c = collect(&[short(ScenarioConfig::ideal())], 2000).unwrap();
    assert!(c.skipped_calls.is_empty());
    let k = RANDOM_POLICY_LIMITS_MS.len();
    let mut counts = vec![0usize; k];
    for r in &c.rows {
        let i = RANDOM_POLICY_LIMITS_MS.iter().position(|&l| l == r.action_queue_ms).expect("limit off the grid");
        counts[i] += 1;
    }
    let expected = c.rows.len() as f64 / k as f64;
    let chi2: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    // 14 degrees of freedom, 0.1% upper tail
    assert!(chi2 < 36.12, "chi2 {chi2:.1} for {counts:?}");
}

fn cli(out: &Path, config: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_leo-rtc"))
        .arg("--out")
        .arg(out)
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .unwrap()
}

fn ok(o: std::process::Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

const SMOKE_CONFIG: &str = r#"
collect_calls = 20
eval_calls = 4

[model]
d_model = 8
heads = 2
layers = 1
ff_dim = 16
embed_hidden = 8

[train]
epochs = 2
batch_size = 32
folds = 2

[[scenarios]]
name = "ideal"
call_duration_s = 120
seed = 1

[[scenarios]]
name = "dynamic"
call_duration_s = 120
seed = 2
[scenarios.constellation]
planes = 10
sats_per_plane = 10
[scenarios.random_maneuvers]
fraction = 1.0
"#;

#[test]
fn cli_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("pipeline.toml");
    std::fs::write(&config, SMOKE_CONFIG).unwrap();
    let out = dir.path().join("out");

    ok(cli(&out, &config, &["collect"]));
    let rows = read_dataset(std::fs::File::open(out.join("dataset.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 20);
    let first = std::fs::read(out.join("dataset.csv")).unwrap();
    ok(cli(&out, &config, &["collect"]));
    assert_eq!(first, std::fs::read(out.join("dataset.csv")).unwrap(), "collect is not deterministic");

    let clusters = ok(cli(&out, &config, &["cluster"]));
    assert!(clusters.contains("ms"), "{clusters}");
    assert!(out.join("expert/manifest.json").exists() && out.join("normalization.json").exists());

    let trained = ok(cli(&out, &config, &["train"]));
    assert!(trained.contains("CV accuracy"), "{trained}");
    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert!(log.lines().count() > 1);

    let summary = ok(cli(&out, &config, &["evaluate", "--plots"]));
    assert!(summary.contains("learned"), "{summary}");
    for scenario in ["ideal", "dynamic"] {
        let calls = std::fs::read_to_string(out.join("eval").join(scenario).join("calls.csv")).unwrap();
        assert_eq!(calls.lines().count(), 1 + 3 * 4);
        assert!(out.join("eval").join(scenario).join("report.json").exists());
    }

    ok(cli(&out, &config, &["stats", "--calls", "4"]));
    assert!(out.join("stats/dynamic_inter_handover.csv").exists());

    ok(cli(&out, &config, &["simulate", "--scenario", "dynamic", "--limit", "600"]));
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 120);
}

#[test]
fn cluster_rejects_malformed_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("pipeline.toml");
    std::fs::write(&config, SMOKE_CONFIG).unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "call_id,segment_index,bitrate\n0,0,3.1\n").unwrap();
    let o = cli(dir.path(), &config, &["cluster", "--dataset", bad.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("missing columns") && err.contains("action_queue_ms"), "{err}");
}

#[test]
fn unknown_scenario_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("pipeline.toml");
    std::fs::write(&config, SMOKE_CONFIG).unwrap();
    let o = cli(dir.path(), &config, &["simulate", "--scenario", "lunar"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("lunar"));
}

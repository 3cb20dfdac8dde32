use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use leo_rtc::harness::{
    bar_chart_svg, build_call_env, build_expert_from_rows, collect, evaluate, handover_stats, label_rows,
    read_dataset, summary_text, write_dataset, write_histogram_csv, write_report, Arm, HarnessError, PipelineConfig,
    ScenarioConfig,
};
use leo_rtc::policy::{load_expert, load_weights, save_expert, save_weights, train, write_train_log};
use leo_rtc::rtc::{run_call_with, write_call_rows, CallRow, FixedQueuePolicy, RtcConfig};

#[derive(Parser)]
#[command(name = "leo-rtc", version, about = "Handover-aware pacing queue policy for video calls over LEO links")]
struct Cli {
    /// Pipeline config (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one call and dump its trace and metrics.
    Simulate {
        #[arg(long, default_value = "ideal")]
        scenario: String,
        #[arg(long, default_value_t = 0)]
        call_id: usize,
        /// Fixed pacer queue limit in ms.
        #[arg(long, default_value_t = 2000.0)]
        limit: f64,
    },
    /// Run calls under the random queue policy and write the segment dataset.
    Collect {
        #[arg(long)]
        calls: Option<usize>,
    },
    /// Cluster a dataset and persist the expert table.
    Cluster {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train the imitation policy on expert labels.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        expert: Option<PathBuf>,
    },
    /// Paired A/B of the trained policy against fixed limits.
    Evaluate {
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        calls: Option<usize>,
        /// Also write SVG plots.
        #[arg(long)]
        plots: bool,
    },
    /// Handover count and inter-handover time distributions.
    Stats {
        #[arg(long, default_value_t = 100)]
        calls: usize,
    },
}

fn scenario<'a>(cfg: &'a PipelineConfig, name: &str) -> Result<&'a ScenarioConfig, HarnessError> {
    cfg.scenarios
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| HarnessError::Config(format!("no scenario named {name:?}")))
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.reseed(seed);
    }
    let out = &cli.out;
    fs::create_dir_all(out)?;
    let or_out = |p: &Option<PathBuf>, default: &str| p.clone().unwrap_or_else(|| out.join(default));

    match &cli.command {
        Command::Simulate {
            scenario: name,
            call_id,
            limit,
        } => {
            let env = build_call_env(scenario(&cfg, name)?, *call_id)?;
            env.trace.write_csv(fs::File::create(out.join("trace.csv"))?)?;
            let t = run_call_with(&env.trace, &mut FixedQueuePolicy(*limit), env.rtc_seed, &RtcConfig::default())?;
            let mut w = csv::Writer::from_path(out.join("per_second.csv"))?;
            for s in &t.per_second {
                w.serialize(s)?;
            }
            w.flush()?;
            let row = CallRow::new(*call_id, name, &format!("fixed-{limit}"), &t.metrics);
            write_call_rows(fs::File::create(out.join("calls.csv"))?, std::slice::from_ref(&row))?;
            println!(
                "{} -> {}: {} handovers, bitrate {:.3} Mbps, freeze {:.3}/min, delay {:.1} ms, loss {:.2}%",
                env.src.name,
                env.dst.name,
                env.schedule.handover_count(),
                row.avg_bitrate_mbps,
                row.freeze_rate_per_min,
                row.e2e_delay_ms,
                100.0 * row.loss_frac
            );
        }
        Command::Collect { calls } => {
            let n = calls.unwrap_or(cfg.collect_calls);
            let c = collect(&cfg.scenarios, n)?;
            let path = out.join("dataset.csv");
            write_dataset(fs::File::create(&path)?, &c.rows)?;
            println!(
                "{} segments from {} calls ({} skipped) -> {}",
                c.rows.len(),
                n - c.skipped_calls.len(),
                c.skipped_calls.len(),
                path.display()
            );
        }
        Command::Cluster { dataset } => {
            let rows = read_dataset(open(&or_out(dataset, "dataset.csv"))?)?;
            let b = build_expert_from_rows(&rows, cfg.qoe, cfg.clusters, cfg.cluster_seed)?;
            save_expert(&b.table, &out.join("expert"))?;
            fs::write(
                out.join("normalization.json"),
                serde_json::to_string_pretty(&b.normalization).map_err(|e| HarnessError::Config(e.to_string()))?,
            )?;
            println!("k = {} clusters (z-scored total, frequency) -> limit", b.k);
            for (c, a) in b.table.centroids.iter().zip(&b.table.labels) {
                let raw = [
                    c[0] * b.table.scaling[0].std + b.table.scaling[0].mean,
                    c[1] * b.table.scaling[1].std + b.table.scaling[1].mean,
                ];
                println!("  total {:.2}, {:.2}/min -> {} ms", raw[0], raw[1], a.queue_limit_ms());
            }
        }
        Command::Train { dataset, expert } => {
            let rows = read_dataset(open(&or_out(dataset, "dataset.csv"))?)?;
            let table = load_expert(&or_out(expert, "expert"))?;
            let labeled = label_rows(&rows, &table);
            let outcome = train(&labeled, &cfg.model, &cfg.train)?;
            save_weights(&outcome.weights, &out.join("weights"))?;
            write_train_log(&out.join("train_log.csv"), &outcome.log)?;
            match outcome.mean_cv_accuracy() {
                Some(a) => println!("trained on {} segments; mean CV accuracy {a:.3}", labeled.len()),
                None => println!("trained on {} segments", labeled.len()),
            }
        }
        Command::Evaluate { weights, calls, plots } => {
            let w = load_weights(&or_out(weights, "weights"))?;
            let n = calls.unwrap_or(cfg.eval_calls);
            for s in &cfg.scenarios {
                let report = evaluate(s, &[Arm::Fixed(2000.0), Arm::Learned(&w), Arm::Fixed(500.0)], n)?;
                write_report(&report, &out.join("eval").join(&s.name), *plots)?;
                print!("{}", summary_text(&report));
            }
        }
        Command::Stats { calls } => {
            let dir = out.join("stats");
            fs::create_dir_all(&dir)?;
            for s in &cfg.scenarios {
                let st = handover_stats(s, *calls)?;
                write_histogram_csv(&dir.join(format!("{}_inter_handover.csv", s.name)), &st.inter_handover_histogram)?;
                let h = &st.inter_handover_histogram;
                let labels: Vec<String> = (0..h.counts.len()).map(|i| format!("{}", i as f64 * h.bin_width)).collect();
                let values: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();
                fs::write(
                    dir.join(format!("{}_inter_handover.svg", s.name)),
                    bar_chart_svg(&format!("{}: inter-handover time (s)", s.name), &labels, &values),
                )?;
                write_counts(&dir.join(format!("{}_handovers_per_call.csv", s.name)), &st.count_histogram())?;
                println!(
                    "{}: handovers per call {:?}, {:.0}% of calls with at most 1, {} inter-handover gaps",
                    s.name,
                    st.count_histogram(),
                    100.0 * st.share_at_most(1),
                    st.inter_handover_s.len()
                );
            }
        }
    }
    Ok(())
}

fn open(path: &Path) -> Result<fs::File, HarnessError> {
    fs::File::open(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn write_counts(path: &Path, counts: &[usize]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["handovers", "calls"])?;
    for (n, c) in counts.iter().enumerate() {
        w.write_record([n.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

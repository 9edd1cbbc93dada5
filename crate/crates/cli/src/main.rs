use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use afr_core::a3c::{train, BetaSchedule, TrainConfig};
use afr_core::env::throughput_benchmark;
use afr_core::features::{
    extract_trace, load_frame_dir, pearson, ssim, synthetic_frame_pairs, y_diff,
};
use afr_core::nn::load_checkpoint;
use afr_core::reward::{chunk_reward, episode_reward, greedy_oracle, QoEProfile};
use afr_core::service::{
    default_evso_thresholds, evaluate_with, evso_baseline, naive_baseline, score_schedule, serve,
    EvalOptions, PolicyStore,
};
use afr_core::trace::{
    generate_synthetic_with, load_dataset, load_trace, save_trace, MotionProfile, SynthOptions,
};

#[derive(Parser)]
#[command(name = "afr", version, about = "Adaptive frame-rate selection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create and check chunk traces
    #[command(subcommand)]
    Trace(TraceCmd),
    /// Frame-difference features
    #[command(subcommand)]
    Features(FeaturesCmd),
    /// Score a schedule under a QoE profile
    #[command(subcommand)]
    Reward(RewardCmd),
    /// Simulator utilities
    #[command(subcommand)]
    Sim(SimCmd),
    /// Train an actor-critic policy
    Train(TrainArgs),
    /// Serve trained policies over HTTP
    Serve(ServeArgs),
    /// Compare the model against the oracle and baselines
    Eval(EvalArgs),
    /// Run a baseline policy on one trace
    Baseline(BaselineArgs),
}

#[derive(Subcommand)]
enum TraceCmd {
    /// Generate one synthetic trace
    Synth {
        /// static, dynamic, hybrid or hybrid:N
        #[arg(long, default_value = "dynamic")]
        profile: MotionProfile,
        #[arg(long, default_value_t = 30)]
        chunks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 60)]
        fps: u32,
        #[arg(long, default_value_t = 5)]
        levels: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a directory of synthetic traces cycling static/dynamic/hybrid
    Dataset {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 30)]
        chunks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate trace files
    Validate { files: Vec<PathBuf> },
}

#[derive(Subcommand)]
enum FeaturesCmd {
    /// Build a trace from a directory of PGM frames
    Extract {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long, default_value_t = 60)]
        fps: u32,
        #[arg(long, default_value_t = 2.0)]
        chunk_seconds: f64,
        #[arg(long, default_value_t = 5)]
        levels: usize,
        #[arg(long, default_value = "video")]
        video_id: String,
        #[arg(long, default_value = "unknown")]
        category: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Y-diff vs SSIM correlation over seeded synthetic frame pairs
    Correlate {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        pairs: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Write per-pair values as CSV
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum RewardCmd {
    /// Per-chunk reward breakdown for a schedule (or the oracle schedule)
    Eval {
        #[arg(long)]
        trace: PathBuf,
        /// Preset name or path to a profile JSON
        #[arg(long, default_value = "qoe_q")]
        profile: String,
        /// Comma-separated 1-based levels; omit for the greedy oracle
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<usize>>,
    },
}

#[derive(Subcommand)]
enum SimCmd {
    /// Random-policy stepping rate
    Bench {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        seconds: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "qoe_q")]
    profile: String,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    alpha_prime: Option<f64>,
    #[arg(long)]
    beta_start: Option<f64>,
    #[arg(long)]
    beta_end: Option<f64>,
    #[arg(long)]
    beta_decay_iters: Option<u64>,
    #[arg(long)]
    rollout_len: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    checkpoint_every: u64,
}

#[derive(Args)]
struct ServeArgs {
    /// Checkpoint file; repeat to serve several QoE profiles
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "qoe_q")]
    profile: String,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated threshold-baseline cut points (default: dataset quantiles)
    #[arg(long, value_delimiter = ',')]
    evso_thresholds: Option<Vec<f64>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Evso,
    Naive,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    kind: BaselineKind,
    /// naive: fps fraction in (0, 1]; evso: comma-separated cut points or "auto"
    #[arg(long)]
    arg: String,
    #[arg(long)]
    trace: PathBuf,
    /// Dataset for "auto" thresholds (defaults to the trace itself)
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "qoe_q")]
    profile: String,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Trace(cmd) => trace_cmd(cmd),
        Command::Features(cmd) => features_cmd(cmd),
        Command::Reward(RewardCmd::Eval {
            trace,
            profile,
            levels,
        }) => reward_eval(&trace, &profile, levels),
        Command::Sim(SimCmd::Bench {
            dataset,
            seconds,
            seed,
        }) => {
            let data = load_dataset(&dataset)?;
            let report = throughput_benchmark(&data, Duration::from_secs_f64(seconds), seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Train(args) => train_cmd(args),
        Command::Serve(args) => serve_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::Baseline(args) => baseline_cmd(args),
    }
}

fn trace_cmd(cmd: TraceCmd) -> Result<()> {
    match cmd {
        TraceCmd::Synth {
            profile,
            chunks,
            seed,
            fps,
            levels,
            out,
        } => {
            let opts = SynthOptions {
                original_fps: fps,
                levels,
                ..SynthOptions::default()
            };
            let trace = generate_synthetic_with(&opts, profile, chunks, seed)?;
            save_trace(&trace, &out)?;
            log::info!("wrote {} ({} chunks)", out.display(), trace.n_chunks());
        }
        TraceCmd::Dataset {
            count,
            chunks,
            seed,
            out,
        } => {
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let profiles = [
                MotionProfile::Static,
                MotionProfile::Dynamic,
                MotionProfile::Hybrid { switch_period: 3 },
            ];
            for i in 0..count {
                let trace = generate_synthetic_with(
                    &SynthOptions::default(),
                    profiles[i % profiles.len()],
                    chunks,
                    seed + i as u64,
                )?;
                save_trace(
                    &trace,
                    out.join(format!("{i:04}_{}.json", trace.category_tag)),
                )?;
            }
            log::info!("wrote {count} traces to {}", out.display());
        }
        TraceCmd::Validate { files } => {
            let mut failed = 0;
            for f in &files {
                match load_trace(f).and_then(|t| t.validate()) {
                    Ok(()) => println!("ok   {}", f.display()),
                    Err(e) => {
                        failed += 1;
                        println!("FAIL {}: {e}", f.display());
                    }
                }
            }
            if failed > 0 {
                bail!("{failed} of {} traces invalid", files.len());
            }
        }
    }
    Ok(())
}

fn features_cmd(cmd: FeaturesCmd) -> Result<()> {
    match cmd {
        FeaturesCmd::Extract {
            frames,
            fps,
            chunk_seconds,
            levels,
            video_id,
            category,
            out,
        } => {
            let frames = load_frame_dir(&frames)?;
            let trace = extract_trace(&frames, fps, chunk_seconds, levels, &video_id, &category)?;
            save_trace(&trace, &out)?;
            log::info!("wrote {} ({} chunks)", out.display(), trace.n_chunks());
        }
        FeaturesCmd::Correlate {
            seed,
            pairs,
            size,
            out,
        } => {
            let mut diffs = Vec::with_capacity(pairs);
            let mut ssims = Vec::with_capacity(pairs);
            for (a, b) in synthetic_frame_pairs(seed, pairs, size) {
                diffs.push(y_diff(&a, &b)?);
                ssims.push(ssim(&a, &b)?);
            }
            if let Some(path) = out {
                let mut csv = String::from("pair,y_diff,ssim\n");
                for (i, (d, s)) in diffs.iter().zip(&ssims).enumerate() {
                    csv.push_str(&format!("{i},{d},{s}\n"));
                }
                fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
            }
            let r = pearson(&diffs, &ssims)?;
            println!("{}", json!({ "pairs": pairs, "seed": seed, "pearson": r }));
        }
    }
    Ok(())
}

fn reward_eval(trace: &Path, profile: &str, levels: Option<Vec<usize>>) -> Result<()> {
    let trace = load_trace(trace)?;
    let profile = QoEProfile::resolve(profile)?;
    let levels = match levels {
        Some(l) => l,
        None => greedy_oracle(&trace, &profile)?,
    };
    if levels.len() != trace.n_chunks() {
        bail!(
            "{} levels given for {} chunks",
            levels.len(),
            trace.n_chunks()
        );
    }
    let ladder = trace.ladder()?;
    let chunks = trace
        .chunks
        .iter()
        .zip(&levels)
        .map(|(c, &l)| chunk_reward(c, l, &profile, &ladder))
        .collect::<afr_core::Result<Vec<_>>>()?;
    let total = episode_reward(&trace, &levels, &profile)?;
    let out = json!({
        "profile": profile.name,
        "levels": levels,
        "total": total,
        "chunks": chunks,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let data = load_dataset(&args.dataset)?;
    let profile = QoEProfile::resolve(&args.profile)?;
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        gamma: args.gamma.unwrap_or(defaults.gamma),
        alpha: args.alpha.unwrap_or(defaults.alpha),
        alpha_prime: args.alpha_prime.unwrap_or(defaults.alpha_prime),
        beta: BetaSchedule {
            start: args.beta_start.unwrap_or(defaults.beta.start),
            end: args.beta_end.unwrap_or(defaults.beta.end),
            decay_iters: args.beta_decay_iters.unwrap_or(defaults.beta.decay_iters),
        },
        n_workers: args.workers.unwrap_or(defaults.n_workers),
        rollout_len: args.rollout_len.unwrap_or(defaults.rollout_len),
        max_iterations: args.iters.unwrap_or(defaults.max_iterations),
        seed: args.seed.unwrap_or(defaults.seed),
        checkpoint_every: args.checkpoint_every,
        ..defaults
    };
    log::info!(
        "training {} on {} traces for {} iterations with {} workers",
        profile.name,
        data.len(),
        config.max_iterations,
        config.n_workers
    );
    let outcome = train(&data, &profile, &config, Some(&args.out))?;
    let last = outcome.metrics.last();
    println!(
        "{}",
        json!({
            "checkpoint": args.out.join("final.afr"),
            "iterations": outcome.metrics.len(),
            "final_mean_reward": last.map(|m| m.mean_reward),
            "final_mean_entropy": last.map(|m| m.mean_entropy),
        })
    );
    Ok(())
}

fn serve_cmd(args: ServeArgs) -> Result<()> {
    let mut checkpoints = Vec::new();
    for path in &args.checkpoint {
        let c = load_checkpoint(path)?;
        log::info!("loaded {} for profile {}", path.display(), c.profile_name);
        checkpoints.push(c);
    }
    let store = PolicyStore::new(checkpoints);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(serve(store, &args.bind))?;
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let data = load_dataset(&args.dataset)?;
    let profile = QoEProfile::resolve(&args.profile)?;
    let options = EvalOptions {
        evso_thresholds: args.evso_thresholds,
    };
    let report = evaluate_with(&ckpt, &data, &profile, &options)?;
    print!("{}", report.table());
    println!(
        "oracle agreement: {:.1}%",
        100.0 * report.oracle_agreement()
    );
    if let Some(out) = args.out {
        report.write_csv(&out)?;
        log::info!("wrote {}", out.display());
    }
    Ok(())
}

fn baseline_cmd(args: BaselineArgs) -> Result<()> {
    let trace = load_trace(&args.trace)?;
    let profile = QoEProfile::resolve(&args.profile)?;
    let levels = match args.kind {
        BaselineKind::Naive => {
            let fraction: f64 = args.arg.parse().context("naive fraction")?;
            naive_baseline(&trace, fraction)?
        }
        BaselineKind::Evso => {
            let thresholds = if args.arg == "auto" {
                let pool = match &args.dataset {
                    Some(dir) => load_dataset(dir)?,
                    None => vec![trace.clone()],
                };
                default_evso_thresholds(&pool, trace.levels())?
            } else {
                args.arg
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .context("threshold list")?
            };
            evso_baseline(&trace, &thresholds)?
        }
    };
    let score = score_schedule(&trace, &levels, &profile)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({ "levels": levels, "score": score }))?
    );
    Ok(())
}

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use telesync_core::Variant;
use telesync_harness::{bench, campaign, trajectories, variance, ExperimentConfig};

#[derive(Parser)]
#[command(name = "telesync", version, about = "Delay-corrected teleoperation experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train every configured (variant, delay, seed) and write logs, checkpoints and a summary.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        /// Parallel training runs.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Time SBSP, ABSP, A-SAC and SAC training at the bench delays.
    Bench {
        #[arg(long)]
        config: PathBuf,
    },
    /// Roll out a checkpoint and dump per-step trajectories.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to `<checkpoint>.trajectories.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Held-out ensemble variance during early model training.
    Variance {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5_000)]
        steps: u64,
        #[arg(long, default_value_t = 10)]
        every: usize,
    },
    /// Run the live teleoperation server.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
    },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path)
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Train {
            config,
            variant,
            seed,
            steps,
            jobs,
        } => {
            let mut cfg = load(&config)?;
            if let Some(v) = variant {
                cfg.variants = vec![v];
            }
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(n) = steps {
                cfg.total_env_steps = n;
            }
            let summary = campaign::run_campaign(&cfg, jobs.unwrap_or_else(campaign::default_workers))?;
            for e in &summary.entries {
                println!(
                    "{:<6} {:<10} final mean reward {:.4} +/- {:.4} (median {:.4}, seeds {:?})",
                    e.variant.label(),
                    e.delay_label,
                    e.mean,
                    e.std,
                    e.median,
                    e.seeds
                );
            }
            println!("wrote {}", campaign::summary_path(&cfg.output_dir()).display());
        }
        Cmd::Bench { config } => {
            let cfg = load(&config)?;
            let rows = bench::bench_prediction_methods(&cfg, |r| {
                println!(
                    "{:<6} {:>4} ms run {}: wall {:.2} s, model {:.3} s, calls {} (law {})",
                    r.method,
                    r.action_delay_ms,
                    r.run,
                    r.wallclock_ns as f64 * 1e-9,
                    r.model_ns as f64 * 1e-9,
                    r.ensemble_calls,
                    if r.law_holds() { "ok" } else { "VIOLATED" }
                )
            })?;
            let out = cfg.output_dir();
            bench::write_outputs(&out, &rows)?;
            println!("wrote {}", out.join("bench.csv").display());
        }
        Cmd::Eval {
            checkpoint,
            episodes,
            seed,
            out,
        } => {
            let out = out.unwrap_or_else(|| checkpoint.with_extension("trajectories.csv"));
            let report = trajectories::dump_trajectories(&checkpoint, episodes, seed, &out)?;
            for ep in &report.episodes {
                println!("episode {:>3}: mean reward {:.4}", ep.index, ep.mean_reward);
            }
            println!(
                "best episode {} ; mean tracking error {:.4} m ; wrote {}",
                report.best,
                report.mean_tracking_error(),
                out.display()
            );
        }
        Cmd::Variance { config, steps, every } => {
            let cfg = load(&config)?;
            let out = cfg.output_dir();
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for &seed in &cfg.seeds {
                let pts = variance::variance_trace(&cfg.sim, &cfg.model, seed, steps, every)?;
                let path = out.join(format!("variance_seed{seed}.csv"));
                variance::write_trace(&path, &pts)?;
                let (first, last) = (pts[0], pts[pts.len() - 1]);
                println!(
                    "seed {seed}: variance {:.3e} -> {:.3e} after {} env steps ; wrote {}",
                    first.variance,
                    last.variance,
                    last.env_step,
                    path.display()
                );
            }
        }
        Cmd::Serve { config, port } => {
            let cfg = match config {
                Some(p) => load(&p)?,
                None => ExperimentConfig::default(),
            };
            let port = port.unwrap_or(cfg.serve.port);
            let addr = format!("{}:{port}", cfg.serve.host);
            let service = telesync_teleop::ServiceConfig {
                sim: cfg.sim.clone(),
                ..telesync_teleop::ServiceConfig::default()
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&addr)
                    .await
                    .with_context(|| format!("binding {addr}"))?;
                println!("listening on ws://{}/ws", listener.local_addr()?);
                telesync_teleop::serve(listener, service).await?;
                Ok::<_, anyhow::Error>(())
            })?;
        }
    }
    Ok(())
}

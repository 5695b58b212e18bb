//! `entroprune` — classify images through a ViT with entropy-guided token
//! pruning, export entropy heatmaps, sweep criteria and keep rates, and
//! report FLOPs/throughput.
//!
//! Every analysis command is a client of the HTTP service. With `--server`
//! (or `ENTROPRUNE_SERVER`) it talks to a running instance; otherwise an
//! ephemeral in-process server is started on loopback for the duration of
//! the command.

mod commands;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "entroprune", version, about)]
struct Cli {
    /// Service URL, e.g. http://127.0.0.1:8321. When absent an embedded
    /// server is started for this invocation.
    #[arg(long, global = true, env = "ENTROPRUNE_SERVER")]
    server: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ScheduleArgs {
    /// Model archive path (server-side).
    #[arg(long)]
    archive: String,

    /// Model config JSON; DeiT-S geometry when omitted.
    #[arg(long)]
    config: Option<String>,

    /// Keep rate r in (0, 1]; 1.0 disables pruning.
    #[arg(long, default_value_t = 1.0)]
    keep_rate: f64,

    /// Comma-separated 1-indexed pruning blocks.
    #[arg(long, default_value = "4,7,10", value_delimiter = ',')]
    blocks: Vec<usize>,

    /// Importance criterion: shannon | renyi | evit | random.
    #[arg(long, default_value = "shannon")]
    criterion: String,

    /// Rényi order (required with --criterion renyi).
    #[arg(long)]
    alpha: Option<f64>,

    /// Seed for the random criterion and other seeded draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Score with the class column included in the distribution (ablation).
    #[arg(long, default_value_t = false)]
    include_class: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8321")]
        addr: String,
    },

    /// Classify images; one JSON record per image.
    Classify {
        #[command(flatten)]
        schedule: ScheduleArgs,

        /// Classes reported per image.
        #[arg(long, default_value_t = 5)]
        top_k: usize,

        /// Worker threads for image processing.
        #[arg(long, default_value_t = 1)]
        threads: usize,

        /// Write JSON lines here instead of stdout.
        #[arg(long)]
        out: Option<String>,

        /// Also write one pruning-trace JSON per image into this directory
        /// (per-block scores, kept and dropped patch ids).
        #[arg(long)]
        trace_dir: Option<String>,

        /// Input images (PGM/PPM/raw-f32).
        #[arg(required = true)]
        images: Vec<String>,
    },

    /// Export per-patch entropy heatmaps (PGM + JSON sidecar) for one block.
    EntropyMap {
        #[command(flatten)]
        schedule: ScheduleArgs,

        /// 1-indexed block to visualize.
        #[arg(long)]
        block: usize,

        /// Output directory for .pgm/.json pairs.
        #[arg(long)]
        out_dir: String,

        #[arg(required = true)]
        images: Vec<String>,
    },

    /// Compare criteria across keep rates: FLOPs, reduction, dense-agreement,
    /// kept-set overlap.
    Sweep {
        #[command(flatten)]
        schedule: ScheduleArgs,

        /// Comma-separated keep rates; default 0.9..0.3.
        #[arg(long, value_delimiter = ',')]
        keep_rates: Option<Vec<f64>>,

        /// Comma-separated criteria; `renyi:A` sets the order,
        /// e.g. "shannon,renyi:2,renyi:5,renyi:10".
        #[arg(long, value_delimiter = ',')]
        criteria: Option<Vec<String>>,

        #[arg(long, default_value_t = 1)]
        threads: usize,

        /// Emit JSON lines instead of the text table.
        #[arg(long, default_value_t = false)]
        json: bool,

        images: Vec<String>,
    },

    /// Analytic FLOPs report for a config and schedule (no archive needed).
    Flops {
        /// Model config JSON; DeiT-S geometry when omitted.
        #[arg(long)]
        config: Option<String>,

        #[arg(long, default_value_t = 1.0)]
        keep_rate: f64,

        #[arg(long, default_value = "4,7,10", value_delimiter = ',')]
        blocks: Vec<usize>,

        #[arg(long, default_value_t = false)]
        json: bool,
    },

    /// Measure dense vs pruned throughput on synthetic images.
    Benchmark {
        /// Archive path; a seeded random archive is generated when omitted.
        #[arg(long)]
        archive: Option<String>,

        #[arg(long)]
        config: Option<String>,

        #[arg(long, default_value = "0.9,0.7,0.5,0.3", value_delimiter = ',')]
        keep_rates: Vec<f64>,

        #[arg(long, default_value = "4,7,10", value_delimiter = ',')]
        blocks: Vec<usize>,

        #[arg(long, default_value = "shannon")]
        criterion: String,

        #[arg(long)]
        alpha: Option<f64>,

        #[arg(long, default_value_t = 2)]
        n_images: usize,

        #[arg(long, default_value_t = 1)]
        n_warmup: usize,

        /// Timed batches per schedule; the median is reported.
        #[arg(long, default_value_t = 3)]
        repeats: usize,

        #[arg(long, default_value_t = 1)]
        threads: usize,

        #[arg(long, default_value_t = 0)]
        seed: u64,

        #[arg(long, default_value_t = false)]
        json: bool,
    },

    /// Write a seeded random weight archive for a config (local tooling).
    GenArchive {
        #[arg(long)]
        config: Option<String>,

        #[arg(long, default_value_t = 0)]
        seed: u64,

        #[arg(long)]
        out: String,
    },

    /// Write a synthetic test image (local tooling). Format follows the
    /// extension: .pgm (1 channel), .ppm (3 channels), otherwise raw f32.
    GenImage {
        /// Image side length in pixels.
        #[arg(long, default_value_t = 224)]
        size: usize,

        #[arg(long, default_value_t = 3)]
        channels: usize,

        /// constant | noise | square
        #[arg(long, default_value = "noise")]
        pattern: String,

        #[arg(long, default_value_t = 0)]
        seed: u64,

        #[arg(long)]
        out: String,
    },
}

fn main() -> std::process::ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_env("ENTROPRUNE_LOG").unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::ExitCode::from(commands::exit_code_for(&err))
        }
    }
}

#[tokio::main]
async fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Serve { addr } => commands::serve(&addr).await,
        Command::Classify {
            schedule,
            top_k,
            threads,
            out,
            trace_dir,
            images,
        } => {
            let client = commands::connect(cli.server).await?;
            commands::classify(&client, schedule, top_k, threads, out, trace_dir, images).await
        }
        Command::EntropyMap {
            schedule,
            block,
            out_dir,
            images,
        } => {
            let client = commands::connect(cli.server).await?;
            commands::entropy_map(&client, schedule, block, &out_dir, images).await
        }
        Command::Sweep {
            schedule,
            keep_rates,
            criteria,
            threads,
            json,
            images,
        } => {
            let client = commands::connect(cli.server).await?;
            commands::sweep(&client, schedule, keep_rates, criteria, threads, json, images).await
        }
        Command::Flops {
            config,
            keep_rate,
            blocks,
            json,
        } => {
            let client = commands::connect(cli.server).await?;
            commands::flops(&client, config, keep_rate, blocks, json).await
        }
        Command::Benchmark {
            archive,
            config,
            keep_rates,
            blocks,
            criterion,
            alpha,
            n_images,
            n_warmup,
            repeats,
            threads,
            seed,
            json,
        } => {
            let client = commands::connect(cli.server).await?;
            commands::benchmark(
                &client,
                commands::BenchArgs {
                    archive,
                    config,
                    keep_rates,
                    blocks,
                    criterion,
                    alpha,
                    n_images,
                    n_warmup,
                    repeats,
                    threads,
                    seed,
                    json,
                },
            )
            .await
        }
        Command::GenArchive { config, seed, out } => commands::gen_archive(config, seed, &out),
        Command::GenImage {
            size,
            channels,
            pattern,
            seed,
            out,
        } => commands::gen_image(size, channels, &pattern, seed, &out),
    }
}

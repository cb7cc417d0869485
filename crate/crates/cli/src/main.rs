use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mapreader::harness::{self, EvalConfig, EvalStats, PolicyKind};
use mapreader::maze::{read_maze, read_maze_set, MazeSpec};
use mapreader::training::{self, load_run, PerceptionMode, TrainConfig};

#[derive(Parser)]
#[command(name = "mapreader", version, about = "Map-reading maze navigation agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a maze test set as <out>/<size>/<index>.maze.
    GenMazes {
        #[arg(long, value_delimiter = ',', default_value = "5,7,9,11,13,15,17,19,21")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a TOML config (or a preset) and write checkpoint and metrics to <out>.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint; its stored config is used.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint, one episode per maze.
    Eval {
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Evaluate with ground truth substituted for some module outputs.
    OracleEval {
        #[arg(long, value_enum)]
        mode: OracleMode,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Export a per-step JSON-lines trace of one episode.
    Trace {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A .maze file.
        #[arg(long)]
        maze: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        greedy: bool,
        #[arg(long, value_enum, default_value_t = OracleMode::None)]
        mode: OracleMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gradient checks, planner-vs-BFS and the oracle localization probe.
    Selfcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Maze-set directory written by gen-mazes.
    #[arg(long)]
    mazes: PathBuf,
    /// Only evaluate these sizes.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 4500)]
    step_cap: usize,
    #[arg(long)]
    greedy: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Large,
    Oracle,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum OracleMode {
    None,
    PerfectPosition,
    PerfectSttd,
    Both,
}

impl OracleMode {
    fn perception(self) -> PerceptionMode {
        match self {
            OracleMode::None => PerceptionMode::Full,
            OracleMode::PerfectPosition => PerceptionMode::PerfectPosition,
            OracleMode::PerfectSttd => PerceptionMode::PerfectSttd,
            OracleMode::Both => PerceptionMode::Both,
        }
    }
}

/// Failure classes mapped to exit codes.
enum Failure {
    Check(String),
    Input(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::GenMazes { sizes, count, seed, out } => {
            let set = harness::generate_testset(&out, &sizes, count, seed).context("generating mazes")?;
            println!("wrote {} mazes to {}", set.len(), out.display());
        }
        Command::Train { config, preset, seed, resume, out } => {
            let mut cfg = match &config {
                Some(path) => TrainConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
                None => match preset {
                    Preset::Desk => TrainConfig::desk(),
                    Preset::Large => TrainConfig::large_scale(),
                    Preset::Oracle => TrainConfig::oracle_agent(),
                },
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = training::train(&cfg, &out, resume.as_deref()).context("training")?;
            let m = &report.meta;
            println!(
                "converged={} iterations={} episodes={} env_steps={} checkpoint={}",
                m.converged,
                m.iterations,
                m.episodes,
                m.env_steps,
                report.checkpoint.display()
            );
        }
        Command::Eval { eval } => {
            let stats = run_eval(&eval, None)?;
            print_stats(&stats);
        }
        Command::OracleEval { mode, eval } => {
            let stats = run_eval(&eval, Some(mode.perception()))?;
            print_stats(&stats);
        }
        Command::Trace { checkpoint, maze, seed, greedy, mode, out } => {
            let (meta, model, set, _) = load_run(&checkpoint).context("loading checkpoint")?;
            let spec = read_maze(&maze).with_context(|| format!("reading {}", maze.display()))?;
            let cfg = EvalConfig {
                env: meta.config.env.clone(),
                render: meta.config.render.clone(),
                mode: mode.perception(),
                policy: if greedy { PolicyKind::Greedy } else { PolicyKind::Sampled },
                seed,
            };
            fs::create_dir_all(&out).context("creating output directory")?;
            let path = out.join("trace.jsonl");
            let mut file = std::io::BufWriter::new(fs::File::create(&path).context("creating trace file")?);
            let records = harness::export_trace(&model, &set, Arc::new(spec), &cfg, seed, &mut file).context("writing trace")?;
            let last = records.last();
            println!(
                "{} steps, success={}, trace={}",
                records.len(),
                last.is_some_and(|r| r.success),
                path.display()
            );
        }
        Command::Selfcheck { seed, out } => {
            let report = harness::selfcheck(seed);
            for item in &report.items {
                println!("{} {}: {}", if item.passed { "PASS" } else { "FAIL" }, item.name, item.detail);
            }
            if let Some(dir) = out {
                fs::create_dir_all(&dir).context("creating output directory")?;
                let json = serde_json::to_string_pretty(&report).context("serializing report")?;
                fs::write(dir.join("selfcheck.json"), json).context("writing report")?;
            }
            if !report.passed() {
                return Err(Failure::Check(format!("{} of {} checks failed", report.items.iter().filter(|i| !i.passed).count(), report.items.len())));
            }
        }
    }
    Ok(())
}

fn load_mazes(dir: &Path, sizes: &[usize]) -> Result<Vec<(usize, usize, MazeSpec)>> {
    let mut set = read_maze_set(dir).with_context(|| format!("reading maze set {}", dir.display()))?;
    if !sizes.is_empty() {
        set.retain(|(s, _, _)| sizes.contains(s));
    }
    if set.is_empty() {
        bail!("no mazes found in {}", dir.display());
    }
    Ok(set)
}

fn run_eval(args: &EvalArgs, oracle: Option<PerceptionMode>) -> Result<EvalStats> {
    let (meta, model, set, _) = load_run(&args.checkpoint).context("loading checkpoint")?;
    let mazes = load_mazes(&args.mazes, &args.sizes)?;
    let cfg = EvalConfig {
        env: mapreader::maze::EnvConfig { step_cap: args.step_cap, ..meta.config.env.clone() },
        render: meta.config.render.clone(),
        mode: PerceptionMode::Full,
        policy: if args.greedy { PolicyKind::Greedy } else { PolicyKind::Sampled },
        seed: args.seed,
    };
    let stats = match oracle {
        Some(mode) => harness::oracle_eval(&model, &set, &mazes, mode, &cfg),
        None => harness::evaluate(&model, &set, &mazes, &cfg),
    };
    if let Some(out) = &args.out {
        fs::create_dir_all(out).context("creating output directory")?;
        fs::write(out.join("episodes.csv"), stats.episodes_csv()).context("writing episodes.csv")?;
        fs::write(out.join("summary.csv"), stats.summary_csv()).context("writing summary.csv")?;
    }
    Ok(stats)
}

fn print_stats(stats: &EvalStats) {
    print!("{}", stats.summary_csv());
}

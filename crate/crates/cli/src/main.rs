use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agrl_core::run::{
    bench_csv, eval_checkpoint, gradcheck_suite, list_goals, run_bench, BenchConfig, BenchMethod, Method, RunConfig,
    Trainer, GRADCHECK_TOL,
};
use agrl_core::Error;
use clap::{Args, Parser, Subcommand};

const USAGE: u8 = 1;
const NUMERIC: u8 = 2;
const IO: u8 = 3;

/// All-goals reinforcement learning: train, evaluate, benchmark.
#[derive(Parser, Debug)]
#[command(name = "agrl", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// JSON run config; defaults are used when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `--set train.lr=1e-3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> agrl_core::Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train and write metrics, summaries and checkpoints.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (overrides `out_dir` in the config).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Greedy per-goal evaluation of a checkpoint (fresh parameters if none).
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluate a single goal by name.
        #[arg(long)]
        goal: Option<String>,
        #[arg(long, default_value_t = 16)]
        episodes: usize,
        /// Print the JSON report instead of the table.
        #[arg(long)]
        json: bool,
        /// Also write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Steps-per-second for single-goal, all-goals and naive relabelling.
    Bench {
        /// Comma-separated subset of single_goal,leo,naive_relabel.
        #[arg(long, value_delimiter = ',', default_value = "single_goal,leo,naive_relabel")]
        methods: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1,4,16,64")]
        goal_counts: Vec<usize>,
        /// Environment steps timed per cell.
        #[arg(long, default_value_t = 4096)]
        steps: u64,
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 256)]
        minibatch: usize,
        /// Time only the learning update on a fixed batch.
        #[arg(long)]
        update_only: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination; stdout when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every training loss.
    Gradcheck {
        /// Only the losses this method trains with.
        #[arg(long)]
        method: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the goal table of the configured environment.
    ListGoals {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config { .. }
            | Error::UnknownGoal(_)
            | Error::InvalidArgument(_)
            | Error::Checkpoint { .. }
            | Error::WorldGeneration { .. }
            | Error::StateSpaceOverflow { .. } => USAGE,
            Error::NonFinite { .. } | Error::Numeric(_) | Error::Shape(_) | Error::LayerShape { .. } => NUMERIC,
            Error::Io(_) | Error::Json(_) => IO,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: IO,
        message: format!("{}: {e}", path.display()),
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io_err(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Train { config, out } => {
            let mut cfg = config.load()?;
            if out.is_some() {
                cfg.out_dir = out;
            }
            let dir = cfg.out_dir.clone();
            let mut trainer = Trainer::new(cfg)?;
            trainer.train(dir.as_deref(), |t, rec| {
                eprintln!(
                    "step {:>9}  mean_success {:.3}  seen {}/{}",
                    rec.step,
                    rec.mean_success,
                    rec.seen_goals,
                    t.num_goals()
                );
                Ok(())
            })?;
            if let Some(d) = dir {
                eprintln!("wrote {}", d.display());
            }
        }
        Cmd::Eval {
            config,
            checkpoint,
            goal,
            episodes,
            json,
            report,
        } => {
            let cfg = config.load()?;
            let summary = eval_checkpoint(&cfg, checkpoint.as_deref(), goal.as_deref(), episodes)?;
            let text = serde_json::to_string_pretty(&summary).map_err(Error::from)?;
            if let Some(p) = &report {
                fs::write(p, &text).map_err(|e| io_err(p, e))?;
            }
            if json {
                println!("{text}");
            } else {
                print!("{}", summary.table());
            }
        }
        Cmd::Bench {
            methods,
            goal_counts,
            steps,
            width,
            minibatch,
            update_only,
            seed,
            out,
        } => {
            let cfg = BenchConfig {
                methods: methods
                    .iter()
                    .map(|m| BenchMethod::parse(m.trim()))
                    .collect::<agrl_core::Result<_>>()?,
                goal_counts,
                steps,
                width,
                minibatch_size: minibatch,
                update_only,
                seed,
                ..BenchConfig::default()
            };
            write_out(out.as_deref(), &bench_csv(&run_bench(&cfg)?))?;
        }
        Cmd::Gradcheck { method, seed } => {
            let method = method.as_deref().map(Method::parse).transpose()?;
            let results = gradcheck_suite(method, seed)?;
            let mut failed = Vec::new();
            for r in &results {
                let status = if r.passed() { "ok" } else { "FAIL" };
                println!("{:<28} {:.3e}  {status}", r.loss, r.max_rel_error);
                if !r.passed() {
                    failed.push(r.loss.clone());
                }
            }
            if !failed.is_empty() {
                return Err(Failure {
                    code: NUMERIC,
                    message: format!("relative error above {GRADCHECK_TOL:e}: {}", failed.join(", ")),
                });
            }
        }
        Cmd::ListGoals { config } => print!("{}", list_goals(&config.load()?)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = std::env::var("AGRL_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use harness::config::{EvalMode, ReportEntry, RunConfig};
use harness::{HarnessError, Result};

#[derive(Parser)]
#[command(name = "ocusim", version, about = "Synthetic ophthalmic corpora, world-model training and evaluation")]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom corpus with manifest and provenance.
    Forge,
    /// Train (or resume) the world model on a corpus.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this global step and write a checkpoint.
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<EvalMode>,
    },
    /// Tabulate and plot evaluation bundles.
    Report {
        /// `name=dir` pairs, or bare directories named after themselves.
        bundles: Vec<String>,
    },
}

fn entry(arg: &str) -> ReportEntry {
    match arg.split_once('=') {
        Some((name, dir)) => ReportEntry { name: name.to_string(), bundle: PathBuf::from(dir) },
        None => {
            let bundle = PathBuf::from(arg);
            let name = bundle.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| arg.to_string());
            ReportEntry { name, bundle }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.seed = cli.seed.or(cfg.seed);
    cfg.out = cli.out.or(cfg.out);
    cfg.threads = cli.threads.or(cfg.threads);
    match cli.command {
        Command::Forge => {
            let s = harness::forge::cmd_forge(&cfg)?;
            println!("{} records", s.records);
            for (task, n) in &s.per_task {
                println!("{} {n}", task.name());
            }
        }
        Command::Train { manifest, resume, max_steps } => {
            cfg.train.max_steps = max_steps.or(cfg.train.max_steps);
            let s = harness::train::cmd_train(&cfg, &manifest, resume.as_deref())?;
            println!("step {} finished {} checkpoint {}", s.step, s.finished, s.checkpoint.display());
        }
        Command::Eval { manifest, checkpoint, mode } => {
            if let Some(m) = mode {
                cfg.eval.mode = m;
            }
            let bundle = harness::eval::cmd_eval(&cfg, &manifest, checkpoint.as_deref())?;
            for (task, report) in &bundle.reports {
                for (metric, a) in report.aggregates() {
                    println!("{task} {metric} {}", harness::report::fmt_cell(&a));
                }
                if !report.failures.is_empty() {
                    println!("{task} failures {}", report.failures.len());
                }
            }
        }
        Command::Report { bundles } => {
            let entries: Vec<ReportEntry> =
                if bundles.is_empty() { cfg.report.models.clone() } else { bundles.iter().map(|b| entry(b)).collect() };
            let s = harness::report::cmd_report(&cfg, &entries)?;
            println!("{}", s.markdown.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(HarnessError::exit_code(&e) as u8)
        }
    }
}

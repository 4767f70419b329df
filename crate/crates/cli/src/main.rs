//! `tagfuzz`: corpus generation, model training, fuzzing runs and reports.

mod agent;
mod config;
mod data;
mod misc;
mod setup;
mod tcn;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::config::{Schema, UsageError};

#[derive(Parser, Debug)]
#[command(name = "tagfuzz", version, about = "Coverage-guided generative HTML fuzzing")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for every random draw of the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Config file (`key=value` lines) or preset name.
    #[arg(long, global = true)]
    pub config: Option<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Override one config key (`key=value`); repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Grammar corpus for TCN training.
    Corpus {
        #[command(subcommand)]
        cmd: CorpusCmd,
    },
    /// Grammar baseline test-case sets.
    Baseline {
        #[command(subcommand)]
        cmd: BaselineCmd,
    },
    /// Character-level TCN.
    Tcn {
        #[command(subcommand)]
        cmd: TcnCmd,
    },
    /// DDQN tag-selection agent.
    Ddqn {
        #[command(subcommand)]
        cmd: DdqnCmd,
    },
    /// Generate test cases and measure their coverage.
    Fuzz {
        #[command(subcommand)]
        cmd: FuzzCmd,
    },
    /// Remote execution worker.
    Worker {
        #[command(subcommand)]
        cmd: WorkerCmd,
    },
    /// Coverage comparison of candidate, baseline and TCN sets.
    Report(misc::ReportArgs),
    /// Policy histograms.
    Policy {
        #[command(subcommand)]
        cmd: PolicyCmd,
    },
    /// Runs one test case read from stdin and prints its coverage.
    #[command(hide = true)]
    ExecCase {
        #[arg(long, default_value = "toy")]
        target: String,
    },
}

#[derive(Subcommand, Debug)]
enum CorpusCmd {
    Gen,
}

#[derive(Subcommand, Debug)]
enum BaselineCmd {
    Run(data::BaselineArgs),
}

#[derive(Subcommand, Debug)]
enum TcnCmd {
    Train(tcn::TrainArgs),
    Sample(tcn::SampleArgs),
    Eval(tcn::EvalArgs),
}

#[derive(Subcommand, Debug)]
enum DdqnCmd {
    /// Play episodes and append their experiences to a store.
    Collect(agent::CollectArgs),
    /// Train from a stored experience log.
    TrainOffline(agent::OfflineArgs),
    /// Interleave playing and training.
    TrainOnline(agent::OnlineArgs),
}

#[derive(Subcommand, Debug)]
enum FuzzCmd {
    Run(agent::FuzzArgs),
}

#[derive(Subcommand, Debug)]
enum WorkerCmd {
    Serve(misc::ServeArgs),
}

#[derive(Subcommand, Debug)]
enum PolicyCmd {
    /// Pairwise KL divergence between policy histograms.
    Kl(misc::KlArgs),
}

/// Resolves the command's configuration, honouring `--dump-config`.
/// Returns `None` when the command should stop after printing.
pub fn settings(global: &Global, schema: Schema) -> Result<Option<tagfuzz_core::kv::Kv>> {
    let mut kv = config::resolve(schema, global.config.as_deref())?;
    for pair in &global.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| config::usage(format!("--set expects key=value, got {pair:?}")))?;
        if !kv.contains(k) {
            return Err(config::usage(format!("--set: unknown key {k:?}")));
        }
        kv.set(k, v);
    }
    if global.dump_config {
        print!("{}", kv.to_text());
        return Ok(None);
    }
    setup::ensure_dir(&global.out)?;
    setup::write(&global.out.join("config.kv"), kv.to_text())?;
    Ok(Some(kv))
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Corpus { cmd: CorpusCmd::Gen } => data::corpus_gen(g),
        Command::Baseline { cmd: BaselineCmd::Run(a) } => data::baseline_run(g, &a),
        Command::Tcn { cmd } => match cmd {
            TcnCmd::Train(a) => tcn::train(g, &a),
            TcnCmd::Sample(a) => tcn::sample(g, &a),
            TcnCmd::Eval(a) => tcn::eval(g, &a),
        },
        Command::Ddqn { cmd } => match cmd {
            DdqnCmd::Collect(a) => agent::collect(g, &a),
            DdqnCmd::TrainOffline(a) => agent::train_offline(g, &a),
            DdqnCmd::TrainOnline(a) => agent::train_online(g, &a),
        },
        Command::Fuzz { cmd: FuzzCmd::Run(a) } => agent::fuzz(g, &a),
        Command::Worker { cmd: WorkerCmd::Serve(a) } => misc::serve(g, &a),
        Command::Report(a) => misc::report(g, &a),
        Command::Policy { cmd: PolicyCmd::Kl(a) } => misc::policy_kl(g, &a),
        Command::ExecCase { target } => misc::exec_case(&target),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

//! Command-line surface: `adv`, `tree`, `loss`, `branch-stats` and `sim`.
//!
//! Exit codes: 0 success, 1 input error, 2 config error. Data goes to the
//! output file or standard output; warnings go to standard error.

mod commands;
mod records;
mod sim_cmd;

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use commands::{cmd_adv, cmd_branch_stats, cmd_loss, cmd_tree, AdvOptions, LossOptions};
pub use records::{
    AdvantageRecord, GroupReader, LossRecord, RolloutRecord, SourcedGroup, TreeNodeRecord,
};
pub use sim_cmd::{cmd_sim, SimFile, SimOptions};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Io(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "tempo",
    version,
    about = "Prefix-tree credit assignment for RL with verifiable rewards"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct IoArgs {
    /// Rollout records, one JSON object per line (standard input if omitted)
    pub input: Option<PathBuf>,
    /// Output path (standard output if omitted)
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Allow records of one prompt_id to be scattered (buffers the whole input)
    #[arg(long)]
    pub buffered: bool,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Per-token advantages, one record per input rollout
    Adv {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long, default_value = "tempo")]
        method: String,
        /// HEPO: fraction of highest-entropy tokens kept
        #[arg(long, default_value_t = 0.2)]
        rho: f64,
        /// GAE mixing parameter
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Process groups on all cores; output order is unchanged
        #[arg(long)]
        parallel: bool,
    },
    /// Depth-first node listing of every group's prefix tree
    Tree {
        #[command(flatten)]
        io: IoArgs,
    },
    /// Clipped surrogate per group; records need old_logprobs and new_logprobs
    Loss {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long, default_value = "tempo")]
        method: String,
        #[arg(long, default_value_t = 0.2)]
        eps_low: f64,
        #[arg(long, default_value_t = 0.28)]
        eps_high: f64,
        #[arg(long, default_value_t = 0.2)]
        rho: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
    },
    /// Frequencies of child tokens at branch nodes, as token,count rows
    BranchStats {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long)]
        top_n: Option<usize>,
    },
    /// Train the tabular simulator and write per-update reports as CSV
    Sim(SimOptions),
}

fn open_input(path: &Option<PathBuf>) -> Result<Box<dyn BufRead>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufReader::new(
            File::open(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufReader::new(io::stdin().lock())),
    })
}

fn open_output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn parse_method(s: &str) -> Result<crate::Method, CliError> {
    s.parse()
        .map_err(|e: crate::Error| CliError::Config(format!("--method: {e}")))
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let mut stderr = io::stderr();
    match cli.command {
        Command::Adv {
            io,
            method,
            rho,
            lambda,
            parallel,
        } => {
            let opts = AdvOptions::new(parse_method(&method)?, rho, lambda, io.buffered, parallel)?;
            let input = open_input(&io.input)?;
            let mut out = open_output(&io.output)?;
            cmd_adv(input, &mut out, &opts, &mut stderr)?;
            out.flush()?;
        }
        Command::Tree { io } => {
            let input = open_input(&io.input)?;
            let mut out = open_output(&io.output)?;
            cmd_tree(input, &mut out, io.buffered)?;
            out.flush()?;
        }
        Command::Loss {
            io,
            method,
            eps_low,
            eps_high,
            rho,
            lambda,
        } => {
            let opts = LossOptions::new(
                AdvOptions::new(parse_method(&method)?, rho, lambda, io.buffered, false)?,
                eps_low,
                eps_high,
            )?;
            let input = open_input(&io.input)?;
            let mut out = open_output(&io.output)?;
            cmd_loss(input, &mut out, &opts, &mut stderr)?;
            out.flush()?;
        }
        Command::BranchStats { io, top_n } => {
            let input = open_input(&io.input)?;
            let mut out = open_output(&io.output)?;
            cmd_branch_stats(input, &mut out, top_n, io.buffered)?;
            out.flush()?;
        }
        Command::Sim(opts) => {
            let to_stdout = opts.output.is_none();
            let mut out = open_output(&opts.output)?;
            let summary = cmd_sim(&opts, &mut out)?;
            out.flush()?;
            if to_stdout {
                eprint!("{summary}");
            } else {
                print!("{summary}");
            }
        }
    }
    Ok(())
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(CliError::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

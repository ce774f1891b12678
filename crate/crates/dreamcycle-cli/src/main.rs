//! `dreamcycle` binary: every phase of the loop as a subcommand, driven by
//! one JSON config file with flag overrides. Exit codes are a stable
//! contract: 0 success, 2 usage/config, 3 data, 4 network.

mod commands;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "dreamcycle",
    about = "Rule-driven days, replayed nights: the full dream-cycle loop",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON config file; relative paths inside it resolve against its
    /// directory.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override day episodes per cycle.
    #[arg(long)]
    episodes: Option<u32>,
    /// Override the dream cycle count.
    #[arg(long)]
    cycles: Option<u32>,
    /// Also write full night reports (activation trace, extracted rules).
    #[arg(long)]
    dump_night: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run day episodes: write .explog files and a metrics CSV.
    Day(Common),
    /// Run one local night over explicit log files and write a patch.
    Night {
        #[command(flatten)]
        common: Common,
        /// Experience log files to replay, in order.
        logs: Vec<PathBuf>,
    },
    /// Alternate day and night phases, applying each patch before the next
    /// day; resumable via the checkpoint in the output directory.
    Dream(Common),
    /// Host the shared sleeping-brain server.
    Serve(Common),
    /// Upload local logs to the server, trigger a night, fetch and apply
    /// the patch.
    Sync(Common),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Day(c) => commands::run_day(&c),
        Cmd::Night { common, logs } => commands::run_night(&common, &logs),
        Cmd::Dream(c) => commands::run_dream_cmd(&c),
        Cmd::Serve(c) => commands::run_serve(&c),
        Cmd::Sync(c) => commands::run_sync(&c),
    };
    let code = match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    };
    let _ = std::io::stdout().flush();
    std::process::exit(code);
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use paramgate_cli::{config, run_batch, Command};

/// Run paramgate scenarios from TOML config files or bundled presets.
#[derive(Debug, Parser)]
#[command(name = "paramgate", version)]
struct Args {
    /// What to run; the config must carry the matching `run.<command>` section.
    #[arg(required_unless_present = "list")]
    command: Option<Command>,

    /// Config file path or bundled scenario name; repeat to run several in parallel.
    #[arg(short, long = "config", required_unless_present = "list")]
    config: Vec<String>,

    /// Overrides `run.seed` in every config.
    #[arg(long)]
    seed: Option<u64>,

    /// Results go to OUT/<config stem>/.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,

    /// Worker threads (default: all cores).
    #[arg(long, env = "PARAMGATE_THREADS")]
    threads: Option<usize>,

    /// Print the bundled scenario names and exit.
    #[arg(long)]
    list: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    if args.list {
        for name in config::bundled_names() {
            println!("{name}");
        }
        return ExitCode::SUCCESS;
    }
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    let command = args.command.expect("clap enforces the command");
    match run_batch(command, &args.config, args.seed, &args.out) {
        Ok(items) => {
            for it in &items {
                println!("{}", it.dir.join(it.output.summary_name()).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

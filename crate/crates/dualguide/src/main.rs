use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dualguide::cli::{self, EXIT_FAILURE, EXIT_INPUT, EXIT_OK};
use dualguide::config::PipelineConfig;

#[derive(Parser, Debug)]
#[command(name = "dualguide")]
#[command(about = "Dual image-prompt guidance: synthetic-data generation and few-shot classifier training")]
#[command(version)]
struct Args {
    /// Pipeline configuration file (TOML). Required by every command except
    /// `verify`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the dataset seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Plan only; write nothing.
    #[arg(long, global = true)]
    dry_run: bool,

    /// Parallel workers for generation.
    #[arg(long, global = true, default_value = "1")]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the class-similarity artifact from the embedding file.
    Similarity,
    /// Generate synthetic data from the plan (exit 0 only if no item failed).
    Generate,
    /// Train the classifier on real + synthetic pools.
    Train,
    /// Evaluate the saved checkpoint on the held-out set.
    Eval,
    /// Run the oracle verification suite.
    Verify {
        /// Run a deliberately broken guidance variant to demonstrate the
        /// oracle catches it (expected exit: 1).
        #[arg(long, value_enum)]
        mutate: Option<Mutation>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mutation {
    /// Flip the sign of the negative image-guidance term.
    NegGuidanceSign,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let code = dispatch(&args);
    ExitCode::from(code as u8)
}

fn dispatch(args: &Args) -> i32 {
    if let Command::Verify { mutate } = &args.command {
        let (_, code) = cli::cmd_verify(mutate.is_some());
        return code;
    }

    let Some(config_path) = &args.config else {
        eprintln!("error: --config is required for this command");
        return EXIT_INPUT;
    };
    let config = match PipelineConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return cli::exit_code_for_error(&e);
        }
    };

    let result: Result<i32, dualguide::Error> = match &args.command {
        Command::Similarity => cli::cmd_similarity(&config).map(|_| EXIT_OK),
        Command::Generate => cli::cmd_generate(&config, args.seed, args.dry_run, args.workers)
            .map(|outcome| {
                if outcome.dry_run || outcome.summary.failed == 0 {
                    EXIT_OK
                } else {
                    EXIT_FAILURE
                }
            }),
        Command::Train => cli::cmd_train(&config, args.seed).map(|_| EXIT_OK),
        Command::Eval => cli::cmd_eval(&config).map(|_| EXIT_OK),
        Command::Verify { .. } => unreachable!("handled above"),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            cli::exit_code_for_error(&e)
        }
    }
}

mod args;
mod failure;
mod provenance;
mod stages;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, LogFormat};
use failure::{CliResult, Failure, EXIT_USAGE};

fn init_logging(format: LogFormat) {
    let builder = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(tracing::Level::INFO)
        .with_target(false);
    match format {
        LogFormat::Json => builder.json().init(),
        LogFormat::Text => builder.init(),
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Failure::Usage(format!("--threads: {e}")))?;
    }
    match &cli.command {
        Command::Features(a) => stages::features(a),
        Command::Preselect(a) => stages::preselect_stage(a),
        Command::Score(a) => stages::score(a),
        Command::TrainPredictor(a) => stages::train_predictor(a, cli.seed),
        Command::Select(a) => stages::select(a, cli.seed),
        Command::Evaluate(a) => stages::evaluate(a),
        Command::Sweep(a) => stages::sweep(a),
        Command::Synth(a) => stages::synth(a, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    init_logging(cli.log);
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}

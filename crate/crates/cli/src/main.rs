use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

mod cli;
mod commands;

use cli::{Cli, Command};
use pointprompt::config::RunConfig;
use pointprompt::error::FormatKind;
use pointprompt::Error;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;

/// Configuration mistakes are usage errors; anything about the inputs or the
/// training run is a data error; failures talking to the segmenter are
/// backend errors.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Backend { .. } => EXIT_BACKEND,
        Error::Format {
            kind: FormatKind::Config,
            ..
        }
        | Error::InvalidParameter(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn error_kind(err: &Error) -> String {
    match err {
        Error::PointOutOfBounds { .. } => "point_out_of_bounds".into(),
        Error::DegenerateBox => "degenerate_box".into(),
        Error::EmptyMask => "empty_mask".into(),
        Error::DimensionMismatch { .. } => "dimension_mismatch".into(),
        Error::InvalidParameter(_) => "invalid_parameter".into(),
        Error::NonFiniteUpdate => "non_finite_update".into(),
        Error::EmptyPrototype(_) => "empty_prototype".into(),
        Error::Backend { kind, .. } => format!("backend_{kind}"),
        Error::Format { kind, .. } => format!("format_{kind}"),
        Error::MissingFile(_) => "missing_file".into(),
        Error::Io(_) => "io".into(),
    }
}

fn report(json: bool, kind: &str, code: u8, message: &str) {
    if json {
        let body = serde_json::json!({ "error": { "kind": kind, "exit_code": code, "message": message } });
        eprintln!("{body}");
    } else {
        eprintln!("error: {message}");
    }
}

fn command() -> clap::Command {
    let keys = format!(
        "Configuration keys (defaults; override with --set key=value):\n{}",
        RunConfig::default().key_listing()
    );
    Cli::command()
        .after_help(keys.clone())
        .mut_subcommands(|sub| sub.after_help(keys.clone()))
}

fn load_config(cli: &Cli) -> pointprompt::Result<RunConfig> {
    let mut cfg = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for assignment in &cli.global.set {
        cfg.apply_override(assignment)?;
    }
    if let Some(seed) = cli.global.seed {
        cfg.rng_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let json_errors = args.iter().any(|a| a == "--json-errors");
    let matches = match command().try_get_matches_from(&args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            if json_errors {
                report(true, "usage", EXIT_USAGE, e.to_string().trim());
            } else {
                let _ = e.print();
            }
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let cli = Cli::from_arg_matches(&matches).expect("matches come from the same definition");

    let result = load_config(&cli).and_then(|cfg| match &cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Infer(args) => commands::infer(&cfg, args),
        Command::Eval(args) => commands::eval(&cfg, args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            report(cli.global.json_errors, &error_kind(&e), code, &e.to_string());
            ExitCode::from(code)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use pslab::experiment::{self, Command, ExperimentConfig, Format};
use pslab::{par, Error};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Sub {
    Kappa,
    Exponent,
    Limitset,
    Ps,
    Track,
    Bms,
    Hilbert,
    Convexity,
    Selftest,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Command {
        match s {
            Sub::Kappa => Command::Kappa,
            Sub::Exponent => Command::Exponent,
            Sub::Limitset => Command::Limitset,
            Sub::Ps => Command::Ps,
            Sub::Track => Command::Track,
            Sub::Bms => Command::Bms,
            Sub::Hilbert => Command::Hilbert,
            Sub::Convexity => Command::Convexity,
            Sub::Selftest => Command::Selftest,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Fmt {
    Json,
    Csv,
    Text,
}

impl From<Fmt> for Format {
    fn from(f: Fmt) -> Format {
        match f {
            Fmt::Json => Format::Json,
            Fmt::Csv => Format::Csv,
            Fmt::Text => Format::Text,
        }
    }
}

/// Numerical experiments on discrete subgroups of SL(d, R).
#[derive(Debug, Parser)]
#[command(name = "pslab", version)]
struct Args {
    #[arg(value_enum)]
    command: Sub,
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random draw; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Word-length truncation; overrides the config.
    #[arg(long)]
    max_len: Option<usize>,
    /// Directory for report files. Without it the report goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Fmt>,
    /// Worker threads. Results do not depend on this.
    #[arg(long)]
    jobs: Option<usize>,
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("{}", experiment::error_json(e));
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = serde_json::json!({"error": {"kind": "usage", "message": e.to_string().trim()}});
            eprintln!("{err}");
            return ExitCode::from(2);
        }
    };
    if let Some(j) = args.jobs {
        if j == 0 {
            return fail(&Error::InvalidInput("--jobs must be at least 1".into()));
        }
        par::init_threads(j);
    }
    let mut cfg = match &args.config {
        Some(p) => match ExperimentConfig::load(p) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        },
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = Some(s);
    }
    if let Some(n) = args.max_len {
        cfg.max_len = n;
    }
    if let Some(o) = &args.out {
        cfg.out = Some(o.display().to_string());
    }
    if let Some(f) = args.format {
        cfg.format = Some(f.into());
    }
    let report = match experiment::run(args.command.into(), &cfg) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    let format = cfg.format.unwrap_or(Format::Json);
    match &cfg.out {
        Some(dir) => match report.write_to(std::path::Path::new(dir)) {
            Ok(paths) => {
                for p in paths {
                    println!("{}", p.display());
                }
            }
            Err(e) => return fail(&e),
        },
        None => print!("{}", report.render(format)),
    }
    match report.passed {
        Some(false) => ExitCode::from(1),
        _ => ExitCode::SUCCESS,
    }
}

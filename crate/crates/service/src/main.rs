use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use csc_core::{derive_flag, load_corpus, validate_pack, EventSecret};
use csc_service::survey::{self, Rounding, SurveyResponse};
use csc_service::{App, EventConfig, SystemClock};

#[derive(Parser)]
#[command(name = "csc", version, about = "Secure-coding challenge event server and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the event API.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Challenge pack tools.
    Pack {
        #[command(subcommand)]
        command: PackCommand,
    },
    /// Survey tools.
    Survey {
        #[command(subcommand)]
        command: SurveyCommand,
    },
}

#[derive(Subcommand)]
enum PackCommand {
    /// Validate one pack directory or a corpus of packs.
    Validate { dir: PathBuf },
    /// Print the flag a pack gets under an event secret.
    Flag {
        dir: PathBuf,
        #[arg(long)]
        secret_file: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RoundingArg {
    LargestRemainder,
    HalfUp,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Subcommand)]
enum SurveyCommand {
    /// Aggregate responses from a JSON array or JSON-lines file.
    Aggregate {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "largest-remainder")]
        rounding: RoundingArg,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
}

fn read_responses(path: &Path) -> Result<Vec<SurveyResponse>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()));
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1)))
        .collect()
}

fn validate(dir: &Path) -> Result<(), String> {
    if dir.join(csc_core::validate::MANIFEST_FILE).is_file() {
        return match validate_pack(dir) {
            Ok(pack) => {
                println!("ok {}", pack.id);
                Ok(())
            }
            Err(errors) => {
                for e in &errors {
                    eprintln!("{e}");
                }
                Err(format!("{} problem(s)", errors.len()))
            }
        };
    }
    let report = load_corpus(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    for pack in &report.packs {
        println!("ok {}", pack.id);
    }
    if !report.is_clean() {
        eprintln!("{}", csc_service::config::render_corpus_errors(&report));
    }
    if report.is_clean() {
        Ok(())
    } else {
        Err(format!("{} problem(s)", report.errors.len()))
    }
}

fn flag(dir: &Path, secret_file: &Path) -> Result<(), String> {
    let bytes = std::fs::read(secret_file).map_err(|e| format!("{}: {e}", secret_file.display()))?;
    let secret = EventSecret::from_file_contents(&bytes).map_err(|e| e.to_string())?;
    let pack = validate_pack(dir).map_err(|errors| {
        errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n")
    })?;
    println!("{}", derive_flag(&secret, &pack.id));
    Ok(())
}

fn aggregate(file: &Path, rounding: RoundingArg, format: Format) -> Result<(), String> {
    let responses = read_responses(file)?;
    let rounding = match rounding {
        RoundingArg::LargestRemainder => Rounding::LargestRemainder,
        RoundingArg::HalfUp => Rounding::HalfUp,
    };
    let agg = survey::aggregate(&responses, rounding).map_err(|e| e.to_string())?;
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&agg).expect("aggregate serializes")),
        Format::Table => print!("{}", agg.render_table()),
    }
    Ok(())
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
}

fn serve(config: &Path) -> Result<(), String> {
    let setup = EventConfig::load(config)
        .and_then(EventConfig::prepare)
        .map_err(|e| e.to_string())?;
    let listen = setup.config.listen;
    let app = App::start(setup, Arc::new(SystemClock)).map_err(|e| e.to_string())?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .map_err(|e| format!("cannot listen on {listen}: {e}"))?;
        tracing::info!(addr = %listener.local_addr().map_err(|e| e.to_string())?, "serving");
        csc_service::http::serve(app, listener, shutdown_signal())
            .await
            .map_err(|e| e.to_string())
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve { config } => serve(&config),
        Command::Pack { command } => match command {
            PackCommand::Validate { dir } => validate(&dir),
            PackCommand::Flag { dir, secret_file } => flag(&dir, &secret_file),
        },
        Command::Survey { command } => match command {
            SurveyCommand::Aggregate {
                file,
                rounding,
                format,
            } => aggregate(&file, rounding, format),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

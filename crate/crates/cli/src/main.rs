//! `jargon`: replay transcripts, compare modes, compute helpful rates, serve.
//!
//! Exit codes: 0 success, 2 input error, 3 provider failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use jargon_core::eval::{
    compare_modes, compute_helpful_rate, run_replay_file, RatingSheet, ReplayOptions, SessionReport,
};
use jargon_core::gateway::{
    CompletionParams, CompletionProvider, Gateway, MockProvider, OpenAiProvider, ProviderConfig,
};
use jargon_core::pipeline::{Mode, UserProfile};
use jargon_service::runtime::RuntimeSettings;
use jargon_service::{Hub, MemoryStore, ServiceConfig, SessionStore, SqliteStore};

const ENV_MOCK_FIXTURES: &str = "JARGON_MOCK_FIXTURES";

#[derive(Parser)]
#[command(
    name = "jargon",
    version,
    about = "Jargon glossary replay, evaluation and service"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a transcript through the pipeline and write a session report.
    Replay(ReplayArgs),
    /// Compare a general and a personalized report of the same transcript.
    Diff(DiffArgs),
    /// Compute helpful rates from rating sheets.
    Rate(RateArgs),
    /// Run the session service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    General,
    Personalized,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProviderArg {
    Live,
    Mock,
}

#[derive(Args)]
struct ProviderArgs {
    #[arg(long, value_enum, default_value = "live")]
    provider: ProviderArg,
    /// Mock fixture file or directory (default: $JARGON_MOCK_FIXTURES).
    #[arg(long)]
    fixtures: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    transcript: PathBuf,
    /// Profile JSON; required for personalized mode.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[command(flatten)]
    provider: ProviderArgs,
    /// Pace chunks by their timestamps.
    #[arg(long)]
    realtime: bool,
    /// Add provider latency to the report.
    #[arg(long)]
    latency: bool,
    /// Output file, or `-` for standard output.
    #[arg(long)]
    out: String,
}

#[derive(Args)]
struct DiffArgs {
    #[arg(long)]
    general: PathBuf,
    #[arg(long)]
    personalized: PathBuf,
    #[arg(long, default_value = "-")]
    out: String,
}

#[derive(Args)]
struct RateArgs {
    /// Files holding one rating sheet or an array of them.
    #[arg(long, num_args = 1.., required = true)]
    sheets: Vec<PathBuf>,
    #[arg(long, default_value = "-")]
    out: String,
}

#[derive(Args)]
struct ServeArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    listen: Option<std::net::SocketAddr>,
    /// 0 disables wall-clock ticks.
    #[arg(long)]
    tick_ms: Option<u64>,
    #[arg(long)]
    min_display_ms: Option<u64>,
    #[arg(long)]
    silence_flush_ms: Option<u64>,
    /// SQLite file; sessions stay in memory without one.
    #[arg(long)]
    database: Option<PathBuf>,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Provider(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Input(_) => 2,
            Self::Provider(_) => 3,
        }
    }
}

fn input(err: impl std::fmt::Display) -> Failure {
    Failure::Input(err.to_string())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text =
        std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(out: &str, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    if out == "-" {
        std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| input(format!("stdout: {e}")))
    } else {
        std::fs::write(out, text).map_err(|e| input(format!("{out}: {e}")))
    }
}

fn provider(
    args: &ProviderArgs,
) -> Result<(Arc<dyn CompletionProvider>, CompletionParams), Failure> {
    match args.provider {
        ProviderArg::Mock => {
            let path = args
                .fixtures
                .clone()
                .or_else(|| std::env::var_os(ENV_MOCK_FIXTURES).map(PathBuf::from))
                .ok_or_else(|| {
                    input(format!(
                        "--provider mock needs --fixtures or ${ENV_MOCK_FIXTURES}"
                    ))
                })?;
            let mock = MockProvider::load(&path).map_err(input)?;
            Ok((Arc::new(mock), CompletionParams::default()))
        }
        ProviderArg::Live => {
            let config = ProviderConfig::from_env()
                .ok_or_else(|| input("--provider live needs JARGON_API_KEY or OPENAI_API_KEY"))?;
            let params = match &config.model_name {
                Some(model) => CompletionParams::with_model(model.clone()),
                None => CompletionParams::default(),
            };
            Ok((Arc::new(OpenAiProvider::new(config)), params))
        }
    }
}

async fn replay(args: ReplayArgs) -> Result<(), Failure> {
    let mut options = match args.mode {
        ModeArg::General => ReplayOptions::general(),
        ModeArg::Personalized => {
            let path = args
                .profile
                .as_ref()
                .ok_or_else(|| input("--mode personalized needs --profile"))?;
            let profile: UserProfile = read_json(path)?;
            if profile.mode() != Mode::Personalized {
                return Err(input(format!(
                    "{}: background_text is empty",
                    path.display()
                )));
            }
            ReplayOptions::personalized(profile)
        }
    };
    options.realtime = args.realtime;
    options.record_latency = args.latency;
    let (provider, params) = provider(&args.provider)?;
    let gateway = Gateway::new(provider).with_params(params);
    let report: SessionReport = run_replay_file(&args.transcript, &gateway, &options)
        .await
        .map_err(input)?;
    write_json(&args.out, &report)?;
    if report.skipped_segments.is_empty() {
        Ok(())
    } else {
        Err(Failure::Provider(format!(
            "{} of {} segments skipped after provider errors",
            report.skipped_segments.len(),
            report.segments
        )))
    }
}

fn diff(args: DiffArgs) -> Result<(), Failure> {
    let general: SessionReport = read_json(&args.general)?;
    let personalized: SessionReport = read_json(&args.personalized)?;
    let report = compare_modes(&general, &personalized).map_err(input)?;
    write_json(&args.out, &report)
}

fn rate(args: RateArgs) -> Result<(), Failure> {
    let mut sheets = Vec::new();
    for path in &args.sheets {
        let value: serde_json::Value = read_json(path)?;
        let parsed = if value.is_array() {
            serde_json::from_value::<Vec<RatingSheet>>(value)
        } else {
            serde_json::from_value::<RatingSheet>(value).map(|s| vec![s])
        };
        sheets.extend(parsed.map_err(|e| input(format!("{}: {e}", path.display())))?);
    }
    let summary = compute_helpful_rate(&sheets).map_err(input)?;
    write_json(&args.out, &summary)
}

async fn serve(args: ServeArgs) -> Result<(), Failure> {
    let mut config = match &args.config {
        Some(path) => ServiceConfig::load(path).map_err(input)?,
        None => ServiceConfig::default(),
    };
    if let Some(v) = args.listen {
        config.listen = v;
    }
    if let Some(v) = args.tick_ms {
        config.tick_ms = v;
    }
    if let Some(v) = args.min_display_ms {
        config.min_display_ms = v;
    }
    if let Some(v) = args.silence_flush_ms {
        config.silence_flush_ms = v;
    }
    if args.database.is_some() {
        config.database = args.database.clone();
    }

    let (provider, params) = provider(&args.provider)?;
    let gateway = Arc::new(Gateway::new(provider).with_params(params));
    let store: Arc<dyn SessionStore> = match &config.database {
        Some(path) => Arc::new(SqliteStore::open(path).map_err(input)?),
        None => Arc::new(MemoryStore::new()),
    };
    let hub = Hub::new(gateway, store, RuntimeSettings::from(&config));
    let listener = tokio::net::TcpListener::bind(config.listen)
        .await
        .map_err(|e| input(format!("{}: {e}", config.listen)))?;
    tracing::info!(addr = %config.listen, "listening");
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    jargon_service::http::serve(listener, hub, shutdown)
        .await
        .map_err(input)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Replay(args) => replay(args).await,
        Command::Diff(args) => diff(args),
        Command::Rate(args) => rate(args),
        Command::Serve(args) => serve(args).await,
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            let (Failure::Input(message) | Failure::Provider(message)) = &failure;
            eprintln!("jargon: {message}");
            ExitCode::from(failure.code())
        }
    }
}

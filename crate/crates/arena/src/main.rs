use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use arena_core::config::ServerConfig;
use arena_core::gateway::{ChallengeSummary, ModelCard};
use arena_core::sim::{run_scenario, ScenarioSpec};
use arena_core::LeaderboardEntry;
use arena::{serve, Client};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "arena", version, about = "Live forecasting arena: service, simulator and operator CLI")]
struct Cli {
    /// Server configuration (TOML).
    #[arg(long, global = true, env = "ARENA_CONFIG")]
    config: Option<PathBuf>,
    /// Base URL of a running instance; defaults to the configured listen address.
    #[arg(long, global = true, env = "ARENA_SERVER")]
    server: Option<String>,
    /// Print raw JSON instead of a table.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the live service.
    Serve,
    /// Deterministic simulations.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
    /// Participation-adjusted leaderboard of a running instance.
    Leaderboard(LeaderboardArgs),
    /// Registered models.
    Models {
        #[command(subcommand)]
        command: ListCommand,
    },
    /// Challenges of a running instance.
    Challenges {
        #[command(subcommand)]
        command: ChallengeCommand,
    },
}

#[derive(Debug, Subcommand)]
enum SimCommand {
    /// Run a scenario file and emit its JSON report.
    Run {
        file: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum ListCommand {
    List,
}

#[derive(Debug, Subcommand)]
enum ChallengeCommand {
    List {
        /// announced, registration, active or closed.
        #[arg(long)]
        state: Option<String>,
        #[command(flatten)]
        scope: ScopeArgs,
    },
}

#[derive(Debug, Args)]
struct ScopeArgs {
    #[arg(long)]
    domain: Option<String>,
    /// ISO-8601 step, e.g. PT1H.
    #[arg(long)]
    frequency: Option<String>,
    /// ISO-8601 horizon, e.g. PT24H.
    #[arg(long)]
    horizon: Option<String>,
}

impl ScopeArgs {
    fn query(&self) -> Vec<(&'static str, String)> {
        [
            ("domain", &self.domain),
            ("frequency", &self.frequency),
            ("horizon", &self.horizon),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
        .collect()
    }
}

#[derive(Debug, Args)]
struct LeaderboardArgs {
    /// 7d, 30d, 90d or 365d.
    #[arg(long)]
    window: String,
    #[command(flatten)]
    scope: ScopeArgs,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match rt.block_on(run(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<(ServerConfig, PathBuf)> {
    let path = path.context("no configuration: pass --config FILE or set ARENA_CONFIG")?;
    let config = ServerConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((config, base))
}

fn client(cli: &Cli) -> anyhow::Result<Client> {
    if let Some(url) = &cli.server {
        return Ok(Client::new(url.clone()));
    }
    match cli.config.as_deref() {
        Some(path) => Ok(Client::new(load_config(Some(path))?.0.listen)),
        None => Ok(Client::new("127.0.0.1:8080")),
    }
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

async fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match &cli.command {
        Command::Serve => {
            let (config, base) = load_config(cli.config.as_deref())?;
            serve(config, base).await?;
        }
        Command::Sim {
            command: SimCommand::Run { file, report },
        } => {
            let spec = ScenarioSpec::load(file).with_context(|| format!("loading {}", file.display()))?;
            let result = tokio::task::spawn_blocking(move || run_scenario(&spec)).await??;
            let json = result.to_json();
            match report {
                Some(path) => std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?,
                None => println!("{json}"),
            }
            for a in &result.assertions {
                let verdict = if a.passed { "ok  " } else { "FAIL" };
                eprintln!("{verdict} {} {}", serde_json::to_string(&a.assertion)?, a.detail);
            }
            eprintln!(
                "{}: {} ticks, {} challenges closed, {} leakage violations",
                result.scenario,
                result.ticks,
                result.challenges_closed,
                result.leakage_violations.len()
            );
            if !result.passed {
                eprintln!("scenario assertions failed");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Leaderboard(args) => {
            let mut query = args.scope.query();
            query.push(("window", args.window.clone()));
            let entries: Vec<LeaderboardEntry> = client(&cli)?.get("/v1/leaderboard", &query).await?;
            if cli.json {
                print_json(&entries)?;
            } else {
                println!(
                    "{:>4}  {:<8} {:<32} {:>10} {:>10} {:>8} {:>9}",
                    "rank", "model", "name", "raw", "adjusted", "part.", "covered"
                );
                for e in &entries {
                    println!(
                        "{:>4}  {:<8} {:<32} {:>10.4} {:>10.4} {:>7.1}% {:>4}/{:<4}",
                        e.rank,
                        e.model_id,
                        e.display_name,
                        e.raw_mase,
                        e.adjusted_mase,
                        e.participation_rate * 100.0,
                        e.coverage_count,
                        e.n_available
                    );
                }
            }
        }
        Command::Models {
            command: ListCommand::List,
        } => {
            let models: Vec<ModelCard> = client(&cli)?.get("/v1/models", &[]).await?;
            if cli.json {
                print_json(&models)?;
            } else {
                println!("{:<8} {:<32} {:<24} {:<10} {:<8} registered", "model", "name", "architecture", "size", "ext.data");
                for m in &models {
                    println!(
                        "{:<8} {:<32} {:<24} {:<10} {:<8} {}",
                        m.model_id,
                        m.declared_name_version,
                        m.architecture_class,
                        m.approx_size,
                        m.external_data_used,
                        m.registered_at.to_rfc3339()
                    );
                }
            }
        }
        Command::Challenges {
            command: ChallengeCommand::List { state, scope },
        } => {
            let mut query = scope.query();
            if let Some(s) = state {
                query.push(("state", s.clone()));
            }
            let challenges: Vec<ChallengeSummary> = client(&cli)?.get("/v1/challenges", &query).await?;
            if cli.json {
                print_json(&challenges)?;
            } else {
                println!("{:<36} {:<12} {:<13} {:<25} series", "challenge", "stage", "bucket", "t_p");
                for c in &challenges {
                    println!(
                        "{:<36} {:<12} {:<13} {:<25} {}",
                        c.challenge_id,
                        c.stage.to_string(),
                        format!("{}/{}/{}", c.domain, c.frequency, c.horizon),
                        c.t_p.to_rfc3339(),
                        c.series.len()
                    );
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

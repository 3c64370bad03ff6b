use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use geosquad::engine::ScriptMode;
use geosquad_cli::app::{engine_with_memories, load_config, AppError};
use geosquad_cli::commands::{cmd_bench, cmd_chat, cmd_gen, BenchArgs, ChatArgs, GenArgs};
use geosquad_cli::service::{serve, AppState};

#[derive(Parser)]
#[command(name = "geosquad", version, about = "Multi-agent geospatial copilot")]
struct Cli {
    /// TOML engine config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the task dataset and memory stores.
    Gen {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        per_agent: Option<usize>,
        /// 250 tasks per agent.
        #[arg(long)]
        full: bool,
        /// Leave a template out (repeatable).
        #[arg(long = "skip-template", hide = true)]
        skip_templates: Vec<String>,
    },
    /// Run strategies over the dataset and write reports.
    Bench {
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated strategies or variant labels (`hybrid-ts-wm`), or `all`.
        #[arg(long)]
        strategy: Vec<String>,
        /// Register only the first N toolkits.
        #[arg(long)]
        domains: Option<usize>,
        /// Context budget in tokens.
        #[arg(long)]
        budget: Option<u32>,
        /// Exit 0 even when runs overflow the context.
        #[arg(long)]
        allow_failures: bool,
        /// Scripted playback: faithful, injected_failure or drop_last_step.
        #[arg(long)]
        script_mode: Option<ScriptMode>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Accepted for symmetry with `gen`; the dataset on disk decides the size.
        #[arg(long, hide = true)]
        full: bool,
    },
    /// Run one prompt with the hybrid strategy.
    Chat {
        prompt: Option<String>,
        #[arg(long)]
        budget: Option<u32>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

fn run(cli: Cli) -> Result<String, AppError> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Gen { seed, per_agent, full, skip_templates } => {
            cmd_gen(config, &GenArgs { seed, per_agent, full, skip_templates })
        }
        Command::Bench { seed, strategy, domains, budget, allow_failures, script_mode, out, full: _ } => cmd_bench(
            config,
            &BenchArgs { seed, strategies: strategy, domains, budget, allow_failures, script_mode, out },
        ),
        Command::Chat { prompt, budget } => cmd_chat(config, &ChatArgs { prompt: prompt.unwrap_or_default(), budget }),
        Command::Serve { addr } => {
            let state = AppState::new(engine_with_memories(config)?);
            let rt = tokio::runtime::Runtime::new().map_err(|e| AppError::failed(e.to_string()))?;
            rt.block_on(serve(state, addr)).map_err(|e| AppError::failed(format!("serve {addr}: {e}")))?;
            Ok(String::new())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code.clamp(1, 255) as u8)
        }
    }
}

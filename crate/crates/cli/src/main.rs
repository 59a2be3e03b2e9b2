//! `seedline`: one subcommand per pipeline stage.

mod commands;
mod context;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use seedline_core::config::PipelineConfig;

use commands::{curriculum, eval, langid, mono, pack, para, reward, tok};
use context::{CliResult, Context};

#[derive(Parser)]
#[command(name = "seedline", version, about = "Corpus, curriculum and evaluation pipeline for translation LLMs")]
struct Cli {
    /// JSON pipeline config; unknown keys are rejected.
    #[arg(long, global = true, env = "SEEDLINE_CONFIG")]
    config: Option<PathBuf>,
    /// Use in-process stubs for every model service.
    #[arg(long, global = true)]
    stub: bool,
    /// Overrides the config seed (and SEEDLINE_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Language identification profiles.
    #[command(subcommand)]
    Langid(langid::LangidCmd),
    /// Byte-level BPE tokenizer.
    #[command(subcommand)]
    Tok(tok::TokCmd),
    /// Monolingual quality tiering, rewriting and balancing.
    #[command(subcommand)]
    Mono(mono::MonoCmd),
    /// Parallel data: alignment, filtering, pseudo-parallel rounds.
    #[command(subcommand)]
    Para(para::ParaCmd),
    /// Delimiters, prompt templates and sequence packing.
    #[command(subcommand)]
    Pack(pack::PackCmd),
    /// Stage plans, mixture sampling and the LR schedule.
    #[command(subcommand)]
    Curriculum(curriculum::CurriculumCmd),
    /// Round-trip and preference rewards.
    #[command(subcommand)]
    Reward(reward::RewardCmd),
    /// Score aggregation and human evaluation.
    #[command(subcommand)]
    Eval(eval::EvalCmd),
}

impl Command {
    fn family(&self) -> &'static str {
        match self {
            Command::Langid(_) => "langid",
            Command::Tok(_) => "tok",
            Command::Mono(_) => "mono",
            Command::Para(_) => "para",
            Command::Pack(_) => "pack",
            Command::Curriculum(_) => "curriculum",
            Command::Reward(_) => "reward",
            Command::Eval(_) => "eval",
        }
    }
}

fn load_config(cli: &Cli) -> CliResult<PipelineConfig> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    config.apply_env(|k| std::env::var(k).ok())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run(cli: Cli) -> CliResult {
    let config = load_config(&cli)?;
    let command_line: Vec<String> = std::env::args().skip(1).collect();
    let ctx = Context::new(config, cli.stub, format!("{} {}", cli.command.family(), command_line.join(" ")));
    match &cli.command {
        Command::Langid(c) => langid::run(&ctx, c),
        Command::Tok(c) => tok::run(&ctx, c),
        Command::Mono(c) => mono::run(&ctx, c),
        Command::Para(c) => para::run(&ctx, c),
        Command::Pack(c) => pack::run(&ctx, c),
        Command::Curriculum(c) => curriculum::run(&ctx, c),
        Command::Reward(c) => reward::run(&ctx, c),
        Command::Eval(c) => eval::run(&ctx, c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(1)
        }
    }
}

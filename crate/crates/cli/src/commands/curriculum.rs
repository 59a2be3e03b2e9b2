use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Subcommand};
use seedline_core::curriculum::{lr_at, stage_runner, validate_plan, MixtureSpec, RunnerOptions, SourceItem, SourceSampler, StagePlan};
use seedline_core::eval::render_table;
use seedline_core::io;

use crate::context::{read_json, sci, CliError, CliResult, Context};

#[derive(Subcommand)]
pub enum CurriculumCmd {
    /// Check a stage plan; exits 1 listing every violation.
    Validate(PlanArgs),
    /// Emit the sequence order for a plan over token-counted sources.
    Run(RunArgs),
    /// Learning rate at a step under the configured schedule.
    Lr(LrArgs),
    /// Empirical source shares from repeated mixture draws.
    Sample(SampleArgs),
}

#[derive(Args)]
pub struct PlanArgs {
    /// Defaults to the config's curriculum section.
    #[arg(long)]
    plan: Option<PathBuf>,
}

#[derive(Args)]
pub struct RunArgs {
    #[command(flatten)]
    plan: PlanArgs,
    /// JSON object mapping source id to a list of {text, tokens}.
    #[arg(long)]
    sources: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    cycle: bool,
}

#[derive(Args)]
pub struct LrArgs {
    #[arg(long)]
    step: u64,
}

#[derive(Args)]
pub struct SampleArgs {
    /// JSON MixtureSpec.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 1_000_000)]
    draws: u64,
}

fn load_plan(ctx: &Context, a: &PlanArgs) -> CliResult<StagePlan> {
    match (&a.plan, &ctx.config.curriculum) {
        (Some(p), _) => read_json(p),
        (None, Some(plan)) => Ok(plan.clone()),
        (None, None) => Err(CliError::new("usage", "no --plan given and the config has no curriculum section")),
    }
}

pub fn run(ctx: &Context, cmd: &CurriculumCmd) -> CliResult {
    match cmd {
        CurriculumCmd::Validate(a) => {
            let violations = validate_plan(&load_plan(ctx, a)?);
            if violations.is_empty() {
                println!("plan ok");
                return Ok(());
            }
            Err(CliError::new("plan", serde_json::to_string(&violations)?))
        }
        CurriculumCmd::Run(a) => {
            let plan = load_plan(ctx, &a.plan)?;
            let sources: BTreeMap<String, Vec<SourceItem>> = read_json(&a.sources)?;
            let emissions = stage_runner(&plan, &sources, ctx.config.seed, RunnerOptions { cycle: a.cycle })?;
            io::write_jsonl(&a.out, &emissions)?;
            let mut inputs = vec![a.sources.as_path()];
            if let Some(p) = &a.plan.plan {
                inputs.push(p);
            }
            ctx.finish(ctx.manifest(), &inputs, &[&a.out], &[("sequences", emissions.len() as u64)])
        }
        CurriculumCmd::Lr(a) => {
            println!("{}", sci(lr_at(a.step, &ctx.config.lr)?));
            Ok(())
        }
        CurriculumCmd::Sample(a) => {
            let spec: MixtureSpec = read_json(&a.spec)?;
            let mut sampler = SourceSampler::new(&spec, ctx.config.seed)?;
            let mut hits = vec![0u64; spec.sources.len()];
            for _ in 0..a.draws {
                hits[sampler.sample_index()] += 1;
            }
            let weights = spec.normalized_weights();
            let rows: Vec<Vec<String>> = spec
                .sources
                .iter()
                .enumerate()
                .map(|(i, s)| vec![s.id.clone(), format!("{:.4}", weights[i]), format!("{:.4}", hits[i] as f64 / a.draws.max(1) as f64)])
                .collect();
            print!("{}", render_table(&["source", "target", "observed"].map(String::from), &rows));
            Ok(())
        }
    }
}

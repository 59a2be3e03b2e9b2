use std::path::PathBuf;

use clap::{Args, Subcommand, ValueEnum};
use seedline_core::config::ServiceRole;
use seedline_core::io;
use seedline_core::reward::{assemble_rollout_batch, dual_reward, preference_reward, rejection_sample, Query, RewardFn, RolloutParams};
use seedline_core::tokenizer::{reserved_tags, BpeVocab};
use seedline_core::Lang;
use serde::{Deserialize, Serialize};

use crate::context::{load_vocab, read_jsonl, read_texts, CliResult, Context};

#[derive(Subcommand)]
pub enum RewardCmd {
    /// Round-trip similarity reward for one text.
    Dual(DualArgs),
    /// Preference scores for candidate translations.
    Pref(PrefArgs),
    /// Keep the top-k candidates per source by preference score.
    Select(SelectArgs),
    /// Sample, score and collect rollouts for a query set.
    Batch(BatchArgs),
}

#[derive(Args)]
pub struct DualArgs {
    #[arg(long)]
    text: String,
    #[arg(long)]
    src: Lang,
    #[arg(long)]
    tgt: Lang,
}

#[derive(Args)]
pub struct PrefArgs {
    #[arg(long)]
    src_text: String,
    /// One candidate per line.
    #[arg(long)]
    candidates: PathBuf,
}

#[derive(Args)]
pub struct SelectArgs {
    /// JSONL of {src_text, candidates}.
    #[arg(long)]
    input: PathBuf,
    #[arg(short, long)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum RewardKindArg {
    Dual,
    Pref,
}

#[derive(Args)]
pub struct BatchArgs {
    /// JSONL of {query_id, src_text, src_lang, tgt_lang}.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, value_enum, default_value = "dual")]
    reward: RewardKindArg,
    /// Defaults to rollouts_per_query from the config.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Deserialize)]
struct SelectInput {
    src_text: String,
    candidates: Vec<String>,
}

#[derive(Serialize)]
struct Selected<'a> {
    src_text: &'a str,
    selected: Vec<&'a str>,
    scores: Vec<f64>,
}

pub fn run(ctx: &Context, cmd: &RewardCmd) -> CliResult {
    let cfg = &ctx.config;
    match cmd {
        RewardCmd::Dual(a) => {
            let translator = ctx.service(ServiceRole::Translator)?;
            let (score, record) = dual_reward(&a.text, (a.src, a.tgt), &translator, &translator, cfg.reward.similarity, &cfg.services.decode)?;
            println!("{}", serde_json::json!({ "score": score, "round_trip": record }));
            Ok(())
        }
        RewardCmd::Pref(a) => {
            let scorer = ctx.service(ServiceRole::PreferenceScorer)?;
            let candidates = read_texts(&a.candidates)?;
            for (c, s) in candidates.iter().zip(preference_reward(&a.src_text, &candidates, &scorer)?) {
                println!("{}", serde_json::json!({ "candidate": c, "score": s.value }));
            }
            Ok(())
        }
        RewardCmd::Select(a) => {
            let scorer = ctx.service(ServiceRole::PreferenceScorer)?;
            let inputs: Vec<SelectInput> = read_jsonl(&a.input)?;
            let mut out = Vec::with_capacity(inputs.len());
            for input in &inputs {
                let scores = preference_reward(&input.src_text, &input.candidates, &scorer)?;
                let keep = rejection_sample(&input.candidates, &scores, a.k)?;
                out.push(Selected {
                    src_text: &input.src_text,
                    selected: keep.iter().map(|&i| input.candidates[i].as_str()).collect(),
                    scores: keep.iter().map(|&i| scores[i].value).collect(),
                });
            }
            io::write_jsonl(&a.out, &out)?;
            ctx.finish(ctx.manifest(), &[&a.input], &[&a.out], &[("sources", out.len() as u64)])
        }
        RewardCmd::Batch(a) => {
            let queries: Vec<Query> = read_jsonl(&a.queries)?;
            let policy = ctx.service(ServiceRole::Translator)?;
            let vocab = match (&a.vocab, &cfg.paths.vocab) {
                (None, None) => BpeVocab::base(reserved_tags()),
                _ => load_vocab(ctx, &a.vocab)?,
            };
            let scorer;
            let reward = match a.reward {
                RewardKindArg::Dual => RewardFn::Dual { backward: &policy, params: cfg.reward.similarity },
                RewardKindArg::Pref => {
                    scorer = ctx.service(ServiceRole::PreferenceScorer)?;
                    RewardFn::Preference { scorer: &scorer }
                }
            };
            let params = RolloutParams { temperature: cfg.reward.temperature, seed: cfg.seed, max_in_flight: cfg.max_in_flight };
            let n = a.n.unwrap_or(cfg.reward.rollouts_per_query);
            let batch = assemble_rollout_batch(&queries, n, &policy, &reward, &vocab, &params)?;
            io::write_json(&a.out, &batch)?;
            for (id, r) in batch.report() {
                println!("{id}\tmean {:.4}\tmin {:.4}\tmax {:.4}", r.mean, r.min, r.max);
            }
            let counts = [("queries", batch.queries.len() as u64), ("failures", batch.failures.len() as u64), ("tokens", batch.batch_token_count)];
            ctx.finish(ctx.manifest(), &[&a.queries], &[&a.out], &counts)
        }
    }
}

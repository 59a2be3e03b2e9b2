use std::path::PathBuf;

use clap::{Args, Subcommand};
use seedline_core::config::ServiceRole;
use seedline_core::io;
use seedline_core::langid::LanguageProfiles;
use seedline_core::parallel::{
    alignment_score, filter_pair, generate_pseudo_parallel, rewrite_pairs, run_boost_round, train_alignment, AlignmentModel, BoostRoundState,
    Generated, RejectedPair, RoundConfig, RoundInputs, RoundServices,
};
use seedline_core::{Document, Lang, SentencePair};

use crate::context::{read_json, read_jsonl, CliResult, Context};

#[derive(Subcommand)]
pub enum ParaCmd {
    /// Train a lexical translation table on one direction's pairs.
    AlignTrain(AlignTrainArgs),
    /// Fill align_score for every pair.
    Score(ScoreArgs),
    /// Split pairs into accepted and rejected by LID, alignment and length.
    Filter(FilterArgs),
    /// Translate monolingual documents into pseudo-parallel pairs.
    Pseudo(PseudoArgs),
    /// Paraphrase the target side of existing pairs.
    Rewrite(RewriteArgs),
    /// One full generate, rewrite and filter round.
    Round(RoundArgs),
}

#[derive(Args)]
pub struct AlignTrainArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to em_iterations from the config.
    #[arg(long)]
    iterations: Option<u32>,
}

#[derive(Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct FilterArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    rejected: Option<PathBuf>,
}

#[derive(Args)]
pub struct PseudoArgs {
    #[arg(long)]
    docs: PathBuf,
    #[arg(long)]
    tgt: Lang,
    #[arg(long, default_value_t = 1)]
    round: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct RewriteArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct RoundArgs {
    /// Monolingual document shards to translate.
    #[arg(long)]
    docs: Vec<PathBuf>,
    /// Pair shards from earlier rounds to rewrite.
    #[arg(long)]
    pairs: Vec<PathBuf>,
    /// Comma-separated target languages.
    #[arg(long, value_delimiter = ',', default_value = "en")]
    tgt: Vec<Lang>,
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Defaults to paths.shards.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Round state; read if present and rewritten afterwards.
    #[arg(long)]
    state: Option<PathBuf>,
}

fn load_profiles(ctx: &Context, explicit: &Option<PathBuf>) -> CliResult<LanguageProfiles> {
    Ok(LanguageProfiles::load(ctx.path(explicit, "profiles")?)?)
}

pub fn run(ctx: &Context, cmd: &ParaCmd) -> CliResult {
    let cfg = &ctx.config;
    match cmd {
        ParaCmd::AlignTrain(a) => {
            let pairs: Vec<SentencePair> = read_jsonl(&a.pairs)?;
            let model = train_alignment(&pairs, a.iterations.unwrap_or(cfg.em_iterations as u32))?;
            model.save(&a.out)?;
            let ll = model.log_likelihoods.last().copied().unwrap_or(f64::NAN);
            println!("{} pairs, final log-likelihood {ll:.6}", pairs.len());
            ctx.finish(ctx.manifest(), &[&a.pairs], &[&a.out], &[("pairs", pairs.len() as u64)])
        }
        ParaCmd::Score(a) => {
            let model = AlignmentModel::load(&a.model)?;
            let mut pairs: Vec<SentencePair> = read_jsonl(&a.pairs)?;
            for p in &mut pairs {
                p.align_score = Some(alignment_score(p, &model, cfg.thresholds.tau_align)?);
            }
            io::write_jsonl(&a.out, &pairs)?;
            ctx.finish(ctx.manifest(), &[&a.pairs, &a.model], &[&a.out], &[("pairs", pairs.len() as u64)])
        }
        ParaCmd::Filter(a) => {
            let model = AlignmentModel::load(&a.model)?;
            let profiles = load_profiles(ctx, &a.profiles)?;
            let pairs: Vec<SentencePair> = read_jsonl(&a.pairs)?;
            let (mut kept, mut dropped) = (Vec::new(), Vec::new());
            for mut p in pairs {
                let v = filter_pair(&p, &profiles, &model, &cfg.thresholds)?;
                p.lid_confidence = v.lid_confidence;
                p.align_score = Some(v.align_score);
                if v.accepted {
                    kept.push(p);
                } else {
                    dropped.push(RejectedPair { pair: p, reasons: v.reasons });
                }
            }
            io::write_jsonl(&a.out, &kept)?;
            let mut outputs = vec![a.out.as_path()];
            if let Some(r) = &a.rejected {
                io::write_jsonl(r, &dropped)?;
                outputs.push(r);
            }
            println!("accepted {} rejected {}", kept.len(), dropped.len());
            ctx.finish(ctx.manifest(), &[&a.pairs, &a.model], &outputs, &[("accepted", kept.len() as u64), ("rejected", dropped.len() as u64)])
        }
        ParaCmd::Pseudo(a) => {
            let docs: Vec<Document> = read_jsonl(&a.docs)?;
            let translator = ctx.service(ServiceRole::Translator)?;
            let decode = cfg.services.decode.clone();
            let generated = generate_pseudo_parallel(&docs, a.tgt, &translator, &decode, a.round, cfg.max_in_flight)?;
            let mut pairs = Vec::new();
            let mut skipped = 0u64;
            for g in generated {
                match g {
                    Generated::Pair(p) => pairs.push(p),
                    Generated::Skipped { .. } => skipped += 1,
                }
            }
            io::write_jsonl(&a.out, &pairs)?;
            println!("generated {} skipped {skipped}", pairs.len());
            ctx.finish(ctx.manifest(), &[&a.docs], &[&a.out], &[("pairs", pairs.len() as u64), ("skipped", skipped)])
        }
        ParaCmd::Rewrite(a) => {
            let pairs: Vec<SentencePair> = read_jsonl(&a.pairs)?;
            let rewriter = ctx.service(ServiceRole::Paraphraser)?;
            let mut out = Vec::new();
            let mut skipped = 0u64;
            for r in rewrite_pairs(pairs, &rewriter, cfg.max_in_flight) {
                match r {
                    Ok(p) => out.push(p),
                    Err(e) => {
                        log::warn!("{e}");
                        skipped += 1;
                    }
                }
            }
            io::write_jsonl(&a.out, &out)?;
            ctx.finish(ctx.manifest(), &[&a.pairs], &[&a.out], &[("pairs", out.len() as u64), ("skipped", skipped)])
        }
        ParaCmd::Round(a) => {
            let profiles = load_profiles(ctx, &a.profiles)?;
            let out_dir = ctx.path(&a.out_dir, "shards")?;
            let translator = ctx.service(ServiceRole::Translator)?;
            let rewriter = ctx.service(ServiceRole::Paraphraser)?;
            let state_path = a.state.clone().unwrap_or_else(|| out_dir.join("state.json"));
            let state = if state_path.exists() { read_json(&state_path)? } else { BoostRoundState::new(translator.name()) };
            let config = RoundConfig {
                tgt_langs: a.tgt.clone(),
                thresholds: cfg.thresholds.clone(),
                em_iterations: cfg.em_iterations as u32,
                decode: cfg.services.decode.clone(),
                seed: cfg.seed,
                max_in_flight: cfg.max_in_flight,
            };
            let inputs = RoundInputs { docs: a.docs.clone(), pairs: a.pairs.clone() };
            let services = RoundServices { translator: &translator, rewriter: &rewriter, profiles: &profiles };
            let next = run_boost_round(&state, &inputs, &out_dir, &config, &services)?;
            io::write_json(&state_path, &next)?;
            println!("{}", serde_json::to_string(&next.counts)?);
            let inputs: Vec<&std::path::Path> = a.docs.iter().chain(&a.pairs).map(|p| p.as_path()).collect();
            let counts: Vec<(&str, u64)> = next.counts.iter().map(|(k, v)| (k.as_str(), *v)).collect();
            ctx.finish(ctx.manifest(), &inputs, &[&out_dir], &counts)
        }
    }
}

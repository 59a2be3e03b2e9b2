use std::path::PathBuf;

use clap::{Args, Subcommand};
use seedline_core::io;
use seedline_core::packing::{
    format_pair, format_segments, pack, render_prompt, token_sidecar, validate_cot, CotRecord, DelimiterStrategy, TemplateLibrary,
};
use seedline_core::tokenizer::{reserved_tags, BpeVocab};
use seedline_core::{Lang, SentencePair};

use crate::context::{load_vocab, read_jsonl, CliError, CliResult, Context};

#[derive(Subcommand)]
pub enum PackCmd {
    /// Format pairs as training strings, one JSON string per line.
    Format(FormatArgs),
    /// Render one prompt template.
    Render(RenderArgs),
    /// Check CoT records for missing parts; exits 1 if any are incomplete.
    ValidateCot(ValidateCotArgs),
    /// Format and pack pairs into fixed-length sequences.
    Pack(PackArgs),
}

#[derive(Args)]
pub struct StrategyArgs {
    #[arg(long, value_parser = parse_strategy)]
    strategy: DelimiterStrategy,
    /// Template id, required by the natural-language strategy.
    #[arg(long)]
    template: Option<String>,
    /// Drop the source language from the rendered prompt.
    #[arg(long)]
    no_src_lang: bool,
    #[arg(long)]
    templates: Option<PathBuf>,
}

fn parse_strategy(s: &str) -> Result<DelimiterStrategy, String> {
    s.parse().map_err(|e: seedline_core::packing::PackingError| e.to_string())
}

#[derive(Args)]
pub struct FormatArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    strategy: StrategyArgs,
}

#[derive(Args)]
pub struct RenderArgs {
    #[arg(long)]
    template: String,
    #[arg(long)]
    src: Lang,
    #[arg(long)]
    tgt: Lang,
    #[arg(long, default_value = "")]
    text: String,
    #[arg(long)]
    no_src_lang: bool,
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Args)]
pub struct ValidateCotArgs {
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
pub struct PackArgs {
    #[arg(long)]
    pairs: PathBuf,
    /// Vocabulary file; without it the byte-level base vocabulary is used.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Defaults to max_seq_len from the config.
    #[arg(long)]
    max_seq_len: Option<usize>,
    /// Packed sequences as JSONL; token ids go to `<out>.tokens`.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    strategy: StrategyArgs,
}

fn library(ctx: &Context, explicit: &Option<PathBuf>) -> CliResult<TemplateLibrary> {
    match explicit.as_ref().or(ctx.config.paths.templates.as_ref()) {
        Some(p) => Ok(TemplateLibrary::load(p)?),
        None => Ok(TemplateLibrary::default()),
    }
}

fn formatter(ctx: &Context, s: &StrategyArgs) -> CliResult<Option<seedline_core::packing::PromptTemplate>> {
    let Some(id) = &s.template else { return Ok(None) };
    let lib = library(ctx, &s.templates)?;
    let t = lib.get(id)?;
    Ok(Some(if s.no_src_lang { t.without_src_lang() } else { t.clone() }))
}

pub fn run(ctx: &Context, cmd: &PackCmd) -> CliResult {
    match cmd {
        PackCmd::Format(a) => {
            let pairs: Vec<SentencePair> = read_jsonl(&a.pairs)?;
            let template = formatter(ctx, &a.strategy)?;
            let lines = pairs.iter().map(|p| format_pair(p, a.strategy.strategy, template.as_ref())).collect::<Result<Vec<_>, _>>()?;
            io::write_jsonl(&a.out, &lines)?;
            ctx.finish(ctx.manifest(), &[&a.pairs], &[&a.out], &[("pairs", pairs.len() as u64)])
        }
        PackCmd::Render(a) => {
            let lib = library(ctx, &a.templates)?;
            let t = lib.get(&a.template)?;
            let t = if a.no_src_lang { t.without_src_lang() } else { t.clone() };
            println!("{}", render_prompt(&t, a.src, a.tgt, &a.text)?);
            Ok(())
        }
        PackCmd::ValidateCot(a) => {
            let records: Vec<CotRecord> = read_jsonl(&a.input)?;
            let mut bad = 0usize;
            for (i, r) in records.iter().enumerate() {
                let v = validate_cot(r);
                if !v.is_empty() {
                    bad += 1;
                    println!("{}", serde_json::json!({ "record": i + 1, "violations": v }));
                }
            }
            if bad > 0 {
                return Err(CliError::new("cot", format!("{bad} of {} records incomplete", records.len())));
            }
            println!("{} records complete", records.len());
            Ok(())
        }
        PackCmd::Pack(a) => {
            let pairs: Vec<SentencePair> = read_jsonl(&a.pairs)?;
            let vocab = match (&a.vocab, &ctx.config.paths.vocab) {
                (None, None) => BpeVocab::base(reserved_tags()),
                _ => load_vocab(ctx, &a.vocab)?,
            };
            let template = formatter(ctx, &a.strategy)?;
            let items = pairs.iter().map(|p| format_segments(p, a.strategy.strategy, template.as_ref())).collect::<Result<Vec<_>, _>>()?;
            let seqs = pack(items, &vocab, a.max_seq_len.unwrap_or(ctx.config.max_seq_len), a.strategy.strategy)?;
            let mut sidecar = a.out.clone().into_os_string();
            sidecar.push(".tokens");
            let sidecar = PathBuf::from(sidecar);
            io::write_jsonl(&a.out, &seqs)?;
            io::write_atomic(&sidecar, token_sidecar(&seqs).as_bytes())?;
            let tokens: usize = seqs.iter().map(|s| s.token_len).sum();
            println!("{} pairs -> {} sequences, {tokens} tokens", pairs.len(), seqs.len());
            let counts = [("pairs", pairs.len() as u64), ("sequences", seqs.len() as u64), ("tokens", tokens as u64)];
            ctx.finish(ctx.manifest(), &[&a.pairs], &[&a.out, &sidecar], &counts)
        }
    }
}

use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::{Args, Subcommand};
use seedline_core::config::ServiceRole;
use seedline_core::eval::render_table;
use seedline_core::io;
use seedline_core::mono::{
    balance_topics, exclude_tags, language_token_report, language_weight_gaps, refine_to_fixpoint, route_by_tier, tier_documents, BalanceSpec,
};
use seedline_core::Document;

use crate::context::{load_vocab, read_json, read_jsonl, CliResult, Context};

#[derive(Subcommand)]
pub enum MonoCmd {
    /// Assign a quality tier to every document.
    Tier(TierArgs),
    /// Keep High, paraphrase Medium, drop Low documents.
    Route(RouteArgs),
    /// Exclude tags and cap each tag's share of the kept documents.
    Balance(BalanceArgs),
    /// Per-language token counts and gaps to target weights.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct TierArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct RouteArgs {
    /// Tiered documents (untiered ones are tiered first with --refine).
    #[arg(long)]
    input: PathBuf,
    /// Directory for retained.jsonl and rewritten.jsonl.
    #[arg(long)]
    out_dir: PathBuf,
    /// Re-tier paraphrased output up to this many passes.
    #[arg(long)]
    refine: Option<usize>,
}

#[derive(Args)]
pub struct BalanceArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_share: f64,
    #[arg(long = "exclude-tag")]
    exclude: Vec<String>,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// JSON BalanceSpec whose per-language weights are compared.
    #[arg(long)]
    spec: Option<PathBuf>,
}

pub fn run(ctx: &Context, cmd: &MonoCmd) -> CliResult {
    match cmd {
        MonoCmd::Tier(a) => {
            let docs: Vec<Document> = read_jsonl(&a.input)?;
            let tiered: Vec<Document> = tier_documents(docs, &ctx.config.quality).collect::<Result<_, _>>()?;
            io::write_jsonl(&a.out, &tiered)?;
            ctx.finish(ctx.manifest(), &[&a.input], &[&a.out], &[("documents", tiered.len() as u64)])
        }
        MonoCmd::Route(a) => {
            let docs: Vec<Document> = read_jsonl(&a.input)?;
            let paraphraser = ctx.service(ServiceRole::Paraphraser)?;
            let (retained, rewritten, dropped) = match a.refine {
                Some(n) => {
                    let o = refine_to_fixpoint(docs, &ctx.config.quality, &paraphraser, n)?;
                    (o.retained, o.rewritten, o.dropped_count)
                }
                None => {
                    let o = route_by_tier(docs, &paraphraser)?;
                    (o.retained, o.rewritten, o.dropped_count)
                }
            };
            let (r, w) = (a.out_dir.join("retained.jsonl"), a.out_dir.join("rewritten.jsonl"));
            io::write_jsonl(&r, &retained)?;
            io::write_jsonl(&w, &rewritten)?;
            println!("retained {} rewritten {} dropped {}", retained.len(), rewritten.len(), dropped);
            let counts = [("retained", retained.len() as u64), ("rewritten", rewritten.len() as u64), ("dropped", dropped as u64)];
            ctx.finish(ctx.manifest(), &[&a.input], &[&r, &w], &counts)
        }
        MonoCmd::Balance(a) => {
            let docs: Vec<Document> = read_jsonl(&a.input)?;
            let excluded: BTreeSet<String> = a.exclude.iter().cloned().collect();
            let kept: Vec<Document> = exclude_tags(docs.iter().cloned(), &excluded).collect();
            let balanced = balance_topics(&kept, &BalanceSpec::new(a.max_share), ctx.config.seed)?;
            io::write_jsonl(&a.out, &balanced)?;
            println!("kept {} of {} documents", balanced.len(), docs.len());
            let counts = [("input", docs.len() as u64), ("after_exclusion", kept.len() as u64), ("output", balanced.len() as u64)];
            ctx.finish(ctx.manifest(), &[&a.input], &[&a.out], &counts)
        }
        MonoCmd::Report(a) => {
            let docs: Vec<Document> = read_jsonl(&a.input)?;
            let vocab = load_vocab(ctx, &a.vocab)?;
            let report = language_token_report(&docs, &vocab);
            let spec = match &a.spec {
                Some(p) => read_json(p)?,
                None => BalanceSpec::new(1.0),
            };
            let gaps = language_weight_gaps(&report, &spec);
            let rows: Vec<Vec<String>> = gaps
                .iter()
                .map(|(lang, gap)| {
                    let r = report.get(lang);
                    vec![
                        lang.code().to_string(),
                        r.map_or(0, |r| r.tokens).to_string(),
                        format!("{:.4}", r.map_or(0.0, |r| r.proportion)),
                        format!("{gap:+.4}"),
                    ]
                })
                .collect();
            let header = ["lang", "tokens", "share", "gap"].map(String::from);
            print!("{}", render_table(&header, &rows));
            Ok(())
        }
    }
}

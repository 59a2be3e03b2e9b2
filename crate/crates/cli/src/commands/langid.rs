use std::path::PathBuf;

use clap::{Args, Subcommand};
use seedline_core::langid::{classify, train_profiles, LanguageProfiles};
use seedline_core::Document;

use crate::context::{read_jsonl, CliResult, Context};

#[derive(Subcommand)]
pub enum LangidCmd {
    /// Train per-language n-gram profiles from a document corpus.
    Train(TrainArgs),
    /// Classify text or every document in a file.
    Classify(ClassifyArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory (defaults to paths.profiles).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    text: Option<String>,
    #[arg(long)]
    input: Option<PathBuf>,
}

pub fn run(ctx: &Context, cmd: &LangidCmd) -> CliResult {
    match cmd {
        LangidCmd::Train(a) => {
            let docs: Vec<Document> = read_jsonl(&a.corpus)?;
            let corpus: Vec<_> = docs.iter().map(|d| (d.lang, d.text().to_string())).collect();
            let profiles = train_profiles(&corpus)?;
            let out = ctx.path(&a.out, "profiles")?;
            profiles.save(&out)?;
            println!("trained {} profiles into {}", profiles.len(), out.display());
            ctx.finish(ctx.manifest(), &[&a.corpus], &[&out], &[("documents", docs.len() as u64), ("languages", profiles.len() as u64)])
        }
        LangidCmd::Classify(a) => {
            let profiles = LanguageProfiles::load(ctx.path(&a.profiles, "profiles")?)?;
            let texts: Vec<(String, String)> = match (&a.text, &a.input) {
                (Some(t), _) => vec![("-".to_string(), t.clone())],
                (None, Some(p)) => read_jsonl::<Document>(p)?.into_iter().map(|d| (d.id.clone(), d.text().to_string())).collect(),
                (None, None) => unreachable!("clap enforces one input"),
            };
            for (id, text) in texts {
                let c = classify(&text, &profiles)?;
                println!("{}", serde_json::json!({ "id": id, "lang": c.lang, "confidence": c.confidence }));
            }
            Ok(())
        }
    }
}

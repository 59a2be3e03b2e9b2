use std::path::PathBuf;

use clap::{Args, Subcommand};
use seedline_core::io;
use seedline_core::tokenizer::{corpus_stats, train_bpe};

use crate::context::{load_vocab, read_texts, CliError, CliResult, Context};

#[derive(Subcommand)]
pub enum TokCmd {
    /// Train a byte-level BPE vocabulary.
    Train(TrainArgs),
    /// Print the token ids of a text.
    Encode(EncodeArgs),
    /// Print the text of space-separated token ids.
    Decode(DecodeArgs),
    /// Compression statistics of a vocabulary over a corpus.
    Stats(StatsArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// `.jsonl` documents or plain text, one sample per line.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab_size: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EncodeArgs {
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    text: String,
}

#[derive(Args)]
pub struct DecodeArgs {
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    ids: String,
}

#[derive(Args)]
pub struct StatsArgs {
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
}

pub fn run(ctx: &Context, cmd: &TokCmd) -> CliResult {
    match cmd {
        TokCmd::Train(a) => {
            let texts = read_texts(&a.corpus)?;
            let vocab = train_bpe(&texts, a.vocab_size)?;
            let out = ctx.path(&a.out, "vocab")?;
            io::write_json(&out, &vocab)?;
            println!("{} tokens ({} merges) -> {}", vocab.len(), vocab.merges().len(), out.display());
            ctx.finish(ctx.manifest(), &[&a.corpus], &[&out], &[("texts", texts.len() as u64), ("vocab_size", vocab.len() as u64)])
        }
        TokCmd::Encode(a) => {
            let vocab = load_vocab(ctx, &a.vocab)?;
            let ids: Vec<String> = vocab.encode(&a.text).iter().map(u32::to_string).collect();
            println!("{}", ids.join(" "));
            Ok(())
        }
        TokCmd::Decode(a) => {
            let vocab = load_vocab(ctx, &a.vocab)?;
            let ids = a
                .ids
                .split_whitespace()
                .map(|s| s.parse::<u32>().map_err(|_| CliError::new("usage", format!("bad token id {s:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            println!("{}", vocab.decode(&ids)?);
            Ok(())
        }
        TokCmd::Stats(a) => {
            let vocab = load_vocab(ctx, &a.vocab)?;
            let stats = corpus_stats(&read_texts(&a.corpus)?, &vocab)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
            Ok(())
        }
    }
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use seedline_core::eval::{
    aggregate_groups, aggregate_human, categorize_with, column_scores, deduction_score, emit_scorecards, load_challenge_set, parse_metric_tsv,
    render_table, Column, DirectionGroup, HumanScore, Hypothesis, Precedence,
};
use seedline_core::io::{self, IoError};
use seedline_core::Lang;

use crate::context::{read_json, read_jsonl, CliError, CliResult, Context};

#[derive(Subcommand)]
pub enum EvalCmd {
    /// Direction group of one pair, or group sizes over all directions.
    Categorize(CategorizeArgs),
    /// Six-column average of a score row or a per-segment TSV.
    Agg(AggArgs),
    /// Per-direction and overall means of 0-4 human scores.
    Human(InputArgs),
    /// Mean per-item deduction from error counts.
    Deduct(DeductArgs),
    /// Pair hypotheses with challenge-set key points for raters.
    Scorecards(ScorecardArgs),
}

#[derive(Args)]
pub struct CategorizeArgs {
    #[arg(long, requires = "tgt", required_unless_present = "all")]
    src: Option<Lang>,
    #[arg(long)]
    tgt: Option<Lang>,
    #[arg(long, conflicts_with_all = ["src", "tgt"])]
    all: bool,
    /// Put en<->zh in the Chinese-centric groups.
    #[arg(long)]
    chinese_first: bool,
}

#[derive(Args)]
pub struct AggArgs {
    /// JSON object keyed by column name, or an array of six values in
    /// column order.
    #[arg(long, conflicts_with = "tsv", required_unless_present = "tsv")]
    row: Option<PathBuf>,
    /// Per-segment TSV: system, direction, segment_id, metric, score.
    #[arg(long)]
    tsv: Option<PathBuf>,
}

#[derive(Args)]
pub struct InputArgs {
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
pub struct DeductArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    major: Option<f64>,
    #[arg(long)]
    minor: Option<f64>,
}

#[derive(Args)]
pub struct ScorecardArgs {
    #[arg(long)]
    items: PathBuf,
    /// JSONL of {item_id, tgt_lang, system, text}.
    #[arg(long)]
    hyps: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn load_row(path: &Path) -> CliResult<BTreeMap<Column, f64>> {
    let value: serde_json::Value = read_json(path)?;
    let bad = |msg: String| CliError::new("eval", format!("{}: {msg}", path.display()));
    match value {
        serde_json::Value::Array(values) => {
            if values.len() != Column::ALL.len() {
                return Err(bad(format!("expected {} values, got {}", Column::ALL.len(), values.len())));
            }
            Column::ALL.into_iter().zip(values).map(|(c, v)| v.as_f64().map(|x| (c, x)).ok_or_else(|| bad(format!("{c} is not a number")))).collect()
        }
        other => serde_json::from_value(other).map_err(|e| bad(e.to_string())),
    }
}

fn precedence(ctx: &Context, chinese_first: bool) -> Precedence {
    if chinese_first {
        Precedence::ChineseFirst
    } else {
        ctx.config.eval.precedence
    }
}

pub fn run(ctx: &Context, cmd: &EvalCmd) -> CliResult {
    match cmd {
        EvalCmd::Categorize(a) => {
            let prec = precedence(ctx, a.chinese_first);
            if let (Some(src), Some(tgt)) = (a.src, a.tgt) {
                println!("{}", categorize_with(src, tgt, prec)?.label());
                return Ok(());
            }
            let mut counts: BTreeMap<DirectionGroup, usize> = BTreeMap::new();
            for (s, t) in Lang::directions() {
                *counts.entry(categorize_with(s, t, prec)?).or_insert(0) += 1;
            }
            let mut rows: Vec<Vec<String>> =
                DirectionGroup::ALL.iter().map(|g| vec![g.label().to_string(), counts.get(g).copied().unwrap_or(0).to_string()]).collect();
            rows.push(vec!["total".into(), counts.values().sum::<usize>().to_string()]);
            print!("{}", render_table(&["group".into(), "directions".into()], &rows));
            Ok(())
        }
        EvalCmd::Agg(a) => {
            if let Some(path) = &a.row {
                println!("{:.2}", aggregate_groups(&load_row(path)?)?.rounded);
                return Ok(());
            }
            let path = a.tsv.as_ref().expect("clap enforces one input");
            let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
            let table = column_scores(&parse_metric_tsv(&text)?, ctx.config.eval.precedence)?;
            let mut header = vec!["system".to_string(), "metric".to_string()];
            header.extend(Column::ALL.iter().map(|c| c.key().to_string()));
            header.push("avg".into());
            let mut rows = Vec::new();
            for ((system, metric), cols) in &table {
                let mut row = vec![system.clone(), metric.clone()];
                row.extend(Column::ALL.iter().map(|c| cols.get(c).map_or("-".to_string(), |v| format!("{v:.2}"))));
                row.push(aggregate_groups(cols).map_or("-".to_string(), |avg| format!("{:.2}", avg.rounded)));
                rows.push(row);
            }
            print!("{}", render_table(&header, &rows));
            Ok(())
        }
        EvalCmd::Human(a) => {
            let records: Vec<HumanScore> = read_jsonl(&a.input)?;
            let agg = aggregate_human(&records)?;
            let mut rows: Vec<Vec<String>> = agg.per_direction.iter().map(|(d, m)| vec![d.clone(), format!("{m:.2}")]).collect();
            rows.push(vec!["avg".into(), format!("{:.2}", agg.overall.rounded)]);
            print!("{}", render_table(&["direction".into(), "score".into()], &rows));
            Ok(())
        }
        EvalCmd::Deduct(a) => {
            let records: Vec<HumanScore> = read_jsonl(&a.input)?;
            let mut weights = ctx.config.eval.deduction;
            weights.major = a.major.unwrap_or(weights.major);
            weights.minor = a.minor.unwrap_or(weights.minor);
            println!("{}", deduction_score(&records, weights)?);
            Ok(())
        }
        EvalCmd::Scorecards(a) => {
            let items = load_challenge_set(&a.items)?;
            let hyps: Vec<Hypothesis> = read_jsonl(&a.hyps)?;
            let sheets = emit_scorecards(&items, &hyps)?;
            io::write_jsonl(&a.out, &sheets)?;
            ctx.finish(ctx.manifest(), &[&a.items, &a.hyps], &[&a.out], &[("worksheets", sheets.len() as u64)])
        }
    }
}

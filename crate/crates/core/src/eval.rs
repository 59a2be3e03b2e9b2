//! Direction grouping, metric and human score aggregation, deduction
//! scoring, challenge sets and rater worksheets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::IoError;
use crate::lang::Lang;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("source and target are both {0}")]
    SameLanguage(Lang),
    #[error("missing column {0}")]
    MissingColumn(Column),
    #[error("0-4 scores and deduction records cannot be mixed")]
    MixedModes,
    #[error("no records")]
    EmptyInput,
    #[error("record {0} needs exactly one of score or (major_errors, minor_errors)")]
    AmbiguousRecord(String),
    #[error("score {0} outside [0, 4]")]
    ScoreOutOfRange(f64),
    #[error("deduction weights must be positive")]
    InvalidWeights,
    #[error("line {line}: {msg}")]
    SchemaViolation { line: usize, msg: String },
    #[error("hypothesis for unknown item {0}")]
    UnknownItem(String),
    #[error("item {item} has no target {tgt}")]
    DirectionNotInItem { item: String, tgt: Lang },
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DirectionGroup {
    XxToEn,
    EnToXx,
    XxToZh,
    ZhToXx,
    XxToXx,
}

impl DirectionGroup {
    pub const ALL: [DirectionGroup; 5] =
        [DirectionGroup::XxToEn, DirectionGroup::EnToXx, DirectionGroup::XxToZh, DirectionGroup::ZhToXx, DirectionGroup::XxToXx];

    pub fn label(self) -> &'static str {
        match self {
            DirectionGroup::XxToEn => "XX=>EN",
            DirectionGroup::EnToXx => "EN=>XX",
            DirectionGroup::XxToZh => "XX=>ZH",
            DirectionGroup::ZhToXx => "ZH=>XX",
            DirectionGroup::XxToXx => "XX=>XX",
        }
    }
}

/// Which hub wins when a direction touches both English and Chinese.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precedence {
    #[default]
    EnglishFirst,
    ChineseFirst,
}

pub fn categorize(src: Lang, tgt: Lang) -> Result<DirectionGroup, EvalError> {
    categorize_with(src, tgt, Precedence::EnglishFirst)
}

pub fn categorize_with(src: Lang, tgt: Lang, precedence: Precedence) -> Result<DirectionGroup, EvalError> {
    if src == tgt {
        return Err(EvalError::SameLanguage(src));
    }
    let english = if tgt == Lang::EN {
        Some(DirectionGroup::XxToEn)
    } else if src == Lang::EN {
        Some(DirectionGroup::EnToXx)
    } else {
        None
    };
    let chinese = if tgt == Lang::ZH {
        Some(DirectionGroup::XxToZh)
    } else if src == Lang::ZH {
        Some(DirectionGroup::ZhToXx)
    } else {
        None
    };
    let group = match precedence {
        Precedence::EnglishFirst => english.or(chinese),
        Precedence::ChineseFirst => chinese.or(english),
    };
    Ok(group.unwrap_or(DirectionGroup::XxToXx))
}

/// A benchmark column: one of the five FLORES groups or WMT-25 EN=>XX.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Column {
    Flores(DirectionGroup),
    WmtEnToXx,
}

impl Column {
    pub const ALL: [Column; 6] = [
        Column::Flores(DirectionGroup::XxToEn),
        Column::Flores(DirectionGroup::EnToXx),
        Column::Flores(DirectionGroup::XxToZh),
        Column::Flores(DirectionGroup::ZhToXx),
        Column::Flores(DirectionGroup::XxToXx),
        Column::WmtEnToXx,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Column::Flores(DirectionGroup::XxToEn) => "flores_xx_en",
            Column::Flores(DirectionGroup::EnToXx) => "flores_en_xx",
            Column::Flores(DirectionGroup::XxToZh) => "flores_xx_zh",
            Column::Flores(DirectionGroup::ZhToXx) => "flores_zh_xx",
            Column::Flores(DirectionGroup::XxToXx) => "flores_xx_xx",
            Column::WmtEnToXx => "wmt25_en_xx",
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Column {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Column::ALL.into_iter().find(|c| c.key() == s).ok_or_else(|| format!("unknown column {s:?}"))
    }
}

impl From<Column> for String {
    fn from(c: Column) -> String {
        c.key().to_string()
    }
}

impl TryFrom<String> for Column {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Rounds half away from zero at `decimals` places, after snapping away
/// binary representation noise (89.905 is stored as 89.90499999...).
pub fn round_half_up(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let scaled = ((x * scale) * 1e6).round() / 1e6;
    (scaled.abs() + 0.5).floor().copysign(scaled) / scale
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Average {
    /// Unrounded mean.
    pub mean: f64,
    /// Mean rounded half-up to two decimals.
    pub rounded: f64,
}

impl Average {
    fn of(values: &[f64]) -> Self {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Average { mean, rounded: round_half_up(mean, 2) }
    }
}

/// Unweighted mean of the six benchmark columns.
pub fn aggregate_groups(scores: &BTreeMap<Column, f64>) -> Result<Average, EvalError> {
    let mut values = Vec::with_capacity(Column::ALL.len());
    for c in Column::ALL {
        values.push(*scores.get(&c).ok_or(EvalError::MissingColumn(c))?);
    }
    Ok(Average::of(&values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Judgement {
    Score(f64),
    Deduction { major_errors: u32, minor_errors: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHumanScore", into = "RawHumanScore")]
pub struct HumanScore {
    pub item_id: String,
    pub src_lang: Lang,
    pub tgt_lang: Lang,
    pub rater_id: String,
    pub judgement: Judgement,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHumanScore {
    item_id: String,
    src_lang: Lang,
    tgt_lang: Lang,
    rater_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    major_errors: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    minor_errors: Option<u32>,
}

impl TryFrom<RawHumanScore> for HumanScore {
    type Error = String;

    fn try_from(raw: RawHumanScore) -> Result<Self, Self::Error> {
        let judgement = match (raw.score, raw.major_errors, raw.minor_errors) {
            (Some(s), None, None) if (0.0..=4.0).contains(&s) => Judgement::Score(s),
            (Some(s), None, None) => return Err(EvalError::ScoreOutOfRange(s).to_string()),
            (None, Some(major_errors), Some(minor_errors)) => Judgement::Deduction { major_errors, minor_errors },
            _ => return Err(EvalError::AmbiguousRecord(raw.item_id).to_string()),
        };
        Ok(HumanScore { item_id: raw.item_id, src_lang: raw.src_lang, tgt_lang: raw.tgt_lang, rater_id: raw.rater_id, judgement })
    }
}

impl From<HumanScore> for RawHumanScore {
    fn from(h: HumanScore) -> Self {
        let (score, major_errors, minor_errors) = match h.judgement {
            Judgement::Score(s) => (Some(s), None, None),
            Judgement::Deduction { major_errors, minor_errors } => (None, Some(major_errors), Some(minor_errors)),
        };
        RawHumanScore { item_id: h.item_id, src_lang: h.src_lang, tgt_lang: h.tgt_lang, rater_id: h.rater_id, score, major_errors, minor_errors }
    }
}

impl HumanScore {
    pub fn direction_key(&self) -> String {
        direction_key(self.src_lang, self.tgt_lang)
    }
}

pub fn direction_key(src: Lang, tgt: Lang) -> String {
    format!("{}-{}", src.code(), tgt.code())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanAggregate {
    pub per_direction: BTreeMap<String, f64>,
    pub overall: Average,
}

fn check_mode(records: &[HumanScore], want_score: bool) -> Result<(), EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let scores = records.iter().filter(|r| matches!(r.judgement, Judgement::Score(_))).count();
    match (scores, want_score) {
        (n, true) if n == records.len() => Ok(()),
        (0, false) => Ok(()),
        _ => Err(EvalError::MixedModes),
    }
}

/// Per-direction means over raters and items, and their unweighted mean.
pub fn aggregate_human(records: &[HumanScore]) -> Result<HumanAggregate, EvalError> {
    check_mode(records, true)?;
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in records {
        if let Judgement::Score(s) = r.judgement {
            let e = sums.entry(r.direction_key()).or_insert((0.0, 0));
            e.0 += s;
            e.1 += 1;
        }
    }
    let per_direction: BTreeMap<String, f64> = sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
    let means: Vec<f64> = per_direction.values().copied().collect();
    Ok(HumanAggregate { overall: Average::of(&means), per_direction })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeductionWeights {
    pub major: f64,
    pub minor: f64,
}

impl Default for DeductionWeights {
    fn default() -> Self {
        DeductionWeights { major: 1.0, minor: 0.5 }
    }
}

/// Mean per-item deduction, where an item is (item_id, direction) and its
/// deduction is averaged over raters. Never positive.
pub fn deduction_score(records: &[HumanScore], weights: DeductionWeights) -> Result<f64, EvalError> {
    if !(weights.major > 0.0 && weights.minor > 0.0 && weights.major.is_finite() && weights.minor.is_finite()) {
        return Err(EvalError::InvalidWeights);
    }
    check_mode(records, false)?;
    let mut items: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for r in records {
        if let Judgement::Deduction { major_errors, minor_errors } = r.judgement {
            let d = major_errors as f64 * weights.major + minor_errors as f64 * weights.minor;
            let e = items.entry((r.item_id.clone(), r.direction_key())).or_insert((0.0, 0));
            e.0 += d;
            e.1 += 1;
        }
    }
    let total: f64 = items.values().map(|(d, n)| d / *n as f64).sum();
    let mean = total / items.len() as f64;
    Ok(if mean == 0.0 { 0.0 } else { -mean })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Style {
    Formal,
    Colloquial,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyPoint {
    pub span: String,
    pub expected_handling: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChallengeItem {
    pub id: String,
    pub src_lang: Lang,
    pub src_text: String,
    pub key_points: Vec<KeyPoint>,
    pub domain_tag: String,
    pub style: Style,
    pub target_langs: Vec<Lang>,
}

/// Targets a challenge item may carry.
pub fn challenge_targets() -> [Lang; 7] {
    [Lang::ES, Lang::DE, Lang::FR, Lang::RU, Lang::AR, Lang::PT, Lang::IT]
}

impl ChallengeItem {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.src_lang != Lang::EN && self.src_lang != Lang::ZH {
            return Err(format!("source language {} is not en or zh", self.src_lang));
        }
        if self.src_text.is_empty() {
            return Err("empty src_text".into());
        }
        if self.key_points.is_empty() {
            return Err("key_points is empty".into());
        }
        if let Some(t) = self.target_langs.iter().find(|t| !challenge_targets().contains(t)) {
            return Err(format!("target {t} is outside the challenge languages"));
        }
        Ok(())
    }
}

/// Reads a JSONL challenge set. Blank lines are skipped.
pub fn load_challenge_set(path: impl AsRef<Path>) -> Result<Vec<ChallengeItem>, EvalError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let violation = |msg: String| EvalError::SchemaViolation { line: i + 1, msg };
        let item: ChallengeItem = serde_json::from_str(&line).map_err(|e| violation(e.to_string()))?;
        item.validate().map_err(violation)?;
        out.push(item);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub item_id: String,
    pub tgt_lang: Lang,
    pub system: String,
    pub text: String,
}

/// One row for a rater to fill in offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Worksheet {
    pub item_id: String,
    pub direction: String,
    pub system: String,
    pub src_text: String,
    pub hypothesis: String,
    pub key_points: Vec<KeyPoint>,
    pub score: Option<f64>,
}

/// Pairs hypotheses with their item's key points, ordered by (item_id,
/// direction, system).
pub fn emit_scorecards(items: &[ChallengeItem], hypotheses: &[Hypothesis]) -> Result<Vec<Worksheet>, EvalError> {
    let by_id: BTreeMap<&str, &ChallengeItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut out = Vec::with_capacity(hypotheses.len());
    for h in hypotheses {
        let item = by_id.get(h.item_id.as_str()).ok_or_else(|| EvalError::UnknownItem(h.item_id.clone()))?;
        if !item.target_langs.contains(&h.tgt_lang) {
            return Err(EvalError::DirectionNotInItem { item: item.id.clone(), tgt: h.tgt_lang });
        }
        out.push(Worksheet {
            item_id: item.id.clone(),
            direction: direction_key(item.src_lang, h.tgt_lang),
            system: h.system.clone(),
            src_text: item.src_text.clone(),
            hypothesis: h.text.clone(),
            key_points: item.key_points.clone(),
            score: None,
        });
    }
    out.sort_by(|a, b| (&a.item_id, &a.direction, &a.system).cmp(&(&b.item_id, &b.direction, &b.system)));
    Ok(out)
}

/// One per-segment metric score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub system: String,
    /// `src-tgt` for FLORES, `wmt25/src-tgt` for WMT-25.
    pub direction: String,
    pub segment_id: String,
    pub metric: String,
    pub score: f64,
}

/// Parses a TSV of (system, direction, segment_id, metric, score). A first
/// line starting with `system` is treated as a header.
pub fn parse_metric_tsv(text: &str) -> Result<Vec<MetricRow>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line.starts_with("system")) {
            continue;
        }
        let violation = |msg: String| EvalError::SchemaViolation { line: i + 1, msg };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(violation(format!("expected 5 tab-separated fields, got {}", fields.len())));
        }
        let score: f64 = fields[4].trim().parse().map_err(|_| violation(format!("bad score {:?}", fields[4])))?;
        if !score.is_finite() {
            return Err(violation("score is not finite".into()));
        }
        out.push(MetricRow {
            system: fields[0].to_string(),
            direction: fields[1].to_string(),
            segment_id: fields[2].to_string(),
            metric: fields[3].to_string(),
            score,
        });
    }
    Ok(out)
}

fn parse_direction(s: &str) -> Result<(bool, Lang, Lang), String> {
    let (wmt, pair) = match s.strip_prefix("wmt25/") {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (a, b) = pair.split_once('-').ok_or_else(|| format!("bad direction {s:?}"))?;
    let src: Lang = a.parse().map_err(|e| format!("{e}"))?;
    let tgt: Lang = b.parse().map_err(|e| format!("{e}"))?;
    Ok((wmt, src, tgt))
}

/// (system, metric) -> column -> score. Each column is the mean of its
/// per-direction segment means.
pub type ColumnTable = BTreeMap<(String, String), BTreeMap<Column, f64>>;

pub fn column_scores(rows: &[MetricRow], precedence: Precedence) -> Result<ColumnTable, EvalError> {
    let mut per_dir: BTreeMap<(String, String, Column, String), (f64, usize)> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let violation = |msg: String| EvalError::SchemaViolation { line: i + 1, msg };
        let (wmt, src, tgt) = parse_direction(&r.direction).map_err(violation)?;
        let column = if wmt {
            if src != Lang::EN {
                return Err(violation(format!("WMT-25 column is EN=>XX only, got {}", r.direction)));
            }
            Column::WmtEnToXx
        } else {
            Column::Flores(categorize_with(src, tgt, precedence)?)
        };
        let e = per_dir.entry((r.system.clone(), r.metric.clone(), column, r.direction.clone())).or_insert((0.0, 0));
        e.0 += r.score;
        e.1 += 1;
    }
    let mut acc: BTreeMap<(String, String), BTreeMap<Column, (f64, usize)>> = BTreeMap::new();
    for ((system, metric, column, _), (sum, n)) in per_dir {
        let e = acc.entry((system, metric)).or_default().entry(column).or_insert((0.0, 0));
        e.0 += sum / n as f64;
        e.1 += 1;
    }
    Ok(acc.into_iter().map(|(k, cols)| (k, cols.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect())).collect())
}

/// Left-aligned first column, right-aligned others, two-space gaps.
pub fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let ncols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate().take(ncols) {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| -> String {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .take(ncols)
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

/// Distinct languages mentioned by a set of records, for reporting.
pub fn record_languages(records: &[HumanScore]) -> BTreeSet<Lang> {
    records.iter().flat_map(|r| [r.src_lang, r.tgt_lang]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(values: [f64; 6]) -> BTreeMap<Column, f64> {
        Column::ALL.into_iter().zip(values).collect()
    }

    #[test]
    fn categorize_examples() {
        assert_eq!(categorize(Lang::DE, Lang::EN).unwrap(), DirectionGroup::XxToEn);
        assert_eq!(categorize(Lang::EN, Lang::ZH).unwrap(), DirectionGroup::EnToXx);
        assert_eq!(categorize(Lang::DE, Lang::FR).unwrap(), DirectionGroup::XxToXx);
        assert_eq!(categorize(Lang::ZH, Lang::DE).unwrap(), DirectionGroup::ZhToXx);
        assert_eq!(categorize(Lang::DE, Lang::ZH).unwrap(), DirectionGroup::XxToZh);
        assert_eq!(categorize_with(Lang::EN, Lang::ZH, Precedence::ChineseFirst).unwrap(), DirectionGroup::XxToZh);
        assert!(matches!(categorize(Lang::DE, Lang::DE), Err(EvalError::SameLanguage(_))));
    }

    #[test]
    fn partition_counts() {
        let mut counts: BTreeMap<DirectionGroup, usize> = BTreeMap::new();
        for (s, t) in Lang::directions() {
            *counts.entry(categorize(s, t).unwrap()).or_insert(0) += 1;
        }
        assert_eq!(counts.values().sum::<usize>(), 756);
        // 27 into English, 27 out of English, 26 into and 26 out of Chinese
        // (en pairs claimed by English), and the remaining 26 * 25.
        assert_eq!(counts[&DirectionGroup::XxToEn], 27);
        assert_eq!(counts[&DirectionGroup::EnToXx], 27);
        assert_eq!(counts[&DirectionGroup::XxToZh], 26);
        assert_eq!(counts[&DirectionGroup::ZhToXx], 26);
        assert_eq!(counts[&DirectionGroup::XxToXx], 650);
    }

    #[test]
    fn group_average_examples() {
        let tower = aggregate_groups(&row([76.18, 68.58, 66.08, 51.03, 56.38, 56.35])).unwrap();
        assert_eq!(tower.rounded, 62.43);
        let llamax = aggregate_groups(&row([95.13, 86.22, 78.09, 83.85, 83.42, 70.89])).unwrap();
        assert_eq!(llamax.rounded, 82.93);
        assert_eq!(aggregate_groups(&row([7.25; 6])).unwrap().rounded, 7.25);
        let mut missing = row([1.0; 6]);
        missing.remove(&Column::WmtEnToXx);
        assert!(matches!(aggregate_groups(&missing), Err(EvalError::MissingColumn(Column::WmtEnToXx))));
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(round_half_up(89.905, 2), 89.91);
        assert_eq!(round_half_up(65.405, 2), 65.41);
        assert_eq!(round_half_up(84.685, 2), 84.69);
        assert_eq!(round_half_up(1.004999, 2), 1.0);
        assert_eq!(round_half_up(-2.345, 2), -2.35);
    }

    fn score(item: &str, s: f64) -> HumanScore {
        HumanScore { item_id: item.into(), src_lang: Lang::EN, tgt_lang: Lang::DE, rater_id: "r".into(), judgement: Judgement::Score(s) }
    }

    fn deduction(item: &str, major: u32, minor: u32) -> HumanScore {
        HumanScore {
            item_id: item.into(),
            src_lang: Lang::ZH,
            tgt_lang: Lang::EN,
            rater_id: "r".into(),
            judgement: Judgement::Deduction { major_errors: major, minor_errors: minor },
        }
    }

    #[test]
    fn human_examples() {
        let agg = aggregate_human(&[score("1", 4.0)]).unwrap();
        assert_eq!(agg.overall.rounded, 4.0);
        assert_eq!(agg.per_direction["en-de"], 4.0);
        assert!(matches!(aggregate_human(&[score("1", 4.0), deduction("2", 1, 0)]), Err(EvalError::MixedModes)));
        assert!(matches!(aggregate_human(&[]), Err(EvalError::EmptyInput)));
    }

    #[test]
    fn deduction_examples() {
        let w = DeductionWeights::default();
        assert_eq!(deduction_score(&[deduction("a", 1, 2)], w).unwrap(), -2.0);
        assert_eq!(deduction_score(&[deduction("a", 0, 0)], w).unwrap(), 0.0);
        assert!(deduction_score(&[deduction("a", 0, 0)], w).unwrap().is_sign_positive());
        assert_eq!(deduction_score(&[deduction("a", 1, 0), deduction("b", 2, 2)], w).unwrap(), -2.0);
        assert!(matches!(deduction_score(&[deduction("a", 1, 0), score("b", 1.0)], w), Err(EvalError::MixedModes)));
        assert!(matches!(deduction_score(&[deduction("a", 1, 0)], DeductionWeights { major: 0.0, minor: 1.0 }), Err(EvalError::InvalidWeights)));
    }

    #[test]
    fn human_record_json() {
        let ok: HumanScore = serde_json::from_str(r#"{"item_id":"1","src_lang":"en","tgt_lang":"de","rater_id":"r","score":3.5}"#).unwrap();
        assert_eq!(ok.judgement, Judgement::Score(3.5));
        let back: HumanScore = serde_json::from_str(&serde_json::to_string(&ok).unwrap()).unwrap();
        assert_eq!(back, ok);
        let both = r#"{"item_id":"1","src_lang":"en","tgt_lang":"de","rater_id":"r","score":3.5,"major_errors":1,"minor_errors":0}"#;
        assert!(serde_json::from_str::<HumanScore>(both).is_err());
        let high = r#"{"item_id":"1","src_lang":"en","tgt_lang":"de","rater_id":"r","score":4.5}"#;
        assert!(serde_json::from_str::<HumanScore>(high).is_err());
    }

    fn buzzword_item() -> ChallengeItem {
        ChallengeItem {
            id: "s1-1".into(),
            src_lang: Lang::ZH,
            src_text: "在某宝上看到一件裙子 绝绝子 红色YYDS，加油瘦 然后去拥有它！".into(),
            key_points: vec![
                KeyPoint { span: "绝绝子".into(), expected_handling: "amazing/incredible".into() },
                KeyPoint { span: "YYDS".into(), expected_handling: "forever the best".into() },
            ],
            domain_tag: "internet-buzzwords".into(),
            style: Style::Colloquial,
            target_langs: vec![Lang::ES, Lang::DE],
        }
    }

    #[test]
    fn challenge_set_loading() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.jsonl");
        std::fs::write(&path, format!("{}\n\n", serde_json::to_string(&buzzword_item()).unwrap())).unwrap();
        let items = load_challenge_set(&path).unwrap();
        assert_eq!(items, vec![buzzword_item()]);
        assert_eq!(items[0].key_points[1].span, "YYDS");

        let mut bad = serde_json::to_value(buzzword_item()).unwrap();
        bad["key_points"] = serde_json::json!([]);
        std::fs::write(&path, format!("{}\n{}\n", serde_json::to_string(&buzzword_item()).unwrap(), bad)).unwrap();
        assert!(matches!(load_challenge_set(&path), Err(EvalError::SchemaViolation { line: 2, .. })));

        std::fs::write(&path, "").unwrap();
        assert!(load_challenge_set(&path).unwrap().is_empty());
    }

    #[test]
    fn scorecards_are_sorted() {
        let mut other = buzzword_item();
        other.id = "a-0".into();
        let hyps = vec![
            Hypothesis { item_id: "s1-1".into(), tgt_lang: Lang::ES, system: "x".into(), text: "h1".into() },
            Hypothesis { item_id: "s1-1".into(), tgt_lang: Lang::DE, system: "x".into(), text: "h2".into() },
            Hypothesis { item_id: "a-0".into(), tgt_lang: Lang::ES, system: "y".into(), text: "h3".into() },
        ];
        let sheets = emit_scorecards(&[buzzword_item(), other], &hyps).unwrap();
        let order: Vec<(&str, &str)> = sheets.iter().map(|w| (w.item_id.as_str(), w.direction.as_str())).collect();
        assert_eq!(order, vec![("a-0", "zh-es"), ("s1-1", "zh-de"), ("s1-1", "zh-es")]);
        assert_eq!(sheets[1].key_points.len(), 2);
        let stray = [Hypothesis { item_id: "s1-1".into(), tgt_lang: Lang::RU, system: "x".into(), text: "h".into() }];
        assert!(matches!(emit_scorecards(&[buzzword_item()], &stray), Err(EvalError::DirectionNotInItem { .. })));
    }

    #[test]
    fn metric_tsv_to_columns() {
        let tsv = "system\tdirection\tsegment_id\tmetric\tscore\n\
                   s\tde-en\t1\tbleurt\t70\n\
                   s\tde-en\t2\tbleurt\t80\n\
                   s\tfr-en\t1\tbleurt\t60\n\
                   s\twmt25/en-de\t1\tbleurt\t50\n";
        let rows = parse_metric_tsv(tsv).unwrap();
        assert_eq!(rows.len(), 4);
        let table = column_scores(&rows, Precedence::EnglishFirst).unwrap();
        let cols = &table[&("s".to_string(), "bleurt".to_string())];
        assert_eq!(cols[&Column::Flores(DirectionGroup::XxToEn)], 67.5);
        assert_eq!(cols[&Column::WmtEnToXx], 50.0);
        assert!(matches!(parse_metric_tsv("a\tb\n"), Err(EvalError::SchemaViolation { line: 1, .. })));
    }

    #[test]
    fn table_rendering() {
        let t = render_table(&["sys".into(), "avg".into()], &[vec!["a".into(), "1.00".into()], vec!["long".into(), "10.00".into()]]);
        assert_eq!(t, "sys     avg\na      1.00\nlong  10.00\n");
    }

    proptest! {
        #[test]
        fn deduction_never_positive(errs in proptest::collection::vec((0u32..5, 0u32..5), 1..10), major in 0.1f64..3.0, minor in 0.1f64..3.0) {
            let records: Vec<_> = errs.iter().enumerate().map(|(i, (a, b))| deduction(&i.to_string(), *a, *b)).collect();
            let w = DeductionWeights { major, minor };
            prop_assert!(deduction_score(&records, w).unwrap() <= 0.0);
        }

        #[test]
        fn constant_columns_average_to_themselves(c in 0u32..10_000) {
            let v = c as f64 / 100.0;
            prop_assert_eq!(aggregate_groups(&row([v; 6])).unwrap().rounded, v);
        }
    }
}

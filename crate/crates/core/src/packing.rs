//! Pair formatting under the four delimiter strategies, prompt templates,
//! CoT record checks, multi-parallel filtering and sequence packing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError};
use crate::lang::Lang;
use crate::tokenizer::BpeVocab;
use crate::types::SentencePair;

pub const DEFAULT_MAX_SEQ_LEN: usize = 2048;
pub const MIN_SEQ_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum PackingError {
    #[error("the natural-language strategy needs a prompt template")]
    MissingTemplate,
    #[error("unknown placeholder <{0}> in template")]
    UnknownPlaceholder(String),
    #[error("template {0} omits the source language but has no elision rule for <src>")]
    MissingElision(String),
    #[error("max_seq_len must be at least {MIN_SEQ_LEN}, got {0}")]
    SeqLenTooSmall(usize),
    #[error("unknown template id {0:?}")]
    UnknownTemplate(String),
    #[error("unknown delimiter strategy {0:?}")]
    UnknownStrategy(String),
    #[error("not a tagged pair: {0}")]
    Unparseable(&'static str),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelimiterStrategy {
    Sep,
    NaturalLanguage,
    LanguageName,
    LangCode,
}

impl DelimiterStrategy {
    pub const ALL: [DelimiterStrategy; 4] =
        [DelimiterStrategy::Sep, DelimiterStrategy::NaturalLanguage, DelimiterStrategy::LanguageName, DelimiterStrategy::LangCode];

    pub fn as_str(self) -> &'static str {
        match self {
            DelimiterStrategy::Sep => "sep",
            DelimiterStrategy::NaturalLanguage => "natural-language",
            DelimiterStrategy::LanguageName => "language-name",
            DelimiterStrategy::LangCode => "lang-code",
        }
    }
}

impl fmt::Display for DelimiterStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DelimiterStrategy {
    type Err = PackingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|d| d.as_str() == s).ok_or_else(|| PackingError::UnknownStrategy(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemplateKind {
    Standard,
    CoT,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CotOrder {
    ExplanationFirst,
    TranslationFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub id: String,
    pub kind: TemplateKind,
    /// Text with `<src>`, `<trg>` and `<text>` placeholders. Without a
    /// `<text>` placeholder the input is appended.
    pub pattern: String,
    #[serde(default = "yes")]
    pub include_src_lang: bool,
    /// Substring removed from the pattern when the source language is
    /// omitted. Must contain `<src>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_elision: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cot_order: Option<CotOrder>,
}

fn yes() -> bool {
    true
}

impl PromptTemplate {
    fn new(id: &str, kind: TemplateKind, pattern: &str, elision: Option<&str>, cot_order: Option<CotOrder>) -> Self {
        PromptTemplate {
            id: id.to_string(),
            kind,
            pattern: pattern.to_string(),
            include_src_lang: true,
            src_elision: elision.map(String::from),
            cot_order,
        }
    }

    pub fn without_src_lang(&self) -> Self {
        PromptTemplate { include_src_lang: false, ..self.clone() }
    }
}

/// The built-in standard and CoT prompt set.
pub fn builtin_templates() -> Vec<PromptTemplate> {
    use CotOrder::*;
    use TemplateKind::*;
    vec![
        PromptTemplate::new("std-1", Standard, "Translate the following text from <src> to <trg>:<text>", Some(" from <src>"), None),
        PromptTemplate::new("std-2", Standard, "What does this sentence mean in <trg> from <src>:<text>", Some(" from <src>"), None),
        PromptTemplate::new("std-3", Standard, "How do you translate this sentence into <trg> from <src>:<text>", Some(" from <src>"), None),
        PromptTemplate::new("std-4", Standard, "Translate the following text to <trg>:<text>", None, None),
        PromptTemplate::new(
            "cot-1",
            CoT,
            "Translate the following <src> sentence into <trg> and explain it in detail:<text>",
            Some(" <src>"),
            Some(ExplanationFirst),
        ),
        PromptTemplate::new(
            "cot-2",
            CoT,
            "First translate the <src> text into <trg> and then give the explanation:<text>",
            Some(" <src>"),
            Some(TranslationFirst),
        ),
        PromptTemplate::new(
            "cot-3",
            CoT,
            "Translate the following sentence into <trg> and try to explain this translation. The input is:<text>",
            None,
            Some(TranslationFirst),
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TemplateLibrary(pub Vec<PromptTemplate>);

impl Default for TemplateLibrary {
    fn default() -> Self {
        TemplateLibrary(builtin_templates())
    }
}

impl TemplateLibrary {
    /// Loads a JSON array of templates, replacing the built-in set.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PackingError> {
        Ok(io::read_json(path)?)
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, PackingError> {
        self.0.iter().find(|t| t.id == id).ok_or_else(|| PackingError::UnknownTemplate(id.to_string()))
    }
}

enum Piece<'a> {
    Literal(&'a str),
    Placeholder(&'a str),
}

/// Splits a pattern into literals and `<name>` placeholders, where name is
/// lowercase ASCII letters, digits or underscores.
fn pieces(pattern: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('<') {
        let after = &rest[open + 1..];
        let close = after.find('>');
        let name = close.map(|c| &after[..c]);
        match name {
            Some(n) if !n.is_empty() && n.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_') => {
                if open > 0 {
                    out.push(Piece::Literal(&rest[..open]));
                }
                out.push(Piece::Placeholder(n));
                rest = &after[n.len() + 1..];
            }
            _ => {
                out.push(Piece::Literal(&rest[..=open]));
                rest = after;
            }
        }
    }
    if !rest.is_empty() {
        out.push(Piece::Literal(rest));
    }
    out
}

pub fn render_prompt(template: &PromptTemplate, src: Lang, tgt: Lang, text: &str) -> Result<String, PackingError> {
    let mut pattern = template.pattern.clone();
    if !template.include_src_lang && pattern.contains("<src>") {
        let elision = template.src_elision.as_deref().filter(|e| e.contains("<src>") && pattern.contains(*e));
        let elision = elision.ok_or_else(|| PackingError::MissingElision(template.id.clone()))?;
        pattern = pattern.replacen(elision, "", 1);
    }
    let mut out = String::with_capacity(pattern.len() + text.len());
    let mut saw_text = false;
    for piece in pieces(&pattern) {
        match piece {
            Piece::Literal(s) => out.push_str(s),
            Piece::Placeholder("src") => out.push_str(src.name()),
            Piece::Placeholder("trg") => out.push_str(tgt.name()),
            Piece::Placeholder("text") => {
                saw_text = true;
                out.push_str(text);
            }
            Piece::Placeholder(other) => return Err(PackingError::UnknownPlaceholder(other.to_string())),
        }
    }
    if !saw_text {
        out.push_str(text);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentRole {
    Tag,
    Text,
    Prompt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub role: SegmentRole,
    pub content: String,
}

impl Segment {
    pub fn tag(s: impl Into<String>) -> Self {
        Segment { role: SegmentRole::Tag, content: s.into() }
    }

    pub fn text(s: impl Into<String>) -> Self {
        Segment { role: SegmentRole::Text, content: s.into() }
    }

    pub fn prompt(s: impl Into<String>) -> Self {
        Segment { role: SegmentRole::Prompt, content: s.into() }
    }
}

pub fn lang_code_tag(lang: Lang) -> String {
    format!("<{}>", lang.code().to_ascii_uppercase())
}

pub fn lang_name_tag(lang: Lang) -> String {
    format!("<{}>", lang.name())
}

/// The pair as role-labelled segments; concatenating their contents gives
/// [`format_pair`].
pub fn format_segments(pair: &SentencePair, strategy: DelimiterStrategy, template: Option<&PromptTemplate>) -> Result<Vec<Segment>, PackingError> {
    let (src, tgt) = (pair.src_text.clone(), pair.tgt_text.clone());
    Ok(match strategy {
        DelimiterStrategy::LangCode => {
            vec![Segment::tag(lang_code_tag(pair.src_lang)), Segment::text(src), Segment::tag(lang_code_tag(pair.tgt_lang)), Segment::text(tgt)]
        }
        DelimiterStrategy::Sep => vec![Segment::text(src), Segment::tag("<SEP>"), Segment::text(tgt)],
        DelimiterStrategy::LanguageName => {
            vec![Segment::tag(lang_name_tag(pair.src_lang)), Segment::text(src), Segment::tag(lang_name_tag(pair.tgt_lang)), Segment::text(tgt)]
        }
        DelimiterStrategy::NaturalLanguage => {
            let template = template.ok_or(PackingError::MissingTemplate)?;
            let prompt = render_prompt(template, pair.src_lang, pair.tgt_lang, &src)?;
            vec![Segment::prompt(prompt), Segment::text(format!("\n{tgt}"))]
        }
    })
}

pub fn format_pair(pair: &SentencePair, strategy: DelimiterStrategy, template: Option<&PromptTemplate>) -> Result<String, PackingError> {
    Ok(format_segments(pair, strategy, template)?.into_iter().map(|s| s.content).collect())
}

/// Finds the first `<XX>` tag naming a registry language at or after `from`.
fn find_code_tag(s: &str, from: usize) -> Option<(usize, Lang)> {
    let bytes = s.as_bytes();
    let mut i = from;
    while i + 4 <= bytes.len() {
        if bytes[i] == b'<' && bytes[i + 3] == b'>' && bytes[i + 1].is_ascii_uppercase() && bytes[i + 2].is_ascii_uppercase() {
            if let Ok(lang) = s[i + 1..i + 3].to_ascii_lowercase().parse::<Lang>() {
                return Some((i, lang));
            }
        }
        i += 1;
    }
    None
}

/// True when `text` contains any `<XX>` substring with two uppercase ASCII
/// letters.
pub fn has_code_shaped_tag(text: &str) -> bool {
    text.as_bytes().windows(4).any(|w| w[0] == b'<' && w[3] == b'>' && w[1].is_ascii_uppercase() && w[2].is_ascii_uppercase())
}

/// Inverse of the LangCode format for texts free of `<XX>`-shaped
/// substrings: returns (src, tgt, src_text, tgt_text).
pub fn parse_lang_code(formatted: &str) -> Result<(Lang, Lang, String, String), PackingError> {
    let (start, src) = find_code_tag(formatted, 0).ok_or(PackingError::Unparseable("no leading language tag"))?;
    if start != 0 {
        return Err(PackingError::Unparseable("text before the source tag"));
    }
    let (mid, tgt) = find_code_tag(formatted, 4).ok_or(PackingError::Unparseable("no target tag"))?;
    Ok((src, tgt, formatted[4..mid].to_string(), formatted[mid + 4..].to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermNote {
    pub term: String,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotRecord {
    pub summary: String,
    pub term_notes: Vec<TermNote>,
    pub translation_decision: String,
    pub final_translation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CotViolation {
    MissingSummary,
    MissingTermNotes,
    EmptyTermNote(usize),
    MissingDecision,
    MissingTranslation,
}

pub fn validate_cot(record: &CotRecord) -> Vec<CotViolation> {
    let blank = |s: &str| s.trim().is_empty();
    let mut out = Vec::new();
    if blank(&record.summary) {
        out.push(CotViolation::MissingSummary);
    }
    if record.term_notes.is_empty() {
        out.push(CotViolation::MissingTermNotes);
    }
    for (i, note) in record.term_notes.iter().enumerate() {
        if blank(&note.term) || blank(&note.explanation) {
            out.push(CotViolation::EmptyTermNote(i));
        }
    }
    if blank(&record.translation_decision) {
        out.push(CotViolation::MissingDecision);
    }
    if blank(&record.final_translation) {
        out.push(CotViolation::MissingTranslation);
    }
    out
}

impl CotRecord {
    /// Summary, one `term: explanation` line per note, then the decision.
    pub fn explanation(&self) -> String {
        let mut lines = vec![self.summary.clone()];
        lines.extend(self.term_notes.iter().map(|n| format!("{}: {}", n.term, n.explanation)));
        lines.push(self.translation_decision.clone());
        lines.join("\n")
    }

    /// Target text for a CoT template, in the order the template asks for.
    pub fn response(&self, order: CotOrder) -> String {
        match order {
            CotOrder::ExplanationFirst => format!("{}\n\n{}", self.explanation(), self.final_translation),
            CotOrder::TranslationFirst => format!("{}\n\n{}", self.final_translation, self.explanation()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedSequence {
    pub segments: Vec<Segment>,
    pub token_len: usize,
    pub strategy: DelimiterStrategy,
    /// Token ids, written to the sidecar file rather than the JSONL record.
    #[serde(skip)]
    pub token_ids: Vec<u32>,
}

/// Packs items in order: each goes into the open sequence if it fits,
/// otherwise it opens a new one. An item longer than `max_seq_len` is cut
/// at token boundaries into full chunks plus a remainder that stays open.
/// Each segment is encoded separately. Cut segments carry the lossy
/// decoding of their tokens.
pub fn pack<I>(items: I, tok: &BpeVocab, max_seq_len: usize, strategy: DelimiterStrategy) -> Result<Vec<PackedSequence>, PackingError>
where
    I: IntoIterator<Item = Vec<Segment>>,
{
    if max_seq_len < MIN_SEQ_LEN {
        return Err(PackingError::SeqLenTooSmall(max_seq_len));
    }
    let empty = || PackedSequence { segments: Vec::new(), token_len: 0, strategy, token_ids: Vec::new() };
    let mut out = Vec::new();
    let mut open = empty();
    for item in items {
        let encoded: Vec<(Segment, Vec<u32>)> = item
            .into_iter()
            .map(|s| {
                let ids = tok.encode(&s.content);
                (s, ids)
            })
            .collect();
        let len: usize = encoded.iter().map(|(_, ids)| ids.len()).sum();
        if open.token_len + len <= max_seq_len {
            for (seg, ids) in encoded {
                open.token_len += ids.len();
                open.token_ids.extend(ids);
                open.segments.push(seg);
            }
            continue;
        }
        if open.token_len > 0 {
            out.push(std::mem::replace(&mut open, empty()));
        }
        for (seg, ids) in encoded {
            let whole = ids.len() <= max_seq_len - open.token_len;
            let mut rest: &[u32] = &ids;
            loop {
                let room = max_seq_len - open.token_len;
                let take = room.min(rest.len());
                let (head, tail) = rest.split_at(take);
                let content = if whole { seg.content.clone() } else { lossy(tok, head) };
                open.segments.push(Segment { role: seg.role, content });
                open.token_len += head.len();
                open.token_ids.extend_from_slice(head);
                rest = tail;
                if rest.is_empty() {
                    break;
                }
                out.push(std::mem::replace(&mut open, empty()));
            }
            if open.token_len == max_seq_len {
                out.push(std::mem::replace(&mut open, empty()));
            }
        }
    }
    if open.token_len > 0 || !open.segments.is_empty() {
        out.push(open);
    }
    Ok(out)
}

fn lossy(tok: &BpeVocab, ids: &[u32]) -> String {
    let bytes: Vec<u8> = ids.iter().flat_map(|&id| tok.token_bytes(id).unwrap_or_default().to_vec()).collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

/// One line of space-separated ids per sequence.
pub fn token_sidecar(sequences: &[PackedSequence]) -> String {
    let mut out = String::new();
    for seq in sequences {
        let line: Vec<String> = seq.token_ids.iter().map(|id| id.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// An instruction-tuning record keyed by its source sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub source_key: String,
    pub src_lang: Lang,
    pub tgt_lang: Lang,
    pub prompt: String,
    pub response: String,
}

/// With `flag` set, a source key seen in more than two directions keeps
/// only the records of its first-seen direction.
pub fn reject_multiparallel(records: Vec<InstructionRecord>, flag: bool) -> Vec<InstructionRecord> {
    if !flag {
        return records;
    }
    let mut directions: BTreeMap<&str, BTreeSet<(Lang, Lang)>> = BTreeMap::new();
    let mut first: BTreeMap<&str, (Lang, Lang)> = BTreeMap::new();
    for r in &records {
        directions.entry(&r.source_key).or_default().insert((r.src_lang, r.tgt_lang));
        first.entry(&r.source_key).or_insert((r.src_lang, r.tgt_lang));
    }
    let keep: Vec<bool> =
        records.iter().map(|r| directions[r.source_key.as_str()].len() <= 2 || first[r.source_key.as_str()] == (r.src_lang, r.tgt_lang)).collect();
    records.into_iter().zip(keep).filter(|(_, k)| *k).map(|(r, _)| r).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zh_en() -> SentencePair {
        SentencePair::seed(Lang::ZH, Lang::EN, "你好", "Hello").unwrap()
    }

    #[test]
    fn strategy_grammars() {
        let p = zh_en();
        let t1 = &builtin_templates()[0];
        assert_eq!(format_pair(&p, DelimiterStrategy::LangCode, None).unwrap(), "<ZH>你好<EN>Hello");
        assert_eq!(format_pair(&p, DelimiterStrategy::Sep, None).unwrap(), "你好<SEP>Hello");
        assert_eq!(format_pair(&p, DelimiterStrategy::LanguageName, None).unwrap(), "<Chinese>你好<English>Hello");
        assert_eq!(
            format_pair(&p, DelimiterStrategy::NaturalLanguage, Some(t1)).unwrap(),
            "Translate the following text from Chinese to English:你好\nHello"
        );
        assert!(matches!(format_pair(&p, DelimiterStrategy::NaturalLanguage, None), Err(PackingError::MissingTemplate)));
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in DelimiterStrategy::ALL {
            assert_eq!(s.as_str().parse::<DelimiterStrategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
    }

    #[test]
    fn rendering_and_elision() {
        let t = builtin_templates();
        assert_eq!(render_prompt(&t[0], Lang::ZH, Lang::EN, "你好").unwrap(), "Translate the following text from Chinese to English:你好");
        assert_eq!(render_prompt(&t[0].without_src_lang(), Lang::ZH, Lang::EN, "x").unwrap(), "Translate the following text to English:x");
        assert_eq!(render_prompt(&t[1].without_src_lang(), Lang::ZH, Lang::EN, "x").unwrap(), "What does this sentence mean in English:x");
        assert_eq!(
            render_prompt(&t[4].without_src_lang(), Lang::ZH, Lang::EN, "x").unwrap(),
            "Translate the following sentence into English and explain it in detail:x"
        );
        for i in [3, 6] {
            assert_eq!(
                render_prompt(&t[i], Lang::ZH, Lang::EN, "x").unwrap(),
                render_prompt(&t[i].without_src_lang(), Lang::ZH, Lang::EN, "x").unwrap()
            );
        }
        let stray = PromptTemplate { pattern: "Say <xyz>:<text>".into(), ..t[3].clone() };
        assert!(matches!(render_prompt(&stray, Lang::ZH, Lang::EN, "x"), Err(PackingError::UnknownPlaceholder(p)) if p == "xyz"));
        let no_rule = PromptTemplate { src_elision: None, ..t[0].without_src_lang() };
        assert!(matches!(render_prompt(&no_rule, Lang::ZH, Lang::EN, "x"), Err(PackingError::MissingElision(_))));
        let bare = PromptTemplate { pattern: "Into <trg>, a < b: ".into(), ..t[3].clone() };
        assert_eq!(render_prompt(&bare, Lang::ZH, Lang::EN, "q").unwrap(), "Into English, a < b: q");
    }

    #[test]
    fn input_text_is_not_scanned_for_placeholders() {
        let t = &builtin_templates()[3];
        assert_eq!(render_prompt(t, Lang::ZH, Lang::EN, "<xyz>").unwrap(), "Translate the following text to English:<xyz>");
    }

    #[test]
    fn library_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("templates.json");
        io::write_json(&path, &TemplateLibrary::default()).unwrap();
        let lib = TemplateLibrary::load(&path).unwrap();
        assert_eq!(lib, TemplateLibrary::default());
        assert_eq!(lib.get("cot-2").unwrap().cot_order, Some(CotOrder::TranslationFirst));
        assert!(lib.get("nope").is_err());
    }

    fn cot_fixture() -> CotRecord {
        CotRecord {
            summary: "Dealing with facial asymmetry when putting on makeup.".into(),
            term_notes: vec![TermNote { term: "做斗争".into(), explanation: "a metaphor for making efforts to deal with something".into() }],
            translation_decision: "Translate as trying to adjust, not as a literal struggle.".into(),
            final_translation: "Every time I put on makeup, I'm trying to adjust my asymmetrical face.".into(),
        }
    }

    #[test]
    fn cot_validation() {
        assert!(validate_cot(&cot_fixture()).is_empty());
        let no_notes = CotRecord { term_notes: vec![], ..cot_fixture() };
        assert_eq!(validate_cot(&no_notes), vec![CotViolation::MissingTermNotes]);
        let no_translation = CotRecord { final_translation: String::new(), ..cot_fixture() };
        assert_eq!(validate_cot(&no_translation), vec![CotViolation::MissingTranslation]);
        let r = cot_fixture();
        assert!(r.response(CotOrder::ExplanationFirst).ends_with(&r.final_translation));
        assert!(r.response(CotOrder::TranslationFirst).starts_with(&r.final_translation));
    }

    fn ascii_item(n: usize) -> Vec<Segment> {
        vec![Segment::text("a".repeat(n))]
    }

    #[test]
    fn packing_examples() {
        let tok = BpeVocab::base(Vec::new());
        let seqs = pack(vec![ascii_item(5000)], &tok, 2048, DelimiterStrategy::Sep).unwrap();
        assert_eq!(seqs.iter().map(|s| s.token_len).collect::<Vec<_>>(), vec![2048, 2048, 904]);
        let seqs = pack(vec![ascii_item(1000), ascii_item(1000)], &tok, 2048, DelimiterStrategy::Sep).unwrap();
        assert_eq!(seqs.iter().map(|s| s.token_len).collect::<Vec<_>>(), vec![2000]);
        assert!(pack(Vec::<Vec<Segment>>::new(), &tok, 2048, DelimiterStrategy::Sep).unwrap().is_empty());
        assert!(matches!(pack(vec![ascii_item(1)], &tok, 8, DelimiterStrategy::Sep), Err(PackingError::SeqLenTooSmall(8))));
    }

    #[test]
    fn tags_are_single_tokens_and_sidecar_matches() {
        let tok = BpeVocab::base(crate::tokenizer::reserved_tags());
        let segs = format_segments(&zh_en(), DelimiterStrategy::LangCode, None).unwrap();
        let seqs = pack(vec![segs], &tok, 64, DelimiterStrategy::LangCode).unwrap();
        assert_eq!(seqs[0].token_len, 1 + "你好".len() + 1 + "Hello".len());
        let sidecar = token_sidecar(&seqs);
        assert_eq!(sidecar.lines().next().unwrap().split(' ').count(), seqs[0].token_len);
        assert_eq!(tok.decode(&seqs[0].token_ids).unwrap(), "<ZH>你好<EN>Hello");
    }

    fn record(key: &str, tgt: Lang) -> InstructionRecord {
        InstructionRecord { source_key: key.into(), src_lang: Lang::EN, tgt_lang: tgt, prompt: "p".into(), response: "r".into() }
    }

    #[test]
    fn multiparallel_rejection() {
        let three = vec![record("s", Lang::DE), record("s", Lang::FR), record("s", Lang::ES)];
        assert_eq!(reject_multiparallel(three.clone(), false), three);
        let kept = reject_multiparallel(three, true);
        assert_eq!(kept, vec![record("s", Lang::DE)]);
        let distinct = vec![record("a", Lang::DE), record("b", Lang::FR), record("c", Lang::ES)];
        assert_eq!(reject_multiparallel(distinct.clone(), true), distinct);
        let two = vec![record("s", Lang::DE), record("s", Lang::FR)];
        assert_eq!(reject_multiparallel(two.clone(), true), two);
    }

    proptest! {
        #[test]
        fn lang_code_round_trip(s in 0usize..28, t in 0usize..28, a in "[a-zA-Z<>中 ]{1,12}", b in "[a-zA-Z<>中 ]{1,12}") {
            prop_assume!(s != t && !has_code_shaped_tag(&a) && !has_code_shaped_tag(&b));
            let langs: Vec<Lang> = Lang::all().collect();
            let pair = SentencePair::seed(langs[s], langs[t], a.clone(), b.clone()).unwrap();
            let formatted = format_pair(&pair, DelimiterStrategy::LangCode, None).unwrap();
            prop_assert_eq!(parse_lang_code(&formatted).unwrap(), (langs[s], langs[t], a, b));
        }

        #[test]
        fn packing_bound_and_conservation(lens in proptest::collection::vec(1usize..300, 0..30), max in 16usize..200) {
            let tok = BpeVocab::base(Vec::new());
            let items: Vec<_> = lens.iter().map(|&n| ascii_item(n)).collect();
            let seqs = pack(items, &tok, max, DelimiterStrategy::Sep).unwrap();
            prop_assert!(seqs.iter().all(|s| s.token_len <= max && s.token_len == s.token_ids.len()));
            prop_assert_eq!(seqs.iter().map(|s| s.token_len).sum::<usize>(), lens.iter().sum::<usize>());
            let text: String = seqs.iter().flat_map(|s| s.segments.iter().map(|g| g.content.clone())).collect();
            prop_assert_eq!(text.len(), lens.iter().sum::<usize>());
        }
    }
}

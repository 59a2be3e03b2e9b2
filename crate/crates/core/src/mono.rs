//! Monolingual corpus processing: quality tiering, tier routing (retain,
//! paraphrase, drop), tag filtering, topic balancing and per-language token
//! accounting.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::Lang;
use crate::service::{Service, ServiceError};
use crate::tokenizer::BpeVocab;
use crate::types::{Document, QualityTier, RecordError};

#[derive(Debug, Error)]
pub enum MonoError {
    #[error("quality scorer failed on document {doc_id}: {msg}")]
    ScorerFailure { doc_id: String, msg: String },
    #[error("document {0} has no quality tier")]
    UntieredDocument(String),
    #[error("paraphrasing document {doc_id}: {source}")]
    Service { doc_id: String, source: ServiceError },
    #[error("max_tag_share must be in (0, 1], got {0}")]
    InvalidShare(f64),
    #[error(transparent)]
    Record(#[from] RecordError),
}

pub trait QualityScorer {
    fn score(&self, doc: &Document) -> Result<QualityTier, String>;
}

impl<F> QualityScorer for F
where
    F: Fn(&Document) -> Result<QualityTier, String>,
{
    fn score(&self, doc: &Document) -> Result<QualityTier, String> {
        self(doc)
    }
}

/// Default scorer: long documents made mostly of letters are High, shorter
/// or noisier ones Medium, the rest Low.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeuristicScorer {
    pub high_min_chars: usize,
    pub high_min_letter_ratio: f64,
    pub medium_min_chars: usize,
    pub medium_min_letter_ratio: f64,
}

impl Default for HeuristicScorer {
    fn default() -> Self {
        HeuristicScorer { high_min_chars: 200, high_min_letter_ratio: 0.8, medium_min_chars: 30, medium_min_letter_ratio: 0.6 }
    }
}

impl HeuristicScorer {
    /// Alphabetic characters over non-whitespace characters.
    pub fn letter_ratio(text: &str) -> f64 {
        let (letters, visible) =
            text.chars().filter(|c| !c.is_whitespace()).fold((0usize, 0usize), |(l, v), c| (l + c.is_alphabetic() as usize, v + 1));
        if visible == 0 {
            0.0
        } else {
            letters as f64 / visible as f64
        }
    }
}

impl QualityScorer for HeuristicScorer {
    fn score(&self, doc: &Document) -> Result<QualityTier, String> {
        let ratio = Self::letter_ratio(doc.text());
        let len = doc.char_count();
        Ok(if len >= self.high_min_chars && ratio >= self.high_min_letter_ratio {
            QualityTier::High
        } else if len >= self.medium_min_chars && ratio >= self.medium_min_letter_ratio {
            QualityTier::Medium
        } else {
            QualityTier::Low
        })
    }
}

/// Assigns a tier to every document, preserving order.
pub fn tier_documents<'a, I>(docs: I, scorer: &'a dyn QualityScorer) -> impl Iterator<Item = Result<Document, MonoError>> + 'a
where
    I: IntoIterator<Item = Document>,
    I::IntoIter: 'a,
{
    docs.into_iter().map(move |mut doc| {
        let tier = scorer.score(&doc).map_err(|msg| MonoError::ScorerFailure { doc_id: doc.id.clone(), msg })?;
        doc.tier = Some(tier);
        Ok(doc)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Routed {
    Retained(Document),
    Rewritten(Document),
    Dropped(String),
}

/// High documents pass through, Medium ones are paraphrased, Low ones are
/// dropped (reported by id).
pub fn route_documents<'a, I>(docs: I, paraphraser: &'a Service) -> impl Iterator<Item = Result<Routed, MonoError>> + 'a
where
    I: IntoIterator<Item = Document>,
    I::IntoIter: 'a,
{
    docs.into_iter().map(move |mut doc| match doc.tier {
        None => Err(MonoError::UntieredDocument(doc.id)),
        Some(QualityTier::High) => Ok(Routed::Retained(doc)),
        Some(QualityTier::Low) => Ok(Routed::Dropped(doc.id)),
        Some(QualityTier::Medium) => {
            let text = paraphraser.paraphrase(doc.text(), doc.lang).map_err(|source| MonoError::Service { doc_id: doc.id.clone(), source })?;
            doc.set_text(text)?;
            Ok(Routed::Rewritten(doc))
        }
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RouteOutcome {
    pub retained: Vec<Document>,
    pub rewritten: Vec<Document>,
    pub dropped_count: usize,
}

impl RouteOutcome {
    fn push(&mut self, routed: Routed) {
        match routed {
            Routed::Retained(d) => self.retained.push(d),
            Routed::Rewritten(d) => self.rewritten.push(d),
            Routed::Dropped(_) => self.dropped_count += 1,
        }
    }
}

pub fn route_by_tier<I>(docs: I, paraphraser: &Service) -> Result<RouteOutcome, MonoError>
where
    I: IntoIterator<Item = Document>,
{
    let mut out = RouteOutcome::default();
    for routed in route_documents(docs, paraphraser) {
        out.push(routed?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefineOutcome {
    pub retained: Vec<Document>,
    pub rewritten: Vec<Document>,
    pub dropped_count: usize,
    pub iterations: usize,
}

/// Tier, route, and re-tier paraphrased output until no Medium documents
/// remain or `max_iterations` passes have run. Paraphrased documents that
/// reach High are reported as rewritten; those still Medium at the cap are
/// kept as rewritten too.
pub fn refine_to_fixpoint(
    docs: Vec<Document>,
    scorer: &dyn QualityScorer,
    paraphraser: &Service,
    max_iterations: usize,
) -> Result<RefineOutcome, MonoError> {
    let mut out = RefineOutcome::default();
    let mut pending = docs;
    let mut first_pass = true;
    while !pending.is_empty() && out.iterations < max_iterations.max(1) {
        out.iterations += 1;
        let tiered: Vec<Document> = tier_documents(std::mem::take(&mut pending), scorer).collect::<Result<_, _>>()?;
        for routed in route_documents(tiered, paraphraser) {
            match routed? {
                Routed::Retained(d) if first_pass => out.retained.push(d),
                Routed::Retained(d) => out.rewritten.push(d),
                Routed::Rewritten(d) => pending.push(d),
                Routed::Dropped(_) => out.dropped_count += 1,
            }
        }
        first_pass = false;
    }
    out.rewritten.append(&mut pending);
    Ok(out)
}

/// Drops documents carrying any excluded tag (case-insensitive).
pub fn exclude_tags<'a, I>(docs: I, excluded: &'a BTreeSet<String>) -> impl Iterator<Item = Document> + 'a
where
    I: IntoIterator<Item = Document>,
    I::IntoIter: 'a,
{
    let lowered: BTreeSet<String> = excluded.iter().map(|t| t.to_lowercase()).collect();
    docs.into_iter().filter(move |d| !d.tags.iter().any(|t| lowered.contains(&t.to_lowercase())))
}

pub fn unique_tag_count<'a, I>(docs: I) -> usize
where
    I: IntoIterator<Item = &'a Document>,
{
    docs.into_iter().flat_map(|d| d.tags.iter()).collect::<BTreeSet<_>>().len()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceSpec {
    pub max_tag_share: f64,
    #[serde(default)]
    pub per_language_token_weights: BTreeMap<Lang, f64>,
}

impl BalanceSpec {
    pub fn new(max_tag_share: f64) -> Self {
        BalanceSpec { max_tag_share, per_language_token_weights: BTreeMap::new() }
    }

    /// Language weights scaled to sum to 1 (empty if all are zero).
    pub fn normalized_weights(&self) -> BTreeMap<Lang, f64> {
        let total: f64 = self.per_language_token_weights.values().filter(|w| **w > 0.0).sum();
        if total <= 0.0 {
            return BTreeMap::new();
        }
        self.per_language_token_weights.iter().map(|(l, w)| (*l, w.max(0.0) / total)).collect()
    }
}

/// Per-tag document cap for a selection of `selected` documents.
pub fn tag_cap(max_tag_share: f64, selected: usize) -> usize {
    // Tolerate representation error such as 0.1 * 30 = 3.0000000000000004.
    (max_tag_share * selected as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Selects a largest subset in which every tag appears on at most
/// `tag_cap(max_tag_share, selected)` documents. Untagged documents are
/// never capped. Output keeps input order.
///
/// The cap only applies when the input carries at least two distinct tags.
/// With at most one tag per document the selection size is optimal; with
/// multi-tag documents a seeded greedy pass produces a selection to which no
/// further document can be added.
pub fn balance_topics(docs: &[Document], spec: &BalanceSpec, seed: u64) -> Result<Vec<Document>, MonoError> {
    let share = spec.max_tag_share;
    if !(share > 0.0 && share <= 1.0) {
        return Err(MonoError::InvalidShare(share));
    }
    if share >= 1.0 || unique_tag_count(docs) < 2 {
        return Ok(docs.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = if docs.iter().all(|d| d.tags.len() <= 1) { balance_single_tag(docs, share, &mut rng) } else { balance_greedy(docs, share, &mut rng) };
    Ok(docs.iter().zip(keep).filter(|(_, k)| *k).map(|(d, _)| d.clone()).collect())
}

fn balance_single_tag(docs: &[Document], share: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut untagged = 0usize;
    for (i, d) in docs.iter().enumerate() {
        match d.tags.iter().next() {
            Some(t) => groups.entry(t.as_str()).or_default().push(i),
            None => untagged += 1,
        }
    }
    let available = |m: usize| -> usize {
        let cap = tag_cap(share, m);
        untagged + groups.values().map(|g| g.len().min(cap)).sum::<usize>()
    };
    let target = (0..=docs.len()).rev().find(|&m| available(m) >= m).unwrap_or(0);
    let cap = tag_cap(share, target);
    let mut quotas: BTreeMap<&str, usize> = groups.iter().map(|(t, g)| (*t, g.len().min(cap))).collect();
    let mut excess = available(target) - target;
    while excess > 0 {
        // Trim the largest quota; ties go to the first tag in name order.
        let (tag, _) = quotas.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(t, q)| (*t, *q)).unwrap();
        *quotas.get_mut(tag).unwrap() -= 1;
        excess -= 1;
    }
    let mut keep: Vec<bool> = docs.iter().map(|d| d.tags.is_empty()).collect();
    for (tag, members) in &groups {
        let quota = quotas[tag];
        let mut chosen = members.clone();
        if quota < chosen.len() {
            chosen.shuffle(rng);
            chosen.truncate(quota);
        }
        for i in chosen {
            keep[i] = true;
        }
    }
    keep
}

fn balance_greedy(docs: &[Document], share: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| docs[i].tags.len());
    let mut keep = vec![false; docs.len()];
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut selected = 0usize;
    loop {
        let mut grew = false;
        for &i in &order {
            if keep[i] {
                continue;
            }
            let cap = tag_cap(share, selected + 1);
            if docs[i].tags.iter().all(|t| counts.get(t.as_str()).copied().unwrap_or(0) < cap) {
                keep[i] = true;
                selected += 1;
                grew = true;
                for t in &docs[i].tags {
                    *counts.entry(t.as_str()).or_insert(0) += 1;
                }
            }
        }
        if !grew {
            break;
        }
    }
    keep
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageTokens {
    pub tokens: u64,
    pub proportion: f64,
}

/// Token counts per language and their share of the total.
pub fn language_token_report<'a, I>(docs: I, tok: &BpeVocab) -> BTreeMap<Lang, LanguageTokens>
where
    I: IntoIterator<Item = &'a Document>,
{
    let mut counts: BTreeMap<Lang, u64> = BTreeMap::new();
    for doc in docs {
        *counts.entry(doc.lang).or_insert(0) += tok.encode(doc.text()).len() as u64;
    }
    let total: u64 = counts.values().sum();
    counts
        .into_iter()
        .map(|(lang, tokens)| {
            let proportion = if total == 0 { 0.0 } else { tokens as f64 / total as f64 };
            (lang, LanguageTokens { tokens, proportion })
        })
        .collect()
}

/// Target weight minus observed proportion, per language named in either.
pub fn language_weight_gaps(report: &BTreeMap<Lang, LanguageTokens>, spec: &BalanceSpec) -> BTreeMap<Lang, f64> {
    let weights = spec.normalized_weights();
    let langs: BTreeSet<Lang> = weights.keys().chain(report.keys()).copied().collect();
    langs.into_iter().map(|l| (l, weights.get(&l).copied().unwrap_or(0.0) - report.get(&l).map_or(0.0, |r| r.proportion))).collect()
}

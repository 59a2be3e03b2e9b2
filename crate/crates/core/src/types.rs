//! Record types shared by every pipeline stage.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::Lang;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("document {0}: text is empty")]
    EmptyText(String),
    #[error("document {id}: char_count {stated} does not match text length {actual}")]
    CharCount { id: String, stated: usize, actual: usize },
    #[error("pair has identical source and target language {0}")]
    SameLanguage(Lang),
    #[error("pair has an empty {0} text")]
    EmptyPairText(&'static str),
    #[error("seed-round pair must have Seed provenance, found {0:?}")]
    RoundProvenance(Provenance),
    #[error("language-id confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("alignment score {0} outside [0, 1]")]
    AlignScore(f64),
}

/// Document quality tier; `High > Medium > Low`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QualityTier {
    Low,
    Medium,
    High,
}

impl fmt::Display for QualityTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A monolingual text unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDocument")]
pub struct Document {
    pub id: String,
    pub lang: Lang,
    text: String,
    pub tags: BTreeSet<String>,
    /// `None` while unassigned.
    pub tier: Option<QualityTier>,
    pub source: String,
    char_count: usize,
}

#[derive(Deserialize)]
struct RawDocument {
    id: String,
    lang: Lang,
    text: String,
    #[serde(default)]
    tags: BTreeSet<String>,
    #[serde(default)]
    tier: Option<QualityTier>,
    #[serde(default)]
    source: String,
    char_count: Option<usize>,
}

impl TryFrom<RawDocument> for Document {
    type Error = RecordError;

    fn try_from(raw: RawDocument) -> Result<Self, Self::Error> {
        let mut doc = Document::new(raw.id, raw.lang, raw.text)?;
        if let Some(stated) = raw.char_count {
            if stated != doc.char_count {
                return Err(RecordError::CharCount { id: doc.id, stated, actual: doc.char_count });
            }
        }
        doc.tags = raw.tags;
        doc.tier = raw.tier;
        doc.source = raw.source;
        Ok(doc)
    }
}

impl Document {
    pub fn new(id: impl Into<String>, lang: Lang, text: impl Into<String>) -> Result<Self, RecordError> {
        let id = id.into();
        let text = text.into();
        if text.is_empty() {
            return Err(RecordError::EmptyText(id));
        }
        let char_count = text.chars().count();
        Ok(Document { id, lang, text, tags: BTreeSet::new(), tier: None, source: String::new(), char_count })
    }

    pub fn with_tags<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.tags = tags.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn char_count(&self) -> usize {
        self.char_count
    }

    /// Replaces the text, keeping `char_count` in sync.
    pub fn set_text(&mut self, text: impl Into<String>) -> Result<(), RecordError> {
        let text = text.into();
        if text.is_empty() {
            return Err(RecordError::EmptyText(self.id.clone()));
        }
        self.char_count = text.chars().count();
        self.text = text;
        Ok(())
    }
}

/// Where a sentence pair came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Seed,
    PseudoParallel,
    Rewritten,
}

/// An aligned bilingual unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPair")]
pub struct SentencePair {
    pub src_lang: Lang,
    pub tgt_lang: Lang,
    pub src_text: String,
    pub tgt_text: String,
    pub lid_confidence: (f64, f64),
    pub align_score: Option<f64>,
    pub round: u32,
    pub provenance: Provenance,
}

#[derive(Deserialize)]
struct RawPair {
    src_lang: Lang,
    tgt_lang: Lang,
    src_text: String,
    tgt_text: String,
    #[serde(default)]
    lid_confidence: (f64, f64),
    #[serde(default)]
    align_score: Option<f64>,
    #[serde(default)]
    round: u32,
    #[serde(default = "seed_provenance")]
    provenance: Provenance,
}

fn seed_provenance() -> Provenance {
    Provenance::Seed
}

impl TryFrom<RawPair> for SentencePair {
    type Error = RecordError;

    fn try_from(raw: RawPair) -> Result<Self, Self::Error> {
        let pair = SentencePair {
            src_lang: raw.src_lang,
            tgt_lang: raw.tgt_lang,
            src_text: raw.src_text,
            tgt_text: raw.tgt_text,
            lid_confidence: raw.lid_confidence,
            align_score: raw.align_score,
            round: raw.round,
            provenance: raw.provenance,
        };
        pair.validate()?;
        Ok(pair)
    }
}

impl SentencePair {
    /// A round-0 seed pair with zeroed scores.
    pub fn seed(src_lang: Lang, tgt_lang: Lang, src_text: impl Into<String>, tgt_text: impl Into<String>) -> Result<Self, RecordError> {
        let pair = SentencePair {
            src_lang,
            tgt_lang,
            src_text: src_text.into(),
            tgt_text: tgt_text.into(),
            lid_confidence: (0.0, 0.0),
            align_score: None,
            round: 0,
            provenance: Provenance::Seed,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        if self.src_lang == self.tgt_lang {
            return Err(RecordError::SameLanguage(self.src_lang));
        }
        if self.src_text.is_empty() {
            return Err(RecordError::EmptyPairText("source"));
        }
        if self.tgt_text.is_empty() {
            return Err(RecordError::EmptyPairText("target"));
        }
        if self.round == 0 && self.provenance != Provenance::Seed {
            return Err(RecordError::RoundProvenance(self.provenance));
        }
        for c in [self.lid_confidence.0, self.lid_confidence.1] {
            if !(0.0..=1.0).contains(&c) {
                return Err(RecordError::Confidence(c));
            }
        }
        if let Some(a) = self.align_score {
            if !(0.0..=1.0).contains(&a) {
                return Err(RecordError::AlignScore(a));
            }
        }
        Ok(())
    }

    pub fn direction(&self) -> (Lang, Lang) {
        (self.src_lang, self.tgt_lang)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RewardKind {
    Dual,
    Preference,
}

/// A scalar translation reward with named sub-scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardScore {
    pub kind: RewardKind,
    pub value: f64,
    #[serde(default)]
    pub components: BTreeMap<String, f64>,
}

impl RewardScore {
    pub fn preference(value: f64) -> Self {
        RewardScore { kind: RewardKind::Preference, value, components: BTreeMap::new() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn document_char_count_tracks_text() {
        let mut doc = Document::new("d1", Lang::ZH, "你好").unwrap();
        assert_eq!(doc.char_count(), 2);
        doc.set_text("你好世界").unwrap();
        assert_eq!(doc.char_count(), 4);
        assert!(doc.set_text("").is_err());
        assert!(Document::new("d2", Lang::EN, "").is_err());
    }

    #[test]
    fn document_rejects_wrong_char_count() {
        let line = r#"{"id":"x","lang":"en","text":"abc","char_count":4}"#;
        assert!(serde_json::from_str::<Document>(line).is_err());
        let line = r#"{"id":"x","lang":"en","text":"abc","char_count":3,"tier":"High"}"#;
        let doc: Document = serde_json::from_str(line).unwrap();
        assert_eq!(doc.tier, Some(QualityTier::High));
    }

    #[test]
    fn tier_order() {
        assert!(QualityTier::High > QualityTier::Medium);
        assert!(QualityTier::Medium > QualityTier::Low);
    }

    #[test]
    fn pair_invariants() {
        assert!(SentencePair::seed(Lang::EN, Lang::EN, "a", "b").is_err());
        assert!(SentencePair::seed(Lang::EN, Lang::DE, "", "b").is_err());
        let mut pair = SentencePair::seed(Lang::EN, Lang::DE, "a", "b").unwrap();
        pair.provenance = Provenance::PseudoParallel;
        assert_eq!(pair.validate(), Err(RecordError::RoundProvenance(Provenance::PseudoParallel)));
        pair.round = 1;
        assert!(pair.validate().is_ok());
        let bad = r#"{"src_lang":"en","tgt_lang":"de","src_text":"a","tgt_text":"b","round":0,"provenance":"Rewritten"}"#;
        assert!(serde_json::from_str::<SentencePair>(bad).is_err());
    }

    fn lang() -> impl Strategy<Value = Lang> {
        (0usize..crate::LANGUAGE_COUNT).prop_map(|i| Lang::all().nth(i).unwrap())
    }

    proptest! {
        #[test]
        fn document_round_trip(text in "\\PC{1,40}", tags in proptest::collection::btree_set("[a-z]{1,6}", 0..4), l in lang()) {
            let doc = Document::new("id-1", l, text).unwrap().with_tags(tags).with_source("web");
            let json = serde_json::to_string(&doc).unwrap();
            prop_assert_eq!(serde_json::from_str::<Document>(&json).unwrap(), doc);
        }

        #[test]
        fn pair_round_trip(src in "\\PC{1,30}", tgt in "\\PC{1,30}", c0 in 0.0f64..=1.0, c1 in 0.0f64..=1.0, a in proptest::option::of(0.0f64..=1.0)) {
            let mut pair = SentencePair::seed(Lang::ZH, Lang::EN, src, tgt).unwrap();
            pair.lid_confidence = (c0, c1);
            pair.align_score = a;
            let json = serde_json::to_string(&pair).unwrap();
            prop_assert_eq!(serde_json::from_str::<SentencePair>(&json).unwrap(), pair);
        }

        #[test]
        fn reward_round_trip(v in -1e6f64..1e6, c in proptest::collection::btree_map("[a-z]{1,5}", -10.0f64..10.0, 0..4)) {
            let score = RewardScore { kind: RewardKind::Preference, value: v, components: c };
            let json = serde_json::to_string(&score).unwrap();
            prop_assert_eq!(serde_json::from_str::<RewardScore>(&json).unwrap(), score);
        }
    }
}

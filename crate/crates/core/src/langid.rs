//! Character n-gram naive-Bayes language identification.
//!
//! Each profile holds additively smoothed n-gram distributions for orders
//! 1..=3 over the vocabulary shared by all trained languages. A text is
//! scored by its length-normalized log-likelihood under each profile and the
//! scores are softmax-normalized into a posterior.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError};
use crate::lang::Lang;

pub const MAX_ORDER: usize = 3;
pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Error)]
pub enum LangIdError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("training text for {0} is empty")]
    EmptyText(Lang),
    #[error("input text is empty")]
    EmptyInput,
    #[error("need at least two profiles, have {0}")]
    TooFewProfiles(usize),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Smoothed distribution for one n-gram order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderTable {
    pub n: usize,
    /// Number of n-gram tokens observed for this language.
    pub total: u64,
    /// Size of the n-gram vocabulary shared by all profiles.
    pub vocab_size: usize,
    /// Log-probabilities of n-grams observed for this language.
    pub ngram_logprobs: BTreeMap<String, f64>,
    /// Log-probability of any vocabulary n-gram not observed for this
    /// language (and of n-grams outside the vocabulary at classify time).
    pub unseen_logprob: f64,
    /// Total probability contributed by smoothing.
    pub smoothing_mass: f64,
}

impl OrderTable {
    fn logprob(&self, gram: &str) -> f64 {
        self.ngram_logprobs.get(gram).copied().unwrap_or(self.unseen_logprob)
    }

    /// Probability summed over the shared vocabulary; 1 up to rounding.
    pub fn total_mass(&self) -> f64 {
        let seen: f64 = self.ngram_logprobs.values().map(|lp| lp.exp()).sum();
        let unseen = (self.vocab_size - self.ngram_logprobs.len()) as f64 * self.unseen_logprob.exp();
        seen + unseen
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageProfile {
    pub lang: Lang,
    pub alpha: f64,
    /// Tables for orders 1..=MAX_ORDER; an order with an empty shared
    /// vocabulary is omitted.
    pub orders: Vec<OrderTable>,
}

/// Profiles keyed by language; iteration is in code order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LanguageProfiles(BTreeMap<Lang, LanguageProfile>);

impl LanguageProfiles {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, lang: Lang) -> Option<&LanguageProfile> {
        self.0.get(&lang)
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &LanguageProfile> {
        self.0.values()
    }

    pub fn langs(&self) -> impl Iterator<Item = Lang> + '_ {
        self.0.keys().copied()
    }

    /// Writes one `<code>.json` file per language.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), IoError> {
        let dir = dir.as_ref();
        for profile in self.iter() {
            io::write_json(dir.join(format!("{}.json", profile.lang.code())), profile)?;
        }
        Ok(())
    }

    /// Loads every `<code>.json` file in `dir`; other files are ignored.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, IoError> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(|e| IoError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .filter(|p| p.file_stem().and_then(|s| s.to_str()).is_some_and(|s| s.parse::<Lang>().is_ok()))
            .collect();
        paths.sort();
        let mut out = BTreeMap::new();
        for path in paths {
            let profile: LanguageProfile = io::read_json(&path)?;
            out.insert(profile.lang, profile);
        }
        Ok(LanguageProfiles(out))
    }
}

impl FromIterator<LanguageProfile> for LanguageProfiles {
    fn from_iter<I: IntoIterator<Item = LanguageProfile>>(iter: I) -> Self {
        LanguageProfiles(iter.into_iter().map(|p| (p.lang, p)).collect())
    }
}

/// All character n-grams of order `n`, in text order.
pub fn char_ngrams(text: &str, n: usize) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    if n == 0 || chars.len() < n {
        return Vec::new();
    }
    chars.windows(n).map(|w| w.iter().collect()).collect()
}

pub fn train_profiles(corpus: &[(Lang, String)]) -> Result<LanguageProfiles, LangIdError> {
    train_profiles_with(corpus, DEFAULT_ALPHA)
}

pub fn train_profiles_with(corpus: &[(Lang, String)], alpha: f64) -> Result<LanguageProfiles, LangIdError> {
    if corpus.is_empty() {
        return Err(LangIdError::EmptyCorpus);
    }
    // counts[lang][n-1][gram]
    let mut counts: BTreeMap<Lang, Vec<BTreeMap<String, u64>>> = BTreeMap::new();
    let mut vocab: Vec<BTreeSet<String>> = vec![BTreeSet::new(); MAX_ORDER];
    for (lang, text) in corpus {
        if text.is_empty() {
            return Err(LangIdError::EmptyText(*lang));
        }
        let per_lang = counts.entry(*lang).or_insert_with(|| vec![BTreeMap::new(); MAX_ORDER]);
        for n in 1..=MAX_ORDER {
            for gram in char_ngrams(text, n) {
                vocab[n - 1].insert(gram.clone());
                *per_lang[n - 1].entry(gram).or_insert(0) += 1;
            }
        }
    }
    let profiles = counts
        .into_iter()
        .map(|(lang, per_order)| {
            let orders = per_order
                .into_iter()
                .enumerate()
                .filter(|(i, _)| !vocab[*i].is_empty())
                .map(|(i, grams)| {
                    let v = vocab[i].len() as f64;
                    let total: u64 = grams.values().sum();
                    let denom = total as f64 + alpha * v;
                    OrderTable {
                        n: i + 1,
                        total,
                        vocab_size: vocab[i].len(),
                        ngram_logprobs: grams.into_iter().map(|(g, c)| (g, ((c as f64 + alpha) / denom).ln())).collect(),
                        unseen_logprob: (alpha / denom).ln(),
                        smoothing_mass: alpha * v / denom,
                    }
                })
                .collect();
            LanguageProfile { lang, alpha, orders }
        })
        .collect();
    Ok(profiles)
}

/// Classification result: the argmax language, its posterior, and the full
/// posterior in language-code order.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub lang: Lang,
    pub confidence: f64,
    pub posterior: Vec<(Lang, f64)>,
}

impl Classification {
    pub fn posterior_of(&self, lang: Lang) -> f64 {
        self.posterior.iter().find(|(l, _)| *l == lang).map_or(0.0, |(_, p)| *p)
    }
}

/// Length-normalized log-likelihood of `text` under `profile`.
pub fn normalized_loglik(text: &str, profile: &LanguageProfile) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for table in &profile.orders {
        for gram in char_ngrams(text, table.n) {
            sum += table.logprob(&gram);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

pub fn classify(text: &str, profiles: &LanguageProfiles) -> Result<Classification, LangIdError> {
    if text.is_empty() {
        return Err(LangIdError::EmptyInput);
    }
    if profiles.len() < 2 {
        return Err(LangIdError::TooFewProfiles(profiles.len()));
    }
    let scores: Vec<(Lang, f64)> = profiles.iter().map(|p| (p.lang, normalized_loglik(text, p))).collect();
    let max = scores.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|(_, s)| (s - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    let posterior: Vec<(Lang, f64)> = scores.iter().zip(&weights).map(|((l, _), w)| (*l, w / z)).collect();
    // Code order plus strict comparison: ties go to the smallest code.
    let (mut best, mut best_score) = scores[0];
    for &(lang, score) in &scores[1..] {
        if score > best_score {
            best = lang;
            best_score = score;
        }
    }
    let confidence = posterior.iter().find(|(l, _)| *l == best).map(|(_, p)| *p).unwrap_or(0.0);
    Ok(Classification { lang: best, confidence, posterior })
}

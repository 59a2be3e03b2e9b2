//! Bilingual data: Model 1 lexical alignment, pair filtering, pseudo-parallel
//! generation, target rewriting and round orchestration.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError};
use crate::lang::Lang;
use crate::langid::{classify, LanguageProfiles};
use crate::service::{DecodeParams, Service, ServiceError, ServiceOutput, ServiceRequest};
use crate::types::{Document, Provenance, RecordError, SentencePair};

#[derive(Debug, Error)]
pub enum ParallelError {
    #[error("no alignable pairs in corpus")]
    EmptyCorpus,
    #[error("em_iterations must be at least 1")]
    ZeroIterations,
    #[error("training pairs mix directions {0:?} and {1:?}")]
    MixedDirections((Lang, Lang), (Lang, Lang)),
    #[error("model direction {model:?} does not match pair direction {pair:?}")]
    DirectionMismatch { model: (Lang, Lang), pair: (Lang, Lang) },
    #[error("pseudo-parallel pairs need a round of at least 1")]
    InvalidRound,
    #[error("rewriting pair {index}: {source}")]
    Service { index: usize, source: ServiceError },
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Character tokens for zh/ja/th, whitespace tokens otherwise.
pub fn tokenize(text: &str, lang: Lang) -> Vec<String> {
    if lang.is_unsegmented() {
        text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect()
    } else {
        text.split_whitespace().map(String::from).collect()
    }
}

/// Lexical translation table t(tgt | src) from Model 1 EM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentModel {
    pub src_lang: Lang,
    pub tgt_lang: Lang,
    pub em_iterations: u32,
    /// src token -> tgt token -> probability. Absent entries are zero.
    pub lex_probs: BTreeMap<String, BTreeMap<String, f64>>,
    /// Corpus log-likelihood under the initial table and after each iteration.
    pub log_likelihoods: Vec<f64>,
}

impl AlignmentModel {
    pub fn direction(&self) -> (Lang, Lang) {
        (self.src_lang, self.tgt_lang)
    }

    pub fn prob(&self, src: &str, tgt: &str) -> f64 {
        self.lex_probs.get(src).and_then(|row| row.get(tgt)).copied().unwrap_or(0.0)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IoError> {
        io::write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IoError> {
        io::read_json(path)
    }
}

struct Indexed {
    src_vocab: Vec<String>,
    tgt_vocab: Vec<String>,
    pairs: Vec<(Vec<usize>, Vec<usize>)>,
}

fn index_corpus(pairs: &[SentencePair]) -> Indexed {
    let tokenized: Vec<(Vec<String>, Vec<String>)> = pairs
        .iter()
        .map(|p| (tokenize(&p.src_text, p.src_lang), tokenize(&p.tgt_text, p.tgt_lang)))
        .filter(|(s, t)| !s.is_empty() && !t.is_empty())
        .collect();
    let src_vocab: Vec<String> = tokenized.iter().flat_map(|(s, _)| s.iter().cloned()).collect::<BTreeSet<_>>().into_iter().collect();
    let tgt_vocab: Vec<String> = tokenized.iter().flat_map(|(_, t)| t.iter().cloned()).collect::<BTreeSet<_>>().into_iter().collect();
    let pos = |vocab: &[String], tok: &String| vocab.binary_search(tok).expect("token indexed");
    let pairs =
        tokenized.iter().map(|(s, t)| (s.iter().map(|x| pos(&src_vocab, x)).collect(), t.iter().map(|x| pos(&tgt_vocab, x)).collect())).collect();
    Indexed { src_vocab, tgt_vocab, pairs }
}

/// Sparse t(f|e): one row per source id, keyed by target id.
type Table = Vec<BTreeMap<usize, f64>>;

fn lookup(table: &Table, e: usize, f: usize, uniform: Option<f64>) -> f64 {
    match uniform {
        Some(u) => u,
        None => table[e].get(&f).copied().unwrap_or(0.0),
    }
}

fn log_likelihood(corpus: &Indexed, table: &Table, uniform: Option<f64>) -> f64 {
    let mut ll = 0.0;
    for (src, tgt) in &corpus.pairs {
        for &f in tgt {
            let s: f64 = src.iter().map(|&e| lookup(table, e, f, uniform)).sum();
            ll += (s / src.len() as f64).ln();
        }
    }
    ll
}

/// Model 1 EM without a NULL source token, starting from the uniform table
/// over the target vocabulary. All pairs must share one direction; pairs
/// whose either side tokenizes to nothing are skipped.
pub fn train_alignment(pairs: &[SentencePair], iterations: u32) -> Result<AlignmentModel, ParallelError> {
    if iterations == 0 {
        return Err(ParallelError::ZeroIterations);
    }
    let first = pairs.first().ok_or(ParallelError::EmptyCorpus)?.direction();
    if let Some(p) = pairs.iter().find(|p| p.direction() != first) {
        return Err(ParallelError::MixedDirections(first, p.direction()));
    }
    let corpus = index_corpus(pairs);
    if corpus.pairs.is_empty() {
        return Err(ParallelError::EmptyCorpus);
    }
    let uniform = 1.0 / corpus.tgt_vocab.len() as f64;
    let mut table: Table = vec![BTreeMap::new(); corpus.src_vocab.len()];
    let mut lls = vec![log_likelihood(&corpus, &table, Some(uniform))];
    for it in 0..iterations {
        let init = if it == 0 { Some(uniform) } else { None };
        let mut counts: Table = vec![BTreeMap::new(); corpus.src_vocab.len()];
        for (src, tgt) in &corpus.pairs {
            for &f in tgt {
                let denom: f64 = src.iter().map(|&e| lookup(&table, e, f, init)).sum();
                for &e in src {
                    *counts[e].entry(f).or_insert(0.0) += lookup(&table, e, f, init) / denom;
                }
            }
        }
        for row in counts.iter_mut() {
            let total: f64 = row.values().sum();
            for v in row.values_mut() {
                *v /= total;
            }
        }
        table = counts;
        lls.push(log_likelihood(&corpus, &table, None));
    }
    let lex_probs = table
        .into_iter()
        .enumerate()
        .map(|(e, row)| (corpus.src_vocab[e].clone(), row.into_iter().map(|(f, p)| (corpus.tgt_vocab[f].clone(), p)).collect()))
        .collect();
    Ok(AlignmentModel { src_lang: first.0, tgt_lang: first.1, em_iterations: iterations, lex_probs, log_likelihoods: lls })
}

/// Fraction of source tokens whose best translation probability into some
/// target token of the pair exceeds `tau`. Zero when either side has no
/// tokens.
pub fn alignment_score(pair: &SentencePair, model: &AlignmentModel, tau: f64) -> Result<f64, ParallelError> {
    if model.direction() != pair.direction() {
        return Err(ParallelError::DirectionMismatch { model: model.direction(), pair: pair.direction() });
    }
    let src = tokenize(&pair.src_text, pair.src_lang);
    let tgt = tokenize(&pair.tgt_text, pair.tgt_lang);
    if src.is_empty() || tgt.is_empty() {
        return Ok(0.0);
    }
    let aligned = src.iter().filter(|e| tgt.iter().any(|f| model.prob(e, f) > tau)).count();
    Ok(aligned as f64 / src.len() as f64)
}

/// Mean of the forward score and the score of the swapped pair under
/// `backward`.
pub fn alignment_score_symmetric(pair: &SentencePair, forward: &AlignmentModel, backward: &AlignmentModel, tau: f64) -> Result<f64, ParallelError> {
    let mut swapped = pair.clone();
    std::mem::swap(&mut swapped.src_lang, &mut swapped.tgt_lang);
    std::mem::swap(&mut swapped.src_text, &mut swapped.tgt_text);
    Ok((alignment_score(pair, forward, tau)? + alignment_score(&swapped, backward, tau)?) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterThresholds {
    pub lid_min: f64,
    pub align_min: f64,
    pub length_ratio_max: f64,
    pub tau_align: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        FilterThresholds { lid_min: 0.8, align_min: 0.5, length_ratio_max: 3.0, tau_align: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FilterReason {
    LowLidConfidenceSrc,
    LowLidConfidenceTgt,
    LowAlignment,
    LengthRatio,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub accepted: bool,
    pub reasons: Vec<FilterReason>,
    pub lid_confidence: (f64, f64),
    pub align_score: f64,
}

/// Posterior of the claimed language; zero when the classifier cannot run.
fn lid_confidence(text: &str, lang: Lang, profiles: &LanguageProfiles) -> f64 {
    classify(text, profiles).map(|c| c.posterior_of(lang)).unwrap_or(0.0)
}

/// Runs every check and reports all failures.
pub fn filter_pair(
    pair: &SentencePair,
    profiles: &LanguageProfiles,
    model: &AlignmentModel,
    thresholds: &FilterThresholds,
) -> Result<FilterVerdict, ParallelError> {
    let align = alignment_score(pair, model, thresholds.tau_align)?;
    let lid = (lid_confidence(&pair.src_text, pair.src_lang, profiles), lid_confidence(&pair.tgt_text, pair.tgt_lang, profiles));
    let mut reasons = Vec::new();
    if lid.0 < thresholds.lid_min {
        reasons.push(FilterReason::LowLidConfidenceSrc);
    }
    if lid.1 < thresholds.lid_min {
        reasons.push(FilterReason::LowLidConfidenceTgt);
    }
    if align < thresholds.align_min {
        reasons.push(FilterReason::LowAlignment);
    }
    let (ls, lt) = (pair.src_text.chars().count(), pair.tgt_text.chars().count());
    let (lo, hi) = (ls.min(lt), ls.max(lt));
    if lo == 0 || hi as f64 / lo as f64 > thresholds.length_ratio_max {
        reasons.push(FilterReason::LengthRatio);
    }
    if tokenize(&pair.src_text, pair.src_lang).is_empty() || tokenize(&pair.tgt_text, pair.tgt_lang).is_empty() {
        reasons.push(FilterReason::Empty);
    }
    Ok(FilterVerdict { accepted: reasons.is_empty(), reasons, lid_confidence: lid, align_score: align })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SkipReason {
    SameLanguage,
    Service(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Generated {
    Pair(SentencePair),
    Skipped { doc_id: String, tgt_lang: Lang, reason: SkipReason },
}

/// Translates each document into `tgt_lang`, stamping pairs with `round`.
/// Documents already in `tgt_lang` and failed translations are skipped and
/// logged. At most `max_in_flight` requests run concurrently.
pub fn generate_pseudo_parallel(
    docs: &[Document],
    tgt_lang: Lang,
    translator: &Service,
    decode: &DecodeParams,
    round: u32,
    max_in_flight: usize,
) -> Result<Vec<Generated>, ParallelError> {
    if round == 0 {
        return Err(ParallelError::InvalidRound);
    }
    let todo: Vec<&Document> = docs.iter().filter(|d| d.lang != tgt_lang).collect();
    let requests =
        todo.iter().map(|d| ServiceRequest::Translate { text: d.text().to_string(), src_lang: d.lang, tgt_lang, decode: decode.clone() }).collect();
    let mut results = translator.call_many(requests, max_in_flight).into_iter();
    let mut out = Vec::with_capacity(docs.len());
    for doc in docs {
        if doc.lang == tgt_lang {
            log::info!("skipping {}: already in {}", doc.id, tgt_lang);
            out.push(Generated::Skipped { doc_id: doc.id.clone(), tgt_lang, reason: SkipReason::SameLanguage });
            continue;
        }
        let text = match results.next().expect("one result per request") {
            Ok(ServiceOutput::Text { text }) => Ok(text),
            Ok(other) => Err(format!("expected text, got {other:?}")),
            Err(e) => Err(e.to_string()),
        };
        let generated = text.and_then(|tgt_text| {
            let pair = SentencePair {
                src_lang: doc.lang,
                tgt_lang,
                src_text: doc.text().to_string(),
                tgt_text,
                lid_confidence: (0.0, 0.0),
                align_score: None,
                round,
                provenance: Provenance::PseudoParallel,
            };
            pair.validate().map(|_| pair).map_err(|e| e.to_string())
        });
        out.push(match generated {
            Ok(pair) => Generated::Pair(pair),
            Err(msg) => {
                log::warn!("skipping {}: {msg}", doc.id);
                Generated::Skipped { doc_id: doc.id.clone(), tgt_lang, reason: SkipReason::Service(msg) }
            }
        });
    }
    Ok(out)
}

/// Replaces each target with the rewriter's paraphrase, marks it Rewritten
/// and increments its round.
pub fn rewrite_pairs(pairs: Vec<SentencePair>, rewriter: &Service, max_in_flight: usize) -> Vec<Result<SentencePair, ParallelError>> {
    let requests = pairs.iter().map(|p| ServiceRequest::Paraphrase { text: p.tgt_text.clone(), lang: p.tgt_lang }).collect();
    let results = rewriter.call_many(requests, max_in_flight);
    pairs
        .into_iter()
        .zip(results)
        .enumerate()
        .map(|(index, (mut pair, result))| {
            let text = match result {
                Ok(ServiceOutput::Text { text }) => text,
                Ok(other) => {
                    let kind = crate::service::ServiceErrorKind::MalformedResponse(format!("expected text, got {other:?}"));
                    return Err(ParallelError::Service { index, source: ServiceError { service: rewriter.name().to_string(), kind, attempts: 1 } });
                }
                Err(source) => return Err(ParallelError::Service { index, source }),
            };
            pair.tgt_text = text;
            pair.provenance = Provenance::Rewritten;
            pair.round += 1;
            pair.validate()?;
            Ok(pair)
        })
        .collect()
}

/// Bookkeeping carried from one round to the next.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostRoundState {
    pub round: u32,
    pub translator: String,
    pub counts: BTreeMap<String, u64>,
    pub output_shard_paths: Vec<PathBuf>,
}

impl BoostRoundState {
    pub fn new(translator: impl Into<String>) -> Self {
        BoostRoundState { translator: translator.into(), ..Default::default() }
    }
}

/// Corpus paths for one round: monolingual documents to translate and
/// pairs from earlier rounds to rewrite.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoundInputs {
    pub docs: Vec<PathBuf>,
    pub pairs: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoundConfig {
    /// Languages each document is translated into.
    pub tgt_langs: Vec<Lang>,
    pub thresholds: FilterThresholds,
    pub em_iterations: u32,
    pub decode: DecodeParams,
    pub seed: u64,
    pub max_in_flight: usize,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            tgt_langs: vec![Lang::EN],
            thresholds: FilterThresholds::default(),
            em_iterations: 5,
            decode: DecodeParams::default(),
            seed: 0,
            max_in_flight: 4,
        }
    }
}

pub struct RoundServices<'a> {
    pub translator: &'a Service,
    pub rewriter: &'a Service,
    pub profiles: &'a LanguageProfiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedPair {
    pub pair: SentencePair,
    pub reasons: Vec<FilterReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundManifest {
    pub round: u32,
    pub seed: u64,
    pub config_hash: String,
    pub input_hashes: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
    pub shards: Vec<String>,
}

pub fn round_dir_name(round: u32) -> String {
    format!("round_{round:03}")
}

fn mix_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined value.
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One generate, rewrite, filter pass. Accepted pairs land in
/// `out_dir/round_NNN/<src>-<tgt>.jsonl`, rejected ones in `rejected.jsonl`,
/// with a `manifest.json`. The round directory is assembled under a temp
/// name and renamed into place, replacing any earlier copy.
pub fn run_boost_round(
    state: &BoostRoundState,
    inputs: &RoundInputs,
    out_dir: &Path,
    config: &RoundConfig,
    services: &RoundServices<'_>,
) -> Result<BoostRoundState, ParallelError> {
    let round = state.round + 1;
    let mut input_hashes = BTreeMap::new();
    let mut docs: Vec<Document> = Vec::new();
    for path in &inputs.docs {
        input_hashes.insert(path.display().to_string(), io::sha256_file(path)?);
        docs.extend(io::read_jsonl::<Document>(path)?);
    }
    let mut prior: Vec<SentencePair> = Vec::new();
    for path in &inputs.pairs {
        input_hashes.insert(path.display().to_string(), io::sha256_file(path)?);
        prior.extend(io::read_jsonl::<SentencePair>(path)?);
    }

    let mut counts: BTreeMap<String, u64> =
        ["processed", "skipped", "accepted", "rejected", "pseudo_parallel", "rewritten"].iter().map(|k| (k.to_string(), 0)).collect();
    let mut bump = |key: &str| *counts.get_mut(key).unwrap() += 1;

    let mut candidates: Vec<SentencePair> = Vec::new();
    for (li, &tgt) in config.tgt_langs.iter().enumerate() {
        let decode = DecodeParams { sample_seed: Some(mix_seed(config.seed, li as u64)), ..config.decode.clone() };
        for g in generate_pseudo_parallel(&docs, tgt, services.translator, &decode, round, config.max_in_flight)? {
            bump("processed");
            match g {
                Generated::Pair(p) => candidates.push(p),
                Generated::Skipped { .. } => bump("skipped"),
            }
        }
    }
    for result in rewrite_pairs(prior, services.rewriter, config.max_in_flight) {
        bump("processed");
        match result {
            Ok(p) => candidates.push(p),
            Err(e) => {
                log::warn!("rewrite skipped: {e}");
                bump("skipped");
            }
        }
    }

    let mut by_direction: BTreeMap<(Lang, Lang), Vec<SentencePair>> = BTreeMap::new();
    for p in &candidates {
        by_direction.entry(p.direction()).or_default().push(p.clone());
    }
    let mut models = BTreeMap::new();
    for (dir, pairs) in &by_direction {
        match train_alignment(pairs, config.em_iterations) {
            Ok(m) => {
                models.insert(*dir, m);
            }
            Err(ParallelError::EmptyCorpus) => {}
            Err(e) => return Err(e),
        }
    }

    let mut accepted: BTreeMap<(Lang, Lang), Vec<SentencePair>> = BTreeMap::new();
    let mut rejected = Vec::new();
    for mut pair in candidates {
        let verdict = match models.get(&pair.direction()) {
            Some(model) => filter_pair(&pair, services.profiles, model, &config.thresholds)?,
            None => FilterVerdict { accepted: false, reasons: vec![FilterReason::Empty], lid_confidence: (0.0, 0.0), align_score: 0.0 },
        };
        pair.lid_confidence = verdict.lid_confidence;
        pair.align_score = Some(verdict.align_score);
        if verdict.accepted {
            bump("accepted");
            bump(if pair.provenance == Provenance::Rewritten { "rewritten" } else { "pseudo_parallel" });
            accepted.entry(pair.direction()).or_default().push(pair);
        } else {
            bump("rejected");
            rejected.push(RejectedPair { pair, reasons: verdict.reasons });
        }
    }

    let name = round_dir_name(round);
    let final_dir = out_dir.join(&name);
    let tmp_dir = out_dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let shards: Vec<String> = accepted.keys().map(|(s, t)| format!("{}-{}.jsonl", s.code(), t.code())).collect();
    let manifest = RoundManifest {
        round,
        seed: config.seed,
        config_hash: io::sha256_hex(&serde_json::to_vec(config).map_err(IoError::from)?),
        input_hashes,
        counts: counts.clone(),
        shards: shards.clone(),
    };
    let write = || -> Result<(), IoError> {
        if tmp_dir.exists() {
            fs::remove_dir_all(&tmp_dir).map_err(|e| IoError::io(&tmp_dir, e))?;
        }
        fs::create_dir_all(&tmp_dir).map_err(|e| IoError::io(&tmp_dir, e))?;
        for (shard, pairs) in shards.iter().zip(accepted.values()) {
            io::write_jsonl(tmp_dir.join(shard), pairs)?;
        }
        io::write_jsonl(tmp_dir.join("rejected.jsonl"), &rejected)?;
        io::write_json(tmp_dir.join("manifest.json"), &manifest)?;
        if final_dir.exists() {
            fs::remove_dir_all(&final_dir).map_err(|e| IoError::io(&final_dir, e))?;
        }
        fs::rename(&tmp_dir, &final_dir).map_err(|e| IoError::io(&final_dir, e))
    };
    if let Err(e) = write() {
        let _ = fs::remove_dir_all(&tmp_dir);
        return Err(e.into());
    }

    Ok(BoostRoundState {
        round,
        translator: state.translator.clone(),
        counts,
        output_shard_paths: shards.iter().map(|s| final_dir.join(s)).collect(),
    })
}

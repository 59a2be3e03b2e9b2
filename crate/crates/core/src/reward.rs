//! Character n-gram similarity, round-trip (dual) and preference rewards,
//! best-of-n selection and rollout batch assembly.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::Lang;
use crate::service::{DecodeParams, Service, ServiceError, ServiceErrorKind, ServiceOutput, ServiceRequest};
use crate::tokenizer::BpeVocab;
use crate::types::{RewardKind, RewardScore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Leg {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("both strings are empty")]
    BothEmpty,
    #[error("max_n must be at least 1")]
    InvalidOrder,
    #[error("beta must be positive and finite")]
    InvalidBeta,
    #[error("source and target language are both {0}")]
    SameLanguage(Lang),
    #[error("{leg:?} leg failed: {source}")]
    Service { leg: Leg, source: ServiceError },
    #[error("no candidates to score")]
    EmptyCandidates,
    #[error("scorer returned {got} scores for {expected} candidates")]
    LengthMismatch { expected: usize, got: usize },
    #[error("{candidates} candidates but {scores} scores")]
    ArityMismatch { candidates: usize, scores: usize },
    #[error("k must be between 1 and the candidate count, got {0}")]
    InvalidK(usize),
    #[error("rollouts_per_query must be at least 1")]
    ZeroRollouts,
    #[error("query id {0} appears twice")]
    DuplicateQuery(String),
    #[error("every rollout failed for query {0}")]
    AllRolloutsFailed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimilarityParams {
    pub max_n: usize,
    pub beta: f64,
}

impl Default for SimilarityParams {
    fn default() -> Self {
        SimilarityParams { max_n: 6, beta: 2.0 }
    }
}

fn ngram_counts(chars: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut counts = HashMap::new();
    if chars.len() >= n {
        for w in chars.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

// Six 21-bit scalar values fit in a u128, so n-grams up to this order are
// compared as packed integers.
const PACKED_MAX_N: usize = 6;

#[derive(Default)]
struct Scratch {
    ac: Vec<char>,
    bc: Vec<char>,
    keys: Vec<u128>,
    short: ShortScratch,
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Scratch> = std::cell::RefCell::new(Scratch::default());
}

const SLOT: u32 = 21;

/// Pushes one key per start position: the next PACKED_MAX_N chars as
/// scalar + 1 in 21-bit slots, first char highest, a missing char 0. The
/// two low bits carry `side`.
fn push_window_keys(chars: &[char], side: u128, out: &mut Vec<u128>) {
    let top = SLOT * (PACKED_MAX_N as u32 - 1);
    let mut window = 0u128;
    for &c in chars.iter().rev() {
        window = (window >> SLOT) | ((c as u128 + 1) << top);
        out.push(window << 2 | side);
    }
}

/// Matched n-gram counts for orders 1..=PACKED_MAX_N in a single pass over
/// the sorted keys of both strings. Neighbours sharing an n-char prefix are
/// in the same order-n group; each group contributes min(count a, count b).
fn matched_packed(keys: &mut [u128]) -> [usize; PACKED_MAX_N] {
    keys.sort_unstable();
    let mut matched = [0usize; PACKED_MAX_N];
    let mut counts = [[0usize; 2]; PACKED_MAX_N];
    let mut prev: Option<u128> = None;
    for &k in keys.iter() {
        let window = k >> 2;
        if let Some(p) = prev {
            let diff = window ^ p;
            let shared = if diff == 0 { PACKED_MAX_N } else { ((diff.leading_zeros() - 2) / SLOT) as usize };
            for n in shared..PACKED_MAX_N {
                matched[n] += counts[n][0].min(counts[n][1]);
                counts[n] = [0, 0];
            }
        }
        let side = (k & 1) as usize;
        let len = PACKED_MAX_N - (window.trailing_zeros() / SLOT) as usize;
        for c in &mut counts[..len] {
            c[side] += 1;
        }
        prev = Some(window);
    }
    for n in 0..PACKED_MAX_N {
        matched[n] += counts[n][0].min(counts[n][1]);
    }
    matched
}

/// Same result as `matched_packed` for strings of at most 64 chars, without
/// sorting. Bit j of `same[i]` says the order-n n-grams at a[i] and b[j] are
/// equal. That is an equivalence, so greedily giving each position of `a`
/// the first free equal position of `b` matches min(count a, count b).
fn matched_short(ac: &[char], bc: &[char], scratch: &mut ShortScratch) -> [usize; PACKED_MAX_N] {
    let ShortScratch { eq, same } = scratch;
    eq.clear();
    eq.extend(ac.iter().map(|&ca| bc.iter().enumerate().fold(0u64, |m, (j, &cb)| m | ((ca == cb) as u64) << j)));
    same.clear();
    same.extend_from_slice(eq);
    let mut matched = [0usize; PACKED_MAX_N];
    for (n, m) in matched.iter_mut().enumerate() {
        let Some(count) = ac.len().checked_sub(n).filter(|&c| c > 0) else { break };
        if n > 0 {
            for (s, e) in same[..count].iter_mut().zip(&eq[n..]) {
                *s &= e >> n;
            }
        }
        let mut used = 0u64;
        for &s in &same[..count] {
            let free = s & !used;
            used |= free & free.wrapping_neg();
            *m += (free != 0) as usize;
        }
    }
    matched
}

#[derive(Default)]
struct ShortScratch {
    eq: Vec<u64>,
    same: Vec<u64>,
}

fn check_params(a: &str, b: &str, params: SimilarityParams) -> Result<(), RewardError> {
    if params.max_n == 0 {
        return Err(RewardError::InvalidOrder);
    }
    if !(params.beta > 0.0 && params.beta.is_finite()) {
        return Err(RewardError::InvalidBeta);
    }
    if a.is_empty() && b.is_empty() {
        return Err(RewardError::BothEmpty);
    }
    Ok(())
}

/// Calls `emit(n, score)` for each order 1..=max_n.
fn for_each_fscore(a: &str, b: &str, params: SimilarityParams, mut emit: impl FnMut(usize, Option<f64>)) {
    let b2 = params.beta * params.beta;
    SCRATCH.with(|cell| {
        let mut guard = cell.borrow_mut();
        let Scratch { ac, bc, keys, short } = &mut *guard;
        ac.clear();
        ac.extend(a.chars());
        bc.clear();
        bc.extend(b.chars());
        let (a_len, b_len) = (ac.len(), bc.len());
        let packed = if a_len <= 64 && b_len <= 64 {
            matched_short(ac, bc, short)
        } else {
            keys.clear();
            push_window_keys(ac, 0, keys);
            push_window_keys(bc, 1, keys);
            matched_packed(keys)
        };
        for n in 1..=params.max_n {
            let ref_total = a_len.saturating_sub(n - 1);
            let hyp_total = b_len.saturating_sub(n - 1);
            if ref_total == 0 && hyp_total == 0 {
                emit(n, None);
                continue;
            }
            if ref_total == 0 || hyp_total == 0 {
                emit(n, Some(0.0));
                continue;
            }
            let matched = if n <= PACKED_MAX_N {
                packed[n - 1]
            } else {
                let hyp = ngram_counts(bc, n);
                ngram_counts(ac, n).iter().map(|(g, c)| (*c).min(hyp.get(g).copied().unwrap_or(0))).sum()
            };
            let p = matched as f64 / hyp_total as f64;
            let r = matched as f64 / ref_total as f64;
            emit(n, Some(if p + r == 0.0 { 0.0 } else { (1.0 + b2) * p * r / (b2 * p + r) }));
        }
    });
}

/// F-beta per order 1..=max_n, treating `a` as the reference and `b` as the
/// hypothesis. `None` marks orders where neither string has an n-gram.
pub fn chr_ngram_fscores(a: &str, b: &str, params: SimilarityParams) -> Result<Vec<Option<f64>>, RewardError> {
    check_params(a, b, params)?;
    let mut out = Vec::with_capacity(params.max_n);
    for_each_fscore(a, b, params, |_, f| out.push(f));
    Ok(out)
}

/// Mean F-beta over orders where at least one string has an n-gram.
pub fn chr_ngram_similarity(a: &str, b: &str, params: SimilarityParams) -> Result<f64, RewardError> {
    check_params(a, b, params)?;
    let (mut sum, mut present) = (0.0, 0usize);
    for_each_fscore(a, b, params, |_, f| {
        if let Some(f) = f {
            sum += f;
            present += 1;
        }
    });
    Ok(sum / present as f64)
}

/// A ⇒ B ⇒ Ã.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTripRecord {
    pub a_text: String,
    pub b_text: String,
    pub a_tilde: String,
    pub direction: (Lang, Lang),
}

fn dual_score(record: &RoundTripRecord, params: SimilarityParams) -> Result<RewardScore, RewardError> {
    let per_n = chr_ngram_fscores(&record.a_text, &record.a_tilde, params)?;
    let mut components = BTreeMap::new();
    for (i, f) in per_n.iter().enumerate() {
        if let Some(f) = f {
            components.insert(format!("chr_f{}", i + 1), *f);
        }
    }
    components.insert("b_chars".to_string(), record.b_text.chars().count() as f64);
    components.insert("a_tilde_chars".to_string(), record.a_tilde.chars().count() as f64);
    let present: Vec<f64> = per_n.into_iter().flatten().collect();
    let value = present.iter().sum::<f64>() / present.len() as f64;
    Ok(RewardScore { kind: RewardKind::Dual, value, components })
}

/// Translates A forward, back-translates the result, and scores A against
/// the back-translation.
pub fn dual_reward(
    a_text: &str,
    direction: (Lang, Lang),
    forward: &Service,
    backward: &Service,
    params: SimilarityParams,
    decode: &DecodeParams,
) -> Result<(RewardScore, RoundTripRecord), RewardError> {
    let (src, tgt) = direction;
    if src == tgt {
        return Err(RewardError::SameLanguage(src));
    }
    let b_text = forward.translate(a_text, src, tgt, decode.clone()).map_err(|source| RewardError::Service { leg: Leg::Forward, source })?;
    let a_tilde = backward.translate(&b_text, tgt, src, decode.clone()).map_err(|source| RewardError::Service { leg: Leg::Backward, source })?;
    let record = RoundTripRecord { a_text: a_text.to_string(), b_text, a_tilde, direction };
    Ok((dual_score(&record, params)?, record))
}

/// One Preference score per candidate, in candidate order.
pub fn preference_reward(src_text: &str, candidates: &[String], scorer: &Service) -> Result<Vec<RewardScore>, RewardError> {
    if candidates.is_empty() {
        return Err(RewardError::EmptyCandidates);
    }
    let scores = scorer.preference_scores(src_text, candidates).map_err(|source| RewardError::Service { leg: Leg::Forward, source })?;
    if scores.len() != candidates.len() {
        return Err(RewardError::LengthMismatch { expected: candidates.len(), got: scores.len() });
    }
    Ok(scores.into_iter().map(RewardScore::preference).collect())
}

/// Indices of the `k` best scores, best first; ties go to the lower index.
pub fn rejection_sample(candidates: &[String], scores: &[RewardScore], k: usize) -> Result<Vec<usize>, RewardError> {
    if candidates.len() != scores.len() {
        return Err(RewardError::ArityMismatch { candidates: candidates.len(), scores: scores.len() });
    }
    if k == 0 || k > candidates.len() {
        return Err(RewardError::InvalidK(k));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].value.total_cmp(&scores[i].value).then(i.cmp(&j)));
    order.truncate(k);
    Ok(order)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub src_text: String,
    pub src_lang: Lang,
    pub tgt_lang: Lang,
}

pub enum RewardFn<'a> {
    Dual { backward: &'a Service, params: SimilarityParams },
    Preference { scorer: &'a Service },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutParams {
    pub temperature: Option<f64>,
    pub seed: u64,
    pub max_in_flight: usize,
}

impl Default for RolloutParams {
    fn default() -> Self {
        RolloutParams { temperature: Some(1.0), seed: 0, max_in_flight: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub candidate: String,
    pub score: RewardScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutFailure {
    pub query_id: String,
    pub rollout: usize,
    pub error: String,
}

/// Scored rollouts per query. Queries that lost some but not all rollouts
/// are listed in `failures` and left out of `queries`, so every kept query
/// has exactly `rollouts_per_query` candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutBatch {
    pub rollouts_per_query: usize,
    pub queries: BTreeMap<String, Vec<Rollout>>,
    pub failures: Vec<RolloutFailure>,
    /// Source plus candidate tokens over all kept rollouts.
    pub batch_token_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl RolloutBatch {
    pub fn report(&self) -> BTreeMap<String, QueryReport> {
        self.queries
            .iter()
            .map(|(id, rollouts)| {
                let values: Vec<f64> = rollouts.iter().map(|r| r.score.value).collect();
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                let min = values.iter().copied().fold(f64::INFINITY, f64::min);
                let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (id.clone(), QueryReport { mean, min, max })
            })
            .collect()
    }
}

fn rollout_seed(seed: u64, query: usize, rollout: usize) -> u64 {
    let mut z = seed ^ (query as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (rollout as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^ (z >> 31)
}

fn as_text(result: Result<ServiceOutput, ServiceError>, service: &Service) -> Result<String, ServiceError> {
    match result? {
        ServiceOutput::Text { text } => Ok(text),
        other => Err(ServiceError {
            service: service.name().to_string(),
            kind: ServiceErrorKind::MalformedResponse(format!("expected text, got {other:?}")),
            attempts: 1,
        }),
    }
}

/// Samples `rollouts_per_query` candidates per query from `policy`, each
/// with its own sample seed, scores them and reduces in (query, rollout)
/// order.
pub fn assemble_rollout_batch(
    queries: &[Query],
    rollouts_per_query: usize,
    policy: &Service,
    reward: &RewardFn<'_>,
    tok: &BpeVocab,
    params: &RolloutParams,
) -> Result<RolloutBatch, RewardError> {
    if rollouts_per_query == 0 {
        return Err(RewardError::ZeroRollouts);
    }
    let mut ids = BTreeSet::new();
    for q in queries {
        if !ids.insert(q.query_id.as_str()) {
            return Err(RewardError::DuplicateQuery(q.query_id.clone()));
        }
        if q.src_lang == q.tgt_lang {
            return Err(RewardError::SameLanguage(q.src_lang));
        }
    }
    let decode =
        |qi: usize, ri: usize| DecodeParams { beam_size: 1, temperature: params.temperature, sample_seed: Some(rollout_seed(params.seed, qi, ri)) };
    let requests: Vec<ServiceRequest> = queries
        .iter()
        .enumerate()
        .flat_map(|(qi, q)| {
            (0..rollouts_per_query).map(move |ri| ServiceRequest::Translate {
                text: q.src_text.clone(),
                src_lang: q.src_lang,
                tgt_lang: q.tgt_lang,
                decode: decode(qi, ri),
            })
        })
        .collect();
    let forward: Vec<Result<String, ServiceError>> =
        policy.call_many(requests, params.max_in_flight).into_iter().map(|r| as_text(r, policy)).collect();

    let mut scored: Vec<Vec<Result<Rollout, String>>> = Vec::with_capacity(queries.len());
    match reward {
        RewardFn::Dual { backward, params: sim } => {
            let back_requests: Vec<ServiceRequest> = forward
                .iter()
                .enumerate()
                .filter_map(|(i, r)| {
                    let q = &queries[i / rollouts_per_query];
                    r.as_ref().ok().map(|b| ServiceRequest::Translate {
                        text: b.clone(),
                        src_lang: q.tgt_lang,
                        tgt_lang: q.src_lang,
                        decode: decode(i / rollouts_per_query, i % rollouts_per_query),
                    })
                })
                .collect();
            let mut back = backward.call_many(back_requests, params.max_in_flight).into_iter().map(|r| as_text(r, backward));
            let mut flat = Vec::with_capacity(forward.len());
            for (i, b) in forward.into_iter().enumerate() {
                let q = &queries[i / rollouts_per_query];
                flat.push(match b {
                    Err(e) => Err(format!("forward: {e}")),
                    Ok(b_text) => match back.next().expect("one back-translation per forward success") {
                        Err(e) => Err(format!("backward: {e}")),
                        Ok(a_tilde) => {
                            let record =
                                RoundTripRecord { a_text: q.src_text.clone(), b_text: b_text.clone(), a_tilde, direction: (q.src_lang, q.tgt_lang) };
                            dual_score(&record, *sim).map(|score| Rollout { candidate: b_text, score }).map_err(|e| e.to_string())
                        }
                    },
                });
            }
            let mut it = flat.into_iter();
            for _ in queries {
                scored.push(it.by_ref().take(rollouts_per_query).collect());
            }
        }
        RewardFn::Preference { scorer } => {
            let mut it = forward.into_iter();
            for q in queries {
                let results: Vec<Result<String, ServiceError>> = it.by_ref().take(rollouts_per_query).collect();
                let ok: Vec<String> = results.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
                let scores = if ok.is_empty() { Ok(Vec::new()) } else { preference_reward(&q.src_text, &ok, scorer) };
                let mut scores = match scores {
                    Ok(s) => s.into_iter(),
                    Err(e) => {
                        let msg = e.to_string();
                        scored.push(results.iter().map(|_| Err(msg.clone())).collect());
                        continue;
                    }
                };
                scored.push(
                    results
                        .into_iter()
                        .map(|r| match r {
                            Ok(candidate) => Ok(Rollout { candidate, score: scores.next().expect("one score per candidate") }),
                            Err(e) => Err(format!("forward: {e}")),
                        })
                        .collect(),
                );
            }
        }
    }

    let mut batch = RolloutBatch { rollouts_per_query, queries: BTreeMap::new(), failures: Vec::new(), batch_token_count: 0 };
    for (q, results) in queries.iter().zip(scored) {
        let mut kept = Vec::with_capacity(rollouts_per_query);
        let mut failed = Vec::new();
        for (ri, r) in results.into_iter().enumerate() {
            match r {
                Ok(rollout) => kept.push(rollout),
                Err(error) => failed.push(RolloutFailure { query_id: q.query_id.clone(), rollout: ri, error }),
            }
        }
        if kept.is_empty() {
            return Err(RewardError::AllRolloutsFailed(q.query_id.clone()));
        }
        if failed.is_empty() {
            let src_tokens = tok.encode(&q.src_text).len() as u64;
            batch.batch_token_count += kept.iter().map(|r| src_tokens + tok.encode(&r.candidate).len() as u64).sum::<u64>();
            batch.queries.insert(q.query_id.clone(), kept);
        } else {
            log::warn!("query {} lost {} of {rollouts_per_query} rollouts", q.query_id, failed.len());
            batch.failures.extend(failed);
        }
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::service::{FnBackend, RequestEnvelope, ResponseEnvelope, RetryPolicy, StubBackend};
    use proptest::prelude::*;

    fn sim(a: &str, b: &str, max_n: usize, beta: f64) -> f64 {
        chr_ngram_similarity(a, b, SimilarityParams { max_n, beta }).unwrap()
    }

    /// Counts n-grams with nested loops and a list of distinct grams.
    fn oracle(a: &str, b: &str, max_n: usize, beta: f64) -> f64 {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut total = 0.0;
        let mut orders = 0;
        for n in 1..=max_n {
            let grams = |s: &[char]| -> Vec<Vec<char>> {
                if s.len() < n {
                    vec![]
                } else {
                    (0..=s.len() - n).map(|i| s[i..i + n].to_vec()).collect()
                }
            };
            let (ga, gb) = (grams(&a), grams(&b));
            if ga.is_empty() && gb.is_empty() {
                continue;
            }
            orders += 1;
            let mut distinct: Vec<Vec<char>> = Vec::new();
            for g in ga.iter().chain(gb.iter()) {
                if !distinct.contains(g) {
                    distinct.push(g.clone());
                }
            }
            let mut matched = 0;
            for g in &distinct {
                let ca = ga.iter().filter(|x| *x == g).count();
                let cb = gb.iter().filter(|x| *x == g).count();
                matched += ca.min(cb);
            }
            if ga.is_empty() || gb.is_empty() || matched == 0 {
                continue;
            }
            let p = matched as f64 / gb.len() as f64;
            let r = matched as f64 / ga.len() as f64;
            total += (1.0 + beta * beta) * p * r / (beta * beta * p + r);
        }
        total / orders as f64
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(sim("abc", "abc", 6, 2.0), 1.0);
        assert_eq!(sim("abc", "xyz", 6, 2.0), 0.0);
        assert!((sim("abc", "abd", 2, 2.0) - 7.0 / 12.0).abs() < 1e-15);
        assert_eq!(sim("abc", "", 6, 2.0), 0.0);
        assert_eq!(chr_ngram_similarity("", "", SimilarityParams::default()), Err(RewardError::BothEmpty));
        assert_eq!(chr_ngram_similarity("a", "a", SimilarityParams { max_n: 0, beta: 2.0 }), Err(RewardError::InvalidOrder));
    }

    #[test]
    fn short_exhaustive_oracle() {
        let alphabet = ['a', 'b', 'c'];
        let mut strings = vec![String::new()];
        for len in 1..=4 {
            let mut next = Vec::new();
            for s in strings.iter().filter(|s| s.chars().count() == len - 1) {
                for c in alphabet {
                    next.push(format!("{s}{c}"));
                }
            }
            strings.extend(next);
        }
        for a in &strings {
            for b in &strings {
                if a.is_empty() && b.is_empty() {
                    continue;
                }
                assert!((sim(a, b, 6, 2.0) - oracle(a, b, 6, 2.0)).abs() < 1e-12, "{a:?} {b:?}");
            }
        }
    }

    #[test]
    fn dual_examples() {
        let echo = Service::stub(StubBackend::Echo);
        let d = (Lang::EN, Lang::DE);
        let (score, rec) = dual_reward("hello world", d, &echo, &echo, SimilarityParams::default(), &DecodeParams::default()).unwrap();
        assert_eq!(score.value, 1.0);
        assert_eq!(score.kind, RewardKind::Dual);
        assert_eq!(rec.a_tilde, "hello world");
        let empty = Service::stub(StubBackend::Fixed(String::new()));
        let (score, _) = dual_reward("hello", d, &echo, &empty, SimilarityParams::default(), &DecodeParams::default()).unwrap();
        assert_eq!(score.value, 0.0);
        let one_off = Service::new(
            FnBackend::new("swap", |env: &RequestEnvelope| match &env.request {
                ServiceRequest::Translate { text, .. } => Ok(ResponseEnvelope::text(env.id, text.replacen('l', "x", 1))),
                _ => unreachable!(),
            }),
            RetryPolicy::default(),
        );
        let (score, rec) = dual_reward("hello", d, &echo, &one_off, SimilarityParams::default(), &DecodeParams::default()).unwrap();
        assert_eq!(rec.a_tilde, "hexlo");
        assert!((score.value - oracle("hello", "hexlo", 6, 2.0)).abs() < 1e-12);
        let failing = Service::stub(StubBackend::Failing(500));
        assert!(matches!(
            dual_reward("x", d, &echo, &failing, SimilarityParams::default(), &DecodeParams::default()),
            Err(RewardError::Service { leg: Leg::Backward, .. })
        ));
        assert!(matches!(
            dual_reward("x", d, &failing, &echo, SimilarityParams::default(), &DecodeParams::default()),
            Err(RewardError::Service { leg: Leg::Forward, .. })
        ));
        assert!(matches!(
            dual_reward("x", (Lang::EN, Lang::EN), &echo, &echo, SimilarityParams::default(), &DecodeParams::default()),
            Err(RewardError::SameLanguage(_))
        ));
    }

    #[test]
    fn preference_examples() {
        let c = Service::stub(StubBackend::Constant(0.5));
        let cands: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let scores = preference_reward("src", &cands, &c).unwrap();
        assert!(scores.iter().all(|s| s.value == 0.5 && s.kind == RewardKind::Preference));
        assert_eq!(preference_reward("src", &[], &c), Err(RewardError::EmptyCandidates));
        let short = Service::new(
            FnBackend::new("short", |env: &RequestEnvelope| {
                Ok(ResponseEnvelope { id: env.id, output: ServiceOutput::Scores { scores: vec![0.1, 0.2] } })
            }),
            RetryPolicy::default(),
        );
        assert_eq!(preference_reward("src", &cands, &short), Err(RewardError::LengthMismatch { expected: 3, got: 2 }));
    }

    fn scores(v: &[f64]) -> Vec<RewardScore> {
        v.iter().map(|&x| RewardScore::preference(x)).collect()
    }

    fn cands(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    #[test]
    fn selection_examples() {
        assert_eq!(rejection_sample(&cands(3), &scores(&[0.2, 0.9, 0.5]), 1).unwrap(), vec![1]);
        assert_eq!(rejection_sample(&cands(2), &scores(&[0.5, 0.5]), 1).unwrap(), vec![0]);
        assert_eq!(rejection_sample(&cands(3), &scores(&[0.2, 0.9, 0.5]), 2).unwrap(), vec![1, 2]);
        assert!(matches!(rejection_sample(&cands(2), &scores(&[0.5]), 1), Err(RewardError::ArityMismatch { .. })));
        assert_eq!(rejection_sample(&cands(2), &scores(&[0.5, 0.1]), 3), Err(RewardError::InvalidK(3)));
    }

    fn queries(n: usize) -> Vec<Query> {
        (0..n).map(|i| Query { query_id: format!("q{i}"), src_text: format!("source {i}"), src_lang: Lang::EN, tgt_lang: Lang::DE }).collect()
    }

    #[test]
    fn batch_examples() {
        let echo = Service::stub(StubBackend::Echo);
        let tok = BpeVocab::base(Vec::new());
        let dual = RewardFn::Dual { backward: &echo, params: SimilarityParams::default() };
        let batch = assemble_rollout_batch(&queries(2), 3, &echo, &dual, &tok, &RolloutParams::default()).unwrap();
        assert_eq!(batch.queries.len(), 2);
        assert!(batch.queries.values().all(|r| r.len() == 3 && r.iter().all(|x| x.score.value == 1.0)));
        assert_eq!(batch.batch_token_count, 2 * 3 * 2 * "source 0".len() as u64);
        assert_eq!(assemble_rollout_batch(&queries(1), 0, &echo, &dual, &tok, &RolloutParams::default()), Err(RewardError::ZeroRollouts));
        let empty = assemble_rollout_batch(&[], 2, &echo, &dual, &tok, &RolloutParams::default()).unwrap();
        assert!(empty.queries.is_empty());
        assert_eq!(empty.batch_token_count, 0);
        let failing = Service::stub(StubBackend::Failing(500));
        assert!(matches!(
            assemble_rollout_batch(&queries(1), 2, &failing, &dual, &tok, &RolloutParams::default()),
            Err(RewardError::AllRolloutsFailed(_))
        ));

        let c = Service::stub(StubBackend::Constant(0.25));
        let pref = RewardFn::Preference { scorer: &c };
        let batch = assemble_rollout_batch(&queries(2), 2, &echo, &pref, &tok, &RolloutParams::default()).unwrap();
        assert!(batch.queries.values().flatten().all(|r| r.score.value == 0.25));
        assert_eq!(batch.report()["q0"], QueryReport { mean: 0.25, min: 0.25, max: 0.25 });
    }

    #[test]
    fn corrupt_rollouts_differ_per_sample_seed() {
        let noisy = Service::stub(StubBackend::Corrupt { rate: 0.5, seed: 1 });
        let echo = Service::stub(StubBackend::Echo);
        let tok = BpeVocab::base(Vec::new());
        let dual = RewardFn::Dual { backward: &echo, params: SimilarityParams::default() };
        let q = vec![Query { query_id: "q".into(), src_text: "a fairly long sentence to corrupt".into(), src_lang: Lang::EN, tgt_lang: Lang::DE }];
        let batch = assemble_rollout_batch(&q, 4, &noisy, &dual, &tok, &RolloutParams::default()).unwrap();
        let distinct: BTreeSet<&str> = batch.queries["q"].iter().map(|r| r.candidate.as_str()).collect();
        assert!(distinct.len() > 1);
        assert_eq!(
            batch,
            assemble_rollout_batch(&q, 4, &noisy, &dual, &tok, &RolloutParams { max_in_flight: 1, ..RolloutParams::default() }).unwrap()
        );
    }

    proptest! {
        #[test]
        fn beta_one_is_symmetric(a in "[abc]{0,8}", b in "[abc]{0,8}") {
            prop_assume!(!(a.is_empty() && b.is_empty()));
            prop_assert!((sim(&a, &b, 6, 1.0) - sim(&b, &a, 6, 1.0)).abs() < 1e-12);
        }

        #[test]
        fn bounded_and_matches_oracle(a in "[a-d ]{0,10}", b in "[a-d ]{0,10}", max_n in 1usize..7) {
            prop_assume!(!(a.is_empty() && b.is_empty()));
            let s = sim(&a, &b, max_n, 2.0);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert!((s - oracle(&a, &b, max_n, 2.0)).abs() < 1e-12);
        }

        #[test]
        fn long_and_high_order_match_oracle(a in "[ab\u{4e2d}\u{1f600}]{0,90}", b in "[ab\u{4e2d}\u{1f600}]{0,90}", max_n in 1usize..9) {
            prop_assume!(!(a.is_empty() && b.is_empty()));
            prop_assert!((sim(&a, &b, max_n, 2.0) - oracle(&a, &b, max_n, 2.0)).abs() < 1e-12);
        }

        #[test]
        fn selection_stable_under_worse_appends(base in proptest::collection::vec(0.0f64..1.0, 1..8), extra in proptest::collection::vec(0.0f64..1.0, 0..5), k in 1usize..4) {
            let k = k.min(base.len());
            let floor = base.iter().copied().fold(f64::INFINITY, f64::min);
            let mut all = base.clone();
            all.extend(extra.iter().map(|e| floor - 1.0 - e));
            let before = rejection_sample(&cands(base.len()), &scores(&base), k).unwrap();
            let after = rejection_sample(&cands(all.len()), &scores(&all), k).unwrap();
            prop_assert_eq!(before, after);
        }
    }
}

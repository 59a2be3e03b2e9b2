//! Byte-level BPE: training, encoding, decoding and compression rate.
//!
//! Ids `0..256` are raw bytes, followed by the reserved delimiter tags
//! (never produced or crossed by merges), followed by merges in acquisition
//! order.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::Lang;

pub const BYTE_ALPHABET: usize = 256;
pub const DEFAULT_TARGET_SIZE: usize = 65_269;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TokenizerError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("target size {target} must exceed the base alphabet size {base}")]
    TargetTooSmall { target: usize, base: usize },
    #[error("unknown token id {0}")]
    UnknownId(u32),
    #[error("invalid vocabulary file: {0}")]
    InvalidVocab(String),
}

/// Delimiter tags reserved as single tokens: `<SEP>`, `<XX>` for every
/// registry code and `<Name>` for every registry language name.
pub fn reserved_tags() -> Vec<String> {
    let mut tags = vec!["<SEP>".to_string()];
    tags.extend(Lang::all().map(|l| format!("<{}>", l.code().to_ascii_uppercase())));
    tags.extend(Lang::all().map(|l| format!("<{}>", l.name())));
    tags
}

#[derive(Debug, Clone)]
pub struct BpeVocab {
    target_size: usize,
    specials: Vec<String>,
    special_ids: HashMap<String, u32>,
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), u32>,
    tokens: Vec<Vec<u8>>,
}

impl PartialEq for BpeVocab {
    fn eq(&self, other: &Self) -> bool {
        self.target_size == other.target_size && self.specials == other.specials && self.merges == other.merges
    }
}

/// On-disk form: ordered merges plus a display table of token ids.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    target_size: usize,
    specials: Vec<String>,
    merges: Vec<[u32; 2]>,
    token_to_id: BTreeMap<String, u32>,
}

impl Serialize for BpeVocab {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let file = VocabFile {
            target_size: self.target_size,
            specials: self.specials.clone(),
            merges: self.merges.iter().map(|&(a, b)| [a, b]).collect(),
            token_to_id: (0..self.len() as u32).map(|id| (self.display(id), id)).collect(),
        };
        file.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BpeVocab {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let file = VocabFile::deserialize(deserializer)?;
        let vocab = BpeVocab::from_parts(file.target_size, file.specials, file.merges.into_iter().map(|[a, b]| (a, b)).collect())
            .map_err(serde::de::Error::custom)?;
        for (token, id) in &file.token_to_id {
            if *id as usize >= vocab.len() || vocab.display(*id) != *token {
                return Err(serde::de::Error::custom(format!("token table disagrees with merges at id {id}")));
            }
        }
        Ok(vocab)
    }
}

impl BpeVocab {
    /// A vocabulary with no merges.
    pub fn base(specials: Vec<String>) -> Self {
        BpeVocab::from_parts(BYTE_ALPHABET + specials.len(), specials, Vec::new()).expect("no merges to validate")
    }

    fn from_parts(target_size: usize, specials: Vec<String>, merges: Vec<(u32, u32)>) -> Result<Self, TokenizerError> {
        let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let mut special_ids = HashMap::new();
        for s in &specials {
            if !(s.starts_with('<') && s.ends_with('>')) || special_ids.contains_key(s) {
                return Err(TokenizerError::InvalidVocab(format!("bad reserved tag {s:?}")));
            }
            special_ids.insert(s.clone(), tokens.len() as u32);
            tokens.push(s.as_bytes().to_vec());
        }
        let first_merge = tokens.len() as u32;
        let mut ranks = HashMap::new();
        for (rank, &(a, b)) in merges.iter().enumerate() {
            let next = tokens.len() as u32;
            let is_mergeable = |id: u32| id < next && !(BYTE_ALPHABET as u32..first_merge).contains(&id);
            if !is_mergeable(a) || !is_mergeable(b) || ranks.insert((a, b), rank as u32).is_some() {
                return Err(TokenizerError::InvalidVocab(format!("bad merge #{rank}: ({a}, {b})")));
            }
            let mut bytes = tokens[a as usize].clone();
            bytes.extend_from_slice(&tokens[b as usize]);
            tokens.push(bytes);
        }
        Ok(BpeVocab { target_size, specials, special_ids, merges, ranks, tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn target_size(&self) -> usize {
        self.target_size
    }

    /// Byte alphabet plus reserved tags.
    pub fn base_size(&self) -> usize {
        BYTE_ALPHABET + self.specials.len()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn specials(&self) -> &[String] {
        &self.specials
    }

    pub fn special_id(&self, tag: &str) -> Option<u32> {
        self.special_ids.get(tag).copied()
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    /// Human-readable token: UTF-8 text where valid, `<0xNN>` per stray byte.
    pub fn display(&self, id: u32) -> String {
        let bytes = &self.tokens[id as usize];
        let mut out = String::new();
        for chunk in bytes.utf8_chunks() {
            out.push_str(chunk.valid());
            for b in chunk.invalid() {
                out.push_str(&format!("<0x{b:02X}>"));
            }
        }
        out
    }

    /// The same vocabulary keeping only the first `k` merges.
    pub fn with_merge_limit(&self, k: usize) -> Self {
        let merges = self.merges[..k.min(self.merges.len())].to_vec();
        BpeVocab::from_parts(self.target_size, self.specials.clone(), merges).expect("prefix of a valid merge list")
    }

    /// Splits text into plain spans and reserved tags.
    fn segments<'a>(&self, text: &'a str) -> Vec<Segment<'a>> {
        let mut out = Vec::new();
        let mut plain_start = 0;
        let mut search = 0;
        while let Some(open) = text[search..].find('<').map(|i| i + search) {
            let Some(close) = text[open..].find('>').map(|i| i + open) else { break };
            let candidate = &text[open..=close];
            if let Some(&id) = self.special_ids.get(candidate) {
                if plain_start < open {
                    out.push(Segment::Plain(&text[plain_start..open]));
                }
                out.push(Segment::Special(id));
                plain_start = close + 1;
                search = close + 1;
            } else {
                search = open + 1;
            }
        }
        if plain_start < text.len() {
            out.push(Segment::Plain(&text[plain_start..]));
        }
        out
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for segment in self.segments(text) {
            match segment {
                Segment::Special(id) => out.push(id),
                Segment::Plain(s) => out.extend(self.encode_plain(s.as_bytes())),
            }
        }
        out
    }

    // Repeatedly merges the lowest-ranked adjacent pair; equivalent to
    // applying merges in acquisition order since a merge only creates pairs
    // of higher rank.
    fn encode_plain(&self, bytes: &[u8]) -> Vec<u32> {
        let mut ids: Vec<u32> = bytes.iter().map(|&b| b as u32).collect();
        loop {
            let best = ids.windows(2).filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1])))).min_by_key(|(r, _)| *r);
            let Some((rank, pair)) = best else { break };
            let new_id = (self.base_size() + rank as usize) as u32;
            ids = merge_pair(&ids, pair, new_id);
        }
        ids
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut bytes = Vec::new();
        for &id in ids {
            bytes.extend_from_slice(self.token_bytes(id).ok_or(TokenizerError::UnknownId(id))?);
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }
}

enum Segment<'a> {
    Plain(&'a str),
    Special(u32),
}

fn merge_pair(ids: &[u32], pair: (u32, u32), new_id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
            out.push(new_id);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    out
}

/// Pair counts within one sequence, counting repeated-symbol runs
/// non-overlapping from the left (`aaa` holds one `(a, a)`).
fn sequence_pair_counts(ids: &[u32]) -> HashMap<(u32, u32), i64> {
    let mut counts = HashMap::new();
    let mut last_same_end = usize::MAX;
    for i in 0..ids.len().saturating_sub(1) {
        let pair = (ids[i], ids[i + 1]);
        if pair.0 == pair.1 {
            if last_same_end == i {
                continue;
            }
            last_same_end = i + 1;
        }
        *counts.entry(pair).or_insert(0) += 1;
    }
    counts
}

pub fn train_bpe(corpus: &[String], target_size: usize) -> Result<BpeVocab, TokenizerError> {
    train_bpe_with(corpus, target_size, reserved_tags())
}

/// Greedy BPE: merge the most frequent pair (ties broken by the pair's byte
/// strings, lexicographically) until `target_size` tokens exist or no pair
/// occurs at least twice.
pub fn train_bpe_with(corpus: &[String], target_size: usize, specials: Vec<String>) -> Result<BpeVocab, TokenizerError> {
    if corpus.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut vocab = BpeVocab::base(specials);
    let base = vocab.base_size();
    if target_size <= base {
        return Err(TokenizerError::TargetTooSmall { target: target_size, base });
    }

    let mut freq: HashMap<&[u8], i64> = HashMap::new();
    for text in corpus {
        for segment in vocab.segments(text) {
            if let Segment::Plain(s) = segment {
                *freq.entry(s.as_bytes()).or_insert(0) += 1;
            }
        }
    }
    let mut words: Vec<(Vec<u32>, i64)> = freq.into_iter().map(|(b, c)| (b.iter().map(|&x| x as u32).collect(), c)).collect();
    words.sort();

    let mut counts: HashMap<(u32, u32), i64> = HashMap::new();
    let mut where_: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (w, (ids, c)) in words.iter().enumerate() {
        for (pair, n) in sequence_pair_counts(ids) {
            *counts.entry(pair).or_insert(0) += n * c;
            where_.entry(pair).or_default().insert(w);
        }
    }

    let mut merges = Vec::new();
    let mut tokens = vocab.tokens.clone();
    while base + merges.len() < target_size {
        let best = counts
            .iter()
            .filter(|(_, &c)| c >= 2)
            .max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb).then_with(|| {
                    let ka = (&tokens[pa.0 as usize], &tokens[pa.1 as usize]);
                    let kb = (&tokens[pb.0 as usize], &tokens[pb.1 as usize]);
                    kb.cmp(&ka)
                })
            })
            .map(|(p, _)| *p);
        let Some(pair) = best else { break };
        let new_id = tokens.len() as u32;
        let mut bytes = tokens[pair.0 as usize].clone();
        bytes.extend_from_slice(&tokens[pair.1 as usize]);
        tokens.push(bytes);
        merges.push(pair);

        let mut affected: Vec<usize> = where_.remove(&pair).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        for w in affected {
            let (ids, c) = &mut words[w];
            let before = sequence_pair_counts(ids);
            if !before.contains_key(&pair) {
                continue;
            }
            let merged = merge_pair(ids, pair, new_id);
            for (p, n) in before {
                let entry = counts.entry(p).or_insert(0);
                *entry -= n * *c;
                if *entry == 0 {
                    counts.remove(&p);
                }
            }
            for (p, n) in sequence_pair_counts(&merged) {
                *counts.entry(p).or_insert(0) += n * *c;
                where_.entry(p).or_default().insert(w);
            }
            *ids = merged;
        }
        counts.remove(&pair);
    }
    vocab = BpeVocab::from_parts(target_size, vocab.specials, merges)?;
    Ok(vocab)
}

/// Characters per token over `corpus`.
pub fn compression_rate(corpus: &[String], vocab: &BpeVocab) -> Result<f64, TokenizerError> {
    let stats = corpus_stats(corpus, vocab)?;
    Ok(stats.chars_per_token)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub texts: usize,
    pub chars: u64,
    pub tokens: u64,
    pub chars_per_token: f64,
    pub vocab_size: usize,
    pub merges: usize,
}

pub fn corpus_stats(corpus: &[String], vocab: &BpeVocab) -> Result<CorpusStats, TokenizerError> {
    let mut chars = 0u64;
    let mut tokens = 0u64;
    for text in corpus {
        chars += text.chars().count() as u64;
        tokens += vocab.encode(text).len() as u64;
    }
    if tokens == 0 {
        return Err(TokenizerError::EmptyCorpus);
    }
    Ok(CorpusStats {
        texts: corpus.len(),
        chars,
        tokens,
        chars_per_token: chars as f64 / tokens as f64,
        vocab_size: vocab.len(),
        merges: vocab.merges.len(),
    })
}

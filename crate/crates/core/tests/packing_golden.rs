use std::fs;
use std::path::PathBuf;

use seedline_core::io::{read_jsonl, to_jsonl};
use seedline_core::packing::{builtin_templates, format_segments, pack, token_sidecar, DelimiterStrategy};
use seedline_core::tokenizer::{reserved_tags, BpeVocab};
use seedline_core::SentencePair;

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

#[test]
fn packed_output_matches_golden_files() {
    let pairs: Vec<SentencePair> = read_jsonl(golden_dir().join("pairs.jsonl")).unwrap();
    assert_eq!(pairs.len(), 20);
    let vocab = BpeVocab::base(reserved_tags());
    let template = builtin_templates().into_iter().find(|t| t.id == "std-1").unwrap();
    for max_len in [2048, 64] {
        for strategy in DelimiterStrategy::ALL {
            let items: Vec<_> = pairs.iter().map(|p| format_segments(p, strategy, Some(&template)).unwrap()).collect();
            let seqs = pack(items, &vocab, max_len, strategy).unwrap();
            let stem = golden_dir().join(format!("pack_{strategy}_{max_len}"));
            let want_jsonl = fs::read(stem.with_extension("jsonl")).unwrap();
            let want_tokens = fs::read_to_string(stem.with_extension("tokens")).unwrap();
            assert_eq!(String::from_utf8(to_jsonl(&seqs).unwrap()).unwrap(), String::from_utf8(want_jsonl).unwrap(), "{strategy} {max_len}");
            assert_eq!(token_sidecar(&seqs), want_tokens, "{strategy} {max_len}");
        }
    }
}

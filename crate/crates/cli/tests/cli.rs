use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name).display().to_string()
}

fn seedline(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seedline")).args(args).env_remove("SEEDLINE_CONFIG").env_remove("SEEDLINE_SEED").output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = seedline(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    stdout(&out)
}

/// Exit code and the parsed JSON error object from stderr.
fn fails(args: &[&str]) -> (i32, serde_json::Value) {
    let out = seedline(args);
    let err = String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), serde_json::from_str(err.trim()).unwrap_or(serde_json::Value::Null))
}

fn p(path: &Path) -> String {
    path.display().to_string()
}

#[test]
fn usage_errors_exit_2_and_help_exits_0() {
    assert_eq!(seedline(&["--help"]).status.code(), Some(0));
    assert_eq!(seedline(&["eval", "--help"]).status.code(), Some(0));
    assert_eq!(seedline(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(seedline(&["eval", "agg"]).status.code(), Some(2));
    assert_eq!(seedline(&["eval", "categorize", "--src", "xx", "--tgt", "en"]).status.code(), Some(2));
}

#[test]
fn domain_errors_are_json_on_stderr() {
    let (code, err) = fails(&["curriculum", "lr", "--step", "200000"]);
    assert_eq!(code, 1);
    assert_eq!(err["error"], "curriculum");
    assert!(err["message"].as_str().unwrap().contains("200000"));

    let (code, err) = fails(&["--stub", "reward", "dual", "--text", "x", "--src", "en", "--tgt", "en"]);
    assert_eq!((code, err["error"].as_str()), (1, Some("reward")));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"seed": 1, "sead": 2}"#).unwrap();
    let (code, err) = fails(&["--config", &p(&cfg), "curriculum", "lr", "--step", "1"]);
    assert_eq!((code, err["error"].as_str()), (1, Some("config")));
}

#[test]
fn missing_service_without_stub_is_an_error() {
    let (code, err) = fails(&["reward", "dual", "--text", "hello", "--src", "en", "--tgt", "de"]);
    assert_eq!(code, 1);
    assert_eq!(err["error"], "config");
}

#[test]
fn agg_reproduces_published_rows() {
    assert_eq!(ok(&["eval", "agg", "--row", &fixture("tower_bleurt.json")]).trim(), "62.43");
    let dir = tempfile::tempdir().unwrap();
    let row = dir.path().join("llamax_comet.json");
    fs::write(
        &row,
        r#"{"flores_xx_en": 95.13, "flores_en_xx": 86.22, "flores_xx_zh": 78.09, "flores_zh_xx": 83.85, "flores_xx_xx": 83.42, "wmt25_en_xx": 70.89}"#,
    )
    .unwrap();
    assert_eq!(ok(&["eval", "agg", "--row", &p(&row)]).trim(), "82.93");
    fs::write(&row, r#"{"flores_xx_en": 95.13}"#).unwrap();
    assert_eq!(fails(&["eval", "agg", "--row", &p(&row)]).1["error"], "eval");
}

#[test]
fn categorize_single_and_all() {
    assert_eq!(ok(&["eval", "categorize", "--src", "de", "--tgt", "en"]).trim(), "XX=>EN");
    assert_eq!(ok(&["eval", "categorize", "--src", "en", "--tgt", "zh"]).trim(), "EN=>XX");
    assert_eq!(ok(&["eval", "categorize", "--src", "en", "--tgt", "zh", "--chinese-first"]).trim(), "XX=>ZH");
    let table = ok(&["eval", "categorize", "--all"]);
    let counts: Vec<(String, u64)> = table
        .lines()
        .skip(1)
        .map(|l| {
            let (k, v) = l.rsplit_once(' ').unwrap();
            (k.trim().to_string(), v.parse().unwrap())
        })
        .collect();
    assert_eq!(counts.last().unwrap(), &("total".to_string(), 756));
    assert_eq!(counts[..5].iter().map(|c| c.1).sum::<u64>(), 756);
}

#[test]
fn human_scores_and_deductions() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.jsonl");
    fs::write(
        &scores,
        concat!(
            r#"{"item_id":"a","src_lang":"en","tgt_lang":"de","rater_id":"r1","score":4}"#,
            "\n",
            r#"{"item_id":"a","src_lang":"en","tgt_lang":"de","rater_id":"r2","score":3}"#,
            "\n",
            r#"{"item_id":"b","src_lang":"de","tgt_lang":"en","rater_id":"r1","score":2}"#,
            "\n"
        ),
    )
    .unwrap();
    let table = ok(&["eval", "human", "--input", &p(&scores)]);
    let rows: Vec<Vec<&str>> = table.lines().map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(rows, vec![vec!["direction", "score"], vec!["de-en", "2.00"], vec!["en-de", "3.50"], vec!["avg", "2.75"]]);

    let errors = dir.path().join("errors.jsonl");
    fs::write(
        &errors,
        concat!(
            r#"{"item_id":"a","src_lang":"en","tgt_lang":"de","rater_id":"r1","major_errors":1,"minor_errors":2}"#,
            "\n",
            r#"{"item_id":"b","src_lang":"en","tgt_lang":"de","rater_id":"r1","major_errors":0,"minor_errors":0}"#,
            "\n"
        ),
    )
    .unwrap();
    assert_eq!(ok(&["eval", "deduct", "--input", &p(&errors)]).trim(), "-1");
    assert_eq!(ok(&["eval", "deduct", "--input", &p(&errors), "--major", "2", "--minor", "1"]).trim(), "-2");
    assert_eq!(fails(&["eval", "deduct", "--input", &p(&scores)]).1["error"], "eval");
}

#[test]
fn lr_prints_scientific_values() {
    assert_eq!(ok(&["curriculum", "lr", "--step", "2000"]).trim(), "3.0e-4");
    assert_eq!(ok(&["curriculum", "lr", "--step", "100000"]).trim(), "3.0e-5");
    assert_eq!(ok(&["curriculum", "lr", "--step", "0"]).trim(), "0.0e0");
}

#[test]
fn tokenizer_train_encode_decode_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = dir.path().join("vocab.json");
    ok(&["tok", "train", "--corpus", &fixture("langid_corpus.jsonl"), "--vocab-size", "400", "--out", &p(&vocab)]);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("vocab.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["outputs"][0], p(&vocab));
    assert_eq!(manifest["input_hashes"].as_object().unwrap().len(), 1);

    for text in ["Hallo Welt", "今天天气很好", "<EN> tags <SEP> stay whole"] {
        let ids = ok(&["tok", "encode", "--vocab", &p(&vocab), "--text", text]);
        assert_eq!(ok(&["tok", "decode", "--vocab", &p(&vocab), "--ids", ids.trim()]), format!("{text}\n"));
    }
    let sep = ok(&["tok", "encode", "--vocab", &p(&vocab), "--text", "<SEP>"]);
    assert_eq!(sep.trim(), "256");
}

#[test]
fn langid_train_then_classify() {
    let dir = tempfile::tempdir().unwrap();
    let prof = dir.path().join("prof");
    ok(&["langid", "train", "--corpus", &fixture("langid_corpus.jsonl"), "--out", &p(&prof)]);
    let guess = |text: &str| -> String {
        let v: serde_json::Value = serde_json::from_str(&ok(&["langid", "classify", "--profiles", &p(&prof), "--text", text])).unwrap();
        v["lang"].as_str().unwrap().to_string()
    };
    assert_eq!(guess("Das ist ein schönes Haus und wir wohnen dort."), "de");
    assert_eq!(guess("我们今天去公园散步。"), "zh");
    assert_eq!(guess("Nous allons au marché le matin."), "fr");
}

#[test]
fn pack_render_and_pack() {
    assert_eq!(
        ok(&["pack", "render", "--template", "std-1", "--src", "zh", "--tgt", "en", "--text", "hi"]),
        "Translate the following text from Chinese to English:hi\n"
    );
    assert_eq!(
        ok(&["pack", "render", "--template", "std-1", "--src", "zh", "--tgt", "en", "--text", "hi", "--no-src-lang"]),
        "Translate the following text to English:hi\n"
    );
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("packed.jsonl");
    ok(&["pack", "pack", "--pairs", &fixture("round_pairs.jsonl"), "--strategy", "lang-code", "--max-seq-len", "256", "--out", &p(&out)]);
    let seqs: Vec<serde_json::Value> = fs::read_to_string(&out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!seqs.is_empty());
    assert!(seqs.iter().all(|s| s["token_len"].as_u64().unwrap() <= 256));
    let sidecar = fs::read_to_string(dir.path().join("packed.jsonl.tokens")).unwrap();
    assert_eq!(sidecar.lines().count(), seqs.len());
    assert_eq!(fails(&["pack", "pack", "--pairs", &fixture("round_pairs.jsonl"), "--strategy", "natural-language", "--out", &p(&out)]).0, 1);
}

#[test]
fn dual_reward_with_stubs() {
    let v: serde_json::Value =
        serde_json::from_str(&ok(&["--stub", "reward", "dual", "--text", "hello world", "--src", "en", "--tgt", "de"])).unwrap();
    assert_eq!(v["score"]["value"], 1.0);
    assert_eq!(v["round_trip"]["a_tilde"], "hello world");
}

#[test]
fn para_rounds_continue_from_state() {
    let dir = tempfile::tempdir().unwrap();
    let prof = dir.path().join("prof");
    let out = dir.path().join("rounds");
    ok(&["langid", "train", "--corpus", &fixture("langid_corpus.jsonl"), "--out", &p(&prof)]);
    let round = || {
        let args = [
            "--stub",
            "--config",
            &fixture("round_config.json"),
            "para",
            "round",
            "--docs",
            &fixture("round_docs.jsonl"),
            "--pairs",
            &fixture("round_pairs.jsonl"),
            "--tgt",
            "en,de",
            "--profiles",
            &p(&prof),
            "--out-dir",
            &p(&out),
        ];
        serde_json::from_str::<serde_json::Value>(&ok(&args)).unwrap()
    };
    let first = round();
    let second = round();
    assert_eq!(first, second);
    assert_eq!(first["processed"], 40);
    let state: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("state.json")).unwrap()).unwrap();
    assert_eq!(state["round"], 2);
    assert_eq!(fs::read(out.join("round_001/de-en.jsonl")).unwrap(), fs::read(out.join("round_002/de-en.jsonl")).unwrap());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("round_002/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["round"], 2);
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"sources":[{"id":"a","kind":"mono","weight":1},{"id":"b","kind":"parallel","weight":3}],"token_budget":100}"#).unwrap();
    let a = ok(&["--seed", "1", "curriculum", "sample", "--spec", &p(&spec), "--draws", "1000"]);
    let b = ok(&["--seed", "1", "curriculum", "sample", "--spec", &p(&spec), "--draws", "1000"]);
    let c = ok(&["--seed", "2", "curriculum", "sample", "--spec", &p(&spec), "--draws", "1000"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

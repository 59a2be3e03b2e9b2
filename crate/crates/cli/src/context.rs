use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::Instant;

use seedline_core::config::{ConfigError, PipelineConfig, RunManifest, ServiceRole};
use seedline_core::io::{self, IoError};
use seedline_core::service::Service;
use seedline_core::tokenizer::BpeVocab;
use seedline_core::Document;
use serde::de::DeserializeOwned;

/// A domain failure: reported as one JSON object on stderr, exit code 1.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Display) -> Self {
        CliError { kind, message: message.to_string() }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind, "message": self.message }).to_string()
    }
}

macro_rules! error_kind {
    ($($ty:ty => $kind:literal),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::new($kind, e)
            }
        })*
    };
}

error_kind! {
    IoError => "io",
    ConfigError => "config",
    seedline_core::langid::LangIdError => "langid",
    seedline_core::tokenizer::TokenizerError => "tokenizer",
    seedline_core::mono::MonoError => "mono",
    seedline_core::parallel::ParallelError => "parallel",
    seedline_core::packing::PackingError => "packing",
    seedline_core::curriculum::CurriculumError => "curriculum",
    seedline_core::reward::RewardError => "reward",
    seedline_core::eval::EvalError => "eval",
    seedline_core::service::ServiceError => "service",
    seedline_core::UnknownLanguage => "language",
    serde_json::Error => "json",
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub struct Context {
    pub config: PipelineConfig,
    pub stub: bool,
    command: String,
    started: Instant,
}

impl Context {
    pub fn new(config: PipelineConfig, stub: bool, command: String) -> Self {
        Context { config, stub, command, started: Instant::now() }
    }

    pub fn service(&self, role: ServiceRole) -> CliResult<Service> {
        Ok(self.config.services.build(role, self.stub)?)
    }

    /// `explicit` if given, else the config path under `key`.
    pub fn path(&self, explicit: &Option<PathBuf>, key: &str) -> CliResult<PathBuf> {
        match explicit {
            Some(p) => Ok(p.clone()),
            None => Ok(self.config.paths.require(key)?.to_path_buf()),
        }
    }

    pub fn manifest(&self) -> RunManifest {
        RunManifest::new(self.command.clone(), self.config.hash())
    }

    /// Records inputs and outputs, stamps wall time and writes the manifest
    /// beside the first output.
    pub fn finish(&self, mut manifest: RunManifest, inputs: &[&Path], outputs: &[&Path], counts: &[(&str, u64)]) -> CliResult {
        for p in inputs {
            manifest.add_input(p)?;
        }
        manifest.outputs = outputs.iter().map(|p| p.display().to_string()).collect();
        manifest.counts = counts.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>();
        manifest.wall_time_ms = self.started.elapsed().as_millis() as u64;
        if let Some(first) = outputs.first() {
            manifest.write(&RunManifest::path_for(first))?;
        }
        Ok(())
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    Ok(io::read_jsonl(path)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    Ok(io::read_json(path)?)
}

/// Texts from a `.jsonl` file of documents, or non-blank lines otherwise.
pub fn read_texts(path: &Path) -> CliResult<Vec<String>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        let docs: Vec<Document> = read_jsonl(path)?;
        return Ok(docs.into_iter().map(|d| d.text().to_string()).collect());
    }
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(String::from).collect())
}

pub fn load_vocab(ctx: &Context, explicit: &Option<PathBuf>) -> CliResult<BpeVocab> {
    read_json(&ctx.path(explicit, "vocab")?)
}

/// Shortest scientific form with at least one fractional digit: 3.0e-4.
pub fn sci(x: f64) -> String {
    let s = format!("{x:e}");
    match s.split_once('e') {
        Some((m, e)) if !m.contains('.') => format!("{m}.0e{e}"),
        _ => s,
    }
}

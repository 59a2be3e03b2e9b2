//! Stage mixtures, plan validation, seeded source sampling, the warmup plus
//! cosine learning-rate schedule and the token-budgeted stage runner.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurriculumError {
    #[error("mixture has no positive weight")]
    NoPositiveWeight,
    #[error("source {0} has invalid weight {1}")]
    InvalidWeight(String, f64),
    #[error("source id {0} appears twice in one mixture")]
    DuplicateSource(String),
    #[error("token_budget must be positive")]
    ZeroBudget,
    #[error("step {step} outside 0..={total}")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(&'static str),
    #[error("source {0} has no data")]
    MissingSource(String),
    #[error("source {0} ran out of sequences with cycling disabled")]
    ExhaustedSource(String),
    #[error("plan is invalid: {0:?}")]
    InvalidPlan(Vec<PlanViolation>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Mono,
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSource {
    pub id: String,
    pub kind: SourceKind,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub sources: Vec<MixtureSource>,
    pub token_budget: u64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<(), CurriculumError> {
        let mut seen = BTreeSet::new();
        for s in &self.sources {
            if !(s.weight.is_finite() && s.weight >= 0.0) {
                return Err(CurriculumError::InvalidWeight(s.id.clone(), s.weight));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(CurriculumError::DuplicateSource(s.id.clone()));
            }
        }
        if !self.sources.iter().any(|s| s.weight > 0.0) {
            return Err(CurriculumError::NoPositiveWeight);
        }
        if self.token_budget == 0 {
            return Err(CurriculumError::ZeroBudget);
        }
        Ok(())
    }

    pub fn normalized_weights(&self) -> Vec<f64> {
        let total: f64 = self.sources.iter().map(|s| s.weight).sum();
        self.sources.iter().map(|s| s.weight / total).collect()
    }

    /// Normalized weight carried by Parallel sources.
    pub fn parallel_mass(&self) -> f64 {
        self.sources.iter().zip(self.normalized_weights()).filter(|(s, _)| s.kind == SourceKind::Parallel).map(|(_, w)| w).sum()
    }

    fn has_positive(&self, kind: SourceKind) -> bool {
        self.sources.iter().any(|s| s.kind == kind && s.weight > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StageName {
    S1,
    S2,
    S3,
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    #[default]
    TokenBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub name: StageName,
    pub mixture: MixtureSpec,
}

/// Ordered stages. S2 may appear several times in a row as sub-phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub transition: Transition,
    /// Recorded in run manifests for downstream trainers; not enforced.
    #[serde(default = "default_batch_tokens")]
    pub batch_tokens: u64,
}

fn default_batch_tokens() -> u64 {
    2_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PlanViolation {
    MissingStage(StageName),
    DuplicateStage { index: usize, name: StageName },
    OutOfOrder { index: usize, name: StageName },
    InvalidMixture { index: usize, reason: String },
    ParallelInS1 { index: usize, source: String },
    MonoInS3 { index: usize, source: String },
    S2WithoutMono { index: usize },
    S2WithoutParallel { index: usize },
    NonMonotoneParallelMass { index: usize, previous: f64, current: f64 },
}

pub fn validate_plan(plan: &StagePlan) -> Vec<PlanViolation> {
    let mut out = Vec::new();
    for name in [StageName::S1, StageName::S2, StageName::S3] {
        if !plan.stages.iter().any(|s| s.name == name) {
            out.push(PlanViolation::MissingStage(name));
        }
    }
    let mut prev_name: Option<StageName> = None;
    let mut prev_mass: Option<f64> = None;
    for (index, stage) in plan.stages.iter().enumerate() {
        match prev_name {
            Some(p) if stage.name < p => out.push(PlanViolation::OutOfOrder { index, name: stage.name }),
            Some(p) if stage.name == p && stage.name != StageName::S2 => out.push(PlanViolation::DuplicateStage { index, name: stage.name }),
            _ => {}
        }
        prev_name = Some(prev_name.map_or(stage.name, |p| p.max(stage.name)));
        let mix = &stage.mixture;
        for s in &mix.sources {
            match (stage.name, s.kind) {
                (StageName::S1, SourceKind::Parallel) => out.push(PlanViolation::ParallelInS1 { index, source: s.id.clone() }),
                (StageName::S3, SourceKind::Mono) => out.push(PlanViolation::MonoInS3 { index, source: s.id.clone() }),
                _ => {}
            }
        }
        if let Err(e) = mix.validate() {
            out.push(PlanViolation::InvalidMixture { index, reason: e.to_string() });
            continue;
        }
        if stage.name == StageName::S2 {
            if !mix.has_positive(SourceKind::Mono) {
                out.push(PlanViolation::S2WithoutMono { index });
            }
            if !mix.has_positive(SourceKind::Parallel) {
                out.push(PlanViolation::S2WithoutParallel { index });
            }
        }
        let mass = mix.parallel_mass();
        if let Some(previous) = prev_mass {
            if mass < previous - 1e-12 {
                out.push(PlanViolation::NonMonotoneParallelMass { index, previous, current: mass });
            }
        }
        prev_mass = Some(mass);
    }
    out
}

/// Draws source ids proportionally to their weights.
#[derive(Debug, Clone)]
pub struct SourceSampler {
    ids: Vec<String>,
    cdf: Vec<f64>,
    rng: ChaCha8Rng,
}

impl SourceSampler {
    pub fn new(spec: &MixtureSpec, seed: u64) -> Result<Self, CurriculumError> {
        spec.validate()?;
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = spec
            .normalized_weights()
            .into_iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        // Pin the last positive entry to 1 so rounding can never leave a gap.
        let last = spec.sources.iter().rposition(|s| s.weight > 0.0).expect("validated");
        for c in &mut cdf[last..] {
            *c = 1.0;
        }
        Ok(SourceSampler { ids: spec.sources.iter().map(|s| s.id.clone()).collect(), cdf, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn sample_index(&mut self) -> usize {
        sample_index(&self.cdf, &mut self.rng)
    }

    pub fn sample(&mut self) -> &str {
        let i = self.sample_index();
        &self.ids[i]
    }
}

fn sample_index<R: Rng>(cdf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    cdf.partition_point(|&c| c <= u)
}

/// One draw from `spec` using the caller's generator.
pub fn sample_source<'a, R: Rng>(spec: &'a MixtureSpec, rng: &mut R) -> Result<&'a str, CurriculumError> {
    spec.validate()?;
    let mut acc = 0.0;
    let total: f64 = spec.sources.iter().map(|s| s.weight).sum();
    let u: f64 = rng.gen::<f64>() * total;
    let last = spec.sources.iter().rposition(|s| s.weight > 0.0).expect("validated");
    for (i, s) in spec.sources.iter().enumerate() {
        acc += s.weight;
        if u < acc || i == last {
            return Ok(&s.id);
        }
    }
    unreachable!("last positive source always returns")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub floor_fraction: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule { peak: 3e-4, warmup_steps: 2000, total_steps: 100_000, floor_fraction: 0.1 }
    }
}

/// Rounds to 15 significant digits, so decimal inputs multiply to the
/// decimal result (3e-4 * 0.1 gives 3e-5, not 2.9999999999999997e-5).
fn round_sig15(x: f64) -> f64 {
    format!("{x:.14e}").parse().expect("formatted float parses")
}

impl LrSchedule {
    pub fn validate(&self) -> Result<(), CurriculumError> {
        if !(self.peak > 0.0 && self.peak.is_finite()) {
            return Err(CurriculumError::InvalidSchedule("peak must be positive"));
        }
        if self.total_steps <= self.warmup_steps {
            return Err(CurriculumError::InvalidSchedule("total_steps must exceed warmup_steps"));
        }
        if !(self.floor_fraction > 0.0 && self.floor_fraction < 1.0) {
            return Err(CurriculumError::InvalidSchedule("floor_fraction must be in (0, 1)"));
        }
        Ok(())
    }

    pub fn floor(&self) -> f64 {
        round_sig15(self.peak * self.floor_fraction)
    }

    /// The schedule at a real-valued step, without range checks.
    pub fn lr_at_real(&self, step: f64) -> f64 {
        let warmup = self.warmup_steps as f64;
        if step <= warmup {
            if self.warmup_steps == 0 {
                return self.peak;
            }
            return self.peak * step / warmup;
        }
        self.decay(step)
    }

    /// Cosine branch, also defined at the warmup boundary itself.
    pub fn decay(&self, step: f64) -> f64 {
        let warmup = self.warmup_steps as f64;
        let floor = self.floor();
        let progress = (step - warmup) / (self.total_steps as f64 - warmup);
        floor + (self.peak - floor) * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0
    }
}

pub fn lr_at(step: u64, sched: &LrSchedule) -> Result<f64, CurriculumError> {
    sched.validate()?;
    if step > sched.total_steps {
        return Err(CurriculumError::StepOutOfRange { step, total: sched.total_steps });
    }
    Ok(sched.lr_at_real(step as f64))
}

/// A sequence available to the runner, with its token length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceItem {
    pub text: String,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Emission {
    pub stage: StageName,
    pub stage_index: usize,
    pub source: String,
    pub item: usize,
    pub tokens: u64,
    /// Tokens emitted so far in this stage, including this sequence.
    pub cumulative: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunnerOptions {
    /// Restart a source from its first item once exhausted.
    pub cycle: bool,
}

fn stage_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Emits sequences stage by stage until each stage's token budget is met.
/// Every source keeps one cursor for the whole run. Zero-length items are
/// ignored.
pub fn stage_runner(
    plan: &StagePlan,
    sources: &BTreeMap<String, Vec<SourceItem>>,
    seed: u64,
    options: RunnerOptions,
) -> Result<Vec<Emission>, CurriculumError> {
    let violations = validate_plan(plan);
    if !violations.is_empty() {
        return Err(CurriculumError::InvalidPlan(violations));
    }
    let usable: BTreeMap<&str, Vec<usize>> =
        sources.iter().map(|(id, items)| (id.as_str(), items.iter().enumerate().filter(|(_, it)| it.tokens > 0).map(|(i, _)| i).collect())).collect();
    for stage in &plan.stages {
        for s in stage.mixture.sources.iter().filter(|s| s.weight > 0.0) {
            if usable.get(s.id.as_str()).is_none_or(|v| v.is_empty()) {
                return Err(CurriculumError::MissingSource(s.id.clone()));
            }
        }
    }
    let mut cursors: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for (stage_index, stage) in plan.stages.iter().enumerate() {
        let mut sampler = SourceSampler::new(&stage.mixture, stage_seed(seed, stage_index))?;
        let mut cumulative = 0u64;
        while cumulative < stage.mixture.token_budget {
            let id = sampler.sample().to_string();
            let items = &usable[id.as_str()];
            let cursor = cursors.entry(sources.get_key_value(&id).unwrap().0.as_str()).or_insert(0);
            if *cursor >= items.len() {
                if !options.cycle {
                    return Err(CurriculumError::ExhaustedSource(id));
                }
                *cursor = 0;
            }
            let item = items[*cursor];
            *cursor += 1;
            let tokens = sources[&id][item].tokens;
            cumulative += tokens;
            out.push(Emission { stage: stage.name, stage_index, source: id, item, tokens, cumulative });
        }
        log::info!("stage {} ({stage_index}) done: {cumulative} tokens, budget {}", stage.name, stage.mixture.token_budget);
    }
    Ok(out)
}

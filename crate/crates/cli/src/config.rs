//! Experiment configuration: a TOML file whose relative paths resolve
//! against the file's directory, with command-line overrides on top.

use std::fmt;
use std::path::{Path, PathBuf};

use guidance_core::agents::{BackendConfig, KeyframeParams};
use guidance_core::executor::FallbackMode;
use guidance_core::grounding::{DetectorConfig, SearchLimits};
use guidance_core::policy::{DynamicsMode, PolicySpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// `"0..49"` (inclusive), `"3"`, `"1,4,9"` or a TOML integer list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Text(String),
}

impl SeedSpec {
    pub fn expand(&self) -> Result<Vec<u64>, CliError> {
        match self {
            SeedSpec::List(v) => Ok(v.clone()),
            SeedSpec::Text(s) => parse_seeds(s),
        }
    }
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::config(format!("seeds: cannot parse `{s}` (use `a..b`, `a,b,c` or `n`)"));
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|p| p.trim().parse::<u64>().map_err(|_| bad())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceSource {
    /// A `.gsl` file given by `guidance.path`.
    File,
    /// Generated by the agent conversation through `backend`.
    Agents,
    /// Base policy alone.
    None,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceBlock {
    /// Unset means `file` when `path` is given and `none` otherwise.
    pub source: Option<GuidanceSource>,
    pub path: Option<PathBuf>,
    /// Directory with replacement prompt files (`advisor.txt`, ...).
    pub prompts: Option<PathBuf>,
    pub turn_budget: Option<usize>,
}

impl GuidanceBlock {
    pub fn effective_source(&self) -> GuidanceSource {
        self.source.unwrap_or(if self.path.is_some() { GuidanceSource::File } else { GuidanceSource::None })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundingBlock {
    pub thesaurus: Option<PathBuf>,
    pub limits: SearchLimits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Option<PathBuf>,
    pub policy: PolicySpec,
    pub guidance: GuidanceBlock,
    pub alpha: f64,
    pub n: usize,
    pub seeds: SeedSpec,
    pub out: PathBuf,
    pub dynamics: DynamicsMode,
    pub fallback: FallbackMode,
    pub record_candidates: bool,
    pub record_scores: bool,
    pub iterations: usize,
    pub keyframes: KeyframeParams,
    pub backend: BackendConfig,
    pub detector: DetectorConfig,
    pub grounding: GroundingBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: None,
            policy: PolicySpec::Random,
            guidance: GuidanceBlock::default(),
            alpha: 0.0,
            n: 64,
            seeds: SeedSpec::Text("0".into()),
            out: PathBuf::from("out"),
            dynamics: DynamicsMode::Clamped,
            fallback: FallbackMode::BaseOnly,
            record_candidates: false,
            record_scores: false,
            iterations: 5,
            keyframes: KeyframeParams::default(),
            backend: BackendConfig::default(),
            detector: DetectorConfig::default(),
            grounding: GroundingBlock::default(),
        }
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match toml::to_string(self) {
            Ok(s) => f.write_str(&s),
            Err(_) => write!(f, "{self:?}"),
        }
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        rebase(base, &mut cfg.task);
        rebase(base, &mut cfg.guidance.path);
        rebase(base, &mut cfg.guidance.prompts);
        rebase(base, &mut cfg.grounding.thesaurus);
        if cfg.out.is_relative() {
            cfg.out = base.join(&cfg.out);
        }
        if let Some(t) = &cfg.backend.transcript {
            let t = PathBuf::from(t);
            if t.is_relative() {
                cfg.backend.transcript = Some(base.join(t).to_string_lossy().into_owned());
            }
        }
        Ok(cfg)
    }

    /// Field-level checks. Messages name the offending field.
    pub fn validate(&self) -> Result<(), CliError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(CliError::config(format!("alpha: {} is outside [0, 1]", self.alpha)));
        }
        if self.n == 0 {
            return Err(CliError::config("n: must be at least 1"));
        }
        if self.seeds.expand()?.is_empty() {
            return Err(CliError::config("seeds: must not be empty"));
        }
        if self.iterations == 0 {
            return Err(CliError::config("iterations: must be at least 1"));
        }
        let task = self.task.as_ref().ok_or_else(|| CliError::config("task: no task fixture given"))?;
        if !task.exists() {
            return Err(CliError::config(format!("task: {} does not exist", task.display())));
        }
        if self.guidance.effective_source() == GuidanceSource::File {
            match &self.guidance.path {
                None => return Err(CliError::config("guidance.path: required when guidance.source = \"file\"")),
                Some(p) if !p.exists() => {
                    return Err(CliError::config(format!("guidance.path: {} does not exist", p.display())))
                }
                _ => {}
            }
        }
        if let Some(t) = &self.grounding.thesaurus {
            if !t.exists() {
                return Err(CliError::config(format!("grounding.thesaurus: {} does not exist", t.display())));
            }
        }
        if self.guidance.effective_source() == GuidanceSource::Agents {
            self.backend.validate().map_err(|e| CliError::config(format!("backend: {e}")))?;
        }
        self.detector.validate().map_err(|e| CliError::config(format!("detector: {e}")))?;
        Ok(())
    }

    pub fn seed_list(&self) -> Result<Vec<u64>, CliError> {
        self.seeds.expand()
    }
}

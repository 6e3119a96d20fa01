//! Fixture loading and artifact output.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use guidance_core::agents::{Agent, Prompts, Transcript};
use guidance_core::executor::EpisodeLog;
use guidance_core::grounding::Thesaurus;
use guidance_core::sim::TaskSpec;

use crate::error::CliError;

fn read(path: &Path, what: &str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {what} {}: {e}", path.display())))
}

pub fn load_task(path: &Path) -> Result<TaskSpec, CliError> {
    let text = read(path, "task fixture")?;
    let task: TaskSpec =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("task fixture {}: {e}", path.display())))?;
    task.validate().map_err(|e| CliError::config(format!("task fixture {}: {e}", path.display())))?;
    Ok(task)
}

pub fn load_thesaurus(path: Option<&Path>) -> Result<Thesaurus, CliError> {
    match path {
        None => Ok(Thesaurus::default()),
        Some(p) => serde_json::from_str(&read(p, "thesaurus")?)
            .map_err(|e| CliError::config(format!("thesaurus {}: {e}", p.display()))),
    }
}

pub fn load_transcript(path: &Path) -> Result<Transcript, CliError> {
    toml::from_str(&read(path, "transcript")?).map_err(|e| CliError::config(format!("transcript {}: {e}", path.display())))
}

/// Built-in prompts, with any `<role>.txt` (and `gsl_amendment.txt`) found
/// in `dir` replacing the built-in text.
pub fn load_prompts(dir: Option<&Path>) -> Result<Prompts, CliError> {
    let mut prompts = Prompts::default();
    let Some(dir) = dir else { return Ok(prompts) };
    if !dir.is_dir() {
        return Err(CliError::config(format!("guidance.prompts: {} is not a directory", dir.display())));
    }
    for agent in Agent::ALL {
        let p = dir.join(format!("{}.txt", agent.as_str()));
        if p.exists() {
            let text = read(&p, "prompt")?;
            match agent {
                Agent::Advisor => prompts.advisor = text,
                Agent::Grounding => prompts.grounding = text,
                Agent::Monitor => prompts.monitor = text,
                Agent::Robotic => prompts.robotic = text,
            }
        }
    }
    let p = dir.join("gsl_amendment.txt");
    if p.exists() {
        prompts.amendment = read(&p, "prompt")?;
    }
    Ok(prompts)
}

/// Parses a file of JSON lines, one episode per line.
pub fn load_logs(path: &Path) -> Result<Vec<EpisodeLog>, CliError> {
    let text = read(path, "episode log")?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::config(format!("episode log {} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn log_line(log: &EpisodeLog) -> String {
    let mut s = serde_json::to_string(log).expect("episode logs serialize");
    s.push('\n');
    s
}

/// An output directory that records every file written into it.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: BTreeSet<PathBuf>,
}

pub const MANIFEST: &str = "manifest.txt";

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::config(format!("cannot create output directory {}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), written: BTreeSet::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `rel` through a temporary sibling and a rename, so a reader
    /// never sees a partial file.
    pub fn write(&mut self, rel: impl AsRef<Path>, contents: &[u8]) -> Result<PathBuf, CliError> {
        let rel = rel.as_ref();
        let path = self.root.join(rel);
        let fail = |e: std::io::Error| CliError::config(format!("cannot write {}: {e}", path.display()));
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(fail)?;
        }
        let mut tmp = path.clone().into_os_string();
        tmp.push(".tmp");
        fs::write(&tmp, contents).map_err(fail)?;
        fs::rename(&tmp, &path).map_err(fail)?;
        self.written.insert(rel.to_path_buf());
        Ok(path)
    }

    pub fn written(&self) -> impl Iterator<Item = &Path> {
        self.written.iter().map(PathBuf::as_path)
    }

    /// Writes `manifest.txt`: every other file written, one relative path
    /// per line, sorted.
    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        let mut text = String::new();
        for p in &self.written {
            text.push_str(&p.to_string_lossy().replace('\\', "/"));
            text.push('\n');
        }
        self.write(MANIFEST, text.as_bytes())
    }
}

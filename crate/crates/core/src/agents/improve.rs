use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use super::conversation::{generate_guidance_function, Session};
use super::keyframes::{extract_keyframes, KeyframeParams, KeyframeSet};
use super::{Agent, AgentError, Backend, ChatMessage, ChatRole, Prompts};
use crate::executor::{run_episode, EpisodeLog, EpisodeOptions, ExecError, GroundingSetup, GuidanceContext};
use crate::gsl::GslProgram;
use crate::policy::Policy;
use crate::sim::{self, TaskSpec};
use crate::types::{HiddenState, HiddenValue, RobotState};

/// Runs one batch of episodes with a given program.
pub trait BatchRunner {
    fn run(&self, program: &GslProgram, seeds: &[u64]) -> Result<Vec<EpisodeLog>, ExecError>;
}

/// Episodes one after another. `template.program` is ignored.
pub struct SequentialRunner<'a> {
    pub task: &'a TaskSpec,
    pub policy: &'a dyn Policy,
    pub template: GuidanceContext<'a>,
    pub grounding: &'a GroundingSetup,
    pub opts: EpisodeOptions,
}

impl BatchRunner for SequentialRunner<'_> {
    fn run(&self, program: &GslProgram, seeds: &[u64]) -> Result<Vec<EpisodeLog>, ExecError> {
        let t = &self.template;
        let ctx = GuidanceContext {
            program: Some(program),
            alpha: t.alpha,
            n: t.n,
            dynamics: t.dynamics.clone(),
            budget: t.budget,
            fallback: t.fallback,
        };
        seeds
            .iter()
            .map(|&s| run_episode(self.task, self.policy, &ctx, self.grounding, s, self.opts))
            .collect()
    }
}

struct Frame {
    step: u32,
    ee: RobotState,
    pressed: Vec<String>,
    hidden: HiddenState,
    features: Vec<f64>,
}

/// Reset state plus the state after every logged step.
fn episode_frames(task: &TaskSpec, log: &EpisodeLog, initial_hidden: &HiddenState) -> Result<Vec<Frame>, ExecError> {
    let (mut state, _) = sim::reset(task, log.seed)?;
    let snapshot = |s: &sim::SimState, hidden: &HiddenState| Frame {
        step: s.step,
        ee: s.ee,
        pressed: s.pressed.clone(),
        hidden: hidden.clone(),
        features: s.frame_features(task),
    };
    let mut frames = alloc::vec![snapshot(&state, initial_hidden)];
    for trace in &log.steps {
        state.step(task, &trace.action)?;
        frames.push(snapshot(&state, &trace.hidden_after));
    }
    Ok(frames)
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn fmt_hidden(h: &HiddenState) -> String {
    let parts: Vec<String> = h
        .iter()
        .map(|(k, v)| match v {
            HiddenValue::Bool(b) => format!("{k}={b}"),
            HiddenValue::Number(x) => format!("{k}={x:.3}"),
        })
        .collect();
    format!("{{{}}}", parts.join(", "))
}

/// The user turn sent to the Monitor. Depends only on its arguments.
pub fn render_monitor_payload(
    task: &TaskSpec,
    log: &EpisodeLog,
    program: &GslProgram,
    keyframes: &KeyframeSet,
    total_frames: usize,
    frame_lines: &[String],
) -> String {
    let mut s = String::new();
    let outcome = match (log.success, log.failure_class) {
        (true, _) => "success".to_string(),
        (false, Some(c)) => format!("failure ({})", format!("{c:?}").to_lowercase()),
        (false, None) => "failure".to_string(),
    };
    let _ = writeln!(s, "task: {}", task.task.instruction);
    let _ = writeln!(s, "episode seed {}: {outcome} after {} steps", log.seed, log.steps.len());
    let _ = writeln!(s, "buttons pressed: [{}]", log.pressed.join(", "));
    let _ = writeln!(
        s,
        "keyframes: {} of {total_frames} frames (k={}, p={})",
        keyframes.indices.len(),
        keyframes.k,
        keyframes.p
    );
    for line in frame_lines {
        let _ = writeln!(s, "{line}");
    }
    let _ = writeln!(s, "guidance code:\n```\n{}```", program.source);
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub keyframes: KeyframeSet,
    pub payload: String,
    pub feedback: String,
}

/// Summarizes keyframes of a failed episode with the program source and
/// asks the Monitor what went wrong.
pub fn monitor_feedback(
    log: &EpisodeLog,
    program: &GslProgram,
    task: &TaskSpec,
    prompts: &Prompts,
    params: KeyframeParams,
    backend: &mut dyn Backend,
) -> Result<MonitorReport, AgentError> {
    let initial = program.default_hidden().unwrap_or_default();
    let frames = episode_frames(task, log, &initial)?;
    let features: Vec<Vec<f64>> = frames.iter().map(|f| f.features.clone()).collect();
    let keyframes = extract_keyframes(&features, params)?;
    let lines: Vec<String> = keyframes
        .indices
        .iter()
        .map(|&i| {
            let f = &frames[i];
            format!(
                "frame {i} (step {}): end effector {} rotation {} gripper {:.3}; pressed [{}]; flags {}",
                f.step,
                fmt_vec(&f.ee.position),
                fmt_vec(&f.ee.orientation),
                f.ee.gripper,
                f.pressed.join(", "),
                fmt_hidden(&f.hidden)
            )
        })
        .collect();
    let payload = render_monitor_payload(task, log, program, &keyframes, frames.len(), &lines);
    let messages = [
        ChatMessage::new(ChatRole::System, prompts.system_prompt(Agent::Monitor)),
        ChatMessage::new(ChatRole::User, payload.clone()),
    ];
    let feedback = backend.complete(Agent::Monitor, &messages)?;
    Ok(MonitorReport { keyframes, payload, feedback })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    /// `None` when the conversation produced no validated program.
    pub guidance_source: Option<String>,
    pub successes: usize,
    pub episodes: usize,
    pub turns: usize,
    /// Protocol failure reason, if any.
    pub error: Option<String>,
    /// Monitor feedback produced after this iteration's failures.
    pub feedback: Option<String>,
    #[serde(skip)]
    pub logs: Vec<EpisodeLog>,
}

impl IterationRecord {
    /// Percent of seeds that succeeded.
    pub fn success_rate(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            100.0 * self.successes as f64 / self.episodes as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementReport {
    pub iterations: Vec<IterationRecord>,
    /// Index into `iterations` of the highest success rate, earliest on ties.
    pub best: Option<usize>,
    pub stopped_early: bool,
}

impl ImprovementReport {
    pub fn rates(&self) -> Vec<f64> {
        self.iterations.iter().map(IterationRecord::success_rate).collect()
    }

    pub fn best_source(&self) -> Option<&str> {
        self.best.and_then(|i| self.iterations[i].guidance_source.as_deref())
    }
}

/// Generate, evaluate over `seeds`, summarize a failure for the Monitor and
/// regenerate with its feedback, up to `iterations` times. Stops once every
/// seed succeeds. A protocol failure marks that iteration and moves on.
pub fn improve(
    session: &Session<'_>,
    runner: &dyn BatchRunner,
    iterations: usize,
    seeds: &[u64],
    keyframes: KeyframeParams,
    backend: &mut dyn Backend,
) -> Result<ImprovementReport, AgentError> {
    let task = session.task;
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut feedback: Option<String> = None;
    let mut stopped_early = false;
    for iteration in 1..=iterations.max(1) {
        let generated = generate_guidance_function(&task.task.instruction, session, feedback.as_deref(), backend);
        let (program, conv) = match generated {
            Ok(pair) => pair,
            Err(AgentError::ProtocolFailure { reason, turns }) => {
                records.push(IterationRecord {
                    iteration,
                    guidance_source: None,
                    successes: 0,
                    episodes: 0,
                    turns,
                    error: Some(reason),
                    feedback: None,
                    logs: Vec::new(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let logs = runner.run(&program, seeds)?;
        let successes = logs.iter().filter(|l| l.success).count();
        let mut record = IterationRecord {
            iteration,
            guidance_source: Some(program.source.clone()),
            successes,
            episodes: logs.len(),
            turns: conv.turn,
            error: None,
            feedback: None,
            logs,
        };
        if successes == record.episodes {
            records.push(record);
            stopped_early = iteration < iterations;
            break;
        }
        if iteration < iterations {
            let failed = record.logs.iter().find(|l| !l.success).expect("a failed episode exists");
            let report = monitor_feedback(failed, &program, task, session.prompts, keyframes, backend)?;
            let text = format!(
                "{}\n\nguidance code used in the failed episodes:\n```\n{}```",
                report.feedback.trim_end(),
                program.source
            );
            record.feedback = Some(report.feedback);
            feedback = Some(text);
        }
        records.push(record);
    }

    let mut best: Option<usize> = None;
    for (i, r) in records.iter().enumerate() {
        if r.guidance_source.is_some() && best.is_none_or(|b| r.successes > records[b].successes) {
            best = Some(i);
        }
    }
    Ok(ImprovementReport { iterations: records, best, stopped_early })
}

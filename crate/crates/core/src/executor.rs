//! The guided action loop: sample candidates from the base policy, score their
//! forecast futures with a guidance script, blend both distributions and act
//! on the argmax.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grounding::{
    ground_objects, Detector, DetectorConfig, Perception, SceneBinding, SearchLimits, SearchTrace,
    Thesaurus, TrackRegistry,
};
use crate::gsl::{evaluate, EvalBudget, EvalError, GslProgram};
use crate::policy::{Candidates, DynamicsModel, Policy, PolicyError};
use crate::scene::Observation;
use crate::sim::{self, FailureClass, SimError, TaskSpec};
use crate::types::{normalize_scores, select_best, HiddenState, RobotState, ScoreError, ScoreVector};

/// Realized and forecast states closer than this count as the same state.
pub const REEVALUATE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid guidance context: {0}")]
    Config(&'static str),
}

/// What a step does when guidance cannot be evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackMode {
    /// Act on the base policy alone.
    #[default]
    BaseOnly,
    /// Replace the guidance distribution with the uniform one.
    UniformGuidance,
}

#[derive(Debug, Clone)]
pub struct GuidanceContext<'a> {
    /// `None` runs the base policy alone.
    pub program: Option<&'a GslProgram>,
    pub alpha: f64,
    pub n: usize,
    pub dynamics: DynamicsModel,
    pub budget: EvalBudget,
    pub fallback: FallbackMode,
}

impl GuidanceContext<'_> {
    pub fn validate(&self) -> Result<(), ExecError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ExecError::Config("alpha must lie in [0, 1]"));
        }
        if self.n < 1 {
            return Err(ExecError::Config("sample count must be at least 1"));
        }
        if self.budget.max_ops == 0 || self.budget.max_loop_iters == 0 {
            return Err(ExecError::Config("evaluation budget must be positive"));
        }
        Ok(())
    }
}

/// Everything computed in one control step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: u32,
    pub state: RobotState,
    /// Sampled candidate actions; omitted from logs unless requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<RobotState>,
    /// Per-candidate score vectors. `run_episode` drops them unless
    /// `record_scores` is set.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub base_raw: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub base_norm: Vec<f64>,
    /// Raw guidance scores; empty when guidance was not evaluated.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub guidance_raw: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub guidance_norm: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub combined: Vec<f64>,
    pub chosen: usize,
    pub action: RobotState,
    pub hidden_before: HiddenState,
    pub hidden_after: HiddenState,
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// End-effector state after executing `action`; set by `run_episode`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reached: Option<RobotState>,
    /// Whether guidance was re-run at the reached state to update the hidden state.
    #[serde(default)]
    pub reevaluated: bool,
}

/// `(1 - alpha) * pi_hat + alpha * g_hat`, element-wise.
pub fn combine_distributions(pi_hat: &ScoreVector, g_hat: &ScoreVector, alpha: f64) -> Result<ScoreVector, ScoreError> {
    if pi_hat.is_empty() {
        return Err(ScoreError::EmptyVector);
    }
    if pi_hat.len() != g_hat.len() {
        return Err(ScoreError::LengthMismatch(pi_hat.len(), g_hat.len()));
    }
    let beta = 1.0 - alpha;
    Ok(ScoreVector(pi_hat.0.iter().zip(&g_hat.0).map(|(p, g)| beta * p + alpha * g).collect()))
}

/// Scores `futures` with the program; the first failure aborts the batch.
fn score_futures(
    program: &GslProgram,
    futures: &[RobotState],
    hidden: &HiddenState,
    perception: &dyn Perception,
    budget: &EvalBudget,
) -> Result<(Vec<f64>, Vec<HiddenState>), EvalError> {
    let mut scores = Vec::with_capacity(futures.len());
    let mut hiddens = Vec::with_capacity(futures.len());
    for f in futures {
        let ev = evaluate(program, f, hidden, perception, budget)?;
        scores.push(ev.score);
        hiddens.push(ev.next_hidden);
    }
    Ok((scores, hiddens))
}

/// One guided control step. Returns the chosen action and the step trace;
/// `trace.hidden_after` is the hidden state carried by the chosen candidate.
#[allow(clippy::too_many_arguments)]
pub fn guided_step(
    ctx: &GuidanceContext<'_>,
    policy: &dyn Policy,
    obs: &Observation,
    state: &RobotState,
    hidden: &HiddenState,
    perception: &dyn Perception,
    seed: u64,
) -> Result<(RobotState, StepTrace), ExecError> {
    ctx.validate()?;
    let candidates = policy.sample_actions(obs, state, ctx.n, seed);
    let base_raw = policy.action_probabilities(obs, state, &candidates)?;
    let pi_hat = normalize_scores(&base_raw)?;
    let n = candidates.len();

    let mut error = None;
    let mut guidance_raw = Vec::new();
    let mut hiddens = Vec::new();
    if let Some(program) = ctx.program {
        let futures = ctx.dynamics.forecast(state, &candidates.actions);
        match score_futures(program, &futures, hidden, perception, &ctx.budget) {
            Ok((s, h)) => {
                guidance_raw = s;
                hiddens = h;
            }
            Err(e) => error = Some(e.to_string()),
        }
    }
    let fallback = error.is_some();
    let (g_hat, alpha) = if guidance_raw.is_empty() {
        match ctx.fallback {
            FallbackMode::BaseOnly => (ScoreVector::uniform(n), 0.0),
            FallbackMode::UniformGuidance => (ScoreVector::uniform(n), ctx.alpha),
        }
    } else {
        (normalize_scores(&ScoreVector(guidance_raw.clone()))?, ctx.alpha)
    };
    let combined = combine_distributions(&pi_hat, &g_hat, alpha)?;
    let chosen = select_best(&combined)?;
    let hidden_after = hiddens.get(chosen).cloned().unwrap_or_else(|| hidden.clone());
    let action = candidates.actions[chosen];
    let trace = StepTrace {
        step: obs.step,
        state: *state,
        candidates: candidates.actions,
        base_raw: base_raw.0,
        base_norm: pi_hat.0,
        guidance_raw,
        guidance_norm: g_hat.0,
        combined: combined.0,
        chosen,
        action,
        hidden_before: hidden.clone(),
        hidden_after,
        fallback,
        error,
        reached: None,
        reevaluated: false,
    };
    Ok((action, trace))
}

/// Perception setup for an episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundingSetup {
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub thesaurus: Thesaurus,
    #[serde(default)]
    pub limits: SearchLimits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EpisodeOptions {
    /// Keep sampled candidates in the step traces.
    pub record_candidates: bool,
    /// Keep the per-candidate score vectors in the step traces.
    pub record_scores: bool,
}

/// One episode, serialized as a single JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub task_id: String,
    pub seed: u64,
    pub steps: Vec<StepTrace>,
    pub success: bool,
    pub failure_class: Option<FailureClass>,
    pub guidance_version: Option<String>,
    #[serde(default)]
    pub policy: String,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub searches: Vec<SearchTrace>,
    /// Button ids pressed by the end of the episode, in press order.
    #[serde(default)]
    pub pressed: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_state: Option<RobotState>,
}

impl EpisodeLog {
    pub fn actions(&self) -> Vec<RobotState> {
        self.steps.iter().map(|s| s.action).collect()
    }

    pub fn fallback_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.fallback).count()
    }
}

/// A stable short digest of a guidance source (64-bit FNV-1a, hex).
pub fn source_digest(source: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in source.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Runs one episode from reset until success, an unrecoverable order
/// violation, or the timeout.
pub fn run_episode(
    task: &TaskSpec,
    policy: &dyn Policy,
    ctx: &GuidanceContext<'_>,
    grounding: &GroundingSetup,
    seed: u64,
    opts: EpisodeOptions,
) -> Result<EpisodeLog, ExecError> {
    ctx.validate()?;
    let (mut sim_state, mut obs) = sim::reset(task, seed)?;
    let mut detector_cfg = grounding.detector.clone();
    detector_cfg.seed = detector_cfg.seed.wrapping_add(seed);
    let mut detector = Detector::new(detector_cfg.clone());
    let mut registry = TrackRegistry::new(detector_cfg.dropout_rate, detector_cfg.seed);

    let mut hidden = HiddenState::new();
    let mut searches = Vec::new();
    if let Some(program) = ctx.program {
        hidden = program.default_hidden().ok_or(ExecError::Config("program declares an invalid default hidden state"))?;
        let names = program.referenced_objects();
        searches = ground_objects(
            &mut detector,
            &obs,
            &mut registry,
            names.iter().map(String::as_str),
            &grounding.thesaurus,
            grounding.limits,
        );
    }

    let timeout = task.workspace().timeout;
    let mut steps = Vec::new();
    while sim_state.step < timeout && !sim_state.task_satisfied(task) && !sim_state.is_doomed(task) {
        if sim_state.step > 0 {
            registry.advance_dropout();
        }
        let binding = SceneBinding { registry: &registry, snapshot: &obs };
        let (action, mut trace) = guided_step(ctx, policy, &obs, &sim_state.ee, &hidden, &binding, seed)?;
        if !opts.record_candidates {
            trace.candidates = Vec::new();
        }
        if !opts.record_scores {
            for v in [
                &mut trace.base_raw,
                &mut trace.base_norm,
                &mut trace.guidance_raw,
                &mut trace.guidance_norm,
                &mut trace.combined,
            ] {
                *v = Vec::new();
            }
        }
        let forecast = ctx.dynamics.predict(&sim_state.ee, &action);
        obs = sim_state.step(task, &action)?;
        let reached = sim_state.ee;
        trace.reached = Some(reached);

        hidden = trace.hidden_after.clone();
        if let Some(program) = ctx.program {
            let moved = reached.to_array().iter().zip(forecast.to_array()).any(|(a, b)| (a - b).abs() > REEVALUATE_EPS);
            if moved && !trace.fallback {
                let binding = SceneBinding { registry: &registry, snapshot: &obs };
                match evaluate(program, &reached, &trace.hidden_before, &binding, &ctx.budget) {
                    Ok(ev) => {
                        hidden = ev.next_hidden;
                        trace.hidden_after = hidden.clone();
                        trace.reevaluated = true;
                    }
                    Err(e) => {
                        trace.error = Some(e.to_string());
                        if e.is_perception() {
                            trace.fallback = true;
                        }
                    }
                }
            }
        }
        registry.reacquire(&mut detector, &obs);
        steps.push(trace);
    }

    let outcome = sim_state.success(task);
    let failure_class = if outcome.success {
        None
    } else if steps.iter().any(|s| s.fallback) {
        Some(FailureClass::Perception)
    } else if sim_state.is_doomed(task) {
        Some(FailureClass::Behavior)
    } else {
        outcome.failure
    };
    Ok(EpisodeLog {
        task_id: task.id().to_string(),
        seed,
        steps,
        success: outcome.success,
        failure_class,
        guidance_version: ctx.program.map(|p| source_digest(&p.source)),
        policy: policy.name().to_string(),
        alpha: ctx.alpha,
        searches,
        pressed: sim_state.pressed.clone(),
        final_state: Some(sim_state.ee),
    })
}

/// Re-executes a log's actions and returns the final simulator state.
pub fn replay_log(task: &TaskSpec, log: &EpisodeLog) -> Result<sim::SimState, ExecError> {
    Ok(sim::replay(task, log.seed, &log.actions())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn over_workspace(ws: &crate::scene::WorkspaceSpec, z: f64, nx: usize, ny: usize) -> Self {
        Self { x: ws.bounds[0], y: ws.bounds[1], z, nx, ny }
    }

    /// Cell centers along one axis.
    fn centers(range: [f64; 2], count: usize) -> Vec<f64> {
        let w = (range[1] - range[0]) / count as f64;
        (0..count).map(|i| range[0] + (i as f64 + 0.5) * w).collect()
    }

    pub fn cell_width(&self) -> (f64, f64) {
        ((self.x[1] - self.x[0]) / self.nx as f64, (self.y[1] - self.y[0]) / self.ny as f64)
    }
}

/// Combined scores over a horizontal grid of candidate positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub z: f64,
    /// `values[row][col]` is the cell at `(xs[col], ys[row])`.
    pub values: Vec<Vec<f64>>,
    /// `(col, row)` of the highest-scoring cell, lowest index on ties.
    pub argmax: (usize, usize),
    pub fallback: bool,
}

impl HeatmapGrid {
    pub fn argmax_xy(&self) -> (f64, f64) {
        (self.xs[self.argmax.0], self.ys[self.argmax.1])
    }

    /// Header row of x-coordinates, then one row per y with the y-coordinate first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("y\\x");
        for x in &self.xs {
            out.push_str(&format!(",{x}"));
        }
        out.push('\n');
        for (y, row) in self.ys.iter().zip(&self.values) {
            out.push_str(&format!("{y}"));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Scores every grid cell as a candidate end-effector position (keeping the
/// current orientation and gripper) and blends base and guidance scores over
/// the whole grid.
#[allow(clippy::too_many_arguments)]
pub fn emit_heatmap(
    ctx: &GuidanceContext<'_>,
    policy: &dyn Policy,
    obs: &Observation,
    state: &RobotState,
    hidden: &HiddenState,
    perception: &dyn Perception,
    grid: &GridSpec,
) -> Result<HeatmapGrid, ExecError> {
    ctx.validate()?;
    if grid.nx < 2 || grid.ny < 2 {
        return Err(ExecError::Config("heatmap grid must be at least 2x2"));
    }
    let xs = GridSpec::centers(grid.x, grid.nx);
    let ys = GridSpec::centers(grid.y, grid.ny);
    let cells: Vec<RobotState> = ys
        .iter()
        .flat_map(|y| xs.iter().map(move |x| (*x, *y)))
        .map(|(x, y)| state.with_position([x, y, grid.z]))
        .collect();
    let candidates = Candidates::from_actions(cells);
    let pi_hat = normalize_scores(&policy.action_probabilities(obs, state, &candidates)?)?;
    let n = candidates.len();
    let (g_hat, alpha, fallback) = match ctx.program {
        None => (ScoreVector::uniform(n), 0.0, false),
        Some(p) => match score_futures(p, &candidates.actions, hidden, perception, &ctx.budget) {
            Ok((raw, _)) => (normalize_scores(&ScoreVector(raw))?, ctx.alpha, false),
            Err(_) => match ctx.fallback {
                FallbackMode::BaseOnly => (ScoreVector::uniform(n), 0.0, true),
                FallbackMode::UniformGuidance => (ScoreVector::uniform(n), ctx.alpha, true),
            },
        },
    };
    let combined = combine_distributions(&pi_hat, &g_hat, alpha)?;
    let best = select_best(&combined)?;
    let values = combined.0.chunks(grid.nx).map(<[f64]>::to_vec).collect();
    Ok(HeatmapGrid { xs, ys, z: grid.z, values, argmax: (best % grid.nx, best / grid.nx), fallback })
}

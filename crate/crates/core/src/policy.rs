//! Base policies and the forward dynamics model.
//!
//! Every policy is immutable after construction and takes an explicit seed,
//! so the same `(observation, state, n, seed)` always yields the same
//! candidate set.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Stream};
use crate::scene::{Observation, WorkspaceSpec};
use crate::sim::{move_toward, TaskKind, TaskSpec};
use crate::types::{RobotState, ScoreVector};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("candidate set has {got} actions but {expected} were sampled")]
    MismatchedCandidates { expected: usize, got: usize },
    #[error("invalid policy configuration: {0}")]
    Config(&'static str),
}

/// Candidate actions for one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidates {
    pub actions: Vec<RobotState>,
    sampled: usize,
}

impl Candidates {
    /// A synthetic candidate set (e.g. heatmap cells).
    pub fn from_actions(actions: Vec<RobotState>) -> Self {
        let sampled = actions.len();
        Self { actions, sampled }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn check(&self) -> Result<(), PolicyError> {
        if self.actions.len() == self.sampled {
            Ok(())
        } else {
            Err(PolicyError::MismatchedCandidates { expected: self.sampled, got: self.actions.len() })
        }
    }
}

pub trait Policy: Send + Sync {
    fn name(&self) -> &str;

    fn sample_actions(&self, obs: &Observation, state: &RobotState, n: usize, seed: u64) -> Candidates;

    /// Non-negative, unnormalized scores for each candidate.
    fn action_probabilities(
        &self,
        obs: &Observation,
        state: &RobotState,
        candidates: &Candidates,
    ) -> Result<ScoreVector, PolicyError>;
}

/// Maps the current observation and state to a single predicted action.
pub trait Predictor: Send + Sync {
    fn predict(&self, obs: &Observation, state: &RobotState) -> RobotState;
}

impl<F> Predictor for F
where
    F: Fn(&Observation, &RobotState) -> RobotState + Send + Sync,
{
    fn predict(&self, obs: &Observation, state: &RobotState) -> RobotState {
        self(obs, state)
    }
}

fn uniform_in(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    rng.random_range(lo..=hi)
}

/// Untrained baseline: uniform candidates inside the workspace, uniform scores.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    pub workspace: WorkspaceSpec,
    pub orientation_range: [[f64; 2]; 3],
    pub gripper_range: [f64; 2],
}

impl RandomPolicy {
    pub fn new(workspace: WorkspaceSpec) -> Self {
        Self {
            workspace,
            orientation_range: [[-180.0, 180.0]; 3],
            gripper_range: [0.0, 0.08],
        }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn sample_actions(&self, obs: &Observation, _: &RobotState, n: usize, seed: u64) -> Candidates {
        let mut rng = rng::stream_at(seed, Stream::PolicySample, obs.step as u64);
        let actions = (0..n)
            .map(|_| {
                let p = core::array::from_fn(|i| uniform_in(&mut rng, self.workspace.bounds[i]));
                let r = core::array::from_fn(|i| uniform_in(&mut rng, self.orientation_range[i]));
                RobotState::new(p, r, uniform_in(&mut rng, self.gripper_range))
            })
            .collect();
        Candidates { actions, sampled: n }
    }

    fn action_probabilities(
        &self,
        _: &Observation,
        _: &RobotState,
        candidates: &Candidates,
    ) -> Result<ScoreVector, PolicyError> {
        candidates.check()?;
        Ok(ScoreVector(alloc::vec![1.0; candidates.len()]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sigmas {
    pub pos: f64,
    pub rot: f64,
    pub grip: f64,
}

impl Default for Sigmas {
    fn default() -> Self {
        Self { pos: 0.05, rot: 15.0, grip: 0.01 }
    }
}

/// Regression policy lifted to a distribution: an isotropic Gaussian around
/// the predicted action with constant per-group standard deviations.
pub struct GaussianRegressionPolicy {
    pub predictor: Box<dyn Predictor>,
    pub sigmas: Sigmas,
    pub workspace: WorkspaceSpec,
}

impl GaussianRegressionPolicy {
    pub fn new(
        predictor: Box<dyn Predictor>,
        sigmas: Sigmas,
        workspace: WorkspaceSpec,
    ) -> Result<Self, PolicyError> {
        if !(sigmas.pos > 0.0 && sigmas.rot > 0.0 && sigmas.grip > 0.0) {
            return Err(PolicyError::Config("sigmas must be positive"));
        }
        Ok(Self { predictor, sigmas, workspace })
    }

    fn log_density(&self, mean: &RobotState, a: &RobotState) -> f64 {
        let mut q = 0.0;
        for i in 0..3 {
            let d = (a.position[i] - mean.position[i]) / self.sigmas.pos;
            let r = (a.orientation[i] - mean.orientation[i]) / self.sigmas.rot;
            q += d * d + r * r;
        }
        let g = (a.gripper - mean.gripper) / self.sigmas.grip;
        -0.5 * (q + g * g)
    }
}

impl Policy for GaussianRegressionPolicy {
    fn name(&self) -> &str {
        "gaussian"
    }

    fn sample_actions(&self, obs: &Observation, state: &RobotState, n: usize, seed: u64) -> Candidates {
        let mean = self.predictor.predict(obs, state);
        let mut rng = rng::stream_at(seed, Stream::PolicySample, obs.step as u64);
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let actions = (0..n)
            .map(|_| {
                let p: [f64; 3] = core::array::from_fn(|i| {
                    mean.position[i] + self.sigmas.pos * unit.sample(&mut rng)
                });
                let r = core::array::from_fn(|i| {
                    mean.orientation[i] + self.sigmas.rot * unit.sample(&mut rng)
                });
                let g = (mean.gripper + self.sigmas.grip * unit.sample(&mut rng)).max(0.0);
                RobotState::new(self.workspace.clamp(p), r, g)
            })
            .collect();
        Candidates { actions, sampled: n }
    }

    /// Gaussian densities up to a common factor (shifted by the largest
    /// log-density so far-off candidate sets do not underflow to zero).
    fn action_probabilities(
        &self,
        obs: &Observation,
        state: &RobotState,
        candidates: &Candidates,
    ) -> Result<ScoreVector, PolicyError> {
        candidates.check()?;
        let mean = self.predictor.predict(obs, state);
        let logs: Vec<f64> = candidates.actions.iter().map(|a| self.log_density(&mean, a)).collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(ScoreVector(logs.into_iter().map(|l| libm::exp(l - top)).collect()))
    }
}

/// Classification-style waypoint policy: scores a seeded set of Cartesian
/// proposals with a kernel around the predicted waypoint; orientation and
/// gripper come from the predictor head.
pub struct SampledWaypointPolicy {
    pub predictor: Box<dyn Predictor>,
    pub proposals: usize,
    /// Kernel width of the proposal scores (meters).
    pub spread: f64,
    pub workspace: WorkspaceSpec,
}

impl SampledWaypointPolicy {
    pub fn proposal_set(&self, obs: &Observation, state: &RobotState, seed: u64) -> Vec<RobotState> {
        let head = self.predictor.predict(obs, state);
        let mut rng = rng::stream_at(seed, Stream::WaypointProposals, obs.step as u64);
        (0..self.proposals.max(1))
            .map(|_| {
                let p = core::array::from_fn(|i| uniform_in(&mut rng, self.workspace.bounds[i]));
                RobotState::new(p, head.orientation, head.gripper)
            })
            .collect()
    }

    fn proposal_score(&self, head: &RobotState, a: &RobotState) -> f64 {
        let d = head.position_distance(a);
        libm::exp(-0.5 * (d / self.spread) * (d / self.spread))
    }
}

impl Policy for SampledWaypointPolicy {
    fn name(&self) -> &str {
        "waypoint"
    }

    fn sample_actions(&self, obs: &Observation, state: &RobotState, n: usize, seed: u64) -> Candidates {
        let proposals = self.proposal_set(obs, state, seed);
        let actions = (0..n).map(|i| proposals[i % proposals.len()]).collect();
        Candidates { actions, sampled: n }
    }

    fn action_probabilities(
        &self,
        obs: &Observation,
        state: &RobotState,
        candidates: &Candidates,
    ) -> Result<ScoreVector, PolicyError> {
        candidates.check()?;
        let head = self.predictor.predict(obs, state);
        Ok(ScoreVector(candidates.actions.iter().map(|a| self.proposal_score(&head, a)).collect()))
    }
}

/// Scripted expert with injected error: knows the task and heads for the
/// right target, offset by a constant bias plus seeded per-step noise.
#[derive(Debug, Clone)]
pub struct ScriptedExpert {
    pub task: TaskSpec,
    pub params: ExpertParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertParams {
    /// Constant position error added to every prediction (meters).
    pub bias: [f64; 3],
    /// Standard deviation of per-step position noise (meters).
    pub noise: f64,
    pub seed: u64,
    /// Height above a button top at which the expert lines up before pressing.
    pub hover: f64,
    /// How far below the button top the press waypoint is placed.
    pub press_depth: f64,
    pub orientation: [f64; 3],
}

impl Default for ExpertParams {
    fn default() -> Self {
        Self {
            bias: [0.0; 3],
            noise: 0.0,
            seed: 0,
            hover: 0.05,
            press_depth: 0.005,
            orientation: [180.0, 0.0, 0.0],
        }
    }
}

impl ScriptedExpert {
    fn ideal_position(&self, obs: &Observation, state: &RobotState) -> [f64; 3] {
        let p = &self.task.task;
        let here = state.position;
        let find = |id: &str| obs.object(id);
        match p.kind {
            TaskKind::PushButtonsOrdered => {
                let next = p.order.iter().find(|id| !obs.pressed.contains(id));
                let Some(button) = next.and_then(|id| find(id)) else {
                    return self.task.workspace().home.position;
                };
                let top = button.top_center();
                let dx = here[0] - top[0];
                let dy = here[1] - top[1];
                let aligned = libm::sqrt(dx * dx + dy * dy) <= 0.01 && here[2] > top[2];
                if aligned {
                    [top[0], top[1], top[2] - self.params.press_depth]
                } else {
                    [top[0], top[1], top[2] + self.params.hover]
                }
            }
            TaskKind::ReachTarget => {
                p.target.as_deref().and_then(find).map(|t| t.top_center()).unwrap_or(here)
            }
            TaskKind::SlideBlockToTarget => {
                let block = p.block.as_deref().and_then(find);
                let target = p.target.as_deref().and_then(find);
                let (Some(b), Some(t)) = (block, target) else { return here };
                let dir = [t.pose[0] - b.pose[0], t.pose[1] - b.pose[1]];
                let len = libm::sqrt(dir[0] * dir[0] + dir[1] * dir[1]);
                if len < 1e-9 {
                    return here;
                }
                let u = [dir[0] / len, dir[1] / len];
                let back = b.half_extents()[0].max(b.half_extents()[1]) + 0.01;
                let behind = [b.pose[0] - u[0] * back, b.pose[1] - u[1] * back, b.pose[2]];
                let dxb = here[0] - behind[0];
                let dyb = here[1] - behind[1];
                if libm::sqrt(dxb * dxb + dyb * dyb) <= 0.01 && (here[2] - b.pose[2]).abs() <= 0.01 {
                    [t.pose[0] - u[0] * back, t.pose[1] - u[1] * back, b.pose[2]]
                } else if (here[2] - b.pose[2]).abs() > 0.01 && libm::sqrt(dxb * dxb + dyb * dyb) > 0.01 {
                    [behind[0], behind[1], b.pose[2] + 0.05]
                } else {
                    behind
                }
            }
        }
    }
}

impl Predictor for ScriptedExpert {
    fn predict(&self, obs: &Observation, state: &RobotState) -> RobotState {
        let mut p = self.ideal_position(obs, state);
        for (i, v) in p.iter_mut().enumerate() {
            *v += self.params.bias[i];
        }
        if self.params.noise > 0.0 {
            let mut rng = rng::stream_at(self.params.seed, Stream::Predictor, obs.step as u64);
            let normal = Normal::new(0.0, self.params.noise).expect("noise sigma is positive");
            for v in p.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        RobotState::new(self.task.workspace().clamp(p), self.params.orientation, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsMode {
    Identity,
    Clamped,
}

/// Forecasts the state reached by executing each candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsModel {
    pub mode: DynamicsMode,
    pub max_step: f64,
    pub workspace: WorkspaceSpec,
}

impl DynamicsModel {
    pub fn identity(workspace: WorkspaceSpec) -> Self {
        Self { mode: DynamicsMode::Identity, max_step: workspace.max_step, workspace }
    }

    /// Matches the simulator's kinematics exactly.
    pub fn clamped(workspace: WorkspaceSpec) -> Self {
        Self { mode: DynamicsMode::Clamped, max_step: workspace.max_step, workspace }
    }

    pub fn predict(&self, state: &RobotState, action: &RobotState) -> RobotState {
        match self.mode {
            DynamicsMode::Identity => *action,
            DynamicsMode::Clamped => RobotState {
                position: move_toward(&state.position, &action.position, self.max_step, &self.workspace),
                orientation: action.orientation,
                gripper: action.gripper.max(0.0),
            },
        }
    }

    pub fn forecast(&self, state: &RobotState, candidates: &[RobotState]) -> Vec<RobotState> {
        candidates.iter().map(|c| self.predict(state, c)).collect()
    }
}

/// Policy block of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    Random,
    Gaussian {
        #[serde(default)]
        sigmas: Sigmas,
        #[serde(default)]
        predictor: ExpertParams,
    },
    Waypoint {
        #[serde(default = "default_proposals")]
        proposals: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default)]
        predictor: ExpertParams,
    },
}

fn default_proposals() -> usize {
    16
}

fn default_spread() -> f64 {
    0.05
}

impl PolicySpec {
    pub fn kind_name(&self) -> String {
        String::from(match self {
            PolicySpec::Random => "random",
            PolicySpec::Gaussian { .. } => "gaussian",
            PolicySpec::Waypoint { .. } => "waypoint",
        })
    }

    pub fn build(&self, task: &TaskSpec) -> Result<Box<dyn Policy>, PolicyError> {
        let ws = task.workspace().clone();
        Ok(match self {
            PolicySpec::Random => Box::new(RandomPolicy::new(ws)),
            PolicySpec::Gaussian { sigmas, predictor } => {
                let expert = ScriptedExpert { task: task.clone(), params: *predictor };
                Box::new(GaussianRegressionPolicy::new(Box::new(expert), *sigmas, ws)?)
            }
            PolicySpec::Waypoint { proposals, spread, predictor } => {
                if *proposals == 0 || !(*spread > 0.0) {
                    return Err(PolicyError::Config("waypoint policy needs proposals >= 1 and spread > 0"));
                }
                let expert = ScriptedExpert { task: task.clone(), params: *predictor };
                Box::new(SampledWaypointPolicy {
                    predictor: Box::new(expert),
                    proposals: *proposals,
                    spread: *spread,
                    workspace: ws,
                })
            }
        })
    }
}

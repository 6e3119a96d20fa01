//! Deterministic kinematic tabletop: waypoint steps, approach-from-above button
//! presses, kinematic block pushing and task success predicates.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{Observation, Scene, SceneError, SceneObject, WorkspaceSpec};
use crate::types::{distance3, RobotState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("fixture error: {0}")]
    Fixture(String),
    #[error("episode is over (step {0} reached the timeout)")]
    EpisodeOver(u32),
}

impl From<SceneError> for SimError {
    fn from(e: SceneError) -> Self {
        SimError::Fixture(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    PushButtonsOrdered,
    ReachTarget,
    SlideBlockToTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    pub id: String,
    pub kind: TaskKind,
    pub instruction: String,
    /// Button ids in the order they must be pressed.
    #[serde(default)]
    pub order: Vec<String>,
    /// Target object id (reach target or slide zone).
    #[serde(default)]
    pub target: Option<String>,
    /// Block object id for the slide task.
    #[serde(default)]
    pub block: Option<String>,
    #[serde(default = "default_press_radius")]
    pub press_radius: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_contact_radius")]
    pub contact_radius: f64,
}

fn default_press_radius() -> f64 {
    0.02
}

fn default_tolerance() -> f64 {
    0.02
}

fn default_contact_radius() -> f64 {
    0.02
}

/// A scene fixture plus its `task` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    #[serde(flatten)]
    pub scene: Scene,
    pub task: TaskParams,
}

impl TaskSpec {
    pub fn id(&self) -> &str {
        &self.task.id
    }

    pub fn workspace(&self) -> &WorkspaceSpec {
        &self.scene.workspace
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.scene.validate()?;
        if self.task.instruction.trim().is_empty() {
            return Err(SimError::Fixture("task instruction is empty".into()));
        }
        let need = |id: &str| -> Result<(), SimError> {
            self.scene
                .object(id)
                .map(|_| ())
                .ok_or_else(|| SimError::Fixture(alloc::format!("unknown object `{id}`")))
        };
        for id in &self.task.order {
            need(id)?;
        }
        for id in self.task.target.iter().chain(self.task.block.iter()) {
            need(id)?;
        }
        match self.task.kind {
            TaskKind::PushButtonsOrdered if self.task.order.is_empty() => {
                Err(SimError::Fixture("push_buttons_ordered needs a button order".into()))
            }
            TaskKind::ReachTarget if self.task.target.is_none() => {
                Err(SimError::Fixture("reach_target needs a target".into()))
            }
            TaskKind::SlideBlockToTarget
                if self.task.target.is_none() || self.task.block.is_none() =>
            {
                Err(SimError::Fixture("slide_block_to_target needs a block and a target".into()))
            }
            _ => Ok(()),
        }
    }

    /// Ids of objects whose positions enter the frame features.
    pub fn task_objects(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.task.order.iter().map(String::as_str).collect();
        ids.extend(self.task.block.as_deref());
        ids.extend(self.task.target.as_deref());
        ids
    }

    pub fn object_name(&self, id: &str) -> Option<&str> {
        self.scene.object(id).map(|o| o.name.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureClass {
    Timeout,
    Perception,
    Behavior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub success: bool,
    pub failure: Option<FailureClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub ee: RobotState,
    pub objects: Vec<SceneObject>,
    /// Button ids in press order. Never shrinks within an episode.
    pub pressed: Vec<String>,
    pub step: u32,
    pub seed: u64,
}

/// Moves `from` toward `to` by at most `max_step` (Euclidean), then clamps
/// into the workspace.
pub fn move_toward(from: &[f64; 3], to: &[f64; 3], max_step: f64, ws: &WorkspaceSpec) -> [f64; 3] {
    let d = distance3(from, to);
    let raw = if d <= max_step {
        *to
    } else {
        let mut scale = max_step / d;
        let mut p: [f64; 3] = core::array::from_fn(|i| from[i] + (to[i] - from[i]) * scale);
        while distance3(from, &p) > max_step {
            scale *= 1.0 - 4.0 * f64::EPSILON;
            p = core::array::from_fn(|i| from[i] + (to[i] - from[i]) * scale);
        }
        p
    };
    ws.clamp(raw)
}

/// The end-effector state reached from `state` when commanding `action`.
pub fn kinematic_target(state: &RobotState, action: &RobotState, ws: &WorkspaceSpec) -> RobotState {
    RobotState {
        position: move_toward(&state.position, &action.position, ws.max_step, ws),
        orientation: action.orientation,
        gripper: action.gripper.max(0.0),
    }
}

pub fn reset(task: &TaskSpec, seed: u64) -> Result<(SimState, Observation), SimError> {
    task.validate()?;
    let scene = task.scene.jittered(seed);
    let state = SimState {
        ee: scene.workspace.home,
        objects: scene.objects,
        pressed: Vec::new(),
        step: 0,
        seed,
    };
    let obs = state.observation();
    Ok((state, obs))
}

impl SimState {
    pub fn observation(&self) -> Observation {
        Observation { step: self.step, objects: self.objects.clone(), pressed: self.pressed.clone() }
    }

    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn is_pressed(&self, id: &str) -> bool {
        self.pressed.iter().any(|p| p == id)
    }

    pub fn pressed_flags(&self, task: &TaskSpec) -> Vec<bool> {
        task.task.order.iter().map(|id| self.is_pressed(id)).collect()
    }

    pub fn step(&mut self, task: &TaskSpec, action: &RobotState) -> Result<Observation, SimError> {
        let ws = task.workspace();
        if self.step >= ws.timeout {
            return Err(SimError::EpisodeOver(self.step));
        }
        let prev = self.ee;
        self.ee = kinematic_target(&prev, action, ws);

        for id in &task.task.order {
            if self.is_pressed(id) {
                continue;
            }
            let Some(button) = self.object(id) else { continue };
            let top = button.top_center();
            if prev.position[2] > top[2] && distance3(&self.ee.position, &top) <= task.task.press_radius
            {
                self.pressed.push(id.clone());
            }
        }

        if let Some(block_id) = task.task.block.as_deref() {
            let contact = task.task.contact_radius;
            let ee = prev.position;
            if let Some(block) = self.objects.iter_mut().find(|o| o.id == block_id) {
                let h = block.half_extents();
                let near_x = (ee[0] - block.pose[0]).abs() <= h[0] + contact;
                let near_y = (ee[1] - block.pose[1]).abs() <= h[1] + contact;
                let low = ee[2] <= block.pose[2] + h[2];
                if near_x && near_y && low {
                    let pushed = [
                        block.pose[0] + self.ee.position[0] - ee[0],
                        block.pose[1] + self.ee.position[1] - ee[1],
                        block.pose[2],
                    ];
                    block.pose = ws.clamp(pushed);
                }
            }
        }

        self.step += 1;
        Ok(self.observation())
    }

    /// True once the task can no longer succeed (button order violated).
    pub fn is_doomed(&self, task: &TaskSpec) -> bool {
        task.task.kind == TaskKind::PushButtonsOrdered && !order_prefix_ok(&self.pressed, &task.task.order)
    }

    pub fn task_satisfied(&self, task: &TaskSpec) -> bool {
        let p = &task.task;
        match p.kind {
            TaskKind::PushButtonsOrdered => self.pressed == p.order,
            TaskKind::ReachTarget => p
                .target
                .as_deref()
                .and_then(|t| self.object(t))
                .is_some_and(|t| distance3(&self.ee.position, &t.top_center()) <= p.tolerance),
            TaskKind::SlideBlockToTarget => {
                let block = p.block.as_deref().and_then(|b| self.object(b));
                let target = p.target.as_deref().and_then(|t| self.object(t));
                match (block, target) {
                    (Some(b), Some(t)) => {
                        let dx = b.pose[0] - t.pose[0];
                        let dy = b.pose[1] - t.pose[1];
                        libm::sqrt(dx * dx + dy * dy) <= p.tolerance
                    }
                    _ => false,
                }
            }
        }
    }

    pub fn success(&self, task: &TaskSpec) -> Outcome {
        if self.task_satisfied(task) {
            Outcome { success: true, failure: None }
        } else if self.step >= task.workspace().timeout {
            Outcome { success: false, failure: Some(FailureClass::Timeout) }
        } else {
            Outcome { success: false, failure: Some(FailureClass::Behavior) }
        }
    }

    /// End-effector 7-vector, task-object positions, then pressed flags as 0/1.
    pub fn frame_features(&self, task: &TaskSpec) -> Vec<f64> {
        let mut f: Vec<f64> = self.ee.to_array().to_vec();
        for id in task.task_objects() {
            let p = self.object(id).map(|o| o.pose).unwrap_or([0.0; 3]);
            f.extend_from_slice(&p);
        }
        f.extend(self.pressed_flags(task).into_iter().map(|b| if b { 1.0 } else { 0.0 }));
        f
    }
}

fn order_prefix_ok(pressed: &[String], order: &[String]) -> bool {
    pressed.len() <= order.len() && pressed.iter().zip(order).all(|(a, b)| a == b)
}

/// Replays an action sequence from reset and returns the final state.
pub fn replay(task: &TaskSpec, seed: u64, actions: &[RobotState]) -> Result<SimState, SimError> {
    let (mut state, _) = reset(task, seed)?;
    for a in actions {
        state.step(task, a)?;
    }
    Ok(state)
}

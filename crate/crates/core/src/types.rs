//! Shared domain types: the 7-component robot state, score vectors and the
//! hidden-state map threaded through guidance evaluations.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// End-effector state (also used as an action: the commanded target state).
///
/// Position in meters, orientation as Euler angles in degrees, gripper as the
/// finger separation in meters. Serialized as `[x, y, z, rx, ry, rz, gripper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 7]", try_from = "[f64; 7]")]
pub struct RobotState {
    pub position: [f64; 3],
    pub orientation: [f64; 3],
    pub gripper: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("robot state component {0} is not finite")]
    NonFinite(usize),
    #[error("gripper separation {0} is negative")]
    NegativeGripper(f64),
    #[error("expected 7 state components, got {0}")]
    WrongLength(usize),
}

impl RobotState {
    pub const DIM: usize = 7;

    pub const fn new(position: [f64; 3], orientation: [f64; 3], gripper: f64) -> Self {
        Self { position, orientation, gripper }
    }

    pub fn from_array(v: [f64; 7]) -> Self {
        Self {
            position: [v[0], v[1], v[2]],
            orientation: [v[3], v[4], v[5]],
            gripper: v[6],
        }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self, StateError> {
        let arr: [f64; 7] = v.try_into().map_err(|_| StateError::WrongLength(v.len()))?;
        Self::try_from(arr)
    }

    pub fn to_array(&self) -> [f64; 7] {
        let [x, y, z] = self.position;
        let [rx, ry, rz] = self.orientation;
        [x, y, z, rx, ry, rz, self.gripper]
    }

    pub fn validate(&self) -> Result<(), StateError> {
        if let Some(i) = self.to_array().iter().position(|c| !c.is_finite()) {
            return Err(StateError::NonFinite(i));
        }
        if self.gripper < 0.0 {
            return Err(StateError::NegativeGripper(self.gripper));
        }
        Ok(())
    }

    pub fn with_position(mut self, position: [f64; 3]) -> Self {
        self.position = position;
        self
    }

    pub fn position_distance(&self, other: &RobotState) -> f64 {
        distance3(&self.position, &other.position)
    }
}

impl From<RobotState> for [f64; 7] {
    fn from(s: RobotState) -> Self {
        s.to_array()
    }
}

impl TryFrom<[f64; 7]> for RobotState {
    type Error = StateError;

    fn try_from(v: [f64; 7]) -> Result<Self, Self::Error> {
        let s = RobotState::from_array(v);
        s.validate()?;
        Ok(s)
    }
}

pub fn distance3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    libm::sqrt(dx * dx + dy * dy + dz * dz)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("score vector is empty")]
    EmptyVector,
    #[error("score vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// A vector of per-candidate scores.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreVector(pub Vec<f64>);

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl From<Vec<f64>> for ScoreVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Vectors whose sum is already within this distance of 1 are returned as is,
/// which makes normalization idempotent bit for bit.
pub const NORMALIZED_TOLERANCE: f64 = 1e-12;

/// Clamps negative entries to zero and rescales to unit sum.
///
/// Degenerate inputs (all zero, any non-finite entry, or a non-finite sum)
/// produce the uniform vector so a control step never aborts.
pub fn normalize_scores(raw: &ScoreVector) -> Result<ScoreVector, ScoreError> {
    let n = raw.len();
    if n == 0 {
        return Err(ScoreError::EmptyVector);
    }
    if raw.0.iter().any(|v| !v.is_finite()) {
        return Ok(ScoreVector::uniform(n));
    }
    let clamped: Vec<f64> = raw.0.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    let sum: f64 = clamped.iter().sum();
    if !sum.is_finite() || sum <= 0.0 {
        return Ok(ScoreVector::uniform(n));
    }
    if libm::fabs(sum - 1.0) <= NORMALIZED_TOLERANCE {
        return Ok(ScoreVector(clamped));
    }
    Ok(ScoreVector(clamped.into_iter().map(|v| v / sum).collect()))
}

/// Index of the maximum score; ties go to the lowest index and NaN never wins.
pub fn select_best(scores: &ScoreVector) -> Result<usize, ScoreError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in scores.0.iter().enumerate() {
        match best {
            None => best = Some((i, v)),
            Some((_, b)) if v > b || (b.is_nan() && !v.is_nan()) => best = Some((i, v)),
            _ => {}
        }
    }
    best.map(|(i, _)| i).ok_or(ScoreError::EmptyVector)
}

/// A hidden-state entry: a flag or a number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HiddenValue {
    Bool(bool),
    Number(f64),
}

impl HiddenValue {
    pub fn type_name(&self) -> &'static str {
        match self {
            HiddenValue::Bool(_) => "bool",
            HiddenValue::Number(_) => "number",
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            HiddenValue::Bool(b) => Some(*b),
            HiddenValue::Number(_) => None,
        }
    }
}

impl fmt::Display for HiddenValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HiddenValue::Bool(b) => write!(f, "{b}"),
            HiddenValue::Number(x) => write!(f, "{x}"),
        }
    }
}

/// Task-progress memory carried between guidance evaluations.
pub type HiddenState = BTreeMap<String, HiddenValue>;

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c == '_' || c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c == '_' || c.is_ascii_alphanumeric())
}

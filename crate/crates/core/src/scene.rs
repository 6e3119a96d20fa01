//! Scene description shared by the simulator and the mock perception stack.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::types::RobotState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("object `{0}` has a non-positive size component")]
    BadSize(String),
    #[error("object `{0}` references unknown parent `{1}`")]
    UnknownParent(String, String),
    #[error("parent links through `{0}` form a cycle")]
    ParentCycle(String),
    #[error("object `{0}` lies outside the bounding box of its parent `{1}`")]
    OutsideParent(String, String),
    #[error("duplicate object id `{0}`")]
    DuplicateId(String),
    #[error("workspace is invalid: {0}")]
    Workspace(&'static str),
}

/// Axis-aligned workspace, control-step limits and the home pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceSpec {
    /// `[[x_lo, x_hi], [y_lo, y_hi], [z_lo, z_hi]]` in meters.
    pub bounds: [[f64; 2]; 3],
    #[serde(default)]
    pub table_height: f64,
    #[serde(default = "default_max_step")]
    pub max_step: f64,
    #[serde(default = "default_timeout")]
    pub timeout: u32,
    #[serde(default = "default_home")]
    pub home: RobotState,
}

fn default_max_step() -> f64 {
    0.1
}

fn default_timeout() -> u32 {
    20
}

fn default_home() -> RobotState {
    RobotState::new([0.0, 0.0, 0.3], [180.0, 0.0, 0.0], 0.04)
}

impl Default for WorkspaceSpec {
    fn default() -> Self {
        Self {
            bounds: [[-0.3, 0.3], [-0.3, 0.3], [0.0, 0.4]],
            table_height: 0.0,
            max_step: default_max_step(),
            timeout: default_timeout(),
            home: default_home(),
        }
    }
}

impl WorkspaceSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.bounds.iter().any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
            return Err(SceneError::Workspace("bounds must satisfy lo < hi"));
        }
        if !(self.max_step > 0.0) {
            return Err(SceneError::Workspace("max_step must be positive"));
        }
        if self.timeout < 1 {
            return Err(SceneError::Workspace("timeout must be at least 1"));
        }
        if !self.contains(&self.home.position) {
            return Err(SceneError::Workspace("home pose lies outside the bounds"));
        }
        Ok(())
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.bounds[i][0] && p[i] <= self.bounds[i][1])
    }

    pub fn clamp(&self, p: [f64; 3]) -> [f64; 3] {
        core::array::from_fn(|i| p[i].clamp(self.bounds[i][0], self.bounds[i][1]))
    }

    pub fn center(&self) -> [f64; 3] {
        core::array::from_fn(|i| 0.5 * (self.bounds[i][0] + self.bounds[i][1]))
    }

    /// The 8 corners followed by the center, each with the home orientation and gripper.
    pub fn probe_states(&self) -> Vec<RobotState> {
        let mut out = Vec::with_capacity(9);
        for mask in 0..8u8 {
            let p = core::array::from_fn(|i| self.bounds[i][((mask >> i) & 1) as usize]);
            out.push(self.home.with_position(p));
        }
        out.push(self.home.with_position(self.center()));
        out
    }
}

/// One object in the scene. `size` is `[height, width, depth]`: height along z,
/// width along x, depth along y. `pose` is the geometric center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
    pub pose: [f64; 3],
    pub size: [f64; 3],
    #[serde(default)]
    pub orientation: [f64; 3],
    #[serde(default)]
    pub color: Option<String>,
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(default)]
    pub distractor: bool,
    /// Symmetric jitter range per axis applied at reset (meters).
    #[serde(default)]
    pub jitter: [f64; 3],
}

impl SceneObject {
    pub fn min_dimension(&self) -> f64 {
        self.size.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn top_center(&self) -> [f64; 3] {
        [self.pose[0], self.pose[1], self.pose[2] + 0.5 * self.size[0]]
    }

    /// Half extents along x, y, z.
    pub fn half_extents(&self) -> [f64; 3] {
        [0.5 * self.size[1], 0.5 * self.size[2], 0.5 * self.size[0]]
    }

    pub fn contains_point(&self, p: &[f64; 3]) -> bool {
        let h = self.half_extents();
        (0..3).all(|i| (p[i] - self.pose[i]).abs() <= h[i] + 1e-12)
    }

    /// Whether `p` lies over this object's horizontal footprint (objects
    /// resting on top of a parent count as inside it).
    pub fn footprint_contains(&self, p: &[f64; 3]) -> bool {
        let h = self.half_extents();
        (0..2).all(|i| (p[i] - self.pose[i]).abs() <= h[i] + 1e-12)
            && p[2] >= self.pose[2] - h[2] - 1e-12
    }

    pub fn matches_name(&self, query: &str) -> bool {
        let q = normalize_name(query);
        normalize_name(&self.name) == q || self.synonyms.iter().any(|s| normalize_name(s) == q)
    }
}

/// Lowercase, underscores as spaces, whitespace collapsed.
pub fn normalize_name(s: &str) -> String {
    let replaced: String = s.chars().map(|c| if c == '_' { ' ' } else { c }).collect();
    let mut out = String::with_capacity(replaced.len());
    for word in replaced.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&word.to_lowercase());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub workspace: WorkspaceSpec,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn validate(&self) -> Result<(), SceneError> {
        self.workspace.validate()?;
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id.as_str()) {
                return Err(SceneError::DuplicateId(o.id.clone()));
            }
            if o.size.iter().any(|s| !(*s > 0.0)) {
                return Err(SceneError::BadSize(o.id.clone()));
            }
        }
        for o in &self.objects {
            if let Some(pid) = &o.parent {
                let parent = self
                    .object(pid)
                    .ok_or_else(|| SceneError::UnknownParent(o.id.clone(), pid.clone()))?;
                if !parent.footprint_contains(&o.pose) {
                    return Err(SceneError::OutsideParent(o.id.clone(), pid.clone()));
                }
            }
            let mut seen = BTreeSet::new();
            let mut cur = o;
            while let Some(pid) = &cur.parent {
                if !seen.insert(cur.id.as_str()) {
                    return Err(SceneError::ParentCycle(o.id.clone()));
                }
                match self.object(pid) {
                    Some(p) => cur = p,
                    None => break,
                }
            }
        }
        Ok(())
    }

    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_mut(&mut self, id: &str) -> Option<&mut SceneObject> {
        self.objects.iter_mut().find(|o| o.id == id)
    }

    /// First object whose name or synonym matches `name`.
    pub fn find_by_name(&self, name: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.matches_name(name))
    }

    pub fn is_descendant(&self, id: &str, ancestor: &str) -> bool {
        let mut cur = self.object(id);
        let mut hops = 0;
        while let Some(o) = cur {
            match &o.parent {
                Some(p) if p == ancestor => return true,
                Some(p) => cur = self.object(p),
                None => return false,
            }
            hops += 1;
            if hops > self.objects.len() {
                return false;
            }
        }
        false
    }

    /// Applies seeded per-object jitter; children inherit their ancestors' offsets.
    pub fn jittered(&self, seed: u64) -> Scene {
        let mut rng = rng::stream(seed, rng::Stream::SceneJitter);
        let own: Vec<[f64; 3]> = self
            .objects
            .iter()
            .map(|o| {
                core::array::from_fn(|i| {
                    let r = o.jitter[i];
                    if r > 0.0 {
                        rng.random_range(-r..=r)
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        let mut out = self.clone();
        for (k, o) in self.objects.iter().enumerate() {
            let mut offset = own[k];
            let mut cur = o.parent.as_deref();
            let mut hops = 0;
            while let Some(pid) = cur {
                let Some(j) = self.objects.iter().position(|x| x.id == pid) else { break };
                for i in 0..3 {
                    offset[i] += own[j][i];
                }
                cur = self.objects[j].parent.as_deref();
                hops += 1;
                if hops > self.objects.len() {
                    break;
                }
            }
            for i in 0..3 {
                out.objects[k].pose[i] += offset[i];
            }
        }
        out
    }
}

/// Immutable view of the scene at one control step (the observation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub step: u32,
    pub objects: Vec<SceneObject>,
    /// Names of buttons pressed so far, in press order.
    #[serde(default)]
    pub pressed: Vec<String>,
}

impl Observation {
    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn as_scene(&self, workspace: &WorkspaceSpec) -> Scene {
        Scene { workspace: workspace.clone(), objects: self.objects.clone() }
    }

    pub fn object_names(&self) -> Vec<String> {
        self.objects.iter().map(|o| o.name.to_string()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn obj(id: &str, pose: [f64; 3], size: [f64; 3], parent: Option<&str>) -> SceneObject {
        SceneObject {
            id: id.into(),
            name: id.into(),
            synonyms: vec![],
            pose,
            size,
            orientation: [0.0; 3],
            color: None,
            parent: parent.map(Into::into),
            distractor: false,
            jitter: [0.0; 3],
        }
    }

    #[test]
    fn names_normalize() {
        assert_eq!(normalize_name("  White   Knight "), "white knight");
        assert_eq!(normalize_name("maroon_button"), "maroon button");
    }

    #[test]
    fn validation_catches_bad_links() {
        let ws = WorkspaceSpec::default();
        let board = obj("board", [0.0, 0.0, 0.01], [0.02, 0.3, 0.3], None);
        let piece = obj("piece", [0.1, 0.1, 0.03], [0.02, 0.02, 0.02], Some("board"));
        let ok = Scene { workspace: ws.clone(), objects: vec![board.clone(), piece.clone()] };
        assert!(ok.validate().is_ok());
        assert!(ok.is_descendant("piece", "board"));
        assert!(!ok.is_descendant("board", "piece"));

        let far = obj("far", [0.2, 0.2, 0.03], [0.02, 0.02, 0.02], Some("board"));
        let bad = Scene { workspace: ws.clone(), objects: vec![board.clone(), far] };
        assert!(matches!(bad.validate(), Err(SceneError::OutsideParent(..))));

        let mut a = obj("a", [0.0; 3], [0.1; 3], Some("b"));
        let b = obj("b", [0.0; 3], [0.1; 3], Some("a"));
        a.pose = [0.0; 3];
        let cyc = Scene { workspace: ws.clone(), objects: vec![a, b] };
        assert!(matches!(cyc.validate(), Err(SceneError::ParentCycle(_))));

        let zero = Scene { workspace: ws, objects: vec![obj("z", [0.0; 3], [0.0, 0.1, 0.1], None)] };
        assert!(matches!(zero.validate(), Err(SceneError::BadSize(_))));
    }

    #[test]
    fn jitter_moves_children_with_parent() {
        let mut board = obj("board", [0.0, 0.0, 0.01], [0.02, 0.3, 0.3], None);
        board.jitter = [0.05, 0.05, 0.0];
        let piece = obj("piece", [0.1, 0.1, 0.03], [0.02, 0.02, 0.02], Some("board"));
        let scene = Scene { workspace: WorkspaceSpec::default(), objects: vec![board, piece] };
        let j = scene.jittered(3);
        let db = j.objects[0].pose[0] - scene.objects[0].pose[0];
        let dp = j.objects[1].pose[0] - scene.objects[1].pose[0];
        assert!(db.abs() <= 0.05);
        assert_eq!(db, dp);
        assert_eq!(j, scene.jittered(3));
    }

    #[test]
    fn probes_are_corners_and_center() {
        let ws = WorkspaceSpec::default();
        let probes = ws.probe_states();
        assert_eq!(probes.len(), 9);
        assert_eq!(probes[0].position, [-0.3, -0.3, 0.0]);
        assert_eq!(probes[7].position, [0.3, 0.3, 0.4]);
        assert_eq!(probes[8].position, [0.0, 0.0, 0.2]);
    }
}

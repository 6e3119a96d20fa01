//! Mock perception over the scene graph: detection with configurable failure,
//! multi-granular search through parent objects, and a track registry that
//! backs the geometry builtins of guidance scripts.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Stream};
use crate::scene::{normalize_name, Observation, SceneObject};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Objects whose smallest dimension (after crop boost) is below this are missed.
    pub min_apparent_size: f64,
    /// Apparent-size multiplier for objects searched inside a parent crop.
    pub crop_boost: f64,
    pub false_negative_rate: f64,
    pub false_positive_rate: f64,
    /// Per-step probability that a tracked object is lost.
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            min_apparent_size: 0.03,
            crop_boost: 2.0,
            false_negative_rate: 0.0,
            false_positive_rate: 0.0,
            dropout_rate: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroundingError {
    #[error("parent `{0}` is not currently tracked")]
    UnknownParent(String),
    #[error("object `{0}` is not tracked")]
    NotTracked(String),
    #[error("lost track of `{0}`")]
    PerceptionLost(String),
    #[error("invalid detector configuration: {0}")]
    Config(&'static str),
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), GroundingError> {
        let rate_ok = |r: f64| (0.0..=1.0).contains(&r);
        if !rate_ok(self.false_negative_rate)
            || !rate_ok(self.false_positive_rate)
            || !rate_ok(self.dropout_rate)
        {
            return Err(GroundingError::Config("rates must lie in [0, 1]"));
        }
        if !(self.crop_boost >= 1.0) {
            return Err(GroundingError::Config("crop_boost must be >= 1"));
        }
        if !(self.min_apparent_size >= 0.0) {
            return Err(GroundingError::Config("min_apparent_size must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    Position,
    Size,
    Orientation,
}

/// Geometry lookups available to guidance scripts.
pub trait Perception {
    fn geometry(&self, name: &str, which: GeometryKind) -> Result<[f64; 3], GroundingError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: String,
    /// Crop chain (parent names, outermost first) the object was found through.
    pub via: Vec<String>,
    pub lost: bool,
}

/// Name → scene id map of objects found by search, with seeded dropout.
#[derive(Debug, Clone)]
pub struct TrackRegistry {
    tracks: BTreeMap<String, Track>,
    dropout_rate: f64,
    rng: ChaCha8Rng,
}

impl TrackRegistry {
    pub fn new(dropout_rate: f64, seed: u64) -> Self {
        Self {
            tracks: BTreeMap::new(),
            dropout_rate,
            rng: rng::stream(seed, Stream::Dropout),
        }
    }

    pub fn register(&mut self, name: &str, id: &str, via: Vec<String>) {
        self.tracks.insert(
            normalize_name(name),
            Track { id: id.to_string(), via, lost: false },
        );
    }

    pub fn track(&self, name: &str) -> Option<&Track> {
        self.tracks.get(&normalize_name(name))
    }

    pub fn is_tracked(&self, name: &str) -> bool {
        self.track(name).is_some_and(|t| !t.lost)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tracks.keys().map(String::as_str)
    }

    pub fn lost_names(&self) -> Vec<String> {
        self.tracks.iter().filter(|(_, t)| t.lost).map(|(k, _)| k.clone()).collect()
    }

    /// Rolls the dropout coin once for every live track.
    pub fn advance_dropout(&mut self) {
        if self.dropout_rate <= 0.0 {
            return;
        }
        for track in self.tracks.values_mut() {
            if !track.lost && self.rng.random::<f64>() < self.dropout_rate {
                track.lost = true;
            }
        }
    }

    /// Re-detects lost tracks through their recorded crop chain; parents first.
    pub fn reacquire(&mut self, detector: &mut Detector, snapshot: &Observation) {
        let mut lost: Vec<(String, Vec<String>)> = self
            .tracks
            .iter()
            .filter(|(_, t)| t.lost)
            .map(|(k, t)| (k.clone(), t.via.clone()))
            .collect();
        lost.sort_by_key(|(_, via)| via.len());
        for (name, via) in lost {
            let parent = via.last().map(String::as_str);
            if let Ok(Some(id)) = detector.in_the_image(snapshot, self, &name, parent) {
                self.register(&name, &id, via);
            }
        }
    }

    pub fn geometry(
        &self,
        snapshot: &Observation,
        name: &str,
        which: GeometryKind,
    ) -> Result<[f64; 3], GroundingError> {
        query_object_geometry(self, snapshot, name, which)
    }
}

/// Ground-truth geometry of a tracked object in the given snapshot.
pub fn query_object_geometry(
    registry: &TrackRegistry,
    snapshot: &Observation,
    name: &str,
    which: GeometryKind,
) -> Result<[f64; 3], GroundingError> {
    let track = registry
        .track(name)
        .ok_or_else(|| GroundingError::NotTracked(name.to_string()))?;
    if track.lost {
        return Err(GroundingError::PerceptionLost(name.to_string()));
    }
    let obj = snapshot
        .object(&track.id)
        .ok_or_else(|| GroundingError::PerceptionLost(name.to_string()))?;
    Ok(match which {
        GeometryKind::Position => obj.pose,
        GeometryKind::Size => obj.size,
        GeometryKind::Orientation => obj.orientation,
    })
}

/// Perception binding for guidance evaluation on one snapshot.
#[derive(Debug, Clone, Copy)]
pub struct SceneBinding<'a> {
    pub registry: &'a TrackRegistry,
    pub snapshot: &'a Observation,
}

impl Perception for SceneBinding<'_> {
    fn geometry(&self, name: &str, which: GeometryKind) -> Result<[f64; 3], GroundingError> {
        query_object_geometry(self.registry, self.snapshot, name, which)
    }
}

/// Stand-in for an open-vocabulary detector: apparent size decides
/// detectability, with seeded false negatives and positives.
#[derive(Debug, Clone)]
pub struct Detector {
    pub config: DetectorConfig,
    rng: ChaCha8Rng,
}

impl Detector {
    pub fn new(config: DetectorConfig) -> Self {
        let rng = rng::stream(config.seed, Stream::Detector);
        Self { config, rng }
    }

    fn apparent_size(&self, obj: &SceneObject, in_crop: bool) -> f64 {
        let boost = if in_crop { self.config.crop_boost } else { 1.0 };
        obj.min_dimension() * boost
    }

    fn coin(&mut self, rate: f64) -> bool {
        rate > 0.0 && self.rng.random::<f64>() < rate
    }

    /// Whether `object_name` is visible, optionally inside the crop of a tracked
    /// parent. Returns the scene id of the detection.
    pub fn in_the_image(
        &mut self,
        snapshot: &Observation,
        registry: &TrackRegistry,
        object_name: &str,
        parent_name: Option<&str>,
    ) -> Result<Option<String>, GroundingError> {
        let crop = match parent_name {
            Some(p) => match registry.track(p) {
                Some(t) if !t.lost => Some(t.id.clone()),
                _ => return Err(GroundingError::UnknownParent(p.to_string())),
            },
            None => None,
        };
        let scene_objects = &snapshot.objects;
        let in_crop = |o: &SceneObject| match &crop {
            Some(pid) => is_descendant(scene_objects, &o.id, pid),
            None => true,
        };
        let matches: Vec<&SceneObject> = scene_objects
            .iter()
            .filter(|o| o.matches_name(object_name) && in_crop(o))
            .collect();

        for obj in matches.iter().filter(|o| !o.distractor) {
            if self.apparent_size(obj, crop.is_some()) >= self.config.min_apparent_size {
                if self.coin(self.config.false_negative_rate) {
                    continue;
                }
                return Ok(Some(obj.id.clone()));
            }
        }
        for obj in matches.iter().filter(|o| o.distractor) {
            if self.coin(self.config.false_positive_rate) {
                return Ok(Some(obj.id.clone()));
            }
        }
        Ok(None)
    }
}

fn is_descendant(objects: &[SceneObject], id: &str, ancestor: &str) -> bool {
    let mut cur = objects.iter().find(|o| o.id == id);
    for _ in 0..=objects.len() {
        match cur.and_then(|o| o.parent.as_deref()) {
            Some(p) if p == ancestor => return true,
            Some(p) => cur = objects.iter().find(|o| o.id == p),
            None => return false,
        }
    }
    false
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub object: String,
    pub parent: Option<String>,
    pub found: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SearchOutcome {
    Found { path: Vec<String> },
    NotFound,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub target: String,
    pub queries: Vec<QueryRecord>,
    pub outcome: SearchOutcome,
    /// Length of the found path (crop levels + 1), or 0 when not found.
    pub depth: usize,
}

impl SearchTrace {
    pub fn found(&self) -> bool {
        matches!(self.outcome, SearchOutcome::Found { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchLimits {
    pub depth_budget: usize,
    pub max_synonyms: usize,
    pub max_parents: usize,
}

impl Default for SearchLimits {
    fn default() -> Self {
        Self { depth_budget: 3, max_synonyms: 3, max_parents: 3 }
    }
}

/// Searches for `target` directly, then by synonym, then inside the crop of
/// each parent candidate (recursively, one depth unit per crop level).
/// The first hit registers the object and its crop chain.
pub fn multi_granular_search(
    detector: &mut Detector,
    snapshot: &Observation,
    registry: &mut TrackRegistry,
    target: &str,
    synonyms: &[String],
    parent_candidates: &[String],
    limits: SearchLimits,
) -> SearchTrace {
    let synonyms = &synonyms[..synonyms.len().min(limits.max_synonyms)];
    let parents = &parent_candidates[..parent_candidates.len().min(limits.max_parents)];
    let mut search = Search { detector, snapshot, registry, queries: Vec::new() };
    let mut chain = Vec::new();
    let found = search.level(target, synonyms, parents, &mut chain, limits.depth_budget.max(1));
    let (outcome, depth) = match found {
        Some(path) => {
            let depth = path.len();
            (SearchOutcome::Found { path }, depth)
        }
        None => (SearchOutcome::NotFound, 0),
    };
    SearchTrace { target: target.to_string(), queries: search.queries, outcome, depth }
}

struct Search<'a> {
    detector: &'a mut Detector,
    snapshot: &'a Observation,
    registry: &'a mut TrackRegistry,
    queries: Vec<QueryRecord>,
}

impl Search<'_> {
    fn query(&mut self, name: &str, crop: Option<&str>) -> Option<String> {
        let hit = self
            .detector
            .in_the_image(self.snapshot, self.registry, name, crop)
            .ok()
            .flatten();
        self.queries.push(QueryRecord {
            object: name.to_string(),
            parent: crop.map(str::to_string),
            found: hit.is_some(),
        });
        hit
    }

    fn level(
        &mut self,
        target: &str,
        synonyms: &[String],
        parents: &[String],
        chain: &mut Vec<String>,
        depth_left: usize,
    ) -> Option<Vec<String>> {
        let crop = chain.last().cloned();
        for name in core::iter::once(target).chain(synonyms.iter().map(String::as_str)) {
            if let Some(id) = self.query(name, crop.as_deref()) {
                self.registry.register(target, &id, chain.clone());
                if normalize_name(name) != normalize_name(target) {
                    self.registry.register(name, &id, chain.clone());
                }
                let mut path = chain.clone();
                path.push(name.to_string());
                return Some(path);
            }
        }
        if depth_left <= 1 {
            return None;
        }
        for parent in parents {
            if chain.iter().any(|c| normalize_name(c) == normalize_name(parent)) {
                continue;
            }
            if let Some(id) = self.query(parent, crop.as_deref()) {
                self.registry.register(parent, &id, chain.clone());
                chain.push(parent.clone());
                if let Some(path) = self.level(target, synonyms, parents, chain, depth_left - 1) {
                    return Some(path);
                }
                chain.pop();
            }
        }
        None
    }
}

/// Synonym and parent suggestions used when no live agent supplies them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Thesaurus(pub BTreeMap<String, ThesaurusEntry>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThesaurusEntry {
    Synonyms(Vec<String>),
    Full {
        #[serde(default)]
        synonyms: Vec<String>,
        #[serde(default)]
        parents: Vec<String>,
    },
}

impl Thesaurus {
    fn entry(&self, name: &str) -> Option<&ThesaurusEntry> {
        let key = normalize_name(name);
        self.0.iter().find(|(k, _)| normalize_name(k) == key).map(|(_, v)| v)
    }

    pub fn synonyms(&self, name: &str) -> Vec<String> {
        match self.entry(name) {
            Some(ThesaurusEntry::Synonyms(s)) | Some(ThesaurusEntry::Full { synonyms: s, .. }) => {
                s.clone()
            }
            None => Vec::new(),
        }
    }

    pub fn parents(&self, name: &str) -> Vec<String> {
        match self.entry(name) {
            Some(ThesaurusEntry::Full { parents, .. }) => parents.clone(),
            _ => Vec::new(),
        }
    }
}

/// Registers every name via multi-granular search with thesaurus suggestions.
pub fn ground_objects<'a>(
    detector: &mut Detector,
    snapshot: &Observation,
    registry: &mut TrackRegistry,
    names: impl IntoIterator<Item = &'a str>,
    thesaurus: &Thesaurus,
    limits: SearchLimits,
) -> Vec<SearchTrace> {
    let pending: Vec<&str> = names.into_iter().filter(|n| !registry.is_tracked(n)).collect();
    pending
        .into_iter()
        .map(|name| {
            multi_granular_search(
                detector,
                snapshot,
                registry,
                name,
                &thesaurus.synonyms(name),
                &thesaurus.parents(name),
                limits,
            )
        })
        .collect()
}

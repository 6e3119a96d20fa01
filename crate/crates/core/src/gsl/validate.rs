use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use super::ast::{walk_block, ExprKind};
use super::interp::{evaluate, EvalError, RuntimeErrorKind};
use super::{parse, EvalBudget, GslError, GslProgram, Span, ENTRY};
use crate::grounding::{GeometryKind, GroundingError, Perception};
use crate::scene::{normalize_name, WorkspaceSpec};
use crate::types::{HiddenState, RobotState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IssueCode {
    MissingHeader,
    SyntaxError,
    MissingEntry,
    WrongArity,
    InvalidDefaultHidden,
    Recursion,
    WrongReturnShape,
    NonFiniteScore,
    RuntimeFailure,
    BudgetExceeded,
    UnstableHiddenState,
    UnknownObject,
    UnsupportedBuiltin,
}

impl fmt::Display for IssueCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub code: IssueCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
    /// Index of the probe state that triggered the issue.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<usize>,
}

/// First-step result of running the entry on one probe state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DryRun {
    pub probe: usize,
    pub state: RobotState,
    pub score: Option<f64>,
    pub hidden: Option<HiddenState>,
    pub error: Option<String>,
}

/// `ok` holds exactly when `issues` is empty; warnings never affect it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<Issue>,
    pub warnings: Vec<Issue>,
    pub dry_runs: Vec<DryRun>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOptions {
    pub probes: Vec<RobotState>,
    /// Object names the grounding stage knows about. `None` skips the check.
    pub known_objects: Option<Vec<String>>,
    pub budget: EvalBudget,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self::for_workspace(&WorkspaceSpec::default())
    }
}

impl ValidationOptions {
    pub fn for_workspace(ws: &WorkspaceSpec) -> Self {
        Self { probes: ws.probe_states(), known_objects: None, budget: EvalBudget::default() }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ok: {}", self.ok)?;
        for (title, list) in [("issues", &self.issues), ("warnings", &self.warnings)] {
            writeln!(f, "{title}: {}", list.len())?;
            for i in list.iter() {
                write!(f, "  - {}", i.code)?;
                if let Some(s) = i.span {
                    write!(f, " at {s}")?;
                }
                if let Some(p) = i.probe {
                    write!(f, " (probe {p})")?;
                }
                writeln!(f, ": {}", i.message)?;
            }
        }
        writeln!(f, "dry_runs: {}", self.dry_runs.len())?;
        for d in &self.dry_runs {
            let p = d.state.position;
            write!(f, "  - probe {} [{:.3}, {:.3}, {:.3}]: ", d.probe, p[0], p[1], p[2])?;
            match (&d.score, &d.error) {
                (Some(s), _) => writeln!(f, "score {s}")?,
                (None, Some(e)) => writeln!(f, "error {e}")?,
                _ => writeln!(f, "no result")?,
            }
        }
        Ok(())
    }
}

/// Perception used for dry runs: delegates to `inner` when it resolves the
/// object and otherwise answers with fixed stub geometry.
struct ProbePerception<'a> {
    inner: Option<&'a dyn Perception>,
}

impl Perception for ProbePerception<'_> {
    fn geometry(&self, name: &str, which: GeometryKind) -> Result<[f64; 3], GroundingError> {
        if let Some(p) = self.inner {
            if let Ok(g) = p.geometry(name, which) {
                return Ok(g);
            }
        }
        Ok(match which {
            GeometryKind::Position => [0.05, 0.05, 0.02],
            GeometryKind::Size => [0.04, 0.04, 0.04],
            GeometryKind::Orientation => [0.0, 0.0, 0.0],
        })
    }
}

struct Collector {
    issues: Vec<Issue>,
    seen: BTreeSet<(IssueCode, String)>,
}

impl Collector {
    fn push(&mut self, code: IssueCode, message: String, span: Option<Span>, probe: Option<usize>) {
        if self.seen.insert((code, message.clone())) {
            self.issues.push(Issue { code, message, span, probe });
        }
    }

    fn eval_error(&mut self, e: &EvalError, probe: usize) {
        let (code, span) = match e {
            EvalError::MissingEntry => return,
            EvalError::WrongReturnShape(_) => (IssueCode::WrongReturnShape, None),
            EvalError::Runtime { kind: RuntimeErrorKind::NonFinite, span, .. } => (IssueCode::NonFiniteScore, Some(*span)),
            EvalError::Runtime { kind: RuntimeErrorKind::HiddenShape, span, .. } => (IssueCode::WrongReturnShape, Some(*span)),
            EvalError::Runtime { span, .. } => (IssueCode::RuntimeFailure, Some(*span)),
            EvalError::BudgetExceeded(_) => (IssueCode::BudgetExceeded, None),
            EvalError::Perception(_) => (IssueCode::RuntimeFailure, None),
        };
        let message = match e {
            EvalError::Runtime { message, .. } => message.clone(),
            other => other.to_string(),
        };
        self.push(code, message, span, Some(probe));
    }
}

/// Parses and validates `source`; parse failures become issues.
pub fn validate_source(
    source: &str,
    opts: &ValidationOptions,
    perception: Option<&dyn Perception>,
) -> (Option<GslProgram>, ValidationReport) {
    match parse(source) {
        Ok(prog) => {
            let report = validate_format(&prog, opts, perception);
            (Some(prog), report)
        }
        Err(e) => {
            let issue = match e {
                GslError::MissingHeader => {
                    Issue { code: IssueCode::MissingHeader, message: e.to_string(), span: None, probe: None }
                }
                GslError::SyntaxError { span, message } => {
                    Issue { code: IssueCode::SyntaxError, message, span: Some(span), probe: None }
                }
            };
            (None, ValidationReport { ok: false, issues: alloc::vec![issue], warnings: Vec::new(), dry_runs: Vec::new() })
        }
    }
}

/// Static checks plus a two-step chained dry run on every probe state.
/// Never fails; problems are reported as issues.
pub fn validate_format(
    prog: &GslProgram,
    opts: &ValidationOptions,
    perception: Option<&dyn Perception>,
) -> ValidationReport {
    let mut c = Collector { issues: Vec::new(), seen: BTreeSet::new() };
    let mut warnings = Vec::new();
    let mut dry_runs = Vec::new();

    let entry = prog.entry();
    match entry {
        None => c.push(IssueCode::MissingEntry, format!("no function named `{ENTRY}`"), None, None),
        Some(f) if f.params.len() != 2 => c.push(
            IssueCode::WrongArity,
            format!("`{ENTRY}` must take (state, prev), found {} parameter(s)", f.params.len()),
            Some(f.span),
            None,
        ),
        Some(_) => {}
    }
    let defaults = prog.default_hidden();
    if entry.is_some() && defaults.is_none() {
        c.push(
            IssueCode::InvalidDefaultHidden,
            "default hidden state must be a map of identifier keys to boolean or number literals".into(),
            entry.map(|f| f.span),
            None,
        );
    }
    if opts.probes.is_empty() {
        c.push(IssueCode::RuntimeFailure, "no probe states supplied".into(), None, None);
    }
    if let Some((name, span)) = find_recursion(prog) {
        c.push(IssueCode::Recursion, format!("function `{name}` can call itself"), Some(span), None);
    }

    let mut warned = BTreeSet::new();
    for (kind, obj, span) in prog.perception_calls() {
        if kind == GeometryKind::Orientation && obj == "robot_end_effector" && warned.insert(("ee", obj.clone())) {
            warnings.push(Issue {
                code: IssueCode::UnsupportedBuiltin,
                message: "end-effector orientation is available as state[3:6]; get_orientation(\"robot_end_effector\") is not bound".into(),
                span: Some(span),
                probe: None,
            });
            continue;
        }
        if let Some(known) = &opts.known_objects {
            if !known.iter().any(|k| normalize_name(k) == normalize_name(&obj)) && warned.insert(("unknown", obj.clone())) {
                warnings.push(Issue {
                    code: IssueCode::UnknownObject,
                    message: format!("object \"{obj}\" is not among the grounded objects"),
                    span: Some(span),
                    probe: None,
                });
            }
        }
    }

    let runnable = entry.is_some_and(|f| f.params.len() == 2) && c.issues.iter().all(|i| i.code != IssueCode::Recursion);
    if let (true, Some(defaults)) = (runnable, defaults) {
        let perception = ProbePerception { inner: perception };
        for (i, probe) in opts.probes.iter().enumerate() {
            let first = evaluate(prog, probe, &defaults, &perception, &opts.budget);
            dry_runs.push(match &first {
                Ok(ev) => DryRun {
                    probe: i,
                    state: *probe,
                    score: Some(ev.score),
                    hidden: Some(ev.next_hidden.clone()),
                    error: None,
                },
                Err(e) => DryRun { probe: i, state: *probe, score: None, hidden: None, error: Some(e.to_string()) },
            });
            let h1 = match first {
                Ok(ev) => ev.next_hidden,
                Err(e) => {
                    c.eval_error(&e, i);
                    continue;
                }
            };
            check_stable(&mut c, &defaults, &h1, i);
            match evaluate(prog, probe, &h1, &perception, &opts.budget) {
                Ok(ev) => check_stable(&mut c, &h1, &ev.next_hidden, i),
                Err(e) => c.eval_error(&e, i),
            }
        }
    }

    let issues = c.issues;
    ValidationReport { ok: issues.is_empty(), issues, warnings, dry_runs }
}

fn check_stable(c: &mut Collector, before: &HiddenState, after: &HiddenState, probe: usize) {
    for (k, v) in before {
        match after.get(k) {
            None => c.push(IssueCode::UnstableHiddenState, format!("hidden key `{k}` is dropped"), None, Some(probe)),
            Some(w) if w.type_name() != v.type_name() => c.push(
                IssueCode::UnstableHiddenState,
                format!("hidden key `{k}` changes type from {} to {}", v.type_name(), w.type_name()),
                None,
                Some(probe),
            ),
            _ => {}
        }
    }
}

/// A function that can reach itself through user calls, if any.
fn find_recursion(prog: &GslProgram) -> Option<(String, Span)> {
    let mut graph: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for f in &prog.functions {
        let mut callees = BTreeSet::new();
        let mut visit = |e: &super::ast::Expr| {
            if let ExprKind::Call(name, _) = &e.kind {
                if let Some(g) = prog.function(name) {
                    callees.insert(g.name.as_str());
                }
            }
        };
        for p in &f.params {
            if let Some(d) = &p.default {
                d.walk(&mut visit);
            }
        }
        walk_block(&f.body, &mut visit);
        graph.insert(f.name.as_str(), callees);
    }
    for f in &prog.functions {
        let mut stack: Vec<&str> = graph[f.name.as_str()].iter().copied().collect();
        let mut seen = BTreeSet::new();
        while let Some(g) = stack.pop() {
            if g == f.name {
                return Some((f.name.clone(), f.span));
            }
            if seen.insert(g) {
                stack.extend(graph[g].iter().copied());
            }
        }
    }
    None
}

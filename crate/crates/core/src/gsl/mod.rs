//! The guidance script language: a small sandboxed language for scoring
//! forecast robot states.
//!
//! A guidance file starts with the header line `#gsl 1` and defines an entry
//! function `guidance(state, prev)` returning `(score, next_hidden)`. The only
//! side effects available to a script are the three perception builtins.

pub mod ast;
mod interp;
pub mod lexer;
mod parser;
mod validate;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grounding::GeometryKind;
use crate::types::HiddenState;

pub use interp::{evaluate, EffectRecord, EvalError, Evaluation, RuntimeErrorKind, Value};
pub use validate::{
    validate_format, validate_source, DryRun, Issue, IssueCode, ValidationOptions, ValidationReport,
};

pub const HEADER: &str = "#gsl 1";
pub const ENTRY: &str = "guidance";
/// Maximum nesting of user function calls, the entry call included.
pub const MAX_CALL_DEPTH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GslError {
    #[error("first line must be `#gsl 1`")]
    MissingHeader,
    #[error("syntax error at {span}: {message}")]
    SyntaxError { span: Span, message: String },
}

impl GslError {
    pub(crate) fn syntax(span: Span, message: String) -> Self {
        GslError::SyntaxError { span, message }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalBudget {
    pub max_ops: u64,
    pub max_loop_iters: u64,
}

impl Default for EvalBudget {
    fn default() -> Self {
        Self { max_ops: 100_000, max_loop_iters: 10_000 }
    }
}

/// A parsed guidance script. Immutable after parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct GslProgram {
    pub source: String,
    pub version: u32,
    pub globals: Vec<ast::Stmt>,
    pub functions: Vec<ast::Function>,
}

impl GslProgram {
    pub fn function(&self, name: &str) -> Option<&ast::Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn entry(&self) -> Option<&ast::Function> {
        self.function(ENTRY)
    }

    /// The default hidden state declared on the entry's second parameter.
    /// Empty when no default is declared; `None` when the default is not a
    /// literal map of identifier keys to boolean or number literals.
    pub fn default_hidden(&self) -> Option<HiddenState> {
        let entry = self.entry()?;
        let Some(default) = entry.params.get(1).and_then(|p| p.default.as_ref()) else {
            return Some(HiddenState::new());
        };
        interp::literal_hidden(default)
    }

    /// Parameters of user functions that reach a perception builtin's object
    /// argument unchanged, directly or through other user functions.
    fn forwarded_params(&self) -> BTreeMap<(String, usize), GeometryKind> {
        let mut fwd: BTreeMap<(String, usize), GeometryKind> = BTreeMap::new();
        loop {
            let before = fwd.len();
            for f in &self.functions {
                let mut found = Vec::new();
                ast::walk_block(&f.body, &mut |e: &ast::Expr| {
                    let ast::ExprKind::Call(callee, args) = &e.kind else { return };
                    for (j, a) in args.iter().enumerate() {
                        let ast::ExprKind::Var(v) = &a.kind else { continue };
                        let Some(i) = f.params.iter().position(|p| &p.name == v) else { continue };
                        let kind = match interp::perception_builtin(callee) {
                            Some(k) if j == 0 => Some(k),
                            Some(_) => None,
                            None => fwd.get(&(callee.clone(), j)).copied(),
                        };
                        if let Some(k) = kind {
                            found.push(((f.name.clone(), i), k));
                        }
                    }
                });
                for (key, k) in found {
                    fwd.entry(key).or_insert(k);
                }
            }
            if fwd.len() == before {
                return fwd;
            }
        }
    }

    /// Every perception builtin call with a literal object name, in source
    /// order. A literal handed to a user function that passes it straight
    /// on to a builtin counts as a call at that site.
    pub fn perception_calls(&self) -> Vec<(GeometryKind, String, Span)> {
        let fwd = self.forwarded_params();
        let mut out = Vec::new();
        let mut visit = |e: &ast::Expr| {
            if let ast::ExprKind::Call(name, args) = &e.kind {
                if let Some(kind) = interp::perception_builtin(name) {
                    if let Some(ast::ExprKind::Str(obj)) = args.first().map(|a| &a.kind) {
                        out.push((kind, obj.clone(), e.span));
                    }
                    return;
                }
                for (i, a) in args.iter().enumerate() {
                    if let (ast::ExprKind::Str(obj), Some(kind)) = (&a.kind, fwd.get(&(name.clone(), i))) {
                        out.push((*kind, obj.clone(), e.span));
                    }
                }
            }
        };
        ast::walk_block(&self.globals, &mut visit);
        for f in &self.functions {
            for p in &f.params {
                if let Some(d) = &p.default {
                    d.walk(&mut visit);
                }
            }
            ast::walk_block(&f.body, &mut visit);
        }
        out
    }

    /// Distinct object names passed to perception builtins, in first-use order.
    pub fn referenced_objects(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.perception_calls()
            .into_iter()
            .filter_map(|(_, name, _)| seen.insert(name.clone()).then_some(name))
            .collect()
    }
}

pub fn parse(source: &str) -> Result<GslProgram, GslError> {
    let first = source.lines().next().unwrap_or("").trim_start_matches('\u{feff}').trim_end();
    if first != HEADER {
        return Err(GslError::MissingHeader);
    }
    let tokens = lexer::tokenize(source)?;
    let (globals, functions) = parser::Parser::new(tokens).program()?;
    Ok(GslProgram { source: source.into(), version: 1, globals, functions })
}

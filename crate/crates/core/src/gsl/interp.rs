use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ast::*;
use super::{EvalBudget, GslProgram, Span, MAX_CALL_DEPTH};
use crate::grounding::{GeometryKind, GroundingError, Perception};
use crate::types::{is_identifier, HiddenState, HiddenValue, RobotState};

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Bool(bool),
    Str(String),
    Vector(Vec<f64>),
    Map(BTreeMap<String, Value>),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Num(_) => "number",
            Value::Bool(_) => "bool",
            Value::Str(_) => "string",
            Value::Vector(_) => "vector",
            Value::Map(_) => "map",
        }
    }
}

impl From<&HiddenValue> for Value {
    fn from(v: &HiddenValue) -> Self {
        match v {
            HiddenValue::Bool(b) => Value::Bool(*b),
            HiddenValue::Number(n) => Value::Num(*n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuntimeErrorKind {
    NonFinite,
    Type,
    Index,
    UnknownName,
    Arity,
    CallDepth,
    HiddenShape,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("evaluation budget exceeded ({0})")]
    BudgetExceeded(&'static str),
    #[error("runtime error at {span}: {message}")]
    Runtime { kind: RuntimeErrorKind, span: Span, message: String },
    #[error(transparent)]
    Perception(GroundingError),
    #[error("program has no `guidance` entry with two parameters")]
    MissingEntry,
    #[error("entry must return (number, map): {0}")]
    WrongReturnShape(String),
}

impl EvalError {
    pub fn is_perception(&self) -> bool {
        matches!(self, EvalError::Perception(_))
    }
}

/// One perception builtin call made during an evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectRecord {
    pub kind: GeometryKind,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub score: f64,
    pub next_hidden: HiddenState,
    /// Perception calls in execution order; the only effects a script can have.
    pub effects: Vec<EffectRecord>,
}

const MATH_BUILTINS: &[&str] = &[
    "abs", "min", "max", "clamp", "sqrt", "norm", "dist", "dot", "cos", "sin", "radians", "degrees",
];

pub(crate) fn perception_builtin(name: &str) -> Option<GeometryKind> {
    match name {
        "get_position" => Some(GeometryKind::Position),
        "get_size" => Some(GeometryKind::Size),
        "get_orientation" => Some(GeometryKind::Orientation),
        _ => None,
    }
}

pub(crate) fn is_builtin(name: &str) -> bool {
    perception_builtin(name).is_some() || MATH_BUILTINS.contains(&name)
}

/// Folds a literal map of identifier keys to bool/number literals.
pub(crate) fn literal_hidden(e: &Expr) -> Option<HiddenState> {
    let ExprKind::Map(entries) = &e.kind else { return None };
    let mut out = HiddenState::new();
    for (k, v) in entries {
        if !is_identifier(k) {
            return None;
        }
        let hv = match v.kind {
            ExprKind::Bool(b) => HiddenValue::Bool(b),
            ExprKind::Num(n) if n.is_finite() => HiddenValue::Number(n),
            _ => return None,
        };
        out.insert(k.clone(), hv);
    }
    Some(out)
}

/// Runs the entry function on `state` with hidden state `hidden`.
///
/// `hidden` is only read; the returned `next_hidden` is a fresh map. On error
/// no partial effects are reported.
pub fn evaluate(
    prog: &GslProgram,
    state: &RobotState,
    hidden: &HiddenState,
    perception: &dyn Perception,
    budget: &EvalBudget,
) -> Result<Evaluation, EvalError> {
    let entry = prog.entry().filter(|f| f.params.len() == 2).ok_or(EvalError::MissingEntry)?;
    let mut m = Machine {
        prog,
        perception,
        budget: *budget,
        ops: 0,
        loop_iters: 0,
        depth: 0,
        effects: Vec::new(),
        globals: Vec::new(),
    };
    let mut frame = Vec::new();
    for stmt in &prog.globals {
        if let Flow::Return(..) = m.exec(stmt, &mut frame)? {
            return Err(EvalError::WrongReturnShape("`return` at top level".into()));
        }
    }
    m.globals = frame;
    let hidden_map: BTreeMap<String, Value> = hidden.iter().map(|(k, v)| (k.clone(), v.into())).collect();
    let args = alloc::vec![Value::Vector(state.to_array().to_vec()), Value::Map(hidden_map)];
    let (values, span) = m.call_user(entry, args, entry.span)?;
    if values.len() != 2 {
        return Err(EvalError::WrongReturnShape(format!(
            "returned {} value(s) at {}",
            values.len(),
            span
        )));
    }
    let mut it = values.into_iter();
    let score = match it.next() {
        Some(Value::Num(s)) => s,
        Some(other) => {
            return Err(EvalError::WrongReturnShape(format!("score is a {} at {}", other.type_name(), span)))
        }
        None => unreachable!(),
    };
    let next_hidden = match it.next() {
        Some(Value::Map(map)) => {
            let mut out = HiddenState::new();
            for (k, v) in map {
                let hv = match v {
                    Value::Bool(b) => HiddenValue::Bool(b),
                    Value::Num(n) => HiddenValue::Number(n),
                    other => {
                        return Err(EvalError::Runtime {
                            kind: RuntimeErrorKind::HiddenShape,
                            span,
                            message: format!("hidden value `{k}` is a {}", other.type_name()),
                        })
                    }
                };
                if !is_identifier(&k) {
                    return Err(EvalError::Runtime {
                        kind: RuntimeErrorKind::HiddenShape,
                        span,
                        message: format!("hidden key \"{k}\" is not an identifier"),
                    });
                }
                out.insert(k, hv);
            }
            out
        }
        Some(other) => {
            return Err(EvalError::WrongReturnShape(format!(
                "hidden state is a {} at {}",
                other.type_name(),
                span
            )))
        }
        None => unreachable!(),
    };
    Ok(Evaluation { score, next_hidden, effects: m.effects })
}

enum Flow {
    Normal,
    Return(Vec<Value>, Span),
}

type Frame = Vec<(String, Value)>;

struct Machine<'a> {
    prog: &'a GslProgram,
    perception: &'a dyn Perception,
    budget: EvalBudget,
    ops: u64,
    loop_iters: u64,
    depth: usize,
    effects: Vec<EffectRecord>,
    globals: Frame,
}

fn rt(kind: RuntimeErrorKind, span: Span, message: String) -> EvalError {
    EvalError::Runtime { kind, span, message }
}

fn finite(x: f64, span: Span) -> Result<f64, EvalError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(rt(RuntimeErrorKind::NonFinite, span, "non-finite number".into()))
    }
}

fn finite_vec(v: Vec<f64>, span: Span) -> Result<Value, EvalError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(Value::Vector(v))
    } else {
        Err(rt(RuntimeErrorKind::NonFinite, span, "non-finite number".into()))
    }
}

fn num(v: &Value, span: Span, what: &str) -> Result<f64, EvalError> {
    match v {
        Value::Num(n) => Ok(*n),
        Value::Bool(b) => Ok(if *b { 1.0 } else { 0.0 }),
        other => Err(rt(RuntimeErrorKind::Type, span, format!("{what} expects a number, got {}", other.type_name()))),
    }
}

fn vector<'v>(v: &'v Value, span: Span, what: &str) -> Result<&'v [f64], EvalError> {
    match v {
        Value::Vector(xs) => Ok(xs),
        other => Err(rt(RuntimeErrorKind::Type, span, format!("{what} expects a vector, got {}", other.type_name()))),
    }
}

fn truthy(v: &Value, span: Span) -> Result<bool, EvalError> {
    match v {
        Value::Bool(b) => Ok(*b),
        Value::Num(n) => Ok(*n != 0.0),
        other => Err(rt(RuntimeErrorKind::Type, span, format!("a {} is not a condition", other.type_name()))),
    }
}

fn integer(v: &Value, span: Span) -> Result<i64, EvalError> {
    let n = num(v, span, "index")?;
    if libm::trunc(n) != n || n.abs() > 1e15 {
        return Err(rt(RuntimeErrorKind::Index, span, format!("index {n} is not an integer")));
    }
    Ok(n as i64)
}

fn resolve_index(i: i64, len: usize, span: Span) -> Result<usize, EvalError> {
    let j = if i < 0 { i + len as i64 } else { i };
    if j < 0 || j >= len as i64 {
        return Err(rt(RuntimeErrorKind::Index, span, format!("index {i} out of range for length {len}")));
    }
    Ok(j as usize)
}

fn values_equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Num(_) | Value::Bool(_), Value::Num(_) | Value::Bool(_)) => {
            let f = |v: &Value| match v {
                Value::Num(n) => *n,
                Value::Bool(b) => *b as u8 as f64,
                _ => unreachable!(),
            };
            f(a) == f(b)
        }
        _ => a == b,
    }
}

fn arith(op: BinOp, a: f64, b: f64) -> f64 {
    match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => a / b,
        _ => unreachable!(),
    }
}

impl Machine<'_> {
    fn tick(&mut self) -> Result<(), EvalError> {
        self.ops += 1;
        if self.ops > self.budget.max_ops {
            return Err(EvalError::BudgetExceeded("max_ops"));
        }
        Ok(())
    }

    fn lookup(&self, frame: &Frame, name: &str, span: Span) -> Result<Value, EvalError> {
        frame
            .iter()
            .rev()
            .chain(self.globals.iter().rev())
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| rt(RuntimeErrorKind::UnknownName, span, format!("unknown variable `{name}`")))
    }

    fn call_user(&mut self, f: &Function, mut args: Vec<Value>, span: Span) -> Result<(Vec<Value>, Span), EvalError> {
        if args.len() > f.params.len() {
            return Err(rt(
                RuntimeErrorKind::Arity,
                span,
                format!("`{}` takes {} argument(s), got {}", f.name, f.params.len(), args.len()),
            ));
        }
        self.depth += 1;
        if self.depth > MAX_CALL_DEPTH {
            return Err(rt(RuntimeErrorKind::CallDepth, span, format!("call depth exceeds {MAX_CALL_DEPTH}")));
        }
        let mut frame: Frame = Vec::with_capacity(f.params.len() + 8);
        for p in &f.params[args.len()..] {
            let Some(d) = &p.default else {
                return Err(rt(RuntimeErrorKind::Arity, span, format!("missing argument `{}` for `{}`", p.name, f.name)));
            };
            let v = self.eval(d, &mut Vec::new())?;
            args.push(v);
        }
        for (p, v) in f.params.iter().zip(args) {
            frame.push((p.name.clone(), v));
        }
        let result = match self.exec_block(&f.body, &mut frame)? {
            Flow::Return(values, rspan) => (values, rspan),
            Flow::Normal => (Vec::new(), f.span),
        };
        self.depth -= 1;
        Ok(result)
    }

    fn exec_block(&mut self, block: &[Stmt], frame: &mut Frame) -> Result<Flow, EvalError> {
        for stmt in block {
            if let Flow::Return(v, s) = self.exec(stmt, frame)? {
                return Ok(Flow::Return(v, s));
            }
        }
        Ok(Flow::Normal)
    }

    fn set(frame: &mut Frame, name: &str, value: Value) {
        match frame.iter_mut().rev().find(|(k, _)| k == name) {
            Some(slot) => slot.1 = value,
            None => frame.push((name.to_string(), value)),
        }
    }

    fn exec(&mut self, stmt: &Stmt, frame: &mut Frame) -> Result<Flow, EvalError> {
        self.tick()?;
        match stmt {
            Stmt::Let { name, value, .. } => {
                let v = self.eval(value, frame)?;
                Self::set(frame, name, v);
            }
            Stmt::Assign { name, indices, value, span } => {
                let v = self.eval(value, frame)?;
                if indices.is_empty() {
                    Self::set(frame, name, v);
                } else {
                    let idx: Vec<Value> = indices.iter().map(|e| self.eval(e, frame)).collect::<Result<_, _>>()?;
                    let mut target = self.lookup(frame, name, *span)?;
                    set_path(&mut target, &idx, v, *span)?;
                    Self::set(frame, name, target);
                }
            }
            Stmt::If { cond, then, otherwise, .. } => {
                let c = self.eval(cond, frame)?;
                if truthy(&c, cond.span)? {
                    return self.exec_block(then, frame);
                } else if let Some(b) = otherwise {
                    return self.exec_block(b, frame);
                }
            }
            Stmt::For { var, iter, body, .. } => {
                let items: Vec<Value> = match iter {
                    ForIter::Range(a, b) => {
                        let lo = integer(&self.eval(a, frame)?, a.span)?;
                        let hi = integer(&self.eval(b, frame)?, b.span)?;
                        let count = (hi - lo).max(0) as u64;
                        if self.loop_iters + count > self.budget.max_loop_iters {
                            return Err(EvalError::BudgetExceeded("max_loop_iters"));
                        }
                        (lo..hi).map(|i| Value::Num(i as f64)).collect()
                    }
                    ForIter::Each(e) => {
                        let v = self.eval(e, frame)?;
                        vector(&v, e.span, "`for ... in`")?.iter().map(|x| Value::Num(*x)).collect()
                    }
                };
                for item in items {
                    self.loop_iters += 1;
                    if self.loop_iters > self.budget.max_loop_iters {
                        return Err(EvalError::BudgetExceeded("max_loop_iters"));
                    }
                    Self::set(frame, var, item);
                    if let Flow::Return(v, s) = self.exec_block(body, frame)? {
                        return Ok(Flow::Return(v, s));
                    }
                }
            }
            Stmt::Return { values, span } => {
                let vs = values.iter().map(|e| self.eval(e, frame)).collect::<Result<Vec<_>, _>>()?;
                return Ok(Flow::Return(vs, *span));
            }
            Stmt::Expr(e) => {
                self.eval(e, frame)?;
            }
        }
        Ok(Flow::Normal)
    }

    fn eval(&mut self, e: &Expr, frame: &mut Frame) -> Result<Value, EvalError> {
        self.tick()?;
        let span = e.span;
        Ok(match &e.kind {
            ExprKind::Num(n) => Value::Num(finite(*n, span)?),
            ExprKind::Bool(b) => Value::Bool(*b),
            ExprKind::Str(s) => Value::Str(s.clone()),
            ExprKind::Var(name) => self.lookup(frame, name, span)?,
            ExprKind::Vector(items) => {
                let mut out = Vec::with_capacity(items.len());
                for it in items {
                    let v = self.eval(it, frame)?;
                    out.push(num(&v, it.span, "a vector element")?);
                }
                Value::Vector(out)
            }
            ExprKind::Map(entries) => {
                let mut out = BTreeMap::new();
                for (k, v) in entries {
                    out.insert(k.clone(), self.eval(v, frame)?);
                }
                Value::Map(out)
            }
            ExprKind::Tuple(_) => {
                return Err(rt(RuntimeErrorKind::Type, span, "tuples can only be returned".into()));
            }
            ExprKind::Index(base, idx) => {
                let b = self.eval(base, frame)?;
                let i = self.eval(idx, frame)?;
                index(&b, &i, span)?
            }
            ExprKind::Slice(base, lo, hi) => {
                let b = self.eval(base, frame)?;
                let xs = vector(&b, span, "slicing")?;
                let len = xs.len() as i64;
                let bound = |m: &mut Self, x: &Option<alloc::boxed::Box<Expr>>, frame: &mut Frame, dflt: i64| -> Result<i64, EvalError> {
                    match x {
                        None => Ok(dflt),
                        Some(x) => {
                            let i = integer(&m.eval(x, frame)?, x.span)?;
                            let i = if i < 0 { i + len } else { i };
                            Ok(i.clamp(0, len))
                        }
                    }
                };
                let a = bound(self, lo, frame, 0)?;
                let z = bound(self, hi, frame, len)?;
                let out = if a < z { xs[a as usize..z as usize].to_vec() } else { Vec::new() };
                Value::Vector(out)
            }
            ExprKind::Unary(UnOp::Neg, inner) => match self.eval(inner, frame)? {
                Value::Vector(xs) => Value::Vector(xs.into_iter().map(|x| -x).collect()),
                other => Value::Num(-num(&other, span, "`-`")?),
            },
            ExprKind::Unary(UnOp::Not, inner) => {
                let v = self.eval(inner, frame)?;
                Value::Bool(!truthy(&v, inner.span)?)
            }
            ExprKind::Binary(BinOp::And, a, b) => {
                let l = self.eval(a, frame)?;
                if !truthy(&l, a.span)? {
                    Value::Bool(false)
                } else {
                    let r = self.eval(b, frame)?;
                    Value::Bool(truthy(&r, b.span)?)
                }
            }
            ExprKind::Binary(BinOp::Or, a, b) => {
                let l = self.eval(a, frame)?;
                if truthy(&l, a.span)? {
                    Value::Bool(true)
                } else {
                    let r = self.eval(b, frame)?;
                    Value::Bool(truthy(&r, b.span)?)
                }
            }
            ExprKind::Binary(op, a, b) => {
                let l = self.eval(a, frame)?;
                let r = self.eval(b, frame)?;
                binop(*op, l, r, span)?
            }
            ExprKind::Call(name, args) => self.call(name, args, frame, span)?,
        })
    }

    fn call(&mut self, name: &str, args: &[Expr], frame: &mut Frame, span: Span) -> Result<Value, EvalError> {
        let mut vals = Vec::with_capacity(args.len());
        for a in args {
            vals.push(self.eval(a, frame)?);
        }
        if let Some(kind) = perception_builtin(name) {
            let [Value::Str(obj)] = vals.as_slice() else {
                return Err(rt(RuntimeErrorKind::Type, span, format!("`{name}` expects one object name")));
            };
            let g = self.perception.geometry(obj, kind).map_err(EvalError::Perception)?;
            self.effects.push(EffectRecord { kind, object: obj.clone() });
            return finite_vec(g.to_vec(), span);
        }
        if MATH_BUILTINS.contains(&name) {
            return math(name, &vals, span);
        }
        let prog = self.prog;
        let Some(f) = prog.function(name) else {
            return Err(rt(RuntimeErrorKind::UnknownName, span, format!("unknown function `{name}`")));
        };
        let (mut values, _) = self.call_user(f, vals, span)?;
        if values.len() != 1 {
            return Err(rt(
                RuntimeErrorKind::Type,
                span,
                format!("`{name}` must return exactly one value, returned {}", values.len()),
            ));
        }
        Ok(values.pop().unwrap())
    }
}

fn index(b: &Value, i: &Value, span: Span) -> Result<Value, EvalError> {
    match (b, i) {
        (Value::Vector(xs), _) => {
            let k = resolve_index(integer(i, span)?, xs.len(), span)?;
            Ok(Value::Num(xs[k]))
        }
        (Value::Map(m), Value::Str(k)) => m
            .get(k)
            .cloned()
            .ok_or_else(|| rt(RuntimeErrorKind::Index, span, format!("map has no key \"{k}\""))),
        (Value::Map(_), other) => Err(rt(RuntimeErrorKind::Type, span, format!("map keys are strings, got {}", other.type_name()))),
        (other, _) => Err(rt(RuntimeErrorKind::Type, span, format!("cannot index a {}", other.type_name()))),
    }
}

fn set_path(target: &mut Value, path: &[Value], value: Value, span: Span) -> Result<(), EvalError> {
    let (first, rest) = path.split_first().expect("non-empty path");
    match target {
        Value::Map(m) => {
            let Value::Str(k) = first else {
                return Err(rt(RuntimeErrorKind::Type, span, format!("map keys are strings, got {}", first.type_name())));
            };
            if rest.is_empty() {
                m.insert(k.clone(), value);
                Ok(())
            } else {
                let inner = m
                    .get_mut(k)
                    .ok_or_else(|| rt(RuntimeErrorKind::Index, span, format!("map has no key \"{k}\"")))?;
                set_path(inner, rest, value, span)
            }
        }
        Value::Vector(xs) => {
            if !rest.is_empty() {
                return Err(rt(RuntimeErrorKind::Type, span, "cannot index into a number".into()));
            }
            let k = resolve_index(integer(first, span)?, xs.len(), span)?;
            xs[k] = num(&value, span, "vector element assignment")?;
            Ok(())
        }
        other => Err(rt(RuntimeErrorKind::Type, span, format!("cannot index a {}", other.type_name()))),
    }
}

fn binop(op: BinOp, l: Value, r: Value, span: Span) -> Result<Value, EvalError> {
    match op {
        BinOp::Eq => return Ok(Value::Bool(values_equal(&l, &r))),
        BinOp::Ne => return Ok(Value::Bool(!values_equal(&l, &r))),
        BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
            let a = num(&l, span, "comparison")?;
            let b = num(&r, span, "comparison")?;
            return Ok(Value::Bool(match op {
                BinOp::Lt => a < b,
                BinOp::Le => a <= b,
                BinOp::Gt => a > b,
                _ => a >= b,
            }));
        }
        _ => {}
    }
    match (l, r) {
        (Value::Vector(a), Value::Vector(b)) => {
            if a.len() != b.len() {
                return Err(rt(RuntimeErrorKind::Type, span, format!("vector lengths differ ({} vs {})", a.len(), b.len())));
            }
            finite_vec(a.iter().zip(&b).map(|(x, y)| arith(op, *x, *y)).collect(), span)
        }
        (Value::Vector(a), s) => {
            let y = num(&s, span, "vector arithmetic")?;
            finite_vec(a.iter().map(|x| arith(op, *x, y)).collect(), span)
        }
        (s, Value::Vector(b)) => {
            let x = num(&s, span, "vector arithmetic")?;
            finite_vec(b.iter().map(|y| arith(op, x, *y)).collect(), span)
        }
        (a, b) => {
            let x = num(&a, span, "arithmetic")?;
            let y = num(&b, span, "arithmetic")?;
            Ok(Value::Num(finite(arith(op, x, y), span)?))
        }
    }
}

fn math(name: &str, args: &[Value], span: Span) -> Result<Value, EvalError> {
    let arity = |n: usize| -> Result<(), EvalError> {
        if args.len() == n {
            Ok(())
        } else {
            Err(rt(RuntimeErrorKind::Arity, span, format!("`{name}` takes {n} argument(s), got {}", args.len())))
        }
    };
    let same_len = |a: &[f64], b: &[f64]| -> Result<(), EvalError> {
        if a.len() == b.len() {
            Ok(())
        } else {
            Err(rt(RuntimeErrorKind::Type, span, format!("`{name}` needs equal-length vectors ({} vs {})", a.len(), b.len())))
        }
    };
    let out = match name {
        "abs" => {
            arity(1)?;
            match &args[0] {
                Value::Vector(xs) => return Ok(Value::Vector(xs.iter().map(|x| x.abs()).collect())),
                v => num(v, span, "`abs`")?.abs(),
            }
        }
        "min" | "max" => {
            let xs: Vec<f64> = match args {
                [Value::Vector(v)] => v.clone(),
                _ if args.len() >= 2 => args.iter().map(|a| num(a, span, name)).collect::<Result<_, _>>()?,
                _ => return Err(rt(RuntimeErrorKind::Arity, span, format!("`{name}` takes a vector or at least two numbers"))),
            };
            if xs.is_empty() {
                return Err(rt(RuntimeErrorKind::Index, span, format!("`{name}` of an empty vector")));
            }
            let init = xs[0];
            if name == "min" {
                xs.into_iter().fold(init, f64::min)
            } else {
                xs.into_iter().fold(init, f64::max)
            }
        }
        "clamp" => {
            arity(3)?;
            let x = num(&args[0], span, "`clamp`")?;
            let lo = num(&args[1], span, "`clamp`")?;
            let hi = num(&args[2], span, "`clamp`")?;
            if lo > hi {
                return Err(rt(RuntimeErrorKind::Type, span, format!("`clamp` bounds are reversed ({lo} > {hi})")));
            }
            x.clamp(lo, hi)
        }
        "sqrt" => {
            arity(1)?;
            libm::sqrt(num(&args[0], span, "`sqrt`")?)
        }
        "norm" => {
            arity(1)?;
            let v = vector(&args[0], span, "`norm`")?;
            libm::sqrt(v.iter().map(|x| x * x).sum())
        }
        "dist" => {
            arity(2)?;
            let a = vector(&args[0], span, "`dist`")?;
            let b = vector(&args[1], span, "`dist`")?;
            same_len(a, b)?;
            libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
        }
        "dot" => {
            arity(2)?;
            let a = vector(&args[0], span, "`dot`")?;
            let b = vector(&args[1], span, "`dot`")?;
            same_len(a, b)?;
            a.iter().zip(b).map(|(x, y)| x * y).sum()
        }
        "cos" => {
            arity(1)?;
            libm::cos(num(&args[0], span, "`cos`")?)
        }
        "sin" => {
            arity(1)?;
            libm::sin(num(&args[0], span, "`sin`")?)
        }
        "radians" => {
            arity(1)?;
            num(&args[0], span, "`radians`")?.to_radians()
        }
        "degrees" => {
            arity(1)?;
            num(&args[0], span, "`degrees`")?.to_degrees()
        }
        _ => unreachable!("not a math builtin: {name}"),
    };
    Ok(Value::Num(finite(out, span)?))
}

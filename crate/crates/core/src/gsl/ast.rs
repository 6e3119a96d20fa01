use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use super::Span;

#[derive(Debug, Clone, PartialEq)]
pub struct Function {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Block,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub default: Option<Expr>,
}

pub type Block = Vec<Stmt>;

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Let { name: String, value: Expr, span: Span },
    Assign { name: String, indices: Vec<Expr>, value: Expr, span: Span },
    If { cond: Expr, then: Block, otherwise: Option<Block>, span: Span },
    For { var: String, iter: ForIter, body: Block, span: Span },
    Return { values: Vec<Expr>, span: Span },
    Expr(Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForIter {
    Range(Expr, Expr),
    Each(Expr),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Num(f64),
    Bool(bool),
    Str(String),
    Var(String),
    Vector(Vec<Expr>),
    Map(Vec<(String, Expr)>),
    Tuple(Vec<Expr>),
    Index(Box<Expr>, Box<Expr>),
    Slice(Box<Expr>, Option<Box<Expr>>, Option<Box<Expr>>),
    Call(String, Vec<Expr>),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    /// Visits this expression and every sub-expression, pre-order.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match &self.kind {
            ExprKind::Vector(xs) | ExprKind::Tuple(xs) | ExprKind::Call(_, xs) => {
                xs.iter().for_each(|x| x.walk(f))
            }
            ExprKind::Map(kv) => kv.iter().for_each(|(_, x)| x.walk(f)),
            ExprKind::Index(a, b) | ExprKind::Binary(_, a, b) => {
                a.walk(f);
                b.walk(f);
            }
            ExprKind::Slice(a, lo, hi) => {
                a.walk(f);
                lo.iter().for_each(|x| x.walk(f));
                hi.iter().for_each(|x| x.walk(f));
            }
            ExprKind::Unary(_, a) => a.walk(f),
            _ => {}
        }
    }
}

/// Visits every expression in a block, including nested blocks.
pub fn walk_block<'a>(block: &'a [Stmt], f: &mut dyn FnMut(&'a Expr)) {
    for stmt in block {
        match stmt {
            Stmt::Let { value, .. } => value.walk(f),
            Stmt::Assign { indices, value, .. } => {
                indices.iter().for_each(|x| x.walk(f));
                value.walk(f);
            }
            Stmt::If { cond, then, otherwise, .. } => {
                cond.walk(f);
                walk_block(then, f);
                if let Some(b) = otherwise {
                    walk_block(b, f);
                }
            }
            Stmt::For { iter, body, .. } => {
                match iter {
                    ForIter::Range(a, b) => {
                        a.walk(f);
                        b.walk(f);
                    }
                    ForIter::Each(a) => a.walk(f),
                }
                walk_block(body, f);
            }
            Stmt::Return { values, .. } => values.iter().for_each(|x| x.walk(f)),
            Stmt::Expr(e) => e.walk(f),
        }
    }
}

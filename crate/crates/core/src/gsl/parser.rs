use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::ast::*;
use super::interp::is_builtin;
use super::lexer::{Tok, Token};
use super::{GslError, Span};

pub struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, GslError>;

impl Parser {
    pub fn new(tokens: Vec<Token>) -> Self {
        Self { tokens, pos: 0 }
    }

    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].span
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> PResult<Span> {
        if self.peek() == &tok {
            Ok(self.advance().span)
        } else {
            Err(self.unexpected(what))
        }
    }

    fn unexpected(&self, what: &str) -> GslError {
        GslError::syntax(self.span(), format!("expected {what}, found {}", self.peek().describe()))
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.advance();
                Ok(name)
            }
            _ => Err(self.unexpected(what)),
        }
    }

    pub fn program(mut self) -> PResult<(Vec<Stmt>, Vec<Function>)> {
        let mut globals = Vec::new();
        let mut functions: Vec<Function> = Vec::new();
        loop {
            match self.peek() {
                Tok::Eof => break,
                Tok::Fn => {
                    let f = self.function()?;
                    if functions.iter().any(|g| g.name == f.name) {
                        return Err(GslError::syntax(f.span, format!("function `{}` is defined twice", f.name)));
                    }
                    if is_builtin(&f.name) {
                        return Err(GslError::syntax(f.span, format!("`{}` is a builtin and cannot be redefined", f.name)));
                    }
                    functions.push(f);
                }
                Tok::Let => globals.push(self.let_stmt()?),
                _ => return Err(self.unexpected("`fn` or `let` at top level")),
            }
        }
        Ok((globals, functions))
    }

    fn function(&mut self) -> PResult<Function> {
        let span = self.expect(Tok::Fn, "`fn`")?;
        let name = self.ident("function name")?;
        self.expect(Tok::LParen, "`(`")?;
        let mut params: Vec<Param> = Vec::new();
        if !self.eat(&Tok::RParen) {
            loop {
                let pspan = self.span();
                let pname = self.ident("parameter name")?;
                if params.iter().any(|p| p.name == pname) {
                    return Err(GslError::syntax(pspan, format!("duplicate parameter `{pname}`")));
                }
                let default = if self.eat(&Tok::Assign) { Some(self.expr()?) } else { None };
                params.push(Param { name: pname, default });
                if self.eat(&Tok::RParen) {
                    break;
                }
                self.expect(Tok::Comma, "`,` or `)`")?;
            }
        }
        let body = self.block()?;
        Ok(Function { name, params, body, span })
    }

    fn block(&mut self) -> PResult<Block> {
        self.expect(Tok::LBrace, "`{`")?;
        let mut out = Vec::new();
        while !self.eat(&Tok::RBrace) {
            if self.peek() == &Tok::Eof {
                return Err(self.unexpected("`}`"));
            }
            out.push(self.stmt()?);
        }
        Ok(out)
    }

    fn let_stmt(&mut self) -> PResult<Stmt> {
        let span = self.expect(Tok::Let, "`let`")?;
        let name = self.ident("variable name")?;
        self.expect(Tok::Assign, "`=`")?;
        let value = self.expr()?;
        self.expect(Tok::Semi, "`;`")?;
        Ok(Stmt::Let { name, value, span })
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let span = self.span();
        match self.peek() {
            Tok::Let => self.let_stmt(),
            Tok::If => self.if_stmt(),
            Tok::For => {
                self.advance();
                let var = self.ident("loop variable")?;
                self.expect(Tok::In, "`in`")?;
                let first = self.expr()?;
                let iter = if self.eat(&Tok::DotDot) {
                    ForIter::Range(first, self.expr()?)
                } else {
                    ForIter::Each(first)
                };
                let body = self.block()?;
                Ok(Stmt::For { var, iter, body, span })
            }
            Tok::Return => {
                self.advance();
                let mut values = Vec::new();
                if self.peek() != &Tok::Semi {
                    values.push(self.expr()?);
                    while self.eat(&Tok::Comma) {
                        values.push(self.expr()?);
                    }
                }
                self.expect(Tok::Semi, "`;`")?;
                if values.len() == 1 {
                    if let ExprKind::Tuple(items) = &values[0].kind {
                        values = items.clone();
                    }
                }
                Ok(Stmt::Return { values, span })
            }
            Tok::Fn => Err(GslError::syntax(span, "nested function definitions are not allowed".into())),
            _ => {
                let e = self.expr()?;
                if self.eat(&Tok::Assign) {
                    let (name, indices) = assign_target(e)?;
                    let value = self.expr()?;
                    self.expect(Tok::Semi, "`;`")?;
                    Ok(Stmt::Assign { name, indices, value, span })
                } else {
                    self.expect(Tok::Semi, "`;`")?;
                    Ok(Stmt::Expr(e))
                }
            }
        }
    }

    fn if_stmt(&mut self) -> PResult<Stmt> {
        let span = self.expect(Tok::If, "`if`")?;
        let cond = self.expr()?;
        let then = self.block()?;
        let otherwise = if self.eat(&Tok::Else) {
            if self.peek() == &Tok::If {
                Some(alloc::vec![self.if_stmt()?])
            } else {
                Some(self.block()?)
            }
        } else {
            None
        };
        Ok(Stmt::If { cond, then, otherwise, span })
    }

    pub fn expr(&mut self) -> PResult<Expr> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.and_expr()?;
        while self.peek() == &Tok::Or {
            let span = self.advance().span;
            let rhs = self.and_expr()?;
            lhs = binary(BinOp::Or, lhs, rhs, span);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.not_expr()?;
        while self.peek() == &Tok::And {
            let span = self.advance().span;
            let rhs = self.not_expr()?;
            lhs = binary(BinOp::And, lhs, rhs, span);
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> PResult<Expr> {
        if self.peek() == &Tok::Not {
            let span = self.advance().span;
            let inner = self.not_expr()?;
            return Ok(Expr { kind: ExprKind::Unary(UnOp::Not, Box::new(inner)), span });
        }
        self.comparison()
    }

    fn comparison(&mut self) -> PResult<Expr> {
        let lhs = self.additive()?;
        let op = match self.peek() {
            Tok::Lt => BinOp::Lt,
            Tok::Le => BinOp::Le,
            Tok::Gt => BinOp::Gt,
            Tok::Ge => BinOp::Ge,
            Tok::Eq => BinOp::Eq,
            Tok::Ne => BinOp::Ne,
            _ => return Ok(lhs),
        };
        let span = self.advance().span;
        let rhs = self.additive()?;
        if matches!(self.peek(), Tok::Lt | Tok::Le | Tok::Gt | Tok::Ge | Tok::Eq | Tok::Ne) {
            return Err(GslError::syntax(self.span(), "comparisons cannot be chained; use `and`".into()));
        }
        Ok(binary(op, lhs, rhs, span))
    }

    fn additive(&mut self) -> PResult<Expr> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            let span = self.advance().span;
            let rhs = self.multiplicative()?;
            lhs = binary(op, lhs, rhs, span);
        }
    }

    fn multiplicative(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            let span = self.advance().span;
            let rhs = self.unary()?;
            lhs = binary(op, lhs, rhs, span);
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        match self.peek() {
            Tok::Minus => {
                let span = self.advance().span;
                let inner = self.unary()?;
                if let ExprKind::Num(n) = inner.kind {
                    return Ok(Expr { kind: ExprKind::Num(-n), span });
                }
                Ok(Expr { kind: ExprKind::Unary(UnOp::Neg, Box::new(inner)), span })
            }
            Tok::Plus => {
                self.advance();
                self.unary()
            }
            _ => self.postfix(),
        }
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.primary()?;
        while self.peek() == &Tok::LBracket {
            let span = self.advance().span;
            let lo = if matches!(self.peek(), Tok::Colon) { None } else { Some(Box::new(self.expr()?)) };
            if self.eat(&Tok::Colon) {
                let hi = if self.peek() == &Tok::RBracket { None } else { Some(Box::new(self.expr()?)) };
                self.expect(Tok::RBracket, "`]`")?;
                e = Expr { kind: ExprKind::Slice(Box::new(e), lo, hi), span };
            } else {
                self.expect(Tok::RBracket, "`]`")?;
                let idx = lo.ok_or_else(|| self.unexpected("index expression"))?;
                e = Expr { kind: ExprKind::Index(Box::new(e), idx), span };
            }
        }
        Ok(e)
    }

    fn primary(&mut self) -> PResult<Expr> {
        let span = self.span();
        let kind = match self.peek().clone() {
            Tok::Num(n) => {
                self.advance();
                ExprKind::Num(n)
            }
            Tok::Str(s) => {
                self.advance();
                ExprKind::Str(s)
            }
            Tok::True => {
                self.advance();
                ExprKind::Bool(true)
            }
            Tok::False => {
                self.advance();
                ExprKind::Bool(false)
            }
            Tok::Ident(name) => {
                self.advance();
                if self.eat(&Tok::LParen) {
                    let args = self.comma_list(Tok::RParen)?;
                    ExprKind::Call(name, args)
                } else {
                    ExprKind::Var(name)
                }
            }
            Tok::LParen => {
                self.advance();
                let first = self.expr()?;
                if self.eat(&Tok::RParen) {
                    return Ok(first);
                }
                self.expect(Tok::Comma, "`,` or `)`")?;
                let mut items = alloc::vec![first];
                items.extend(self.comma_list(Tok::RParen)?);
                ExprKind::Tuple(items)
            }
            Tok::LBracket => {
                self.advance();
                ExprKind::Vector(self.comma_list(Tok::RBracket)?)
            }
            Tok::LBrace => {
                self.advance();
                let mut entries: Vec<(String, Expr)> = Vec::new();
                loop {
                    if self.eat(&Tok::RBrace) {
                        break;
                    }
                    let kspan = self.span();
                    let key = match self.peek().clone() {
                        Tok::Str(s) | Tok::Ident(s) => {
                            self.advance();
                            s
                        }
                        _ => return Err(self.unexpected("map key")),
                    };
                    if entries.iter().any(|(k, _)| *k == key) {
                        return Err(GslError::syntax(kspan, format!("duplicate map key \"{key}\"")));
                    }
                    self.expect(Tok::Colon, "`:`")?;
                    entries.push((key, self.expr()?));
                    if !self.eat(&Tok::Comma) {
                        self.expect(Tok::RBrace, "`,` or `}`")?;
                        break;
                    }
                }
                ExprKind::Map(entries)
            }
            _ => return Err(self.unexpected("expression")),
        };
        Ok(Expr { kind, span })
    }

    /// Parses `e, e, ...` up to and including `close`; a trailing comma is allowed.
    fn comma_list(&mut self, close: Tok) -> PResult<Vec<Expr>> {
        let mut out = Vec::new();
        loop {
            if self.eat(&close) {
                return Ok(out);
            }
            out.push(self.expr()?);
            if !self.eat(&Tok::Comma) {
                let what = if close == Tok::RParen { "`,` or `)`" } else { "`,` or `]`" };
                self.expect(close, what)?;
                return Ok(out);
            }
        }
    }
}

fn binary(op: BinOp, lhs: Expr, rhs: Expr, span: Span) -> Expr {
    Expr { kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), span }
}

fn assign_target(e: Expr) -> PResult<(String, Vec<Expr>)> {
    let mut indices = Vec::new();
    let mut cur = e;
    loop {
        match cur.kind {
            ExprKind::Var(name) => {
                indices.reverse();
                return Ok((name, indices));
            }
            ExprKind::Index(base, idx) => {
                indices.push(*idx);
                cur = *base;
            }
            _ => return Err(GslError::syntax(cur.span, "invalid assignment target".into())),
        }
    }
}

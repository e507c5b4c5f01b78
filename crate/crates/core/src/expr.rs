//! Constitutive-law expressions.
//!
//! A law is a closed-form expression over exactly one free variable. The
//! grammar is small on purpose: numeric literals, the free variable,
//! `+ - * /`, unary minus, `^` with a non-negative integer exponent, and the
//! functions `sgn(..)` and `exp(..)`.

use std::fmt;

use thiserror::Error;

/// Function names reserved by the grammar.
const FUNCTIONS: [&str; 2] = ["sgn", "exp"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("column {col}: {msg}")]
    Syntax { col: usize, msg: String },
    #[error("law has no free variable")]
    NoVariable,
    #[error("law uses more than one free variable (`{0}` and `{1}`)")]
    MultipleVariables(String, String),
    #[error("law references `{found}` but `{expected}` is required")]
    WrongVariable { expected: String, found: String },
    #[error("division by a constant zero")]
    ConstantZeroDivisor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InvertError {
    #[error("target {y} is not bracketed by [{lo}, {hi}]")]
    NotBracketed { y: f64, lo: f64, hi: f64 },
    #[error("law is not monotone on [{lo}, {hi}]")]
    NonMonotone { lo: f64, hi: f64 },
    #[error("bisection stopped with residual {residual:e} above tolerance")]
    NoConvergence { residual: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Expression tree node. `Var` is the single free variable of the law.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, u32),
    Sgn(Box<Node>),
    Exp(Box<Node>),
}

/// A parsed constitutive law `y = Φ(var)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstitutiveExpr {
    var: String,
    root: Node,
}

/// sgn with sgn(0) = 0.
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        x * 0.0
    }
}

impl ConstitutiveExpr {
    /// Parse `text`. When `expected_var` is given, the free variable must
    /// carry that name.
    pub fn parse(text: &str, expected_var: Option<&str>) -> Result<Self, ExprError> {
        let mut parser = Parser::new(text)?;
        let root = parser.expr()?;
        if let Some(tok) = parser.peek() {
            return Err(parser.error_at(tok.col, format!("unexpected {}", tok.kind)));
        }
        let var = parser.var.ok_or(ExprError::NoVariable)?;
        if let Some(expected) = expected_var {
            if var != expected {
                return Err(ExprError::WrongVariable {
                    expected: expected.to_string(),
                    found: var,
                });
            }
        }
        Ok(Self { var, root })
    }

    /// Linear law `c * var`.
    pub fn linear(var: &str, coefficient: f64) -> Self {
        Self {
            var: var.to_string(),
            root: Node::Mul(Box::new(Node::Const(coefficient)), Box::new(Node::Var)),
        }
    }

    pub fn var(&self) -> &str {
        &self.var
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn eval(&self, x: f64) -> Result<f64, EvalError> {
        eval_node(&self.root, x)
    }

    /// Returns `Some(c)` when the law is structurally `c * var`.
    pub fn linear_coefficient(&self) -> Option<f64> {
        match affine(&self.root)? {
            (c0, c1) if c0 == 0.0 => Some(c1),
            _ => None,
        }
    }

    pub fn is_linear(&self) -> bool {
        self.linear_coefficient().is_some()
    }

    /// Central-difference slope at `x`.
    pub fn slope(&self, x: f64) -> Result<f64, EvalError> {
        let h = 1e-6 * (1.0 + x.abs());
        Ok((self.eval(x + h)? - self.eval(x - h)?) / (2.0 * h))
    }

    /// Copy of this law with the free variable renamed.
    pub fn renamed(&self, var: &str) -> Self {
        Self {
            var: var.to_string(),
            root: self.root.clone(),
        }
    }
}

fn eval_node(node: &Node, x: f64) -> Result<f64, EvalError> {
    Ok(match node {
        Node::Const(c) => *c,
        Node::Var => x,
        Node::Neg(a) => -eval_node(a, x)?,
        Node::Add(a, b) => eval_node(a, x)? + eval_node(b, x)?,
        Node::Sub(a, b) => eval_node(a, x)? - eval_node(b, x)?,
        Node::Mul(a, b) => eval_node(a, x)? * eval_node(b, x)?,
        Node::Div(a, b) => {
            let den = eval_node(b, x)?;
            if den == 0.0 {
                return Err(EvalError::DivisionByZero);
            }
            eval_node(a, x)? / den
        }
        Node::Pow(a, n) => eval_node(a, x)?.powi(*n as i32),
        Node::Sgn(a) => sgn(eval_node(a, x)?),
        Node::Exp(a) => eval_node(a, x)?.exp(),
    })
}

/// Affine form `(c0, c1)` meaning `c0 + c1 * var`, when the subtree is affine.
fn affine(node: &Node) -> Option<(f64, f64)> {
    match node {
        Node::Const(c) => Some((*c, 0.0)),
        Node::Var => Some((0.0, 1.0)),
        Node::Neg(a) => affine(a).map(|(a0, a1)| (-a0, -a1)),
        Node::Add(a, b) => {
            let ((a0, a1), (b0, b1)) = (affine(a)?, affine(b)?);
            Some((a0 + b0, a1 + b1))
        }
        Node::Sub(a, b) => {
            let ((a0, a1), (b0, b1)) = (affine(a)?, affine(b)?);
            Some((a0 - b0, a1 - b1))
        }
        Node::Mul(a, b) => {
            let ((a0, a1), (b0, b1)) = (affine(a)?, affine(b)?);
            if a1 == 0.0 {
                Some((a0 * b0, a0 * b1))
            } else if b1 == 0.0 {
                Some((a0 * b0, a1 * b0))
            } else {
                None
            }
        }
        Node::Div(a, b) => {
            let ((a0, a1), (b0, b1)) = (affine(a)?, affine(b)?);
            (b1 == 0.0 && b0 != 0.0).then(|| (a0 / b0, a1 / b0))
        }
        Node::Pow(a, n) => {
            let (a0, a1) = affine(a)?;
            match (*n, a1 == 0.0) {
                (_, true) => Some((a0.powi(*n as i32), 0.0)),
                (0, false) => Some((1.0, 0.0)),
                (1, false) => Some((a0, a1)),
                _ => None,
            }
        }
        Node::Sgn(a) => match affine(a)? {
            (a0, a1) if a1 == 0.0 => Some((sgn(a0), 0.0)),
            _ => None,
        },
        Node::Exp(a) => match affine(a)? {
            (a0, a1) if a1 == 0.0 => Some((a0.exp(), 0.0)),
            _ => None,
        },
    }
}

/// Solve `Φ(x) = y` on `[lo, hi]` by bisection.
///
/// The law must be strictly monotone on the bracket; this is checked on a
/// uniform grid before bisecting and again at every midpoint.
pub fn invert_law(
    expr: &ConstitutiveExpr,
    y: f64,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<f64, InvertError> {
    const GRID: usize = 16;
    const MAX_ITER: usize = 200;
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut fa = expr.eval(a)?;
    let mut fb = expr.eval(b)?;

    let mut prev = fa;
    let mut direction = 0.0;
    for i in 1..=GRID {
        let x = a + (b - a) * i as f64 / GRID as f64;
        let fx = expr.eval(x)?;
        let step = sgn(fx - prev);
        if step == 0.0 || (direction != 0.0 && step != direction) {
            return Err(InvertError::NonMonotone { lo: a, hi: b });
        }
        direction = step;
        prev = fx;
    }

    if !(fa.min(fb) <= y && y <= fa.max(fb)) {
        return Err(InvertError::NotBracketed { y, lo: a, hi: b });
    }
    if fa == y {
        return Ok(a);
    }
    if fb == y {
        return Ok(b);
    }

    for _ in 0..MAX_ITER {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b || (b - a) <= 1e-14 * (1.0 + mid.abs()) {
            break;
        }
        let fm = expr.eval(mid)?;
        if !(fa.min(fb) <= fm && fm <= fa.max(fb)) {
            return Err(InvertError::NonMonotone { lo, hi });
        }
        if fm == y {
            return Ok(mid);
        }
        if (fm < y) == (fa < y) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
            fb = fm;
        }
    }
    let x = 0.5 * (a + b);
    let residual = (expr.eval(x)? - y).abs();
    if residual > tol {
        return Err(InvertError::NoConvergence { residual });
    }
    Ok(x)
}

/// Invert with an automatically grown bracket, starting at `[-1, 1]` and
/// doubling until `y` is enclosed.
pub fn invert_law_auto(expr: &ConstitutiveExpr, y: f64, tol: f64) -> Result<f64, InvertError> {
    let mut half = 1.0_f64;
    for _ in 0..64 {
        let (fa, fb) = (expr.eval(-half)?, expr.eval(half)?);
        if fa.min(fb) <= y && y <= fa.max(fb) {
            return invert_law(expr, y, -half, half, tol);
        }
        half *= 2.0;
    }
    Err(InvertError::NotBracketed { y, lo: -half, hi: half })
}

// ---------------------------------------------------------------------------
// printing

impl fmt::Display for ConstitutiveExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(&self.root, &self.var, f)
    }
}

fn write_node(node: &Node, var: &str, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let bin = |f: &mut fmt::Formatter<'_>, a: &Node, op: &str, b: &Node| -> fmt::Result {
        write!(f, "(")?;
        write_node(a, var, f)?;
        write!(f, " {op} ")?;
        write_node(b, var, f)?;
        write!(f, ")")
    };
    match node {
        Node::Const(c) if *c < 0.0 || c.is_sign_negative() => write!(f, "(-{:?})", -c),
        Node::Const(c) => write!(f, "{c:?}"),
        Node::Var => write!(f, "{var}"),
        Node::Neg(a) => {
            write!(f, "-(")?;
            write_node(a, var, f)?;
            write!(f, ")")
        }
        Node::Add(a, b) => bin(f, a, "+", b),
        Node::Sub(a, b) => bin(f, a, "-", b),
        Node::Mul(a, b) => bin(f, a, "*", b),
        Node::Div(a, b) => bin(f, a, "/", b),
        Node::Pow(a, n) => {
            write!(f, "(")?;
            write_node(a, var, f)?;
            write!(f, ")^{n}")
        }
        Node::Sgn(a) => {
            write!(f, "sgn(")?;
            write_node(a, var, f)?;
            write!(f, ")")
        }
        Node::Exp(a) => {
            write!(f, "exp(")?;
            write_node(a, var, f)?;
            write!(f, ")")
        }
    }
}

// ---------------------------------------------------------------------------
// lexing and parsing

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(f64),
    Int(u32),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Number(x) => write!(f, "number {x}"),
            TokenKind::Int(n) => write!(f, "number {n}"),
            TokenKind::Ident(s) => write!(f, "identifier `{s}`"),
            TokenKind::Op(c) => write!(f, "`{c}`"),
            TokenKind::LParen => write!(f, "`(`"),
            TokenKind::RParen => write!(f, "`)`"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            let mut is_float = false;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                is_float |= chars[i] == '.';
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                    is_float = true;
                }
            }
            let lit: String = chars[start..i].iter().collect();
            let kind = if is_float {
                TokenKind::Number(lit.parse().map_err(|_| ExprError::Syntax {
                    col,
                    msg: format!("malformed number `{lit}`"),
                })?)
            } else {
                match lit.parse::<u32>() {
                    Ok(n) => TokenKind::Int(n),
                    Err(_) => TokenKind::Number(lit.parse().map_err(|_| ExprError::Syntax {
                        col,
                        msg: format!("malformed number `{lit}`"),
                    })?),
                }
            };
            tokens.push(Token { kind, col });
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            tokens.push(Token {
                kind: TokenKind::Ident(chars[start..i].iter().collect()),
                col,
            });
        } else {
            let kind = match c {
                '+' | '-' | '*' | '/' | '^' => TokenKind::Op(c),
                '(' => TokenKind::LParen,
                ')' => TokenKind::RParen,
                _ => {
                    return Err(ExprError::Syntax {
                        col,
                        msg: format!("unexpected character `{c}`"),
                    })
                }
            };
            tokens.push(Token { kind, col });
            i += 1;
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end_col: usize,
    var: Option<String>,
}

impl Parser {
    fn new(text: &str) -> Result<Self, ExprError> {
        Ok(Self {
            tokens: lex(text)?,
            pos: 0,
            end_col: text.chars().count() + 1,
            var: None,
        })
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let tok = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        tok
    }

    fn error_at(&self, col: usize, msg: String) -> ExprError {
        ExprError::Syntax { col, msg }
    }

    fn eat_op(&mut self, op: char) -> bool {
        if matches!(self.peek(), Some(Token { kind: TokenKind::Op(c), .. }) if *c == op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: TokenKind) -> Result<(), ExprError> {
        match self.next() {
            Some(tok) if tok.kind == kind => Ok(()),
            Some(tok) => Err(self.error_at(tok.col, format!("expected {kind}, found {}", tok.kind))),
            None => Err(self.error_at(self.end_col, format!("expected {kind}, found end of input"))),
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat_op('+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat_op('-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat_op('*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat_op('/') {
                let den = self.unary()?;
                if matches!(affine(&den), Some((c, s)) if c == 0.0 && s == 0.0) {
                    return Err(ExprError::ConstantZeroDivisor);
                }
                lhs = Node::Div(Box::new(lhs), Box::new(den));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.eat_op('-') {
            Ok(Node::Neg(Box::new(self.unary()?)))
        } else if self.eat_op('+') {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.eat_op('^') {
            match self.next() {
                Some(Token { kind: TokenKind::Int(n), .. }) => Ok(Node::Pow(Box::new(base), n)),
                Some(tok) => Err(self.error_at(
                    tok.col,
                    format!("exponent must be a non-negative integer, found {}", tok.kind),
                )),
                None => Err(self.error_at(self.end_col, "missing exponent".into())),
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let tok = match self.next() {
            Some(tok) => tok,
            None => return Err(self.error_at(self.end_col, "unexpected end of input".into())),
        };
        match tok.kind {
            TokenKind::Number(x) => Ok(Node::Const(x)),
            TokenKind::Int(n) => Ok(Node::Const(n as f64)),
            TokenKind::LParen => {
                let inner = self.expr()?;
                self.expect(TokenKind::RParen)?;
                Ok(inner)
            }
            TokenKind::Ident(name) if FUNCTIONS.contains(&name.as_str()) => {
                self.expect(TokenKind::LParen)?;
                let arg = Box::new(self.expr()?);
                self.expect(TokenKind::RParen)?;
                Ok(if name == "sgn" { Node::Sgn(arg) } else { Node::Exp(arg) })
            }
            TokenKind::Ident(name) => {
                match &self.var {
                    None => self.var = Some(name),
                    Some(v) if *v == name => {}
                    Some(v) => return Err(ExprError::MultipleVariables(v.clone(), name)),
                }
                Ok(Node::Var)
            }
            other => Err(self.error_at(tok.col, format!("unexpected {other}"))),
        }
    }
}

//! A small expression language for equations, forcing terms, delays,
//! histories and exact solutions.
//!
//! ```text
//! D(y) = 0.5*y(0.5*t) - y - 0.5*exp(-0.5*t)
//! y1' = y1 - y3*y2 + sin(t) + t*cos(t)
//! ```
//!
//! * the independent variable (`t` by default) and the constants `pi`, `e`
//! * state slots: `y` (value), `y'`/`y''` (input derivatives), `y(expr)` and
//!   `y'(expr)` (evaluated at a delayed argument that depends only on the
//!   variable), and `D(y)` for the leading derivative of the state's order
//! * `+ - * / ^` (also `**`), unary minus, parentheses
//! * `exp sin cos tan sec sqrt ln`, and `gamma(c)` for constant `c`

use std::collections::HashMap;

use crate::caputo::gamma;

/// Elementary functions available in expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Sin,
    Cos,
    Tan,
    Sec,
    Sqrt,
    Ln,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "sec" => Func::Sec,
            "sqrt" => Func::Sqrt,
            "ln" | "log" => Func::Ln,
            _ => return None,
        })
    }

    /// `(f(x), f'(x), f''(x))`.
    pub(crate) fn eval2(self, x: f64) -> (f64, f64, f64) {
        match self {
            Func::Exp => {
                let e = x.exp();
                (e, e, e)
            }
            Func::Sin => {
                let (s, c) = x.sin_cos();
                (s, c, -s)
            }
            Func::Cos => {
                let (s, c) = x.sin_cos();
                (c, -s, -c)
            }
            Func::Tan => {
                let t = x.tan();
                let sec2 = 1.0 + t * t;
                (t, sec2, 2.0 * t * sec2)
            }
            Func::Sec => {
                let c = x.cos();
                let s = 1.0 / c;
                let t = x.tan();
                (s, s * t, s * (t * t + s * s))
            }
            Func::Sqrt => {
                let r = x.sqrt();
                (r, 0.5 / r, -0.25 / (r * x))
            }
            Func::Ln => (x.ln(), 1.0 / x, -1.0 / (x * x)),
        }
    }

    pub(crate) fn eval(self, x: f64) -> f64 {
        match self {
            Func::Exp => x.exp(),
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Sec => 1.0 / x.cos(),
            Func::Sqrt => x.sqrt(),
            Func::Ln => x.ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// What a state reference reads during residual assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    /// `deriv`-th input derivative of state `state`, at the collocation node
    /// or, with `delay = Some(k)`, at the problem's `k`-th delayed argument.
    State {
        state: usize,
        deriv: usize,
        delay: Option<usize>,
    },
    /// Leading (possibly fractional) derivative of a state at the node.
    Leading { state: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var,
    Slot(Slot),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Parse failure with a 1-based column into the source text.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprError {
    pub column: usize,
    pub message: String,
}

impl std::fmt::Display for ExprError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "column {}: {}", self.column, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Prime,
    LParen,
    RParen,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    Equals,
    End,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let col = i + 1;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit()))
        {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| ExprError {
                column: col,
                message: format!("malformed number `{text}`"),
            })?;
            out.push((Tok::Num(v), col));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), col));
            continue;
        }
        let tok = match c {
            '\'' => Tok::Prime,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' if bytes.get(i + 1) == Some(&b'*') => {
                i += 1;
                Tok::Caret
            }
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '^' => Tok::Caret,
            '=' => Tok::Equals,
            other => {
                return Err(ExprError {
                    column: col,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push((tok, col));
        i += 1;
    }
    out.push((Tok::End, src.len() + 1));
    Ok(out)
}

/// Names visible to the parser and what they may resolve to.
pub struct Scope<'a> {
    pub variable: &'a str,
    pub states: &'a [String],
    pub definitions: &'a HashMap<String, Expr>,
    /// Whether state slots and `D(...)` are allowed.
    pub allow_states: bool,
    /// Registry of delayed arguments shared by all equations of a problem.
    pub delays: Option<&'a mut Vec<Expr>>,
}

struct Parser<'s, 'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    scope: &'s mut Scope<'a>,
}

impl Parser<'_, '_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn col(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError {
            column: self.col(),
            message: message.into(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ExprError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Tok::Minus => {
                self.bump();
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Tok::Plus => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let col = self.col();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => self.identifier(name, col),
            Tok::End => self.err("unexpected end of expression"),
            other => Err(ExprError {
                column: col,
                message: format!("unexpected {}", describe(&other)),
            }),
        }
    }

    fn identifier(&mut self, name: String, col: usize) -> Result<Expr, ExprError> {
        let mut primes = 0;
        while *self.peek() == Tok::Prime {
            self.bump();
            primes += 1;
        }
        let state = self.scope.states.iter().position(|s| *s == name);
        if let Some(state) = state {
            if !self.scope.allow_states {
                return Err(ExprError {
                    column: col,
                    message: format!(
                        "state `{name}` cannot appear here; only `{}` and constants may",
                        self.scope.variable
                    ),
                });
            }
            if primes > 2 {
                return Err(ExprError {
                    column: col,
                    message: "derivatives above second order are not supported".into(),
                });
            }
            let delay = if *self.peek() == Tok::LParen {
                self.bump();
                let arg_col = self.col();
                let arg = self.delay_argument()?;
                self.expect(Tok::RParen, "`)` after delayed argument")?;
                // `y(t)` is just `y`.
                if arg == Expr::Var {
                    None
                } else {
                    let reg = self.scope.delays.as_mut().ok_or(ExprError {
                        column: arg_col,
                        message: "delayed arguments are not allowed here".into(),
                    })?;
                    Some(match reg.iter().position(|d| *d == arg) {
                        Some(k) => k,
                        None => {
                            reg.push(arg);
                            reg.len() - 1
                        }
                    })
                }
            } else {
                None
            };
            return Ok(Expr::Slot(Slot::State {
                state,
                deriv: primes,
                delay,
            }));
        }
        if primes > 0 {
            return Err(ExprError {
                column: col,
                message: format!("`{name}` is not a state and cannot be differentiated"),
            });
        }
        if name == self.scope.variable {
            return Ok(Expr::Var);
        }
        if let Some(def) = self.scope.definitions.get(&name) {
            return Ok(def.clone());
        }
        match name.as_str() {
            "pi" => return Ok(Expr::Const(std::f64::consts::PI)),
            "e" => return Ok(Expr::Const(std::f64::consts::E)),
            _ => {}
        }
        if name == "D" {
            if !self.scope.allow_states {
                return Err(ExprError {
                    column: col,
                    message: "`D(...)` is only allowed in equations".into(),
                });
            }
            self.expect(Tok::LParen, "`(` after `D`")?;
            let scol = self.col();
            let target = match self.bump() {
                Tok::Ident(s) => s,
                _ => {
                    return Err(ExprError {
                        column: scol,
                        message: "`D(...)` takes a state name".into(),
                    })
                }
            };
            let state = self
                .scope
                .states
                .iter()
                .position(|s| *s == target)
                .ok_or(ExprError {
                    column: scol,
                    message: format!("`{target}` is not a state"),
                })?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(Expr::Slot(Slot::Leading { state }));
        }
        if name == "gamma" {
            self.expect(Tok::LParen, "`(` after `gamma`")?;
            let acol = self.col();
            let arg = fold(self.expr()?);
            self.expect(Tok::RParen, "`)`")?;
            let Expr::Const(z) = arg else {
                return Err(ExprError {
                    column: acol,
                    message: "gamma() needs a constant argument".into(),
                });
            };
            let g = gamma(z).map_err(|e| ExprError {
                column: acol,
                message: e.to_string(),
            })?;
            return Ok(Expr::Const(g));
        }
        if let Some(f) = Func::from_name(&name) {
            self.expect(Tok::LParen, &format!("`(` after `{name}`"))?;
            let arg = self.expr()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(Expr::Call(f, Box::new(arg)));
        }
        Err(ExprError {
            column: col,
            message: format!("unknown name `{name}`"),
        })
    }

    fn delay_argument(&mut self) -> Result<Expr, ExprError> {
        let saved = self.scope.allow_states;
        self.scope.allow_states = false;
        let r = self.expr();
        self.scope.allow_states = saved;
        r.map(fold)
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number {v}"),
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Prime => "`'`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Slash => "`/`".into(),
        Tok::Caret => "`^`".into(),
        Tok::Equals => "`=`".into(),
        Tok::End => "end of input".into(),
    }
}

/// Parses a plain expression.
pub fn parse_expr(src: &str, scope: &mut Scope<'_>) -> Result<Expr, ExprError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        scope,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return p.err(format!("unexpected {}", describe(p.peek())));
    }
    Ok(fold(e))
}

/// Parses `lhs = rhs` into the residual `lhs - rhs`; a lone expression is
/// taken as a residual that must vanish.
pub fn parse_equation(src: &str, scope: &mut Scope<'_>) -> Result<Expr, ExprError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        scope,
    };
    let lhs = p.expr()?;
    let e = match p.peek() {
        Tok::End => lhs,
        Tok::Equals => {
            p.bump();
            let rhs = p.expr()?;
            Expr::Bin(BinOp::Sub, Box::new(lhs), Box::new(rhs))
        }
        other => return p.err(format!("unexpected {}", describe(other))),
    };
    if *p.peek() != Tok::End {
        return p.err(format!("unexpected {}", describe(p.peek())));
    }
    Ok(fold(e))
}

fn apply_bin(op: BinOp, a: f64, b: f64) -> f64 {
    match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => a / b,
        BinOp::Pow => powf(a, b),
    }
}

fn powf(a: f64, b: f64) -> f64 {
    if b == b.trunc() && b.abs() < 64.0 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

/// Folds constant subtrees.
pub fn fold(e: Expr) -> Expr {
    match e {
        Expr::Neg(a) => match fold(*a) {
            Expr::Const(v) => Expr::Const(-v),
            a => Expr::Neg(Box::new(a)),
        },
        Expr::Bin(op, a, b) => match (fold(*a), fold(*b)) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(apply_bin(op, x, y)),
            (a, b) => Expr::Bin(op, Box::new(a), Box::new(b)),
        },
        Expr::Call(f, a) => match fold(*a) {
            Expr::Const(x) => Expr::Const(f.eval(x)),
            a => Expr::Call(f, Box::new(a)),
        },
        other => other,
    }
}

impl Expr {
    /// Visits every slot in the tree.
    pub fn slots(&self, out: &mut Vec<Slot>) {
        match self {
            Expr::Slot(s) => out.push(*s),
            Expr::Neg(a) | Expr::Call(_, a) => a.slots(out),
            Expr::Bin(_, a, b) => {
                a.slots(out);
                b.slots(out);
            }
            Expr::Const(_) | Expr::Var => {}
        }
    }

    /// Evaluates with every slot read from `slot`.
    pub fn eval_with(&self, t: f64, slot: &dyn Fn(Slot) -> f64) -> f64 {
        match self {
            Expr::Const(v) => *v,
            Expr::Var => t,
            Expr::Slot(s) => slot(*s),
            Expr::Neg(a) => -a.eval_with(t, slot),
            Expr::Bin(op, a, b) => apply_bin(*op, a.eval_with(t, slot), b.eval_with(t, slot)),
            Expr::Call(f, a) => f.eval(a.eval_with(t, slot)),
        }
    }

    /// Evaluates an expression of the variable alone. Slots read as NaN.
    pub fn eval(&self, t: f64) -> f64 {
        self.eval_with(t, &|_| f64::NAN)
    }

    /// Value and first two derivatives with respect to the variable.
    pub fn eval_taylor(&self, t: f64) -> Taylor2 {
        match self {
            Expr::Const(v) => Taylor2::constant(*v),
            Expr::Var => Taylor2 {
                v: t,
                d1: 1.0,
                d2: 0.0,
            },
            Expr::Slot(_) => Taylor2::constant(f64::NAN),
            Expr::Neg(a) => {
                let a = a.eval_taylor(t);
                Taylor2 {
                    v: -a.v,
                    d1: -a.d1,
                    d2: -a.d2,
                }
            }
            Expr::Bin(op, a, b) => {
                let x = a.eval_taylor(t);
                if let (BinOp::Pow, Expr::Const(c)) = (op, b.as_ref()) {
                    return x.powc(*c);
                }
                let y = b.eval_taylor(t);
                match op {
                    BinOp::Add => x.add(y),
                    BinOp::Sub => x.sub(y),
                    BinOp::Mul => x.mul(y),
                    BinOp::Div => x.div(y),
                    BinOp::Pow => y.mul(x.apply(Func::Ln)).apply(Func::Exp),
                }
            }
            Expr::Call(f, a) => a.eval_taylor(t).apply(*f),
        }
    }
}

/// A value with its first and second derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Taylor2 {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Taylor2 {
    pub fn constant(v: f64) -> Self {
        Self {
            v,
            d1: 0.0,
            d2: 0.0,
        }
    }

    /// The `r`-th component.
    pub fn get(&self, r: usize) -> f64 {
        match r {
            0 => self.v,
            1 => self.d1,
            _ => self.d2,
        }
    }

    fn add(self, o: Self) -> Self {
        Self {
            v: self.v + o.v,
            d1: self.d1 + o.d1,
            d2: self.d2 + o.d2,
        }
    }

    fn sub(self, o: Self) -> Self {
        Self {
            v: self.v - o.v,
            d1: self.d1 - o.d1,
            d2: self.d2 - o.d2,
        }
    }

    fn mul(self, o: Self) -> Self {
        Self {
            v: self.v * o.v,
            d1: self.d1 * o.v + self.v * o.d1,
            d2: self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
        }
    }

    fn div(self, o: Self) -> Self {
        let q = self.v / o.v;
        let q1 = (self.d1 - q * o.d1) / o.v;
        let q2 = (self.d2 - 2.0 * q1 * o.d1 - q * o.d2) / o.v;
        Self {
            v: q,
            d1: q1,
            d2: q2,
        }
    }

    fn chain(self, f0: f64, f1: f64, f2: f64) -> Self {
        // Skip terms whose inner derivative vanishes so that an infinite
        // outer derivative (sqrt at 0, say) does not poison them.
        let d1 = if self.d1 == 0.0 { 0.0 } else { f1 * self.d1 };
        let mut d2 = if self.d1 == 0.0 {
            0.0
        } else {
            f2 * self.d1 * self.d1
        };
        if self.d2 != 0.0 {
            d2 += f1 * self.d2;
        }
        Self { v: f0, d1, d2 }
    }

    fn apply(self, f: Func) -> Self {
        let (f0, f1, f2) = f.eval2(self.v);
        self.chain(f0, f1, f2)
    }

    fn powc(self, c: f64) -> Self {
        if c == 0.0 {
            return Self::constant(1.0);
        }
        let f0 = powf(self.v, c);
        let f1 = if c == 1.0 {
            1.0
        } else {
            c * powf(self.v, c - 1.0)
        };
        let f2 = if c == 1.0 {
            0.0
        } else if c == 2.0 {
            2.0
        } else {
            c * (c - 1.0) * powf(self.v, c - 2.0)
        };
        self.chain(f0, f1, f2)
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Var,
    Slot(usize),
    Neg(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    PowConst(usize, f64),
    Pow(usize, usize),
    Call(Func, usize),
}

/// An expression flattened for repeated evaluation and reverse-mode
/// differentiation with respect to its slots.
#[derive(Debug, Clone)]
pub struct Tape {
    ops: Vec<Op>,
    slots: Vec<Slot>,
}

impl Tape {
    pub fn compile(e: &Expr) -> Self {
        let mut t = Tape {
            ops: Vec::new(),
            slots: Vec::new(),
        };
        t.emit(e);
        t
    }

    fn emit(&mut self, e: &Expr) -> usize {
        let op = match e {
            Expr::Const(v) => Op::Const(*v),
            Expr::Var => Op::Var,
            Expr::Slot(s) => {
                let k = match self.slots.iter().position(|x| x == s) {
                    Some(k) => k,
                    None => {
                        self.slots.push(*s);
                        self.slots.len() - 1
                    }
                };
                Op::Slot(k)
            }
            Expr::Neg(a) => Op::Neg(self.emit(a)),
            Expr::Bin(op, a, b) => {
                if let (BinOp::Pow, Expr::Const(c)) = (op, b.as_ref()) {
                    let a = self.emit(a);
                    Op::PowConst(a, *c)
                } else {
                    let a = self.emit(a);
                    let b = self.emit(b);
                    match op {
                        BinOp::Add => Op::Add(a, b),
                        BinOp::Sub => Op::Sub(a, b),
                        BinOp::Mul => Op::Mul(a, b),
                        BinOp::Div => Op::Div(a, b),
                        BinOp::Pow => Op::Pow(a, b),
                    }
                }
            }
            Expr::Call(f, a) => Op::Call(*f, self.emit(a)),
        };
        self.ops.push(op);
        self.ops.len() - 1
    }

    /// Distinct slots, in the order their values are expected.
    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    /// Evaluates into `vals` (resized as needed) and returns the result.
    pub fn forward(&self, t: f64, slot_values: &[f64], vals: &mut Vec<f64>) -> f64 {
        vals.clear();
        for op in &self.ops {
            let v = match *op {
                Op::Const(c) => c,
                Op::Var => t,
                Op::Slot(k) => slot_values[k],
                Op::Neg(a) => -vals[a],
                Op::Add(a, b) => vals[a] + vals[b],
                Op::Sub(a, b) => vals[a] - vals[b],
                Op::Mul(a, b) => vals[a] * vals[b],
                Op::Div(a, b) => vals[a] / vals[b],
                Op::PowConst(a, c) => powf(vals[a], c),
                Op::Pow(a, b) => vals[a].powf(vals[b]),
                Op::Call(f, a) => f.eval(vals[a]),
            };
            vals.push(v);
        }
        *vals.last().expect("non-empty tape")
    }

    /// Adds `seed * d(result)/d(slot_k)` into `slot_adjoints[k]`, using the
    /// values recorded by the last [`Tape::forward`].
    pub fn backward(&self, vals: &[f64], seed: f64, adj: &mut Vec<f64>, slot_adjoints: &mut [f64]) {
        adj.clear();
        adj.resize(self.ops.len(), 0.0);
        let last = self.ops.len() - 1;
        adj[last] = seed;
        for i in (0..self.ops.len()).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            match self.ops[i] {
                Op::Const(_) | Op::Var => {}
                Op::Slot(k) => slot_adjoints[k] += g,
                Op::Neg(a) => adj[a] -= g,
                Op::Add(a, b) => {
                    adj[a] += g;
                    adj[b] += g;
                }
                Op::Sub(a, b) => {
                    adj[a] += g;
                    adj[b] -= g;
                }
                Op::Mul(a, b) => {
                    adj[a] += g * vals[b];
                    adj[b] += g * vals[a];
                }
                Op::Div(a, b) => {
                    adj[a] += g / vals[b];
                    adj[b] -= g * vals[i] / vals[b];
                }
                Op::PowConst(a, c) => {
                    if c != 0.0 {
                        adj[a] += g * c * powf(vals[a], c - 1.0);
                    }
                }
                Op::Pow(a, b) => {
                    adj[a] += g * vals[b] * vals[a].powf(vals[b] - 1.0);
                    adj[b] += g * vals[i] * vals[a].ln();
                }
                Op::Call(f, a) => {
                    let (_, d, _) = f.eval2(vals[a]);
                    adj[a] += g * d;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn states() -> Vec<String> {
        vec!["y".to_string(), "z".to_string()]
    }

    fn parse_t(src: &str) -> Result<Expr, ExprError> {
        let defs = HashMap::new();
        let st = states();
        let mut scope = Scope {
            variable: "t",
            states: &st,
            definitions: &defs,
            allow_states: false,
            delays: None,
        };
        parse_expr(src, &mut scope)
    }

    fn parse_eq(src: &str, delays: &mut Vec<Expr>) -> Result<Expr, ExprError> {
        let defs = HashMap::new();
        let st = states();
        let mut scope = Scope {
            variable: "t",
            states: &st,
            definitions: &defs,
            allow_states: true,
            delays: Some(delays),
        };
        parse_equation(src, &mut scope)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(parse_t("1 + 2 * 3").unwrap(), Expr::Const(7.0));
        assert_eq!(parse_t("-2^2").unwrap(), Expr::Const(-4.0));
        assert_eq!(parse_t("2^3^2").unwrap(), Expr::Const(512.0));
        assert_eq!(parse_t("2**-1").unwrap(), Expr::Const(0.5));
        assert_eq!(parse_t("8 / 4 / 2").unwrap(), Expr::Const(1.0));
        assert_eq!(parse_t("1e-3 * 2E2").unwrap(), Expr::Const(0.2));
        assert_eq!(parse_t(".5").unwrap(), Expr::Const(0.5));
    }

    #[test]
    fn functions_and_constants() {
        let e = parse_t("sqrt(pi) * gamma(0.5) / pi").unwrap();
        let Expr::Const(v) = e else { panic!() };
        assert!((v - 1.0).abs() < 1e-15);
        let e = parse_t("sec(t)^2 - tan(t)^2").unwrap();
        assert!((e.eval(0.7) - 1.0).abs() < 1e-14);
        assert!((parse_t("ln(e)").unwrap().eval(0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn negative_base_integer_power() {
        assert_eq!(parse_t("t^3").unwrap().eval(-0.5), -0.125);
    }

    #[test]
    fn state_slots_and_delays() {
        let mut delays = Vec::new();
        let e = parse_eq(
            "D(y) = y(0.5*t) + y'(sqrt(t)) - z'' + y(t/2) + y(t)",
            &mut delays,
        )
        .unwrap();
        assert_eq!(delays.len(), 3);
        let mut slots = Vec::new();
        e.slots(&mut slots);
        assert!(slots.contains(&Slot::Leading { state: 0 }));
        assert!(slots.contains(&Slot::State {
            state: 0,
            deriv: 0,
            delay: Some(0)
        }));
        assert!(slots.contains(&Slot::State {
            state: 0,
            deriv: 1,
            delay: Some(1)
        }));
        assert!(slots.contains(&Slot::State {
            state: 1,
            deriv: 2,
            delay: None
        }));
        // y(0.5*t) and y(t/2) are not folded into one delay; y(t) is no delay.
        assert_eq!(
            slots
                .iter()
                .filter(|s| matches!(
                    s,
                    Slot::State {
                        delay: None,
                        state: 0,
                        deriv: 0
                    }
                ))
                .count(),
            1
        );
    }

    #[test]
    fn errors_carry_columns() {
        let err = parse_t("1 + * 2").unwrap_err();
        assert_eq!(err.column, 5);
        assert!(parse_t("y + 1")
            .unwrap_err()
            .message
            .contains("cannot appear"));
        assert!(parse_t("foo(t)").unwrap_err().message.contains("unknown"));
        assert!(parse_t("gamma(t)")
            .unwrap_err()
            .message
            .contains("constant"));
        assert!(parse_t("(1 + 2").is_err());
        assert!(parse_t("1 $ 2").is_err());
        assert!(parse_t("t'").is_err());
        let mut d = Vec::new();
        assert!(parse_eq("y(z) = 1", &mut d).is_err());
        assert!(parse_eq("y''' = 1", &mut d).is_err());
        assert!(parse_eq("D(q) = 1", &mut d).is_err());
        assert!(parse_eq("y = 1 = 2", &mut d).is_err());
    }

    #[test]
    fn taylor_matches_closed_form() {
        let e = parse_t("t*sin(t) + exp(-t)/ (1 + t^2) + sqrt(t) * t^2.5").unwrap();
        let t = 0.8f64;
        let j = e.eval_taylor(t);
        let h = 1e-4;
        let fd1 = (e.eval(t + h) - e.eval(t - h)) / (2.0 * h);
        let fd2 = (e.eval(t + h) - 2.0 * e.eval(t) + e.eval(t - h)) / (h * h);
        assert!((j.v - e.eval(t)).abs() < 1e-15);
        assert!((j.d1 - fd1).abs() < 1e-7);
        assert!((j.d2 - fd2).abs() < 1e-5);
        let p = parse_t("t^2.5").unwrap().eval_taylor(0.0);
        assert_eq!((p.v, p.d1, p.d2), (0.0, 0.0, 0.0));
    }

    #[test]
    fn tape_gradient_matches_finite_differences() {
        let mut delays = Vec::new();
        let e = parse_eq(
            "D(y) * z = y^2 * sin(z) - exp(y(t/3)) / (1 + z^2) + y^z",
            &mut delays,
        )
        .unwrap();
        let tape = Tape::compile(&e);
        let n = tape.slots().len();
        let x: Vec<f64> = (0..n).map(|k| 0.3 + 0.2 * k as f64).collect();
        let mut vals = Vec::new();
        let mut adj = Vec::new();
        let base = tape.forward(0.4, &x, &mut vals);
        let slot_of = |s: Slot| x[tape.slots().iter().position(|q| *q == s).unwrap()];
        assert!((base - e.eval_with(0.4, &slot_of)).abs() < 1e-15);
        let mut grad = vec![0.0; n];
        tape.backward(&vals, 1.0, &mut adj, &mut grad);
        for k in 0..n {
            let h = 1e-6;
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let fd =
                (tape.forward(0.4, &xp, &mut vals) - tape.forward(0.4, &xm, &mut vals)) / (2.0 * h);
            assert!((grad[k] - fd).abs() < 1e-8, "slot {k}");
        }
    }
}

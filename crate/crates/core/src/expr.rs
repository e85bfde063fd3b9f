//! A small arithmetic expression language for user-defined flows and functionals.
//!
//! Grammar (precedence low to high):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Functions: `pow(a, b)`, `exp`, `log`, `sin`, `cos`, `sqrt`. The constant `pi`
//! is predefined. Variables are resolved against a caller-supplied list of names
//! at parse time, so evaluation is a slice lookup.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A parsed expression bound to a fixed variable list.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    source: String,
    arity: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
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
            let v: f64 = text
                .parse()
                .map_err(|_| Error::Expr(format!("bad number `{text}` at column {}", start + 1)))?;
            out.push((start, Tok::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else if "+-*/^(),".contains(c) {
            out.push((i, Tok::Op(c)));
            i += 1;
        } else {
            return Err(Error::Expr(format!("unexpected character `{c}` at column {}", i + 1)));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    vars: &'a [&'a str],
    src_len: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn column(&self) -> usize {
        self.toks.get(self.pos).map(|(c, _)| c + 1).unwrap_or(self.src_len + 1)
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, op: char) -> Result<()> {
        if self.eat(op) {
            Ok(())
        } else {
            Err(Error::Expr(format!("expected `{op}` at column {}", self.column())))
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat('-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.eat('^') {
            // Right associative, binds tighter than unary minus on the left: -x^2 = -(x^2).
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn args(&mut self) -> Result<Vec<Node>> {
        self.expect('(')?;
        let mut args = vec![self.expr()?];
        while self.eat(',') {
            args.push(self.expr()?);
        }
        self.expect(')')?;
        Ok(args)
    }

    fn atom(&mut self) -> Result<Node> {
        let col = self.column();
        match self.toks.get(self.pos).cloned() {
            Some((_, Tok::Num(v))) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Some((_, Tok::Op('('))) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some((_, Tok::Ident(name))) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::Op('(')) {
                    let mut args = self.args()?;
                    let want = if name == "pow" { 2 } else { 1 };
                    if args.len() != want {
                        return Err(Error::Expr(format!(
                            "`{name}` takes {want} argument(s), got {} at column {col}",
                            args.len()
                        )));
                    }
                    let f = match name.as_str() {
                        "pow" => {
                            let b = args.pop().unwrap();
                            let a = args.pop().unwrap();
                            return Ok(Node::Pow(Box::new(a), Box::new(b)));
                        }
                        "exp" => Func::Exp,
                        "log" => Func::Log,
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "sqrt" => Func::Sqrt,
                        _ => {
                            return Err(Error::Expr(format!("unknown function `{name}` at column {col}")))
                        }
                    };
                    return Ok(Node::Call(f, Box::new(args.pop().unwrap())));
                }
                if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Node::Var(i));
                }
                if name == "pi" {
                    return Ok(Node::Num(std::f64::consts::PI));
                }
                Err(Error::Expr(format!("unknown variable `{name}` at column {col}")))
            }
            Some((_, Tok::Op(c))) => Err(Error::Expr(format!("unexpected `{c}` at column {col}"))),
            None => Err(Error::Expr(format!("unexpected end of expression at column {col}"))),
        }
    }
}

fn eval(n: &Node, vars: &[f64]) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::Var(i) => vars[*i],
        Node::Neg(a) => -eval(a, vars),
        Node::Add(a, b) => eval(a, vars) + eval(b, vars),
        Node::Sub(a, b) => eval(a, vars) - eval(b, vars),
        Node::Mul(a, b) => eval(a, vars) * eval(b, vars),
        Node::Div(a, b) => eval(a, vars) / eval(b, vars),
        Node::Pow(a, b) => {
            let (x, y) = (eval(a, vars), eval(b, vars));
            if y == 2.0 {
                x * x
            } else if y.fract() == 0.0 && y.abs() < 64.0 {
                x.powi(y as i32)
            } else {
                x.powf(y)
            }
        }
        Node::Call(f, a) => {
            let x = eval(a, vars);
            match f {
                Func::Exp => x.exp(),
                Func::Log => x.ln(),
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Sqrt => x.sqrt(),
            }
        }
    }
}

impl Expr {
    /// Parses `src`, resolving identifiers against `vars` (position = slot in the
    /// evaluation slice).
    pub fn parse(src: &str, vars: &[&str]) -> Result<Self> {
        let toks = tokenize(src)?;
        let mut p = Parser { toks, pos: 0, vars, src_len: src.len() };
        let root = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(Error::Expr(format!("trailing input at column {}", p.column())));
        }
        Ok(Self { root, source: src.to_string(), arity: vars.len() })
    }

    pub fn eval(&self, vars: &[f64]) -> f64 {
        debug_assert_eq!(vars.len(), self.arity);
        eval(&self.root, vars)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// True when the expression does not reference variable `i`.
    pub fn independent_of(&self, i: usize) -> bool {
        fn walk(n: &Node, i: usize) -> bool {
            match n {
                Node::Num(_) => true,
                Node::Var(j) => *j != i,
                Node::Neg(a) | Node::Call(_, a) => walk(a, i),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                    walk(a, i) && walk(b, i)
                }
            }
        }
        walk(&self.root, i)
    }
}

/// Variable names `t, x1, …, xd`.
pub fn flow_vars(dim: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=dim).map(|i| format!("x{i}")))
        .collect()
}

/// Variable names `p1_1, …, p1_d, p2_1, …` for the slots of a cylindrical functional.
pub fn slot_vars(slots: usize, dim: usize) -> Vec<String> {
    (1..=slots)
        .flat_map(|i| (1..=dim).map(move |j| format!("p{i}_{j}")))
        .collect()
}

//! A small arithmetic-expression language for user-supplied coefficient laws.
//!
//! Grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | 'pi' | var | func '(' expr ')' | '(' expr ')'
//! var    := 's' | 'p'<k> | 'x'<k>
//! func   := 'sin' | 'cos' | 'exp' | 'tanh'
//! ```

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Var {
    S,
    P(usize),
    X(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A parsed expression in the variables `s`, `p1..pM`, `x1..x3`.
#[derive(Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
    max_p: usize,
    max_x: usize,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
    }
}

impl Expr {
    pub fn parse(source: &str) -> Result<Self> {
        let mut parser = Parser { src: source.as_bytes(), pos: 0 };
        let root = parser.expr()?;
        parser.skip_ws();
        if parser.pos != parser.src.len() {
            return Err(parser.error("unexpected trailing input"));
        }
        let (mut max_p, mut max_x) = (0, 0);
        visit_vars(&root, &mut |v| match v {
            Var::P(k) => max_p = max_p.max(k),
            Var::X(k) => max_x = max_x.max(k),
            Var::S => {}
        });
        Ok(Self { source: source.to_string(), root, max_p, max_x })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Highest species index referenced (1-based; 0 if none).
    pub fn species_used(&self) -> usize {
        self.max_p
    }

    /// Highest spatial index referenced (1-based; 0 if none).
    pub fn space_used(&self) -> usize {
        self.max_x
    }

    /// Evaluates with missing `p`/`x` entries read as zero.
    pub fn eval(&self, p: &[f64], s: f64, x: &[f64]) -> f64 {
        eval(&self.root, p, s, x)
    }
}

fn visit_vars(node: &Node, f: &mut impl FnMut(Var)) {
    match node {
        Node::Num(_) => {}
        Node::Var(v) => f(*v),
        Node::Neg(a) | Node::Call(_, a) => visit_vars(a, f),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            visit_vars(a, f);
            visit_vars(b, f);
        }
    }
}

fn eval(node: &Node, p: &[f64], s: f64, x: &[f64]) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::Var(Var::S) => s,
        Node::Var(Var::P(k)) => p.get(k - 1).copied().unwrap_or(0.0),
        Node::Var(Var::X(k)) => x.get(k - 1).copied().unwrap_or(0.0),
        Node::Neg(a) => -eval(a, p, s, x),
        Node::Add(a, b) => eval(a, p, s, x) + eval(b, p, s, x),
        Node::Sub(a, b) => eval(a, p, s, x) - eval(b, p, s, x),
        Node::Mul(a, b) => eval(a, p, s, x) * eval(b, p, s, x),
        Node::Div(a, b) => eval(a, p, s, x) / eval(b, p, s, x),
        Node::Pow(a, b) => eval(a, p, s, x).powf(eval(b, p, s, x)),
        Node::Call(func, a) => {
            let v = eval(a, p, s, x);
            match func {
                Func::Sin => v.sin(),
                Func::Cos => v.cos(),
                Func::Exp => v.exp(),
                Func::Tanh => v.tanh(),
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> Error {
        Error::Expression { offset: self.pos, message: message.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        let base = self.atom()?;
        if self.eat(b'^') {
            return Ok(Node::Pow(Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected ')'"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.word(),
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Node> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            let mark = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits {
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>().map(Node::Num).map_err(|_| Error::Expression {
            offset: start,
            message: format!("malformed number '{text}'"),
        })
    }

    fn word(&mut self) -> Result<Node> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let word = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let func = match word {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "tanh" => Some(Func::Tanh),
            _ => None,
        };
        if let Some(func) = func {
            if !self.eat(b'(') {
                return Err(self.error("expected '(' after function name"));
            }
            let arg = self.expr()?;
            if !self.eat(b')') {
                return Err(self.error("expected ')'"));
            }
            return Ok(Node::Call(func, Box::new(arg)));
        }
        if word == "pi" {
            return Ok(Node::Num(std::f64::consts::PI));
        }
        if word == "s" {
            return Ok(Node::Var(Var::S));
        }
        let bad = || Error::Expression { offset: start, message: format!("unknown identifier '{word}'") };
        let (head, tail) = word.split_at(1);
        let k: usize = tail.parse().map_err(|_| bad())?;
        match head {
            "p" if k >= 1 => Ok(Node::Var(Var::P(k))),
            "x" if (1..=3).contains(&k) => Ok(Node::Var(Var::X(k))),
            _ => Err(bad()),
        }
    }
}

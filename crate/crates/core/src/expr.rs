//! A small closed grammar for spatial field specifications such as
//! `2+cos(pi*x)` or `2.0 + cos(pi*x)*cos(pi*y)`.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary ('*' unary)*
//! unary  := '-' unary | atom
//! atom   := number | 'pi' | 'x' | 'y' | ('cos' | 'sin') '(' expr ')' | '(' expr ')'
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    X,
    Y,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Cos(Box<Node>),
    Sin(Box<Node>),
}

impl Node {
    fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::X => x,
            Node::Y => y,
            Node::Neg(a) => -a.eval(x, y),
            Node::Add(a, b) => a.eval(x, y) + b.eval(x, y),
            Node::Sub(a, b) => a.eval(x, y) - b.eval(x, y),
            Node::Mul(a, b) => a.eval(x, y) * b.eval(x, y),
            Node::Cos(a) => a.eval(x, y).cos(),
            Node::Sin(a) => a.eval(x, y).sin(),
        }
    }

    fn uses_y(&self) -> bool {
        match self {
            Node::Const(_) | Node::X => false,
            Node::Y => true,
            Node::Neg(a) | Node::Cos(a) | Node::Sin(a) => a.uses_y(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) => a.uses_y() || b.uses_y(),
        }
    }

    fn is_const(&self) -> bool {
        match self {
            Node::Const(_) => true,
            Node::X | Node::Y => false,
            Node::Neg(a) | Node::Cos(a) | Node::Sin(a) => a.is_const(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) => a.is_const() && b.is_const(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push(Token::Plus);
                i += 1
            }
            '-' => {
                out.push(Token::Minus);
                i += 1
            }
            '*' => {
                out.push(Token::Star);
                i += 1
            }
            '(' => {
                out.push(Token::LParen);
                i += 1
            }
            ')' => {
                out.push(Token::RParen);
                i += 1
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                // optional exponent
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let v: f64 = text
                    .parse()
                    .map_err(|_| Error::Expression(format!("bad number `{text}` in `{src}`")))?;
                out.push(Token::Num(v));
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                out.push(Token::Ident(src[start..i].to_string()));
            }
            other => {
                return Err(Error::Expression(format!(
                    "unexpected character `{other}` in `{src}`"
                )))
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn err(&self, msg: &str) -> Error {
        Error::Expression(format!("{msg} in `{}`", self.src))
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.pos += 1;
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Token::Minus) => {
                    self.pos += 1;
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(Token::Star) = self.peek() {
            self.pos += 1;
            lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if let Some(Token::Minus) = self.peek() {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Node> {
        match self.next() {
            Some(Token::Num(v)) => Ok(Node::Const(v)),
            Some(Token::LParen) => {
                let inner = self.expr()?;
                match self.next() {
                    Some(Token::RParen) => Ok(inner),
                    _ => Err(self.err("missing `)`")),
                }
            }
            Some(Token::Ident(name)) => match name.as_str() {
                "pi" => Ok(Node::Const(std::f64::consts::PI)),
                "x" => Ok(Node::X),
                "y" => Ok(Node::Y),
                "cos" | "sin" => {
                    if self.next() != Some(Token::LParen) {
                        return Err(self.err(&format!("`{name}` must be followed by `(`")));
                    }
                    let arg = self.expr()?;
                    if self.next() != Some(Token::RParen) {
                        return Err(self.err("missing `)`"));
                    }
                    Ok(if name == "cos" {
                        Node::Cos(Box::new(arg))
                    } else {
                        Node::Sin(Box::new(arg))
                    })
                }
                other => Err(self.err(&format!("unknown identifier `{other}`"))),
            },
            Some(t) => Err(self.err(&format!("unexpected token {t:?}"))),
            None => Err(self.err("unexpected end of expression")),
        }
    }
}

/// A parsed field expression in `x` (and optionally `y`).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldExpr {
    source: String,
    root: Node,
}

impl FieldExpr {
    pub fn parse(src: &str) -> Result<Self> {
        let tokens = tokenize(src)?;
        if tokens.is_empty() {
            return Err(Error::Expression("empty expression".into()));
        }
        let mut p = Parser {
            tokens,
            pos: 0,
            src,
        };
        let root = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(p.err("trailing input"));
        }
        Ok(Self {
            source: src.trim().to_string(),
            root,
        })
    }

    pub fn constant(c: f64) -> Self {
        Self {
            source: format!("{c}"),
            root: Node::Const(c),
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.root.eval(x, y)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn depends_on_y(&self) -> bool {
        self.root.uses_y()
    }

    pub fn is_constant(&self) -> bool {
        self.root.is_const()
    }
}

impl fmt::Display for FieldExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl FromStr for FieldExpr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl Serialize for FieldExpr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for FieldExpr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        FieldExpr::parse(&s).map_err(serde::de::Error::custom)
    }
}

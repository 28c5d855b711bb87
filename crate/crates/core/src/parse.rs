//! Text parser for dispersion relations.
//!
//! Grammar (whitespace ignored):
//!
//! ```text
//! input  := expr | matrix
//! matrix := '[' row (',' row)* ']'
//! row    := '[' expr (',' expr)* ']'
//! expr   := term (('+' | '-') term)*
//! term   := unary ('*' unary)*
//! unary  := ('+' | '-') unary | power
//! power  := atom ('^' integer)?
//! atom   := number ['i'] | 'i' | 'k'digits | '(' expr ')'
//! ```
//!
//! Numbers accept an optional fraction and decimal exponent (`1.5e-3`).
//! Variables are `k0` (temporal) through `kd` (spatial).

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::matrix::PolyMatrix;
use crate::poly::CPoly;

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    dim: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, dim: usize) -> Self {
        Parser { src, bytes: src.as_bytes(), pos: 0, dim }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn syntax<T>(&self, offset: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax { offset, message: message.into() })
    }

    fn expect(&mut self, ch: u8) -> Result<()> {
        match self.peek() {
            Some(c) if c == ch => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => self.syntax(self.pos, format!("expected `{}`, found `{}`", ch as char, c as char)),
            None => self.syntax(self.pos, format!("expected `{}`, found end of input", ch as char)),
        }
    }

    fn expr(&mut self) -> Result<CPoly> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    acc = &acc + &rhs;
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    acc = &acc - &rhs;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<CPoly> {
        let mut acc = self.unary()?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            let rhs = self.unary()?;
            acc = &acc * &rhs;
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<CPoly> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(-&self.unary()?)
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<CPoly> {
        let base = self.atom()?;
        if self.peek() != Some(b'^') {
            return Ok(base);
        }
        self.pos += 1;
        self.skip_ws();
        let start = self.pos;
        if matches!(self.bytes.get(self.pos), Some(b'-')) {
            return Err(Error::BadExponent { offset: start, message: "negative exponent".into() });
        }
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return self.syntax(start, "expected a nonnegative integer exponent");
        }
        if matches!(self.bytes.get(self.pos), Some(b'.') | Some(b'e') | Some(b'E')) {
            return Err(Error::BadExponent { offset: start, message: "fractional exponent".into() });
        }
        let n: u32 = self.src[start..self.pos]
            .parse()
            .map_err(|_| Error::BadExponent { offset: start, message: "exponent too large".into() })?;
        Ok(base.pow(n))
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        let b = self.bytes;
        while self.pos < b.len() && b[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos < b.len() && b[self.pos] == b'.' {
            self.pos += 1;
            while self.pos < b.len() && b[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        if self.pos < b.len() && (b[self.pos] == b'e' || b[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < b.len() && (b[self.pos] == b'+' || b[self.pos] == b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < b.len() && b[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits {
                self.pos = save;
            }
        }
        self.src[start..self.pos]
            .parse::<f64>()
            .or_else(|_| self.syntax(start, "malformed number"))
    }

    fn atom(&mut self) -> Result<CPoly> {
        let dim = self.dim;
        let start = match self.peek() {
            Some(_) => self.pos,
            None => return self.syntax(self.pos, "unexpected end of input"),
        };
        let ch = self.bytes[start];
        if ch == b'(' {
            self.pos += 1;
            let inner = self.expr()?;
            self.expect(b')')?;
            return Ok(inner);
        }
        if ch.is_ascii_digit() || ch == b'.' {
            let value = self.number()?;
            if self.bytes.get(self.pos) == Some(&b'i') && !self.ident_continues(self.pos + 1) {
                self.pos += 1;
                return Ok(CPoly::constant(dim, Complex64::new(0.0, value)));
            }
            return Ok(CPoly::constant(dim, Complex64::new(value, 0.0)));
        }
        if ch.is_ascii_alphabetic() || ch == b'_' {
            while self.pos < self.bytes.len()
                && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
            {
                self.pos += 1;
            }
            let name = &self.src[start..self.pos];
            if name == "i" {
                return Ok(CPoly::constant(dim, Complex64::new(0.0, 1.0)));
            }
            if let Some(idx) = name.strip_prefix('k').and_then(|s| {
                if !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) {
                    s.parse::<usize>().ok()
                } else {
                    None
                }
            }) {
                if idx < dim {
                    return CPoly::var(dim, idx);
                }
            }
            return Err(Error::UnknownVariable { name: name.to_string(), offset: start });
        }
        self.syntax(start, format!("unexpected character `{}`", ch as char))
    }

    fn ident_continues(&self, pos: usize) -> bool {
        self.bytes
            .get(pos)
            .is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_')
    }

    fn finish(&mut self) -> Result<()> {
        match self.peek() {
            None => Ok(()),
            Some(c) => self.syntax(self.pos, format!("unexpected trailing `{}`", c as char)),
        }
    }

    fn matrix(&mut self) -> Result<Vec<Vec<CPoly>>> {
        self.expect(b'[')?;
        let mut rows = Vec::new();
        loop {
            self.expect(b'[')?;
            let mut row = vec![self.expr()?];
            while self.peek() == Some(b',') {
                self.pos += 1;
                row.push(self.expr()?);
            }
            self.expect(b']')?;
            rows.push(row);
            match self.peek() {
                Some(b',') => self.pos += 1,
                _ => break,
            }
        }
        self.expect(b']')?;
        Ok(rows)
    }
}

/// Parses a single polynomial expression in `d + 1` variables.
pub fn parse_poly(text: &str, d: usize) -> Result<CPoly> {
    let mut p = Parser::new(text, d + 1);
    let poly = p.expr()?;
    p.finish()?;
    Ok(poly)
}

/// Parses either a scalar expression (a 1×1 operator) or a bracketed
/// N×N matrix of expressions.
pub fn parse_operator(text: &str, d: usize) -> Result<PolyMatrix> {
    let mut p = Parser::new(text, d + 1);
    if p.peek() == Some(b'[') {
        let rows = p.matrix()?;
        p.finish()?;
        PolyMatrix::new(rows)
    } else {
        let poly = p.expr()?;
        p.finish()?;
        PolyMatrix::new(vec![vec![poly]])
    }
}

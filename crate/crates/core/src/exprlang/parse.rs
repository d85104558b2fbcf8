//! Lexer and recursive-descent parser for the expression grammar.

use std::fmt;

use crate::scalar::Scalar;

use super::Expr;

/// Syntax error with a 1-based source position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Number(f64),
    Var(usize),
    Func(Func),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Sqrt,
    Abs,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

type Spanned = (Tok, usize, usize);

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src: src.as_bytes(), pos: 0, line: 1, col: 1 }
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError { line: self.line, col: self.col, message: message.into() }
    }

    fn bump(&mut self) -> u8 {
        let c = self.src[self.pos];
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        c
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn tokenize(mut self) -> Result<Vec<Spanned>, ParseError> {
        let mut out = Vec::new();
        while let Some(c) = self.peek() {
            if c.is_ascii_whitespace() {
                self.bump();
                continue;
            }
            let (line, col) = (self.line, self.col);
            let tok = match c {
                b'+' => {
                    self.bump();
                    Tok::Plus
                }
                b'-' => {
                    self.bump();
                    Tok::Minus
                }
                b'*' => {
                    self.bump();
                    Tok::Star
                }
                b'/' => {
                    self.bump();
                    Tok::Slash
                }
                b'^' => {
                    self.bump();
                    Tok::Caret
                }
                b'(' => {
                    self.bump();
                    Tok::LParen
                }
                b')' => {
                    self.bump();
                    Tok::RParen
                }
                b'0'..=b'9' => self.number()?,
                b'a'..=b'z' | b'A'..=b'Z' => self.word()?,
                other => {
                    return Err(self.error(format!("unexpected character '{}'", other as char)))
                }
            };
            out.push((tok, line, col));
        }
        Ok(out)
    }

    fn number(&mut self) -> Result<Tok, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.bump();
        }
        if self.peek() == Some(b'.') {
            self.bump();
            if !matches!(self.peek(), Some(b'0'..=b'9')) {
                return Err(self.error("expected digits after decimal point"));
            }
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.bump();
            }
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            self.bump();
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.bump();
            }
            if !matches!(self.peek(), Some(b'0'..=b'9')) {
                return Err(self.error("expected digits in exponent"));
            }
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.bump();
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let value: f64 = text
            .parse()
            .map_err(|_| self.error(format!("invalid number literal '{text}'")))?;
        Ok(Tok::Number(value))
    }

    fn word(&mut self) -> Result<Tok, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'a'..=b'z' | b'A'..=b'Z' | b'0'..=b'9')) {
            self.bump();
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        match text {
            "sin" => Ok(Tok::Func(Func::Sin)),
            "cos" => Ok(Tok::Func(Func::Cos)),
            "sqrt" => Ok(Tok::Func(Func::Sqrt)),
            "abs" => Ok(Tok::Func(Func::Abs)),
            _ => {
                if let Some(digits) = text.strip_prefix('x') {
                    if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                        let index: usize = digits
                            .parse()
                            .map_err(|_| self.error(format!("variable index too large: {text}")))?;
                        if index == 0 {
                            return Err(self.error("variable indices start at x1"));
                        }
                        return Ok(Tok::Var(index));
                    }
                }
                Err(self.error(format!("unknown identifier '{text}'")))
            }
        }
    }
}

struct Parser<'a, T> {
    tokens: &'a [Spanned],
    pos: usize,
    dim: usize,
    end: (usize, usize),
    _marker: std::marker::PhantomData<T>,
}

impl<'a, T: Scalar> Parser<'a, T> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|(t, _, _)| t)
    }

    fn here(&self) -> (usize, usize) {
        self.tokens
            .get(self.pos)
            .map(|(_, l, c)| (*l, *c))
            .unwrap_or(self.end)
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        let (line, col) = self.here();
        ParseError { line, col, message: message.into() }
    }

    fn bump(&mut self) -> Option<&Tok> {
        let t = self.tokens.get(self.pos).map(|(t, _, _)| t);
        self.pos += 1;
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected {what}")))
        }
    }

    fn expr(&mut self) -> Result<Expr<T>, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    lhs = lhs + self.term()?;
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    lhs = lhs - self.term()?;
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr<T>, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    lhs = lhs * self.factor()?;
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    lhs = lhs / self.factor()?;
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr<T>, ParseError> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            let inner = self.factor()?;
            // Fold a unary minus on a literal so negative constants exist as
            // plain `Constant` nodes; this keeps print->parse structural.
            if let Expr::Constant(c) = inner {
                return Ok(Expr::Constant(-c));
            }
            return Ok(-inner);
        }
        let atom = self.atom()?;
        if self.peek() == Some(&Tok::Caret) {
            self.pos += 1;
            let exponent = self.integer()?;
            return Ok(atom.powi(exponent));
        }
        Ok(atom)
    }

    fn integer(&mut self) -> Result<i32, ParseError> {
        let mut sign = 1i64;
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            sign = -1;
        }
        match self.bump() {
            Some(Tok::Number(v)) => {
                if v.fract() != 0.0 || *v < 0.0 || *v > i32::MAX as f64 {
                    let msg = format!("exponent must be an integer, got {v}");
                    self.pos -= 1;
                    return Err(self.error(msg));
                }
                Ok((sign * *v as i64) as i32)
            }
            _ => {
                self.pos -= 1;
                Err(self.error("expected integer exponent after '^'"))
            }
        }
    }

    fn atom(&mut self) -> Result<Expr<T>, ParseError> {
        let err = self.error("expected a number, variable, function, or '('");
        match self.bump() {
            Some(Tok::Number(v)) => T::from_f64(*v)
                .map(Expr::Constant)
                .ok_or_else(|| ParseError {
                    line: err.line,
                    col: err.col,
                    message: format!("literal {v} is not representable in the scalar type"),
                }),
            Some(&Tok::Var(index)) => {
                if index > self.dim {
                    return Err(ParseError {
                        line: err.line,
                        col: err.col,
                        message: format!(
                            "variable x{index} out of range (state dimension {})",
                            self.dim
                        ),
                    });
                }
                Ok(Expr::Var(index))
            }
            Some(&Tok::Func(func)) => {
                self.expect(Tok::LParen, "'(' after function name")?;
                let arg = self.expr()?;
                self.expect(Tok::RParen, "closing ')'")?;
                Ok(match func {
                    Func::Sin => arg.sin(),
                    Func::Cos => arg.cos(),
                    Func::Sqrt => arg.sqrt(),
                    Func::Abs => arg.abs(),
                })
            }
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "closing ')'")?;
                Ok(inner)
            }
            _ => Err(err),
        }
    }
}

/// Parses `source` against state dimension `n`.
///
/// Variable indices above `n` and malformed syntax produce a [`ParseError`]
/// carrying the 1-based line/column of the offending token.
pub fn parse<T: Scalar>(source: &str, n: usize) -> Result<Expr<T>, ParseError> {
    let end_line = source.lines().count().max(1);
    let end_col = source.lines().last().map(|l| l.len() + 1).unwrap_or(1);
    let tokens = Lexer::new(source).tokenize()?;
    let mut parser = Parser::<T> {
        tokens: &tokens,
        pos: 0,
        dim: n,
        end: (end_line, end_col),
        _marker: std::marker::PhantomData,
    };
    let expr = parser.expr()?;
    if parser.pos != tokens.len() {
        return Err(parser.error("trailing input after expression"));
    }
    Ok(expr)
}

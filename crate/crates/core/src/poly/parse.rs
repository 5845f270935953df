//! Recursive-descent parser for the polynomial text grammar.
//!
//! ```text
//! expr   := [ '+' | '-' ] term { ( '+' | '-' ) term }
//! term   := factor { '*' factor }
//! factor := base [ '^' uint ]
//! base   := number | ident | '(' expr ')'
//! ```
//!
//! Whitespace is insignificant. `*` is mandatory between factors: `2x` is a
//! syntax error, not a product. Parenthesized expressions are expanded
//! eagerly, so the result is always a flat term map.

use super::{PolyError, Polynomial, VarContext};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Plus,
    Minus,
    Star,
    Caret,
    LParen,
    RParen,
    Number(f64),
    /// Raw digits, distinct from Number so exponents can insist on integers.
    Int(u32),
    Ident(String),
    End,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src: src.as_bytes(), pos: 0 }
    }

    fn next_token(&mut self) -> Result<(Tok, usize), PolyError> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        if self.pos >= self.src.len() {
            return Ok((Tok::End, start));
        }
        let c = self.src[self.pos];
        let simple = match c {
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(tok) = simple {
            self.pos += 1;
            return Ok((tok, start));
        }
        if c.is_ascii_digit() {
            let mut saw_dot = false;
            let mut saw_exp = false;
            while self.pos < self.src.len() {
                let b = self.src[self.pos];
                if b.is_ascii_digit() {
                    self.pos += 1;
                } else if b == b'.' && !saw_dot && !saw_exp {
                    saw_dot = true;
                    self.pos += 1;
                } else if (b == b'e' || b == b'E') && !saw_exp {
                    saw_exp = true;
                    self.pos += 1;
                    if self.pos < self.src.len()
                        && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-')
                    {
                        self.pos += 1;
                    }
                } else {
                    break;
                }
            }
            let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
            if !saw_dot && !saw_exp {
                if let Ok(k) = text.parse::<u32>() {
                    return Ok((Tok::Int(k), start));
                }
            }
            let value: f64 = text.parse().map_err(|_| PolyError::Parse {
                position: start,
                message: format!("malformed number `{text}`"),
            })?;
            return Ok((Tok::Number(value), start));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while self.pos < self.src.len()
                && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
            {
                self.pos += 1;
            }
            let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
            return Ok((Tok::Ident(text.to_string()), start));
        }
        Err(PolyError::Parse {
            position: start,
            message: format!("unexpected character `{}`", c as char),
        })
    }
}

struct Parser<'a> {
    ctx: &'a VarContext,
    lexer: Lexer<'a>,
    current: Tok,
    current_pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, ctx: &'a VarContext) -> Result<Self, PolyError> {
        let mut lexer = Lexer::new(src);
        let (current, current_pos) = lexer.next_token()?;
        Ok(Parser { ctx, lexer, current, current_pos })
    }

    fn advance(&mut self) -> Result<(), PolyError> {
        let (tok, pos) = self.lexer.next_token()?;
        self.current = tok;
        self.current_pos = pos;
        Ok(())
    }

    fn err(&self, message: impl Into<String>) -> PolyError {
        PolyError::Parse { position: self.current_pos, message: message.into() }
    }

    fn expr(&mut self) -> Result<Polynomial, PolyError> {
        let mut negate = false;
        if self.current == Tok::Plus {
            self.advance()?;
        } else if self.current == Tok::Minus {
            negate = true;
            self.advance()?;
        }
        let mut acc = self.term()?;
        if negate {
            acc = acc.neg();
        }
        loop {
            match self.current {
                Tok::Plus => {
                    self.advance()?;
                    let t = self.term()?;
                    acc = acc.add(&t).expect("same context");
                }
                Tok::Minus => {
                    self.advance()?;
                    let t = self.term()?;
                    acc = acc.sub(&t).expect("same context");
                }
                Tok::Number(_) | Tok::Int(_) | Tok::Ident(_) | Tok::LParen => {
                    return Err(self.err(
                        "expected `+`, `-`, or `*` (implicit multiplication is not supported)",
                    ));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Polynomial, PolyError> {
        let mut acc = self.factor()?;
        while self.current == Tok::Star {
            self.advance()?;
            let f = self.factor()?;
            acc = acc.mul(&f).expect("same context");
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<Polynomial, PolyError> {
        let base = self.base()?;
        if self.current != Tok::Caret {
            return Ok(base);
        }
        self.advance()?;
        match self.current {
            Tok::Int(k) => {
                self.advance()?;
                Ok(base.powi(k))
            }
            Tok::Minus => Err(self.err("exponent must be a nonnegative integer")),
            Tok::Number(_) => Err(self.err("exponent must be an integer literal")),
            _ => Err(self.err("expected integer exponent after `^`")),
        }
    }

    fn base(&mut self) -> Result<Polynomial, PolyError> {
        match self.current.clone() {
            Tok::Number(v) => {
                self.advance()?;
                Ok(Polynomial::constant(self.ctx, v))
            }
            Tok::Int(k) => {
                self.advance()?;
                Ok(Polynomial::constant(self.ctx, f64::from(k)))
            }
            Tok::Ident(name) => {
                let pos = self.current_pos;
                let index = self.ctx.index_of(&name).ok_or(PolyError::UnknownVariable {
                    name: name.clone(),
                    position: pos,
                })?;
                self.advance()?;
                Ok(Polynomial::variable(self.ctx, index))
            }
            Tok::LParen => {
                self.advance()?;
                let inner = self.expr()?;
                if self.current != Tok::RParen {
                    return Err(self.err("expected `)`"));
                }
                self.advance()?;
                Ok(inner)
            }
            Tok::End => Err(self.err("unexpected end of input")),
            _ => Err(self.err("expected a number, variable, or `(`")),
        }
    }
}

pub fn parse_polynomial(src: &str, ctx: &VarContext) -> Result<Polynomial, PolyError> {
    let mut parser = Parser::new(src, ctx)?;
    let poly = parser.expr()?;
    match parser.current {
        Tok::End => Ok(poly),
        Tok::RParen => Err(parser.err("unmatched `)`")),
        _ => Err(parser.err("trailing input after expression")),
    }
}

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{BinOp, Builtin, CmpOp, Expr};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("syntax error at byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseErrorKind {
    #[error("unexpected {found}, expected {expected}")]
    Unexpected { found: String, expected: &'static str },
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("`{function}` takes {expected} argument(s), got {found}")]
    Arity {
        function: &'static str,
        expected: String,
        found: usize,
    },
    #[error("malformed number `{0}`")]
    BadNumber(String),
    #[error("unexpected character `{0}`")]
    BadChar(char),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Semi,
    Op(BinOp),
    Cmp(CmpOp),
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(x) => alloc::format!("number {x}"),
            Tok::Ident(s) => alloc::format!("identifier `{s}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Op(op) => alloc::format!("`{op}`"),
            Tok::Cmp(op) => alloc::format!("`{op}`"),
            Tok::End => "end of input".into(),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut chars = src.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let mut end = i;
            let mut seen_exp = false;
            while end < bytes.len() {
                let b = bytes[end];
                if b.is_ascii_digit() || b == b'.' {
                    end += 1;
                } else if (b == b'e' || b == b'E') && !seen_exp {
                    seen_exp = true;
                    end += 1;
                    if end < bytes.len() && (bytes[end] == b'+' || bytes[end] == b'-') {
                        end += 1;
                    }
                } else {
                    break;
                }
            }
            let text = &src[i..end];
            let value: f64 = text.parse().map_err(|_| ParseError {
                offset: i,
                kind: ParseErrorKind::BadNumber(text.to_string()),
            })?;
            out.push((i, Tok::Num(value)));
            while chars.peek().is_some_and(|&(j, _)| j < end) {
                chars.next();
            }
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let mut end = i;
            while let Some(&(j, d)) = chars.peek() {
                if d.is_alphanumeric() || d == '_' {
                    end = j + d.len_utf8();
                    chars.next();
                } else {
                    break;
                }
            }
            out.push((i, Tok::Ident(src[i..end].to_string())));
            continue;
        }
        chars.next();
        let next_is = |chars: &mut core::iter::Peekable<core::str::CharIndices<'_>>, want: char| {
            if chars.peek().is_some_and(|&(_, d)| d == want) {
                chars.next();
                true
            } else {
                false
            }
        };
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            ';' => Tok::Semi,
            '+' => Tok::Op(BinOp::Add),
            '-' | '\u{2212}' => Tok::Op(BinOp::Sub),
            '*' | '\u{d7}' => Tok::Op(BinOp::Mul),
            '/' | '\u{f7}' => Tok::Op(BinOp::Div),
            '^' => Tok::Op(BinOp::Pow),
            '<' if next_is(&mut chars, '=') => Tok::Cmp(CmpOp::Le),
            '<' => Tok::Cmp(CmpOp::Lt),
            '>' if next_is(&mut chars, '=') => Tok::Cmp(CmpOp::Ge),
            '>' => Tok::Cmp(CmpOp::Gt),
            '=' => {
                next_is(&mut chars, '=');
                Tok::Cmp(CmpOp::Eq)
            }
            '!' if next_is(&mut chars, '=') => Tok::Cmp(CmpOp::Ne),
            '\u{2264}' => Tok::Cmp(CmpOp::Le),
            '\u{2265}' => Tok::Cmp(CmpOp::Ge),
            '\u{2260}' => Tok::Cmp(CmpOp::Ne),
            other => {
                return Err(ParseError {
                    offset: i,
                    kind: ParseErrorKind::BadChar(other),
                })
            }
        };
        out.push((i, tok));
    }
    out.push((src.len(), Tok::End));
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].1
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].1.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected<T>(&self, expected: &'static str) -> Result<T, ParseError> {
        Err(ParseError {
            offset: self.offset(),
            kind: ParseErrorKind::Unexpected {
                found: self.peek().describe(),
                expected,
            },
        })
    }

    fn expect(&mut self, tok: Tok, expected: &'static str) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.unexpected(expected)
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.sum()?;
        if let Tok::Cmp(op) = *self.peek() {
            self.bump();
            let rhs = self.sum()?;
            return Ok(Expr::Compare(op, Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        while let Tok::Op(op @ (BinOp::Add | BinOp::Sub)) = *self.peek() {
            self.bump();
            let rhs = self.product()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Tok::Op(op @ (BinOp::Mul | BinOp::Div)) = *self.peek() {
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Op(BinOp::Sub) {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if *self.peek() == Tok::Op(BinOp::Pow) {
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::binary(BinOp::Pow, base, exp));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let start = self.offset();
        match self.peek().clone() {
            Tok::Num(x) => {
                self.bump();
                Ok(Expr::Num(x))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if *self.peek() != Tok::LParen {
                    return Ok(Expr::Var(name));
                }
                self.bump();
                let mut args = Vec::new();
                if *self.peek() != Tok::RParen {
                    loop {
                        args.push(self.expr()?);
                        match self.peek() {
                            Tok::Comma | Tok::Semi => {
                                self.bump();
                            }
                            Tok::RParen => break,
                            _ => return self.unexpected("`,`, `;` or `)`"),
                        }
                    }
                }
                self.expect(Tok::RParen, "`)`")?;
                call(start, &name, args)
            }
            _ => self.unexpected("a number, identifier or `(`"),
        }
    }
}

fn call(offset: usize, name: &str, mut args: Vec<Expr>) -> Result<Expr, ParseError> {
    if name == "if" {
        if args.len() != 3 {
            return Err(ParseError {
                offset,
                kind: ParseErrorKind::Arity {
                    function: "if",
                    expected: "3".into(),
                    found: args.len(),
                },
            });
        }
        let b = args.pop().unwrap();
        let a = args.pop().unwrap();
        let c = args.pop().unwrap();
        return Ok(Expr::If(Box::new(c), Box::new(a), Box::new(b)));
    }
    let fun = Builtin::from_name(name).ok_or_else(|| ParseError {
        offset,
        kind: ParseErrorKind::UnknownFunction(name.into()),
    })?;
    let (lo, hi) = fun.arity();
    if args.len() < lo || hi.is_some_and(|h| args.len() > h) {
        let expected = match hi {
            Some(h) if h == lo => alloc::format!("{lo}"),
            Some(h) => alloc::format!("{lo} to {h}"),
            None => alloc::format!("at least {lo}"),
        };
        return Err(ParseError {
            offset,
            kind: ParseErrorKind::Arity {
                function: fun.name(),
                expected,
                found: args.len(),
            },
        });
    }
    Ok(Expr::Call(fun, args))
}

/// Parses one expression; the whole input must be consumed.
pub fn parse(src: &str) -> Result<Expr, ParseError> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return p.unexpected("an operator or end of input");
    }
    Ok(e)
}

//! Recursive-descent parser for reward expressions.
//!
//! Precedence, loosest to tightest: `or`, `and`, `not`, additive, and
//! multiplicative operators, unary minus, then calls and indexing. All
//! binary operators associate left.

use super::{BinOp, Expr, RewardError};
use crate::rmab::NUM_FEATURES;

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number { value: f64, integral: bool },
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    LBracket,
    RBracket,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

fn err(position: usize, message: impl Into<String>) -> RewardError {
    RewardError::Parse {
        position,
        message: message.into(),
    }
}

impl<'a> Lexer<'a> {
    fn tokenize(src: &'a str) -> Result<Vec<(Token, usize)>, RewardError> {
        let mut lexer = Lexer {
            src: src.as_bytes(),
            pos: 0,
        };
        let mut tokens = Vec::new();
        while let Some((token, at)) = lexer.next_token()? {
            tokens.push((token, at));
        }
        Ok(tokens)
    }

    fn next_token(&mut self) -> Result<Option<(Token, usize)>, RewardError> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos >= self.src.len() {
            return Ok(None);
        }
        let at = self.pos;
        let c = self.src[at];
        let token = match c {
            b'+' => Token::Plus,
            b'-' => Token::Minus,
            b'*' => Token::Star,
            b'/' => Token::Slash,
            b'(' => Token::LParen,
            b')' => Token::RParen,
            b'[' => Token::LBracket,
            b']' => Token::RBracket,
            b'&' | b'|' => {
                return Err(err(
                    at,
                    format!(
                        "bitwise operator '{}' is not allowed; use '{}' instead",
                        c as char,
                        if c == b'&' { "and" } else { "or" }
                    ),
                ));
            }
            b'0'..=b'9' => {
                let mut end = at;
                while end < self.src.len() && self.src[end].is_ascii_digit() {
                    end += 1;
                }
                let mut integral = true;
                if end < self.src.len() && self.src[end] == b'.' {
                    integral = false;
                    end += 1;
                    while end < self.src.len() && self.src[end].is_ascii_digit() {
                        end += 1;
                    }
                }
                let text = std::str::from_utf8(&self.src[at..end])
                    .expect("digits and dot are valid UTF-8");
                let value: f64 = text
                    .parse()
                    .map_err(|_| err(at, format!("invalid number '{text}'")))?;
                self.pos = end;
                return Ok(Some((Token::Number { value, integral }, at)));
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let mut end = at;
                while end < self.src.len()
                    && (self.src[end].is_ascii_alphanumeric() || self.src[end] == b'_')
                {
                    end += 1;
                }
                let text = std::str::from_utf8(&self.src[at..end])
                    .expect("identifier bytes are valid UTF-8");
                self.pos = end;
                return Ok(Some((Token::Ident(text.to_string()), at)));
            }
            other => {
                return Err(err(at, format!("unexpected character '{}'", other as char)));
            }
        };
        self.pos += 1;
        Ok(Some((token, at)))
    }
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    cursor: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.cursor).map(|(t, _)| t)
    }

    fn position(&self) -> usize {
        self.tokens
            .get(self.cursor)
            .map(|&(_, at)| at)
            .unwrap_or(self.len)
    }

    fn advance(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.cursor).map(|(t, _)| t.clone());
        self.cursor += 1;
        t
    }

    fn expect(&mut self, want: &Token, what: &str) -> Result<(), RewardError> {
        let at = self.position();
        match self.advance() {
            Some(ref t) if t == want => Ok(()),
            Some(t) => Err(err(at, format!("expected {what}, found {t:?}"))),
            None => Err(err(at, format!("expected {what}, found end of input"))),
        }
    }

    fn or_expr(&mut self) -> Result<Expr, RewardError> {
        let mut lhs = self.and_expr()?;
        while matches!(self.peek(), Some(Token::Ident(w)) if w == "or") {
            self.advance();
            let rhs = self.and_expr()?;
            lhs = Expr::Bin(BinOp::Or, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, RewardError> {
        let mut lhs = self.not_expr()?;
        while matches!(self.peek(), Some(Token::Ident(w)) if w == "and") {
            self.advance();
            let rhs = self.not_expr()?;
            lhs = Expr::Bin(BinOp::And, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, RewardError> {
        if matches!(self.peek(), Some(Token::Ident(w)) if w == "not") {
            self.advance();
            let inner = self.not_expr()?;
            return Ok(Expr::Not(Box::new(inner)));
        }
        self.additive()
    }

    fn additive(&mut self) -> Result<Expr, RewardError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Some(Token::Plus) => BinOp::Add,
                Some(Token::Minus) => BinOp::Sub,
                _ => break,
            };
            self.advance();
            let rhs = self.multiplicative()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn multiplicative(&mut self) -> Result<Expr, RewardError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Token::Star) => BinOp::Mul,
                Some(Token::Slash) => BinOp::Div,
                _ => break,
            };
            self.advance();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, RewardError> {
        if matches!(self.peek(), Some(Token::Minus)) {
            self.advance();
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, RewardError> {
        let at = self.position();
        match self.advance() {
            Some(Token::Number { value, .. }) => Ok(Expr::Number(value)),
            Some(Token::LParen) => {
                let inner = self.or_expr()?;
                self.expect(&Token::RParen, "')'")?;
                Ok(inner)
            }
            Some(Token::Ident(name)) => match name.as_str() {
                "state" => Ok(Expr::State),
                "agent_feats" | "feature" => {
                    self.expect(&Token::LBracket, "'['")?;
                    let idx_at = self.position();
                    let k = match self.advance() {
                        Some(Token::Number {
                            value,
                            integral: true,
                        }) if value.fract() == 0.0 && value >= 0.0 => value as usize,
                        _ => return Err(err(idx_at, "feature index must be a nonnegative integer")),
                    };
                    self.expect(&Token::RBracket, "']'")?;
                    if k >= NUM_FEATURES {
                        return Err(RewardError::IndexOutOfRange(k));
                    }
                    Ok(Expr::Feature(k))
                }
                "if_" => {
                    self.expect(&Token::LParen, "'('")?;
                    let inner = self.or_expr()?;
                    self.expect(&Token::RParen, "')'")?;
                    Ok(Expr::If(Box::new(inner)))
                }
                "and" | "or" | "not" => Err(err(at, format!("misplaced keyword '{name}'"))),
                other => Err(err(
                    at,
                    format!(
                        "unknown name '{other}'; only state, agent_feats[..] and if_(..) are allowed"
                    ),
                )),
            },
            Some(t) => Err(err(at, format!("unexpected token {t:?}"))),
            None => Err(err(at, "unexpected end of input")),
        }
    }
}

/// Parse a single reward expression.
pub fn parse(source: &str) -> Result<Expr, RewardError> {
    let tokens = Lexer::tokenize(source)?;
    let mut parser = Parser {
        tokens,
        cursor: 0,
        len: source.len(),
    };
    let expr = parser.or_expr()?;
    if parser.peek().is_some() {
        return Err(err(parser.position(), "trailing input after expression"));
    }
    Ok(expr)
}

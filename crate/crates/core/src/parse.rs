//! Infix expression parser.
//!
//! Grammar (loosest to tightest binding): `+ -`, `* /`, unary `-`, `^`
//! (right-associative, binds tighter than unary minus). Atoms are rationals
//! (integer, decimal, or scientific notation, converted exactly), `pi`,
//! coordinates declared in the context, and the functions `sin cos exp ln`.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::traits::{One, Pow, Zero};

use crate::coord::JetContext;
use crate::error::CoreError;
use crate::expr::{canonicalize, Expr, Rat, UnaryFn};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(Rat),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn error(&self, pos: usize, message: impl Into<String>) -> CoreError {
        CoreError::Syntax {
            position: pos,
            message: message.into(),
        }
    }

    fn tokenize(mut self) -> Result<Vec<(Token, usize)>, CoreError> {
        let mut out = Vec::new();
        while self.pos < self.src.len() {
            let start = self.pos;
            let c = self.src[self.pos];
            match c {
                b' ' | b'\t' | b'\n' | b'\r' => {
                    self.pos += 1;
                }
                b'+' => {
                    out.push((Token::Plus, start));
                    self.pos += 1;
                }
                b'-' => {
                    out.push((Token::Minus, start));
                    self.pos += 1;
                }
                b'*' => {
                    out.push((Token::Star, start));
                    self.pos += 1;
                }
                b'/' => {
                    out.push((Token::Slash, start));
                    self.pos += 1;
                }
                b'^' => {
                    out.push((Token::Caret, start));
                    self.pos += 1;
                }
                b'(' => {
                    out.push((Token::LParen, start));
                    self.pos += 1;
                }
                b')' => {
                    out.push((Token::RParen, start));
                    self.pos += 1;
                }
                b'0'..=b'9' | b'.' => {
                    out.push((Token::Num(self.number(start)?), start));
                }
                _ => {
                    // UTF-8 aware identifier scan so that `π` is accepted.
                    let rest = std::str::from_utf8(&self.src[self.pos..])
                        .map_err(|_| self.error(start, "invalid UTF-8"))?;
                    let ident: String = rest
                        .chars()
                        .take_while(|ch| ch.is_alphanumeric() || *ch == '_' || *ch == 'π')
                        .collect();
                    if ident.is_empty() {
                        return Err(self.error(start, format!("unexpected character `{}`", rest.chars().next().unwrap())));
                    }
                    self.pos += ident.len();
                    out.push((Token::Ident(ident), start));
                }
            }
        }
        Ok(out)
    }

    fn number(&mut self, start: usize) -> Result<Rat, CoreError> {
        let mut int_part = BigInt::zero();
        let mut frac_num = BigInt::zero();
        let mut frac_den = BigInt::one();
        let mut saw_digit = false;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            int_part = int_part * 10 + (self.src[self.pos] - b'0');
            saw_digit = true;
            self.pos += 1;
        }
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                frac_num = frac_num * 10 + (self.src[self.pos] - b'0');
                frac_den *= 10;
                saw_digit = true;
                self.pos += 1;
            }
        }
        if !saw_digit {
            return Err(self.error(start, "malformed number"));
        }
        let mut value = Rat::from_integer(int_part) + Rat::new(frac_num, frac_den);
        // Optional scientific-notation exponent, converted exactly.
        if self.pos < self.src.len() && (self.src[self.pos] == b'e' || self.src[self.pos] == b'E')
        {
            let save = self.pos;
            self.pos += 1;
            let mut neg = false;
            if self.pos < self.src.len() && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-')
            {
                neg = self.src[self.pos] == b'-';
                self.pos += 1;
            }
            if self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                let mut exp = 0u32;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    exp = exp * 10 + (self.src[self.pos] - b'0') as u32;
                    self.pos += 1;
                }
                let ten = Rat::from_integer(BigInt::from(10)).pow(exp as i32);
                value = if neg { value / ten } else { value * ten };
            } else {
                // Not an exponent after all (e.g. `2e` would be `2 * e`);
                // there is no `e` symbol, so leave it to the identifier path.
                self.pos = save;
            }
        }
        Ok(value)
    }
}

struct Parser<'a> {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    ctx: &'a JetContext,
    len: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn here(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(_, p)| *p)
            .unwrap_or(self.len)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn error(&self, message: impl Into<String>) -> CoreError {
        CoreError::Syntax {
            position: self.here(),
            message: message.into(),
        }
    }

    fn expr(&mut self) -> Result<Expr, CoreError> {
        let mut terms = vec![self.term()?];
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.bump();
                    terms.push(self.term()?);
                }
                Some(Token::Minus) => {
                    self.bump();
                    terms.push(Expr::Product(vec![Expr::int(-1), self.term()?]));
                }
                _ => break,
            }
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            Expr::Sum(terms)
        })
    }

    fn term(&mut self) -> Result<Expr, CoreError> {
        let mut factors = vec![self.unary()?];
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.bump();
                    factors.push(self.unary()?);
                }
                Some(Token::Slash) => {
                    self.bump();
                    let rhs = self.unary()?;
                    factors.push(Expr::Pow(Box::new(rhs), -BigRational::one()));
                }
                _ => break,
            }
        }
        Ok(if factors.len() == 1 {
            factors.pop().unwrap()
        } else {
            Expr::Product(factors)
        })
    }

    fn unary(&mut self) -> Result<Expr, CoreError> {
        if matches!(self.peek(), Some(Token::Minus)) {
            self.bump();
            let inner = self.unary()?;
            return Ok(Expr::Product(vec![Expr::int(-1), inner]));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, CoreError> {
        let base = self.atom()?;
        if matches!(self.peek(), Some(Token::Caret)) {
            self.bump();
            let pos = self.here();
            // The exponent is a unary expression so `x^-2` and `x^(1/2)` work;
            // it must reduce to an exact rational constant.
            let exp_expr = canonicalize(&self.unary()?);
            let exp = exp_expr.as_rational().cloned().ok_or_else(|| CoreError::Syntax {
                position: pos,
                message: "exponent must be an exact rational constant".to_string(),
            })?;
            return Ok(Expr::Pow(Box::new(base), exp));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, CoreError> {
        let pos = self.here();
        match self.bump() {
            Some(Token::Num(r)) => Ok(Expr::Rational(r)),
            Some(Token::LParen) => {
                let inner = self.expr()?;
                match self.bump() {
                    Some(Token::RParen) => Ok(inner),
                    _ => Err(CoreError::Syntax {
                        position: self.here(),
                        message: "expected `)`".to_string(),
                    }),
                }
            }
            Some(Token::Ident(name)) => {
                let f = match name.as_str() {
                    "sin" => Some(UnaryFn::Sin),
                    "cos" => Some(UnaryFn::Cos),
                    "exp" => Some(UnaryFn::Exp),
                    "ln" => Some(UnaryFn::Ln),
                    _ => None,
                };
                if let Some(f) = f {
                    if !matches!(self.peek(), Some(Token::LParen)) {
                        return Err(self.error(format!("expected `(` after `{name}`")));
                    }
                    self.bump();
                    let arg = self.expr()?;
                    match self.bump() {
                        Some(Token::RParen) => Ok(Expr::Func(f, Box::new(arg))),
                        _ => Err(CoreError::Syntax {
                            position: self.here(),
                            message: "expected `)`".to_string(),
                        }),
                    }
                } else if name == "pi" || name == "π" {
                    Ok(Expr::Pi)
                } else {
                    self.ctx.lookup(&name).map(Expr::Coord).map_err(|e| match e {
                        CoreError::UnknownCoordinate(n) => CoreError::Syntax {
                            position: pos,
                            message: format!("unknown coordinate `{n}`"),
                        },
                        other => other,
                    })
                }
            }
            Some(tok) => Err(CoreError::Syntax {
                position: pos,
                message: format!("unexpected token {tok:?}"),
            }),
            None => Err(CoreError::Syntax {
                position: pos,
                message: "unexpected end of input".to_string(),
            }),
        }
    }
}

/// Parse an infix expression over the context's coordinates and return the
/// canonicalized tree.
pub fn parse(text: &str, ctx: &JetContext) -> Result<Expr, CoreError> {
    let tokens = Lexer::new(text).tokenize()?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        ctx,
        len: text.len(),
    };
    let e = parser.expr()?;
    if parser.pos < parser.tokens.len() {
        return Err(parser.error("trailing input"));
    }
    Ok(canonicalize(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coord::JetContext;
    use crate::expr;

    fn ctx() -> JetContext {
        JetContext::new(2)
    }

    #[test]
    fn parses_zero() {
        assert_eq!(parse("0", &ctx()).unwrap(), Expr::zero());
    }

    #[test]
    fn wave_rhs_shape() {
        let e = parse("x1_zz - x2^3 + u", &ctx()).unwrap();
        assert!(matches!(e, Expr::Sum(ref ch) if ch.len() == 3));
    }

    #[test]
    fn power_binds_tighter_than_unary_minus() {
        let a = parse("-x1^2", &ctx()).unwrap();
        let b = parse("-(x1^2)", &ctx()).unwrap();
        assert_eq!(a, b);
        let c = parse("(-x1)^2", &ctx()).unwrap();
        assert_eq!(c, parse("x1^2", &ctx()).unwrap());
    }

    #[test]
    fn power_is_right_associative() {
        let a = parse("x1^2^3", &ctx()).unwrap();
        // 2^3 = 8, not (x1^2)^3 = x1^6 -- right associativity folds the
        // constant tower first.
        assert_eq!(a, expr::pow_int(Expr::Coord(ctx().lookup("x1").unwrap()), 8));
    }

    #[test]
    fn decimals_and_scientific_are_exact() {
        assert_eq!(parse("0.25", &ctx()).unwrap(), Expr::rational(1, 4));
        assert_eq!(parse("1e-4", &ctx()).unwrap(), Expr::rational(1, 10000));
        assert_eq!(parse("2.5e2", &ctx()).unwrap(), Expr::int(250));
    }

    #[test]
    fn syntax_error_is_positioned() {
        match parse("x1 + $", &ctx()) {
            Err(CoreError::Syntax { position, .. }) => assert_eq!(position, 5),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_coordinate_rejected() {
        assert!(parse("x3", &ctx()).is_err());
    }

    #[test]
    fn order_beyond_maximum_rejected() {
        assert!(matches!(
            parse("x1_zzzz", &ctx()),
            Err(CoreError::OrderOverflow { .. })
        ));
    }

    #[test]
    fn render_parse_round_trip() {
        for s in [
            "x1_zz - x2^3 + u",
            "x2/x1",
            "sin(2*pi*z)*cos(2*pi*t)",
            "-x2*x1^(-2)",
            "1/2*x1 + 3/4",
            "(x1 + x2)^(-1)",
            "exp(z)*ln(x1)",
        ] {
            let e = parse(s, &ctx()).unwrap();
            let r = e.to_string();
            let e2 = parse(&r, &ctx()).unwrap();
            assert_eq!(e, e2, "round trip failed for `{s}` -> `{r}`");
            assert_eq!(r, e2.to_string());
        }
    }
}

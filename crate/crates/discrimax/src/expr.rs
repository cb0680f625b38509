//! A small expression language for mean and variance functions of one
//! design variable `x` and parameters `p1, p2, ...`.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | base ('^' factor)?
//! base   := number | 'x' | 'p' digits | func '(' expr ')' | '(' expr ')'
//! func   := 'exp' | 'log' | 'sqrt'
//! ```
//!
//! `^` is right-associative and binds tighter than unary minus, so `-x^2`
//! is `-(x^2)`. `log` is the natural logarithm. Numbers are unsigned
//! decimal literals with an optional exponent; negative constants are
//! written with the unary minus. Parameter indices must be contiguous
//! starting at `p1`.

use crate::error::{Error, Result};
use std::fmt;

/// Binary operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Built-in unary functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
}

/// Parsed expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    X,
    /// 1-based parameter index.
    Param(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// A compiled scalar function of `(x, theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFn {
    ast: Expr,
    n_params: usize,
    source: String,
}

impl MeanFn {
    /// Parses `src` and validates that parameter indices are contiguous.
    pub fn parse(src: &str) -> Result<MeanFn> {
        let ast = Parser::new(src).parse()?;
        let mut seen = Vec::new();
        collect_params(&ast, &mut seen);
        let max = seen.iter().copied().max().unwrap_or(0);
        for k in 1..=max {
            if !seen.contains(&k) {
                return Err(Error::Arity { missing: k, max });
            }
        }
        Ok(MeanFn { ast, n_params: max, source: src.to_string() })
    }

    /// Number of parameters, i.e. the highest index used.
    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// The original source text.
    pub fn source(&self) -> &str {
        &self.source
    }

    /// Evaluates at `(x, theta)`. `theta` must have at least
    /// [`MeanFn::n_params`] entries; domain violations inside the tree
    /// (log of a negative number, ...) propagate as NaN/infinity by IEEE
    /// semantics.
    pub fn eval(&self, x: f64, theta: &[f64]) -> f64 {
        debug_assert!(theta.len() >= self.n_params, "theta too short for expression");
        eval(&self.ast, x, theta)
    }

    /// The expression tree.
    pub fn ast(&self) -> &Expr {
        &self.ast
    }
}

fn collect_params(e: &Expr, out: &mut Vec<usize>) {
    match e {
        Expr::Param(k) => {
            if !out.contains(k) {
                out.push(*k);
            }
        }
        Expr::Neg(a) | Expr::Call(_, a) => collect_params(a, out),
        Expr::Bin(_, a, b) => {
            collect_params(a, out);
            collect_params(b, out);
        }
        Expr::Num(_) | Expr::X => {}
    }
}

fn eval(e: &Expr, x: f64, theta: &[f64]) -> f64 {
    match e {
        Expr::Num(v) => *v,
        Expr::X => x,
        Expr::Param(k) => theta[*k - 1],
        Expr::Neg(a) => -eval(a, x, theta),
        Expr::Bin(op, a, b) => {
            let (a, b) = (eval(a, x, theta), eval(b, x, theta));
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => a / b,
                BinOp::Pow => a.powf(b),
            }
        }
        Expr::Call(f, a) => {
            let a = eval(a, x, theta);
            match f {
                Func::Exp => a.exp(),
                Func::Log => a.ln(),
                Func::Sqrt => a.sqrt(),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    X,
    Param(usize),
    Func(Func),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Eof,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    tok: Tok,
    tok_start: usize,
}

const BASE_EXPECTED: &str = "a number, 'x', a parameter 'p<k>', 'exp', 'log', 'sqrt', '(' or '-'";

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Parser<'a> {
        let mut p = Parser { src: src.as_bytes(), pos: 0, tok: Tok::Eof, tok_start: 0 };
        // The first advance can only fail on a malformed token; stash the
        // error by leaving Eof and re-raising in parse().
        p.tok_start = 0;
        p
    }

    fn parse(mut self) -> Result<Expr> {
        self.advance()?;
        let e = self.expr()?;
        if self.tok != Tok::Eof {
            return Err(self.err("an operator ('+', '-', '*', '/', '^') or end of input"));
        }
        Ok(e)
    }

    fn err(&self, expected: &str) -> Error {
        Error::Parse { offset: self.tok_start, expected: expected.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn advance(&mut self) -> Result<()> {
        self.skip_ws();
        self.tok_start = self.pos;
        if self.pos >= self.src.len() {
            self.tok = Tok::Eof;
            return Ok(());
        }
        let c = self.src[self.pos];
        self.tok = match c {
            b'+' => {
                self.pos += 1;
                Tok::Plus
            }
            b'-' => {
                self.pos += 1;
                Tok::Minus
            }
            b'*' => {
                self.pos += 1;
                Tok::Star
            }
            b'/' => {
                self.pos += 1;
                Tok::Slash
            }
            b'^' => {
                self.pos += 1;
                Tok::Caret
            }
            b'(' => {
                self.pos += 1;
                Tok::LParen
            }
            b')' => {
                self.pos += 1;
                Tok::RParen
            }
            b'0'..=b'9' | b'.' => self.lex_number()?,
            c if c.is_ascii_alphabetic() => self.lex_word()?,
            _ => return Err(self.err(BASE_EXPECTED)),
        };
        Ok(())
    }

    fn lex_number(&mut self) -> Result<Tok> {
        let start = self.pos;
        let mut saw_digit = false;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
            saw_digit = true;
        }
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
                saw_digit = true;
            }
        }
        if !saw_digit {
            return Err(self.err("a digit"));
        }
        if self.pos < self.src.len() && (self.src[self.pos] | 0x20) == b'e' {
            let mark = self.pos;
            self.pos += 1;
            if self.pos < self.src.len()
                && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-')
            {
                self.pos += 1;
            }
            let mut exp_digits = false;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
                exp_digits = true;
            }
            if !exp_digits {
                // Not an exponent after all (e.g. "2*exp(x)" never reaches
                // here, but "2e" alone would): roll back to treat `e...` as
                // a following word, which the parser will then reject with
                // a precise offset.
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let v: f64 = text.parse().map_err(|_| Error::Parse {
            offset: start,
            expected: "a valid numeric literal".to_string(),
        })?;
        Ok(Tok::Num(v))
    }

    fn lex_word(&mut self) -> Result<Tok> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let word = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        match word {
            "x" => Ok(Tok::X),
            "exp" => Ok(Tok::Func(Func::Exp)),
            "log" => Ok(Tok::Func(Func::Log)),
            "sqrt" => Ok(Tok::Func(Func::Sqrt)),
            _ => {
                if let Some(rest) = word.strip_prefix('p') {
                    if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                        let k: usize = rest.parse().map_err(|_| Error::Parse {
                            offset: start,
                            expected: "a parameter index that fits in usize".to_string(),
                        })?;
                        if k == 0 {
                            return Err(Error::Parse {
                                offset: start,
                                expected: "parameter indices starting at p1".to_string(),
                            });
                        }
                        return Ok(Tok::Param(k));
                    }
                }
                Err(Error::Parse { offset: start, expected: BASE_EXPECTED.to_string() })
            }
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.factor()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        if self.tok == Tok::Minus {
            self.advance()?;
            let inner = self.factor()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        let base = self.base()?;
        if self.tok == Tok::Caret {
            self.advance()?;
            let exponent = self.factor()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn base(&mut self) -> Result<Expr> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok(Expr::Num(v))
            }
            Tok::X => {
                self.advance()?;
                Ok(Expr::X)
            }
            Tok::Param(k) => {
                self.advance()?;
                Ok(Expr::Param(k))
            }
            Tok::Func(f) => {
                self.advance()?;
                if self.tok != Tok::LParen {
                    return Err(self.err("'(' after a function name"));
                }
                self.advance()?;
                let arg = self.expr()?;
                if self.tok != Tok::RParen {
                    return Err(self.err("')'"));
                }
                self.advance()?;
                Ok(Expr::Call(f, Box::new(arg)))
            }
            Tok::LParen => {
                self.advance()?;
                let e = self.expr()?;
                if self.tok != Tok::RParen {
                    return Err(self.err("')'"));
                }
                self.advance()?;
                Ok(e)
            }
            _ => Err(self.err(BASE_EXPECTED)),
        }
    }
}

// ---------------------------------------------------------------------------
// Printing: emits text that reparses to a structurally identical tree.
// ---------------------------------------------------------------------------

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
        Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
        Expr::Neg(_) => 3,
        Expr::Bin(BinOp::Pow, ..) => 4,
        Expr::Num(_) | Expr::X | Expr::Param(_) | Expr::Call(..) => 5,
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn paren(f: &mut fmt::Formatter<'_>, e: &Expr, need: bool) -> fmt::Result {
            if need {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::X => write!(f, "x"),
            Expr::Param(k) => write!(f, "p{k}"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                // The operand of unary minus is a factor: sums and products
                // must be parenthesised.
                paren(f, a, prec(a) <= 2)
            }
            Expr::Bin(op, a, b) => {
                let (sym, p) = match op {
                    BinOp::Add => ("+", 1),
                    BinOp::Sub => ("-", 1),
                    BinOp::Mul => ("*", 2),
                    BinOp::Div => ("/", 2),
                    BinOp::Pow => ("^", 4),
                };
                if *op == BinOp::Pow {
                    // The left side of '^' must be a base: anything but an
                    // atom or call needs parentheses. The right side is a
                    // factor, so only sums/products need them.
                    paren(f, a, prec(a) < 5)?;
                    write!(f, "{sym}")?;
                    paren(f, b, prec(b) <= 2)
                } else {
                    paren(f, a, prec(a) < p)?;
                    write!(f, " {sym} ")?;
                    // Left-associative grammar: an equal-precedence right
                    // child must be parenthesised to survive a round trip.
                    paren(f, b, prec(b) <= p)
                }
            }
            Expr::Call(func, a) => {
                let name = match func {
                    Func::Exp => "exp",
                    Func::Log => "log",
                    Func::Sqrt => "sqrt",
                };
                write!(f, "{name}({a})")
            }
        }
    }
}

impl fmt::Display for MeanFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.ast)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, x: f64, theta: &[f64]) -> f64 {
        MeanFn::parse(src).unwrap().eval(x, theta)
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(ev("2 + 3 * 4", 0.0, &[]), 14.0);
        assert_eq!(ev("2 - 3 - 4", 0.0, &[]), -5.0); // left-associative
        assert_eq!(ev("12 / 3 / 2", 0.0, &[]), 2.0);
        assert_eq!(ev("2^3^2", 0.0, &[]), 512.0); // right-associative
        assert_eq!(ev("-x^2", 3.0, &[]), -9.0); // '-' binds looser than '^'
        assert_eq!(ev("(-x)^2", 3.0, &[]), 9.0);
        assert_eq!(ev("2^-1", 0.0, &[]), 0.5);
        assert_eq!(ev("--4", 0.0, &[]), 4.0);
        assert_eq!(ev(" 1+2 *x ", 5.0, &[]), 11.0);
    }

    #[test]
    fn functions_and_parameters() {
        assert!((ev("exp(1)", 0.0, &[]) - std::f64::consts::E).abs() < 1e-15);
        assert!((ev("log(exp(2))", 0.0, &[]) - 2.0).abs() < 1e-15);
        assert_eq!(ev("sqrt(49)", 0.0, &[]), 7.0);
        assert_eq!(ev("p1*x + p2*x/(x + p3)", 2.0, &[1.0, 1.0, 1.0]), 2.0 + 2.0 / 3.0);
        assert_eq!(ev("p1*(1 - exp(-p2*x))", 0.0, &[3.0, 2.0]), 0.0);
        let m = MeanFn::parse("p1 + p2*exp(x) + p3*exp(-x)").unwrap();
        assert_eq!(m.n_params(), 3);
        assert!((m.eval(0.0, &[4.5, -1.5, -2.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn numeric_literals() {
        assert_eq!(ev("1.5e2", 0.0, &[]), 150.0);
        assert_eq!(ev("2.5E-1", 0.0, &[]), 0.25);
        assert_eq!(ev(".5", 0.0, &[]), 0.5);
        assert_eq!(ev("3.", 0.0, &[]), 3.0);
    }

    #[test]
    fn parse_errors_carry_offsets() {
        let e = MeanFn::parse("2+*3").unwrap_err();
        match e {
            Error::Parse { offset, .. } => assert_eq!(offset, 2),
            other => panic!("unexpected error {other:?}"),
        }
        let e = MeanFn::parse("exp 2").unwrap_err();
        match e {
            Error::Parse { offset, expected } => {
                assert_eq!(offset, 4);
                assert!(expected.contains('('), "expected message: {expected}");
            }
            other => panic!("unexpected error {other:?}"),
        }
        let e = MeanFn::parse("(1+2").unwrap_err();
        match e {
            Error::Parse { offset, expected } => {
                assert_eq!(offset, 4);
                assert!(expected.contains(')'));
            }
            other => panic!("unexpected error {other:?}"),
        }
        let e = MeanFn::parse("2 + y").unwrap_err();
        match e {
            Error::Parse { offset, .. } => assert_eq!(offset, 4),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(MeanFn::parse("").is_err());
    }

    #[test]
    fn skipped_parameter_indices_are_rejected() {
        let e = MeanFn::parse("p1 + p3").unwrap_err();
        match e {
            Error::Arity { missing, max } => {
                assert_eq!(missing, 2);
                assert_eq!(max, 3);
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert!(MeanFn::parse("p0").is_err());
        assert_eq!(MeanFn::parse("x + 1").unwrap().n_params(), 0);
    }

    #[test]
    fn display_round_trips_structurally() {
        for src in [
            "p1*x + p2*x/(x + p3)",
            "p1*(1 - exp(-p2*x))",
            "p1 + p2*exp(x) + p3*exp(-x)",
            "-x^2",
            "(-x)^2",
            "2^-3",
            "x - (1 - x)",
            "x/(2*(x+1))",
            "sqrt(x^2 + 1)",
        ] {
            let m = MeanFn::parse(src).unwrap();
            let printed = m.to_string();
            let re = MeanFn::parse(&printed).unwrap();
            assert_eq!(m.ast(), re.ast(), "{src} -> {printed}");
        }
    }
}

//! The expression language in which SODE components, constraints, fiber maps
//! and Lagrangians are written.
//!
//! Grammar (a public, versioned contract of the problem-file format):
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := atom ('^' factor)?          -- '^' right-associative
//! atom   := number | ident | ident '(' expr (',' expr)* ')'
//!         | '(' expr ')' | '-' atom
//! ```
//!
//! Precedence: unary minus > `^` > `*`,`/` > `+`,`-`, except that unary minus
//! binds looser than `^`, so `-x^2` parses as `-(x^2)`. Implicit
//! multiplication is rejected (`2x` is a parse error). Reserved function
//! names: `sin cos tan exp ln sqrt abs pow`. Identifiers match
//! `[A-Za-z_][A-Za-z0-9_]*`; numbers are decimal with optional exponent.
//!
//! Derivative-variable convention (a contract of the problem-file format, not
//! of this parser): a coordinate named `q` has velocity `qd`, acceleration
//! `qdd` where needed, and time is `t`.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, ParseError, Result};
use crate::jet::{seed, Jet1, Jet2, VarSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Pow,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "tan" => Some(Func::Tan),
            "exp" => Some(Func::Exp),
            "ln" => Some(Func::Ln),
            "sqrt" => Some(Func::Sqrt),
            "abs" => Some(Func::Abs),
            "pow" => Some(Func::Pow),
            _ => None,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Pow => "pow",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Func::Pow => 2,
            _ => 1,
        }
    }
}

/// Immutable expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Constant(f64),
    Variable(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(v) => write!(f, "number {v}"),
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Plus => write!(f, "'+'"),
            Tok::Minus => write!(f, "'-'"),
            Tok::Star => write!(f, "'*'"),
            Tok::Slash => write!(f, "'/'"),
            Tok::Caret => write!(f, "'^'"),
            Tok::LParen => write!(f, "'('"),
            Tok::RParen => write!(f, "')'"),
            Tok::Comma => write!(f, "','"),
            Tok::End => write!(f, "end of input"),
        }
    }
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && (self.src[self.pos] as char).is_whitespace() {
            self.pos += 1;
        }
    }

    fn next(&mut self) -> std::result::Result<(Tok, usize), ParseError> {
        self.skip_ws();
        let start = self.pos;
        if self.pos >= self.src.len() {
            return Ok((Tok::End, start));
        }
        let c = self.src[self.pos] as char;
        let tok = match c {
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '^' => Tok::Caret,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            _ if c.is_ascii_digit() || c == '.' => {
                return self.lex_number(start);
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let mut end = self.pos;
                while end < self.src.len() {
                    let ch = self.src[end] as char;
                    if ch.is_ascii_alphanumeric() || ch == '_' {
                        end += 1;
                    } else {
                        break;
                    }
                }
                let ident = std::str::from_utf8(&self.src[self.pos..end])
                    .unwrap()
                    .to_string();
                self.pos = end;
                return Ok((Tok::Ident(ident), start));
            }
            _ => {
                return Err(location_error(
                    self.src,
                    start,
                    format!("unexpected character `{c}`"),
                    vec![],
                ));
            }
        };
        self.pos += 1;
        Ok((tok, start))
    }

    fn lex_number(&mut self, start: usize) -> std::result::Result<(Tok, usize), ParseError> {
        let mut end = self.pos;
        while end < self.src.len() && (self.src[end] as char).is_ascii_digit() {
            end += 1;
        }
        if end < self.src.len() && self.src[end] == b'.' {
            end += 1;
            while end < self.src.len() && (self.src[end] as char).is_ascii_digit() {
                end += 1;
            }
        }
        if end < self.src.len() && (self.src[end] == b'e' || self.src[end] == b'E') {
            let mut e = end + 1;
            if e < self.src.len() && (self.src[e] == b'+' || self.src[e] == b'-') {
                e += 1;
            }
            let digits_start = e;
            while e < self.src.len() && (self.src[e] as char).is_ascii_digit() {
                e += 1;
            }
            if e > digits_start {
                end = e;
            }
        }
        let text = std::str::from_utf8(&self.src[start..end]).unwrap();
        let value: f64 = text.parse().map_err(|_| {
            location_error(self.src, start, format!("malformed number `{text}`"), vec![])
        })?;
        self.pos = end;
        // reject implicit multiplication like `2x`
        if self.pos < self.src.len() {
            let c = self.src[self.pos] as char;
            if c.is_ascii_alphabetic() || c == '_' {
                return Err(location_error(
                    self.src,
                    self.pos,
                    "implicit multiplication is not allowed; write `*` explicitly".into(),
                    vec!["operator".into()],
                ));
            }
        }
        Ok((Tok::Num(value), start))
    }
}

fn location_error(src: &[u8], offset: usize, message: String, expected: Vec<String>) -> ParseError {
    let mut line = 1;
    let mut col = 1;
    for &b in &src[..offset.min(src.len())] {
        if b == b'\n' {
            line += 1;
            col = 1;
        } else {
            col += 1;
        }
    }
    ParseError {
        offset,
        line,
        column: col,
        message,
        expected,
    }
}

struct Parser<'a> {
    src: &'a [u8],
    lexer: Lexer<'a>,
    current: Tok,
    current_offset: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> std::result::Result<Self, ParseError> {
        let mut lexer = Lexer::new(src);
        let (current, current_offset) = lexer.next()?;
        Ok(Parser {
            src: src.as_bytes(),
            lexer,
            current,
            current_offset,
        })
    }

    fn bump(&mut self) -> std::result::Result<(), ParseError> {
        let (tok, off) = self.lexer.next()?;
        self.current = tok;
        self.current_offset = off;
        Ok(())
    }

    fn err(&self, message: String, expected: Vec<String>) -> ParseError {
        location_error(self.src, self.current_offset, message, expected)
    }

    fn expect(&mut self, tok: Tok) -> std::result::Result<(), ParseError> {
        if self.current == tok {
            self.bump()
        } else {
            Err(self.err(
                format!("found {} where {} was expected", self.current, tok),
                vec![tok.to_string()],
            ))
        }
    }

    fn expr(&mut self) -> std::result::Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.current {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            self.bump()?;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> std::result::Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.current {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => break,
            };
            self.bump()?;
            let rhs = self.factor()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> std::result::Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.current == Tok::Caret {
            self.bump()?;
            let exp = self.factor()?; // right-associative
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> std::result::Result<Expr, ParseError> {
        match self.current.clone() {
            Tok::Num(v) => {
                self.bump()?;
                Ok(Expr::Constant(v))
            }
            Tok::Minus => {
                self.bump()?;
                let inner = self.atom()?;
                // unary minus binds looser than '^': -x^2 = -(x^2)
                if self.current == Tok::Caret {
                    self.bump()?;
                    let exp = self.factor()?;
                    return Ok(Expr::Neg(Box::new(Expr::Binary(
                        BinOp::Pow,
                        Box::new(inner),
                        Box::new(exp),
                    ))));
                }
                Ok(Expr::Neg(Box::new(inner)))
            }
            Tok::LParen => {
                self.bump()?;
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                self.bump()?;
                if self.current == Tok::LParen {
                    let func = Func::from_name(&name).ok_or_else(|| {
                        self.err(
                            format!("unknown function `{name}`"),
                            vec!["sin cos tan exp ln sqrt abs pow".into()],
                        )
                    })?;
                    self.bump()?;
                    let mut args = vec![self.expr()?];
                    while self.current == Tok::Comma {
                        self.bump()?;
                        args.push(self.expr()?);
                    }
                    self.expect(Tok::RParen)?;
                    if args.len() != func.arity() {
                        return Err(self.err(
                            format!(
                                "function `{}` expects {} argument(s), got {}",
                                func.name(),
                                func.arity(),
                                args.len()
                            ),
                            vec![],
                        ));
                    }
                    Ok(Expr::Call(func, args))
                } else {
                    Ok(Expr::Variable(name))
                }
            }
            other => Err(self.err(
                format!("found {other} where an expression was expected"),
                vec!["number".into(), "identifier".into(), "'('".into(), "'-'".into()],
            )),
        }
    }
}

/// Parse an expression source string into an immutable tree.
pub fn parse(source: &str) -> Result<Expr> {
    let mut parser = Parser::new(source).map_err(Error::Parse)?;
    let expr = parser.expr().map_err(Error::Parse)?;
    if parser.current != Tok::End {
        return Err(Error::Parse(parser.err(
            format!("trailing input starting with {}", parser.current),
            vec!["end of input".into()],
        )));
    }
    Ok(expr)
}

impl Expr {
    /// Evaluate as a second-order jet at `point` on `space`.
    pub fn eval_jet(&self, space: &VarSpace, point: &[f64]) -> Result<Jet2> {
        let jets = seed(space, point)?;
        self.eval_with_jets(space, &jets, point)
    }

    /// Evaluate with pre-seeded variable jets (avoids reseeding in sweeps).
    pub fn eval_with_jets(&self, space: &VarSpace, jets: &[Jet2], point: &[f64]) -> Result<Jet2> {
        let at = || space.describe_point(point);
        match self {
            Expr::Constant(v) => Ok(Jet2::constant(*v, space.dim())),
            Expr::Variable(name) => match space.index_of(name) {
                Some(i) => Ok(jets[i].clone()),
                None => Err(Error::UnboundVariable(name.clone())),
            },
            Expr::Neg(inner) => Ok(inner.eval_with_jets(space, jets, point)?.neg()),
            Expr::Binary(op, lhs, rhs) => {
                let a = lhs.eval_with_jets(space, jets, point)?;
                let b = rhs.eval_with_jets(space, jets, point)?;
                match op {
                    BinOp::Add => a.add(&b),
                    BinOp::Sub => a.sub(&b),
                    BinOp::Mul => a.mul(&b),
                    BinOp::Div => a.div(&b, at),
                    BinOp::Pow => a.pow(&b, at),
                }
            }
            Expr::Call(func, args) => {
                let a = args[0].eval_with_jets(space, jets, point)?;
                match func {
                    Func::Sin => Ok(a.sin()),
                    Func::Cos => Ok(a.cos()),
                    Func::Tan => Ok(a.tan()),
                    Func::Exp => Ok(a.exp()),
                    Func::Ln => a.ln(at),
                    Func::Sqrt => a.sqrt(at),
                    Func::Abs => a.abs(at),
                    Func::Pow => {
                        let b = args[1].eval_with_jets(space, jets, point)?;
                        a.pow(&b, at)
                    }
                }
            }
        }
    }

    /// First-order evaluation: value and gradient only. Considerably cheaper
    /// than [`Expr::eval_jet`] on wide variable spaces; used where no second
    /// derivative is needed (Hamiltonian vector fields, flow transport).
    pub fn eval_grad(&self, space: &VarSpace, point: &[f64]) -> Result<Jet1> {
        let at = || space.describe_point(point);
        let dim = space.dim();
        match self {
            Expr::Constant(v) => Ok(Jet1::constant(*v, dim)),
            Expr::Variable(name) => match space.index_of(name) {
                Some(i) => Ok(Jet1::variable(point[i], i, dim)),
                None => Err(Error::UnboundVariable(name.clone())),
            },
            Expr::Neg(inner) => Ok(inner.eval_grad(space, point)?.scale(-1.0)),
            Expr::Binary(op, lhs, rhs) => {
                let a = lhs.eval_grad(space, point)?;
                let b = rhs.eval_grad(space, point)?;
                match op {
                    BinOp::Add => Ok(a.add(&b)),
                    BinOp::Sub => Ok(a.sub(&b)),
                    BinOp::Mul => Ok(a.mul(&b)),
                    BinOp::Div => {
                        if b.value == 0.0 {
                            return Err(Error::Domain {
                                op: "division by",
                                value: 0.0,
                                at: at(),
                            });
                        }
                        Ok(a.mul(&chain1(&b, 1.0 / b.value, -1.0 / (b.value * b.value))))
                    }
                    BinOp::Pow => grad_pow(&a, &b, at),
                }
            }
            Expr::Call(func, args) => {
                let a = args[0].eval_grad(space, point)?;
                let x = a.value;
                match func {
                    Func::Sin => Ok(chain1(&a, x.sin(), x.cos())),
                    Func::Cos => Ok(chain1(&a, x.cos(), -x.sin())),
                    Func::Tan => {
                        let t = x.tan();
                        Ok(chain1(&a, t, 1.0 + t * t))
                    }
                    Func::Exp => Ok(chain1(&a, x.exp(), x.exp())),
                    Func::Ln => {
                        if x <= 0.0 {
                            return Err(Error::Domain {
                                op: "ln of",
                                value: x,
                                at: at(),
                            });
                        }
                        Ok(chain1(&a, x.ln(), 1.0 / x))
                    }
                    Func::Sqrt => {
                        if x <= 0.0 {
                            return Err(Error::Domain {
                                op: "sqrt of",
                                value: x,
                                at: at(),
                            });
                        }
                        let r = x.sqrt();
                        Ok(chain1(&a, r, 0.5 / r))
                    }
                    Func::Abs => {
                        if x == 0.0 {
                            return Err(Error::Domain {
                                op: "abs at",
                                value: 0.0,
                                at: at(),
                            });
                        }
                        Ok(chain1(&a, x.abs(), x.signum()))
                    }
                    Func::Pow => {
                        let b = args[1].eval_grad(space, point)?;
                        grad_pow(&a, &b, at)
                    }
                }
            }
        }
    }

    /// Plain value evaluation, no derivatives.
    pub fn eval_value(&self, space: &VarSpace, point: &[f64]) -> Result<f64> {
        let at = || space.describe_point(point);
        match self {
            Expr::Constant(v) => Ok(*v),
            Expr::Variable(name) => match space.index_of(name) {
                Some(i) => Ok(point[i]),
                None => Err(Error::UnboundVariable(name.clone())),
            },
            Expr::Neg(inner) => Ok(-inner.eval_value(space, point)?),
            Expr::Binary(op, lhs, rhs) => {
                let a = lhs.eval_value(space, point)?;
                let b = rhs.eval_value(space, point)?;
                Ok(match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(Error::Domain {
                                op: "division by",
                                value: 0.0,
                                at: at(),
                            });
                        }
                        a / b
                    }
                    BinOp::Pow => value_pow(a, b, at)?,
                })
            }
            Expr::Call(func, args) => {
                let a = args[0].eval_value(space, point)?;
                Ok(match func {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Tan => a.tan(),
                    Func::Exp => a.exp(),
                    Func::Ln => {
                        if a <= 0.0 {
                            return Err(Error::Domain {
                                op: "ln of",
                                value: a,
                                at: at(),
                            });
                        }
                        a.ln()
                    }
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(Error::Domain {
                                op: "sqrt of",
                                value: a,
                                at: at(),
                            });
                        }
                        a.sqrt()
                    }
                    Func::Abs => a.abs(),
                    Func::Pow => {
                        let b = args[1].eval_value(space, point)?;
                        value_pow(a, b, at)?
                    }
                })
            }
        }
    }

    /// Exactly the variable names occurring in the expression.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Constant(_) => {}
            Expr::Variable(name) => {
                out.insert(name.clone());
            }
            Expr::Neg(inner) => inner.collect_vars(out),
            Expr::Binary(_, lhs, rhs) => {
                lhs.collect_vars(out);
                rhs.collect_vars(out);
            }
            Expr::Call(_, args) => {
                for a in args {
                    a.collect_vars(out);
                }
            }
        }
    }
}

fn chain1(a: &Jet1, f0: f64, f1: f64) -> Jet1 {
    Jet1 {
        value: f0,
        grad: a.grad.iter().map(|g| f1 * g).collect(),
    }
}

fn grad_pow(a: &Jet1, b: &Jet1, at: impl Fn() -> String) -> Result<Jet1> {
    if b.grad.iter().all(|g| *g == 0.0) {
        let p = b.value;
        if p.fract() == 0.0 && p.abs() <= 512.0 {
            if p < 0.0 && a.value == 0.0 {
                return Err(Error::Domain {
                    op: "division by",
                    value: 0.0,
                    at: at(),
                });
            }
            let pi = p as i32;
            let f1 = if pi == 0 { 0.0 } else { p * a.value.powi(pi - 1) };
            return Ok(chain1(a, a.value.powi(pi), f1));
        }
        if a.value <= 0.0 {
            return Err(Error::Domain {
                op: "non-integer power of",
                value: a.value,
                at: at(),
            });
        }
        return Ok(chain1(a, a.value.powf(p), p * a.value.powf(p - 1.0)));
    }
    if a.value <= 0.0 {
        return Err(Error::Domain {
            op: "non-integer power of",
            value: a.value,
            at: at(),
        });
    }
    // x^y = exp(y ln x)
    let lx = chain1(a, a.value.ln(), 1.0 / a.value);
    let prod = b.mul(&lx);
    Ok(chain1(&prod, prod.value.exp(), prod.value.exp()))
}

fn value_pow(a: f64, b: f64, at: impl Fn() -> String) -> Result<f64> {
    if b.fract() == 0.0 && b.abs() <= 512.0 {
        if b < 0.0 && a == 0.0 {
            return Err(Error::Domain {
                op: "division by",
                value: 0.0,
                at: at(),
            });
        }
        return Ok(a.powi(b as i32));
    }
    if a <= 0.0 {
        return Err(Error::Domain {
            op: "non-integer power of",
            value: a,
            at: at(),
        });
    }
    Ok(a.powf(b))
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // fully parenthesized: reparsing yields a structurally identical tree
        match self {
            Expr::Constant(v) => {
                if *v < 0.0 {
                    write!(f, "({v})")
                } else {
                    write!(f, "{v}")
                }
            }
            Expr::Variable(name) => write!(f, "{name}"),
            Expr::Neg(inner) => write!(f, "(-{inner})"),
            Expr::Binary(op, lhs, rhs) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({lhs}{sym}{rhs})")
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(names: &[&str]) -> VarSpace {
        VarSpace::new(names.to_vec()).unwrap()
    }

    fn eval1(src: &str, names: &[&str], point: &[f64]) -> f64 {
        parse(src)
            .unwrap()
            .eval_value(&space(names), point)
            .unwrap()
    }

    #[test]
    fn structural_parse() {
        let e = parse("cos(phi)*thd").unwrap();
        match e {
            Expr::Binary(BinOp::Mul, lhs, rhs) => {
                assert_eq!(*lhs, Expr::Call(Func::Cos, vec![Expr::Variable("phi".into())]));
                assert_eq!(*rhs, Expr::Variable("thd".into()));
            }
            other => panic!("unexpected tree: {other:?}"),
        }
    }

    #[test]
    fn nonholonomic_particle_gamma2() {
        // Γ² = -x ẋ ẏ / (1+x²) evaluates to -(1·2·3)/2 = -3
        let v = eval1("-x*xd*yd/(1+x^2)", &["x", "xd", "yd"], &[1.0, 2.0, 3.0]);
        assert!((v + 3.0).abs() < 1e-15);
    }

    #[test]
    fn malformed_input_location() {
        let err = parse("1 + * 2").unwrap_err();
        match err {
            Error::Parse(p) => {
                assert_eq!(p.offset, 4);
                assert_eq!(p.line, 1);
                assert_eq!(p.column, 5);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn unknown_function_and_arity() {
        assert!(matches!(parse("foo(x)"), Err(Error::Parse(_))));
        assert!(matches!(parse("sin(x, y)"), Err(Error::Parse(_))));
        assert!(matches!(parse("pow(x)"), Err(Error::Parse(_))));
    }

    #[test]
    fn implicit_multiplication_rejected() {
        assert!(parse("2x").is_err());
        assert!(parse("2 * x").is_ok());
    }

    #[test]
    fn precedence() {
        assert_eq!(eval1("2+3*4^2", &[], &[]), 50.0);
        // unary minus binds looser than '^'
        assert_eq!(eval1("-2^2", &[], &[]), -4.0);
        assert_eq!(eval1("2^3^2", &[], &[]), 512.0); // right-assoc
        assert_eq!(eval1("-x^2", &["x"], &[3.0]), -9.0);
    }

    #[test]
    fn eval_jet_variable() {
        let e = parse("q").unwrap();
        let j = e.eval_jet(&space(&["q"]), &[5.0]).unwrap();
        assert_eq!(j.value, 5.0);
        assert_eq!(j.grad, vec![1.0]);
        assert_eq!(j.hess.get(0, 0), 0.0);
    }

    #[test]
    fn eval_jet_matches_hand_built_tree() {
        let parsed = parse("-x*xd*yd/(1+x^2)").unwrap();
        let hand = Expr::Binary(
            BinOp::Div,
            Box::new(Expr::Binary(
                BinOp::Mul,
                Box::new(Expr::Binary(
                    BinOp::Mul,
                    Box::new(Expr::Neg(Box::new(Expr::Variable("x".into())))),
                    Box::new(Expr::Variable("xd".into())),
                )),
                Box::new(Expr::Variable("yd".into())),
            )),
            Box::new(Expr::Binary(
                BinOp::Add,
                Box::new(Expr::Constant(1.0)),
                Box::new(Expr::Binary(
                    BinOp::Pow,
                    Box::new(Expr::Variable("x".into())),
                    Box::new(Expr::Constant(2.0)),
                )),
            )),
        );
        let s = space(&["x", "xd", "yd"]);
        let p = [1.0, 2.0, 3.0];
        let a = parsed.eval_jet(&s, &p).unwrap();
        let b = hand.eval_jet(&s, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn domain_error_from_sqrt() {
        let e = parse("sqrt(x)").unwrap();
        assert!(e.eval_jet(&space(&["x"]), &[-1.0]).is_err());
    }

    #[test]
    fn unbound_variable_named() {
        let e = parse("z + 1").unwrap();
        match e.eval_jet(&space(&["x"]), &[0.0]) {
            Err(Error::UnboundVariable(name)) => assert_eq!(name, "z"),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn free_vars() {
        assert_eq!(
            parse("cos(phi)*thd").unwrap().free_vars(),
            ["phi", "thd"].iter().map(|s| s.to_string()).collect()
        );
        assert!(parse("3.0").unwrap().free_vars().is_empty());
        assert_eq!(
            parse("x + x*y").unwrap().free_vars(),
            ["x", "y"].iter().map(|s| s.to_string()).collect()
        );
    }

    #[test]
    fn pretty_print_round_trip() {
        for src in [
            "cos(phi)*thd",
            "-x*xd*yd/(1+x^2)",
            "2+3*4^2",
            "-2^2",
            "pow(x, 2.5)",
            "sqrt(1+x^2)*yd/xd",
            "1e-3 + x*2.5e2",
            "abs(phid) - 0.1",
        ] {
            let tree = parse(src).unwrap();
            let printed = tree.to_string();
            let reparsed = parse(&printed).unwrap();
            assert_eq!(tree, reparsed, "round trip failed for `{src}` -> `{printed}`");
        }
    }

    #[test]
    fn jet_value_consistency() {
        let s = space(&["x", "y"]);
        let e = parse("exp(x)*sin(y) + x/y").unwrap();
        let p = [0.3, 1.7];
        let j = e.eval_jet(&s, &p).unwrap();
        let v = e.eval_value(&s, &p).unwrap();
        assert!((j.value - v).abs() < 1e-15);
    }
}

//! Scalar-field expressions for metric components, one-forms and wind fields.
//!
//! Grammar (highest precedence first):
//!
//! ```text
//! atom   := number | ident | ident '(' expr ')' | '(' expr ')'
//! power  := atom ('^' unary)?          right associative
//! unary  := '-' unary | '+' unary | power
//! term   := unary (('*' | '/') unary)*
//! expr   := term (('+' | '-') term)*
//! ```
//!
//! Identifiers `x1 … xn` are chart coordinates, `pi` is the constant, and any
//! other identifier is a named parameter resolved by [`Expression::bind`].
//! Known functions: `sin cos tan exp log sqrt sinh cosh tanh atan abs`.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::ad::Real;

/// Named parameter bindings. Ordered so that reports are stable.
pub type Params = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unbound name `{0}`")]
    UnboundName(String),
    #[error("domain error: {0}")]
    Domain(String),
}

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
    Log,
    Sqrt,
    Sinh,
    Cosh,
    Tanh,
    Atan,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "tanh" => Func::Tanh,
            "atan" => Func::Atan,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Tanh => "tanh",
            Func::Atan => "atan",
            Func::Abs => "abs",
        }
    }

    fn apply<T: Real>(self, a: T) -> Result<T, ExprError> {
        Ok(match self {
            Func::Sin => a.sin(),
            Func::Cos => a.cos(),
            Func::Tan => a.tan(),
            Func::Exp => a.exp(),
            Func::Log => {
                if a.re() <= 0.0 {
                    return Err(ExprError::Domain(format!("log of non-positive value {}", a.re())));
                }
                a.ln()
            }
            Func::Sqrt => {
                if a.re() < 0.0 {
                    return Err(ExprError::Domain(format!("sqrt of negative value {}", a.re())));
                }
                a.sqrt()
            }
            Func::Sinh => a.sinh(),
            Func::Cosh => a.cosh(),
            Func::Tanh => a.tanh(),
            Func::Atan => a.atan(),
            Func::Abs => a.abs(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    /// Zero-based coordinate index (`x1` is `Var(0)`).
    Var(usize),
    Param(String),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// Parsed expression. Immutable; evaluation is reentrant.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
}

impl Expression {
    pub fn parse(source: &str) -> Result<Self, ExprError> {
        let tokens = lex(source)?;
        if tokens.is_empty() {
            return Err(ExprError::Syntax {
                offset: 0,
                message: "empty expression".into(),
            });
        }
        let mut p = Parser {
            tokens,
            pos: 0,
            end: source.len(),
        };
        let root = p.expr()?;
        if let Some(t) = p.peek() {
            return Err(ExprError::Syntax {
                offset: t.offset,
                message: format!("unexpected {}", t.kind.describe()),
            });
        }
        Ok(Self { root })
    }

    pub fn constant(c: f64) -> Self {
        Self { root: Node::Num(c) }
    }

    pub fn var(index: usize) -> Self {
        Self {
            root: Node::Var(index),
        }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    fn bin(op: BinOp, a: &Expression, b: &Expression) -> Self {
        Self {
            root: Node::Bin(op, Box::new(a.root.clone()), Box::new(b.root.clone())),
        }
    }

    pub fn add(&self, o: &Expression) -> Self {
        Self::bin(BinOp::Add, self, o)
    }
    pub fn sub(&self, o: &Expression) -> Self {
        Self::bin(BinOp::Sub, self, o)
    }
    pub fn mul(&self, o: &Expression) -> Self {
        Self::bin(BinOp::Mul, self, o)
    }
    pub fn div(&self, o: &Expression) -> Self {
        Self::bin(BinOp::Div, self, o)
    }
    pub fn neg(&self) -> Self {
        Self {
            root: Node::Neg(Box::new(self.root.clone())),
        }
    }

    /// Sum of a list of expressions (`0` when empty).
    pub fn sum<'a>(terms: impl IntoIterator<Item = &'a Expression>) -> Self {
        let mut it = terms.into_iter();
        match it.next() {
            None => Self::constant(0.0),
            Some(first) => it.fold(first.clone(), |acc, t| acc.add(t)),
        }
    }

    /// Names of all free parameters, sorted.
    pub fn parameters(&self) -> Vec<String> {
        fn walk(n: &Node, out: &mut Vec<String>) {
            match n {
                Node::Param(p) => out.push(p.clone()),
                Node::Neg(a) | Node::Call(_, a) => walk(a, out),
                Node::Bin(_, a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
                Node::Num(_) | Node::Var(_) => {}
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out.sort();
        out.dedup();
        out
    }

    /// Highest coordinate index referenced plus one (0 if none).
    pub fn arity(&self) -> usize {
        fn walk(n: &Node) -> usize {
            match n {
                Node::Var(i) => i + 1,
                Node::Neg(a) | Node::Call(_, a) => walk(a),
                Node::Bin(_, a, b) => walk(a).max(walk(b)),
                Node::Num(_) | Node::Param(_) => 0,
            }
        }
        walk(&self.root)
    }

    /// Substitutes parameters and folds constant subtrees.
    pub fn bind(&self, params: &Params) -> Result<Expression, ExprError> {
        Ok(Self {
            root: fold(&self.root, params)?,
        })
    }

    /// Evaluates a bound expression at a chart point.
    pub fn eval_at<T: Real>(&self, x: &[T]) -> Result<T, ExprError> {
        let v = eval_node(&self.root, x)?;
        if !v.re().is_finite() {
            return Err(ExprError::Domain(format!("non-finite result in `{self}`")));
        }
        Ok(v)
    }

    /// Binds `params` and evaluates at `point`.
    pub fn eval(&self, point: &[f64], params: &Params) -> Result<f64, ExprError> {
        self.bind(params)?.eval_at(point)
    }

    /// Central-difference gradient with step `step` or, when `None`,
    /// `1e-5·max(1, |xᵢ|)` per component.
    pub fn grad_fd(
        &self,
        point: &[f64],
        params: &Params,
        step: Option<f64>,
    ) -> Result<Vec<f64>, ExprError> {
        let bound = self.bind(params)?;
        let mut x = point.to_vec();
        let mut g = Vec::with_capacity(point.len());
        for i in 0..point.len() {
            let h = step.unwrap_or(1e-5 * point[i].abs().max(1.0));
            let xi = x[i];
            x[i] = xi + h;
            let fp = bound.eval_at(&x)?;
            x[i] = xi - h;
            let fm = bound.eval_at(&x)?;
            x[i] = xi;
            g.push((fp - fm) / (2.0 * h));
        }
        Ok(g)
    }
}

impl std::str::FromStr for Expression {
    type Err = ExprError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expression::parse(s)
    }
}

fn fold(n: &Node, params: &Params) -> Result<Node, ExprError> {
    Ok(match n {
        Node::Num(c) => Node::Num(*c),
        Node::Var(i) => Node::Var(*i),
        Node::Param(p) => match params.get(p) {
            Some(v) => Node::Num(*v),
            None => return Err(ExprError::UnboundName(p.clone())),
        },
        Node::Neg(a) => match fold(a, params)? {
            Node::Num(c) => Node::Num(-c),
            a => Node::Neg(Box::new(a)),
        },
        Node::Call(f, a) => match fold(a, params)? {
            Node::Num(c) => Node::Num(f.apply(c)?),
            a => Node::Call(*f, Box::new(a)),
        },
        Node::Bin(op, a, b) => {
            let a = fold(a, params)?;
            let b = fold(b, params)?;
            match (&a, &b) {
                (Node::Num(x), Node::Num(y)) => Node::Num(binop(*op, *x, *y, b_is_int(&b))?),
                _ => Node::Bin(*op, Box::new(a), Box::new(b)),
            }
        }
    })
}

fn b_is_int(n: &Node) -> Option<i32> {
    match n {
        Node::Num(c) if c.fract() == 0.0 && c.abs() <= 1024.0 => Some(*c as i32),
        _ => None,
    }
}

fn binop<T: Real>(op: BinOp, a: T, b: T, int_exp: Option<i32>) -> Result<T, ExprError> {
    Ok(match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b.re() == 0.0 {
                return Err(ExprError::Domain("division by zero".into()));
            }
            a / b
        }
        BinOp::Pow => match int_exp {
            Some(n) => {
                if n < 0 && a.re() == 0.0 {
                    return Err(ExprError::Domain("zero raised to a negative power".into()));
                }
                a.powi(n)
            }
            None => {
                if a.re() > 0.0 {
                    (b * a.ln()).exp()
                } else if a.re() == 0.0 && b.re() > 0.0 {
                    T::zero()
                } else {
                    return Err(ExprError::Domain(format!(
                        "{} raised to non-integer power {}",
                        a.re(),
                        b.re()
                    )));
                }
            }
        },
    })
}

fn eval_node<T: Real>(n: &Node, x: &[T]) -> Result<T, ExprError> {
    match n {
        Node::Num(c) => Ok(T::cst(*c)),
        Node::Var(i) => x
            .get(*i)
            .copied()
            .ok_or_else(|| ExprError::UnboundName(format!("x{}", i + 1))),
        Node::Param(p) => Err(ExprError::UnboundName(p.clone())),
        Node::Neg(a) => Ok(-eval_node(a, x)?),
        Node::Call(f, a) => f.apply(eval_node(a, x)?),
        Node::Bin(op, a, b) => {
            let va = eval_node(a, x)?;
            let vb = eval_node(b, x)?;
            binop(*op, va, vb, b_is_int(b))
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root)
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Num(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => {
                write!(f, "(-{})", -c)
            }
            Node::Num(c) => write!(f, "{c}"),
            Node::Var(i) => write!(f, "x{}", i + 1),
            Node::Param(p) => write!(f, "{p}"),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Call(func, a) => write!(f, "{}({a})", func.name()),
            Node::Bin(op, a, b) => {
                let s = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a} {s} {b})")
            }
        }
    }
}

// ---------------------------------------------------------------- lexer

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl TokKind {
    fn describe(&self) -> String {
        match self {
            TokKind::Num(c) => format!("number {c}"),
            TokKind::Ident(s) => format!("identifier `{s}`"),
            TokKind::Op(c) => format!("operator `{c}`"),
            TokKind::LParen => "`(`".into(),
            TokKind::RParen => "`)`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                out.push(Token {
                    kind: TokKind::Op(c as char),
                    offset: i,
                });
                i += 1;
            }
            b'(' => {
                out.push(Token {
                    kind: TokKind::LParen,
                    offset: i,
                });
                i += 1;
            }
            b')' => {
                out.push(Token {
                    kind: TokKind::RParen,
                    offset: i,
                });
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let value = text.parse::<f64>().map_err(|_| ExprError::Syntax {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                out.push(Token {
                    kind: TokKind::Num(value),
                    offset: start,
                });
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token {
                    kind: TokKind::Ident(src[start..i].to_string()),
                    offset: start,
                });
            }
            _ => {
                return Err(ExprError::Syntax {
                    offset: i,
                    message: format!(
                        "unexpected character `{}`",
                        src[i..].chars().next().unwrap_or('?')
                    ),
                })
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- parser

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn here(&self) -> usize {
        self.peek().map(|t| t.offset).unwrap_or(self.end)
    }

    fn eat_op(&mut self, ops: &[char]) -> Option<char> {
        match self.peek() {
            Some(Token {
                kind: TokKind::Op(c),
                ..
            }) if ops.contains(c) => {
                let c = *c;
                self.pos += 1;
                Some(c)
            }
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(c) = self.eat_op(&['+', '-']) {
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(c) = self.eat_op(&['*', '/']) {
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        match self.eat_op(&['-', '+']) {
            Some('-') => Ok(Node::Neg(Box::new(self.unary()?))),
            Some(_) => self.unary(),
            None => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.eat_op(&['^']).is_some() {
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let offset = self.here();
        let tok = self.next().ok_or(ExprError::Syntax {
            offset,
            message: "unexpected end of input".into(),
        })?;
        match tok.kind {
            TokKind::Num(c) => Ok(Node::Num(c)),
            TokKind::LParen => {
                let inner = self.expr()?;
                self.expect_rparen(tok.offset)?;
                Ok(inner)
            }
            TokKind::Ident(name) => {
                if matches!(self.peek().map(|t| &t.kind), Some(TokKind::LParen)) {
                    let func = Func::from_name(&name).ok_or_else(|| ExprError::Syntax {
                        offset: tok.offset,
                        message: format!("unknown function `{name}`"),
                    })?;
                    let open = self.next().map(|t| t.offset).unwrap_or(tok.offset);
                    let arg = self.expr()?;
                    self.expect_rparen(open)?;
                    return Ok(Node::Call(func, Box::new(arg)));
                }
                Ok(ident_node(&name))
            }
            other => Err(ExprError::Syntax {
                offset: tok.offset,
                message: format!("unexpected {}", other.describe()),
            }),
        }
    }

    fn expect_rparen(&mut self, open: usize) -> Result<(), ExprError> {
        match self.peek() {
            Some(Token {
                kind: TokKind::RParen,
                ..
            }) => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(ExprError::Syntax {
                offset: t.offset,
                message: format!("expected `)` to close `(` at byte {open}, found {}", t.kind.describe()),
            }),
            None => Err(ExprError::Syntax {
                offset: self.end,
                message: format!("unbalanced `(` at byte {open}"),
            }),
        }
    }
}

fn ident_node(name: &str) -> Node {
    if name == "pi" {
        return Node::Num(std::f64::consts::PI);
    }
    if let Some(digits) = name.strip_prefix('x') {
        if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
            if let Ok(k) = digits.parse::<usize>() {
                if k >= 1 {
                    return Node::Var(k - 1);
                }
            }
        }
    }
    Node::Param(name.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn ev(src: &str, x: &[f64], params: &[(&str, f64)]) -> Result<f64, ExprError> {
        let p: Params = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        Expression::parse(src)?.eval(x, &p)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("2+3*4", &[], &[]).unwrap(), 14.0);
        assert_eq!(ev("2^3^2", &[], &[]).unwrap(), 512.0);
        assert_eq!(ev("-2^2", &[], &[]).unwrap(), -4.0);
        assert_eq!(ev("8/4/2", &[], &[]).unwrap(), 1.0);
        assert_eq!(ev("8-4-2", &[], &[]).unwrap(), 2.0);
        assert_eq!(ev("2^-1", &[], &[]).unwrap(), 0.5);
        assert_eq!(ev("x1^2 + x2^2", &[3.0, 4.0], &[]).unwrap(), 25.0);
    }

    #[test]
    fn functions_and_parameters() {
        let v = ev("sin(sqrt(lam)*x1)/sqrt(lam)", &[PI / 2.0], &[("lam", 1.0)]).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert_eq!(ev("exp(-lam*x1^2/2)", &[0.0], &[("lam", 3.0)]).unwrap(), 1.0);
        assert_eq!(
            ev("4/(K*(1+x1^2+x2^2)^2)", &[0.0, 0.0], &[("K", 1.0)]).unwrap(),
            4.0
        );
        assert!((ev("atan(1)*4", &[], &[]).unwrap() - PI).abs() < 1e-15);
        assert!((ev("pi", &[], &[]).unwrap() - PI).abs() == 0.0);
    }

    #[test]
    fn domain_and_binding_errors() {
        assert!(matches!(ev("log(x1)", &[-1.0], &[]), Err(ExprError::Domain(_))));
        assert!(matches!(ev("sqrt(x1)", &[-1.0], &[]), Err(ExprError::Domain(_))));
        assert!(matches!(ev("1/x1", &[0.0], &[]), Err(ExprError::Domain(_))));
        assert!(matches!(ev("x1^0.5", &[-2.0], &[]), Err(ExprError::Domain(_))));
        assert!(matches!(ev("k*x1", &[1.0], &[]), Err(ExprError::UnboundName(n)) if n == "k"));
        assert!(matches!(ev("x3", &[1.0, 2.0], &[]), Err(ExprError::UnboundName(n)) if n == "x3"));
    }

    #[test]
    fn malformed_inputs_carry_offsets() {
        let corpus = [
            ("", 0),
            ("(1+2", 4),
            ("1+2)", 3),
            ("1+", 2),
            ("2*", 2),
            ("sin(x1", 6),
            ("x1 x2", 3),
            ("foo(1)", 0),
            ("1 $ 2", 2),
            ("()", 1),
            ("3^", 2),
            ("*2", 0),
        ];
        for (src, off) in corpus {
            match Expression::parse(src) {
                Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, off, "{src:?}"),
                other => panic!("{src:?} parsed as {other:?}"),
            }
        }
    }

    #[test]
    fn grad_fd_examples() {
        let p = Params::new();
        let g = Expression::parse("x1^2").unwrap().grad_fd(&[3.0], &p, Some(1e-5)).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
        let g = Expression::parse("x1*x2").unwrap().grad_fd(&[2.0, 5.0], &p, None).unwrap();
        assert!((g[0] - 5.0).abs() < 1e-8 && (g[1] - 2.0).abs() < 1e-8);
        let g = Expression::parse("sin(x1)").unwrap().grad_fd(&[0.0], &p, None).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dual_evaluation_matches_fd_gradient() {
        use crate::ad::Dual;
        let e = Expression::parse("exp(-lam*x1^2)*cos(x2) + x1^2.5")
            .unwrap()
            .bind(&[("lam".to_string(), 0.7)].into_iter().collect())
            .unwrap();
        let x = [0.8, 0.3];
        let d = e.eval_at(&[Dual::var(0.8), Dual::cst(0.3)]).unwrap();
        let fd = e.grad_fd(&x, &Params::new(), None).unwrap();
        assert!((d.eps - fd[0]).abs() < 1e-8);
    }

    fn arb_expr() -> impl Strategy<Value = String> {
        let leaf = prop_oneof![
            (0.1f64..5.0).prop_map(|c| format!("{c}")),
            Just("x1".to_string()),
            Just("x2".to_string()),
            Just("k".to_string()),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a})+({b})")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a}-{b}")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a})*{b}")),
                inner.clone().prop_map(|a| format!("-{a}")),
                inner.clone().prop_map(|a| format!("sin({a})")),
                inner.clone().prop_map(|a| format!("({a})^2")),
                inner.prop_map(|a| format!("exp(-({a})^2)")),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(src in arb_expr(), x1 in -2.0f64..2.0, x2 in -2.0f64..2.0) {
            let e = Expression::parse(&src).unwrap();
            let printed = e.to_string();
            let again = Expression::parse(&printed).unwrap();
            let p: Params = [("k".to_string(), 1.3)].into_iter().collect();
            let a = e.eval(&[x1, x2], &p);
            let b = again.eval(&[x1, x2], &p);
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert!(a == b || (a - b).abs() <= 1e-12 * a.abs().max(1.0)),
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
            }
        }

        #[test]
        fn grad_fd_exact_on_quadratics(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0,
                                       x1 in -5.0f64..5.0, x2 in -5.0f64..5.0) {
            let src = format!("({a})*x1^2 + ({b})*x1*x2 + ({c})*x2^2 + x1 - 2*x2");
            let g = Expression::parse(&src).unwrap().grad_fd(&[x1, x2], &Params::new(), None).unwrap();
            let e0 = 2.0 * a * x1 + b * x2 + 1.0;
            let e1 = b * x1 + 2.0 * c * x2 - 2.0;
            let scale = 1.0 + (a.abs() + b.abs() + c.abs()) * (x1.abs() + x2.abs()) * 2.0;
            prop_assert!((g[0] - e0).abs() <= 1e-9 * scale);
            prop_assert!((g[1] - e1).abs() <= 1e-9 * scale);
        }
    }
}

//! Tiny arithmetic expression language for function-valued config fields.
//!
//! Grammar (usual precedence, `^` right associative and binding tighter than
//! unary minus):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := ('+' | '-') unary | power
//! power := atom ('^' unary)?
//! atom  := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Names resolve at parse time against a fixed variable list, so evaluation is
//! a plain tree walk over an `&[f64]` slot array. `pi` and `e` are constants.
//! Functions: `sin cos tan exp ln log sqrt abs sign step tanh max min pow`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Sign,
    /// Heaviside step, `1` for positive arguments and `0` otherwise.
    Step,
    Tanh,
    Max,
    Min,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "tan" => (Func::Tan, 1),
            "exp" => (Func::Exp, 1),
            "ln" | "log" => (Func::Ln, 1),
            "sqrt" => (Func::Sqrt, 1),
            "abs" => (Func::Abs, 1),
            "sign" => (Func::Sign, 1),
            "step" => (Func::Step, 1),
            "tanh" => (Func::Tanh, 1),
            "max" => (Func::Max, 2),
            "min" => (Func::Min, 2),
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sign => "sign",
            Func::Step => "step",
            Func::Tanh => "tanh",
            Func::Max => "max",
            Func::Min => "min",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value = text
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number '{text}' in '{src}'")))?;
            tokens.push(Token::Num(value));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            tokens.push(Token::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^(),".contains(c) {
            tokens.push(Token::Op(c));
            i += 1;
        } else {
            return Err(Error::Parse(format!(
                "unexpected character '{c}' in '{src}'"
            )));
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    vars: &'a [&'a str],
    src: &'a str,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Token::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn err(&self, msg: &str) -> Error {
        Error::Parse(format!("{msg} in expression '{}'", self.src))
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat('^') {
            let exponent = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.tokens.get(self.pos).cloned() {
            Some(Token::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Token::Op('(')) => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(')') {
                    return Err(self.err("missing ')'"));
                }
                Ok(inner)
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                if self.eat('(') {
                    let mut args = vec![self.expr()?];
                    while self.eat(',') {
                        args.push(self.expr()?);
                    }
                    if !self.eat(')') {
                        return Err(self.err("missing ')' after arguments"));
                    }
                    if name == "pow" {
                        if args.len() != 2 {
                            return Err(self.err("pow takes 2 arguments"));
                        }
                        let exponent = args.pop().unwrap();
                        let base = args.pop().unwrap();
                        return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
                    }
                    let (func, arity) = Func::lookup(&name)
                        .ok_or_else(|| self.err(&format!("unknown function '{name}'")))?;
                    if args.len() != arity {
                        return Err(self.err(&format!("{name} takes {arity} argument(s)")));
                    }
                    return Ok(Expr::Call(func, args));
                }
                if let Some(idx) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Expr::Var(idx));
                }
                match name.as_str() {
                    "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                    "e" => Ok(Expr::Num(std::f64::consts::E)),
                    _ => Err(self.err(&format!(
                        "unknown name '{name}' (allowed: {})",
                        self.vars.join(", ")
                    ))),
                }
            }
            Some(tok) => Err(self.err(&format!("unexpected token {tok:?}"))),
            None => Err(self.err("unexpected end of input")),
        }
    }
}

impl Expr {
    pub fn parse(src: &str, vars: &[&str]) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            vars,
            src,
        };
        let e = parser.expr()?;
        if parser.pos != parser.tokens.len() {
            return Err(parser.err("trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, vars: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => vars[*i],
            Expr::Neg(a) => -a.eval(vars),
            Expr::Add(a, b) => a.eval(vars) + b.eval(vars),
            Expr::Sub(a, b) => a.eval(vars) - b.eval(vars),
            Expr::Mul(a, b) => a.eval(vars) * b.eval(vars),
            Expr::Div(a, b) => a.eval(vars) / b.eval(vars),
            Expr::Pow(a, b) => {
                let base = a.eval(vars);
                let exponent = b.eval(vars);
                real_pow(base, exponent)
            }
            Expr::Call(f, args) => {
                let x = args[0].eval(vars);
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Tan => x.tan(),
                    Func::Exp => x.exp(),
                    Func::Ln => x.ln(),
                    Func::Sqrt => x.sqrt(),
                    Func::Abs => x.abs(),
                    Func::Sign => {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                    Func::Step => {
                        if x > 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Func::Tanh => x.tanh(),
                    Func::Max => x.max(args[1].eval(vars)),
                    Func::Min => x.min(args[1].eval(vars)),
                }
            }
        }
    }

    /// Largest variable slot referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Num(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(a) => a.max_var(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.max_var().max(b.max_var()),
            Expr::Call(_, args) => args.iter().filter_map(Expr::max_var).max(),
        }
    }

    pub fn depends_on(&self, var: usize) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(i) => *i == var,
            Expr::Neg(a) => a.depends_on(var),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.depends_on(var) || b.depends_on(var),
            Expr::Call(_, args) => args.iter().any(|a| a.depends_on(var)),
        }
    }

    /// Symbolic partial derivative with respect to slot `var`.
    ///
    /// `abs`, `sign`, `step`, `max` and `min` are differentiated almost
    /// everywhere (the derivative of `step`/`sign` is taken as zero).
    pub fn derivative(&self, var: usize) -> Expr {
        use Expr::*;
        if !self.depends_on(var) {
            return Num(0.0);
        }
        let d = |e: &Expr| e.derivative(var);
        let b = |e: Expr| Box::new(e);

        match self {
            Num(_) => Num(0.0),
            Var(i) => Num(if *i == var { 1.0 } else { 0.0 }),
            Neg(a) => neg(d(a)),
            Add(x, y) => add(d(x), d(y)),
            Sub(x, y) => sub(d(x), d(y)),
            Mul(x, y) => add(mul(d(x), (**y).clone()), mul((**x).clone(), d(y))),
            Div(x, y) => div(
                sub(mul(d(x), (**y).clone()), mul((**x).clone(), d(y))),
                Pow(y.clone(), b(Num(2.0))),
            ),
            Pow(base, exponent) => {
                if !exponent.depends_on(var) {
                    // c·u^(c-1)·u'
                    mul(
                        mul(
                            (**exponent).clone(),
                            Pow(base.clone(), b(sub((**exponent).clone(), Num(1.0)))),
                        ),
                        d(base),
                    )
                } else {
                    // u^v (v' ln u + v u'/u)
                    mul(
                        self.clone(),
                        add(
                            mul(d(exponent), Call(Func::Ln, vec![(**base).clone()])),
                            div(mul((**exponent).clone(), d(base)), (**base).clone()),
                        ),
                    )
                }
            }
            Call(f, args) => {
                let u = args[0].clone();
                let du = d(&args[0]);
                match f {
                    Func::Sin => mul(Call(Func::Cos, vec![u]), du),
                    Func::Cos => neg(mul(Call(Func::Sin, vec![u]), du)),
                    Func::Tan => div(du, Pow(b(Call(Func::Cos, vec![u])), b(Num(2.0)))),
                    Func::Exp => mul(self.clone(), du),
                    Func::Ln => div(du, u),
                    Func::Sqrt => div(du, mul(Num(2.0), self.clone())),
                    Func::Abs => mul(Call(Func::Sign, vec![u]), du),
                    Func::Sign | Func::Step => Num(0.0),
                    Func::Tanh => mul(sub(Num(1.0), Pow(b(self.clone()), b(Num(2.0)))), du),
                    Func::Max | Func::Min => {
                        let v = args[1].clone();
                        let dv = d(&args[1]);
                        // max: step(u - v)·u' + (1 - step(u - v))·v'
                        let pick_u = if *f == Func::Max {
                            Call(Func::Step, vec![sub(u, v)])
                        } else {
                            Call(Func::Step, vec![sub(v, u)])
                        };
                        add(mul(pick_u.clone(), du), mul(sub(Num(1.0), pick_u), dv))
                    }
                }
            }
        }
    }
}

/// `base^exponent` extended to negative bases with odd-denominator rational
/// exponents (so `t^(1/3)` is real for `t < 0`).
fn real_pow(base: f64, exponent: f64) -> f64 {
    if base >= 0.0 || exponent.fract() == 0.0 {
        return base.powf(exponent);
    }
    for q in [3.0, 5.0, 7.0, 9.0] {
        let p = exponent * q;
        if (p - p.round()).abs() < 1e-12 {
            let magnitude = (-base).powf(exponent);
            return if (p.round() as i64) % 2 == 0 {
                magnitude
            } else {
                -magnitude
            };
        }
    }
    f64::NAN
}

fn is_num(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Num(x) if *x == v)
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(v) => Expr::Num(-v),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    if is_num(&a, 0.0) {
        return b;
    }
    if is_num(&b, 0.0) {
        return a;
    }
    if let (Expr::Num(x), Expr::Num(y)) = (&a, &b) {
        return Expr::Num(x + y);
    }
    Expr::Add(Box::new(a), Box::new(b))
}

fn sub(a: Expr, b: Expr) -> Expr {
    if is_num(&b, 0.0) {
        return a;
    }
    if is_num(&a, 0.0) {
        return neg(b);
    }
    if let (Expr::Num(x), Expr::Num(y)) = (&a, &b) {
        return Expr::Num(x - y);
    }
    Expr::Sub(Box::new(a), Box::new(b))
}

fn mul(a: Expr, b: Expr) -> Expr {
    if is_num(&a, 0.0) || is_num(&b, 0.0) {
        return Expr::Num(0.0);
    }
    if is_num(&a, 1.0) {
        return b;
    }
    if is_num(&b, 1.0) {
        return a;
    }
    if let (Expr::Num(x), Expr::Num(y)) = (&a, &b) {
        return Expr::Num(x * y);
    }
    Expr::Mul(Box::new(a), Box::new(b))
}

fn div(a: Expr, b: Expr) -> Expr {
    if is_num(&a, 0.0) {
        return Expr::Num(0.0);
    }
    if is_num(&b, 1.0) {
        return a;
    }
    Expr::Div(Box::new(a), Box::new(b))
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(i) => write!(f, "${i}"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

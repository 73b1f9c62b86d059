//! Symbolic expressions shared by weak forms, predicates, and value strings.
//!
//! One tree type covers every expression context. The parser accepts the
//! whole grammar; context checks (what symbols a boundary predicate may use,
//! whether comparisons may appear in a weak form) live in
//! [`check_symbols`] and [`parse_weak_form`].

mod eval;
mod parse;

use std::collections::BTreeSet;
use std::fmt;

pub use eval::{eval_scalar, Env, EvalError, Value};
pub use parse::{parse_expression, parse_weak_form, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => PREC_ADD,
            BinOp::Mul | BinOp::Div => PREC_MUL,
            BinOp::Pow => PREC_POW,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
        }
    }
}

/// Built-in functions of the expression language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Func {
    Dt,
    Dot,
    Grad,
    Surface,
    DirichletBoundary,
    NeumannBoundary,
    Normal,
    TrueNormal,
    DistanceToBoundary,
    ElementDiameter,
    DirichletValue,
    NeumannValue,
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
}

impl Func {
    pub const ALL: [Func; 17] = [
        Func::Dt,
        Func::Dot,
        Func::Grad,
        Func::Surface,
        Func::DirichletBoundary,
        Func::NeumannBoundary,
        Func::Normal,
        Func::TrueNormal,
        Func::DistanceToBoundary,
        Func::ElementDiameter,
        Func::DirichletValue,
        Func::NeumannValue,
        Func::Sin,
        Func::Cos,
        Func::Exp,
        Func::Sqrt,
        Func::Abs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Dt => "Dt",
            Func::Dot => "dot",
            Func::Grad => "grad",
            Func::Surface => "surface",
            Func::DirichletBoundary => "dirichletBoundary",
            Func::NeumannBoundary => "neumannBoundary",
            Func::Normal => "normal",
            Func::TrueNormal => "trueNormal",
            Func::DistanceToBoundary => "distanceToBoundary",
            Func::ElementDiameter => "elementDiameter",
            Func::DirichletValue => "dirichletValue",
            Func::NeumannValue => "neumannValue",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Dot => 2,
            Func::Normal
            | Func::TrueNormal
            | Func::DistanceToBoundary
            | Func::ElementDiameter
            | Func::DirichletValue
            | Func::NeumannValue => 0,
            _ => 1,
        }
    }

    /// Functions that only have meaning inside a weak form.
    pub fn is_weak_form_only(self) -> bool {
        !matches!(
            self,
            Func::Sin | Func::Cos | Func::Exp | Func::Sqrt | Func::Abs
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Bool(bool),
    Sym(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Compare(CmpOp, Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

const PREC_OR: u8 = 1;
const PREC_AND: u8 = 2;
const PREC_CMP: u8 = 3;
const PREC_ADD: u8 = 4;
const PREC_MUL: u8 = 5;
const PREC_UNARY: u8 = 6;
const PREC_POW: u8 = 7;
const PREC_ATOM: u8 = 8;

impl Expr {
    pub fn sym(name: impl Into<String>) -> Expr {
        Expr::Sym(name.into())
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Num(_) | Expr::Bool(_) | Expr::Sym(_) | Expr::Call(..) => PREC_ATOM,
            Expr::Neg(_) => PREC_UNARY,
            Expr::Binary(op, ..) => op.precedence(),
            Expr::Compare(..) => PREC_CMP,
            Expr::And(..) => PREC_AND,
            Expr::Or(..) => PREC_OR,
        }
    }

    /// Pre-order traversal.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Num(_) | Expr::Bool(_) | Expr::Sym(_) => {}
            Expr::Neg(a) => a.walk(f),
            Expr::Binary(_, a, b)
            | Expr::Compare(_, a, b)
            | Expr::And(a, b)
            | Expr::Or(a, b) => {
                a.walk(f);
                b.walk(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.walk(f)),
        }
    }

    /// Every identifier referenced by the tree.
    pub fn symbols(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.walk(&mut |e| {
            if let Expr::Sym(s) = e {
                out.insert(s.as_str());
            }
        });
        out
    }

    pub fn any(&self, mut pred: impl FnMut(&Expr) -> bool) -> bool {
        let mut found = false;
        self.walk(&mut |e| found |= pred(e));
        found
    }

    /// First weak-form-only function call in the tree, if any.
    pub fn weak_form_call(&self) -> Option<Func> {
        let mut found = None;
        self.walk(&mut |e| {
            if let Expr::Call(f, _) = e {
                if f.is_weak_form_only() && found.is_none() {
                    found = Some(*f);
                }
            }
        });
        found
    }
}

/// Reject identifiers outside `allowed`. Returns the first offender.
pub fn check_symbols<'a>(expr: &'a Expr, allowed: &dyn Fn(&str) -> bool) -> Result<(), &'a str> {
    match expr.symbols().into_iter().find(|s| !allowed(s)) {
        Some(bad) => Err(bad),
        None => Ok(()),
    }
}

/// Shortest text that parses back to the same `f64`.
pub fn format_number(v: f64) -> String {
    let plain = format!("{v}");
    if plain.len() <= 16 {
        plain
    } else {
        format!("{v:e}")
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, child: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => f.write_str(&format_number(*v)),
            Expr::Bool(b) => write!(f, "{b}"),
            Expr::Sym(s) => f.write_str(s),
            Expr::Neg(a) => {
                f.write_str("-")?;
                write_child(f, a, a.precedence() < PREC_UNARY)
            }
            Expr::Binary(BinOp::Pow, a, b) => {
                write_child(f, a, a.precedence() <= PREC_POW)?;
                f.write_str("^")?;
                write_child(f, b, b.precedence() < PREC_UNARY)
            }
            Expr::Binary(op, a, b) => {
                let p = op.precedence();
                write_child(f, a, a.precedence() < p)?;
                write!(f, " {} ", op.symbol())?;
                write_child(f, b, b.precedence() <= p)
            }
            Expr::Compare(op, a, b) => {
                write_child(f, a, a.precedence() < PREC_CMP)?;
                write!(f, " {} ", op.symbol())?;
                write_child(f, b, b.precedence() <= PREC_CMP)
            }
            Expr::And(a, b) => {
                write_child(f, a, a.precedence() < PREC_AND)?;
                f.write_str(" && ")?;
                write_child(f, b, b.precedence() <= PREC_AND)
            }
            Expr::Or(a, b) => {
                write_child(f, a, a.precedence() < PREC_OR)?;
                f.write_str(" || ")?;
                write_child(f, b, b.precedence() <= PREC_OR)
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

use std::collections::BTreeMap;

use thiserror::Error;

use super::{BinOp, CmpOp, Expr, Func};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("`{0}` is only meaningful inside a weak form")]
    WeakFormOnly(&'static str),
    #[error("unbound symbol `{0}`")]
    Unbound(String),
    #[error("expected a {expected} value in `{context}`")]
    Type {
        expected: &'static str,
        context: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Num(f64),
    Bool(bool),
}

/// Evaluation environment for predicates and value expressions.
#[derive(Debug, Clone, Copy, Default)]
pub struct Env<'a> {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub t: f64,
    pub level: f64,
    pub constants: Option<&'a BTreeMap<String, f64>>,
}

impl<'a> Env<'a> {
    pub fn at(point: [f64; 3], t: f64) -> Self {
        Env {
            x: point[0],
            y: point[1],
            z: point[2],
            t,
            ..Env::default()
        }
    }

    pub fn with_constants(mut self, constants: &'a BTreeMap<String, f64>) -> Self {
        self.constants = Some(constants);
        self
    }

    pub fn with_level(mut self, level: u32) -> Self {
        self.level = level as f64;
        self
    }

    fn lookup(&self, name: &str) -> Option<f64> {
        Some(match name {
            "x" => self.x,
            "y" => self.y,
            "z" => self.z,
            "t" => self.t,
            "level" => self.level,
            "pi" => std::f64::consts::PI,
            _ => return self.constants.and_then(|c| c.get(name).copied()),
        })
    }
}

fn num(e: &Expr, env: &Env) -> Result<f64, EvalError> {
    match eval_scalar(e, env)? {
        Value::Num(v) => Ok(v),
        Value::Bool(_) => Err(EvalError::Type {
            expected: "numeric",
            context: e.to_string(),
        }),
    }
}

fn boolean(e: &Expr, env: &Env) -> Result<bool, EvalError> {
    match eval_scalar(e, env)? {
        Value::Bool(b) => Ok(b),
        Value::Num(_) => Err(EvalError::Type {
            expected: "boolean",
            context: e.to_string(),
        }),
    }
}

/// Evaluate a predicate or value expression in double precision.
pub fn eval_scalar(expr: &Expr, env: &Env) -> Result<Value, EvalError> {
    Ok(match expr {
        Expr::Num(v) => Value::Num(*v),
        Expr::Bool(b) => Value::Bool(*b),
        Expr::Sym(s) => Value::Num(env.lookup(s).ok_or_else(|| EvalError::Unbound(s.clone()))?),
        Expr::Neg(a) => Value::Num(-num(a, env)?),
        Expr::Binary(op, a, b) => {
            let (a, b) = (num(a, env)?, num(b, env)?);
            Value::Num(match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => a / b,
                BinOp::Pow => a.powf(b),
            })
        }
        Expr::Compare(op, a, b) => {
            let (a, b) = (num(a, env)?, num(b, env)?);
            Value::Bool(match op {
                CmpOp::Lt => a < b,
                CmpOp::Le => a <= b,
                CmpOp::Gt => a > b,
                CmpOp::Ge => a >= b,
                CmpOp::Eq => a == b,
            })
        }
        Expr::And(a, b) => Value::Bool(boolean(a, env)? && boolean(b, env)?),
        Expr::Or(a, b) => Value::Bool(boolean(a, env)? || boolean(b, env)?),
        Expr::Call(f, args) => {
            if f.is_weak_form_only() {
                return Err(EvalError::WeakFormOnly(f.name()));
            }
            let a = num(&args[0], env)?;
            Value::Num(match f {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Exp => a.exp(),
                Func::Sqrt => a.sqrt(),
                Func::Abs => a.abs(),
                _ => unreachable!(),
            })
        }
    })
}

impl Expr {
    pub fn eval_number(&self, env: &Env) -> Result<f64, EvalError> {
        num(self, env)
    }

    pub fn eval_bool(&self, env: &Env) -> Result<bool, EvalError> {
        boolean(self, env)
    }
}

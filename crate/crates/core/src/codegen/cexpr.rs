//! C-style rendering of basis-free scalar expressions.

use crate::expr::{format_number, parse_expression, BinOp, CmpOp, Expr, Func};

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Or(..) => 1,
        Expr::And(..) => 2,
        Expr::Compare(..) => 3,
        Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 4,
        Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 5,
        Expr::Neg(_) => 6,
        _ => 7,
    }
}

fn child(e: &Expr, min: u8) -> String {
    let s = c_expr(e);
    if prec(e) < min {
        format!("({s})")
    } else {
        s
    }
}

pub fn c_expr(e: &Expr) -> String {
    match e {
        Expr::Num(v) => format_number(*v),
        Expr::Bool(b) => b.to_string(),
        Expr::Sym(s) => match s.as_str() {
            "x" => "p.x()".into(),
            "y" => "p.y()".into(),
            "z" => "p.z()".into(),
            "pi" => "M_PI".into(),
            other => other.into(),
        },
        Expr::Neg(a) => format!("-{}", child(a, 7)),
        Expr::Binary(BinOp::Pow, a, b) => format!("pow({}, {})", c_expr(a), c_expr(b)),
        Expr::Binary(op, a, b) => {
            let p = prec(e);
            let sym = match op {
                BinOp::Add => "+",
                BinOp::Sub => "-",
                BinOp::Mul => "*",
                _ => "/",
            };
            format!("{} {sym} {}", child(a, p), child(b, p + 1))
        }
        Expr::Compare(op, a, b) => {
            let sym = match op {
                CmpOp::Lt => "<",
                CmpOp::Le => "<=",
                CmpOp::Gt => ">",
                CmpOp::Ge => ">=",
                CmpOp::Eq => "==",
            };
            format!("{} {sym} {}", child(a, 4), child(b, 4))
        }
        Expr::And(a, b) => format!("{} && {}", child(a, 3), child(b, 3)),
        Expr::Or(a, b) => format!("{} || {}", child(a, 2), child(b, 2)),
        Expr::Call(f, args) => {
            let name = match f {
                Func::Abs => "fabs",
                other => other.name(),
            };
            let args: Vec<String> = args.iter().map(c_expr).collect();
            format!("{name}({})", args.join(", "))
        }
    }
}

/// Field operand text (canonical expression syntax) as C.
pub fn field_text(text: &str) -> String {
    parse_expression(text).map_or_else(|_| text.to_string(), |e| c_expr(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_c() {
        assert_eq!(field_text("sin(pi * (2 * x))"), "sin(M_PI * (2 * p.x()))");
        assert_eq!(field_text("exp(-z^2 / 0.04)"), "exp(-pow(p.z(), 2) / 0.04)");
        assert_eq!(field_text("1 - (x - y)"), "1 - (p.x() - p.y())");
        assert_eq!(field_text("abs(t)"), "fabs(t)");
    }
}

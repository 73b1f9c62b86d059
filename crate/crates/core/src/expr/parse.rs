use thiserror::Error;

use super::{BinOp, CmpOp, Expr, Func};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("column {column}: unexpected character `{found}`")]
    UnexpectedChar { found: char, column: usize },
    #[error("column {column}: expected {expected}, found `{found}`")]
    UnexpectedToken {
        expected: &'static str,
        found: String,
        column: usize,
    },
    #[error("unexpected end of expression, expected {expected}")]
    UnexpectedEnd { expected: &'static str },
    #[error("column {column}: unknown function `{name}`")]
    UnknownFunction { name: String, column: usize },
    #[error("column {column}: `{name}` takes {expected} argument(s), found {found}")]
    Arity {
        name: &'static str,
        expected: usize,
        found: usize,
        column: usize,
    },
    #[error("column {column}: malformed number `{text}`")]
    BadNumber { text: String, column: usize },
    #[error("comparison or logical operator inside a weak form")]
    ComparisonInWeakForm,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(&'static str),
    LParen,
    RParen,
    Comma,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("{v}"),
            Tok::Ident(s) => s.clone(),
            Tok::Op(s) => (*s).to_string(),
            Tok::LParen => "(".into(),
            Tok::RParen => ")".into(),
            Tok::Comma => ",".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
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
            let s: String = chars[start..i].iter().collect();
            let v = s.parse::<f64>().map_err(|_| ParseError::BadNumber {
                text: s.clone(),
                column,
            })?;
            out.push((Tok::Num(v), column));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), column));
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let op2 = match two.as_str() {
            "<=" => Some("<="),
            ">=" => Some(">="),
            "==" => Some("=="),
            "&&" => Some("&&"),
            "||" => Some("||"),
            _ => None,
        };
        if let Some(op) = op2 {
            out.push((Tok::Op(op), column));
            i += 2;
            continue;
        }
        let tok = match c {
            '+' => Tok::Op("+"),
            '-' => Tok::Op("-"),
            '*' => Tok::Op("*"),
            '/' => Tok::Op("/"),
            '^' => Tok::Op("^"),
            '<' => Tok::Op("<"),
            '>' => Tok::Op(">"),
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            _ => return Err(ParseError::UnexpectedChar { found: c, column }),
        };
        out.push((tok, column));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn peek_op(&self, op: &str) -> bool {
        matches!(self.peek(), Some(Tok::Op(o)) if *o == op)
    }

    fn column(&self) -> usize {
        self.toks.get(self.pos).map(|(_, c)| *c).unwrap_or(0)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, expected: &'static str) -> Result<(), ParseError> {
        let column = self.column();
        match self.bump() {
            Some(t) if t == want => Ok(()),
            Some(t) => Err(ParseError::UnexpectedToken {
                expected,
                found: t.describe(),
                column,
            }),
            None => Err(ParseError::UnexpectedEnd { expected }),
        }
    }

    fn or(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.and()?;
        while self.peek_op("||") {
            self.bump();
            let rhs = self.and()?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.cmp()?;
        while self.peek_op("&&") {
            self.bump();
            let rhs = self.cmp()?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn cmp(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.add()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op("<")) => CmpOp::Lt,
                Some(Tok::Op("<=")) => CmpOp::Le,
                Some(Tok::Op(">")) => CmpOp::Gt,
                Some(Tok::Op(">=")) => CmpOp::Ge,
                Some(Tok::Op("==")) => CmpOp::Eq,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.add()?;
            lhs = Expr::Compare(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn add(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.mul()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op("+")) => BinOp::Add,
                Some(Tok::Op("-")) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.mul()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn mul(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op("*")) => BinOp::Mul,
                Some(Tok::Op("/")) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek_op("-") {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.pow()
    }

    fn pow(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek_op("^") {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::binary(BinOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let column = self.column();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LParen) {
                    return self.call(name, column);
                }
                Ok(match name.as_str() {
                    "true" => Expr::Bool(true),
                    "false" => Expr::Bool(false),
                    _ => Expr::Sym(name),
                })
            }
            Some(Tok::LParen) => {
                let inner = self.or()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some(t) => Err(ParseError::UnexpectedToken {
                expected: "an operand",
                found: t.describe(),
                column,
            }),
            None => Err(ParseError::UnexpectedEnd {
                expected: "an operand",
            }),
        }
    }

    fn call(&mut self, name: String, column: usize) -> Result<Expr, ParseError> {
        let func = Func::from_name(&name).ok_or(ParseError::UnknownFunction {
            name: name.clone(),
            column,
        })?;
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.peek() != Some(&Tok::RParen) {
            loop {
                args.push(self.or()?);
                if self.peek() == Some(&Tok::Comma) {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`)` or `,`")?;
        if args.len() != func.arity() {
            return Err(ParseError::Arity {
                name: func.name(),
                expected: func.arity(),
                found: args.len(),
                column,
            });
        }
        Ok(Expr::Call(func, args))
    }
}

/// Parse any expression of the language.
pub fn parse_expression(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let e = p.or()?;
    if let Some((t, column)) = p.toks.get(p.pos) {
        return Err(ParseError::UnexpectedToken {
            expected: "an operator or end of expression",
            found: t.describe(),
            column: *column,
        });
    }
    Ok(e)
}

/// Parse a weak form; comparisons and logical operators are rejected.
pub fn parse_weak_form(text: &str) -> Result<Expr, ParseError> {
    let e = parse_expression(text)?;
    if e.any(|n| matches!(n, Expr::Compare(..) | Expr::And(..) | Expr::Or(..) | Expr::Bool(_))) {
        return Err(ParseError::ComparisonInWeakForm);
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn top_level_terms(e: &Expr) -> usize {
        match e {
            Expr::Binary(BinOp::Add | BinOp::Sub, a, _) => top_level_terms(a) + 1,
            _ => 1,
        }
    }

    #[test]
    fn advection_diffusion_has_four_terms() {
        let e = parse_expression("Dt(u*v) + D*dot(grad(u),grad(v)) - dot(b, grad(u))*v - f*v").unwrap();
        assert_eq!(top_level_terms(&e), 4);
    }

    #[test]
    fn comparison_over_call() {
        let e = parse_expression("abs(z) <= 0.1").unwrap();
        match e {
            Expr::Compare(CmpOp::Le, lhs, rhs) => {
                assert_eq!(*lhs, Expr::Call(Func::Abs, vec![Expr::sym("z")]));
                assert_eq!(*rhs, Expr::Num(0.1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn grad_with_two_arguments_is_an_arity_error() {
        let err = parse_expression("grad(u, v)").unwrap_err();
        assert!(matches!(
            err,
            ParseError::Arity {
                name: "grad",
                expected: 1,
                found: 2,
                ..
            }
        ));
        assert!(matches!(
            parse_expression("dot(u)").unwrap_err(),
            ParseError::Arity { name: "dot", .. }
        ));
    }

    #[test]
    fn precedence_levels() {
        // unary > * / > + - > comparisons > && > ||
        let e = parse_expression("a || b && -c * d + e < f").unwrap();
        let want = Expr::Or(
            Box::new(Expr::sym("a")),
            Box::new(Expr::And(
                Box::new(Expr::sym("b")),
                Box::new(Expr::Compare(
                    CmpOp::Lt,
                    Box::new(Expr::binary(
                        BinOp::Add,
                        Expr::binary(BinOp::Mul, Expr::Neg(Box::new(Expr::sym("c"))), Expr::sym("d")),
                        Expr::sym("e"),
                    )),
                    Box::new(Expr::sym("f")),
                )),
            )),
        );
        assert_eq!(e, want);
    }

    #[test]
    fn numbers_and_errors() {
        assert_eq!(parse_expression("1e-8").unwrap(), Expr::Num(1e-8));
        assert_eq!(parse_expression(".5").unwrap(), Expr::Num(0.5));
        assert!(matches!(
            parse_expression("foo(x)").unwrap_err(),
            ParseError::UnknownFunction { column: 1, .. }
        ));
        assert!(matches!(
            parse_expression("x $ y").unwrap_err(),
            ParseError::UnexpectedChar { found: '$', column: 3 }
        ));
        assert!(matches!(parse_expression("(x + 1").unwrap_err(), ParseError::UnexpectedEnd { .. }));
        assert!(parse_expression("x y").is_err());
    }

    #[test]
    fn weak_form_rejects_comparisons() {
        assert_eq!(
            parse_weak_form("u*v + (x < 1)").unwrap_err(),
            ParseError::ComparisonInWeakForm
        );
        assert!(parse_weak_form("dot(grad(u),grad(v)) - f*v").is_ok());
    }
}

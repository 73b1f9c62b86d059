use std::collections::BTreeMap;

use crate::expr::{BinOp, Env, Expr, Func};
use crate::problem::{Coefficient, ProblemSpec};

use super::{collect_like_terms, vector_len, BasisSel, Operand, Region, Special, SymbolicError, Term};

/// What each weak-form identifier stands for.
#[derive(Debug, Clone)]
pub struct SymbolTable {
    pub dimension: usize,
    pub unknown: String,
    pub test: String,
    /// Scalar coefficients; `Some` for field expressions, inlined into
    /// opaque `Field` operands when they appear under a function call.
    pub scalars: BTreeMap<String, Option<Expr>>,
    pub vectors: BTreeMap<String, usize>,
}

impl SymbolTable {
    pub fn new(dimension: usize, unknown: &str, test: &str) -> Self {
        SymbolTable {
            dimension,
            unknown: unknown.to_string(),
            test: test.to_string(),
            scalars: BTreeMap::new(),
            vectors: BTreeMap::new(),
        }
    }

    pub fn with_scalar(mut self, name: &str) -> Self {
        self.scalars.insert(name.to_string(), None);
        self
    }

    pub fn with_vector(mut self, name: &str) -> Self {
        self.vectors.insert(name.to_string(), self.dimension);
        self
    }

    pub fn from_problem(spec: &ProblemSpec) -> Self {
        let mut table = SymbolTable::new(spec.dimension, spec.unknown(), &spec.test_symbol);
        for (name, c) in &spec.coefficients {
            match (c, vector_len(c)) {
                (_, Some(n)) => {
                    table.vectors.insert(name.clone(), n);
                }
                (Coefficient::Field(e), None) => {
                    table.scalars.insert(name.clone(), Some(e.clone()));
                }
                _ => {
                    table.scalars.insert(name.clone(), None);
                }
            }
        }
        table
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Mono {
    coef: f64,
    factors: BTreeMap<Operand, i32>,
    test: Option<BasisSel>,
    trial: Option<BasisSel>,
    dt: bool,
    region: Option<Region>,
}

impl Mono {
    fn constant(c: f64) -> Self {
        Mono {
            coef: c,
            factors: BTreeMap::new(),
            test: None,
            trial: None,
            dt: false,
            region: None,
        }
    }

    fn operand(op: Operand) -> Self {
        let mut m = Mono::constant(1.0);
        m.factors.insert(op, 1);
        m
    }

    fn is_basis_free(&self) -> bool {
        self.test.is_none() && self.trial.is_none() && !self.dt
    }

    fn is_number(&self) -> bool {
        self.is_basis_free() && self.factors.is_empty()
    }

    fn has_special(&self) -> bool {
        self.factors.keys().any(Operand::is_special)
    }

    fn mul(&self, other: &Mono) -> Result<Mono, SymbolicError> {
        if self.trial.is_some() && other.trial.is_some() {
            return Err(SymbolicError::Nonlinear("product of two unknown factors".into()));
        }
        if self.test.is_some() && other.test.is_some() {
            return Err(SymbolicError::Unsupported("test function appears twice in one term".into()));
        }
        if self.dt && other.dt {
            return Err(SymbolicError::Unsupported("product of two Dt terms".into()));
        }
        let region = match (self.region, other.region) {
            (Some(a), Some(b)) if a != b => {
                return Err(SymbolicError::Unsupported(format!("term multiplies {a} and {b} integrals")))
            }
            (a, b) => a.or(b),
        };
        let mut factors = self.factors.clone();
        for (op, p) in &other.factors {
            let e = factors.entry(op.clone()).or_insert(0);
            *e += p;
            if *e == 0 {
                factors.remove(op);
            }
        }
        Ok(Mono {
            coef: self.coef * other.coef,
            factors,
            test: self.test.or(other.test),
            trial: self.trial.or(other.trial),
            dt: self.dt || other.dt,
            region,
        })
    }

    fn reciprocal(&self) -> Mono {
        Mono {
            coef: 1.0 / self.coef,
            factors: self.factors.iter().map(|(op, p)| (op.clone(), -p)).collect(),
            ..self.clone()
        }
    }

    fn describe(&self) -> String {
        let mut s = crate::expr::format_number(self.coef);
        for (op, p) in &self.factors {
            s += &if *p == 1 { format!("*{op}") } else { format!("*{op}^{p}") };
        }
        if let Some(t) = self.trial {
            s += &format!("*{}", super::basis_text(t, "u"));
        }
        s
    }
}

type Poly = Vec<Mono>;

fn poly_mul(a: &Poly, b: &Poly) -> Result<Poly, SymbolicError> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            out.push(x.mul(y)?);
        }
    }
    Ok(out)
}

fn poly_neg(mut a: Poly) -> Poly {
    for m in &mut a {
        m.coef = -m.coef;
    }
    a
}

fn basis_free(p: &Poly) -> bool {
    p.iter().all(Mono::is_basis_free)
}

/// Value of a poly made only of numbers.
fn as_number(p: &Poly) -> Option<f64> {
    p.iter().all(Mono::is_number).then(|| p.iter().map(|m| m.coef).sum())
}

enum Val {
    Scalar(Poly),
    Vector(Vec<Poly>),
}

struct Expander<'a> {
    table: &'a SymbolTable,
}

impl Expander<'_> {
    fn scalar(&self, e: &Expr) -> Result<Poly, SymbolicError> {
        match self.value(e)? {
            Val::Scalar(p) => Ok(p),
            Val::Vector(_) => Err(SymbolicError::VectorInScalarContext(e.to_string())),
        }
    }

    fn vector(&self, e: &Expr) -> Result<Vec<Poly>, SymbolicError> {
        match self.value(e)? {
            Val::Vector(v) => Ok(v),
            Val::Scalar(_) => Err(SymbolicError::ScalarInVectorContext(e.to_string())),
        }
    }

    fn special_vector(&self, make: fn(usize) -> Special) -> Val {
        Val::Vector(
            (0..self.table.dimension)
                .map(|k| vec![Mono::operand(Operand::Special(make(k)))])
                .collect(),
        )
    }

    fn symbol(&self, name: &str) -> Result<Val, SymbolicError> {
        let t = self.table;
        let scalar = |m: Mono| Ok(Val::Scalar(vec![m]));
        if name == t.unknown {
            let mut m = Mono::constant(1.0);
            m.trial = Some(BasisSel::Value);
            return scalar(m);
        }
        if name == t.test {
            let mut m = Mono::constant(1.0);
            m.test = Some(BasisSel::Value);
            return scalar(m);
        }
        if let Some(n) = t.vectors.get(name) {
            return Ok(Val::Vector(
                (0..*n)
                    .map(|k| vec![Mono::operand(Operand::CoefComp(name.to_string(), k))])
                    .collect(),
            ));
        }
        if t.scalars.contains_key(name) {
            return scalar(Mono::operand(Operand::Coef(name.to_string())));
        }
        match name {
            "x" if t.dimension >= 1 => scalar(Mono::operand(Operand::Position(0))),
            "y" if t.dimension >= 2 => scalar(Mono::operand(Operand::Position(1))),
            "z" if t.dimension >= 3 => scalar(Mono::operand(Operand::Position(2))),
            "t" => scalar(Mono::operand(Operand::Time)),
            "pi" => scalar(Mono::constant(std::f64::consts::PI)),
            _ => Err(SymbolicError::UnknownIdentifier(name.to_string())),
        }
    }

    /// Opaque operand for a basis-free subexpression the expander does not
    /// distribute (function calls, non-integer powers, sums in a
    /// denominator). Field coefficients are inlined so the text only names
    /// positions, time, and numeric constants.
    fn field(&self, e: &Expr, parts: &[&Poly]) -> Result<Poly, SymbolicError> {
        if parts.iter().any(|p| p.iter().any(Mono::has_special)) {
            return Err(SymbolicError::Unsupported(format!(
                "boundary quantities inside `{e}` cannot be expanded"
            )));
        }
        let region = parts.iter().flat_map(|p| p.iter()).find_map(|m| m.region);
        let inlined = self.inline(e)?;
        if inlined.symbols().is_empty() {
            let v = inlined
                .eval_number(&Env::default())
                .map_err(|err| SymbolicError::Unsupported(err.to_string()))?;
            return Ok(vec![Mono::constant(v)]);
        }
        let mut m = Mono::operand(Operand::Field(inlined.to_string()));
        m.region = region;
        Ok(vec![m])
    }

    fn inline(&self, e: &Expr) -> Result<Expr, SymbolicError> {
        Ok(match e {
            Expr::Sym(s) => {
                if self.table.vectors.contains_key(s) {
                    return Err(SymbolicError::VectorInScalarContext(s.clone()));
                }
                match self.table.scalars.get(s) {
                    Some(Some(field)) => field.clone(),
                    _ => e.clone(),
                }
            }
            Expr::Neg(a) => Expr::Neg(Box::new(self.inline(a)?)),
            Expr::Binary(op, a, b) => Expr::binary(*op, self.inline(a)?, self.inline(b)?),
            Expr::Call(f, args) => Expr::Call(*f, args.iter().map(|a| self.inline(a)).collect::<Result<_, _>>()?),
            other => other.clone(),
        })
    }

    fn value(&self, e: &Expr) -> Result<Val, SymbolicError> {
        Ok(match e {
            Expr::Num(v) => Val::Scalar(vec![Mono::constant(*v)]),
            Expr::Sym(s) => self.symbol(s)?,
            Expr::Neg(a) => match self.value(a)? {
                Val::Scalar(p) => Val::Scalar(poly_neg(p)),
                Val::Vector(v) => Val::Vector(v.into_iter().map(poly_neg).collect()),
            },
            Expr::Binary(op, a, b) => self.binary(e, *op, a, b)?,
            Expr::Call(f, args) => self.call(e, *f, args)?,
            Expr::Bool(_) | Expr::Compare(..) | Expr::And(..) | Expr::Or(..) => {
                return Err(SymbolicError::Unsupported(format!("logical expression `{e}` in weak form")))
            }
        })
    }

    fn binary(&self, e: &Expr, op: BinOp, a: &Expr, b: &Expr) -> Result<Val, SymbolicError> {
        match op {
            BinOp::Add | BinOp::Sub => {
                let sign = |p: Poly| if op == BinOp::Sub { poly_neg(p) } else { p };
                match (self.value(a)?, self.value(b)?) {
                    (Val::Scalar(mut x), Val::Scalar(y)) => {
                        x.extend(sign(y));
                        Ok(Val::Scalar(x))
                    }
                    (Val::Vector(x), Val::Vector(y)) if x.len() == y.len() => Ok(Val::Vector(
                        x.into_iter()
                            .zip(y)
                            .map(|(mut p, q)| {
                                p.extend(sign(q));
                                p
                            })
                            .collect(),
                    )),
                    (Val::Vector(_), _) => Err(SymbolicError::VectorInScalarContext(a.to_string())),
                    (_, Val::Vector(_)) => Err(SymbolicError::VectorInScalarContext(b.to_string())),
                }
            }
            BinOp::Mul => match (self.value(a)?, self.value(b)?) {
                (Val::Scalar(x), Val::Scalar(y)) => Ok(Val::Scalar(poly_mul(&x, &y)?)),
                (Val::Scalar(s), Val::Vector(v)) | (Val::Vector(v), Val::Scalar(s)) => Ok(Val::Vector(
                    v.iter().map(|c| poly_mul(&s, c)).collect::<Result<_, _>>()?,
                )),
                (Val::Vector(_), Val::Vector(_)) => Err(SymbolicError::VectorInScalarContext(e.to_string())),
            },
            BinOp::Div => {
                let den = self.scalar(b)?;
                if !basis_free(&den) {
                    return Err(SymbolicError::Unsupported(format!(
                        "division by an expression involving the unknown or test function in `{e}`"
                    )));
                }
                let den = match den.len() {
                    1 => den,
                    _ => self.field(b, &[&den])?,
                };
                if den[0].coef == 0.0 {
                    return Err(SymbolicError::Unsupported(format!("division by zero in `{e}`")));
                }
                let inv = vec![den[0].reciprocal()];
                match self.value(a)? {
                    Val::Scalar(x) => Ok(Val::Scalar(poly_mul(&x, &inv)?)),
                    Val::Vector(v) => Ok(Val::Vector(v.iter().map(|c| poly_mul(c, &inv)).collect::<Result<_, _>>()?)),
                }
            }
            BinOp::Pow => {
                let base = self.scalar(a)?;
                let exp = self.scalar(b)?;
                let n = as_number(&exp);
                match n {
                    Some(n) if n.fract() == 0.0 && (0.0..=16.0).contains(&n) => {
                        let mut out = vec![Mono::constant(1.0)];
                        for _ in 0..n as usize {
                            out = poly_mul(&out, &base)?;
                        }
                        Ok(Val::Scalar(out))
                    }
                    Some(n) if n.fract() == 0.0 && n < 0.0 && base.len() == 1 && base[0].is_basis_free() => {
                        let inv = base[0].reciprocal();
                        let mut out = vec![Mono::constant(1.0)];
                        for _ in 0..(-n) as usize {
                            out = poly_mul(&out, &vec![inv.clone()])?;
                        }
                        Ok(Val::Scalar(out))
                    }
                    _ if basis_free(&base) && basis_free(&exp) => Ok(Val::Scalar(self.field(e, &[&base, &exp])?)),
                    _ => Err(SymbolicError::Nonlinear(format!("`{e}`"))),
                }
            }
        }
    }

    fn call(&self, e: &Expr, f: Func, args: &[Expr]) -> Result<Val, SymbolicError> {
        let special = |s: Special| Ok(Val::Scalar(vec![Mono::operand(Operand::Special(s))]));
        match f {
            Func::Normal => Ok(self.special_vector(Special::NTilde)),
            Func::TrueNormal => Ok(self.special_vector(Special::NTrue)),
            Func::DistanceToBoundary => Ok(self.special_vector(Special::Disp)),
            Func::ElementDiameter => special(Special::ElementDiameter),
            Func::DirichletValue => special(Special::DirichletValue),
            Func::NeumannValue => special(Special::NeumannValue),
            Func::Surface => Err(SymbolicError::Unsupported(
                "surface(...) integrals over element faces are not supported; use dirichletBoundary or neumannBoundary"
                    .into(),
            )),
            Func::DirichletBoundary | Func::NeumannBoundary => {
                let region = if f == Func::DirichletBoundary {
                    Region::DirichletSurface
                } else {
                    Region::NeumannSurface
                };
                let mut p = self.scalar(&args[0])?;
                for m in &mut p {
                    match m.region {
                        Some(r) if r != region => {
                            return Err(SymbolicError::Unsupported(format!("{r} integral nested in {region} integral")))
                        }
                        _ => m.region = Some(region),
                    }
                }
                Ok(Val::Scalar(p))
            }
            Func::Dt => {
                let mut p = self.scalar(&args[0])?;
                for m in &mut p {
                    if m.dt {
                        return Err(SymbolicError::Unsupported(format!("nested Dt in `{e}`")));
                    }
                    m.dt = true;
                }
                Ok(Val::Scalar(p))
            }
            Func::Dot => {
                let a = self.vector(&args[0])?;
                let b = self.vector(&args[1])?;
                if a.len() != b.len() {
                    return Err(SymbolicError::Unsupported(format!("length mismatch in `{e}`")));
                }
                let mut out = Vec::new();
                for (x, y) in a.iter().zip(&b) {
                    out.extend(poly_mul(x, y)?);
                }
                Ok(Val::Scalar(out))
            }
            Func::Grad => {
                let p = self.scalar(&args[0])?;
                let mut comps = vec![Vec::new(); self.table.dimension];
                for m in &p {
                    if m.is_number() {
                        continue;
                    }
                    let basis_only = m.factors.is_empty() && !m.dt;
                    let (test, trial) = match (m.test, m.trial) {
                        (Some(BasisSel::Value), None) if basis_only => (true, false),
                        (None, Some(BasisSel::Value)) if basis_only => (false, true),
                        _ => {
                            return Err(SymbolicError::Unsupported(format!(
                                "gradient of `{}`; only the unknown and the test function can be differentiated",
                                args[0]
                            )))
                        }
                    };
                    for (k, comp) in comps.iter_mut().enumerate() {
                        let mut d = m.clone();
                        if test {
                            d.test = Some(BasisSel::Deriv(k));
                        }
                        if trial {
                            d.trial = Some(BasisSel::Deriv(k));
                        }
                        comp.push(d);
                    }
                }
                Ok(Val::Vector(comps))
            }
            Func::Sin | Func::Cos | Func::Exp | Func::Sqrt | Func::Abs => {
                let arg = self.scalar(&args[0])?;
                if arg.iter().any(|m| m.trial.is_some()) {
                    return Err(SymbolicError::Nonlinear(format!("unknown inside `{e}`")));
                }
                if !basis_free(&arg) {
                    return Err(SymbolicError::Unsupported(format!("test function inside `{e}`")));
                }
                Ok(Val::Scalar(self.field(e, &[&arg])?))
            }
        }
    }
}

fn check_region(m: &Mono, region: Region) -> Result<(), SymbolicError> {
    for op in m.factors.keys() {
        let Operand::Special(s) = op else { continue };
        let ok = match (s, region) {
            (_, Region::Volume) => false,
            (Special::DirichletValue, r) => r == Region::DirichletSurface,
            (Special::NeumannValue, r) => r == Region::NeumannSurface,
            _ => true,
        };
        if !ok {
            return Err(SymbolicError::MisplacedSymbol {
                symbol: s.name(),
                region,
            });
        }
    }
    if m.dt && region != Region::Volume {
        return Err(SymbolicError::Unsupported(format!("Dt inside a {region} integral")));
    }
    Ok(())
}

/// Expand a weak form into a canonical sum of terms, one test factor each.
pub fn expand(weak_form: &Expr, table: &SymbolTable) -> Result<Vec<Term>, SymbolicError> {
    let poly = Expander { table }.scalar(weak_form)?;
    let mut terms = Vec::with_capacity(poly.len());
    for m in poly {
        if m.coef == 0.0 {
            continue;
        }
        let region = m.region.unwrap_or(Region::Volume);
        check_region(&m, region)?;
        let Some(test) = m.test else {
            return Err(SymbolicError::MissingTest(m.describe()));
        };
        terms.push(Term {
            region,
            test,
            trial: m.trial,
            time_derivative: m.dt,
            coef: m.coef,
            factors: m.factors.into_iter().collect(),
        });
    }
    Ok(collect_like_terms(terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_weak_form;

    fn operands(terms: &[Term]) -> std::collections::BTreeSet<Operand> {
        terms.iter().flat_map(|t| t.factors.iter().map(|(op, _)| op.clone())).collect()
    }

    fn table(dim: usize) -> SymbolTable {
        SymbolTable::new(dim, "u", "v")
            .with_scalar("D")
            .with_scalar("f")
            .with_scalar("alpha")
            .with_vector("b")
    }

    fn run(text: &str, dim: usize) -> Result<Vec<Term>, SymbolicError> {
        expand(&parse_weak_form(text).unwrap(), &table(dim))
    }

    #[test]
    fn stiffness_splits_per_axis() {
        let terms = run("dot(grad(u),grad(v))", 2).unwrap();
        assert_eq!(terms.len(), 2);
        for (k, t) in terms.iter().enumerate() {
            assert_eq!(t.trial, Some(BasisSel::Deriv(k)));
            assert_eq!(t.test, BasisSel::Deriv(k));
            assert!(t.factors.is_empty());
            assert_eq!(t.coef, 1.0);
        }
    }

    #[test]
    fn source_is_single_linear_term() {
        let terms = run("f*v", 3).unwrap();
        assert_eq!(terms.len(), 1);
        assert!(!terms[0].is_bilinear());
        assert_eq!(terms[0].factors, vec![(Operand::Coef("f".into()), 1)]);
    }

    #[test]
    fn advection_uses_vector_components() {
        let terms = run("-dot(b, grad(u))*v", 2).unwrap();
        assert_eq!(terms.len(), 2);
        assert_eq!(terms[1].factors, vec![(Operand::CoefComp("b".into(), 1), 1)]);
        assert_eq!(terms[1].trial, Some(BasisSel::Deriv(1)));
        assert_eq!(terms[1].coef, -1.0);
    }

    #[test]
    fn like_terms_merge() {
        let terms = run("u*v + 2*u*v - f*v + v*f", 2).unwrap();
        assert_eq!(terms.len(), 1);
        assert_eq!(terms[0].coef, 3.0);
    }

    #[test]
    fn penalty_over_diameter() {
        let terms = run("dirichletBoundary(alpha / elementDiameter() * u * v)", 2).unwrap();
        assert_eq!(terms.len(), 1);
        assert_eq!(terms[0].region, Region::DirichletSurface);
        assert_eq!(
            terms[0].factors,
            vec![(Operand::Coef("alpha".into()), 1), (Operand::Special(Special::ElementDiameter), -1)]
        );
    }

    #[test]
    fn function_of_position_becomes_field() {
        let t = table(2);
        let mut t2 = t.clone();
        t2.scalars.insert("f".into(), Some(crate::expr::parse_expression("2*x").unwrap()));
        let terms = expand(&parse_weak_form("sin(pi*f)*v + sqrt(4)*v").unwrap(), &t2).unwrap();
        assert_eq!(terms.len(), 2);
        assert_eq!(terms[0].factors, vec![(Operand::Field("sin(pi * (2 * x))".into()), 1)]);
        assert_eq!(terms[1].coef, 2.0);
        assert!(terms[1].factors.is_empty());
    }

    #[test]
    fn sum_in_denominator_is_opaque() {
        let terms = run("u*v / (1 + x)", 2).unwrap();
        assert_eq!(terms[0].factors, vec![(Operand::Field("1 + x".into()), -1)]);
        let terms = run("u*v / (1 + 3)", 2).unwrap();
        assert_eq!(terms[0].coef, 0.25);
    }

    #[test]
    fn integer_power_distributes() {
        let terms = run("(x + 1)^2 * v", 2).unwrap();
        assert_eq!(terms.len(), 3);
        let terms = run("x^-2 * v", 2).unwrap();
        assert_eq!(terms[0].factors, vec![(Operand::Position(0), -2)]);
    }

    #[test]
    fn rejects_nonlinear_and_misplaced() {
        assert!(matches!(run("u*u*v", 2), Err(SymbolicError::Nonlinear(_))));
        assert!(matches!(run("sin(u)*v", 2), Err(SymbolicError::Nonlinear(_))));
        assert!(matches!(run("u^2*v", 2), Err(SymbolicError::Nonlinear(_))));
        assert!(matches!(run("u*f", 2), Err(SymbolicError::MissingTest(_))));
        assert!(matches!(run("elementDiameter()*u*v", 2), Err(SymbolicError::MisplacedSymbol { .. })));
        assert!(matches!(
            run("neumannBoundary(dirichletValue()*v)", 2),
            Err(SymbolicError::MisplacedSymbol { .. })
        ));
        assert!(matches!(run("grad(u)*v", 2), Err(SymbolicError::VectorInScalarContext(_))));
        assert!(matches!(run("dot(u, grad(v))", 2), Err(SymbolicError::ScalarInVectorContext(_))));
        assert!(matches!(run("dot(grad(f*u), grad(v))", 2), Err(SymbolicError::Unsupported(_))));
        assert!(matches!(run("surface(u*v)", 2), Err(SymbolicError::Unsupported(_))));
        assert!(matches!(run("q*v", 2), Err(SymbolicError::UnknownIdentifier(_))));
        assert!(matches!(run("z*v", 2), Err(SymbolicError::UnknownIdentifier(_))));
        assert!(matches!(run("u*v/u", 2), Err(SymbolicError::Unsupported(_))));
    }

    #[test]
    fn surface_quantities_stay_on_surfaces() {
        let terms = run(
            "dirichletBoundary(-dot(grad(u), normal()) * v - dot(grad(v), normal()) * (u + dot(grad(u), distanceToBoundary()) - dirichletValue()) + alpha / elementDiameter() * (u + dot(grad(u), distanceToBoundary()) - dirichletValue()) * (v + dot(grad(v), distanceToBoundary())))",
            2,
        )
        .unwrap();
        assert!(terms.iter().all(|t| t.region == Region::DirichletSurface));
        // Penalty alone distributes to 3 trial shapes x 3 test shapes in 2-D,
        // with the cross-displacement products d0*d1 merging pairwise.
        assert!(terms.iter().any(|t| t.factors.iter().any(|(op, _)| *op == Operand::Special(Special::DirichletValue))));
        let ops = operands(&terms);
        assert!(ops.contains(&Operand::Special(Special::Disp(1))));
        assert!(!ops.contains(&Operand::Special(Special::NTrue(0))));
    }
}

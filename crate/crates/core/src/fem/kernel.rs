//! Kernel programs resolved against a problem's coefficients and evaluated
//! over one element or one surrogate face.

use std::collections::BTreeMap;

use crate::expr::{parse_expression, Env, Expr};
use crate::geometry::SurfacePointData;
use crate::problem::{Coefficient, ProblemSpec};
use crate::symbolic::{BasisSel, KernelIr, Operand, RegionKernel, Special};

use super::{ElementGeometry, FemError, QuadratureRule};

/// Coefficient values and opaque field expressions, keyed by IR name.
#[derive(Debug, Clone, Default)]
pub struct CoefficientTable {
    scalars: BTreeMap<String, Coefficient>,
    constants: BTreeMap<String, f64>,
}

impl CoefficientTable {
    pub fn from_problem(spec: &ProblemSpec) -> Self {
        CoefficientTable {
            scalars: spec.coefficients.clone(),
            constants: spec.constants(),
        }
    }

    pub fn with_scalar(mut self, name: &str, value: f64) -> Self {
        self.scalars.insert(name.to_string(), Coefficient::Scalar(value));
        self.constants.insert(name.to_string(), value);
        self
    }

    pub fn with_field(mut self, name: &str, text: &str) -> Result<Self, FemError> {
        let e = parse_expression(text).map_err(|e| FemError::Field {
            text: text.to_string(),
            message: e.to_string(),
        })?;
        self.scalars.insert(name.to_string(), Coefficient::Field(e));
        Ok(self)
    }

    pub fn constants(&self) -> &BTreeMap<String, f64> {
        &self.constants
    }

    fn source(&self, op: &Operand) -> Result<Source, FemError> {
        let from_coef = |c: &Coefficient, name: &str| match c {
            Coefficient::Scalar(v) => Ok(Source::Const(*v)),
            Coefficient::Field(e) => Ok(Source::Expr(e.clone())),
            Coefficient::Vector(_) => Err(FemError::MissingCoefficient(name.to_string())),
        };
        Ok(match op {
            Operand::Coef(name) => {
                let c = self
                    .scalars
                    .get(name)
                    .ok_or_else(|| FemError::MissingCoefficient(name.clone()))?;
                from_coef(c, name)?
            }
            Operand::CoefComp(name, k) => {
                let comp = match self.scalars.get(name) {
                    Some(Coefficient::Vector(v)) => v.get(*k),
                    _ => None,
                };
                let c = comp.ok_or_else(|| FemError::MissingCoefficient(format!("{name}[{k}]")))?;
                from_coef(c, name)?
            }
            Operand::Field(text) => Source::Expr(parse_expression(text).map_err(|e| FemError::Field {
                text: text.clone(),
                message: e.to_string(),
            })?),
            Operand::Position(k) => Source::Position(*k),
            Operand::Time => Source::Time,
            Operand::TimeStep => Source::TimeStep,
            Operand::Special(s) => Source::Special(*s),
            Operand::Previous(slot) => Source::Previous(*slot),
        })
    }
}

#[derive(Debug, Clone)]
enum Source {
    Const(f64),
    Expr(Expr),
    Position(usize),
    Time,
    TimeStep,
    Special(Special),
    Previous(u8),
}

#[derive(Debug, Clone)]
struct Contribution {
    test: BasisSel,
    trial: Option<BasisSel>,
    coef: f64,
    factors: Vec<(usize, i32)>,
}

impl Contribution {
    fn scalar(&self, slots: &[f64]) -> f64 {
        self.factors
            .iter()
            .fold(self.coef, |acc, &(s, p)| acc * if p == 1 { slots[s] } else { slots[s].powi(p) })
    }
}

/// One region's program with operand lookups resolved to slots.
#[derive(Debug, Clone, Default)]
pub struct RegionProgram {
    sources: Vec<Source>,
    bilinear: Vec<Contribution>,
    linear: Vec<Contribution>,
    reads_history: bool,
}

impl RegionProgram {
    fn new(kernel: &RegionKernel, coefs: &CoefficientTable) -> Result<Self, FemError> {
        let ops: Vec<&Operand> = kernel.operands().into_iter().collect();
        let sources = ops.iter().map(|op| coefs.source(op)).collect::<Result<Vec<_>, _>>()?;
        let slot = |op: &Operand| ops.iter().position(|o| *o == op).expect("operand collected");
        let factors = |s: &crate::symbolic::ScalarProgram| s.factors.iter().map(|f| (slot(&f.operand), f.power)).collect();
        Ok(RegionProgram {
            reads_history: sources.iter().any(|s| matches!(s, Source::Previous(_))),
            bilinear: kernel
                .bilinear
                .iter()
                .map(|c| Contribution {
                    test: c.test,
                    trial: Some(c.trial),
                    coef: c.scalar.coef,
                    factors: factors(&c.scalar),
                })
                .collect(),
            linear: kernel
                .linear
                .iter()
                .map(|c| Contribution {
                    test: c.test,
                    trial: None,
                    coef: c.scalar.coef,
                    factors: factors(&c.scalar),
                })
                .collect(),
            sources,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.bilinear.is_empty() && self.linear.is_empty()
    }

    fn fill(&self, ctx: &QpContext, prev: [f64; 2], consts: &BTreeMap<String, f64>, out: &mut Vec<f64>) {
        out.clear();
        for s in &self.sources {
            out.push(match s {
                Source::Const(v) => *v,
                Source::Expr(e) => e
                    .eval_number(&Env::at(ctx.point, ctx.t).with_constants(consts))
                    .unwrap_or(f64::NAN),
                Source::Position(k) => ctx.point[*k],
                Source::Time => ctx.t,
                Source::TimeStep => ctx.dt,
                Source::Previous(slot) => prev[*slot as usize - 1],
                Source::Special(sp) => {
                    let s = ctx.surface.as_ref().expect("surface operands only appear in surface kernels");
                    match sp {
                        Special::NTilde(k) => s.data.surrogate_normal[*k],
                        Special::NTrue(k) => s.data.true_normal[*k],
                        Special::Disp(k) => s.data.displacement[*k],
                        Special::ElementDiameter => s.h,
                        Special::DirichletValue | Special::NeumannValue => s.g,
                    }
                }
            });
        }
    }
}

/// A kernel IR bound to concrete coefficients.
#[derive(Debug, Clone)]
pub struct CompiledKernel {
    pub dimension: usize,
    pub volume: RegionProgram,
    pub dirichlet: RegionProgram,
    pub neumann: RegionProgram,
    constants: BTreeMap<String, f64>,
}

impl CompiledKernel {
    pub fn new(ir: &KernelIr, coefs: &CoefficientTable) -> Result<Self, FemError> {
        Ok(CompiledKernel {
            dimension: ir.dimension,
            volume: RegionProgram::new(&ir.volume, coefs)?,
            dirichlet: RegionProgram::new(&ir.dirichlet, coefs)?,
            neumann: RegionProgram::new(&ir.neumann, coefs)?,
            constants: coefs.constants.clone(),
        })
    }
}

/// Point-wise inputs to a kernel program.
#[derive(Debug, Clone, Copy)]
pub struct QpContext {
    pub point: [f64; 3],
    /// Time level being solved for.
    pub t: f64,
    pub dt: f64,
    pub surface: Option<SurfaceQp>,
}

/// Boundary data for one surface quadrature point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceQp {
    pub data: SurfacePointData,
    /// Owner element diameter.
    pub h: f64,
    /// Prescribed boundary value at the true point.
    pub g: f64,
}

/// Dense elemental matrix and vector for up to eight corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementMatrix {
    pub nbf: usize,
    pub a: [[f64; 8]; 8],
    pub b: [f64; 8],
}

impl ElementMatrix {
    fn zero(nbf: usize) -> Self {
        ElementMatrix {
            nbf,
            a: [[0.0; 8]; 8],
            b: [0.0; 8],
        }
    }

    pub fn add(&mut self, other: &ElementMatrix) {
        for r in 0..self.nbf {
            for c in 0..self.nbf {
                self.a[r][c] += other.a[r][c];
            }
            self.b[r] += other.b[r];
        }
    }

    pub fn is_finite(&self) -> bool {
        (0..self.nbf).all(|r| self.b[r].is_finite() && self.a[r][..self.nbf].iter().all(|v| v.is_finite()))
    }
}

fn accumulate(
    prog: &RegionProgram,
    consts: &BTreeMap<String, f64>,
    basis: &super::Basis,
    ctx: &QpContext,
    history: &[[f64; 8]; 2],
    wdetj: f64,
    slots: &mut Vec<f64>,
    out: &mut ElementMatrix,
) {
    let nbf = out.nbf;
    let prev = if prog.reads_history {
        [basis.interpolate(&history[0][..nbf]), basis.interpolate(&history[1][..nbf])]
    } else {
        [0.0; 2]
    };
    prog.fill(ctx, prev, consts, slots);
    for c in &prog.bilinear {
        let s = wdetj * c.scalar(slots);
        let trial = c.trial.expect("bilinear");
        for r in 0..nbf {
            let tr = s * basis.select(c.test, r);
            if tr == 0.0 {
                continue;
            }
            for col in 0..nbf {
                out.a[r][col] += tr * basis.select(trial, col);
            }
        }
    }
    for c in &prog.linear {
        let s = wdetj * c.scalar(slots);
        for r in 0..nbf {
            out.b[r] += s * basis.select(c.test, r);
        }
    }
}

/// Integrate the volume program over one element. `history` holds corner
/// values of the unknown one and two steps back.
pub fn eval_volume(
    kernel: &CompiledKernel,
    geom: &ElementGeometry,
    rule: &QuadratureRule,
    history: &[[f64; 8]; 2],
    t: f64,
    dt: f64,
) -> ElementMatrix {
    let mut out = ElementMatrix::zero(1 << geom.dim);
    let mut slots = Vec::with_capacity(kernel.volume.sources.len());
    for (xi, w) in rule.points.iter().zip(&rule.weights) {
        let basis = geom.basis_at_reference(*xi);
        let ctx = QpContext {
            point: geom.to_physical(*xi),
            t,
            dt,
            surface: None,
        };
        accumulate(&kernel.volume, &kernel.constants, &basis, &ctx, history, w * geom.det_j, &mut slots, &mut out);
    }
    out
}

/// Physical points and weights of a face rule on the face box
/// `[lo, hi]` (collapsed along `axis`).
pub fn face_points(rule: &QuadratureRule, lo: [f64; 3], hi: [f64; 3], axis: usize, dim: usize) -> Vec<([f64; 3], f64)> {
    let tangential: Vec<usize> = (0..dim).filter(|&k| k != axis).collect();
    let jac: f64 = tangential.iter().map(|&k| 0.5 * (hi[k] - lo[k])).product();
    rule.points
        .iter()
        .zip(&rule.weights)
        .map(|(xi, w)| {
            let mut p = lo;
            for (j, &k) in tangential.iter().enumerate() {
                p[k] = lo[k] + 0.5 * (xi[j] + 1.0) * (hi[k] - lo[k]);
            }
            (p, w * jac)
        })
        .collect()
}

/// Integrate a surface program over face quadrature points of the owner
/// element. Points whose `program` is `None` contribute nothing.
pub fn eval_surface<'k>(
    kernel: &'k CompiledKernel,
    owner: &ElementGeometry,
    points: impl IntoIterator<Item = (&'k RegionProgram, [f64; 3], f64, SurfaceQp)>,
    history: &[[f64; 8]; 2],
    t: f64,
    dt: f64,
) -> ElementMatrix {
    let mut out = ElementMatrix::zero(1 << owner.dim);
    let mut slots = Vec::new();
    for (prog, point, w, sq) in points {
        if prog.is_empty() {
            continue;
        }
        let basis = owner.basis_at(point);
        let ctx = QpContext {
            point,
            t,
            dt,
            surface: Some(sq),
        };
        accumulate(prog, &kernel.constants, &basis, &ctx, history, w, &mut slots, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_weak_form;
    use crate::fem::gauss_rule;
    use crate::symbolic::{classify, discretize_time, expand, lower, SymbolTable};

    fn kernel(text: &str, dim: usize, coefs: &CoefficientTable, table: SymbolTable) -> CompiledKernel {
        let terms = expand(&parse_weak_form(text).unwrap(), &table).unwrap();
        let d = discretize_time(terms, None).unwrap();
        let ir = lower(&classify(d.terms.clone()).unwrap(), dim, "u", &d);
        CompiledKernel::new(&ir, coefs).unwrap()
    }

    #[test]
    fn unit_square_stiffness() {
        let k = kernel(
            "dot(grad(u),grad(v)) - f*v",
            2,
            &CoefficientTable::default().with_scalar("f", 1.0),
            SymbolTable::new(2, "u", "v").with_scalar("f"),
        );
        let g = ElementGeometry::new([0.0; 3], [1.0, 1.0, 0.0], 2);
        let m = eval_volume(&k, &g, &gauss_rule(2, 2).unwrap(), &[[0.0; 8]; 2], 0.0, 0.0);
        let diag = 2.0 / 3.0;
        let expect = [
            [diag, -1.0 / 6.0, -1.0 / 6.0, -1.0 / 3.0],
            [-1.0 / 6.0, diag, -1.0 / 3.0, -1.0 / 6.0],
        ];
        for r in 0..2 {
            for c in 0..4 {
                assert!((m.a[r][c] - expect[r][c]).abs() < 1e-15, "{r} {c}");
            }
        }
        // classify moves the source to the right-hand side with a flipped sign.
        assert!(m.b[..4].iter().all(|b| (b - 0.25).abs() < 1e-15));
    }

    #[test]
    fn field_coefficient_integrates_exactly() {
        let coefs = CoefficientTable::default().with_field("f", "x*y").unwrap();
        let k = kernel("u*v - f*v", 2, &coefs, SymbolTable::new(2, "u", "v").with_scalar("f"));
        let g = ElementGeometry::new([0.0; 3], [2.0, 1.0, 0.0], 2);
        let m = eval_volume(&k, &g, &gauss_rule(3, 2).unwrap(), &[[0.0; 8]; 2], 0.0, 0.0);
        let total: f64 = m.b[..4].iter().sum();
        assert!((total - 1.0).abs() < 1e-14, "{total}");
        let mass: f64 = m.a.iter().take(4).flat_map(|r| r[..4].iter()).sum();
        assert!((mass - 2.0).abs() < 1e-14);
    }

    #[test]
    fn missing_coefficient_is_reported() {
        let table = SymbolTable::new(2, "u", "v").with_scalar("k");
        let terms = expand(&parse_weak_form("k*u*v").unwrap(), &table).unwrap();
        let d = discretize_time(terms, None).unwrap();
        let ir = lower(&classify(d.terms.clone()).unwrap(), 2, "u", &d);
        assert!(matches!(
            CompiledKernel::new(&ir, &CoefficientTable::default()),
            Err(FemError::MissingCoefficient(n)) if n == "k"
        ));
    }

    #[test]
    fn face_rule_maps_to_face() {
        let r = gauss_rule(2, 1).unwrap();
        let pts = face_points(&r, [0.0, 0.5, 0.0], [0.0, 1.0, 0.0], 0, 2);
        assert_eq!(pts.len(), 2);
        let len: f64 = pts.iter().map(|p| p.1).sum();
        assert!((len - 0.5).abs() < 1e-15);
        assert!(pts.iter().all(|p| p.0[0] == 0.0 && p.0[1] > 0.5 && p.0[1] < 1.0));
    }
}

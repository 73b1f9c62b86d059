//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use sbmgen::codegen::{render_kernels, serialize_ir, KernelTemplate};
use sbmgen::expr::{eval_scalar, parse_expression, Env, Expr, Func, Value};
use sbmgen::fem::ElementMatrix;
use sbmgen::mesh::IncompleteMesh;
use sbmgen::solve::SparseSystem;
use sbmgen::problem::{load_problem, parse_problem, Coefficient, ProblemSpec, TimeScheme};
use sbmgen::symbolic::{compile, BasisSel, KernelIr, OperandValues, Operand, RegionKernel, Special};

pub fn problems_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems")
}

pub fn problem(name: &str) -> ProblemSpec {
    let path = problems_dir().join(name);
    load_problem(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn spec(text: &str) -> ProblemSpec {
    parse_problem(text, &problems_dir()).unwrap_or_else(|e| panic!("{e}\n{text}"))
}

/// Steady Poisson with SBM Dirichlet terms on an analytic circle or sphere.
pub fn sbm_poisson(dim: usize, base: u32, boundary: u32, radius: f64, f: &str, g: &str, tol: f64) -> String {
    let (lo, hi, center, shape) = if dim == 2 {
        ("[0.0, 0.0]", "[1.0, 1.0]", "[0.5, 0.5]", "circle")
    } else {
        ("[0.0, 0.0, 0.0]", "[1.0, 1.0, 1.0]", "[0.5, 0.5, 0.5]", "sphere")
    };
    format!(
        r#"
[domain]
dimension = {dim}
min = {lo}
max = {hi}
base_refine_level = {base}

[[geometry]]
name = "body"
shape = "{shape}"
center = {center}
radius = {radius}
refine_level = {boundary}

[equation]
variables = ["u"]
test = "v"
weak_form = """
dot(grad(u), grad(v)) - f*v
+ dirichletBoundary(
    -dot(grad(u), normal()) * v
    - dot(grad(v), normal()) * (u + dot(grad(u), distanceToBoundary()) - dirichletValue())
    + alpha / elementDiameter()
      * (u + dot(grad(u), distanceToBoundary()) - dirichletValue())
      * (v + dot(grad(v), distanceToBoundary())))
"""
exact = "{g}"

[coefficients]
f = "{f}"
alpha = 400.0

[[region]]
id = 1
where = "true"

[[boundary]]
variable = "u"
region = 1
kind = "DIRICHLET"
value = "{g}"

[solver]
ksp_max_it = 20000
ksp_atol = {tol:e}
ksp_rtol = {tol:e}
"#
    )
}

/// Replace the weak form of a script built by [`sbm_poisson`].
pub fn with_weak_form(script: &str, form: &str) -> String {
    let start = script.find("weak_form = \"\"\"").expect("weak form block") + 15;
    let end = start + script[start..].find("\"\"\"").expect("closing quotes");
    format!("{}{form}{}", &script[..start], &script[end..])
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Node-wise maximum error against a function of position.
pub fn nodal_error(mesh: &IncompleteMesh, values: &[f64], exact: impl Fn([f64; 3]) -> f64) -> f64 {
    mesh.nodes
        .coords
        .iter()
        .zip(values)
        .map(|(p, v)| (v - exact(*p)).abs())
        .fold(0.0, f64::max)
}

/// Largest entry-wise gap between a scattered system and the dense
/// projection `C^T A C`, `C^T b` of the unconstrained element sum, relative
/// to the largest entry.
pub fn projection_gap(mesh: &IncompleteMesh, elemental: &[ElementMatrix], sys: &SparseSystem) -> f64 {
    let n = mesh.nodes.len();
    let mut full = DMatrix::<f64>::zeros(n, n);
    let mut full_b = DMatrix::<f64>::zeros(n, 1);
    for (e, m) in elemental.iter().enumerate() {
        let c = mesh.corners(e);
        for r in 0..c.len() {
            full_b[(c[r] as usize, 0)] += m.b[r];
            for q in 0..c.len() {
                full[(c[r] as usize, c[q] as usize)] += m.a[r][q];
            }
        }
    }
    let mut cmat = DMatrix::<f64>::zeros(n, mesh.ndof());
    for (i, w) in mesh.nodes.expansion.iter().enumerate() {
        for &(d, c) in w {
            cmat[(i, d as usize)] += c;
        }
    }
    let want = cmat.transpose() * &full * &cmat;
    let want_b = cmat.transpose() * &full_b;
    let got = sys.a.to_dense();
    let mut gap: f64 = 0.0;
    for i in 0..mesh.ndof() {
        gap = gap.max((sys.b[i] - want_b[(i, 0)]).abs() / want_b.amax());
        for j in 0..mesh.ndof() {
            gap = gap.max((got[i][j] - want[(i, j)]).abs() / want.amax());
        }
    }
    gap
}

pub fn heat3d_kernels() -> (KernelIr, Vec<(String, String)>) {
    let spec = problem("heat3d.toml");
    let forms = compile(&spec).unwrap();
    let mut files = render_kernels(&forms.ir, &spec.coefficients, &KernelTemplate::default_template()).unwrap();
    files.push(("kernel_ir.json".into(), serialize_ir(&forms.ir)));
    (forms.ir, files)
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/heat3d")
}

/// Compare rendered files with the checked-in copies, rewriting them when
/// `UPDATE_GOLDEN` is set.
pub fn check_golden(files: &[(String, String)]) -> Result<(), String> {
    let dir = golden_dir();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        for (name, text) in files {
            std::fs::write(dir.join(name), text).map_err(|e| e.to_string())?;
        }
        return Ok(());
    }
    for (name, text) in files {
        let path = dir.join(name);
        let want = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        if &want != text {
            let line = want
                .lines()
                .zip(text.lines())
                .position(|(a, b)| a != b)
                .map_or_else(|| "length".to_string(), |i| format!("line {}", i + 1));
            return Err(format!("{name} differs from golden copy at {line}"));
        }
    }
    Ok(())
}

/// One randomized evaluation point for weak-form integrands.
#[derive(Debug, Clone)]
pub struct Sample {
    pub dim: usize,
    pub x: [f64; 3],
    pub t: f64,
    pub dt: f64,
    pub u: f64,
    pub grad_u: [f64; 3],
    pub v: f64,
    pub grad_v: [f64; 3],
    pub prev: [f64; 2],
    pub n_tilde: [f64; 3],
    pub n_true: [f64; 3],
    pub disp: [f64; 3],
    pub h: f64,
    pub g_d: f64,
    pub g_n: f64,
}

impl Sample {
    pub fn random(dim: usize, rng: &mut impl Rng) -> Self {
        let vec = |rng: &mut dyn rand::RngCore| -> [f64; 3] {
            std::array::from_fn(|k| if k < dim { rng.gen_range(-1.0..1.0) } else { 0.0 })
        };
        Sample {
            dim,
            x: vec(rng),
            t: rng.gen_range(0.0..1.0),
            dt: rng.gen_range(0.001..0.1),
            u: rng.gen_range(-1.0..1.0),
            grad_u: vec(rng),
            v: rng.gen_range(-1.0..1.0),
            grad_v: vec(rng),
            prev: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            n_tilde: vec(rng),
            n_true: vec(rng),
            disp: vec(rng),
            h: rng.gen_range(0.01..0.5),
            g_d: rng.gen_range(-1.0..1.0),
            g_n: rng.gen_range(-1.0..1.0),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Val {
    S(f64),
    V([f64; 3]),
}

impl Val {
    fn s(self) -> f64 {
        match self {
            Val::S(v) => v,
            Val::V(_) => panic!("expected a scalar"),
        }
    }
}

/// Which function the unknown's symbol stands for.
#[derive(Clone, Copy)]
enum Bind {
    Current,
    Previous(usize),
}

/// Scales for the region and time-derivative wrappers.
#[derive(Clone, Copy)]
struct Scales {
    dirichlet: f64,
    neumann: f64,
    dt_part: f64,
}

/// Direct tree-walking evaluation of a weak form at one sample.
pub struct WeakFormOracle<'a> {
    pub spec: &'a ProblemSpec,
    pub scheme: Option<TimeScheme>,
    constants: BTreeMap<String, f64>,
}

impl<'a> WeakFormOracle<'a> {
    pub fn new(spec: &'a ProblemSpec, scheme: Option<TimeScheme>) -> Self {
        WeakFormOracle {
            spec,
            scheme,
            constants: spec.constants(),
        }
    }

    fn coef(&self, name: &str, s: &Sample) -> Val {
        let scalar = |c: &Coefficient| match c {
            Coefficient::Scalar(v) => *v,
            Coefficient::Field(e) => self.field(e, s),
            Coefficient::Vector(_) => panic!("nested vector"),
        };
        match &self.spec.coefficients[name] {
            Coefficient::Vector(items) => {
                let mut out = [0.0; 3];
                for (o, c) in out.iter_mut().zip(items) {
                    *o = scalar(c);
                }
                Val::V(out)
            }
            c => Val::S(scalar(c)),
        }
    }

    fn field(&self, e: &Expr, s: &Sample) -> f64 {
        match eval_scalar(e, &Env::at(s.x, s.t).with_constants(&self.constants)).unwrap() {
            Value::Num(v) => v,
            Value::Bool(_) => panic!("boolean field"),
        }
    }

    fn eval(&self, e: &Expr, s: &Sample, bind: Bind, sc: Scales) -> Val {
        use sbmgen::expr::BinOp::*;
        let unknown = self.spec.unknown();
        match e {
            Expr::Num(v) => Val::S(*v),
            Expr::Sym(name) if name == unknown => Val::S(match bind {
                Bind::Current => s.u,
                Bind::Previous(k) => s.prev[k],
            }),
            Expr::Sym(name) if *name == self.spec.test_symbol => Val::S(s.v),
            Expr::Sym(name) => match name.as_str() {
                "x" => Val::S(s.x[0]),
                "y" => Val::S(s.x[1]),
                "z" => Val::S(s.x[2]),
                "t" => Val::S(s.t),
                "pi" => Val::S(std::f64::consts::PI),
                other => self.coef(other, s),
            },
            Expr::Neg(a) => match self.eval(a, s, bind, sc) {
                Val::S(v) => Val::S(-v),
                Val::V(v) => Val::V(v.map(|c| -c)),
            },
            Expr::Binary(op, a, b) => {
                let (a, b) = (self.eval(a, s, bind, sc), self.eval(b, s, bind, sc));
                match (op, a, b) {
                    (Add, Val::V(p), Val::V(q)) => Val::V(std::array::from_fn(|k| p[k] + q[k])),
                    (Sub, Val::V(p), Val::V(q)) => Val::V(std::array::from_fn(|k| p[k] - q[k])),
                    (Mul, Val::S(c), Val::V(q)) | (Mul, Val::V(q), Val::S(c)) => Val::V(q.map(|x| c * x)),
                    (Div, Val::V(q), Val::S(c)) => Val::V(q.map(|x| x / c)),
                    (Add, Val::S(p), Val::S(q)) => Val::S(p + q),
                    (Sub, Val::S(p), Val::S(q)) => Val::S(p - q),
                    (Mul, Val::S(p), Val::S(q)) => Val::S(p * q),
                    (Div, Val::S(p), Val::S(q)) => Val::S(p / q),
                    (Pow, Val::S(p), Val::S(q)) => Val::S(p.powf(q)),
                    _ => panic!("unsupported operand shapes in `{e}`"),
                }
            }
            Expr::Call(f, args) => self.call(*f, args, s, bind, sc),
            _ => panic!("not a weak-form expression: `{e}`"),
        }
    }

    fn call(&self, f: Func, args: &[Expr], s: &Sample, bind: Bind, sc: Scales) -> Val {
        let dim = s.dim;
        let take = |v: [f64; 3]| Val::V(std::array::from_fn(|k| if k < dim { v[k] } else { 0.0 }));
        match f {
            Func::Grad => match &args[0] {
                Expr::Sym(n) if n == self.spec.unknown() => match bind {
                    Bind::Current => take(s.grad_u),
                    Bind::Previous(_) => panic!("gradient of a previous value"),
                },
                Expr::Sym(n) if *n == self.spec.test_symbol => take(s.grad_v),
                other => panic!("grad of `{other}`"),
            },
            Func::Dot => match (self.eval(&args[0], s, bind, sc), self.eval(&args[1], s, bind, sc)) {
                (Val::V(p), Val::V(q)) => Val::S((0..3).map(|k| p[k] * q[k]).sum()),
                _ => panic!("dot of scalars"),
            },
            Func::Normal => take(s.n_tilde),
            Func::TrueNormal => take(s.n_true),
            Func::DistanceToBoundary => take(s.disp),
            Func::ElementDiameter => Val::S(s.h),
            Func::DirichletValue => Val::S(s.g_d),
            Func::NeumannValue => Val::S(s.g_n),
            Func::DirichletBoundary => Val::S(sc.dirichlet * self.eval(&args[0], s, bind, sc).s()),
            Func::NeumannBoundary => Val::S(sc.neumann * self.eval(&args[0], s, bind, sc).s()),
            Func::Dt => {
                let w: &[f64] = match self.scheme.expect("Dt needs a scheme") {
                    TimeScheme::EulerImplicit => &[1.0, -1.0],
                    TimeScheme::Bdf2 => &[1.5, -2.0, 0.5],
                };
                let binds = [Bind::Current, Bind::Previous(0), Bind::Previous(1)];
                let total: f64 = w
                    .iter()
                    .zip(binds)
                    .map(|(wk, b)| wk * self.eval(&args[0], s, b, sc).s())
                    .sum();
                Val::S(sc.dt_part * total)
            }
            Func::Sin => Val::S(self.eval(&args[0], s, bind, sc).s().sin()),
            Func::Cos => Val::S(self.eval(&args[0], s, bind, sc).s().cos()),
            Func::Exp => Val::S(self.eval(&args[0], s, bind, sc).s().exp()),
            Func::Sqrt => Val::S(self.eval(&args[0], s, bind, sc).s().sqrt()),
            Func::Abs => Val::S(self.eval(&args[0], s, bind, sc).s().abs()),
            Func::Surface => panic!("surface() has no region"),
        }
    }

    fn total(&self, s: &Sample, dirichlet: f64, neumann: f64, dt_part: f64) -> f64 {
        let sc = Scales {
            dirichlet,
            neumann,
            dt_part,
        };
        self.eval(&self.spec.weak_form, s, Bind::Current, sc).s()
    }

    /// Residual integrand of each region `[volume, dirichlet, neumann]`,
    /// scaled by `dt` for transient forms.
    pub fn regions(&self, s: &Sample) -> [f64; 3] {
        let base = self.total(s, 0.0, 0.0, 0.0);
        let d = self.total(s, 1.0, 0.0, 0.0) - base;
        let n = self.total(s, 0.0, 1.0, 0.0) - base;
        match self.scheme {
            None => [base, d, n],
            Some(_) => {
                let time = self.total(s, 0.0, 0.0, 1.0) - base;
                [s.dt * base + time, s.dt * d, s.dt * n]
            }
        }
    }
}

/// Operand values for the IR side, drawn from the same sample.
pub struct IrInputs<'a> {
    pub oracle: &'a WeakFormOracle<'a>,
    pub sample: &'a Sample,
}

impl OperandValues for IrInputs<'_> {
    fn value(&self, op: &Operand) -> f64 {
        let s = self.sample;
        match op {
            Operand::Coef(c) => match self.oracle.coef(c, s) {
                Val::S(v) => v,
                Val::V(_) => panic!("vector coefficient used as scalar"),
            },
            Operand::CoefComp(c, k) => match self.oracle.coef(c, s) {
                Val::V(v) => v[*k],
                Val::S(_) => panic!("scalar coefficient used as vector"),
            },
            Operand::Position(k) => s.x[*k],
            Operand::Time => s.t,
            Operand::TimeStep => s.dt,
            Operand::Special(sp) => match sp {
                Special::NTilde(k) => s.n_tilde[*k],
                Special::NTrue(k) => s.n_true[*k],
                Special::Disp(k) => s.disp[*k],
                Special::ElementDiameter => s.h,
                Special::DirichletValue => s.g_d,
                Special::NeumannValue => s.g_n,
            },
            Operand::Previous(slot) => s.prev[*slot as usize - 1],
            Operand::Field(text) => self.oracle.field(&parse_expression(text).unwrap(), s),
        }
    }
}

fn select(sel: BasisSel, value: f64, grad: &[f64; 3]) -> f64 {
    match sel {
        BasisSel::Value => value,
        BasisSel::Deriv(k) => grad[k],
    }
}

/// Residual integrand of one IR region: bilinear part minus the right-hand side.
pub fn ir_region(k: &RegionKernel, inputs: &IrInputs) -> f64 {
    let s = inputs.sample;
    let bil: f64 = k
        .bilinear
        .iter()
        .map(|c| c.scalar.eval(inputs) * select(c.test, s.v, &s.grad_v) * select(c.trial, s.u, &s.grad_u))
        .sum();
    let lin: f64 = k.linear.iter().map(|c| c.scalar.eval(inputs) * select(c.test, s.v, &s.grad_v)).sum();
    bil - lin
}

pub fn ir_regions(ir: &KernelIr, inputs: &IrInputs) -> [f64; 3] {
    [ir_region(&ir.volume, inputs), ir_region(&ir.dirichlet, inputs), ir_region(&ir.neumann, inputs)]
}

/// Largest relative disagreement between IR and direct evaluation over
/// `samples` random points.
pub fn ir_oracle_gap(spec: &ProblemSpec, ir: &KernelIr, samples: usize, rng: &mut impl Rng) -> f64 {
    let oracle = WeakFormOracle::new(spec, ir.scheme);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let sample = Sample::random(spec.dimension, rng);
        let want = oracle.regions(&sample);
        let got = ir_regions(ir, &IrInputs { oracle: &oracle, sample: &sample });
        for (w, g) in want.iter().zip(&got) {
            worst = worst.max((w - g).abs() / w.abs().max(1.0));
        }
    }
    worst
}

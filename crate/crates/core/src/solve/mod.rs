//! Global assembly with hanging-node distribution, Krylov solves, the time
//! loop, error norms, and solution output.

mod assemble;
mod krylov;
mod sparse;

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::expr::{Env, EvalError, Expr};
use crate::fem::{gauss_rule, CoefficientTable, CompiledKernel, ElementGeometry, FemError};
use crate::geometry::{Geometry, GeometryError};
use crate::mesh::{build_mesh, write_vtk, IncompleteMesh, MeshError, PointField, TreeKey};
use crate::problem::ProblemSpec;
use crate::symbolic::{compile, SymbolicError};

pub use assemble::{Assembler, BoundaryRouting, SparseSystem};
pub use krylov::{solve_linear, SolveReport};
pub use sparse::CsrMatrix;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("boundary region or value: {0}")]
    Boundary(#[source] EvalError),
    #[error("non-finite elemental contribution in element level {} anchor {:?}", element.level, element.anchor)]
    NonFinite { element: TreeKey },
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("BiCGStab did not converge in {iterations} iterations (residual {:e})", history.last().copied().unwrap_or(f64::NAN))]
    NotConverged { iterations: usize, history: Vec<f64> },
    #[error("BiCGStab broke down at iteration {iteration}")]
    Breakdown { iteration: usize, history: Vec<f64> },
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("step {step}: {source}")]
    Solve {
        step: usize,
        #[source]
        source: SolveError,
    },
    #[error("initial condition: {0}")]
    Initial(#[source] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub quadrature_points: usize,
    pub parallel: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            quadrature_points: 2,
            parallel: true,
        }
    }
}

/// One linear solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Nodal values (hanging nodes reconstructed) at an output step.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub mesh: Duration,
    pub assemble: Duration,
    pub solve: Duration,
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// Final nodal values on every mesh node.
    pub values: Vec<f64>,
    pub final_time: f64,
    pub steps: Vec<StepRecord>,
    pub snapshots: Vec<Snapshot>,
    pub timings: PhaseTimings,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub geometries: Vec<Geometry>,
    pub mesh: IncompleteMesh,
    pub solution: Solution,
}

pub fn load_geometries(spec: &ProblemSpec) -> Result<Vec<Geometry>, GeometryError> {
    spec.geometries.iter().map(|g| Geometry::load(g, spec.dimension)).collect()
}

/// Full pipeline: geometry, mesh, compile, solve.
pub fn run(spec: &ProblemSpec, opts: &RunOptions) -> Result<RunOutput, RunError> {
    let started = Instant::now();
    let geometries = load_geometries(spec)?;
    let mesh = build_mesh(spec, &geometries)?;
    let mesh_time = started.elapsed();
    log::info!(
        "mesh: {} elements, {} dofs, {} hanging nodes, {} surrogate faces",
        mesh.elements.len(),
        mesh.ndof(),
        mesh.hanging_count(),
        mesh.faces.len()
    );
    let mut solution = solve_on_mesh(spec, &geometries, &mesh, opts)?;
    solution.timings.mesh = mesh_time;
    Ok(RunOutput {
        geometries,
        mesh,
        solution,
    })
}

fn eval_at(e: &Expr, p: [f64; 3], t: f64, consts: &std::collections::BTreeMap<String, f64>) -> Result<f64, EvalError> {
    e.eval_number(&Env::at(p, t).with_constants(consts))
}

/// Solve on an existing mesh; steady problems take one solve, transient
/// ones march `num_steps` from the nodal initial condition.
pub fn solve_on_mesh(
    spec: &ProblemSpec,
    geometries: &[Geometry],
    mesh: &IncompleteMesh,
    opts: &RunOptions,
) -> Result<Solution, RunError> {
    let forms = compile(spec)?;
    let coefs = CoefficientTable::from_problem(spec);
    let main = CompiledKernel::new(&forms.ir, &coefs)?;
    let bootstrap = forms.bootstrap.as_ref().map(|ir| CompiledKernel::new(ir, &coefs)).transpose()?;
    let mut assembler = Assembler::new(mesh, geometries, spec, opts.quadrature_points)?;
    assembler.parallel = opts.parallel;
    let mut timings = PhaseTimings::default();
    let mut steps = Vec::new();
    let mut snapshots = Vec::new();

    let mut solve_step = |kernel: &CompiledKernel,
                          history: &[Vec<f64>; 2],
                          guess: Option<&[f64]>,
                          step: usize,
                          t: f64,
                          dt: f64|
     -> Result<Vec<f64>, RunError> {
        let t0 = Instant::now();
        let sys = assembler.assemble(kernel, history, t, dt)?;
        timings.assemble += t0.elapsed();
        let t1 = Instant::now();
        let rep = solve_linear(&sys.a, &sys.b, guess, &spec.solver).map_err(|source| RunError::Solve { step, source })?;
        timings.solve += t1.elapsed();
        log::debug!("step {step}: t = {t}, {} iterations, residual {:e}", rep.iterations, rep.residual);
        steps.push(StepRecord {
            step,
            time: t,
            iterations: rep.iterations,
            residual: rep.residual,
        });
        Ok(rep.x)
    };

    let time = spec.time.as_ref().filter(|_| !forms.ir.steady);
    if spec.time.is_some() && time.is_none() {
        log::warn!("weak form has no time derivative; solving the steady problem once");
    }
    let Some(time) = time else {
        let free = solve_step(&main, &[Vec::new(), Vec::new()], None, 0, 0.0, 0.0)?;
        let values = mesh.nodes.expand(&free);
        snapshots.push(Snapshot {
            step: 0,
            time: 0.0,
            values: values.clone(),
        });
        return Ok(Solution {
            values,
            final_time: 0.0,
            steps,
            snapshots,
            timings,
        });
    };

    let consts = spec.constants();
    let mut free = match spec.initial_conditions.get(spec.unknown()) {
        Some(ic) => {
            let mut err = None;
            let v = mesh.nodes.sample_free(|p| {
                eval_at(ic, p, 0.0, &consts).unwrap_or_else(|e| {
                    err = Some(e);
                    f64::NAN
                })
            });
            if let Some(e) = err {
                return Err(RunError::Initial(e));
            }
            v
        }
        None => vec![0.0; mesh.ndof()],
    };
    let mut current = mesh.nodes.expand(&free);
    let mut previous = current.clone();
    snapshots.push(Snapshot {
        step: 0,
        time: 0.0,
        values: current.clone(),
    });
    let interval = time.output_interval.max(1);
    let mut t = 0.0;
    for step in 1..=time.num_steps {
        t = step as f64 * time.dt;
        let kernel = match (&bootstrap, step) {
            (Some(b), 1) => b,
            _ => &main,
        };
        let history = [current, previous];
        free = solve_step(kernel, &history, Some(&free), step, t, time.dt)?;
        let [c, _] = history;
        previous = c;
        current = mesh.nodes.expand(&free);
        if step % interval == 0 || step == time.num_steps {
            snapshots.push(Snapshot {
                step,
                time: t,
                values: current.clone(),
            });
        }
    }
    Ok(Solution {
        values: current,
        final_time: t,
        steps,
        snapshots,
        timings,
    })
}

/// `‖u_h − u_exact‖` over the kept elements with an `n`-point Gauss rule.
pub fn l2_error_with(mesh: &IncompleteMesh, nodal: &[f64], exact: impl Fn([f64; 3]) -> f64, n: usize) -> f64 {
    let rule = gauss_rule(n, mesh.dimension).expect("supported order");
    let mut sum = 0.0;
    let mut corner = [0.0; 8];
    for e in 0..mesh.elements.len() {
        let (lo, hi) = mesh.element_bounds(e);
        let g = ElementGeometry::new(lo, hi, mesh.dimension);
        for (c, &node) in mesh.corners(e).iter().enumerate() {
            corner[c] = nodal[node as usize];
        }
        for (xi, w) in rule.points.iter().zip(&rule.weights) {
            let uh = g.basis_at_reference(*xi).interpolate(&corner);
            let diff = uh - exact(g.to_physical(*xi));
            sum += diff * diff * w * g.det_j;
        }
    }
    sum.sqrt()
}

pub fn l2_error(mesh: &IncompleteMesh, nodal: &[f64], exact: impl Fn([f64; 3]) -> f64) -> f64 {
    l2_error_with(mesh, nodal, exact, 3)
}

/// L2 error against an expression in `x, y, z, t`.
pub fn l2_error_expr(spec: &ProblemSpec, mesh: &IncompleteMesh, nodal: &[f64], exact: &Expr, t: f64) -> f64 {
    let consts = spec.constants();
    l2_error(mesh, nodal, |p| eval_at(exact, p, t, &consts).unwrap_or(f64::NAN))
}

pub fn diagnostics_csv(steps: &[StepRecord]) -> String {
    let mut s = String::from("step,time,iterations,residual\n");
    for r in steps {
        let _ = writeln!(s, "{},{},{},{:e}", r.step, r.time, r.iterations, r.residual);
    }
    s
}

pub fn write_solution_vtk(mesh: &IncompleteMesh, name: &str, values: &[f64], path: &Path) -> Result<(), MeshError> {
    write_vtk(mesh, path, name, &[PointField { name, values }])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::parse_problem;

    fn square(extra: &str, weak: &str, coefs: &str) -> ProblemSpec {
        let text = format!(
            "[domain]\ndimension = 2\nmin = [0.0, 0.0]\nmax = [1.0, 1.0]\nbase_refine_level = 2\n{extra}\n[equation]\nvariables = [\"u\"]\nweak_form = \"{weak}\"\n[coefficients]\n{coefs}\n[[region]]\nid = 1\nwhere = \"true\"\n[[boundary]]\nvariable = \"u\"\nregion = 1\nkind = \"DIRICHLET\"\nvalue = \"1 + x + 2*y\"\n[solver]\nksp_rtol = 1e-13\nksp_atol = 1e-13\n"
        );
        parse_problem(&text, Path::new(".")).unwrap()
    }

    const NITSCHE: &str = "dot(grad(u),grad(v)) + dirichletBoundary(-dot(grad(u),normal())*v - dot(grad(v),normal())*(u + dot(grad(u),distanceToBoundary()) - dirichletValue()) + alpha/elementDiameter()*(u + dot(grad(u),distanceToBoundary()) - dirichletValue())*(v + dot(grad(v),distanceToBoundary())))";

    #[test]
    fn linear_field_on_square() {
        let spec = square("", NITSCHE, "alpha = 400.0");
        let out = run(&spec, &RunOptions::default()).unwrap();
        for (p, v) in out.mesh.nodes.coords.iter().zip(&out.solution.values) {
            assert!((v - (1.0 + p[0] + 2.0 * p[1])).abs() < 1e-8, "{p:?} {v} {:?}", out.solution.steps);
        }
        assert_eq!(out.solution.steps.len(), 1);
        let err = l2_error(&out.mesh, &out.solution.values, |p| 1.0 + p[0] + 2.0 * p[1]);
        assert!(err < 1e-8);
    }

    #[test]
    fn constant_offset_error() {
        let spec = square("", NITSCHE, "alpha = 400.0");
        let mesh = build_mesh(&spec, &[]).unwrap();
        let vals = vec![0.5; mesh.nodes.len()];
        let e = l2_error(&mesh, &vals, |_| 0.0);
        assert!((e - 0.5).abs() < 1e-14);
    }

    #[test]
    fn transient_reports_final_time() {
        let spec = square(
            "[time]\nscheme = \"EULER_IMPLICIT\"\ndt = 0.01\nsteps = 100\noutput_interval = 50\n[initial]\nu = \"1 + x + 2*y\"",
            &format!("Dt(u*v) + {NITSCHE}"),
            "alpha = 400.0",
        );
        let out = run(&spec, &RunOptions::default()).unwrap();
        assert!((out.solution.final_time - 1.0).abs() < 1e-12);
        assert_eq!(out.solution.steps.len(), 100);
        assert_eq!(out.solution.snapshots.iter().map(|s| s.step).collect::<Vec<_>>(), vec![0, 50, 100]);
        assert!(diagnostics_csv(&out.solution.steps).starts_with("step,time,iterations,residual\n1,0.01,"));
    }
}

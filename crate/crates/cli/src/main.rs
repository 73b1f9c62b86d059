use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};

use sbmgen::codegen::{emit_kernels, serialize_ir, CodegenError, KernelTemplate};
use sbmgen::expr::{check_symbols, parse_expression};
use sbmgen::mesh::{build_mesh, write_vtk, MeshError};
use sbmgen::problem::{load_problem, ProblemSpec};
use sbmgen::solve::{diagnostics_csv, load_geometries, run, write_solution_vtk, RunError, RunOptions};
use sbmgen::study::convergence_study;
use sbmgen::symbolic::compile;

#[derive(Parser)]
#[command(name = "sbmgen", version, about = "Weak-form compiler and shifted-boundary solver")]
struct Cli {
    /// Log progress (`RUST_LOG` overrides).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct Parallel {
    /// Worker threads for element evaluation; 1 assembles serially, 0 uses every core.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Gauss points per axis (1 to 3).
    #[arg(long, default_value_t = 2)]
    quadrature: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem and write VTK snapshots and solver diagnostics.
    Run {
        script: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        parallel: Parallel,
    },
    /// Solve on a sequence of uniform levels and fit the L2 error slope.
    Converge {
        script: PathBuf,
        /// Levels as a list (5,6,7) or range (5-8).
        #[arg(long)]
        levels: String,
        /// Exact solution; defaults to the script's `exact`.
        #[arg(long)]
        exact: Option<String>,
        /// CSV output path.
        #[arg(long, default_value = "convergence.csv")]
        out: PathBuf,
        #[command(flatten)]
        parallel: Parallel,
    },
    /// Compile the weak form and write kernel sources and the IR document.
    Codegen {
        script: PathBuf,
        /// Template file; the shipped template is used otherwise.
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long, default_value = "generated")]
        out: PathBuf,
    },
    /// Build the carved mesh and write it as VTK.
    Mesh {
        script: PathBuf,
        #[arg(long, default_value = "mesh.vtk")]
        out: PathBuf,
    },
}

/// Error with the process exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        Failure {
            code: exit_code(&error),
            error,
        }
    }
}

/// 2 for script or template problems, 3 for an empty carved mesh, 1 otherwise.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(m) = cause.downcast_ref::<MeshError>() {
            if matches!(m, MeshError::EmptyKeptSet) {
                return 3;
            }
        }
        if let Some(RunError::Mesh(MeshError::EmptyKeptSet)) = cause.downcast_ref::<RunError>() {
            return 3;
        }
        if cause.downcast_ref::<sbmgen::problem::ProblemError>().is_some()
            || cause.downcast_ref::<sbmgen::symbolic::SymbolicError>().is_some()
            || cause.downcast_ref::<ScriptError>().is_some()
            || matches!(cause.downcast_ref::<RunError>(), Some(RunError::Symbolic(_)))
        {
            return 2;
        }
        if let Some(c) = cause.downcast_ref::<CodegenError>() {
            return match c {
                CodegenError::Io { .. } => 1,
                _ => 2,
            };
        }
    }
    1
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct ScriptError(String);

fn load(script: &Path) -> Result<ProblemSpec, Failure> {
    let spec = load_problem(script).with_context(|| format!("loading {}", script.display()))?;
    Ok(spec)
}

fn options(p: Parallel) -> Result<RunOptions, Failure> {
    if p.threads != 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(p.threads)
            .build_global()
            .context("starting the worker pool")?;
    }
    Ok(RunOptions {
        quadrature_points: p.quadrature,
        parallel: p.threads != 1,
    })
}

fn stem(script: &Path) -> String {
    script.file_stem().map_or_else(|| "problem".into(), |s| s.to_string_lossy().into_owned())
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn cmd_run(script: &Path, out: &Path, parallel: Parallel) -> Result<(), Failure> {
    let spec = load(script)?;
    let opts = options(parallel)?;
    let result = run(&spec, &opts)?;
    create_dir(out)?;
    let name = stem(script);
    let sol = &result.solution;
    let unknown = spec.unknown();
    let steady = sol.snapshots.len() == 1 && sol.steps.len() == 1 && sol.steps[0].step == 0;
    for snap in &sol.snapshots {
        let path = if steady {
            out.join(format!("{name}.vtk"))
        } else {
            out.join(format!("{name}_{:05}.vtk", snap.step))
        };
        write_solution_vtk(&result.mesh, unknown, &snap.values, &path).with_context(|| format!("writing {}", path.display()))?;
    }
    let csv = out.join(format!("{name}_diagnostics.csv"));
    std::fs::write(&csv, diagnostics_csv(&sol.steps)).with_context(|| format!("writing {}", csv.display()))?;
    let last = sol.steps.last();
    println!("ndof: {}", result.mesh.ndof());
    println!("elements: {}", result.mesh.elements.len());
    println!("steps: {}", sol.steps.len());
    println!("final time: {}", sol.final_time);
    println!("final residual: {:e}", last.map_or(0.0, |r| r.residual));
    println!(
        "wall time: mesh {:.3}s, assemble {:.3}s, solve {:.3}s",
        sol.timings.mesh.as_secs_f64(),
        sol.timings.assemble.as_secs_f64(),
        sol.timings.solve.as_secs_f64()
    );
    if let Some(exact) = &spec.exact {
        let e = sbmgen::solve::l2_error_expr(&spec, &result.mesh, &sol.values, exact, sol.final_time);
        println!("L2 error: {e:e}");
    }
    Ok(())
}

fn parse_levels(text: &str) -> Result<Vec<u32>, Failure> {
    let bad = || ScriptError(format!("--levels `{text}`: expected a list like 5,6,7 or a range like 5-8"));
    let levels: Vec<u32> = if let Some((a, b)) = text.split_once('-') {
        let a: u32 = a.trim().parse().map_err(|_| bad())?;
        let b: u32 = b.trim().parse().map_err(|_| bad())?;
        (a..=b).collect()
    } else {
        text.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad())?
    };
    if levels.is_empty() {
        return Err(bad().into());
    }
    Ok(levels)
}

fn cmd_converge(script: &Path, levels: &str, exact: Option<&str>, out: &Path, parallel: Parallel) -> Result<(), Failure> {
    let spec = load(script)?;
    let levels = parse_levels(levels)?;
    let exact = match exact {
        Some(text) => {
            let e = parse_expression(text).map_err(|e| ScriptError(format!("--exact: {e}")))?;
            let consts = spec.constants();
            check_symbols(&e, &|s| ["x", "y", "z", "t", "pi"].contains(&s) || consts.contains_key(s))
                .map_err(|s| ScriptError(format!("--exact: unknown identifier `{s}`")))?;
            e
        }
        None => spec
            .exact
            .clone()
            .ok_or_else(|| ScriptError("no exact solution: pass --exact or set equation.exact".into()))?,
    };
    let opts = options(parallel)?;
    let mut csv = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    writeln!(csv, "h,L2,level,ndof,iterations")?;
    let mut write_err = None;
    let report = convergence_study(&spec, &levels, &exact, &opts, |r| {
        let line = writeln!(csv, "{},{:e},{},{},{}", r.h, r.l2, r.level, r.ndof, r.iterations).and_then(|_| csv.flush());
        if let Err(e) = line {
            write_err.get_or_insert(e);
        }
        println!(
            "level {}: h = {}, ndof = {}, L2 = {:e}, iterations = {}, {:.3}s",
            r.level,
            r.h,
            r.ndof,
            r.l2,
            r.iterations,
            r.wall.as_secs_f64()
        );
    })?;
    if let Some(e) = write_err {
        return Err(anyhow::Error::from(e).context(format!("writing {}", out.display())).into());
    }
    if report.slope.is_nan() {
        log::warn!("slope undefined: some L2 errors are zero or the level list is too short");
        eprintln!("warning: slope undefined (zero errors or fewer than two levels)");
    }
    println!("slope: {}", report.slope);
    println!("reference: L2 ~ {} h^2", report.reference_constant);
    Ok(())
}

fn cmd_codegen(script: &Path, template: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let spec = load(script)?;
    let template = match template {
        Some(p) => KernelTemplate::load(p).map_err(|e| Failure {
            code: 2,
            error: anyhow::Error::from(e).context(format!("template {}", p.display())),
        })?,
        None => KernelTemplate::default_template(),
    };
    let forms = compile(&spec)?;
    let mut written = emit_kernels(&forms.ir, &spec.coefficients, &template, out)?;
    let doc = out.join("kernel_ir.json");
    std::fs::write(&doc, serialize_ir(&forms.ir)).with_context(|| format!("writing {}", doc.display()))?;
    written.push(doc);
    if let Some(b) = &forms.bootstrap {
        let doc = out.join("kernel_ir_bootstrap.json");
        std::fs::write(&doc, serialize_ir(b)).with_context(|| format!("writing {}", doc.display()))?;
        written.push(doc);
    }
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_mesh(script: &Path, out: &Path) -> Result<(), Failure> {
    let spec = load(script)?;
    let geoms = load_geometries(&spec)?;
    let mesh = build_mesh(&spec, &geoms)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_vtk(&mesh, out, &stem(script), &[]).with_context(|| format!("writing {}", out.display()))?;
    println!("elements: {}", mesh.elements.len());
    println!("nodes: {}", mesh.nodes.len());
    println!("dofs: {}", mesh.ndof());
    println!("hanging nodes: {}", mesh.hanging_count());
    println!("surrogate faces: {}", mesh.faces.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Run { script, out, parallel } => cmd_run(script, out, *parallel),
        Command::Converge {
            script,
            levels,
            exact,
            out,
            parallel,
        } => cmd_converge(script, levels, exact.as_deref(), out, *parallel),
        Command::Codegen { script, template, out } => cmd_codegen(script, template.as_deref(), out),
        Command::Mesh { script, out } => cmd_mesh(script, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

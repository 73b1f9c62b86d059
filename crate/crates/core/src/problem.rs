//! Problem scripts: a TOML document describing domain, geometry, time
//! stepping, coefficients, boundary regions, and the weak form.
//!
//! ```toml
//! [domain]
//! dimension = 2
//! min = [0.0, 0.0]
//! max = [1.0, 1.0]
//! base_refine_level = 5
//!
//! [[geometry]]
//! shape = "circle"
//! center = [0.5, 0.5]
//! radius = 0.5
//! refine_level = 7
//!
//! [equation]
//! variables = ["u"]
//! weak_form = "dot(grad(u),grad(v)) - f*v"
//!
//! [coefficients]
//! f = 1.0
//!
//! [[region]]
//! id = 1
//! where = "true"
//!
//! [[boundary]]
//! variable = "u"
//! region = 1
//! kind = "DIRICHLET"
//! value = 0.01
//! ```
//!
//! Every expression string is parsed and checked against the symbols its
//! context allows before a [`ProblemSpec`] is handed out.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{check_symbols, parse_expression, parse_weak_form, Expr, ParseError};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("in `{key}`: {source}")]
    Expression {
        key: String,
        #[source]
        source: ParseError,
    },
    #[error("in `{key}`: unknown identifier `{name}`")]
    UnknownIdentifier { key: String, name: String },
    #[error("boundary condition for `{variable}` refers to region {region}, which has no predicate")]
    UndeclaredRegion { variable: String, region: u32 },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(msg: impl Into<String>) -> ProblemError {
    ProblemError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TimeScheme {
    EulerImplicit,
    Bdf2,
}

impl TimeScheme {
    pub fn name(self) -> &'static str {
        match self {
            TimeScheme::EulerImplicit => "EULER_IMPLICIT",
            TimeScheme::Bdf2 => "BDF2",
        }
    }

    /// Number of previous steps the scheme reads.
    pub fn history_depth(self) -> usize {
        match self {
            TimeScheme::EulerImplicit => 1,
            TimeScheme::Bdf2 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeConfig {
    pub scheme: TimeScheme,
    pub dt: f64,
    pub num_steps: usize,
    /// Write output every this many steps (the final step is always written).
    pub output_interval: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KspType {
    BiCgStab,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcType {
    /// Point Jacobi. `bjacobi` maps here in a single process.
    Jacobi,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub ksp_type: KspType,
    pub max_iterations: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub pc_type: PcType,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            ksp_type: KspType::BiCgStab,
            max_iterations: 1000,
            abs_tol: 1e-8,
            rel_tol: 1e-8,
            pc_type: PcType::Jacobi,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeometrySource {
    MeshFile(PathBuf),
    Circle { center: [f64; 3], radius: f64 },
    Sphere { center: [f64; 3], radius: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySpec {
    pub source: GeometrySource,
    pub name: String,
    pub position: [f64; 3],
    /// When set, the solid's exterior is the physical domain.
    pub outer_boundary: bool,
    pub refine_level: u32,
    pub boundary_types: Vec<String>,
    pub bids: Vec<u32>,
}

/// A coefficient value: constant, field expression, or per-component list.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Scalar(f64),
    Field(Expr),
    Vector(Vec<Coefficient>),
}

impl Coefficient {
    pub fn is_vector(&self) -> bool {
        matches!(self, Coefficient::Vector(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryRegion {
    pub id: u32,
    pub predicate: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCondition {
    pub kind: BoundaryKind,
    pub value: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub dimension: usize,
    pub domain_min: [f64; 3],
    pub domain_max: [f64; 3],
    pub base_refine_level: u32,
    pub wall_refine_level: Option<u32>,
    /// One flag per wall, ordered x-min, x-max, y-min, y-max, z-min, z-max.
    pub refine_walls: Vec<bool>,
    pub refine_where: Option<Expr>,
    pub geometries: Vec<GeometrySpec>,
    pub time: Option<TimeConfig>,
    pub variables: Vec<String>,
    pub test_symbol: String,
    pub coefficients: BTreeMap<String, Coefficient>,
    pub boundary_regions: Vec<BoundaryRegion>,
    pub boundary_conditions: BTreeMap<(String, u32), BoundaryCondition>,
    pub initial_conditions: BTreeMap<String, Expr>,
    pub weak_form: Expr,
    pub exact: Option<Expr>,
    pub solver: SolverOptions,
}

const POSITION_SYMBOLS: [&str; 5] = ["x", "y", "z", "t", "pi"];
const RESERVED: [&str; 7] = ["x", "y", "z", "t", "pi", "level", "dt"];

impl ProblemSpec {
    /// The unknown being solved for.
    pub fn unknown(&self) -> &str {
        &self.variables[0]
    }

    /// Numeric scalar coefficients, usable by name in value expressions.
    pub fn constants(&self) -> BTreeMap<String, f64> {
        self.coefficients
            .iter()
            .filter_map(|(k, v)| match v {
                Coefficient::Scalar(s) => Some((k.clone(), *s)),
                _ => None,
            })
            .collect()
    }

    pub fn is_steady(&self) -> bool {
        self.time.is_none()
    }

    /// First region whose predicate holds at `point`; regions are checked in
    /// declaration order.
    pub fn region_at(
        &self,
        point: [f64; 3],
        t: f64,
        constants: &BTreeMap<String, f64>,
    ) -> Result<Option<u32>, crate::expr::EvalError> {
        let env = crate::expr::Env::at(point, t).with_constants(constants);
        for r in &self.boundary_regions {
            if r.predicate.eval_bool(&env)? {
                return Ok(Some(r.id));
            }
        }
        Ok(None)
    }

    /// Force a uniform tree at `level`: base and boundary levels both `level`,
    /// no custom refinement criteria.
    pub fn with_uniform_level(&self, level: u32) -> ProblemSpec {
        let mut s = self.clone();
        s.base_refine_level = level;
        s.wall_refine_level = None;
        s.refine_where = None;
        for g in &mut s.geometries {
            g.refine_level = level;
        }
        s
    }

    /// Check every structural invariant. `parse_problem` never returns a spec
    /// that fails this.
    pub fn validate(&self) -> Result<(), ProblemError> {
        let dim = self.dimension;
        if dim != 2 && dim != 3 {
            return Err(invalid(format!("dimension must be 2 or 3, got {dim}")));
        }
        for axis in 0..dim {
            if !(self.domain_min[axis] < self.domain_max[axis]) {
                return Err(invalid(format!(
                    "domain min must be below max on axis {axis} ({} >= {})",
                    self.domain_min[axis], self.domain_max[axis]
                )));
            }
        }
        if self.base_refine_level < 1 {
            return Err(invalid("base_refine_level must be at least 1"));
        }
        if !self.refine_walls.is_empty() && self.refine_walls.len() != 2 * dim {
            return Err(invalid(format!(
                "refine_walls needs {} flags, got {}",
                2 * dim,
                self.refine_walls.len()
            )));
        }
        for g in &self.geometries {
            if g.refine_level < 1 {
                return Err(invalid(format!("geometry `{}`: refine_level must be at least 1", g.name)));
            }
            if g.refine_level < self.base_refine_level {
                return Err(invalid(format!(
                    "geometry `{}`: refine_level {} is below base_refine_level {}",
                    g.name, g.refine_level, self.base_refine_level
                )));
            }
            if !g.boundary_types.is_empty() && !g.bids.is_empty() && g.boundary_types.len() != g.bids.len() {
                return Err(invalid(format!(
                    "geometry `{}`: {} boundary_types but {} bids",
                    g.name,
                    g.boundary_types.len(),
                    g.bids.len()
                )));
            }
            match &g.source {
                GeometrySource::Circle { radius, .. } | GeometrySource::Sphere { radius, .. } if !(*radius > 0.0) => {
                    return Err(invalid(format!("geometry `{}`: radius must be positive", g.name)));
                }
                GeometrySource::Circle { .. } if dim != 2 => {
                    return Err(invalid(format!("geometry `{}`: circle needs a 2-D domain", g.name)));
                }
                GeometrySource::Sphere { .. } if dim != 3 => {
                    return Err(invalid(format!("geometry `{}`: sphere needs a 3-D domain", g.name)));
                }
                _ => {}
            }
        }
        if let Some(t) = &self.time {
            if !(t.dt > 0.0) {
                return Err(invalid("time step dt must be positive"));
            }
            if t.num_steps < 1 || t.output_interval < 1 {
                return Err(invalid("steps and output_interval must be at least 1"));
            }
        }
        if !(self.solver.abs_tol > 0.0 && self.solver.rel_tol > 0.0) {
            return Err(invalid("solver tolerances must be positive"));
        }
        if self.solver.max_iterations < 1 {
            return Err(invalid("ksp_max_it must be at least 1"));
        }

        if self.variables.len() != 1 {
            return Err(invalid(format!(
                "exactly one scalar unknown is supported, got {}",
                self.variables.len()
            )));
        }
        let mut names = BTreeSet::new();
        for n in self.variables.iter().chain(std::iter::once(&self.test_symbol)).chain(self.coefficients.keys()) {
            if RESERVED.contains(&n.as_str()) {
                return Err(invalid(format!("`{n}` is a reserved name")));
            }
            if !names.insert(n.as_str()) {
                return Err(invalid(format!("`{n}` is declared twice")));
            }
        }
        let constants = self.constants();
        let value_symbol = |s: &str| POSITION_SYMBOLS.contains(&s) || constants.contains_key(s);
        for (name, c) in &self.coefficients {
            let comps: Vec<&Coefficient> = match c {
                Coefficient::Vector(v) => {
                    if v.len() != dim {
                        return Err(invalid(format!(
                            "vector coefficient `{name}` has {} components in a {dim}-D problem",
                            v.len()
                        )));
                    }
                    v.iter().collect()
                }
                other => vec![other],
            };
            for comp in comps {
                match comp {
                    Coefficient::Field(e) => check_value(e, &format!("coefficients.{name}"), &value_symbol)?,
                    Coefficient::Vector(_) => return Err(invalid(format!("coefficient `{name}`: nested vectors"))),
                    Coefficient::Scalar(_) => {}
                }
            }
        }

        let mut region_ids = BTreeSet::new();
        for r in &self.boundary_regions {
            if !region_ids.insert(r.id) {
                return Err(invalid(format!("region {} is declared twice", r.id)));
            }
            check_value(&r.predicate, &format!("region.{}", r.id), &|s| value_symbol(s) || s == "level")?;
        }
        for ((var, region), bc) in &self.boundary_conditions {
            if !self.variables.contains(var) {
                return Err(invalid(format!("boundary condition for undeclared variable `{var}`")));
            }
            if !region_ids.contains(region) {
                return Err(ProblemError::UndeclaredRegion {
                    variable: var.clone(),
                    region: *region,
                });
            }
            check_value(&bc.value, &format!("boundary.{var}.{region}"), &value_symbol)?;
        }
        for (var, e) in &self.initial_conditions {
            if !self.variables.contains(var) {
                return Err(invalid(format!("initial condition for undeclared variable `{var}`")));
            }
            check_value(e, &format!("initial.{var}"), &value_symbol)?;
        }
        if let Some(e) = &self.exact {
            check_value(e, "equation.exact", &value_symbol)?;
        }
        if let Some(e) = &self.refine_where {
            check_value(e, "domain.refine_where", &|s| value_symbol(s) || s == "level")?;
        }

        let weak_symbol = |s: &str| {
            POSITION_SYMBOLS.contains(&s)
                || self.variables.iter().any(|v| v == s)
                || s == self.test_symbol
                || self.coefficients.contains_key(s)
        };
        if let Err(name) = check_symbols(&self.weak_form, &weak_symbol) {
            return Err(ProblemError::UnknownIdentifier {
                key: "equation.weak_form".into(),
                name: name.into(),
            });
        }
        Ok(())
    }
}

fn check_value(e: &Expr, key: &str, allowed: &dyn Fn(&str) -> bool) -> Result<(), ProblemError> {
    if let Some(f) = e.weak_form_call() {
        return Err(invalid(format!("in `{key}`: `{}` is only allowed in a weak form", f.name())));
    }
    check_symbols(e, allowed).map_err(|name| ProblemError::UnknownIdentifier {
        key: key.into(),
        name: name.into(),
    })
}

// Raw serde layer.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScript {
    domain: RawDomain,
    #[serde(default)]
    geometry: Vec<RawGeometry>,
    time: Option<RawTime>,
    equation: RawEquation,
    #[serde(default)]
    coefficients: BTreeMap<String, RawCoefficient>,
    #[serde(default)]
    region: Vec<RawRegion>,
    #[serde(default)]
    boundary: Vec<RawBoundary>,
    #[serde(default)]
    initial: BTreeMap<String, RawScalar>,
    solver: Option<RawSolver>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    dimension: usize,
    min: Vec<f64>,
    max: Vec<f64>,
    base_refine_level: u32,
    wall_refine_level: Option<u32>,
    #[serde(default)]
    refine_walls: Vec<bool>,
    refine_where: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    name: Option<String>,
    mesh_file: Option<String>,
    shape: Option<String>,
    center: Option<Vec<f64>>,
    radius: Option<f64>,
    position: Option<Vec<f64>>,
    #[serde(default)]
    outer_boundary: bool,
    refine_level: u32,
    #[serde(default)]
    boundary_types: Vec<String>,
    #[serde(default)]
    bids: Vec<u32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTime {
    scheme: String,
    dt: f64,
    steps: usize,
    output_interval: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEquation {
    variables: Vec<String>,
    test: Option<String>,
    weak_form: String,
    exact: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawScalar {
    Num(f64),
    Text(String),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawCoefficient {
    One(RawScalar),
    Many(Vec<RawScalar>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegion {
    id: u32,
    #[serde(rename = "where")]
    predicate: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBoundary {
    variable: String,
    region: u32,
    kind: String,
    value: RawScalar,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    ksp_type: Option<String>,
    ksp_max_it: Option<usize>,
    ksp_atol: Option<f64>,
    ksp_rtol: Option<f64>,
    pc_type: Option<String>,
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
    (line, column)
}

fn expr(key: &str, text: &str) -> Result<Expr, ProblemError> {
    parse_expression(text).map_err(|source| ProblemError::Expression {
        key: key.into(),
        source,
    })
}

fn scalar_expr(key: &str, raw: &RawScalar) -> Result<Expr, ProblemError> {
    match raw {
        RawScalar::Num(v) => Ok(Expr::Num(*v)),
        RawScalar::Text(t) => expr(key, t),
    }
}

fn coefficient(key: &str, raw: &RawScalar) -> Result<Coefficient, ProblemError> {
    Ok(match raw {
        RawScalar::Num(v) => Coefficient::Scalar(*v),
        RawScalar::Text(t) => match expr(key, t)? {
            Expr::Num(v) => Coefficient::Scalar(v),
            e => Coefficient::Field(e),
        },
    })
}

fn point(key: &str, v: &[f64], dim: usize) -> Result<[f64; 3], ProblemError> {
    if v.len() != dim {
        return Err(invalid(format!("`{key}` needs {dim} components, got {}", v.len())));
    }
    let mut p = [0.0; 3];
    p[..dim].copy_from_slice(v);
    Ok(p)
}

/// Parse and validate a problem script. Relative mesh paths resolve against
/// `base_dir`.
pub fn parse_problem(script: &str, base_dir: &Path) -> Result<ProblemSpec, ProblemError> {
    let raw: RawScript = toml::from_str(script).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_column(script, s.start));
        ProblemError::Syntax {
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })?;
    let dim = raw.domain.dimension;
    if dim != 2 && dim != 3 {
        return Err(invalid(format!("dimension must be 2 or 3, got {dim}")));
    }
    let domain_min = point("domain.min", &raw.domain.min, dim)?;
    let domain_max = point("domain.max", &raw.domain.max, dim)?;

    let mut geometries = Vec::new();
    for (i, g) in raw.geometry.iter().enumerate() {
        let name = g.name.clone().unwrap_or_else(|| format!("geometry{i}"));
        let source = match (&g.mesh_file, g.shape.as_deref()) {
            (Some(file), None) => {
                let p = Path::new(file);
                GeometrySource::MeshFile(if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) })
            }
            (None, Some(shape @ ("circle" | "sphere"))) => {
                let center = point(&format!("geometry `{name}` center"), g.center.as_deref().unwrap_or(&[]), dim)?;
                let radius = g
                    .radius
                    .ok_or_else(|| invalid(format!("geometry `{name}`: analytic shape needs a radius")))?;
                if shape == "circle" {
                    GeometrySource::Circle { center, radius }
                } else {
                    GeometrySource::Sphere { center, radius }
                }
            }
            (None, Some(other)) => return Err(invalid(format!("geometry `{name}`: unknown shape `{other}`"))),
            _ => {
                return Err(invalid(format!(
                    "geometry `{name}`: give exactly one of mesh_file or shape"
                )))
            }
        };
        let position = match &g.position {
            Some(p) => point(&format!("geometry `{name}` position"), p, dim)?,
            None => [0.0; 3],
        };
        geometries.push(GeometrySpec {
            source,
            name,
            position,
            outer_boundary: g.outer_boundary,
            refine_level: g.refine_level,
            boundary_types: g.boundary_types.clone(),
            bids: g.bids.clone(),
        });
    }

    let time = match &raw.time {
        None => None,
        Some(t) => {
            let scheme = match t.scheme.as_str() {
                "EULER_IMPLICIT" => TimeScheme::EulerImplicit,
                "BDF2" => TimeScheme::Bdf2,
                other => return Err(invalid(format!("unknown time scheme `{other}`"))),
            };
            Some(TimeConfig {
                scheme,
                dt: t.dt,
                num_steps: t.steps,
                output_interval: t.output_interval.unwrap_or(t.steps.max(1)),
            })
        }
    };

    let mut coefficients = BTreeMap::new();
    for (name, c) in &raw.coefficients {
        let key = format!("coefficients.{name}");
        let value = match c {
            RawCoefficient::One(s) => coefficient(&key, s)?,
            RawCoefficient::Many(v) => {
                Coefficient::Vector(v.iter().map(|s| coefficient(&key, s)).collect::<Result<_, _>>()?)
            }
        };
        coefficients.insert(name.clone(), value);
    }

    let boundary_regions = raw
        .region
        .iter()
        .map(|r| {
            Ok(BoundaryRegion {
                id: r.id,
                predicate: expr(&format!("region.{}", r.id), &r.predicate)?,
            })
        })
        .collect::<Result<Vec<_>, ProblemError>>()?;

    let mut boundary_conditions = BTreeMap::new();
    for b in &raw.boundary {
        let kind = match b.kind.as_str() {
            "DIRICHLET" => BoundaryKind::Dirichlet,
            "NEUMANN" => BoundaryKind::Neumann,
            other => return Err(invalid(format!("unknown boundary kind `{other}`"))),
        };
        let value = scalar_expr(&format!("boundary.{}.{}", b.variable, b.region), &b.value)?;
        if boundary_conditions
            .insert((b.variable.clone(), b.region), BoundaryCondition { kind, value })
            .is_some()
        {
            return Err(invalid(format!(
                "two boundary conditions for `{}` on region {}",
                b.variable, b.region
            )));
        }
    }

    let initial_conditions = raw
        .initial
        .iter()
        .map(|(k, v)| Ok((k.clone(), scalar_expr(&format!("initial.{k}"), v)?)))
        .collect::<Result<BTreeMap<_, _>, ProblemError>>()?;

    let weak_form = parse_weak_form(&raw.equation.weak_form).map_err(|source| ProblemError::Expression {
        key: "equation.weak_form".into(),
        source,
    })?;

    let mut solver = SolverOptions::default();
    if let Some(s) = &raw.solver {
        if let Some(k) = &s.ksp_type {
            solver.ksp_type = match k.as_str() {
                "bcgs" | "bicgstab" => KspType::BiCgStab,
                other => return Err(invalid(format!("unsupported ksp_type `{other}`"))),
            };
        }
        if let Some(p) = &s.pc_type {
            solver.pc_type = match p.as_str() {
                "jacobi" | "bjacobi" => PcType::Jacobi,
                "none" => PcType::None,
                other => return Err(invalid(format!("unsupported pc_type `{other}`"))),
            };
        }
        solver.max_iterations = s.ksp_max_it.unwrap_or(solver.max_iterations);
        solver.abs_tol = s.ksp_atol.unwrap_or(solver.abs_tol);
        solver.rel_tol = s.ksp_rtol.unwrap_or(solver.rel_tol);
    }

    let spec = ProblemSpec {
        dimension: dim,
        domain_min,
        domain_max,
        base_refine_level: raw.domain.base_refine_level,
        wall_refine_level: raw.domain.wall_refine_level,
        refine_walls: raw.domain.refine_walls.clone(),
        refine_where: raw
            .domain
            .refine_where
            .as_deref()
            .map(|t| expr("domain.refine_where", t))
            .transpose()?,
        geometries,
        time,
        variables: raw.equation.variables.clone(),
        test_symbol: raw.equation.test.clone().unwrap_or_else(|| "v".into()),
        coefficients,
        boundary_regions,
        boundary_conditions,
        initial_conditions,
        weak_form,
        exact: raw.equation.exact.as_deref().map(|t| expr("equation.exact", t)).transpose()?,
        solver,
    };
    spec.validate()?;
    Ok(spec)
}

/// Read and parse a script file; mesh paths resolve next to the script.
pub fn load_problem(path: &Path) -> Result<ProblemSpec, ProblemError> {
    let text = std::fs::read_to_string(path).map_err(|source| ProblemError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_problem(&text, path.parent().unwrap_or(Path::new(".")))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const HEAT3D: &str = r#"
[domain]
dimension = 3
min = [0.0, 0.0, 0.0]
max = [1.0, 1.0, 1.0]
base_refine_level = 5

[[geometry]]
mesh_file = "bunny.stl"
boundary_types = ["sbm"]
refine_level = 8

[time]
scheme = "BDF2"
dt = 0.01
steps = 100

[equation]
variables = ["u"]
test = "v"
weak_form = """
Dt(u*v) + dot(grad(u),grad(v)) +
    dirichletBoundary(
        -dot(grad(u), normal()) * v
        - dot(grad(v), normal())
        * (u + dot(grad(u), distanceToBoundary())
        - dirichletValue())
        + alpha / elementDiameter()
        * (u + dot(grad(u), distanceToBoundary())
        - dirichletValue())
        * (v + dot(grad(v), distanceToBoundary())))"""

[coefficients]
alpha = 200

[[region]]
id = 1
where = "true"

[[boundary]]
variable = "u"
region = 1
kind = "DIRICHLET"
value = "exp(-z*z / 0.04)"

[initial]
u = 0.0
"#;

    fn parse(text: &str) -> Result<ProblemSpec, ProblemError> {
        parse_problem(text, Path::new("/data"))
    }

    #[test]
    fn heat3d_script() {
        let s = parse(HEAT3D).unwrap();
        assert_eq!(s.dimension, 3);
        let t = s.time.as_ref().unwrap();
        assert_eq!(t.scheme, TimeScheme::Bdf2);
        assert_eq!((t.dt, t.num_steps), (0.01, 100));
        assert_eq!(s.coefficients["alpha"], Coefficient::Scalar(200.0));
        assert_eq!(s.boundary_regions.len(), 1);
        assert_eq!(
            s.geometries[0].source,
            GeometrySource::MeshFile(PathBuf::from("/data/bunny.stl"))
        );
        // defaults when the solver block is omitted
        assert_eq!(s.solver.max_iterations, 1000);
        assert_eq!(s.solver.abs_tol, 1e-8);
        assert_eq!(s.solver.rel_tol, 1e-8);
        assert_eq!(s.solver.pc_type, PcType::Jacobi);
        s.validate().unwrap();
    }

    #[test]
    fn condition_on_missing_region() {
        let text = HEAT3D.replace("region = 1", "region = 5");
        assert!(matches!(
            parse(&text).unwrap_err(),
            ProblemError::UndeclaredRegion { region: 5, .. }
        ));
    }

    #[test]
    fn unknown_key_is_named() {
        let text = HEAT3D.replace("base_refine_level = 5", "base_refine_level = 5\nrefine_everything = true");
        let err = parse(&text).unwrap_err();
        assert!(err.to_string().contains("refine_everything"), "{err}");
        assert!(matches!(err, ProblemError::Syntax { line: 7, .. }), "{err:?}");
    }

    #[test]
    fn extent_mismatch() {
        let text = HEAT3D.replace("min = [0.0, 0.0, 0.0]", "min = [0.0, 0.0]");
        assert!(matches!(parse(&text).unwrap_err(), ProblemError::Invalid(_)));
        let text = HEAT3D.replace("max = [1.0, 1.0, 1.0]", "max = [1.0, 0.0, 1.0]");
        assert!(matches!(parse(&text).unwrap_err(), ProblemError::Invalid(_)));
    }

    #[test]
    fn undeclared_symbol_in_weak_form() {
        let text = HEAT3D.replace("Dt(u*v) +", "Dt(u*v) + kappa*u*v +");
        match parse(&text).unwrap_err() {
            ProblemError::UnknownIdentifier { name, .. } => assert_eq!(name, "kappa"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn expression_errors_carry_the_key() {
        let text = HEAT3D.replace("exp(-z*z / 0.04)", "exp(-z*z / )");
        let err = parse(&text).unwrap_err();
        assert!(err.to_string().contains("boundary.u.1"), "{err}");
        let text = HEAT3D.replace("dirichletBoundary(", "dirichletBoundary(u < 1, ");
        assert!(parse(&text).is_err());
    }

    #[test]
    fn geometry_level_below_base() {
        let text = HEAT3D.replace("refine_level = 8", "refine_level = 4");
        assert!(matches!(parse(&text).unwrap_err(), ProblemError::Invalid(_)));
    }

    #[test]
    fn overlapping_regions_first_wins() {
        let text = r#"
[domain]
dimension = 2
min = [-1.0, -1.0]
max = [1.0, 1.0]
base_refine_level = 3
[equation]
variables = ["u"]
weak_form = "dot(grad(u),grad(v))"
[[region]]
id = 1
where = "y >= 0 && x < -0.5"
[[region]]
id = 2
where = "y >= 0 && x > 0.5"
[[region]]
id = 3
where = "y < 0 && abs(x) < 0.5"
[[region]]
id = 4
where = "true"
"#;
        let s = parse(text).unwrap();
        let c = s.constants();
        assert_eq!(s.region_at([-0.6, 0.2, 0.0], 0.0, &c).unwrap(), Some(1));
        assert_eq!(s.region_at([0.0, 0.9, 0.0], 0.0, &c).unwrap(), Some(4));
        assert_eq!(s.region_at([0.1, -0.9, 0.0], 0.0, &c).unwrap(), Some(3));
    }

    #[test]
    fn vector_coefficient_length() {
        let text = HEAT3D.replace("alpha = 200", "alpha = 200\nb = [1.0, 0.0]");
        assert!(matches!(parse(&text).unwrap_err(), ProblemError::Invalid(_)));
        let text = HEAT3D.replace("alpha = 200", "alpha = 200\nb = [1.0, \"x\", 0.0]");
        let s = parse(&text).unwrap();
        assert!(s.coefficients["b"].is_vector());
    }
}

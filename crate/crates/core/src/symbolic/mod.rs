//! From weak-form expression to per-quadrature-point kernel programs.
//!
//! The pipeline is `expand` → `discretize_time` → `classify` → `lower`.
//! Every stage works on [`Term`]s: one test-basis factor, an optional trial
//! factor, a numeric coefficient, and a canonical product of scalar operands.

mod expand;
mod ir;
mod time;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::{Coefficient, ProblemSpec, TimeScheme};

pub use expand::{expand, SymbolTable};
pub use ir::{
    lower, BilinearContribution, Factor, KernelIr, LinearContribution, OperandValues, RegionKernel,
    ScalarProgram, IR_FORMAT, IR_VERSION,
};
pub use time::{classify, discretize_time, Bucket, Discretized, TermGroups};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SymbolicError {
    #[error("unsupported form: {0}")]
    Unsupported(String),
    #[error("nonlinear in the unknown: {0}")]
    Nonlinear(String),
    #[error("`{0}` is vector-valued where a scalar is required")]
    VectorInScalarContext(String),
    #[error("`{0}` is scalar-valued where a vector is required")]
    ScalarInVectorContext(String),
    #[error("unknown identifier `{0}` in weak form")]
    UnknownIdentifier(String),
    #[error("term `{0}` has no test function factor")]
    MissingTest(String),
    #[error("`{symbol}` may not appear in a {region} integral")]
    MisplacedSymbol { symbol: String, region: Region },
    #[error("Dt term present but the problem has no time stepping section")]
    MissingTimeScheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Volume,
    DirichletSurface,
    NeumannSurface,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::Volume => "volume",
            Region::DirichletSurface => "Dirichlet-surface",
            Region::NeumannSurface => "Neumann-surface",
        })
    }
}

/// Basis function value `N` or its derivative `dN(axis)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisSel {
    Value,
    Deriv(usize),
}

/// Quantities only available on a surrogate boundary face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Special {
    /// Surrogate (axis-aligned) normal component.
    NTilde(usize),
    /// True-boundary normal component.
    NTrue(usize),
    /// Displacement to the true boundary, component.
    Disp(usize),
    ElementDiameter,
    DirichletValue,
    NeumannValue,
}

impl Special {
    pub fn name(self) -> String {
        match self {
            Special::NTilde(k) => format!("n_tilde_{k}"),
            Special::NTrue(k) => format!("n_true_{k}"),
            Special::Disp(k) => format!("d_{k}"),
            Special::ElementDiameter => "h".into(),
            Special::DirichletValue => "g_D".into(),
            Special::NeumannValue => "g_N".into(),
        }
    }
}

/// Scalar operand of a kernel program.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operand {
    Coef(String),
    CoefComp(String, usize),
    Position(usize),
    Time,
    TimeStep,
    Special(Special),
    /// Unknown's value `slot` steps back in time.
    Previous(u8),
    /// Opaque scalar expression over coefficients and position, canonical text.
    Field(String),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Coef(c) => f.write_str(c),
            Operand::CoefComp(c, k) => write!(f, "{c}_{k}"),
            Operand::Position(k) => f.write_str(["x", "y", "z"][*k]),
            Operand::Time => f.write_str("t"),
            Operand::TimeStep => f.write_str("dt"),
            Operand::Special(s) => f.write_str(&s.name()),
            Operand::Previous(slot) => write!(f, "prev{slot}"),
            Operand::Field(text) => write!(f, "[{text}]"),
        }
    }
}

impl Operand {
    pub fn is_special(&self) -> bool {
        matches!(self, Operand::Special(_))
    }
}

/// One integrand term of the expanded weak form.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub region: Region,
    pub test: BasisSel,
    /// Present iff the term is bilinear.
    pub trial: Option<BasisSel>,
    pub time_derivative: bool,
    pub coef: f64,
    /// Canonically ordered operands with integer powers.
    pub factors: Vec<(Operand, i32)>,
}

impl Term {
    pub fn is_bilinear(&self) -> bool {
        self.trial.is_some()
    }

    /// Same term up to the numeric coefficient.
    fn same_shape(&self, other: &Term) -> bool {
        self.region == other.region
            && self.test == other.test
            && self.trial == other.trial
            && self.time_derivative == other.time_derivative
            && self.factors == other.factors
    }

    pub fn previous_slots(&self) -> impl Iterator<Item = u8> + '_ {
        self.factors.iter().filter_map(|(op, _)| match op {
            Operand::Previous(s) => Some(*s),
            _ => None,
        })
    }
}

fn basis_text(sel: BasisSel, name: &str) -> String {
    match sel {
        BasisSel::Value => name.to_string(),
        BasisSel::Deriv(k) => format!("d{k}({name})"),
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", crate::expr::format_number(self.coef))?;
        for (op, p) in &self.factors {
            if *p == 1 {
                write!(f, "*{op}")?;
            } else {
                write!(f, "*{op}^{p}")?;
            }
        }
        if let Some(t) = self.trial {
            write!(f, "*{}", basis_text(t, "u"))?;
        }
        write!(f, "*{}", basis_text(self.test, "v"))?;
        if self.time_derivative {
            f.write_str(" [Dt]")?;
        }
        Ok(())
    }
}

/// Merge terms that differ only in their coefficient; first appearance
/// fixes the order. Zero terms are dropped.
pub(crate) fn collect_like_terms(terms: Vec<Term>) -> Vec<Term> {
    let mut out: Vec<Term> = Vec::with_capacity(terms.len());
    for t in terms {
        match out.iter_mut().find(|o| o.same_shape(&t)) {
            Some(o) => o.coef += t.coef,
            None => out.push(t),
        }
    }
    out.retain(|t| t.coef != 0.0);
    out
}

/// Kernels for one problem: the main scheme, plus an implicit-Euler
/// bootstrap used for the first step of BDF2.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledForms {
    pub ir: KernelIr,
    pub bootstrap: Option<KernelIr>,
}

impl CompiledForms {
    /// Kernel to use for time step `step` (1-based).
    pub fn for_step(&self, step: usize) -> &KernelIr {
        match &self.bootstrap {
            Some(b) if step == 1 => b,
            _ => &self.ir,
        }
    }
}

pub fn compile_with_scheme(spec: &ProblemSpec, scheme: Option<TimeScheme>) -> Result<KernelIr, SymbolicError> {
    let table = SymbolTable::from_problem(spec);
    let terms = expand(&spec.weak_form, &table)?;
    let disc = discretize_time(terms, scheme)?;
    let groups = classify(disc.terms.clone())?;
    Ok(lower(&groups, spec.dimension, spec.unknown(), &disc))
}

/// Run the whole symbolic pipeline for a problem.
pub fn compile(spec: &ProblemSpec) -> Result<CompiledForms, SymbolicError> {
    let scheme = spec.time.as_ref().map(|t| t.scheme);
    let ir = compile_with_scheme(spec, scheme)?;
    let bootstrap = match scheme {
        Some(TimeScheme::Bdf2) if !ir.steady => Some(compile_with_scheme(spec, Some(TimeScheme::EulerImplicit))?),
        _ => None,
    };
    Ok(CompiledForms { ir, bootstrap })
}

/// Vector coefficient lengths, for symbol tables built from a problem.
pub(crate) fn vector_len(c: &Coefficient) -> Option<usize> {
    match c {
        Coefficient::Vector(v) => Some(v.len()),
        _ => None,
    }
}

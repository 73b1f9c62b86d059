use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::problem::TimeScheme;

use super::{BasisSel, Discretized, Operand, Region, Term, TermGroups};

pub const IR_FORMAT: &str = "sbmgen-kernel-ir";
pub const IR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub operand: Operand,
    pub power: i32,
}

/// Product `coef * Π operand^power`, evaluated once per quadrature point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarProgram {
    pub coef: f64,
    pub factors: Vec<Factor>,
}

/// Supplies operand values at one quadrature point.
pub trait OperandValues {
    fn value(&self, op: &Operand) -> f64;
}

impl ScalarProgram {
    fn from_term(t: &Term) -> Self {
        ScalarProgram {
            coef: t.coef,
            factors: t
                .factors
                .iter()
                .map(|(op, p)| Factor {
                    operand: op.clone(),
                    power: *p,
                })
                .collect(),
        }
    }

    pub fn eval(&self, src: &impl OperandValues) -> f64 {
        self.factors
            .iter()
            .fold(self.coef, |acc, f| acc * src.value(&f.operand).powi(f.power))
    }

    pub fn operands(&self) -> impl Iterator<Item = &Operand> {
        self.factors.iter().map(|f| &f.operand)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilinearContribution {
    pub test: BasisSel,
    pub trial: BasisSel,
    pub scalar: ScalarProgram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearContribution {
    pub test: BasisSel,
    pub scalar: ScalarProgram,
}

/// Integrand program for one integration region.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionKernel {
    /// History slots fetched once per quadrature point before the
    /// contribution loops (1 = previous step, 2 = the one before).
    pub prelude: Vec<u8>,
    pub bilinear: Vec<BilinearContribution>,
    pub linear: Vec<LinearContribution>,
}

impl RegionKernel {
    pub fn is_empty(&self) -> bool {
        self.bilinear.is_empty() && self.linear.is_empty()
    }

    /// Every operand the region's programs read.
    pub fn operands(&self) -> BTreeSet<&Operand> {
        self.bilinear
            .iter()
            .map(|c| &c.scalar)
            .chain(self.linear.iter().map(|c| &c.scalar))
            .flat_map(|s| s.operands())
            .collect()
    }

    /// Largest derivative axis referenced plus one; 0 if only values are used.
    pub fn max_axis(&self) -> usize {
        let axis = |b: &BasisSel| match b {
            BasisSel::Deriv(k) => k + 1,
            BasisSel::Value => 0,
        };
        let basis = self
            .bilinear
            .iter()
            .flat_map(|c| [axis(&c.test), axis(&c.trial)])
            .chain(self.linear.iter().map(|c| axis(&c.test)));
        let ops = self.operands().into_iter().map(|op| match op {
            Operand::Position(k) | Operand::CoefComp(_, k) => k + 1,
            Operand::Special(s) => match s {
                super::Special::NTilde(k) | super::Special::NTrue(k) | super::Special::Disp(k) => k + 1,
                _ => 0,
            },
            _ => 0,
        });
        basis.chain(ops).max().unwrap_or(0)
    }

    fn from_terms(bilinear: &[Term], linear: &[Term]) -> Self {
        let prelude: BTreeSet<u8> = linear.iter().flat_map(|t| t.previous_slots()).collect();
        RegionKernel {
            prelude: prelude.into_iter().collect(),
            bilinear: bilinear
                .iter()
                .map(|t| BilinearContribution {
                    test: t.test,
                    trial: t.trial.expect("bilinear bucket holds trial terms"),
                    scalar: ScalarProgram::from_term(t),
                })
                .collect(),
            linear: linear
                .iter()
                .map(|t| LinearContribution {
                    test: t.test,
                    scalar: ScalarProgram::from_term(t),
                })
                .collect(),
        }
    }
}

/// Dimension-specialized kernels for all three integration regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelIr {
    pub dimension: usize,
    pub unknown: String,
    pub scheme: Option<TimeScheme>,
    pub steady: bool,
    pub volume: RegionKernel,
    pub dirichlet: RegionKernel,
    pub neumann: RegionKernel,
}

impl KernelIr {
    pub fn region(&self, r: Region) -> &RegionKernel {
        match r {
            Region::Volume => &self.volume,
            Region::DirichletSurface => &self.dirichlet,
            Region::NeumannSurface => &self.neumann,
        }
    }

    pub fn regions(&self) -> [(Region, &RegionKernel); 3] {
        [
            (Region::Volume, &self.volume),
            (Region::DirichletSurface, &self.dirichlet),
            (Region::NeumannSurface, &self.neumann),
        ]
    }

    /// Number of previous steps any region reads.
    pub fn history_depth(&self) -> usize {
        self.regions()
            .iter()
            .flat_map(|(_, k)| k.prelude.iter())
            .copied()
            .max()
            .unwrap_or(0) as usize
    }

    /// Names of every coefficient the programs read, scalar or vector.
    pub fn coefficient_names(&self) -> BTreeSet<&str> {
        self.regions()
            .iter()
            .flat_map(|(_, k)| k.operands())
            .filter_map(|op| match op {
                Operand::Coef(c) | Operand::CoefComp(c, _) => Some(c.as_str()),
                _ => None,
            })
            .collect()
    }
}

/// Turn classified term groups into kernel programs.
pub fn lower(groups: &TermGroups, dimension: usize, unknown: &str, disc: &Discretized) -> KernelIr {
    KernelIr {
        dimension,
        unknown: unknown.to_string(),
        scheme: disc.scheme,
        steady: disc.steady,
        volume: RegionKernel::from_terms(&groups.volume_bilinear, &groups.volume_linear),
        dirichlet: RegionKernel::from_terms(&groups.dirichlet_bilinear, &groups.dirichlet_linear),
        neumann: RegionKernel::from_terms(&groups.neumann_bilinear, &groups.neumann_linear),
    }
}

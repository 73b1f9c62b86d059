use crate::problem::TimeScheme;

use super::{collect_like_terms, BasisSel, Operand, Region, SymbolicError, Term};

/// Terms after time discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretized {
    pub terms: Vec<Term>,
    /// Scheme actually applied; `None` when the problem is steady.
    pub scheme: Option<TimeScheme>,
    pub steady: bool,
}

fn times_dt(mut t: Term) -> Term {
    match t.factors.iter_mut().find(|(op, _)| *op == Operand::TimeStep) {
        Some((_, p)) => *p += 1,
        None => {
            t.factors.push((Operand::TimeStep, 1));
            t.factors.sort();
        }
    }
    t.factors.retain(|(_, p)| *p != 0);
    t
}

fn with_previous(t: &Term, slot: u8, weight: f64) -> Term {
    let mut out = Term {
        trial: None,
        time_derivative: false,
        coef: t.coef * weight,
        ..t.clone()
    };
    out.factors.push((Operand::Previous(slot), 1));
    out.factors.sort();
    out
}

/// Replace `Dt(u*v)` by the scheme's difference quotient and multiply the
/// whole residual through by `dt`.
///
/// Mass terms end up with weight 1 (Euler) or 1.5 (BDF2); every other term
/// gains a `dt` factor. History terms stay in residual form here:
/// `-prev1` for Euler, `-2 prev1 + 0.5 prev2` for BDF2.
pub fn discretize_time(terms: Vec<Term>, scheme: Option<TimeScheme>) -> Result<Discretized, SymbolicError> {
    if !terms.iter().any(|t| t.time_derivative) {
        return Ok(Discretized {
            terms,
            scheme: None,
            steady: true,
        });
    }
    let scheme = scheme.ok_or(SymbolicError::MissingTimeScheme)?;
    let mut out = Vec::with_capacity(terms.len() + 2);
    for t in terms {
        if !t.time_derivative {
            out.push(times_dt(t));
            continue;
        }
        if t.trial != Some(BasisSel::Value) || t.test != BasisSel::Value {
            return Err(SymbolicError::Unsupported(format!(
                "Dt must wrap the unknown times the test function, found `{t}`"
            )));
        }
        let (now, history): (f64, &[(u8, f64)]) = match scheme {
            TimeScheme::EulerImplicit => (1.0, &[(1, -1.0)]),
            TimeScheme::Bdf2 => (1.5, &[(1, -2.0), (2, 0.5)]),
        };
        out.push(Term {
            time_derivative: false,
            coef: t.coef * now,
            ..t.clone()
        });
        out.extend(history.iter().map(|&(slot, w)| with_previous(&t, slot, w)));
    }
    Ok(Discretized {
        terms: collect_like_terms(out),
        scheme: Some(scheme),
        steady: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bucket {
    pub region: Region,
    pub bilinear: bool,
}

/// The six term buckets. Linear terms are stored with their sign flipped,
/// i.e. as right-hand-side contributions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TermGroups {
    pub volume_bilinear: Vec<Term>,
    pub volume_linear: Vec<Term>,
    pub dirichlet_bilinear: Vec<Term>,
    pub dirichlet_linear: Vec<Term>,
    pub neumann_bilinear: Vec<Term>,
    pub neumann_linear: Vec<Term>,
}

impl TermGroups {
    pub fn bucket(&self, b: Bucket) -> &[Term] {
        match (b.region, b.bilinear) {
            (Region::Volume, true) => &self.volume_bilinear,
            (Region::Volume, false) => &self.volume_linear,
            (Region::DirichletSurface, true) => &self.dirichlet_bilinear,
            (Region::DirichletSurface, false) => &self.dirichlet_linear,
            (Region::NeumannSurface, true) => &self.neumann_bilinear,
            (Region::NeumannSurface, false) => &self.neumann_linear,
        }
    }

    fn bucket_mut(&mut self, b: Bucket) -> &mut Vec<Term> {
        match (b.region, b.bilinear) {
            (Region::Volume, true) => &mut self.volume_bilinear,
            (Region::Volume, false) => &mut self.volume_linear,
            (Region::DirichletSurface, true) => &mut self.dirichlet_bilinear,
            (Region::DirichletSurface, false) => &mut self.dirichlet_linear,
            (Region::NeumannSurface, true) => &mut self.neumann_bilinear,
            (Region::NeumannSurface, false) => &mut self.neumann_linear,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn len(&self) -> usize {
        [
            &self.volume_bilinear,
            &self.volume_linear,
            &self.dirichlet_bilinear,
            &self.dirichlet_linear,
            &self.neumann_bilinear,
            &self.neumann_linear,
        ]
        .iter()
        .map(|v| v.len())
        .sum()
    }
}

/// Sort terms into region × {bilinear, linear} buckets.
pub fn classify(terms: Vec<Term>) -> Result<TermGroups, SymbolicError> {
    let mut groups = TermGroups::default();
    for mut t in terms {
        if t.time_derivative {
            return Err(SymbolicError::Unsupported(format!("undiscretized Dt term `{t}`")));
        }
        let bilinear = t.is_bilinear();
        if bilinear && t.previous_slots().next().is_some() {
            return Err(SymbolicError::Nonlinear(format!("`{t}` mixes the unknown with a previous value")));
        }
        if !bilinear {
            t.coef = -t.coef;
        }
        groups
            .bucket_mut(Bucket {
                region: t.region,
                bilinear,
            })
            .push(t);
    }
    Ok(groups)
}

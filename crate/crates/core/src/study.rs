//! Mesh convergence studies.

use std::time::{Duration, Instant};

use crate::expr::Expr;
use crate::problem::ProblemSpec;
use crate::solve::{l2_error_expr, run, RunError, RunOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub level: u32,
    pub h: f64,
    pub ndof: usize,
    pub l2: f64,
    /// Iterations of the last linear solve.
    pub iterations: usize,
    pub wall: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log L2` against `log h`; NaN when undefined.
    pub slope: f64,
    /// `C` in the reference curve `C h^2` through the geometric mean of the data.
    pub reference_constant: f64,
}

/// Least-squares slope of `log y` on `log x`. NaN unless every value is
/// positive and at least two distinct `x` are given.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    if x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return f64::NAN;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        f64::NAN
    } else {
        sxy / sxx
    }
}

/// Element edge length of a uniform tree at `level`.
pub fn level_h(spec: &ProblemSpec, level: u32) -> f64 {
    (spec.domain_max[0] - spec.domain_min[0]) / (1u64 << level) as f64
}

/// Solve at each uniform `level` and measure the L2 error against
/// `exact` at the final time. `on_row` sees each row as it completes.
pub fn convergence_study(
    spec: &ProblemSpec,
    levels: &[u32],
    exact: &Expr,
    opts: &RunOptions,
    mut on_row: impl FnMut(&ConvergenceRow),
) -> Result<ConvergenceReport, RunError> {
    let mut rows = Vec::with_capacity(levels.len());
    for &level in levels {
        let started = Instant::now();
        let s = spec.with_uniform_level(level);
        let out = run(&s, opts)?;
        let l2 = l2_error_expr(&s, &out.mesh, &out.solution.values, exact, out.solution.final_time);
        let row = ConvergenceRow {
            level,
            h: level_h(spec, level),
            ndof: out.mesh.ndof(),
            l2,
            iterations: out.solution.steps.last().map_or(0, |r| r.iterations),
            wall: started.elapsed(),
        };
        on_row(&row);
        rows.push(row);
    }
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let e: Vec<f64> = rows.iter().map(|r| r.l2).collect();
    let slope = loglog_slope(&h, &e);
    let reference_constant = if slope.is_nan() {
        f64::NAN
    } else {
        let logs: f64 = h.iter().zip(&e).map(|(h, e)| (e / (h * h)).ln()).sum();
        (logs / rows.len() as f64).exp()
    };
    Ok(ConvergenceReport {
        rows,
        slope,
        reference_constant,
    })
}

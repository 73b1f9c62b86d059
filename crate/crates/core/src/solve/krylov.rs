//! Preconditioned BiCGStab.

use crate::problem::{PcType, SolverOptions};

use super::{CsrMatrix, SolveError};

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final residual 2-norm.
    pub residual: f64,
    /// Residual norm after each iteration, starting with the initial one.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn preconditioner(a: &CsrMatrix, pc: PcType) -> Vec<f64> {
    match pc {
        PcType::None => vec![1.0; a.n],
        PcType::Jacobi => a
            .diagonal()
            .into_iter()
            .map(|d| if d != 0.0 && d.is_finite() { 1.0 / d } else { 1.0 })
            .collect(),
    }
}

/// Solve `A x = b` starting from `guess` (zero when `None`). Convergence is
/// declared once `‖r‖ ≤ max(abs_tol, rel_tol·‖r₀‖)`.
pub fn solve_linear(a: &CsrMatrix, b: &[f64], guess: Option<&[f64]>, opts: &SolverOptions) -> Result<SolveReport, SolveError> {
    let n = a.n;
    assert_eq!(b.len(), n, "right-hand side size");
    let minv = preconditioner(a, opts.pc_type);
    let mut x = guess.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r = b.to_vec();
    if guess.is_some() {
        let ax = a.mul(&x);
        r.iter_mut().zip(&ax).for_each(|(ri, axi)| *ri -= axi);
    }
    let r0 = norm(&r);
    let tol = opts.abs_tol.max(opts.rel_tol * r0);
    let mut history = vec![r0];
    if !r0.is_finite() {
        return Err(SolveError::Breakdown { iteration: 0, history });
    }
    if r0 <= tol {
        return Ok(SolveReport {
            x,
            iterations: 0,
            residual: r0,
            history,
        });
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=opts.max_iterations {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            return Err(SolveError::Breakdown { iteration: it, history });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            p_hat[i] = minv[i] * p[i];
        }
        a.mul_into(&p_hat, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 {
            return Err(SolveError::Breakdown { iteration: it, history });
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        let s_norm = norm(&s);
        if s_norm <= tol {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            history.push(s_norm);
            return Ok(SolveReport {
                x,
                iterations: it,
                residual: s_norm,
                history,
            });
        }
        for i in 0..n {
            s_hat[i] = minv[i] * s[i];
        }
        a.mul_into(&s_hat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        let r_norm = norm(&r);
        history.push(r_norm);
        if !r_norm.is_finite() {
            return Err(SolveError::Breakdown { iteration: it, history });
        }
        if r_norm <= tol {
            return Ok(SolveReport {
                x,
                iterations: it,
                residual: r_norm,
                history,
            });
        }
        if omega == 0.0 {
            return Err(SolveError::Breakdown { iteration: it, history });
        }
    }
    Err(SolveError::NotConverged {
        iterations: opts.max_iterations,
        history,
    })
}

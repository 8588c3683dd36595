//! Nonlinear Poisson-Boltzmann constraint `eps * phi'' = exp(phi) - n` and
//! its quasineutral limit `phi = ln n`.

use nalgebra::{DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::Field;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoissonError {
    #[error("density must be positive, found {min} at index {index}")]
    NonPositiveDensity { min: f64, index: usize },
    #[error("Debye parameter must be positive, got {0}")]
    InvalidEps(f64),
    #[error("Newton iteration did not converge after {iterations} steps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("Newton operator could not be factorized")]
    SingularOperator,
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PbSolveOptions {
    /// Stop once the collocation residual falls to this L2 level.
    pub tol: f64,
    pub max_newton_iters: usize,
    /// Smallest step fraction tried by the backtracking line search.
    pub damping_min: f64,
}

impl Default for PbSolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_newton_iters: 50,
            damping_min: 1.0 / 16.0,
        }
    }
}

impl PbSolveOptions {
    pub fn validate(&self) -> Result<(), PoissonError> {
        if !(self.tol > 0.0) {
            return Err(PoissonError::InvalidOptions(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_newton_iters == 0 {
            return Err(PoissonError::InvalidOptions("max_newton_iters must be >= 1".into()));
        }
        if !(self.damping_min > 0.0 && self.damping_min <= 1.0) {
            return Err(PoissonError::InvalidOptions(format!(
                "damping_min must lie in (0, 1], got {}",
                self.damping_min
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PbSolution {
    pub phi: Field,
    pub residual_l2: f64,
    /// Accepted Newton updates.
    pub iterations: usize,
}

fn check_positive(n: &Field) -> Result<(), PoissonError> {
    match n
        .values()
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0))
    {
        Some((index, &min)) => Err(PoissonError::NonPositiveDensity { min, index }),
        None => Ok(()),
    }
}

/// Pointwise residual `eps * phi'' - exp(phi) + n` at the collocation nodes.
fn collocation_residual(phi: &Field, n: &Field, eps: f64) -> Field {
    let lap = phi.dxx();
    let mut values = Vec::with_capacity(phi.len());
    for ((l, p), d) in lap.values().iter().zip(phi.values()).zip(n.values()) {
        values.push(eps * l - p.exp() + d);
    }
    Field::new(phi.grid(), values).unwrap_or_else(|_| phi.grid().constant(f64::MAX))
}

/// `F(phi) = eps * phi'' - exp(phi) + n`, evaluated pointwise then dealiased.
pub fn pb_residual(phi: &Field, n: &Field, eps: f64) -> Field {
    assert!(eps >= 0.0, "eps must be non-negative");
    let lap = phi.dxx();
    let mut values = Vec::with_capacity(phi.len());
    for ((l, p), d) in lap.values().iter().zip(phi.values()).zip(n.values()) {
        values.push(eps * l - p.exp() + d);
    }
    Field::from_raw(phi.grid(), values).dealias()
}

/// Damped Newton solve of `eps * phi'' = exp(phi) - n`.
///
/// Each step factorizes `-(eps D2 - diag(exp(phi)))`, which is symmetric
/// positive definite, by dense Cholesky. The step is halved until the L2
/// residual decreases, down to `damping_min`.
pub fn solve_phi(
    n: &Field,
    eps: f64,
    opts: &PbSolveOptions,
    phi_init: Option<&Field>,
) -> Result<PbSolution, PoissonError> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(PoissonError::InvalidEps(eps));
    }
    opts.validate()?;
    check_positive(n)?;

    let grid = n.grid();
    let mut phi = match phi_init {
        Some(init) => {
            assert!(init.grid() == grid, "initial potential lives on a different grid");
            init.clone()
        }
        None => n.ln(),
    };
    let mut residual = collocation_residual(&phi, n, eps);
    let mut residual_l2 = residual.l2_norm();
    let mut iterations = 0;
    let size = grid.n_points();
    let d2 = grid.second_derivative_matrix();

    while residual_l2 > opts.tol {
        if iterations >= opts.max_newton_iters {
            return Err(PoissonError::NonConvergence {
                iterations,
                residual: residual_l2,
            });
        }
        // -J = diag(exp(phi)) - eps D2
        let mut neg_jac = d2 * (-eps);
        for (i, p) in phi.values().iter().enumerate() {
            neg_jac[(i, i)] += p.exp();
        }
        let chol = nalgebra::Cholesky::<f64, Dyn>::new(neg_jac).ok_or(PoissonError::SingularOperator)?;
        // J delta = -F  <=>  (-J) delta = F
        let delta = chol.solve(&DVector::from_column_slice(residual.values()));
        debug_assert_eq!(delta.len(), size);

        let mut lambda = 1.0;
        loop {
            let trial = phi.zip_map(&Field::from_raw(grid, delta.as_slice().to_vec()), |p, d| p + lambda * d);
            let trial_res = collocation_residual(&trial, n, eps);
            let trial_l2 = trial_res.l2_norm();
            if trial_l2 < residual_l2 {
                phi = trial;
                residual = trial_res;
                residual_l2 = trial_l2;
                break;
            }
            lambda *= 0.5;
            if lambda < opts.damping_min {
                return Err(PoissonError::NonConvergence {
                    iterations,
                    residual: residual_l2,
                });
            }
        }
        iterations += 1;
    }
    Ok(PbSolution {
        phi,
        residual_l2,
        iterations,
    })
}

/// The quasineutral potential `phi = ln n`.
pub fn solve_phi_limit(n: &Field) -> Result<Field, PoissonError> {
    check_positive(n)?;
    Ok(n.ln())
}

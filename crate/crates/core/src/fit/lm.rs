//! Box-constrained Levenberg–Marquardt with Marquardt diagonal scaling.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A nonlinear least-squares problem `min Σ r_i(x)²`.
pub trait LeastSquares {
    /// Residual vector, or an error when the model cannot be evaluated.
    fn residuals(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Jacobian `∂r_i/∂x_j` at `x`, given `r = residuals(x)`.
    fn jacobian(&self, x: &[f64], r: &[f64]) -> Result<DMatrix<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn project(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOptions {
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub max_iterations: usize,
    /// Relative cost decrease regarded as stalled.
    pub ftol: f64,
    /// Consecutive stalled accepted steps needed to stop.
    pub ftol_steps: usize,
    /// Gradient ∞-norm regarded as stationary.
    pub gtol: f64,
    /// Damping beyond which no downhill step is resolvable.
    pub lambda_max: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            lambda0: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            max_iterations: 500,
            ftol: 1e-12,
            ftol_steps: 3,
            gtol: 1e-10,
            lambda_max: 1e16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Gradient,
    CostStalled,
    /// Every trial step was rejected up to `lambda_max`.
    NoDescent,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub x: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub covariance: DMatrix<f64>,
    pub dof: usize,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    /// Residual evaluations, excluding those inside Jacobians.
    pub residual_evals: usize,
    pub jacobian_evals: usize,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// `(JᵀJ)⁻¹` by Cholesky, falling back to a pseudo-inverse.
pub(crate) fn normal_inverse(jtj: &DMatrix<f64>) -> DMatrix<f64> {
    let inv = match jtj.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => jtj
            .clone()
            .pseudo_inverse(1e-14 * jtj.amax())
            .unwrap_or_else(|_| DMatrix::from_element(jtj.nrows(), jtj.ncols(), f64::NAN)),
    };
    (&inv + inv.transpose()) * 0.5
}

pub fn levenberg_marquardt<P: LeastSquares>(
    problem: &P,
    x0: &[f64],
    bounds: &Bounds,
    opts: &LmOptions,
) -> Result<LmReport> {
    let n = x0.len();
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut r = problem.residuals(&x)?;
    let m = r.len();
    if m <= n {
        return Err(Error::Overparameterized {
            residuals: m,
            parameters: n,
        });
    }
    let mut cost = sum_sq(&r);
    let mut residual_evals = 1;
    let mut jac = problem.jacobian(&x, &r)?;
    let mut jacobian_evals = 1;
    let mut lambda = opts.lambda0;
    let mut stalled = 0;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    'outer: while iterations < opts.max_iterations {
        let jtj = jac.tr_mul(&jac);
        let grad = jac.tr_mul(&DVector::from_column_slice(&r));
        if grad.amax() < opts.gtol {
            termination = Termination::Gradient;
            break;
        }
        iterations += 1;
        let diag_floor = 1e-12 * jtj.diagonal().amax().max(f64::MIN_POSITIVE);
        loop {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(diag_floor);
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    lambda *= opts.lambda_up;
                    if lambda > opts.lambda_max {
                        termination = Termination::NoDescent;
                        break 'outer;
                    }
                    continue;
                }
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            bounds.project(&mut trial);
            let trial_r = problem.residuals(&trial);
            residual_evals += 1;
            let trial_cost = match &trial_r {
                Ok(tr) => sum_sq(tr),
                Err(_) => f64::INFINITY,
            };
            if trial_cost.is_finite() && trial_cost < cost {
                let rel = (cost - trial_cost) / cost;
                x = trial;
                r = trial_r?;
                cost = trial_cost;
                lambda /= opts.lambda_down;
                jac = problem.jacobian(&x, &r)?;
                jacobian_evals += 1;
                if rel < opts.ftol {
                    stalled += 1;
                    if stalled >= opts.ftol_steps {
                        termination = Termination::CostStalled;
                        break 'outer;
                    }
                } else {
                    stalled = 0;
                }
                break;
            }
            lambda *= opts.lambda_up;
            if lambda > opts.lambda_max {
                termination = Termination::NoDescent;
                break 'outer;
            }
        }
    }

    let dof = m - n;
    let jtj = jac.tr_mul(&jac);
    let covariance = normal_inverse(&jtj) * (cost / dof as f64);
    Ok(LmReport {
        x,
        residuals: r,
        cost,
        covariance,
        dof,
        converged: termination != Termination::MaxIterations,
        termination,
        iterations,
        residual_evals,
        jacobian_evals,
    })
}

/// Forward differences with relative step `1e-6` (floor `1e-8`), stepping
/// inward at an upper bound.
pub fn forward_difference_jacobian<F>(
    f: F,
    x: &[f64],
    r: &[f64],
    bounds: &Bounds,
) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut jac = DMatrix::zeros(r.len(), x.len());
    let mut xp = x.to_vec();
    for p in 0..x.len() {
        let h = fd_step(x[p], bounds.upper[p]);
        xp[p] = x[p] + h;
        let rp = f(&xp)?;
        xp[p] = x[p];
        for i in 0..r.len() {
            jac[(i, p)] = (rp[i] - r[i]) / h;
        }
    }
    Ok(jac)
}

/// Signed finite-difference step for a parameter value.
pub(crate) fn fd_step(x: f64, upper: f64) -> f64 {
    let h = (1e-6 * x.abs()).max(1e-8);
    if x + h > upper {
        -h
    } else {
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct Linear {
        t: Vec<f64>,
        y: Vec<f64>,
    }

    impl LeastSquares for Linear {
        fn residuals(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(self
                .t
                .iter()
                .zip(&self.y)
                .map(|(t, y)| x[0] + x[1] * t - y)
                .collect())
        }
        fn jacobian(&self, _x: &[f64], _r: &[f64]) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_fn(self.t.len(), 2, |i, j| self.t[i].powi(j as i32)))
        }
    }

    #[test]
    fn linear_model_reaches_normal_equations_in_two_iterations() {
        let t: Vec<f64> = (0..21).map(|i| i as f64 * 0.1 - 1.0).collect();
        let y: Vec<f64> = t
            .iter()
            .enumerate()
            .map(|(i, t)| 1.0 - 2.0 * t + 0.01 * ((i * 7 % 5) as f64 - 2.0))
            .collect();
        let problem = Linear { t: t.clone(), y: y.clone() };
        let jac = problem.jacobian(&[0.0; 2], &[]).unwrap();
        let exact = (jac.tr_mul(&jac))
            .cholesky()
            .unwrap()
            .solve(&jac.tr_mul(&DVector::from_vec(y)));
        let opts = LmOptions {
            max_iterations: 2,
            ..LmOptions::default()
        };
        let rep = levenberg_marquardt(&problem, &[0.0; 2], &Bounds::unbounded(2), &opts).unwrap();
        for i in 0..2 {
            assert_relative_eq!(rep.x[i], exact[i], max_relative = 1e-5);
        }
        let full =
            levenberg_marquardt(&problem, &[0.0; 2], &Bounds::unbounded(2), &LmOptions::default())
                .unwrap();
        assert!(full.converged);
        for i in 0..2 {
            assert_relative_eq!(full.x[i], exact[i], max_relative = 1e-10);
        }
    }

    struct Rosenbrock;

    impl LeastSquares for Rosenbrock {
        fn residuals(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0], 0.0])
        }
        fn jacobian(&self, x: &[f64], r: &[f64]) -> Result<DMatrix<f64>> {
            forward_difference_jacobian(|x| self.residuals(x), x, r, &Bounds::unbounded(2))
        }
    }

    #[test]
    fn rosenbrock_valley() {
        let rep =
            levenberg_marquardt(&Rosenbrock, &[-1.2, 1.0], &Bounds::unbounded(2), &LmOptions::default())
                .unwrap();
        assert!(rep.converged);
        assert!((rep.x[0] - 1.0).abs() < 1e-8, "{:?}", rep.x);
        assert!((rep.x[1] - 1.0).abs() < 1e-8, "{:?}", rep.x);
    }

    #[test]
    fn bounds_are_respected() {
        let bounds = Bounds {
            lower: vec![-2.0, -2.0],
            upper: vec![0.5, 2.0],
        };
        let rep = levenberg_marquardt(&Rosenbrock, &[-1.2, 1.0], &bounds, &LmOptions::default())
            .unwrap();
        assert!(bounds.contains(&rep.x));
        assert!((rep.x[0] - 0.5).abs() < 1e-6, "{:?}", rep.x);
    }

    #[test]
    fn jacobian_of_quadratic_model() {
        let f = |x: &[f64]| -> Result<Vec<f64>> {
            Ok(vec![x[0] * x[0] + 3.0 * x[1], x[0] * x[1], x[1] * x[1] - 1.0])
        };
        let x = [1.5, -0.7];
        let r = f(&x).unwrap();
        let jac = forward_difference_jacobian(f, &x, &r, &Bounds::unbounded(2)).unwrap();
        let exact = [[3.0, 3.0], [-0.7, 1.5], [0.0, -1.4]];
        for i in 0..3 {
            for j in 0..2 {
                assert!((jac[(i, j)] - exact[i][j]).abs() < 1e-5);
            }
        }
        // At the upper bound the difference is taken inward.
        let bounds = Bounds {
            lower: vec![-5.0, -5.0],
            upper: vec![1.5, 5.0],
        };
        assert!(fd_step(1.5, 1.5) < 0.0);
        let jac = forward_difference_jacobian(f, &x, &r, &bounds).unwrap();
        assert!((jac[(0, 0)] - 3.0).abs() < 1e-5);
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let rep =
            levenberg_marquardt(&Rosenbrock, &[-1.2, 1.0], &Bounds::unbounded(2), &LmOptions::default())
                .unwrap();
        let c = &rep.covariance;
        assert_eq!(c, &c.transpose());
        assert!(c.clone().symmetric_eigenvalues().iter().all(|&e| e >= -1e-12));
    }
}

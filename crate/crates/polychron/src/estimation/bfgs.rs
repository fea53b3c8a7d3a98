//! Dense BFGS maximizer with a strong-Wolfe line search.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    /// Convergence threshold on the gradient max-norm.
    pub tolerance: f64,
    pub max_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum ConvergenceStatus {
    /// Gradient max-norm reached the tolerance.
    Converged,
    /// Iteration budget exhausted first.
    MaxIterations,
    /// The line search could not improve the objective further.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub status: ConvergenceStatus,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

/// Maximizes `f` from `x0`. The objective returns the value and gradient;
/// `-inf` values are treated as infeasible territory for the line search.
pub fn maximize<F>(mut f: F, x0: &[f64], options: &BfgsOptions) -> Result<BfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (value0, grad0) = f(x.as_slice())?;
    if !value0.is_finite() {
        return Err(Error::numeric(
            "objective is not finite at the initial point",
        ));
    }
    // Work on the minimization problem internally.
    let mut value = -value0;
    let mut grad = -DVector::from_vec(grad0);
    let mut inv_hessian = DMatrix::identity(n, n);
    let mut first_update = true;
    let mut status = ConvergenceStatus::MaxIterations;
    let mut iterations = 0;

    for iter in 0..options.max_iterations {
        iterations = iter;
        if grad.amax() <= options.tolerance {
            status = ConvergenceStatus::Converged;
            break;
        }
        let mut direction = -(&inv_hessian * &grad);
        if direction.dot(&grad) >= 0.0 {
            // Lost positive definiteness; restart from steepest descent.
            inv_hessian = DMatrix::identity(n, n);
            first_update = true;
            direction = -grad.clone();
        }

        let search = line_search(&mut f, &x, value, &grad, &direction)?;
        let Some((alpha, new_value, new_grad)) = search else {
            status = ConvergenceStatus::Stalled;
            break;
        };
        let new_x = &x + alpha * &direction;
        let step = &new_x - &x;
        let grad_change = &new_grad - &grad;
        let sy = step.dot(&grad_change);
        if sy > 1e-10 * step.norm() * grad_change.norm() {
            if first_update {
                let scale = sy / grad_change.dot(&grad_change);
                inv_hessian = DMatrix::identity(n, n) * scale;
                first_update = false;
            }
            let rho = 1.0 / sy;
            // H <- (I - rho s y') H (I - rho y s') + rho s s'
            let hy = &inv_hessian * &grad_change;
            let yhy = grad_change.dot(&hy);
            let ss = &step * step.transpose();
            let hys = &hy * step.transpose();
            inv_hessian = inv_hessian - (&hys + hys.transpose()) * rho
                + ss * (rho * rho * yhy + rho);
        }
        x = new_x;
        value = new_value;
        grad = new_grad;
    }
    if status == ConvergenceStatus::MaxIterations && grad.amax() <= options.tolerance {
        status = ConvergenceStatus::Converged;
        iterations = options.max_iterations;
    }

    Ok(BfgsOutcome {
        x: x.as_slice().to_vec(),
        value: -value,
        gradient: grad.iter().map(|g| -g).collect(),
        iterations: if status == ConvergenceStatus::MaxIterations {
            options.max_iterations
        } else {
            iterations
        },
        status,
    })
}

/// Strong-Wolfe line search on the minimization objective (bracket + zoom).
/// Returns `None` when no acceptable step exists within floating-point
/// resolution.
#[allow(clippy::type_complexity)]
fn line_search<F>(
    f: &mut F,
    x: &DVector<f64>,
    value: f64,
    grad: &DVector<f64>,
    direction: &DVector<f64>,
) -> Result<Option<(f64, f64, DVector<f64>)>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let slope0 = grad.dot(direction);
    debug_assert!(slope0 < 0.0);
    // Function-precision allowance: near the optimum the true decrease per
    // step drops below the floating-point resolution of the objective (a sum
    // of many terms), so sufficient-decrease comparisons get this much slack
    // and the curvature condition carries convergence the rest of the way.
    let noise = 64.0 * f64::EPSILON * value.abs().max(1.0);
    // phi(a) = value at x + a d on the minimization scale.
    let mut eval = |alpha: f64| -> Result<(f64, DVector<f64>, f64)> {
        let point = x + alpha * direction;
        let (v, g) = f(point.as_slice())?;
        let g = -DVector::from_vec(g);
        let slope = g.dot(direction);
        Ok((-v, g, slope))
    };

    let mut alpha_prev = 0.0;
    let mut value_prev = value;
    let mut alpha = 1.0;
    let mut bracket: Option<(f64, f64, f64, f64)> = None; // lo, f_lo, slope_lo?, hi

    for _ in 0..30 {
        let (v, g, slope) = eval(alpha)?;
        if !v.is_finite()
            || v > value + C1 * alpha * slope0 + noise
            || (alpha_prev > 0.0 && v >= value_prev + noise)
        {
            bracket = Some((alpha_prev, value_prev, alpha, v));
            break;
        }
        if slope.abs() <= -C2 * slope0 {
            return Ok(Some((alpha, v, g)));
        }
        if slope >= 0.0 {
            bracket = Some((alpha, v, alpha_prev, value_prev));
            break;
        }
        alpha_prev = alpha;
        value_prev = v;
        alpha *= 2.0;
    }

    let Some((mut lo, mut f_lo, mut hi, mut _f_hi)) = bracket else {
        return Ok(None);
    };

    // Zoom by bisection; robust against infinite values inside the bracket.
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi || mid.abs() < 1e-20 {
            break;
        }
        let (v, g, slope) = eval(mid)?;
        if !v.is_finite() || v > value + C1 * mid * slope0 + noise || v >= f_lo + noise {
            hi = mid;
            _f_hi = v;
        } else {
            if slope.abs() <= -C2 * slope0 {
                return Ok(Some((mid, v, g)));
            }
            if slope * (hi - lo) >= 0.0 {
                hi = lo;
                _f_hi = f_lo;
            }
            lo = mid;
            f_lo = v;
        }
    }
    // Accept the best sufficient-decrease point found, if any.
    if lo > 0.0 && f_lo < value {
        let (v, g, _) = eval(lo)?;
        return Ok(Some((lo, v, g)));
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximizes_concave_quadratic() {
        // f(x) = -(x0 - 1)^2 - 2 (x1 + 0.5)^2
        let outcome = maximize(
            |x| {
                let f = -(x[0] - 1.0).powi(2) - 2.0 * (x[1] + 0.5).powi(2);
                let g = vec![-2.0 * (x[0] - 1.0), -4.0 * (x[1] + 0.5)];
                Ok((f, g))
            },
            &[5.0, 5.0],
            &BfgsOptions {
                tolerance: 1e-10,
                max_iterations: 100,
            },
        )
        .unwrap();
        assert_eq!(outcome.status, ConvergenceStatus::Converged);
        assert!((outcome.x[0] - 1.0).abs() < 1e-8);
        assert!((outcome.x[1] + 0.5).abs() < 1e-8);
    }

    #[test]
    fn handles_rosenbrock_valley() {
        // Maximize the negated Rosenbrock function: optimum at (1, 1).
        let outcome = maximize(
            |x| {
                let a = 1.0 - x[0];
                let b = x[1] - x[0] * x[0];
                let f = -(a * a + 100.0 * b * b);
                let g = vec![
                    2.0 * a + 400.0 * x[0] * b,
                    -200.0 * b,
                ];
                Ok((f, g))
            },
            &[-1.2, 1.0],
            &BfgsOptions {
                tolerance: 1e-8,
                max_iterations: 500,
            },
        )
        .unwrap();
        assert_eq!(outcome.status, ConvergenceStatus::Converged);
        assert!((outcome.x[0] - 1.0).abs() < 1e-5, "{:?}", outcome.x);
        assert!((outcome.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn respects_infinite_regions() {
        // f = ln(x) - x is -inf for x <= 0; optimum at x = 1.
        let outcome = maximize(
            |x| {
                if x[0] <= 0.0 {
                    Ok((f64::NEG_INFINITY, vec![0.0]))
                } else {
                    Ok((x[0].ln() - x[0], vec![1.0 / x[0] - 1.0]))
                }
            },
            &[3.0],
            &BfgsOptions {
                tolerance: 1e-10,
                max_iterations: 200,
            },
        )
        .unwrap();
        assert_eq!(outcome.status, ConvergenceStatus::Converged);
        assert!((outcome.x[0] - 1.0).abs() < 1e-8);
    }
}

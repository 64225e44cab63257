use super::LayoutParams;
use crate::error::{Error, Result};

/// Number of uniform samples of the target curve.
pub const AB_SAMPLES: usize = 300;
/// The target curve is sampled on `[0, AB_SPAN]`.
pub const AB_SPAN: f64 = 3.0;

const MAX_ITERATIONS: usize = 200;
const PARAM_TOL: f64 = 1e-8;

/// Membership target: flat up to `d_min`, then exponential decay.
pub fn target_curve(x: f64, d_min: f64) -> f64 {
    if x <= d_min {
        1.0
    } else {
        (-(x - d_min)).exp()
    }
}

fn samples() -> Vec<f64> {
    (0..AB_SAMPLES).map(|i| AB_SPAN * i as f64 / (AB_SAMPLES - 1) as f64).collect()
}

fn sum_sq(xs: &[f64], ys: &[f64], p: LayoutParams) -> f64 {
    xs.iter().zip(ys).map(|(&x, &y)| (p.curve(x) - y).powi(2)).sum()
}

/// Least-squares `(a, b)` for `d_min`, starting from `(1, 1)`.
pub fn fit_ab(d_min: f64) -> Result<LayoutParams> {
    fit_ab_with(d_min, LayoutParams { a: 1.0, b: 1.0 })
}

/// Damped Gauss-Newton (Levenberg-Marquardt) fit from a given start.
pub fn fit_ab_with(d_min: f64, start: LayoutParams) -> Result<LayoutParams> {
    if !(d_min >= 0.0 && d_min.is_finite()) {
        return Err(Error::domain(format!("d_min must be finite and >= 0, got {d_min}")));
    }
    let xs = samples();
    let ys: Vec<f64> = xs.iter().map(|&x| target_curve(x, d_min)).collect();
    let mut p = start;
    let mut cost = sum_sq(&xs, &ys, p);
    let mut damping = 1e-3;

    for _ in 0..MAX_ITERATIONS {
        // normal equations J^T J and J^T r
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            let psi = p.curve(x);
            let r = psi - y;
            let (da, db) = if x > 0.0 {
                let x2b = x.powf(2.0 * p.b);
                let common = -psi * psi * x2b;
                (common, common * p.a * 2.0 * x.ln())
            } else {
                (0.0, 0.0)
            };
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }

        let mut accepted = None;
        while damping < 1e12 {
            let a11 = jaa * (1.0 + damping);
            let a22 = jbb * (1.0 + damping);
            let det = a11 * a22 - jab * jab;
            if det.abs() < 1e-300 {
                damping *= 10.0;
                continue;
            }
            let step_a = -(a22 * ga - jab * gb) / det;
            let step_b = -(a11 * gb - jab * ga) / det;
            let trial = LayoutParams { a: p.a + step_a, b: p.b + step_b };
            if trial.a > 0.0 && trial.b > 0.0 {
                let trial_cost = sum_sq(&xs, &ys, trial);
                if trial_cost <= cost {
                    accepted = Some((trial, trial_cost, step_a, step_b));
                    break;
                }
            }
            damping *= 10.0;
        }

        let Some((trial, trial_cost, step_a, step_b)) = accepted else {
            // no descent direction left: the current point is stationary
            return Ok(p);
        };
        p = trial;
        cost = trial_cost;
        damping = (damping / 10.0).max(1e-12);
        let step = step_a.hypot(step_b);
        if step <= PARAM_TOL * (1.0 + p.a.hypot(p.b)) {
            return Ok(p);
        }
    }
    Err(Error::FitDiverged { residual: cost.sqrt() })
}

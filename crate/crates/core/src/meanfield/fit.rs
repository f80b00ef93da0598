//! Levenberg–Marquardt fit of the saturation law
//! `m₂(Ω) = m_sat x^α / (a + x^α)`, `x = Ω − 1`.

use nalgebra::{Matrix3, Vector3};

use crate::error::MeanFieldError;

pub const DEFAULT_GUESS: [f64; 3] = [0.23, 0.8, 0.1];
pub const PARAMETER_TOLERANCE: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 500;
const CRITICAL_OMEGA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub m2_sat: f64,
    pub alpha: f64,
    pub a: f64,
    /// Sum of squared errors.
    pub residual: f64,
    pub iterations: usize,
}

impl FitResult {
    pub fn eval(&self, omega: f64) -> f64 {
        saturation_law(omega - CRITICAL_OMEGA, [self.m2_sat, self.alpha, self.a])
    }
}

pub fn saturation_law(x: f64, p: [f64; 3]) -> f64 {
    let [s, alpha, a] = p;
    let xa = x.powf(alpha);
    s * xa / (a + xa)
}

fn gradient(x: f64, p: [f64; 3]) -> Vector3<f64> {
    let [s, alpha, a] = p;
    let xa = x.powf(alpha);
    let den = a + xa;
    Vector3::new(xa / den, s * x.ln() * xa * a / (den * den), -s * xa / (den * den))
}

fn sse(points: &[(f64, f64)], p: [f64; 3]) -> f64 {
    points
        .iter()
        .map(|&(omega, m2)| {
            let r = saturation_law(omega - CRITICAL_OMEGA, p) - m2;
            r * r
        })
        .sum()
}

pub fn fit_saturation(points: &[(f64, f64)]) -> Result<FitResult, MeanFieldError> {
    fit_saturation_from(points, DEFAULT_GUESS)
}

/// Least-squares fit over `(Ω, m₂)` pairs starting from `guess = (m_sat, α, a)`.
pub fn fit_saturation_from(points: &[(f64, f64)], guess: [f64; 3]) -> Result<FitResult, MeanFieldError> {
    if points.len() < 5 {
        return Err(MeanFieldError::InvalidArgument(format!(
            "saturation fit needs at least 5 points, got {}",
            points.len()
        )));
    }
    if let Some(&(omega, _)) = points.iter().find(|(o, m)| !(*o > CRITICAL_OMEGA) || !o.is_finite() || !m.is_finite()) {
        return Err(MeanFieldError::InvalidArgument(format!(
            "saturation fit needs finite points with Omega > 1, got Omega = {omega}"
        )));
    }
    let mut p = guess;
    let mut cost = sse(points, p);
    let mut lambda = 1e-3;
    for iteration in 1..=MAX_ITERATIONS {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for &(omega, m2) in points {
            let x = omega - CRITICAL_OMEGA;
            let g = gradient(x, p);
            let r = saturation_law(x, p) - m2;
            jtj += g * g.transpose();
            jtr += g * r;
        }
        // Retry with growing damping until the cost decreases.
        loop {
            let mut a = jtj;
            for i in 0..3 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let step = a.cholesky().map(|c| c.solve(&-jtr));
            if let Some(step) = step {
                let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
                let trial_cost = sse(points, trial);
                if trial_cost.is_finite() && trial_cost <= cost {
                    let change = step.iter().zip(&p).map(|(d, v)| d.abs() / v.abs().max(1.0)).fold(0.0, f64::max);
                    p = trial;
                    cost = trial_cost;
                    lambda = (lambda * 0.3).max(1e-15);
                    if change < PARAMETER_TOLERANCE {
                        return Ok(FitResult { m2_sat: p[0], alpha: p[1], a: p[2], residual: cost, iterations: iteration });
                    }
                    break;
                }
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                // No descent direction left: the current point is stationary to working precision.
                return Ok(FitResult { m2_sat: p[0], alpha: p[1], a: p[2], residual: cost, iterations: iteration });
            }
        }
    }
    Err(MeanFieldError::FitNonConvergence {
        iterations: MAX_ITERATIONS,
        best: FitResult { m2_sat: p[0], alpha: p[1], a: p[2], residual: cost, iterations: MAX_ITERATIONS },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_model() {
        let truth = [0.232, 0.77, 0.11];
        let points: Vec<(f64, f64)> = (1..=20)
            .map(|i| {
                let omega = 1.0 + 9.0 * i as f64 / 20.0;
                (omega, saturation_law(omega - 1.0, truth))
            })
            .collect();
        let fit = fit_saturation(&points).unwrap();
        assert!((fit.m2_sat - truth[0]).abs() < 1e-6, "{fit:?}");
        assert!((fit.alpha - truth[1]).abs() < 1e-6, "{fit:?}");
        assert!((fit.a - truth[2]).abs() < 1e-6, "{fit:?}");
        assert!(fit.residual < 1e-20);
        assert!((fit.eval(3.0) - saturation_law(2.0, truth)).abs() < 1e-9);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let p = [0.2, 0.9, 0.15];
        let x = 1.7;
        let g = gradient(x, p);
        for i in 0..3 {
            let h = 1e-6;
            let mut hi = p;
            let mut lo = p;
            hi[i] += h;
            lo[i] -= h;
            let fd = (saturation_law(x, hi) - saturation_law(x, lo)) / (2.0 * h);
            assert!((g[i] - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let few = [(2.0, 0.1); 4];
        assert!(matches!(fit_saturation(&few), Err(MeanFieldError::InvalidArgument(_))));
        let below = [(2.0, 0.1), (3.0, 0.1), (0.5, 0.1), (4.0, 0.1), (5.0, 0.1)];
        assert!(matches!(fit_saturation(&below), Err(MeanFieldError::InvalidArgument(_))));
    }

    #[test]
    fn deterministic() {
        let points: Vec<(f64, f64)> =
            (1..=8).map(|i| (1.0 + i as f64, 0.2 + 0.01 * ((i * 7) % 3) as f64 - 0.05 / i as f64)).collect();
        assert_eq!(fit_saturation(&points), fit_saturation(&points));
    }
}

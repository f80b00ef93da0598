//! Variable-order (1–5), variable-step backward differentiation formulas.
//!
//! Quasi-constant step-size implementation in Nordsieck-like backward
//! difference form: the history array `D` holds the modified divided
//! differences, step changes rescale it, and Newton iterations reuse an LU
//! factorization of `I − c J` until convergence stalls.

use nalgebra::{SMatrix, SVector};

const MAX_ORDER: usize = 5;
const NEWTON_MAXITER: usize = 4;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BdfFailure {
    StepTooSmall { time: f64 },
    NonFinite { time: f64 },
}

/// LU factorization with partial pivoting of a small dense matrix.
struct Lu<const N: usize> {
    lu: SMatrix<f64, N, N>,
    perm: [usize; N],
    singular: bool,
}

impl<const N: usize> Lu<N> {
    fn new(mut a: SMatrix<f64, N, N>) -> Self {
        let mut perm = [0; N];
        let mut singular = false;
        for (i, p) in perm.iter_mut().enumerate() {
            *p = i;
        }
        for col in 0..N {
            let pivot = (col..N).max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs())).unwrap_or(col);
            if a[(pivot, col)] == 0.0 {
                singular = true;
                continue;
            }
            if pivot != col {
                a.swap_rows(pivot, col);
                perm.swap(pivot, col);
            }
            for row in col + 1..N {
                let f = a[(row, col)] / a[(col, col)];
                a[(row, col)] = f;
                for k in col + 1..N {
                    a[(row, k)] -= f * a[(col, k)];
                }
            }
        }
        Self { lu: a, perm, singular }
    }

    fn solve(&self, b: &SVector<f64, N>) -> Option<SVector<f64, N>> {
        if self.singular {
            return None;
        }
        let mut x = SVector::<f64, N>::from_fn(|i, _| b[self.perm[i]]);
        for i in 0..N {
            for k in 0..i {
                x[i] -= self.lu[(i, k)] * x[k];
            }
        }
        for i in (0..N).rev() {
            for k in i + 1..N {
                x[i] -= self.lu[(i, k)] * x[k];
            }
            x[i] /= self.lu[(i, i)];
        }
        Some(x)
    }
}

/// Root-mean-square norm.
fn rms<const N: usize>(v: &SVector<f64, N>) -> f64 {
    (v.norm_squared() / N as f64).sqrt()
}

/// `R[i][j] = Π_{r=1..i} (r − 1 − factor·j) / r`, with row 0 all ones.
fn compute_r(order: usize, factor: f64) -> [[f64; MAX_ORDER + 1]; MAX_ORDER + 1] {
    let mut r = [[0.0; MAX_ORDER + 1]; MAX_ORDER + 1];
    for j in 0..=order {
        r[0][j] = 1.0;
    }
    for i in 1..=order {
        for j in 1..=order {
            r[i][j] = r[i - 1][j] * ((i - 1) as f64 - factor * j as f64) / i as f64;
        }
    }
    r
}

/// Rescales the difference array for a step multiplied by `factor`.
fn change_d<const N: usize>(d: &mut [SVector<f64, N>], order: usize, factor: f64) {
    let r = compute_r(order, factor);
    let u = compute_r(order, 1.0);
    let mut ru = [[0.0; MAX_ORDER + 1]; MAX_ORDER + 1];
    for i in 0..=order {
        for j in 0..=order {
            ru[i][j] = (0..=order).map(|k| r[i][k] * u[k][j]).sum();
        }
    }
    let old: Vec<SVector<f64, N>> = d[..=order].to_vec();
    for (i, slot) in d[..=order].iter_mut().enumerate() {
        *slot = (0..=order).fold(SVector::zeros(), |acc, j| acc + old[j] * ru[j][i]);
    }
}

pub struct Bdf<const N: usize, F, J, P>
where
    F: Fn(f64, &SVector<f64, N>) -> SVector<f64, N>,
    J: Fn(f64, &SVector<f64, N>) -> SMatrix<f64, N, N>,
    P: Fn(&mut SVector<f64, N>),
{
    fun: F,
    jac: J,
    project: P,
    rtol: f64,
    atol: f64,
    max_step: f64,
    t: f64,
    t_bound: f64,
    t_old: f64,
    h_abs: f64,
    order: usize,
    n_equal_steps: usize,
    d: [SVector<f64, N>; MAX_ORDER + 3],
    jac_matrix: SMatrix<f64, N, N>,
    lu: Option<Lu<N>>,
    newton_tol: f64,
    gamma: [f64; MAX_ORDER + 1],
    error_const: [f64; MAX_ORDER + 2],
    pub n_steps: usize,
}

impl<const N: usize, F, J, P> Bdf<N, F, J, P>
where
    F: Fn(f64, &SVector<f64, N>) -> SVector<f64, N>,
    J: Fn(f64, &SVector<f64, N>) -> SMatrix<f64, N, N>,
    P: Fn(&mut SVector<f64, N>),
{
    /// `project` is applied to every accepted state (use a no-op when not needed).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fun: F,
        jac: J,
        project: P,
        t0: f64,
        y0: SVector<f64, N>,
        t_bound: f64,
        rtol: f64,
        atol: f64,
        max_step: f64,
    ) -> Self {
        let f0 = fun(t0, &y0);
        let h_abs = select_initial_step(&fun, t0, &y0, &f0, t_bound, max_step, rtol, atol);
        let mut gamma = [0.0; MAX_ORDER + 1];
        for k in 1..=MAX_ORDER {
            gamma[k] = gamma[k - 1] + 1.0 / k as f64;
        }
        let mut error_const = [0.0; MAX_ORDER + 2];
        for (k, e) in error_const.iter_mut().enumerate() {
            *e = 1.0 / (k + 1) as f64;
        }
        let mut d = [SVector::zeros(); MAX_ORDER + 3];
        d[0] = y0;
        d[1] = f0 * h_abs;
        let jac_matrix = jac(t0, &y0);
        Self {
            fun,
            jac,
            project,
            rtol,
            atol,
            max_step,
            t: t0,
            t_bound,
            t_old: t0,
            h_abs,
            order: 1,
            n_equal_steps: 0,
            d,
            jac_matrix,
            lu: None,
            newton_tol: (10.0 * f64::EPSILON / rtol).max(0.03f64.min(rtol.sqrt())),
            gamma,
            error_const,
            n_steps: 0,
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> SVector<f64, N> {
        self.d[0]
    }

    pub fn finished(&self) -> bool {
        self.t >= self.t_bound
    }

    fn solve_system(
        &self,
        t_new: f64,
        y_predict: &SVector<f64, N>,
        c: f64,
        psi: &SVector<f64, N>,
        scale: &SVector<f64, N>,
    ) -> (bool, usize, SVector<f64, N>, SVector<f64, N>) {
        let lu = self.lu.as_ref().expect("factorization present");
        let mut y = *y_predict;
        let mut d = SVector::<f64, N>::zeros();
        let mut dy_norm_old: Option<f64> = None;
        let mut converged = false;
        let mut k = 0;
        while k < NEWTON_MAXITER {
            let f = (self.fun)(t_new, &y);
            if !f.iter().all(|v| v.is_finite()) {
                break;
            }
            let rhs = f * c - psi - d;
            let dy = match lu.solve(&rhs) {
                Some(v) => v,
                None => break,
            };
            let dy_norm = rms(&dy.component_div(scale));
            let rate = dy_norm_old.map(|old| dy_norm / old);
            if let Some(rate) = rate {
                if rate >= 1.0 || rate.powi((NEWTON_MAXITER - k) as i32) / (1.0 - rate) * dy_norm > self.newton_tol {
                    break;
                }
            }
            y += dy;
            d += dy;
            if dy_norm == 0.0 || rate.is_some_and(|r| r / (1.0 - r) * dy_norm < self.newton_tol) {
                converged = true;
                break;
            }
            dy_norm_old = Some(dy_norm);
            k += 1;
        }
        (converged, k + 1, y, d)
    }

    /// Advances by one accepted step.
    pub fn step(&mut self) -> Result<(), BdfFailure> {
        let t = self.t;
        self.t_old = t;
        let min_step = 10.0 * (next_up(t) - t).abs();
        let mut h_abs = if self.h_abs > self.max_step {
            change_d(&mut self.d, self.order, self.max_step / self.h_abs);
            self.n_equal_steps = 0;
            self.max_step
        } else if self.h_abs < min_step {
            change_d(&mut self.d, self.order, min_step / self.h_abs);
            self.n_equal_steps = 0;
            min_step
        } else {
            self.h_abs
        };
        let order = self.order;
        let mut current_jac = false;

        let (t_new, y_new, mut d, safety, error_norm, scale) = loop {
            if h_abs < min_step {
                return Err(BdfFailure::StepTooSmall { time: t });
            }
            let mut t_new = t + h_abs;
            if t_new > self.t_bound {
                t_new = self.t_bound;
                change_d(&mut self.d, order, (t_new - t).abs() / h_abs);
                self.n_equal_steps = 0;
                self.lu = None;
            }
            let h = t_new - t;
            h_abs = h.abs();

            let y_predict: SVector<f64, N> = self.d[..=order].iter().sum();
            let scale = y_predict.map(|v| self.atol + self.rtol * v.abs());
            let psi = self.d[1..=order]
                .iter()
                .zip(&self.gamma[1..=order])
                .fold(SVector::zeros(), |acc, (dk, g)| acc + dk * *g)
                / self.gamma[order];
            let c = h / self.gamma[order];

            let mut result;
            loop {
                if self.lu.is_none() {
                    let m = SMatrix::<f64, N, N>::identity() - self.jac_matrix * c;
                    self.lu = Some(Lu::new(m));
                }
                result = self.solve_system(t_new, &y_predict, c, &psi, &scale);
                if result.0 || current_jac {
                    break;
                }
                self.jac_matrix = (self.jac)(t_new, &y_predict);
                self.lu = None;
                current_jac = true;
            }
            let (converged, n_iter, y_new, d) = result;
            if !converged {
                if !y_new.iter().all(|v| v.is_finite()) {
                    return Err(BdfFailure::NonFinite { time: t });
                }
                h_abs *= 0.5;
                change_d(&mut self.d, order, 0.5);
                self.n_equal_steps = 0;
                self.lu = None;
                continue;
            }

            let safety = 0.9 * (2 * NEWTON_MAXITER + 1) as f64 / (2 * NEWTON_MAXITER + n_iter) as f64;
            let scale = y_new.map(|v| self.atol + self.rtol * v.abs());
            let error_norm = rms(&(d * self.error_const[order]).component_div(&scale));
            if error_norm > 1.0 {
                let factor = MIN_FACTOR.max(safety * error_norm.powf(-1.0 / (order + 1) as f64));
                h_abs *= factor;
                change_d(&mut self.d, order, factor);
                self.n_equal_steps = 0;
                continue;
            }
            break (t_new, y_new, d, safety, error_norm, scale);
        };

        // Fold the projection into the correction so the history stays consistent.
        let mut y_proj = y_new;
        (self.project)(&mut y_proj);
        d += y_proj - y_new;

        self.n_equal_steps += 1;
        self.n_steps += 1;
        self.t = t_new;
        self.h_abs = h_abs;

        self.d[order + 2] = d - self.d[order + 1];
        self.d[order + 1] = d;
        for i in (0..=order).rev() {
            let next = self.d[i + 1];
            self.d[i] += next;
        }

        if self.n_equal_steps < order + 1 {
            return Ok(());
        }

        let error_m_norm = if order > 1 {
            rms(&(self.d[order] * self.error_const[order - 1]).component_div(&scale))
        } else {
            f64::INFINITY
        };
        let error_p_norm = if order < MAX_ORDER {
            rms(&(self.d[order + 2] * self.error_const[order + 1]).component_div(&scale))
        } else {
            f64::INFINITY
        };
        let norms = [error_m_norm, error_norm, error_p_norm];
        let factors: Vec<f64> = norms
            .iter()
            .enumerate()
            .map(|(i, e)| e.powf(-1.0 / (order + i) as f64))
            .collect();
        let (best, max_factor) = factors
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &f)| if f > acc.1 { (i, f) } else { acc });
        let new_order = order + best - 1;
        self.order = new_order;
        let factor = MAX_FACTOR.min(safety * max_factor);
        self.h_abs *= factor;
        change_d(&mut self.d, new_order, factor);
        self.n_equal_steps = 0;
        self.lu = None;
        Ok(())
    }

    /// Interpolates the last step at `t ∈ [t_old, t]`.
    pub fn dense(&self, t: f64) -> SVector<f64, N> {
        let h = self.h_abs;
        let mut y = self.d[0];
        let mut p = 1.0;
        for j in 0..self.order {
            p *= (t - (self.t - h * j as f64)) / (h * (j + 1) as f64);
            y += self.d[j + 1] * p;
        }
        y
    }

    #[cfg(test)]
    pub fn t_old(&self) -> f64 {
        self.t_old
    }
}

fn next_up(t: f64) -> f64 {
    if t.is_nan() || t == f64::INFINITY {
        return t;
    }
    if t == 0.0 {
        return f64::from_bits(1);
    }
    let bits = t.to_bits();
    if t > 0.0 {
        f64::from_bits(bits + 1)
    } else {
        f64::from_bits(bits - 1)
    }
}

#[allow(clippy::too_many_arguments)]
fn select_initial_step<const N: usize, F>(
    fun: &F,
    t0: f64,
    y0: &SVector<f64, N>,
    f0: &SVector<f64, N>,
    t_bound: f64,
    max_step: f64,
    rtol: f64,
    atol: f64,
) -> f64
where
    F: Fn(f64, &SVector<f64, N>) -> SVector<f64, N>,
{
    let interval = (t_bound - t0).abs();
    if interval == 0.0 {
        return 0.0;
    }
    let scale = y0.map(|v| atol + v.abs() * rtol);
    let d0 = rms(&y0.component_div(&scale));
    let d1 = rms(&f0.component_div(&scale));
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(interval);
    let y1 = y0 + f0 * h0;
    let f1 = fun(t0 + h0, &y1);
    let d2 = rms(&(f1 - f0).component_div(&scale)) / h0;
    let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
        1e-6f64.max(h0 * 1e-3)
    } else {
        (0.01 / d1.max(d2)).powf(0.5)
    };
    (100.0 * h0).min(h1).min(interval).min(max_step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix1, Matrix2, Matrix3, Vector1, Vector2, Vector3};

    fn integrate<const N: usize, F, J>(f: F, j: J, y0: SVector<f64, N>, t_end: f64, rtol: f64) -> (SVector<f64, N>, usize)
    where
        F: Fn(f64, &SVector<f64, N>) -> SVector<f64, N>,
        J: Fn(f64, &SVector<f64, N>) -> SMatrix<f64, N, N>,
    {
        let mut s = Bdf::new(f, j, |_: &mut SVector<f64, N>| {}, 0.0, y0, t_end, rtol, rtol * 1e-2, f64::INFINITY);
        while !s.finished() {
            s.step().unwrap();
        }
        (s.y(), s.n_steps)
    }

    #[test]
    fn exponential_decay() {
        let (y, _) = integrate(
            |_, y: &Vector1<f64>| -y,
            |_, _: &Vector1<f64>| Matrix1::new(-1.0),
            Vector1::new(1.0),
            5.0,
            1e-10,
        );
        assert!((y[0] - (-5f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn stiff_linear_system_takes_few_steps() {
        // y1' = −1000 y1 + y2, y2' = −y2: stiff but smooth after the transient.
        let a = Matrix2::new(-1000.0, 1.0, 0.0, -1.0);
        let (y, steps) = integrate(move |_, y: &Vector2<f64>| a * y, move |_, _: &Vector2<f64>| a, Vector2::new(1.0, 1.0), 10.0, 1e-6);
        let y2 = (-10f64).exp();
        let y1 = y2 / 999.0;
        assert!((y[1] - y2).abs() < 1e-7);
        assert!((y[0] - y1).abs() < 1e-7);
        assert!(steps < 500, "{steps}");
    }

    #[test]
    fn harmonic_oscillator_and_dense_output() {
        let f = |_: f64, y: &Vector2<f64>| Vector2::new(y[1], -y[0]);
        let j = |_: f64, _: &Vector2<f64>| Matrix2::new(0.0, 1.0, -1.0, 0.0);
        let mut s = Bdf::new(f, j, |_: &mut Vector2<f64>| {}, 0.0, Vector2::new(1.0, 0.0), 20.0, 1e-10, 1e-12, f64::INFINITY);
        let mut worst: f64 = 0.0;
        while !s.finished() {
            s.step().unwrap();
            let tm = 0.5 * (s.t_old() + s.t());
            let y = s.dense(tm);
            worst = worst.max((y[0] - tm.cos()).abs());
            let y_end = s.dense(s.t());
            assert!((y_end - s.y()).norm() < 1e-14);
        }
        assert!(worst < 1e-6, "{worst}");
        assert!((s.y()[0] - 20f64.cos()).abs() < 1e-6);
    }

    #[test]
    fn lu_solves_with_pivoting() {
        let a = Matrix3::new(0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0);
        let b = Vector3::new(1.0, 2.0, 3.0);
        let x = Lu::new(a).solve(&b).unwrap();
        assert!((a * x - b).norm() < 1e-14);
        assert!(Lu::new(Matrix3::<f64>::zeros()).solve(&b).is_none());
    }

    #[test]
    fn difference_rescaling_is_identity_for_unit_factor() {
        let mut d = [Vector1::new(1.0), Vector1::new(2.0), Vector1::new(-3.0), Vector1::new(0.5), Vector1::new(0.0), Vector1::new(0.0), Vector1::new(0.0), Vector1::new(0.0)];
        let before = d;
        change_d(&mut d, 3, 1.0);
        for (a, b) in d.iter().zip(&before) {
            assert!((a - b).norm() < 1e-14);
        }
    }
}

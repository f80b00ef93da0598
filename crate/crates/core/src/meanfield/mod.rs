//! Thermodynamic limit: the Bloch-vector flow
//!
//! ```text
//! ṁx = κ mx mz
//! ṁy = −ω₀ mz + κ my mz
//! ṁz =  ω₀ my − κ (mx² + my²)
//! ```
//!
//! together with its fixed points, the magic density of the associated product
//! state, orbit averages over random initial conditions and the saturation fit.

mod bdf;
mod fit;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rayon::prelude::*;

pub use bdf::BdfFailure;
pub use fit::{fit_saturation, fit_saturation_from, saturation_law, FitResult, DEFAULT_GUESS, PARAMETER_TOLERANCE};

use crate::collective::{BlochVector, ModelParams};
use crate::error::MeanFieldError;

/// Distance from the unit sphere above which [`mf_magic_density`] flags its input.
pub const SPHERE_TOLERANCE: f64 = 1e-6;
/// Fraction of orbit integrations that must succeed.
pub const MIN_SUCCESS_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanFieldParams {
    pub omega0: f64,
    pub kappa: f64,
}

impl MeanFieldParams {
    pub fn new(omega0: f64, kappa: f64) -> Result<Self, MeanFieldError> {
        if !(omega0 >= 0.0) || !omega0.is_finite() || !(kappa > 0.0) || !kappa.is_finite() {
            return Err(MeanFieldError::InvalidArgument(format!(
                "need omega0 >= 0 and kappa > 0, got omega0 = {omega0}, kappa = {kappa}"
            )));
        }
        Ok(Self { omega0, kappa })
    }

    /// `κ = 1`, `ω₀ = Ω`.
    pub fn with_ratio(omega: f64) -> Result<Self, MeanFieldError> {
        Self::new(omega, 1.0)
    }

    pub fn omega_ratio(&self) -> f64 {
        self.omega0 / self.kappa
    }
}

impl From<&ModelParams> for MeanFieldParams {
    fn from(p: &ModelParams) -> Self {
        Self { omega0: p.omega0, kappa: p.kappa }
    }
}

pub fn mf_rhs(m: &BlochVector, params: &MeanFieldParams) -> BlochVector {
    let (w, k) = (params.omega0, params.kappa);
    BlochVector::new(k * m.x * m.z, -w * m.z + k * m.y * m.z, w * m.y - k * (m.x * m.x + m.y * m.y))
}

fn rhs_vec(m: &Vector3<f64>, w: f64, k: f64) -> Vector3<f64> {
    Vector3::new(k * m[0] * m[2], -w * m[2] + k * m[1] * m[2], w * m[1] - k * (m[0] * m[0] + m[1] * m[1]))
}

fn jacobian(m: &Vector3<f64>, w: f64, k: f64) -> Matrix3<f64> {
    Matrix3::new(
        k * m[2],
        0.0,
        k * m[0],
        0.0,
        k * m[2],
        -w + k * m[1],
        -2.0 * k * m[0],
        w - 2.0 * k * m[1],
        0.0,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integrator {
    /// Adaptive BDF of order 1–5.
    Bdf { rtol: f64, atol: f64 },
    /// Classical RK4 with step at most `dt`.
    Rk4 { dt: f64 },
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator::Bdf { rtol: 1e-10, atol: 1e-12 }
    }
}

/// Integration settings for [`evolve_mf`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfControls {
    pub integrator: Integrator,
    /// Output spacing; the grid is `t_max / n` with `n = round(t_max / sample_dt)`.
    pub sample_dt: f64,
    /// Upper bound on BDF steps.
    pub max_step: f64,
}

impl Default for MfControls {
    fn default() -> Self {
        Self { integrator: Integrator::default(), sample_dt: 0.01, max_step: f64::INFINITY }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<BlochVector>,
}

fn sample_grid(t_max: f64, sample_dt: f64) -> Vec<f64> {
    let n = ((t_max / sample_dt).round() as usize).max(1);
    (0..=n).map(|i| t_max * i as f64 / n as f64).collect()
}

fn project_to(v: &mut Vector3<f64>, radius: f64) {
    let n = v.norm();
    if n > 0.0 {
        *v *= radius / n;
    }
}

/// Integrates the flow from `m0` and calls `observe` on every grid time.
/// Outputs are projected back to the initial radius (the flow conserves `|m|`).
fn evolve_with<F: FnMut(f64, &BlochVector)>(
    m0: &BlochVector,
    params: &MeanFieldParams,
    t_max: f64,
    controls: &MfControls,
    mut observe: F,
) -> Result<(), MeanFieldError> {
    let r0 = m0.norm();
    if r0 > 1.0 + 1e-9 || !r0.is_finite() {
        return Err(MeanFieldError::InvalidArgument(format!("|m0| = {r0} exceeds 1")));
    }
    if !(t_max >= 0.0) || !t_max.is_finite() {
        return Err(MeanFieldError::InvalidArgument(format!("t_max must be non-negative, got {t_max}")));
    }
    if !(controls.sample_dt > 0.0) {
        return Err(MeanFieldError::InvalidArgument("sample_dt must be positive".into()));
    }
    let (w, k) = (params.omega0, params.kappa);
    let grid = sample_grid(t_max, controls.sample_dt);
    let y0 = Vector3::new(m0.x, m0.y, m0.z);
    let emit = |observe: &mut F, t: f64, mut y: Vector3<f64>| {
        project_to(&mut y, r0);
        observe(t, &BlochVector::new(y[0], y[1], y[2]));
    };
    match controls.integrator {
        Integrator::Bdf { rtol, atol } => {
            emit(&mut observe, 0.0, y0);
            if t_max == 0.0 {
                return Ok(());
            }
            let mut solver = bdf::Bdf::new(
                |_, y: &Vector3<f64>| rhs_vec(y, w, k),
                |_, y: &Vector3<f64>| jacobian(y, w, k),
                |y: &mut Vector3<f64>| project_to(y, r0),
                0.0,
                y0,
                t_max,
                rtol,
                atol,
                controls.max_step,
            );
            let mut next = 1;
            while next < grid.len() {
                solver.step().map_err(|e| match e {
                    BdfFailure::StepTooSmall { time } | BdfFailure::NonFinite { time } => {
                        MeanFieldError::NonConvergence { time }
                    }
                })?;
                while next < grid.len() && (grid[next] <= solver.t() || next == grid.len() - 1 && solver.finished()) {
                    let t = grid[next];
                    let y = if next == grid.len() - 1 && solver.finished() { solver.y() } else { solver.dense(t) };
                    emit(&mut observe, t, y);
                    next += 1;
                }
            }
        }
        Integrator::Rk4 { dt } => {
            if !(dt > 0.0) {
                return Err(MeanFieldError::InvalidArgument("RK4 dt must be positive".into()));
            }
            let mut y = y0;
            emit(&mut observe, 0.0, y);
            for pair in grid.windows(2) {
                let span = pair[1] - pair[0];
                let substeps = (span / dt).ceil().max(1.0) as usize;
                let h = span / substeps as f64;
                for _ in 0..substeps {
                    let k1 = rhs_vec(&y, w, k);
                    let k2 = rhs_vec(&(y + k1 * (0.5 * h)), w, k);
                    let k3 = rhs_vec(&(y + k2 * (0.5 * h)), w, k);
                    let k4 = rhs_vec(&(y + k3 * h), w, k);
                    y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                    project_to(&mut y, r0);
                }
                if !y.iter().all(|v| v.is_finite()) {
                    return Err(MeanFieldError::NonConvergence { time: pair[1] });
                }
                emit(&mut observe, pair[1], y);
            }
        }
    }
    Ok(())
}

/// Bloch trajectory sampled on a uniform grid over `[0, t_max]`.
pub fn evolve_mf(
    m0: &BlochVector,
    params: &MeanFieldParams,
    t_max: f64,
    controls: &MfControls,
) -> Result<MfTrajectory, MeanFieldError> {
    let mut out = MfTrajectory { times: Vec::new(), states: Vec::new() };
    evolve_with(m0, params, t_max, controls, |t, m| {
        out.times.push(t);
        out.states.push(*m);
    })?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfMagic {
    pub value: f64,
    /// `| |m| − 1 | > SPHERE_TOLERANCE`: the formula assumes a pure product state.
    pub off_sphere: bool,
}

/// `−ln((1 + mx⁴ + my⁴ + mz⁴)/2)`, the magic density of the spin-coherent product state.
pub fn mf_magic_density(m: &BlochVector) -> MfMagic {
    let s = m.x.powi(4) + m.y.powi(4) + m.z.powi(4);
    MfMagic { value: -((1.0 + s) / 2.0).ln(), off_sphere: (m.norm() - 1.0).abs() > SPHERE_TOLERANCE }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }
}

/// `(0, Ω, ±sqrt(1 − Ω²))` for `Ω < 1`, `(±sqrt(1 − Ω⁻²), Ω⁻¹, 0)` for `Ω ≥ 1`.
/// The `Minus` branch attracts in the magnetized phase.
pub fn mf_fixed_point(params: &MeanFieldParams, branch: Branch) -> BlochVector {
    let omega = params.omega_ratio();
    let s = branch.sign();
    if omega < 1.0 {
        BlochVector::new(0.0, omega, s * (1.0 - omega * omega).sqrt())
    } else {
        let inv = 1.0 / omega;
        BlochVector::new(s * (1.0 - inv * inv).sqrt(), inv, 0.0)
    }
}

/// Magic density of the fixed point as a function of `Ω = ω₀/κ`.
pub fn mf_fixed_point_magic(omega: f64) -> f64 {
    let x = if omega < 1.0 { omega } else { 1.0 / omega };
    let x2 = x * x;
    -(x2 * x2 - x2 + 1.0).ln()
}

/// Distribution of initial directions on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialSampler {
    /// `θ ~ U[0, π]`, `φ ~ U[0, 2π]`.
    #[default]
    UniformAngles,
    /// Uniform on the sphere (`cos θ ~ U[−1, 1]`).
    SolidAngle,
}

impl InitialSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> BlochVector {
        match self {
            InitialSampler::UniformAngles => {
                let theta = rng.random::<f64>() * std::f64::consts::PI;
                let phi = rng.random::<f64>() * std::f64::consts::TAU;
                BlochVector::from_angles(theta, phi)
            }
            InitialSampler::SolidAngle => {
                let cos_theta = 2.0 * rng.random::<f64>() - 1.0;
                let phi = rng.random::<f64>() * std::f64::consts::TAU;
                BlochVector::from_angles(cos_theta.clamp(-1.0, 1.0).acos(), phi)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitOptions {
    pub sampler: InitialSampler,
    pub controls: MfControls,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        Self { sampler: InitialSampler::default(), controls: MfControls::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitAverage {
    pub mean: f64,
    /// Sample standard deviation over initial conditions divided by `sqrt(n)`.
    pub std_error: f64,
    pub succeeded: usize,
    pub attempted: usize,
}

/// Time average of the magic density over `[τ/2, τ]` for a single orbit (trapezoid rule).
pub fn orbit_time_average(
    m0: &BlochVector,
    params: &MeanFieldParams,
    tau: f64,
    controls: &MfControls,
) -> Result<f64, MeanFieldError> {
    let half = 0.5 * tau;
    let mut grid_controls = *controls;
    // Even number of intervals so that τ/2 lies on the grid.
    let n = 2 * ((half / controls.sample_dt).round() as usize).max(1);
    grid_controls.sample_dt = tau / n as f64;
    let mut acc = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    evolve_with(m0, params, tau, &grid_controls, |t, m| {
        if t < half - 1e-9 * tau {
            return;
        }
        let v = mf_magic_density(m).value;
        if let Some((tp, vp)) = prev {
            acc += 0.5 * (t - tp) * (v + vp);
        }
        prev = Some((t, v));
    })?;
    Ok(acc / half)
}

/// Averages the orbit time-average of the magic density over `n_avg` random
/// initial directions drawn sequentially from `rng`; orbits run in parallel.
pub fn orbit_average_magic<R: Rng + ?Sized>(
    params: &MeanFieldParams,
    n_avg: usize,
    tau: f64,
    rng: &mut R,
    options: &OrbitOptions,
) -> Result<OrbitAverage, MeanFieldError> {
    if n_avg < 2 {
        return Err(MeanFieldError::InvalidArgument(format!("n_avg must be at least 2, got {n_avg}")));
    }
    if !(tau * params.kappa >= 100.0) {
        return Err(MeanFieldError::InvalidArgument(format!("kappa * tau must be at least 100, got {}", tau * params.kappa)));
    }
    let initial: Vec<BlochVector> = (0..n_avg).map(|_| options.sampler.sample(rng)).collect();
    let values: Vec<Option<f64>> = initial
        .par_iter()
        .map(|m0| orbit_time_average(m0, params, tau, &options.controls).ok())
        .collect();
    let ok: Vec<f64> = values.into_iter().flatten().collect();
    if (ok.len() as f64) < MIN_SUCCESS_FRACTION * n_avg as f64 || ok.len() < 2 {
        return Err(MeanFieldError::TooManyFailures { succeeded: ok.len(), attempted: n_avg });
    }
    let n = ok.len() as f64;
    let mean = ok.iter().sum::<f64>() / n;
    let var = ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(OrbitAverage { mean, std_error: (var / n).sqrt(), succeeded: ok.len(), attempted: n_avg })
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Three-term recurrence for P_n(x) and its derivative.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Average of the magic density over the unit sphere, `(1/4π) ∫ dΩ m₂(θ, φ)`.
///
/// Gauss–Legendre in `cos θ` with `points` nodes times the periodic trapezoid
/// rule in `φ` with `2·points` nodes.
pub fn solid_angle_limit(points: usize) -> Result<f64, MeanFieldError> {
    if points < 64 {
        return Err(MeanFieldError::InvalidArgument(format!("quadrature resolution must be at least 64, got {points}")));
    }
    let (u, wu) = gauss_legendre(points);
    let n_phi = 2 * points;
    let mut total = 0.0;
    for (&c, &w) in u.iter().zip(&wu) {
        let s = (1.0 - c * c).sqrt();
        let ring: f64 = (0..n_phi)
            .map(|j| {
                let phi = std::f64::consts::TAU * j as f64 / n_phi as f64;
                mf_magic_density(&BlochVector::new(s * phi.cos(), s * phi.sin(), c)).value
            })
            .sum();
        total += w * ring / n_phi as f64;
    }
    Ok(0.5 * total)
}

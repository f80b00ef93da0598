//! Unconditional master-equation dynamics in the Dicke basis.
//!
//! `∂ρ/∂t = −iω₀[Sx, ρ] + (κ/S)(S₋ρS₊ − ½{S₊S₋, ρ})`, integrated with fixed-step
//! classic RK4. All kernels exploit the tridiagonal structure of the ladder
//! operators, so one right-hand-side evaluation costs O(D²).

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::collective::{build_collective_ops, trace_distance, CollectiveOps, DenseState, ModelParams};
use crate::error::LindbladError;

/// Default step in units of `1/κ`.
pub const DEFAULT_DT: f64 = 1e-3;
/// Largest tolerated trace drift in a single step before renormalization.
pub const MAX_STEP_TRACE_DRIFT: f64 = 1e-6;
/// Steady-state criterion on the trace distance between snapshots one `1/κ` apart.
pub const STEADY_STATE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LindbladRun {
    pub params: ModelParams,
    pub dt: f64,
    pub t_max: f64,
    /// Steps between recorded snapshots.
    pub sample_stride: usize,
}

impl LindbladRun {
    pub fn new(params: ModelParams, dt: f64, t_max: f64, sample_stride: usize) -> Result<Self, LindbladError> {
        let run = Self { params, dt, t_max, sample_stride };
        run.validate()?;
        Ok(run)
    }

    pub fn validate(&self) -> Result<(), LindbladError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(LindbladError::InvalidRun(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max >= self.dt) {
            return Err(LindbladError::InvalidRun(format!("t_max = {} is shorter than dt", self.t_max)));
        }
        if self.sample_stride == 0 {
            return Err(LindbladError::InvalidRun("sample_stride must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }
}

/// Right-hand side of the master equation as a dense matrix.
pub fn lindblad_rhs(rho: &DenseState, ops: &CollectiveOps, params: &ModelParams) -> DMatrix<C64> {
    let d = rho.dim();
    let mut out = DMatrix::from_element(d, d, C64::new(0.0, 0.0));
    let kernel = RhsKernel::new(ops, params);
    kernel.apply(rho.matrix().as_slice(), out.as_mut_slice());
    out
}

struct RhsKernel {
    d: usize,
    omega0: f64,
    gamma: f64,
    ladder: Vec<f64>,
    decay: Vec<f64>,
}

impl RhsKernel {
    fn new(ops: &CollectiveOps, params: &ModelParams) -> Self {
        let ladder = ops.ladder().to_vec();
        let decay = ladder.iter().map(|c| c * c).collect();
        Self { d: ops.dim(), omega0: params.omega0, gamma: params.kappa / params.spin(), ladder, decay }
    }

    /// `out = L[ρ]` on column-major slices.
    fn apply(&self, rho: &[C64], out: &mut [C64]) {
        let d = self.d;
        let c = &self.ladder;
        let at = |i: usize, j: usize| rho[j * d + i];
        let half_w = 0.5 * self.omega0;
        for j in 0..d {
            for i in 0..d {
                // [Sx, ρ]_ij with Sx_{i,i+1} = c_{i+1}/2, Sx_{i,i-1} = c_i/2
                let mut comm = C64::new(0.0, 0.0);
                if i + 1 < d {
                    comm += at(i + 1, j) * c[i + 1];
                }
                if i > 0 {
                    comm += at(i - 1, j) * c[i];
                }
                if j > 0 {
                    comm -= at(i, j - 1) * c[j];
                }
                if j + 1 < d {
                    comm -= at(i, j + 1) * c[j + 1];
                }
                // −i ω₀ (comm/2)
                let mut val = C64::new(comm.im * half_w, -comm.re * half_w);
                let mut diss = -0.5 * (self.decay[i] + self.decay[j]) * at(i, j);
                if i + 1 < d && j + 1 < d {
                    diss += at(i + 1, j + 1) * (c[i + 1] * c[j + 1]);
                }
                val += diss * self.gamma;
                out[j * d + i] = val;
            }
        }
    }
}

/// Fixed-step RK4 propagator with per-step Hermitian projection and trace renormalization.
pub struct LindbladPropagator {
    kernel: RhsKernel,
    dt: f64,
    k1: Vec<C64>,
    k2: Vec<C64>,
    k3: Vec<C64>,
    k4: Vec<C64>,
    tmp: Vec<C64>,
}

impl LindbladPropagator {
    pub fn new(params: &ModelParams, dt: f64) -> Self {
        let ops = build_collective_ops(params);
        let n = ops.dim() * ops.dim();
        let zero = C64::new(0.0, 0.0);
        Self {
            kernel: RhsKernel::new(&ops, params),
            dt,
            k1: vec![zero; n],
            k2: vec![zero; n],
            k3: vec![zero; n],
            k4: vec![zero; n],
            tmp: vec![zero; n],
        }
    }

    /// Advances `rho` by one step; `time` is only used for error reporting.
    pub fn step(&mut self, rho: &mut DenseState, time: f64) -> Result<(), LindbladError> {
        let dt = self.dt;
        let y = rho.matrix_mut().as_mut_slice();
        self.kernel.apply(y, &mut self.k1);
        axpy_into(&mut self.tmp, y, &self.k1, 0.5 * dt);
        self.kernel.apply(&self.tmp, &mut self.k2);
        axpy_into(&mut self.tmp, y, &self.k2, 0.5 * dt);
        self.kernel.apply(&self.tmp, &mut self.k3);
        axpy_into(&mut self.tmp, y, &self.k3, dt);
        self.kernel.apply(&self.tmp, &mut self.k4);
        let w = dt / 6.0;
        for idx in 0..y.len() {
            y[idx] += (self.k1[idx] + 2.0 * (self.k2[idx] + self.k3[idx]) + self.k4[idx]) * w;
        }
        let drift = (rho.trace().re - 1.0).abs();
        if drift > MAX_STEP_TRACE_DRIFT || !drift.is_finite() {
            return Err(LindbladError::StepSize { time, drift });
        }
        rho.symmetrize();
        rho.renormalize_trace();
        Ok(())
    }
}

fn axpy_into(out: &mut [C64], y: &[C64], k: &[C64], a: f64) {
    for ((o, y), k) in out.iter_mut().zip(y).zip(k) {
        *o = y + k * a;
    }
}

/// Snapshots of a Lindblad run on its sampling grid.
#[derive(Debug, Clone)]
pub struct LindbladSeries {
    pub times: Vec<f64>,
    pub states: Vec<DenseState>,
}

/// Integrates and calls `observe` at every sampled time (including `t = 0` and the final step).
pub fn evolve_lindblad_with<F>(run: &LindbladRun, rho0: &DenseState, mut observe: F) -> Result<(), LindbladError>
where
    F: FnMut(f64, &DenseState),
{
    run.validate()?;
    check_initial(run, rho0)?;
    let mut rho = rho0.clone();
    let mut prop = LindbladPropagator::new(&run.params, run.dt);
    let n_steps = run.n_steps();
    observe(0.0, &rho);
    for step in 1..=n_steps {
        prop.step(&mut rho, (step - 1) as f64 * run.dt)?;
        if step % run.sample_stride == 0 || step == n_steps {
            observe(step as f64 * run.dt, &rho);
        }
    }
    Ok(())
}

pub fn evolve_lindblad(run: &LindbladRun, rho0: &DenseState) -> Result<LindbladSeries, LindbladError> {
    let mut series = LindbladSeries { times: Vec::new(), states: Vec::new() };
    evolve_lindblad_with(run, rho0, |t, rho| {
        series.times.push(t);
        series.states.push(rho.clone());
    })?;
    Ok(series)
}

fn check_initial(run: &LindbladRun, rho0: &DenseState) -> Result<(), LindbladError> {
    if rho0.dim() != run.params.dim() {
        return Err(crate::error::StateError::Dimension { expected: run.params.dim(), found: rho0.dim() }.into());
    }
    rho0.validate(1e-10)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub state: DenseState,
    pub converged: bool,
    /// Time at which integration stopped.
    pub time: f64,
    /// Last measured lagged trace distance.
    pub residual: f64,
}

/// Integrates until snapshots one `1/κ` apart are closer than
/// [`STEADY_STATE_TOLERANCE`] in trace distance, or `t_max` is reached.
pub fn steady_state(run: &LindbladRun, rho0: &DenseState) -> Result<SteadyState, LindbladError> {
    run.validate()?;
    check_initial(run, rho0)?;
    let lag_steps = ((1.0 / run.params.kappa) / run.dt).round().max(1.0) as usize;
    let n_steps = run.n_steps();
    let mut rho = rho0.clone();
    let mut lagged = rho.clone();
    let mut prop = LindbladPropagator::new(&run.params, run.dt);
    let mut residual = f64::INFINITY;
    for step in 1..=n_steps {
        prop.step(&mut rho, (step - 1) as f64 * run.dt)?;
        if step % lag_steps == 0 {
            residual = trace_distance(&rho, &lagged);
            if residual < STEADY_STATE_TOLERANCE {
                return Ok(SteadyState { state: rho, converged: true, time: step as f64 * run.dt, residual });
            }
            lagged = rho.clone();
        }
    }
    Ok(SteadyState { state: rho, converged: false, time: n_steps as f64 * run.dt, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collective::{
        fully_polarized, magnetization, pure_to_density, purity, DickeVector, Direction,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense_rhs(rho: &DenseState, ops: &CollectiveOps, params: &ModelParams) -> DMatrix<C64> {
        let i = C64::new(0.0, 1.0);
        let r = rho.matrix();
        let h = &ops.sx * C64::new(params.omega0, 0.0);
        let pm = &ops.s_plus * &ops.s_minus;
        let gamma = C64::new(params.kappa / params.spin(), 0.0);
        -(&h * r - r * &h) * i + (&ops.s_minus * r * &ops.s_plus - (&pm * r + r * &pm) * C64::new(0.5, 0.0)) * gamma
    }

    #[test]
    fn sparse_rhs_matches_dense_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1usize, 2, 5, 12] {
            let params = ModelParams::new(n, 1.3, 0.7).unwrap();
            let ops = build_collective_ops(&params);
            let rho = DenseState::random(n, 3, &mut rng);
            let diff = lindblad_rhs(&rho, &ops, &params) - dense_rhs(&rho, &ops, &params);
            assert!(diff.iter().all(|z| z.norm() < 1e-12), "n={n}");
        }
    }

    #[test]
    fn dark_state_is_stationary_without_drive() {
        let params = ModelParams::with_ratio(6, 0.0).unwrap();
        let ops = build_collective_ops(&params);
        let rho = pure_to_density(&fully_polarized(6, Direction::Down));
        assert!(lindblad_rhs(&rho, &ops, &params).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn rhs_is_traceless_and_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = ModelParams::with_ratio(9, 2.0).unwrap();
        let ops = build_collective_ops(&params);
        for _ in 0..5 {
            let rho = DenseState::random(9, 4, &mut rng);
            let rhs = lindblad_rhs(&rho, &ops, &params);
            assert!(rhs.trace().norm() < 1e-12);
            assert!((&rhs - rhs.adjoint()).iter().all(|z| z.norm() < 1e-12));
        }
    }

    #[test]
    fn single_spin_decay_matches_closed_form() {
        // N = 1: L = sqrt(2κ) σ₋, so the excited population decays as exp(−2κt)
        // and ⟨σz⟩(t) = 2 exp(−2κt) − 1.
        let kappa = 0.8;
        let params = ModelParams::new(1, 0.0, kappa).unwrap();
        let ops = build_collective_ops(&params);
        let up = pure_to_density(&fully_polarized(1, Direction::Up));
        let rhs = lindblad_rhs(&up, &ops, &params);
        // d⟨σz⟩/dt at t=0 is −4κ (population rate −2κ).
        assert!((2.0 * rhs[(1, 1)].re - (-4.0 * kappa)).abs() < 1e-12);

        let run = LindbladRun::new(params, 1e-3, 2.0, 100).unwrap();
        let series = evolve_lindblad(&run, &up).unwrap();
        for (t, rho) in series.times.iter().zip(&series.states) {
            let expected = 2.0 * (-2.0 * kappa * t).exp() - 1.0;
            let mz = magnetization(rho, &ops).unwrap().z;
            assert!((mz - expected).abs() < 1e-10, "t={t}: {mz} vs {expected}");
        }
    }

    #[test]
    fn undriven_evolution_relaxes_to_dark_state() {
        let params = ModelParams::with_ratio(6, 0.0).unwrap();
        let ops = build_collective_ops(&params);
        let run = LindbladRun::new(params, 1e-3, 60.0, 1000).unwrap();
        let rho0 = pure_to_density(&fully_polarized(6, Direction::Up));
        let series = evolve_lindblad(&run, &rho0).unwrap();
        let last = series.states.last().unwrap();
        assert!((purity(last) - 1.0).abs() < 1e-6);
        assert!((magnetization(last, &ops).unwrap().z + 1.0).abs() < 1e-6);
        for w in series.times.windows(2) {
            assert!(w[1] > w[0]);
        }
        for rho in &series.states {
            rho.validate(1e-10).unwrap();
        }
    }

    #[test]
    fn steady_state_without_drive_is_dark() {
        let params = ModelParams::with_ratio(4, 0.0).unwrap();
        let run = LindbladRun::new(params, 1e-3, 200.0, 1).unwrap();
        let rho0 = pure_to_density(&fully_polarized(4, Direction::Up));
        let ss = steady_state(&run, &rho0).unwrap();
        assert!(ss.converged);
        assert!((ss.state.matrix()[(0, 0)].re - 1.0).abs() < 1e-7);
    }

    #[test]
    fn steady_state_is_unique() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for omega in [0.5, 2.0] {
            let params = ModelParams::with_ratio(8, omega).unwrap();
            let run = LindbladRun::new(params, 2e-3, 400.0, 1).unwrap();
            let a = steady_state(&run, &pure_to_density(&DickeVector::random(8, &mut rng))).unwrap();
            let b = steady_state(&run, &pure_to_density(&DickeVector::random(8, &mut rng))).unwrap();
            assert!(a.converged && b.converged, "omega={omega}");
            assert!(trace_distance(&a.state, &b.state) < 1e-6, "omega={omega}");
        }
    }

    #[test]
    fn rejects_bad_runs() {
        let params = ModelParams::with_ratio(2, 1.0).unwrap();
        assert!(LindbladRun::new(params, 0.0, 1.0, 1).is_err());
        assert!(LindbladRun::new(params, 0.1, 0.01, 1).is_err());
        assert!(LindbladRun::new(params, 0.1, 1.0, 0).is_err());
    }

    #[test]
    fn oversized_step_is_reported() {
        let params = ModelParams::with_ratio(30, 5.0).unwrap();
        let run = LindbladRun::new(params, 0.5, 5.0, 1).unwrap();
        let rho0 = pure_to_density(&fully_polarized(30, Direction::Up));
        assert!(matches!(evolve_lindblad(&run, &rho0), Err(LindbladError::StepSize { .. })));
    }
}

//! Pure-state unravelings of the master equation.
//!
//! Shifted jumps use `L → L + μ`, `H → H − (i/2)(μ* L − μ L†)`; `μ = 0` is the
//! ordinary photodetection (quantum-jump) unraveling. Jump unravelings run either
//! with the per-step first-order rule ([`qj_step`]) or, by default, with the
//! waiting-time method: the unnormalized no-jump state is integrated with RK4 and
//! a jump fires when its squared norm drops below a uniform threshold, the jump
//! instant being located inside the step by root finding. Diffusion is
//! Euler–Maruyama. States are renormalized after every step.

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::collective::{build_collective_ops, CollectiveOps, DickeVector, ModelParams};
use crate::entanglement::entanglement_entropy;
use crate::error::{ObservableError, StepError, TrajectoryError};
use crate::parallel::substream_rng;
use crate::stabilizer::SreEvaluator;

pub const DEFAULT_DT: f64 = 1e-3;
/// Jump probability per step above which the first-order rule is rejected.
pub const MAX_JUMP_PROBABILITY: f64 = 0.1;
/// Maximum number of successive step halvings when the jump probability is too large.
pub const MAX_HALVINGS: u32 = 12;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unraveling {
    QuantumJump,
    GeneralMu(C64),
    Qsd,
}

impl Unraveling {
    pub fn label(&self) -> String {
        match self {
            Unraveling::QuantumJump => "qj".into(),
            Unraveling::GeneralMu(mu) if mu.im == 0.0 => format!("mu{}", mu.re),
            Unraveling::GeneralMu(mu) => format!("mu{}{:+}i", mu.re, mu.im),
            Unraveling::Qsd => "qsd".into(),
        }
    }
}

/// Integration scheme for jump unravelings (ignored for diffusion).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JumpScheme {
    /// RK4 no-jump evolution with jump instants resolved inside each step.
    #[default]
    WaitingTime,
    /// One uniform draw per step with jump probability `δp`; steps with
    /// `δp ≥` [`MAX_JUMP_PROBABILITY`] are halved.
    FirstOrder,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnravelingSpec {
    pub kind: Unraveling,
    pub scheme: JumpScheme,
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
    pub n_traj: usize,
    /// Steps between recorded samples.
    pub sample_stride: usize,
}

impl UnravelingSpec {
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(TrajectoryError::InvalidSpec(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max >= 0.0) || !self.t_max.is_finite() {
            return Err(TrajectoryError::InvalidSpec(format!("t_max must be non-negative, got {}", self.t_max)));
        }
        if self.n_traj == 0 {
            return Err(TrajectoryError::InvalidSpec("n_traj must be at least 1".into()));
        }
        if self.sample_stride == 0 {
            return Err(TrajectoryError::InvalidSpec("sample_stride must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }

    /// Sampling grid shared by every trajectory of the ensemble.
    pub fn sample_times(&self) -> Vec<f64> {
        let n = self.n_steps();
        let mut out: Vec<f64> = (0..=n).step_by(self.sample_stride).map(|s| s as f64 * self.dt).collect();
        if n % self.sample_stride != 0 {
            out.push(n as f64 * self.dt);
        }
        out
    }
}

/// Which per-sample observables to record besides `m_z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Observables {
    pub sre: bool,
    pub entanglement: bool,
    pub keep_states: bool,
}

impl Observables {
    pub const ALL: Self = Self { sre: true, entanglement: true, keep_states: false };
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub traj_index: usize,
    pub times: Vec<f64>,
    pub m_z: Vec<f64>,
    /// Empty unless requested.
    pub sre_density: Vec<f64>,
    /// Empty unless requested.
    pub entanglement: Vec<f64>,
    /// Counted jumps; `None` for diffusive unravelings.
    pub jump_count: Option<u64>,
    /// Empty unless requested.
    pub states: Vec<DickeVector>,
}

/// Relative width of the bracket at which a jump instant counts as located.
const JUMP_TIME_TOLERANCE: f64 = 1e-12;
const MAX_ROOT_ITERATIONS: usize = 100;

/// `out = G ψ` with `G = −iω₀Sx − ½L†L − μ*L − ½|μ|²`, the generator of the
/// unnormalized no-jump evolution.
struct Generator<'a> {
    ops: &'a CollectiveOps,
    omega0: f64,
    decay: &'a [f64],
    mu: C64,
}

impl Generator<'_> {
    fn apply(&self, src: &[C64], out: &mut [C64], l_buf: &mut [C64], sx_buf: &mut [C64]) {
        let scale = self.ops.jump_scale();
        self.ops.apply_s_minus(src, l_buf);
        self.ops.apply_sx(src, sx_buf);
        let mu_conj = self.mu.conj();
        let shift = 0.5 * self.mu.norm_sqr();
        for k in 0..src.len() {
            out[k] = C64::new(sx_buf[k].im, -sx_buf[k].re) * self.omega0
                - src[k] * (0.5 * self.decay[k] + shift)
                - mu_conj * l_buf[k] * scale;
        }
    }
}

/// Buffers of the waiting-time integrator.
struct Rk4Work {
    start: Vec<C64>,
    trial: Vec<C64>,
    k: Vec<C64>,
    acc: Vec<C64>,
    stage: Vec<C64>,
}

impl Rk4Work {
    fn new(d: usize) -> Self {
        Self { start: vec![ZERO; d], trial: vec![ZERO; d], k: vec![ZERO; d], acc: vec![ZERO; d], stage: vec![ZERO; d] }
    }
}

/// Reusable buffers and operator data for stepping one trajectory.
struct Stepper {
    ops: CollectiveOps,
    omega0: f64,
    decay: Vec<f64>,
    l_psi: Vec<C64>,
    sx_psi: Vec<C64>,
    work: Rk4Work,
    /// Squared norm of the unnormalized state since the last jump.
    survival: f64,
    /// Survival level at which the next jump fires.
    threshold: f64,
}

impl Stepper {
    fn new(params: &ModelParams) -> Self {
        Self::from_ops(&build_collective_ops(params), params)
    }

    fn from_ops(ops: &CollectiveOps, params: &ModelParams) -> Self {
        let d = ops.dim();
        Self {
            decay: ops.decay_diagonal(),
            ops: ops.clone(),
            omega0: params.omega0,
            l_psi: vec![ZERO; d],
            sx_psi: vec![ZERO; d],
            work: Rk4Work::new(d),
            survival: 1.0,
            threshold: 0.0,
        }
    }

    /// `work.trial ← RK4(work.start, h)`; returns the squared norm of the result.
    fn rk4_trial(&mut self, mu: C64, h: f64) -> f64 {
        let gen = Generator { ops: &self.ops, omega0: self.omega0, decay: &self.decay, mu };
        let w = &mut self.work;
        let (l, sx) = (&mut self.l_psi, &mut self.sx_psi);
        gen.apply(&w.start, &mut w.k, l, sx);
        for i in 0..w.k.len() {
            w.acc[i] = w.k[i];
            w.stage[i] = w.start[i] + w.k[i] * (0.5 * h);
        }
        for (weight, next) in [(2.0, 0.5), (2.0, 1.0), (1.0, 0.0)] {
            gen.apply(&w.stage, &mut w.k, l, sx);
            for i in 0..w.k.len() {
                w.acc[i] += w.k[i] * weight;
                w.stage[i] = w.start[i] + w.k[i] * (next * h);
            }
        }
        let mut n2 = 0.0;
        for i in 0..w.acc.len() {
            w.trial[i] = w.start[i] + w.acc[i] * (h / 6.0);
            n2 += w.trial[i].norm_sqr();
        }
        n2
    }

    fn draw_threshold<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.survival = 1.0;
        self.threshold = rng.random();
    }

    /// Waiting-time step of length `dt`; returns the number of jumps.
    fn waiting_step<R: Rng + ?Sized>(
        &mut self,
        psi: &mut DickeVector,
        mu: C64,
        dt: f64,
        rng: &mut R,
    ) -> Result<u64, StepError> {
        let mut remaining = dt;
        let mut jumps = 0;
        loop {
            self.work.start.copy_from_slice(psi.amplitudes());
            let n2 = self.rk4_trial(mu, remaining);
            if !n2.is_finite() || n2 == 0.0 {
                return Err(StepError::Overflow);
            }
            if self.survival * n2 > self.threshold {
                self.survival *= n2;
                accept_trial(psi, &self.work.trial, n2);
                return Ok(jumps);
            }
            // ln(survival · n2(τ) / threshold) changes sign on (0, remaining].
            let log_gap = |n2: f64, s: f64, r: f64| (s * n2 / r).ln();
            let (mut lo, mut g_lo) = (0.0, log_gap(1.0, self.survival, self.threshold));
            let (mut hi, mut g_hi) = (remaining, log_gap(n2, self.survival, self.threshold));
            // Illinois regula falsi; `hi` always stays on the jumped side.
            let mut side = 0i8;
            for _ in 0..MAX_ROOT_ITERATIONS {
                if hi - lo <= JUMP_TIME_TOLERANCE * dt || g_hi == 0.0 {
                    break;
                }
                let c = ((lo * g_hi - hi * g_lo) / (g_hi - g_lo)).clamp(lo, hi);
                let g_c = log_gap(self.rk4_trial(mu, c), self.survival, self.threshold);
                if g_c.abs() <= 1e-14 {
                    hi = c;
                    break;
                }
                if g_c > 0.0 {
                    (lo, g_lo) = (c, g_c);
                    if side == 1 {
                        g_hi *= 0.5;
                    }
                    side = 1;
                } else {
                    (hi, g_hi) = (c, g_c);
                    if side == -1 {
                        g_lo *= 0.5;
                    }
                    side = -1;
                }
            }
            let tau = hi;
            let n2_tau = self.rk4_trial(mu, tau);
            accept_trial(psi, &self.work.trial, n2_tau);
            self.apply_jump(psi, mu)?;
            jumps += 1;
            self.draw_threshold(rng);
            remaining -= tau;
            if remaining <= JUMP_TIME_TOLERANCE * dt {
                return Ok(jumps);
            }
        }
    }

    /// `ψ ← (L + μ)ψ / ‖(L + μ)ψ‖`.
    fn apply_jump(&mut self, psi: &mut DickeVector, mu: C64) -> Result<(), StepError> {
        let scale = self.ops.jump_scale();
        let amps = psi.amplitudes_mut();
        self.ops.apply_s_minus(amps, &mut self.l_psi);
        let mut norm2 = 0.0;
        for (l, a) in self.l_psi.iter_mut().zip(amps.iter()) {
            *l = *l * scale + mu * a;
            norm2 += l.norm_sqr();
        }
        if norm2 == 0.0 {
            return Err(StepError::ImpossibleJump);
        }
        let inv = 1.0 / norm2.sqrt();
        for (a, l) in amps.iter_mut().zip(&self.l_psi) {
            *a = l * inv;
        }
        Ok(())
    }

    /// Shifted jump rule. Draws exactly one uniform variate when the step is valid.
    fn jump_step<R: Rng + ?Sized>(
        &mut self,
        psi: &mut DickeVector,
        mu: C64,
        dt: f64,
        rng: &mut R,
    ) -> Result<bool, StepError> {
        let scale = self.ops.jump_scale();
        let amps = psi.amplitudes_mut();
        // l_psi = L ψ (unshifted)
        self.ops.apply_s_minus(amps, &mut self.l_psi);
        for v in &mut self.l_psi {
            *v *= scale;
        }
        let rate: f64 = self.l_psi.iter().zip(amps.iter()).map(|(l, a)| (l + mu * a).norm_sqr()).sum();
        let dp = rate * dt;
        if !dp.is_finite() {
            return Err(StepError::Overflow);
        }
        if dp >= MAX_JUMP_PROBABILITY {
            return Err(StepError::StepTooLarge { probability: dp });
        }
        let u: f64 = rng.random();
        if u < dp {
            let norm = rate.sqrt();
            if norm == 0.0 {
                return Err(StepError::ImpossibleJump);
            }
            for (a, l) in amps.iter_mut().zip(&self.l_psi) {
                *a = (l + mu * *a) / norm;
            }
            return Ok(true);
        }
        // δψ = (−i H_nH dt + δp/2) ψ with
        // −i H_nH = −iω₀Sx − ½L†L − μ*L − ½|μ|².
        self.ops.apply_sx(amps, &mut self.sx_psi);
        let mu_conj = mu.conj();
        let offset = 1.0 - 0.5 * mu.norm_sqr() * dt + 0.5 * dp;
        for k in 0..amps.len() {
            let a = amps[k];
            let drift = C64::new(self.sx_psi[k].im, -self.sx_psi[k].re) * self.omega0
                - a * (0.5 * self.decay[k])
                - mu_conj * self.l_psi[k];
            amps[k] = a * offset + drift * dt;
        }
        renormalize(psi)?;
        Ok(false)
    }

    /// Euler–Maruyama step of quantum state diffusion with complex increment `dw`.
    fn qsd_step_with_increment(&mut self, psi: &mut DickeVector, dt: f64, dw: C64) -> Result<(), StepError> {
        let scale = self.ops.jump_scale();
        let amps = psi.amplitudes_mut();
        self.ops.apply_s_minus(amps, &mut self.l_psi);
        for v in &mut self.l_psi {
            *v *= scale;
        }
        let ell: C64 = amps.iter().zip(&self.l_psi).map(|(a, l)| a.conj() * l).sum();
        self.ops.apply_sx(amps, &mut self.sx_psi);
        let ell2 = ell.norm_sqr();
        for k in 0..amps.len() {
            let a = amps[k];
            let l = self.l_psi[k];
            let hamiltonian = C64::new(self.sx_psi[k].im, -self.sx_psi[k].re) * self.omega0;
            let damping = -0.5 * (a * self.decay[k] + a * ell2 - 2.0 * ell.conj() * l);
            amps[k] = a + (hamiltonian + damping) * dt + (l - ell * a) * dw;
        }
        renormalize(psi)
    }

    fn qsd_step<R: Rng + ?Sized>(&mut self, psi: &mut DickeVector, dt: f64, rng: &mut R) -> Result<(), StepError> {
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let dw = C64::new(x, y) * (0.5 * dt).sqrt();
        self.qsd_step_with_increment(psi, dt, dw)
    }

    /// One step of `kind`; returns the number of jumps.
    fn advance<R: Rng + ?Sized>(
        &mut self,
        psi: &mut DickeVector,
        kind: Unraveling,
        scheme: JumpScheme,
        dt: f64,
        rng: &mut R,
    ) -> Result<u64, StepError> {
        let mu = match kind {
            Unraveling::Qsd => {
                self.qsd_step(psi, dt, rng)?;
                return Ok(0);
            }
            Unraveling::QuantumJump => ZERO,
            Unraveling::GeneralMu(mu) => mu,
        };
        match scheme {
            JumpScheme::WaitingTime => self.waiting_step(psi, mu, dt, rng),
            JumpScheme::FirstOrder => self.first_order(psi, mu, dt, rng, 0),
        }
    }

    /// First-order jump step, halving `dt` while the jump probability is too large.
    fn first_order<R: Rng + ?Sized>(
        &mut self,
        psi: &mut DickeVector,
        mu: C64,
        dt: f64,
        rng: &mut R,
        halvings: u32,
    ) -> Result<u64, StepError> {
        match self.jump_step(psi, mu, dt, rng) {
            Ok(jumped) => Ok(jumped as u64),
            Err(StepError::StepTooLarge { .. }) if halvings < MAX_HALVINGS => {
                let a = self.first_order(psi, mu, 0.5 * dt, rng, halvings + 1)?;
                let b = self.first_order(psi, mu, 0.5 * dt, rng, halvings + 1)?;
                Ok(a + b)
            }
            Err(e) => Err(e),
        }
    }
}

fn accept_trial(psi: &mut DickeVector, trial: &[C64], n2: f64) {
    let inv = 1.0 / n2.sqrt();
    for (a, t) in psi.amplitudes_mut().iter_mut().zip(trial) {
        *a = t * inv;
    }
}

fn renormalize(psi: &mut DickeVector) -> Result<(), StepError> {
    let norm = psi.renormalize();
    if !norm.is_finite() || norm == 0.0 {
        return Err(StepError::Overflow);
    }
    Ok(())
}

/// Photodetection step: jump with probability `⟨L†L⟩dt`, otherwise non-Hermitian drift.
/// Returns whether a jump occurred.
pub fn qj_step<R: Rng + ?Sized>(
    psi: &mut DickeVector,
    ops: &CollectiveOps,
    params: &ModelParams,
    dt: f64,
    rng: &mut R,
) -> Result<bool, StepError> {
    Stepper::from_ops(ops, params).jump_step(psi, ZERO, dt, rng)
}

/// Jump step with shifted operators `L + μ` and `H − (i/2)(μ* L − μ L†)`.
pub fn general_mu_step<R: Rng + ?Sized>(
    psi: &mut DickeVector,
    ops: &CollectiveOps,
    params: &ModelParams,
    mu: C64,
    dt: f64,
    rng: &mut R,
) -> Result<bool, StepError> {
    Stepper::from_ops(ops, params).jump_step(psi, mu, dt, rng)
}

/// Quantum-state-diffusion step with `δW = sqrt(dt/2)(X + iY)`.
pub fn qsd_step<R: Rng + ?Sized>(
    psi: &mut DickeVector,
    ops: &CollectiveOps,
    params: &ModelParams,
    dt: f64,
    rng: &mut R,
) -> Result<(), StepError> {
    Stepper::from_ops(ops, params).qsd_step(psi, dt, rng)
}

/// [`qsd_step`] with a caller-supplied noise increment.
pub fn qsd_step_with_increment(
    psi: &mut DickeVector,
    ops: &CollectiveOps,
    params: &ModelParams,
    dt: f64,
    dw: C64,
) -> Result<(), StepError> {
    Stepper::from_ops(ops, params).qsd_step_with_increment(psi, dt, dw)
}

/// Shared, read-only data for an ensemble run.
struct EnsembleContext<'a> {
    spec: &'a UnravelingSpec,
    params: &'a ModelParams,
    psi0: &'a DickeVector,
    observables: Observables,
    sre: Option<SreEvaluator>,
    sample_times: Vec<f64>,
}

impl EnsembleContext<'_> {
    fn run(&self, index: usize) -> Result<TrajectoryRecord, TrajectoryError> {
        let spec = self.spec;
        let mut rng = substream_rng(spec.seed, index as u64);
        let mut stepper = Stepper::new(self.params);
        let mut psi = self.psi0.clone();
        let n_samples = self.sample_times.len();
        let mut record = TrajectoryRecord {
            traj_index: index,
            times: self.sample_times.clone(),
            m_z: Vec::with_capacity(n_samples),
            sre_density: Vec::new(),
            entanglement: Vec::new(),
            jump_count: match spec.kind {
                Unraveling::Qsd => None,
                _ => Some(0),
            },
            states: Vec::new(),
        };
        self.observe(&mut record, &psi, &stepper.ops, index)?;
        if spec.kind != Unraveling::Qsd && spec.scheme == JumpScheme::WaitingTime {
            stepper.draw_threshold(&mut rng);
        }
        let n_steps = spec.n_steps();
        for step in 1..=n_steps {
            let jumps = stepper
                .advance(&mut psi, spec.kind, spec.scheme, spec.dt, &mut rng)
                .map_err(|source| TrajectoryError::Step { index, time: (step - 1) as f64 * spec.dt, source })?;
            if let Some(count) = record.jump_count.as_mut() {
                *count += jumps;
            }
            if step % spec.sample_stride == 0 || step == n_steps {
                self.observe(&mut record, &psi, &stepper.ops, index)?;
            }
        }
        Ok(record)
    }

    fn observe(
        &self,
        record: &mut TrajectoryRecord,
        psi: &DickeVector,
        ops: &CollectiveOps,
        index: usize,
    ) -> Result<(), TrajectoryError> {
        let wrap = |e: ObservableError| TrajectoryError::Observable { index, source: Box::new(e) };
        record.m_z.push(ops.expect_sz(psi.amplitudes()) / ops.spin());
        if let Some(eval) = &self.sre {
            let m = eval.sre_pure(psi).map_err(|e| wrap(e.into()))?;
            record.sre_density.push(m.m2_density);
        }
        if self.observables.entanglement {
            record.entanglement.push(entanglement_entropy(psi).map_err(|e| wrap(e.into()))?);
        }
        if self.observables.keep_states {
            record.states.push(psi.clone());
        }
        Ok(())
    }
}

/// Runs a single trajectory of the ensemble described by `spec`.
pub fn run_trajectory(
    spec: &UnravelingSpec,
    params: &ModelParams,
    psi0: &DickeVector,
    index: usize,
    observables: Observables,
) -> Result<TrajectoryRecord, TrajectoryError> {
    context(spec, params, psi0, observables)?.run(index)
}

fn context<'a>(
    spec: &'a UnravelingSpec,
    params: &'a ModelParams,
    psi0: &'a DickeVector,
    observables: Observables,
) -> Result<EnsembleContext<'a>, TrajectoryError> {
    spec.validate()?;
    if psi0.dim() != params.dim() {
        return Err(crate::error::StateError::Dimension { expected: params.dim(), found: psi0.dim() }.into());
    }
    let deviation = (psi0.norm_sqr() - 1.0).abs();
    if deviation > 1e-10 {
        return Err(crate::error::StateError::Unnormalized { deviation }.into());
    }
    Ok(EnsembleContext {
        spec,
        params,
        psi0,
        observables,
        sre: observables.sre.then(|| SreEvaluator::new(params.n_spins)),
        sample_times: spec.sample_times(),
    })
}

/// Runs `spec.n_traj` independent trajectories on the current rayon pool.
///
/// Trajectory `i` draws from [`substream_rng`]`(spec.seed, i)`, and records are
/// returned sorted by index, so the output does not depend on the worker count.
/// On failure the error of the lowest failing index is returned.
pub fn run_ensemble(
    spec: &UnravelingSpec,
    params: &ModelParams,
    psi0: &DickeVector,
    observables: Observables,
) -> Result<Vec<TrajectoryRecord>, TrajectoryError> {
    let ctx = context(spec, params, psi0, observables)?;
    let results: Vec<Result<TrajectoryRecord, TrajectoryError>> =
        (0..spec.n_traj).into_par_iter().map(|i| ctx.run(i)).collect();
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collective::{fully_polarized, Direction};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, omega: f64) -> (ModelParams, CollectiveOps) {
        let params = ModelParams::with_ratio(n, omega).unwrap();
        (params, build_collective_ops(&params))
    }

    #[test]
    fn dark_state_never_jumps() {
        let (params, ops) = setup(6, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut psi = fully_polarized(6, Direction::Down);
        for _ in 0..1000 {
            assert!(!qj_step(&mut psi, &ops, &params, 1e-2, &mut rng).unwrap());
        }
        assert_eq!(psi, fully_polarized(6, Direction::Down));
    }

    #[test]
    fn fully_up_jump_probability_is_two_kappa_dt() {
        let (params, ops) = setup(8, 1.0);
        let psi = fully_polarized(8, Direction::Up);
        let mut stepper = Stepper::from_ops(&ops, &params);
        // dt chosen so that δp = 2κ dt crosses the 0.1 threshold exactly at dt = 0.05.
        let mut p = psi.clone();
        let err = stepper.jump_step(&mut p, ZERO, 0.05, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        match err {
            StepError::StepTooLarge { probability } => assert!((probability - 0.1).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
        // Empirical jump frequency from the fully-up state.
        let dt = 0.01;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let trials = 20000;
        let jumps = (0..trials)
            .filter(|_| {
                let mut p = psi.clone();
                qj_step(&mut p, &ops, &params, dt, &mut rng).unwrap()
            })
            .count();
        let freq = jumps as f64 / trials as f64;
        let expected = 2.0 * dt;
        let sigma = (expected * (1.0 - expected) / trials as f64).sqrt();
        assert!((freq - expected).abs() < 4.0 * sigma, "{freq} vs {expected}");
    }

    #[test]
    fn shifted_jump_rate_on_dark_state() {
        // ⟨(L+μ)†(L+μ)⟩ = |μ|² on the dark state.
        let (params, ops) = setup(5, 2.0);
        let mu = C64::new(2.0, 0.0);
        let mut stepper = Stepper::from_ops(&ops, &params);
        let mut psi = fully_polarized(5, Direction::Down);
        match stepper.jump_step(&mut psi, mu, 0.025, &mut ChaCha8Rng::seed_from_u64(0)) {
            Err(StepError::StepTooLarge { probability }) => assert!((probability - 0.1).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mu_zero_is_bit_identical_to_quantum_jumps() {
        let (params, ops) = setup(10, 2.0);
        let mut rng_a = ChaCha8Rng::seed_from_u64(99);
        let mut rng_b = ChaCha8Rng::seed_from_u64(99);
        let mut a = fully_polarized(10, Direction::Up);
        let mut b = a.clone();
        for _ in 0..5000 {
            let ja = qj_step(&mut a, &ops, &params, 1e-3, &mut rng_a).unwrap();
            let jb = general_mu_step(&mut b, &ops, &params, ZERO, 1e-3, &mut rng_b).unwrap();
            assert_eq!(ja, jb);
            assert_eq!(a, b);
        }
        // Ensemble level.
        let psi0 = fully_polarized(10, Direction::Up);
        for scheme in [JumpScheme::WaitingTime, JumpScheme::FirstOrder] {
            let spec = |kind| UnravelingSpec { kind, scheme, dt: 1e-3, t_max: 1.0, seed: 5, n_traj: 3, sample_stride: 100 };
            let qj = run_ensemble(&spec(Unraveling::QuantumJump), &params, &psi0, Observables::default()).unwrap();
            let mu = run_ensemble(&spec(Unraveling::GeneralMu(ZERO)), &params, &psi0, Observables::default()).unwrap();
            assert_eq!(qj, mu);
        }
    }

    #[test]
    fn qsd_leaves_undriven_dark_state_invariant() {
        let (params, ops) = setup(6, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut psi = fully_polarized(6, Direction::Down);
        for _ in 0..100 {
            qsd_step(&mut psi, &ops, &params, 1e-3, &mut rng).unwrap();
        }
        assert_eq!(psi, fully_polarized(6, Direction::Down));
    }

    #[test]
    fn noiseless_qsd_step_is_normalized_and_deterministic() {
        let (params, ops) = setup(6, 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let psi = DickeVector::random(6, &mut rng);
        let mut a = psi.clone();
        let mut b = psi.clone();
        qsd_step_with_increment(&mut a, &ops, &params, 1e-3, ZERO).unwrap();
        qsd_step_with_increment(&mut b, &ops, &params, 1e-3, ZERO).unwrap();
        assert!((a.norm_sqr() - 1.0).abs() < 1e-12);
        assert_eq!(a, b);
        assert!((a.inner(&psi).norm() - 1.0).abs() < 1e-2);
    }

    #[test]
    fn steps_preserve_norm() {
        let (params, ops) = setup(12, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = DickeVector::random(12, &mut rng);
        let mut b = a.clone();
        let mut c = a.clone();
        for _ in 0..2000 {
            qj_step(&mut a, &ops, &params, 1e-3, &mut rng).unwrap();
            general_mu_step(&mut b, &ops, &params, C64::new(2.0, 0.5), 1e-3, &mut rng).unwrap();
            qsd_step(&mut c, &ops, &params, 1e-3, &mut rng).unwrap();
            for p in [&a, &b, &c] {
                assert!((p.norm_sqr() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn single_spin_jump_statistics_follow_exponential_decay() {
        // N = 1, ω₀ = 0: the up state survives without a jump with probability exp(−2κt).
        let (params, _) = setup(1, 0.0);
        let spec = UnravelingSpec {
            kind: Unraveling::QuantumJump,
            scheme: JumpScheme::WaitingTime,
            dt: 1e-3,
            t_max: 1.0,
            seed: 11,
            n_traj: 4000,
            sample_stride: 250,
        };
        let records = run_ensemble(&spec, &params, &fully_polarized(1, Direction::Up), Observables::default()).unwrap();
        let times = spec.sample_times();
        for (s, t) in times.iter().enumerate() {
            let excited = records.iter().filter(|r| r.m_z[s] > 0.0).count() as f64 / spec.n_traj as f64;
            let expected = (-2.0 * t).exp();
            let sigma = (expected * (1.0 - expected) / spec.n_traj as f64).sqrt().max(1e-3);
            assert!((excited - expected).abs() < 4.0 * sigma, "t={t}: {excited} vs {expected}");
        }
        for r in &records {
            assert!(r.jump_count.unwrap() <= 1);
        }
    }

    #[test]
    fn jump_instants_are_resolved_inside_long_steps() {
        // Decay times stay exponential at dt = 0.25, where δp per step would be 0.5.
        let (params, _) = setup(1, 0.0);
        let spec = UnravelingSpec {
            kind: Unraveling::QuantumJump,
            scheme: JumpScheme::WaitingTime,
            dt: 0.25,
            t_max: 1.0,
            seed: 12,
            n_traj: 4000,
            sample_stride: 1,
        };
        let records = run_ensemble(&spec, &params, &fully_polarized(1, Direction::Up), Observables::default()).unwrap();
        for (s, t) in spec.sample_times().iter().enumerate() {
            let excited = records.iter().filter(|r| r.m_z[s] > 0.0).count() as f64 / spec.n_traj as f64;
            let expected = (-2.0 * t).exp();
            let sigma = (expected * (1.0 - expected) / spec.n_traj as f64).sqrt().max(1e-3);
            assert!((excited - expected).abs() < 4.0 * sigma, "t={t}: {excited} vs {expected}");
        }
    }

    #[test]
    fn waiting_time_survival_matches_the_norm_decay() {
        // Without drive the no-jump state of N = 1 stays up, and its squared norm decays as exp(−2κt).
        let (params, _) = setup(1, 0.0);
        let mut stepper = Stepper::new(&params);
        stepper.work.start.copy_from_slice(fully_polarized(1, Direction::Up).amplitudes());
        let n2 = stepper.rk4_trial(ZERO, 0.05);
        assert!((n2 - (-0.1f64).exp()).abs() < 1e-8, "{n2}");
    }

    #[test]
    fn ensemble_is_reproducible_and_thread_independent() {
        let (params, _) = setup(8, 2.0);
        let spec = UnravelingSpec {
            kind: Unraveling::GeneralMu(C64::new(2.0, 0.0)),
            scheme: JumpScheme::WaitingTime,
            dt: 1e-3,
            t_max: 0.5,
            seed: 77,
            n_traj: 6,
            sample_stride: 100,
        };
        let psi0 = fully_polarized(8, Direction::Up);
        let a = crate::parallel::with_threads(1, || run_ensemble(&spec, &params, &psi0, Observables::ALL)).unwrap();
        let b = crate::parallel::with_threads(3, || run_ensemble(&spec, &params, &psi0, Observables::ALL)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        for (i, r) in a.iter().enumerate() {
            assert_eq!(r.traj_index, i);
            assert_eq!(r.times.len(), r.m_z.len());
            assert_eq!(r.times.len(), r.sre_density.len());
            assert_eq!(r.times.len(), r.entanglement.len());
            assert!(r.sre_density.iter().all(|&m| (-1e-12..=2f64.ln()).contains(&m)));
        }
        let single = run_trajectory(&spec, &params, &psi0, 4, Observables::ALL).unwrap();
        assert_eq!(single, a[4]);
    }

    #[test]
    fn sample_grid_includes_endpoints() {
        let spec = UnravelingSpec {
            kind: Unraveling::Qsd,
            scheme: JumpScheme::WaitingTime,
            dt: 0.1,
            t_max: 1.05,
            seed: 0,
            n_traj: 1,
            sample_stride: 4,
        };
        let t = spec.sample_times();
        assert_eq!(t.first(), Some(&0.0));
        assert!((t.last().unwrap() - 1.0).abs() < 1e-12 || (t.last().unwrap() - 1.1).abs() < 1e-12);
        assert!(t.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let (params, _) = setup(2, 1.0);
        let psi0 = fully_polarized(2, Direction::Up);
        let base = UnravelingSpec { kind: Unraveling::Qsd, scheme: JumpScheme::WaitingTime, dt: 1e-3, t_max: 1.0, seed: 0, n_traj: 1, sample_stride: 1 };
        for bad in [
            UnravelingSpec { dt: 0.0, ..base },
            UnravelingSpec { n_traj: 0, ..base },
            UnravelingSpec { sample_stride: 0, ..base },
        ] {
            assert!(matches!(
                run_ensemble(&bad, &params, &psi0, Observables::default()),
                Err(TrajectoryError::InvalidSpec(_))
            ));
        }
        let wrong = fully_polarized(3, Direction::Up);
        assert!(run_ensemble(&base, &params, &wrong, Observables::default()).is_err());
    }

    #[test]
    fn large_steps_are_halved_in_ensembles() {
        // δp = 2κ dt = 0.2 at dt = 0.1 on the fully up state: needs one halving.
        let (params, _) = setup(4, 0.5);
        let spec = UnravelingSpec {
            kind: Unraveling::QuantumJump,
            scheme: JumpScheme::FirstOrder,
            dt: 0.1,
            t_max: 1.0,
            seed: 3,
            n_traj: 4,
            sample_stride: 1,
        };
        let records = run_ensemble(&spec, &params, &fully_polarized(4, Direction::Up), Observables::default()).unwrap();
        assert_eq!(records.len(), 4);
    }
}

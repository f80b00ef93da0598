//! Dicke-basis states and collective spin operators for the maximal-spin sector.
//!
//! Basis index `k` counts up-spins, so `|k⟩ = |S, m = k - S⟩` with `S = N/2`.
//! Every module in the crate shares this convention.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::StateError;

const ZERO: C64 = C64::new(0.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// Physical parameters of the driven collective-decay model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub n_spins: usize,
    pub omega0: f64,
    pub kappa: f64,
}

impl ModelParams {
    pub fn new(n_spins: usize, omega0: f64, kappa: f64) -> Result<Self, StateError> {
        if n_spins == 0 {
            return Err(StateError::InvalidParams("n_spins must be at least 1".into()));
        }
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(StateError::InvalidParams(format!("kappa must be positive, got {kappa}")));
        }
        if !(omega0 >= 0.0) || !omega0.is_finite() {
            return Err(StateError::InvalidParams(format!("omega0 must be non-negative, got {omega0}")));
        }
        Ok(Self { n_spins, omega0, kappa })
    }

    /// Parameters in units of `kappa = 1`, with `omega0 = omega`.
    pub fn with_ratio(n_spins: usize, omega: f64) -> Result<Self, StateError> {
        Self::new(n_spins, omega, 1.0)
    }

    /// Total spin `S = N/2`.
    pub fn spin(&self) -> f64 {
        self.n_spins as f64 / 2.0
    }

    /// `Ω = ω₀/κ`.
    pub fn omega_ratio(&self) -> f64 {
        self.omega0 / self.kappa
    }

    pub fn dim(&self) -> usize {
        self.n_spins + 1
    }
}

/// Pure state in the maximal-spin sector.
#[derive(Debug, Clone, PartialEq)]
pub struct DickeVector {
    amplitudes: Vec<C64>,
}

impl DickeVector {
    pub fn from_amplitudes(amplitudes: Vec<C64>) -> Result<Self, StateError> {
        if amplitudes.len() < 2 {
            return Err(StateError::Dimension { expected: 2, found: amplitudes.len() });
        }
        Ok(Self { amplitudes })
    }

    /// Builds a state and rescales it to unit norm.
    pub fn normalized(amplitudes: Vec<C64>) -> Result<Self, StateError> {
        let mut psi = Self::from_amplitudes(amplitudes)?;
        let norm = psi.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(StateError::Unnormalized { deviation: f64::INFINITY });
        }
        psi.scale(1.0 / norm);
        Ok(psi)
    }

    /// Haar-like random state: independent complex Gaussian amplitudes, normalized.
    pub fn random<R: Rng + ?Sized>(n_spins: usize, rng: &mut R) -> Self {
        let amps = (0..=n_spins)
            .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        Self::normalized(amps).expect("gaussian vector is nonzero almost surely")
    }

    pub fn n_spins(&self) -> usize {
        self.amplitudes.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.amplitudes {
            *a *= factor;
        }
    }

    /// Rescales to unit norm and returns the norm before rescaling.
    pub fn renormalize(&mut self) -> f64 {
        let norm = self.norm();
        if norm > 0.0 {
            self.scale(1.0 / norm);
        }
        norm
    }

    pub fn inner(&self, other: &Self) -> C64 {
        self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

/// All spins up (`k = N`) or all down (`k = 0`). The all-down state is dark: `L|ψ⟩ = 0`.
pub fn fully_polarized(n_spins: usize, direction: Direction) -> DickeVector {
    assert!(n_spins >= 1, "n_spins must be at least 1");
    let mut amps = vec![ZERO; n_spins + 1];
    match direction {
        Direction::Up => amps[n_spins] = C64::new(1.0, 0.0),
        Direction::Down => amps[0] = C64::new(1.0, 0.0),
    }
    DickeVector { amplitudes: amps }
}

/// Density matrix in the Dicke basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseState {
    matrix: DMatrix<C64>,
}

impl DenseState {
    /// Wraps a matrix after checking Hermiticity and unit trace to 1e-10.
    pub fn new(matrix: DMatrix<C64>) -> Result<Self, StateError> {
        let state = Self::from_matrix_unchecked(matrix);
        state.validate(1e-10)?;
        Ok(state)
    }

    pub fn from_matrix_unchecked(matrix: DMatrix<C64>) -> Self {
        assert!(matrix.is_square() && matrix.nrows() >= 2, "density matrix must be square with dim >= 2");
        Self { matrix }
    }

    pub fn maximally_mixed(n_spins: usize) -> Self {
        let d = n_spins + 1;
        Self { matrix: DMatrix::from_diagonal_element(d, d, C64::new(1.0 / d as f64, 0.0)) }
    }

    /// Random mixed state `A A† / Tr(A A†)` with Gaussian `A` of the given rank.
    pub fn random<R: Rng + ?Sized>(n_spins: usize, rank: usize, rng: &mut R) -> Self {
        let d = n_spins + 1;
        let a = DMatrix::from_fn(d, rank.max(1), |_, _| {
            C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        let mut m = &a * a.adjoint();
        let tr = m.trace().re;
        m /= C64::new(tr, 0.0);
        let mut state = Self { matrix: m };
        state.symmetrize();
        state
    }

    pub fn validate(&self, tol: f64) -> Result<(), StateError> {
        let herm = hermiticity_defect(&self.matrix);
        if herm > tol {
            return Err(StateError::NotHermitian { defect: herm });
        }
        let tr = self.matrix.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > tol {
            return Err(StateError::Unnormalized { deviation: (tr.re - 1.0).abs().max(tr.im.abs()) });
        }
        Ok(())
    }

    pub fn n_spins(&self) -> usize {
        self.matrix.nrows() - 1
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut DMatrix<C64> {
        &mut self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    /// `ρ ← (ρ + ρ†)/2`.
    pub fn symmetrize(&mut self) {
        let d = self.dim();
        for j in 0..d {
            let diag = self.matrix[(j, j)].re;
            self.matrix[(j, j)] = C64::new(diag, 0.0);
            for i in (j + 1)..d {
                let avg = (self.matrix[(i, j)] + self.matrix[(j, i)].conj()) * 0.5;
                self.matrix[(i, j)] = avg;
                self.matrix[(j, i)] = avg.conj();
            }
        }
    }

    /// Divides by the (real) trace; returns the trace before rescaling.
    pub fn renormalize_trace(&mut self) -> f64 {
        let tr = self.trace().re;
        self.matrix /= C64::new(tr, 0.0);
        tr
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.matrix)
    }
}

fn hermiticity_defect(m: &DMatrix<C64>) -> f64 {
    let d = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..d {
        for i in j..d {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Ascending eigenvalues of a Hermitian matrix.
pub fn hermitian_eigenvalues(m: &DMatrix<C64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// `½‖ρ − σ‖₁`.
pub fn trace_distance(a: &DenseState, b: &DenseState) -> f64 {
    let diff = a.matrix() - b.matrix();
    0.5 * hermitian_eigenvalues(&diff).iter().map(|x| x.abs()).sum::<f64>()
}

/// Collective spin operators for one system size, plus the ladder coefficients
/// used by the sparse kernels.
#[derive(Debug, Clone)]
pub struct CollectiveOps {
    pub sx: DMatrix<C64>,
    pub sy: DMatrix<C64>,
    pub sz: DMatrix<C64>,
    pub s_plus: DMatrix<C64>,
    pub s_minus: DMatrix<C64>,
    /// `L = sqrt(κ/S) S₋`.
    pub jump: DMatrix<C64>,
    ladder: Vec<f64>,
    spin: f64,
    jump_scale: f64,
}

/// Builds dense collective operators from the ladder rule
/// `S₋|S,m⟩ = sqrt(S(S+1) − m(m−1)) |S,m−1⟩`.
pub fn build_collective_ops(params: &ModelParams) -> CollectiveOps {
    let n = params.n_spins;
    let d = n + 1;
    let s = params.spin();
    // In terms of k: S(S+1) − m(m−1) = k(N − k + 1).
    let ladder: Vec<f64> = (0..d).map(|k| ((k * (n + 1 - k)) as f64).sqrt()).collect();

    let mut s_minus = DMatrix::from_element(d, d, ZERO);
    for k in 1..d {
        s_minus[(k - 1, k)] = C64::new(ladder[k], 0.0);
    }
    let s_plus = s_minus.adjoint();
    let sx = (&s_plus + &s_minus) * C64::new(0.5, 0.0);
    let sy = (&s_plus - &s_minus) / (I * 2.0);
    let sz = DMatrix::from_fn(d, d, |i, j| if i == j { C64::new(i as f64 - s, 0.0) } else { ZERO });
    let jump_scale = (params.kappa / s).sqrt();
    let jump = &s_minus * C64::new(jump_scale, 0.0);
    CollectiveOps { sx, sy, sz, s_plus, s_minus, jump, ladder, spin: s, jump_scale }
}

impl CollectiveOps {
    pub fn dim(&self) -> usize {
        self.ladder.len()
    }

    pub fn spin(&self) -> f64 {
        self.spin
    }

    /// `c_k` with `S₋|k⟩ = c_k |k−1⟩`; `c_0 = 0`.
    pub fn ladder(&self) -> &[f64] {
        &self.ladder
    }

    /// `sqrt(κ/S)`.
    pub fn jump_scale(&self) -> f64 {
        self.jump_scale
    }

    /// Diagonal of `L†L = (κ/S) S₊S₋`.
    pub fn decay_diagonal(&self) -> Vec<f64> {
        let s2 = self.jump_scale * self.jump_scale;
        self.ladder.iter().map(|c| s2 * c * c).collect()
    }

    /// `out = S₋ ψ`.
    pub fn apply_s_minus(&self, psi: &[C64], out: &mut [C64]) {
        let d = self.dim();
        for k in 0..d - 1 {
            out[k] = psi[k + 1] * self.ladder[k + 1];
        }
        out[d - 1] = ZERO;
    }

    /// `out = S₊ ψ`.
    pub fn apply_s_plus(&self, psi: &[C64], out: &mut [C64]) {
        out[0] = ZERO;
        for k in 1..self.dim() {
            out[k] = psi[k - 1] * self.ladder[k];
        }
    }

    /// `out = Sx ψ`.
    pub fn apply_sx(&self, psi: &[C64], out: &mut [C64]) {
        let d = self.dim();
        for k in 0..d {
            let mut acc = ZERO;
            if k + 1 < d {
                acc += psi[k + 1] * self.ladder[k + 1];
            }
            if k > 0 {
                acc += psi[k - 1] * self.ladder[k];
            }
            out[k] = acc * 0.5;
        }
    }

    /// `⟨ψ|S₋|ψ⟩` for a pure state.
    pub fn expect_s_minus(&self, psi: &[C64]) -> C64 {
        (1..self.dim()).map(|k| psi[k - 1].conj() * psi[k] * self.ladder[k]).sum()
    }

    /// `⟨ψ|Sz|ψ⟩` for a pure state.
    pub fn expect_sz(&self, psi: &[C64]) -> f64 {
        psi.iter().enumerate().map(|(k, a)| a.norm_sqr() * (k as f64 - self.spin)).sum()
    }
}

/// Mean-field magnetization `(⟨Sx⟩, ⟨Sy⟩, ⟨Sz⟩)/S`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_angles(theta: f64, phi: f64) -> Self {
        Self::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

/// A state of the collective spin, pure or mixed.
pub trait CollectiveState {
    fn n_spins(&self) -> usize;
    /// `|Tr ρ − 1|` or `|⟨ψ|ψ⟩ − 1|`.
    fn norm_deviation(&self) -> f64;
    /// `(⟨S₋⟩, ⟨Sz⟩)`.
    fn ladder_moments(&self, ops: &CollectiveOps) -> (C64, f64);
    fn to_density(&self) -> DenseState;
}

impl CollectiveState for DickeVector {
    fn n_spins(&self) -> usize {
        self.dim() - 1
    }

    fn norm_deviation(&self) -> f64 {
        (self.norm_sqr() - 1.0).abs()
    }

    fn ladder_moments(&self, ops: &CollectiveOps) -> (C64, f64) {
        (ops.expect_s_minus(&self.amplitudes), ops.expect_sz(&self.amplitudes))
    }

    fn to_density(&self) -> DenseState {
        pure_to_density(self)
    }
}

impl CollectiveState for DenseState {
    fn n_spins(&self) -> usize {
        self.dim() - 1
    }

    fn norm_deviation(&self) -> f64 {
        (self.trace() - C64::new(1.0, 0.0)).norm()
    }

    fn ladder_moments(&self, ops: &CollectiveOps) -> (C64, f64) {
        let m = &self.matrix;
        let c = ops.ladder();
        let s_minus = (1..self.dim()).map(|k| m[(k, k - 1)] * c[k]).sum();
        let sz = (0..self.dim()).map(|k| m[(k, k)].re * (k as f64 - ops.spin())).sum();
        (s_minus, sz)
    }

    fn to_density(&self) -> DenseState {
        self.clone()
    }
}

/// Normalized magnetization of a pure or mixed state.
pub fn magnetization<S: CollectiveState + ?Sized>(
    state: &S,
    ops: &CollectiveOps,
) -> Result<BlochVector, StateError> {
    if state.n_spins() + 1 != ops.dim() {
        return Err(StateError::Dimension { expected: ops.dim(), found: state.n_spins() + 1 });
    }
    let deviation = state.norm_deviation();
    if deviation > 1e-6 {
        return Err(StateError::Unnormalized { deviation });
    }
    let (s_minus, sz) = state.ladder_moments(ops);
    // ⟨S₋⟩ = ⟨Sx⟩ − i⟨Sy⟩
    let s = ops.spin();
    Ok(BlochVector::new(s_minus.re / s, -s_minus.im / s, sz / s))
}

/// `Tr ρ²`.
pub fn purity(rho: &DenseState) -> f64 {
    rho.matrix().iter().map(|z| z.norm_sqr()).sum()
}

/// `|ψ⟩⟨ψ|`.
pub fn pure_to_density(psi: &DickeVector) -> DenseState {
    let a = psi.amplitudes();
    let d = a.len();
    DenseState::from_matrix_unchecked(DMatrix::from_fn(d, d, |i, j| a[i] * a[j].conj()))
}

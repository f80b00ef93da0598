//! Half-cut entanglement entropy of symmetric pure states.
//!
//! A Dicke state splits as
//! `|N;k⟩ = Σ_a sqrt(C(N_A,a) C(N_B,k−a) / C(N,k)) |N_A;a⟩|N_B;k−a⟩`,
//! so the Schmidt problem lives on an `(N_A+1) × (N_B+1)` coefficient matrix.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::collective::{hermitian_eigenvalues, DickeVector};
use crate::combinatorics::{ln_binomial, ln_factorials};
use crate::error::StateError;

/// Eigenvalues below this are treated as a positivity violation.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Reduced density matrix of the first `N_A = ⌊N/2⌋` spins, in their Dicke basis.
#[derive(Debug, Clone)]
pub struct ReducedState {
    pub matrix: DMatrix<C64>,
    pub n_a: usize,
}

/// Schmidt coefficient matrix `M[a][b] = ψ_{a+b} sqrt(C(N_A,a) C(N_B,b) / C(N,a+b))`.
fn coefficient_matrix(psi: &DickeVector) -> (DMatrix<C64>, usize) {
    let n = psi.n_spins();
    let n_a = n / 2;
    let n_b = n - n_a;
    let lnf = ln_factorials(n);
    let amps = psi.amplitudes();
    let m = DMatrix::from_fn(n_a + 1, n_b + 1, |a, b| {
        let k = a + b;
        let w = 0.5 * (ln_binomial(&lnf, n_a, a) + ln_binomial(&lnf, n_b, b) - ln_binomial(&lnf, n, k));
        amps[k] * w.exp()
    });
    (m, n_a)
}

pub fn reduced_half(psi: &DickeVector) -> ReducedState {
    let (m, n_a) = coefficient_matrix(psi);
    ReducedState { matrix: &m * m.adjoint(), n_a }
}

/// `−Tr ρ_A ln ρ_A` for the half cut, with `0 ln 0 = 0`.
pub fn entanglement_entropy(psi: &DickeVector) -> Result<f64, StateError> {
    let reduced = reduced_half(psi);
    let eigs = hermitian_eigenvalues(&reduced.matrix);
    if let Some(&min) = eigs.first() {
        if min < -PSD_TOLERANCE {
            return Err(StateError::NotPositive { eigenvalue: min });
        }
    }
    Ok(eigs
        .into_iter()
        .map(|l| l.clamp(0.0, 1.0))
        .filter(|&l| l > 0.0)
        .map(|l| -l * l.ln())
        .sum())
}

//! Stabilizer 2-Rényi entropy of permutationally invariant states.
//!
//! `M₂(ρ) = −ln Σ_P Tr⁴(Pρ)/2^N + ln Tr ρ²` over all `4^N` Pauli strings. On the
//! symmetric sector every string with the same gate counts `(n_x, n_y, n_z)` has
//! the same expectation, so the sum runs over `C(N+3, 3)` classes weighted by
//! their multinomial size.
//!
//! Class expectations use the Dicke matrix elements
//!
//! ```text
//! ⟨k'|P|k⟩ = (−i)^{n_y} (−1)^{n_z} / sqrt(C(N,k) C(N,k'))
//!            · Σ_j  F[j] · G[k − j],      k' = k + n_x + n_y − 2j
//! F(t) = (1 + t)^{n_x} (1 − t)^{n_y},     G(t) = (1 − t)^{n_z} (1 + t)^{n_id}
//! ```
//!
//! where `j` counts up-spins on the flipped (X/Y) sites. Grouping classes by
//! `w = n_x + n_y` and contracting `G` before `F` makes a full SRE evaluation
//! cost O(N⁴).

use nalgebra::DMatrix;
use num_bigint::BigUint;
use num_complex::Complex64 as C64;
use num_traits::ToPrimitive;

use crate::collective::{purity, CollectiveState, DenseState, DickeVector};
use crate::combinatorics::{inv_sqrt_binomials, multinomial};
use crate::error::MagicError;

/// Largest imaginary part tolerated in a class expectation.
pub const IMAG_TOLERANCE: f64 = 1e-8;
/// Floor applied to the Pauli moment before taking the logarithm.
pub const MOMENT_FLOOR: f64 = 1e-300;
/// Size limit of [`class_expectation_bruteforce`].
pub const BRUTEFORCE_MAX_SPINS: usize = 12;
/// Size limit of [`sre_bruteforce`].
pub const SRE_BRUTEFORCE_MAX_SPINS: usize = 6;

/// Permutation class of Pauli strings with fixed gate counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PauliClass {
    pub n_x: usize,
    pub n_y: usize,
    pub n_z: usize,
    pub n_id: usize,
    /// Number of strings in the class.
    pub multiplicity: BigUint,
}

impl PauliClass {
    pub fn new(n_spins: usize, n_x: usize, n_y: usize, n_z: usize) -> Result<Self, MagicError> {
        if n_x + n_y + n_z > n_spins {
            return Err(MagicError::InvalidClass { n_x, n_y, n_z, n_spins });
        }
        Ok(Self {
            n_x,
            n_y,
            n_z,
            n_id: n_spins - n_x - n_y - n_z,
            multiplicity: multinomial(n_spins, &[n_x, n_y, n_z]),
        })
    }

    pub fn n_spins(&self) -> usize {
        self.n_x + self.n_y + self.n_z + self.n_id
    }
}

/// All `C(N+3, 3)` classes, ordered lexicographically by `(n_x, n_y, n_z)`.
pub fn enumerate_pauli_classes(n_spins: usize) -> Vec<PauliClass> {
    let mut out = Vec::new();
    for n_x in 0..=n_spins {
        for n_y in 0..=(n_spins - n_x) {
            for n_z in 0..=(n_spins - n_x - n_y) {
                out.push(PauliClass::new(n_spins, n_x, n_y, n_z).expect("counts fit"));
            }
        }
    }
    out
}

/// Coefficient table of `(1 + t)^a (1 − t)^b` for all `a + b ≤ n`.
#[derive(Debug, Clone)]
struct SignedBinomialTable {
    n: usize,
    offsets: Vec<usize>,
    coeffs: Vec<f64>,
}

impl SignedBinomialTable {
    fn new(n: usize) -> Self {
        let mut offsets = Vec::new();
        let mut coeffs = Vec::new();
        for a in 0..=n {
            for b in 0..=(n - a) {
                offsets.push(coeffs.len());
                let poly = if b > 0 {
                    let prev = Self::slice_of(&offsets, &coeffs, n, a, b - 1).to_vec();
                    times_linear(&prev, -1.0)
                } else if a > 0 {
                    let prev = Self::slice_of(&offsets, &coeffs, n, a - 1, 0).to_vec();
                    times_linear(&prev, 1.0)
                } else {
                    vec![1.0]
                };
                coeffs.extend(poly);
            }
        }
        Self { n, offsets, coeffs }
    }

    fn index(n: usize, a: usize, b: usize) -> usize {
        // rows a' < a contribute (n − a' + 1) entries each
        a * (n + 1) - a * (a.saturating_sub(1)) / 2 + b
    }

    fn slice_of<'a>(offsets: &[usize], coeffs: &'a [f64], n: usize, a: usize, b: usize) -> &'a [f64] {
        let start = offsets[Self::index(n, a, b)];
        &coeffs[start..start + a + b + 1]
    }

    fn get(&self, a: usize, b: usize) -> &[f64] {
        Self::slice_of(&self.offsets, &self.coeffs, self.n, a, b)
    }
}

/// `p(t) · (1 + s t)`.
fn times_linear(p: &[f64], s: f64) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + 1];
    for (i, c) in p.iter().enumerate() {
        out[i] += c;
        out[i + 1] += s * c;
    }
    out
}

fn phase_y(n_y: usize) -> C64 {
    // (−i)^{n_y}
    match n_y % 4 {
        0 => C64::new(1.0, 0.0),
        1 => C64::new(0.0, -1.0),
        2 => C64::new(-1.0, 0.0),
        _ => C64::new(0.0, 1.0),
    }
}

fn real_part_checked(z: C64) -> Result<f64, MagicError> {
    if z.im.abs() > IMAG_TOLERANCE {
        return Err(MagicError::ComplexExpectation { imag: z.im });
    }
    Ok(z.re)
}

/// `Tr(Pρ)` for any representative string of `class`, in poly(N) time.
pub fn class_expectation(state: &DenseState, class: &PauliClass) -> Result<f64, MagicError> {
    let n = state.n_spins();
    if class.n_spins() != n {
        return Err(MagicError::InvalidClass { n_x: class.n_x, n_y: class.n_y, n_z: class.n_z, n_spins: n });
    }
    let table = SignedBinomialTable::new(n);
    let inv = inv_sqrt_binomials(n);
    let f = table.get(class.n_x, class.n_y);
    let g = table.get(class.n_id, class.n_z);
    let w = class.n_x + class.n_y;
    let rho = state.matrix();
    let mut acc = C64::new(0.0, 0.0);
    for (j, fj) in f.iter().enumerate() {
        for (l, gl) in g.iter().enumerate() {
            let k = j + l;
            let kp = l + w - j;
            acc += rho[(k, kp)] * (fj * gl * inv[k] * inv[kp]);
        }
    }
    let sign = if class.n_z % 2 == 0 { 1.0 } else { -1.0 };
    real_part_checked(acc * phase_y(class.n_y) * sign)
}

/// Test oracle: embeds the Dicke-sector state into the `2^N` qubit space,
/// applies the representative string `X..XY..YZ..ZI..I` qubit by qubit and
/// returns the exact trace.
pub fn class_expectation_bruteforce(state: &DenseState, class: &PauliClass) -> Result<f64, MagicError> {
    let n = state.n_spins();
    if n > BRUTEFORCE_MAX_SPINS {
        return Err(MagicError::TooLarge { max: BRUTEFORCE_MAX_SPINS, found: n });
    }
    if class.n_spins() != n {
        return Err(MagicError::InvalidClass { n_x: class.n_x, n_y: class.n_y, n_z: class.n_z, n_spins: n });
    }
    let gates: Vec<char> = std::iter::repeat('X')
        .take(class.n_x)
        .chain(std::iter::repeat('Y').take(class.n_y))
        .chain(std::iter::repeat('Z').take(class.n_z))
        .chain(std::iter::repeat('I').take(class.n_id))
        .collect();
    let dicke: Vec<Vec<C64>> = (0..=n).map(|k| full_dicke(n, k)).collect();
    let images: Vec<Vec<C64>> = dicke.iter().map(|v| apply_string(&gates, v)).collect();
    let rho = state.matrix();
    let mut acc = C64::new(0.0, 0.0);
    for k in 0..=n {
        for kp in 0..=n {
            let elem: C64 = dicke[kp].iter().zip(&images[k]).map(|(a, b)| a.conj() * b).sum();
            acc += elem * rho[(k, kp)];
        }
    }
    real_part_checked(acc)
}

/// Symmetric Dicke state in the qubit basis; bit `q` set means qubit `q` is up.
fn full_dicke(n: usize, k: usize) -> Vec<C64> {
    let dim = 1usize << n;
    let count = (0..dim).filter(|b| b.count_ones() as usize == k).count();
    let amp = 1.0 / (count as f64).sqrt();
    (0..dim)
        .map(|b| if b.count_ones() as usize == k { C64::new(amp, 0.0) } else { C64::new(0.0, 0.0) })
        .collect()
}

/// Single-qubit Paulis in the (up, down) ordering: Z|↑⟩ = |↑⟩, Y|↑⟩ = i|↓⟩, Y|↓⟩ = −i|↑⟩.
fn apply_string(gates: &[char], v: &[C64]) -> Vec<C64> {
    let mut cur = v.to_vec();
    for (q, gate) in gates.iter().enumerate() {
        let bit = 1usize << q;
        let mut next = vec![C64::new(0.0, 0.0); cur.len()];
        for (b, amp) in cur.iter().enumerate() {
            let up = b & bit != 0;
            let (target, factor) = match gate {
                'I' => (b, C64::new(1.0, 0.0)),
                'X' => (b ^ bit, C64::new(1.0, 0.0)),
                'Y' => (b ^ bit, if up { C64::new(0.0, 1.0) } else { C64::new(0.0, -1.0) }),
                'Z' => (b, C64::new(if up { 1.0 } else { -1.0 }, 0.0)),
                _ => unreachable!(),
            };
            next[target] += amp * factor;
        }
        cur = next;
    }
    cur
}

/// Stabilizer 2-Rényi entropy in natural-log units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagicValue {
    pub m2_total: f64,
    pub m2_density: f64,
    /// `ln Tr ρ²`; exactly 0 for pure inputs.
    pub purity_term: f64,
    /// Set when the Pauli moment was at or below [`MOMENT_FLOOR`] and got clamped.
    pub floored: bool,
}

impl MagicValue {
    fn from_moment(n: usize, moment: f64, purity_term: f64) -> Self {
        let floored = !(moment > MOMENT_FLOOR);
        let m2_total = -moment.max(MOMENT_FLOOR).ln() + purity_term;
        Self { m2_total, m2_density: m2_total / n as f64, purity_term, floored }
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Precomputed tables for repeated SRE evaluations at a fixed `N`.
#[derive(Debug, Clone)]
pub struct SreEvaluator {
    n: usize,
    table: SignedBinomialTable,
    inv_sqrt_binom: Vec<f64>,
    /// `g / 2^N` in evaluation order `(w, n_z, n_x)`.
    weights: Vec<f64>,
}

impl SreEvaluator {
    pub fn new(n_spins: usize) -> Self {
        assert!(n_spins >= 1, "n_spins must be at least 1");
        let n = n_spins;
        let scale = 0.5f64.powi(n as i32);
        let mut weights = Vec::new();
        for w in 0..=n {
            for n_z in 0..=(n - w) {
                for n_x in 0..=w {
                    let g = multinomial(n, &[n_x, w - n_x, n_z]);
                    weights.push(g.to_f64().expect("multinomial fits in f64") * scale);
                }
            }
        }
        Self { n, table: SignedBinomialTable::new(n), inv_sqrt_binom: inv_sqrt_binomials(n), weights }
    }

    pub fn n_spins(&self) -> usize {
        self.n
    }

    /// Calls `visit(n_x, n_y, n_z, ⟨P⟩, g/2^N)` for every class.
    fn for_each_class<F>(&self, rho: &DMatrix<C64>, mut visit: F) -> Result<(), MagicError>
    where
        F: FnMut(usize, usize, usize, f64, f64),
    {
        let n = self.n;
        let inv = &self.inv_sqrt_binom;
        let mut weight_idx = 0;
        let mut r = Vec::new();
        let mut u = Vec::new();
        for w in 0..=n {
            let nj = w + 1;
            let nl = n - w + 1;
            // r[j * nl + l] = ρ_{j+l, l+w−j} / sqrt(C(N,j+l) C(N,l+w−j))
            r.clear();
            for j in 0..nj {
                for l in 0..nl {
                    let k = j + l;
                    let kp = l + w - j;
                    r.push(rho[(k, kp)] * (inv[k] * inv[kp]));
                }
            }
            for n_z in 0..nl {
                let n_id = n - w - n_z;
                let g = self.table.get(n_id, n_z);
                let sign = if n_z % 2 == 0 { 1.0 } else { -1.0 };
                u.clear();
                for j in 0..nj {
                    let row = &r[j * nl..(j + 1) * nl];
                    let s: C64 = row.iter().zip(g).map(|(x, c)| x * *c).sum();
                    u.push(s * sign);
                }
                for n_x in 0..=w {
                    let n_y = w - n_x;
                    let f = self.table.get(n_x, n_y);
                    let s: C64 = u.iter().zip(f).map(|(x, c)| x * *c).sum();
                    let value = real_part_checked(s * phase_y(n_y))?;
                    visit(n_x, n_y, n_z, value, self.weights[weight_idx]);
                    weight_idx += 1;
                }
            }
        }
        Ok(())
    }

    /// `Σ_P Tr⁴(Pρ) / 2^N`.
    pub fn pauli_moment(&self, rho: &DenseState) -> Result<f64, MagicError> {
        self.check_dim(rho.n_spins())?;
        let mut acc = CompensatedSum::default();
        self.for_each_class(rho.matrix(), |_, _, _, p, weight| {
            let p2 = p * p;
            acc.add(weight * p2 * p2);
        })?;
        Ok(acc.value())
    }

    /// All class expectations, keyed by `(n_x, n_y, n_z)`.
    pub fn class_expectations(&self, rho: &DenseState) -> Result<Vec<((usize, usize, usize), f64)>, MagicError> {
        self.check_dim(rho.n_spins())?;
        let mut out = Vec::new();
        self.for_each_class(rho.matrix(), |x, y, z, p, _| out.push(((x, y, z), p)))?;
        Ok(out)
    }

    pub fn sre_dense(&self, rho: &DenseState) -> Result<MagicValue, MagicError> {
        let moment = self.pauli_moment(rho)?;
        Ok(MagicValue::from_moment(self.n, moment, purity(rho).ln()))
    }

    pub fn sre_pure(&self, psi: &DickeVector) -> Result<MagicValue, MagicError> {
        let moment = self.pauli_moment(&crate::collective::pure_to_density(psi))?;
        Ok(MagicValue::from_moment(self.n, moment, 0.0))
    }

    fn check_dim(&self, n: usize) -> Result<(), MagicError> {
        if n != self.n {
            return Err(crate::error::StateError::Dimension { expected: self.n + 1, found: n + 1 }.into());
        }
        Ok(())
    }
}

/// States accepted by [`sre`].
pub trait MagicInput: CollectiveState {
    fn sre_with(&self, evaluator: &SreEvaluator) -> Result<MagicValue, MagicError>;
}

impl MagicInput for DenseState {
    fn sre_with(&self, evaluator: &SreEvaluator) -> Result<MagicValue, MagicError> {
        evaluator.sre_dense(self)
    }
}

impl MagicInput for DickeVector {
    fn sre_with(&self, evaluator: &SreEvaluator) -> Result<MagicValue, MagicError> {
        evaluator.sre_pure(self)
    }
}

/// Stabilizer 2-Rényi entropy of a pure or mixed symmetric state.
pub fn sre<S: MagicInput>(state: &S) -> Result<MagicValue, MagicError> {
    state.sre_with(&SreEvaluator::new(state.n_spins()))
}

/// Test oracle: naive sum over all `4^N` Pauli strings in the full qubit space.
pub fn sre_bruteforce<S: CollectiveState>(state: &S, pure: bool) -> Result<MagicValue, MagicError> {
    let n = state.n_spins();
    if n > SRE_BRUTEFORCE_MAX_SPINS {
        return Err(MagicError::TooLarge { max: SRE_BRUTEFORCE_MAX_SPINS, found: n });
    }
    let rho = state.to_density();
    let dim = 1usize << n;
    let dicke: Vec<Vec<C64>> = (0..=n).map(|k| full_dicke(n, k)).collect();
    // Full 2^N × 2^N density matrix.
    let mut full = vec![C64::new(0.0, 0.0); dim * dim];
    for k in 0..=n {
        for kp in 0..=n {
            let r = rho.matrix()[(k, kp)];
            if r == C64::new(0.0, 0.0) {
                continue;
            }
            for (a, va) in dicke[k].iter().enumerate() {
                if va.norm_sqr() == 0.0 {
                    continue;
                }
                for (b, vb) in dicke[kp].iter().enumerate() {
                    full[a * dim + b] += va * r * vb.conj();
                }
            }
        }
    }
    let mut total = 0.0;
    let mut gates = vec![0u8; n];
    for code in 0..(1usize << (2 * n)) {
        for (q, g) in gates.iter_mut().enumerate() {
            *g = ((code >> (2 * q)) & 3) as u8;
        }
        // Tr(Pρ) = Σ_b ⟨b|P|b'⟩ ρ_{b',b}; P maps |b'⟩ to phase·|b' ⊕ flips⟩.
        let mut trace = C64::new(0.0, 0.0);
        for bp in 0..dim {
            let mut target = bp;
            let mut phase = C64::new(1.0, 0.0);
            for (q, g) in gates.iter().enumerate() {
                let bit = 1usize << q;
                let up = bp & bit != 0;
                match g {
                    0 => {}
                    1 => target ^= bit,
                    2 => {
                        target ^= bit;
                        phase *= if up { C64::new(0.0, 1.0) } else { C64::new(0.0, -1.0) };
                    }
                    _ => {
                        if !up {
                            phase = -phase;
                        }
                    }
                }
            }
            trace += phase * full[bp * dim + target];
        }
        let t = trace.re;
        total += t.powi(4);
    }
    let moment = total / dim as f64;
    let purity_term = if pure { 0.0 } else { purity(&rho).ln() };
    Ok(MagicValue::from_moment(n, moment, purity_term))
}

use btc_core::entanglement::entanglement_entropy;
use btc_core::lindblad::{evolve_lindblad_with, LindbladRun};
use btc_core::meanfield::mf_magic_density;
use btc_core::stabilizer::{sre_bruteforce, SreEvaluator};
use btc_core::trajectory::{run_ensemble, JumpScheme, Observables, Unraveling, UnravelingSpec};
use btc_core::*;
use proptest::prelude::*;

/// Spin-coherent state pointing along `(theta, phi)`, built from binomial amplitudes.
fn coherent(n: usize, theta: f64, phi: f64) -> DickeVector {
    let ln_fact: Vec<f64> = (0..=n)
        .scan(0.0, |acc, k| {
            if k > 0 {
                *acc += (k as f64).ln();
            }
            Some(*acc)
        })
        .collect();
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let amps = (0..=n)
        .map(|k| {
            let log_binom = ln_fact[n] - ln_fact[k] - ln_fact[n - k];
            let mag = (0.5 * log_binom + k as f64 * c.ln() + (n - k) as f64 * s.ln()).exp();
            C64::from_polar(mag, k as f64 * phi)
        })
        .collect();
    DickeVector::normalized(amps).unwrap()
}

// A product state has magic density equal to that of one spin, which the
// closed mean-field expression gives exactly.
#[test]
fn coherent_state_magic_is_exact_up_to_eighty_spins() {
    for n in [1usize, 5, 10, 20, 40, 80] {
        for (theta, phi) in [(std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_4), (1.0, 2.0), (0.3, 0.1)] {
            let exact = mf_magic_density(&BlochVector::from_angles(theta, phi)).value;
            let got = SreEvaluator::new(n).sre_pure(&coherent(n, theta, phi)).unwrap().m2_density;
            assert!((got - exact).abs() < 1e-10, "N={n} theta={theta}: {got} vs {exact}");
        }
    }
}

#[test]
fn coherent_states_are_unentangled() {
    for n in [2usize, 7, 30] {
        let s = entanglement_entropy(&coherent(n, 1.1, 0.4)).unwrap();
        assert!(s.abs() < 1e-10, "N={n}: {s}");
    }
}

#[test]
fn small_ensembles_average_to_the_master_equation() {
    let n = 4;
    let params = ModelParams::with_ratio(n, 1.5).unwrap();
    let ops = build_collective_ops(&params);
    let psi0 = fully_polarized(n, Direction::Up);
    let run = LindbladRun::new(params, 1e-3, 2.0, 250).unwrap();
    let mut exact = Vec::new();
    evolve_lindblad_with(&run, &pure_to_density(&psi0), |_, rho| exact.push(magnetization(rho, &ops).unwrap().z))
        .unwrap();
    for kind in [Unraveling::QuantumJump, Unraveling::GeneralMu(C64::new(2.0, 0.0)), Unraveling::Qsd] {
        let spec = UnravelingSpec { kind, scheme: JumpScheme::WaitingTime, dt: 1e-3, t_max: 2.0, seed: 3, n_traj: 400, sample_stride: 250 };
        let recs = run_ensemble(&spec, &params, &psi0, Observables::default()).unwrap();
        for (s, &target) in exact.iter().enumerate() {
            let v: Vec<f64> = recs.iter().map(|r| r.m_z[s]).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            let se = (var / v.len() as f64).sqrt().max(1e-12);
            assert!((mean - target).abs() < 4.0 * se, "{kind:?} sample {s}: {mean} vs {target} (se {se})");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fast_sre_matches_bruteforce(n in 1usize..5, re in proptest::collection::vec(-1.0f64..1.0, 12)) {
        let amps: Vec<C64> = (0..=n).map(|k| C64::new(re[2 * k], re[2 * k + 1])).collect();
        prop_assume!(amps.iter().map(|a| a.norm_sqr()).sum::<f64>() > 1e-3);
        let psi = DickeVector::normalized(amps).unwrap();
        let fast = SreEvaluator::new(n).sre_pure(&psi).unwrap().m2_total;
        let slow = sre_bruteforce(&psi, true).unwrap().m2_total;
        prop_assert!((fast - slow).abs() < 1e-10);
    }

    #[test]
    fn magic_is_nonnegative_and_bounded(n in 1usize..25, re in proptest::collection::vec(-1.0f64..1.0, 52)) {
        let amps: Vec<C64> = (0..=n).map(|k| C64::new(re[2 * k], re[2 * k + 1])).collect();
        prop_assume!(amps.iter().map(|a| a.norm_sqr()).sum::<f64>() > 1e-3);
        let psi = DickeVector::normalized(amps).unwrap();
        let m = SreEvaluator::new(n).sre_pure(&psi).unwrap();
        prop_assert!(m.m2_total > -1e-9);
        // Pure-state bound M2 <= ln d over the full 2^N Hilbert space.
        prop_assert!(m.m2_total <= n as f64 * 2f64.ln() + 1e-9);
    }

    #[test]
    fn master_equation_keeps_a_valid_state(n in 1usize..8, omega in 0.0f64..4.0) {
        let params = ModelParams::with_ratio(n, omega).unwrap();
        let run = LindbladRun::new(params, 1e-3, 0.5, 100).unwrap();
        let mut last = None;
        evolve_lindblad_with(&run, &pure_to_density(&fully_polarized(n, Direction::Up)), |_, rho| last = Some(rho.clone())).unwrap();
        let rho = last.unwrap();
        prop_assert!((rho.trace().re - 1.0).abs() < 1e-9);
        prop_assert!(rho.eigenvalues().iter().all(|&e| e > -1e-9));
        prop_assert!(purity(&rho) <= 1.0 + 1e-9);
    }
}

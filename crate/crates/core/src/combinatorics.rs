use num_bigint::BigUint;

/// `ln k!` for `k = 0..=n`.
pub(crate) fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

pub(crate) fn ln_binomial(lnf: &[f64], n: usize, k: usize) -> f64 {
    lnf[n] - lnf[k] - lnf[n - k]
}

/// `1/sqrt(C(n, k))` for `k = 0..=n`.
pub(crate) fn inv_sqrt_binomials(n: usize) -> Vec<f64> {
    let lnf = ln_factorials(n);
    (0..=n).map(|k| (-0.5 * ln_binomial(&lnf, n, k)).exp()).collect()
}

/// Exact multinomial `n! / (a! b! c! (n−a−b−c)!)`.
pub(crate) fn multinomial(n: usize, parts: &[usize]) -> BigUint {
    // Product of binomials C(n, a) C(n−a, b) ...
    let mut remaining = n;
    let mut acc = BigUint::from(1u32);
    for &p in parts {
        acc *= binomial(remaining, p);
        remaining -= p;
    }
    acc
}

pub(crate) fn binomial(n: usize, k: usize) -> BigUint {
    let k = k.min(n - k);
    let mut acc = BigUint::from(1u32);
    for i in 0..k {
        acc *= (n - i) as u64;
        acc /= (i + 1) as u64;
    }
    acc
}

//! Ensemble statistics over trajectory records.

use btc_core::trajectory::TrajectoryRecord;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    /// Stabilizer 2-Rényi entropy density.
    M2,
    /// Half-cut entanglement entropy.
    SHalf,
    MZ,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [Quantity::M2, Quantity::SHalf, Quantity::MZ];

    pub fn name(&self) -> &'static str {
        match self {
            Quantity::M2 => "m2",
            Quantity::SHalf => "s_half",
            Quantity::MZ => "m_z",
        }
    }

    pub fn series<'a>(&self, record: &'a TrajectoryRecord) -> &'a [f64] {
        match self {
            Quantity::M2 => &record.sre_density,
            Quantity::SHalf => &record.entanglement,
            Quantity::MZ => &record.m_z,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    /// Probability densities: `Σ density · width = 1`.
    pub densities: Vec<f64>,
}

impl Histogram {
    /// Equal-width bins spanning `[lo, hi]`; the last bin is closed.
    pub fn with_range(values: &[f64], bins: usize, lo: f64, hi: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        let width = (hi - lo) / bins as f64;
        let bin_edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
        let mut counts = vec![0usize; bins];
        for &v in values {
            if !(lo..=hi).contains(&v) {
                continue;
            }
            let idx = (((v - lo) / width) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        let total = values.len() as f64;
        let densities = counts.iter().map(|&c| c as f64 / (total * width)).collect();
        Self { bin_edges, densities }
    }

    /// Bins spanning the sample range.
    pub fn new(values: &[f64], bins: usize) -> Self {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self::with_range(values, bins, lo, hi)
    }

    pub fn total_mass(&self) -> f64 {
        self.densities.iter().zip(self.bin_edges.windows(2)).map(|(d, e)| d * (e[1] - e[0])).sum()
    }
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`).
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStatistics {
    pub mean: f64,
    pub std_error: f64,
    pub histogram: Histogram,
}

/// Values of `quantity` at `time` (which must lie on the sampling grid).
pub fn values_at(records: &[TrajectoryRecord], quantity: Quantity, time: f64) -> Result<Vec<f64>, CliError> {
    let first = records.first().ok_or_else(|| CliError::Compute("empty ensemble".into()))?;
    let tol = 1e-9 * time.abs().max(1.0);
    let idx = first
        .times
        .iter()
        .position(|t| (t - time).abs() <= tol)
        .ok_or_else(|| CliError::Config(format!("time {time} is not on the sampling grid")))?;
    records
        .iter()
        .map(|r| {
            quantity
                .series(r)
                .get(idx)
                .copied()
                .ok_or_else(|| CliError::Compute(format!("{} was not recorded", quantity.name())))
        })
        .collect()
}

pub fn ensemble_statistics(
    records: &[TrajectoryRecord],
    quantity: Quantity,
    time: f64,
    bins: usize,
) -> Result<EnsembleStatistics, CliError> {
    if records.len() < 2 {
        return Err(CliError::Compute(format!("ensemble statistics need at least 2 records, got {}", records.len())));
    }
    let values = values_at(records, quantity, time)?;
    let (mean, std_error) = mean_and_std_error(&values);
    Ok(EnsembleStatistics { mean, std_error, histogram: Histogram::new(&values, bins) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsTest {
    /// Largest distance between the two empirical distribution functions.
    pub statistic: f64,
    /// Asymptotic p-value of the Kolmogorov distribution.
    pub p_value: f64,
}

/// `Q(λ) = 2 Σ_{j≥1} (−1)^{j−1} exp(−2 j² λ²)`.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let term = sign * (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsTest {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let en = (na * nb / (na + nb)).sqrt();
    KsTest { statistic: d, p_value: kolmogorov_survival((en + 0.12 + 0.11 / en) * d) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(index: usize, value: f64) -> TrajectoryRecord {
        TrajectoryRecord {
            traj_index: index,
            times: vec![0.0, 1.0],
            m_z: vec![1.0, value],
            sre_density: vec![0.0, value],
            entanglement: vec![0.0, value],
            jump_count: None,
            states: Vec::new(),
        }
    }

    #[test]
    fn identical_records() {
        let recs: Vec<_> = (0..5).map(|i| record(i, 0.3)).collect();
        let s = ensemble_statistics(&recs, Quantity::M2, 1.0, 100).unwrap();
        assert_eq!(s.mean, 0.3);
        assert_eq!(s.std_error, 0.0);
        assert_eq!(s.histogram.densities.iter().filter(|&&d| d > 0.0).count(), 1);
        assert!((s.histogram.total_mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn histogram_is_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v: Vec<f64> = (0..1000).map(|_| rng.random::<f64>().powi(3)).collect();
        for bins in [1, 7, 100] {
            let h = Histogram::new(&v, bins);
            assert_eq!(h.bin_edges.len(), bins + 1);
            assert!((h.total_mass() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn errors() {
        assert!(ensemble_statistics(&[record(0, 0.1)], Quantity::MZ, 1.0, 10).is_err());
        let recs = vec![record(0, 0.1), record(1, 0.2)];
        assert!(ensemble_statistics(&recs, Quantity::MZ, 0.5, 10).is_err());
    }

    #[test]
    fn mean_and_error() {
        let (m, se) = mean_and_std_error(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ks_statistic_examples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_two_sample(&a, &a).statistic, 0.0);
        assert_eq!(ks_two_sample(&a, &a).p_value, 1.0);
        let t = ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(t.statistic, 1.0);
        let t = ks_two_sample(&[1.0, 2.0, 3.0, 4.0], &[2.5, 10.0]);
        assert!((t.statistic - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ks_calibration() {
        // Same distribution: rejections at the 5% level should be rare.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut rejections = 0;
        for _ in 0..200 {
            let a: Vec<f64> = (0..300).map(|_| rng.random()).collect();
            let b: Vec<f64> = (0..300).map(|_| rng.random()).collect();
            if ks_two_sample(&a, &b).p_value < 0.05 {
                rejections += 1;
            }
        }
        assert!(rejections < 25, "{rejections}");
        // Shifted distribution is detected.
        let a: Vec<f64> = (0..300).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..300).map(|_| rng.random::<f64>() + 0.3).collect();
        assert!(ks_two_sample(&a, &b).p_value < 1e-6);
        // Known value of the Kolmogorov survival function.
        assert!((kolmogorov_survival(1.36) - 0.0494).abs() < 5e-4);
    }
}

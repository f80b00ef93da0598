//! One function per experiment; each returns the tables to write.

use std::path::PathBuf;

use rayon::prelude::*;

use btc_core::lindblad::{evolve_lindblad_with, steady_state, LindbladRun};
use btc_core::meanfield::{
    evolve_mf, fit_saturation, mf_fixed_point_magic, mf_magic_density, orbit_average_magic, solid_angle_limit,
    MeanFieldParams, MfControls, OrbitOptions,
};
use btc_core::parallel::substream_rng;
use btc_core::stabilizer::SreEvaluator;
use btc_core::trajectory::{run_ensemble, Observables, TrajectoryRecord, Unraveling, UnravelingSpec};
use btc_core::{
    build_collective_ops, fully_polarized, magnetization, pure_to_density, purity, BlochVector, Direction,
    ModelParams, C64,
};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::CliError;
use crate::output::{sibling_path, Table};
use crate::stats::{ks_two_sample, mean_and_std_error, values_at, Histogram, Quantity};

pub type Outputs = Vec<(PathBuf, Table)>;

pub fn compute(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    match cfg.experiment {
        ExperimentKind::MeanfieldDynamics => meanfield_dynamics(cfg),
        ExperimentKind::MeanfieldSweep => meanfield_sweep(cfg),
        ExperimentKind::LindbladDynamics => lindblad_dynamics(cfg),
        ExperimentKind::LindbladSweep => lindblad_sweep(cfg),
        ExperimentKind::TrajectoryEnsemble => trajectory_ensemble(cfg),
        ExperimentKind::UnravelingCompare => unraveling_compare(cfg),
        ExperimentKind::Histogram => histogram(cfg),
        ExperimentKind::FitSaturation => fit(cfg),
        ExperimentKind::SolidAngle => solid_angle(cfg),
    }
}

fn model(cfg: &ExperimentConfig, n: usize, omega: f64) -> Result<ModelParams, CliError> {
    ModelParams::new(n, omega * cfg.kappa, cfg.kappa).map_err(|e| CliError::Config(e.to_string()))
}

fn mf_params(cfg: &ExperimentConfig, omega: f64) -> Result<MeanFieldParams, CliError> {
    MeanFieldParams::new(omega * cfg.kappa, cfg.kappa).map_err(|e| CliError::Config(e.to_string()))
}

fn stride(dt: f64, every: f64) -> usize {
    ((every / dt).round() as usize).max(1)
}

fn meanfield_dynamics(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    let params = mf_params(cfg, cfg.omega()?)?;
    let m0 = BlochVector::from_angles(cfg.theta, cfg.phi);
    let controls = MfControls { sample_dt: cfg.sample_every, ..Default::default() };
    let traj = evolve_mf(&m0, &params, cfg.t_max, &controls).map_err(CliError::compute)?;
    let mut t = Table::new(["t", "m_x", "m_y", "m_z", "m2"]);
    for (time, m) in traj.times.iter().zip(&traj.states) {
        t.push(vec![*time, m.x, m.y, m.z, mf_magic_density(m).value]);
    }
    Ok(vec![(cfg.output.clone(), t)])
}

/// Orbit averages over `grid`; every point reuses the same initial directions.
pub fn orbit_sweep(cfg: &ExperimentConfig, grid: &[f64]) -> Result<Table, CliError> {
    let options = OrbitOptions { sampler: cfg.sampler, ..Default::default() };
    let mut t = Table::new(["omega", "m2_fixed_point", "m2_orbit_mean", "m2_orbit_stderr"]);
    for &omega in grid {
        let mut rng = substream_rng(cfg.seed, 0);
        let avg = orbit_average_magic(&mf_params(cfg, omega)?, cfg.n_avg, cfg.tau, &mut rng, &options)
            .map_err(CliError::compute)?;
        t.push(vec![omega, mf_fixed_point_magic(omega), avg.mean, avg.std_error]);
    }
    Ok(t)
}

fn meanfield_sweep(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    Ok(vec![(cfg.output.clone(), orbit_sweep(cfg, &cfg.omega_grid)?)])
}

fn lindblad_dynamics(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    let n = cfg.n()?;
    let params = model(cfg, n, cfg.omega()?)?;
    let ops = build_collective_ops(&params);
    let run = LindbladRun::new(params, cfg.dt, cfg.t_max, stride(cfg.dt, cfg.sample_every))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let sre = SreEvaluator::new(n);
    let mut rows = Vec::new();
    let mut failure = None;
    evolve_lindblad_with(&run, &pure_to_density(&fully_polarized(n, Direction::Up)), |time, rho| {
        if failure.is_some() {
            return;
        }
        match (magnetization(rho, &ops), sre.sre_dense(rho)) {
            (Ok(m), Ok(magic)) => rows.push(vec![time, m.x, m.y, m.z, magic.m2_density, purity(rho)]),
            (Err(e), _) => failure = Some(e.to_string()),
            (_, Err(e)) => failure = Some(e.to_string()),
        }
    })
    .map_err(CliError::compute)?;
    if let Some(e) = failure {
        return Err(CliError::Compute(e));
    }
    let mut t = Table::new(["t", "m_x", "m_y", "m_z", "m2", "purity"]);
    t.rows = rows;
    Ok(vec![(cfg.output.clone(), t)])
}

fn lindblad_sweep(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    let sizes = if cfg.n_list.is_empty() { vec![cfg.n()?] } else { cfg.n_list.clone() };
    let points: Vec<(usize, f64)> =
        sizes.iter().flat_map(|&n| cfg.omega_grid.iter().map(move |&o| (n, o))).collect();
    let rows: Vec<Result<Vec<f64>, CliError>> = points
        .par_iter()
        .map(|&(n, omega)| {
            let params = model(cfg, n, omega)?;
            let run = LindbladRun::new(params, cfg.dt, cfg.t_max, 1).map_err(|e| CliError::Config(e.to_string()))?;
            let ss = steady_state(&run, &pure_to_density(&fully_polarized(n, Direction::Up))).map_err(CliError::compute)?;
            let magic = SreEvaluator::new(n).sre_dense(&ss.state).map_err(CliError::compute)?;
            let m = magnetization(&ss.state, &build_collective_ops(&params)).map_err(CliError::compute)?;
            Ok(vec![
                n as f64,
                omega,
                magic.m2_density,
                purity(&ss.state),
                m.x,
                m.y,
                m.z,
                if ss.converged { 1.0 } else { 0.0 },
                ss.time,
                ss.residual,
            ])
        })
        .collect();
    let mut t = Table::new(["n", "omega", "m2", "purity", "m_x", "m_y", "m_z", "converged", "t_converged", "residual"]);
    for row in rows {
        t.push(row?);
    }
    Ok(vec![(cfg.output.clone(), t)])
}

fn ensemble(
    cfg: &ExperimentConfig,
    kind: Unraveling,
    t_max: f64,
    sample_stride: usize,
) -> Result<Vec<TrajectoryRecord>, CliError> {
    let n = cfg.n()?;
    let params = model(cfg, n, cfg.omega()?)?;
    let spec = UnravelingSpec { kind, scheme: cfg.jump_scheme, dt: cfg.dt, t_max, seed: cfg.seed, n_traj: cfg.n_traj, sample_stride };
    run_ensemble(&spec, &params, &fully_polarized(n, Direction::Up), Observables::ALL).map_err(CliError::compute)
}

fn trajectory_ensemble(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    let records = ensemble(cfg, cfg.unraveling, cfg.t_max, stride(cfg.dt, cfg.sample_every))?;
    let mut t = Table::new(["traj", "t", "m_z", "m2", "s_half"]);
    for r in &records {
        for s in 0..r.times.len() {
            t.push(vec![r.traj_index as f64, r.times[s], r.m_z[s], r.sre_density[s], r.entanglement[s]]);
        }
    }
    let mut out = vec![(cfg.output.clone(), t)];
    if records.iter().all(|r| r.jump_count.is_some()) {
        let mut jumps = Table::new(["traj", "jumps"]);
        for r in &records {
            jumps.push(vec![r.traj_index as f64, r.jump_count.unwrap_or(0) as f64]);
        }
        out.push((sibling_path(&cfg.output, "jumps"), jumps));
    }
    Ok(out)
}

fn compared_unravelings(cfg: &ExperimentConfig) -> [(&'static str, Unraveling); 3] {
    [
        ("qj", Unraveling::QuantumJump),
        ("mu", Unraveling::GeneralMu(C64::new(cfg.mu, 0.0))),
        ("qsd", Unraveling::Qsd),
    ]
}

fn unraveling_compare(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    let sample_stride = stride(cfg.dt, cfg.sample_every);
    let mut header = vec!["t".to_string()];
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut times = Vec::new();
    for (label, kind) in compared_unravelings(cfg) {
        let records = ensemble(cfg, kind, cfg.t_max, sample_stride)?;
        times = records[0].times.clone();
        for q in Quantity::ALL {
            let (mut means, mut errors) = (Vec::new(), Vec::new());
            for &time in &times {
                let (m, e) = mean_and_std_error(&values_at(&records, q, time)?);
                means.push(m);
                errors.push(e);
            }
            header.push(format!("{label}_{}_mean", q.name()));
            header.push(format!("{label}_{}_stderr", q.name()));
            columns.push(means);
            columns.push(errors);
        }
    }
    let mut t = Table::new(header);
    for (s, time) in times.iter().enumerate() {
        let mut row = vec![*time];
        row.extend(columns.iter().map(|c| c[s]));
        t.push(row);
    }
    Ok(vec![(cfg.output.clone(), t)])
}

fn histogram(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    let n_steps = ((cfg.time / cfg.dt).round() as usize).max(1);
    let kinds = [("qj", Unraveling::QuantumJump), ("qsd", Unraveling::Qsd)];
    let mut samples = Vec::new();
    for (label, kind) in kinds {
        let records = ensemble(cfg, kind, cfg.time, n_steps)?;
        let at = *records[0].times.last().expect("non-empty grid");
        let per_q = Quantity::ALL
            .iter()
            .map(|&q| values_at(&records, q, at))
            .collect::<Result<Vec<_>, _>>()?;
        samples.push((label, per_q));
    }
    let mut summary_header = Vec::new();
    let mut summary_row = Vec::new();
    let mut out = Vec::new();
    for (qi, q) in Quantity::ALL.iter().enumerate() {
        let all = samples.iter().flat_map(|(_, v)| v[qi].iter().copied());
        let lo = all.clone().fold(f64::INFINITY, f64::min);
        let hi = all.fold(f64::NEG_INFINITY, f64::max);
        let hists: Vec<Histogram> = samples.iter().map(|(_, v)| Histogram::with_range(&v[qi], cfg.bins, lo, hi)).collect();
        let mut header = vec!["bin_left".to_string(), "bin_right".to_string()];
        header.extend(samples.iter().map(|(label, _)| format!("{label}_density")));
        let mut t = Table::new(header);
        for b in 0..cfg.bins {
            let mut row = vec![hists[0].bin_edges[b], hists[0].bin_edges[b + 1]];
            row.extend(hists.iter().map(|h| h.densities[b]));
            t.push(row);
        }
        out.push((sibling_path(&cfg.output, q.name()), t));

        for (label, v) in &samples {
            let (m, e) = mean_and_std_error(&v[qi]);
            summary_header.push(format!("{label}_{}_mean", q.name()));
            summary_header.push(format!("{label}_{}_stderr", q.name()));
            summary_row.extend([m, e]);
        }
        let ks = ks_two_sample(&samples[0].1[qi], &samples[1].1[qi]);
        summary_header.push(format!("{}_ks_statistic", q.name()));
        summary_header.push(format!("{}_ks_p_value", q.name()));
        summary_row.extend([ks.statistic, ks.p_value]);
    }
    let mut summary = Table::new(summary_header);
    summary.push(summary_row);
    out.insert(0, (cfg.output.clone(), summary));
    Ok(out)
}

fn fit(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    let data = match &cfg.input {
        Some(path) => Table::read(path)?,
        None => orbit_sweep(cfg, &cfg.omega_grid)?,
    };
    let omega = data.column("omega").ok_or_else(|| CliError::Config("input lacks column 'omega'".into()))?;
    let m2 = data
        .column("m2_orbit_mean")
        .ok_or_else(|| CliError::Config("input lacks column 'm2_orbit_mean'".into()))?;
    // Only the time-crystal side enters the saturation law.
    let points: Vec<(f64, f64)> = omega.into_iter().zip(m2).filter(|(o, _)| *o > 1.0).collect();
    let result = fit_saturation(&points).map_err(CliError::compute)?;
    let mut t = Table::new(["m2_sat", "alpha", "a", "residual", "iterations", "n_points"]);
    t.push(vec![result.m2_sat, result.alpha, result.a, result.residual, result.iterations as f64, points.len() as f64]);
    let max_omega = points.iter().map(|p| p.0).fold(1.0, f64::max);
    let mut curve = Table::new(["omega", "m2_fit"]);
    for i in 1..=200 {
        let o = 1.0 + (max_omega - 1.0) * i as f64 / 200.0;
        curve.push(vec![o, result.eval(o)]);
    }
    Ok(vec![(cfg.output.clone(), t), (sibling_path(&cfg.output, "curve"), curve)])
}

fn solid_angle(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    let value = solid_angle_limit(cfg.quadrature).map_err(|e| CliError::Config(e.to_string()))?;
    let mut t = Table::new(["quadrature_points", "m2_solid_angle"]);
    t.push(vec![cfg.quadrature as f64, value]);
    Ok(vec![(cfg.output.clone(), t)])
}

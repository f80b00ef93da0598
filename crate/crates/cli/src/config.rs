//! Experiment configuration: `key = value` files overlaid by command-line flags.
//!
//! Every option has a single spelling used both as `--flag` and as a file key
//! (underscores in file keys are accepted as hyphens).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use btc_core::meanfield::InitialSampler;
use btc_core::trajectory::{JumpScheme, Unraveling};
use btc_core::C64;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExperimentKind {
    MeanfieldDynamics,
    MeanfieldSweep,
    LindbladDynamics,
    LindbladSweep,
    TrajectoryEnsemble,
    UnravelingCompare,
    Histogram,
    FitSaturation,
    SolidAngle,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::MeanfieldDynamics => "meanfield-dynamics",
            ExperimentKind::MeanfieldSweep => "meanfield-sweep",
            ExperimentKind::LindbladDynamics => "lindblad-dynamics",
            ExperimentKind::LindbladSweep => "lindblad-sweep",
            ExperimentKind::TrajectoryEnsemble => "trajectory-ensemble",
            ExperimentKind::UnravelingCompare => "unraveling-compare",
            ExperimentKind::Histogram => "histogram",
            ExperimentKind::FitSaturation => "fit-saturation",
            ExperimentKind::SolidAngle => "solid-angle",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `(key, help)` for every configurable option.
pub const OPTIONS: &[(&str, &str)] = &[
    ("output", "output CSV path (sidecar written to <output>.meta)"),
    ("n", "number of spins N"),
    ("omega", "drive ratio Omega = omega0 / kappa"),
    ("kappa", "decay rate kappa [default: 1]"),
    ("t-max", "final time"),
    ("dt", "integration step"),
    ("sample-every", "time between recorded samples"),
    ("seed", "master random seed [default: 0]"),
    ("traj", "number of trajectories M"),
    ("unraveling", "qj, qsd or mu (shifted jumps) [default: qj]"),
    ("mu", "shift of the general-mu unraveling [default: 2]"),
    ("jump-scheme", "jump integrator: waiting-time or first-order [default: waiting-time]"),
    ("omega-grid", "comma-separated list of Omega values"),
    ("n-list", "comma-separated list of system sizes"),
    ("bins", "histogram bins [default: 100]"),
    ("time", "histogram time [default: 8]"),
    ("n-avg", "initial conditions per orbit average [default: 200]"),
    ("tau", "orbit-average horizon kappa*tau [default: 400]"),
    ("sampler", "initial directions: uniform-angles or solid-angle [default: uniform-angles]"),
    ("quadrature", "solid-angle quadrature resolution [default: 256]"),
    ("input", "CSV with columns omega and m2_orbit_mean"),
    ("theta", "initial polar angle of the mean-field Bloch vector [default: 0]"),
    ("phi", "initial azimuth of the mean-field Bloch vector [default: 0]"),
];

/// Parses a `key = value` file; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", lineno + 1)))?;
        let key = key.trim().replace('_', "-");
        if !OPTIONS.iter().any(|(k, _)| *k == key) {
            return Err(CliError::Config(format!("line {}: unknown key '{key}'", lineno + 1)));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config_text(&text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub output: PathBuf,
    pub n_spins: Option<usize>,
    pub omega: Option<f64>,
    pub kappa: f64,
    pub t_max: f64,
    pub dt: f64,
    pub sample_every: f64,
    pub seed: u64,
    pub n_traj: usize,
    pub unraveling: Unraveling,
    pub mu: f64,
    pub jump_scheme: JumpScheme,
    pub omega_grid: Vec<f64>,
    pub n_list: Vec<usize>,
    pub bins: usize,
    pub time: f64,
    pub n_avg: usize,
    pub tau: f64,
    pub sampler: InitialSampler,
    pub quadrature: usize,
    pub input: Option<PathBuf>,
    pub theta: f64,
    pub phi: f64,
}

fn parse<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, CliError>
where
    T::Err: fmt::Display,
{
    map.get(key)
        .map(|v| v.parse::<T>().map_err(|e| CliError::Config(format!("invalid value '{v}' for {key}: {e}"))))
        .transpose()
}

fn parse_list<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Vec<T>, CliError>
where
    T::Err: fmt::Display,
{
    match map.get(key) {
        None => Ok(Vec::new()),
        Some(v) => v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<T>().map_err(|e| CliError::Config(format!("invalid entry '{s}' in {key}: {e}"))))
            .collect(),
    }
}

fn parse_sampler(v: &str) -> Result<InitialSampler, CliError> {
    match v {
        "uniform-angles" | "uniform" => Ok(InitialSampler::UniformAngles),
        "solid-angle" => Ok(InitialSampler::SolidAngle),
        other => Err(CliError::Config(format!("unknown sampler '{other}'"))),
    }
}

pub fn sampler_name(s: InitialSampler) -> &'static str {
    match s {
        InitialSampler::UniformAngles => "uniform-angles",
        InitialSampler::SolidAngle => "solid-angle",
    }
}

fn parse_unraveling(v: &str, mu: f64) -> Result<Unraveling, CliError> {
    match v {
        "qj" => Ok(Unraveling::QuantumJump),
        "qsd" => Ok(Unraveling::Qsd),
        "mu" => Ok(Unraveling::GeneralMu(C64::new(mu, 0.0))),
        other => Err(CliError::Config(format!("unknown unraveling '{other}' (expected qj, qsd or mu)"))),
    }
}

fn parse_jump_scheme(v: &str) -> Result<JumpScheme, CliError> {
    match v {
        "waiting-time" => Ok(JumpScheme::WaitingTime),
        "first-order" => Ok(JumpScheme::FirstOrder),
        other => Err(CliError::Config(format!("unknown jump scheme '{other}' (expected waiting-time or first-order)"))),
    }
}

fn jump_scheme_name(s: JumpScheme) -> &'static str {
    match s {
        JumpScheme::WaitingTime => "waiting-time",
        JumpScheme::FirstOrder => "first-order",
    }
}

fn unraveling_name(u: Unraveling) -> &'static str {
    match u {
        Unraveling::QuantumJump => "qj",
        Unraveling::Qsd => "qsd",
        Unraveling::GeneralMu(_) => "mu",
    }
}

impl ExperimentConfig {
    /// Resolves defaults and validates everything `experiment` needs.
    pub fn from_map(experiment: ExperimentKind, map: &BTreeMap<String, String>) -> Result<Self, CliError> {
        use ExperimentKind::*;
        let output: PathBuf = parse::<PathBuf>(map, "output")?
            .ok_or_else(|| CliError::Config("missing required option 'output'".into()))?;
        let mu = parse::<f64>(map, "mu")?.unwrap_or(2.0);
        let (default_t_max, default_dt, default_sample) = match experiment {
            MeanfieldDynamics => (50.0, 0.0, 0.01),
            LindbladDynamics => (50.0, btc_core::lindblad::DEFAULT_DT, 0.05),
            LindbladSweep => (4000.0, 2e-3, 0.0),
            TrajectoryEnsemble | UnravelingCompare => (20.0, btc_core::trajectory::DEFAULT_DT, 0.1),
            Histogram => (0.0, btc_core::trajectory::DEFAULT_DT, 0.0),
            _ => (0.0, 0.0, 0.01),
        };
        let cfg = Self {
            experiment,
            output,
            n_spins: parse(map, "n")?,
            omega: parse(map, "omega")?,
            kappa: parse(map, "kappa")?.unwrap_or(1.0),
            t_max: parse(map, "t-max")?.unwrap_or(default_t_max),
            dt: parse(map, "dt")?.unwrap_or(default_dt),
            sample_every: parse(map, "sample-every")?.unwrap_or(default_sample),
            seed: parse(map, "seed")?.unwrap_or(0),
            n_traj: parse(map, "traj")?.unwrap_or(500),
            unraveling: parse_unraveling(map.get("unraveling").map(String::as_str).unwrap_or("qj"), mu)?,
            mu,
            jump_scheme: map.get("jump-scheme").map(|s| parse_jump_scheme(s)).transpose()?.unwrap_or_default(),
            omega_grid: parse_list(map, "omega-grid")?,
            n_list: parse_list(map, "n-list")?,
            bins: parse(map, "bins")?.unwrap_or(100),
            time: parse(map, "time")?.unwrap_or(8.0),
            n_avg: parse(map, "n-avg")?.unwrap_or(200),
            tau: parse(map, "tau")?.unwrap_or(400.0),
            sampler: map.get("sampler").map(|s| parse_sampler(s)).transpose()?.unwrap_or_default(),
            quadrature: parse(map, "quadrature")?.unwrap_or(256),
            input: parse(map, "input")?,
            theta: parse(map, "theta")?.unwrap_or(0.0),
            phi: parse(map, "phi")?.unwrap_or(0.0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn require<T: Copy>(&self, value: Option<T>, key: &str) -> Result<T, CliError> {
        value.ok_or_else(|| CliError::Config(format!("{} requires option '{key}'", self.experiment)))
    }

    pub fn n(&self) -> Result<usize, CliError> {
        self.require(self.n_spins, "n")
    }

    pub fn omega(&self) -> Result<f64, CliError> {
        self.require(self.omega, "omega")
    }

    fn validate(&self) -> Result<(), CliError> {
        use ExperimentKind::*;
        let bad = |msg: String| Err(CliError::Config(msg));
        if !(self.kappa > 0.0) {
            return bad(format!("kappa must be positive, got {}", self.kappa));
        }
        if let Some(o) = self.omega {
            if !(o >= 0.0) || !o.is_finite() {
                return bad(format!("omega must be non-negative, got {o}"));
            }
        }
        if self.omega_grid.iter().any(|o| !(*o >= 0.0) || !o.is_finite()) {
            return bad("omega-grid entries must be non-negative".into());
        }
        if self.n_spins == Some(0) || self.n_list.contains(&0) {
            return bad("system sizes must be at least 1".into());
        }
        if self.bins == 0 {
            return bad("bins must be at least 1".into());
        }
        let needs_n = matches!(self.experiment, LindbladDynamics | TrajectoryEnsemble | UnravelingCompare | Histogram);
        let needs_omega = matches!(
            self.experiment,
            MeanfieldDynamics | LindbladDynamics | TrajectoryEnsemble | UnravelingCompare | Histogram
        );
        if needs_n {
            self.n()?;
        }
        if needs_omega {
            self.omega()?;
        }
        let positive = |v: f64, key: &str| -> Result<(), CliError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CliError::Config(format!("{key} must be positive, got {v}")))
            }
        };
        match self.experiment {
            MeanfieldDynamics => {
                positive(self.t_max, "t-max")?;
                positive(self.sample_every, "sample-every")?;
            }
            MeanfieldSweep => {
                if self.omega_grid.is_empty() {
                    return bad("meanfield-sweep requires option 'omega-grid'".into());
                }
                self.check_orbit_settings()?;
            }
            LindbladDynamics | TrajectoryEnsemble | UnravelingCompare => {
                positive(self.t_max, "t-max")?;
                positive(self.dt, "dt")?;
                positive(self.sample_every, "sample-every")?;
                if self.sample_every < self.dt * (1.0 - 1e-9) {
                    return bad("sample-every must not be smaller than dt".into());
                }
            }
            LindbladSweep => {
                if self.omega_grid.is_empty() {
                    return bad("lindblad-sweep requires option 'omega-grid'".into());
                }
                if self.n_list.is_empty() && self.n_spins.is_none() {
                    return bad("lindblad-sweep requires option 'n' or 'n-list'".into());
                }
                positive(self.t_max, "t-max")?;
                positive(self.dt, "dt")?;
            }
            Histogram => {
                positive(self.time, "time")?;
                positive(self.dt, "dt")?;
            }
            FitSaturation => {
                if self.input.is_none() {
                    if self.omega_grid.is_empty() {
                        return bad("fit-saturation requires option 'input' or 'omega-grid'".into());
                    }
                    self.check_orbit_settings()?;
                }
            }
            SolidAngle => {
                if self.quadrature < 64 {
                    return bad(format!("quadrature must be at least 64, got {}", self.quadrature));
                }
            }
        }
        if matches!(self.experiment, TrajectoryEnsemble | UnravelingCompare | Histogram) && self.n_traj < 2 {
            return bad("traj must be at least 2".into());
        }
        Ok(())
    }

    fn check_orbit_settings(&self) -> Result<(), CliError> {
        if self.n_avg < 2 {
            return Err(CliError::Config("n-avg must be at least 2".into()));
        }
        if !(self.tau * self.kappa >= 100.0) {
            return Err(CliError::Config(format!("kappa * tau must be at least 100, got {}", self.tau * self.kappa)));
        }
        Ok(())
    }

    /// Resolved configuration as `key=value` pairs (for the metadata sidecar).
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut out = vec![
            ("experiment".to_string(), self.experiment.to_string()),
            ("output".into(), self.output.display().to_string()),
        ];
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        if let Some(n) = self.n_spins {
            push("n", n.to_string());
        }
        if let Some(o) = self.omega {
            push("omega", o.to_string());
        }
        push("kappa", self.kappa.to_string());
        push("t-max", self.t_max.to_string());
        push("dt", self.dt.to_string());
        push("sample-every", self.sample_every.to_string());
        push("seed", self.seed.to_string());
        push("traj", self.n_traj.to_string());
        push("unraveling", unraveling_name(self.unraveling).to_string());
        push("mu", self.mu.to_string());
        push("jump-scheme", jump_scheme_name(self.jump_scheme).to_string());
        push("omega-grid", list(&self.omega_grid));
        push("n-list", self.n_list.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","));
        push("bins", self.bins.to_string());
        push("time", self.time.to_string());
        push("n-avg", self.n_avg.to_string());
        push("tau", self.tau.to_string());
        push("sampler", sampler_name(self.sampler).to_string());
        push("quadrature", self.quadrature.to_string());
        if let Some(p) = &self.input {
            push("input", p.display().to_string());
        }
        push("theta", self.theta.to_string());
        push("phi", self.phi.to_string());
        out
    }
}

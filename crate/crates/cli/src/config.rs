//! Experiment configuration read from a TOML file.

use std::path::Path;

use invpde::grid::GridSpec;
use invpde::rollout::Scheme;
use invpde::solvers::{BurgersSpec, SineGordonSpec};
use invpde::symnet::{parse_terms, NetConfig, NetKind, TermMap};
use invpde::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{usage, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Burgers,
    SineGordon,
    Custom,
}

impl Experiment {
    pub fn code(self) -> u32 {
        match self {
            Experiment::Burgers => 0,
            Experiment::SineGordon => 1,
            Experiment::Custom => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Experiment::Burgers),
            1 => Some(Experiment::SineGordon),
            2 => Some(Experiment::Custom),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Experiment::Burgers => "burgers",
            Experiment::SineGordon => "sine_gordon",
            Experiment::Custom => "custom",
        }
    }

    /// Time scheme the experiment's equation requires, if fixed.
    pub fn scheme(self) -> Option<Scheme> {
        match self {
            Experiment::Burgers => Some(Scheme::FirstOrder),
            Experiment::SineGordon => Some(Scheme::SecondOrder),
            Experiment::Custom => None,
        }
    }

    pub fn allows(self, kind: NetKind) -> bool {
        match self {
            Experiment::Burgers => matches!(kind, NetKind::Galileo | NetKind::Baseline),
            Experiment::SineGordon => matches!(kind, NetKind::Lorentz | NetKind::Baseline),
            Experiment::Custom => true,
        }
    }

    pub fn n_components(self) -> Option<usize> {
        match self {
            Experiment::Burgers => Some(2),
            Experiment::SineGordon => Some(1),
            Experiment::Custom => None,
        }
    }
}

/// Overrides for the solver of the chosen experiment; unset fields keep the standard values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// Grid points per axis on `[0, 2π)²`.
    pub n: Option<usize>,
    pub nu: Option<f64>,
    pub m2: Option<f64>,
    pub c2: Option<f64>,
    pub t_end: Option<f64>,
    pub solver_dt: Option<f64>,
    pub save_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub kind: NetKind,
    pub depth: usize,
    pub max_deriv: usize,
    /// Defaults to on for Lorentz nets and for every net on Sine-Gordon data.
    pub function_channels: Option<bool>,
}

impl Default for NetSection {
    fn default() -> Self {
        Self {
            kind: NetKind::Galileo,
            depth: 2,
            max_deriv: 2,
            function_channels: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvarianceSection {
    /// Boost speed.
    pub c: f64,
    /// Invariant speed for Lorentz boosts; defaults to `sqrt(c2)`.
    pub c0: Option<f64>,
    /// Trajectory checked, by position in the manifest.
    pub trajectory: usize,
    /// Keep every `time_stride`-th snapshot before checking.
    pub time_stride: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Seeds the initial conditions (`seed + i` for trajectory `i`) and training.
    pub seed: u64,
    pub n_trajectories: usize,
    /// Peak magnitude of the random initial conditions.
    pub amplitude: Option<f64>,
    pub n_modes: usize,
    /// Constant added to Sine-Gordon initial displacements.
    pub offset: f64,
    /// Keep every `time_stride`-th snapshot when training.
    pub time_stride: usize,
    /// Threshold for reported coefficients and counts.
    pub report_threshold: f64,
    pub solver: SolverSection,
    pub net: NetSection,
    pub train: TrainConfig,
    pub invariance: InvarianceSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Burgers,
            seed: 0,
            n_trajectories: 10,
            amplitude: None,
            n_modes: 4,
            offset: 0.0,
            time_stride: 1,
            report_threshold: 1e-6,
            solver: SolverSection::default(),
            net: NetSection::default(),
            train: TrainConfig::default(),
            invariance: InvarianceSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates; a missing `train.scheme` follows the experiment.
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let raw: toml::Table = text.parse().map_err(|e| usage(format!("config is not valid TOML: {e}")))?;
        let scheme_given = raw
            .get("train")
            .and_then(|t| t.as_table())
            .is_some_and(|t| t.contains_key("scheme"));
        let mut cfg: Self = raw.try_into().map_err(|e| usage(format!("bad config: {e}")))?;
        if !scheme_given {
            if let Some(s) = cfg.experiment.scheme() {
                cfg.train.scheme = s;
            }
        }
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> CliResult<()> {
        let exp = self.experiment;
        if let Some(s) = exp.scheme() {
            if self.train.scheme != s {
                return Err(usage(format!(
                    "{} needs train.scheme = {:?}, got {:?}",
                    exp.label(),
                    s,
                    self.train.scheme
                )));
            }
        }
        if !exp.allows(self.net.kind) {
            return Err(usage(format!(
                "net kind {} is not available for {}",
                self.net.kind.label(),
                exp.label()
            )));
        }
        if self.n_trajectories < 1 {
            return Err(usage("n_trajectories must be at least 1"));
        }
        if self.time_stride < 1 {
            return Err(usage("time_stride must be at least 1"));
        }
        if self.invariance.time_stride == Some(0) {
            return Err(usage("invariance.time_stride must be at least 1"));
        }
        if !(self.report_threshold >= 0.0) {
            return Err(usage("report_threshold must be non-negative"));
        }
        self.train.validate()?;
        match exp {
            Experiment::Burgers => {
                self.burgers_spec()?;
            }
            Experiment::SineGordon => {
                self.sine_gordon_spec()?;
            }
            Experiment::Custom => {}
        }
        Ok(())
    }

    fn grid(&self) -> CliResult<Option<GridSpec>> {
        Ok(match self.solver.n {
            Some(n) => Some(GridSpec::square_2pi(n)?),
            None => None,
        })
    }

    pub fn burgers_spec(&self) -> CliResult<BurgersSpec> {
        let s = &self.solver;
        let mut spec = BurgersSpec::standard();
        if let Some(g) = self.grid()? {
            spec.grid = g;
        }
        spec.nu = s.nu.unwrap_or(spec.nu);
        spec.t_end = s.t_end.unwrap_or(spec.t_end);
        spec.solver_dt = s.solver_dt.unwrap_or(spec.solver_dt);
        spec.save_every = s.save_every.unwrap_or(spec.save_every);
        if !(spec.nu > 0.0) || !(spec.t_end > 0.0) || !(spec.solver_dt > 0.0) || spec.save_every < 1 {
            return Err(usage("solver: nu, t_end, solver_dt and save_every must be positive"));
        }
        Ok(spec)
    }

    pub fn sine_gordon_spec(&self) -> CliResult<SineGordonSpec> {
        let s = &self.solver;
        let mut spec = SineGordonSpec::standard();
        if let Some(g) = self.grid()? {
            spec.grid = g;
        }
        spec.m2 = s.m2.unwrap_or(spec.m2);
        spec.c2 = s.c2.unwrap_or(spec.c2);
        spec.t_end = s.t_end.unwrap_or(spec.t_end);
        spec.solver_dt = s.solver_dt.unwrap_or(spec.solver_dt);
        spec.save_every = s.save_every.unwrap_or(spec.save_every);
        if !(spec.c2 > 0.0) || !(spec.t_end > 0.0) || !(spec.solver_dt > 0.0) || spec.save_every < 1 {
            return Err(usage("solver: c2, t_end, solver_dt and save_every must be positive"));
        }
        Ok(spec)
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude.unwrap_or(match self.experiment {
            Experiment::SineGordon => 2.0,
            _ => 1.0,
        })
    }

    pub fn function_channels(&self) -> bool {
        self.net
            .function_channels
            .unwrap_or(self.net.kind == NetKind::Lorentz || self.experiment == Experiment::SineGordon)
    }

    /// Wiring of the first component's network.
    pub fn net_config(&self, n_components: usize, spatial_dims: usize) -> CliResult<NetConfig> {
        Ok(NetConfig::new(
            self.net.kind,
            self.net.depth,
            0,
            n_components,
            spatial_dims,
            self.net.max_deriv,
            self.function_channels(),
        )?)
    }

    /// Right-hand sides of the generating equation, per component.
    pub fn truth_terms(&self) -> CliResult<Vec<TermMap>> {
        match self.experiment {
            Experiment::Burgers => {
                let nu = self.burgers_spec()?.nu;
                Ok(vec![
                    parse_terms([("u*u_x", -1.0), ("u_y*v", -1.0), ("u_xx", nu), ("u_yy", nu)])?,
                    parse_terms([("u*v_x", -1.0), ("v*v_y", -1.0), ("v_xx", nu), ("v_yy", nu)])?,
                ])
            }
            Experiment::SineGordon => {
                let s = self.sine_gordon_spec()?;
                Ok(vec![parse_terms([("sin(u)", s.m2), ("u_xx", s.c2), ("u_yy", s.c2)])?])
            }
            Experiment::Custom => Err(usage("custom experiments have no known equation; pass --model")),
        }
    }
}

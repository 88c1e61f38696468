//! Learned time stepping: first-order Euler blocks for `u_t = Ñ` and
//! leapfrog blocks for `u_tt = Ñ`, chained into rollouts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec, Trajectory};
use crate::stencil::DerivativeOps;
use crate::symnet::{forward_cached, Atom, ForwardCache, NetConfig, NetParams};

/// Rollouts abort once any value exceeds this magnitude.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    FirstOrder,
    SecondOrder,
}

impl Scheme {
    /// Time-derivative order of the modelled equation.
    pub fn order(self) -> i32 {
        match self {
            Scheme::FirstOrder => 1,
            Scheme::SecondOrder => 2,
        }
    }

    /// Observed snapshots consumed to seed one rollout.
    pub fn seed_len(self) -> usize {
        self.order() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    pub dt: f64,
    pub n_blocks: usize,
    pub scheme: Scheme,
    /// Accuracy order of the derivative stencils.
    pub accuracy_order: usize,
}

impl RolloutConfig {
    pub fn new(dt: f64, n_blocks: usize, scheme: Scheme) -> Self {
        Self {
            dt,
            n_blocks,
            scheme,
            accuracy_order: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_blocks < 1 {
            return Err(Error::InvalidConfig("n_blocks must be at least 1".into()));
        }
        Ok(())
    }
}

/// One network per output component, all wired identically.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeModel {
    pub configs: Vec<NetConfig>,
    pub params: Vec<NetParams>,
}

impl PdeModel {
    pub fn new(configs: Vec<NetConfig>, params: Vec<NetParams>) -> Result<Self> {
        let model = Self { configs, params };
        model.validate()?;
        Ok(model)
    }

    /// `n` networks sharing `base`'s wiring, one per component.
    pub fn from_base(base: &NetConfig, params: Vec<NetParams>) -> Result<Self> {
        let configs = (0..base.n_components)
            .map(|j| base.for_equation(j))
            .collect::<Result<Vec<_>>>()?;
        Self::new(configs, params)
    }

    pub fn zeros(base: &NetConfig) -> Result<Self> {
        let params = (0..base.n_components).map(|_| NetParams::zeros(base)).collect();
        Self::from_base(base, params)
    }

    /// Seeded uniform initialisation, independent streams per component.
    pub fn random(base: &NetConfig, seed: u64) -> Result<Self> {
        let params = (0..base.n_components)
            .map(|j| NetParams::random(base, seed.wrapping_mul(0x9E37_79B9).wrapping_add(j as u64)))
            .collect();
        Self::from_base(base, params)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .configs
            .first()
            .ok_or_else(|| Error::InvalidConfig("model has no networks".into()))?;
        if self.configs.len() != first.n_components || self.params.len() != self.configs.len() {
            return Err(Error::InvalidConfig(format!(
                "model needs one network per component ({}), got {} configs and {} parameter sets",
                first.n_components,
                self.configs.len(),
                self.params.len()
            )));
        }
        for (j, (cfg, p)) in self.configs.iter().zip(&self.params).enumerate() {
            if cfg.equation_index != j || cfg.inputs() != first.inputs() || cfg.kind != first.kind {
                return Err(Error::InvalidConfig(format!(
                    "network {j} is not wired like network 0 for equation {j}"
                )));
            }
            if p.values.len() != cfg.n_params() {
                return Err(Error::ShapeMismatch(format!(
                    "network {j} expects {} parameters, got {}",
                    cfg.n_params(),
                    p.values.len()
                )));
            }
        }
        Ok(())
    }

    pub fn n_components(&self) -> usize {
        self.configs.len()
    }

    pub fn inputs(&self) -> &[Atom] {
        self.configs[0].inputs()
    }
}

/// Computes the network input channels of a field and pulls adjoints back.
#[derive(Debug, Clone)]
pub struct ChannelEvaluator {
    pub ops: DerivativeOps,
    pub atoms: Vec<Atom>,
}

impl ChannelEvaluator {
    pub fn new(spec: GridSpec, accuracy_order: usize, atoms: &[Atom]) -> Result<Self> {
        Ok(Self {
            ops: DerivativeOps::new(spec, accuracy_order)?,
            atoms: atoms.to_vec(),
        })
    }

    pub fn compute(&self, u: &Field) -> Vec<Vec<f64>> {
        self.atoms
            .iter()
            .map(|&a| {
                let src = &u.components[a.component()];
                match a {
                    Atom::Value(_) => src.clone(),
                    Atom::Deriv(_, d) => self.ops.derivative(d, src),
                    Atom::Sin(_) => src.iter().map(|v| v.sin()).collect(),
                    Atom::Exp(_) => src.iter().map(|v| v.exp()).collect(),
                }
            })
            .collect()
    }

    /// Adds `(∂channels/∂u)ᵀ adj` into `u_adj`.
    pub fn pullback(&self, u: &Field, channels: &[Vec<f64>], adj: &[Vec<f64>], u_adj: &mut [Vec<f64>]) {
        for ((&a, ch), g) in self.atoms.iter().zip(channels).zip(adj) {
            let c = a.component();
            let dst = &mut u_adj[c];
            match a {
                Atom::Value(_) => dst.iter_mut().zip(g).for_each(|(d, g)| *d += g),
                Atom::Deriv(_, d) => self.ops.accumulate_transpose(d, g, dst),
                Atom::Sin(_) => {
                    for ((d, g), v) in dst.iter_mut().zip(g).zip(&u.components[c]) {
                        *d += g * v.cos();
                    }
                }
                Atom::Exp(_) => {
                    for ((d, g), e) in dst.iter_mut().zip(g).zip(ch) {
                        *d += g * e;
                    }
                }
            }
        }
    }
}

/// Evaluates every component's network at every grid point.
pub fn evaluate_rhs(model: &PdeModel, channels: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n_points = channels.first().map_or(0, Vec::len);
    let mut x = vec![0.0; channels.len()];
    let mut cache = ForwardCache::default();
    model
        .configs
        .iter()
        .zip(&model.params)
        .map(|(cfg, p)| {
            (0..n_points)
                .map(|i| {
                    for (xv, ch) in x.iter_mut().zip(channels) {
                        *xv = ch[i];
                    }
                    forward_cached(cfg, p, &x, &mut cache)
                })
                .collect()
        })
        .collect()
}

/// Stateless stepping context for one model on one grid.
pub struct Stepper<'a> {
    pub model: &'a PdeModel,
    pub cfg: RolloutConfig,
    pub channels: ChannelEvaluator,
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a PdeModel, spec: GridSpec, cfg: RolloutConfig) -> Result<Self> {
        model.validate()?;
        cfg.validate()?;
        let channels = ChannelEvaluator::new(spec, cfg.accuracy_order, model.inputs())?;
        Ok(Self { model, cfg, channels })
    }

    pub fn rhs(&self, u: &Field) -> Vec<Vec<f64>> {
        evaluate_rhs(self.model, &self.channels.compute(u))
    }

    fn check_shape(&self, u: &Field) -> Result<()> {
        if u.n_components() != self.model.n_components() || u.spec != self.channels.ops.spec {
            return Err(Error::ShapeMismatch(format!(
                "field with {} components does not match a {}-component model on this grid",
                u.n_components(),
                self.model.n_components()
            )));
        }
        Ok(())
    }

    /// `u + dt Ñ(u)`.
    pub fn first_order(&self, u: &Field, block: usize) -> Result<Field> {
        self.check_shape(u)?;
        let rhs = self.rhs(u);
        let dt = self.cfg.dt;
        combine(u, block, &rhs, |i, c, n| u.components[c][i] + dt * n)
    }

    /// Leapfrog `2u − u_prev + dt² Ñ(u)`, or `u + ½dt² Ñ(u)` for the zero-velocity first step.
    pub fn second_order(&self, curr: &Field, prev: Option<&Field>, block: usize) -> Result<Field> {
        self.check_shape(curr)?;
        let rhs = self.rhs(curr);
        let dt2 = self.cfg.dt * self.cfg.dt;
        match prev {
            None => combine(curr, block, &rhs, |i, c, n| curr.components[c][i] + 0.5 * dt2 * n),
            Some(prev) => {
                self.check_shape(prev)?;
                combine(curr, block, &rhs, |i, c, n| {
                    2.0 * curr.components[c][i] - prev.components[c][i] + dt2 * n
                })
            }
        }
    }
}

fn combine(
    like: &Field,
    block: usize,
    rhs: &[Vec<f64>],
    f: impl Fn(usize, usize, f64) -> f64,
) -> Result<Field> {
    let mut components = Vec::with_capacity(rhs.len());
    for (c, n) in rhs.iter().enumerate() {
        let mut out = Vec::with_capacity(n.len());
        for (i, &v) in n.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Divergence {
                    block,
                    reason: format!("non-finite right-hand side {v} in component {c} at index {i}"),
                });
            }
            let next = f(i, c, v);
            if !(next.abs() <= DIVERGENCE_LIMIT) {
                return Err(Error::Divergence {
                    block,
                    reason: format!("|value| = {} exceeds {DIVERGENCE_LIMIT:e}", next.abs()),
                });
            }
            out.push(next);
        }
        components.push(out);
    }
    Ok(Field {
        spec: like.spec,
        components,
    })
}

/// One Euler block `ũ(t+δt) = ũ(t) + δt·Ñ(ũ(t))`.
pub fn step_first_order(u: &Field, model: &PdeModel, cfg: &RolloutConfig) -> Result<Field> {
    if cfg.scheme != Scheme::FirstOrder {
        return Err(Error::InvalidConfig("step_first_order needs a first-order scheme".into()));
    }
    Stepper::new(model, u.spec, *cfg)?.first_order(u, 0)
}

/// One second-order block. The first step assumes zero initial velocity.
pub fn step_second_order(
    u_curr: &Field,
    u_prev: &Field,
    model: &PdeModel,
    cfg: &RolloutConfig,
    is_first_step: bool,
) -> Result<Field> {
    if cfg.scheme != Scheme::SecondOrder {
        return Err(Error::InvalidConfig("step_second_order needs a second-order scheme".into()));
    }
    let stepper = Stepper::new(model, u_curr.spec, *cfg)?;
    stepper.second_order(u_curr, (!is_first_step).then_some(u_prev), 0)
}

/// Seed of a rollout.
#[derive(Debug, Clone)]
pub enum Initial {
    /// A single snapshot; second-order rollouts assume zero initial velocity.
    One(Field),
    /// Two consecutive snapshots `(ũ(t−δt), ũ(t))`, second-order only.
    Two(Field, Field),
}

/// Chains `cfg.n_blocks` steps; the result includes the seed snapshot(s).
pub fn rollout(initial: Initial, model: &PdeModel, cfg: &RolloutConfig) -> Result<Trajectory> {
    let spec = match &initial {
        Initial::One(f) | Initial::Two(_, f) => f.spec,
    };
    let stepper = Stepper::new(model, spec, *cfg)?;
    let mut snaps = match initial {
        Initial::One(f) => vec![f],
        Initial::Two(a, b) => {
            if cfg.scheme == Scheme::FirstOrder {
                return Err(Error::InvalidConfig(
                    "first-order rollouts take a single initial field".into(),
                ));
            }
            vec![a, b]
        }
    };
    let two_seeds = snaps.len() == 2;
    for block in 0..cfg.n_blocks {
        let last = snaps.len() - 1;
        let next = match cfg.scheme {
            Scheme::FirstOrder => stepper.first_order(&snaps[last], block)?,
            Scheme::SecondOrder => {
                let prev = (two_seeds || block > 0).then(|| &snaps[last - 1]);
                stepper.second_order(&snaps[last], prev, block)?
            }
        };
        snaps.push(next);
    }
    Trajectory::new(spec, cfg.dt, snaps)
}

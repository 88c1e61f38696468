//! Rollout loss, its exact reverse-mode gradient, Adam, sparsification and
//! the training loop.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Trajectory};
use crate::rollout::{ChannelEvaluator, PdeModel, RolloutConfig, Scheme, Stepper, DIVERGENCE_LIMIT};
use crate::symnet::{backward, component_name, expand_to_terms, forward_cached, ForwardCache, NetConfig, TermMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub loss: f64,
    pub l1_component: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning rate reached at the last epoch by geometric decay; constant when unset.
    pub final_learning_rate: Option<f64>,
    pub l1_weight: f64,
    pub n_blocks: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hard_threshold: f64,
    /// Defaults to 80% of `epochs`.
    pub threshold_epoch: Option<usize>,
    pub scheme: Scheme,
    pub accuracy_order: usize,
    /// Multiplier on the rollout MSE in the objective; defaults to `1/dt^(2p)`
    /// for a `p`-th order scheme so the objective measures right-hand-side error.
    pub mse_scale: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3000,
            learning_rate: 1e-3,
            final_learning_rate: None,
            l1_weight: 1e-5,
            n_blocks: 4,
            batch_size: 8,
            seed: 0,
            hard_threshold: 1e-3,
            threshold_epoch: None,
            scheme: Scheme::FirstOrder,
            accuracy_order: 4,
            mse_scale: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if let Some(lr) = self.final_learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("final_learning_rate must be positive, got {lr}"));
            }
        }
        if !(self.l1_weight >= 0.0) || !(self.hard_threshold >= 0.0) {
            return bad("l1_weight and hard_threshold must be non-negative".into());
        }
        if self.n_blocks < 1 || self.batch_size < 1 {
            return bad("n_blocks and batch_size must be at least 1".into());
        }
        if let Some(s) = self.mse_scale {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("mse_scale must be positive, got {s}"));
            }
        }
        Ok(())
    }

    pub fn threshold_epoch(&self) -> usize {
        self.threshold_epoch.unwrap_or(self.epochs * 4 / 5)
    }

    pub fn window_len(&self) -> usize {
        self.n_blocks + self.scheme.seed_len()
    }

    pub fn mse_scale_for(&self, dt: f64) -> f64 {
        self.mse_scale
            .unwrap_or_else(|| dt.powi(-2 * self.scheme.order()))
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.final_learning_rate {
            Some(end) if self.epochs > 1 => {
                let frac = epoch as f64 / (self.epochs - 1) as f64;
                self.learning_rate * (end / self.learning_rate).powf(frac)
            }
            _ => self.learning_rate,
        }
    }
}

/// `mean((pred − target)²) + l1_weight · Σ|penalized|`.
pub fn loss_from_parts(pred: &[f64], target: &[f64], penalized: &[f64], l1_weight: f64) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    let mse = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64;
    Ok(mse + l1_weight * penalized.iter().map(|w| w.abs()).sum::<f64>())
}

/// Sum of `|w|` over the readout rows and `A¹` of every network.
pub fn l1_norm(model: &PdeModel) -> f64 {
    model
        .configs
        .iter()
        .zip(&model.params)
        .map(|(cfg, p)| cfg.penalized_indices().iter().map(|&i| p.values[i].abs()).sum::<f64>())
        .sum()
}

/// Rollout MSE plus the sparsity penalty. `pred` excludes seed snapshots.
pub fn loss(pred: &Trajectory, target: &Trajectory, model: &PdeModel, l1_weight: f64) -> Result<f64> {
    if pred.len() != target.len() || pred.n_components() != target.n_components() || pred.spec != target.spec {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}×{} snapshots×components vs target {}×{}",
            pred.len(),
            pred.n_components(),
            target.len(),
            target.n_components()
        )));
    }
    let flat = |t: &Trajectory| -> Vec<f64> {
        t.snapshots
            .iter()
            .flat_map(|s| s.components.iter().flatten().copied())
            .collect()
    };
    let mse = loss_from_parts(&flat(pred), &flat(target), &[], 0.0)?;
    Ok(mse + l1_weight * l1_norm(model))
}

/// A training sample: `window_len` consecutive snapshots starting at `start`.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub traj: &'a Trajectory,
    pub start: usize,
}

/// Value of the objective and its gradient, one vector per network.
#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrad {
    pub loss: f64,
    pub mse: f64,
    pub l1_component: f64,
    pub grad: Vec<Vec<f64>>,
}

struct Recurrence {
    a: f64,
    b: f64,
    c: f64,
}

impl Recurrence {
    /// `s^{t+1} = a s^t + b s^{t−1} + c Ñ(s^t)`.
    fn of(scheme: Scheme, dt: f64) -> Self {
        match scheme {
            Scheme::FirstOrder => Self { a: 1.0, b: 0.0, c: dt },
            Scheme::SecondOrder => Self { a: 2.0, b: -1.0, c: dt * dt },
        }
    }
}

fn check_windows(windows: &[Window], cfg: &TrainConfig) -> Result<f64> {
    let first = windows
        .first()
        .ok_or_else(|| Error::InvalidConfig("empty batch".into()))?;
    let dt = first.traj.dt;
    for w in windows {
        if w.start + cfg.window_len() > w.traj.len() {
            return Err(Error::InvalidConfig(format!(
                "window at {} needs {} snapshots, trajectory has {}",
                w.start,
                cfg.window_len(),
                w.traj.len()
            )));
        }
        if w.traj.dt != dt || w.traj.spec != first.traj.spec {
            return Err(Error::ShapeMismatch("batch mixes grids or time steps".into()));
        }
    }
    Ok(dt)
}

fn window_states(stepper: &Stepper, w: &Window, cfg: &TrainConfig) -> Result<Vec<Field>> {
    let s = cfg.scheme.seed_len();
    let mut states: Vec<Field> = w.traj.snapshots[w.start..w.start + s].to_vec();
    for block in 0..cfg.n_blocks {
        let t = states.len() - 1;
        let next = match cfg.scheme {
            Scheme::FirstOrder => stepper.first_order(&states[t], block)?,
            Scheme::SecondOrder => stepper.second_order(&states[t], Some(&states[t - 1]), block)?,
        };
        states.push(next);
    }
    Ok(states)
}

fn sq_err(states: &[Field], w: &Window, seed_len: usize) -> f64 {
    states[seed_len..]
        .iter()
        .zip(&w.traj.snapshots[w.start + seed_len..])
        .map(|(p, t)| {
            p.components
                .iter()
                .flatten()
                .zip(t.components.iter().flatten())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum()
}

/// Adds `(∂Ñ/∂θ)ᵀ w` into `grad` and returns `(∂Ñ/∂s)ᵀ w` for the state `s`.
fn vjp_step(model: &PdeModel, channels: &ChannelEvaluator, s: &Field, w: &[Vec<f64>], grad: &mut [Vec<f64>]) -> Vec<Vec<f64>> {
    let ch = channels.compute(s);
    let n_points = s.spec.len();
    let n_in = ch.len();
    let mut ch_adj = vec![vec![0.0; n_points]; n_in];
    let mut x = vec![0.0; n_in];
    let mut dx = vec![0.0; n_in];
    let mut cache = ForwardCache::default();
    for (j, (cfg, p)) in model.configs.iter().zip(&model.params).enumerate() {
        for i in 0..n_points {
            let dout = w[j][i];
            if dout == 0.0 {
                continue;
            }
            for (xv, c) in x.iter_mut().zip(&ch) {
                *xv = c[i];
            }
            dx.iter_mut().for_each(|d| *d = 0.0);
            forward_cached(cfg, p, &x, &mut cache);
            backward(cfg, p, &x, &cache, dout, &mut grad[j], &mut dx);
            for (a, d) in ch_adj.iter_mut().zip(&dx) {
                a[i] += d;
            }
        }
    }
    let mut s_adj = vec![vec![0.0; n_points]; s.n_components()];
    channels.pullback(s, &ch, &ch_adj, &mut s_adj);
    s_adj
}

fn window_grad(stepper: &Stepper, w: &Window, cfg: &TrainConfig, direct_scale: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let model = stepper.model;
    let s = cfg.scheme.seed_len();
    let rec = Recurrence::of(cfg.scheme, stepper.cfg.dt);
    let states = window_states(stepper, w, cfg)?;
    let sse = sq_err(&states, w, s);
    let n = states.len();
    let mut grad: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.values.len()]).collect();

    // lambda[t] is the total derivative of the objective with respect to states[t].
    let mut lambda: Vec<Option<Vec<Vec<f64>>>> = vec![None; n + 1];
    let direct = |t: usize| -> Vec<Vec<f64>> {
        states[t]
            .components
            .iter()
            .zip(&w.traj.snapshots[w.start + t].components)
            .map(|(p, y)| p.iter().zip(y).map(|(a, b)| 2.0 * direct_scale * (a - b)).collect())
            .collect()
    };
    lambda[n - 1] = Some(direct(n - 1));
    for t in (s - 1..n - 1).rev() {
        let next = lambda[t + 1].as_ref().expect("adjoint computed");
        let wv: Vec<Vec<f64>> = next.iter().map(|c| c.iter().map(|v| rec.c * v).collect()).collect();
        let jt = vjp_step(model, &stepper.channels, &states[t], &wv, &mut grad);
        if t < s {
            continue;
        }
        let mut lt = direct(t);
        for (c, l) in lt.iter_mut().enumerate() {
            for (i, v) in l.iter_mut().enumerate() {
                *v += rec.a * next[c][i] + jt[c][i];
                if let Some(after) = &lambda[t + 2] {
                    *v += rec.b * after[c][i];
                }
            }
        }
        lambda[t] = Some(lt);
    }
    Ok((sse, grad))
}

/// Objective over a batch without the gradient.
pub fn batch_loss(model: &PdeModel, windows: &[Window], cfg: &TrainConfig) -> Result<f64> {
    cfg.validate()?;
    let dt = check_windows(windows, cfg)?;
    let rc = rollout_config(cfg, dt);
    let stepper = Stepper::new(model, windows[0].traj.spec, rc)?;
    let mut sse = 0.0;
    for w in windows {
        sse += sq_err(&window_states(&stepper, w, cfg)?, w, cfg.scheme.seed_len());
    }
    let count = count_predicted(windows, cfg);
    Ok(cfg.mse_scale_for(dt) * sse / count + cfg.l1_weight * l1_norm(model))
}

fn count_predicted(windows: &[Window], cfg: &TrainConfig) -> f64 {
    let t = windows[0].traj;
    (windows.len() * cfg.n_blocks * t.n_components() * t.spec.len()) as f64
}

fn rollout_config(cfg: &TrainConfig, dt: f64) -> RolloutConfig {
    RolloutConfig {
        dt,
        n_blocks: cfg.n_blocks,
        scheme: cfg.scheme,
        accuracy_order: cfg.accuracy_order,
    }
}

/// Exact reverse-mode gradient of [`batch_loss`] through every rollout.
pub fn grad_loss(model: &PdeModel, windows: &[Window], cfg: &TrainConfig) -> Result<LossAndGrad> {
    cfg.validate()?;
    let dt = check_windows(windows, cfg)?;
    let stepper = Stepper::new(model, windows[0].traj.spec, rollout_config(cfg, dt))?;
    let count = count_predicted(windows, cfg);
    let scale = cfg.mse_scale_for(dt);
    let parts = windows
        .par_iter()
        .map(|w| window_grad(&stepper, w, cfg, scale / count))
        .collect::<Vec<_>>();
    let mut sse = 0.0;
    let mut grad: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.values.len()]).collect();
    for part in parts {
        let (e, g) = part?;
        sse += e;
        for (acc, gi) in grad.iter_mut().zip(&g) {
            acc.iter_mut().zip(gi).for_each(|(a, b)| *a += b);
        }
    }
    let l1_component = cfg.l1_weight * l1_norm(model);
    for (j, (net_cfg, p)) in model.configs.iter().zip(&model.params).enumerate() {
        for i in net_cfg.penalized_indices() {
            grad[j][i] += cfg.l1_weight * sign(p.values[i]);
        }
        if let Some(i) = grad[j].iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                net: j,
                block: net_cfg.block_of(i).to_string(),
            });
        }
    }
    let mse = scale * sse / count;
    Ok(LossAndGrad {
        loss: mse + l1_component,
        mse,
        l1_component,
        grad,
    })
}

fn sign(w: f64) -> f64 {
    if w > 0.0 {
        1.0
    } else if w < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Adam moment accumulators for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub fn optimizer_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, learning_rate: f64) {
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + state.eps);
    }
}

/// Clamps `|w| < threshold` to zero and marks those entries frozen.
pub fn apply_hard_threshold(values: &mut [f64], frozen: &mut [bool], threshold: f64) {
    for (v, f) in values.iter_mut().zip(frozen) {
        if v.abs() < threshold {
            *v = 0.0;
            *f = true;
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: PdeModel,
    pub history: Vec<LossRecord>,
}

/// Trains one network per component of `data` by minimising the rollout objective.
///
/// Each epoch is one Adam step on `batch_size` windows drawn uniformly from all
/// trajectories. At [`TrainConfig::threshold_epoch`] small parameters are
/// clamped to zero and frozen.
pub fn train_model(net_cfg: &NetConfig, cfg: &TrainConfig, data: &[Trajectory]) -> Result<TrainOutput> {
    cfg.validate()?;
    let first = data
        .first()
        .ok_or_else(|| Error::InvalidConfig("no training trajectories".into()))?;
    if net_cfg.n_components != first.n_components() {
        return Err(Error::ShapeMismatch(format!(
            "network models {} components, data has {}",
            net_cfg.n_components,
            first.n_components()
        )));
    }
    let starts: Vec<(usize, usize)> = data
        .iter()
        .enumerate()
        .flat_map(|(k, t)| (0..(t.len() + 1).saturating_sub(cfg.window_len())).map(move |s| (k, s)))
        .collect();
    if starts.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "trajectories are shorter than one window of {} snapshots",
            cfg.window_len()
        )));
    }

    let mut model = PdeModel::random(net_cfg, cfg.seed)?;
    let mut adam: Vec<AdamState> = model.params.iter().map(|p| AdamState::new(p.values.len())).collect();
    let mut frozen: Vec<Vec<bool>> = model.params.iter().map(|p| vec![false; p.values.len()]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if epoch == cfg.threshold_epoch() {
            for (p, f) in model.params.iter_mut().zip(&mut frozen) {
                apply_hard_threshold(&mut p.values, f, cfg.hard_threshold);
            }
        }
        let windows: Vec<Window> = (0..cfg.batch_size)
            .map(|_| {
                let (k, start) = starts[rng.gen_range(0..starts.len())];
                Window { traj: &data[k], start }
            })
            .collect();
        let lg = match grad_loss(&model, &windows, cfg) {
            Ok(lg) if lg.loss.is_finite() => lg,
            Ok(lg) => {
                return Err(Error::TrainingDiverged {
                    epoch,
                    reason: format!("loss became {}", lg.loss),
                    history,
                })
            }
            Err(e) => {
                return Err(Error::TrainingDiverged {
                    epoch,
                    reason: e.to_string(),
                    history,
                })
            }
        };
        history.push(LossRecord {
            epoch,
            loss: lg.loss,
            l1_component: lg.l1_component,
        });
        let lr = cfg.learning_rate_at(epoch);
        for (((p, g), st), f) in model.params.iter_mut().zip(&lg.grad).zip(&mut adam).zip(&frozen) {
            optimizer_step(&mut p.values, g, st, lr);
            for (i, _) in f.iter().enumerate().filter(|(_, &f)| f) {
                p.values[i] = 0.0;
                st.m[i] = 0.0;
                st.v[i] = 0.0;
            }
        }
        if let Some(big) = model.params.iter().flat_map(|p| &p.values).find(|v| !(v.abs() <= DIVERGENCE_LIMIT)) {
            return Err(Error::TrainingDiverged {
                epoch,
                reason: format!("parameter reached {big}"),
                history,
            });
        }
    }
    Ok(TrainOutput { model, history })
}

/// Expanded right-hand sides of a trained model and the count of retained terms.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveredPDE {
    pub components: Vec<TermMap>,
    pub report_threshold: f64,
    pub remaining_count: usize,
}

#[derive(Serialize, Deserialize)]
struct ReportJson {
    components: BTreeMap<String, BTreeMap<String, f64>>,
    threshold: f64,
    remaining_count: usize,
}

impl DiscoveredPDE {
    /// Terms of component `c` with `|coefficient| ≥ report_threshold`.
    pub fn retained(&self, c: usize) -> impl Iterator<Item = (&crate::symnet::CandidateTerm, f64)> + '_ {
        self.components[c]
            .iter()
            .filter(|(_, v)| v.abs() >= self.report_threshold)
            .map(|(t, &v)| (t, v))
    }

    pub fn remaining_in(&self, c: usize) -> usize {
        self.retained(c).count()
    }

    pub fn coefficient(&self, c: usize, term: &str) -> f64 {
        term.parse()
            .ok()
            .and_then(|t| self.components[c].get(&t).copied())
            .unwrap_or(0.0)
    }

    pub fn to_json(&self) -> String {
        let report = ReportJson {
            components: self
                .components
                .iter()
                .enumerate()
                .map(|(c, terms)| {
                    let m = terms.iter().map(|(t, &v)| (t.name(), v)).collect();
                    (component_name(c), m)
                })
                .collect(),
            threshold: self.report_threshold,
            remaining_count: self.remaining_count,
        };
        serde_json::to_string_pretty(&report).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: ReportJson = serde_json::from_str(s).map_err(|e| Error::InvalidConfig(format!("bad report: {e}")))?;
        let mut components = Vec::new();
        for c in 0..r.components.len() {
            let terms = r
                .components
                .get(&component_name(c))
                .ok_or_else(|| Error::InvalidConfig(format!("report lacks component {}", component_name(c))))?;
            components.push(crate::symnet::parse_terms(terms.iter().map(|(k, &v)| (k.as_str(), v)))?);
        }
        Ok(Self {
            components,
            report_threshold: r.threshold,
            remaining_count: r.remaining_count,
        })
    }
}

/// Expands every network and counts terms at `report_threshold`.
pub fn extract_pde(model: &PdeModel, report_threshold: f64) -> DiscoveredPDE {
    let components: Vec<TermMap> = model
        .configs
        .iter()
        .zip(&model.params)
        .map(|(cfg, p)| expand_to_terms(cfg, p))
        .collect();
    let remaining_count = components
        .iter()
        .flat_map(|m| m.values())
        .filter(|v| v.abs() >= report_threshold)
        .count();
    DiscoveredPDE {
        components,
        report_threshold,
        remaining_count,
    }
}

pub fn write_loss_csv(history: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,loss,l1_component\n");
    for r in history {
        out.push_str(&format!("{},{:e},{:e}\n", r.epoch, r.loss, r.l1_component));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::rollout::{rollout, Initial};
    use crate::stencil::Partial;
    use crate::symnet::{Atom, NetKind, NetParams};
    use proptest::prelude::*;

    #[test]
    fn loss_examples() {
        let a = [0.5, -1.0, 2.0];
        assert_eq!(loss_from_parts(&a, &a, &[], 0.0).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        assert_eq!(loss_from_parts(&b, &a, &[], 0.0).unwrap(), 1.0);
        let l = loss_from_parts(&[2.0], &[0.0], &[3.0], 0.1).unwrap();
        assert!((l - 4.3).abs() < 1e-15);
        assert!(loss_from_parts(&[1.0], &[1.0, 2.0], &[], 0.0).is_err());
    }

    #[test]
    fn trajectory_loss_counts_penalty() {
        let spec = GridSpec::square_2pi(8).unwrap();
        let cfg = NetConfig::with_defaults(NetKind::Galileo, 1, 0, 1, 1, 2).unwrap();
        let mut model = PdeModel::zeros(&cfg).unwrap();
        model.params[0].readout_mut(&cfg)[0] = -2.0;
        let t = Trajectory::new(spec, 0.1, vec![Field::zeros(spec, 1), Field::zeros(spec, 1)]).unwrap();
        let p = Trajectory::new(spec, 0.1, vec![Field::constant(spec, &[1.0]); 2]).unwrap();
        assert!((loss(&p, &t, &model, 0.5).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn adam_examples() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(2);
        optimizer_step(&mut p, &[0.0, 0.0], &mut st, 0.1);
        assert_eq!(p, vec![1.0, -2.0]);

        let mut st = AdamState::new(2);
        let mut p = vec![0.0, 0.0];
        optimizer_step(&mut p, &[3.0, -0.5], &mut st, 0.01);
        // bias-corrected first step is lr·g/(|g| + eps)
        assert!((p[0] + 0.01).abs() < 1e-9);
        assert!((p[1] - 0.01).abs() < 1e-9);
        let before = p.clone();
        optimizer_step(&mut p, &[3.0, -0.5], &mut st, 0.01);
        assert!((p[0] - before[0]).abs() <= 0.01 + 1e-12);
        // moments decay under zero gradient
        let m = st.m.clone();
        optimizer_step(&mut p, &[0.0, 0.0], &mut st, 0.01);
        assert!(st.m[0].abs() < m[0].abs());
    }

    #[test]
    fn threshold_clamps_and_freezes() {
        let mut v = vec![1e-4, -0.5, -1e-5, 0.002];
        let mut f = vec![false; 4];
        apply_hard_threshold(&mut v, &mut f, 1e-3);
        assert_eq!(v, vec![0.0, -0.5, 0.0, 0.002]);
        assert_eq!(f, vec![true, false, true, false]);
    }

    #[test]
    fn extract_counts_at_threshold() {
        let cfg = NetConfig::with_defaults(NetKind::Lorentz, 1, 0, 1, 1, 2).unwrap();
        let mut p = NetParams::zeros(&cfg);
        let uxx = NetParams::readout_slot(&cfg, Atom::Deriv(0, Partial::new(2, 0))).unwrap();
        let ux = NetParams::readout_slot(&cfg, Atom::Value(0)).unwrap();
        p.readout_mut(&cfg)[uxx] = 0.5;
        p.readout_mut(&cfg)[ux] = 1e-7;
        let model = PdeModel::from_base(&cfg, vec![p]).unwrap();
        let d = extract_pde(&model, 1e-6);
        assert_eq!(d.remaining_count, 1);
        assert_eq!(d.coefficient(0, "u_xx"), 0.5);
        let back = DiscoveredPDE::from_json(&d.to_json()).unwrap();
        assert_eq!(back, d);
        assert_eq!(extract_pde(&PdeModel::zeros(&cfg).unwrap(), 1e-6).remaining_count, 0);
    }

    fn smooth_traj(spec: GridSpec, n: usize, len: usize, dt: f64, seed: u64) -> Trajectory {
        let snaps = (0..len)
            .map(|t| {
                let s = seed as f64 * 0.37 + t as f64 * dt;
                Field::from_fn(spec, n, |c, x, y| {
                    0.6 * (x + s + c as f64).sin() + 0.3 * (2.0 * y - 0.5 * s).cos() * (1.0 + 0.2 * c as f64)
                })
            })
            .collect();
        Trajectory::new(spec, dt, snaps).unwrap()
    }

    fn objective(model: &PdeModel, windows: &[Window], cfg: &TrainConfig) -> f64 {
        batch_loss(model, windows, cfg).unwrap()
    }

    /// Central differences of the objective, elementwise relative error.
    fn check_gradient(kind: NetKind, n: usize, dims: usize, scheme: Scheme, seed: u64) {
        let spec = GridSpec::square_2pi(8).unwrap();
        let net = NetConfig::with_defaults(kind, 2, 0, n, dims, 2).unwrap();
        let model = PdeModel::random(&net, seed).unwrap();
        let tcfg = TrainConfig {
            n_blocks: 2,
            scheme,
            l1_weight: 1e-3,
            accuracy_order: 2,
            ..TrainConfig::default()
        };
        let trajs = [smooth_traj(spec, n, 5, 0.2, seed), smooth_traj(spec, n, 5, 0.2, seed + 1)];
        let windows = [Window { traj: &trajs[0], start: 0 }, Window { traj: &trajs[1], start: 1 }];
        let lg = grad_loss(&model, &windows, &tcfg).unwrap();
        assert!((lg.loss - objective(&model, &windows, &tcfg)).abs() <= 1e-12 * lg.loss.abs().max(1.0));
        let h = 1e-6;
        for j in 0..model.params.len() {
            for i in 0..model.params[j].values.len() {
                let mut plus = model.clone();
                plus.params[j].values[i] += h;
                let mut minus = model.clone();
                minus.params[j].values[i] -= h;
                let fd = (objective(&plus, &windows, &tcfg) - objective(&minus, &windows, &tcfg)) / (2.0 * h);
                let g = lg.grad[j][i];
                // entries below 1e-5·(1+|L|) are dominated by rounding noise of the h = 1e-6 differences
                let denom = g.abs().max(fd.abs()).max(1e-5 * (1.0 + lg.loss.abs()));
                assert!(
                    (g - fd).abs() / denom <= 1e-4,
                    "{kind:?} {scheme:?} seed {seed}: net {j} param {i} ({}) adjoint {g} vs fd {fd}",
                    net.block_of(i)
                );
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut count = 0;
        for seed in 0..4 {
            for scheme in [Scheme::FirstOrder, Scheme::SecondOrder] {
                check_gradient(NetKind::Galileo, 2, 2, scheme, seed);
                check_gradient(NetKind::Lorentz, 1, 2, scheme, seed);
                check_gradient(NetKind::Baseline, if seed % 2 == 0 { 1 } else { 2 }, 2, scheme, seed);
                count += 3;
            }
        }
        assert!(count >= 20);
    }

    #[test]
    fn zero_model_zero_data_gradient() {
        let spec = GridSpec::square_2pi(8).unwrap();
        let net = NetConfig::with_defaults(NetKind::Galileo, 2, 0, 2, 2, 2).unwrap();
        let model = PdeModel::zeros(&net).unwrap();
        let zero = Trajectory::new(spec, 0.1, vec![Field::zeros(spec, 2); 4]).unwrap();
        let tcfg = TrainConfig {
            n_blocks: 2,
            ..TrainConfig::default()
        };
        let lg = grad_loss(&model, &[Window { traj: &zero, start: 0 }], &tcfg).unwrap();
        assert_eq!(lg.loss, 0.0);
        assert!(lg.grad.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn l1_subgradient_is_signed_weight() {
        let spec = GridSpec::square_2pi(8).unwrap();
        let net = NetConfig::with_defaults(NetKind::Lorentz, 1, 0, 1, 1, 2).unwrap();
        let mut p = NetParams::zeros(&net);
        p.readout_mut(&net)[0] = 0.25;
        let model = PdeModel::from_base(&net, vec![p]).unwrap();
        let zero = Trajectory::new(spec, 0.1, vec![Field::zeros(spec, 1); 4]).unwrap();
        let tcfg = TrainConfig {
            n_blocks: 2,
            l1_weight: 0.01,
            scheme: Scheme::SecondOrder,
            ..TrainConfig::default()
        };
        // readout slot 0 multiplies a channel that is zero on zero data
        let lg = grad_loss(&model, &[Window { traj: &zero, start: 0 }], &tcfg).unwrap();
        let (ow, _) = net.readout_offsets();
        assert_eq!(lg.grad[0][ow], 0.01);
    }

    #[test]
    fn rejects_bad_configs() {
        let net = NetConfig::with_defaults(NetKind::Galileo, 1, 0, 1, 1, 2).unwrap();
        let spec = GridSpec::square_2pi(8).unwrap();
        let t = smooth_traj(spec, 1, 3, 0.1, 0);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(train_model(&net, &cfg, &[t.clone()]), Err(Error::InvalidConfig(_))));
        let cfg = TrainConfig {
            epochs: 1,
            n_blocks: 4,
            ..TrainConfig::default()
        };
        assert!(train_model(&net, &cfg, &[t]).is_err());
    }

    #[test]
    fn divergence_aborts_with_history() {
        let net = NetConfig::with_defaults(NetKind::Lorentz, 1, 0, 1, 1, 2).unwrap();
        let spec = GridSpec::square_2pi(8).unwrap();
        let t = Trajectory::new(spec, 1.0, vec![Field::constant(spec, &[30.0]); 8]).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 1.0,
            scheme: Scheme::SecondOrder,
            mse_scale: Some(1.0),
            ..TrainConfig::default()
        };
        match train_model(&net, &cfg, &[t]) {
            Err(Error::TrainingDiverged { history, epoch, .. }) => assert_eq!(history.len(), epoch),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    /// Data from `u_t = 0.05 u_xx` stepped exactly by the learned scheme's own
    /// stencils, so the only error source is optimisation.
    #[test]
    fn learns_linear_diffusion_from_its_own_rollouts() {
        let spec = GridSpec::square_2pi(16).unwrap();
        let net = NetConfig::with_defaults(NetKind::Galileo, 1, 0, 1, 1, 2).unwrap();
        let mut truth = NetParams::zeros(&net);
        let s = NetParams::readout_slot(&net, Atom::Deriv(0, Partial::new(2, 0))).unwrap();
        truth.readout_mut(&net)[s] = 0.05;
        let truth = PdeModel::from_base(&net, vec![truth]).unwrap();
        let rc = RolloutConfig::new(0.05, 20, Scheme::FirstOrder);
        let data: Vec<Trajectory> = (0..3)
            .map(|k| {
                let ic = Field::from_fn(spec, 1, |_, x, y| (x + k as f64).sin() + 0.5 * (2.0 * x + y).cos());
                rollout(Initial::One(ic), &truth, &rc).unwrap()
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 400,
            learning_rate: 1e-2,
            final_learning_rate: Some(1e-3),
            l1_weight: 1e-4,
            n_blocks: 2,
            batch_size: 4,
            hard_threshold: 1e-2,
            ..TrainConfig::default()
        };
        let out = train_model(&net, &cfg, &data).unwrap();
        let d = extract_pde(&out.model, 1e-2);
        let c = d.coefficient(0, "u_xx");
        assert!((c - 0.05).abs() <= 0.005, "u_xx coefficient {c}, terms {:?}", d.components[0]);
        let again = train_model(&net, &cfg, &data).unwrap();
        assert_eq!(again.model, out.model);
        assert_eq!(again.history, out.history);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn adam_first_step_has_learning_rate_magnitude(g in prop::collection::vec(-10.0f64..10.0, 1..6), lr in 1e-4f64..1e-1) {
            let g: Vec<f64> = g.into_iter().map(|v| if v.abs() < 1e-3 { 1e-3 } else { v }).collect();
            let mut p = vec![0.0; g.len()];
            let mut st = AdamState::new(g.len());
            optimizer_step(&mut p, &g, &mut st, lr);
            for (pi, gi) in p.iter().zip(&g) {
                prop_assert!((pi + lr * gi.signum()).abs() <= lr * 1e-4);
            }
        }
    }
}

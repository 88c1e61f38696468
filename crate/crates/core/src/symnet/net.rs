//! Network wiring for the three symbolic network kinds and their forward and
//! reverse passes at a single grid point.
//!
//! Every kind shares one recurrence. The fully connected inputs `h` feed the
//! multiplication layers
//!
//! ```text
//! (α_i, β_i) = W^i · (h, f_1, …, f_{i-1}) + b^i,   f_i = α_i β_i
//! ```
//!
//! and the readout is `Ñ = W^{k+1} · (g₁?, bypass, h, f_1, …, f_k) + b^{k+1}`.
//! The kinds differ only in which channels are fully connected:
//!
//! * `Baseline`: component values, optional `exp`/`sin`, and all derivatives.
//! * `Galileo`: derivatives only; component values appear solely in the
//!   advective products `η = u_i ∂_i u_j`, mixed by `g₁ = A¹·η + d¹`.
//! * `Lorentz`: values, `exp` and `sin`; the Laplacian pieces `u_xx`, `u_yy`
//!   bypass the hidden layers and enter only the readout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::term::Atom;
use crate::error::{Error, Result};
use crate::stencil::{Partial, MAX_DERIV_ORDER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Baseline,
    Galileo,
    Lorentz,
}

impl NetKind {
    pub fn code(self) -> u32 {
        match self {
            NetKind::Baseline => 0,
            NetKind::Galileo => 1,
            NetKind::Lorentz => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(NetKind::Baseline),
            1 => Some(NetKind::Galileo),
            2 => Some(NetKind::Lorentz),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            NetKind::Baseline => "baseline",
            NetKind::Galileo => "galileo",
            NetKind::Lorentz => "lorentz",
        }
    }
}

/// Channels feeding a network, grouped by how they are wired.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputChannels {
    /// Inputs of the multiplication layers (and of the readout).
    pub fully_connected: Vec<Atom>,
    /// Inputs that skip the hidden layers and enter only the readout.
    pub bypass: Vec<Atom>,
    /// Advective products `(u_i, ∂_i u_j)` mixed into `g₁`.
    pub eta: Vec<(Atom, Atom)>,
}

/// Spatial derivatives exposed to networks: pure derivatives up to
/// `max_deriv` per axis plus the cross term `_xy`.
pub fn derivative_partials(max_deriv: usize, spatial_dims: usize) -> Vec<Partial> {
    let mut out = Vec::new();
    for o in 1..=max_deriv as u8 {
        out.push(Partial::new(o, 0));
        if spatial_dims == 2 {
            if o == 2 {
                out.push(Partial::new(1, 1));
            }
            out.push(Partial::new(0, o));
        }
    }
    out
}

/// Input channels of a network kind for an `n`-component field.
pub fn enumerate_inputs(
    kind: NetKind,
    n: usize,
    max_deriv: usize,
    spatial_dims: usize,
    function_channels: bool,
) -> InputChannels {
    let derivs: Vec<Atom> = (0..n)
        .flat_map(|c| {
            derivative_partials(max_deriv, spatial_dims)
                .into_iter()
                .map(move |d| Atom::Deriv(c, d))
        })
        .collect();
    let values: Vec<Atom> = (0..n).map(Atom::Value).collect();
    let functions: Vec<Atom> = if function_channels {
        (0..n).map(Atom::Exp).chain((0..n).map(Atom::Sin)).collect()
    } else {
        Vec::new()
    };
    match kind {
        NetKind::Baseline => InputChannels {
            fully_connected: values.into_iter().chain(functions).chain(derivs).collect(),
            bypass: Vec::new(),
            eta: Vec::new(),
        },
        NetKind::Galileo => {
            let advecting = n.min(spatial_dims);
            let eta = (0..n)
                .flat_map(|j| {
                    (0..advecting).map(move |i| {
                        let d = if i == 0 {
                            Partial::new(1, 0)
                        } else {
                            Partial::new(0, 1)
                        };
                        (Atom::Value(i), Atom::Deriv(j, d))
                    })
                })
                .collect();
            InputChannels {
                fully_connected: derivs,
                bypass: Vec::new(),
                eta,
            }
        }
        NetKind::Lorentz => {
            let bypass = (0..n)
                .flat_map(|c| {
                    let mut v = vec![Atom::Deriv(c, Partial::new(2, 0))];
                    if spatial_dims == 2 {
                        v.push(Atom::Deriv(c, Partial::new(0, 2)));
                    }
                    v
                })
                .collect();
            InputChannels {
                fully_connected: values.into_iter().chain(functions).collect(),
                bypass,
                eta: Vec::new(),
            }
        }
    }
}

/// Named contiguous range of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    /// Point input vector order.
    inputs: Vec<Atom>,
    fc: Vec<usize>,
    bypass: Vec<usize>,
    eta: Vec<(usize, usize)>,
    /// Offsets of `W^i` (row-major 2×width) and `b^i` per hidden layer.
    hidden: Vec<(usize, usize)>,
    eta_a: usize,
    eta_d: usize,
    out_w: usize,
    out_b: usize,
    out_width: usize,
    n_params: usize,
    blocks: Vec<ParamBlock>,
}

/// Defining fields of one network instance, plus its derived wiring.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub kind: NetKind,
    /// Number of multiplication layers `k`.
    pub depth: usize,
    /// Component whose right-hand side this instance models.
    pub equation_index: usize,
    pub n_components: usize,
    pub spatial_dims: usize,
    pub max_deriv: usize,
    /// Include `exp(u_i)` and `sin(u_i)` channels.
    pub function_channels: bool,
    layout: Layout,
}

impl NetConfig {
    pub fn new(
        kind: NetKind,
        depth: usize,
        equation_index: usize,
        n_components: usize,
        spatial_dims: usize,
        max_deriv: usize,
        function_channels: bool,
    ) -> Result<Self> {
        if depth < 1 {
            return Err(Error::InvalidConfig("depth k must be at least 1".into()));
        }
        if n_components < 1 || equation_index >= n_components {
            return Err(Error::InvalidConfig(format!(
                "equation index {equation_index} out of range for {n_components} components"
            )));
        }
        if !(1..=2).contains(&spatial_dims) {
            return Err(Error::InvalidConfig(format!(
                "spatial_dims must be 1 or 2, got {spatial_dims}"
            )));
        }
        if !(2..=MAX_DERIV_ORDER).contains(&max_deriv) {
            return Err(Error::InvalidConfig(format!(
                "max_deriv must lie in 2..={MAX_DERIV_ORDER}, got {max_deriv}"
            )));
        }
        let channels = enumerate_inputs(kind, n_components, max_deriv, spatial_dims, function_channels);
        let layout = Layout::build(&channels, kind, depth);
        Ok(Self {
            kind,
            depth,
            equation_index,
            n_components,
            spatial_dims,
            max_deriv,
            function_channels,
            layout,
        })
    }

    /// Default choices per kind: `exp`/`sin` channels on for Lorentz only.
    pub fn with_defaults(
        kind: NetKind,
        depth: usize,
        equation_index: usize,
        n_components: usize,
        spatial_dims: usize,
        max_deriv: usize,
    ) -> Result<Self> {
        Self::new(
            kind,
            depth,
            equation_index,
            n_components,
            spatial_dims,
            max_deriv,
            kind == NetKind::Lorentz,
        )
    }

    /// Same wiring, modelling a different component.
    pub fn for_equation(&self, equation_index: usize) -> Result<Self> {
        Self::new(
            self.kind,
            self.depth,
            equation_index,
            self.n_components,
            self.spatial_dims,
            self.max_deriv,
            self.function_channels,
        )
    }

    pub fn channels(&self) -> InputChannels {
        enumerate_inputs(
            self.kind,
            self.n_components,
            self.max_deriv,
            self.spatial_dims,
            self.function_channels,
        )
    }

    /// Order of the point input vector `x` expected by the forward pass.
    pub fn inputs(&self) -> &[Atom] {
        &self.layout.inputs
    }

    /// Total input dimension `M`.
    pub fn input_dim(&self) -> usize {
        self.layout.inputs.len()
    }

    pub fn n_params(&self) -> usize {
        self.layout.n_params
    }

    pub fn param_blocks(&self) -> &[ParamBlock] {
        &self.layout.blocks
    }

    /// Width of the readout row `W^{k+1}`.
    pub fn readout_width(&self) -> usize {
        self.layout.out_width
    }

    /// Flat indices of parameters under the sparsity penalty: `W^{k+1}` and `A¹`.
    pub fn penalized_indices(&self) -> Vec<usize> {
        let l = &self.layout;
        let mut idx: Vec<usize> = (l.out_w..l.out_w + l.out_width).collect();
        if !l.eta.is_empty() {
            idx.extend(l.eta_a..l.eta_a + l.eta.len());
        }
        idx
    }

    /// Name of the block holding flat parameter `i`.
    pub fn block_of(&self, i: usize) -> &str {
        self.layout
            .blocks
            .iter()
            .find(|b| (b.start..b.start + b.len).contains(&i))
            .map(|b| b.name.as_str())
            .unwrap_or("?")
    }

    pub(crate) fn fc_indices(&self) -> &[usize] {
        &self.layout.fc
    }

    pub(crate) fn bypass_indices(&self) -> &[usize] {
        &self.layout.bypass
    }

    pub(crate) fn eta_indices(&self) -> &[(usize, usize)] {
        &self.layout.eta
    }

    pub(crate) fn hidden_offsets(&self, layer: usize) -> (usize, usize) {
        self.layout.hidden[layer]
    }

    pub(crate) fn eta_offsets(&self) -> (usize, usize) {
        (self.layout.eta_a, self.layout.eta_d)
    }

    pub(crate) fn readout_offsets(&self) -> (usize, usize) {
        (self.layout.out_w, self.layout.out_b)
    }

    /// Input width of hidden layer `layer` (0-based).
    pub fn hidden_width(&self, layer: usize) -> usize {
        self.layout.fc.len() + layer
    }
}

impl Layout {
    fn build(ch: &InputChannels, kind: NetKind, depth: usize) -> Self {
        let mut inputs: Vec<Atom> = Vec::new();
        let push = |inputs: &mut Vec<Atom>, a: Atom| -> usize {
            if let Some(i) = inputs.iter().position(|&b| b == a) {
                i
            } else {
                inputs.push(a);
                inputs.len() - 1
            }
        };
        // Order: values used by η, bypass, then fully connected channels.
        if kind == NetKind::Galileo {
            for &(v, _) in &ch.eta {
                push(&mut inputs, v);
            }
        }
        let bypass: Vec<usize> = ch.bypass.iter().map(|&a| push(&mut inputs, a)).collect();
        let fc: Vec<usize> = ch.fully_connected.iter().map(|&a| push(&mut inputs, a)).collect();
        let eta: Vec<(usize, usize)> = ch
            .eta
            .iter()
            .map(|&(v, d)| (push(&mut inputs, v), push(&mut inputs, d)))
            .collect();

        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut block = |name: String, len: usize, offset: &mut usize| {
            let start = *offset;
            blocks.push(ParamBlock { name, start, len });
            *offset += len;
            start
        };
        let mut hidden = Vec::with_capacity(depth);
        for i in 0..depth {
            let width = fc.len() + i;
            let w = block(format!("W{}", i + 1), 2 * width, &mut offset);
            let b = block(format!("b{}", i + 1), 2, &mut offset);
            hidden.push((w, b));
        }
        let (eta_a, eta_d) = if eta.is_empty() {
            (offset, offset)
        } else {
            let a = block("A1".into(), eta.len(), &mut offset);
            let d = block("d1".into(), 1, &mut offset);
            (a, d)
        };
        let out_width = usize::from(!eta.is_empty()) + bypass.len() + fc.len() + depth;
        let out_w = block(format!("W{}", depth + 1), out_width, &mut offset);
        let out_b = block(format!("b{}", depth + 1), 1, &mut offset);
        Layout {
            inputs,
            fc,
            bypass,
            eta,
            hidden,
            eta_a,
            eta_d,
            out_w,
            out_b,
            out_width,
            n_params: offset,
            blocks,
        }
    }
}

/// Flat parameter vector of one network, ordered layer by layer:
/// `W¹ b¹ … W^k b^k [A¹ d¹] W^{k+1} b^{k+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub values: Vec<f64>,
}

impl NetParams {
    pub fn zeros(cfg: &NetConfig) -> Self {
        Self {
            values: vec![0.0; cfg.n_params()],
        }
    }

    /// Uniform in `[-0.1, 0.1]`.
    pub fn random(cfg: &NetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            values: (0..cfg.n_params()).map(|_| rng.gen_range(-0.1..=0.1)).collect(),
        }
    }

    pub fn from_values(cfg: &NetConfig, values: Vec<f64>) -> Result<Self> {
        if values.len() != cfg.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                cfg.n_params(),
                values.len()
            )));
        }
        if let Some((i, &v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                location: format!("parameter {i} ({})", cfg.block_of(i)),
                value: v,
            });
        }
        Ok(Self { values })
    }

    /// Row `row` (0 for α, 1 for β) of hidden weight matrix `W^{layer+1}`.
    pub fn hidden_row(&self, cfg: &NetConfig, layer: usize, row: usize) -> &[f64] {
        let (w, _) = cfg.hidden_offsets(layer);
        let width = cfg.hidden_width(layer);
        &self.values[w + row * width..w + (row + 1) * width]
    }

    pub fn hidden_row_mut(&mut self, cfg: &NetConfig, layer: usize, row: usize) -> &mut [f64] {
        let (w, _) = cfg.hidden_offsets(layer);
        let width = cfg.hidden_width(layer);
        &mut self.values[w + row * width..w + (row + 1) * width]
    }

    pub fn hidden_bias(&self, cfg: &NetConfig, layer: usize) -> [f64; 2] {
        let (_, b) = cfg.hidden_offsets(layer);
        [self.values[b], self.values[b + 1]]
    }

    pub fn hidden_bias_mut(&mut self, cfg: &NetConfig, layer: usize) -> &mut [f64] {
        let (_, b) = cfg.hidden_offsets(layer);
        &mut self.values[b..b + 2]
    }

    pub fn eta_weights(&self, cfg: &NetConfig) -> &[f64] {
        let (a, _) = cfg.eta_offsets();
        &self.values[a..a + cfg.eta_indices().len()]
    }

    pub fn eta_weights_mut(&mut self, cfg: &NetConfig) -> &mut [f64] {
        let (a, _) = cfg.eta_offsets();
        let n = cfg.eta_indices().len();
        &mut self.values[a..a + n]
    }

    pub fn eta_bias(&self, cfg: &NetConfig) -> f64 {
        if cfg.eta_indices().is_empty() {
            0.0
        } else {
            self.values[cfg.eta_offsets().1]
        }
    }

    pub fn eta_bias_mut(&mut self, cfg: &NetConfig) -> &mut f64 {
        assert!(!cfg.eta_indices().is_empty(), "network has no η layer");
        &mut self.values[cfg.eta_offsets().1]
    }

    /// Readout row `W^{k+1}` over `(g₁?, bypass, fully connected, f_1..f_k)`.
    pub fn readout(&self, cfg: &NetConfig) -> &[f64] {
        let (w, _) = cfg.readout_offsets();
        &self.values[w..w + cfg.readout_width()]
    }

    pub fn readout_mut(&mut self, cfg: &NetConfig) -> &mut [f64] {
        let (w, _) = cfg.readout_offsets();
        let n = cfg.readout_width();
        &mut self.values[w..w + n]
    }

    pub fn readout_bias(&self, cfg: &NetConfig) -> f64 {
        self.values[cfg.readout_offsets().1]
    }

    pub fn readout_bias_mut(&mut self, cfg: &NetConfig) -> &mut f64 {
        &mut self.values[cfg.readout_offsets().1]
    }

    /// Position inside the readout row of the input channel `atom`, if any.
    pub fn readout_slot(cfg: &NetConfig, atom: Atom) -> Option<usize> {
        let shift = usize::from(!cfg.eta_indices().is_empty());
        let inputs = cfg.inputs();
        cfg.bypass_indices()
            .iter()
            .chain(cfg.fc_indices())
            .position(|&i| inputs[i] == atom)
            .map(|p| p + shift)
    }

    /// Readout slot of `f_{layer+1}`.
    pub fn readout_product_slot(cfg: &NetConfig, layer: usize) -> usize {
        usize::from(!cfg.eta_indices().is_empty())
            + cfg.bypass_indices().len()
            + cfg.fc_indices().len()
            + layer
    }
}

/// Intermediate values of one forward pass, reused by the reverse pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// Fully connected inputs followed by `f_1..f_k`.
    h: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    g1: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dim(cfg: &NetConfig, x: &[f64]) -> Result<()> {
    if x.len() != cfg.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: cfg.input_dim(),
            found: x.len(),
        });
    }
    Ok(())
}

/// Shared recurrence for all kinds. `x` must already be validated.
pub(crate) fn forward_cached(cfg: &NetConfig, p: &NetParams, x: &[f64], cache: &mut ForwardCache) -> f64 {
    let v = &p.values;
    let k = cfg.depth;
    cache.h.clear();
    cache.h.extend(cfg.fc_indices().iter().map(|&i| x[i]));
    cache.alpha.resize(k, 0.0);
    cache.beta.resize(k, 0.0);
    for layer in 0..k {
        let (w, b) = cfg.hidden_offsets(layer);
        let width = cache.h.len();
        let alpha = dot(&v[w..w + width], &cache.h) + v[b];
        let beta = dot(&v[w + width..w + 2 * width], &cache.h) + v[b + 1];
        cache.alpha[layer] = alpha;
        cache.beta[layer] = beta;
        cache.h.push(alpha * beta);
    }
    let (ow, ob) = cfg.readout_offsets();
    let mut slot = ow;
    let mut out = v[ob];
    let eta = cfg.eta_indices();
    if !eta.is_empty() {
        let (a, d) = cfg.eta_offsets();
        let g1: f64 = eta
            .iter()
            .enumerate()
            .map(|(e, &(i, j))| v[a + e] * x[i] * x[j])
            .sum::<f64>()
            + v[d];
        cache.g1 = g1;
        out += v[slot] * g1;
        slot += 1;
    }
    for &i in cfg.bypass_indices() {
        out += v[slot] * x[i];
        slot += 1;
    }
    out + dot(&v[slot..slot + cache.h.len()], &cache.h)
}

/// Reverse pass: adds `dout · ∂Ñ/∂θ` into `grad` and `dout · ∂Ñ/∂x` into `dx`.
pub(crate) fn backward(
    cfg: &NetConfig,
    p: &NetParams,
    x: &[f64],
    cache: &ForwardCache,
    dout: f64,
    grad: &mut [f64],
    dx: &mut [f64],
) {
    let v = &p.values;
    let k = cfg.depth;
    let (ow, ob) = cfg.readout_offsets();
    grad[ob] += dout;
    let mut slot = ow;
    let eta = cfg.eta_indices();
    if !eta.is_empty() {
        let (a, d) = cfg.eta_offsets();
        grad[slot] += dout * cache.g1;
        let dg1 = dout * v[slot];
        grad[d] += dg1;
        for (e, &(i, j)) in eta.iter().enumerate() {
            grad[a + e] += dg1 * x[i] * x[j];
            dx[i] += dg1 * v[a + e] * x[j];
            dx[j] += dg1 * v[a + e] * x[i];
        }
        slot += 1;
    }
    for &i in cfg.bypass_indices() {
        grad[slot] += dout * x[i];
        dx[i] += dout * v[slot];
        slot += 1;
    }
    let mut dh: Vec<f64> = (0..cache.h.len())
        .map(|j| {
            grad[slot + j] += dout * cache.h[j];
            dout * v[slot + j]
        })
        .collect();
    let m0 = cfg.fc_indices().len();
    for layer in (0..k).rev() {
        let width = m0 + layer;
        let df = dh[width];
        if df == 0.0 {
            continue;
        }
        let (w, b) = cfg.hidden_offsets(layer);
        let dalpha = df * cache.beta[layer];
        let dbeta = df * cache.alpha[layer];
        grad[b] += dalpha;
        grad[b + 1] += dbeta;
        for j in 0..width {
            grad[w + j] += dalpha * cache.h[j];
            grad[w + width + j] += dbeta * cache.h[j];
            dh[j] += dalpha * v[w + j] + dbeta * v[w + width + j];
        }
    }
    for (j, &i) in cfg.fc_indices().iter().enumerate() {
        dx[i] += dh[j];
    }
}

/// Evaluates any kind of network at one point.
pub fn net_forward(cfg: &NetConfig, p: &NetParams, x: &[f64]) -> Result<f64> {
    check_dim(cfg, x)?;
    if p.values.len() != cfg.n_params() {
        return Err(Error::ShapeMismatch(format!(
            "expected {} parameters, got {}",
            cfg.n_params(),
            p.values.len()
        )));
    }
    Ok(forward_cached(cfg, p, x, &mut ForwardCache::default()))
}

fn require_kind(cfg: &NetConfig, kind: NetKind) -> Result<()> {
    if cfg.kind != kind {
        return Err(Error::InvalidConfig(format!(
            "expected a {} network, got {}",
            kind.label(),
            cfg.kind.label()
        )));
    }
    Ok(())
}

/// Baseline symbolic network: every channel fully connected.
pub fn snn_forward(cfg: &NetConfig, p: &NetParams, x: &[f64]) -> Result<f64> {
    require_kind(cfg, NetKind::Baseline)?;
    net_forward(cfg, p, x)
}

/// Galilean network: derivative channels fully connected, `u·∇u` through `g₁`.
pub fn gsnn_forward(cfg: &NetConfig, p: &NetParams, x: &[f64]) -> Result<f64> {
    require_kind(cfg, NetKind::Galileo)?;
    net_forward(cfg, p, x)
}

/// Lorentz network: `u, exp u, sin u` fully connected, Laplacian pieces bypass to the readout.
pub fn lsnn_forward(cfg: &NetConfig, p: &NetParams, x: &[f64]) -> Result<f64> {
    require_kind(cfg, NetKind::Lorentz)?;
    net_forward(cfg, p, x)
}

/// Gradient of the network output with respect to parameters and inputs at one point.
pub fn net_gradients(cfg: &NetConfig, p: &NetParams, x: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_dim(cfg, x)?;
    let mut cache = ForwardCache::default();
    let out = forward_cached(cfg, p, x, &mut cache);
    let mut grad = vec![0.0; cfg.n_params()];
    let mut dx = vec![0.0; cfg.input_dim()];
    backward(cfg, p, x, &cache, 1.0, &mut grad, &mut dx);
    Ok((out, grad, dx))
}

//! Symbolic expansion of a network into explicit term coefficients.

use std::collections::HashMap;

use super::net::{NetConfig, NetParams};
use super::term::{Atom, CandidateTerm, TermMap};

/// Sparse polynomial over atoms, keyed by canonical term.
#[derive(Debug, Clone, Default)]
struct Poly(HashMap<CandidateTerm, f64>);

impl Poly {
    fn constant(c: f64) -> Self {
        let mut p = Poly::default();
        p.add_term(CandidateTerm::constant(), c);
        p
    }

    fn atom(a: Atom) -> Self {
        let mut p = Poly::default();
        p.add_term(CandidateTerm::atom(a), 1.0);
        p
    }

    fn add_term(&mut self, t: CandidateTerm, c: f64) {
        if c != 0.0 {
            *self.0.entry(t).or_insert(0.0) += c;
        }
    }

    fn add_scaled(&mut self, other: &Poly, s: f64) {
        if s == 0.0 {
            return;
        }
        for (t, &c) in &other.0 {
            self.add_term(t.clone(), s * c);
        }
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::default();
        for (ta, &ca) in &self.0 {
            for (tb, &cb) in &other.0 {
                out.add_term(ta.mul(tb), ca * cb);
            }
        }
        out
    }
}

/// Expands the forward recurrence into `term → coefficient`.
///
/// `sin` and `exp` channels stay atomic. Terms whose coefficient is exactly
/// zero are dropped.
pub fn expand_to_terms(cfg: &NetConfig, p: &NetParams) -> TermMap {
    let inputs = cfg.inputs();
    let mut h: Vec<Poly> = cfg.fc_indices().iter().map(|&i| Poly::atom(inputs[i])).collect();
    for layer in 0..cfg.depth {
        let [b0, b1] = p.hidden_bias(cfg, layer);
        let mut alpha = Poly::constant(b0);
        let mut beta = Poly::constant(b1);
        for (j, hp) in h.iter().enumerate() {
            alpha.add_scaled(hp, p.hidden_row(cfg, layer, 0)[j]);
            beta.add_scaled(hp, p.hidden_row(cfg, layer, 1)[j]);
        }
        h.push(alpha.mul(&beta));
    }

    let readout = p.readout(cfg);
    let mut out = Poly::constant(p.readout_bias(cfg));
    let mut slot = 0;
    let eta = cfg.eta_indices();
    if !eta.is_empty() {
        let mut g1 = Poly::constant(p.eta_bias(cfg));
        for (&(i, j), &a) in eta.iter().zip(p.eta_weights(cfg)) {
            g1.add_term(CandidateTerm::new(vec![inputs[i], inputs[j]]), a);
        }
        out.add_scaled(&g1, readout[slot]);
        slot += 1;
    }
    for &i in cfg.bypass_indices() {
        out.add_term(CandidateTerm::atom(inputs[i]), readout[slot]);
        slot += 1;
    }
    for hp in &h {
        out.add_scaled(hp, readout[slot]);
        slot += 1;
    }
    out.0.into_iter().filter(|(_, c)| *c != 0.0).collect()
}

/// Evaluates `Σ coeff · term` at one point given the network input vector `x`.
pub fn eval_terms_at(cfg: &NetConfig, terms: &TermMap, x: &[f64]) -> f64 {
    let inputs = cfg.inputs();
    let lookup = |a: Atom| {
        let i = inputs
            .iter()
            .position(|&b| b == a)
            .expect("term atom is a network input");
        x[i]
    };
    terms.iter().map(|(t, c)| c * t.eval(lookup)).sum()
}

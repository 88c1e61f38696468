//! Symbolic networks (baseline, Galilean, Lorentz), their point-wise forward
//! and reverse passes, and expansion into explicit candidate terms.

mod expand;
mod net;
mod term;

pub use expand::{eval_terms_at, expand_to_terms};
pub use net::{
    derivative_partials, enumerate_inputs, gsnn_forward, lsnn_forward, net_forward, net_gradients,
    snn_forward, InputChannels, NetConfig, NetKind, NetParams, ParamBlock,
};
pub(crate) use net::{backward, forward_cached, ForwardCache};
pub use term::{component_name, parse_terms, Atom, AtomCache, CandidateTerm, TermMap};

use crate::stencil::Partial;

/// True when `term` lies in the Galilean-invariant closure: the constant,
/// products of pure derivatives, or a single advective product `u_i ∂_i u_j`.
pub fn is_galilean_admissible(term: &CandidateTerm) -> bool {
    let f = term.factors();
    if f.iter().all(Atom::is_derivative) {
        return true;
    }
    if let [Atom::Value(i), Atom::Deriv(_, d)] = f {
        let unit = match i {
            0 => Partial::new(1, 0),
            1 => Partial::new(0, 1),
            _ => return false,
        };
        return *d == unit;
    }
    false
}

/// True when `term` lies in the Lorentz-invariant closure: the constant, a
/// lone `u_xx`/`u_yy`, or products of values, `sin` and `exp`.
pub fn is_lorentz_admissible(term: &CandidateTerm) -> bool {
    match term.factors() {
        [Atom::Deriv(_, d)] => *d == Partial::new(2, 0) || *d == Partial::new(0, 2),
        f => f.iter().all(|a| !a.is_derivative()),
    }
}

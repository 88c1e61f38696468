//! Atomic symbols, candidate terms and their evaluation on fields.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::stencil::{DerivativeOps, Partial};

const COMPONENT_NAMES: [&str; 4] = ["u", "v", "w", "q"];

pub fn component_name(c: usize) -> String {
    COMPONENT_NAMES
        .get(c)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("u{c}"))
}

fn parse_component(s: &str) -> Option<usize> {
    if let Some(i) = COMPONENT_NAMES.iter().position(|&n| n == s) {
        return Some(i);
    }
    s.strip_prefix('u')
        .and_then(|r| r.parse::<usize>().ok())
        .filter(|&c| c >= COMPONENT_NAMES.len())
}

/// One factor of a candidate term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Atom {
    Value(usize),
    Deriv(usize, Partial),
    Sin(usize),
    Exp(usize),
}

impl Atom {
    pub fn component(&self) -> usize {
        match *self {
            Atom::Value(c) | Atom::Deriv(c, _) | Atom::Sin(c) | Atom::Exp(c) => c,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Atom::Value(c) => component_name(c),
            Atom::Deriv(c, d) => format!("{}_{}", component_name(c), d.suffix()),
            Atom::Sin(c) => format!("sin({})", component_name(c)),
            Atom::Exp(c) => format!("exp({})", component_name(c)),
        }
    }

    pub fn is_derivative(&self) -> bool {
        matches!(self, Atom::Deriv(..))
    }

    /// Derivative order, 0 for non-derivative atoms.
    pub fn deriv_order(&self) -> usize {
        match self {
            Atom::Deriv(_, d) => d.order(),
            _ => 0,
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Atom {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidTerm(format!("unrecognized symbol {s:?}"));
        let s = s.trim();
        for (prefix, make) in [("sin(", Atom::Sin as fn(usize) -> Atom), ("exp(", Atom::Exp)] {
            if let Some(inner) = s.strip_prefix(prefix).and_then(|r| r.strip_suffix(')')) {
                return parse_component(inner).map(make).ok_or_else(bad);
            }
        }
        if let Some((comp, suffix)) = s.split_once('_') {
            let c = parse_component(comp).ok_or_else(bad)?;
            let x = suffix.chars().take_while(|&ch| ch == 'x').count();
            let y = suffix[x..].chars().take_while(|&ch| ch == 'y').count();
            if x + y != suffix.len() || x + y == 0 {
                return Err(bad());
            }
            return Ok(Atom::Deriv(c, Partial::new(x as u8, y as u8)));
        }
        parse_component(s).map(Atom::Value).ok_or_else(bad)
    }
}

/// A monomial over atoms; the empty product is the constant term `1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct CandidateTerm {
    factors: Vec<Atom>,
}

impl CandidateTerm {
    pub fn constant() -> Self {
        Self::default()
    }

    pub fn new(mut factors: Vec<Atom>) -> Self {
        factors.sort();
        Self { factors }
    }

    pub fn atom(a: Atom) -> Self {
        Self { factors: vec![a] }
    }

    pub fn factors(&self) -> &[Atom] {
        &self.factors
    }

    pub fn degree(&self) -> usize {
        self.factors.len()
    }

    pub fn is_constant(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn mul(&self, other: &CandidateTerm) -> CandidateTerm {
        let mut factors = Vec::with_capacity(self.factors.len() + other.factors.len());
        let (mut i, mut j) = (0, 0);
        while i < self.factors.len() && j < other.factors.len() {
            if self.factors[i] <= other.factors[j] {
                factors.push(self.factors[i]);
                i += 1;
            } else {
                factors.push(other.factors[j]);
                j += 1;
            }
        }
        factors.extend_from_slice(&self.factors[i..]);
        factors.extend_from_slice(&other.factors[j..]);
        CandidateTerm { factors }
    }

    /// Canonical printable name: factor names sorted lexicographically, joined by `*`.
    pub fn name(&self) -> String {
        if self.factors.is_empty() {
            return "1".into();
        }
        let mut names: Vec<String> = self.factors.iter().map(Atom::name).collect();
        names.sort();
        names.join("*")
    }

    pub fn eval(&self, mut value: impl FnMut(Atom) -> f64) -> f64 {
        self.factors.iter().fold(1.0, |acc, &a| acc * value(a))
    }
}

impl fmt::Display for CandidateTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for CandidateTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "1" {
            return Ok(Self::constant());
        }
        s.split('*')
            .map(str::parse)
            .collect::<Result<Vec<Atom>>>()
            .map(CandidateTerm::new)
    }
}

impl Serialize for CandidateTerm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for CandidateTerm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Polynomial right-hand side: term → coefficient.
pub type TermMap = BTreeMap<CandidateTerm, f64>;

/// Parses `"name" → coefficient` pairs into a [`TermMap`].
pub fn parse_terms<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Result<TermMap> {
    let mut map = TermMap::new();
    for (name, coeff) in pairs {
        *map.entry(name.parse()?).or_insert(0.0) += coeff;
    }
    Ok(map)
}

/// Computes atom fields of a snapshot on demand and caches them.
pub struct AtomCache<'a> {
    field: &'a Field,
    ops: &'a DerivativeOps,
    cache: HashMap<Atom, Vec<f64>>,
}

impl<'a> AtomCache<'a> {
    pub fn new(field: &'a Field, ops: &'a DerivativeOps) -> Self {
        Self {
            field,
            ops,
            cache: HashMap::new(),
        }
    }

    pub fn get(&mut self, atom: Atom) -> Result<&[f64]> {
        if !self.cache.contains_key(&atom) {
            let c = atom.component();
            let src = self.field.components.get(c).ok_or_else(|| {
                Error::InvalidTerm(format!(
                    "{atom} refers to component {c}, field has {}",
                    self.field.n_components()
                ))
            })?;
            let values = match atom {
                Atom::Value(_) => src.clone(),
                Atom::Deriv(_, d) => self.ops.derivative(d, src),
                Atom::Sin(_) => src.iter().map(|v| v.sin()).collect(),
                Atom::Exp(_) => src.iter().map(|v| v.exp()).collect(),
            };
            self.cache.insert(atom, values);
        }
        Ok(&self.cache[&atom])
    }

    /// Pointwise values of one term.
    pub fn term(&mut self, term: &CandidateTerm) -> Result<Vec<f64>> {
        let mut out = vec![1.0; self.field.spec.len()];
        for &a in term.factors() {
            let vals = self.get(a)?;
            out.iter_mut().zip(vals).for_each(|(o, v)| *o *= v);
        }
        Ok(out)
    }

    /// Pointwise values of `Σ coeff · term`.
    pub fn combination(&mut self, terms: &TermMap) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.field.spec.len()];
        for (term, &coeff) in terms {
            let vals = self.term(term)?;
            out.iter_mut().zip(&vals).for_each(|(o, v)| *o += coeff * v);
        }
        Ok(out)
    }
}

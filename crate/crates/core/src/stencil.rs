//! Central finite-difference stencils on periodic grids.
//!
//! Weights come from an exact rational solve of the Taylor-moment system
//! `Σ_j w_j j^m = m! δ(m, d)`, then get scaled by `h^-d`.

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};

pub const MAX_DERIV_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    pub deriv_order: usize,
    pub accuracy_order: usize,
    pub offsets: Vec<i64>,
    pub weights: Vec<f64>,
    pub axis: Axis,
}

/// Unscaled rational weights (grid spacing 1) for a centered stencil.
pub fn central_weights_exact(deriv_order: usize, accuracy_order: usize) -> Result<Vec<Ratio<i128>>> {
    if deriv_order > MAX_DERIV_ORDER || !matches!(accuracy_order, 2 | 4) {
        return Err(Error::UnsupportedStencil {
            deriv_order,
            accuracy_order,
        });
    }
    if deriv_order == 0 {
        return Ok(vec![Ratio::from_integer(1)]);
    }
    let points = 2 * ((deriv_order + 1) / 2) - 1 + accuracy_order;
    let radius = (points / 2) as i128;
    // Vandermonde rows m = 0..points, columns j = -radius..=radius.
    let mut a: Vec<Vec<Ratio<i128>>> = (0..points)
        .map(|m| {
            let mut row: Vec<Ratio<i128>> = (-radius..=radius)
                .map(|j| Ratio::from_integer(j.pow(m as u32)))
                .collect();
            let rhs = if m == deriv_order {
                (1..=m as i128).product::<i128>()
            } else {
                0
            };
            row.push(Ratio::from_integer(rhs));
            row
        })
        .collect();
    // Gauss-Jordan elimination; every pivot column has a nonzero entry since
    // the Vandermonde matrix on distinct nodes is nonsingular.
    for col in 0..points {
        let pivot = (col..points)
            .find(|&r| a[r][col] != Ratio::from_integer(0))
            .expect("nonsingular Vandermonde system");
        a.swap(col, pivot);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for r in 0..points {
            if r != col && a[r][col] != Ratio::from_integer(0) {
                let f = a[r][col];
                for c in col..=points {
                    let delta = f * a[col][c];
                    a[r][c] -= delta;
                }
            }
        }
    }
    Ok(a.into_iter().map(|row| row[points]).collect())
}

/// Centered stencil for `d^deriv_order / dx^deriv_order` along x with spacing `h`.
///
/// Use [`Stencil::on_axis`] to retarget it.
pub fn central_stencil(deriv_order: usize, accuracy_order: usize, h: f64) -> Result<Stencil> {
    let exact = central_weights_exact(deriv_order, accuracy_order)?;
    let radius = (exact.len() / 2) as i64;
    let scale = h.powi(deriv_order as i32);
    let weights = exact
        .iter()
        .map(|r| *r.numer() as f64 / *r.denom() as f64 / scale)
        .collect();
    Ok(Stencil {
        deriv_order,
        accuracy_order,
        offsets: (-radius..=radius).collect(),
        weights,
        axis: Axis::X,
    })
}

impl Stencil {
    pub fn on_axis(mut self, axis: Axis) -> Self {
        self.axis = axis;
        self
    }

    pub fn radius(&self) -> usize {
        self.offsets.iter().map(|o| o.unsigned_abs() as usize).max().unwrap_or(0)
    }

    /// Circular correlation of `src` with the stencil: `dst[i] = Σ w_j src[i + o_j]`.
    pub fn apply_slice(&self, spec: &GridSpec, src: &[f64], dst: &mut [f64]) {
        dst.iter_mut().for_each(|v| *v = 0.0);
        self.accumulate(spec, src, dst, 1);
    }

    /// Adds the transpose of the stencil applied to `src` into `dst`.
    pub fn accumulate_transpose(&self, spec: &GridSpec, src: &[f64], dst: &mut [f64]) {
        self.accumulate(spec, src, dst, -1);
    }

    fn accumulate(&self, spec: &GridSpec, src: &[f64], dst: &mut [f64], sign: i64) {
        let (nx, ny) = (spec.nx as i64, spec.ny as i64);
        debug_assert_eq!(src.len(), spec.len());
        debug_assert_eq!(dst.len(), spec.len());
        for (&o, &w) in self.offsets.iter().zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            let o = sign * o;
            match self.axis {
                Axis::X => {
                    for ix in 0..nx {
                        let sx = (ix + o).rem_euclid(nx) as usize;
                        let (d, s) = (ix as usize * spec.ny, sx * spec.ny);
                        for (dv, sv) in dst[d..d + spec.ny].iter_mut().zip(&src[s..s + spec.ny]) {
                            *dv += w * sv;
                        }
                    }
                }
                Axis::Y => {
                    let shift = o.rem_euclid(ny) as usize;
                    for ix in 0..spec.nx {
                        let row = ix * spec.ny;
                        let (drow, srow) = (&mut dst[row..row + spec.ny], &src[row..row + spec.ny]);
                        let split = spec.ny - shift;
                        // dst[iy] += w * src[(iy + shift) mod ny]
                        for (dv, sv) in drow[..split].iter_mut().zip(&srow[shift..]) {
                            *dv += w * sv;
                        }
                        for (dv, sv) in drow[split..].iter_mut().zip(&srow[..shift]) {
                            *dv += w * sv;
                        }
                    }
                }
            }
        }
    }
}

/// Applies `stencil` to every component of `field`.
pub fn apply_stencil(field: &Field, stencil: &Stencil) -> Field {
    let components = field
        .components
        .iter()
        .map(|c| {
            let mut out = vec![0.0; c.len()];
            stencil.apply_slice(&field.spec, c, &mut out);
            out
        })
        .collect();
    Field {
        spec: field.spec,
        components,
    }
}

/// Mixed partial derivative `∂^x_order ∂^y_order`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Partial {
    pub x_order: u8,
    pub y_order: u8,
}

impl Partial {
    pub const fn new(x_order: u8, y_order: u8) -> Self {
        Self { x_order, y_order }
    }

    pub fn order(&self) -> usize {
        (self.x_order + self.y_order) as usize
    }

    /// Subscript string, e.g. `"xxy"`.
    pub fn suffix(&self) -> String {
        "x".repeat(self.x_order as usize) + &"y".repeat(self.y_order as usize)
    }
}

/// Stencils for every partial derivative up to [`MAX_DERIV_ORDER`] per axis on one grid.
#[derive(Debug, Clone)]
pub struct DerivativeOps {
    pub spec: GridSpec,
    pub accuracy_order: usize,
    x: Vec<Stencil>,
    y: Vec<Stencil>,
}

impl DerivativeOps {
    pub fn new(spec: GridSpec, accuracy_order: usize) -> Result<Self> {
        let build = |axis: Axis, h: f64| -> Result<Vec<Stencil>> {
            (0..=MAX_DERIV_ORDER)
                .map(|d| central_stencil(d, accuracy_order, h).map(|s| s.on_axis(axis)))
                .collect()
        };
        Ok(Self {
            spec,
            accuracy_order,
            x: build(Axis::X, spec.dx)?,
            y: build(Axis::Y, spec.dy)?,
        })
    }

    pub fn stencil(&self, axis: Axis, order: usize) -> &Stencil {
        match axis {
            Axis::X => &self.x[order],
            Axis::Y => &self.y[order],
        }
    }

    /// `dst = D src` for the mixed partial `d`.
    pub fn apply(&self, d: Partial, src: &[f64], dst: &mut [f64]) {
        let (ox, oy) = (d.x_order as usize, d.y_order as usize);
        match (ox, oy) {
            (0, 0) => dst.copy_from_slice(src),
            (_, 0) => self.x[ox].apply_slice(&self.spec, src, dst),
            (0, _) => self.y[oy].apply_slice(&self.spec, src, dst),
            _ => {
                let mut tmp = vec![0.0; src.len()];
                self.x[ox].apply_slice(&self.spec, src, &mut tmp);
                self.y[oy].apply_slice(&self.spec, &tmp, dst);
            }
        }
    }

    /// `dst += Dᵀ src`.
    pub fn accumulate_transpose(&self, d: Partial, src: &[f64], dst: &mut [f64]) {
        let (ox, oy) = (d.x_order as usize, d.y_order as usize);
        match (ox, oy) {
            (0, 0) => dst.iter_mut().zip(src).for_each(|(a, b)| *a += b),
            (_, 0) => self.x[ox].accumulate_transpose(&self.spec, src, dst),
            (0, _) => self.y[oy].accumulate_transpose(&self.spec, src, dst),
            _ => {
                let mut tmp = vec![0.0; src.len()];
                self.y[oy].accumulate_transpose(&self.spec, src, &mut tmp);
                self.x[ox].accumulate_transpose(&self.spec, &tmp, dst);
            }
        }
    }

    pub fn derivative(&self, d: Partial, src: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        self.apply(d, src, &mut out);
        out
    }
}

//! Reference solvers producing ground-truth trajectories: 2D viscous Burgers
//! (RK4) and 2D Sine-Gordon (leapfrog with an RK4 start).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{sample_initial_condition, Field, GridSpec, Trajectory};
use crate::stencil::{DerivativeOps, Partial};

const BLOW_UP: f64 = 1e6;
const DX: Partial = Partial::new(1, 0);
const DY: Partial = Partial::new(0, 1);
const DXX: Partial = Partial::new(2, 0);
const DYY: Partial = Partial::new(0, 2);

/// `u_t = −u u_x − v u_y + ν Δu`, `v_t = −u v_x − v v_y + ν Δv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurgersSpec {
    pub nu: f64,
    pub grid: GridSpec,
    pub t_end: f64,
    pub solver_dt: f64,
    pub save_every: usize,
    /// Drops the advective terms, leaving two decoupled heat equations.
    #[serde(default = "yes")]
    pub advection: bool,
}

fn yes() -> bool {
    true
}

impl BurgersSpec {
    /// 64×64 on `[0, 2π)²`, ν = 0.05, one time unit saved every 0.01.
    pub fn standard() -> Self {
        Self {
            nu: 0.05,
            grid: GridSpec::square_2pi(64).expect("valid grid"),
            t_end: 1.0,
            solver_dt: 1e-3,
            save_every: 10,
            advection: true,
        }
    }

    pub fn dt(&self) -> f64 {
        self.solver_dt * self.save_every as f64
    }
}

/// `u_tt = m2 sin u + c2 Δu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineGordonSpec {
    pub m2: f64,
    pub c2: f64,
    pub grid: GridSpec,
    pub t_end: f64,
    pub solver_dt: f64,
    pub save_every: usize,
}

impl SineGordonSpec {
    /// 64×64 on `[0, 2π)²`, `m2 = 10`, `c2 = 0.5`, half a time unit saved every 0.005.
    pub fn standard() -> Self {
        Self {
            m2: 10.0,
            c2: 0.5,
            grid: GridSpec::square_2pi(64).expect("valid grid"),
            t_end: 0.5,
            solver_dt: 1e-3,
            save_every: 5,
        }
    }

    pub fn dt(&self) -> f64 {
        self.solver_dt * self.save_every as f64
    }
}

fn step_count(t_end: f64, solver_dt: f64, save_every: usize) -> Result<usize> {
    if !(solver_dt > 0.0 && t_end > 0.0) || save_every < 1 {
        return Err(Error::InvalidConfig(format!(
            "need positive t_end, solver_dt and save_every, got {t_end}, {solver_dt}, {save_every}"
        )));
    }
    let steps = (t_end / solver_dt).round() as usize;
    if steps < save_every {
        return Err(Error::InvalidConfig(format!(
            "t_end {t_end} holds fewer than one saving interval of {save_every} steps"
        )));
    }
    Ok(steps)
}

fn check_ic(ic: &Field, spec: &GridSpec, n: usize) -> Result<()> {
    if ic.spec != *spec || ic.n_components() != n {
        return Err(Error::ShapeMismatch(format!(
            "initial condition must have {n} component(s) on the solver grid"
        )));
    }
    ic.check_finite("initial condition")
}

fn max_abs(u: &[Vec<f64>]) -> f64 {
    u.iter().flatten().fold(0.0_f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) })
}

fn guard(u: &[Vec<f64>], step: usize) -> Result<()> {
    let m = max_abs(u);
    if !(m <= BLOW_UP) {
        return Err(Error::BlowUp { step, max_abs: m });
    }
    Ok(())
}

fn axpy(a: f64, x: &[Vec<f64>], y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .zip(y)
        .map(|(x, y)| x.iter().zip(y).map(|(x, y)| y + a * x).collect())
        .collect()
}

fn burgers_rhs(ops: &DerivativeOps, nu: f64, advection: bool, u: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (uu, vv) = (&u[0], &u[1]);
    u.iter()
        .map(|w| {
            let lap: Vec<f64> = ops
                .derivative(DXX, w)
                .iter()
                .zip(ops.derivative(DYY, w))
                .map(|(a, b)| nu * (a + b))
                .collect();
            if !advection {
                return lap;
            }
            let wx = ops.derivative(DX, w);
            let wy = ops.derivative(DY, w);
            (0..w.len()).map(|i| lap[i] - uu[i] * wx[i] - vv[i] * wy[i]).collect()
        })
        .collect()
}

fn rk4(u: &[Vec<f64>], dt: f64, f: impl Fn(&[Vec<f64>]) -> Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let k1 = f(u);
    let k2 = f(&axpy(0.5 * dt, &k1, u));
    let k3 = f(&axpy(0.5 * dt, &k2, u));
    let k4 = f(&axpy(dt, &k3, u));
    let mut out = u.to_vec();
    for c in 0..u.len() {
        for i in 0..u[c].len() {
            out[c][i] += dt / 6.0 * (k1[c][i] + 2.0 * k2[c][i] + 2.0 * k3[c][i] + k4[c][i]);
        }
    }
    out
}

/// Integrates Burgers from `ic` (two components) with RK4 and 4th-order stencils.
pub fn solve_burgers2d(spec: &BurgersSpec, ic: &Field) -> Result<Trajectory> {
    let g = spec.grid;
    g.validate()?;
    check_ic(ic, &g, 2)?;
    if !(spec.nu > 0.0) {
        return Err(Error::InvalidConfig(format!("viscosity must be positive, got {}", spec.nu)));
    }
    let steps = step_count(spec.t_end, spec.solver_dt, spec.save_every)?;
    let h = g.dx.min(g.dy);
    let diffusive = 0.2 * h * h / spec.nu;
    if spec.solver_dt > diffusive {
        return Err(Error::Unstable(format!(
            "solver_dt {} exceeds the diffusive bound {diffusive:.4e}",
            spec.solver_dt
        )));
    }
    let cfl = ic.max_abs() * spec.solver_dt / h;
    if spec.advection && cfl > 0.5 {
        return Err(Error::Unstable(format!("CFL number {cfl:.3} exceeds 0.5")));
    }
    let ops = DerivativeOps::new(g, 4)?;
    let mut u = ic.components.clone();
    let mut snaps = vec![ic.clone()];
    for step in 1..=steps {
        u = rk4(&u, spec.solver_dt, |w| burgers_rhs(&ops, spec.nu, spec.advection, w));
        guard(&u, step)?;
        if step % spec.save_every == 0 {
            snaps.push(Field::new(g, u.clone())?);
        }
    }
    Trajectory::new(g, spec.dt(), snaps)
}

fn sg_force(ops: &DerivativeOps, spec: &SineGordonSpec, u: &[f64]) -> Vec<f64> {
    let uxx = ops.derivative(DXX, u);
    let uyy = ops.derivative(DYY, u);
    (0..u.len())
        .map(|i| spec.m2 * u[i].sin() + spec.c2 * (uxx[i] + uyy[i]))
        .collect()
}

/// Integrates Sine-Gordon by leapfrog, starting with one RK4 step of the
/// first-order system `(u, u_t)`.
pub fn solve_sine_gordon2d(spec: &SineGordonSpec, ic: &Field, ic_velocity: Option<&Field>) -> Result<Trajectory> {
    let g = spec.grid;
    g.validate()?;
    check_ic(ic, &g, 1)?;
    if let Some(v) = ic_velocity {
        check_ic(v, &g, 1)?;
    }
    if !(spec.c2 > 0.0) {
        return Err(Error::InvalidConfig(format!("c2 must be positive, got {}", spec.c2)));
    }
    let steps = step_count(spec.t_end, spec.solver_dt, spec.save_every)?;
    let bound = 0.5 * g.dx.min(g.dy) / spec.c2.sqrt();
    if spec.solver_dt > bound {
        return Err(Error::Unstable(format!(
            "solver_dt {} exceeds the CFL bound {bound:.4e}",
            spec.solver_dt
        )));
    }
    let ops = DerivativeOps::new(g, 4)?;
    let dt = spec.solver_dt;
    let u0 = ic.components[0].clone();
    let w0 = ic_velocity.map_or_else(|| vec![0.0; g.len()], |v| v.components[0].clone());
    let started = rk4(&[u0.clone(), w0], dt, |s| vec![s[1].clone(), sg_force(&ops, spec, &s[0])]);
    let mut prev = u0;
    let mut curr = started[0].clone();
    let mut snaps = vec![ic.clone()];
    for step in 1..=steps {
        if step > 1 {
            let f = sg_force(&ops, spec, &curr);
            let next: Vec<f64> = (0..curr.len())
                .map(|i| 2.0 * curr[i] - prev[i] + dt * dt * f[i])
                .collect();
            prev = std::mem::replace(&mut curr, next);
        }
        guard(std::slice::from_ref(&curr), step)?;
        if step % spec.save_every == 0 {
            snaps.push(Field::new(g, vec![curr.clone()])?);
        }
    }
    Trajectory::new(g, spec.dt(), snaps)
}

/// Solves Burgers from `seeds.len()` random initial conditions in parallel.
pub fn burgers_dataset(spec: &BurgersSpec, seeds: &[u64], amplitude: f64, n_modes: usize) -> Result<Vec<Trajectory>> {
    seeds
        .par_iter()
        .map(|&s| solve_burgers2d(spec, &sample_initial_condition(spec.grid, 2, s, n_modes, amplitude)))
        .collect()
}

/// Solves Sine-Gordon from random initial displacements at rest, shifted by `offset`, in parallel.
pub fn sine_gordon_dataset(
    spec: &SineGordonSpec,
    seeds: &[u64],
    amplitude: f64,
    n_modes: usize,
    offset: f64,
) -> Result<Vec<Trajectory>> {
    seeds
        .par_iter()
        .map(|&s| {
            let mut ic = sample_initial_condition(spec.grid, 1, s, n_modes, amplitude);
            ic.components[0].iter_mut().for_each(|v| *v += offset);
            solve_sine_gordon2d(spec, &ic, None)
        })
        .collect()
}

//! Uniform periodic grids, multi-component fields and trajectories.
//!
//! Values are stored per component as `nx * ny` arrays in row-major order of
//! shape `[nx, ny]`, so the flat index of point `(ix, iy)` is `ix * ny + iy`.
//! Trajectory files use the little-endian `PDED` layout documented in
//! [`write_trajectory`].

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRAJECTORY_MAGIC: [u8; 4] = *b"PDED";
pub const TRAJECTORY_VERSION: u32 = 1;
pub const HEADER_BYTES: u64 = 48;

/// Largest absolute wavenumber used by [`sample_initial_condition`].
pub const MAX_IC_WAVENUMBER: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    #[serde(default = "periodic_default")]
    pub periodic: bool,
}

fn periodic_default() -> bool {
    true
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64) -> Result<Self> {
        let spec = Self {
            nx,
            ny,
            dx,
            dy,
            periodic: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `n x n` grid covering `[0, 2π)²`.
    pub fn square_2pi(n: usize) -> Result<Self> {
        let h = 2.0 * PI / n as f64;
        Self::new(n, n, h, h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 8 || self.ny < 8 {
            return Err(Error::InvalidGrid(format!(
                "need at least 8 points per axis, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.dx > 0.0 && self.dx.is_finite() && self.dy > 0.0 && self.dy.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "spacings must be positive, got dx={} dy={}",
                self.dx, self.dy
            )));
        }
        if !self.periodic {
            return Err(Error::InvalidGrid("only periodic grids are supported".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        ix * self.ny + iy
    }

    pub fn x(&self, ix: usize) -> f64 {
        ix as f64 * self.dx
    }

    pub fn y(&self, iy: usize) -> f64 {
        iy as f64 * self.dy
    }

    /// Domain length along x.
    pub fn lx(&self) -> f64 {
        self.nx as f64 * self.dx
    }

    pub fn ly(&self) -> f64 {
        self.ny as f64 * self.dy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub spec: GridSpec,
    pub components: Vec<Vec<f64>>,
}

impl Field {
    pub fn new(spec: GridSpec, components: Vec<Vec<f64>>) -> Result<Self> {
        let field = Self { spec, components };
        field.validate()?;
        Ok(field)
    }

    pub fn zeros(spec: GridSpec, n: usize) -> Self {
        Self {
            spec,
            components: vec![vec![0.0; spec.len()]; n],
        }
    }

    pub fn constant(spec: GridSpec, values: &[f64]) -> Self {
        Self {
            spec,
            components: values.iter().map(|&v| vec![v; spec.len()]).collect(),
        }
    }

    /// Builds each component by evaluating `f(component, x, y)` at every grid point.
    pub fn from_fn(spec: GridSpec, n: usize, f: impl Fn(usize, f64, f64) -> f64) -> Self {
        let components = (0..n)
            .map(|c| {
                let mut data = Vec::with_capacity(spec.len());
                for ix in 0..spec.nx {
                    for iy in 0..spec.ny {
                        data.push(f(c, spec.x(ix), spec.y(iy)));
                    }
                }
                data
            })
            .collect();
        Self { spec, components }
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.components.is_empty() {
            return Err(Error::ShapeMismatch("field has no components".into()));
        }
        for (c, comp) in self.components.iter().enumerate() {
            if comp.len() != self.spec.len() {
                return Err(Error::ShapeMismatch(format!(
                    "component {c} has {} values, grid needs {}",
                    comp.len(),
                    self.spec.len()
                )));
            }
        }
        self.check_finite("field")
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        for (c, comp) in self.components.iter().enumerate() {
            if let Some((i, &v)) = comp.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite {
                    location: format!("{context}, component {c}, index {i}"),
                    value: v,
                });
            }
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.components
            .iter()
            .flatten()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Largest pointwise absolute difference over all components.
    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.components
            .iter()
            .zip(&other.components)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.spec == other.spec && self.components.len() == other.components.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub spec: GridSpec,
    pub dt: f64,
    pub snapshots: Vec<Field>,
}

impl Trajectory {
    pub fn new(spec: GridSpec, dt: f64, snapshots: Vec<Field>) -> Result<Self> {
        let traj = Self { spec, dt, snapshots };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidGrid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.snapshots.len() < 2 {
            return Err(Error::ShapeMismatch(format!(
                "trajectory needs at least 2 snapshots, got {}",
                self.snapshots.len()
            )));
        }
        let n = self.snapshots[0].n_components();
        for (k, snap) in self.snapshots.iter().enumerate() {
            if snap.spec != self.spec || snap.n_components() != n {
                return Err(Error::ShapeMismatch(format!(
                    "snapshot {k} does not match the trajectory shape"
                )));
            }
            snap.validate()?;
        }
        Ok(())
    }

    pub fn n_components(&self) -> usize {
        self.snapshots.first().map_or(0, Field::n_components)
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Every `stride`-th snapshot, starting from the first.
    pub fn subsample(&self, stride: usize) -> Result<Self> {
        assert!(stride >= 1, "stride must be positive");
        let snapshots = self.snapshots.iter().step_by(stride).cloned().collect();
        Self::new(self.spec, self.dt * stride as f64, snapshots)
    }

    /// Keeps only the listed components, in the given order.
    pub fn select_components(&self, comps: &[usize]) -> Result<Self> {
        let snapshots = self
            .snapshots
            .iter()
            .map(|s| Field {
                spec: s.spec,
                components: comps.iter().map(|&c| s.components[c].clone()).collect(),
            })
            .collect();
        Self::new(self.spec, self.dt, snapshots)
    }

    /// Size in bytes of the serialized form.
    pub fn encoded_len(&self) -> u64 {
        HEADER_BYTES
            + 8 * (self.snapshots.len() * self.n_components() * self.spec.len()) as u64
    }
}

/// Writes `traj` as a `PDED` file.
///
/// Layout, all little-endian: magic `"PDED"`, version `u32 = 1`, `nx`, `ny`,
/// `n_components`, `n_snapshots` (each `u32`), `dx`, `dy`, `dt` (each `f64`),
/// followed by the snapshots in time order, each component row-major as `f64`.
pub fn write_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    traj.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = Vec::with_capacity(HEADER_BYTES as usize);
    header.extend_from_slice(&TRAJECTORY_MAGIC);
    for v in [
        TRAJECTORY_VERSION,
        traj.spec.nx as u32,
        traj.spec.ny as u32,
        traj.n_components() as u32,
        traj.snapshots.len() as u32,
    ] {
        header.extend_from_slice(&v.to_le_bytes());
    }
    for v in [traj.spec.dx, traj.spec.dy, traj.dt] {
        header.extend_from_slice(&v.to_le_bytes());
    }
    debug_assert_eq!(header.len() as u64, HEADER_BYTES);
    w.write_all(&header).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(traj.spec.len() * 8);
    for snap in &traj.snapshots {
        for comp in &snap.components {
            buf.clear();
            for v in comp {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let found_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut r = BufReader::new(file);

    let truncated = |expected: u64| Error::Truncated {
        path: path.to_path_buf(),
        expected,
        found: found_len,
    };
    if found_len < 4 {
        return Err(truncated(HEADER_BYTES));
    }
    let mut header = [0u8; HEADER_BYTES as usize];
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if magic != TRAJECTORY_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: TRAJECTORY_MAGIC,
            found: magic,
        });
    }
    if found_len < HEADER_BYTES {
        return Err(truncated(HEADER_BYTES));
    }
    header[..4].copy_from_slice(&magic);
    r.read_exact(&mut header[4..]).map_err(|e| Error::io(path, e))?;
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != TRAJECTORY_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let (nx, ny, n_comp, n_snap) = (
        u32_at(8) as usize,
        u32_at(12) as usize,
        u32_at(16) as usize,
        u32_at(20) as usize,
    );
    let (dx, dy, dt) = (f64_at(24), f64_at(32), f64_at(40));
    let spec = GridSpec::new(nx, ny, dx, dy)?;
    let expected = HEADER_BYTES + 8 * (nx * ny * n_comp * n_snap) as u64;
    if found_len < expected {
        return Err(truncated(expected));
    }

    let mut buf = vec![0u8; nx * ny * 8];
    let mut snapshots = Vec::with_capacity(n_snap);
    for k in 0..n_snap {
        let mut components = Vec::with_capacity(n_comp);
        for c in 0..n_comp {
            r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
            let comp: Vec<f64> = buf
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            if let Some((i, &v)) = comp.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite {
                    location: format!("{}: snapshot {k}, component {c}, index {i}", path.display()),
                    value: v,
                });
            }
            components.push(comp);
        }
        snapshots.push(Field { spec, components });
    }
    Trajectory::new(spec, dt, snapshots)
}

/// Random periodic initial condition: each component is a superposition of
/// `n_modes` Fourier modes with integer wavenumbers `|k| <= 4` per axis,
/// rescaled so the peak magnitude equals `amplitude`.
///
/// Wavenumbers are in units of the fundamental `2π / L` of each axis, so the
/// field is exactly periodic on the grid.
pub fn sample_initial_condition(
    spec: GridSpec,
    n: usize,
    seed: u64,
    n_modes: usize,
    amplitude: f64,
) -> Field {
    assert!(n_modes >= 1, "n_modes must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (kx0, ky0) = (2.0 * PI / spec.lx(), 2.0 * PI / spec.ly());
    let mut components = Vec::with_capacity(n);
    for _ in 0..n {
        let modes: Vec<(f64, f64, f64, f64)> = (0..n_modes)
            .map(|_| {
                let (kx, ky) = loop {
                    let kx = rng.gen_range(-MAX_IC_WAVENUMBER..=MAX_IC_WAVENUMBER);
                    let ky = rng.gen_range(-MAX_IC_WAVENUMBER..=MAX_IC_WAVENUMBER);
                    if kx != 0 || ky != 0 {
                        break (kx, ky);
                    }
                };
                let weight = rng.gen_range(0.2..1.0);
                let phase = rng.gen_range(0.0..2.0 * PI);
                (kx as f64 * kx0, ky as f64 * ky0, weight, phase)
            })
            .collect();
        let mut data = Vec::with_capacity(spec.len());
        for ix in 0..spec.nx {
            for iy in 0..spec.ny {
                let (x, y) = (spec.x(ix), spec.y(iy));
                data.push(
                    modes
                        .iter()
                        .map(|&(kx, ky, w, p)| w * (kx * x + ky * y + p).cos())
                        .sum::<f64>(),
                );
            }
        }
        let peak = data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let scale = if peak > 0.0 { amplitude / peak } else { 0.0 };
        data.iter_mut().for_each(|v| *v *= scale);
        components.push(data);
    }
    Field { spec, components }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec8() -> GridSpec {
        GridSpec::new(8, 8, 0.5, 0.25).unwrap()
    }

    fn small_traj() -> Trajectory {
        let spec = spec8();
        let a = Field::from_fn(spec, 1, |_, x, y| x + 2.0 * y);
        let b = Field::from_fn(spec, 1, |_, x, y| x * y - 1.0);
        Trajectory::new(spec, 0.1, vec![a, b]).unwrap()
    }

    #[test]
    fn file_size_matches_header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pded");
        let traj = small_traj();
        write_trajectory(&traj, &path).unwrap();
        let len = std::fs::metadata(&path).unwrap().len();
        assert_eq!(len, 48 + 2 * 8 * 8 * 8);
        assert_eq!(len, traj.encoded_len());
        assert_eq!(read_trajectory(&path).unwrap(), traj);
    }

    #[test]
    fn nan_is_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let mut traj = small_traj();
        traj.snapshots[1].components[0][5] = f64::NAN;
        let err = write_trajectory(&traj, dir.path().join("x")).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn nan_payload_is_rejected_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pded");
        write_trajectory(&small_traj(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let o = HEADER_BYTES as usize + 8 * 3;
        bytes[o..o + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_trajectory(&path), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pded");
        write_trajectory(&small_traj(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[..4].copy_from_slice(b"NOPE");
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_trajectory(&path), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncation_names_expected_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pded");
        write_trajectory(&small_traj(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = HEADER_BYTES as usize + 8 * 8 * 8 + 100;
        std::fs::write(&path, &bytes[..cut]).unwrap();
        match read_trajectory(&path) {
            Err(Error::Truncated { expected, found, .. }) => {
                assert_eq!(expected, 48 + 2 * 8 * 8 * 8);
                assert_eq!(found, cut as u64);
                let msg = read_trajectory(&path).unwrap_err().to_string();
                assert!(msg.contains("1072"), "{msg}");
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn grid_invariants() {
        assert!(GridSpec::new(7, 8, 1.0, 1.0).is_err());
        assert!(GridSpec::new(8, 8, 0.0, 1.0).is_err());
        let mut s = spec8();
        s.periodic = false;
        assert!(s.validate().is_err());
    }

    #[test]
    fn trajectory_needs_two_snapshots() {
        let spec = spec8();
        assert!(Trajectory::new(spec, 0.1, vec![Field::zeros(spec, 1)]).is_err());
    }

    #[test]
    fn zero_amplitude_gives_zero_field() {
        let f = sample_initial_condition(GridSpec::square_2pi(16).unwrap(), 2, 3, 4, 0.0);
        assert_eq!(f.max_abs(), 0.0);
    }

    #[test]
    fn initial_condition_is_seeded() {
        let spec = GridSpec::square_2pi(16).unwrap();
        let a = sample_initial_condition(spec, 2, 1, 5, 1.0);
        let b = sample_initial_condition(spec, 2, 1, 5, 1.0);
        let c = sample_initial_condition(spec, 2, 2, 5, 1.0);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!((a.max_abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn initial_condition_is_periodic() {
        // Integer wavenumbers: the seam behaves like any interior point, so
        // the second difference across it is no larger than the interior max.
        let spec = GridSpec::square_2pi(32).unwrap();
        let f = &sample_initial_condition(spec, 1, 9, 3, 1.0).components[0];
        let d2 = |a: usize, b: usize, c: usize, iy: usize| {
            (f[spec.index(a, iy)] - 2.0 * f[spec.index(b, iy)] + f[spec.index(c, iy)]).abs()
        };
        let mut interior = 0.0_f64;
        let mut seam = 0.0_f64;
        for iy in 0..spec.ny {
            for ix in 1..spec.nx - 1 {
                interior = interior.max(d2(ix - 1, ix, ix + 1, iy));
            }
            seam = seam
                .max(d2(spec.nx - 1, 0, 1, iy))
                .max(d2(spec.nx - 2, spec.nx - 1, 0, iy));
        }
        assert!(seam <= interior + 1e-12, "seam {seam} interior {interior}");
    }
}

//! `PDEM` model files.
//!
//! Layout, all little-endian: magic `"PDEM"`, then `u32` fields version,
//! experiment, kind, n_components, spatial_dims, depth, max_deriv,
//! function_channels, scheme order, accuracy_order, n_nets, params_per_net,
//! then `dt`, `dx`, `dy` as `f64`, then each network's parameters as `f64`
//! in layer order.

use std::path::Path;

use invpde::rollout::{PdeModel, Scheme};
use invpde::symnet::{NetConfig, NetKind, NetParams};

use crate::config::Experiment;
use crate::error::{runtime, usage, CliResult};

pub const MODEL_MAGIC: [u8; 4] = *b"PDEM";
pub const MODEL_VERSION: u32 = 1;
pub const MODEL_HEADER_BYTES: usize = 4 + 12 * 4 + 3 * 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub experiment: Experiment,
    pub scheme: Scheme,
    pub accuracy_order: usize,
    pub dt: f64,
    pub dx: f64,
    pub dy: f64,
    pub model: PdeModel,
}

impl ModelFile {
    pub fn kind(&self) -> NetKind {
        self.model.configs[0].kind
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let base = &self.model.configs[0];
        let mut out = Vec::with_capacity(MODEL_HEADER_BYTES + 8 * base.n_params() * self.model.params.len());
        out.extend_from_slice(&MODEL_MAGIC);
        for v in [
            MODEL_VERSION,
            self.experiment.code(),
            base.kind.code(),
            base.n_components as u32,
            base.spatial_dims as u32,
            base.depth as u32,
            base.max_deriv as u32,
            base.function_channels as u32,
            self.scheme.order() as u32,
            self.accuracy_order as u32,
            self.model.params.len() as u32,
            base.n_params() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [self.dt, self.dx, self.dy] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for p in &self.model.params {
            for v in &p.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> CliResult<Self> {
        let bad = |m: String| runtime(format!("{origin}: {m}"));
        if bytes.len() < 4 || bytes[..4] != MODEL_MAGIC {
            return Err(bad("not a PDEM model file".into()));
        }
        if bytes.len() < MODEL_HEADER_BYTES {
            return Err(bad(format!("truncated header ({} bytes)", bytes.len())));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let f64_at = |i: usize| f64::from_le_bytes(bytes[52 + 8 * i..60 + 8 * i].try_into().unwrap());
        if u32_at(0) != MODEL_VERSION {
            return Err(bad(format!("unsupported version {}", u32_at(0))));
        }
        let experiment = Experiment::from_code(u32_at(1)).ok_or_else(|| bad(format!("unknown experiment {}", u32_at(1))))?;
        let kind = NetKind::from_code(u32_at(2)).ok_or_else(|| bad(format!("unknown net kind {}", u32_at(2))))?;
        let scheme = match u32_at(8) {
            1 => Scheme::FirstOrder,
            2 => Scheme::SecondOrder,
            s => return Err(bad(format!("unknown scheme order {s}"))),
        };
        let base = NetConfig::new(
            kind,
            u32_at(5) as usize,
            0,
            u32_at(3) as usize,
            u32_at(4) as usize,
            u32_at(6) as usize,
            u32_at(7) != 0,
        )
        .map_err(|e| bad(e.to_string()))?;
        let (n_nets, per_net) = (u32_at(10) as usize, u32_at(11) as usize);
        if per_net != base.n_params() || n_nets != base.n_components {
            return Err(bad(format!(
                "header declares {n_nets} nets of {per_net} parameters, wiring needs {} of {}",
                base.n_components,
                base.n_params()
            )));
        }
        let expected = MODEL_HEADER_BYTES + 8 * n_nets * per_net;
        if bytes.len() != expected {
            return Err(bad(format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let values: Vec<f64> = bytes[MODEL_HEADER_BYTES..]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let params = values
            .chunks(per_net)
            .map(|c| NetParams::from_values(&base, c.to_vec()))
            .collect::<invpde::Result<Vec<_>>>()
            .map_err(|e| bad(e.to_string()))?;
        let model = PdeModel::from_base(&base, params).map_err(|e| bad(e.to_string()))?;
        Ok(Self {
            experiment,
            scheme,
            accuracy_order: u32_at(9) as usize,
            dt: f64_at(0),
            dx: f64_at(1),
            dy: f64_at(2),
            model,
        })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| usage(format!("cannot read model {}: {e}", path.display())))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(kind: NetKind, n: usize, fc: bool) -> ModelFile {
        let base = NetConfig::new(kind, 2, 0, n, 2, 3, fc).unwrap();
        ModelFile {
            experiment: Experiment::Custom,
            scheme: Scheme::SecondOrder,
            accuracy_order: 4,
            dt: 0.01,
            dx: 0.1,
            dy: 0.2,
            model: PdeModel::random(&base, 7).unwrap(),
        }
    }

    #[test]
    fn round_trips_every_kind() {
        for (kind, n, fc) in [(NetKind::Baseline, 1, true), (NetKind::Galileo, 2, false), (NetKind::Lorentz, 1, true)] {
            let m = sample(kind, n, fc);
            let bytes = m.to_bytes();
            assert_eq!(&bytes[..4], b"PDEM");
            assert_eq!(ModelFile::from_bytes(&bytes, "mem").unwrap(), m);
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample(NetKind::Galileo, 2, false).to_bytes();
        assert!(ModelFile::from_bytes(&bytes[..bytes.len() - 8], "mem").is_err());
        assert!(ModelFile::from_bytes(&bytes[..20], "mem").is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(ModelFile::from_bytes(&wrong, "mem").is_err());
        let mut wrong = bytes;
        wrong[8] = 9;
        assert!(ModelFile::from_bytes(&wrong, "mem").is_err());
    }
}

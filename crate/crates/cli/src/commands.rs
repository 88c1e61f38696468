//! Subcommand implementations.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use invpde::grid::{read_trajectory, write_trajectory, Trajectory};
use invpde::invariance::{check_galileo_covariance, check_lorentz_covariance, BoostParams, CovarianceReport};
use invpde::rollout::Scheme;
use invpde::solvers::{burgers_dataset, sine_gordon_dataset, BurgersSpec, SineGordonSpec};
use invpde::symnet::{component_name, CandidateTerm, TermMap};
use invpde::train::{extract_pde, train_model, write_loss_csv, DiscoveredPDE};
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, ExperimentConfig};
use crate::error::{runtime, usage, CliResult};
use crate::model_file::ModelFile;

pub const MANIFEST: &str = "manifest.json";
pub const MODEL: &str = "model.pdem";
pub const LOSS: &str = "loss.csv";
pub const REPORT: &str = "report.json";
pub const COEFFICIENTS: &str = "coefficients.csv";
pub const COUNTS: &str = "counts.csv";
/// Thresholds of the count table.
pub const COUNT_THRESHOLDS: [f64; 2] = [1e-6, 1e-2];

/// Index of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: Experiment,
    /// Trajectory files relative to the manifest's directory.
    pub files: Vec<String>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub amplitude: Option<f64>,
    #[serde(default)]
    pub n_modes: Option<usize>,
    #[serde(default)]
    pub offset: Option<f64>,
    #[serde(default)]
    pub burgers: Option<BurgersSpec>,
    #[serde(default)]
    pub sine_gordon: Option<SineGordonSpec>,
}

impl Manifest {
    pub fn load(dir: &Path) -> CliResult<Self> {
        if !dir.is_dir() {
            return Err(usage(format!("dataset directory {} does not exist", dir.display())));
        }
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("bad manifest {}: {e}", path.display())))
    }

    pub fn trajectories(&self, dir: &Path) -> CliResult<Vec<Trajectory>> {
        if self.files.is_empty() {
            return Err(usage("manifest lists no trajectory files"));
        }
        self.files
            .iter()
            .map(|f| Ok(read_trajectory(dir.join(f))?))
            .collect()
    }
}

/// Creates `dir`, refusing a non-empty one unless `force`.
fn prepare_out(dir: &Path, force: bool) -> CliResult<()> {
    if dir.is_file() {
        return Err(usage(format!("{} is a file, expected a directory", dir.display())));
    }
    if !force && dir.is_dir() {
        let mut entries = fs::read_dir(dir).map_err(|e| runtime(format!("cannot list {}: {e}", dir.display())))?;
        if entries.next().is_some() {
            return Err(usage(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

/// Runs the experiment's solver for every seed and writes `PDED` files plus a manifest.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path, force: bool) -> CliResult<Manifest> {
    let seeds: Vec<u64> = (0..cfg.n_trajectories as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let amp = cfg.amplitude();
    let mut manifest = Manifest {
        experiment: cfg.experiment,
        files: Vec::new(),
        seeds: seeds.clone(),
        amplitude: Some(amp),
        n_modes: Some(cfg.n_modes),
        offset: None,
        burgers: None,
        sine_gordon: None,
    };
    let data = match cfg.experiment {
        Experiment::Burgers => {
            let spec = cfg.burgers_spec()?;
            manifest.burgers = Some(spec);
            burgers_dataset(&spec, &seeds, amp, cfg.n_modes)?
        }
        Experiment::SineGordon => {
            let spec = cfg.sine_gordon_spec()?;
            manifest.sine_gordon = Some(spec);
            manifest.offset = Some(cfg.offset);
            sine_gordon_dataset(&spec, &seeds, amp, cfg.n_modes, cfg.offset)?
        }
        Experiment::Custom => {
            return Err(usage("custom experiments bring their own data; write a manifest listing PDED files"));
        }
    };
    prepare_out(out, force)?;
    for (i, traj) in data.iter().enumerate() {
        let name = format!("traj_{i:03}.pded");
        write_trajectory(traj, out.join(&name))?;
        manifest.files.push(name);
    }
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_text(&out.join(MANIFEST), &(text + "\n"))?;
    Ok(manifest)
}

fn load_training_data(cfg: &ExperimentConfig, data_dir: &Path, stride: usize) -> CliResult<Vec<Trajectory>> {
    let manifest = Manifest::load(data_dir)?;
    if manifest.experiment != cfg.experiment {
        return Err(usage(format!(
            "dataset holds {} data but the config runs {}",
            manifest.experiment.label(),
            cfg.experiment.label()
        )));
    }
    let data = manifest.trajectories(data_dir)?;
    if let Some(n) = cfg.experiment.n_components() {
        if let Some(t) = data.iter().find(|t| t.n_components() != n) {
            return Err(usage(format!(
                "{} data must have {n} components, found {}",
                cfg.experiment.label(),
                t.n_components()
            )));
        }
    }
    if stride == 1 {
        return Ok(data);
    }
    Ok(data.iter().map(|t| t.subsample(stride)).collect::<invpde::Result<_>>()?)
}

fn spatial_dims(traj: &Trajectory) -> usize {
    if traj.spec.ny == 1 {
        1
    } else {
        2
    }
}

/// Coefficient table: `component,term,coefficient` to 4 decimals, retained terms only.
pub fn coefficient_csv(pde: &DiscoveredPDE) -> String {
    let mut out = String::from("component,term,coefficient\n");
    for c in 0..pde.components.len() {
        for (t, v) in pde.retained(c) {
            let _ = writeln!(out, "{},{},{:.4}", component_name(c), t, v);
        }
    }
    out
}

/// Trains a network on the dataset and writes model, loss history and reports.
pub fn train(cfg: &ExperimentConfig, data_dir: &Path, out: &Path, force: bool, threshold: f64) -> CliResult<DiscoveredPDE> {
    let data = load_training_data(cfg, data_dir, cfg.time_stride)?;
    let first = &data[0];
    let net = cfg.net_config(first.n_components(), spatial_dims(first))?;
    prepare_out(out, force)?;
    let trained = match train_model(&net, &cfg.train, &data) {
        Ok(t) => t,
        Err(invpde::Error::TrainingDiverged { epoch, reason, history }) => {
            write_loss_csv(&history, out.join(LOSS))?;
            return Err(runtime(format!(
                "training diverged at epoch {epoch}: {reason}; partial loss history in {}",
                out.join(LOSS).display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    let file = ModelFile {
        experiment: cfg.experiment,
        scheme: cfg.train.scheme,
        accuracy_order: cfg.train.accuracy_order,
        dt: first.dt,
        dx: first.spec.dx,
        dy: first.spec.dy,
        model: trained.model,
    };
    file.write(&out.join(MODEL))?;
    write_loss_csv(&trained.history, out.join(LOSS))?;
    let pde = extract_pde(&file.model, threshold);
    write_text(&out.join(REPORT), &(pde.to_json() + "\n"))?;
    write_text(&out.join(COEFFICIENTS), &coefficient_csv(&pde))?;
    Ok(pde)
}

/// Comparison tables across models trained on the same experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub coefficients: String,
    pub counts: String,
}

fn labels_for(paths: &[PathBuf]) -> Vec<String> {
    let mut labels: Vec<String> = Vec::new();
    for p in paths {
        let stem = if p.file_stem().is_some_and(|s| s == "model") {
            p.parent().and_then(|d| d.file_name())
        } else {
            p.file_stem()
        };
        let base = stem.map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
        let mut label = base.clone();
        let mut k = 2;
        while labels.contains(&label) {
            label = format!("{base}_{k}");
            k += 1;
        }
        labels.push(label);
    }
    labels
}

pub fn compare(models: &[ModelFile], labels: &[String], threshold: f64) -> CliResult<Comparison> {
    let first = models.first().ok_or_else(|| usage("report needs at least one model"))?;
    for m in &models[1..] {
        if m.experiment != first.experiment
            || m.scheme != first.scheme
            || m.model.n_components() != first.model.n_components()
        {
            return Err(usage(format!(
                "models come from different experiments ({} {:?} vs {} {:?})",
                first.experiment.label(),
                first.scheme,
                m.experiment.label(),
                m.scheme
            )));
        }
    }
    let pdes: Vec<DiscoveredPDE> = models.iter().map(|m| extract_pde(&m.model, threshold)).collect();
    let header = labels.join(",");
    let mut coefficients = format!("component,term,{header}\n");
    for c in 0..first.model.n_components() {
        let terms: BTreeSet<&CandidateTerm> = pdes.iter().flat_map(|p| p.retained(c).map(|(t, _)| t)).collect();
        for t in terms {
            let _ = write!(coefficients, "{},{}", component_name(c), t);
            for p in &pdes {
                let _ = write!(coefficients, ",{:.4}", p.components[c].get(t).copied().unwrap_or(0.0));
            }
            coefficients.push('\n');
        }
    }
    let mut counts = format!("threshold,{header}\n");
    for thr in COUNT_THRESHOLDS {
        let _ = write!(counts, "{thr:e}");
        for m in models {
            let _ = write!(counts, ",{}", extract_pde(&m.model, thr).remaining_count);
        }
        counts.push('\n');
    }
    Ok(Comparison { coefficients, counts })
}

pub fn report(paths: &[PathBuf], out: Option<&Path>, force: bool, threshold: f64) -> CliResult<Comparison> {
    let models = paths.iter().map(|p| ModelFile::read(p)).collect::<CliResult<Vec<_>>>()?;
    let cmp = compare(&models, &labels_for(paths), threshold)?;
    if let Some(dir) = out {
        prepare_out(dir, force)?;
        write_text(&dir.join(COEFFICIENTS), &cmp.coefficients)?;
        write_text(&dir.join(COUNTS), &cmp.counts)?;
    }
    Ok(cmp)
}

/// Checks the model's (or the generating equation's) right-hand side for frame covariance.
pub fn verify_invariance(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    model: Option<&Path>,
    threshold: f64,
) -> CliResult<CovarianceReport> {
    let manifest = Manifest::load(data_dir)?;
    let inv = &cfg.invariance;
    let file = manifest
        .files
        .get(inv.trajectory)
        .ok_or_else(|| usage(format!("dataset has no trajectory {}", inv.trajectory)))?;
    let mut traj = read_trajectory(data_dir.join(file))?;
    if let Some(s) = inv.time_stride {
        traj = traj.subsample(s)?;
    }
    let (terms, scheme): (Vec<TermMap>, Scheme) = match model {
        Some(p) => {
            let m = ModelFile::read(p)?;
            if m.experiment != manifest.experiment {
                return Err(usage(format!(
                    "model was trained on {} data, dataset holds {}",
                    m.experiment.label(),
                    manifest.experiment.label()
                )));
            }
            let pde = extract_pde(&m.model, threshold);
            let terms = (0..pde.components.len())
                .map(|c| pde.retained(c).map(|(t, v)| (t.clone(), v)).collect())
                .collect();
            (terms, m.scheme)
        }
        None => {
            if cfg.experiment != manifest.experiment {
                return Err(usage("dataset and config name different experiments"));
            }
            (cfg.truth_terms()?, cfg.train.scheme)
        }
    };
    match scheme {
        Scheme::FirstOrder => Ok(check_galileo_covariance(&traj, inv.c, &terms)?),
        Scheme::SecondOrder => {
            let c0 = match (inv.c0, cfg.experiment) {
                (Some(c0), _) => c0,
                (None, Experiment::SineGordon) => cfg.sine_gordon_spec()?.c2.sqrt(),
                (None, _) => return Err(usage("invariance.c0 is required for Lorentz checks")),
            };
            let bp = BoostParams::lorentz(inv.c, c0)?;
            let rhs = terms.first().ok_or_else(|| usage("no right-hand side to check"))?;
            Ok(check_lorentz_covariance(&traj, &bp, rhs)?)
        }
    }
}

pub fn expand(path: &Path, threshold: f64) -> CliResult<DiscoveredPDE> {
    Ok(extract_pde(&ModelFile::read(path)?.model, threshold))
}


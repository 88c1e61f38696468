use invpde::grid::{read_trajectory, write_trajectory, Field, GridSpec};
use invpde::rollout::{rollout, Initial, PdeModel, RolloutConfig, Scheme, Stepper};
use invpde::solvers::{burgers_dataset, BurgersSpec};
use invpde::stencil::Partial;
use invpde::symnet::{Atom, NetConfig, NetKind, NetParams};
use invpde::train::{extract_pde, train_model, TrainConfig};

fn heat_model(cfg: &NetConfig) -> PdeModel {
    let mut p = NetParams::zeros(cfg);
    let s = NetParams::readout_slot(cfg, Atom::Deriv(0, Partial::new(2, 0))).unwrap();
    p.readout_mut(cfg)[s] = 1.0;
    PdeModel::from_base(cfg, vec![p]).unwrap()
}

#[test]
fn euler_rollout_converges_at_first_order() {
    let cfg = NetConfig::with_defaults(NetKind::Galileo, 1, 0, 1, 1, 2).unwrap();
    let model = heat_model(&cfg);
    let spec = GridSpec::square_2pi(32).unwrap();
    let u0 = Field::from_fn(spec, 1, |_, x, _| x.sin());
    let probe = spec.index(8, 0);

    // sin x is an eigenvector of the discrete Laplacian, so the semi-discrete
    // solution is exp(λt) sin x with λ read off the right-hand side.
    let stepper = Stepper::new(&model, spec, RolloutConfig::new(0.1, 1, Scheme::FirstOrder)).unwrap();
    let lambda = stepper.rhs(&u0)[0][probe] / u0.components[0][probe];
    assert!((lambda + 1.0).abs() < 1e-3);

    let t_end = 0.5;
    let error = |steps: usize| {
        let rc = RolloutConfig::new(t_end / steps as f64, steps, Scheme::FirstOrder);
        let traj = rollout(Initial::One(u0.clone()), &model, &rc).unwrap();
        let exact = (lambda * t_end).exp() * u0.components[0][probe];
        (traj.snapshots[steps].components[0][probe] - exact).abs()
    };
    for steps in [10, 20, 40] {
        let ratio = error(steps) / error(2 * steps);
        assert!((1.6..=2.4).contains(&ratio), "ratio {ratio} at {steps} steps");
    }
}

fn heat_spec() -> BurgersSpec {
    BurgersSpec {
        nu: 0.1,
        grid: GridSpec::square_2pi(16).unwrap(),
        t_end: 0.5,
        solver_dt: 0.005,
        save_every: 4,
        advection: false,
    }
}

#[test]
fn training_from_files_reduces_loss_and_is_deterministic() {
    let spec = heat_spec();
    let data = burgers_dataset(&spec, &[1, 2, 3], 1.0, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let loaded: Vec<_> = data
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let path = dir.path().join(format!("traj_{i}.pded"));
            write_trajectory(t, &path).unwrap();
            read_trajectory(&path).unwrap()
        })
        .collect();
    assert_eq!(loaded, data);

    let net = NetConfig::with_defaults(NetKind::Galileo, 1, 0, 2, 2, 2).unwrap();
    let cfg = TrainConfig {
        epochs: 100,
        learning_rate: 0.01,
        n_blocks: 2,
        batch_size: 4,
        seed: 11,
        ..TrainConfig::default()
    };
    let out = train_model(&net, &cfg, &loaded).unwrap();
    assert_eq!(out.history.len(), cfg.epochs);
    assert!(out.history.iter().all(|r| r.loss.is_finite()));

    let median = |rs: &[f64]| {
        let mut v = rs.to_vec();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let losses: Vec<f64> = out.history.iter().map(|r| r.loss).collect();
    let tenth = losses.len() / 10;
    let (head, tail) = (median(&losses[..tenth]), median(&losses[losses.len() - tenth..]));
    assert!(tail < head, "loss went from {head} to {tail}");

    let again = train_model(&net, &cfg, &loaded).unwrap();
    assert_eq!(again.model, out.model);
    assert_eq!(again.history, out.history);

    let pde = extract_pde(&out.model, 1e-6);
    assert!(pde.coefficient(0, "u_xx") > 0.0, "{}", pde.to_json());
}

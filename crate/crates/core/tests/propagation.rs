mod common;

use common::{constructed, flow_setup, lq, lq_coefficients, lq_oracle_profile};
use dmfg::hamiltonian::registry::ModelSpec;
use dmfg::mfg::SolverConfig;
use dmfg::propagation::{propagate, simulate_flow, PropagationConfig, Verdict};

fn solver() -> SolverConfig {
    SolverConfig {
        tol: 1e-10,
        ..Default::default()
    }
}

fn pconfig() -> PropagationConfig {
    PropagationConfig {
        solver: SolverConfig {
            damping: 1.0,
            ..solver()
        },
        ..Default::default()
    }
}

#[test]
fn free_particles_diffuse() {
    let model = ModelSpec::Free { g: 0.0, dim: 1 }.build().unwrap();
    let (sol, start) = flow_setup(&model, 2000, 80, 40, 5, &solver());
    let traj = simulate_flow(&sol, &start, model.hamiltonian.as_ref(), model.terminal.as_ref(), &pconfig(), 5).unwrap();
    let var = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
    };
    let v0 = var(&traj.positions[0]);
    for (c, &t) in traj.times.iter().enumerate().skip(1) {
        let grown = var(&traj.positions[c]) - v0;
        assert!((grown / t - 1.0).abs() < 0.1, "t={t}: {grown}");
    }
}

#[test]
fn zero_tangents_give_zero_profile() {
    let model = lq();
    let (sol, start) = flow_setup(&model, 100, 60, 30, 1, &solver());
    let start = start.with_tangents(vec![0.0; 100]).unwrap();
    let run = propagate(&sol, &start, model.hamiltonian.as_ref(), model.terminal.as_ref(), &pconfig(), 1).unwrap();
    assert!(run.trajectory.tangents.iter().flatten().all(|d| *d == 0.0));
    assert!(run.profile.values.iter().all(|v| *v == 0.0));
    assert_eq!(run.profile.verdict, Verdict::Pass);
    assert!(run.rate.intervals.iter().all(|i| i.decrement == 0.0 && i.integral == 0.0));
}

#[test]
fn lq_tangents_follow_linear_ode() {
    let model = lq();
    let (sol, start) = flow_setup(&model, 400, 100, 100, 3, &solver());
    let run = propagate(&sol, &start, model.hamiltonian.as_ref(), model.terminal.as_ref(), &pconfig(), 3).unwrap();
    let co = lq_coefficients(&start.base);
    let traj = &run.trajectory;
    let eta = &traj.tangents[0];
    let mean_eta: f64 = traj.weights.iter().zip(eta).map(|(w, e)| w * e).sum();
    for (c, &t) in traj.times.iter().enumerate() {
        let scale = eta.iter().map(|e| co.tangent(t, *e, mean_eta).abs()).fold(0.0, f64::max);
        for (i, &e) in eta.iter().enumerate() {
            let exact = co.tangent(t, e, mean_eta);
            assert!((traj.tangents[c][i] - exact).abs() < 0.02 * scale, "t={t} particle {i}");
        }
    }
    let oracle = lq_oracle_profile(&co, traj);
    for (v, o) in run.profile.values.iter().zip(&oracle) {
        assert!((v / o - 1.0).abs() < 0.05, "{v} vs {o}");
    }
    assert_eq!(run.profile.verdict, Verdict::Pass);
    assert_eq!(run.rate.verdict, Verdict::Pass);
}

#[test]
fn constructed_profile_dissipates_and_is_reproducible() {
    let model = constructed();
    let (sol, start) = flow_setup(&model, 300, 80, 60, 8, &solver());
    let (h, g) = (model.hamiltonian.as_ref(), model.terminal.as_ref());
    let a = propagate(&sol, &start, h, g, &pconfig(), 8).unwrap();
    assert!(a.passed(), "{:?}", a.profile.values);
    let b = propagate(&sol, &start, h, g, &pconfig(), 8).unwrap();
    assert_eq!(a, b);
    let c = propagate(&sol, &start, h, g, &pconfig(), 9).unwrap();
    assert_ne!(a.trajectory.positions, c.trajectory.positions);
}

mod common;

use common::{constructed, lq, lq_setup};
use dmfg::hamiltonian::{QuadraticMeanCoupling, SeparableHamiltonian};
use dmfg::master::{
    d_mu_V, eval_V, lipschitz_estimate, perturb_group, sensitivities, solve_from, MasterEvalConfig, Metric,
};
use dmfg::mfg::{Grid1D, SolverConfig};
use dmfg::DiscreteMeasure;

fn solver() -> SolverConfig {
    SolverConfig {
        tol: 1e-11,
        ..Default::default()
    }
}

#[test]
fn zero_data_gives_zero_value() {
    let cfg = MasterEvalConfig::new(Grid1D::new(-5.0, 5.0, 50, 0.0, 1.0, 20).unwrap(), solver());
    let h = SeparableHamiltonian::free(1);
    let g = QuadraticMeanCoupling::new(1, 0.0, 0.0);
    let mu = DiscreteMeasure::uniform(1, vec![-1.0, 0.5]).unwrap();
    assert_eq!(eval_V(0.3, 0.2, &mu, &h, &g, &cfg).unwrap(), 0.0);
    let rep = lipschitz_estimate(0.0, 0.2, &mu, Metric::W2, 3, 1, &h, &g, &cfg).unwrap();
    assert_eq!(rep.max_ratio, 0.0);
}

#[test]
fn value_matches_oracle_and_terminal_cost() {
    let (mu0, grid) = lq_setup(7, 120, 80);
    let cfg = MasterEvalConfig::new(grid, solver());
    let model = lq();
    let (h, g) = (model.hamiltonian.as_ref(), model.terminal.as_ref());
    for (t0, x) in [(0.0, 0.5), (0.5, 1.5), (0.5, -0.5)] {
        // the oracle is exact for any start whose mean is m0: restart it at t0
        let v = eval_V(t0, x, &mu0, h, g, &cfg).unwrap();
        let spec = dmfg::lq_oracle::LqSpec::for_measure(1.0, 0.5, 1.0, 1.0 - t0, &mu0);
        let co_t = dmfg::lq_oracle::solve_lq(&spec, 10_000).unwrap();
        let oracle = co_t.value_at_mean(0.0, x, mu0.mean()[0]);
        assert!((v - oracle).abs() < 1e-2, "t0={t0} x={x}: {v} vs {oracle}");
    }
    // one step before the horizon V is within O(dt) of G
    let t0 = 1.0 - grid.dt();
    for x in [-1.0, 0.0, 2.0] {
        let v = eval_V(t0, x, &mu0, h, g, &cfg).unwrap();
        assert!((v - 0.5 * x * x).abs() < 5.0 * grid.dt(), "x={x}: {v}");
    }
}

#[test]
fn measure_free_model_has_zero_derivative() {
    let (mu0, grid) = lq_setup(2, 60, 30);
    let cfg = MasterEvalConfig::new(grid, solver());
    let h = SeparableHamiltonian::lq(1, 1.0, 0.0);
    let g = QuadraticMeanCoupling::new(1, 1.0, 0.0);
    let d = d_mu_V(0.0, 0.4, &mu0, 5, &h, &g, &cfg).unwrap();
    assert!(d[0].abs() < 1e-8, "{d:?}");
}

/// Atoms sitting on cell faces, so that perturbations up to `dx / 2` stay
/// inside one deposition cell and the discrete value is smooth in them.
fn face_cloud(grid: &Grid1D, faces: &[usize], masses: &[f64]) -> DiscreteMeasure {
    let atoms = faces.iter().map(|&j| grid.face(j)).collect();
    DiscreteMeasure::from_masses(1, atoms, masses.to_vec()).unwrap()
}

#[test]
fn splitting_an_atom_leaves_derivative_unchanged() {
    let grid = Grid1D::for_measure(&DiscreteMeasure::uniform(1, vec![0.0, 2.0]).unwrap(), 3.0, 0.0, 1.0, 80, 40).unwrap();
    let cfg = MasterEvalConfig::new(grid, solver());
    let model = lq();
    let (h, g) = (model.hamiltonian.as_ref(), model.terminal.as_ref());
    let faces = [30, 36, 41, 47];
    let mu = face_cloud(&grid, &faces, &[0.2, 0.3, 0.4, 0.1]);
    let split = face_cloud(&grid, &[30, 36, 41, 41, 47], &[0.2, 0.3, 0.2, 0.2, 0.1]);
    for x in [0.0, 1.0] {
        let a = d_mu_V(0.0, x, &mu, 2, h, g, &cfg).unwrap()[0];
        let b = d_mu_V(0.0, x, &split, 3, h, g, &cfg).unwrap()[0];
        assert!((a - b).abs() < 1e-3 * (1.0 + a.abs()), "x={x}: {a} vs {b}");
    }
}

#[test]
fn derivative_predicts_joint_shifts_to_second_order() {
    let grid = Grid1D::for_measure(&DiscreteMeasure::uniform(1, vec![0.0, 2.0]).unwrap(), 3.0, 0.0, 1.0, 80, 40).unwrap();
    let cfg = MasterEvalConfig::new(grid, solver());
    let faces = [28, 33, 39, 44, 50];
    let masses = [0.1, 0.25, 0.3, 0.2, 0.15];
    let dir = [1.0, -0.6, 0.8, 0.3, -1.0];
    for model in [lq(), constructed()] {
        let (h, g) = (model.hamiltonian.as_ref(), model.terminal.as_ref());
        let mu = face_cloud(&grid, &faces, &masses);
        let base = solve_from(0.0, &mu, h, g, &cfg, None).unwrap();
        let groups: Vec<Vec<usize>> = (0..mu.len()).map(|k| vec![k]).collect();
        let sens = sensitivities(&base, &mu, &groups, h, g, &cfg).unwrap();
        for x in [0.3, 1.2] {
            let v0 = base.value(0, x).unwrap();
            let slope: f64 = (0..mu.len()).map(|k| mu.weight(k) * sens[k].d_mu(x) * dir[k]).sum();
            let residual = |s: f64| {
                let atoms: Vec<f64> = mu.atoms_flat().iter().zip(&dir).map(|(a, d)| a + s * d).collect();
                let nu = DiscreteMeasure::from_flat(1, atoms, mu.weights().to_vec()).unwrap();
                let v = solve_from(0.0, &nu, h, g, &cfg, Some(&base)).unwrap().value(0, x).unwrap();
                v - v0 - s * slope
            };
            let s = 0.4 * grid.dx();
            let ratio = residual(s) / residual(s / 2.0);
            assert!((3.0..=5.0).contains(&ratio), "x={x}: ratio {ratio}");
        }
    }
}

#[test]
fn value_gradient_is_displacement_monotone() {
    let (mu0, grid) = lq_setup(4, 100, 50);
    let cfg = MasterEvalConfig::new(grid, solver());
    let mu = DiscreteMeasure::uniform(1, mu0.atoms_flat()[..16].to_vec()).unwrap();
    for model in [lq(), constructed()] {
        let (h, g) = (model.hamiltonian.as_ref(), model.terminal.as_ref());
        let grad_at = |nu: &DiscreteMeasure| {
            let sol = solve_from(0.0, nu, h, g, &cfg, None).unwrap();
            let du = sol.grid.gradient(&sol.u[0]);
            nu.atoms_flat().iter().map(|&x| sol.grid.interp_linear(&du, x)).collect::<Vec<_>>()
        };
        let d1 = grad_at(&mu);
        for (k, shift) in [(0, 0.3), (1, -0.8), (2, 1.5)] {
            let nu = perturb_group(&mu, &[k * 3, 7, 11], shift).unwrap();
            let d2 = grad_at(&nu);
            let form: f64 = (0..mu.len())
                .map(|i| mu.weight(i) * (d1[i] - d2[i]) * (mu.atom(i)[0] - nu.atom(i)[0]))
                .sum();
            assert!(form >= -1e-6, "shift {shift}: {form}");
        }
    }
}

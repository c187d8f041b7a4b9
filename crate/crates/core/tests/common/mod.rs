//! Shared helpers for the integration tests: model builders and
//! finite-difference oracles.
#![allow(dead_code)]

use std::sync::Arc;

use dmfg::hamiltonian::registry::{Model, ModelSpec};
use dmfg::hamiltonian::{legendre_lagrangian, Hamiltonian};
use dmfg::measures::perturb_atom;
use dmfg::DiscreteMeasure;

pub const KNOTS: [f64; 2] = [1.0, 2.0];

pub fn lq_spec() -> ModelSpec {
    ModelSpec::Lq {
        q: 1.0,
        c: 0.5,
        g: 1.0,
        dim: 1,
    }
}

pub fn constructed_spec() -> ModelSpec {
    ModelSpec::Constructed {
        r0: 1.0,
        c0: 4.0,
        kappa: 1.0,
        omega: 1.0,
        dim: 1,
        g: 1.0,
        gamma: 0.0,
    }
}

pub fn lq() -> Model {
    lq_spec().build().unwrap()
}

pub fn constructed() -> Model {
    constructed_spec().build().unwrap()
}

/// Fourth-order central difference.
pub fn fd(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (8.0 * (f(x + h) - f(x - h)) - (f(x + 2.0 * h) - f(x - 2.0 * h))) / (12.0 * h)
}

/// `d_mu U(mu, x_k)` in d = 1 by moving atom `k`.
pub fn fd_lions(u: impl Fn(&DiscreteMeasure) -> f64, mu: &DiscreteMeasure, k: usize, h: f64) -> f64 {
    fd(|s| u(&perturb_atom(mu, k, &[s]).unwrap()), 0.0, h) / mu.weight(k)
}

/// Keep finite-difference stencils away from the constructed model's
/// C^2 seams at `|x| = R0` and `|x| = R0 + 1`.
pub fn off_knots(x: f64) -> bool {
    KNOTS.iter().all(|k| (x.abs() - k).abs() > 0.02)
}

/// One Legendre identity: name, Hamiltonian side, Lagrangian side.
pub type Identity = (&'static str, f64, f64);

/// Every identity linking derivatives of `H` at `(x, mu, p)` to those of
/// `L` at `a* = -d_p H`, in d = 1, with `L` differentiated numerically
/// through the Newton-computed transform. `y` is atom `k` of `mu`.
pub fn legendre_identities(h: &Arc<dyn Hamiltonian>, x: f64, mu: &DiscreteMeasure, k: usize, p: f64) -> Vec<Identity> {
    let step = 1e-3;
    let m = h.bind(mu);
    let y = mu.atom(k)[0];
    let mut buf = [0.0];
    let mut grab = |f: &dyn Fn(&mut [f64])| {
        f(&mut buf);
        buf[0]
    };
    let hx = grab(&|o| h.grad_x(&[x], &m, &[p], o));
    let hp = grab(&|o| h.grad_p(&[x], &m, &[p], o));
    let hxx = grab(&|o| h.hess_xx(&[x], &m, &[p], o));
    let hxp = grab(&|o| h.hess_xp(&[x], &m, &[p], o));
    let hpp = grab(&|o| h.hess_pp(&[x], &m, &[p], o));
    let hmu = grab(&|o| h.lions(&[x], &m, &[y], &[p], o));
    let hxmu = grab(&|o| h.lions_x(&[x], &m, &[y], &[p], o));
    let hpmu = grab(&|o| h.lions_p(&[x], &m, &[y], &[p], o));

    let a = -hp;
    let l = |x: f64, mu: &DiscreteMeasure, a: f64| legendre_lagrangian(h.as_ref(), &[x], mu, &[a]).unwrap();
    let lx = fd(|s| l(s, mu, a), x, step);
    let la = |x: f64, mu: &DiscreteMeasure| fd(|s| l(x, mu, s), a, step);
    let laa = fd(|s| fd(|t| l(x, mu, t), s, step), a, step);
    let lxx = fd(|s| fd(|t| l(t, mu, a), s, step), x, step);
    let lxa = fd(|s| la(s, mu), x, step);
    let lmu = fd_lions(|nu| l(x, nu, a), mu, k, step);
    let lxmu = fd(|s| fd_lions(|nu| l(s, nu, a), mu, k, step), x, step);
    let lamu = fd_lions(|nu| la(x, nu), mu, k, step);

    vec![
        ("d_x H = -d_x L", hx, -lx),
        ("d_mu H = -d_mu L", hmu, -lmu),
        ("d_pp H = 1 / d_aa L", hpp, 1.0 / laa),
        ("d_xp H = d_xa L / d_aa L", hxp, lxa / laa),
        ("d_xx H = -d_xx L + d_xa L^2 / d_aa L", hxx, -lxx + lxa * lxa / laa),
        ("d_xmu H = -d_xmu L + d_xa L d_amu L / d_aa L", hxmu, -lxmu + lxa * lamu / laa),
        ("d_pmu H = d_amu L / d_aa L", hpmu, lamu / laa),
    ]
}

/// Relative error with a unit floor on the scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// The LQ benchmark set-up: 64 atoms of N(1, 0.25), grid covering the
/// support with drift bound 3 on [0, 1].
pub fn lq_setup(seed: u64, nx: usize, nt: usize) -> (DiscreteMeasure, dmfg::mfg::Grid1D) {
    let mu0 = dmfg::measures::sample_gaussian(64, &[1.0], 0.5, seed).unwrap();
    let grid = dmfg::mfg::Grid1D::for_measure(&mu0, 3.0, 0.0, 1.0, nx, nt).unwrap();
    (mu0, grid)
}

pub fn lq_coefficients(mu0: &DiscreteMeasure) -> dmfg::lq_oracle::LqCoefficients {
    use dmfg::lq_oracle::{solve_lq, LqSpec, DEFAULT_ODE_STEPS};
    solve_lq(&LqSpec::for_measure(1.0, 0.5, 1.0, 1.0, mu0), DEFAULT_ODE_STEPS).unwrap()
}

pub const QUOTIENT_STEPS: [f64; 3] = [1e-1, 1e-2, 1e-3];

/// Observed order of the Lasry-Lions second-difference quotient over
/// [`QUOTIENT_STEPS`]: `log10(e(1e-2) / e(1e-3))`, the finest pair, provided
/// the errors decrease along the whole sequence (otherwise 0). A finest
/// error at the roundoff floor of a quotient divided by `1e-6` counts as
/// converged.
pub fn quotient_order(u: &dyn dmfg::hamiltonian::MeasureFunction, s: &dmfg::TangentSample) -> (f64, Vec<f64>) {
    use dmfg::monotonicity::{lasry_lions_form, lasry_lions_quotient};
    let exact = lasry_lions_form(u, s).unwrap();
    let errs: Vec<f64> = QUOTIENT_STEPS
        .iter()
        .map(|&e| (lasry_lions_quotient(u, s, e).unwrap() - exact).abs())
        .collect();
    if errs[2] < 1e-9 * (1.0 + exact.abs()) {
        return (f64::INFINITY, errs);
    }
    if !(errs[0] > errs[1] && errs[1] > errs[2]) {
        return (0.0, errs);
    }
    ((errs[1] / errs[2]).log10(), errs)
}

/// Three shipped surfaces with nontrivial measure dependence.
pub fn shipped_surfaces() -> Vec<(&'static str, Arc<dyn dmfg::hamiltonian::MeasureFunction>)> {
    use dmfg::hamiltonian::{CosineCoupling, FrozenMomentum};
    vec![
        ("cosine", Arc::new(CosineCoupling { dim: 1, q: 0.5, c: 0.7, k: 1.3 })),
        ("cosine_2d", Arc::new(CosineCoupling { dim: 2, q: 0.0, c: -0.4, k: 2.0 })),
        (
            "constructed_at_p",
            Arc::new(FrozenMomentum {
                h: constructed().hamiltonian,
                p: vec![0.7],
            }),
        ),
    ]
}

/// A solved equilibrium plus a tangent sample of `n` particles drawn from
/// N(1, 0.25), tangents `N(1, 0.25)`, on an `nx x nt` grid.
pub fn flow_setup(
    model: &Model,
    n: usize,
    nx: usize,
    nt: usize,
    seed: u64,
    solver: &dmfg::mfg::SolverConfig,
) -> (dmfg::mfg::MfgSolution, dmfg::TangentSample) {
    use dmfg::propagation::gaussian_tangents;
    let mu0 = dmfg::measures::sample_gaussian(n, &[1.0], 0.5, seed).unwrap();
    let grid = dmfg::mfg::Grid1D::for_measure(&mu0, 3.0, 0.0, 1.0, nx, nt).unwrap();
    let sol = dmfg::mfg::solve_mfg(model.hamiltonian.as_ref(), model.terminal.as_ref(), &mu0, &grid, solver).unwrap();
    let tangents = gaussian_tangents(n, 1.0, 0.5, seed);
    (sol, dmfg::TangentSample::new(mu0, tangents).unwrap())
}

/// Closed-form profile `a_t E|dX_t|^2 + P_t (E dX_t)^2` at the trajectory's
/// checkpoints, with `dX_t` from the oracle's linear ODE.
pub fn lq_oracle_profile(
    co: &dmfg::lq_oracle::LqCoefficients,
    traj: &dmfg::propagation::FlowTrajectory,
) -> Vec<f64> {
    let w = &traj.weights;
    let eta = &traj.tangents[0];
    let mean_eta: f64 = w.iter().zip(eta).map(|(w, e)| w * e).sum();
    traj.times
        .iter()
        .map(|&t| {
            let d: Vec<f64> = eta.iter().map(|&e| co.tangent(t, e, mean_eta)).collect();
            let second: f64 = w.iter().zip(&d).map(|(w, v)| w * v * v).sum();
            let mean: f64 = w.iter().zip(&d).map(|(w, v)| w * v).sum();
            co.profile(t, second, mean)
        })
        .collect()
}

mod common;

use std::sync::Arc;

use common::{constructed, fd, fd_lions, legendre_identities, lq, off_knots, rel_err};
use dmfg::hamiltonian::registry::{CouplingSpec, KineticSpec, ModelSpec};
use dmfg::hamiltonian::{legendre_lagrangian, Hamiltonian, MeasureFunction};
use dmfg::DiscreteMeasure;
use proptest::prelude::*;

fn models() -> Vec<(&'static str, Arc<dyn Hamiltonian>, Arc<dyn MeasureFunction>)> {
    let sep = ModelSpec::Separable {
        kinetic: KineticSpec::LogCosh { k: 1.0, s: 2.0 },
        coupling: CouplingSpec::Cosine { q: 0.5, c: 0.7, k: 1.3 },
        terminal: CouplingSpec::QuadraticMean { q: 1.0, c: 0.4 },
        dim: 1,
    }
    .build()
    .unwrap();
    [("lq", lq()), ("constructed", constructed()), ("separable", sep)]
        .into_iter()
        .map(|(n, m)| (n, m.hamiltonian, m.terminal))
        .collect()
}

fn cloud() -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec((-2.5f64..2.5, 0.1f64..1.0), 2..6).prop_filter_map("seams", |v| {
        if !v.iter().all(|(a, _)| off_knots(*a)) {
            return None;
        }
        let (atoms, w): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        DiscreteMeasure::from_masses(1, atoms, w).ok()
    })
}

fn one(f: impl Fn(&mut [f64])) -> f64 {
    let mut b = [0.0];
    f(&mut b);
    b[0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hamiltonian_derivatives_match_differences(mu in cloud(), x in -2.5f64..2.5, p in -3.0f64..3.0, k in 0usize..6) {
        prop_assume!(off_knots(x));
        let k = k % mu.len();
        let y = mu.atom(k)[0];
        let h0 = 1e-3;
        for (name, h, _) in models() {
            let m = h.bind(&mu);
            let v = |x: f64, mu: &DiscreteMeasure, p: f64| h.value(&[x], &h.bind(mu), &[p]);
            let checks = [
                ("grad_x", one(|o| h.grad_x(&[x], &m, &[p], o)), fd(|s| v(s, &mu, p), x, h0)),
                ("grad_p", one(|o| h.grad_p(&[x], &m, &[p], o)), fd(|s| v(x, &mu, s), p, h0)),
                ("hess_xx", one(|o| h.hess_xx(&[x], &m, &[p], o)), fd(|s| one(|o| h.grad_x(&[s], &m, &[p], o)), x, h0)),
                ("hess_xp", one(|o| h.hess_xp(&[x], &m, &[p], o)), fd(|s| one(|o| h.grad_x(&[x], &m, &[s], o)), p, h0)),
                ("hess_pp", one(|o| h.hess_pp(&[x], &m, &[p], o)), fd(|s| one(|o| h.grad_p(&[x], &m, &[s], o)), p, h0)),
                ("lions", one(|o| h.lions(&[x], &m, &[y], &[p], o)), fd_lions(|nu| v(x, nu, p), &mu, k, h0)),
                ("lions_x", one(|o| h.lions_x(&[x], &m, &[y], &[p], o)), fd(|s| one(|o| h.lions(&[s], &m, &[y], &[p], o)), x, h0)),
                ("lions_p", one(|o| h.lions_p(&[x], &m, &[y], &[p], o)), fd(|s| one(|o| h.lions(&[x], &m, &[y], &[s], o)), p, h0)),
            ];
            for (what, exact, approx) in checks {
                prop_assert!(rel_err(exact, approx) < 1e-5, "{name} {what}: {exact} vs {approx}");
            }
        }
    }

    #[test]
    fn measure_function_derivatives_match_differences(mu in cloud(), x in -2.5f64..2.5, k in 0usize..6) {
        prop_assume!(off_knots(x));
        let k = k % mu.len();
        let y = mu.atom(k)[0];
        for (name, _, g) in models() {
            let m = g.bind(&mu);
            let checks = [
                ("grad_x", one(|o| g.grad_x(&[x], &m, o)), fd(|s| g.value(&[s], &m), x, 1e-3)),
                ("hess_xx", one(|o| g.hess_xx(&[x], &m, o)), fd(|s| one(|o| g.grad_x(&[s], &m, o)), x, 1e-3)),
                ("lions", one(|o| g.lions(&[x], &m, &[y], o)), fd_lions(|nu| g.value(&[x], &g.bind(nu)), &mu, k, 1e-3)),
                ("lions_x", one(|o| g.lions_x(&[x], &m, &[y], o)), fd(|s| one(|o| g.lions(&[s], &m, &[y], o)), x, 1e-3)),
            ];
            for (what, exact, approx) in checks {
                prop_assert!(rel_err(exact, approx) < 1e-5, "{name} terminal {what}: {exact} vs {approx}");
            }
        }
    }

    #[test]
    fn p_convexity_floor_holds(mu in cloud(), x in -4.0f64..4.0, p in -10.0f64..10.0) {
        for (name, h, _) in models() {
            let c0 = h.constants().convexity;
            let hpp = one(|o| h.hess_pp(&[x], &h.bind(&mu), &[p], o));
            prop_assert!(hpp >= c0 - 1e-12, "{name}: {hpp} < {c0}");
        }
    }

    #[test]
    fn double_legendre_recovers_h(mu in cloud(), x in -2.5f64..2.5, p in -3.0f64..3.0) {
        for (name, h, _) in models() {
            let l = |a: f64| legendre_lagrangian(h.as_ref(), &[x], &mu, &[a]).unwrap();
            // sup_a [-p a - L(a)] is attained at a = -d_p H(p)
            let a_star = -one(|o| h.grad_p(&[x], &h.bind(&mu), &[p], o));
            let conj = -p * a_star - l(a_star);
            let direct = h.value(&[x], &h.bind(&mu), &[p]);
            prop_assert!((conj - direct).abs() < 1e-8 * (1.0 + direct.abs()), "{name}: {conj} vs {direct}");
            for da in [-0.3, 0.2] {
                prop_assert!(-p * (a_star + da) - l(a_star + da) <= conj + 1e-12);
            }
        }
    }

    #[test]
    fn legendre_identities_hold(mu in cloud(), x in -2.5f64..2.5, p in -3.0f64..3.0, k in 0usize..6) {
        prop_assume!(off_knots(x));
        let k = k % mu.len();
        for (name, h, _) in models() {
            for (id, lhs, rhs) in legendre_identities(&h, x, &mu, k, p) {
                prop_assert!(rel_err(lhs, rhs) < 1e-6, "{name} {id}: {lhs} vs {rhs}");
            }
        }
    }
}

#[test]
fn quadratic_lagrangian_by_brute_force() {
    let h = lq().hamiltonian;
    let mu = DiscreteMeasure::dirac(&[0.0]);
    for a in [-2.0, -0.5, 0.0, 0.7, 3.0] {
        // L(x = 0, a) = sup_p [-a p - p^2 / 2] on a fine grid
        let brute = (0..=20_000)
            .map(|i| -10.0 + 1e-3 * i as f64)
            .map(|p| -a * p - 0.5 * p * p)
            .fold(f64::NEG_INFINITY, f64::max);
        let l = legendre_lagrangian(h.as_ref(), &[0.0], &mu, &[a]).unwrap();
        assert!((l - brute).abs() < 1e-6 && (l - 0.5 * a * a).abs() < 1e-12);
    }
}

#[test]
fn constructed_model_rejects_small_constant() {
    let spec = ModelSpec::Constructed {
        r0: 1.0,
        c0: 3.0,
        kappa: 1.0,
        omega: 1.0,
        dim: 1,
        g: 1.0,
        gamma: 0.0,
    };
    let err = spec.build().unwrap_err().to_string();
    assert!(err.contains("3.66"), "{err}");
}

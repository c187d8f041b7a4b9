//! Acceptance suite: one line per criterion, nonzero exit on any failure.
//! Run with `cargo test -p dmfg-core --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use common::{
    constructed, flow_setup, legendre_identities, lq, lq_coefficients, lq_oracle_profile, lq_setup, off_knots,
    quotient_order, rel_err, shipped_surfaces,
};
use dmfg::hamiltonian::{
    CosineCoupling, Kinetic, MeasureFunction, QuadraticMeanCoupling, SeparableHamiltonian, WithQuadratic,
};
use dmfg::lq_oracle::flow_errors;
use dmfg::master::{lipschitz_estimate, sensitivities, solve_from, MasterEvalConfig, Metric};
use dmfg::mfg::{solve_mfg, SolverConfig};
use dmfg::monotonicity::{
    certify, displacement_form_hamiltonian, displacement_form_surface, lasry_lions_form, random_sample,
    search_violation, CertifyConfig, FeedbackFunction, Target, Verdict,
};
use dmfg::propagation::{propagate, PropagationConfig, Verdict as FlowVerdict};
use dmfg::DiscreteMeasure;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Undamped, tightly converged solves for perturbations of a known solution.
fn perturbation_solver() -> SolverConfig {
    SolverConfig {
        damping: 1.0,
        tol: 1e-10,
        ..Default::default()
    }
}

fn monotonicity_certification() -> Outcome {
    let start = Instant::now();
    let target = Target::Hamiltonian(constructed().hamiltonian);
    let cfg = CertifyConfig {
        trials: 1000,
        ..Default::default()
    };
    let cert = certify(&target, &cfg).unwrap();
    let search = search_violation(&target, &cfg, 200).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        cert.verdict == Verdict::Pass && search.verdict == Verdict::Pass && secs <= 60.0,
        format!(
            "certify min {:.3e}, search min {:.3e}, tol {:.0e} x scale, {secs:.1} s",
            cert.min_value, search.min_value, cert.tol
        ),
    )
}

fn separable_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let couplings: Vec<Arc<dyn MeasureFunction>> = vec![
        Arc::new(QuadraticMeanCoupling::new(1, 1.0, -2.0)),
        Arc::new(CosineCoupling { dim: 1, q: 0.5, c: 0.7, k: 1.3 }),
        Arc::new(CosineCoupling { dim: 2, q: -0.3, c: -1.1, k: 0.8 }),
    ];
    let mut worst = 0.0f64;
    for t in 0..100 {
        let f = couplings[t % couplings.len()].clone();
        let h = SeparableHamiltonian::new(Kinetic::Quadratic { k: 1.0 }, f.clone());
        let s = random_sample(f.dim(), &mut rng, t, 1.5, 32).unwrap();
        let phi = FeedbackFunction::random(f.dim(), &mut rng, 10.0, 10.0);
        let lhs = displacement_form_hamiltonian(&h, &s, &phi).unwrap();
        let rhs = -displacement_form_surface(f.as_ref(), &s).unwrap();
        worst = worst.max((lhs - rhs).abs() / (1.0 + rhs.abs()));
    }
    outcome(worst <= 1e-12, format!("max relative gap {worst:.2e} over 100 samples"))
}

fn dichotomy() -> Outcome {
    let start = Instant::now();
    let cfg = CertifyConfig {
        trials: 500,
        ..Default::default()
    };
    let u0: Arc<dyn MeasureFunction> = Arc::new(QuadraticMeanCoupling::new(1, -1.0, 0.0));
    let ll = certify(&Target::LasryLions(u0.clone()), &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ll_zero = (0..200).all(|t| {
        let s = random_sample(1, &mut rng, t, 1.0, 32).unwrap();
        lasry_lions_form(u0.as_ref(), &s).unwrap() == 0.0
    });
    let displ = certify(&Target::Surface(u0), &cfg).unwrap();
    let witness = displ.witness.as_ref().map_or(f64::NAN, |w| w.value);

    // U with |d_xx U|, |d_xmu U| <= |c| k^2, lifted by C |x|^2, C = |c| k^2
    let (c, k) = (-0.8, 1.2);
    let u: Arc<dyn MeasureFunction> = Arc::new(CosineCoupling { dim: 1, q: 0.0, c, k });
    let lifted = Arc::new(WithQuadratic {
        base: u.clone(),
        c: c.abs() * k * k,
    });
    let base_rep = certify(&Target::Surface(u), &cfg).unwrap();
    let lifted_rep = certify(&Target::Surface(lifted), &cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        ll.verdict == Verdict::Pass
            && ll_zero
            && displ.verdict == Verdict::Fail
            && witness < 0.0
            && lifted_rep.verdict == Verdict::Pass
            && secs <= 10.0,
        format!(
            "-x^2/2: LL min {:.1e} (identically 0: {ll_zero}), displacement witness {witness:.3}; \
             cosine U min {:.3}, lifted min {:.3e}; {secs:.2} s",
            ll.min_value, base_rep.min_value, lifted_rep.min_value
        ),
    )
}

fn quotient_equivalence() -> Outcome {
    let mut worst = f64::INFINITY;
    let mut notes = Vec::new();
    for (name, u) in shipped_surfaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut low = f64::INFINITY;
        for t in 0..5 {
            let s = random_sample(u.dim(), &mut rng, t, 1.0, 16).unwrap();
            low = low.min(quotient_order(u.as_ref(), &s).0);
        }
        notes.push(format!("{name} {low:.3}"));
        worst = worst.min(low);
    }
    outcome(worst >= 0.9, format!("min observed order: {}", notes.join(", ")))
}

fn legendre_identities_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut draw = |lo: f64, hi: f64| loop {
        let v = rng.random_range(lo..hi);
        if off_knots(v) {
            return v;
        }
    };
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, model) in [("lq", lq()), ("constructed", constructed())] {
        let mut worst = (0.0f64, "");
        for _ in 0..200 {
            let atoms: Vec<f64> = (0..4).map(|_| draw(-2.5, 2.5)).collect();
            let masses: Vec<f64> = (0..4).map(|_| draw(0.1, 1.0)).collect();
            let mu = DiscreteMeasure::from_masses(1, atoms, masses).unwrap();
            let (x, p) = (draw(-2.5, 2.5), draw(-3.0, 3.0));
            let k = (draw(0.0, 4.0) as usize).min(3);
            for (id, lhs, rhs) in legendre_identities(&model.hamiltonian, x, &mu, k, p) {
                let e = rel_err(lhs, rhs);
                if e > worst.0 {
                    worst = (e, id);
                }
            }
        }
        pass &= worst.0 <= 1e-6;
        notes.push(format!("{name} max rel err {:.1e} ({})", worst.0, worst.1));
    }
    outcome(pass, notes.join("; "))
}

fn lq_end_to_end() -> Outcome {
    let start = Instant::now();
    let (mu0, grid) = lq_setup(7, 200, 200);
    let model = lq();
    let sol = solve_mfg(
        model.hamiltonian.as_ref(),
        model.terminal.as_ref(),
        &mu0,
        &grid,
        &SolverConfig::default(),
    )
    .unwrap();
    let (eu, em) = flow_errors(&sol, &lq_coefficients(&mu0));
    let secs = start.elapsed().as_secs_f64();
    outcome(
        sol.iterations <= 60 && sol.final_residual() <= 1e-8 && eu <= 1e-2 && em <= 1e-2 && secs <= 120.0,
        format!(
            "{} iterations, residual {:.1e}, u error {eu:.2e}, mean error {em:.2e}, {secs:.1} s",
            sol.iterations,
            sol.final_residual()
        ),
    )
}

fn measure_derivative() -> Outcome {
    let (mu0, grid) = lq_setup(7, 200, 200);
    let model = lq();
    let (h, g) = (model.hamiltonian.as_ref(), model.terminal.as_ref());
    let co = lq_coefficients(&mu0);
    let m0 = mu0.mean()[0];
    let cfg = MasterEvalConfig::new(grid, perturbation_solver());
    let base = solve_from(0.0, &mu0, h, g, &cfg, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let probes: Vec<(f64, usize)> = (0..20)
        .map(|_| (rng.random_range(-1.0..3.0), rng.random_range(0..mu0.len())))
        .collect();
    let mut atoms: Vec<usize> = probes.iter().map(|p| p.1).collect();
    atoms.sort_unstable();
    atoms.dedup();
    let groups: Vec<Vec<usize>> = atoms.iter().map(|&k| vec![k]).collect();
    let sens = sensitivities(&base, &mu0, &groups, h, g, &cfg).unwrap();
    // relative error, floored at the oracle's change over one initial sd
    let floor = co.dm_b(0.0) * 0.5;
    let (mut e_mu, mut e_xmu) = (0.0f64, 0.0f64);
    for &(x, k) in &probes {
        let s = &sens[atoms.binary_search(&k).unwrap()];
        let oracle = co.dmu_at_mean(0.0, x, m0);
        e_mu = e_mu.max((s.d_mu(x) - oracle).abs() / oracle.abs().max(floor));
        e_xmu = e_xmu.max((s.d_x_mu(x) - co.dm_b(0.0)).abs() / co.dm_b(0.0));
    }
    outcome(
        e_mu <= 0.05 && e_xmu <= 0.05,
        format!("max relative error: d_mu {:.2}%, d_x_mu {:.2}% (20 probes)", 100.0 * e_mu, 100.0 * e_xmu),
    )
}

fn lipschitz() -> Outcome {
    let (mu0, grid) = lq_setup(3, 100, 100);
    let cfg = MasterEvalConfig::new(grid, perturbation_solver());
    let x = 0.5;
    let lq_model = lq();
    let rep = lipschitz_estimate(
        0.0,
        x,
        &mu0,
        Metric::W2,
        50,
        8,
        lq_model.hamiltonian.as_ref(),
        lq_model.terminal.as_ref(),
        &cfg,
    )
    .unwrap();
    let bound = lq_coefficients(&mu0).lipschitz_bound(x, mu0.mean()[0]);
    let c = constructed();
    let crep = lipschitz_estimate(0.0, x, &mu0, Metric::W2, 50, 8, c.hamiltonian.as_ref(), c.terminal.as_ref(), &cfg)
        .unwrap();
    let r = &crep.ratio_at_shrinking_steps;
    outcome(
        rep.max_ratio <= 1.1 * bound && r[2] <= 2.0 * r[0],
        format!(
            "LQ max ratio {:.4} vs bound {bound:.4}; constructed ratios {:.2e} / {:.2e} / {:.2e}",
            rep.max_ratio, r[0], r[1], r[2]
        ),
    )
}

struct FlowRuns {
    constructed_profile: Vec<bool>,
    constructed_rate: Vec<bool>,
    lq_profile_err: f64,
    lq_profile_pass: bool,
    lq_rate: bool,
    worst_rate_margin: f64,
    secs: f64,
}

fn flow_runs() -> FlowRuns {
    let clock = Instant::now();
    let solver = SolverConfig {
        tol: 1e-10,
        ..Default::default()
    };
    let pc = PropagationConfig {
        solver: perturbation_solver(),
        ..Default::default()
    };
    let mut runs = FlowRuns {
        constructed_profile: Vec::new(),
        constructed_rate: Vec::new(),
        lq_profile_err: 0.0,
        lq_profile_pass: false,
        lq_rate: false,
        worst_rate_margin: f64::INFINITY,
        secs: 0.0,
    };
    let model = constructed();
    for seed in 0..10 {
        let (sol, start) = flow_setup(&model, 2000, 100, 100, seed, &solver);
        let run = propagate(&sol, &start, model.hamiltonian.as_ref(), model.terminal.as_ref(), &pc, seed).unwrap();
        runs.constructed_profile.push(run.profile.verdict == FlowVerdict::Pass);
        runs.constructed_rate.push(run.rate.verdict == FlowVerdict::Pass);
        for i in &run.rate.intervals {
            runs.worst_rate_margin = runs.worst_rate_margin.min((i.decrement + i.integral) / run.rate.tol);
        }
    }
    let model = lq();
    let (sol, start) = flow_setup(&model, 2000, 100, 100, 1, &solver);
    let run = propagate(&sol, &start, model.hamiltonian.as_ref(), model.terminal.as_ref(), &pc, 1).unwrap();
    let oracle = lq_oracle_profile(&lq_coefficients(&start.base), &run.trajectory);
    runs.lq_profile_err = run
        .profile
        .values
        .iter()
        .zip(&oracle)
        .map(|(v, o)| (v / o - 1.0).abs())
        .fold(0.0, f64::max);
    runs.lq_profile_pass = run.profile.verdict == FlowVerdict::Pass;
    runs.lq_rate = run.rate.verdict == FlowVerdict::Pass;
    runs.secs = clock.elapsed().as_secs_f64();
    runs
}

fn partition_consistency() -> Outcome {
    let (mu0, grid) = lq_setup(7, 200, 200);
    let model = lq();
    let cfg = SolverConfig {
        tol: 1e-11,
        ..Default::default()
    };
    let solve = |cfg: &SolverConfig| solve_mfg(model.hamiltonian.as_ref(), model.terminal.as_ref(), &mu0, &grid, cfg).unwrap();
    let whole = solve(&cfg);
    let split = solve(&SolverConfig {
        partition_len: Some(1.0 / 3.0),
        ..cfg
    });
    let gap = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    let (gu, gr) = (gap(&whole.u, &split.u), gap(&whole.rho, &split.rho));
    outcome(
        gu <= 1e-8 && gr <= 1e-8,
        format!("{} windows; max gap u {gu:.1e}, rho {gr:.1e}", split.partition.len()),
    )
}

fn determinism() -> Outcome {
    let target = Target::Hamiltonian(constructed().hamiltonian);
    let cfg = CertifyConfig {
        trials: 200,
        seed: 12,
        ..Default::default()
    };
    let cert = || serde_json::to_string(&certify(&target, &cfg).unwrap()).unwrap();
    let search = || serde_json::to_string(&search_violation(&target, &cfg, 10).unwrap()).unwrap();
    let (mu0, grid) = lq_setup(12, 60, 40);
    let mc = MasterEvalConfig::new(grid, perturbation_solver());
    let model = lq();
    let lip = || {
        let rep = lipschitz_estimate(0.0, 0.5, &mu0, Metric::W1, 6, 12, model.hamiltonian.as_ref(), model.terminal.as_ref(), &mc);
        serde_json::to_string(&rep.unwrap()).unwrap()
    };
    let c = constructed();
    let solver = SolverConfig {
        tol: 1e-10,
        ..Default::default()
    };
    let (sol, start) = flow_setup(&c, 300, 60, 40, 12, &solver);
    let pc = PropagationConfig {
        solver: perturbation_solver(),
        ..Default::default()
    };
    let flow = || {
        let run = propagate(&sol, &start, c.hamiltonian.as_ref(), c.terminal.as_ref(), &pc, 12).unwrap();
        serde_json::to_string(&(run.profile, run.rate)).unwrap()
    };
    let same = [
        ("certify", cert() == cert()),
        ("search", search() == search()),
        ("lipschitz", lip() == lip()),
        ("propagate", flow() == flow()),
    ];
    let bad: Vec<&str> = same.iter().filter(|s| !s.1).map(|s| s.0).collect();
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            "certify, search, lipschitz and propagate payloads identical across reruns".into()
        } else {
            format!("payloads differ: {}", bad.join(", "))
        },
    )
}

fn run(results: &mut Vec<bool>, id: usize, name: &str, f: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    let tag = if out.pass { "PASS" } else { "FAIL" };
    println!("[{tag}] {id:>2} {name}: {} ({:.1} s)", out.detail, start.elapsed().as_secs_f64());
    results.push(out.pass);
}

fn main() {
    let mut results = Vec::new();
    run(&mut results, 1, "monotonicity certification", monotonicity_certification);
    run(&mut results, 2, "separable reduction", separable_reduction);
    run(&mut results, 3, "dichotomy", dichotomy);
    run(&mut results, 4, "quotient equivalence", quotient_equivalence);
    run(&mut results, 5, "Legendre identities", legendre_identities_check);
    run(&mut results, 6, "LQ end-to-end", lq_end_to_end);
    run(&mut results, 7, "measure derivative", measure_derivative);
    run(&mut results, 8, "Lipschitz in W2", lipschitz);

    let flows = catch_unwind(flow_runs).ok();
    run(&mut results, 9, "propagation", || match &flows {
        Some(f) => {
            let ok = f.constructed_profile.iter().filter(|p| **p).count();
            outcome(
                ok == 10 && f.lq_profile_err <= 0.05 && f.lq_profile_pass && f.secs <= 600.0,
                format!(
                    "constructed {ok}/10 seeds nonincreasing; LQ profile error {:.2}%; {:.0} s total",
                    100.0 * f.lq_profile_err,
                    f.secs
                ),
            )
        }
        None => outcome(false, "flow runs panicked".into()),
    });
    run(&mut results, 10, "rate inequality", || match &flows {
        Some(f) => {
            let ok = f.constructed_rate.iter().filter(|p| **p).count();
            outcome(
                ok == 10 && f.lq_rate,
                format!(
                    "constructed {ok}/10 seeds, LQ {}; min (decrement + integral) / tol = {:.3}",
                    if f.lq_rate { "pass" } else { "fail" },
                    f.worst_rate_margin
                ),
            )
        }
        None => outcome(false, "flow runs panicked".into()),
    });
    run(&mut results, 11, "time-partition consistency", partition_consistency);
    run(&mut results, 12, "determinism", determinism);

    let passed = results.iter().filter(|p| **p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}

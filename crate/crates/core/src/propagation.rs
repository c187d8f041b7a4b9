//! Equilibrium particle flow `X_t`, its linearisation `dX_t` in the initial
//! condition, and the profile
//!
//! ```text
//! I(t) = E<d_xmu V(t, X, mu_t, X~) dX~, dX> + E<d_xx V(t, X, mu_t) dX, dX>
//! ```
//!
//! which is nonincreasing in `t` for displacement-monotone data, with
//! `I(s) - I(t) >= -int_s^t E[displ H](dX, dX)`.
//!
//! `d_xmu V` comes from atom-group perturbation solves at checkpoints; the
//! particle cloud is split into quantile groups that are moved together.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{Hamiltonian, MeasureFunction};
use crate::master::{sensitivities, solve_from, MasterEvalConfig};
use crate::measures::{DiscreteMeasure, TangentSample};
use crate::mfg::{Grid1D, MfgSolution, SolverConfig};
use crate::monotonicity::{displacement_form_surface, hamiltonian_form_terms};

// ChaCha8 streams under one run seed. Stream 0 is left to
// `measures::sample_gaussian`, which draws initial clouds.
pub const TANGENT_STREAM: u64 = 1;
pub const NOISE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationConfig {
    /// Checkpoints evenly spread over `[t0, T]`, both ends included.
    pub checkpoints: usize,
    /// Quantile groups of particles moved together in the derivative sweeps.
    pub groups: usize,
    pub n_substeps: usize,
    /// Monotonicity slack, relative to `|I(t0)|`.
    pub rel_tol: f64,
    /// `I(T) >= -terminal_tol`.
    pub terminal_tol: f64,
    pub solver: SolverConfig,
    pub eps: Option<f64>,
    pub richardson: bool,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            checkpoints: 5,
            groups: 20,
            n_substeps: 1,
            rel_tol: 1e-3,
            terminal_tol: 1e-6,
            solver: SolverConfig::default(),
            eps: None,
            richardson: false,
        }
    }
}

impl PropagationConfig {
    fn master(&self, grid: Grid1D) -> MasterEvalConfig {
        MasterEvalConfig {
            grid,
            solver: self.solver,
            eps: self.eps,
            richardson: self.richardson,
            sweep_width: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.checkpoints < 2 {
            return Err(Error::InvalidArgument {
                name: "checkpoints",
                reason: "need at least the two endpoints".into(),
            });
        }
        if self.groups == 0 || self.n_substeps == 0 {
            return Err(Error::InvalidArgument {
                name: "groups",
                reason: "group and substep counts must be positive".into(),
            });
        }
        if !(self.rel_tol >= 0.0 && self.terminal_tol >= 0.0) {
            return Err(Error::InvalidArgument {
                name: "rel_tol",
                reason: "tolerances must be nonnegative".into(),
            });
        }
        Ok(())
    }
}

/// Derivatives of `V(t_c, ., mu_c)` at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub time: f64,
    pub step: usize,
    /// Particle indices of each quantile group.
    pub groups: Vec<Vec<usize>>,
    /// Group of each particle.
    pub member: Vec<usize>,
    /// Per group, `d_x d_mu V(t_c, x_i, mu_c, group)` at the grid centres.
    pub kernels: Vec<Vec<f64>>,
    /// `d_xx V(t_c, x_i, mu_c)` at the grid centres (empty at `T`).
    pub d_xx: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrajectory {
    pub grid: Grid1D,
    pub seed: u64,
    pub n_substeps: usize,
    pub weights: Vec<f64>,
    /// Checkpoint times, strictly increasing.
    pub times: Vec<f64>,
    /// `positions[c][i]`: particle `i` at checkpoint `c`.
    pub positions: Vec<Vec<f64>>,
    pub tangents: Vec<Vec<f64>>,
    /// `N_t` at the checkpoints (diagnostic only).
    pub n_terms: Vec<Vec<f64>>,
    pub checkpoints: Vec<Checkpoint>,
    /// `E[displ H](dX, dX)` with `phi = d_x u(t, .)` at every time node.
    pub rate_integrand: Vec<f64>,
}

fn quantile_groups(x: &[f64], k: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let k = k.min(x.len());
    let (base, extra) = (x.len() / k, x.len() % k);
    let mut groups = Vec::with_capacity(k);
    let mut member = vec![0; x.len()];
    let mut start = 0;
    for g in 0..k {
        let len = base + usize::from(g < extra);
        let grp = order[start..start + len].to_vec();
        for &i in &grp {
            member[i] = g;
        }
        groups.push(grp);
        start += len;
    }
    (groups, member)
}

fn checkpoint_steps(nt: usize, count: usize) -> Vec<usize> {
    let mut steps: Vec<usize> = (0..count).map(|c| (c * nt + (count - 1) / 2) / (count - 1)).collect();
    steps.dedup();
    steps
}

fn derivatives_at(
    step: usize,
    x: &[f64],
    weights: &[f64],
    sol: &MfgSolution,
    h: &dyn Hamiltonian,
    g: &dyn MeasureFunction,
    cfg: &PropagationConfig,
) -> Result<Checkpoint> {
    let grid = sol.grid;
    let time = grid.time(step);
    let mu = DiscreteMeasure::from_flat(1, x.to_vec(), weights.to_vec())?;
    let (groups, member) = quantile_groups(x, cfg.groups);
    if step == grid.nt {
        // V(T) = G: kernels from the Lions derivative of G averaged per group
        let m = g.bind(&mu);
        let mut buf = [0.0];
        let kernels = groups
            .iter()
            .map(|grp| {
                let w: f64 = grp.iter().map(|&j| weights[j]).sum();
                (0..grid.nx)
                    .map(|i| {
                        grp.iter()
                            .map(|&j| {
                                g.lions_x(&[grid.x(i)], &m, &[x[j]], &mut buf);
                                weights[j] * buf[0]
                            })
                            .sum::<f64>()
                            / w
                    })
                    .collect()
            })
            .collect();
        return Ok(Checkpoint {
            time,
            step,
            groups,
            member,
            kernels,
            d_xx: Vec::new(),
        });
    }
    let master = cfg.master(grid);
    let base = solve_from(time, &mu, h, g, &master, None)?;
    let sens = sensitivities(&base, &mu, &groups, h, g, &master)?;
    Ok(Checkpoint {
        time,
        step,
        kernels: sens.iter().map(|s| s.d_x_mu_grid()).collect(),
        d_xx: base.grid.second_derivative(&base.u[0]),
        groups,
        member,
    })
}

/// `sum_k K_k(x_i) S_k` with `S_k` the weighted tangent mass of group `k`.
fn kernel_term(grid: &Grid1D, cp: &Checkpoint, x: &[f64], dx: &[f64], weights: &[f64]) -> Vec<f64> {
    let s: Vec<f64> = cp.groups.iter().map(|grp| grp.iter().map(|&j| weights[j] * dx[j]).sum()).collect();
    x.iter()
        .map(|&xi| cp.kernels.iter().zip(&s).map(|(k, sk)| grid.interp_linear(k, xi) * sk).sum())
        .collect()
}

fn check_inside(grid: &Grid1D, x: &[f64], time: f64) -> Result<()> {
    match x.iter().position(|&v| !(v >= grid.x_min && v <= grid.x_max)) {
        Some(particle) => Err(Error::ParticleEscaped {
            particle,
            time,
            position: x[particle],
        }),
        None => Ok(()),
    }
}

/// Simulate `X` by Euler-Maruyama with drift `-d_p H(X, rho_t, d_x u)` and
/// unit Brownian increments, then `dX` by explicit Euler:
///
/// ```text
/// d dX = -(d_xp H dX + d_pp H (d_xx V dX + E[d_xmu V dX~]) + E[d_pmu H dX~]) dt
/// ```
///
/// `d_xx V` and `d_x u` come from the solution grid, `E[d_xmu V dX~]` from
/// checkpoint kernels interpolated linearly in time.
pub fn simulate_flow(
    sol: &MfgSolution,
    start: &TangentSample,
    h: &dyn Hamiltonian,
    g: &dyn MeasureFunction,
    cfg: &PropagationConfig,
    seed: u64,
) -> Result<FlowTrajectory> {
    cfg.validate()?;
    if start.dim() != 1 || h.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: start.dim().max(h.dim()),
        });
    }
    let grid = sol.grid;
    let n = start.len();
    let weights = start.base.weights().to_vec();
    let nsub = cfg.n_substeps;
    let dt = grid.dt() / nsub as f64;
    let sq = dt.sqrt();
    let grads: Vec<Vec<f64>> = sol.u.iter().map(|u| grid.gradient(u)).collect();
    let hess: Vec<Vec<f64>> = sol.u.iter().map(|u| grid.second_derivative(u)).collect();
    let grid_measures: Vec<DiscreteMeasure> = sol.rho.iter().map(|r| grid.to_measure(r)).collect::<Result<_>>()?;

    // particle paths at the time nodes
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(NOISE_STREAM);
    let mut x = start.base.atoms_flat().to_vec();
    check_inside(&grid, &x, grid.t0)?;
    let mut paths = Vec::with_capacity(grid.nt + 1);
    paths.push(x.clone());
    let mut buf = [0.0];
    for step in 0..grid.nt {
        let m = h.bind(&grid_measures[step]);
        for _ in 0..nsub {
            for xi in x.iter_mut() {
                let p = grid.interp_linear(&grads[step], *xi);
                h.grad_p(&[*xi], &m, &[p], &mut buf);
                let z: f64 = StandardNormal.sample(&mut rng);
                *xi += -buf[0] * dt + sq * z;
            }
        }
        check_inside(&grid, &x, grid.time(step + 1))?;
        paths.push(x.clone());
    }

    let steps = checkpoint_steps(grid.nt, cfg.checkpoints);
    let checkpoints: Vec<Checkpoint> = steps
        .iter()
        .map(|&s| derivatives_at(s, &paths[s], &weights, sol, h, g, cfg))
        .collect::<Result<_>>()?;

    // tangent dynamics
    let mut d = start.tangents_flat().to_vec();
    let mut tangents = Vec::with_capacity(steps.len());
    let mut n_terms = Vec::with_capacity(steps.len());
    let mut rate_integrand = Vec::with_capacity(grid.nt + 1);
    let mut seg = 0;
    for step in 0..=grid.nt {
        while seg + 2 < steps.len() && step >= steps[seg + 1] {
            seg += 1;
        }
        let xs = &paths[step];
        let mu = DiscreteMeasure::from_flat(1, xs.clone(), weights.clone())?;
        let m = h.bind(&mu);
        let momenta: Vec<f64> = xs.iter().map(|&xi| grid.interp_linear(&grads[step], xi)).collect();
        let (c0, c1) = (&checkpoints[seg], &checkpoints[seg + 1]);
        let theta = ((step - c0.step) as f64 / (c1.step - c0.step) as f64).min(1.0);
        // velocity of dX and N_t for the current tangents
        let velocity = |d: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
            let sample = TangentSample::new(mu.clone(), d.to_vec())?;
            let tm = h.tangent_moments(&m, &sample);
            let k0 = kernel_term(&grid, c0, xs, d, &weights);
            let k1 = kernel_term(&grid, c1, xs, d, &weights);
            let (mut vel, mut big_n) = (vec![0.0; n], vec![0.0; n]);
            let (mut mat, mut buf) = ([0.0], [0.0]);
            for i in 0..n {
                let (xi, p) = ([xs[i]], [momenta[i]]);
                let kx = (1.0 - theta) * k0[i] + theta * k1[i];
                let vxx = grid.interp_linear(&hess[step], xs[i]);
                h.hess_xp(&xi, &m, &p, &mut mat);
                let hxp = mat[0];
                h.hess_pp(&xi, &m, &p, &mut mat);
                let hpp = mat[0];
                h.lions_p_apply(&xi, &m, &p, &tm, &mut buf);
                big_n[i] = vxx * d[i] + kx + 0.5 * buf[0] / hpp;
                vel[i] = -(hxp * d[i] + hpp * big_n[i] + 0.5 * buf[0]);
            }
            Ok((vel, big_n))
        };
        let sample = TangentSample::new(mu.clone(), d.clone())?;
        rate_integrand.push(hamiltonian_form_terms(h, &sample, &momenta)?.total());
        if steps.contains(&step) {
            tangents.push(d.clone());
            n_terms.push(velocity(&d)?.1);
        }
        if step == grid.nt {
            break;
        }
        for _ in 0..nsub {
            let (vel, _) = velocity(&d)?;
            for (di, v) in d.iter_mut().zip(&vel) {
                *di += dt * v;
            }
        }
    }

    Ok(FlowTrajectory {
        grid,
        seed,
        n_substeps: nsub,
        weights,
        times: steps.iter().map(|&s| grid.time(s)).collect(),
        positions: steps.iter().map(|&s| paths[s].clone()).collect(),
        tangents,
        n_terms,
        checkpoints,
        rate_integrand,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipationProfile {
    pub times: Vec<f64>,
    /// `I(t) + I~(t)` at the checkpoints.
    pub values: Vec<f64>,
    /// `E[displ H](dX, dX)` with `phi = d_x V(t, ., mu_t)` at the checkpoints.
    pub rate_bound: Vec<f64>,
    pub tol: f64,
    pub terminal_tol: f64,
    pub verdict: Verdict,
}

impl DissipationProfile {
    /// Columns `time,I_plus_Ibar,rate_bound,decrement` (decrement since the
    /// previous checkpoint, 0 at the first).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,I_plus_Ibar,rate_bound,decrement\n");
        for c in 0..self.times.len() {
            let dec = if c == 0 { 0.0 } else { self.values[c - 1] - self.values[c] };
            writeln!(out, "{},{},{},{}", self.times[c], self.values[c], self.rate_bound[c], dec).unwrap();
        }
        out
    }
}

/// Profile values at the checkpoints; the last one (at `T`) is the
/// displacement form of `G` on `(X_T, dX_T)`.
pub fn dissipation_profile(traj: &FlowTrajectory, g: &dyn MeasureFunction, cfg: &PropagationConfig) -> Result<DissipationProfile> {
    let grid = traj.grid;
    let mut values = Vec::with_capacity(traj.times.len());
    for (c, cp) in traj.checkpoints.iter().enumerate() {
        let (x, d) = (&traj.positions[c], &traj.tangents[c]);
        let mu = DiscreteMeasure::from_flat(1, x.clone(), traj.weights.clone())?;
        let sample = TangentSample::new(mu, d.clone())?;
        let v = if cp.step == grid.nt {
            displacement_form_surface(g, &sample)?
        } else {
            let k = kernel_term(&grid, cp, x, d, &traj.weights);
            (0..x.len())
                .map(|i| traj.weights[i] * d[i] * (k[i] + grid.interp_linear(&cp.d_xx, x[i]) * d[i]))
                .sum()
        };
        values.push(v);
    }
    let tol = cfg.rel_tol * values[0].abs();
    let monotone = values.windows(2).all(|w| w[1] <= w[0] + tol);
    let terminal_ok = *values.last().unwrap() >= -cfg.terminal_tol;
    Ok(DissipationProfile {
        times: traj.times.clone(),
        rate_bound: traj.checkpoints.iter().map(|cp| traj.rate_integrand[cp.step]).collect(),
        values,
        tol,
        terminal_tol: cfg.terminal_tol,
        verdict: if monotone && terminal_ok { Verdict::Pass } else { Verdict::Fail },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateInterval {
    pub t_start: f64,
    pub t_end: f64,
    /// `I(t_start) - I(t_end)`.
    pub decrement: f64,
    /// Trapezoidal `int E[displ H]` over the interval (nonpositive for
    /// monotone data).
    pub integral: f64,
    /// `decrement >= -integral - tol`.
    pub pass: bool,
    /// `decrement >= integral - tol`.
    pub pass_weak: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub intervals: Vec<RateInterval>,
    pub tol: f64,
    pub verdict: Verdict,
}

/// Per-interval comparison of the profile decrement with the integrated
/// dissipation rate. `tol` is `rel_tol` times the larger of `|I(t0)|` and
/// `E|eta|^2`.
pub fn rate_check(traj: &FlowTrajectory, profile: &DissipationProfile, cfg: &PropagationConfig) -> Result<RateReport> {
    let dt = traj.grid.dt();
    let energy: f64 = traj.weights.iter().zip(&traj.tangents[0]).map(|(w, e)| w * e * e).sum();
    let tol = cfg.rel_tol * profile.values[0].abs().max(energy);
    let mut intervals = Vec::new();
    for c in 0..traj.checkpoints.len() - 1 {
        let (a, b) = (traj.checkpoints[c].step, traj.checkpoints[c + 1].step);
        let f = &traj.rate_integrand;
        let integral = (a..b).map(|n| 0.5 * dt * (f[n] + f[n + 1])).sum::<f64>();
        let decrement = profile.values[c] - profile.values[c + 1];
        intervals.push(RateInterval {
            t_start: traj.times[c],
            t_end: traj.times[c + 1],
            decrement,
            integral,
            pass: decrement >= -integral - tol,
            pass_weak: decrement >= integral - tol,
        });
    }
    let verdict = if intervals.iter().all(|i| i.pass) { Verdict::Pass } else { Verdict::Fail };
    Ok(RateReport { intervals, tol, verdict })
}

/// `n` tangents `mean + sd Z` with `Z` standard normal, drawn from stream
/// [`TANGENT_STREAM`] of a ChaCha8 generator seeded with `seed`.
pub fn gaussian_tangents(n: usize, mean: f64, sd: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TANGENT_STREAM);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            mean + sd * z
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub trajectory: FlowTrajectory,
    pub profile: DissipationProfile,
    pub rate: RateReport,
}

impl Propagation {
    pub fn passed(&self) -> bool {
        self.profile.verdict == Verdict::Pass && self.rate.verdict == Verdict::Pass
    }
}

/// [`simulate_flow`], then the profile and the rate check.
pub fn propagate(
    sol: &MfgSolution,
    start: &TangentSample,
    h: &dyn Hamiltonian,
    g: &dyn MeasureFunction,
    cfg: &PropagationConfig,
    seed: u64,
) -> Result<Propagation> {
    let trajectory = simulate_flow(sol, start, h, g, cfg, seed)?;
    let profile = dissipation_profile(&trajectory, g, cfg)?;
    let rate = rate_check(&trajectory, &profile, cfg)?;
    Ok(Propagation {
        trajectory,
        profile,
        rate,
    })
}

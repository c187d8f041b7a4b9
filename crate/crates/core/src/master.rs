//! The master value `V(t0, x, mu)` on discrete measures, evaluated by
//! re-solving the MFG system from `(t0, mu)`, and its derivatives in the
//! measure argument by perturbing atoms.
//!
//! Moving atom `k` (weight `w_k`) by `eps` changes `V` by about
//! `eps w_k d_mu V(t0, x, mu, x_k)`, so the central quotient is divided by
//! `2 eps w_k`. All perturbed solves run on the grid of the base solve and
//! are warm-started from it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{Hamiltonian, MeasureFunction};
use crate::measures::{w1_distance, w2_distance, DiscreteMeasure};
use crate::mfg::{solve_mfg_warm, Grid1D, MfgSolution, SolverConfig};

pub const WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MasterEvalConfig {
    /// Space grid and time step; evaluations at `t0` restart it at `t0`.
    pub grid: Grid1D,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Atom perturbation; defaults to `dx / 4`.
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default = "yes")]
    pub richardson: bool,
    /// Worker threads for perturbation sweeps (`None`: rayon's default).
    #[serde(default)]
    pub sweep_width: Option<usize>,
}

fn yes() -> bool {
    true
}

impl MasterEvalConfig {
    pub fn new(grid: Grid1D, solver: SolverConfig) -> Self {
        Self {
            grid,
            solver,
            eps: None,
            richardson: true,
            sweep_width: None,
        }
    }

    pub fn step(&self) -> Result<f64> {
        let dx = self.grid.dx();
        let eps = self.eps.unwrap_or(0.25 * dx);
        if !(eps > 0.0 && eps <= 0.5 * dx) {
            return Err(Error::InvalidArgument {
                name: "eps",
                reason: format!("must lie in (0, {}], got {eps}", 0.5 * dx),
            });
        }
        Ok(eps)
    }

    /// Runs `f` inside a pool of `sweep_width` threads when set.
    pub fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        match self.sweep_width {
            None => Ok(f()),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| Error::InvalidArgument {
                    name: "sweep_width",
                    reason: e.to_string(),
                })?;
                Ok(pool.install(f))
            }
        }
    }
}

/// Solve the MFG system on `[t0, T]` from `mu`.
pub fn solve_from(
    t0: f64,
    mu: &DiscreteMeasure,
    h: &dyn Hamiltonian,
    g: &dyn MeasureFunction,
    cfg: &MasterEvalConfig,
    warm: Option<&MfgSolution>,
) -> Result<MfgSolution> {
    let grid = cfg.grid.restarted(t0)?;
    let warm = warm.filter(|w| w.grid == grid).map(|w| w.rho.as_slice());
    solve_mfg_warm(h, g, mu, &grid, &cfg.solver, warm)
}

fn check_x(grid: &Grid1D, x: f64) -> Result<()> {
    if !grid.contains(x) {
        return Err(Error::InvalidArgument {
            name: "x",
            reason: format!("{x} lies outside the grid centres"),
        });
    }
    Ok(())
}

/// `V(t0, x, mu)`: the value at `t0` of the equilibrium started from `mu`.
#[allow(non_snake_case)]
pub fn eval_V(t0: f64, x: f64, mu: &DiscreteMeasure, h: &dyn Hamiltonian, g: &dyn MeasureFunction, cfg: &MasterEvalConfig) -> Result<f64> {
    check_x(&cfg.grid, x)?;
    let sol = solve_from(t0, mu, h, g, cfg, None)?;
    sol.value(0, x)
}

/// Shifts every atom of `group` by `shift` (1-d).
pub fn perturb_group(mu: &DiscreteMeasure, group: &[usize], shift: f64) -> Result<DiscreteMeasure> {
    let mut atoms = mu.atoms_flat().to_vec();
    for &k in group {
        if k >= mu.len() {
            return Err(Error::IndexOutOfRange { index: k, len: mu.len() });
        }
        atoms[k] += shift;
    }
    DiscreteMeasure::from_flat(1, atoms, mu.weights().to_vec())
}

/// `d_mu V(t0, ., mu, group)` sampled at the grid centres, for a group of
/// atoms moved together (a single atom being the usual case). For a group
/// this is the weight-averaged derivative over its atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomSensitivity {
    pub grid: Grid1D,
    pub weight: f64,
    pub eps: f64,
    pub values: Vec<f64>,
}

impl AtomSensitivity {
    pub fn d_mu(&self, x: f64) -> f64 {
        self.grid.interp_cubic(&self.values, x)
    }

    /// Central difference of [`Self::d_mu`] with step `dx`.
    pub fn d_x_mu(&self, x: f64) -> f64 {
        let h = self.grid.dx();
        (self.d_mu(x + h) - self.d_mu(x - h)) / (2.0 * h)
    }

    /// `d_x d_mu V` at every grid centre.
    pub fn d_x_mu_grid(&self) -> Vec<f64> {
        self.grid.gradient(&self.values)
    }
}

/// Perturbation sweep for one atom group around an already solved base.
pub fn group_sensitivity(
    base: &MfgSolution,
    mu: &DiscreteMeasure,
    group: &[usize],
    h: &dyn Hamiltonian,
    g: &dyn MeasureFunction,
    cfg: &MasterEvalConfig,
) -> Result<AtomSensitivity> {
    if mu.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: mu.dim() });
    }
    let weight: f64 = group.iter().map(|&k| mu.weights().get(k).copied().unwrap_or(0.0)).sum();
    if group.iter().any(|&k| k >= mu.len()) {
        return Err(Error::IndexOutOfRange {
            index: *group.iter().max().unwrap(),
            len: mu.len(),
        });
    }
    if weight < WEIGHT_FLOOR {
        return Err(Error::WeightFloor { weight, floor: WEIGHT_FLOOR });
    }
    let eps = cfg.step()?;
    let t0 = base.grid.t0;
    let quotient = |e: f64| -> Result<Vec<f64>> {
        let plus = solve_from(t0, &perturb_group(mu, group, e)?, h, g, cfg, Some(base))?;
        let minus = solve_from(t0, &perturb_group(mu, group, -e)?, h, g, cfg, Some(base))?;
        Ok(plus.u[0].iter().zip(&minus.u[0]).map(|(p, m)| (p - m) / (2.0 * e * weight)).collect())
    };
    let coarse = quotient(eps)?;
    let values = if cfg.richardson {
        let fine = quotient(0.5 * eps)?;
        fine.iter().zip(&coarse).map(|(f, c)| (4.0 * f - c) / 3.0).collect()
    } else {
        coarse
    };
    Ok(AtomSensitivity {
        grid: base.grid,
        weight,
        eps,
        values,
    })
}

/// Sensitivities of every group, computed in parallel and returned in
/// group order.
pub fn sensitivities(
    base: &MfgSolution,
    mu: &DiscreteMeasure,
    groups: &[Vec<usize>],
    h: &dyn Hamiltonian,
    g: &dyn MeasureFunction,
    cfg: &MasterEvalConfig,
) -> Result<Vec<AtomSensitivity>> {
    cfg.install(|| {
        groups
            .par_iter()
            .map(|grp| group_sensitivity(base, mu, grp, h, g, cfg))
            .collect::<Result<Vec<_>>>()
    })?
}

/// `d_mu V(t0, x, mu, x_k)` (1-d, so a single component).
#[allow(non_snake_case)]
pub fn d_mu_V(
    t0: f64,
    x: f64,
    mu: &DiscreteMeasure,
    k: usize,
    h: &dyn Hamiltonian,
    g: &dyn MeasureFunction,
    cfg: &MasterEvalConfig,
) -> Result<Vec<f64>> {
    check_x(&cfg.grid, x)?;
    let base = solve_from(t0, mu, h, g, cfg, None)?;
    Ok(vec![group_sensitivity(&base, mu, &[k], h, g, cfg)?.d_mu(x)])
}

/// `d_x d_mu V(t0, x, mu, x_k)` as a row-major `1 x 1` matrix.
#[allow(non_snake_case)]
pub fn d_x_mu_V(
    t0: f64,
    x: f64,
    mu: &DiscreteMeasure,
    k: usize,
    h: &dyn Hamiltonian,
    g: &dyn MeasureFunction,
    cfg: &MasterEvalConfig,
) -> Result<Vec<f64>> {
    check_x(&cfg.grid, x)?;
    let base = solve_from(t0, mu, h, g, cfg, None)?;
    Ok(vec![group_sensitivity(&base, mu, &[k], h, g, cfg)?.d_x_mu(x)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    W1,
    W2,
}

impl Metric {
    pub fn distance(self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
        match self {
            Metric::W1 => w1_distance(mu, nu),
            Metric::W2 => w2_distance(mu, nu),
        }
    }
}

pub const JITTER_SCALES: [f64; 3] = [1e-1, 1e-2, 1e-3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzWitness {
    pub scale: f64,
    pub trial: usize,
    pub nu: DiscreteMeasure,
    pub distance: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub metric: Metric,
    pub trials: usize,
    pub t0: f64,
    pub x: f64,
    pub scales: Vec<f64>,
    /// `max |V(nu) - V(mu)| / W(mu, nu)` over all trials and scales.
    pub max_ratio: f64,
    /// Per-scale maxima of the same ratio.
    pub ratio_at_shrinking_steps: Vec<f64>,
    /// As above with `d_x V` in place of `V`.
    pub dx_max_ratio: f64,
    pub dx_ratio_at_shrinking_steps: Vec<f64>,
    pub witness: Option<LipschitzWitness>,
}

struct Probe {
    scale_idx: usize,
    trial: usize,
    nu: DiscreteMeasure,
    dist: f64,
    ratio: f64,
    dx_ratio: f64,
}

/// Empirical Lipschitz ratios of `V(t0, x, .)` and `d_x V(t0, x, .)` around
/// `base_mu`, from atom jitters of standard normal direction at each of
/// [`JITTER_SCALES`]. The same direction is reused across scales.
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_estimate(
    t0: f64,
    x: f64,
    base_mu: &DiscreteMeasure,
    metric: Metric,
    trials: usize,
    seed: u64,
    h: &dyn Hamiltonian,
    g: &dyn MeasureFunction,
    cfg: &MasterEvalConfig,
) -> Result<LipschitzReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument {
            name: "trials",
            reason: "need at least one trial".into(),
        });
    }
    if base_mu.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: base_mu.dim() });
    }
    check_x(&cfg.grid, x)?;
    let base = solve_from(t0, base_mu, h, g, cfg, None)?;
    let grid = base.grid;
    let dx_of = |sol: &MfgSolution| grid.interp_cubic(&grid.gradient(&sol.u[0]), x);
    let (v0, d0) = (base.value(0, x)?, dx_of(&base));
    let tasks: Vec<(usize, usize)> = (0..trials).flat_map(|t| (0..JITTER_SCALES.len()).map(move |s| (t, s))).collect();
    let probes: Vec<Probe> = cfg.install(|| {
        tasks
            .par_iter()
            .map(|&(trial, scale_idx)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(trial as u64);
                let s = JITTER_SCALES[scale_idx];
                let atoms: Vec<f64> = base_mu
                    .atoms_flat()
                    .iter()
                    .map(|a| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        a + s * z
                    })
                    .collect();
                let nu = DiscreteMeasure::from_flat(1, atoms, base_mu.weights().to_vec())?;
                let dist = metric.distance(base_mu, &nu)?;
                let sol = solve_from(t0, &nu, h, g, cfg, Some(&base))?;
                let (ratio, dx_ratio) = if dist > 0.0 {
                    ((sol.value(0, x)? - v0).abs() / dist, (dx_of(&sol) - d0).abs() / dist)
                } else {
                    (0.0, 0.0)
                };
                Ok(Probe {
                    scale_idx,
                    trial,
                    nu,
                    dist,
                    ratio,
                    dx_ratio,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let mut per_scale = vec![0.0f64; JITTER_SCALES.len()];
    let mut dx_per_scale = vec![0.0f64; JITTER_SCALES.len()];
    let mut best: Option<&Probe> = None;
    for p in &probes {
        per_scale[p.scale_idx] = per_scale[p.scale_idx].max(p.ratio);
        dx_per_scale[p.scale_idx] = dx_per_scale[p.scale_idx].max(p.dx_ratio);
        if best.is_none_or(|b| p.ratio > b.ratio) {
            best = Some(p);
        }
    }
    Ok(LipschitzReport {
        metric,
        trials,
        t0,
        x,
        scales: JITTER_SCALES.to_vec(),
        max_ratio: per_scale.iter().cloned().fold(0.0, f64::max),
        ratio_at_shrinking_steps: per_scale,
        dx_max_ratio: dx_per_scale.iter().cloned().fold(0.0, f64::max),
        dx_ratio_at_shrinking_steps: dx_per_scale,
        witness: best.map(|p| LipschitzWitness {
            scale: JITTER_SCALES[p.scale_idx],
            trial: p.trial,
            nu: p.nu.clone(),
            distance: p.dist,
            ratio: p.ratio,
        }),
    })
}

//! One-dimensional forward-backward MFG system with unit diffusion:
//!
//! ```text
//! -d_t u - u_xx / 2 + H(x, rho_t, u_x) = 0,   u(T) = G(., rho_T)
//!  d_t rho = rho_xx / 2 + d_x(rho d_p H(x, rho_t, u_x)),   rho(t0) = mu0
//! ```
//!
//! Both equations are stepped implicitly on a finite-volume grid. Transport
//! terms use a hybrid weight that is centred where the cell Peclet number is
//! below one and leans upwind just enough to keep the matrices monotone, so
//! densities stay nonnegative and mass is conserved to round-off.

mod grid;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use grid::Grid1D;

use crate::error::{Error, Result};
use crate::hamiltonian::{BoundMeasure, Hamiltonian, MeasureFunction};
use crate::linalg::solve_tridiagonal;
use crate::measures::DiscreteMeasure;

/// Diffusion coefficient of `rho_xx / 2`.
const DIFF: f64 = 0.5;
const NEG_MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Picard damping `lambda` in `(0, 1]`.
    pub damping: f64,
    /// Stop when the sup-in-time L1 gap between flows is at most this.
    pub tol: f64,
    pub max_iter: usize,
    /// Window length for the restart construction; `None` solves in one piece.
    pub partition_len: Option<f64>,
    /// Re-linearisations of `H` per HJB step.
    pub hjb_sweeps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-8,
            max_iter: 200,
            partition_len: None,
            hjb_sweeps: 3,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidArgument {
                name: "damping",
                reason: format!("must lie in (0, 1], got {}", self.damping),
            });
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument {
                name: "tol",
                reason: "must be positive".into(),
            });
        }
        if self.max_iter == 0 || self.hjb_sweeps == 0 {
            return Err(Error::InvalidArgument {
                name: "max_iter",
                reason: "iteration counts must be positive".into(),
            });
        }
        if let Some(len) = self.partition_len {
            if !(len > 0.0) {
                return Err(Error::InvalidArgument {
                    name: "partition_len",
                    reason: "must be positive".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfgSolution {
    pub grid: Grid1D,
    /// `u[n][i]`, value at time `n`, cell `i`.
    pub u: Vec<Vec<f64>>,
    /// `rho[n][i]`, density with `sum_i rho[n][i] dx = 1`.
    pub rho: Vec<Vec<f64>>,
    pub residual_history: Vec<f64>,
    pub iterations: usize,
    /// Restart times of the windows (just `t0` when unpartitioned).
    pub partition: Vec<f64>,
    /// Some atom of `mu0` lay outside the grid and was moved to the edge.
    pub projected: bool,
}

impl MfgSolution {
    pub fn measure_at(&self, n: usize) -> Result<DiscreteMeasure> {
        self.grid.to_measure(&self.rho[n])
    }

    pub fn mean(&self, n: usize) -> f64 {
        let g = &self.grid;
        (0..g.nx).map(|i| g.x(i) * self.rho[n][i]).sum::<f64>() * g.dx()
    }

    pub fn variance(&self, n: usize) -> f64 {
        let g = &self.grid;
        let m = self.mean(n);
        (0..g.nx).map(|i| (g.x(i) - m).powi(2) * self.rho[n][i]).sum::<f64>() * g.dx()
    }

    /// `u(t_n, x)` by cubic interpolation.
    pub fn value(&self, n: usize, x: f64) -> Result<f64> {
        if !self.grid.contains(x) {
            return Err(Error::InvalidArgument {
                name: "x",
                reason: format!("{x} lies outside the grid centres"),
            });
        }
        Ok(self.grid.interp_cubic(&self.u[n], x))
    }

    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(0.0)
    }

    /// Columns `t,x,u,rho`.
    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let mut out = String::from("t,x,u,rho\n");
        for n in 0..=g.nt {
            let t = g.time(n);
            for i in 0..g.nx {
                writeln!(out, "{t},{},{},{}", g.x(i), self.u[n][i], self.rho[n][i]).unwrap();
            }
        }
        out
    }
}

/// Weight on the left cell (FP) or the forward difference (HJB) for a
/// transport speed `alpha`: centred at small cell Peclet number, tilted
/// upwind exactly as far as monotonicity requires.
fn hybrid_weight(alpha: f64, h: f64) -> f64 {
    let pe = alpha.abs() * h / DIFF;
    if pe <= 2.0 {
        0.5
    } else if alpha > 0.0 {
        1.0 - 1.0 / pe
    } else {
        1.0 / pe
    }
}

fn bind_flow<'a>(h: &dyn Hamiltonian, measures: &'a [DiscreteMeasure]) -> Vec<BoundMeasure<'a>> {
    measures.iter().map(|m| h.bind(m)).collect()
}

fn flow_measures(grid: &Grid1D, rho: &[Vec<f64>]) -> Result<Vec<DiscreteMeasure>> {
    rho.iter().map(|r| grid.to_measure(r)).collect()
}

/// One backward step `u^{n+1} -> u^n` against the measure `m`.
fn hjb_step(h: &dyn Hamiltonian, m: &BoundMeasure, u_next: &[f64], grid: &Grid1D, sweeps: usize) -> Result<Vec<f64>> {
    let nx = grid.nx;
    let dx = grid.dx();
    let dt = grid.dt();
    let centres = grid.centers();
    let mut v = u_next.to_vec();
    let mut theta = vec![0.5; nx];
    // initial weights from centred gradients of u^{n+1}
    let grad = grid.gradient(u_next);
    let mut b = [0.0];
    for i in 0..nx {
        h.grad_p(&centres[i..=i], m, &grad[i..=i], &mut b);
        theta[i] = hybrid_weight(-b[0], dx);
    }
    let (mut lower, mut diag, mut upper, mut rhs) = (vec![0.0; nx], vec![0.0; nx], vec![0.0; nx], vec![0.0; nx]);
    for _ in 0..sweeps {
        for i in 0..nx {
            let fwd = if i + 1 < nx { (v[i + 1] - v[i]) / dx } else { 0.0 };
            let bwd = if i > 0 { (v[i] - v[i - 1]) / dx } else { 0.0 };
            let pbar = theta[i] * fwd + (1.0 - theta[i]) * bwd;
            let x = &centres[i..=i];
            h.grad_p(x, m, &[pbar], &mut b);
            let hv = h.value(x, m, &[pbar]);
            let alpha = -b[0];
            let th = hybrid_weight(alpha, dx);
            theta[i] = th;
            // u_i - dt [D (u_{i+1} - 2u_i + u_{i-1}) / dx^2 + alpha (th fwd + (1 - th) bwd)]
            //   = u_next_i - dt (H(pbar) - b pbar)
            let d = DIFF / (dx * dx);
            let (mut lo, mut di, mut up) = (0.0, 1.0, 0.0);
            if i + 1 < nx {
                up -= dt * (d + alpha * th / dx);
                di += dt * (d + alpha * th / dx);
            }
            if i > 0 {
                lo -= dt * (d - alpha * (1.0 - th) / dx);
                di += dt * (d - alpha * (1.0 - th) / dx);
            }
            lower[i] = lo;
            diag[i] = di;
            upper[i] = up;
            rhs[i] = u_next[i] - dt * (hv - b[0] * pbar);
        }
        v = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
    }
    Ok(v)
}

/// One forward step `rho^n -> rho^{n+1}` with face velocities `alpha`
/// (`alpha[j]` at the right face of cell `j`, `nx - 1` entries).
fn fp_step(rho: &[f64], alpha: &[f64], grid: &Grid1D, step: usize) -> Result<Vec<f64>> {
    let nx = grid.nx;
    let dx = grid.dx();
    let r = grid.dt() / dx;
    let d = DIFF / dx;
    let mut lower = vec![0.0; nx];
    let mut diag = vec![1.0; nx];
    let mut upper = vec![0.0; nx];
    for j in 0..nx - 1 {
        // flux through face j: a (th rho_j + (1 - th) rho_{j+1}) - D (rho_{j+1} - rho_j) / dx
        let a = alpha[j];
        let th = hybrid_weight(a, dx);
        let cl = a * th + d;
        let cr = a * (1.0 - th) - d;
        diag[j] += r * cl;
        upper[j] += r * cr;
        lower[j + 1] -= r * cl;
        diag[j + 1] -= r * cr;
    }
    let mut out = solve_tridiagonal(&lower, &diag, &upper, rho)?;
    for (cell, v) in out.iter_mut().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { stage: "fp", step });
        }
        if *v < 0.0 {
            if *v < -NEG_MASS_TOL {
                return Err(Error::NegativeMass { step, cell, value: *v });
            }
            *v = 0.0;
        }
    }
    Ok(out)
}

fn face_velocities(h: &dyn Hamiltonian, m: &BoundMeasure, u: &[f64], grid: &Grid1D) -> Vec<f64> {
    let dx = grid.dx();
    let mut b = [0.0];
    (0..grid.nx - 1)
        .map(|j| {
            let p = (u[j + 1] - u[j]) / dx;
            h.grad_p(&[grid.face(j)], m, &[p], &mut b);
            -b[0]
        })
        .collect()
}

fn check_flow(h: &dyn Hamiltonian, grid: &Grid1D, rows: usize, cols: usize) -> Result<()> {
    if h.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: h.dim(),
        });
    }
    if rows != grid.nt + 1 || cols != grid.nx {
        return Err(Error::InvalidArgument {
            name: "rho_flow",
            reason: format!("expected {} x {}, got {rows} x {cols}", grid.nt + 1, grid.nx),
        });
    }
    Ok(())
}

fn backward(h: &dyn Hamiltonian, terminal: &[f64], bound: &[BoundMeasure], grid: &Grid1D, sweeps: usize) -> Result<Vec<Vec<f64>>> {
    let mut u = vec![Vec::new(); grid.nt + 1];
    u[grid.nt] = terminal.to_vec();
    for n in (0..grid.nt).rev() {
        let next = hjb_step(h, &bound[n], &u[n + 1], grid, sweeps)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { stage: "hjb", step: n });
        }
        u[n] = next;
    }
    Ok(u)
}

fn forward(h: &dyn Hamiltonian, rho0: &[f64], u: &[Vec<f64>], bound: &[BoundMeasure], grid: &Grid1D) -> Result<Vec<Vec<f64>>> {
    let mut rho = Vec::with_capacity(grid.nt + 1);
    rho.push(rho0.to_vec());
    for n in 0..grid.nt {
        let alpha = face_velocities(h, &bound[n], &u[n], grid);
        let next = fp_step(&rho[n], &alpha, grid, n + 1)?;
        rho.push(next);
    }
    Ok(rho)
}

/// Backward HJB sweep against a given density flow (`nt + 1` rows of `nx`).
pub fn solve_hjb(h: &dyn Hamiltonian, terminal: &[f64], rho_flow: &[Vec<f64>], grid: &Grid1D) -> Result<Vec<Vec<f64>>> {
    check_flow(h, grid, rho_flow.len(), rho_flow.first().map_or(0, Vec::len))?;
    if terminal.len() != grid.nx || terminal.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument {
            name: "terminal",
            reason: "needs nx finite values".into(),
        });
    }
    let measures = flow_measures(grid, rho_flow)?;
    let bound = bind_flow(h, &measures);
    backward(h, terminal, &bound, grid, SolverConfig::default().hjb_sweeps)
}

/// Forward Fokker-Planck sweep. `drift[n][j]` is the velocity at the right
/// face of cell `j` during step `n -> n+1`. Atoms of `mu0` outside the grid
/// are moved to the edge cells.
pub fn solve_fp(drift: &[Vec<f64>], mu0: &DiscreteMeasure, grid: &Grid1D) -> Result<Vec<Vec<f64>>> {
    if drift.len() != grid.nt || drift.iter().any(|d| d.len() != grid.nx - 1) {
        return Err(Error::InvalidArgument {
            name: "drift",
            reason: format!("expected {} x {} face values", grid.nt, grid.nx - 1),
        });
    }
    let (rho0, _) = grid.deposit(mu0)?;
    let mut rho = vec![rho0];
    for (n, alpha) in drift.iter().enumerate() {
        let next = fp_step(&rho[n], alpha, grid, n + 1)?;
        rho.push(next);
    }
    Ok(rho)
}

/// Face drifts sampled from `f(t, x)` in the layout [`solve_fp`] expects.
pub fn sample_drift(grid: &Grid1D, f: impl Fn(f64, f64) -> f64) -> Vec<Vec<f64>> {
    (0..grid.nt)
        .map(|n| (0..grid.nx - 1).map(|j| f(grid.time(n), grid.face(j))).collect())
        .collect()
}

fn l1_gap(a: &[Vec<f64>], b: &[Vec<f64>], dx: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>() * dx)
        .fold(0.0, f64::max)
}

type TerminalFn<'a> = dyn FnMut(&[f64]) -> Result<Vec<f64>> + 'a;

struct Picard {
    u: Vec<Vec<f64>>,
    rho: Vec<Vec<f64>>,
    history: Vec<f64>,
}

/// Damped fixed point on one window. `terminal` maps the final density to
/// the terminal values; `warm` seeds the density flow.
fn picard(
    h: &dyn Hamiltonian,
    terminal: &mut TerminalFn,
    rho0: &[f64],
    grid: &Grid1D,
    cfg: &SolverConfig,
    warm: Option<&[Vec<f64>]>,
) -> Result<Picard> {
    let nt = grid.nt;
    let mut flow = match warm {
        Some(w) if w.len() == nt + 1 => {
            let mut f = w.to_vec();
            f[0] = rho0.to_vec();
            f
        }
        _ => {
            // freeze the initial law over the horizon, then transport it once
            let frozen = vec![rho0.to_vec(); nt + 1];
            let measures = flow_measures(grid, &frozen)?;
            let bound = bind_flow(h, &measures);
            let u = backward(h, &terminal(rho0)?, &bound, grid, cfg.hjb_sweeps)?;
            forward(h, rho0, &u, &bound, grid)?
        }
    };
    let mut lambda = cfg.damping;
    let mut history: Vec<f64> = Vec::new();
    let mut rises = 0;
    for _ in 0..cfg.max_iter {
        let measures = flow_measures(grid, &flow)?;
        let bound = bind_flow(h, &measures);
        let u = backward(h, &terminal(&flow[nt])?, &bound, grid, cfg.hjb_sweeps)?;
        let next = forward(h, rho0, &u, &bound, grid)?;
        let gap = l1_gap(&next, &flow, grid.dx());
        if let Some(&prev) = history.last() {
            rises = if gap > prev { rises + 1 } else { 0 };
            if rises >= 2 {
                lambda *= 0.5;
                rises = 0;
            }
        }
        history.push(gap);
        if gap <= cfg.tol {
            return Ok(Picard { u, rho: next, history });
        }
        for (f, n) in flow.iter_mut().zip(&next) {
            for (a, b) in f.iter_mut().zip(n) {
                *a = (1.0 - lambda) * *a + lambda * b;
            }
        }
    }
    Err(Error::NotConverged {
        iterations: cfg.max_iter,
        last: history.last().copied().unwrap_or(f64::NAN),
        residual_history: history,
    })
}

/// Window boundaries (step indices) of length at most `len`.
pub fn partition_steps(grid: &Grid1D, len: f64) -> Result<Vec<usize>> {
    let per = (len / grid.dt() + 1e-9).floor() as usize;
    if per == 0 {
        return Err(Error::InvalidArgument {
            name: "partition_len",
            reason: format!("{len} is shorter than one time step"),
        });
    }
    let k = grid.nt.div_ceil(per);
    let (base, extra) = (grid.nt / k, grid.nt % k);
    let mut cuts = vec![0];
    for w in 0..k {
        let last = *cuts.last().unwrap();
        cuts.push(last + base + usize::from(w < extra));
    }
    Ok(cuts)
}

fn terminal_from_cost<'a>(g: &'a dyn MeasureFunction, grid: &'a Grid1D) -> impl FnMut(&[f64]) -> Result<Vec<f64>> + 'a {
    move |rho_t: &[f64]| {
        let mu = grid.to_measure(rho_t)?;
        let m = g.bind(&mu);
        Ok((0..grid.nx).map(|i| g.value(&[grid.x(i)], &m)).collect())
    }
}

/// Solve windows `level..` from `rho0`, each window's terminal values being
/// the value of the remaining windows restarted from its final density.
/// `warm[0]` seeds this window, `warm[1..]` the later ones.
#[allow(clippy::too_many_arguments)]
fn solve_windows(
    h: &dyn Hamiltonian,
    g: &dyn MeasureFunction,
    rho0: &[f64],
    grid: &Grid1D,
    cuts: &[usize],
    level: usize,
    cfg: &SolverConfig,
    warm: &mut [Option<Vec<Vec<f64>>>],
) -> Result<Picard> {
    let win = grid.window(cuts[level], cuts[level + 1]);
    let (own, later) = warm.split_first_mut().expect("one warm slot per window");
    let seed = own.take();
    if level + 2 == cuts.len() {
        let mut term = terminal_from_cost(g, grid);
        let out = picard(h, &mut term, rho0, &win, cfg, seed.as_deref())?;
        *own = Some(out.rho.clone());
        return Ok(out);
    }
    // Later windows are re-solved at every outer iteration from warm starts;
    // they run undamped (the oscillation guard still applies) and tighter,
    // so their error does not leak into the outer gap.
    let inner_cfg = if level == 0 {
        SolverConfig {
            tol: cfg.tol * 0.1,
            damping: 1.0,
            ..*cfg
        }
    } else {
        *cfg
    };
    let mut rest: Option<Picard> = None;
    let mut term = |rho_end: &[f64]| -> Result<Vec<f64>> {
        let sol = solve_windows(h, g, rho_end, grid, cuts, level + 1, &inner_cfg, later)?;
        let u0 = sol.u[0].clone();
        rest = Some(sol);
        Ok(u0)
    };
    let out = picard(h, &mut term, rho0, &win, cfg, seed.as_deref())?;
    let rest = rest.expect("terminal evaluated at least once");
    *own = Some(out.rho.clone());
    let (mut u, mut rho) = (out.u, out.rho);
    u.pop();
    rho.pop();
    u.extend(rest.u);
    rho.extend(rest.rho);
    Ok(Picard {
        u,
        rho,
        history: out.history,
    })
}

/// Solve the MFG system from `mu0` by damped Picard iteration.
pub fn solve_mfg(
    h: &dyn Hamiltonian,
    g: &dyn MeasureFunction,
    mu0: &DiscreteMeasure,
    grid: &Grid1D,
    cfg: &SolverConfig,
) -> Result<MfgSolution> {
    solve_mfg_warm(h, g, mu0, grid, cfg, None)
}

/// As [`solve_mfg`], seeding the iteration with a density flow (typically a
/// nearby solution on the same grid).
pub fn solve_mfg_warm(
    h: &dyn Hamiltonian,
    g: &dyn MeasureFunction,
    mu0: &DiscreteMeasure,
    grid: &Grid1D,
    cfg: &SolverConfig,
    warm: Option<&[Vec<f64>]>,
) -> Result<MfgSolution> {
    cfg.validate()?;
    if h.dim() != 1 || g.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: h.dim().max(g.dim()),
        });
    }
    let (rho0, projected) = grid.deposit(mu0)?;
    let (out, partition) = match cfg.partition_len {
        None => {
            let mut term = terminal_from_cost(g, grid);
            (picard(h, &mut term, &rho0, grid, cfg, warm)?, vec![grid.t0])
        }
        Some(len) => {
            let cuts = partition_steps(grid, len)?;
            let mut slots = vec![None; cuts.len() - 1];
            if let Some(w) = warm {
                for (k, slot) in slots.iter_mut().enumerate() {
                    *slot = Some(w[cuts[k]..=cuts[k + 1]].to_vec());
                }
            }
            let out = solve_windows(h, g, &rho0, grid, &cuts, 0, cfg, &mut slots)?;
            let times = cuts[..cuts.len() - 1].iter().map(|&n| grid.time(n)).collect();
            (out, times)
        }
    };
    Ok(MfgSolution {
        grid: *grid,
        iterations: out.history.len(),
        u: out.u,
        rho: out.rho,
        residual_history: out.history,
        partition,
        projected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{QuadraticMeanCoupling, SeparableHamiltonian};

    #[test]
    fn hybrid_weight_is_monotone() {
        for &a in &[-50.0, -3.0, -0.1, 0.0, 0.2, 4.0, 80.0] {
            let h = 0.1;
            let th = hybrid_weight(a, h);
            // off-diagonal signs of the FP matrix
            assert!(a * (1.0 - th) - DIFF / h <= 1e-15);
            assert!(a * th + DIFF / h >= -1e-15);
        }
    }

    #[test]
    fn partition_windows_respect_length() {
        let g = Grid1D::new(-1.0, 1.0, 10, 0.0, 1.0, 200).unwrap();
        let cuts = partition_steps(&g, 1.0 / 3.0).unwrap();
        assert_eq!(cuts, vec![0, 50, 100, 150, 200]);
        let cuts = partition_steps(&g, 2.0).unwrap();
        assert_eq!(cuts, vec![0, 200]);
    }

    #[test]
    fn free_problem_with_zero_cost_stays_zero() {
        let grid = Grid1D::new(-4.0, 4.0, 40, 0.0, 1.0, 20).unwrap();
        let h = SeparableHamiltonian::free(1);
        let g = QuadraticMeanCoupling::new(1, 0.0, 0.0);
        let mu = DiscreteMeasure::dirac(&[0.3]);
        let sol = solve_mfg(&h, &g, &mu, &grid, &SolverConfig::default()).unwrap();
        assert!(sol.u.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.residual_history, vec![0.0]);
    }
}

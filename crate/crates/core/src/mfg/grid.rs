use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;

/// Uniform finite-volume grid: `nx` cells of width `dx` on `[x_min, x_max]`
/// with centres `x_min + (i + 1/2) dx`, and `nt` steps on `[t0, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub t0: f64,
    pub t_end: f64,
    pub nt: usize,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, nx: usize, t0: f64, t_end: f64, nt: usize) -> Result<Self> {
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::InvalidArgument {
                name: "x_min/x_max",
                reason: format!("need x_min < x_max, got [{x_min}, {x_max}]"),
            });
        }
        if !(t0 < t_end) || !t0.is_finite() || !t_end.is_finite() {
            return Err(Error::InvalidArgument {
                name: "t0/t_end",
                reason: format!("need t0 < t_end, got [{t0}, {t_end}]"),
            });
        }
        if nx < 8 {
            return Err(Error::InvalidArgument {
                name: "nx",
                reason: format!("need at least 8 cells, got {nx}"),
            });
        }
        if nt < 4 {
            return Err(Error::InvalidArgument {
                name: "nt",
                reason: format!("need at least 4 steps, got {nt}"),
            });
        }
        Ok(Self {
            x_min,
            x_max,
            nx,
            t0,
            t_end,
            nt,
        })
    }

    /// Smallest interval holding the support of `mu0` inflated by
    /// `drift_bound * (t_end - t0) + 5 sqrt(t_end - t0)`.
    pub fn for_measure(
        mu0: &DiscreteMeasure,
        drift_bound: f64,
        t0: f64,
        t_end: f64,
        nx: usize,
        nt: usize,
    ) -> Result<Self> {
        let (lo, hi) = Self::required_span(mu0, drift_bound, t_end - t0)?;
        Self::new(lo, hi, nx, t0, t_end, nt)
    }

    fn required_span(mu0: &DiscreteMeasure, drift_bound: f64, horizon: f64) -> Result<(f64, f64)> {
        if mu0.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: mu0.dim(),
            });
        }
        let lo = mu0.atoms_flat().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = mu0.atoms_flat().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pad = drift_bound.abs() * horizon.max(0.0) + 5.0 * horizon.max(0.0).sqrt();
        Ok((lo - pad, hi + pad))
    }

    pub fn check_covers(&self, mu0: &DiscreteMeasure, drift_bound: f64) -> Result<()> {
        let (lo, hi) = Self::required_span(mu0, drift_bound, self.t_end - self.t0)?;
        if lo < self.x_min || hi > self.x_max {
            return Err(Error::GridTooSmall {
                x_min: self.x_min,
                x_max: self.x_max,
                need_min: lo,
                need_max: hi,
            });
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.nt as f64
    }

    /// `dt / dx^2`, diagnostics only: the schemes are implicit.
    pub fn cfl(&self) -> f64 {
        self.dt() / (self.dx() * self.dx())
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx()
    }

    /// Right face of cell `j`.
    pub fn face(&self, j: usize) -> f64 {
        self.x_min + (j + 1) as f64 * self.dx()
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    /// Index of the time node nearest to `t`.
    pub fn time_index(&self, t: f64) -> usize {
        (((t - self.t0) / self.dt()).round().max(0.0) as usize).min(self.nt)
    }

    /// The same space grid on time steps `from..=to`.
    pub fn window(&self, from: usize, to: usize) -> Self {
        Self {
            t0: self.time(from),
            t_end: self.time(to),
            nt: to - from,
            ..*self
        }
    }

    /// Same space grid, horizon `[t0, t_end]` with the step of `self`
    /// (rounded to an integer count, at least 4).
    pub fn restarted(&self, t0: f64) -> Result<Self> {
        let nt = (((self.t_end - t0) / self.dt()).round() as usize).max(4);
        Self::new(self.x_min, self.x_max, self.nx, t0, self.t_end, nt)
    }

    /// Density (per unit length) from atoms by linear hat splitting between
    /// neighbouring centres. Exact for the mean of atoms away from the edges.
    /// The flag reports atoms outside the grid, which are moved to the edge cell.
    pub fn deposit(&self, mu: &DiscreteMeasure) -> Result<(Vec<f64>, bool)> {
        if mu.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: mu.dim(),
            });
        }
        let h = self.dx();
        let mut rho = vec![0.0; self.nx];
        let mut projected = false;
        for (y, w) in mu.iter() {
            let y = y[0];
            if y < self.x_min || y > self.x_max {
                projected = true;
            }
            let s = (y - self.x_min) / h - 0.5;
            if s <= 0.0 {
                rho[0] += w;
            } else if s >= (self.nx - 1) as f64 {
                rho[self.nx - 1] += w;
            } else {
                let i = s.floor() as usize;
                let f = s - i as f64;
                rho[i] += w * (1.0 - f);
                rho[i + 1] += w * f;
            }
        }
        rho.iter_mut().for_each(|r| *r /= h);
        Ok((rho, projected))
    }

    /// Cells as atoms at their centres with weights `rho_i dx`.
    pub fn to_measure(&self, rho: &[f64]) -> Result<DiscreteMeasure> {
        let h = self.dx();
        DiscreteMeasure::from_masses(1, self.centers(), rho.iter().map(|r| r.max(0.0) * h).collect())
    }

    pub fn mass(&self, rho: &[f64]) -> f64 {
        rho.iter().sum::<f64>() * self.dx()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x(0) && x <= self.x(self.nx - 1)
    }

    fn bracket(&self, x: f64) -> (usize, f64) {
        let s = ((x - self.x_min) / self.dx() - 0.5).clamp(0.0, (self.nx - 1) as f64);
        let i = (s.floor() as usize).min(self.nx - 2);
        (i, s - i as f64)
    }

    /// Piecewise linear interpolation between centres, constant beyond them.
    pub fn interp_linear(&self, v: &[f64], x: f64) -> f64 {
        let (i, f) = self.bracket(x);
        v[i] * (1.0 - f) + v[i + 1] * f
    }

    /// Cubic Lagrange interpolation on the four nearest centres.
    pub fn interp_cubic(&self, v: &[f64], x: f64) -> f64 {
        let (i, f) = self.bracket(x);
        let j = i.saturating_sub(1).min(self.nx - 4);
        let s = f + (i - j) as f64;
        let mut out = 0.0;
        for a in 0..4 {
            let mut l = 1.0;
            for b in 0..4 {
                if a != b {
                    l *= (s - b as f64) / (a as f64 - b as f64);
                }
            }
            out += l * v[j + a];
        }
        out
    }

    /// Centred first difference, one-sided at the ends.
    pub fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let h = self.dx();
        let n = self.nx;
        (0..n)
            .map(|i| {
                if i == 0 {
                    (v[1] - v[0]) / h
                } else if i == n - 1 {
                    (v[n - 1] - v[n - 2]) / h
                } else {
                    (v[i + 1] - v[i - 1]) / (2.0 * h)
                }
            })
            .collect()
    }

    /// Centred second difference, copied from the neighbour at the ends.
    pub fn second_derivative(&self, v: &[f64]) -> Vec<f64> {
        let h2 = self.dx() * self.dx();
        let n = self.nx;
        let mut out = vec![0.0; n];
        for i in 1..n - 1 {
            out[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / h2;
        }
        out[0] = out[1];
        out[n - 1] = out[n - 2];
        out
    }
}

//! Lagrangians `L(x, mu, a) = sup_p [-a.p - H(x, mu, p)]` and their
//! derivatives through the maximizer `p*`.

use std::sync::Arc;

use super::{BoundMeasure, Hamiltonian, MeasureFunction};
use crate::error::{Error, Result};
use crate::linalg::{dot, invert, mat_mul, norm, solve_dense, transpose};
use crate::measures::DiscreteMeasure;

const GRAD_TOL: f64 = 1e-10;
const MAX_NEWTON: usize = 100;

/// Derivative interface on the Lagrangian side. Matrix conventions match
/// [`Hamiltonian`]: `hess_xa[(i, j)] = d/dx_i d/da_j L`,
/// `lions_a[(i, j)] = d/da_i (d_mu L)_j`.
pub trait LagrangianModel: Send + Sync {
    fn dim(&self) -> usize;
    fn bind<'a>(&self, mu: &'a DiscreteMeasure) -> BoundMeasure<'a>;
    fn value(&self, x: &[f64], m: &BoundMeasure, a: &[f64]) -> Result<f64>;
    fn grad_x(&self, x: &[f64], m: &BoundMeasure, a: &[f64], out: &mut [f64]) -> Result<()>;
    fn grad_a(&self, x: &[f64], m: &BoundMeasure, a: &[f64], out: &mut [f64]) -> Result<()>;
    fn hess_xx(&self, x: &[f64], m: &BoundMeasure, a: &[f64], out: &mut [f64]) -> Result<()>;
    fn hess_xa(&self, x: &[f64], m: &BoundMeasure, a: &[f64], out: &mut [f64]) -> Result<()>;
    fn hess_aa(&self, x: &[f64], m: &BoundMeasure, a: &[f64], out: &mut [f64]) -> Result<()>;
    fn lions(&self, x: &[f64], m: &BoundMeasure, y: &[f64], a: &[f64], out: &mut [f64]) -> Result<()>;
    fn lions_x(&self, x: &[f64], m: &BoundMeasure, y: &[f64], a: &[f64], out: &mut [f64]) -> Result<()>;
    fn lions_a(&self, x: &[f64], m: &BoundMeasure, y: &[f64], a: &[f64], out: &mut [f64]) -> Result<()>;
}

/// Damped Newton for the maximizer of a smooth concave function, stopping
/// when the gradient norm drops to `GRAD_TOL`.
pub(crate) fn maximize_concave(
    start: Vec<f64>,
    f: impl Fn(&[f64]) -> f64,
    grad: impl Fn(&[f64], &mut [f64]),
    neg_hess: impl Fn(&[f64], &mut [f64]),
) -> Result<Vec<f64>> {
    let d = start.len();
    let mut p = start;
    let mut g = vec![0.0; d];
    let mut h = vec![0.0; d * d];
    grad(&p, &mut g);
    for _ in 0..MAX_NEWTON {
        let gn = norm(&g);
        if gn <= GRAD_TOL {
            return Ok(p);
        }
        neg_hess(&p, &mut h);
        let step = solve_dense(&h, &g)?;
        let f0 = f(&p);
        let slope = dot(&g, &step);
        let mut t = 1.0;
        let mut trial = vec![0.0; d];
        let mut gt = vec![0.0; d];
        for _ in 0..40 {
            for i in 0..d {
                trial[i] = p[i] + t * step[i];
            }
            grad(&trial, &mut gt);
            if norm(&gt) < gn || f(&trial) >= f0 + 1e-4 * t * slope {
                break;
            }
            t *= 0.5;
        }
        std::mem::swap(&mut p, &mut trial);
        std::mem::swap(&mut g, &mut gt);
        if p.iter().any(|v| !v.is_finite()) {
            break;
        }
    }
    if norm(&g) <= GRAD_TOL {
        return Ok(p);
    }
    Err(Error::NewtonDivergence {
        iterations: MAX_NEWTON,
        residual: norm(&g),
        last: p,
    })
}

/// The maximizer `p*` of `p -> -a.p - H(x, mu, p)`, i.e. the root of
/// `d_p H(x, mu, p) = -a`.
pub fn legendre_maximizer(h: &dyn Hamiltonian, x: &[f64], m: &BoundMeasure, a: &[f64]) -> Result<Vec<f64>> {
    let d = h.dim();
    if x.len() != d || a.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: if x.len() != d { x.len() } else { a.len() },
        });
    }
    let c0 = h.constants().convexity.max(1e-6);
    let start: Vec<f64> = a.iter().map(|v| -v / c0).collect();
    maximize_concave(
        start,
        |p| -dot(a, p) - h.value(x, m, p),
        |p, out| {
            h.grad_p(x, m, p, out);
            for (o, v) in out.iter_mut().zip(a) {
                *o = -*o - v;
            }
        },
        |p, out| h.hess_pp(x, m, p, out),
    )
}

/// `L(x, mu, a) = sup_p [-a.p - H(x, mu, p)]`.
pub fn legendre_lagrangian(h: &dyn Hamiltonian, x: &[f64], mu: &DiscreteMeasure, a: &[f64]) -> Result<f64> {
    let m = h.bind(mu);
    let p = legendre_maximizer(h, x, &m, a)?;
    Ok(-dot(a, &p) - h.value(x, &m, &p))
}

/// Lagrangian of an arbitrary uniformly convex Hamiltonian. Every derivative
/// is assembled from those of `H` at the maximizer.
#[derive(Clone)]
pub struct LegendreLagrangian {
    pub h: Arc<dyn Hamiltonian>,
}

impl LegendreLagrangian {
    pub fn new(h: Arc<dyn Hamiltonian>) -> Self {
        Self { h }
    }

    fn at(&self, x: &[f64], m: &BoundMeasure, a: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let p = legendre_maximizer(self.h.as_ref(), x, m, a)?;
        let d = self.h.dim();
        let mut hpp = vec![0.0; d * d];
        self.h.hess_pp(x, m, &p, &mut hpp);
        let inv = invert(&hpp, d)?;
        Ok((p, inv))
    }
}

impl LagrangianModel for LegendreLagrangian {
    fn dim(&self) -> usize {
        self.h.dim()
    }

    fn bind<'a>(&self, mu: &'a DiscreteMeasure) -> BoundMeasure<'a> {
        self.h.bind(mu)
    }

    fn value(&self, x: &[f64], m: &BoundMeasure, a: &[f64]) -> Result<f64> {
        let p = legendre_maximizer(self.h.as_ref(), x, m, a)?;
        Ok(-dot(a, &p) - self.h.value(x, m, &p))
    }

    fn grad_x(&self, x: &[f64], m: &BoundMeasure, a: &[f64], out: &mut [f64]) -> Result<()> {
        let p = legendre_maximizer(self.h.as_ref(), x, m, a)?;
        self.h.grad_x(x, m, &p, out);
        out.iter_mut().for_each(|o| *o = -*o);
        Ok(())
    }

    fn grad_a(&self, x: &[f64], m: &BoundMeasure, a: &[f64], out: &mut [f64]) -> Result<()> {
        let p = legendre_maximizer(self.h.as_ref(), x, m, a)?;
        for (o, v) in out.iter_mut().zip(&p) {
            *o = -v;
        }
        Ok(())
    }

    fn hess_xx(&self, x: &[f64], m: &BoundMeasure, a: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.h.dim();
        let (p, inv) = self.at(x, m, a)?;
        let mut hxp = vec![0.0; d * d];
        self.h.hess_xp(x, m, &p, &mut hxp);
        self.h.hess_xx(x, m, &p, out);
        let corr = mat_mul(&mat_mul(&hxp, &inv, d), &transpose(&hxp, d), d);
        for (o, c) in out.iter_mut().zip(&corr) {
            *o = -*o + c;
        }
        Ok(())
    }

    fn hess_xa(&self, x: &[f64], m: &BoundMeasure, a: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.h.dim();
        let (p, inv) = self.at(x, m, a)?;
        let mut hxp = vec![0.0; d * d];
        self.h.hess_xp(x, m, &p, &mut hxp);
        out.copy_from_slice(&mat_mul(&hxp, &inv, d));
        Ok(())
    }

    fn hess_aa(&self, x: &[f64], m: &BoundMeasure, a: &[f64], out: &mut [f64]) -> Result<()> {
        let (_, inv) = self.at(x, m, a)?;
        out.copy_from_slice(&inv);
        Ok(())
    }

    fn lions(&self, x: &[f64], m: &BoundMeasure, y: &[f64], a: &[f64], out: &mut [f64]) -> Result<()> {
        let p = legendre_maximizer(self.h.as_ref(), x, m, a)?;
        self.h.lions(x, m, y, &p, out);
        out.iter_mut().for_each(|o| *o = -*o);
        Ok(())
    }

    fn lions_x(&self, x: &[f64], m: &BoundMeasure, y: &[f64], a: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.h.dim();
        let (p, inv) = self.at(x, m, a)?;
        let mut hxp = vec![0.0; d * d];
        let mut hpm = vec![0.0; d * d];
        self.h.hess_xp(x, m, &p, &mut hxp);
        self.h.lions_p(x, m, y, &p, &mut hpm);
        self.h.lions_x(x, m, y, &p, out);
        let corr = mat_mul(&mat_mul(&hxp, &inv, d), &hpm, d);
        for (o, c) in out.iter_mut().zip(&corr) {
            *o = -*o + c;
        }
        Ok(())
    }

    fn lions_a(&self, x: &[f64], m: &BoundMeasure, y: &[f64], a: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.h.dim();
        let (p, inv) = self.at(x, m, a)?;
        let mut hpm = vec![0.0; d * d];
        self.h.lions_p(x, m, y, &p, &mut hpm);
        out.copy_from_slice(&mat_mul(&inv, &hpm, d));
        Ok(())
    }
}

/// Closed form `L(x, mu, a) = |a|^2 / (2k) + F(x, mu)`, the Lagrangian of
/// `H = (k/2)|p|^2 - F(x, mu)`.
#[derive(Clone)]
pub struct QuadraticKineticLagrangian {
    pub k: f64,
    pub coupling: Arc<dyn MeasureFunction>,
}

impl LagrangianModel for QuadraticKineticLagrangian {
    fn dim(&self) -> usize {
        self.coupling.dim()
    }

    fn bind<'a>(&self, mu: &'a DiscreteMeasure) -> BoundMeasure<'a> {
        self.coupling.bind(mu)
    }

    fn value(&self, x: &[f64], m: &BoundMeasure, a: &[f64]) -> Result<f64> {
        Ok(dot(a, a) / (2.0 * self.k) + self.coupling.value(x, m))
    }

    fn grad_x(&self, x: &[f64], m: &BoundMeasure, _a: &[f64], out: &mut [f64]) -> Result<()> {
        self.coupling.grad_x(x, m, out);
        Ok(())
    }

    fn grad_a(&self, _x: &[f64], _m: &BoundMeasure, a: &[f64], out: &mut [f64]) -> Result<()> {
        for (o, v) in out.iter_mut().zip(a) {
            *o = v / self.k;
        }
        Ok(())
    }

    fn hess_xx(&self, x: &[f64], m: &BoundMeasure, _a: &[f64], out: &mut [f64]) -> Result<()> {
        self.coupling.hess_xx(x, m, out);
        Ok(())
    }

    fn hess_xa(&self, _x: &[f64], _m: &BoundMeasure, _a: &[f64], out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|o| *o = 0.0);
        Ok(())
    }

    fn hess_aa(&self, _x: &[f64], _m: &BoundMeasure, a: &[f64], out: &mut [f64]) -> Result<()> {
        let d = a.len();
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..d {
            out[i * d + i] = 1.0 / self.k;
        }
        Ok(())
    }

    fn lions(&self, x: &[f64], m: &BoundMeasure, y: &[f64], _a: &[f64], out: &mut [f64]) -> Result<()> {
        self.coupling.lions(x, m, y, out);
        Ok(())
    }

    fn lions_x(&self, x: &[f64], m: &BoundMeasure, y: &[f64], _a: &[f64], out: &mut [f64]) -> Result<()> {
        self.coupling.lions_x(x, m, y, out);
        Ok(())
    }

    fn lions_a(&self, _x: &[f64], _m: &BoundMeasure, _y: &[f64], _a: &[f64], out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|o| *o = 0.0);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::SeparableHamiltonian;

    #[test]
    fn free_lagrangian_matches_grid_supremum() {
        let h = SeparableHamiltonian::free(1);
        let mu = DiscreteMeasure::dirac(&[0.0]);
        for a in [-2.5, -0.3, 0.0, 1.1, 4.0] {
            let l = legendre_lagrangian(&h, &[0.7], &mu, &[a]).unwrap();
            let brute = (0..=20_000)
                .map(|i| {
                    let p = -10.0 + i as f64 * 1e-3;
                    -a * p - 0.5 * p * p
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((l - 0.5 * a * a).abs() < 1e-12);
            assert!((l - brute).abs() < 1e-6);
        }
    }

    #[test]
    fn newton_reports_divergence() {
        // Linear objective: no maximizer, the gradient never shrinks.
        let r = maximize_concave(
            vec![0.0],
            |p| p[0],
            |_, g| g[0] = 1.0,
            |_, h| h[0] = 1e12,
        );
        assert!(matches!(r, Err(Error::NewtonDivergence { .. })));
    }
}

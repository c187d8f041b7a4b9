//! Shipped couplings and separable Hamiltonians. Measure dependence is
//! through statistics `int f dmu`, so every Lions derivative is closed form.

use std::sync::Arc;

use super::{BoundMeasure, Hamiltonian, HamiltonianConstants, MeasureFunction, TangentMoments};
use crate::measures::{DiscreteMeasure, TangentSample};

fn zero(out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
}

fn scaled_identity(out: &mut [f64], d: usize, s: f64) {
    zero(out);
    for i in 0..d {
        out[i * d + i] = s;
    }
}

/// `U(x, mu) = (q/2)|x|^2 + c <x, m(mu)>` with `m` the mean.
///
/// Serves as the LQ running coupling `F` and, with `c = 0`, as the quadratic
/// terminal cost. Its displacement form is `q E|eta|^2 + c |E eta|^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticMeanCoupling {
    pub dim: usize,
    pub q: f64,
    pub c: f64,
}

impl QuadraticMeanCoupling {
    pub fn new(dim: usize, q: f64, c: f64) -> Self {
        Self { dim, q, c }
    }
}

impl MeasureFunction for QuadraticMeanCoupling {
    fn dim(&self) -> usize {
        self.dim
    }

    fn bind<'a>(&self, mu: &'a DiscreteMeasure) -> BoundMeasure<'a> {
        BoundMeasure {
            measure: mu,
            stats: mu.mean(),
        }
    }

    fn value(&self, x: &[f64], m: &BoundMeasure) -> f64 {
        let xm: f64 = x.iter().zip(&m.stats).map(|(a, b)| a * b).sum();
        0.5 * self.q * crate::linalg::norm_sq(x) + self.c * xm
    }

    fn grad_x(&self, x: &[f64], m: &BoundMeasure, out: &mut [f64]) {
        for i in 0..self.dim {
            out[i] = self.q * x[i] + self.c * m.stats[i];
        }
    }

    fn hess_xx(&self, _x: &[f64], _m: &BoundMeasure, out: &mut [f64]) {
        scaled_identity(out, self.dim, self.q);
    }

    fn lions(&self, x: &[f64], _m: &BoundMeasure, _y: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            out[i] = self.c * x[i];
        }
    }

    fn lions_x(&self, _x: &[f64], _m: &BoundMeasure, _y: &[f64], out: &mut [f64]) {
        scaled_identity(out, self.dim, self.c);
    }

    fn tangent_moments(&self, _m: &BoundMeasure, sample: &TangentSample) -> TangentMoments {
        TangentMoments::Statistics(sample.tangent_mean())
    }

    fn lions_x_apply(&self, _x: &[f64], _m: &BoundMeasure, tm: &TangentMoments, out: &mut [f64]) {
        match tm {
            TangentMoments::Statistics(s) => {
                for (o, v) in out.iter_mut().zip(s) {
                    *o = self.c * v;
                }
            }
            TangentMoments::Pointwise(sample) => {
                for (o, v) in out.iter_mut().zip(sample.tangent_mean()) {
                    *o = self.c * v;
                }
            }
        }
    }

    fn measure_free(&self) -> bool {
        self.c == 0.0
    }
}

/// `U(x, mu) = (q/2)|x|^2 + c sum_i sin(k x_i) s_i(mu)` with
/// `s_i(mu) = int sin(k y_i) mu(dy)`. A nonlinear statistic coupling whose
/// mixed derivative `c k^2 cos(k x_i) cos(k y_i)` is a nonnegative kernel for
/// `c >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineCoupling {
    pub dim: usize,
    pub q: f64,
    pub c: f64,
    pub k: f64,
}

impl MeasureFunction for CosineCoupling {
    fn dim(&self) -> usize {
        self.dim
    }

    fn bind<'a>(&self, mu: &'a DiscreteMeasure) -> BoundMeasure<'a> {
        let stats = (0..self.dim)
            .map(|i| mu.integrate(|y| (self.k * y[i]).sin()))
            .collect();
        BoundMeasure { measure: mu, stats }
    }

    fn value(&self, x: &[f64], m: &BoundMeasure) -> f64 {
        let cross: f64 = (0..self.dim).map(|i| (self.k * x[i]).sin() * m.stats[i]).sum();
        0.5 * self.q * crate::linalg::norm_sq(x) + self.c * cross
    }

    fn grad_x(&self, x: &[f64], m: &BoundMeasure, out: &mut [f64]) {
        for i in 0..self.dim {
            out[i] = self.q * x[i] + self.c * self.k * (self.k * x[i]).cos() * m.stats[i];
        }
    }

    fn hess_xx(&self, x: &[f64], m: &BoundMeasure, out: &mut [f64]) {
        let d = self.dim;
        zero(out);
        for i in 0..d {
            out[i * d + i] = self.q - self.c * self.k * self.k * (self.k * x[i]).sin() * m.stats[i];
        }
    }

    fn lions(&self, x: &[f64], _m: &BoundMeasure, y: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            out[i] = self.c * (self.k * x[i]).sin() * self.k * (self.k * y[i]).cos();
        }
    }

    fn lions_x(&self, x: &[f64], _m: &BoundMeasure, y: &[f64], out: &mut [f64]) {
        let d = self.dim;
        zero(out);
        for i in 0..d {
            out[i * d + i] = self.c * self.k * self.k * (self.k * x[i]).cos() * (self.k * y[i]).cos();
        }
    }

    fn tangent_moments(&self, _m: &BoundMeasure, sample: &TangentSample) -> TangentMoments {
        let mut s = vec![0.0; self.dim];
        for j in 0..sample.len() {
            let (y, w, eta) = (sample.base.atom(j), sample.base.weight(j), sample.tangent(j));
            for i in 0..self.dim {
                s[i] += w * self.k * (self.k * y[i]).cos() * eta[i];
            }
        }
        TangentMoments::Statistics(s)
    }

    fn lions_x_apply(&self, x: &[f64], m: &BoundMeasure, tm: &TangentMoments, out: &mut [f64]) {
        let s = match tm {
            TangentMoments::Statistics(s) => s.clone(),
            TangentMoments::Pointwise(sample) => match self.tangent_moments(m, sample) {
                TangentMoments::Statistics(s) => s,
                TangentMoments::Pointwise(_) => unreachable!(),
            },
        };
        for i in 0..self.dim {
            out[i] = self.c * self.k * (self.k * x[i]).cos() * s[i];
        }
    }

    fn measure_free(&self) -> bool {
        self.c == 0.0
    }

    fn lipschitz_constants(&self) -> Option<(f64, f64, f64)> {
        if self.q != 0.0 {
            return None;
        }
        let l = self.c.abs() * self.k * (self.dim as f64).sqrt();
        Some((l, l, l))
    }
}

/// Momentum part `H_0(p)` of a separable Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kinetic {
    /// `(k/2)|p|^2`.
    Quadratic { k: f64 },
    /// `(k/2)|p|^2 + s sum_i log cosh(p_i)`, uniformly convex with `c0 = k`.
    LogCosh { k: f64, s: f64 },
}

impl Kinetic {
    fn value(&self, p: &[f64]) -> f64 {
        match *self {
            Kinetic::Quadratic { k } => 0.5 * k * crate::linalg::norm_sq(p),
            Kinetic::LogCosh { k, s } => {
                0.5 * k * crate::linalg::norm_sq(p) + s * p.iter().map(|v| v.cosh().ln()).sum::<f64>()
            }
        }
    }

    fn grad(&self, p: &[f64], out: &mut [f64]) {
        match *self {
            Kinetic::Quadratic { k } => {
                for (o, v) in out.iter_mut().zip(p) {
                    *o = k * v;
                }
            }
            Kinetic::LogCosh { k, s } => {
                for (o, v) in out.iter_mut().zip(p) {
                    *o = k * v + s * v.tanh();
                }
            }
        }
    }

    fn hess(&self, p: &[f64], out: &mut [f64]) {
        let d = p.len();
        zero(out);
        for i in 0..d {
            out[i * d + i] = match *self {
                Kinetic::Quadratic { k } => k,
                Kinetic::LogCosh { k, s } => {
                    let sech = 1.0 / p[i].cosh();
                    k + s * sech * sech
                }
            };
        }
    }

    pub fn convexity(&self) -> f64 {
        match *self {
            Kinetic::Quadratic { k } | Kinetic::LogCosh { k, .. } => k,
        }
    }

    fn curvature_bound(&self) -> f64 {
        match *self {
            Kinetic::Quadratic { k } => k,
            Kinetic::LogCosh { k, s } => k + s.abs(),
        }
    }
}

/// `H(x, mu, p) = H_0(p) - F(x, mu)`.
#[derive(Clone)]
pub struct SeparableHamiltonian {
    pub kinetic: Kinetic,
    pub coupling: Arc<dyn MeasureFunction>,
}

impl std::fmt::Debug for SeparableHamiltonian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SeparableHamiltonian")
            .field("kinetic", &self.kinetic)
            .field("dim", &self.coupling.dim())
            .finish()
    }
}

impl SeparableHamiltonian {
    pub fn new(kinetic: Kinetic, coupling: Arc<dyn MeasureFunction>) -> Self {
        Self { kinetic, coupling }
    }

    /// `H = (1/2)|p|^2 - (q/2)|x|^2 - c <x, m(mu)>`.
    pub fn lq(dim: usize, q: f64, c: f64) -> Self {
        Self::new(
            Kinetic::Quadratic { k: 1.0 },
            Arc::new(QuadraticMeanCoupling::new(dim, q, c)),
        )
    }

    /// `H = (1/2)|p|^2`, no state or measure dependence.
    pub fn free(dim: usize) -> Self {
        Self::lq(dim, 0.0, 0.0)
    }
}

impl Hamiltonian for SeparableHamiltonian {
    fn dim(&self) -> usize {
        self.coupling.dim()
    }

    fn bind<'a>(&self, mu: &'a DiscreteMeasure) -> BoundMeasure<'a> {
        self.coupling.bind(mu)
    }

    fn value(&self, x: &[f64], m: &BoundMeasure, p: &[f64]) -> f64 {
        self.kinetic.value(p) - self.coupling.value(x, m)
    }

    fn grad_x(&self, x: &[f64], m: &BoundMeasure, _p: &[f64], out: &mut [f64]) {
        self.coupling.grad_x(x, m, out);
        out.iter_mut().for_each(|o| *o = -*o);
    }

    fn grad_p(&self, _x: &[f64], _m: &BoundMeasure, p: &[f64], out: &mut [f64]) {
        self.kinetic.grad(p, out);
    }

    fn hess_xx(&self, x: &[f64], m: &BoundMeasure, _p: &[f64], out: &mut [f64]) {
        self.coupling.hess_xx(x, m, out);
        out.iter_mut().for_each(|o| *o = -*o);
    }

    fn hess_xp(&self, _x: &[f64], _m: &BoundMeasure, _p: &[f64], out: &mut [f64]) {
        zero(out);
    }

    fn hess_pp(&self, _x: &[f64], _m: &BoundMeasure, p: &[f64], out: &mut [f64]) {
        self.kinetic.hess(p, out);
    }

    fn lions(&self, x: &[f64], m: &BoundMeasure, y: &[f64], _p: &[f64], out: &mut [f64]) {
        self.coupling.lions(x, m, y, out);
        out.iter_mut().for_each(|o| *o = -*o);
    }

    fn lions_x(&self, x: &[f64], m: &BoundMeasure, y: &[f64], _p: &[f64], out: &mut [f64]) {
        self.coupling.lions_x(x, m, y, out);
        out.iter_mut().for_each(|o| *o = -*o);
    }

    fn lions_p(&self, _x: &[f64], _m: &BoundMeasure, _y: &[f64], _p: &[f64], out: &mut [f64]) {
        zero(out);
    }

    fn constants(&self) -> HamiltonianConstants {
        HamiltonianConstants {
            convexity: self.kinetic.convexity(),
            x_growth: self.coupling.lipschitz_constants().map(|(l0, _, _)| l0),
        }
    }

    fn lipschitz_envelope(&self, radius: f64) -> f64 {
        let kin = self.kinetic.curvature_bound() * radius.max(1.0);
        match self.coupling.lipschitz_constants() {
            Some((l0, l1, _)) => kin.max(l0).max(l1),
            None => f64::INFINITY,
        }
    }

    fn measure_free(&self) -> bool {
        self.coupling.measure_free()
    }

    fn tangent_moments(&self, m: &BoundMeasure, sample: &TangentSample) -> TangentMoments {
        self.coupling.tangent_moments(m, sample)
    }

    fn lions_x_apply(&self, x: &[f64], m: &BoundMeasure, _p: &[f64], tm: &TangentMoments, out: &mut [f64]) {
        self.coupling.lions_x_apply(x, m, tm, out);
        out.iter_mut().for_each(|o| *o = -*o);
    }

    fn lions_p_apply(&self, _x: &[f64], _m: &BoundMeasure, _p: &[f64], _tm: &TangentMoments, out: &mut [f64]) {
        zero(out);
    }
}

/// `U(x, mu) + C |x|^2`.
#[derive(Clone)]
pub struct WithQuadratic {
    pub base: Arc<dyn MeasureFunction>,
    pub c: f64,
}

impl MeasureFunction for WithQuadratic {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn bind<'a>(&self, mu: &'a DiscreteMeasure) -> BoundMeasure<'a> {
        self.base.bind(mu)
    }

    fn value(&self, x: &[f64], m: &BoundMeasure) -> f64 {
        self.base.value(x, m) + self.c * crate::linalg::norm_sq(x)
    }

    fn grad_x(&self, x: &[f64], m: &BoundMeasure, out: &mut [f64]) {
        self.base.grad_x(x, m, out);
        out.iter_mut().zip(x).for_each(|(o, v)| *o += 2.0 * self.c * v);
    }

    fn hess_xx(&self, x: &[f64], m: &BoundMeasure, out: &mut [f64]) {
        self.base.hess_xx(x, m, out);
        let d = x.len();
        for i in 0..d {
            out[i * d + i] += 2.0 * self.c;
        }
    }

    fn lions(&self, x: &[f64], m: &BoundMeasure, y: &[f64], out: &mut [f64]) {
        self.base.lions(x, m, y, out);
    }

    fn lions_x(&self, x: &[f64], m: &BoundMeasure, y: &[f64], out: &mut [f64]) {
        self.base.lions_x(x, m, y, out);
    }

    fn measure_free(&self) -> bool {
        self.base.measure_free()
    }

    fn tangent_moments(&self, m: &BoundMeasure, sample: &TangentSample) -> TangentMoments {
        self.base.tangent_moments(m, sample)
    }

    fn lions_x_apply(&self, x: &[f64], m: &BoundMeasure, tm: &TangentMoments, out: &mut [f64]) {
        self.base.lions_x_apply(x, m, tm, out);
    }
}

/// A Hamiltonian at a fixed momentum, `U(x, mu) = H(x, mu, p)`, viewed as a
/// state-measure surface.
#[derive(Clone)]
pub struct FrozenMomentum {
    pub h: Arc<dyn Hamiltonian>,
    pub p: Vec<f64>,
}

impl MeasureFunction for FrozenMomentum {
    fn dim(&self) -> usize {
        self.h.dim()
    }

    fn bind<'a>(&self, mu: &'a DiscreteMeasure) -> BoundMeasure<'a> {
        self.h.bind(mu)
    }

    fn value(&self, x: &[f64], m: &BoundMeasure) -> f64 {
        self.h.value(x, m, &self.p)
    }

    fn grad_x(&self, x: &[f64], m: &BoundMeasure, out: &mut [f64]) {
        self.h.grad_x(x, m, &self.p, out);
    }

    fn hess_xx(&self, x: &[f64], m: &BoundMeasure, out: &mut [f64]) {
        self.h.hess_xx(x, m, &self.p, out);
    }

    fn lions(&self, x: &[f64], m: &BoundMeasure, y: &[f64], out: &mut [f64]) {
        self.h.lions(x, m, y, &self.p, out);
    }

    fn lions_x(&self, x: &[f64], m: &BoundMeasure, y: &[f64], out: &mut [f64]) {
        self.h.lions_x(x, m, y, &self.p, out);
    }

    fn measure_free(&self) -> bool {
        self.h.measure_free()
    }

    fn tangent_moments(&self, m: &BoundMeasure, sample: &TangentSample) -> TangentMoments {
        self.h.tangent_moments(m, sample)
    }

    fn lions_x_apply(&self, x: &[f64], m: &BoundMeasure, tm: &TangentMoments, out: &mut [f64]) {
        self.h.lions_x_apply(x, m, &self.p, tm, out);
    }
}

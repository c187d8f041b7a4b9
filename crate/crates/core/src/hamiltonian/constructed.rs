//! Displacement-monotone Hamiltonians built from a compactly supported
//! perturbation: `H = H_0 + C0 |p|^2 - psi(x)`.

use std::sync::Arc;

use super::{BoundMeasure, Hamiltonian, HamiltonianConstants, TangentMoments};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::measures::{DiscreteMeasure, TangentSample};

/// Bump `chi(x) = (1 - |x|^2 / R^2)^4` on the ball of radius `R`, zero outside.
/// C^3 across the sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Bump {
    r0: f64,
}

impl Bump {
    fn value(&self, x: &[f64]) -> f64 {
        let rho = dot(x, x) / (self.r0 * self.r0);
        if rho >= 1.0 {
            0.0
        } else {
            (1.0 - rho).powi(4)
        }
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        let r2 = self.r0 * self.r0;
        let rho = dot(x, x) / r2;
        let f = if rho >= 1.0 { 0.0 } else { -8.0 / r2 * (1.0 - rho).powi(3) };
        for (o, v) in out.iter_mut().zip(x) {
            *o = f * v;
        }
    }

    fn hess(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        let r2 = self.r0 * self.r0;
        let rho = dot(x, x) / r2;
        out.iter_mut().for_each(|o| *o = 0.0);
        if rho >= 1.0 {
            return;
        }
        let a = -8.0 / r2 * (1.0 - rho).powi(3);
        let b = 48.0 / (r2 * r2) * (1.0 - rho).powi(2);
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = b * x[i] * x[j] + if i == j { a } else { 0.0 };
            }
        }
    }

    /// Radial profile `chi(s)` and its two derivatives in `s = |x|`.
    fn radial(&self, s: f64) -> (f64, f64, f64) {
        let r2 = self.r0 * self.r0;
        let rho = s * s / r2;
        if rho >= 1.0 {
            return (0.0, 0.0, 0.0);
        }
        let v = (1.0 - rho).powi(4);
        let d1 = -8.0 * s / r2 * (1.0 - rho).powi(3);
        let d2 = -8.0 / r2 * (1.0 - rho).powi(3) + 48.0 * s * s / (r2 * r2) * (1.0 - rho).powi(2);
        (v, d1, d2)
    }
}

fn radial_max(r0: f64, g: impl Fn(f64) -> f64) -> f64 {
    let n = 20_000;
    (0..=n).map(|i| g(r0 * i as f64 / n as f64)).fold(0.0, f64::max)
}

/// Compactly supported, non-separable perturbation
/// `H_0(x, mu, p) = kappa chi(x) sin(omega u.p) r(mu)` where
/// `r(mu) = int (u.y) chi(y) mu(dy)` and `u = (1, ..., 1) / sqrt(d)`.
///
/// It vanishes for `|x| > R0`, and its Lions derivatives vanish for
/// `|y| > R0`. Depends on `p`, `x` and `mu` jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeH0 {
    pub dim: usize,
    pub kappa: f64,
    pub r0: f64,
    pub omega: f64,
    dir: Vec<f64>,
    chi: Bump,
    // sup |f|, sup |grad f|, sup |grad chi|, sup |hess chi| (operator norm)
    f_max: f64,
    gf_max: f64,
    gchi_max: f64,
    hchi_max: f64,
}

impl RidgeH0 {
    pub fn new(dim: usize, kappa: f64, r0: f64, omega: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument {
                name: "dim",
                reason: "must be positive".into(),
            });
        }
        if !(r0 > 0.0) {
            return Err(Error::InvalidArgument {
                name: "r0",
                reason: "support radius must be positive".into(),
            });
        }
        let chi = Bump { r0 };
        // 1% slack over the grid maxima
        let slack = 1.01;
        let f_max = slack * radial_max(r0, |s| s * chi.radial(s).0);
        let gf_max = slack * radial_max(r0, |s| {
            let (v, d1, _) = chi.radial(s);
            v + s * d1.abs()
        });
        let gchi_max = 8.0 / r0 * (6.0f64 / 7.0).powi(3) / 7f64.sqrt();
        let hchi_max = slack
            * radial_max(r0, |s| {
                let (_, d1, d2) = chi.radial(s);
                let tangential = if s > 0.0 { (d1 / s).abs() } else { 8.0 / (r0 * r0) };
                d2.abs().max(tangential)
            });
        Ok(Self {
            dim,
            kappa,
            r0,
            omega,
            dir: vec![1.0 / (dim as f64).sqrt(); dim],
            chi,
            f_max,
            gf_max,
            gchi_max: gchi_max * slack,
            hchi_max,
        })
    }

    fn f(&self, y: &[f64]) -> f64 {
        dot(&self.dir, y) * self.chi.value(y)
    }

    fn grad_f(&self, y: &[f64], out: &mut [f64]) {
        self.chi.grad(y, out);
        let uy = dot(&self.dir, y);
        let c = self.chi.value(y);
        for (o, u) in out.iter_mut().zip(&self.dir) {
            *o = *o * uy + c * u;
        }
    }

    fn phase(&self, p: &[f64]) -> (f64, f64) {
        (self.omega * dot(&self.dir, p)).sin_cos()
    }

    /// Common bound `C` on `|d_xmu H0|, |d_xx H0|, |d_pmu H0|`.
    pub fn second_order_bound(&self) -> f64 {
        let k = self.kappa.abs();
        (k * self.gchi_max * self.gf_max)
            .max(k * self.f_max * self.hchi_max)
            .max(k * self.omega.abs() * self.gf_max)
    }

    /// Lower bound on the eigenvalues of `d_pp H0`.
    pub fn pp_floor(&self) -> f64 {
        -self.kappa.abs() * self.omega * self.omega * self.f_max
    }

    /// Package with its support radius and bounds for
    /// [`build_example_hamiltonian`].
    pub fn into_compact(self) -> CompactH0 {
        CompactH0 {
            r0: self.r0,
            bound: self.second_order_bound(),
            pp_floor: self.pp_floor(),
            x_bound: self.kappa.abs() * self.gchi_max * self.f_max,
            model: Arc::new(self),
        }
    }
}

impl Hamiltonian for RidgeH0 {
    fn dim(&self) -> usize {
        self.dim
    }

    fn bind<'a>(&self, mu: &'a DiscreteMeasure) -> BoundMeasure<'a> {
        BoundMeasure {
            measure: mu,
            stats: vec![mu.integrate(|y| self.f(y))],
        }
    }

    fn value(&self, x: &[f64], m: &BoundMeasure, p: &[f64]) -> f64 {
        self.kappa * self.chi.value(x) * self.phase(p).0 * m.stats[0]
    }

    fn grad_x(&self, x: &[f64], m: &BoundMeasure, p: &[f64], out: &mut [f64]) {
        self.chi.grad(x, out);
        let s = self.kappa * self.phase(p).0 * m.stats[0];
        out.iter_mut().for_each(|o| *o *= s);
    }

    fn grad_p(&self, x: &[f64], m: &BoundMeasure, p: &[f64], out: &mut [f64]) {
        let s = self.kappa * self.chi.value(x) * self.phase(p).1 * self.omega * m.stats[0];
        for (o, u) in out.iter_mut().zip(&self.dir) {
            *o = s * u;
        }
    }

    fn hess_xx(&self, x: &[f64], m: &BoundMeasure, p: &[f64], out: &mut [f64]) {
        self.chi.hess(x, out);
        let s = self.kappa * self.phase(p).0 * m.stats[0];
        out.iter_mut().for_each(|o| *o *= s);
    }

    fn hess_xp(&self, x: &[f64], m: &BoundMeasure, p: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let mut g = vec![0.0; d];
        self.chi.grad(x, &mut g);
        let s = self.kappa * self.phase(p).1 * self.omega * m.stats[0];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = s * g[i] * self.dir[j];
            }
        }
    }

    fn hess_pp(&self, x: &[f64], m: &BoundMeasure, p: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let s = -self.kappa * self.chi.value(x) * self.phase(p).0 * self.omega * self.omega * m.stats[0];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = s * self.dir[i] * self.dir[j];
            }
        }
    }

    fn lions(&self, x: &[f64], _m: &BoundMeasure, y: &[f64], p: &[f64], out: &mut [f64]) {
        self.grad_f(y, out);
        let s = self.kappa * self.chi.value(x) * self.phase(p).0;
        out.iter_mut().for_each(|o| *o *= s);
    }

    fn lions_x(&self, x: &[f64], _m: &BoundMeasure, y: &[f64], p: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let mut gc = vec![0.0; d];
        let mut gf = vec![0.0; d];
        self.chi.grad(x, &mut gc);
        self.grad_f(y, &mut gf);
        let s = self.kappa * self.phase(p).0;
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = s * gc[i] * gf[j];
            }
        }
    }

    fn lions_p(&self, x: &[f64], _m: &BoundMeasure, y: &[f64], p: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let mut gf = vec![0.0; d];
        self.grad_f(y, &mut gf);
        let s = self.kappa * self.chi.value(x) * self.phase(p).1 * self.omega;
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = s * self.dir[i] * gf[j];
            }
        }
    }

    fn constants(&self) -> HamiltonianConstants {
        HamiltonianConstants {
            convexity: self.pp_floor(),
            x_growth: Some(self.kappa.abs() * self.gchi_max * self.f_max),
        }
    }

    fn lipschitz_envelope(&self, _radius: f64) -> f64 {
        let k = self.kappa.abs();
        let first = k * self.f_max * (self.gchi_max + self.omega.abs()) + k * self.gf_max;
        first.max(self.second_order_bound()).max(-self.pp_floor())
    }

    fn measure_free(&self) -> bool {
        self.kappa == 0.0
    }

    fn tangent_moments(&self, _m: &BoundMeasure, sample: &TangentSample) -> TangentMoments {
        let mut g = vec![0.0; self.dim];
        let mut t = 0.0;
        for j in 0..sample.len() {
            self.grad_f(sample.base.atom(j), &mut g);
            t += sample.base.weight(j) * dot(&g, sample.tangent(j));
        }
        TangentMoments::Statistics(vec![t])
    }

    fn lions_x_apply(&self, x: &[f64], m: &BoundMeasure, p: &[f64], tm: &TangentMoments, out: &mut [f64]) {
        let t = self.statistic(m, tm);
        self.chi.grad(x, out);
        let s = self.kappa * self.phase(p).0 * t;
        out.iter_mut().for_each(|o| *o *= s);
    }

    fn lions_p_apply(&self, x: &[f64], m: &BoundMeasure, p: &[f64], tm: &TangentMoments, out: &mut [f64]) {
        let t = self.statistic(m, tm);
        let s = self.kappa * self.chi.value(x) * self.phase(p).1 * self.omega * t;
        for (o, u) in out.iter_mut().zip(&self.dir) {
            *o = s * u;
        }
    }
}

impl RidgeH0 {
    fn statistic(&self, m: &BoundMeasure, tm: &TangentMoments) -> f64 {
        match tm {
            TangentMoments::Statistics(s) => s[0],
            TangentMoments::Pointwise(sample) => match self.tangent_moments(m, sample) {
                TangentMoments::Statistics(s) => s[0],
                TangentMoments::Pointwise(_) => unreachable!(),
            },
        }
    }
}

/// A perturbation `H0` together with the facts the construction needs:
/// support radius, the common bound `C` on its second-order derivatives,
/// a lower bound on `d_pp H0` and a bound on `|d_x H0|`.
#[derive(Clone)]
pub struct CompactH0 {
    pub model: Arc<dyn Hamiltonian>,
    pub r0: f64,
    pub bound: f64,
    pub pp_floor: f64,
    pub x_bound: f64,
}

/// Convex radial function equal to `C0 |x|^2` on `|x| <= R0`, a cubic blend
/// on `[R0, R0 + 1]` and affine in `|x|` beyond. Globally C^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialBlend {
    pub c0: f64,
    pub r0: f64,
}

impl RadialBlend {
    /// `(Psi(s), Psi'(s), Psi''(s))`.
    pub fn radial(&self, s: f64) -> (f64, f64, f64) {
        let (c, r) = (self.c0, self.r0);
        if s <= r {
            (c * s * s, 2.0 * c * s, 2.0 * c)
        } else if s <= r + 1.0 {
            let t = s - r;
            (
                c * r * r + 2.0 * c * r * t + 2.0 * c * (t * t / 2.0 - t * t * t / 6.0),
                2.0 * c * r + 2.0 * c * (t - t * t / 2.0),
                2.0 * c * (1.0 - t),
            )
        } else {
            let slope = 2.0 * c * r + c;
            let base = c * r * r + 2.0 * c * r + 2.0 * c / 3.0;
            (base + slope * (s - r - 1.0), slope, 0.0)
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.radial(norm(x)).0
    }

    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        let s = norm(x);
        if s <= self.r0 {
            for (o, v) in out.iter_mut().zip(x) {
                *o = 2.0 * self.c0 * v;
            }
            return;
        }
        let d1 = self.radial(s).1;
        for (o, v) in out.iter_mut().zip(x) {
            *o = d1 * v / s;
        }
    }

    pub fn hess(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        let s = norm(x);
        out.iter_mut().for_each(|o| *o = 0.0);
        if s <= self.r0 {
            for i in 0..d {
                out[i * d + i] = 2.0 * self.c0;
            }
            return;
        }
        let (_, d1, d2) = self.radial(s);
        for i in 0..d {
            for j in 0..d {
                let proj = x[i] * x[j] / (s * s);
                let id = if i == j { 1.0 } else { 0.0 };
                out[i * d + j] = d2 * proj + d1 / s * (id - proj);
            }
        }
    }
}

/// `H(x, mu, p) = H0(x, mu, p) + C0 |p|^2 - psi(x)`.
#[derive(Clone)]
pub struct ConstructedHamiltonian {
    pub h0: CompactH0,
    pub c0: f64,
    pub psi: RadialBlend,
}

impl std::fmt::Debug for ConstructedHamiltonian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConstructedHamiltonian")
            .field("c0", &self.c0)
            .field("r0", &self.h0.r0)
            .field("bound", &self.h0.bound)
            .finish()
    }
}

/// Smallest admissible `C0` for a perturbation with second-order bound `c`
/// and `d_pp H0 >= pp_floor`. The strict part `C0 > 3C/2` is reported at
/// its boundary value.
pub fn minimal_c0(c: f64, pp_floor: f64) -> f64 {
    (1.5 * c).max(c + c * c / 8.0).max((1.0 - pp_floor) / 2.0)
}

/// Add `C0 |p|^2 - psi_{C0}(x)` to a compactly supported `H0`.
pub fn build_example_hamiltonian(h0: CompactH0, c0_large: f64) -> Result<ConstructedHamiltonian> {
    let c = h0.bound;
    let minimal = minimal_c0(c, h0.pp_floor);
    let strict_ok = c == 0.0 || 2.0 * c0_large > 3.0 * c;
    if !c0_large.is_finite() || c0_large < minimal || !strict_ok {
        return Err(Error::ConstantTooSmall {
            given: c0_large,
            minimal,
        });
    }
    Ok(ConstructedHamiltonian {
        psi: RadialBlend {
            c0: c0_large,
            r0: h0.r0,
        },
        c0: c0_large,
        h0,
    })
}

impl Hamiltonian for ConstructedHamiltonian {
    fn dim(&self) -> usize {
        self.h0.model.dim()
    }

    fn bind<'a>(&self, mu: &'a DiscreteMeasure) -> BoundMeasure<'a> {
        self.h0.model.bind(mu)
    }

    fn value(&self, x: &[f64], m: &BoundMeasure, p: &[f64]) -> f64 {
        self.h0.model.value(x, m, p) + self.c0 * dot(p, p) - self.psi.value(x)
    }

    fn grad_x(&self, x: &[f64], m: &BoundMeasure, p: &[f64], out: &mut [f64]) {
        self.h0.model.grad_x(x, m, p, out);
        let mut g = vec![0.0; x.len()];
        self.psi.grad(x, &mut g);
        out.iter_mut().zip(&g).for_each(|(o, v)| *o -= v);
    }

    fn grad_p(&self, x: &[f64], m: &BoundMeasure, p: &[f64], out: &mut [f64]) {
        self.h0.model.grad_p(x, m, p, out);
        out.iter_mut().zip(p).for_each(|(o, v)| *o += 2.0 * self.c0 * v);
    }

    fn hess_xx(&self, x: &[f64], m: &BoundMeasure, p: &[f64], out: &mut [f64]) {
        self.h0.model.hess_xx(x, m, p, out);
        let mut h = vec![0.0; out.len()];
        self.psi.hess(x, &mut h);
        out.iter_mut().zip(&h).for_each(|(o, v)| *o -= v);
    }

    fn hess_xp(&self, x: &[f64], m: &BoundMeasure, p: &[f64], out: &mut [f64]) {
        self.h0.model.hess_xp(x, m, p, out);
    }

    fn hess_pp(&self, x: &[f64], m: &BoundMeasure, p: &[f64], out: &mut [f64]) {
        self.h0.model.hess_pp(x, m, p, out);
        let d = p.len();
        for i in 0..d {
            out[i * d + i] += 2.0 * self.c0;
        }
    }

    fn lions(&self, x: &[f64], m: &BoundMeasure, y: &[f64], p: &[f64], out: &mut [f64]) {
        self.h0.model.lions(x, m, y, p, out);
    }

    fn lions_x(&self, x: &[f64], m: &BoundMeasure, y: &[f64], p: &[f64], out: &mut [f64]) {
        self.h0.model.lions_x(x, m, y, p, out);
    }

    fn lions_p(&self, x: &[f64], m: &BoundMeasure, y: &[f64], p: &[f64], out: &mut [f64]) {
        self.h0.model.lions_p(x, m, y, p, out);
    }

    fn constants(&self) -> HamiltonianConstants {
        HamiltonianConstants {
            convexity: 2.0 * self.c0 + self.h0.pp_floor,
            x_growth: Some(self.h0.x_bound + self.c0 * (2.0 * self.h0.r0 + 1.0)),
        }
    }

    fn lipschitz_envelope(&self, radius: f64) -> f64 {
        let own = (2.0 * self.c0 * radius.max(1.0)).max(self.c0 * (2.0 * self.h0.r0 + 1.0));
        own + self.h0.model.lipschitz_envelope(radius)
    }

    fn measure_free(&self) -> bool {
        self.h0.model.measure_free()
    }

    fn tangent_moments(&self, m: &BoundMeasure, sample: &TangentSample) -> TangentMoments {
        self.h0.model.tangent_moments(m, sample)
    }

    fn lions_x_apply(&self, x: &[f64], m: &BoundMeasure, p: &[f64], tm: &TangentMoments, out: &mut [f64]) {
        self.h0.model.lions_x_apply(x, m, p, tm, out);
    }

    fn lions_p_apply(&self, x: &[f64], m: &BoundMeasure, p: &[f64], tm: &TangentMoments, out: &mut [f64]) {
        self.h0.model.lions_p_apply(x, m, p, tm, out);
    }
}

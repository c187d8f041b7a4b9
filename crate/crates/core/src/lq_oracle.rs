//! Closed-form linear-quadratic benchmark in one dimension:
//! `H = |p|^2/2 - (q/2)x^2 - c x m(mu)`, `G = (g/2)x^2`, unit diffusion.
//!
//! The value is `V(t, x, mu) = a_t x^2 / 2 + P_t m x + S_t m^2 / 2 + k_t` with
//! `m` the mean of `mu`, where
//!
//! ```text
//! a' = a^2 - q,              a_T = g
//! P' = 2aP + P^2 - c,        P_T = 0
//! S' = P^2 + 2S(a + P),      S_T = 0
//! k' = -a/2,                 k_T = 0
//! ```
//!
//! Along the equilibrium flow `m' = -(a + P) m`, so `b_t = P_t m_t` and
//! `dV/dmu = P_t x + S_t m_t`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;
use crate::mfg::MfgSolution;

pub const DEFAULT_ODE_STEPS: usize = 10_000;
const BLOW_UP: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqSpec {
    pub q: f64,
    pub c: f64,
    pub g: f64,
    pub horizon: f64,
    pub m0: f64,
    pub var0: f64,
}

impl LqSpec {
    /// Spec whose initial mean and variance are those of `mu0` (d = 1).
    pub fn for_measure(q: f64, c: f64, g: f64, horizon: f64, mu0: &DiscreteMeasure) -> Self {
        let m0 = mu0.mean()[0];
        Self {
            q,
            c,
            g,
            horizon,
            m0,
            var0: mu0.second_moment_sq() - m0 * m0,
        }
    }

    /// `q E|eta|^2 + c |E eta|^2 >= 0` for every tangent.
    pub fn displacement_monotone(&self) -> bool {
        self.q >= 0.0 && self.q + self.c >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqCoefficients {
    pub spec: LqSpec,
    pub times: Vec<f64>,
    pub a: Vec<f64>,
    /// `d b / d m = P`.
    pub p: Vec<f64>,
    pub s: Vec<f64>,
    pub k: Vec<f64>,
    /// `exp(-int_0^t (a + P))`: mean propagator.
    pub phi: Vec<f64>,
    /// `exp(-int_0^t a)`: propagator of centred deviations.
    pub decay: Vec<f64>,
    pub m: Vec<f64>,
    pub var: Vec<f64>,
}

fn rk4<const N: usize>(y: [f64; N], h: f64, f: impl Fn(f64, &[f64; N]) -> [f64; N], t: f64) -> [f64; N] {
    let add = |y: &[f64; N], k: &[f64; N], s: f64| {
        let mut o = *y;
        for i in 0..N {
            o[i] += s * k[i];
        }
        o
    };
    let k1 = f(t, &y);
    let k2 = f(t + h / 2.0, &add(&y, &k1, h / 2.0));
    let k3 = f(t + h / 2.0, &add(&y, &k2, h / 2.0));
    let k4 = f(t + h, &add(&y, &k3, h));
    let mut o = y;
    for i in 0..N {
        o[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    o
}

/// Integrate the Riccati system backward and the mean/variance forward.
pub fn solve_lq(spec: &LqSpec, ode_steps: usize) -> Result<LqCoefficients> {
    if ode_steps < 100 {
        return Err(Error::InvalidArgument {
            name: "ode_steps",
            reason: format!("need at least 100, got {ode_steps}"),
        });
    }
    if !(spec.horizon > 0.0) || spec.g < 0.0 || spec.var0 < 0.0 {
        return Err(Error::Parameter(format!(
            "need horizon > 0, g >= 0, var0 >= 0 (got {}, {}, {})",
            spec.horizon, spec.g, spec.var0
        )));
    }
    let n = ode_steps;
    let h = spec.horizon / n as f64;
    let (q, c) = (spec.q, spec.c);
    let times: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();

    // backward in tau = T - t; state (a, P, S, k)
    let back = |_: f64, y: &[f64; 4]| {
        let (a, p, s) = (y[0], y[1], y[2]);
        [q - a * a, -(2.0 * a * p + p * p - c), -(p * p + 2.0 * s * (a + p)), 0.5 * a]
    };
    let mut a = vec![0.0; n + 1];
    let mut p = vec![0.0; n + 1];
    let mut s = vec![0.0; n + 1];
    let mut k = vec![0.0; n + 1];
    let mut y = [spec.g, 0.0, 0.0, 0.0];
    a[n] = y[0];
    for j in (0..n).rev() {
        y = rk4(y, h, back, 0.0);
        if y.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP) {
            return Err(Error::RiccatiBlowUp { time: times[j] });
        }
        a[j] = y[0];
        p[j] = y[1];
        s[j] = y[2];
        k[j] = y[3];
    }

    // forward: (log phi, log decay, var), coefficients at midpoints by cubic
    // Hermite interpolation from the nodal values and their ODE slopes
    let da = |a: f64| a * a - q;
    let dp = |a: f64, p: f64| 2.0 * a * p + p * p - c;
    let mut phi = vec![1.0; n + 1];
    let mut decay = vec![1.0; n + 1];
    let mut var = vec![spec.var0; n + 1];
    let mut z = [0.0, 0.0, spec.var0];
    for j in 0..n {
        let a_mid = 0.5 * (a[j] + a[j + 1]) + h * (da(a[j]) - da(a[j + 1])) / 8.0;
        let p_mid = 0.5 * (p[j] + p[j + 1]) + h * (dp(a[j], p[j]) - dp(a[j + 1], p[j + 1])) / 8.0;
        let t0 = times[j];
        let coef = |t: f64| {
            if t <= t0 + 0.25 * h {
                (a[j], p[j])
            } else if t <= t0 + 0.75 * h {
                (a_mid, p_mid)
            } else {
                (a[j + 1], p[j + 1])
            }
        };
        z = rk4(
            z,
            h,
            |t, z| {
                let (a, p) = coef(t);
                [-(a + p), -a, -2.0 * a * z[2] + 1.0]
            },
            t0,
        );
        phi[j + 1] = z[0].exp();
        decay[j + 1] = z[1].exp();
        var[j + 1] = z[2];
    }
    let m = phi.iter().map(|f| spec.m0 * f).collect();
    Ok(LqCoefficients {
        spec: *spec,
        times,
        a,
        p,
        s,
        k,
        phi,
        decay,
        m,
        var,
    })
}

impl LqCoefficients {
    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.times.len() - 1;
        let h = self.spec.horizon / n as f64;
        let s = (t / h).clamp(0.0, n as f64);
        let i = (s.floor() as usize).min(n - 1);
        (i, s - i as f64)
    }

    fn at(&self, v: &[f64], t: f64) -> f64 {
        let (i, f) = self.locate(t);
        v[i] * (1.0 - f) + v[i + 1] * f
    }

    pub fn a_at(&self, t: f64) -> f64 {
        self.at(&self.a, t)
    }

    /// `d b_t / d m`.
    pub fn dm_b(&self, t: f64) -> f64 {
        self.at(&self.p, t)
    }

    pub fn s_at(&self, t: f64) -> f64 {
        self.at(&self.s, t)
    }

    pub fn mean(&self, t: f64) -> f64 {
        self.at(&self.m, t)
    }

    pub fn variance(&self, t: f64) -> f64 {
        self.at(&self.var, t)
    }

    pub fn phi_at(&self, t: f64) -> f64 {
        self.at(&self.phi, t)
    }

    pub fn decay_at(&self, t: f64) -> f64 {
        self.at(&self.decay, t)
    }

    /// `b_t` along the equilibrium flow.
    pub fn b(&self, t: f64) -> f64 {
        self.dm_b(t) * self.mean(t)
    }

    /// `c_t` along the equilibrium flow.
    pub fn c(&self, t: f64) -> f64 {
        let m = self.mean(t);
        0.5 * self.s_at(t) * m * m + self.at(&self.k, t)
    }

    /// `d c_t / d m` along the equilibrium flow.
    pub fn dm_c(&self, t: f64) -> f64 {
        self.s_at(t) * self.mean(t)
    }

    /// `V(t, x, mu)` for any `mu` with mean `m`.
    pub fn value_at_mean(&self, t: f64, x: f64, m: f64) -> f64 {
        0.5 * self.a_at(t) * x * x + self.dm_b(t) * m * x + 0.5 * self.s_at(t) * m * m + self.at(&self.k, t)
    }

    /// `d_mu V(t, x, mu, y)` for any `mu` with mean `m`; independent of `y`.
    pub fn dmu_at_mean(&self, t: f64, x: f64, m: f64) -> f64 {
        self.dm_b(t) * x + self.s_at(t) * m
    }

    /// `sup_t |x P_t + S_t m|`: a bound on the slope of `V(t, x, .)` in the
    /// mean, hence on its Lipschitz constant in `W1` and `W2`.
    pub fn lipschitz_bound(&self, x: f64, m: f64) -> f64 {
        (0..self.times.len()).map(|i| (x * self.p[i] + self.s[i] * m).abs()).fold(0.0, f64::max)
    }

    /// Deviation `dX_t` of a tangent particle started at `dX_0 = eta`, in a
    /// cloud whose tangents average to `mean_eta`.
    pub fn tangent(&self, t: f64, eta: f64, mean_eta: f64) -> f64 {
        let e = self.decay_at(t);
        e * eta + (self.phi_at(t) - e) * mean_eta
    }

    /// `a_t E|dX|^2 + P_t (E dX)^2`.
    pub fn profile(&self, t: f64, second_moment: f64, mean: f64) -> f64 {
        self.a_at(t) * second_moment + self.dm_b(t) * mean * mean
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,a,b,c,m,var,dm_b,dm_c\n");
        for (i, &t) in self.times.iter().enumerate() {
            let m = self.m[i];
            let b = self.p[i] * m;
            let c = 0.5 * self.s[i] * m * m + self.k[i];
            writeln!(
                out,
                "{t},{},{b},{c},{m},{},{},{}",
                self.a[i],
                self.var[i],
                self.p[i],
                self.s[i] * m
            )
            .unwrap();
        }
        out
    }
}

/// `V(t, x, mu_t)` on the equilibrium flow.
pub fn oracle_v(coeffs: &LqCoefficients, t: f64, x: f64) -> f64 {
    0.5 * coeffs.a_at(t) * x * x + coeffs.b(t) * x + coeffs.c(t)
}

/// `d_mu V(t, x, mu_t, .)` on the equilibrium flow.
pub fn oracle_dmu_v(coeffs: &LqCoefficients, t: f64, x: f64) -> f64 {
    x * coeffs.dm_b(t) + coeffs.dm_c(t)
}

/// Mean path `(t, m_t)` of the equilibrium started from `mu0` (1-d).
pub fn oracle_flow(coeffs: &LqCoefficients, mu0: &DiscreteMeasure) -> Result<Vec<(f64, f64)>> {
    if mu0.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: mu0.dim(),
        });
    }
    let m0 = mu0.mean()[0];
    Ok(coeffs.times.iter().zip(&coeffs.phi).map(|(&t, f)| (t, m0 * f)).collect())
}

/// Half-width of the band `|x - m_t| <= ERROR_BAND` on which
/// [`flow_errors`] compares values; the Neumann boundary layer of the grid
/// solver stays outside it.
pub const ERROR_BAND: f64 = 4.0;

/// Sup error of a grid solution's value against the oracle over the band
/// around the oracle mean, and sup error of its mean path.
pub fn flow_errors(sol: &MfgSolution, co: &LqCoefficients) -> (f64, f64) {
    let g = &sol.grid;
    let (mut eu, mut em) = (0.0f64, 0.0f64);
    for n in 0..=g.nt {
        let t = g.time(n) - g.t0;
        let m = co.mean(t);
        em = em.max((sol.mean(n) - m).abs());
        for i in 0..g.nx {
            let x = g.x(i);
            if (x - m).abs() <= ERROR_BAND {
                eu = eu.max((sol.u[n][i] - oracle_v(co, t, x)).abs());
            }
        }
    }
    (eu, em)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(q: f64, c: f64, g: f64) -> LqSpec {
        LqSpec {
            q,
            c,
            g,
            horizon: 1.0,
            m0: 1.0,
            var0: 0.25,
        }
    }

    #[test]
    fn stationary_riccati() {
        let co = solve_lq(&spec(1.0, 0.5, 1.0), DEFAULT_ODE_STEPS).unwrap();
        assert!(co.a.iter().all(|a| (a - 1.0).abs() < 1e-14));
    }

    #[test]
    fn free_riccati_closed_form() {
        let co = solve_lq(&spec(0.0, 0.0, 1.0), DEFAULT_ODE_STEPS).unwrap();
        for (t, a) in co.times.iter().zip(&co.a) {
            assert!((a - 1.0 / (2.0 - t)).abs() < 1e-10);
        }
    }

    #[test]
    fn no_coupling_means_no_sensitivity() {
        let co = solve_lq(&spec(1.0, 0.0, 0.5), 500).unwrap();
        assert!(co.p.iter().chain(&co.s).all(|v| *v == 0.0));
        assert!((0..=10).all(|i| co.b(i as f64 / 10.0) == 0.0));
    }

    #[test]
    fn terminal_values() {
        let co = solve_lq(&spec(0.3, 0.7, 2.0), 1000).unwrap();
        assert!((oracle_v(&co, 1.0, 1.5) - 0.5 * 2.0 * 2.25).abs() < 1e-15);
        let zero = solve_lq(&spec(0.0, 0.0, 0.0), 1000).unwrap();
        assert!(oracle_v(&zero, 0.3, 1.7).abs() < 1e-15);
    }

    #[test]
    fn blow_up_is_reported() {
        let r = solve_lq(
            &LqSpec {
                horizon: 10.0,
                ..spec(-1.0, 0.0, 0.0)
            },
            1000,
        );
        assert!(matches!(r, Err(Error::RiccatiBlowUp { .. })));
    }

    #[test]
    fn rejects_coarse_grid() {
        assert!(solve_lq(&spec(1.0, 0.0, 1.0), 99).is_err());
    }
}

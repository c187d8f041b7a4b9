//! Hamiltonians, measure-dependent costs and Lagrangians with analytic
//! derivative interfaces.
//!
//! Matrices are row-major `d * d` buffers. Mixed derivatives follow the
//! column-vector convention `d_x d_mu U := d_x [(d_mu U)^T]`, so entry
//! `(i, j)` of `lions_x` is `d/dx_i (d_mu U)_j`.

mod constructed;
mod legendre;
mod models;
pub mod registry;

pub use constructed::{build_example_hamiltonian, minimal_c0, CompactH0, ConstructedHamiltonian, RadialBlend, RidgeH0};
pub use legendre::{
    legendre_lagrangian, legendre_maximizer, LagrangianModel, LegendreLagrangian,
    QuadraticKineticLagrangian,
};
pub use models::{
    CosineCoupling, FrozenMomentum, Kinetic, QuadraticMeanCoupling, SeparableHamiltonian, WithQuadratic,
};

use crate::error::{Error, Result};
use crate::measures::{perturb_atom, DiscreteMeasure, TangentSample};

/// A measure paired with the statistics a particular model reads from it.
/// Produced by `bind` on the model that will consume it.
#[derive(Debug, Clone)]
pub struct BoundMeasure<'a> {
    pub measure: &'a DiscreteMeasure,
    pub stats: Vec<f64>,
}

impl<'a> BoundMeasure<'a> {
    pub fn plain(measure: &'a DiscreteMeasure) -> Self {
        Self {
            measure,
            stats: Vec::new(),
        }
    }
}

/// Weighted tangent moments used to evaluate sums like
/// `sum_j w_j d_xmu H(x, mu, y_j, p) eta_j` without a double loop when the
/// model depends on the measure through statistics.
#[derive(Debug, Clone)]
pub enum TangentMoments {
    /// `sum_j w_j grad f_l(y_j) . eta_j` for each statistic `f_l`.
    Statistics(Vec<f64>),
    /// Fallback: keep the sample and sum pairwise.
    Pointwise(TangentSample),
}

/// Scalar function `U(x, mu)` of state and measure, with the second-order
/// derivatives displacement forms need. Terminal costs and couplings.
pub trait MeasureFunction: Send + Sync {
    fn dim(&self) -> usize;
    fn bind<'a>(&self, mu: &'a DiscreteMeasure) -> BoundMeasure<'a>;
    fn value(&self, x: &[f64], m: &BoundMeasure) -> f64;
    fn grad_x(&self, x: &[f64], m: &BoundMeasure, out: &mut [f64]);
    fn hess_xx(&self, x: &[f64], m: &BoundMeasure, out: &mut [f64]);
    /// `d_mu U(x, mu, y)`.
    fn lions(&self, x: &[f64], m: &BoundMeasure, y: &[f64], out: &mut [f64]);
    /// `d_x d_mu U(x, mu, y)`.
    fn lions_x(&self, x: &[f64], m: &BoundMeasure, y: &[f64], out: &mut [f64]);
    fn measure_free(&self) -> bool {
        false
    }

    fn tangent_moments(&self, _m: &BoundMeasure, sample: &TangentSample) -> TangentMoments {
        TangentMoments::Pointwise(sample.clone())
    }

    /// `sum_j w_j d_x d_mu U(x, mu, y_j) eta_j`.
    fn lions_x_apply(&self, x: &[f64], m: &BoundMeasure, tm: &TangentMoments, out: &mut [f64]) {
        pointwise_apply(x, tm, out, |x, y, buf| self.lions_x(x, m, y, buf));
    }

    /// Bounds `(L0, L1, L2)` on `|d_x U|, |d_mu U|` and the W2 constant,
    /// when they are finite.
    fn lipschitz_constants(&self) -> Option<(f64, f64, f64)> {
        None
    }
}

/// Regularity constants carried by a Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianConstants {
    /// Uniform convexity in `p`: `d_pp H >= c0 I`.
    pub convexity: f64,
    /// `|d_x H| <= C0 (1 + |p|)`, when such a constant exists.
    pub x_growth: Option<f64>,
}

pub trait Hamiltonian: Send + Sync {
    fn dim(&self) -> usize;
    fn bind<'a>(&self, mu: &'a DiscreteMeasure) -> BoundMeasure<'a>;
    fn value(&self, x: &[f64], m: &BoundMeasure, p: &[f64]) -> f64;
    fn grad_x(&self, x: &[f64], m: &BoundMeasure, p: &[f64], out: &mut [f64]);
    fn grad_p(&self, x: &[f64], m: &BoundMeasure, p: &[f64], out: &mut [f64]);
    fn hess_xx(&self, x: &[f64], m: &BoundMeasure, p: &[f64], out: &mut [f64]);
    /// Entry `(i, j)` is `d/dx_i d/dp_j H`.
    fn hess_xp(&self, x: &[f64], m: &BoundMeasure, p: &[f64], out: &mut [f64]);
    fn hess_pp(&self, x: &[f64], m: &BoundMeasure, p: &[f64], out: &mut [f64]);
    fn lions(&self, x: &[f64], m: &BoundMeasure, y: &[f64], p: &[f64], out: &mut [f64]);
    fn lions_x(&self, x: &[f64], m: &BoundMeasure, y: &[f64], p: &[f64], out: &mut [f64]);
    /// Entry `(i, j)` is `d/dp_i (d_mu H)_j`.
    fn lions_p(&self, x: &[f64], m: &BoundMeasure, y: &[f64], p: &[f64], out: &mut [f64]);
    fn constants(&self) -> HamiltonianConstants;
    /// Local bound `L^H(R)` on first and second derivatives for `|p| <= R`.
    fn lipschitz_envelope(&self, radius: f64) -> f64;
    fn measure_free(&self) -> bool {
        false
    }

    fn tangent_moments(&self, _m: &BoundMeasure, sample: &TangentSample) -> TangentMoments {
        TangentMoments::Pointwise(sample.clone())
    }

    /// `sum_j w_j d_x d_mu H(x, mu, y_j, p) eta_j`.
    fn lions_x_apply(&self, x: &[f64], m: &BoundMeasure, p: &[f64], tm: &TangentMoments, out: &mut [f64]) {
        pointwise_apply(x, tm, out, |x, y, buf| self.lions_x(x, m, y, p, buf));
    }

    /// `sum_j w_j d_p d_mu H(x, mu, y_j, p) eta_j`.
    fn lions_p_apply(&self, x: &[f64], m: &BoundMeasure, p: &[f64], tm: &TangentMoments, out: &mut [f64]) {
        pointwise_apply(x, tm, out, |x, y, buf| self.lions_p(x, m, y, p, buf));
    }
}

fn pointwise_apply(x: &[f64], tm: &TangentMoments, out: &mut [f64], mut eval: impl FnMut(&[f64], &[f64], &mut [f64])) {
    let d = x.len();
    out.iter_mut().for_each(|o| *o = 0.0);
    let TangentMoments::Pointwise(sample) = tm else {
        panic!("statistic moments passed to a pointwise model");
    };
    let mut buf = vec![0.0; d * d];
    for j in 0..sample.len() {
        eval(x, sample.base.atom(j), &mut buf);
        crate::linalg::mat_vec_acc(&buf, sample.tangent(j), sample.base.weight(j), out);
    }
}

/// Numerical Lions derivative `d_mu U(mu, x_k)` by central differences on
/// atom `k`, scaled by `1 / w_k`, with one Richardson step (`eps`, `eps/2`).
pub fn fd_lions_derivative(
    u: impl Fn(&DiscreteMeasure) -> f64,
    mu: &DiscreteMeasure,
    k: usize,
    eps: f64,
) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument {
            name: "eps",
            reason: "step must be positive".into(),
        });
    }
    if k >= mu.len() {
        return Err(Error::IndexOutOfRange {
            index: k,
            len: mu.len(),
        });
    }
    let w = mu.weight(k);
    if w < 1e-12 {
        return Err(Error::WeightFloor {
            weight: w,
            floor: 1e-12,
        });
    }
    let d = mu.dim();
    let mut out = vec![0.0; d];
    for (j, o) in out.iter_mut().enumerate() {
        let central = |h: f64| -> Result<f64> {
            let mut e = vec![0.0; d];
            e[j] = h;
            let plus = u(&perturb_atom(mu, k, &e)?);
            e[j] = -h;
            let minus = u(&perturb_atom(mu, k, &e)?);
            Ok((plus - minus) / (2.0 * h * w))
        };
        let coarse = central(eps)?;
        let fine = central(eps / 2.0)?;
        *o = (4.0 * fine - coarse) / 3.0;
    }
    Ok(out)
}

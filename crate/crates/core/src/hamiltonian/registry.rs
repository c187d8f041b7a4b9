//! Named model configurations, as read from run configs.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    build_example_hamiltonian, CosineCoupling, Hamiltonian, Kinetic, MeasureFunction, QuadraticMeanCoupling,
    RidgeH0, SeparableHamiltonian,
};
use crate::error::Result;

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KineticSpec {
    Quadratic { k: f64 },
    LogCosh { k: f64, s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingSpec {
    QuadraticMean { q: f64, c: f64 },
    Cosine { q: f64, c: f64, k: f64 },
}

impl CouplingSpec {
    fn build(&self, dim: usize) -> Arc<dyn MeasureFunction> {
        match *self {
            CouplingSpec::QuadraticMean { q, c } => Arc::new(QuadraticMeanCoupling::new(dim, q, c)),
            CouplingSpec::Cosine { q, c, k } => Arc::new(CosineCoupling { dim, q, c, k }),
        }
    }
}

/// A model: Hamiltonian plus terminal cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `H = |p|^2/2 - (q/2)|x|^2 - c x.m(mu)`, `G = (g/2)|x|^2`.
    Lq {
        q: f64,
        c: f64,
        g: f64,
        #[serde(default = "one")]
        dim: usize,
    },
    /// Ridge perturbation plus `C0 |p|^2 - psi_{C0}(x)`;
    /// `G = (g/2)|x|^2 + gamma x.m(mu)`.
    Constructed {
        r0: f64,
        c0: f64,
        kappa: f64,
        omega: f64,
        #[serde(default = "one")]
        dim: usize,
        #[serde(default = "unit")]
        g: f64,
        #[serde(default)]
        gamma: f64,
    },
    /// `H = H_0(p) - F(x, mu)` with terminal cost `G`.
    Separable {
        kinetic: KineticSpec,
        coupling: CouplingSpec,
        terminal: CouplingSpec,
        #[serde(default = "one")]
        dim: usize,
    },
    /// `H = |p|^2/2`, `G = (g/2)|x|^2`.
    Free {
        #[serde(default = "unit")]
        g: f64,
        #[serde(default = "one")]
        dim: usize,
    },
}

#[derive(Clone)]
pub struct Model {
    pub hamiltonian: Arc<dyn Hamiltonian>,
    pub terminal: Arc<dyn MeasureFunction>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model").field("dim", &self.hamiltonian.dim()).finish()
    }
}

impl ModelSpec {
    pub fn dim(&self) -> usize {
        match *self {
            ModelSpec::Lq { dim, .. }
            | ModelSpec::Constructed { dim, .. }
            | ModelSpec::Separable { dim, .. }
            | ModelSpec::Free { dim, .. } => dim,
        }
    }

    /// `(q, c, g)` when the model is linear-quadratic with mean coupling.
    pub fn lq_params(&self) -> Option<(f64, f64, f64)> {
        match *self {
            ModelSpec::Lq { q, c, g, .. } => Some((q, c, g)),
            ModelSpec::Free { g, .. } => Some((0.0, 0.0, g)),
            _ => None,
        }
    }

    pub fn build(&self) -> Result<Model> {
        let dim = self.dim();
        Ok(match self {
            ModelSpec::Lq { q, c, g, .. } => Model {
                hamiltonian: Arc::new(SeparableHamiltonian::lq(dim, *q, *c)),
                terminal: Arc::new(QuadraticMeanCoupling::new(dim, *g, 0.0)),
            },
            ModelSpec::Constructed {
                r0,
                c0,
                kappa,
                omega,
                g,
                gamma,
                ..
            } => {
                let h0 = RidgeH0::new(dim, *kappa, *r0, *omega)?.into_compact();
                Model {
                    hamiltonian: Arc::new(build_example_hamiltonian(h0, *c0)?),
                    terminal: Arc::new(QuadraticMeanCoupling::new(dim, *g, *gamma)),
                }
            }
            ModelSpec::Separable {
                kinetic,
                coupling,
                terminal,
                ..
            } => {
                let kinetic = match *kinetic {
                    KineticSpec::Quadratic { k } => Kinetic::Quadratic { k },
                    KineticSpec::LogCosh { k, s } => Kinetic::LogCosh { k, s },
                };
                Model {
                    hamiltonian: Arc::new(SeparableHamiltonian::new(kinetic, coupling.build(dim))),
                    terminal: terminal.build(dim),
                }
            }
            ModelSpec::Free { g, .. } => Model {
                hamiltonian: Arc::new(SeparableHamiltonian::free(dim)),
                terminal: Arc::new(QuadraticMeanCoupling::new(dim, *g, 0.0)),
            },
        })
    }
}

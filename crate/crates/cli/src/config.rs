//! Run configuration: one JSON document per run. `model` and `seed` may be
//! lists, in which case the run expands into the cartesian product of
//! child runs.

use serde::{Deserialize, Serialize};

use dmfg::hamiltonian::registry::ModelSpec;
use dmfg::master::Metric;
use dmfg::measures::{sample_gaussian, DiscreteMeasure};
use dmfg::mfg::{Grid1D, SolverConfig};
use dmfg::monotonicity::CertifyConfig;
use dmfg::propagation::PropagationConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[value(rename_all = "kebab-case")]
pub enum Command {
    Certify,
    SearchViolation,
    SolveMfg,
    MasterEval,
    Dmu,
    Lipschitz,
    Propagate,
    LqOracle,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Certify => "certify",
            Command::SearchViolation => "search-violation",
            Command::SolveMfg => "solve-mfg",
            Command::MasterEval => "master-eval",
            Command::Dmu => "dmu",
            Command::Lipschitz => "lipschitz",
            Command::Propagate => "propagate",
            Command::LqOracle => "lq-oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

fn zero_seed() -> OneOrMany<u64> {
    OneOrMany::One(0)
}

/// Top-level document as read from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub command: Option<Command>,
    pub model: OneOrMany<ModelSpec>,
    #[serde(default = "zero_seed")]
    pub seed: OneOrMany<u64>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub certify: CertifySection,
    #[serde(default)]
    pub master: MasterSection,
    #[serde(default)]
    pub propagate: PropagateSection,
    #[serde(default)]
    pub output: Option<String>,
}

/// A single resolved run: one model, one seed, a definite command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildConfig {
    pub command: Command,
    pub model: ModelSpec,
    pub seed: u64,
    pub grid: GridSpec,
    pub solver: SolverConfig,
    pub initial: InitialSpec,
    pub certify: CertifySection,
    pub master: MasterSection,
    pub propagate: PropagateSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Schema {
                path,
                message: e.into_inner().to_string(),
            }
        })
    }

    pub fn children(&self, command: Command, seed_override: Option<u64>) -> Vec<ChildConfig> {
        let seeds = match seed_override {
            Some(s) => vec![s],
            None => self.seed.to_vec(),
        };
        let mut out = Vec::new();
        for model in self.model.to_vec() {
            for &seed in &seeds {
                out.push(ChildConfig {
                    command,
                    model: model.clone(),
                    seed,
                    grid: self.grid,
                    solver: self.solver,
                    initial: self.initial.clone(),
                    certify: self.certify,
                    master: self.master,
                    propagate: self.propagate,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub nt: usize,
    pub t0: f64,
    pub t_end: f64,
    /// Explicit space interval; otherwise sized from the initial measure.
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    /// Drift bound used to size the interval.
    pub drift_bound: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            nx: 200,
            nt: 200,
            t0: 0.0,
            t_end: 1.0,
            x_min: None,
            x_max: None,
            drift_bound: 3.0,
        }
    }
}

impl GridSpec {
    pub fn build(&self, mu0: &DiscreteMeasure) -> Result<Grid1D> {
        Ok(match (self.x_min, self.x_max) {
            (Some(lo), Some(hi)) => Grid1D::new(lo, hi, self.nx, self.t0, self.t_end, self.nt)?,
            (None, None) => Grid1D::for_measure(mu0, self.drift_bound, self.t0, self.t_end, self.nx, self.nt)?,
            _ => {
                return Err(CliError::Schema {
                    path: "grid".into(),
                    message: "give both x_min and x_max or neither".into(),
                })
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// Equally weighted atoms drawn from `N(mean, sd^2)` with the run seed.
    Gaussian { atoms: usize, mean: f64, sd: f64 },
    Atoms { atoms: Vec<f64>, weights: Option<Vec<f64>> },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Gaussian {
            atoms: 64,
            mean: 1.0,
            sd: 0.5,
        }
    }
}

impl InitialSpec {
    pub fn build(&self, seed: u64) -> Result<DiscreteMeasure> {
        Ok(match self {
            InitialSpec::Gaussian { atoms, mean, sd } => sample_gaussian(*atoms, &[*mean], *sd, seed)?,
            InitialSpec::Atoms { atoms, weights } => {
                let n = atoms.len();
                let w = weights.clone().unwrap_or_else(|| vec![1.0 / n as f64; n]);
                DiscreteMeasure::from_flat(1, atoms.clone(), w)?
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    /// Displacement form of `H` (must be `<= 0`).
    Hamiltonian,
    /// Displacement form of the terminal cost (must be `>= 0`).
    Terminal,
    /// Lasry-Lions form of the terminal cost (must be `>= 0`).
    TerminalLasryLions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySection {
    pub form: Form,
    pub trials: usize,
    pub tol: Option<f64>,
    pub c_phi1: f64,
    pub c_phi2: f64,
    pub spread: f64,
    pub max_atoms: usize,
    /// Descent steps for `search-violation`.
    pub steps: usize,
}

impl Default for CertifySection {
    fn default() -> Self {
        let c = CertifyConfig::default();
        Self {
            form: Form::Hamiltonian,
            trials: c.trials,
            tol: c.tol,
            c_phi1: c.c_phi1,
            c_phi2: c.c_phi2,
            spread: c.spread,
            max_atoms: c.max_atoms,
            steps: 200,
        }
    }
}

impl CertifySection {
    pub fn config(&self, seed: u64) -> CertifyConfig {
        CertifyConfig {
            trials: self.trials,
            seed,
            tol: self.tol,
            c_phi1: self.c_phi1,
            c_phi2: self.c_phi2,
            spread: self.spread,
            max_atoms: self.max_atoms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MasterSection {
    pub t0: f64,
    pub x: f64,
    pub atom: usize,
    pub eps: Option<f64>,
    pub richardson: bool,
    pub metric: Metric,
    pub trials: usize,
}

impl Default for MasterSection {
    fn default() -> Self {
        Self {
            t0: 0.0,
            x: 0.5,
            atom: 0,
            eps: None,
            richardson: true,
            metric: Metric::W2,
            trials: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagateSection {
    pub particles: usize,
    /// Tangents are `tangent_mean + tangent_sd * N(0, 1)` per particle.
    pub tangent_mean: f64,
    pub tangent_sd: f64,
    pub checkpoints: usize,
    pub groups: usize,
    pub n_substeps: usize,
    pub rel_tol: f64,
    pub terminal_tol: f64,
    pub eps: Option<f64>,
    pub richardson: bool,
}

impl Default for PropagateSection {
    fn default() -> Self {
        let p = PropagationConfig::default();
        Self {
            particles: 2000,
            tangent_mean: 1.0,
            tangent_sd: 0.5,
            checkpoints: p.checkpoints,
            groups: p.groups,
            n_substeps: p.n_substeps,
            rel_tol: p.rel_tol,
            terminal_tol: p.terminal_tol,
            eps: p.eps,
            richardson: p.richardson,
        }
    }
}

impl PropagateSection {
    pub fn config(&self, solver: SolverConfig) -> PropagationConfig {
        PropagationConfig {
            checkpoints: self.checkpoints,
            groups: self.groups,
            n_substeps: self.n_substeps,
            rel_tol: self.rel_tol,
            terminal_tol: self.terminal_tol,
            solver,
            eps: self.eps,
            richardson: self.richardson,
        }
    }
}

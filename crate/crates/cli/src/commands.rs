//! One child run per call: build the model and inputs, dispatch, and collect
//! the report payload plus any CSV artifacts.

use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use dmfg::hamiltonian::registry::{Model, ModelSpec};
use dmfg::lq_oracle::{flow_errors, solve_lq, LqCoefficients, LqSpec, DEFAULT_ODE_STEPS, ERROR_BAND};
use dmfg::master::{eval_V, group_sensitivity, lipschitz_estimate, solve_from, MasterEvalConfig};
use dmfg::measures::{DiscreteMeasure, TangentSample};
use dmfg::mfg::{solve_mfg, Grid1D};
use dmfg::monotonicity::{certify, search_violation, MonotonicityReport, Target, Verdict};
use dmfg::propagation::{gaussian_tangents, propagate as propagate_flow};

use crate::config::{ChildConfig, Command, Form, InitialSpec};
use crate::error::{CliError, Result};

pub struct Outcome {
    pub report: Value,
    /// `None` for commands that only compute.
    pub pass: Option<bool>,
    pub csv: Vec<(String, String)>,
}

impl Outcome {
    fn plain(report: Value) -> Self {
        Self {
            report,
            pass: None,
            csv: Vec::new(),
        }
    }
}

fn to_value(v: &impl Serialize) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn model_name(spec: &ModelSpec) -> &'static str {
    match spec {
        ModelSpec::Lq { .. } => "lq",
        ModelSpec::Constructed { .. } => "constructed",
        ModelSpec::Separable { .. } => "separable",
        ModelSpec::Free { .. } => "free",
    }
}

pub fn run_child(cfg: &ChildConfig) -> Result<Outcome> {
    let model = cfg.model.build()?;
    match cfg.command {
        Command::Certify | Command::SearchViolation => monotonicity(cfg, &model),
        Command::SolveMfg => solve(cfg, &model),
        Command::MasterEval => master_eval(cfg, &model),
        Command::Dmu => dmu(cfg, &model),
        Command::Lipschitz => lipschitz(cfg, &model),
        Command::Propagate => propagate(cfg, &model),
        Command::LqOracle => lq_oracle(cfg),
    }
}

fn monotonicity(cfg: &ChildConfig, model: &Model) -> Result<Outcome> {
    let target = match cfg.certify.form {
        Form::Hamiltonian => Target::Hamiltonian(Arc::clone(&model.hamiltonian)),
        Form::Terminal => Target::Surface(Arc::clone(&model.terminal)),
        Form::TerminalLasryLions => Target::LasryLions(Arc::clone(&model.terminal)),
    };
    let cc = cfg.certify.config(cfg.seed);
    let report: MonotonicityReport = if cfg.command == Command::Certify {
        certify(&target, &cc)?
    } else {
        search_violation(&target, &cc, cfg.certify.steps)?
    };
    Ok(Outcome {
        pass: Some(report.verdict == Verdict::Pass),
        report: to_value(&report)?,
        csv: Vec::new(),
    })
}

fn require_one_dim(spec: &ModelSpec) -> Result<()> {
    if spec.dim() != 1 {
        return Err(CliError::UnsupportedModel(format!("{} with dim {}", model_name(spec), spec.dim())));
    }
    Ok(())
}

fn setup(cfg: &ChildConfig) -> Result<(DiscreteMeasure, Grid1D)> {
    require_one_dim(&cfg.model)?;
    let mu0 = cfg.initial.build(cfg.seed)?;
    let grid = cfg.grid.build(&mu0)?;
    Ok((mu0, grid))
}

fn lq_coefficients(cfg: &ChildConfig, mu0: &DiscreteMeasure, grid: &Grid1D) -> Result<Option<LqCoefficients>> {
    let Some((q, c, g)) = cfg.model.lq_params() else {
        return Ok(None);
    };
    let spec = LqSpec::for_measure(q, c, g, grid.t_end - grid.t0, mu0);
    Ok(Some(solve_lq(&spec, DEFAULT_ODE_STEPS)?))
}

fn solve(cfg: &ChildConfig, model: &Model) -> Result<Outcome> {
    let (mu0, grid) = setup(cfg)?;
    let sol = solve_mfg(model.hamiltonian.as_ref(), model.terminal.as_ref(), &mu0, &grid, &cfg.solver)?;
    let mass_error = sol.rho.iter().map(|r| (grid.mass(r) - 1.0).abs()).fold(0.0, f64::max);
    let min_rho = sol.rho.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    let oracle = match lq_coefficients(cfg, &mu0, &grid)? {
        Some(co) => {
            let (u_err, mean_err) = flow_errors(&sol, &co);
            json!({ "u_sup_error": u_err, "mean_path_error": mean_err, "region": format!("|x - m_t| <= {ERROR_BAND}") })
        }
        None => Value::Null,
    };
    let report = json!({
        "grid": grid,
        "iterations": sol.iterations,
        "final_residual": sol.final_residual(),
        "residual_history": sol.residual_history,
        "partition": sol.partition,
        "projected": sol.projected,
        "mass_error": mass_error,
        "min_rho": min_rho,
        "mean_path": (0..=grid.nt).map(|n| [grid.time(n), sol.mean(n)]).collect::<Vec<_>>(),
        "oracle": oracle,
    });
    Ok(Outcome {
        report,
        pass: None,
        csv: vec![("solution.csv".into(), sol.to_csv())],
    })
}

fn master_cfg(cfg: &ChildConfig, grid: Grid1D) -> MasterEvalConfig {
    MasterEvalConfig {
        grid,
        solver: cfg.solver,
        eps: cfg.master.eps,
        richardson: cfg.master.richardson,
        sweep_width: None,
    }
}

fn master_eval(cfg: &ChildConfig, model: &Model) -> Result<Outcome> {
    let (mu0, grid) = setup(cfg)?;
    let m = cfg.master;
    let mc = master_cfg(cfg, grid);
    let value = eval_V(m.t0, m.x, &mu0, model.hamiltonian.as_ref(), model.terminal.as_ref(), &mc)?;
    let oracle = lq_coefficients(cfg, &mu0, &grid)?.map(|co| co.value_at_mean(m.t0 - grid.t0, m.x, mu0.mean()[0]));
    Ok(Outcome::plain(json!({ "t0": m.t0, "x": m.x, "value": value, "oracle_value": oracle })))
}

fn dmu(cfg: &ChildConfig, model: &Model) -> Result<Outcome> {
    let (mu0, grid) = setup(cfg)?;
    let m = cfg.master;
    let mc = master_cfg(cfg, grid);
    let (h, g) = (model.hamiltonian.as_ref(), model.terminal.as_ref());
    let base = solve_from(m.t0, &mu0, h, g, &mc, None)?;
    let sens = group_sensitivity(&base, &mu0, &[m.atom], h, g, &mc)?;
    let oracle = lq_coefficients(cfg, &mu0, &grid)?.map(|co| {
        let t = m.t0 - grid.t0;
        json!({ "d_mu": co.dmu_at_mean(t, m.x, mu0.mean()[0]), "d_x_mu": co.dm_b(t) })
    });
    Ok(Outcome::plain(json!({
        "t0": m.t0,
        "x": m.x,
        "atoms": mu0,
        "atom": m.atom,
        "eps": sens.eps,
        "d_mu_values": [sens.d_mu(m.x)],
        "d_x_mu_values": [sens.d_x_mu(m.x)],
        "oracle": oracle,
    })))
}

fn lipschitz(cfg: &ChildConfig, model: &Model) -> Result<Outcome> {
    let (mu0, grid) = setup(cfg)?;
    let m = cfg.master;
    let mc = master_cfg(cfg, grid);
    let rep = lipschitz_estimate(
        m.t0,
        m.x,
        &mu0,
        m.metric,
        m.trials,
        cfg.seed,
        model.hamiltonian.as_ref(),
        model.terminal.as_ref(),
        &mc,
    )?;
    let bound = lq_coefficients(cfg, &mu0, &grid)?.map(|co| co.lipschitz_bound(m.x, mu0.mean()[0]));
    Ok(Outcome::plain(json!({ "t0": m.t0, "x": m.x, "lipschitz": rep, "oracle_bound": bound })))
}

fn propagate(cfg: &ChildConfig, model: &Model) -> Result<Outcome> {
    require_one_dim(&cfg.model)?;
    let p = cfg.propagate;
    let initial = match &cfg.initial {
        InitialSpec::Gaussian { mean, sd, .. } => InitialSpec::Gaussian {
            atoms: p.particles,
            mean: *mean,
            sd: *sd,
        },
        other => other.clone(),
    };
    let mu0 = initial.build(cfg.seed)?;
    let grid = cfg.grid.build(&mu0)?;
    let (h, g) = (model.hamiltonian.as_ref(), model.terminal.as_ref());
    let sol = solve_mfg(h, g, &mu0, &grid, &cfg.solver)?;
    let tangents = gaussian_tangents(mu0.len(), p.tangent_mean, p.tangent_sd, cfg.seed);
    let start = TangentSample::new(mu0, tangents)?;
    let run = propagate_flow(&sol, &start, h, g, &p.config(cfg.solver), cfg.seed)?;
    Ok(Outcome {
        report: json!({ "profile": run.profile, "rate": run.rate, "times": run.trajectory.times }),
        pass: Some(run.passed()),
        csv: vec![("profile.csv".into(), run.profile.to_csv())],
    })
}

fn lq_oracle(cfg: &ChildConfig) -> Result<Outcome> {
    let Some((q, c, g)) = cfg.model.lq_params() else {
        return Err(CliError::UnsupportedModel(model_name(&cfg.model).into()));
    };
    let mu0 = cfg.initial.build(cfg.seed)?;
    require_one_dim(&cfg.model)?;
    let spec = LqSpec::for_measure(q, c, g, cfg.grid.t_end - cfg.grid.t0, &mu0);
    let co = solve_lq(&spec, DEFAULT_ODE_STEPS)?;
    let t_end = spec.horizon;
    Ok(Outcome {
        report: json!({
            "spec": spec,
            "displacement_monotone": spec.displacement_monotone(),
            "a0": co.a_at(0.0),
            "dm_b0": co.dm_b(0.0),
            "s0": co.s_at(0.0),
            "mean_end": co.mean(t_end),
            "variance_end": co.variance(t_end),
        }),
        pass: None,
        csv: vec![("coefficients.csv".into(), co.to_csv())],
    })
}

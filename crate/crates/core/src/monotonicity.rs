//! Bilinear monotonicity forms on discrete measures and randomized
//! certification / counterexample search.
//!
//! All expectations are weighted sums over the atoms of a [`TangentSample`];
//! the independent copy `(x~, eta~)` runs over the same atoms.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{Hamiltonian, LagrangianModel, MeasureFunction};
use crate::linalg::{dot, mat_vec_acc, quad_form, solve_dense, sym_inv_sqrt, to_dmatrix, transpose};
use crate::measures::{DiscreteMeasure, TangentSample};

const NOTE: &str = "sampled evidence only: a failing witness refutes monotonicity, a pass does not prove it";

fn check_dim(expected: usize, s: &TangentSample) -> Result<()> {
    if s.dim() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: s.dim(),
        });
    }
    Ok(())
}

/// `E <d_xmu U(x, mu, x~) eta~, eta>`.
pub fn lasry_lions_form(u: &dyn MeasureFunction, s: &TangentSample) -> Result<f64> {
    check_dim(u.dim(), s)?;
    let m = u.bind(&s.base);
    let tm = u.tangent_moments(&m, s);
    let mut buf = vec![0.0; s.dim()];
    let mut total = 0.0;
    for i in 0..s.len() {
        u.lions_x_apply(s.base.atom(i), &m, &tm, &mut buf);
        total += s.base.weight(i) * dot(&buf, s.tangent(i));
    }
    Ok(total)
}

/// `E <d_xmu U eta~, eta> + E <d_xx U eta, eta>`.
pub fn displacement_form_surface(u: &dyn MeasureFunction, s: &TangentSample) -> Result<f64> {
    let cross = lasry_lions_form(u, s)?;
    let m = u.bind(&s.base);
    let d = s.dim();
    let mut hess = vec![0.0; d * d];
    let mut diag = 0.0;
    for i in 0..s.len() {
        u.hess_xx(s.base.atom(i), &m, &mut hess);
        diag += s.base.weight(i) * quad_form(&hess, s.tangent(i), s.tangent(i));
    }
    Ok(cross + diag)
}

/// Second difference
/// `E[U(x, mu) + U(x + eps eta, mu_eps) - U(x, mu_eps) - U(x + eps eta, mu)] / eps^2`
/// where `mu_eps` moves every atom by `eps eta`. Tends to the Lasry-Lions
/// form as `eps -> 0`.
pub fn lasry_lions_quotient(u: &dyn MeasureFunction, s: &TangentSample, eps: f64) -> Result<f64> {
    check_dim(u.dim(), s)?;
    let moved = s.displaced(eps)?;
    let m0 = u.bind(&s.base);
    let m1 = u.bind(&moved);
    let mut total = 0.0;
    for i in 0..s.len() {
        let x = s.base.atom(i);
        let y: Vec<f64> = x.iter().zip(s.tangent(i)).map(|(a, t)| a + eps * t).collect();
        let diff = u.value(x, &m0) + u.value(&y, &m1) - u.value(x, &m1) - u.value(&y, &m0);
        total += s.base.weight(i) * diff;
    }
    Ok(total / (eps * eps))
}

/// The three pieces of the Hamiltonian displacement form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianFormTerms {
    pub cross: f64,
    pub hess: f64,
    pub q: f64,
}

impl HamiltonianFormTerms {
    pub fn total(&self) -> f64 {
        self.cross + self.hess + self.q
    }
}

/// Hamiltonian displacement form with momenta `p_i` given per atom
/// (flat, `n * d`):
/// `E <d_xmu H eta~, eta> + E <d_xx H eta, eta> + E |d_pp H^{-1/2} E[d_pmu H eta~]|^2 / 4`.
pub fn hamiltonian_form_terms(h: &dyn Hamiltonian, s: &TangentSample, momenta: &[f64]) -> Result<HamiltonianFormTerms> {
    let d = h.dim();
    check_dim(d, s)?;
    if momenta.len() != s.len() * d {
        return Err(Error::DimensionMismatch {
            expected: s.len() * d,
            got: momenta.len(),
        });
    }
    let floor = (h.constants().convexity / 2.0).max(f64::MIN_POSITIVE);
    let m = h.bind(&s.base);
    let tm = h.tangent_moments(&m, s);
    let mut buf = vec![0.0; d];
    let mut mat = vec![0.0; d * d];
    let mut terms = HamiltonianFormTerms {
        cross: 0.0,
        hess: 0.0,
        q: 0.0,
    };
    for i in 0..s.len() {
        let (x, w, eta) = (s.base.atom(i), s.base.weight(i), s.tangent(i));
        let p = &momenta[i * d..(i + 1) * d];
        h.lions_x_apply(x, &m, p, &tm, &mut buf);
        terms.cross += w * dot(&buf, eta);
        h.hess_xx(x, &m, p, &mut mat);
        terms.hess += w * quad_form(&mat, eta, eta);
        h.lions_p_apply(x, &m, p, &tm, &mut buf);
        h.hess_pp(x, &m, p, &mut mat);
        terms.q += 0.25 * w * inverse_quadratic(&mat, &buf, floor)?;
    }
    Ok(terms)
}

/// `|A^{-1/2} v|^2` with an eigenvalue floor on the symmetric matrix `A`.
fn inverse_quadratic(a: &[f64], v: &[f64], floor: f64) -> Result<f64> {
    let d = v.len();
    if d == 1 {
        if a[0] < floor {
            return Err(Error::ConvexityFloor { eigenvalue: a[0], floor });
        }
        return Ok(v[0] * v[0] / a[0]);
    }
    let root = sym_inv_sqrt(&to_dmatrix(a, d), floor)?;
    let w = root * nalgebra::DVector::from_column_slice(v);
    Ok(w.norm_squared())
}

/// Hamiltonian displacement form along the feedback `p = phi(x)`.
pub fn displacement_form_hamiltonian(h: &dyn Hamiltonian, s: &TangentSample, phi: &FeedbackFunction) -> Result<f64> {
    let momenta = phi.eval_atoms(&s.base)?;
    Ok(hamiltonian_form_terms(h, s, &momenta)?.total())
}

/// Lagrangian-side pair `(lhs, rhs)` with `a_i = psi_values[i]`:
/// `lhs = E[<d_xmu L eta~, eta> + <d_xx L eta, eta>]`,
/// `rhs = E|d_aa L^{-1/2} (E[d_amu L eta~] / 2 + d_ax L eta)|^2`.
pub fn lagrangian_form(l: &dyn LagrangianModel, s: &TangentSample, psi_values: &[f64]) -> Result<(f64, f64)> {
    let d = l.dim();
    check_dim(d, s)?;
    if psi_values.len() != s.len() * d {
        return Err(Error::DimensionMismatch {
            expected: s.len() * d,
            got: psi_values.len(),
        });
    }
    let m = l.bind(&s.base);
    let n = s.len();
    let mut mat = vec![0.0; d * d];
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for i in 0..n {
        let (x, w, eta) = (s.base.atom(i), s.base.weight(i), s.tangent(i));
        let a = &psi_values[i * d..(i + 1) * d];
        let mut cross = vec![0.0; d];
        let mut amu = vec![0.0; d];
        for j in 0..n {
            let (y, wj) = (s.base.atom(j), s.base.weight(j));
            l.lions_x(x, &m, y, a, &mut mat)?;
            mat_vec_acc(&mat, s.tangent(j), wj, &mut cross);
            l.lions_a(x, &m, y, a, &mut mat)?;
            mat_vec_acc(&mat, s.tangent(j), wj, &mut amu);
        }
        l.hess_xx(x, &m, a, &mut mat)?;
        lhs += w * (dot(&cross, eta) + quad_form(&mat, eta, eta));
        l.hess_xa(x, &m, a, &mut mat)?;
        // d_ax L = (d_xa L)^T
        let mut v: Vec<f64> = amu.iter().map(|t| 0.5 * t).collect();
        mat_vec_acc(&transpose(&mat, d), eta, 1.0, &mut v);
        l.hess_aa(x, &m, a, &mut mat)?;
        // |A^{-1/2} v|^2 = v' A^{-1} v
        let sol = solve_dense(&mat, &v)?;
        rhs += w * dot(&v, &sol);
    }
    Ok((lhs, rhs))
}

/// One tanh ridge `a tanh(b.x + c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ridge {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

/// Bounded C^1 feedback `phi(x) = sum_k a_k tanh(b_k.x + c_k)`.
///
/// Coefficients are clipped so that `sum |a_k| <= c1` (hence `|phi| <= c1`)
/// and `sum |a_k||b_k| <= c2` (hence `|d_x phi| <= c2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackFunction {
    pub dim: usize,
    pub ridges: Vec<Ridge>,
    pub c1: f64,
    pub c2: f64,
}

pub const FEEDBACK_RIDGES: usize = 8;

impl FeedbackFunction {
    pub fn new(dim: usize, ridges: Vec<Ridge>, c1: f64, c2: f64) -> Result<Self> {
        if ridges.iter().any(|r| r.a.len() != dim || r.b.len() != dim) {
            return Err(Error::InvalidArgument {
                name: "ridges",
                reason: format!("every ridge needs {dim}-vectors"),
            });
        }
        if !(c1 >= 0.0 && c2 >= 0.0) {
            return Err(Error::InvalidArgument {
                name: "c1/c2",
                reason: "bounds must be nonnegative".into(),
            });
        }
        let mut f = Self { dim, ridges, c1, c2 };
        f.clip();
        Ok(f)
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            ridges: Vec::new(),
            c1: 0.0,
            c2: 0.0,
        }
    }

    pub fn random(dim: usize, rng: &mut impl Rng, c1: f64, c2: f64) -> Self {
        let k = FEEDBACK_RIDGES;
        let amp = c1 / k as f64 * 2.0;
        let freq = [0.3, 1.0, 3.0][rng.random_range(0..3)];
        let mut normal = || -> f64 { StandardNormal.sample(rng) };
        let ridges = (0..k)
            .map(|_| Ridge {
                a: (0..dim).map(|_| amp * normal()).collect(),
                b: (0..dim).map(|_| freq * normal()).collect(),
                c: normal(),
            })
            .collect();
        let mut f = Self { dim, ridges, c1, c2 };
        f.clip();
        f
    }

    fn clip(&mut self) {
        let na = |r: &Ridge| r.a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = |r: &Ridge| r.b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let sa: f64 = self.ridges.iter().map(na).sum();
        if sa > self.c1 {
            let f = if sa > 0.0 { self.c1 / sa } else { 0.0 };
            self.ridges.iter_mut().for_each(|r| r.a.iter_mut().for_each(|v| *v *= f));
        }
        let sab: f64 = self.ridges.iter().map(|r| na(r) * nb(r)).sum();
        if sab > self.c2 {
            let f = self.c2 / sab;
            self.ridges.iter_mut().for_each(|r| r.b.iter_mut().for_each(|v| *v *= f));
        }
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for r in &self.ridges {
            let t = (dot(&r.b, x) + r.c).tanh();
            for (o, a) in out.iter_mut().zip(&r.a) {
                *o += a * t;
            }
        }
    }

    /// `phi` at every atom, flattened.
    pub fn eval_atoms(&self, mu: &DiscreteMeasure) -> Result<Vec<f64>> {
        if mu.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: mu.dim(),
            });
        }
        let d = self.dim;
        let mut out = vec![0.0; mu.len() * d];
        for i in 0..mu.len() {
            self.eval(mu.atom(i), &mut out[i * d..(i + 1) * d]);
        }
        Ok(out)
    }

    fn params(&self) -> Vec<f64> {
        self.ridges
            .iter()
            .flat_map(|r| r.a.iter().chain(&r.b).copied().chain(std::iter::once(r.c)))
            .collect()
    }

    fn with_params(&self, p: &[f64]) -> Self {
        let d = self.dim;
        let ridges = p
            .chunks(2 * d + 1)
            .map(|c| Ridge {
                a: c[..d].to_vec(),
                b: c[d..2 * d].to_vec(),
                c: c[2 * d],
            })
            .collect();
        let mut f = Self {
            dim: d,
            ridges,
            c1: self.c1,
            c2: self.c2,
        };
        f.clip();
        f
    }
}

/// What to certify, and in which direction.
#[derive(Clone)]
pub enum Target {
    /// Displacement form of a surface, required `>= 0`.
    Surface(Arc<dyn MeasureFunction>),
    /// Lasry-Lions form of a surface, required `>= 0`.
    LasryLions(Arc<dyn MeasureFunction>),
    /// Hamiltonian displacement form, required `<= 0`.
    Hamiltonian(Arc<dyn Hamiltonian>),
}

impl Target {
    fn dim(&self) -> usize {
        match self {
            Target::Surface(u) | Target::LasryLions(u) => u.dim(),
            Target::Hamiltonian(h) => h.dim(),
        }
    }

    pub fn form_name(&self) -> &'static str {
        match self {
            Target::Surface(_) => "displacement_surface",
            Target::LasryLions(_) => "lasry_lions",
            Target::Hamiltonian(_) => "displacement_hamiltonian",
        }
    }

    pub fn orientation(&self) -> Orientation {
        match self {
            Target::Hamiltonian(_) => Orientation::NonPositive,
            _ => Orientation::NonNegative,
        }
    }

    /// Raw form value.
    pub fn evaluate(&self, s: &TangentSample, phi: Option<&FeedbackFunction>) -> Result<f64> {
        match self {
            Target::Surface(u) => displacement_form_surface(u.as_ref(), s),
            Target::LasryLions(u) => lasry_lions_form(u.as_ref(), s),
            Target::Hamiltonian(h) => {
                let zero = FeedbackFunction::zero(h.dim());
                displacement_form_hamiltonian(h.as_ref(), s, phi.unwrap_or(&zero))
            }
        }
    }

    /// Form value oriented so that monotonicity means `>= 0`.
    fn oriented(&self, s: &TangentSample, phi: Option<&FeedbackFunction>) -> Result<f64> {
        let v = self.evaluate(s, phi)?;
        Ok(match self.orientation() {
            Orientation::NonNegative => v,
            Orientation::NonPositive => -v,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    NonNegative,
    NonPositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub measure: DiscreteMeasure,
    pub tangents: Vec<Vec<f64>>,
    pub feedback: Option<FeedbackFunction>,
    /// Raw form value at the witness.
    pub value: f64,
}

impl Witness {
    pub fn sample(&self) -> Result<TangentSample> {
        TangentSample::new(self.measure.clone(), self.tangents.concat())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub form_name: String,
    pub orientation: Orientation,
    pub trials: usize,
    /// Smallest oriented value, divided by `1 + E|eta|^2` when the tolerance
    /// is scale-relative.
    pub min_value: f64,
    pub tol: f64,
    pub scale_relative: bool,
    pub verdict: Verdict,
    pub witness: Option<Witness>,
    pub note: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyConfig {
    pub trials: usize,
    pub seed: u64,
    /// Absolute tolerance; `None` means `1e-8 (1 + E|eta|^2)` per sample.
    pub tol: Option<f64>,
    pub c_phi1: f64,
    pub c_phi2: f64,
    /// Standard deviation of mixture centres.
    pub spread: f64,
    pub max_atoms: usize,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 0,
            tol: None,
            c_phi1: 10.0,
            c_phi2: 10.0,
            spread: 1.0,
            max_atoms: 32,
        }
    }
}

pub const RELATIVE_TOL: f64 = 1e-8;

impl CertifyConfig {
    fn scale(&self, s: &TangentSample) -> f64 {
        match self.tol {
            Some(_) => 1.0,
            None => 1.0 + s.tangent_energy(),
        }
    }

    fn threshold(&self) -> f64 {
        self.tol.unwrap_or(RELATIVE_TOL)
    }
}

/// Random cloud (Gaussian mixture, 2..=max_atoms atoms) with tangents drawn
/// i.i.d. normal, as a common shift plus noise, or on a single atom,
/// depending on `mode`.
pub fn random_sample(dim: usize, rng: &mut impl Rng, mode: usize, spread: f64, max_atoms: usize) -> Result<TangentSample> {
    let normal = |r: &mut dyn rand::RngCore| -> f64 { StandardNormal.sample(r) };
    let n = rng.random_range(2..=max_atoms.max(2));
    let k = rng.random_range(1..=3usize);
    let centres: Vec<Vec<f64>> = (0..k).map(|_| (0..dim).map(|_| spread * normal(rng)).collect()).collect();
    let sds: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let mut atoms = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let c = rng.random_range(0..k);
        for j in 0..dim {
            atoms.push(centres[c][j] + sds[c] * normal(rng));
        }
    }
    let masses: Vec<f64> = if rng.random_bool(0.5) {
        vec![1.0; n]
    } else {
        (0..n).map(|_| { let e: f64 = Exp1.sample(rng); e + 1e-3 }).collect::<Vec<f64>>()
    };
    let base = DiscreteMeasure::from_masses(dim, atoms, masses)?;
    let n = base.len();
    let mut tangents = vec![0.0; n * dim];
    match mode % 3 {
        0 => tangents.iter_mut().for_each(|t| *t = normal(rng)),
        1 => {
            let common: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
            for i in 0..n {
                for j in 0..dim {
                    tangents[i * dim + j] = common[j] + 0.3 * normal(rng);
                }
            }
        }
        _ => {
            let i = rng.random_range(0..n);
            for j in 0..dim {
                tangents[i * dim + j] = normal(rng);
            }
        }
    }
    TangentSample::new(base, tangents)
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

struct Scored {
    scaled: f64,
    raw: f64,
    sample: TangentSample,
    phi: Option<FeedbackFunction>,
}

fn score(target: &Target, cfg: &CertifyConfig, sample: TangentSample, phi: Option<FeedbackFunction>) -> Result<Scored> {
    let oriented = target.oriented(&sample, phi.as_ref())?;
    let raw = match target.orientation() {
        Orientation::NonNegative => oriented,
        Orientation::NonPositive => -oriented,
    };
    Ok(Scored {
        scaled: oriented / cfg.scale(&sample),
        raw,
        sample,
        phi,
    })
}

fn report(target: &Target, cfg: &CertifyConfig, trials: usize, best: Scored) -> MonotonicityReport {
    let tol = cfg.threshold();
    let verdict = if best.scaled >= -tol { Verdict::Pass } else { Verdict::Fail };
    let d = best.sample.dim();
    MonotonicityReport {
        form_name: target.form_name().to_string(),
        orientation: target.orientation(),
        trials,
        min_value: best.scaled,
        tol,
        scale_relative: cfg.tol.is_none(),
        verdict,
        witness: Some(Witness {
            tangents: best.sample.tangents_flat().chunks(d).map(<[f64]>::to_vec).collect(),
            measure: best.sample.base,
            feedback: best.phi,
            value: best.raw,
        }),
        note: NOTE.to_string(),
    }
}

fn sample_trials(target: &Target, cfg: &CertifyConfig) -> Result<Vec<Scored>> {
    if cfg.trials == 0 {
        return Err(Error::InvalidArgument {
            name: "trials",
            reason: "need at least one trial".into(),
        });
    }
    let dim = target.dim();
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(cfg.seed, t as u64);
            let sample = random_sample(dim, &mut rng, t, cfg.spread, cfg.max_atoms)?;
            let phi = matches!(target, Target::Hamiltonian(_))
                .then(|| FeedbackFunction::random(dim, &mut rng, cfg.c_phi1, cfg.c_phi2));
            score(target, cfg, sample, phi)
        })
        .collect()
}

/// Trial indices ordered by value, ties by index (scheduling-independent).
fn ranked(scored: &[Scored]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scored.len()).collect();
    idx.sort_by(|&i, &j| scored[i].scaled.total_cmp(&scored[j].scaled).then(i.cmp(&j)));
    idx
}

/// Evaluate the target's form on `cfg.trials` random samples.
pub fn certify(target: &Target, cfg: &CertifyConfig) -> Result<MonotonicityReport> {
    let mut scored = sample_trials(target, cfg)?;
    let best = ranked(&scored)[0];
    Ok(report(target, cfg, cfg.trials, scored.swap_remove(best)))
}

/// Descent starts per search.
pub const SEARCH_STARTS: usize = 4;

/// Adversarial search: from the [`SEARCH_STARTS`] worst of `cfg.trials`
/// random samples (preferring samples where the form is not exactly zero,
/// which typically sit in flat regions), run `steps` steps of normalised
/// finite-difference descent on the oriented, scale-normalised form over
/// atom positions, tangents and feedback parameters. Weights stay fixed;
/// tangents are renormalised to `E|eta|^2 = 1` and feedbacks re-clipped
/// after each step.
pub fn search_violation(target: &Target, cfg: &CertifyConfig, steps: usize) -> Result<MonotonicityReport> {
    if steps == 0 {
        return Err(Error::InvalidArgument {
            name: "steps",
            reason: "need at least one step".into(),
        });
    }
    let scored = sample_trials(target, cfg)?;
    let order = ranked(&scored);
    let mut starts: Vec<usize> = order.iter().copied().filter(|&i| scored[i].raw != 0.0).take(SEARCH_STARTS).collect();
    for &i in &order {
        if starts.len() >= SEARCH_STARTS.min(order.len()) {
            break;
        }
        if !starts.contains(&i) {
            starts.push(i);
        }
    }
    let mut best: Option<Scored> = None;
    for &i in &starts {
        let found = descend(target, cfg, &scored[i], steps)?;
        if best.as_ref().is_none_or(|b| found.scaled < b.scaled) {
            best = Some(found);
        }
    }
    let mut best = best.expect("at least one start");
    let worst_sampled = &scored[order[0]];
    if worst_sampled.scaled < best.scaled {
        best = Scored {
            scaled: worst_sampled.scaled,
            raw: worst_sampled.raw,
            sample: worst_sampled.sample.clone(),
            phi: worst_sampled.phi.clone(),
        };
    }
    let mut rep = report(target, cfg, cfg.trials, best);
    rep.form_name = format!("{} (search)", rep.form_name);
    Ok(rep)
}

fn descend(target: &Target, cfg: &CertifyConfig, start: &Scored, steps: usize) -> Result<Scored> {
    let d = start.sample.dim();
    let base = &start.sample.base;
    let n = base.len();
    let weights = base.weights().to_vec();
    let phi0 = start.phi.clone();

    let unpack = |theta: &[f64]| -> Result<(TangentSample, Option<FeedbackFunction>)> {
        let atoms = theta[..n * d].to_vec();
        let mut tangents = theta[n * d..2 * n * d].to_vec();
        let energy: f64 = (0..n)
            .map(|i| weights[i] * tangents[i * d..(i + 1) * d].iter().map(|v| v * v).sum::<f64>())
            .sum();
        if energy > 0.0 {
            let f = energy.sqrt().recip();
            tangents.iter_mut().for_each(|t| *t *= f);
        }
        let mu = DiscreteMeasure::from_flat(d, atoms, weights.clone())?;
        let phi = phi0.as_ref().map(|f| f.with_params(&theta[2 * n * d..]));
        Ok((TangentSample::new(mu, tangents)?, phi))
    };
    let objective = |theta: &[f64]| -> Result<f64> {
        let (s, phi) = unpack(theta)?;
        Ok(score(target, cfg, s, phi)?.scaled)
    };

    let mut theta: Vec<f64> = base.atoms_flat().to_vec();
    theta.extend_from_slice(start.sample.tangents_flat());
    if let Some(f) = &phi0 {
        theta.extend(f.params());
    }
    let mut f_cur = objective(&theta)?;
    let mut step = 0.1;
    for _ in 0..steps {
        let grad: Vec<f64> = (0..theta.len())
            .into_par_iter()
            .map(|j| {
                let hj = 1e-6 * theta[j].abs().max(1.0);
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j] += hj;
                tm[j] -= hj;
                Ok((objective(&tp)? - objective(&tm)?) / (2.0 * hj))
            })
            .collect::<Result<_>>()?;
        let gn = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !(gn > 0.0) || step < 1e-12 {
            break;
        }
        let trial: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g / gn).collect();
        let f_new = objective(&trial)?;
        if f_new < f_cur {
            theta = trial;
            f_cur = f_new;
            step *= 1.5;
        } else {
            step *= 0.5;
        }
    }
    let (s, phi) = unpack(&theta)?;
    score(target, cfg, s, phi)
}

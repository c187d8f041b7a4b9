//! Discrete probability measures on R^d with finite second moment, and the
//! Wasserstein distances between them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::transport;

/// Largest atom count per side handled by the exact multi-dimensional solvers.
pub const EXACT_TRANSPORT_CAP: usize = 64;

const WEIGHT_SUM_TOL: f64 = 1e-8;

/// Weighted atom cloud. Atoms are stored flat, `dim` coordinates each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureDoc", into = "MeasureDoc")]
pub struct DiscreteMeasure {
    dim: usize,
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MeasureDoc {
    dim: usize,
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl TryFrom<MeasureDoc> for DiscreteMeasure {
    type Error = Error;
    fn try_from(doc: MeasureDoc) -> Result<Self> {
        DiscreteMeasure::new(doc.dim, doc.atoms, doc.weights)
    }
}

impl From<DiscreteMeasure> for MeasureDoc {
    fn from(m: DiscreteMeasure) -> Self {
        MeasureDoc {
            dim: m.dim,
            atoms: m.atoms.chunks(m.dim).map(|c| c.to_vec()).collect(),
            weights: m.weights,
        }
    }
}

impl DiscreteMeasure {
    /// Builds a measure from per-atom coordinates. Zero-weight atoms are
    /// dropped and the weights renormalised; a total mass further than 1e-8
    /// from one is rejected.
    pub fn new(dim: usize, atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let mut flat = Vec::with_capacity(atoms.len() * dim);
        for a in &atoms {
            if a.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: a.len(),
                });
            }
            flat.extend_from_slice(a);
        }
        Self::from_flat(dim, flat, weights)
    }

    pub fn from_flat(dim: usize, atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let m = Self::from_flat_unnormalized(dim, atoms, weights)?;
        Ok(m)
    }

    fn from_flat_unnormalized(dim: usize, atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be at least 1".into()));
        }
        if atoms.len() != weights.len() * dim {
            return Err(Error::InvalidMeasure(format!(
                "{} coordinates for {} weights in dimension {}",
                atoms.len(),
                weights.len(),
                dim
            )));
        }
        if atoms.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite atom coordinate".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidMeasure("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, not 1")));
        }
        let mut kept_atoms = Vec::with_capacity(atoms.len());
        let mut kept_weights = Vec::with_capacity(weights.len());
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                kept_atoms.extend_from_slice(&atoms[i * dim..(i + 1) * dim]);
                kept_weights.push(w / total);
            }
        }
        if kept_weights.is_empty() {
            return Err(Error::InvalidMeasure("no atom with positive weight".into()));
        }
        Ok(Self {
            dim,
            atoms: kept_atoms,
            weights: kept_weights,
        })
    }

    /// Normalises arbitrary nonnegative masses into a probability measure.
    pub fn from_masses(dim: usize, atoms: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidMeasure("total mass must be positive".into()));
        }
        let weights = masses.iter().map(|m| m / total).collect();
        Self::from_flat(dim, atoms, weights)
    }

    pub fn uniform(dim: usize, atoms: Vec<f64>) -> Result<Self> {
        let n = atoms.len() / dim.max(1);
        Self::from_flat(dim, atoms, vec![1.0 / n as f64; n])
    }

    pub fn dirac(point: &[f64]) -> Self {
        Self {
            dim: point.len(),
            atoms: point.to_vec(),
            weights: vec![1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    pub fn atoms_flat(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.atoms.chunks(self.dim).zip(self.weights.iter().copied())
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (x, w) in self.iter() {
            for (mi, xi) in m.iter_mut().zip(x) {
                *mi += w * xi;
            }
        }
        m
    }

    /// `M_2(mu)^2 = sum_i w_i |x_i|^2`.
    pub fn second_moment_sq(&self) -> f64 {
        self.iter().map(|(x, w)| w * linalg::norm_sq(x)).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.second_moment_sq().sqrt()
    }

    /// Integral of a scalar function against the measure.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }

    pub fn is_uniform(&self) -> bool {
        let w0 = self.weights[0];
        self.weights.iter().all(|w| (w - w0).abs() <= 1e-12)
    }

    /// Copy with every atom mapped through `f`.
    pub fn map_atoms(&self, mut f: impl FnMut(usize, &[f64]) -> Vec<f64>) -> Result<Self> {
        let mut atoms = Vec::with_capacity(self.atoms.len());
        for i in 0..self.len() {
            let y = f(i, self.atom(i));
            if y.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: y.len(),
                });
            }
            atoms.extend(y);
        }
        Self::from_flat(self.dim, atoms, self.weights.clone())
    }

    /// Order-insensitive comparison of (atom, weight) lists at tolerance `tol`.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        if self.dim != other.dim || self.len() != other.len() {
            return false;
        }
        let a = self.sorted_pairs();
        let b = other.sorted_pairs();
        a.iter().zip(&b).all(|((xa, wa), (xb, wb))| {
            (wa - wb).abs() <= tol && xa.iter().zip(xb).all(|(p, q)| (p - q).abs() <= tol)
        })
    }

    fn sorted_pairs(&self) -> Vec<(Vec<f64>, f64)> {
        let mut v: Vec<(Vec<f64>, f64)> = self.iter().map(|(x, w)| (x.to_vec(), w)).collect();
        v.sort_by(|a, b| {
            a.0.iter()
                .zip(&b.0)
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.total_cmp(&b.1))
        });
        v
    }
}

/// Pairs a base measure with one tangent vector per atom: the law of
/// `(xi, eta)` with `eta = v(xi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentSample {
    pub base: DiscreteMeasure,
    tangents: Vec<f64>,
}

impl TangentSample {
    pub fn new(base: DiscreteMeasure, tangents: Vec<f64>) -> Result<Self> {
        if tangents.len() != base.len() * base.dim() {
            return Err(Error::InvalidArgument {
                name: "tangents",
                reason: format!(
                    "{} coordinates for {} atoms in dimension {}",
                    tangents.len(),
                    base.len(),
                    base.dim()
                ),
            });
        }
        Ok(Self { base, tangents })
    }

    pub fn tangent(&self, i: usize) -> &[f64] {
        let d = self.base.dim();
        &self.tangents[i * d..(i + 1) * d]
    }

    pub fn tangents_flat(&self) -> &[f64] {
        &self.tangents
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    /// `E|eta|^2 = sum_i w_i |eta_i|^2`.
    pub fn tangent_energy(&self) -> f64 {
        (0..self.len())
            .map(|i| self.base.weight(i) * linalg::norm_sq(self.tangent(i)))
            .sum()
    }

    /// `E[eta]`.
    pub fn tangent_mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut m = vec![0.0; d];
        for i in 0..self.len() {
            let w = self.base.weight(i);
            for (mj, tj) in m.iter_mut().zip(self.tangent(i)) {
                *mj += w * tj;
            }
        }
        m
    }

    pub fn with_tangents(&self, tangents: Vec<f64>) -> Result<Self> {
        Self::new(self.base.clone(), tangents)
    }

    /// Measure obtained by moving every atom along its tangent by `step`.
    pub fn displaced(&self, step: f64) -> Result<DiscreteMeasure> {
        self.base
            .map_atoms(|i, x| x.iter().zip(self.tangent(i)).map(|(a, t)| a + step * t).collect())
    }
}

fn check_dims(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<()> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: nu.dim(),
        });
    }
    Ok(())
}

/// `W_p^p` in one dimension via the monotone (quantile) coupling.
fn quantile_cost(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> f64 {
    let sorted = |m: &DiscreteMeasure| {
        let mut v: Vec<(f64, f64)> = m.iter().map(|(x, w)| (x[0], w)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    };
    let a = sorted(mu);
    let b = sorted(nu);
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut cost = 0.0;
    loop {
        let step = ra.min(rb);
        cost += step * (a[i].0 - b[j].0).abs().powf(p);
        ra -= step;
        rb -= step;
        let mut advanced = false;
        if ra <= 1e-15 {
            i += 1;
            if i == a.len() {
                break;
            }
            ra += a[i].1;
            advanced = true;
        }
        if rb <= 1e-15 {
            j += 1;
            if j == b.len() {
                break;
            }
            rb += b[j].1;
            advanced = true;
        }
        if !advanced {
            break;
        }
    }
    cost
}

fn transport_cost(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<f64> {
    check_dims(mu, nu)?;
    if mu.dim() == 1 {
        return Ok(quantile_cost(mu, nu, p));
    }
    let (n, m) = (mu.len(), nu.len());
    if n > EXACT_TRANSPORT_CAP || m > EXACT_TRANSPORT_CAP {
        return Err(Error::TransportCapExceeded { n, m });
    }
    let mut cost = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            cost.push(linalg::dist_sq(mu.atom(i), nu.atom(j)).sqrt().powf(p));
        }
    }
    if n == m && mu.is_uniform() && nu.is_uniform() {
        let (_, total) = transport::assignment(&cost, n);
        Ok(total / n as f64)
    } else {
        Ok(transport::min_cost_transport(mu.weights(), nu.weights(), &cost))
    }
}

/// Quadratic Wasserstein distance.
pub fn w2_distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    Ok(transport_cost(mu, nu, 2.0)?.max(0.0).sqrt())
}

/// Order-one Wasserstein distance; in 1-d this is the integral of `|F_mu - F_nu|`.
pub fn w1_distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    Ok(transport_cost(mu, nu, 1.0)?.max(0.0))
}

/// Translates atom `k` by `shift`, leaving weights untouched.
pub fn perturb_atom(mu: &DiscreteMeasure, k: usize, shift: &[f64]) -> Result<DiscreteMeasure> {
    if k >= mu.len() {
        return Err(Error::IndexOutOfRange {
            index: k,
            len: mu.len(),
        });
    }
    if shift.len() != mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: shift.len(),
        });
    }
    let mut out = mu.clone();
    let d = mu.dim();
    for (a, s) in out.atoms[k * d..(k + 1) * d].iter_mut().zip(shift) {
        *a += s;
    }
    Ok(out)
}

/// `n` equally weighted atoms drawn from `N(mean, sd^2 I)`; reproducible per seed.
pub fn sample_gaussian(n: usize, mean: &[f64], sd: f64, seed: u64) -> Result<DiscreteMeasure> {
    if n == 0 {
        return Err(Error::InvalidArgument {
            name: "n",
            reason: "need at least one atom".into(),
        });
    }
    if !(sd >= 0.0) {
        return Err(Error::InvalidArgument {
            name: "sd",
            reason: "standard deviation must be nonnegative".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = mean.len();
    let mut atoms = Vec::with_capacity(n * d);
    for _ in 0..n {
        for m in mean {
            let z: f64 = StandardNormal.sample(&mut rng);
            atoms.push(m + sd * z);
        }
    }
    DiscreteMeasure::uniform(d, atoms)
}

//! Target distributions: diagonal-covariance Gaussian mixtures with exact
//! scores and Hessians at every diffusion time, the regularity constants the
//! error bound consumes, and tools to estimate or verify them.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::schedule::Schedule;

/// A vector field that plays the role of a score `grad log p`.
pub trait ScoreField: Sync {
    fn dim(&self) -> usize;

    fn score_into(&self, x: &[f64], out: &mut [f64]);

    fn score(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.score_into(x, &mut out);
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MixtureSpec {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

/// Mixture of Gaussians with diagonal covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureSpec", into = "MixtureSpec")]
pub struct GaussianMixture {
    dim: usize,
    weights: Vec<f64>,
    /// Row-major `k x d`.
    means: Vec<f64>,
    variances: Vec<f64>,
    inv_var: Vec<f64>,
    /// `log w_i - 0.5 sum_j log(2 pi var_ij)`.
    log_norm: Vec<f64>,
}

impl TryFrom<MixtureSpec> for GaussianMixture {
    type Error = Error;
    fn try_from(s: MixtureSpec) -> Result<Self> {
        GaussianMixture::new(s.weights, s.means, s.variances)
    }
}

impl From<GaussianMixture> for MixtureSpec {
    fn from(g: GaussianMixture) -> Self {
        let k = g.n_components();
        MixtureSpec {
            weights: g.weights.clone(),
            means: (0..k).map(|i| g.mean(i).to_vec()).collect(),
            variances: (0..k).map(|i| g.variance(i).to_vec()).collect(),
        }
    }
}

const LOG_2PI: f64 = 1.837_877_066_409_345_5;
const STACK_COMPONENTS: usize = 32;

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(invalid("mixture needs at least one component"));
        }
        if means.len() != k || variances.len() != k {
            return Err(invalid("weights, means and variances must have equal length"));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        if means.iter().chain(&variances).any(|v| v.len() != dim) {
            return Err(invalid("all means and variances must share one dimension"));
        }
        if weights.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
            return Err(invalid("weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("weights sum to {total}, not 1")));
        }
        if means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(invalid("means must be finite"));
        }
        if variances.iter().flatten().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(invalid("variances must be positive"));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let means: Vec<f64> = means.into_iter().flatten().collect();
        let variances: Vec<f64> = variances.into_iter().flatten().collect();
        let inv_var = variances.iter().map(|v| 1.0 / v).collect();
        let log_norm = (0..k)
            .map(|i| {
                let logdet: f64 = variances[i * dim..(i + 1) * dim].iter().map(|v| v.ln()).sum();
                weights[i].ln() - 0.5 * (dim as f64 * LOG_2PI + logdet)
            })
            .collect();
        Ok(Self {
            dim,
            weights,
            means,
            variances,
            inv_var,
            log_norm,
        })
    }

    /// Standard normal `N(0, I_d)`.
    pub fn standard_normal(dim: usize) -> Result<Self> {
        Self::new(vec![1.0], vec![vec![0.0; dim]], vec![vec![1.0; dim]])
    }

    /// `0.2 N(-2, 0.8^2) + 0.5 N(2, 1) + 0.3 N(5, 0.3^2)`.
    pub fn trimodal_1d() -> Self {
        Self::new(
            vec![0.2, 0.5, 0.3],
            vec![vec![-2.0], vec![2.0], vec![5.0]],
            vec![vec![0.64], vec![1.0], vec![0.09]],
        )
        .expect("benchmark mixture is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, i: usize) -> &[f64] {
        &self.means[i * self.dim..(i + 1) * self.dim]
    }

    pub fn variance(&self, i: usize) -> &[f64] {
        &self.variances[i * self.dim..(i + 1) * self.dim]
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn component_logits(&self, x: &[f64], logits: &mut [f64]) -> f64 {
        let d = self.dim;
        let mut max = f64::NEG_INFINITY;
        for (i, l) in logits.iter_mut().enumerate() {
            let mu = &self.means[i * d..(i + 1) * d];
            let iv = &self.inv_var[i * d..(i + 1) * d];
            let mut q = 0.0;
            for j in 0..d {
                let z = x[j] - mu[j];
                q += z * z * iv[j];
            }
            *l = self.log_norm[i] - 0.5 * q;
            max = max.max(*l);
        }
        max
    }

    /// Converts logits to responsibilities in place; returns log-sum-exp.
    fn responsibilities(&self, x: &[f64], r: &mut [f64]) -> f64 {
        let max = self.component_logits(x, r);
        let mut sum = 0.0;
        for v in r.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in r.iter_mut() {
            *v /= sum;
        }
        max + sum.ln()
    }

    fn with_scratch<T>(&self, f: impl FnOnce(&mut [f64]) -> T) -> T {
        let k = self.n_components();
        if k <= STACK_COMPONENTS {
            let mut buf = [0.0; STACK_COMPONENTS];
            f(&mut buf[..k])
        } else {
            let mut buf = vec![0.0; k];
            f(&mut buf)
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.with_scratch(|r| self.responsibilities(x, r)))
    }

    pub fn try_score(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.score(x))
    }

    /// Hessian of `log p` at `x`.
    pub fn hessian(&self, x: &[f64]) -> Result<Array2<f64>> {
        self.check_dim(x)?;
        let d = self.dim;
        let k = self.n_components();
        let mut r = vec![0.0; k];
        self.responsibilities(x, &mut r);
        let mut h = Array2::<f64>::zeros((d, d));
        let mut s = vec![0.0; d];
        let mut si = vec![0.0; d];
        for i in 0..k {
            let mu = self.mean(i);
            let iv = &self.inv_var[i * d..(i + 1) * d];
            for j in 0..d {
                si[j] = -(x[j] - mu[j]) * iv[j];
                s[j] += r[i] * si[j];
            }
            for a in 0..d {
                h[[a, a]] -= r[i] * iv[a];
                for b in 0..d {
                    h[[a, b]] += r[i] * si[a] * si[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..d {
                h[[a, b]] -= s[a] * s[b];
            }
        }
        Ok(h)
    }

    /// Law of `X_t` when `X_0` has this law: each component is mapped to
    /// mean `mu / c0(t)` and variance `var / c0(t)^2 + c1(t)`.
    pub fn forward_marginal(&self, schedule: &Schedule, t: f64) -> Result<Self> {
        let shrink = (-schedule.int_f(0.0, t)?).exp();
        let c1 = schedule.c1(t)?;
        let k = self.n_components();
        let means = (0..k)
            .map(|i| self.mean(i).iter().map(|m| m * shrink).collect())
            .collect();
        let variances = (0..k)
            .map(|i| self.variance(i).iter().map(|v| v * shrink * shrink + c1).collect())
            .collect();
        Self::new(self.weights.clone(), means, variances)
    }

    /// `grad log p_t(x)`.
    pub fn score_t(&self, schedule: &Schedule, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.forward_marginal(schedule, t)?.score(x))
    }

    /// `grad^2 log p_t(x)`.
    pub fn hessian_t(&self, schedule: &Schedule, x: &[f64], t: f64) -> Result<Array2<f64>> {
        self.forward_marginal(schedule, t)?.hessian(x)
    }

    /// `n x d` draws, reproducible for a given seed.
    pub fn sample(&self, n: usize, seed: u64) -> Array2<f64> {
        let d = self.dim;
        let mut cumulative = self.weights.clone();
        for i in 1..cumulative.len() {
            cumulative[i] += cumulative[i - 1];
        }
        rng::fill_rows(n, d, seed, |rng, mut row| {
            let u: f64 = rng.random();
            let i = cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(cumulative.len() - 1);
            let mu = self.mean(i);
            let var = self.variance(i);
            for j in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                row[j] = mu[j] + var[j].sqrt() * z;
            }
        })
    }

    /// `sqrt(E ||X_0||^2)`.
    pub fn x0_l2_norm(&self) -> f64 {
        (0..self.n_components())
            .map(|i| {
                let m2: f64 = self.mean(i).iter().map(|m| m * m).sum();
                let tr: f64 = self.variance(i).iter().sum();
                self.weights[i] * (m2 + tr)
            })
            .sum::<f64>()
            .sqrt()
    }

    /// `||grad log p_0(0)||`.
    pub fn score_at_origin_norm(&self) -> f64 {
        norm(&self.score(&vec![0.0; self.dim]))
    }

    pub fn mean_vector(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.n_components() {
            for (a, b) in m.iter_mut().zip(self.mean(i)) {
                *a += self.weights[i] * b;
            }
        }
        m
    }

    /// Per-coordinate variance of the mixture.
    pub fn marginal_variances(&self) -> Vec<f64> {
        let mean = self.mean_vector();
        (0..self.dim)
            .map(|j| {
                (0..self.n_components())
                    .map(|i| {
                        let mu = self.mean(i)[j];
                        self.weights[i] * (self.variance(i)[j] + mu * mu)
                    })
                    .sum::<f64>()
                    - mean[j] * mean[j]
            })
            .collect()
    }

    /// One-dimensional marginal along coordinate `j`.
    pub fn coordinate_marginal(&self, j: usize) -> Result<Self> {
        if j >= self.dim {
            return Err(invalid(format!("coordinate {j} out of range")));
        }
        let k = self.n_components();
        Self::new(
            self.weights.clone(),
            (0..k).map(|i| vec![self.mean(i)[j]]).collect(),
            (0..k).map(|i| vec![self.variance(i)[j]]).collect(),
        )
    }

    /// True when components differ along at most one coordinate, in which
    /// case the mixture factorises into a product of its marginals.
    pub fn is_product_form(&self) -> bool {
        let varying = (0..self.dim)
            .filter(|&j| {
                (1..self.n_components()).any(|i| {
                    self.mean(i)[j] != self.mean(0)[j] || self.variance(i)[j] != self.variance(0)[j]
                })
            })
            .count();
        varying <= 1
    }

    /// Axis-aligned box spanning every component mean +- `width` standard
    /// deviations.
    pub fn bounding_box(&self, width: f64) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for i in 0..self.n_components() {
            for j in 0..self.dim {
                let s = width * self.variance(i)[j].sqrt();
                lo[j] = lo[j].min(self.mean(i)[j] - s);
                hi[j] = hi[j].max(self.mean(i)[j] + s);
            }
        }
        (lo, hi)
    }
}

impl ScoreField for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        if self.n_components() == 1 {
            for j in 0..d {
                out[j] = -(x[j] - self.means[j]) * self.inv_var[j];
            }
            return;
        }
        self.with_scratch(|r| {
            self.responsibilities(x, r);
            out.iter_mut().for_each(|v| *v = 0.0);
            for (i, &ri) in r.iter().enumerate() {
                let mu = &self.means[i * d..(i + 1) * d];
                let iv = &self.inv_var[i * d..(i + 1) * d];
                for j in 0..d {
                    out[j] -= ri * (x[j] - mu[j]) * iv[j];
                }
            }
        });
    }
}

/// One-dimensional density proportional to `exp(-x^2) (1 + |x|^{3/2})`,
/// whose score has an infinite one-sided derivative at the origin and is
/// therefore not weakly log-concave for any constants.
#[derive(Debug, Clone, Copy, Default)]
pub struct CuspDensity;

impl ScoreField for CuspDensity {
    fn dim(&self) -> usize {
        1
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        let v = x[0];
        let a = v.abs();
        let bump = if v == 0.0 {
            0.0
        } else {
            1.5 * v.signum() * a.sqrt() / (1.0 + a.powf(1.5))
        };
        out[0] = -2.0 * v + bump;
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Where a constant's value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Declared by the user without a check.
    User,
    /// Measured on a grid; not a certified bound.
    Estimated,
    /// Declared and passed the sampled weak-concavity check.
    Verified,
    /// Computed exactly from the target's parameters.
    Derived,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstantProvenance {
    pub alpha0: Provenance,
    pub m0: Provenance,
    pub l0: Provenance,
    pub l1: Provenance,
    pub score_err: Provenance,
    pub x0_norm: Provenance,
    pub score_at_origin: Provenance,
}

impl Default for ConstantProvenance {
    fn default() -> Self {
        Self {
            alpha0: Provenance::User,
            m0: Provenance::User,
            l0: Provenance::User,
            l1: Provenance::User,
            score_err: Provenance::User,
            x0_norm: Provenance::User,
            score_at_origin: Provenance::User,
        }
    }
}

/// Regularity constants of the target and of the score approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetConstants {
    /// Weak-concavity parameter `alpha_0`.
    pub alpha0: f64,
    /// Weak-concavity parameter `M_0`; zero means strongly log-concave.
    pub m0: f64,
    /// Lipschitz constant of `grad log p_0`.
    pub l0: f64,
    /// Time-Lipschitz constant of the score along the backward grid.
    pub l1: f64,
    /// `L^2` score error `E`.
    pub score_err: f64,
    /// `||X_0||_{L^2}`.
    pub x0_norm: f64,
    /// `||grad log p_0(0)||`.
    pub score_at_origin: f64,
    pub dim: usize,
    #[serde(default)]
    pub provenance: ConstantProvenance,
}

impl TargetConstants {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("alpha0", self.alpha0, self.alpha0 > 0.0),
            ("m0", self.m0, self.m0 >= 0.0),
            ("l0", self.l0, self.l0 > 0.0),
            ("l1", self.l1, self.l1 >= 0.0),
            ("score_err", self.score_err, self.score_err >= 0.0),
            ("x0_norm", self.x0_norm, self.x0_norm >= 0.0),
            ("score_at_origin", self.score_at_origin, self.score_at_origin >= 0.0),
        ];
        for (name, v, ok) in checks {
            if !(ok && v.is_finite()) {
                return Err(invalid(format!("constant {name} = {v} is out of range")));
            }
        }
        if self.dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        Ok(())
    }
}

/// Evaluation points for grid-based estimates: a tensor grid spanning every
/// component mean +- `width` standard deviations in one or two dimensions,
/// and seeded uniform draws in the same box above that.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points_per_axis: usize,
    pub random_points: usize,
    pub width: f64,
    pub seed: u64,
}

impl GridSpec {
    pub fn default_for(dim: usize) -> Self {
        Self {
            points_per_axis: if dim == 1 { 401 } else { 61 },
            random_points: 20_000,
            width: 6.0,
            seed: 0,
        }
    }

    /// Grid nodes and the tensor spacing (zero for random points).
    pub fn points(&self, gmm: &GaussianMixture) -> (Vec<Vec<f64>>, f64) {
        let (lo, hi) = gmm.bounding_box(self.width);
        let d = gmm.dim();
        let n = self.points_per_axis.max(2);
        if d <= 2 {
            let axis = |j: usize| -> Vec<f64> {
                (0..n)
                    .map(|i| lo[j] + (hi[j] - lo[j]) * i as f64 / (n - 1) as f64)
                    .collect()
            };
            let spacing = (0..d)
                .map(|j| (hi[j] - lo[j]) / (n - 1) as f64)
                .fold(0.0, f64::max);
            let pts = if d == 1 {
                axis(0).into_iter().map(|x| vec![x]).collect()
            } else {
                let (a, b) = (axis(0), axis(1));
                a.iter()
                    .flat_map(|&x| b.iter().map(move |&y| vec![x, y]))
                    .collect()
            };
            (pts, spacing)
        } else {
            let mut rng = rng::stream(self.seed, 0);
            let pts = (0..self.random_points)
                .map(|_| {
                    (0..d)
                        .map(|j| lo[j] + (hi[j] - lo[j]) * rng.random::<f64>())
                        .collect()
                })
                .collect();
            (pts, 0.0)
        }
    }
}

/// A grid supremum together with the grid it was taken over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Largest tensor-grid spacing, or 0 for random evaluation points.
    pub resolution: f64,
    pub points: usize,
}

/// Spectral norm of a symmetric matrix.
pub fn spectral_norm(h: &Array2<f64>) -> f64 {
    let d = h.nrows();
    let m = DMatrix::from_fn(d, d, |i, j| h[[i, j]]);
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

/// Grid estimate of `L0 = sup ||grad^2 log p_0||`. Not a certified bound.
pub fn estimate_l0(gmm: &GaussianMixture, grid: &GridSpec) -> Result<Estimate> {
    let (pts, resolution) = grid.points(gmm);
    let mut value: f64 = 0.0;
    for x in &pts {
        value = value.max(spectral_norm(&gmm.hessian(x)?));
    }
    Ok(Estimate {
        value,
        resolution,
        points: pts.len(),
    })
}

/// Grid estimate of `L1`: the largest change of the score over one backward
/// step, per unit step and per unit `1 + ||x||`. Not a certified bound.
pub fn estimate_l1(
    gmm: &GaussianMixture,
    schedule: &Schedule,
    t_end: f64,
    h: f64,
    grid: &GridSpec,
) -> Result<Estimate> {
    if !(h > 0.0 && t_end > 0.0 && h <= t_end) {
        return Err(invalid(format!("need 0 < h <= T, got h = {h}, T = {t_end}")));
    }
    let k_steps = (t_end / h).round().max(1.0) as usize;
    let h = t_end / k_steps as f64;
    let (pts, resolution) = grid.points(gmm);
    let mut prev = gmm.forward_marginal(schedule, t_end)?;
    let mut value: f64 = 0.0;
    let d = gmm.dim();
    let (mut s0, mut s1) = (vec![0.0; d], vec![0.0; d]);
    for k in 1..=k_steps {
        let u = (k_steps - k) as f64 * h;
        let next = gmm.forward_marginal(schedule, u)?;
        for x in &pts {
            prev.score_into(x, &mut s0);
            next.score_into(x, &mut s1);
            let diff: f64 = s0.iter().zip(&s1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            value = value.max(diff / (h * (1.0 + norm(x))));
        }
        prev = next;
    }
    Ok(Estimate {
        value,
        resolution,
        points: pts.len(),
    })
}

/// `f_M(r) = 2 sqrt(M) tanh(sqrt(M) r / 2)`.
pub fn f_m(m: f64, r: f64) -> f64 {
    let s = m.sqrt();
    2.0 * s * (0.5 * s * r).tanh()
}

/// How test pairs `(x, y)` are drawn for the weak-concavity check.
///
/// Half of the midpoints are uniform in the box `center +- half_width`; the
/// other half sit near an anchor at a log-uniform scale, which probes local
/// behaviour around modes and the origin. Separations are log-uniform in
/// `[r_min, r_max]` with uniformly random directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSampling {
    pub n_pairs: usize,
    pub seed: u64,
    pub center: Vec<f64>,
    pub half_width: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub anchors: Vec<Vec<f64>>,
}

impl PairSampling {
    pub fn for_mixture(gmm: &GaussianMixture, n_pairs: usize, seed: u64) -> Self {
        let (lo, hi) = gmm.bounding_box(6.0);
        let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let half_width = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (b - a)).fold(0.0, f64::max);
        let mut anchors: Vec<Vec<f64>> = (0..gmm.n_components()).map(|i| gmm.mean(i).to_vec()).collect();
        anchors.push(vec![0.0; gmm.dim()]);
        Self {
            n_pairs,
            seed,
            center,
            half_width,
            r_min: 1e-6,
            r_max: 2.0 * half_width,
            anchors,
        }
    }
}

/// A pair violating the weak-concavity inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcavityCheck {
    pub verified: bool,
    pub pairs_checked: usize,
    /// The worst violation found, if any.
    pub counterexample: Option<Counterexample>,
}

/// Samples pairs and checks
/// `<s(x) - s(y), x - y> <= -alpha0 r^2 + r f_M(r)` with `r = ||x - y||`.
///
/// Passing is evidence, not proof.
pub fn verify_weak_concavity<S: ScoreField + ?Sized>(
    field: &S,
    alpha0: f64,
    m0: f64,
    sampling: &PairSampling,
) -> Result<ConcavityCheck> {
    let d = field.dim();
    if sampling.center.len() != d || sampling.anchors.iter().any(|a| a.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            got: sampling.center.len(),
        });
    }
    if !(alpha0 > 0.0 && m0 >= 0.0 && sampling.r_min > 0.0 && sampling.r_max >= sampling.r_min) {
        return Err(invalid("need alpha0 > 0, m0 >= 0 and 0 < r_min <= r_max"));
    }
    let mut rng = rng::stream(sampling.seed, 0);
    let (ln_lo, ln_hi) = (sampling.r_min.ln(), sampling.r_max.ln());
    let ln_scale_hi = sampling.half_width.max(sampling.r_min).ln();
    let mut worst: Option<(f64, Counterexample)> = None;
    let (mut x, mut y) = (vec![0.0; d], vec![0.0; d]);
    let (mut sx, mut sy) = (vec![0.0; d], vec![0.0; d]);
    let mut u = vec![0.0; d];
    for i in 0..sampling.n_pairs {
        let mid: Vec<f64> = if i % 2 == 0 || sampling.anchors.is_empty() {
            sampling
                .center
                .iter()
                .map(|c| c + sampling.half_width * (2.0 * rng.random::<f64>() - 1.0))
                .collect()
        } else {
            let a = &sampling.anchors[(i / 2) % sampling.anchors.len()];
            let scale = (ln_lo + (ln_scale_hi - ln_lo) * rng.random::<f64>()).exp();
            a.iter()
                .map(|c| c + scale * (2.0 * rng.random::<f64>() - 1.0))
                .collect()
        };
        let r = (ln_lo + (ln_hi - ln_lo) * rng.random::<f64>()).exp();
        for v in u.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let un = norm(&u);
        for j in 0..d {
            let off = 0.5 * r * u[j] / un;
            x[j] = mid[j] + off;
            y[j] = mid[j] - off;
        }
        field.score_into(&x, &mut sx);
        field.score_into(&y, &mut sy);
        let dist = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let lhs: f64 = (0..d).map(|j| (sx[j] - sy[j]) * (x[j] - y[j])).sum();
        let rhs = -alpha0 * dist * dist + dist * f_m(m0, dist);
        let tol = 1e-9 * (lhs.abs() + alpha0 * dist * dist + dist * f_m(m0, dist)) + 1e-300;
        let excess = lhs - rhs;
        if excess > tol {
            let scaled = excess / (dist * dist);
            if worst.as_ref().is_none_or(|(w, _)| scaled > *w) {
                worst = Some((
                    scaled,
                    Counterexample {
                        x: x.clone(),
                        y: y.clone(),
                        lhs,
                        rhs,
                    },
                ));
            }
        }
    }
    Ok(ConcavityCheck {
        verified: worst.is_none(),
        pairs_checked: sampling.n_pairs,
        counterexample: worst.map(|(_, c)| c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::Family;

    #[test]
    fn trimodal_moments() {
        let g = GaussianMixture::trimodal_1d();
        assert!((g.mean_vector()[0] - 2.1).abs() < 1e-14);
        // E[X^2] = 0.2 (4 + 0.64) + 0.5 (4 + 1) + 0.3 (25 + 0.09).
        assert!((g.x0_l2_norm().powi(2) - 10.955).abs() < 1e-12);
        assert!((g.x0_l2_norm() - 3.309_833_832_687_073).abs() < 1e-12);
    }

    #[test]
    fn standard_normal_forward_marginal_is_stationary_under_ou() {
        let g = GaussianMixture::standard_normal(3).unwrap();
        let s = Schedule::ou();
        let m = g.forward_marginal(&s, 1.7).unwrap();
        for j in 0..3 {
            assert!((m.variance(0)[j] - 1.0).abs() < 1e-15);
            assert_eq!(m.mean(0)[j], 0.0);
        }
        let sc = g.score_t(&s, &[1.0, -2.0, 0.5], 0.3).unwrap();
        assert!((sc[0] + 1.0).abs() < 1e-15 && (sc[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn score_and_hessian_match_finite_differences() {
        let g = GaussianMixture::new(
            vec![0.3, 0.7],
            vec![vec![-1.0, 0.5], vec![1.5, -0.5]],
            vec![vec![0.5, 1.2], vec![0.8, 0.3]],
        )
        .unwrap();
        let x = [0.2, 0.1];
        let s = g.score(&x);
        let hs = 1e-5;
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += hs;
            xm[j] -= hs;
            let fd = (g.log_density(&xp).unwrap() - g.log_density(&xm).unwrap()) / (2.0 * hs);
            assert!((fd - s[j]).abs() < 1e-8);
        }
        let h = g.hessian(&x).unwrap();
        let hh = 1e-4;
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += hh;
            xm[j] -= hh;
            let (sp, sm) = (g.score(&xp), g.score(&xm));
            for i in 0..2 {
                let fd = (sp[i] - sm[i]) / (2.0 * hh);
                assert!((fd - h[[i, j]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn validation_rejects_bad_mixtures() {
        assert!(GaussianMixture::new(vec![], vec![], vec![]).is_err());
        assert!(GaussianMixture::new(vec![0.5, 0.4], vec![vec![0.0], vec![1.0]], vec![vec![1.0], vec![1.0]]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![vec![0.0]]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0, 1.0]], vec![vec![1.0]]).is_err());
        let g = GaussianMixture::standard_normal(2).unwrap();
        assert!(matches!(g.log_density(&[0.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn sampling_is_deterministic_and_has_the_right_moments() {
        let g = GaussianMixture::trimodal_1d();
        let a = g.sample(50_000, 9);
        let b = g.sample(50_000, 9);
        assert_eq!(a, b);
        let mean = a.column(0).mean().unwrap();
        let m2 = a.column(0).mapv(|v| v * v).mean().unwrap();
        assert!((mean - 2.1).abs() < 0.05);
        assert!((m2 - 10.955).abs() < 0.2);
        assert_ne!(g.sample(10, 1), g.sample(10, 2));
    }

    #[test]
    fn serde_round_trip() {
        let g = GaussianMixture::trimodal_1d();
        let json = serde_json::to_string(&g).unwrap();
        let back: GaussianMixture = serde_json::from_str(&json).unwrap();
        assert_eq!(g, back);
        assert!(serde_json::from_str::<GaussianMixture>(
            r#"{"weights":[1.0],"means":[[0.0]],"variances":[[-1.0]]}"#
        )
        .is_err());
    }

    #[test]
    fn standard_normal_is_strongly_log_concave() {
        let g = GaussianMixture::standard_normal(2).unwrap();
        let ps = PairSampling::for_mixture(&g, 5_000, 3);
        assert!(verify_weak_concavity(&g, 1.0, 0.0, &ps).unwrap().verified);
        // alpha0 above the true curvature must be refuted.
        let check = verify_weak_concavity(&g, 1.2, 0.0, &ps).unwrap();
        assert!(!check.verified && check.counterexample.is_some());
    }

    #[test]
    fn cusp_density_has_counterexamples_near_zero() {
        let ps = PairSampling {
            n_pairs: 20_000,
            seed: 1,
            center: vec![0.0],
            half_width: 5.0,
            r_min: 1e-8,
            r_max: 10.0,
            anchors: vec![vec![0.0]],
        };
        for &(a, m) in &[(0.1, 1.0), (1.0, 10.0), (0.5, 100.0)] {
            let check = verify_weak_concavity(&CuspDensity, a, m, &ps).unwrap();
            let ce = check.counterexample.expect("counterexample");
            assert!(ce.x[0].abs() < 1.0 && ce.y[0].abs() < 1.0);
        }
    }

    #[test]
    fn l0_of_standard_normal_is_one() {
        let g = GaussianMixture::standard_normal(1).unwrap();
        let e = estimate_l0(&g, &GridSpec::default_for(1)).unwrap();
        assert!((e.value - 1.0).abs() < 1e-12);
        assert_eq!(e.points, 401);
    }

    #[test]
    fn l1_vanishes_for_stationary_target() {
        let g = GaussianMixture::standard_normal(1).unwrap();
        let e = estimate_l1(&g, &Schedule::ou(), 5.0, 0.1, &GridSpec::default_for(1)).unwrap();
        assert!(e.value < 1e-12);
        let vp = Schedule::new(Family::VpConst { b: 1.0 }).unwrap();
        let e = estimate_l1(&GaussianMixture::trimodal_1d(), &vp, 5.0, 0.1, &GridSpec::default_for(1)).unwrap();
        assert!(e.value > 0.0);
    }

    #[test]
    fn product_form_detection() {
        let p = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![-2.0, 0.0], vec![2.0, 0.0]],
            vec![vec![1.0, 1.0], vec![1.0, 1.0]],
        )
        .unwrap();
        assert!(p.is_product_form());
        let q = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![-2.0, 1.0], vec![2.0, 0.0]],
            vec![vec![1.0, 1.0], vec![1.0, 1.0]],
        )
        .unwrap();
        assert!(!q.is_product_form());
    }
}

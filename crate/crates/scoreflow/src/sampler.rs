//! Exponential-integrator discretisation of the probability-flow ODE
//!
//! ```text
//! dY/dt = f(T - t) Y + 0.5 g^2(T - t) grad log p_{T-t}(Y),   t in [0, T],
//! ```
//!
//! which freezes the score at the left end of each step and integrates the
//! linear part exactly:
//! `Z_k = e^{int f} Z_{k-1} + 0.5 w_k s(Z_{k-1}, T - t_{k-1})`.

use ndarray::{Array2, ArrayViewMut1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{self, CHUNK_ROWS};
use crate::schedule::Schedule;
use crate::target::{GaussianMixture, ScoreField};

/// Substeps per sampler step used by [`reference_flow`].
pub const REFERENCE_SUBSTEPS: usize = 100;

/// The score supplied to the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreOracle {
    /// The exact score of the forward marginal.
    Exact,
    /// Exact score plus `eps` times a unit vector derived from `(x, t, seed)`,
    /// so the pointwise (and hence `L^2`) error is exactly `eps`.
    Perturbed { eps: f64, seed: u64 },
}

impl ScoreOracle {
    pub fn score_error(&self) -> f64 {
        match *self {
            ScoreOracle::Exact => 0.0,
            ScoreOracle::Perturbed { eps, .. } => eps,
        }
    }
}

/// Law of the initial state `Z_0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    /// `N(0, c1(T) I)`: the forward marginal of a point mass at the origin.
    #[default]
    Marginal,
    /// `N(0, I)`, the stationary law of VP schedules. Outside the certified
    /// path of the error bound.
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub schedule: Schedule,
    pub target: GaussianMixture,
    pub t_end: f64,
    pub k_steps: usize,
    pub score: ScoreOracle,
    #[serde(default)]
    pub init: Initialization,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(schedule: Schedule, target: GaussianMixture, t_end: f64, k_steps: usize) -> Result<Self> {
        let c = Self {
            schedule,
            target,
            t_end,
            k_steps,
            score: ScoreOracle::Exact,
            init: Initialization::Marginal,
            seed: 0,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_score(mut self, score: ScoreOracle) -> Self {
        self.score = score;
        self
    }

    pub fn with_init(mut self, init: Initialization) -> Self {
        self.init = init;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(invalid(format!("T must be positive, got {}", self.t_end)));
        }
        if self.k_steps == 0 {
            return Err(invalid("K must be at least 1"));
        }
        if let ScoreOracle::Perturbed { eps, .. } = self.score {
            if !(eps.is_finite() && eps >= 0.0) {
                return Err(invalid(format!("perturbation must be >= 0, got {eps}")));
            }
        }
        if self.init == Initialization::Stationary && !self.schedule.is_vp() {
            return Err(invalid("stationary initialisation needs a VP schedule"));
        }
        Ok(())
    }

    pub fn step_size(&self) -> f64 {
        self.t_end / self.k_steps as f64
    }

    /// Forward time of grid node `j` of the backward grid, `T - t_j`.
    fn forward_time(&self, j: usize) -> f64 {
        (self.k_steps - j) as f64 * self.step_size()
    }
}

/// Precomputed coefficients of one integrator step.
#[derive(Debug, Clone)]
struct Step {
    drift: f64,
    half_weight: f64,
    time: f64,
    marginal: GaussianMixture,
}

fn build_steps(config: &SamplerConfig) -> Result<Vec<Step>> {
    (1..=config.k_steps)
        .map(|k| {
            let lo = config.forward_time(k);
            let hi = config.forward_time(k - 1);
            Ok(Step {
                drift: config.schedule.int_f(lo, hi)?.exp(),
                half_weight: 0.5 * config.schedule.step_weight(lo, hi)?,
                time: hi,
                marginal: config.target.forward_marginal(&config.schedule, hi)?,
            })
        })
        .collect()
}

/// Unit vector determined by `(x, t, seed)`.
fn perturbation_direction(x: &[f64], t: f64, seed: u64, out: &mut [f64]) {
    let mut h = rng::mix64(seed ^ t.to_bits());
    for v in x {
        h = rng::mix64(h ^ v.to_bits());
    }
    let mut r = ChaCha8Rng::seed_from_u64(h);
    let mut n2 = 0.0;
    for o in out.iter_mut() {
        *o = r.sample(StandardNormal);
        n2 += *o * *o;
    }
    let n = n2.sqrt();
    out.iter_mut().for_each(|o| *o /= n);
}

fn oracle_score(oracle: &ScoreOracle, marginal: &GaussianMixture, x: &[f64], t: f64, out: &mut [f64], dir: &mut [f64]) {
    marginal.score_into(x, out);
    if let ScoreOracle::Perturbed { eps, seed } = *oracle {
        if eps > 0.0 {
            perturbation_direction(x, t, seed, dir);
            for (o, u) in out.iter_mut().zip(dir.iter()) {
                *o += eps * u;
            }
        }
    }
}

fn apply_step(step: &Step, oracle: &ScoreOracle, z: &mut [f64], s: &mut [f64], dir: &mut [f64]) {
    oracle_score(oracle, &step.marginal, z, step.time, s, dir);
    for (zi, si) in z.iter_mut().zip(s.iter()) {
        *zi = step.drift * *zi + step.half_weight * si;
    }
}

/// One integrator step `k` (1-based) from state `z`.
pub fn single_step(config: &SamplerConfig, z: &[f64], k: usize) -> Result<Vec<f64>> {
    config.validate()?;
    if k == 0 || k > config.k_steps {
        return Err(invalid(format!("step index {k} outside 1..={}", config.k_steps)));
    }
    if z.len() != config.target.dim() {
        return Err(Error::Dimension {
            expected: config.target.dim(),
            got: z.len(),
        });
    }
    let lo = config.forward_time(k);
    let hi = config.forward_time(k - 1);
    let step = Step {
        drift: config.schedule.int_f(lo, hi)?.exp(),
        half_weight: 0.5 * config.schedule.step_weight(lo, hi)?,
        time: hi,
        marginal: config.target.forward_marginal(&config.schedule, hi)?,
    };
    let mut out = z.to_vec();
    let d = z.len();
    apply_step(&step, &config.score, &mut out, &mut vec![0.0; d], &mut vec![0.0; d]);
    Ok(out)
}

/// Draws `n` initial states.
pub fn initial_samples(config: &SamplerConfig, n: usize) -> Result<Array2<f64>> {
    config.validate()?;
    let sd = match config.init {
        Initialization::Marginal => config.schedule.c1(config.t_end)?.sqrt(),
        Initialization::Stationary => 1.0,
    };
    Ok(rng::fill_rows(n, config.target.dim(), config.seed, |r, mut row| {
        for v in row.iter_mut() {
            let z: f64 = r.sample(StandardNormal);
            *v = sd * z;
        }
    }))
}

/// Runs the sampler on `n` fresh initial states.
pub fn run(config: &SamplerConfig, n: usize) -> Result<Array2<f64>> {
    let z0 = initial_samples(config, n)?;
    run_from(config, z0)
}

/// Runs the sampler from given initial states (rows of `z0`).
pub fn run_from(config: &SamplerConfig, mut z: Array2<f64>) -> Result<Array2<f64>> {
    config.validate()?;
    let d = config.target.dim();
    if z.ncols() != d {
        return Err(Error::Dimension {
            expected: d,
            got: z.ncols(),
        });
    }
    let steps = build_steps(config)?;
    let failures: Vec<Option<Error>> = z
        .axis_chunks_iter_mut(Axis(0), CHUNK_ROWS)
        .into_par_iter()
        .enumerate()
        .map(|(chunk, mut block)| {
            let mut s = vec![0.0; d];
            let mut dir = vec![0.0; d];
            let mut buf = vec![0.0; d];
            for (r, mut row) in block.rows_mut().into_iter().enumerate() {
                copy_in(&row, &mut buf);
                for (k, step) in steps.iter().enumerate() {
                    apply_step(step, &config.score, &mut buf, &mut s, &mut dir);
                    if let Some(j) = buf.iter().position(|v| !v.is_finite()) {
                        return Some(Error::NonFinite {
                            step: k + 1,
                            particle: chunk * CHUNK_ROWS + r,
                            coordinate: j,
                        });
                    }
                }
                copy_out(&buf, &mut row);
            }
            None
        })
        .collect();
    match failures.into_iter().flatten().next() {
        Some(e) => Err(e),
        None => Ok(z),
    }
}

fn copy_in(row: &ArrayViewMut1<'_, f64>, buf: &mut [f64]) {
    for (b, v) in buf.iter_mut().zip(row.iter()) {
        *b = *v;
    }
}

fn copy_out(buf: &[f64], row: &mut ArrayViewMut1<'_, f64>) {
    for (v, b) in row.iter_mut().zip(buf) {
        *v = *b;
    }
}

/// The exact probability-flow ODE from `z0`, integrated with classical RK4
/// at step `h / REFERENCE_SUBSTEPS`.
pub fn reference_flow(config: &SamplerConfig, z0: &Array2<f64>) -> Result<Array2<f64>> {
    reference_flow_with(config, z0, config.k_steps * REFERENCE_SUBSTEPS)
}

/// The exact probability-flow ODE from `z0` with `n_steps` RK4 steps.
pub fn reference_flow_with(config: &SamplerConfig, z0: &Array2<f64>, n_steps: usize) -> Result<Array2<f64>> {
    config.validate()?;
    let d = config.target.dim();
    if z0.ncols() != d {
        return Err(Error::Dimension {
            expected: d,
            got: z0.ncols(),
        });
    }
    if n_steps == 0 {
        return Err(invalid("reference flow needs at least one step"));
    }
    let hh = config.t_end / n_steps as f64;
    let s = &config.schedule;
    let field = |u: f64| -> Result<(f64, f64, GaussianMixture)> {
        Ok((s.f(u), 0.5 * s.g2(u), config.target.forward_marginal(s, u)?))
    };
    let mut y = z0.clone();
    let mut start = field(config.t_end)?;
    for j in 0..n_steps {
        let mid = field((n_steps - j) as f64 * hh - 0.5 * hh)?;
        let end = field((n_steps - j - 1) as f64 * hh)?;
        let eval = |(f, hg, m): &(f64, f64, GaussianMixture), x: &[f64], out: &mut [f64]| {
            m.score_into(x, out);
            for (o, xi) in out.iter_mut().zip(x) {
                *o = f * xi + hg * *o;
            }
        };
        y.axis_chunks_iter_mut(Axis(0), CHUNK_ROWS)
            .into_par_iter()
            .for_each(|mut block| {
                let mut x = vec![0.0; d];
                let mut tmp = vec![0.0; d];
                let (mut k1, mut k2, mut k3, mut k4) =
                    (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
                for mut row in block.rows_mut() {
                    copy_in(&row, &mut x);
                    eval(&start, &x, &mut k1);
                    for i in 0..d {
                        tmp[i] = x[i] + 0.5 * hh * k1[i];
                    }
                    eval(&mid, &tmp, &mut k2);
                    for i in 0..d {
                        tmp[i] = x[i] + 0.5 * hh * k2[i];
                    }
                    eval(&mid, &tmp, &mut k3);
                    for i in 0..d {
                        tmp[i] = x[i] + hh * k3[i];
                    }
                    eval(&end, &tmp, &mut k4);
                    for i in 0..d {
                        x[i] += hh / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                    }
                    copy_out(&x, &mut row);
                }
            });
        start = end;
    }
    if let Some(((p, c), _)) = y.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            step: n_steps,
            particle: p,
            coordinate: c,
        });
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::Family;

    fn gaussian_config(d: usize, t_end: f64, k: usize) -> SamplerConfig {
        SamplerConfig::new(Schedule::ou(), GaussianMixture::standard_normal(d).unwrap(), t_end, k).unwrap()
    }

    #[test]
    fn ou_step_on_standard_normal_is_the_identity() {
        // e^h z + (e^h - 1)(-z) = z.
        let c = gaussian_config(1, 1.0, 100);
        let z = single_step(&c, &[1.0], 1).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_steps_rejected() {
        let g = GaussianMixture::standard_normal(1).unwrap();
        assert!(SamplerConfig::new(Schedule::ou(), g.clone(), 1.0, 0).is_err());
        assert!(SamplerConfig::new(Schedule::ou(), g, 0.0, 10).is_err());
    }

    #[test]
    fn stationary_init_is_vp_only() {
        let g = GaussianMixture::standard_normal(1).unwrap();
        let ve = Schedule::new(Family::VeExp { a: 1.0, b: 0.5 }).unwrap();
        let c = SamplerConfig::new(ve, g, 1.0, 10).unwrap().with_init(Initialization::Stationary);
        assert!(c.validate().is_err());
    }

    #[test]
    fn runs_are_deterministic_per_seed() {
        let c = SamplerConfig::new(Schedule::ou(), GaussianMixture::trimodal_1d(), 3.0, 60)
            .unwrap()
            .with_seed(5);
        let a = run(&c, 5000).unwrap();
        let b = run(&c, 5000).unwrap();
        assert_eq!(a, b);
        let other = run(&c.clone().with_seed(6), 5000).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn perturbation_has_unit_norm_and_depends_on_inputs() {
        let mut u = vec![0.0; 3];
        let mut v = vec![0.0; 3];
        perturbation_direction(&[0.1, 0.2, 0.3], 1.0, 7, &mut u);
        perturbation_direction(&[0.1, 0.2, 0.3], 1.0, 7, &mut v);
        assert_eq!(u, v);
        assert!((u.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-14);
        perturbation_direction(&[0.1, 0.2, 0.3], 1.5, 7, &mut v);
        assert_ne!(u, v);
    }

    #[test]
    fn reference_flow_pushes_marginal_to_target_for_gaussians() {
        // For N(0, s^2) targets under OU the flow map is linear with slope
        // sqrt(s^2 / var_T) where var_T is the forward variance at time T.
        let g = GaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![vec![4.0]]).unwrap();
        let c = SamplerConfig::new(Schedule::ou(), g, 2.0, 20).unwrap();
        let z0 = Array2::from_shape_vec((1, 1), vec![0.5]).unwrap();
        let y = reference_flow(&c, &z0).unwrap();
        let var_t = 4.0 * (-4.0f64).exp() + 1.0 - (-4.0f64).exp();
        assert!((y[[0, 0]] - 0.5 * (4.0 / var_t).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn sampler_converges_to_reference_as_h_shrinks() {
        let g = GaussianMixture::trimodal_1d();
        let z0 = Array2::from_shape_fn((16, 1), |(i, _)| -2.0 + 0.25 * i as f64);
        let reference = {
            let c = SamplerConfig::new(Schedule::ou(), g.clone(), 2.0, 400).unwrap();
            reference_flow_with(&c, &z0, 40_000).unwrap()
        };
        let err = |k: usize| {
            let c = SamplerConfig::new(Schedule::ou(), g.clone(), 2.0, k).unwrap();
            let y = run_from(&c, z0.clone()).unwrap();
            (&y - &reference).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b))
        };
        let (e1, e2) = (err(100), err(200));
        assert!(e2 < e1 && e1 / e2 > 1.6 && e1 / e2 < 2.4, "{e1} {e2}");
    }
}

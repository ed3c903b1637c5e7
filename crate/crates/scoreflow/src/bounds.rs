//! The Wasserstein-2 error bound for the exponential-integrator sampler.
//!
//! The bound splits into an initialisation term `E0`, a discretisation term
//! `E1` and a score-error term `E2`. Discretisation and score errors made at
//! step `k` are propagated to the end by the tail product of per-step
//! contraction factors `gamma_j`, which are below one once the marginal is
//! log-concave (`T - t_j >= tau`) and above one before.
//!
//! All per-step integrals are taken in forward time `u = T - t` over
//! `[(K - k) h, (K - k + 1) h]`, so a step's quantities depend on its
//! position relative to the data end only.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concavity::{ConcavityProfile, SUP_GRID_POINTS};
use crate::error::{invalid, Error, Result};
use crate::numeric::{golden_max, integrate, integrate_with_breaks, QuadratureSettings};
use crate::schedule::Schedule;
use crate::target::TargetConstants;

/// Everything the bound depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub schedule: Schedule,
    pub constants: TargetConstants,
    pub t_end: f64,
    pub k_steps: usize,
}

impl BoundInputs {
    pub fn new(schedule: Schedule, constants: TargetConstants, t_end: f64, k_steps: usize) -> Result<Self> {
        let b = Self {
            schedule,
            constants,
            t_end,
            k_steps,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(invalid(format!("T must be positive, got {}", self.t_end)));
        }
        if self.k_steps == 0 {
            return Err(invalid("K must be at least 1"));
        }
        Ok(())
    }

    pub fn step_size(&self) -> f64 {
        self.t_end / self.k_steps as f64
    }

    pub fn profile(&self) -> Result<ConcavityProfile> {
        ConcavityProfile::from_constants(self.schedule, &self.constants)
    }

    /// Forward-time interval of backward step `k` (1-based).
    pub fn step_interval(&self, k: usize) -> (f64, f64) {
        let h = self.step_size();
        ((self.k_steps - k) as f64 * h, (self.k_steps - k + 1) as f64 * h)
    }
}

/// The bound and every intermediate constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub t_end: f64,
    pub k_steps: usize,
    pub h: f64,
    pub tau: f64,
    pub big_c: f64,
    pub log_big_c: f64,
    pub xi_tau: f64,
    pub eta_t: f64,
    pub theta_t: f64,
    pub omega_t: f64,
    pub l_upper: f64,
    pub h_bar: f64,
    pub e0: f64,
    pub log_e0: f64,
    pub e1: f64,
    pub e2: f64,
    pub total: f64,
    /// `gamma_k` for `k = 1..=K`.
    pub gammas: Vec<f64>,
}

/// Where step `k` sits relative to the regime shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaRegime {
    /// `k <= floor(K - tau / h)`: expected `gamma_k` in `(0, 1)`.
    Contracting,
    /// The step straddling `tau`; no sign claim.
    Boundary,
    /// `k >= ceil(K - tau / h) + 1`: expected `gamma_k > 1`.
    Expanding,
}

/// Classifies the steps of a `K`-step grid with step size `h`.
pub fn gamma_regimes(tau: f64, h: f64, k_steps: usize) -> Vec<GammaRegime> {
    let edge = k_steps as f64 - tau / h;
    (1..=k_steps)
        .map(|k| {
            let k = k as f64;
            if k <= edge.floor() {
                GammaRegime::Contracting
            } else if k >= edge.ceil() + 1.0 {
                GammaRegime::Expanding
            } else {
                GammaRegime::Boundary
            }
        })
        .collect()
}

/// Per-step quantities entering `E1` and `E2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTerms {
    pub gamma: f64,
    /// `log c0(T - t_k)`, the log of the propagation factor to time `T`.
    pub log_growth: f64,
    pub weight: f64,
    pub int_g2: f64,
    /// `int [f + g^2 L / 2]` over the step.
    pub drift_lipschitz: f64,
    /// `int [e^{int f} g^2 L]^2` over the step.
    pub j: f64,
}

fn step_terms(
    profile: &ConcavityProfile,
    l1: f64,
    h: f64,
    lo: f64,
    hi: f64,
    kinks: &[f64],
    settings: &QuadratureSettings,
) -> Result<StepTerms> {
    let s = &profile.schedule;
    let delta = integrate_with_breaks(
        |u| {
            let g2 = s.g2(u);
            let l = profile.lipschitz_unchecked(u);
            0.5 * (-s.int_f_unchecked(u, hi)).exp() * g2 * profile.k_unchecked(u)
                - 0.125 * h * g2 * g2 * l * l
        },
        lo,
        hi,
        kinks,
        settings,
    )?
    .value;
    let j = integrate_with_breaks(
        |u| {
            let v = s.int_f_unchecked(lo, u).exp() * s.g2(u) * profile.lipschitz_unchecked(u);
            v * v
        },
        lo,
        hi,
        kinks,
        settings,
    )?
    .value;
    let drift_lipschitz = integrate_with_breaks(
        |u| s.f(u) + 0.5 * s.g2(u) * profile.lipschitz_unchecked(u),
        lo,
        hi,
        kinks,
        settings,
    )?
    .value;
    let int_g2 = s.int_g2_unchecked(lo, hi);
    Ok(StepTerms {
        gamma: 1.0 - delta + 0.5 * l1 * h * int_g2,
        log_growth: s.int_f_unchecked(0.0, lo),
        weight: s.step_weight_unchecked(lo, hi),
        int_g2,
        drift_lipschitz,
        j,
    })
}

/// Per-step terms for every step `k = 1..=K`.
pub fn all_step_terms(inputs: &BoundInputs) -> Result<Vec<StepTerms>> {
    inputs.validate()?;
    let profile = inputs.profile()?;
    let kinks = profile.lipschitz_kinks(inputs.t_end)?;
    let h = inputs.step_size();
    let settings = *inputs.schedule.quadrature();
    (1..=inputs.k_steps)
        .into_par_iter()
        .map(|k| {
            let (lo, hi) = inputs.step_interval(k);
            step_terms(&profile, inputs.constants.l1, h, lo, hi, &kinks, &settings)
        })
        .collect()
}

/// `gamma_k` for `k = 1..=K`.
pub fn gamma_k(inputs: &BoundInputs) -> Result<Vec<f64>> {
    Ok(all_step_terms(inputs)?.iter().map(|s| s.gamma).collect())
}

/// `theta(T) = sup_t exp(-0.5 int_0^t g^2 K (T - s) ds - int_t^T f(T - s) ds) ||X0||`.
///
/// In forward time `v = T - t` the exponent is
/// `-0.5 int_v^T g^2 K - int_0^v f`.
pub fn theta_t(profile: &ConcavityProfile, t_end: f64, x0_norm: f64) -> Result<f64> {
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(Error::Domain(format!("T must be finite and >= 0, got {t_end}")));
    }
    if t_end == 0.0 {
        return Ok(x0_norm);
    }
    let s = &profile.schedule;
    let settings = s.quadrature();
    let n = SUP_GRID_POINTS;
    let grid: Vec<f64> = (0..n)
        .map(|i| if i == n - 1 { t_end } else { t_end * i as f64 / (n - 1) as f64 })
        .collect();
    let g2k = |u: f64| s.g2(u) * profile.k_unchecked(u);
    // tail[i] = int_{grid[i]}^T g^2 K.
    let mut tail = vec![0.0; n];
    for i in (0..n - 1).rev() {
        tail[i] = tail[i + 1] + integrate(g2k, grid[i], grid[i + 1], settings)?.value;
    }
    let phi_grid = |i: usize| -0.5 * tail[i] - s.int_f_unchecked(0.0, grid[i]);
    let (best, mut best_phi) = (0..n)
        .map(|i| (i, phi_grid(i)))
        .fold((0, f64::NEG_INFINITY), |acc, (i, p)| if p > acc.1 { (i, p) } else { acc });
    let lo = grid[best.saturating_sub(1)];
    let hi_idx = (best + 1).min(n - 1);
    let hi = grid[hi_idx];
    let mut failed = None;
    let (_, refined) = golden_max(
        |v| {
            let part = match integrate(g2k, v, hi, settings) {
                Ok(q) => q.value,
                Err(e) => {
                    failed = Some(e);
                    return f64::NEG_INFINITY;
                }
            };
            -0.5 * (tail[hi_idx] + part) - s.int_f_unchecked(0.0, v)
        },
        lo,
        hi,
    );
    if let Some(e) = failed {
        return Err(e);
    }
    best_phi = best_phi.max(refined);
    Ok(x0_norm * best_phi.exp())
}

/// `omega(t) = (e^{-2 int_0^t f} ||X0||^2 + d c1(t))^{1/2}`.
pub fn omega_at(schedule: &Schedule, t: f64, x0_norm: f64, dim: usize) -> Result<f64> {
    let decay = (-2.0 * schedule.int_f(0.0, t)?).exp();
    Ok((decay * x0_norm * x0_norm + dim as f64 * schedule.c1(t)?).sqrt())
}

/// `omega(T) = sup_{t <= T} omega(t)`.
pub fn omega_t(schedule: &Schedule, t_end: f64, x0_norm: f64, dim: usize) -> Result<f64> {
    omega_at(schedule, t_end, x0_norm, dim)?;
    Ok(crate::numeric::grid_sup(
        |t| omega_at(schedule, t, x0_norm, dim).unwrap_or(f64::NAN),
        0.0,
        t_end,
        SUP_GRID_POINTS,
        &[],
    )
    .1)
}

/// Largest step size for which the contraction/expansion split of the
/// `gamma_k` is guaranteed:
/// `min{log 2 / max f, min_{t > tau} (g^2 K / 4) / (g^4 L^2 / 8 + L1 g^2 / 2)}`,
/// the inner minimum over a uniform grid on `(tau, T]`.
pub fn h_bar(profile: &ConcavityProfile, l1: f64, t_end: f64) -> Result<f64> {
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(Error::Domain(format!("T must be positive, got {t_end}")));
    }
    let s = &profile.schedule;
    let n = SUP_GRID_POINTS;
    let max_f = (0..n)
        .map(|i| s.f(t_end * i as f64 / (n - 1) as f64))
        .chain(std::iter::once(s.f(t_end)))
        .fold(0.0, f64::max);
    let first = if max_f > 0.0 {
        std::f64::consts::LN_2 / max_f
    } else {
        f64::INFINITY
    };
    let tau = profile.regime_shift()?;
    let mut second = f64::INFINITY;
    if tau < t_end {
        for j in 1..=n {
            let t = if j == n { t_end } else { tau + (t_end - tau) * j as f64 / n as f64 };
            let g2 = s.g2(t);
            let l = profile.lipschitz_unchecked(t);
            let ratio = 0.25 * g2 * profile.k_unchecked(t) / (0.125 * g2 * g2 * l * l + 0.5 * l1 * g2);
            if ratio.is_finite() {
                second = second.min(ratio);
            }
        }
    }
    Ok(first.min(second))
}

/// Evaluates the full bound `E0 + E1 + E2`.
pub fn eval_bound(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let profile = inputs.profile()?;
    let c = &inputs.constants;
    let (t_end, k_steps, h) = (inputs.t_end, inputs.k_steps, inputs.step_size());
    let s = &inputs.schedule;

    let tau = profile.regime_shift()?;
    let big_c = profile.big_c()?;
    let xi_tau = profile.xi(tau)?;
    let eta_t = profile.eta(t_end)?;
    let l_upper = profile.l_upper_bound(t_end)?;
    let theta = theta_t(&profile, t_end, c.x0_norm)?;
    let omega = omega_t(s, t_end, c.x0_norm, c.dim)?;
    let h_bar = h_bar(&profile, c.l1, t_end)?;

    let abs_k = profile.int_g2_abs_k(0.0, t_end)?.value;
    let log_e0 = big_c.log - 0.5 * abs_k + c.x0_norm.ln();
    let e0 = log_e0.exp();

    let steps = all_step_terms(inputs)?;
    if let Some((j, st)) = steps.iter().enumerate().find(|(_, st)| !(st.gamma > 0.0)) {
        return Err(Error::NonPositiveGamma {
            step: j + 1,
            value: st.gamma,
        });
    }
    // log_tail[k-1] = sum_{j > k} log gamma_j.
    let mut log_tail = vec![0.0; k_steps];
    for k in (0..k_steps.saturating_sub(1)).rev() {
        log_tail[k] = log_tail[k + 1] + steps[k + 1].gamma.ln();
    }
    let shift = c.l1 * (t_end + h) + c.score_at_origin;
    let (mut e1, mut e2) = (0.0, 0.0);
    for (k, st) in steps.iter().enumerate() {
        let nu = (theta + omega) * st.drift_lipschitz + shift * 0.5 * st.int_g2;
        let disc = 0.5 * c.l1 * h * (1.0 + theta + omega) * st.weight + 0.5 * h.sqrt() * nu * st.j.sqrt();
        let factor = (log_tail[k] + st.log_growth).exp();
        e1 += factor * disc;
        e2 += factor * 0.5 * c.score_err * st.weight;
    }

    Ok(BoundReport {
        t_end,
        k_steps,
        h,
        tau,
        big_c: big_c.value,
        log_big_c: big_c.log,
        xi_tau,
        eta_t,
        theta_t: theta,
        omega_t: omega,
        l_upper,
        h_bar,
        e0,
        log_e0,
        e1,
        e2,
        total: e0 + e1 + e2,
        gammas: steps.iter().map(|s| s.gamma).collect(),
    })
}

/// Closed-form rate for the OU schedule, up to the constant `c`:
/// `c (e^{-T} x0 + e^{T h} T h (x0 + sqrt(d) + T) + e^{T h} T E)`.
pub fn ou_closed_form(t_end: f64, h: f64, x0_norm: f64, dim: usize, score_err: f64, c: f64) -> f64 {
    let grow = (t_end * h).exp();
    c * ((-t_end).exp() * x0_norm
        + grow * t_end * h * (x0_norm + (dim as f64).sqrt() + t_end)
        + grow * t_end * score_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::Family;
    use crate::target::ConstantProvenance;

    pub(crate) fn constants(alpha0: f64, m0: f64, l0: f64, l1: f64, x0: f64, d: usize) -> TargetConstants {
        TargetConstants {
            alpha0,
            m0,
            l0,
            l1,
            score_err: 0.0,
            x0_norm: x0,
            score_at_origin: 0.0,
            dim: d,
            provenance: ConstantProvenance::default(),
        }
    }

    #[test]
    fn standard_normal_initialisation_term() {
        // K = 1 everywhere, so E0 = exp(-T) sqrt(d).
        let b = BoundInputs::new(Schedule::ou(), constants(1.0, 0.0, 1.0, 0.0, 2.0, 4), 3.0, 30).unwrap();
        let r = eval_bound(&b).unwrap();
        assert!((r.e0 - 2.0 * (-3.0f64).exp()).abs() < 1e-12);
        assert_eq!(r.big_c, 1.0);
        assert_eq!(r.tau, 0.0);
        assert!((r.theta_t - 2.0 * (-3.0f64).exp()).abs() < 1e-12);
        assert_eq!(r.e2, 0.0);
        assert!(r.total > r.e0);
    }

    #[test]
    fn ou_gamma_matches_direct_formula_for_standard_normal() {
        // K = 1, L(u) = min{1 / (1 - e^{-2u}), e^{2u}}, L1 = 0, g^2 = 2:
        // gamma = 1 - int [e^{-(hi - u)} - h L^2 / 2] du.
        let b = BoundInputs::new(Schedule::ou(), constants(1.0, 0.0, 1.0, 0.0, 1.0, 1), 2.0, 20).unwrap();
        let g = gamma_k(&b).unwrap();
        let h: f64 = 0.1;
        let (lo, hi) = b.step_interval(7);
        let l2 = |u: f64| {
            let l = (1.0 / (1.0 - (-2.0 * u).exp())).min((2.0 * u).exp());
            l * l
        };
        let q = integrate(|u| (-(hi - u)).exp() - 0.5 * h * l2(u), lo, hi, &QuadratureSettings::default())
            .unwrap()
            .value;
        assert!((g[6] - (1.0 - q)).abs() < 1e-13);
    }

    #[test]
    fn gamma_regime_classes() {
        let r = gamma_regimes(0.25, 0.1, 10);
        // K - tau / h = 7.5: steps 1..=7 contract, 8 straddles, 9..=10 expand.
        assert_eq!(r[6], GammaRegime::Contracting);
        assert_eq!(r[7], GammaRegime::Boundary);
        assert_eq!(r[8], GammaRegime::Expanding);
        let r = gamma_regimes(0.3, 0.1, 10);
        assert!(!r.contains(&GammaRegime::Boundary));
    }

    #[test]
    fn non_positive_gamma_names_its_step() {
        // With g^2 = 1 and alpha0 large, half the log growth of D over one
        // unit step exceeds one.
        let ve = Schedule::new(Family::VeExp { a: 1.0, b: 0.0 }).unwrap();
        let b = BoundInputs::new(ve, constants(1000.0, 0.0, 0.01, 0.0, 1.0, 1), 1.0, 1).unwrap();
        match eval_bound(&b) {
            Err(Error::NonPositiveGamma { step, value }) => {
                assert_eq!(step, 1);
                assert!((value - (1.0 - 0.5 * 1001f64.ln() + 0.125e-4)).abs() < 1e-9);
            }
            other => panic!("expected NonPositiveGamma, got {other:?}"),
        }
    }

    #[test]
    fn h_bar_example_scale() {
        let p = ConcavityProfile::new(Schedule::ou(), 1.0, 0.0, 1.0).unwrap();
        let hb = h_bar(&p, 0.0, 5.0).unwrap();
        // log 2 / max f = log 2; the ratio term is K / (2 L^2) <= 1/2.
        assert!(hb > 0.0 && hb <= std::f64::consts::LN_2);
        let ve = Schedule::new(Family::VeExp { a: 1.0, b: 0.2 }).unwrap();
        let p = ConcavityProfile::new(ve, 2.0, 0.0, 1.0).unwrap();
        assert!(h_bar(&p, 0.1, 5.0).unwrap().is_finite());
    }

    #[test]
    fn omega_is_monotone_for_ou() {
        let s = Schedule::ou();
        let w = omega_t(&s, 4.0, 3.0, 2).unwrap();
        let ends = omega_at(&s, 0.0, 3.0, 2).unwrap().max(omega_at(&s, 4.0, 3.0, 2).unwrap());
        assert!((w - ends).abs() < 1e-12);
    }

    #[test]
    fn closed_form_ou_rate() {
        let v = ou_closed_form(2.0, 0.1, 1.0, 4, 0.0, 1.0);
        let expect = (-2.0f64).exp() + 0.2f64.exp() * 0.2 * (1.0 + 2.0 + 2.0);
        assert!((v - expect).abs() < 1e-14);
    }
}

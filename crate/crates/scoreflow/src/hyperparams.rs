//! Planning the horizon `T`, step size `h` and score budget `E` for a target
//! accuracy `eps`.
//!
//! The per-family rates are big-O statements. A single multiplicative
//! `constant_c` scales all three formulas and is reported with every plan;
//! [`calibrate_constant`] fits it on the standard-Gaussian OU benchmark.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::bounds::{eval_bound, BoundInputs, BoundReport};
use crate::error::{invalid, Result};
use crate::metrics::w2_coupling_upper;
use crate::sampler::{initial_samples, run_from, SamplerConfig};
use crate::schedule::{Family, Schedule};
use crate::target::{GaussianMixture, TargetConstants};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub family: Family,
    pub epsilon: f64,
    pub dim: usize,
    /// `sqrt(d)`, or the declared `||X0||` when it replaces `sqrt(d)`.
    pub scale: f64,
    pub constant_c: f64,
    pub t_end: f64,
    /// Step size after adjusting to `T / K`.
    pub h: f64,
    /// Step size straight from the formula, before adjustment.
    pub h_formula: f64,
    pub k_steps: usize,
    pub score_budget: f64,
}

/// Plans `(T, h, K, E)` for accuracy `epsilon`.
///
/// `x0_norm`, when given, replaces `sqrt(d)` in every formula.
pub fn plan(family: Family, epsilon: f64, dim: usize, x0_norm: Option<f64>, constant_c: f64) -> Result<Plan> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(invalid(format!("epsilon must be in (0,1), got {epsilon}")));
    }
    if dim == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    if !(constant_c.is_finite() && constant_c > 0.0) {
        return Err(invalid(format!("constant_c must be positive, got {constant_c}")));
    }
    let scale = match x0_norm {
        Some(x) if !(x.is_finite() && x > 0.0) => {
            return Err(invalid(format!("x0_norm must be positive, got {x}")))
        }
        Some(x) => x,
        None => (dim as f64).sqrt(),
    };
    let log_ratio = (scale / epsilon).ln();
    if !(log_ratio > 0.0) {
        return Err(invalid(format!(
            "epsilon = {epsilon} must be below the scale {scale} of the data"
        )));
    }
    let ve_h = epsilon.powi(3) / scale.powi(3);
    let ve_e = epsilon * epsilon / scale;
    let vp_h = epsilon / (scale * log_ratio);
    let vp_e = epsilon / log_ratio;
    let (t, h, e) = match family {
        Family::VeExp { .. } => (log_ratio, ve_h, ve_e),
        Family::VePoly { c, .. } => ((scale * scale / (epsilon * epsilon)).powf(1.0 / (2.0 * c + 1.0)), ve_h, ve_e),
        Family::Ou | Family::VpConst { .. } => (log_ratio, vp_h, vp_e),
        Family::VpLinear { .. } => (log_ratio.sqrt(), vp_h, vp_e),
        Family::VpPoly { rho, .. } => (log_ratio.powf(1.0 / (rho + 1.0)), vp_h, vp_e),
    };
    let (t_end, h_formula, score_budget) = (constant_c * t, constant_c * h, constant_c * e);
    let k_steps = (t_end / h_formula).ceil().max(1.0) as usize;
    Ok(Plan {
        family,
        epsilon,
        dim,
        scale,
        constant_c,
        t_end,
        h: t_end / k_steps as f64,
        h_formula,
        k_steps,
        score_budget,
    })
}

impl Plan {
    /// The same plan with the step size multiplied by `factor` and `T` kept.
    pub fn with_step_scale(&self, factor: f64) -> Result<Plan> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(invalid(format!("step scale must be positive, got {factor}")));
        }
        let h_formula = self.h_formula * factor;
        let k_steps = (self.t_end / h_formula).ceil().max(1.0) as usize;
        Ok(Plan {
            h_formula,
            k_steps,
            h: self.t_end / k_steps as f64,
            ..self.clone()
        })
    }
}

/// Evaluates the bound at the planned `(T, K)` with score error `E` set to
/// the plan's budget.
pub fn certify(plan: &Plan, schedule: &Schedule, constants: &TargetConstants) -> Result<BoundReport> {
    if schedule.family() != plan.family {
        return Err(invalid("plan and schedule families differ"));
    }
    let constants = TargetConstants {
        score_err: plan.score_budget,
        ..constants.clone()
    };
    eval_bound(&BoundInputs::new(*schedule, constants, plan.t_end, plan.k_steps)?)
}

/// Step-size scales for the probability-flow ODE, `1 / (sqrt(d) T^{rho+1})`,
/// and for the reverse SDE, `e^{-T^{rho+1}} / sqrt(d)`, with unit constants.
pub fn step_size_comparison(rho: f64, t_end: f64, dim: usize) -> (f64, f64) {
    let p = t_end.powf(rho + 1.0);
    let sd = (dim as f64).sqrt();
    (1.0 / (sd * p), (-p).exp() / sd)
}

/// Sampler error at a plan on `N(0, I_d)` under OU with the exact score.
///
/// Initial draws `Z0 ~ N(0, c1(T) I)` are paired with `Z0 / sqrt(c1(T))`,
/// which is exactly `N(0, I)`, so the result is the cost of a coupling and
/// hence an upper bound on W2 up to Monte-Carlo error.
pub fn gaussian_benchmark_w2(plan: &Plan, n: usize, seed: u64) -> Result<f64> {
    let target = GaussianMixture::standard_normal(plan.dim)?;
    let config = SamplerConfig::new(Schedule::ou(), target, plan.t_end, plan.k_steps)?.with_seed(seed);
    let z0 = initial_samples(&config, n)?;
    let sd = Schedule::ou().c1(plan.t_end)?.sqrt();
    let reference: Array2<f64> = z0.mapv(|v| v / sd);
    let out = run_from(&config, z0)?;
    w2_coupling_upper(out.view(), reference.view())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub constant_c: f64,
    pub dim: usize,
    /// `(epsilon, measured W2)` at the fitted constant.
    pub measured: Vec<(f64, f64)>,
    /// Whether every measured W2 lies in `[eps / 2, eps]`.
    pub within_factor_two: bool,
}

/// Fraction of `eps` the calibration aims for, leaving room for Monte-Carlo
/// error when the plan is checked on fresh draws.
pub const CALIBRATION_HEADROOM: f64 = 0.9;

/// Fits `constant_c` on the standard-Gaussian OU benchmark in dimension
/// `dim`: the smallest constant (to `1e-3`) for which the measured W2 at
/// `plan(eps)` is at most `CALIBRATION_HEADROOM * eps` for every `eps` in
/// `epsilons`.
pub fn calibrate_constant(epsilons: &[f64], dim: usize, n: usize, seed: u64) -> Result<Calibration> {
    if epsilons.is_empty() {
        return Err(invalid("need at least one epsilon"));
    }
    let measure = |eps: f64, c: f64| -> Result<f64> {
        gaussian_benchmark_w2(&plan(Family::Ou, eps, dim, None, c)?, n, seed)
    };
    let mut constant_c: f64 = 0.0;
    for &eps in epsilons {
        let (mut lo, mut hi) = (0.01, 4.0);
        let goal = CALIBRATION_HEADROOM * eps;
        if measure(eps, hi)? > goal {
            return Err(invalid(format!("no constant up to {hi} reaches epsilon = {eps}")));
        }
        while hi - lo > 1e-3 {
            let mid = 0.5 * (lo + hi);
            if measure(eps, mid)? <= goal {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        constant_c = constant_c.max(hi);
    }
    let measured = epsilons
        .iter()
        .map(|&eps| Ok((eps, measure(eps, constant_c)?)))
        .collect::<Result<Vec<_>>>()?;
    let within_factor_two = measured.iter().all(|&(e, w)| w <= e && w >= 0.5 * e);
    Ok(Calibration {
        constant_c,
        dim,
        measured,
        within_factor_two,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ou_example_plan() {
        let p = plan(Family::Ou, 0.1, 4, None, 1.0).unwrap();
        let l = 20f64.ln();
        assert!((p.t_end - l).abs() < 1e-15);
        assert!((p.h_formula - 0.1 / (2.0 * l)).abs() < 1e-15);
        assert!((p.score_budget - 0.1 / l).abs() < 1e-15);
        assert_eq!(p.k_steps, (l / (0.1 / (2.0 * l))).ceil() as usize);
        assert!((p.h * p.k_steps as f64 - p.t_end).abs() < 1e-12);
    }

    #[test]
    fn ve_exp_example_step() {
        let p = plan(Family::VeExp { a: 1.0, b: 1.0 }, 0.1, 4, None, 1.0).unwrap();
        assert!((p.h_formula - 1.25e-4).abs() < 1e-18);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(plan(Family::Ou, 0.1, 4, None, 0.0).is_err());
        assert!(plan(Family::Ou, 1.5, 4, None, 1.0).is_err());
        assert!(plan(Family::Ou, 0.1, 0, None, 1.0).is_err());
    }

    #[test]
    fn x0_norm_replaces_sqrt_d() {
        let a = plan(Family::Ou, 0.1, 4, Some(2.0), 1.0).unwrap();
        let b = plan(Family::Ou, 0.1, 4, None, 1.0).unwrap();
        assert_eq!(a.t_end, b.t_end);
        let c = plan(Family::Ou, 0.1, 4, Some(3.0), 1.0).unwrap();
        assert!((c.t_end - 30f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn step_size_comparison_examples() {
        let (ode, sde) = step_size_comparison(0.0, 5.0, 4);
        assert!((ode - 0.1).abs() < 1e-15);
        assert!((sde - (-5.0f64).exp() / 2.0).abs() < 1e-15);
        let (ode, _) = step_size_comparison(1.0, 3.0, 4);
        assert!((ode - 1.0 / 18.0).abs() < 1e-15);
    }

    #[test]
    fn halving_epsilon_on_vp_rows() {
        let fam = Family::VpLinear { a: 1.0, b: 0.5 };
        let a = plan(fam, 0.2, 9, None, 1.0).unwrap();
        let b = plan(fam, 0.1, 9, None, 1.0).unwrap();
        let la = (3.0f64 / 0.2).ln();
        let lb = (3.0f64 / 0.1).ln();
        assert!((b.t_end / a.t_end - (lb / la).sqrt()).abs() < 1e-12);
        assert!((a.h_formula / b.h_formula - 2.0 * lb / la).abs() < 1e-12);
    }

    fn families() -> impl Strategy<Value = Family> {
        prop_oneof![
            Just(Family::Ou),
            Just(Family::VeExp { a: 1.0, b: 1.0 }),
            (0.0..3.0f64).prop_map(|c| Family::VePoly { a: 1.0, b: 1.0, c }),
            Just(Family::VpConst { b: 1.0 }),
            Just(Family::VpLinear { a: 1.0, b: 0.5 }),
            (0.0..3.0f64).prop_map(|rho| Family::VpPoly { a: 1.0, b: 0.5, rho }),
        ]
    }

    proptest! {
        #[test]
        fn h_and_budget_shrink_with_accuracy_and_dimension(
            fam in families(), eps in 0.01..0.5f64, d in 1usize..50, c in 0.1..3.0f64
        ) {
            let p = plan(fam, eps, d, None, c).unwrap();
            let finer = plan(fam, eps * 0.9, d, None, c).unwrap();
            let wider = plan(fam, eps, d + 1, None, c).unwrap();
            prop_assert!(finer.h_formula < p.h_formula && finer.score_budget < p.score_budget);
            prop_assert!(wider.h_formula < p.h_formula && wider.score_budget < p.score_budget);
        }

        #[test]
        fn plan_round_trip(fam in families(), eps in 0.01..0.9f64, d in 1usize..50, c in 0.1..3.0f64) {
            let p = plan(fam, eps, d, None, c).unwrap();
            prop_assert_eq!(p.k_steps, (p.t_end / p.h_formula).ceil() as usize);
            prop_assert!((p.h * p.k_steps as f64 - p.t_end).abs() <= 1e-12 * p.t_end);
            prop_assert!(p.h <= p.h_formula * (1.0 + 1e-12) && p.h > 0.0);
        }
    }
}

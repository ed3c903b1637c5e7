//! How weak log-concavity of `p_0` propagates to `p_t` along the forward
//! flow.
//!
//! With `I(t) = c0(t)^2 c1(t)` and `D(t) = 1 + alpha0 I(t)`, the marginal
//! `p_t` is `(alpha(t), M(t))`-weakly log-concave with
//! `alpha = alpha0 c0^2 / D` and `M = M0 c0^2 / D^2`. Since `D` grows, the
//! sign of `K = alpha - M` changes at most once, at the regime-shift time
//! `tau` where `alpha0 D(tau) = M0`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::{bisect, grid_sup, increasing_root, integrate_with_breaks, Quadrature};
use crate::schedule::Schedule;
use crate::target::TargetConstants;

/// Nodes of the uniform grid used for suprema over time.
pub const SUP_GRID_POINTS: usize = 4096;
/// Bisection tolerance for the regime-shift time.
pub const TAU_TOLERANCE: f64 = 1e-10;

/// A schedule together with the weak-concavity and Lipschitz constants of
/// `p_0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcavityProfile {
    pub schedule: Schedule,
    pub alpha0: f64,
    pub m0: f64,
    pub l0: f64,
}

/// The constant `C` multiplying the initialisation error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BigC {
    pub value: f64,
    pub log: f64,
}

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Domain(format!("time must be finite and >= 0, got {t}")));
    }
    Ok(())
}

impl ConcavityProfile {
    pub fn new(schedule: Schedule, alpha0: f64, m0: f64, l0: f64) -> Result<Self> {
        if !(alpha0.is_finite() && alpha0 > 0.0) {
            return Err(invalid(format!("alpha0 must be positive, got {alpha0}")));
        }
        if !(m0.is_finite() && m0 >= 0.0) {
            return Err(invalid(format!("M0 must be nonnegative, got {m0}")));
        }
        if !(l0.is_finite() && l0 > 0.0) {
            return Err(invalid(format!("L0 must be positive, got {l0}")));
        }
        Ok(Self {
            schedule,
            alpha0,
            m0,
            l0,
        })
    }

    pub fn from_constants(schedule: Schedule, c: &TargetConstants) -> Result<Self> {
        Self::new(schedule, c.alpha0, c.m0, c.l0)
    }

    /// `(c0^{-2}, alpha0 c1)`, the two pieces of `D / c0^2`.
    fn parts(&self, t: f64) -> (f64, f64) {
        (self.schedule.inv_c0_sq(t), self.alpha0 * self.schedule.c1_unchecked(t))
    }

    pub(crate) fn alpha_unchecked(&self, t: f64) -> f64 {
        let (e, ac1) = self.parts(t);
        self.alpha0 / (e + ac1)
    }

    pub(crate) fn m_unchecked(&self, t: f64) -> f64 {
        let (e, ac1) = self.parts(t);
        let den = e + ac1;
        self.m0 * e / (den * den)
    }

    pub(crate) fn k_unchecked(&self, t: f64) -> f64 {
        let (e, ac1) = self.parts(t);
        let den = e + ac1;
        (self.alpha0 * den - self.m0 * e) / (den * den)
    }

    pub(crate) fn lipschitz_unchecked(&self, t: f64) -> f64 {
        let inv_c1 = if t == 0.0 {
            f64::INFINITY
        } else {
            1.0 / self.schedule.c1_unchecked(t)
        };
        let growth = self.l0 / self.schedule.inv_c0_sq(t);
        inv_c1.min(growth).max(-self.k_unchecked(t))
    }

    /// `alpha(t)`.
    pub fn alpha_t(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.alpha_unchecked(t))
    }

    /// `M(t)`.
    pub fn m_t(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.m_unchecked(t))
    }

    /// `K(t) = alpha(t) - M(t)`.
    pub fn k_t(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.k_unchecked(t))
    }

    /// `L(t) = max{min{1 / c1(t), c0(t)^2 L0}, -K(t)}`, with `1 / c1(0) = +inf`.
    pub fn lipschitz_t(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.lipschitz_unchecked(t))
    }

    /// `-|alpha0 - M0| min{c0^2, c0^2 / (alpha0 I)^2}`, a lower bound on `K`.
    pub fn k_lower_bound(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        let c0sq = 1.0 / self.schedule.inv_c0_sq(t);
        let c1 = self.schedule.c1_unchecked(t);
        let far = 1.0 / (self.alpha0 * self.alpha0 * c0sq * c1 * c1);
        Ok(-(self.alpha0 - self.m0).abs() * c0sq.min(far))
    }

    fn tau_threshold(&self) -> Option<f64> {
        let q = (self.m0 - self.alpha0) / (self.alpha0 * self.alpha0);
        (q > 0.0).then_some(q)
    }

    /// Regime-shift time `tau`: zero when `alpha0 >= M0`, otherwise the root
    /// of `I(tau) = (M0 - alpha0) / alpha0^2`, in closed form.
    pub fn regime_shift(&self) -> Result<f64> {
        match self.tau_threshold() {
            None => Ok(0.0),
            Some(q) => self.schedule.noise_integral_inverse(q),
        }
    }

    /// `tau` by bisection on `I`, with a doubling bracket.
    pub fn regime_shift_bisection(&self) -> Result<f64> {
        match self.tau_threshold() {
            None => Ok(0.0),
            Some(q) => increasing_root(|t| self.schedule.noise_integral_unchecked(t) - q, TAU_TOLERANCE),
        }
    }

    /// `|alpha0 - M0| / min(alpha0^2, 1)`.
    pub fn amplification(&self) -> f64 {
        (self.alpha0 - self.m0).abs() / (self.alpha0 * self.alpha0).min(1.0)
    }

    /// Time at which `I(t) = 1`: where both branches in `xi` and `eta` meet.
    fn unit_noise_time(&self) -> Option<f64> {
        self.schedule.noise_integral_inverse(1.0).ok()
    }

    fn xi_point(&self, t: f64) -> f64 {
        let c0sq = 1.0 / self.schedule.inv_c0_sq(t);
        let c1 = self.schedule.c1_unchecked(t);
        c0sq.min(1.0 / (c0sq * c1 * c1))
    }

    fn eta_point(&self, t: f64) -> f64 {
        let c0sq = 1.0 / self.schedule.inv_c0_sq(t);
        let c1 = self.schedule.c1_unchecked(t);
        c0sq.min(1.0 / c1)
    }

    /// `xi(T) = sup_{t <= T} min{c0^2, c0^2 / I^2}`.
    pub fn xi(&self, t_end: f64) -> Result<f64> {
        check_time(t_end)?;
        let extra: Vec<f64> = self.unit_noise_time().into_iter().collect();
        Ok(grid_sup(|t| self.xi_point(t), 0.0, t_end, SUP_GRID_POINTS, &extra).1)
    }

    /// `eta(T) = sup_{t <= T} min{c0^2, 1 / c1}`.
    pub fn eta(&self, t_end: f64) -> Result<f64> {
        check_time(t_end)?;
        let extra: Vec<f64> = self.unit_noise_time().into_iter().collect();
        Ok(grid_sup(|t| self.eta_point(t), 0.0, t_end, SUP_GRID_POINTS, &extra).1)
    }

    /// Upper bound on `L(t)` over `[0, T]`.
    pub fn l_upper_bound(&self, t_end: f64) -> Result<f64> {
        Ok(self.l0.max(1.0).max(self.amplification()) * self.eta(t_end)?)
    }

    /// `C = exp(|alpha0 - M0| / min(alpha0^2, 1) xi(tau) int_0^tau g^2)`.
    pub fn big_c(&self) -> Result<BigC> {
        let tau = self.regime_shift()?;
        if tau == 0.0 {
            return Ok(BigC { value: 1.0, log: 0.0 });
        }
        let log = self.amplification() * self.xi(tau)? * self.schedule.int_g2(0.0, tau)?;
        Ok(BigC {
            value: log.exp(),
            log,
        })
    }

    /// Times in `(0, t_end)` where `L` switches branch.
    pub fn lipschitz_kinks(&self, t_end: f64) -> Result<Vec<f64>> {
        check_time(t_end)?;
        let mut kinks = Vec::new();
        if let Ok(t) = self.schedule.noise_integral_inverse(1.0 / self.l0) {
            if t > 0.0 && t < t_end {
                kinks.push(t);
            }
        }
        // -K can exceed the other branch only where K < 0, i.e. before tau.
        let tau = self.regime_shift()?.min(t_end);
        if tau > 0.0 {
            let gap = |t: f64| {
                let inv_c1 = if t == 0.0 {
                    f64::INFINITY
                } else {
                    1.0 / self.schedule.c1_unchecked(t)
                };
                -self.k_unchecked(t) - inv_c1.min(self.l0 / self.schedule.inv_c0_sq(t))
            };
            let n = 512;
            let mut prev = (0.0, gap(0.0));
            for i in 1..=n {
                let t = tau * i as f64 / n as f64;
                let v = gap(t);
                if prev.1.signum() != v.signum() && prev.1 != 0.0 && v != 0.0 {
                    kinks.push(bisect(gap, prev.0, t, 0.0)?);
                }
                prev = (t, v);
            }
        }
        kinks.sort_by(f64::total_cmp);
        Ok(kinks)
    }

    /// `int_a^b g^2 K` by quadrature.
    pub fn int_g2_k(&self, a: f64, b: f64) -> Result<Quadrature> {
        check_time(a)?;
        check_time(b)?;
        integrate_with_breaks(
            |t| self.schedule.g2(t) * self.k_unchecked(t),
            a,
            b,
            &[],
            self.schedule.quadrature(),
        )
    }

    /// `int_a^b g^2 |K|` by quadrature, split at `tau`.
    pub fn int_g2_abs_k(&self, a: f64, b: f64) -> Result<Quadrature> {
        check_time(a)?;
        check_time(b)?;
        let tau = self.regime_shift()?;
        integrate_with_breaks(
            |t| self.schedule.g2(t) * self.k_unchecked(t).abs(),
            a,
            b,
            &[tau],
            self.schedule.quadrature(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::Family;
    use proptest::prelude::*;

    fn ou(alpha0: f64, m0: f64, l0: f64) -> ConcavityProfile {
        ConcavityProfile::new(Schedule::ou(), alpha0, m0, l0).unwrap()
    }

    #[test]
    fn ou_big_c_example() {
        let p = ou(1.0, 2.0, 1.0);
        assert!((p.regime_shift().unwrap() - 0.5 * 2f64.ln()).abs() < 1e-15);
        assert!((p.xi(p.regime_shift().unwrap()).unwrap() - 2.0).abs() < 1e-12);
        assert!((p.big_c().unwrap().value - 4.0).abs() < 1e-10);
    }

    #[test]
    fn strongly_log_concave_needs_no_regime_shift() {
        let p = ou(2.0, 0.5, 3.0);
        assert_eq!(p.regime_shift().unwrap(), 0.0);
        assert_eq!(p.big_c().unwrap().value, 1.0);
        let p = ou(1.0, 1.0, 1.0);
        assert_eq!(p.regime_shift().unwrap(), 0.0);
    }

    #[test]
    fn vp_closed_form_for_k() {
        let s = Schedule::new(Family::VpLinear { a: 2.0, b: 0.3 }).unwrap();
        let (a0, m0) = (0.4, 3.0);
        let p = ConcavityProfile::new(s, a0, m0, 2.0).unwrap();
        for &t in &[0.0, 0.1, 0.7, 2.0] {
            let eb = s.big_b(t).unwrap().exp();
            let den = 1.0 + a0 * (eb - 1.0);
            let k = a0 * eb / den - m0 * eb / (den * den);
            assert!((p.k_t(t).unwrap() - k).abs() < 1e-12 * (1.0 + k.abs()));
        }
        let tau = p.regime_shift().unwrap();
        let closed_b = ((a0 * a0 + m0 - a0) / (a0 * a0)).ln();
        assert!((s.big_b(tau).unwrap() - closed_b).abs() < 1e-12);
    }

    #[test]
    fn lipschitz_at_zero_is_l0_or_minus_k() {
        let p = ou(1.0, 5.0, 2.0);
        assert_eq!(p.lipschitz_t(0.0).unwrap(), 4.0);
        let p = ou(1.0, 2.0, 7.0);
        assert_eq!(p.lipschitz_t(0.0).unwrap(), 7.0);
        assert!(p.lipschitz_t(-1.0).is_err());
    }

    #[test]
    fn integral_of_g2_k_matches_antiderivative() {
        // g^2 K = D'/D - (M0 / alpha0) D'/D^2 with D = 1 + alpha0 I.
        let s = Schedule::new(Family::VeExp { a: 0.8, b: 0.6 }).unwrap();
        let (a0, m0) = (0.5, 4.0);
        let p = ConcavityProfile::new(s, a0, m0, 1.0).unwrap();
        let d = |t: f64| 1.0 + a0 * s.noise_integral(t).unwrap();
        let exact = |a: f64, b: f64| (d(b) / d(a)).ln() - (m0 / a0) * (1.0 / d(a) - 1.0 / d(b));
        let q = p.int_g2_k(0.2, 3.0).unwrap().value;
        assert!((q - exact(0.2, 3.0)).abs() < 1e-10 * exact(0.2, 3.0).abs().max(1.0));
        let tau = p.regime_shift().unwrap();
        let abs_exact = -exact(0.0, tau) + exact(tau, 3.0);
        assert!((p.int_g2_abs_k(0.0, 3.0).unwrap().value - abs_exact).abs() < 1e-9);
    }

    #[test]
    fn every_slope_change_is_a_listed_kink() {
        for p in [ou(0.5, 6.0, 3.0), ou(1.0, 1.5, 3.0), ou(0.2, 1.0, 0.5)] {
            let kinks = p.lipschitz_kinks(5.0).unwrap();
            let l = |t: f64| p.lipschitz_t(t).unwrap();
            let n = 20_000;
            let dt = 5.0 / n as f64;
            for i in 2..n - 1 {
                let t = i as f64 * dt;
                let curv = (l(t + dt) - 2.0 * l(t) + l(t - dt)) / (dt * dt);
                let smooth = (l(t + 2.0 * dt) - 2.0 * l(t + dt) + l(t)) / (dt * dt);
                if (curv - smooth).abs() > 1e3 {
                    assert!(
                        kinks.iter().any(|&k| (k - t).abs() < 3.0 * dt),
                        "unlisted kink near {t}: {kinks:?}"
                    );
                }
            }
        }
    }

    fn any_schedule() -> impl Strategy<Value = Schedule> {
        prop_oneof![
            Just(Family::Ou),
            (0.2..2.0f64, 0.0..1.5f64).prop_map(|(a, b)| Family::VeExp { a, b }),
            (0.2..2.0f64, 0.1..1.0f64, 0.0..2.0f64).prop_map(|(a, b, c)| Family::VePoly { a, b, c }),
            (0.1..4.0f64).prop_map(|b| Family::VpConst { b }),
            (0.0..3.0f64, 0.1..2.0f64).prop_map(|(a, b)| Family::VpLinear { a, b }),
            (0.1..2.0f64, 0.1..1.0f64, 0.0..3.0f64).prop_map(|(a, b, rho)| Family::VpPoly { a, b, rho }),
        ]
        .prop_map(|f| Schedule::new(f).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn k_sign_changes_once_at_tau(s in any_schedule(), a0 in 0.05..3.0f64, m0 in 0.0..20.0f64, t in 0.0..6.0f64) {
            let p = ConcavityProfile::new(s, a0, m0, 1.0).unwrap();
            let tau = p.regime_shift().unwrap();
            let k = p.k_t(t).unwrap();
            if t < tau * (1.0 - 1e-9) {
                prop_assert!(k < 0.0);
            } else if t > tau * (1.0 + 1e-9) + 1e-12 {
                prop_assert!(k > 0.0 || (k == 0.0 && a0 == m0));
            }
        }

        #[test]
        fn k_dominates_its_lower_bound(s in any_schedule(), a0 in 0.05..3.0f64, m0 in 0.0..20.0f64, t in 0.0..6.0f64) {
            let p = ConcavityProfile::new(s, a0, m0, 1.0).unwrap();
            prop_assert!(p.k_t(t).unwrap() >= p.k_lower_bound(t).unwrap());
        }

        #[test]
        fn xi_never_exceeds_eta(s in any_schedule(), a0 in 0.05..3.0f64, m0 in 0.0..20.0f64, t_end in 0.01..8.0f64) {
            let p = ConcavityProfile::new(s, a0, m0, 1.0).unwrap();
            // Both suprema sit at I = 1 where the two expressions agree.
            prop_assert!(p.xi(t_end).unwrap() <= p.eta(t_end).unwrap() * (1.0 + 1e-12));
        }

        #[test]
        fn lipschitz_below_upper_bound(s in any_schedule(), a0 in 0.05..3.0f64, m0 in 0.0..20.0f64, l0 in 0.1..50.0f64, frac in 0.0..1.0f64) {
            let p = ConcavityProfile::new(s, a0, m0, l0).unwrap();
            let t_end = 5.0;
            prop_assert!(p.lipschitz_t(frac * t_end).unwrap() <= p.l_upper_bound(t_end).unwrap());
        }

        #[test]
        fn tau_closed_form_matches_bisection(s in any_schedule(), a0 in 0.05..3.0f64, m0 in 0.0..20.0f64) {
            let p = ConcavityProfile::new(s, a0, m0, 1.0).unwrap();
            let closed = p.regime_shift().unwrap();
            let bis = p.regime_shift_bisection().unwrap();
            prop_assert!((closed - bis).abs() <= 1e-8);
        }
    }
}

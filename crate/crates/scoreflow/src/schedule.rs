//! Forward noise schedules `dX = -f(t) X dt + g(t) dB`.
//!
//! Every family has closed forms for the drift integral, the variance
//! coefficient `c1`, and the per-step integrator weight. The `*_quadrature`
//! variants evaluate the defining integrals numerically and exist to
//! cross-check the closed forms.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::{integrate, Quadrature, QuadratureSettings};

/// Horizon over which construction checks `f >= 0` and `g > 0`.
const VALIDATION_HORIZON: f64 = 50.0;
const VALIDATION_POINTS: usize = 1001;

/// Schedule family and its parameters.
///
/// VP families are parametrised by `beta`, with `f = beta / 2` and
/// `g = sqrt(beta)`; OU is the VP family with `beta = 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Ou,
    /// `g = a exp(b t)`, `f = 0`.
    VeExp { a: f64, b: f64 },
    /// `g = (b + a t)^c`, `f = 0`.
    VePoly { a: f64, b: f64, c: f64 },
    /// `beta = b`.
    VpConst { b: f64 },
    /// `beta = b + a t`.
    VpLinear { a: f64, b: f64 },
    /// `beta = (b + a t)^rho`.
    VpPoly { a: f64, b: f64, rho: f64 },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Ou => "ou",
            Family::VeExp { .. } => "ve_exp",
            Family::VePoly { .. } => "ve_poly",
            Family::VpConst { .. } => "vp_const",
            Family::VpLinear { .. } => "vp_linear",
            Family::VpPoly { .. } => "vp_poly",
        }
    }

    pub fn is_vp(&self) -> bool {
        !matches!(self, Family::VeExp { .. } | Family::VePoly { .. })
    }

    fn params(&self) -> Vec<(&'static str, f64)> {
        match *self {
            Family::Ou => vec![],
            Family::VeExp { a, b } => vec![("a", a), ("b", b)],
            Family::VePoly { a, b, c } => vec![("a", a), ("b", b), ("c", c)],
            Family::VpConst { b } => vec![("b", b)],
            Family::VpLinear { a, b } => vec![("a", a), ("b", b)],
            Family::VpPoly { a, b, rho } => vec![("a", a), ("b", b), ("rho", rho)],
        }
    }
}

/// `(base + delta)^p - base^p` without cancellation for small `delta`.
fn pow_diff(base: f64, delta: f64, p: f64) -> f64 {
    if delta == 0.0 {
        0.0
    } else if base == 0.0 {
        delta.powf(p)
    } else {
        base.powf(p) * (p * (delta / base).ln_1p()).exp_m1()
    }
}

/// Solves `(base + a t)^p - base^p = a p y` for `t`.
fn pow_diff_inverse(a: f64, base: f64, p: f64, y: f64) -> f64 {
    if a == 0.0 {
        y / base.powf(p - 1.0)
    } else if base == 0.0 {
        (a * p * y).powf(1.0 / p) / a
    } else {
        base * ((a * p * y / base.powf(p)).ln_1p() / p).exp_m1() / a
    }
}

/// A validated forward schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    family: Family,
    #[serde(default)]
    quadrature: QuadratureSettings,
}

impl Schedule {
    pub fn new(family: Family) -> Result<Self> {
        for (name, v) in family.params() {
            if !v.is_finite() || v < 0.0 {
                return Err(invalid(format!(
                    "{}: parameter {name} must be a nonnegative real, got {v}",
                    family.name()
                )));
            }
        }
        let degenerate = match family {
            Family::Ou => false,
            Family::VeExp { a, .. } => a == 0.0,
            Family::VePoly { a, b, .. } => a == 0.0 && b == 0.0,
            Family::VpConst { b } => b == 0.0,
            Family::VpLinear { a, b } | Family::VpPoly { a, b, .. } => a == 0.0 && b == 0.0,
        };
        if degenerate {
            return Err(invalid(format!(
                "{}: parameters give g = 0 for all t",
                family.name()
            )));
        }
        let s = Self {
            family,
            quadrature: QuadratureSettings::default(),
        };
        for i in 0..VALIDATION_POINTS {
            let t = VALIDATION_HORIZON * i as f64 / (VALIDATION_POINTS - 1) as f64;
            let f = s.f(t);
            if f.is_nan() || f < 0.0 {
                return Err(invalid(format!("{}: f({t}) = {f} < 0", family.name())));
            }
            if t > 0.0 && !(s.g2(t) > 0.0) {
                return Err(invalid(format!("{}: g({t}) is not positive", family.name())));
            }
        }
        Ok(s)
    }

    pub fn ou() -> Self {
        Self::new(Family::Ou).expect("OU schedule is valid")
    }

    pub fn with_quadrature(mut self, settings: QuadratureSettings) -> Self {
        self.quadrature = settings;
        self
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn quadrature(&self) -> &QuadratureSettings {
        &self.quadrature
    }

    pub fn is_vp(&self) -> bool {
        self.family.is_vp()
    }

    fn vp_beta(&self, t: f64) -> f64 {
        match self.family {
            Family::Ou => 2.0,
            Family::VpConst { b } => b,
            Family::VpLinear { a, b } => b + a * t,
            Family::VpPoly { a, b, rho } => (b + a * t).powf(rho),
            Family::VeExp { .. } | Family::VePoly { .. } => unreachable!(),
        }
    }

    /// Drift coefficient.
    pub fn f(&self, t: f64) -> f64 {
        if self.is_vp() {
            0.5 * self.vp_beta(t)
        } else {
            0.0
        }
    }

    /// Squared diffusion coefficient.
    pub fn g2(&self, t: f64) -> f64 {
        match self.family {
            Family::VeExp { a, b } => a * a * (2.0 * b * t).exp(),
            Family::VePoly { a, b, c } => (b + a * t).powf(2.0 * c),
            _ => self.vp_beta(t),
        }
    }

    /// Diffusion coefficient.
    pub fn g(&self, t: f64) -> f64 {
        self.g2(t).sqrt()
    }

    /// `beta(t)`, defined for VP families only.
    pub fn beta(&self, t: f64) -> Result<f64> {
        if self.is_vp() {
            Ok(self.vp_beta(t))
        } else {
            Err(Error::Domain(format!(
                "beta is undefined for {}",
                self.family.name()
            )))
        }
    }

    fn check_times(s: f64, t: f64) -> Result<()> {
        if !(s.is_finite() && t.is_finite()) || s < 0.0 || t < 0.0 {
            return Err(Error::Domain(format!("times must be finite and >= 0, got ({s}, {t})")));
        }
        Ok(())
    }

    /// `B(t) - B(s)` for `s <= t`, VP families only.
    fn vp_b_increment(&self, s: f64, t: f64) -> f64 {
        let dt = t - s;
        match self.family {
            Family::Ou => 2.0 * dt,
            Family::VpConst { b } => b * dt,
            Family::VpLinear { a, b } => dt * (b + 0.5 * a * (t + s)),
            Family::VpPoly { a, b, rho } => {
                if a == 0.0 {
                    b.powf(rho) * dt
                } else {
                    pow_diff(b + a * s, a * dt, rho + 1.0) / (a * (rho + 1.0))
                }
            }
            Family::VeExp { .. } | Family::VePoly { .. } => unreachable!(),
        }
    }

    /// `B(t) = int_0^t beta`, VP families only.
    pub fn big_b(&self, t: f64) -> Result<f64> {
        Self::check_times(0.0, t)?;
        self.beta(0.0)?;
        Ok(self.vp_b_increment(0.0, t))
    }

    /// `int_s^t f(r) dr`; antisymmetric in its arguments.
    pub fn int_f(&self, s: f64, t: f64) -> Result<f64> {
        Self::check_times(s, t)?;
        Ok(self.int_f_unchecked(s, t))
    }

    pub(crate) fn int_f_unchecked(&self, s: f64, t: f64) -> f64 {
        if s > t {
            return -self.int_f_unchecked(t, s);
        }
        if self.is_vp() {
            0.5 * self.vp_b_increment(s, t)
        } else {
            0.0
        }
    }

    /// `int_s^t g^2(r) dr`; antisymmetric in its arguments.
    pub fn int_g2(&self, s: f64, t: f64) -> Result<f64> {
        Self::check_times(s, t)?;
        Ok(self.int_g2_unchecked(s, t))
    }

    pub(crate) fn int_g2_unchecked(&self, s: f64, t: f64) -> f64 {
        if s > t {
            return -self.int_g2_unchecked(t, s);
        }
        let dt = t - s;
        match self.family {
            Family::VeExp { a, b } => {
                if b == 0.0 {
                    a * a * dt
                } else {
                    a * a * (2.0 * b * s).exp() * (2.0 * b * dt).exp_m1() / (2.0 * b)
                }
            }
            Family::VePoly { a, b, c } => {
                if a == 0.0 {
                    b.powf(2.0 * c) * dt
                } else {
                    pow_diff(b + a * s, a * dt, 2.0 * c + 1.0) / (a * (2.0 * c + 1.0))
                }
            }
            _ => self.vp_b_increment(s, t),
        }
    }

    /// `c0(t) = exp(int_0^t f)`.
    pub fn c0(&self, t: f64) -> Result<f64> {
        Ok(self.int_f(0.0, t)?.exp())
    }

    /// `c0(t)^{-2}`, which stays finite where `c0` overflows.
    pub(crate) fn inv_c0_sq(&self, t: f64) -> f64 {
        (-2.0 * self.int_f_unchecked(0.0, t)).exp()
    }

    /// `c1(t) = int_0^t exp(-2 int_s^t f) g^2(s) ds`.
    pub fn c1(&self, t: f64) -> Result<f64> {
        Self::check_times(0.0, t)?;
        Ok(self.c1_unchecked(t))
    }

    pub(crate) fn c1_unchecked(&self, t: f64) -> f64 {
        if self.is_vp() {
            -(-self.vp_b_increment(0.0, t)).exp_m1()
        } else {
            self.int_g2_unchecked(0.0, t)
        }
    }

    /// `I(t) = int_0^t exp(2 int_0^s f) g^2(s) ds = c0(t)^2 c1(t)`.
    pub fn noise_integral(&self, t: f64) -> Result<f64> {
        Self::check_times(0.0, t)?;
        Ok(self.noise_integral_unchecked(t))
    }

    pub(crate) fn noise_integral_unchecked(&self, t: f64) -> f64 {
        if self.is_vp() {
            self.vp_b_increment(0.0, t).exp_m1()
        } else {
            self.int_g2_unchecked(0.0, t)
        }
    }

    /// Smallest `t >= 0` with `I(t) = q`.
    pub fn noise_integral_inverse(&self, q: f64) -> Result<f64> {
        if !(q.is_finite() && q >= 0.0) {
            return Err(Error::Domain(format!("cannot invert I at {q}")));
        }
        Ok(match self.family {
            Family::VeExp { a, b } => {
                if b == 0.0 {
                    q / (a * a)
                } else {
                    (2.0 * b * q / (a * a)).ln_1p() / (2.0 * b)
                }
            }
            Family::VePoly { a, b, c } => pow_diff_inverse(a, b, 2.0 * c + 1.0, q),
            _ => self.big_b_inverse(q.ln_1p()),
        })
    }

    /// Inverse of `B`, VP families only.
    fn big_b_inverse(&self, y: f64) -> f64 {
        match self.family {
            Family::Ou => 0.5 * y,
            Family::VpConst { b } => y / b,
            Family::VpLinear { a, b } => 2.0 * y / (b + (b * b + 2.0 * a * y).sqrt()),
            Family::VpPoly { a, b, rho } => pow_diff_inverse(a, b, rho + 1.0, y),
            Family::VeExp { .. } | Family::VePoly { .. } => unreachable!(),
        }
    }

    /// Integrator weight over a forward-time step `[lo, hi]`:
    /// `int_lo^hi exp(int_lo^u f) g^2(u) du`.
    pub fn step_weight(&self, lo: f64, hi: f64) -> Result<f64> {
        Self::check_times(lo, hi)?;
        Ok(self.step_weight_unchecked(lo, hi))
    }

    pub(crate) fn step_weight_unchecked(&self, lo: f64, hi: f64) -> f64 {
        if self.is_vp() {
            2.0 * self.int_f_unchecked(lo, hi).exp_m1()
        } else {
            self.int_g2_unchecked(lo, hi)
        }
    }

    fn quad<F: FnMut(f64) -> f64>(&self, f: F, a: f64, b: f64) -> Result<Quadrature> {
        integrate(f, a, b, &self.quadrature)
    }

    /// `int_s^t f` by adaptive quadrature.
    pub fn int_f_quadrature(&self, s: f64, t: f64) -> Result<Quadrature> {
        Self::check_times(s, t)?;
        self.quad(|r| self.f(r), s, t)
    }

    /// `int_s^t g^2` by adaptive quadrature.
    pub fn int_g2_quadrature(&self, s: f64, t: f64) -> Result<Quadrature> {
        Self::check_times(s, t)?;
        self.quad(|r| self.g2(r), s, t)
    }

    /// `B(t)` by adaptive quadrature.
    pub fn big_b_quadrature(&self, t: f64) -> Result<Quadrature> {
        Self::check_times(0.0, t)?;
        self.beta(0.0)?;
        self.quad(|r| self.vp_beta(r), 0.0, t)
    }

    /// `c1(t)` by adaptive quadrature of its defining integral.
    pub fn c1_quadrature(&self, t: f64) -> Result<Quadrature> {
        Self::check_times(0.0, t)?;
        let outer = self.quad(|r| self.f(r), 0.0, t)?.value;
        self.quad(
            |s| {
                let inner = outer - self.quad(|r| self.f(r), 0.0, s).map_or(f64::NAN, |q| q.value);
                (-2.0 * inner).exp() * self.g2(s)
            },
            0.0,
            t,
        )
    }

    /// Step weight by adaptive quadrature.
    pub fn step_weight_quadrature(&self, lo: f64, hi: f64) -> Result<Quadrature> {
        Self::check_times(lo, hi)?;
        self.quad(
            |u| {
                let inner = self.quad(|r| self.f(r), lo, u).map_or(f64::NAN, |q| q.value);
                inner.exp() * self.g2(u)
            },
            lo,
            hi,
        )
    }
}

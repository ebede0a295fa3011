//! Noise schedules: survival probabilities `alpha_bar(t)`, their conditional
//! ratios, and the instantaneous rate `beta(t) = -d ln alpha_bar / dt`.
//!
//! The same formulas serve discrete time (integer `t` in `0..=T`) and
//! continuous time (real `t` in `[0, T]`); only `beta` is restricted to the
//! continuous mode.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower floor applied to `alpha_bar` so that `1 / alpha_bar` stays finite.
pub const ALPHA_FLOOR: f64 = 1e-12;
/// Largest admissible terminal survival probability.
pub const TERMINAL_MAX: f64 = 1e-6;
/// Cap applied to `beta` where it diverges.
pub const BETA_CAP: f64 = 1e12;
/// Default `b` of the exponential family.
pub const EXPONENTIAL_DEFAULT_B: f64 = 100.0;
/// Terminal survival probability targeted by the default exponential `a`.
const EXPONENTIAL_DEFAULT_TERMINAL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    Cosine { a: f64 },
    Linear,
    Exponential { a: f64, b: f64 },
    ConstantRate { c: f64 },
}

impl ScheduleKind {
    /// Exponential family with `b = 100` and `a` chosen so that
    /// `alpha_bar(T) = 1e-7`.
    pub fn exponential_default(t_max: f64) -> Self {
        let b = EXPONENTIAL_DEFAULT_B;
        let a = -EXPONENTIAL_DEFAULT_TERMINAL.ln() / (t_max * (b - 1.0));
        ScheduleKind::Exponential { a, b }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMode {
    Discrete,
    Continuous,
}

/// `beta(t)` together with a flag telling whether it hit [`BETA_CAP`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaRate {
    pub value: f64,
    pub capped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    t_max: f64,
    mode: TimeMode,
}

impl NoiseSchedule {
    /// Validates the parameters and that `alpha_bar(T) <= 1e-6`.
    pub fn new(kind: ScheduleKind, t_max: f64, mode: TimeMode) -> Result<Self> {
        if !(t_max.is_finite() && t_max > 0.0) {
            return Err(Error::InvalidSchedule(format!(
                "T must be positive, got {t_max}"
            )));
        }
        if mode == TimeMode::Discrete && (t_max.fract() != 0.0 || t_max < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "discrete T must be a positive integer, got {t_max}"
            )));
        }
        match kind {
            ScheduleKind::Cosine { a } if !(a.is_finite() && a >= 0.0) => {
                return Err(Error::InvalidSchedule(format!(
                    "cosine offset must be >= 0, got {a}"
                )));
            }
            ScheduleKind::Exponential { a, b }
                if !(a.is_finite() && a > 0.0 && b.is_finite() && b > 1.0) =>
            {
                return Err(Error::InvalidSchedule(format!(
                    "exponential needs a > 0 and b > 1, got a={a}, b={b}"
                )));
            }
            ScheduleKind::ConstantRate { c } if !(c.is_finite() && c > 0.0) => {
                return Err(Error::InvalidSchedule(format!(
                    "constant rate must be > 0, got {c}"
                )));
            }
            _ => {}
        }
        let sched = NoiseSchedule { kind, t_max, mode };
        let terminal = sched.raw_alpha_bar(t_max);
        if terminal > TERMINAL_MAX {
            return Err(Error::InvalidSchedule(format!(
                "alpha_bar(T) = {terminal:e} exceeds {TERMINAL_MAX:e}; increase T or the rate"
            )));
        }
        Ok(sched)
    }

    pub fn discrete(kind: ScheduleKind, t_max: u32) -> Result<Self> {
        Self::new(kind, f64::from(t_max), TimeMode::Discrete)
    }

    pub fn continuous(kind: ScheduleKind, t_max: f64) -> Result<Self> {
        Self::new(kind, t_max, TimeMode::Continuous)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn mode(&self) -> TimeMode {
        self.mode
    }

    /// The same schedule read in continuous time. `alpha_bar` agrees
    /// bit-for-bit on every integer time.
    pub fn continuous_equivalent(&self) -> NoiseSchedule {
        NoiseSchedule {
            mode: TimeMode::Continuous,
            ..*self
        }
    }

    fn raw_alpha_bar(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 1.0;
        }
        let tt = self.t_max;
        match self.kind {
            ScheduleKind::Cosine { a } => {
                let h = |u: f64| (((u / tt + a) / (1.0 + a)) * FRAC_PI_2).cos();
                h(t) / h(0.0)
            }
            ScheduleKind::Linear => 1.0 - t / tt,
            ScheduleKind::Exponential { a, b } => (tt * a * (1.0 - b.powf(t / tt))).exp(),
            ScheduleKind::ConstantRate { c } => (-c * t).exp(),
        }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.t_max) {
            return Err(Error::TimeOutOfRange(format!(
                "t={t} outside [0, {}]",
                self.t_max
            )));
        }
        Ok(())
    }

    /// `alpha_bar(t)`, exactly 1 at `t = 0` and floored at [`ALPHA_FLOOR`].
    pub fn alpha_bar(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.raw_alpha_bar(t).max(ALPHA_FLOOR))
    }

    /// `alpha_bar(t) / alpha_bar(s)` for `s < t`.
    pub fn alpha_bar_cond(&self, s: f64, t: f64) -> Result<f64> {
        if !(s < t) {
            return Err(Error::TimeOutOfRange(format!(
                "need s < t, got s={s}, t={t}"
            )));
        }
        let at = self.alpha_bar(t)?;
        let as_ = self.alpha_bar(s)?;
        Ok(at / as_.max(1e-300))
    }

    /// Analytic `beta(t)`; with `clip` returns `max(1, beta)`.
    pub fn beta_rate(&self, t: f64, clip: bool) -> Result<BetaRate> {
        if self.mode == TimeMode::Discrete {
            return Err(Error::Domain(
                "beta(t) is undefined for a discrete-time schedule".into(),
            ));
        }
        self.check_time(t)?;
        let tt = self.t_max;
        let raw = match self.kind {
            ScheduleKind::Cosine { a } => {
                let theta = ((t / tt + a) / (1.0 + a)) * FRAC_PI_2;
                theta.tan() * FRAC_PI_2 / (tt * (1.0 + a))
            }
            ScheduleKind::Linear => 1.0 / (tt - t),
            ScheduleKind::Exponential { a, b } => a * b.powf(t / tt) * b.ln(),
            ScheduleKind::ConstantRate { c } => c,
        };
        let capped = !raw.is_finite() || !(0.0..=BETA_CAP).contains(&raw);
        let value = if capped { BETA_CAP } else { raw };
        Ok(BetaRate {
            value: if clip { value.max(1.0) } else { value },
            capped,
        })
    }

    /// `beta(t)` from a central finite difference of `-ln alpha_bar`. Works in
    /// either mode; one-sided near the endpoints.
    pub fn beta_finite_difference(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let h = 1e-5 * self.t_max;
        let lo = (t - h).max(0.0);
        let hi = (t + h).min(self.t_max);
        let nl = |u: f64| -self.raw_alpha_bar(u).max(ALPHA_FLOOR).ln();
        Ok(((nl(hi) - nl(lo)) / (hi - lo)).clamp(0.0, BETA_CAP))
    }

    /// `beta(t)` for the corrector: analytic in continuous mode, finite
    /// difference on the continuous reading of a discrete schedule otherwise.
    pub fn corrector_beta(&self, t: f64) -> Result<f64> {
        match self.mode {
            TimeMode::Continuous => Ok(self.beta_rate(t, false)?.value),
            TimeMode::Discrete => self.beta_finite_difference(t),
        }
    }
}

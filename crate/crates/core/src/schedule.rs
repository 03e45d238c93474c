//! Step-size schedules for the stochastic-approximation loops.
//!
//! The adaptive estimator runs two coupled iterations: a fast one on the gain
//! matrix (step `a(t)`, perturbation size `d(t)`) and a slow one on the
//! covariance-budget multiplier (step `b(t)`). Convergence of that scheme
//! needs the classic conditions
//!
//! ```text
//! sum a(t) = sum b(t) = inf,   sum a(t)^2 < inf,   sum b(t)^2 < inf,
//! d(t) -> 0,   a(t)^2 / d(t)^2 bounded,   b(t) / a(t) -> 0,
//! ```
//!
//! which [`StepSchedules::validate`] checks symbolically from the closed
//! forms below. Scaling a schedule by a positive constant never affects any
//! of the conditions, so scales are free tuning knobs.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A positive step-size sequence evaluated at slots `t = 1, 2, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// Identically zero (placeholder for an unused slow timescale).
    Zero,
    /// `scale / t`.
    Harmonic { scale: f64 },
    /// `scale / t^exponent`.
    Power { scale: f64, exponent: f64 },
    /// `scale / (t * (1 + ln t))`.
    HarmonicLog { scale: f64 },
}

impl Schedule {
    /// Value at slot `t >= 1`.
    pub fn value(&self, t: usize) -> f64 {
        debug_assert!(t >= 1, "schedules are defined for t >= 1");
        let tf = t as f64;
        match *self {
            Schedule::Zero => 0.0,
            Schedule::Harmonic { scale } => scale / tf,
            Schedule::Power { scale, exponent } => scale / tf.powf(exponent),
            Schedule::HarmonicLog { scale } => scale / (tf * (1.0 + tf.ln())),
        }
    }

    /// Polynomial decay exponent `e` in `value ~ scale / (t^e * polylog)`.
    fn exponent(&self) -> f64 {
        match *self {
            Schedule::Zero => f64::INFINITY,
            Schedule::Harmonic { .. } => 1.0,
            Schedule::Power { exponent, .. } => exponent,
            Schedule::HarmonicLog { .. } => 1.0,
        }
    }

    /// Logarithmic correction order (0 for pure powers, 1 for `1/(t ln t)`).
    fn log_order(&self) -> f64 {
        match *self {
            Schedule::HarmonicLog { .. } => 1.0,
            _ => 0.0,
        }
    }

    fn scale(&self) -> f64 {
        match *self {
            Schedule::Zero => 0.0,
            Schedule::Harmonic { scale }
            | Schedule::Power { scale, .. }
            | Schedule::HarmonicLog { scale } => scale,
        }
    }

    fn check_positive_scale(&self, name: &str) -> Result<()> {
        if self.scale() <= 0.0 || !self.scale().is_finite() {
            return Err(Error::Validation(format!(
                "schedule {name} needs a positive finite scale"
            )));
        }
        Ok(())
    }

    /// `sum_t value(t) = inf`: decay no faster than `1/(t ln t)`.
    fn sum_diverges(&self) -> bool {
        let e = self.exponent();
        e < 1.0 || (e == 1.0 && self.log_order() <= 1.0)
    }

    /// `sum_t value(t)^2 < inf`.
    fn square_summable(&self) -> bool {
        self.exponent() > 0.5
    }

    /// `value(t) -> 0`.
    fn vanishes(&self) -> bool {
        self.exponent() > 0.0 || matches!(self, Schedule::Zero)
    }

    /// `self(t) / other(t)` stays bounded as `t -> inf`.
    fn ratio_bounded_by(&self, other: &Schedule) -> bool {
        self.exponent() > other.exponent()
            || (self.exponent() == other.exponent() && self.log_order() >= other.log_order())
    }

    /// `self(t) / other(t) -> 0`.
    fn ratio_vanishes(&self, other: &Schedule) -> bool {
        self.exponent() > other.exponent()
            || (self.exponent() == other.exponent() && self.log_order() > other.log_order())
    }

    /// Checks the plain stochastic-approximation gain conditions for a
    /// standalone schedule: positive scale, `sum = inf`, `sum of squares
    /// < inf`. Used by tuners that run a single recursion.
    pub fn validate_sa_gain(&self, name: &str) -> Result<()> {
        self.check_positive_scale(name)?;
        if !self.sum_diverges() {
            return Err(Error::Validation(format!(
                "schedule {name} must have a divergent sum"
            )));
        }
        if !self.square_summable() {
            return Err(Error::Validation(format!(
                "schedule {name} must be square-summable"
            )));
        }
        Ok(())
    }
}

/// The three coupled schedules used by the adaptive estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedules {
    /// Fast (gain) step `a(t)`.
    pub a: Schedule,
    /// Slow (multiplier) step `b(t)`; `Zero` when the multiplier is fixed.
    pub b: Schedule,
    /// Perturbation size `d(t)` for the two-sided gradient probe.
    pub d: Schedule,
}

impl StepSchedules {
    /// The default pairing: `a(t) = 1/(2t)`, `d(t) = 0.1 / t^0.1`, and a
    /// `1/(t(1+ln t))` slow step whose scale is chosen by the caller (the
    /// estimator ties it to the covariance budget so the multiplier moves on
    /// a usable scale).
    pub fn defaults(b_scale: Option<f64>) -> Self {
        StepSchedules {
            a: Schedule::Harmonic { scale: 0.5 },
            b: match b_scale {
                Some(scale) => Schedule::HarmonicLog { scale },
                None => Schedule::Zero,
            },
            d: Schedule::Power {
                scale: 0.1,
                exponent: 0.1,
            },
        }
    }

    /// Checks the stochastic-approximation conditions. The slow-timescale
    /// conditions are only enforced when `two_timescale` is set; otherwise
    /// `b` may be `Zero`. A zero `a` is the explicit "frozen gain" escape
    /// (no learning at all, useful as an ablation and regression anchor);
    /// it requires a zero `b` as well, since the multiplier may not adapt
    /// faster than the gain it prices.
    pub fn validate(&self, two_timescale: bool) -> Result<()> {
        if matches!(self.a, Schedule::Zero) {
            if !matches!(self.b, Schedule::Zero) {
                return Err(Error::Validation(
                    "a = zero freezes the gain, so b must be zero too".into(),
                ));
            }
            return self.d.check_positive_scale("d");
        }
        self.a.check_positive_scale("a")?;
        self.d.check_positive_scale("d")?;
        if !self.a.sum_diverges() {
            return Err(Error::Validation("sum of a(t) must diverge".into()));
        }
        if !self.a.square_summable() {
            return Err(Error::Validation("a(t) must be square-summable".into()));
        }
        if !self.d.vanishes() {
            return Err(Error::Validation("d(t) must vanish".into()));
        }
        if !self.a.ratio_bounded_by(&self.d) {
            return Err(Error::Validation(
                "a(t)/d(t) must stay bounded (a may not decay slower than d)".into(),
            ));
        }
        if two_timescale {
            self.b.check_positive_scale("b")?;
            if !self.b.sum_diverges() {
                return Err(Error::Validation("sum of b(t) must diverge".into()));
            }
            if !self.b.square_summable() {
                return Err(Error::Validation("b(t) must be square-summable".into()));
            }
            if !self.b.ratio_vanishes(&self.a) {
                return Err(Error::Validation(
                    "b(t)/a(t) must vanish (the multiplier must be the slow timescale)".into(),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn default_values_at_small_t() {
        let s = StepSchedules::defaults(Some(1.0));
        assert_abs_diff_eq!(s.a.value(1), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.a.value(10), 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(s.d.value(1), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(s.d.value(1024), 0.1 / 1024f64.powf(0.1), epsilon = 1e-15);
        assert_abs_diff_eq!(s.b.value(1), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            s.b.value(100),
            1.0 / (100.0 * (1.0 + 100f64.ln())),
            epsilon = 1e-15
        );
    }

    #[test]
    fn defaults_validate_in_both_modes() {
        StepSchedules::defaults(Some(1.0)).validate(true).unwrap();
        StepSchedules::defaults(None).validate(false).unwrap();
    }

    #[test]
    fn fixed_mode_rejects_zero_b_only_when_two_timescale() {
        let s = StepSchedules::defaults(None);
        assert!(s.validate(true).is_err());
    }

    #[test]
    fn fast_decaying_a_is_rejected() {
        let mut s = StepSchedules::defaults(None);
        s.a = Schedule::Power {
            scale: 1.0,
            exponent: 1.5,
        };
        assert!(s.validate(false).is_err());
    }

    #[test]
    fn non_square_summable_a_is_rejected() {
        let mut s = StepSchedules::defaults(None);
        s.a = Schedule::Power {
            scale: 1.0,
            exponent: 0.4,
        };
        assert!(s.validate(false).is_err());
    }

    #[test]
    fn a_decaying_slower_than_d_is_rejected() {
        let mut s = StepSchedules::defaults(None);
        // a ~ t^-0.6 decays slower than d ~ t^-0.8, so a/d grows unboundedly.
        s.a = Schedule::Power {
            scale: 1.0,
            exponent: 0.6,
        };
        s.d = Schedule::Power {
            scale: 1.0,
            exponent: 0.8,
        };
        assert!(s.validate(false).is_err());
    }

    #[test]
    fn b_on_same_timescale_as_a_is_rejected() {
        let mut s = StepSchedules::defaults(Some(1.0));
        s.b = Schedule::Harmonic { scale: 0.1 };
        assert!(s.validate(true).is_err());
    }

    #[test]
    fn partial_sums_grow_numerically() {
        // Direct numeric evidence for the divergence claims on the defaults:
        // the tail partial sums keep growing by a non-vanishing amount.
        let s = StepSchedules::defaults(Some(1.0));
        for sched in [s.a, s.b] {
            let sum_to = |hi: usize| -> f64 { (1..=hi).map(|t| sched.value(t)).sum() };
            let s1 = sum_to(1_000);
            let s2 = sum_to(10_000);
            let s3 = sum_to(100_000);
            assert!(s2 - s1 > 0.0);
            assert!(s3 - s2 > 0.0);
        }
        // And the squares settle: the tail contribution is negligible.
        let sq = |sched: Schedule, lo: usize, hi: usize| -> f64 {
            (lo..=hi).map(|t| sched.value(t).powi(2)).sum()
        };
        assert!(sq(s.a, 10_000, 100_000) < 1e-3);
        assert!(sq(s.d, 1, 1) > 0.0); // d need not be square-summable, only vanishing
    }

    #[test]
    fn json_round_trip() {
        let s = StepSchedules::defaults(Some(2.5));
        let text = serde_json::to_string(&s).unwrap();
        let back: StepSchedules = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
    }
}

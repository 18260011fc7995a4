use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-time-scale step sizes `ε(n) = c·(1+n)^(-a)`.
///
/// With `a_pred < a_sys` the system-identification step vanishes faster than
/// the prediction step, so their ratio tends to zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TturSchedule {
    pub c_pred: f64,
    pub c_sys: f64,
    pub a_pred: f64,
    pub a_sys: f64,
}

impl Default for TturSchedule {
    fn default() -> Self {
        Self {
            c_pred: 1e-2,
            c_sys: 3e-3,
            a_pred: 0.5,
            a_sys: 0.75,
        }
    }
}

impl TturSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_pred > 0.0 && self.a_pred < self.a_sys && self.a_sys <= 1.0) {
            return Err(Error::Config(format!(
                "schedule exponents must satisfy 0 < a_pred < a_sys <= 1 (got {} and {})",
                self.a_pred, self.a_sys
            )));
        }
        if !(self.c_pred >= 0.0 && self.c_sys >= 0.0 && self.c_pred.is_finite() && self.c_sys.is_finite()) {
            return Err(Error::Config("schedule constants must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// `(ε_pred, ε_sys)` at iteration `n`.
    pub fn step_sizes(&self, n: u64) -> (f64, f64) {
        let base = 1.0 + n as f64;
        (self.c_pred * base.powf(-self.a_pred), self.c_sys * base.powf(-self.a_sys))
    }

    /// `ε_sys(n) / ε_pred(n)`.
    pub fn ratio(&self, n: u64) -> f64 {
        let (p, s) = self.step_sizes(n);
        s / p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_the_constants() {
        let s = TturSchedule::default();
        assert_eq!(s.step_sizes(0), (s.c_pred, s.c_sys));
    }

    #[test]
    fn ratio_shrinks_by_the_exponent_gap() {
        let s = TturSchedule::default();
        let expected = 10_001f64.powf(-(s.a_sys - s.a_pred));
        let got = s.ratio(10_000) / s.ratio(0);
        assert!((got - expected).abs() < 1e-12 * expected.max(1.0));
    }

    #[test]
    fn step_sizes_are_non_increasing() {
        let s = TturSchedule::default();
        let mut prev = s.step_sizes(0);
        for n in 1..5000 {
            let cur = s.step_sizes(n);
            assert!(cur.0 <= prev.0 && cur.1 <= prev.1 && cur.0 > 0.0 && cur.1 > 0.0);
            prev = cur;
        }
    }

    #[test]
    fn rejects_inverted_exponents() {
        let s = TturSchedule {
            a_pred: 0.8,
            a_sys: 0.5,
            ..TturSchedule::default()
        };
        assert!(s.validate().is_err());
    }
}

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{BardError, Result};

/// Beta(a, b) posterior of a binomial rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct BetaPosterior {
    pub a: f64,
    pub b: f64,
}

impl BetaPosterior {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0) {
            return Err(BardError::param(format!("beta shapes must be positive, got ({a}, {b})")));
        }
        Ok(Self { a, b })
    }

    /// Posterior after `events` out of `n` under a uniform prior:
    /// Beta(events + 1, n - events + 1).
    pub fn from_uniform_prior(events: u32, n: u32) -> Self {
        debug_assert!(events <= n);
        Self { a: f64::from(events) + 1.0, b: f64::from(n - events) + 1.0 }
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    /// Pr(p <= x).
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x >= 1.0 {
            1.0
        } else {
            beta_reg(self.a, self.b, x)
        }
    }

    /// Pr(p > x), evaluated through the reflected incomplete beta so tails
    /// close to 1 keep their precision.
    pub fn sf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            1.0
        } else if x >= 1.0 {
            0.0
        } else {
            beta_reg(self.b, self.a, 1.0 - x)
        }
    }
}

/// Pr(p > cutoff) under `post`.
pub fn beta_tail(post: BetaPosterior, cutoff: f64) -> Result<f64> {
    BetaPosterior::new(post.a, post.b)?;
    if !(0.0..=1.0).contains(&cutoff) {
        return Err(BardError::param(format!("cutoff {cutoff} outside [0, 1]")));
    }
    Ok(post.sf(cutoff))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_form_tails() {
        // Beta(a, 1) has CDF x^a.
        let t = beta_tail(BetaPosterior::new(4.0, 1.0).unwrap(), 0.25).unwrap();
        assert!((t - 0.99609375).abs() < 1e-12);
        // Beta(3, 2) has CDF 4x^3 - 3x^4.
        let t = beta_tail(BetaPosterior::new(3.0, 2.0).unwrap(), 0.25).unwrap();
        assert!((t - 0.94921875).abs() < 1e-12);
        let t = beta_tail(BetaPosterior::new(1.0, 1.0).unwrap(), 0.0).unwrap();
        assert_eq!(t, 1.0);
    }

    #[test]
    fn invalid_shapes_are_rejected() {
        assert!(BetaPosterior::new(0.0, 1.0).is_err());
        assert!(BetaPosterior::new(1.0, f64::NAN).is_err());
        assert!(beta_tail(BetaPosterior { a: -1.0, b: 2.0 }, 0.3).is_err());
        assert!(beta_tail(BetaPosterior { a: 1.0, b: 2.0 }, 1.3).is_err());
    }

    #[test]
    fn tiny_tail_keeps_precision() {
        // Beta(1, 21): Pr(p > 0.3) = 0.7^21.
        let t = BetaPosterior::from_uniform_prior(0, 20).sf(0.3);
        assert!((t / 0.7f64.powi(21) - 1.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn tail_is_monotone_in_cutoff(a in 0.2f64..40.0, b in 0.2f64..40.0, x in 0.0f64..1.0, dx in 0.0f64..0.5) {
            let post = BetaPosterior::new(a, b).unwrap();
            let lo = beta_tail(post, x).unwrap();
            let hi = beta_tail(post, (x + dx).min(1.0)).unwrap();
            prop_assert!(hi <= lo + 1e-12);
            prop_assert!((0.0..=1.0).contains(&lo));
        }
    }
}

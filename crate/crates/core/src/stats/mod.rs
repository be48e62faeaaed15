//! Statistical primitives shared by the escalation engines, the OBD selector
//! and the simulator.

mod beta;
mod blrm;
mod dirichlet;
mod pava;

pub use beta::{beta_tail, BetaPosterior};
pub use blrm::{BlrmModel, BlrmPosteriorGrid, BlrmPrior, DoseScale, GridSpec, IntervalProbs};
pub use dirichlet::{dirichlet_mean_utility, DirichletPosterior};
pub use pava::pava;

/// Standard logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_is_stable_at_extremes() {
        assert_eq!(logistic(-1000.0), 0.0);
        assert_eq!(logistic(1000.0), 1.0);
        assert!((logistic(0.0) - 0.5).abs() < 1e-15);
        assert!((logit(logistic(1.3)) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn softplus_matches_naive_in_range() {
        for x in [-30.0, -2.0, 0.0, 0.5, 4.0, 30.0] {
            let naive = (1.0f64 + f64::exp(x)).ln();
            assert!((softplus(x) - naive).abs() < 1e-12, "x = {x}");
        }
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-10);
        let v = normal_cdf(-1.0);
        assert!((v - 0.15865525393145707).abs() < 1e-10, "{v}");
    }
}

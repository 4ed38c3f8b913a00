//! Hyperparameters of the shrinkage prior, the prior variance they induce on
//! a coefficient entry, and elicitation of the two rate parameters from a
//! target variance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Explicit,
    Benchmark,
    Elicited { v: f64, av: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub alpha: f64,
    pub a_tau: f64,
    pub b_tau: f64,
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub a_lambda: f64,
    pub b_lambda: f64,
    /// PARAFAC rank.
    pub d: usize,
    /// Number of tensor modes.
    pub m: usize,
    /// Number of regimes.
    pub k: usize,
    /// Dirichlet prior on each transition-matrix row.
    pub nu: Vec<f64>,
    pub sigma_mu_sq: f64,
    pub a_noise: f64,
    pub b_noise: f64,
    pub provenance: Provenance,
}

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_A_TAU: f64 = 3.0;
pub const DEFAULT_A_SIGMA: f64 = 0.5;
pub const DEFAULT_A_LAMBDA: f64 = 3.0;
pub const DEFAULT_SIGMA_MU_SQ: f64 = 100.0;
pub const DEFAULT_A_NOISE: f64 = 0.01;
pub const DEFAULT_B_NOISE: f64 = 0.01;
pub const DEFAULT_TARGET_V: f64 = 1.0;
pub const DEFAULT_TARGET_AV: f64 = 0.10;

/// Result of [`elicit`]. `b_sigma` is infinite when `AV* = 0`, the hard
/// PARAFAC limit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Elicited {
    pub b_tau: f64,
    pub b_sigma: f64,
    pub sigma_ratio: f64,
}

impl Hyperparameters {
    /// Fixed shape parameters with placeholder rates; `b_λ = a_λ^{1/(2M)}`.
    fn base(d: usize, m: usize, k: usize) -> Self {
        Hyperparameters {
            alpha: DEFAULT_ALPHA,
            a_tau: DEFAULT_A_TAU,
            b_tau: 1.0,
            a_sigma: DEFAULT_A_SIGMA,
            b_sigma: 1.0,
            a_lambda: DEFAULT_A_LAMBDA,
            b_lambda: DEFAULT_A_LAMBDA.powf(1.0 / (2.0 * m as f64)),
            d,
            m,
            k,
            nu: vec![1.0; k],
            sigma_mu_sq: DEFAULT_SIGMA_MU_SQ,
            a_noise: DEFAULT_A_NOISE,
            b_noise: DEFAULT_B_NOISE,
            provenance: Provenance::Explicit,
        }
    }

    /// Defaults with rates elicited from `V* = 1`, `AV* = 0.10` for matrix
    /// coefficients and the benchmark rates otherwise.
    pub fn defaults(d: usize, m: usize, k: usize) -> Result<Self> {
        if m == 2 {
            Self::elicited(d, m, k, DEFAULT_TARGET_V, DEFAULT_TARGET_AV)
        } else {
            Self::benchmark(d, m, k)
        }
    }

    /// `b_σ = 8.5√C`, `b_τ = 33.75/b_σ`.
    pub fn benchmark(d: usize, m: usize, k: usize) -> Result<Self> {
        let mut h = Self::base(d, m, k);
        h.b_sigma = 8.5 * h.c().sqrt();
        h.b_tau = 33.75 / h.b_sigma;
        h.provenance = Provenance::Benchmark;
        h.validate()?;
        Ok(h)
    }

    pub fn elicited(d: usize, m: usize, k: usize, v: f64, av: f64) -> Result<Self> {
        let mut h = Self::base(d, m, k);
        let e = elicit(v, av, &h)?;
        if !e.b_sigma.is_finite() {
            return Err(Error::Elicitation("AV* = 0 gives an infinite b_σ; the sampler needs AV* > 0".into()));
        }
        h.b_tau = e.b_tau;
        h.b_sigma = e.b_sigma;
        h.provenance = Provenance::Elicited { v, av };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("alpha", self.alpha),
            ("a_tau", self.a_tau),
            ("b_tau", self.b_tau),
            ("a_sigma", self.a_sigma),
            ("b_sigma", self.b_sigma),
            ("a_lambda", self.a_lambda),
            ("b_lambda", self.b_lambda),
            ("sigma_mu_sq", self.sigma_mu_sq),
            ("a_noise", self.a_noise),
            ("b_noise", self.b_noise),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.a_lambda <= 2.0 {
            return Err(Error::Parameter(format!("a_lambda must exceed 2, got {}", self.a_lambda)));
        }
        if self.d == 0 || self.m < 2 || self.k == 0 {
            return Err(Error::Parameter(format!("need D ≥ 1, M ≥ 2, K ≥ 1; got D={}, M={}, K={}", self.d, self.m, self.k)));
        }
        if self.nu.len() != self.k || self.nu.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Parameter(format!("nu must hold {} positive entries, got {:?}", self.k, self.nu)));
        }
        Ok(())
    }

    /// `C = (α/D + 1)/(α + 1)`.
    pub fn c(&self) -> f64 {
        (self.alpha / self.d as f64 + 1.0) / (self.alpha + 1.0)
    }

    /// `E[w] = 2b_λ²/((a_λ−1)(a_λ−2))`, the hard-PARAFAC term.
    pub fn hard_term(&self) -> f64 {
        2.0 * self.b_lambda * self.b_lambda / ((self.a_lambda - 1.0) * (self.a_lambda - 2.0))
    }

    pub fn sigma_ratio(&self) -> f64 {
        self.a_sigma / self.b_sigma
    }

    fn variance_with_ratio(&self, ratio: f64) -> Result<f64> {
        if self.a_lambda <= 2.0 {
            return Err(Error::Parameter(format!("prior variance needs a_lambda > 2, got {}", self.a_lambda)));
        }
        let m = self.m as i32;
        let d = self.d as f64;
        // Γ(a+M)/Γ(a) = Π_{r<M} (a + r)
        let tau_moment: f64 = (0..self.m).map(|r| (self.a_tau + r as f64) / self.b_tau).product();
        let zeta_moment: f64 = (0..self.m).map(|r| (self.alpha / d + r as f64) / (self.alpha + r as f64)).product();
        Ok(tau_moment * d * zeta_moment * (ratio + self.hard_term()).powi(m))
    }

    /// Prior variance of one entry of the coefficient tensor.
    pub fn prior_entry_variance(&self) -> Result<f64> {
        self.variance_with_ratio(self.sigma_ratio())
    }

    /// The same variance with the softening term `a_σ/b_σ` removed.
    pub fn hard_variance(&self) -> Result<f64> {
        self.variance_with_ratio(0.0)
    }

    /// `(V − V_hard)/V`.
    pub fn relative_additional_variance(&self) -> Result<f64> {
        let v = self.prior_entry_variance()?;
        Ok((v - self.hard_variance()?) / v)
    }
}

/// Solves for `(b_τ, b_σ)` so that a matrix coefficient has prior entry
/// variance `v` and relative additional variance `av`, holding the other
/// entries of `fixed` (`α, a_τ, a_σ, a_λ, b_λ, D`) constant.
pub fn elicit(v: f64, av: f64, fixed: &Hyperparameters) -> Result<Elicited> {
    if fixed.m != 2 {
        return Err(Error::Unsupported(format!("elicitation is defined for M = 2, got M = {}", fixed.m)));
    }
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Elicitation(format!("target variance must be positive, got {v}")));
    }
    if !(0.0..1.0).contains(&av) {
        return Err(Error::Elicitation(format!("target additional variance must lie in [0, 1), got {av}")));
    }
    if !(fixed.a_lambda > 2.0 && fixed.a_tau > 0.0 && fixed.a_sigma > 0.0 && fixed.alpha > 0.0 && fixed.d > 0) {
        return Err(Error::Elicitation("fixed hyperparameters are outside their domain".into()));
    }
    let h = fixed.hard_term();
    let ratio = (1.0 / (1.0 - av).sqrt() - 1.0) * h;
    let a = fixed.a_tau;
    let b_tau = (h + ratio) * (a * (a + 1.0) * fixed.c() / v).sqrt();
    let b_sigma = if ratio > 0.0 { fixed.a_sigma / ratio } else { f64::INFINITY };
    Ok(Elicited { b_tau, b_sigma, sigma_ratio: ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn defaults() -> Hyperparameters {
        Hyperparameters::base(3, 2, 1)
    }

    #[test]
    fn m2_reduces_to_closed_form() {
        let mut h = Hyperparameters::benchmark(3, 2, 1).unwrap();
        for (bt, bs) in [(1.0, 1.0), (4.2, 0.3), (0.7, 12.0)] {
            h.b_tau = bt;
            h.b_sigma = bs;
            let a = h.a_tau;
            let expected = a * (a + 1.0) / (bt * bt) * h.c() * (h.a_sigma / bs + h.hard_term()).powi(2);
            assert!((h.prior_entry_variance().unwrap() / expected - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn no_softening_is_hard() {
        let mut h = defaults();
        h.b_sigma = f64::INFINITY;
        assert_eq!(h.prior_entry_variance().unwrap(), h.hard_variance().unwrap());
        assert_eq!(h.relative_additional_variance().unwrap(), 0.0);
    }

    #[test]
    fn benchmark_values() {
        // The benchmark rates give V ≈ 1.10 and AV ≈ 0.078 at D = 3.
        let h = Hyperparameters::benchmark(3, 2, 1).unwrap();
        let c: f64 = 2.0 / 3.0;
        let bs = 8.5 * c.sqrt();
        let bt = 33.75 / bs;
        let hard = 3f64.sqrt();
        let v = 12.0 / (bt * bt) * c * (0.5 / bs + hard).powi(2);
        assert!((h.prior_entry_variance().unwrap() - v).abs() < 1e-12);
        assert!((v - 1.1009).abs() < 1e-3);
        let av = 1.0 - (hard / (0.5 / bs + hard)).powi(2);
        assert!((h.relative_additional_variance().unwrap() - av).abs() < 1e-12);
        assert!((av - 0.0782).abs() < 1e-3);
    }

    #[test]
    fn av_closed_form_for_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let mut h = defaults();
            h.a_lambda = rng.random_range(2.1..8.0);
            h.b_lambda = rng.random_range(0.2..3.0);
            h.b_sigma = rng.random_range(0.1..20.0);
            h.a_sigma = rng.random_range(0.1..3.0);
            let r = h.a_sigma / h.b_sigma;
            let closed = 1.0
                - (1.0 + r * (h.a_lambda - 1.0) * (h.a_lambda - 2.0) / (2.0 * h.b_lambda * h.b_lambda)).powi(-2);
            assert!((h.relative_additional_variance().unwrap() - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn domain_errors() {
        let mut h = defaults();
        h.a_lambda = 2.0;
        assert!(h.prior_entry_variance().is_err());
        assert!(h.validate().is_err());
        let mut h3 = Hyperparameters::base(3, 3, 1);
        h3.b_tau = 1.0;
        assert!(matches!(elicit(1.0, 0.1, &h3), Err(Error::Unsupported(_))));
        assert!(matches!(elicit(1.0, 1.0, &defaults()), Err(Error::Elicitation(_))));
        assert!(matches!(elicit(-1.0, 0.1, &defaults()), Err(Error::Elicitation(_))));
    }

    #[test]
    fn elicit_zero_av_is_hard() {
        let e = elicit(1.0, 0.0, &defaults()).unwrap();
        assert_eq!(e.sigma_ratio, 0.0);
        assert!(e.b_sigma.is_infinite());
        let mut h = defaults();
        h.b_tau = e.b_tau;
        h.b_sigma = e.b_sigma;
        assert!((h.prior_entry_variance().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn elicit_round_trip_defaults() {
        let h = Hyperparameters::elicited(3, 2, 1, 1.0, 0.10).unwrap();
        assert!((h.prior_entry_variance().unwrap() - 1.0).abs() < 1e-10);
        assert!((h.relative_additional_variance().unwrap() - 0.10).abs() < 1e-10);
        // Same product as the benchmark column once the √C factor is removed.
        assert!((h.b_tau * h.b_sigma / h.c().sqrt() - 33.75).abs() < 0.2);
    }

    #[test]
    fn b_lambda_follows_mode_count() {
        assert!((Hyperparameters::base(3, 2, 1).b_lambda - 3f64.powf(0.25)).abs() < 1e-15);
        assert!((Hyperparameters::base(3, 3, 1).b_lambda - 3f64.powf(1.0 / 6.0)).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn elicit_round_trip(
                v in 0.01f64..50.0, av in 0.001f64..0.95, d in 1usize..8,
                a_tau in 0.5f64..6.0, a_sigma in 0.1f64..3.0, a_lambda in 2.2f64..9.0, b_lambda in 0.1f64..4.0,
            ) {
                let mut h = Hyperparameters::base(d, 2, 1);
                h.a_tau = a_tau;
                h.a_sigma = a_sigma;
                h.a_lambda = a_lambda;
                h.b_lambda = b_lambda;
                let e = elicit(v, av, &h).unwrap();
                h.b_tau = e.b_tau;
                h.b_sigma = e.b_sigma;
                prop_assert!((h.prior_entry_variance().unwrap() / v - 1.0).abs() < 1e-10);
                prop_assert!((h.relative_additional_variance().unwrap() - av).abs() < 1e-10);
            }

            #[test]
            fn av_increases_with_sigma_ratio(r1 in 0.0f64..5.0, dr in 1e-6f64..5.0, m in 2usize..5) {
                let mut h = Hyperparameters::base(3, m, 1);
                h.b_sigma = h.a_sigma / r1;
                let lo = h.relative_additional_variance().unwrap();
                h.b_sigma = h.a_sigma / (r1 + dr);
                let hi = h.relative_additional_variance().unwrap();
                prop_assert!(hi > lo);
            }
        }
    }
}

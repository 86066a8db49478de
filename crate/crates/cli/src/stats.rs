//! One-sided binomial tests used to judge Monte Carlo rates without
//! flaking on sampling noise.

use statrs::distribution::{Beta, Binomial, ContinuousCDF, DiscreteCDF};

/// Outcome of a one-sided binomial test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinomialTest {
    pub successes: u64,
    pub trials: u64,
    pub p0: f64,
    /// Probability, under `p = p0`, of a result at least as extreme as the
    /// one observed in the direction of the alternative.
    pub p_value: f64,
}

impl BinomialTest {
    /// Whether the null hypothesis survives at level `alpha`.
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }

    pub fn rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }
}

/// Test `H0: p >= p0` against `p < p0`.
pub fn at_least(successes: u64, trials: u64, p0: f64) -> BinomialTest {
    let p_value = if trials == 0 {
        1.0
    } else {
        Binomial::new(p0, trials)
            .expect("p0 in [0, 1]")
            .cdf(successes)
    };
    BinomialTest {
        successes,
        trials,
        p0,
        p_value,
    }
}

/// Test `H0: p <= p0` against `p > p0`.
pub fn at_most(successes: u64, trials: u64, p0: f64) -> BinomialTest {
    let p_value = if trials == 0 || successes == 0 {
        1.0
    } else {
        // P(X >= k) = P(X > k - 1).
        Binomial::new(p0, trials)
            .expect("p0 in [0, 1]")
            .sf(successes - 1)
    };
    BinomialTest {
        successes,
        trials,
        p0,
        p_value,
    }
}

/// Exact (Clopper-Pearson) one-sided lower confidence bound on `p`.
pub fn lower_bound(successes: u64, trials: u64, confidence: f64) -> f64 {
    if successes == 0 || trials == 0 {
        return 0.0;
    }
    let k = successes as f64;
    let n = trials as f64;
    Beta::new(k, n - k + 1.0)
        .expect("positive shapes")
        .inverse_cdf(1.0 - confidence)
}

/// Exact (Clopper-Pearson) one-sided upper confidence bound on `p`.
pub fn upper_bound(successes: u64, trials: u64, confidence: f64) -> f64 {
    if successes >= trials {
        return 1.0;
    }
    let k = successes as f64;
    let n = trials as f64;
    Beta::new(k + 1.0, n - k)
        .expect("positive shapes")
        .inverse_cdf(confidence)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Exact binomial sums, independent of the library.
    fn binom_cdf(k: u64, n: u64, p: f64) -> f64 {
        let mut term = (1.0 - p).powi(n as i32);
        let mut sum = term;
        for i in 1..=k {
            term *= (n - i + 1) as f64 / i as f64 * p / (1.0 - p);
            sum += term;
        }
        sum
    }

    #[test]
    fn p_values_match_direct_sums() {
        let t = at_least(3, 10, 0.5);
        assert!((t.p_value - binom_cdf(3, 10, 0.5)).abs() < 1e-12);
        assert!((t.p_value - 176.0 / 1024.0).abs() < 1e-12);
        let u = at_most(4, 20, 0.1);
        assert!((u.p_value - (1.0 - binom_cdf(3, 20, 0.1))).abs() < 1e-12);
    }

    #[test]
    fn clear_cases() {
        assert!(at_least(600, 1000, 0.5).passes(0.01));
        assert!(!at_least(400, 1000, 0.5).passes(0.01));
        assert!(at_most(0, 1000, 1.0 / 32.0).passes(0.01));
        assert!(!at_most(100, 1000, 1.0 / 32.0).passes(0.01));
        assert!(at_least(0, 0, 0.5).passes(0.01));
    }

    #[test]
    fn bounds_bracket_the_rate() {
        let lo = lower_bound(60, 100, 0.99);
        let hi = upper_bound(60, 100, 0.99);
        assert!(lo < 0.6 && 0.6 < hi);
        // The bound is where the test flips.
        assert!((at_most(60, 100, lo).p_value - 0.01).abs() < 1e-6);
        assert_eq!(lower_bound(0, 10, 0.99), 0.0);
        assert_eq!(upper_bound(10, 10, 0.99), 1.0);
    }
}

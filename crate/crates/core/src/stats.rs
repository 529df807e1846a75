//! Mergeable moment accumulators.
//!
//! [`Moments`] keeps the count, mean and central sums up to fourth order and
//! merges with the pairwise update formulas, so per-trial summaries can be
//! combined in any grouping. [`Welford`] tracks one scalar per trial and is
//! what the cluster (between-trial) standard errors are built from.

/// Count, mean and central sums `M_p = sum (x - mean)^p` for `p = 2, 3, 4`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
}

impl Moments {
    /// Two-pass summary of a slice.
    pub fn from_slice(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for &x in xs {
            let d = x - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        Moments { count: xs.len() as u64, mean, m2, m3, m4 }
    }

    /// Summary from raw power sums `s[p-1] = sum x^p`. Accurate when the mean
    /// is not large relative to the spread.
    pub fn from_power_sums(count: u64, s: [f64; 4]) -> Self {
        if count == 0 {
            return Self::default();
        }
        let c = count as f64;
        let mean = s[0] / c;
        let mu2 = mean * mean;
        let m2 = (s[1] - mean * s[0]).max(0.0);
        let m3 = s[2] - 3.0 * mean * s[1] + 2.0 * c * mu2 * mean;
        let m4 = (s[3] - 4.0 * mean * s[2] + 6.0 * mu2 * s[1] - 3.0 * c * mu2 * mu2).max(0.0);
        Moments { count, mean, m2, m3, m4 }
    }

    pub fn push(&mut self, x: f64) {
        self.merge(&Moments { count: 1, mean: x, m2: 0.0, m3: 0.0, m4: 0.0 });
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let delta = other.mean - self.mean;
        let d_n = delta / n;
        let d_n2 = d_n * d_n;
        let term1 = delta * d_n * na * nb;

        let mean = self.mean + d_n * nb;
        let m4 = self.m4
            + other.m4
            + term1 * d_n2 * (na * na - na * nb + nb * nb)
            + 6.0 * d_n2 * (na * na * other.m2 + nb * nb * self.m2)
            + 4.0 * d_n * (na * other.m3 - nb * self.m3);
        let m3 = self.m3 + other.m3 + term1 * d_n * (na - nb) + 3.0 * d_n * (na * other.m2 - nb * self.m2);
        let m2 = self.m2 + other.m2 + term1;
        *self = Moments { count: self.count + other.count, mean, m2, m3, m4 };
    }

    /// Unbiased sample variance; 0 below two observations.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn stderr_of_mean(&self) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        libm::sqrt(self.variance() / self.count as f64)
    }

    /// Normal-theory standard error of [`Self::variance`]:
    /// `sqrt((mu4 - (c-3)/(c-1) sigma^4) / c)`.
    pub fn stderr_of_variance(&self) -> f64 {
        if self.count < 4 {
            return f64::NAN;
        }
        let c = self.count as f64;
        let var = self.variance();
        let mu4 = self.m4 / c;
        libm::sqrt(((mu4 - (c - 3.0) / (c - 1.0) * var * var) / c).max(0.0))
    }
}

/// Running mean and variance of one value per observation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Welford {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Welford {
    pub fn single(x: f64) -> Self {
        Welford { count: 1, mean: x, m2: 0.0 }
    }

    pub fn push(&mut self, x: f64) {
        self.merge(&Welford::single(x));
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let delta = other.mean - self.mean;
        self.mean += delta * nb / n;
        self.m2 += other.m2 + delta * delta * na * nb / n;
        self.count += other.count;
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Standard error of [`Self::mean`]; `NaN` below two observations.
    pub fn stderr(&self) -> f64 {
        if self.count < 2 {
            f64::NAN
        } else {
            libm::sqrt(self.variance() / self.count as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
    }

    fn assert_moments_close(a: &Moments, b: &Moments, tol: f64) {
        assert_eq!(a.count, b.count);
        assert!(rel_close(a.mean, b.mean, tol) || (a.mean - b.mean).abs() < 1e-12, "{a:?} {b:?}");
        assert!(rel_close(a.m2, b.m2, tol), "{a:?} {b:?}");
        assert!(rel_close(a.m3, b.m3, 1e-9) || (a.m3 - b.m3).abs() < 1e-9 * a.m2.powf(1.5), "{a:?} {b:?}");
        assert!(rel_close(a.m4, b.m4, tol), "{a:?} {b:?}");
    }

    #[test]
    fn variance_of_known_values() {
        let m = Moments::from_slice(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m.mean, 5.0);
        assert!((m.variance() - 32.0 / 7.0).abs() < 1e-12);
        let mut w = Welford::default();
        for x in [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0] {
            w.push(x);
        }
        assert!((w.variance() - m.variance()).abs() < 1e-12);
    }

    #[test]
    fn power_sums_agree_with_two_pass() {
        let xs: Vec<f64> = (0..100).map(|i| libm::sin(i as f64) * 3.0 + 0.2).collect();
        let s = [
            xs.iter().sum(),
            xs.iter().map(|x| x * x).sum(),
            xs.iter().map(|x| x * x * x).sum(),
            xs.iter().map(|x| x * x * x * x).sum(),
        ];
        assert_moments_close(&Moments::from_power_sums(100, s), &Moments::from_slice(&xs), 1e-10);
    }

    #[test]
    fn gaussian_variance_stderr_is_sqrt_two_over_n() {
        // for a normal law mu4 = 3 sigma^4, so se(var) ~ sigma^2 sqrt(2/c)
        use rand::SeedableRng;
        use rand_distr::{Distribution as _, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..200_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let m = Moments::from_slice(&xs);
        let expected = libm::sqrt(2.0 / 200_000.0);
        assert!(rel_close(m.stderr_of_variance(), expected, 0.02));
    }

    proptest! {
        #[test]
        fn merge_matches_concatenation(
            a in proptest::collection::vec(-100.0f64..100.0, 0..40),
            b in proptest::collection::vec(-100.0f64..100.0, 0..40),
        ) {
            let mut merged = Moments::from_slice(&a);
            merged.merge(&Moments::from_slice(&b));
            let all: Vec<f64> = a.iter().chain(&b).copied().collect();
            let direct = Moments::from_slice(&all);
            prop_assert_eq!(merged.count, direct.count);
            prop_assert!((merged.mean - direct.mean).abs() <= 1e-9 * (1.0 + direct.mean.abs()));
            prop_assert!((merged.m2 - direct.m2).abs() <= 1e-9 * (1.0 + direct.m2));
            prop_assert!((merged.m4 - direct.m4).abs() <= 1e-9 * (1.0 + direct.m4));
        }

        #[test]
        fn merge_is_associative_and_commutative(
            parts in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 1..20), 3),
        ) {
            let m: Vec<Moments> = parts.iter().map(|p| Moments::from_slice(p)).collect();
            let mut left = m[0];
            left.merge(&m[1]);
            left.merge(&m[2]);
            let mut right_inner = m[1];
            right_inner.merge(&m[2]);
            let mut right = m[0];
            right.merge(&right_inner);
            let mut swapped = m[2];
            swapped.merge(&m[0]);
            swapped.merge(&m[1]);
            for other in [right, swapped] {
                prop_assert_eq!(left.count, other.count);
                prop_assert!((left.mean - other.mean).abs() <= 1e-12 * (1.0 + left.mean.abs()));
                prop_assert!((left.m2 - other.m2).abs() <= 1e-12 * left.m2.max(1e-300) + 1e-12);
                prop_assert!((left.m4 - other.m4).abs() <= 1e-12 * left.m4.max(1e-300) + 1e-12);
            }
        }
    }
}

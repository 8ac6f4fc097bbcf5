//! Per-agent running statistics and the phase-length formulas derived from
//! them.
//!
//! Every quantity here is computable from an agent's own observations:
//! running means, observed maxima (which bound the unknown support), the
//! smallest estimated gap between a row's arms, and the exploration /
//! exploitation lengths those estimates imply.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("samples must be positive, got {0}")]
    NonPositiveSample(f64),
    #[error("gap estimate needs at least 2 entries, got {0}")]
    TooFewArms(usize),
    #[error("{name} must be positive and finite, got {value}")]
    BadParameter { name: &'static str, value: f64 },
}

/// Running statistics for a single (agent, arm) pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ArmEstimate {
    pub mean_estimate: f64,
    pub visit_count: u64,
    pub max_sample: f64,
}

impl ArmEstimate {
    /// Fold one positive sample into the running mean and max.
    pub fn update(&mut self, sample: f64) -> Result<(), StatsError> {
        if !(sample > 0.0 && sample.is_finite()) {
            return Err(StatsError::NonPositiveSample(sample));
        }
        self.visit_count += 1;
        self.mean_estimate += (sample - self.mean_estimate) / self.visit_count as f64;
        if sample > self.max_sample {
            self.max_sample = sample;
        }
        Ok(())
    }
}

/// Upper confidence bound on a support from the largest observed sample:
/// twice the maximum. With `T` samples the true support exceeds this with
/// probability below `2 exp(-T/2)` for any bounded continuous distribution
/// (exactly `2^-T` for the uniform).
pub fn support_ucb(max_sample: f64) -> f64 {
    2.0 * max_sample
}

/// Aggregate support bound over a whole estimate row.
pub fn row_support_ucb(estimates: &[ArmEstimate]) -> f64 {
    support_ucb(
        estimates
            .iter()
            .map(|e| e.max_sample)
            .fold(0.0f64, f64::max),
    )
}

/// How the per-epoch exploration target is computed from the previous
/// support bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum C1Variant {
    /// `ceil(L * b^2 + L)`: the default, matching the sample-count budget
    /// the regret analysis needs.
    Quadratic,
    /// `ceil(b * n) + 1`: a shorter linear schedule kept for comparison.
    LinearPlusOne,
}

/// Per-arm sample target for an epoch, given the support bound `b_hat_prev`
/// carried over from the previous epoch (zero before the first).
pub fn exploration_length(
    b_hat_prev: f64,
    l: u64,
    n_arms: usize,
    variant: C1Variant,
) -> Result<u64, StatsError> {
    if !(b_hat_prev >= 0.0 && b_hat_prev.is_finite()) {
        return Err(StatsError::BadParameter {
            name: "b_hat_prev",
            value: b_hat_prev,
        });
    }
    let lf = l as f64;
    let c1 = match variant {
        C1Variant::Quadratic => (lf * b_hat_prev * b_hat_prev + lf).ceil(),
        C1Variant::LinearPlusOne => (b_hat_prev * n_arms as f64).ceil() + 1.0,
    };
    Ok(c1.max(1.0) as u64)
}

/// Smallest pairwise distance within one estimate row.
pub fn gap_estimate(row_means: &[f64]) -> Result<f64, StatsError> {
    if row_means.len() < 2 {
        return Err(StatsError::TooFewArms(row_means.len()));
    }
    let mut sorted = row_means.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min))
}

/// Geometric base of the exploitation schedule: `min(2, exp(L d^2 / divisor))`.
/// A zero gap collapses it to 1 (constant-length exploitation).
pub fn exploitation_base(delta_hat: f64, l: u64, divisor: f64) -> Result<f64, StatsError> {
    if !(delta_hat >= 0.0) {
        return Err(StatsError::BadParameter {
            name: "delta_hat",
            value: delta_hat,
        });
    }
    if !(divisor > 0.0 && divisor.is_finite()) {
        return Err(StatsError::BadParameter {
            name: "divisor",
            value: divisor,
        });
    }
    Ok((l as f64 * delta_hat * delta_hat / divisor).exp().min(2.0))
}

/// Exploitation slot count for epoch `k` given the base: `max(1, floor(base^k))`,
/// saturating instead of overflowing for large `k`.
pub fn exploitation_slots(base: f64, epoch: u32) -> u64 {
    const CAP: f64 = 9.0e15; // comfortably inside u64 and f64-exact range
    let v = base.powi(epoch.min(i32::MAX as u32) as i32);
    if !v.is_finite() || v >= CAP {
        CAP as u64
    } else {
        (v.floor() as u64).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn running_mean_examples() {
        let mut e = ArmEstimate::default();
        e.update(0.6).unwrap();
        assert_eq!(
            e,
            ArmEstimate {
                mean_estimate: 0.6,
                visit_count: 1,
                max_sample: 0.6
            }
        );
        let mut e = ArmEstimate {
            mean_estimate: 0.5,
            visit_count: 1,
            max_sample: 0.5,
        };
        e.update(0.7).unwrap();
        assert!((e.mean_estimate - 0.6).abs() < 1e-15);
        assert_eq!(e.visit_count, 2);
        assert!((e.max_sample - 0.7).abs() < 1e-15);
    }

    #[test]
    fn running_mean_rejects_nonpositive() {
        let mut e = ArmEstimate::default();
        assert_eq!(e.update(0.0), Err(StatsError::NonPositiveSample(0.0)));
        assert_eq!(e.update(-0.1), Err(StatsError::NonPositiveSample(-0.1)));
    }

    #[test]
    fn running_mean_matches_batch_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<f64> = (0..10_000).map(|_| 0.01 + rng.gen::<f64>()).collect();
        let mut e = ArmEstimate::default();
        for &s in &samples {
            e.update(s).unwrap();
        }
        let batch = samples.iter().sum::<f64>() / samples.len() as f64;
        assert!((e.mean_estimate - batch).abs() < 1e-12);
        assert_eq!(e.visit_count, samples.len() as u64);
    }

    #[test]
    fn support_ucb_examples() {
        assert!((support_ucb(0.7) - 1.4).abs() < 1e-15);
        let row = [
            ArmEstimate {
                max_sample: 0.2,
                ..Default::default()
            },
            ArmEstimate {
                max_sample: 0.7,
                ..Default::default()
            },
            ArmEstimate {
                max_sample: 0.4,
                ..Default::default()
            },
        ];
        assert!((row_support_ucb(&row) - 1.4).abs() < 1e-15);
        assert_eq!(row_support_ucb(&[]), 0.0);
    }

    #[test]
    fn support_ucb_miss_rate_for_uniform() {
        // P(2 * max of T samples < S) = 2^-T for uniform(0, S]; check the
        // exact rate and the distribution-free 2 e^{-T/2} envelope.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let s = 1.0;
        for t in [4u32, 8] {
            let trials = 200_000u32;
            let mut misses = 0u32;
            for _ in 0..trials {
                let mx = (0..t)
                    .map(|_| s * (1.0 - rng.gen::<f64>()))
                    .fold(0.0f64, f64::max);
                if support_ucb(mx) < s {
                    misses += 1;
                }
            }
            let rate = misses as f64 / trials as f64;
            let exact = 2f64.powi(-(t as i32));
            let se = (exact * (1.0 - exact) / trials as f64).sqrt();
            assert!(
                (rate - exact).abs() < 4.0 * se + 1e-9,
                "t={t}: rate={rate}, exact={exact}"
            );
            assert!(
                rate <= 2.0 * (-(t as f64) / 2.0).exp(),
                "envelope violated at t={t}"
            );
        }
    }

    #[test]
    fn exploration_length_examples() {
        assert_eq!(
            exploration_length(0.0, 100, 4, C1Variant::Quadratic).unwrap(),
            100
        );
        assert_eq!(
            exploration_length(1.0, 100, 4, C1Variant::Quadratic).unwrap(),
            200
        );
        assert_eq!(
            exploration_length(0.5, 100, 4, C1Variant::Quadratic).unwrap(),
            125
        );
        // linear comparison path
        assert_eq!(
            exploration_length(1.0, 100, 4, C1Variant::LinearPlusOne).unwrap(),
            5
        );
        assert_eq!(
            exploration_length(0.0, 100, 4, C1Variant::LinearPlusOne).unwrap(),
            1
        );
        assert!(exploration_length(f64::NAN, 100, 4, C1Variant::Quadratic).is_err());
    }

    #[test]
    fn exploration_cumulative_bound() {
        // K*L <= sum of c1 over epochs <= 4*K*L*B^2 + K*L whenever the
        // support bounds stay within [0, 2B].
        let l = 100u64;
        let b = 1.7f64;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let k = rng.gen_range(1..20u64);
            let mut total = 0u64;
            for _ in 0..k {
                let b_hat = 2.0 * b * rng.gen::<f64>();
                total += exploration_length(b_hat, l, 4, C1Variant::Quadratic).unwrap();
            }
            assert!(total >= k * l);
            let upper = (4.0 * k as f64 * l as f64 * b * b + (k * l) as f64).ceil() + k as f64;
            assert!((total as f64) <= upper, "total={total}, upper={upper}");
        }
    }

    #[test]
    fn gap_estimate_examples() {
        assert!((gap_estimate(&[0.1, 0.5, 0.9]).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(gap_estimate(&[0.3, 0.3, 0.8]).unwrap(), 0.0);
        assert_eq!(gap_estimate(&[0.5]), Err(StatsError::TooFewArms(1)));
    }

    #[test]
    fn exploitation_base_examples() {
        let b = exploitation_base(0.1, 100, 32.0).unwrap();
        assert!((b - 1.031743407).abs() < 1e-6, "{b}");
        assert_eq!(exploitation_base(0.0, 100, 32.0).unwrap(), 1.0);
        assert_eq!(exploitation_base(0.5, 100, 32.0).unwrap(), 2.0);
        // infinite gap (single-arm degenerate row) caps at 2
        assert_eq!(exploitation_base(f64::INFINITY, 100, 32.0).unwrap(), 2.0);
        assert!(exploitation_base(-0.1, 100, 32.0).is_err());
        assert!(exploitation_base(0.1, 100, 0.0).is_err());
    }

    #[test]
    fn exploitation_slots_saturates() {
        assert_eq!(exploitation_slots(1.0, 200), 1);
        assert_eq!(exploitation_slots(2.0, 3), 8);
        assert_eq!(exploitation_slots(1.5, 2), 2);
        assert_eq!(exploitation_slots(2.0, 400), 9_000_000_000_000_000);
    }

    #[test]
    fn estimate_deviation_respects_hoeffding_envelope() {
        // After the first K epochs every arm holds at least K*L samples;
        // the chance any of the N*M estimates strays by delta is below
        // 6*N*M*exp(-L*K*delta^2). Spot-check empirically with N=M=2.
        let (n, l, k) = (2usize, 50u64, 2u64);
        let delta = 0.25f64;
        let mean = 0.5f64;
        let bound = 6.0 * (n * n) as f64 * (-((l * k) as f64) * delta * delta).exp();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let trials = 4000;
        let mut bad = 0u32;
        for _ in 0..trials {
            let mut any = false;
            for _ in 0..n * n {
                let mut e = ArmEstimate::default();
                for _ in 0..l * k {
                    e.update(2.0 * mean * (1.0 - rng.gen::<f64>())).unwrap();
                }
                if (e.mean_estimate - mean).abs() > delta {
                    any = true;
                }
            }
            if any {
                bad += 1;
            }
        }
        let rate = bad as f64 / trials as f64;
        assert!(rate <= bound, "rate={rate}, bound={bound}");
    }

    proptest! {
        // 2 * max of T samples exceeds the true support at the stated rate
        // for *any* location of the distribution within (0, S].
        #[test]
        fn support_ucb_envelope_property(seed in 0u64..50, t in 3u32..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = 0.2 + 3.0 * rng.gen::<f64>();
            let trials = 20_000;
            let mut misses = 0u32;
            for _ in 0..trials {
                let mx = (0..t).map(|_| s * (1.0 - rng.gen::<f64>())).fold(0.0f64, f64::max);
                if support_ucb(mx) < s {
                    misses += 1;
                }
            }
            let envelope = 2.0 * (-(t as f64) / 2.0).exp();
            prop_assert!((misses as f64 / trials as f64) <= envelope);
        }

        #[test]
        fn gap_estimate_permutation_invariant(seed in 0u64..200, n in 2usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let row: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let g1 = gap_estimate(&row).unwrap();
            let mut shuffled = row.clone();
            for i in (1..shuffled.len()).rev() {
                let j = rng.gen_range(0..=i);
                shuffled.swap(i, j);
            }
            prop_assert!((gap_estimate(&shuffled).unwrap() - g1).abs() < 1e-15);
        }
    }
}
